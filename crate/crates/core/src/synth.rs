//! Seeded synthetic worlds with known region-to-label structure.
//!
//! A world is a set of well-separated unit label vectors plus a hidden
//! full-rank generator `G` (feature_dim x semantic_dim). A bag emits one
//! instance per selected label with feature `G y + noise`, a few distractor
//! instances `G u` for unit `u` far from the selected labels, and a whole
//! image instance equal to the mean of the label instances.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bags::{build_bag, InstanceBag, RegionFilter, RegionGeometry};
use crate::embedding::EmbeddingModel;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::semantic_space::LabelSpace;

/// Minimum squared distance between any two generated label vectors.
pub const MIN_LABEL_SEPARATION: f64 = 0.5;
/// Minimum squared distance between a distractor direction and each of the
/// bag's labels.
pub const DISTRACTOR_SEPARATION: f64 = 1.0;
const MAX_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Holdout {
    /// Fraction of all bags held out.
    Fraction(f64),
    /// Exact number of held-out bags.
    Count(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub vocab_size: usize,
    pub semantic_dim: usize,
    pub feature_dim: usize,
    /// Inclusive range of labels per bag.
    pub labels_per_bag: (usize, usize),
    pub distractor_instances: usize,
    pub noise_sigma: f64,
    pub num_bags: usize,
    pub holdout: Holdout,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            vocab_size: 12,
            semantic_dim: 8,
            feature_dim: 32,
            labels_per_bag: (2, 3),
            distractor_instances: 2,
            noise_sigma: 0.02,
            num_bags: 2200,
            holdout: Holdout::Fraction(0.1),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSynthConfig(m));
        let (lo, hi) = self.labels_per_bag;
        if self.vocab_size == 0 || self.semantic_dim == 0 || self.feature_dim == 0 {
            return bad("vocab_size, semantic_dim and feature_dim must be positive".into());
        }
        if lo == 0 || lo > hi || hi > self.vocab_size {
            return bad(format!(
                "labels_per_bag ({lo}, {hi}) must satisfy 1 <= min <= max <= vocab_size"
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be nonnegative".into());
        }
        if self.num_bags == 0 {
            return bad("num_bags must be positive".into());
        }
        if self.heldout_count() >= self.num_bags {
            return bad("holdout leaves no training bags".into());
        }
        Ok(())
    }

    pub fn heldout_count(&self) -> usize {
        match self.holdout {
            Holdout::Fraction(f) => (self.num_bags as f64 * f).round() as usize,
            Holdout::Count(n) => n,
        }
    }
}

/// Labels and the hidden generator of one synthetic world.
#[derive(Debug, Clone)]
pub struct SynthWorld<T> {
    space: LabelSpace<T>,
    /// Row-major, `feature_dim` rows by `semantic_dim` columns.
    generator: Vec<f64>,
    feature_dim: usize,
}

fn random_unit<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Unit vectors with pairwise squared distance at least `min_sq`, placed by
/// per-vector rejection sampling.
pub fn separated_unit_vectors<R: Rng + ?Sized>(
    count: usize,
    dim: usize,
    min_sq: f64,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(count);
    for _ in 0..count {
        let v = (0..MAX_ATTEMPTS)
            .map(|_| random_unit(dim, rng))
            .find(|v| out.iter().all(|o| sq(o, v) >= min_sq))
            .ok_or(Error::LabelPlacement {
                vocab: count,
                dim,
                min_sq,
            })?;
        out.push(v);
    }
    Ok(out)
}

impl<T: Scalar> SynthWorld<T> {
    /// `vocab_size` labels named `label00`, `label01`, ...
    pub fn new<R: Rng + ?Sized>(
        vocab_size: usize,
        semantic_dim: usize,
        feature_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let vectors = separated_unit_vectors(vocab_size, semantic_dim, MIN_LABEL_SEPARATION, rng)?;
        let space = LabelSpace::from_records(
            vectors
                .into_iter()
                .enumerate()
                .map(|(i, v)| (format!("label{i:02}"), v.into_iter().map(T::of).collect())),
        )?;
        let generator = (0..feature_dim * semantic_dim)
            .map(|_| StandardNormal.sample(rng))
            .collect();
        Ok(Self {
            space,
            generator,
            feature_dim,
        })
    }

    pub fn space(&self) -> &LabelSpace<T> {
        &self.space
    }

    pub fn generator(&self) -> &[f64] {
        &self.generator
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn semantic_dim(&self) -> usize {
        self.space.dim()
    }

    /// `G y` for any semantic vector `y`.
    pub fn generate_feature(&self, y: &[f64]) -> Vec<f64> {
        let sd = self.semantic_dim();
        (0..self.feature_dim)
            .map(|r| {
                self.generator[r * sd..(r + 1) * sd]
                    .iter()
                    .zip(y)
                    .map(|(g, v)| g * v)
                    .sum()
            })
            .collect()
    }

    /// `(G^T G)^{-1} G^T`: maps every `G y` back to `y`.
    pub fn perfect_model(&self) -> Result<EmbeddingModel<T>> {
        let (fd, sd) = (self.feature_dim, self.semantic_dim());
        let g = |r: usize, c: usize| self.generator[r * sd + c];
        // augmented [G^T G | G^T], reduced to [I | G^+]
        let width = sd + fd;
        let mut a = vec![0.0; sd * width];
        for i in 0..sd {
            for j in 0..sd {
                a[i * width + j] = (0..fd).map(|r| g(r, i) * g(r, j)).sum();
            }
            for r in 0..fd {
                a[i * width + sd + r] = g(r, i);
            }
        }
        for col in 0..sd {
            let pivot = (col..sd)
                .max_by(|&x, &y| a[x * width + col].abs().total_cmp(&a[y * width + col].abs()))
                .expect("nonempty");
            if a[pivot * width + col].abs() < 1e-12 {
                return Err(Error::InvalidSynthConfig("generator is rank deficient".into()));
            }
            for c in 0..width {
                a.swap(col * width + c, pivot * width + c);
            }
            let p = a[col * width + col];
            for c in 0..width {
                a[col * width + c] /= p;
            }
            for r in (0..sd).filter(|&r| r != col) {
                let f = a[r * width + col];
                if f != 0.0 {
                    for c in 0..width {
                        a[r * width + c] -= f * a[col * width + c];
                    }
                }
            }
        }
        let weight = (0..sd)
            .flat_map(|i| (0..fd).map(move |r| (i, r)))
            .map(|(i, r)| T::of(a[i * width + sd + r]))
            .collect();
        EmbeddingModel::new(sd, fd, weight)
    }

    /// One bag whose labels are drawn uniformly from `label_pool`.
    #[allow(clippy::too_many_arguments)]
    pub fn sample_bag<R: Rng + ?Sized>(
        &self,
        id: String,
        label_pool: &[usize],
        labels_per_bag: (usize, usize),
        distractors: usize,
        noise_sigma: f64,
        rng: &mut R,
    ) -> Result<InstanceBag<T>> {
        let count = rng.random_range(labels_per_bag.0..=labels_per_bag.1).min(label_pool.len());
        let chosen: Vec<usize> = label_pool.choose_multiple(rng, count).copied().collect();
        let noise = Normal::new(0.0, noise_sigma)
            .map_err(|e| Error::InvalidSynthConfig(e.to_string()))?;
        let label_vecs: Vec<Vec<f64>> = chosen
            .iter()
            .map(|&l| self.space.vector(l).iter().map(|v| v.as_f64()).collect())
            .collect();

        let mut geoms: Vec<RegionGeometry> = Vec::new();
        let mut regions = Vec::new();
        let mut whole = vec![0.0; self.feature_dim];
        for y in &label_vecs {
            let f: Vec<f64> = self
                .generate_feature(y)
                .into_iter()
                .map(|v| v + noise.sample(rng))
                .collect();
            whole.iter_mut().zip(&f).for_each(|(w, v)| *w += v / count as f64);
            regions.push((f, distinct_geometry(&mut geoms, rng)));
        }
        for _ in 0..distractors {
            let u = (0..MAX_ATTEMPTS)
                .map(|_| random_unit(self.semantic_dim(), rng))
                .find(|u| label_vecs.iter().all(|y| sq(u, y) >= DISTRACTOR_SEPARATION))
                .ok_or_else(|| Error::InvalidSynthConfig("cannot place a distractor".into()))?;
            regions.push((self.generate_feature(&u), distinct_geometry(&mut geoms, rng)));
        }
        // interleave distractors with label instances
        regions.shuffle(rng);

        let conv = |v: Vec<f64>| v.into_iter().map(T::of).collect::<Vec<T>>();
        build_bag(
            id,
            conv(whole),
            regions.into_iter().map(|(f, g)| (conv(f), g)).collect(),
            &RegionFilter::default(),
            chosen.iter().map(|&l| self.space.name(l).to_string()),
        )
    }
}

fn distinct_geometry<R: Rng + ?Sized>(taken: &mut Vec<RegionGeometry>, rng: &mut R) -> RegionGeometry {
    loop {
        let w = rng.random_range(0.3..=0.9);
        let h = rng.random_range(0.3..=0.9);
        let x0 = rng.random_range(0.0..=1.0 - w);
        let y0 = rng.random_range(0.0..=1.0 - h);
        let g = RegionGeometry::new(x0, y0, (x0 + w).min(1.0), (y0 + h).min(1.0))
            .expect("sides within the unit square");
        if !taken.contains(&g) {
            taken.push(g);
            return g;
        }
    }
}

/// A generated world with its train/held-out split.
#[derive(Debug, Clone)]
pub struct SynthDataset<T> {
    pub world: SynthWorld<T>,
    pub train: Vec<InstanceBag<T>>,
    pub heldout: Vec<InstanceBag<T>>,
}

impl<T: Scalar> SynthDataset<T> {
    pub fn space(&self) -> &LabelSpace<T> {
        self.world.space()
    }
}

pub fn generate<T: Scalar>(config: &SynthConfig) -> Result<SynthDataset<T>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let world = SynthWorld::new(config.vocab_size, config.semantic_dim, config.feature_dim, &mut rng)?;
    let pool: Vec<usize> = (0..config.vocab_size).collect();
    let bags = (0..config.num_bags)
        .map(|i| {
            world.sample_bag(
                format!("bag{i:05}"),
                &pool,
                config.labels_per_bag,
                config.distractor_instances,
                config.noise_sigma,
                &mut rng,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let mut order: Vec<usize> = (0..bags.len()).collect();
    order.shuffle(&mut rng);
    let mut is_heldout = vec![false; bags.len()];
    for &i in &order[..config.heldout_count()] {
        is_heldout[i] = true;
    }
    let (mut train, mut heldout) = (Vec::new(), Vec::new());
    for (bag, h) in bags.into_iter().zip(is_heldout) {
        if h {
            heldout.push(bag);
        } else {
            train.push(bag);
        }
    }
    Ok(SynthDataset {
        world,
        train,
        heldout,
    })
}
