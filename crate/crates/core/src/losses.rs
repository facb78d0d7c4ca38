//! Pairwise hinge ranking losses over label distances, with analytic
//! subgradients with respect to the embedding weight.
//!
//! Three variants share one evaluator:
//!
//! * whole-image ranking: distances use instance 0 only;
//! * multi-instance: each label's distance is its min over the bag;
//! * rank-weighted multi-instance: each positive's hinge terms are scaled by
//!   a weight derived from the positive's rank in the bag's label ranking.
//!
//! The subgradient of a `min` is taken at the selected (lowest-index)
//! minimizer, and a hinge contributes only when strictly positive. Rank
//! weights are piecewise constant in the weights and carry no gradient.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bags::InstanceBag;
use crate::embedding::{BagDistance, BagEmbedding, EmbeddingModel};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::semantic_space::LabelSpace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossKind {
    /// Hinge ranking on the whole-image embedding.
    #[serde(rename = "rank")]
    WholeImageRanking,
    /// Hinge ranking on min-over-instances distances.
    #[serde(rename = "mie")]
    Mie,
    /// `Mie` with rank-dependent weights on each positive.
    #[serde(rename = "mie-warp")]
    MieRankWeighted,
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [
        LossKind::WholeImageRanking,
        LossKind::Mie,
        LossKind::MieRankWeighted,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            LossKind::WholeImageRanking => "rank",
            LossKind::Mie => "mie",
            LossKind::MieRankWeighted => "mie-warp",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rank" => Ok(LossKind::WholeImageRanking),
            "mie" => Ok(LossKind::Mie),
            "mie-warp" => Ok(LossKind::MieRankWeighted),
            other => Err(Error::InvalidLossConfig(format!(
                "unknown loss `{other}` (expected rank, mie or mie-warp)"
            ))),
        }
    }
}

pub const DEFAULT_MARGIN: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig<T> {
    pub kind: LossKind,
    pub margin: T,
    /// Max negatives sampled per positive; `None` uses every negative.
    pub negative_cap: Option<usize>,
    /// Count only non-positive labels when ranking a positive.
    #[serde(default)]
    pub rank_excludes_positives: bool,
}

impl<T: Scalar> LossConfig<T> {
    pub fn new(kind: LossKind, margin: T) -> Result<Self> {
        let c = Self {
            kind,
            margin,
            negative_cap: None,
            rank_excludes_positives: false,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn with_negative_cap(mut self, cap: Option<usize>) -> Result<Self> {
        self.negative_cap = cap;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.margin.partial_cmp(&T::zero()) != Some(std::cmp::Ordering::Greater) || !self.margin.is_finite() {
            return Err(Error::InvalidLossConfig(format!(
                "margin must be positive, got {}",
                self.margin
            )));
        }
        if self.negative_cap == Some(0) {
            return Err(Error::InvalidLossConfig("negative_cap must be >= 1".into()));
        }
        Ok(())
    }

    /// Negatives for `positives` under this config's cap.
    pub fn pairs<R: Rng + ?Sized>(
        &self,
        space_len: usize,
        positives: Vec<usize>,
        rng: &mut R,
    ) -> Result<PairSet> {
        match self.negative_cap {
            None => PairSet::all(space_len, positives),
            Some(cap) => PairSet::sampled(space_len, positives, cap, rng),
        }
    }

    /// Dispatches to the configured loss.
    pub fn evaluate(
        &self,
        model: &EmbeddingModel<T>,
        bag: &InstanceBag<T>,
        space: &LabelSpace<T>,
        pairs: &PairSet,
    ) -> Result<LossValueGrad<T>> {
        Ok(evaluate_detailed(model, bag, space, pairs, self, &rank_weight)?.into_value_grad())
    }
}

/// Loss value with its subgradient (shaped like the weight, row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct LossValueGrad<T> {
    pub value: T,
    pub grad: Vec<T>,
}

/// Positive labels and, for each, the negatives it is compared against.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairSet {
    positives: Vec<usize>,
    negatives: Vec<Vec<usize>>,
}

impl PairSet {
    /// Every non-positive label is a negative for every positive.
    pub fn all(space_len: usize, positives: Vec<usize>) -> Result<Self> {
        let positives = dedup(positives);
        let negatives = Self::complement(space_len, &positives)?;
        Ok(Self {
            negatives: vec![negatives; positives.len()],
            positives,
        })
    }

    /// Each positive draws up to `cap` negatives uniformly without replacement.
    pub fn sampled<R: Rng + ?Sized>(
        space_len: usize,
        positives: Vec<usize>,
        cap: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let positives = dedup(positives);
        let pool = Self::complement(space_len, &positives)?;
        let take = cap.min(pool.len());
        let negatives = positives
            .iter()
            .map(|_| {
                let mut picked: Vec<usize> = rand::seq::index::sample(rng, pool.len(), take)
                    .into_iter()
                    .map(|i| pool[i])
                    .collect();
                picked.sort_unstable();
                picked
            })
            .collect();
        Ok(Self {
            positives,
            negatives,
        })
    }

    /// Resolves label names against `space` and uses every negative.
    pub fn from_names<T: Scalar, S: AsRef<str>>(space: &LabelSpace<T>, names: &[S]) -> Result<Self> {
        let positives = names
            .iter()
            .map(|n| space.require(n.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        Self::all(space.len(), positives)
    }

    fn complement(space_len: usize, positives: &[usize]) -> Result<Vec<usize>> {
        if positives.is_empty() {
            return Err(Error::NoPositives);
        }
        if let Some(&p) = positives.iter().find(|&&p| p >= space_len) {
            return Err(Error::UnknownLabel(format!("#{p}")));
        }
        let mut is_pos = vec![false; space_len];
        for &p in positives {
            is_pos[p] = true;
        }
        let negatives: Vec<usize> = (0..space_len).filter(|&i| !is_pos[i]).collect();
        if negatives.is_empty() {
            return Err(Error::NoNegatives);
        }
        Ok(negatives)
    }

    pub fn positives(&self) -> &[usize] {
        &self.positives
    }

    pub fn negatives_for(&self, positive_slot: usize) -> &[usize] {
        &self.negatives[positive_slot]
    }

    fn iter(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.positives
            .iter()
            .enumerate()
            .flat_map(move |(slot, &j)| self.negatives[slot].iter().map(move |&k| (slot, j, k)))
    }
}

fn dedup(mut v: Vec<usize>) -> Vec<usize> {
    let mut seen = Vec::with_capacity(v.len());
    v.retain(|x| {
        let fresh = !seen.contains(x);
        seen.push(*x);
        fresh
    });
    v
}

/// Rank-dependent multiplier: 1 while the positive sits inside the top
/// `num_positives`, otherwise its rank.
pub fn rank_weight<T: Scalar>(rank: usize, num_positives: usize) -> T {
    if rank < num_positives {
        T::one()
    } else {
        T::of(rank as f64)
    }
}

/// Number of labels `t != j` whose bag distance is `<=` that of `j`.
pub fn label_rank<T: Scalar>(
    model: &EmbeddingModel<T>,
    bag: &InstanceBag<T>,
    space: &LabelSpace<T>,
    label: &str,
) -> Result<usize> {
    let j = space.require(label)?;
    let distances = model.embed_bag(bag)?.distances_to_space(space);
    Ok(rank_among(&distances, j, &[]))
}

/// `excluded` labels (other than `j` itself) are not counted.
fn rank_among<T: Scalar>(distances: &[BagDistance<T>], j: usize, excluded: &[usize]) -> usize {
    let dj = distances[j].distance;
    distances
        .iter()
        .enumerate()
        .filter(|&(t, d)| t != j && d.distance <= dj && !excluded.contains(&t))
        .count()
}

pub fn whole_image_ranking_loss<T: Scalar>(
    model: &EmbeddingModel<T>,
    bag: &InstanceBag<T>,
    space: &LabelSpace<T>,
    pairs: &PairSet,
    config: &LossConfig<T>,
) -> Result<LossValueGrad<T>> {
    let config = LossConfig {
        kind: LossKind::WholeImageRanking,
        ..*config
    };
    config.evaluate(model, bag, space, pairs)
}

pub fn mie_loss<T: Scalar>(
    model: &EmbeddingModel<T>,
    bag: &InstanceBag<T>,
    space: &LabelSpace<T>,
    pairs: &PairSet,
    config: &LossConfig<T>,
) -> Result<LossValueGrad<T>> {
    let config = LossConfig {
        kind: LossKind::Mie,
        ..*config
    };
    config.evaluate(model, bag, space, pairs)
}

pub fn mie_rank_weighted_loss<T: Scalar>(
    model: &EmbeddingModel<T>,
    bag: &InstanceBag<T>,
    space: &LabelSpace<T>,
    pairs: &PairSet,
    config: &LossConfig<T>,
) -> Result<LossValueGrad<T>> {
    mie_rank_weighted_loss_with(model, bag, space, pairs, config, &rank_weight)
}

/// Rank-weighted loss with a caller-supplied `weight(rank, num_positives)`.
pub fn mie_rank_weighted_loss_with<T: Scalar>(
    model: &EmbeddingModel<T>,
    bag: &InstanceBag<T>,
    space: &LabelSpace<T>,
    pairs: &PairSet,
    config: &LossConfig<T>,
    weight: &dyn Fn(usize, usize) -> T,
) -> Result<LossValueGrad<T>> {
    let config = LossConfig {
        kind: LossKind::MieRankWeighted,
        ..*config
    };
    Ok(evaluate_detailed(model, bag, space, pairs, &config, weight)?.into_value_grad())
}

/// Full evaluation record: value, gradient, and the discrete choices
/// (argmins, active hinges, weights) the gradient was taken under.
#[derive(Debug, Clone)]
pub(crate) struct Evaluation<T> {
    pub value: T,
    pub grad: Vec<T>,
    pub pattern: Pattern<T>,
    pub distances: Vec<BagDistance<T>>,
    pub embedded: BagEmbedding<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Pattern<T> {
    pub argmins: Vec<usize>,
    pub active: Vec<bool>,
    pub weights: Vec<T>,
}

impl<T: Scalar> Evaluation<T> {
    fn into_value_grad(self) -> LossValueGrad<T> {
        LossValueGrad {
            value: self.value,
            grad: self.grad,
        }
    }
}

pub(crate) fn evaluate_detailed<T: Scalar>(
    model: &EmbeddingModel<T>,
    bag: &InstanceBag<T>,
    space: &LabelSpace<T>,
    pairs: &PairSet,
    config: &LossConfig<T>,
    weight: &dyn Fn(usize, usize) -> T,
) -> Result<Evaluation<T>> {
    config.validate()?;
    if space.dim() != model.semantic_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.semantic_dim(),
            found: space.dim(),
        });
    }
    if let Some(&bad) = pairs
        .positives
        .iter()
        .chain(pairs.negatives.iter().flatten())
        .find(|&&i| i >= space.len())
    {
        return Err(Error::UnknownLabel(format!("#{bad}")));
    }

    let whole_only;
    let bag = if config.kind == LossKind::WholeImageRanking && bag.len() > 1 {
        whole_only = bag.whole_image_only();
        &whole_only
    } else {
        bag
    };
    let embedded = model.embed_bag(bag)?;
    let distances = embedded.distances_to_space(space);

    let num_pos = pairs.positives.len();
    let weights: Vec<T> = match config.kind {
        LossKind::MieRankWeighted => {
            let excluded: &[usize] = if config.rank_excludes_positives {
                &pairs.positives
            } else {
                &[]
            };
            pairs
                .positives
                .iter()
                .map(|&j| weight(rank_among(&distances, j, excluded), num_pos))
                .collect()
        }
        _ => vec![T::one(); num_pos],
    };

    let mut value = T::zero();
    let mut coef = vec![T::zero(); space.len()];
    let mut active = Vec::new();
    for (slot, j, k) in pairs.iter() {
        let h = config.margin + distances[j].distance - distances[k].distance;
        let on = h > T::zero();
        active.push(on);
        if on {
            let w = weights[slot];
            value = value + w * h;
            coef[j] = coef[j] + w;
            coef[k] = coef[k] - w;
        }
    }

    // accumulate dLoss/dz per instance, then the outer product with features
    let sd = model.semantic_dim();
    let fd = model.feature_dim();
    let mut dz = vec![vec![T::zero(); sd]; bag.len()];
    let mut touched = vec![false; bag.len()];
    for (label, &c) in coef.iter().enumerate() {
        if c == T::zero() {
            continue;
        }
        let inst = distances[label].argmin_index;
        let g = embedded.distance_grad_wrt_projection(inst, space.vector(label));
        for (acc, gi) in dz[inst].iter_mut().zip(g) {
            *acc = *acc + c * gi;
        }
        touched[inst] = true;
    }
    let mut grad = vec![T::zero(); sd * fd];
    for (inst, dzi) in dz.iter().enumerate() {
        if !touched[inst] {
            continue;
        }
        let x = bag.feature(inst);
        for (r, &dr) in dzi.iter().enumerate() {
            for (gw, &xc) in grad[r * fd..(r + 1) * fd].iter_mut().zip(x) {
                *gw = *gw + dr * xc;
            }
        }
    }

    let argmins = distances.iter().map(|d| d.argmin_index).collect();
    Ok(Evaluation {
        value,
        grad,
        pattern: Pattern {
            argmins,
            active,
            weights,
        },
        distances,
        embedded,
    })
}
