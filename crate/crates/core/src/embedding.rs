//! Linear embedding into the label space followed by L2 normalization, and
//! min-over-instances bag distances.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bags::InstanceBag;
use crate::error::{Error, Result};
use crate::scalar::{dot, norm, Scalar};
use crate::semantic_space::{sq_dist, LabelSpace};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// The learnable map from instance features to the label space.
///
/// `weight` is row-major with `semantic_dim` rows and `feature_dim` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel<T> {
    feature_dim: usize,
    semantic_dim: usize,
    weight: Vec<T>,
}

impl<T: Scalar> EmbeddingModel<T> {
    pub fn new(semantic_dim: usize, feature_dim: usize, weight: Vec<T>) -> Result<Self> {
        let expected = semantic_dim * feature_dim;
        if expected == 0 || weight.len() != expected {
            return Err(Error::WeightShape {
                expected,
                found: weight.len(),
            });
        }
        if weight.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFiniteWeight);
        }
        Ok(Self {
            feature_dim,
            semantic_dim,
            weight,
        })
    }

    /// Uniform init in `[-a, a]` with `a = sqrt(6 / (feature_dim + semantic_dim))`.
    pub fn init_uniform<R: Rng + ?Sized>(semantic_dim: usize, feature_dim: usize, rng: &mut R) -> Self {
        let a = (6.0 / (feature_dim + semantic_dim) as f64).sqrt();
        let weight = (0..semantic_dim * feature_dim)
            .map(|_| T::of(rng.random_range(-a..=a)))
            .collect();
        Self {
            feature_dim,
            semantic_dim,
            weight,
        }
    }

    pub fn cast<U: Scalar>(&self) -> EmbeddingModel<U> {
        EmbeddingModel {
            feature_dim: self.feature_dim,
            semantic_dim: self.semantic_dim,
            weight: self.weight.iter().map(|w| U::of(w.as_f64())).collect(),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn semantic_dim(&self) -> usize {
        self.semantic_dim
    }

    pub fn weight(&self) -> &[T] {
        &self.weight
    }

    /// Mutable access for optimizers. Callers keep entries finite.
    pub fn weight_mut(&mut self) -> &mut [T] {
        &mut self.weight
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.weight[r * self.feature_dim..(r + 1) * self.feature_dim]
    }

    /// `W x` before normalization.
    pub fn project(&self, feature: &[T]) -> Result<Vec<T>> {
        self.check_feature(feature)?;
        Ok(self.project_unchecked(feature))
    }

    fn project_unchecked(&self, feature: &[T]) -> Vec<T> {
        (0..self.semantic_dim)
            .map(|r| dot(self.row(r), feature))
            .collect()
    }

    fn check_feature(&self, feature: &[T]) -> Result<()> {
        if feature.len() != self.feature_dim {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dim,
                found: feature.len(),
            });
        }
        Ok(())
    }

    /// `W x / ||W x||`.
    pub fn embed_instance(&self, feature: &[T]) -> Result<Vec<T>> {
        let z = self.project(feature)?;
        normalize(z).map(|(e, _)| e).ok_or(Error::ZeroProjection)
    }

    /// Embeds every instance of `bag`, keeping the pre-normalization norms
    /// needed for gradients.
    pub fn embed_bag(&self, bag: &InstanceBag<T>) -> Result<BagEmbedding<T>> {
        self.check_feature(bag.feature(0))?;
        let mut embeddings = Vec::with_capacity(bag.len());
        let mut norms = Vec::with_capacity(bag.len());
        for (i, f) in bag.features().enumerate() {
            let (e, n) = normalize(self.project_unchecked(f)).ok_or_else(|| {
                Error::DegenerateEmbedding {
                    bag: bag.id().to_string(),
                    instance: i,
                }
            })?;
            embeddings.push(e);
            norms.push(n);
        }
        Ok(BagEmbedding { embeddings, norms })
    }

    pub fn to_file(&self) -> ModelFile {
        ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            feature_dim: self.feature_dim,
            semantic_dim: self.semantic_dim,
            weight: self.weight.iter().map(|w| w.as_f64()).collect(),
        }
    }

    pub fn from_file(file: ModelFile) -> Result<Self> {
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::FormatVersion(file.format_version));
        }
        Self::new(
            file.semantic_dim,
            file.feature_dim,
            file.weight.into_iter().map(T::of).collect(),
        )
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_file(serde_json::from_str(&text)?)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string(&self.to_file())?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }
}

fn normalize<T: Scalar>(mut z: Vec<T>) -> Option<(Vec<T>, T)> {
    let n = norm(&z);
    if n == T::zero() || !n.is_finite() {
        return None;
    }
    z.iter_mut().for_each(|v| *v = *v / n);
    Some((z, n))
}

/// On-disk model representation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub feature_dim: usize,
    pub semantic_dim: usize,
    pub weight: Vec<f64>,
}

/// Smallest instance-to-label distance in a bag and the instance attaining it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BagDistance<T> {
    pub distance: T,
    pub argmin_index: usize,
}

/// Unit embeddings of every instance of one bag.
#[derive(Debug, Clone)]
pub struct BagEmbedding<T> {
    embeddings: Vec<Vec<T>>,
    norms: Vec<T>,
}

impl<T: Scalar> BagEmbedding<T> {
    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    pub fn embedding(&self, i: usize) -> &[T] {
        &self.embeddings[i]
    }

    /// `||W x_i||` before normalization.
    pub fn projection_norm(&self, i: usize) -> T {
        self.norms[i]
    }

    /// Distance from instance `i` to `label_vec`.
    pub fn instance_distance(&self, i: usize, label_vec: &[T]) -> T {
        sq_dist(&self.embeddings[i], label_vec)
    }

    /// Min over instances; ties go to the lowest index.
    pub fn distance_to(&self, label_vec: &[T]) -> BagDistance<T> {
        let mut best = BagDistance {
            distance: self.instance_distance(0, label_vec),
            argmin_index: 0,
        };
        for i in 1..self.len() {
            let d = self.instance_distance(i, label_vec);
            if d < best.distance {
                best = BagDistance {
                    distance: d,
                    argmin_index: i,
                };
            }
        }
        best
    }

    /// Bag distance to every label of `space`, in vocabulary order.
    pub fn distances_to_space(&self, space: &LabelSpace<T>) -> Vec<BagDistance<T>> {
        space.iter().map(|(_, y)| self.distance_to(y)).collect()
    }

    /// `d D(e_i, y) / d z_i` where `z_i = W x_i` and `e_i = z_i / ||z_i||`.
    ///
    /// With `g = 2 (e - y)` this is `(g - e (e . g)) / ||z||`.
    pub(crate) fn distance_grad_wrt_projection(&self, i: usize, label_vec: &[T]) -> Vec<T> {
        let e = &self.embeddings[i];
        let two = T::of(2.0);
        let g: Vec<T> = e.iter().zip(label_vec).map(|(&a, &b)| two * (a - b)).collect();
        let eg = dot(e, &g);
        let n = self.norms[i];
        g.iter().zip(e).map(|(&gi, &ei)| (gi - ei * eg) / n).collect()
    }
}

/// Min-over-instances squared distance between `bag` and one label vector.
pub fn bag_label_distance<T: Scalar>(
    model: &EmbeddingModel<T>,
    bag: &InstanceBag<T>,
    label_vec: &[T],
) -> Result<BagDistance<T>> {
    if label_vec.len() != model.semantic_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.semantic_dim(),
            found: label_vec.len(),
        });
    }
    Ok(model.embed_bag(bag)?.distance_to(label_vec))
}
