//! Mini-batch SGD with momentum, a step learning-rate schedule and L2 weight
//! decay, over any of the ranking losses.

mod gradcheck;

pub use gradcheck::{finite_difference_check, GradCheck, GradCheckOptions};

use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bags::InstanceBag;
use crate::embedding::EmbeddingModel;
use crate::error::{Error, Result};
use crate::losses::{LossConfig, LossKind, DEFAULT_MARGIN};
use crate::scalar::Scalar;
use crate::semantic_space::LabelSpace;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig<T> {
    pub loss: LossConfig<T>,
    pub batch_size: usize,
    pub momentum: f64,
    pub initial_lr: f64,
    /// The learning rate is multiplied by `lr_gamma` every this many epochs.
    pub lr_step_epochs: usize,
    pub lr_gamma: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl<T: Scalar> TrainConfig<T> {
    /// Batch 100, momentum 0.9, lr 0.1 decayed 10x every 10 epochs, decay 5e-4.
    pub fn new(kind: LossKind, epochs: usize) -> Self {
        Self {
            loss: LossConfig {
                kind,
                margin: T::of(DEFAULT_MARGIN),
                negative_cap: None,
                rank_excludes_positives: false,
            },
            batch_size: 100,
            momentum: 0.9,
            initial_lr: 0.1,
            lr_step_epochs: 10,
            lr_gamma: 0.1,
            weight_decay: 0.0005,
            epochs,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        let bad = |msg: &str| Err(Error::InvalidTrainConfig(msg.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return bad("initial_lr must be positive");
        }
        if self.lr_step_epochs == 0 {
            return bad("lr_step_epochs must be positive");
        }
        if !(self.lr_gamma > 0.0 && self.lr_gamma < 1.0) {
            return bad("lr_gamma must lie in (0, 1)");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be nonnegative");
        }
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        Ok(())
    }

    /// Learning rate used throughout 1-based `epoch`.
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        let steps = (epoch.saturating_sub(1) / self.lr_step_epochs) as i32;
        self.initial_lr * self.lr_gamma.powi(steps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    /// One JSON object per epoch. Wall-clock seconds are written only when
    /// `with_timing` is set, so the default output is reproducible.
    pub fn to_jsonl(&self, with_timing: bool) -> String {
        #[derive(Serialize)]
        struct Line {
            epoch: usize,
            mean_loss: f64,
            lr: f64,
            #[serde(skip_serializing_if = "Option::is_none")]
            seconds: Option<f64>,
        }
        let mut out = String::new();
        for r in &self.epochs {
            let line = Line {
                epoch: r.epoch,
                mean_loss: r.mean_loss,
                lr: r.lr,
                seconds: with_timing.then_some(r.seconds),
            };
            out.push_str(&serde_json::to_string(&line).expect("history serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>, with_timing: bool) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_jsonl(with_timing).as_bytes())?;
        Ok(())
    }
}

/// Momentum SGD with additive L2 decay:
/// `v <- mu v - lr (g + lambda W)`, `W <- W + v`.
#[derive(Debug, Clone)]
pub struct SgdMomentum<T> {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<T>,
}

impl<T: Scalar> SgdMomentum<T> {
    pub fn new(len: usize, momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: vec![T::zero(); len],
        }
    }

    pub fn velocity(&self) -> &[T] {
        &self.velocity
    }

    pub fn step(&mut self, weights: &mut [T], grad: &[T], lr: f64) {
        let (mu, lr, wd) = (T::of(self.momentum), T::of(lr), T::of(self.weight_decay));
        for ((w, v), &g) in weights.iter_mut().zip(&mut self.velocity).zip(grad) {
            *v = mu * *v - lr * (g + wd * *w);
            *w = *w + *v;
        }
    }
}

/// A bag paired with its ground-truth label indices.
struct Example<'a, T> {
    bag: &'a InstanceBag<T>,
    positives: Vec<usize>,
}

fn prepare<'a, T: Scalar>(
    dataset: &'a [InstanceBag<T>],
    space: &LabelSpace<T>,
    feature_dim: usize,
) -> Result<Vec<Example<'a, T>>> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    dataset
        .iter()
        .map(|bag| {
            if bag.feature_dim() != feature_dim {
                return Err(Error::DimensionMismatch {
                    expected: feature_dim,
                    found: bag.feature_dim(),
                });
            }
            let positives: Vec<usize> = bag
                .labels()
                .iter()
                .filter_map(|l| space.index_of(l))
                .collect();
            if positives.is_empty() {
                return Err(Error::NoKnownLabel(bag.id().to_string()));
            }
            if positives.len() >= space.len() {
                return Err(Error::NoNegatives);
            }
            Ok(Example { bag, positives })
        })
        .collect()
}

/// Trains a freshly initialized model.
pub fn train<T: Scalar>(
    dataset: &[InstanceBag<T>],
    space: &LabelSpace<T>,
    config: &TrainConfig<T>,
) -> Result<(EmbeddingModel<T>, TrainHistory)> {
    let feature_dim = dataset.first().ok_or(Error::EmptyDataset)?.feature_dim();
    let model = initial_model(space.dim(), feature_dim, config.seed);
    train_from(model, dataset, space, config, |_| {})
}

/// The seeded starting point used by [`train`].
pub fn initial_model<T: Scalar>(semantic_dim: usize, feature_dim: usize, seed: u64) -> EmbeddingModel<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    EmbeddingModel::init_uniform(semantic_dim, feature_dim, &mut rng)
}

/// Continues training `model`; `on_epoch` sees each record as it completes.
pub fn train_from<T: Scalar>(
    mut model: EmbeddingModel<T>,
    dataset: &[InstanceBag<T>],
    space: &LabelSpace<T>,
    config: &TrainConfig<T>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(EmbeddingModel<T>, TrainHistory)> {
    config.validate()?;
    if space.dim() != model.semantic_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.semantic_dim(),
            found: space.dim(),
        });
    }
    let examples = prepare(dataset, space, model.feature_dim())?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut opt = SgdMomentum::new(model.weight().len(), config.momentum, config.weight_decay);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut history = TrainHistory::default();

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let lr = config.lr_at_epoch(epoch);
        order.shuffle(&mut rng);
        let mut batch_losses = Vec::new();
        for (batch, chunk) in order.chunks(config.batch_size).enumerate() {
            let seeds: Vec<u64> = chunk.iter().map(|_| rng.random()).collect();
            let (loss, grad) = batch_gradient(&model, &examples, chunk, &seeds, space, config)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite { epoch, batch });
            }
            opt.step(model.weight_mut(), &grad, lr);
            batch_losses.push(loss.as_f64());
        }
        let record = EpochRecord {
            epoch,
            mean_loss: batch_losses.iter().sum::<f64>() / batch_losses.len() as f64,
            lr,
            seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        history.epochs.push(record);
    }
    Ok((model, history))
}

/// Mean loss and mean gradient over one batch. Per-bag work may run in
/// parallel; the reduction is sequential in batch order.
fn batch_gradient<T: Scalar>(
    model: &EmbeddingModel<T>,
    examples: &[Example<'_, T>],
    chunk: &[usize],
    seeds: &[u64],
    space: &LabelSpace<T>,
    config: &TrainConfig<T>,
) -> Result<(T, Vec<T>)> {
    let parts = chunk
        .par_iter()
        .zip(seeds)
        .map(|(&i, &seed)| {
            let ex = &examples[i];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pairs = config
                .loss
                .pairs(space.len(), ex.positives.clone(), &mut rng)?;
            config.loss.evaluate(model, ex.bag, space, &pairs)
        })
        .collect::<Result<Vec<_>>>()?;
    let n = T::of(chunk.len() as f64);
    let mut grad = vec![T::zero(); model.weight().len()];
    let mut loss = T::zero();
    for p in parts {
        loss = loss + p.value;
        for (g, d) in grad.iter_mut().zip(p.grad) {
            *g = *g + d;
        }
    }
    grad.iter_mut().for_each(|g| *g = *g / n);
    Ok((loss / n, grad))
}
