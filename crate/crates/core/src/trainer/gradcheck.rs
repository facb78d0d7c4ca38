//! Central-difference validation of the analytic loss subgradients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bags::InstanceBag;
use crate::embedding::EmbeddingModel;
use crate::error::{Error, Result};
use crate::losses::{evaluate_detailed, rank_weight, Evaluation, LossConfig, LossKind, PairSet};
use crate::scalar::{Scalar, TwoFloat};
use crate::semantic_space::LabelSpace;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    /// Central-difference step on each weight entry.
    pub step: f64,
    /// Minimum clearance of every hinge, argmin and rank comparison from a tie.
    pub min_gap: f64,
    /// Models with more entries than this are checked on a random subset.
    pub max_full_entries: usize,
    pub subset_size: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            min_gap: 1e-6,
            max_full_entries: 1024,
            subset_size: 256,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// `max |a - n| / max(|a|, |n|, 1e-8)` over the checked entries.
    pub max_rel_error: f64,
    pub worst_entry: usize,
    pub entries_checked: usize,
}

/// Compares the analytic gradient with central differences at a generic point.
///
/// The difference quotient is evaluated in double-double precision at the
/// same point, so its roundoff stays far below the tolerance even for
/// entries whose gradient is tiny. Fails with [`Error::NonGenericPoint`] when
/// a hinge, an argmin or a rank comparison sits within `min_gap` of a tie,
/// or when a difference step flips any of them.
pub fn finite_difference_check<T: Scalar>(
    model: &EmbeddingModel<T>,
    bag: &InstanceBag<T>,
    space: &LabelSpace<T>,
    pairs: &PairSet,
    config: &LossConfig<T>,
    opts: &GradCheckOptions,
) -> Result<GradCheck> {
    let base = evaluate_detailed(model, bag, space, pairs, config, &rank_weight)?;
    check_generic(&base, bag, space, pairs, config, T::of(opts.min_gap))?;

    let (bag_x, space_x) = (bag.cast::<TwoFloat>(), space.cast::<TwoFloat>());
    let config_x = LossConfig {
        kind: config.kind,
        margin: TwoFloat::of(config.margin.as_f64()),
        negative_cap: config.negative_cap,
        rank_excludes_positives: config.rank_excludes_positives,
    };
    let eval = |m: &EmbeddingModel<TwoFloat>| evaluate_detailed(m, &bag_x, &space_x, pairs, &config_x, &rank_weight);
    let mut probe = model.cast::<TwoFloat>();
    let base_x = eval(&probe)?;

    let involved: Vec<usize> = {
        let mut v: Vec<usize> = pairs.positives().to_vec();
        for slot in 0..pairs.positives().len() {
            v.extend_from_slice(pairs.negatives_for(slot));
        }
        v.sort_unstable();
        v.dedup();
        v
    };
    let same_pattern = |e: &Evaluation<TwoFloat>| {
        e.pattern.active == base.pattern.active
            && e.pattern.weights.iter().map(|w| w.as_f64()).eq(base.pattern.weights.iter().map(|w| w.as_f64()))
            && involved
                .iter()
                .all(|&l| e.pattern.argmins[l] == base.pattern.argmins[l])
    };
    if !same_pattern(&base_x) {
        return Err(Error::NonGenericPoint(
            "extended precision resolves a tie differently".into(),
        ));
    }

    let n = model.weight().len();
    let entries: Vec<usize> = if n > opts.max_full_entries {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut picked = rand::seq::index::sample(&mut rng, n, opts.subset_size.min(n)).into_vec();
        picked.sort_unstable();
        picked
    } else {
        (0..n).collect()
    };

    let h = TwoFloat::of(opts.step);
    let mut worst = GradCheck {
        max_rel_error: 0.0,
        worst_entry: 0,
        entries_checked: entries.len(),
    };
    for &i in &entries {
        let w = probe.weight()[i];
        probe.weight_mut()[i] = w + h;
        let plus = eval(&probe)?;
        probe.weight_mut()[i] = w - h;
        let minus = eval(&probe)?;
        probe.weight_mut()[i] = w;
        if !same_pattern(&plus) || !same_pattern(&minus) {
            return Err(Error::NonGenericPoint(format!(
                "step on weight entry {i} crosses a nondifferentiable point"
            )));
        }
        let numeric = ((plus.value - minus.value) / (h + h)).as_f64();
        let analytic = base.grad[i].as_f64();
        let denom = analytic.abs().max(numeric.abs()).max(1e-8);
        let rel = (analytic - numeric).abs() / denom;
        if rel > worst.max_rel_error {
            worst.max_rel_error = rel;
            worst.worst_entry = i;
        }
    }
    Ok(worst)
}

fn check_generic<T: Scalar>(
    base: &Evaluation<T>,
    bag: &InstanceBag<T>,
    space: &LabelSpace<T>,
    pairs: &PairSet,
    config: &LossConfig<T>,
    gap: T,
) -> Result<()> {
    let d = |l: usize| base.distances[l].distance;
    for (slot, &j) in pairs.positives().iter().enumerate() {
        for &k in pairs.negatives_for(slot) {
            let h = config.margin + d(j) - d(k);
            if h.abs() < gap {
                return Err(Error::NonGenericPoint(format!(
                    "hinge ({}, {}) is {h}",
                    space.name(j),
                    space.name(k)
                )));
            }
        }
    }
    if config.kind != LossKind::WholeImageRanking && bag.len() > 1 {
        for (l, (_, y)) in space.iter().enumerate() {
            let best = base.distances[l];
            let second = (0..base.embedded.len())
                .filter(|&i| i != best.argmin_index)
                .map(|i| base.embedded.instance_distance(i, y))
                .fold(T::infinity(), T::min);
            if second - best.distance < gap {
                return Err(Error::NonGenericPoint(format!(
                    "argmin for `{}` is not unique",
                    space.name(l)
                )));
            }
        }
    }
    if config.kind == LossKind::MieRankWeighted {
        for &j in pairs.positives() {
            for t in (0..space.len()).filter(|&t| t != j) {
                if (d(t) - d(j)).abs() < gap {
                    return Err(Error::NonGenericPoint(format!(
                        "`{}` and `{}` are tied in the ranking",
                        space.name(j),
                        space.name(t)
                    )));
                }
            }
        }
    }
    Ok(())
}
