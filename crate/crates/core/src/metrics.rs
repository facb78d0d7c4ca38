//! Fixed-k annotation metrics, the randomized upper-bound assignment, and
//! MAP@k for single-label zero-shot evaluation.
//!
//! All metrics are percentages in `[0, 100]`. Per-class means skip labels
//! whose denominator is zero (no ground truth for recall, never predicted
//! for precision); the number of skipped labels is reported alongside.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bag id to label names.
pub type LabelSets = BTreeMap<String, Vec<String>>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub k: usize,
    pub per_class_recall: f64,
    pub per_class_precision: f64,
    pub overall_recall: f64,
    pub overall_precision: f64,
    pub n_plus: f64,
    /// Labels left out of the per-class recall mean (no ground truth).
    pub recall_skipped: usize,
    /// Labels left out of the per-class precision mean (never predicted).
    pub precision_skipped: usize,
    pub num_bags: usize,
    pub vocab_size: usize,
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

fn pct(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        100.0 * num / den
    }
}

impl MetricsReport {
    /// The same report with every percentage rounded to two decimals.
    pub fn rounded(&self) -> Self {
        Self {
            per_class_recall: round2(self.per_class_recall),
            per_class_precision: round2(self.per_class_precision),
            overall_recall: round2(self.overall_recall),
            overall_precision: round2(self.overall_precision),
            n_plus: round2(self.n_plus),
            ..*self
        }
    }

    pub fn to_table(&self) -> String {
        let rows = [
            ("per-class recall", self.per_class_recall),
            ("per-class precision", self.per_class_precision),
            ("overall recall", self.overall_recall),
            ("overall precision", self.overall_precision),
            ("N+", self.n_plus),
        ];
        let mut out = String::new();
        writeln!(out, "{:<22}{:>8}", "metric", format!("k={}", self.k)).unwrap();
        for (name, v) in rows {
            writeln!(out, "{name:<22}{v:>8.2}").unwrap();
        }
        writeln!(
            out,
            "bags {}, vocabulary {}, skipped labels: recall {}, precision {}",
            self.num_bags, self.vocab_size, self.recall_skipped, self.precision_skipped
        )
        .unwrap();
        out
    }
}

/// Scores fixed-size top-k label sets against ground truth.
pub fn evaluate_annotations(
    predictions: &LabelSets,
    truths: &LabelSets,
    vocabulary: &[String],
    k: usize,
) -> Result<MetricsReport> {
    let index: HashMap<&str, usize> = vocabulary
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    let lookup = |l: &str| {
        index
            .get(l)
            .copied()
            .ok_or_else(|| Error::UnknownLabel(l.to_string()))
    };
    if let Some(id) = predictions.keys().find(|id| !truths.contains_key(*id)) {
        return Err(Error::UnalignedBag(id.clone()));
    }

    let t = vocabulary.len();
    let (mut correct, mut truth_n, mut pred_n) = (vec![0usize; t], vec![0usize; t], vec![0usize; t]);
    for (id, truth) in truths {
        let pred = predictions
            .get(id)
            .ok_or_else(|| Error::UnalignedBag(id.clone()))?;
        if pred.len() != k {
            return Err(Error::PredictionCount {
                bag: id.clone(),
                k,
                found: pred.len(),
            });
        }
        let truth: HashSet<usize> = truth.iter().map(|l| lookup(l)).collect::<Result<_>>()?;
        let mut seen = HashSet::new();
        for l in pred {
            let i = lookup(l)?;
            if !seen.insert(i) {
                return Err(Error::DuplicatePrediction {
                    bag: id.clone(),
                    label: l.clone(),
                });
            }
            pred_n[i] += 1;
            if truth.contains(&i) {
                correct[i] += 1;
            }
        }
        for &i in &truth {
            truth_n[i] += 1;
        }
    }

    let mean_ratio = |den: &[usize]| {
        let (mut sum, mut used) = (0.0, 0usize);
        for i in 0..t {
            if den[i] > 0 {
                sum += correct[i] as f64 / den[i] as f64;
                used += 1;
            }
        }
        (pct(sum, used as f64), t - used)
    };
    let (per_class_recall, recall_skipped) = mean_ratio(&truth_n);
    let (per_class_precision, precision_skipped) = mean_ratio(&pred_n);
    let total_correct: usize = correct.iter().sum();
    Ok(MetricsReport {
        k,
        per_class_recall,
        per_class_precision,
        overall_recall: pct(total_correct as f64, truth_n.iter().sum::<usize>() as f64),
        overall_precision: pct(total_correct as f64, pred_n.iter().sum::<usize>() as f64),
        n_plus: pct(correct.iter().filter(|&&c| c > 0).count() as f64, t as f64),
        recall_skipped,
        precision_skipped,
        num_bags: truths.len(),
        vocab_size: t,
    })
}

/// The oracle-style assignment bounding fixed-k annotation: keep a random
/// k-subset of the truth, or all of it padded with random other labels.
pub fn upper_bound_assignments(
    truths: &LabelSets,
    vocabulary: &[String],
    k: usize,
    seed: u64,
) -> Result<LabelSets> {
    if k > vocabulary.len() {
        return Err(Error::KTooLarge {
            k,
            vocab: vocabulary.len(),
        });
    }
    let known: HashSet<&str> = vocabulary.iter().map(String::as_str).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = LabelSets::new();
    for (id, truth) in truths {
        let mut truth_uniq: Vec<&String> = Vec::new();
        for l in truth {
            if !known.contains(l.as_str()) {
                return Err(Error::UnknownLabel(l.clone()));
            }
            if !truth_uniq.contains(&l) {
                truth_uniq.push(l);
            }
        }
        let chosen: Vec<String> = if truth_uniq.len() >= k {
            let mut idx = rand::seq::index::sample(&mut rng, truth_uniq.len(), k).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| truth_uniq[i].clone()).collect()
        } else {
            let pool: Vec<&String> = vocabulary.iter().filter(|v| !truth_uniq.contains(v)).collect();
            let mut idx = rand::seq::index::sample(&mut rng, pool.len(), k - truth_uniq.len()).into_vec();
            idx.sort_unstable();
            truth_uniq
                .iter()
                .map(|s| (*s).clone())
                .chain(idx.into_iter().map(|i| pool[i].clone()))
                .collect()
        };
        out.insert(id.clone(), chosen);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapAveraging {
    /// Hit rate per class, then the mean over classes.
    #[default]
    Macro,
    /// Hit rate over all images.
    Micro,
}

/// Percentage of single-label images whose truth is in the top `k` of
/// their ranking.
pub fn map_at_k(
    rankings: &LabelSets,
    truths: &BTreeMap<String, String>,
    k: usize,
    averaging: MapAveraging,
) -> Result<f64> {
    if k == 0 {
        return Err(Error::ZeroK);
    }
    let mut per_class: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for (id, truth) in truths {
        let ranking = rankings
            .get(id)
            .ok_or_else(|| Error::UnalignedBag(id.clone()))?;
        if ranking.len() < k {
            return Err(Error::RankingTooShort {
                image: id.clone(),
                k,
                found: ranking.len(),
            });
        }
        let hit = ranking[..k].iter().any(|l| l == truth);
        let slot = per_class.entry(truth.as_str()).or_default();
        slot.0 += usize::from(hit);
        slot.1 += 1;
    }
    Ok(match averaging {
        MapAveraging::Macro => {
            let sum: f64 = per_class
                .values()
                .map(|&(h, n)| h as f64 / n as f64)
                .sum();
            pct(sum, per_class.len() as f64)
        }
        MapAveraging::Micro => {
            let (h, n) = per_class
                .values()
                .fold((0, 0), |(a, b), &(h, n)| (a + h, b + n));
            pct(h as f64, n as f64)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sets(items: &[(&str, &[&str])]) -> LabelSets {
        items
            .iter()
            .map(|(id, ls)| (id.to_string(), ls.iter().map(|s| s.to_string()).collect()))
            .collect()
    }

    fn vocab(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("l{i}")).collect()
    }

    #[test]
    fn perfect_and_disjoint() {
        let v = vocab(4);
        let truth = sets(&[("a", &["l0", "l1"]), ("b", &["l2", "l3"])]);
        let r = evaluate_annotations(&truth, &truth, &v, 2).unwrap();
        for x in [r.per_class_recall, r.per_class_precision, r.overall_recall, r.overall_precision, r.n_plus] {
            assert_eq!(x, 100.0);
        }
        let pred = sets(&[("a", &["l2", "l3"]), ("b", &["l0", "l1"])]);
        let r = evaluate_annotations(&pred, &truth, &v, 2).unwrap();
        for x in [r.per_class_recall, r.per_class_precision, r.overall_recall, r.overall_precision, r.n_plus] {
            assert_eq!(x, 0.0);
        }
    }

    #[test]
    fn hand_counted_case() {
        // 3 bags, 4 labels, k = 2
        let v = vocab(4);
        let truth = sets(&[("a", &["l0"]), ("b", &["l0", "l1", "l2"]), ("c", &["l3"])]);
        let pred = sets(&[("a", &["l0", "l1"]), ("b", &["l1", "l3"]), ("c", &["l0", "l2"])]);
        let r = evaluate_annotations(&pred, &truth, &v, 2).unwrap();
        // correct: l0 1, l1 1, l2 0, l3 0; truth: l0 2, l1 1, l2 1, l3 1; pred: l0 2, l1 2, l2 1, l3 1
        assert!((r.per_class_recall - 100.0 * (0.5 + 1.0) / 4.0).abs() < 1e-12);
        assert!((r.per_class_precision - 100.0 * (0.5 + 0.5) / 4.0).abs() < 1e-12);
        assert!((r.overall_recall - 100.0 * 2.0 / 5.0).abs() < 1e-12);
        assert!((r.overall_precision - 100.0 * 2.0 / 6.0).abs() < 1e-12);
        assert_eq!(r.n_plus, 50.0);
        assert_eq!((r.recall_skipped, r.precision_skipped), (0, 0));
    }

    #[test]
    fn skips_zero_denominators() {
        let v = vocab(3);
        let truth = sets(&[("a", &["l0"])]);
        let pred = sets(&[("a", &["l0"])]);
        let r = evaluate_annotations(&pred, &truth, &v, 1).unwrap();
        assert_eq!(r.per_class_recall, 100.0);
        assert_eq!(r.recall_skipped, 2);
        assert_eq!(r.precision_skipped, 2);
        assert!((r.n_plus - 100.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn input_errors() {
        let v = vocab(3);
        let truth = sets(&[("a", &["l0"])]);
        assert!(matches!(
            evaluate_annotations(&sets(&[("a", &["l0", "l1"])]), &truth, &v, 1),
            Err(Error::PredictionCount { .. })
        ));
        assert!(matches!(
            evaluate_annotations(&sets(&[("a", &["zz"])]), &truth, &v, 1),
            Err(Error::UnknownLabel(_))
        ));
        assert!(matches!(
            evaluate_annotations(&sets(&[("a", &["l1", "l1"])]), &truth, &v, 2),
            Err(Error::DuplicatePrediction { .. })
        ));
        assert!(matches!(
            evaluate_annotations(&sets(&[("b", &["l1"])]), &truth, &v, 1),
            Err(Error::UnalignedBag(_))
        ));
    }

    #[test]
    fn upper_bound_cases() {
        let v = vocab(6);
        let truth = sets(&[("eq", &["l0", "l1", "l2"]), ("big", &["l0", "l1", "l2", "l3", "l4"]), ("small", &["l5"])]);
        let ub = upper_bound_assignments(&truth, &v, 3, 42).unwrap();
        assert_eq!(ub["eq"], ["l0", "l1", "l2"]);
        assert_eq!(ub["big"].len(), 3);
        assert!(ub["big"].iter().all(|l| truth["big"].contains(l)));
        assert_eq!(ub["small"].len(), 3);
        assert_eq!(ub["small"][0], "l5");
        let mut uniq = ub["small"].clone();
        uniq.dedup();
        assert_eq!(uniq.len(), 3);
        assert_eq!(ub, upper_bound_assignments(&truth, &v, 3, 42).unwrap());

        let only_big = sets(&[("big", &["l0", "l1", "l2", "l3", "l4"])]);
        let ub = upper_bound_assignments(&only_big, &v, 3, 1).unwrap();
        let r = evaluate_annotations(&ub, &only_big, &v, 3).unwrap();
        assert_eq!(r.overall_precision, 100.0);
        assert!(matches!(upper_bound_assignments(&truth, &v, 7, 0), Err(Error::KTooLarge { .. })));
    }

    #[test]
    fn map_examples() {
        let rankings = sets(&[("a", &["x", "y"]), ("b", &["y", "x"]), ("c", &["x", "y"]), ("d", &["x", "y"])]);
        let truths: BTreeMap<String, String> = [("a", "x"), ("b", "x"), ("c", "y"), ("d", "y")]
            .iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect();
        // class x: 1 of 2 hits at k = 1; class y: 0 of 2
        assert_eq!(map_at_k(&rankings, &truths, 1, MapAveraging::Macro).unwrap(), 25.0);
        assert_eq!(map_at_k(&rankings, &truths, 2, MapAveraging::Macro).unwrap(), 100.0);

        let rankings = sets(&[("a", &["x", "q"]), ("b", &["q", "x"]), ("c", &["y", "q"]), ("d", &["y", "q"])]);
        let truths: BTreeMap<String, String> = [("a", "x"), ("b", "x"), ("c", "y"), ("d", "y")]
            .iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect();
        assert_eq!(map_at_k(&rankings, &truths, 1, MapAveraging::Macro).unwrap(), 75.0);
        assert_eq!(map_at_k(&rankings, &truths, 1, MapAveraging::Micro).unwrap(), 75.0);
        assert!(matches!(
            map_at_k(&rankings, &truths, 3, MapAveraging::Macro),
            Err(Error::RankingTooShort { .. })
        ));
    }

    #[test]
    fn table_and_rounding() {
        let r = MetricsReport {
            k: 3,
            per_class_recall: 40.154,
            per_class_precision: 1.0 / 3.0,
            overall_recall: 60.0,
            overall_precision: 50.0,
            n_plus: 100.0,
            recall_skipped: 0,
            precision_skipped: 1,
            num_bags: 2,
            vocab_size: 4,
        };
        assert_eq!(r.rounded().per_class_recall, 40.15);
        assert_eq!(r.rounded().per_class_precision, 0.33);
        let t = r.to_table();
        assert!(t.contains("per-class recall         40.15"), "{t}");
        assert!(t.contains("N+                      100.00"));
    }

    fn random_case(seed: u64) -> (LabelSets, LabelSets, Vec<String>, usize) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = vocab(rng.random_range(2..=8));
        let k = rng.random_range(1..=v.len().min(4));
        let mut truth = LabelSets::new();
        let mut pred = LabelSets::new();
        for b in 0..rng.random_range(1..=12) {
            let nt = rng.random_range(0..=v.len());
            let t = rand::seq::index::sample(&mut rng, v.len(), nt).into_iter().map(|i| v[i].clone()).collect();
            let p = rand::seq::index::sample(&mut rng, v.len(), k).into_iter().map(|i| v[i].clone()).collect();
            truth.insert(b.to_string(), t);
            pred.insert(b.to_string(), p);
        }
        (pred, truth, v, k)
    }

    proptest! {
        #[test]
        fn precision_recall_relation(seed in 0u64..300) {
            let (pred, truth, v, k) = random_case(seed);
            let r = evaluate_annotations(&pred, &truth, &v, k).unwrap();
            let total_truth: usize = truth.values().map(Vec::len).sum();
            let total_pred = k * truth.len();
            if total_truth > 0 {
                let implied = r.overall_recall * total_truth as f64 / total_pred as f64;
                prop_assert!((implied - r.overall_precision).abs() < 1e-9);
            }
            for x in [r.per_class_recall, r.per_class_precision, r.overall_recall, r.overall_precision, r.n_plus] {
                prop_assert!((0.0..=100.0).contains(&x));
            }
        }

        #[test]
        fn bag_order_is_irrelevant(seed in 0u64..300) {
            // maps are keyed by id; renaming ids permutes iteration order
            let (pred, truth, v, k) = random_case(seed);
            let rename = |m: &LabelSets| m.iter().map(|(id, l)| (format!("{:03}", 997 - id.parse::<usize>().unwrap()), l.clone())).collect::<LabelSets>();
            let a = evaluate_annotations(&pred, &truth, &v, k).unwrap();
            let b = evaluate_annotations(&rename(&pred), &rename(&truth), &v, k).unwrap();
            prop_assert!((a.per_class_recall - b.per_class_recall).abs() < 1e-12);
            prop_assert!((a.overall_precision - b.overall_precision).abs() < 1e-12);
            prop_assert_eq!(a.n_plus, b.n_plus);
        }

        #[test]
        fn map_is_monotone_in_k(seed in 0u64..300) {
            use rand::{seq::SliceRandom, Rng};
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v = vocab(6);
            let mut rankings = LabelSets::new();
            let mut truths = BTreeMap::new();
            for i in 0..rng.random_range(1..15) {
                let mut r = v.clone();
                r.shuffle(&mut rng);
                truths.insert(i.to_string(), v[rng.random_range(0..6)].clone());
                rankings.insert(i.to_string(), r);
            }
            let mut prev = 0.0;
            for k in 1..=6 {
                let m = map_at_k(&rankings, &truths, k, MapAveraging::Macro).unwrap();
                prop_assert!(m >= prev);
                prev = m;
            }
            prop_assert_eq!(prev, 100.0);
        }
    }
}
