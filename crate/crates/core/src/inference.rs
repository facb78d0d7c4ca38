//! Label annotation by min-instance distance, with per-label localization.

use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bags::{InstanceBag, RegionGeometry};
use crate::embedding::{bag_label_distance, EmbeddingModel};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::semantic_space::{rank_indices, LabelSpace};

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionEntry<T> {
    pub label: String,
    pub distance: T,
    /// Bag instance closest to the label.
    pub instance: usize,
    pub geometry: RegionGeometry,
}

/// Top-ranked labels for one bag, closest first.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionList<T> {
    pub bag_id: String,
    pub entries: Vec<PredictionEntry<T>>,
}

impl<T: Scalar> PredictionList<T> {
    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.label.as_str())
    }

    pub fn to_record(&self) -> PredictionRecord {
        PredictionRecord {
            id: self.bag_id.clone(),
            predictions: self
                .entries
                .iter()
                .map(|e| PredictionRecordEntry {
                    label: e.label.clone(),
                    distance: e.distance.as_f64(),
                    instance: e.instance,
                    geom: e.geometry,
                })
                .collect(),
        }
    }
}

/// Ranks the whole vocabulary of `space` for `bag` and keeps the first `k`.
pub fn predict<T: Scalar>(
    model: &EmbeddingModel<T>,
    bag: &InstanceBag<T>,
    space: &LabelSpace<T>,
    k: usize,
) -> Result<PredictionList<T>> {
    if k == 0 {
        return Err(Error::ZeroK);
    }
    if k > space.len() {
        return Err(Error::KTooLarge {
            k,
            vocab: space.len(),
        });
    }
    if space.dim() != model.semantic_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.semantic_dim(),
            found: space.dim(),
        });
    }
    let distances = model.embed_bag(bag)?.distances_to_space(space);
    let values: Vec<T> = distances.iter().map(|d| d.distance).collect();
    let entries = rank_indices(&values)
        .into_iter()
        .take(k)
        .map(|l| PredictionEntry {
            label: space.name(l).to_string(),
            distance: distances[l].distance,
            instance: distances[l].argmin_index,
            geometry: bag.geometry(distances[l].argmin_index),
        })
        .collect();
    Ok(PredictionList {
        bag_id: bag.id().to_string(),
        entries,
    })
}

/// [`predict`] over a label space never seen in training. The model is only read.
pub fn zero_shot_predict<T: Scalar>(
    model: &EmbeddingModel<T>,
    bag: &InstanceBag<T>,
    unseen_space: &LabelSpace<T>,
    k: usize,
) -> Result<PredictionList<T>> {
    predict(model, bag, unseen_space, k)
}

/// The instance (and its region) closest to `label_vec`.
pub fn localize_label<T: Scalar>(
    model: &EmbeddingModel<T>,
    bag: &InstanceBag<T>,
    label_vec: &[T],
) -> Result<(usize, RegionGeometry)> {
    let d = bag_label_distance(model, bag, label_vec)?;
    Ok((d.argmin_index, bag.geometry(d.argmin_index)))
}

/// [`predict`] for every bag; output order follows `bags`.
pub fn predict_all<T: Scalar>(
    model: &EmbeddingModel<T>,
    bags: &[InstanceBag<T>],
    space: &LabelSpace<T>,
    k: usize,
) -> Result<Vec<PredictionList<T>>> {
    bags.par_iter()
        .map(|b| predict(model, b, space, k))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecordEntry {
    pub label: String,
    pub distance: f64,
    pub instance: usize,
    pub geom: RegionGeometry,
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub predictions: Vec<PredictionRecordEntry>,
}

pub fn predictions_to_jsonl<T: Scalar>(lists: &[PredictionList<T>]) -> String {
    let mut out = String::new();
    for l in lists {
        out.push_str(&serde_json::to_string(&l.to_record()).expect("prediction serializes"));
        out.push('\n');
    }
    out
}

pub fn write_predictions_jsonl<T: Scalar>(
    path: impl AsRef<Path>,
    lists: &[PredictionList<T>],
) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(predictions_to_jsonl(lists).as_bytes())?;
    f.flush()?;
    Ok(())
}

pub fn parse_predictions_jsonl(text: &str, source: &str) -> Result<Vec<PredictionRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: source.to_string(),
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

pub fn read_predictions_jsonl(path: impl AsRef<Path>) -> Result<Vec<PredictionRecord>> {
    let path = path.as_ref();
    parse_predictions_jsonl(&std::fs::read_to_string(path)?, &path.display().to_string())
}
