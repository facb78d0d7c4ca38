//! The semantic label space: label names mapped to unit-normalized vectors.
//!
//! Vectors are normalized once, at construction. Every query downstream
//! (distances, rankings, loss terms) assumes unit label vectors.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::{norm, Scalar};

/// Semantic dimensionality of the word vectors the method was designed around.
pub const DEFAULT_SEMANTIC_DIM: usize = 300;

/// An ordered vocabulary of labels with unit-norm semantic vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSpace<T> {
    dim: usize,
    names: Vec<String>,
    vectors: Vec<Vec<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> LabelSpace<T> {
    /// Builds a space from raw `(name, vector)` records, normalizing each vector
    /// to unit length. Insertion order is the vocabulary order.
    pub fn from_records<I, S>(records: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<T>)>,
        S: Into<String>,
    {
        let mut dim = None;
        let mut names = Vec::new();
        let mut vectors = Vec::new();
        let mut index = HashMap::new();
        for (name, raw) in records {
            let name = name.into();
            if name.is_empty() {
                return Err(Error::EmptyLabelName);
            }
            let expected = *dim.get_or_insert(raw.len());
            if raw.len() != expected || expected == 0 {
                return Err(Error::RaggedDimensions {
                    name,
                    expected,
                    found: raw.len(),
                });
            }
            let n = norm(&raw);
            if n == T::zero() || !n.is_finite() {
                return Err(Error::ZeroVector(name));
            }
            if index.contains_key(&name) {
                return Err(Error::DuplicateLabel(name));
            }
            index.insert(name.clone(), names.len());
            names.push(name);
            // unit within rounding: keep as is, so reloading a saved space is exact
            if (n - T::one()).abs() <= T::epsilon() * T::of(expected as f64 + 4.0) {
                vectors.push(raw);
            } else {
                vectors.push(raw.into_iter().map(|v| v / n).collect());
            }
        }
        let dim = dim.ok_or(Error::EmptyLabelSpace)?;
        Ok(Self {
            dim,
            names,
            vectors,
            index,
        })
    }

    /// The same space in another scalar type. Values are converted as they
    /// are, without renormalizing.
    pub fn cast<U: Scalar>(&self) -> LabelSpace<U> {
        LabelSpace {
            dim: self.dim,
            names: self.names.clone(),
            vectors: self
                .vectors
                .iter()
                .map(|v| v.iter().map(|x| U::of(x.as_f64())).collect())
                .collect(),
            index: self.index.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn vector(&self, i: usize) -> &[T] {
        &self.vectors[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    /// Index of `name`, or an `UnknownLabel` error.
    pub fn require(&self, name: &str) -> Result<usize> {
        self.index_of(name)
            .ok_or_else(|| Error::UnknownLabel(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[T])> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.vectors.iter().map(Vec::as_slice))
    }

    /// A new space holding the labels at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Self::from_records(
            indices
                .iter()
                .map(|&i| (self.names[i].clone(), self.vectors[i].clone())),
        )
    }

    /// Parses the tab-separated label format: `name\tv1\t...\tvd` per line.
    ///
    /// `source` only labels error messages. Blank lines are skipped.
    pub fn parse_tsv(text: &str, source: &str) -> Result<Self> {
        let mut fields_expected = None;
        let mut records = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.strip_suffix('\r').unwrap_or(line);
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |msg: String| Error::Parse {
                path: source.to_string(),
                line: lineno + 1,
                msg,
            };
            let fields: Vec<&str> = line.split('\t').collect();
            let expected = *fields_expected.get_or_insert(fields.len());
            if fields.len() != expected {
                return Err(parse_err(format!(
                    "{} fields, first line has {expected}",
                    fields.len()
                )));
            }
            if fields.len() < 2 {
                return Err(parse_err("expected a name and at least one value".into()));
            }
            let vector = fields[1..]
                .iter()
                .map(|f| {
                    f.trim()
                        .parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .map(T::of)
                        .ok_or_else(|| parse_err(format!("invalid number `{f}`")))
                })
                .collect::<Result<Vec<T>>>()?;
            records.push((fields[0].to_string(), vector));
        }
        Self::from_records(records)
    }

    pub fn read_tsv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::parse_tsv(&text, &path.display().to_string())
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (name, v) in self.iter() {
            out.push_str(name);
            for x in v {
                write!(out, "\t{}", x.as_f64()).unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn write_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_tsv())?;
        Ok(())
    }
}

/// Free-function form of [`LabelSpace::from_records`].
pub fn load_label_space<T: Scalar, S: Into<String>>(
    records: impl IntoIterator<Item = (S, Vec<T>)>,
) -> Result<LabelSpace<T>> {
    LabelSpace::from_records(records)
}

/// `||p - q||²`.
pub fn squared_distance<T: Scalar>(p: &[T], q: &[T]) -> Result<T> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            found: q.len(),
        });
    }
    Ok(sq_dist(p, q))
}

pub(crate) fn sq_dist<T: Scalar>(p: &[T], q: &[T]) -> T {
    p.iter().zip(q).fold(T::zero(), |acc, (&a, &b)| {
        let d = a - b;
        acc + d * d
    })
}

/// Indices `0..distances.len()` sorted ascending by distance. Ties keep
/// index order.
pub fn rank_indices<T: Scalar>(distances: &[T]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..distances.len()).collect();
    order.sort_by(|&a, &b| {
        distances[a]
            .partial_cmp(&distances[b])
            .unwrap_or(Ordering::Equal)
    });
    order
}

/// Orders the vocabulary ascending by the supplied per-label distance.
/// Ties resolve by vocabulary order.
pub fn rank_labels_by_distance<T: Scalar>(
    space: &LabelSpace<T>,
    per_label_distance: &HashMap<String, T>,
) -> Result<Vec<String>> {
    let distances = space
        .names()
        .iter()
        .map(|n| {
            per_label_distance
                .get(n)
                .copied()
                .ok_or_else(|| Error::MissingDistance(n.clone()))
        })
        .collect::<Result<Vec<T>>>()?;
    Ok(rank_indices(&distances)
        .into_iter()
        .map(|i| space.name(i).to_string())
        .collect())
}
