//! Images as bags of instance features: the whole frame plus filtered subregions.

use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Slack for float noise when comparing region sides against the thresholds.
const GEOM_EPS: f64 = 1e-12;

/// Axis-aligned region in coordinates normalized to the image extent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct RegionGeometry {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl RegionGeometry {
    pub const FULL: RegionGeometry = RegionGeometry {
        x0: 0.0,
        y0: 0.0,
        x1: 1.0,
        y1: 1.0,
    };

    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        let ok = (0.0..=1.0).contains(&x0)
            && (0.0..=1.0).contains(&y0)
            && x0 < x1
            && y0 < y1
            && x1 <= 1.0
            && y1 <= 1.0;
        if ok {
            Ok(Self { x0, y0, x1, y1 })
        } else {
            Err(Error::InvalidGeometry([x0, y0, x1, y1]))
        }
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn is_full_frame(&self) -> bool {
        *self == Self::FULL
    }
}

impl TryFrom<[f64; 4]> for RegionGeometry {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

impl From<RegionGeometry> for [f64; 4] {
    fn from(g: RegionGeometry) -> Self {
        [g.x0, g.y0, g.x1, g.y1]
    }
}

/// Subregion admission thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionFilter {
    /// Minimum side length as a fraction of the image side.
    pub min_side: f64,
    /// Maximum of width/height and height/width.
    pub max_aspect: f64,
}

impl Default for RegionFilter {
    fn default() -> Self {
        Self {
            min_side: 0.3,
            max_aspect: 4.0,
        }
    }
}

impl RegionFilter {
    pub fn admits(&self, g: &RegionGeometry) -> bool {
        passes_region_filter(g, self.min_side, self.max_aspect)
    }
}

/// Side-length and aspect-ratio test for a candidate subregion.
pub fn passes_region_filter(g: &RegionGeometry, min_side: f64, max_aspect: f64) -> bool {
    let (w, h) = (g.width(), g.height());
    w + GEOM_EPS >= min_side
        && h + GEOM_EPS >= min_side
        && w / h <= max_aspect + GEOM_EPS
        && h / w <= max_aspect + GEOM_EPS
}

/// All rectangles of at least 2x2 cells on a 4x4 grid: 36 regions.
///
/// Ordered row-major by top-left cell, then by height, then by width.
pub fn grid_subregion_geometries() -> Vec<RegionGeometry> {
    const CELLS: usize = 4;
    const MIN_CELLS: usize = 2;
    let cell = 1.0 / CELLS as f64;
    let mut out = Vec::with_capacity(36);
    for top in 0..CELLS {
        for left in 0..CELLS {
            for h in MIN_CELLS..=CELLS - top {
                for w in MIN_CELLS..=CELLS - left {
                    out.push(RegionGeometry {
                        x0: left as f64 * cell,
                        y0: top as f64 * cell,
                        x1: (left + w) as f64 * cell,
                        y1: (top + h) as f64 * cell,
                    });
                }
            }
        }
    }
    out
}

/// One image: instance 0 is the whole frame, the rest are admitted subregions.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceBag<T> {
    id: String,
    feature_dim: usize,
    features: Vec<Vec<T>>,
    geometries: Vec<RegionGeometry>,
    labels: Vec<String>,
}

impl<T: Scalar> InstanceBag<T> {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    /// Always false: the whole image is always present.
    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn feature(&self, i: usize) -> &[T] {
        &self.features[i]
    }

    pub fn features(&self) -> impl Iterator<Item = &[T]> {
        self.features.iter().map(Vec::as_slice)
    }

    pub fn geometry(&self, i: usize) -> RegionGeometry {
        self.geometries[i]
    }

    pub fn geometries(&self) -> &[RegionGeometry] {
        &self.geometries
    }

    /// Ground-truth labels, deduplicated, in first-seen order.
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn cast<U: Scalar>(&self) -> InstanceBag<U> {
        InstanceBag {
            id: self.id.clone(),
            feature_dim: self.feature_dim,
            features: self
                .features
                .iter()
                .map(|f| f.iter().map(|x| U::of(x.as_f64())).collect())
                .collect(),
            geometries: self.geometries.clone(),
            labels: self.labels.clone(),
        }
    }

    /// The single-instance bag holding only the whole-image feature.
    pub fn whole_image_only(&self) -> Self {
        Self {
            id: self.id.clone(),
            feature_dim: self.feature_dim,
            features: vec![self.features[0].clone()],
            geometries: vec![RegionGeometry::FULL],
            labels: self.labels.clone(),
        }
    }

    pub fn to_record(&self) -> BagRecord {
        BagRecord {
            id: self.id.clone(),
            labels: self.labels.clone(),
            instances: self
                .features
                .iter()
                .zip(&self.geometries)
                .map(|(f, g)| InstanceRecord {
                    geom: *g,
                    feat: f.iter().map(|v| v.as_f64()).collect(),
                })
                .collect(),
        }
    }
}

/// Assembles a bag. Regions failing `filter` are dropped; survivors keep
/// their input order after the whole image.
pub fn build_bag<T: Scalar>(
    id: impl Into<String>,
    whole_image_feature: Vec<T>,
    regions: Vec<(Vec<T>, RegionGeometry)>,
    filter: &RegionFilter,
    labels: impl IntoIterator<Item = impl Into<String>>,
) -> Result<InstanceBag<T>> {
    let id = id.into();
    let feature_dim = whole_image_feature.len();
    if feature_dim == 0 {
        return Err(Error::EmptyFeature(id));
    }
    if let Some((index, (f, _))) = regions
        .iter()
        .enumerate()
        .find(|(_, (f, _))| f.len() != feature_dim)
    {
        return Err(Error::RegionDimension {
            bag: id,
            index,
            expected: feature_dim,
            found: f.len(),
        });
    }
    let mut features = vec![whole_image_feature];
    let mut geometries = vec![RegionGeometry::FULL];
    for (f, g) in regions {
        if filter.admits(&g) {
            features.push(f);
            geometries.push(g);
        }
    }
    let mut uniq: Vec<String> = Vec::new();
    for l in labels {
        let l = l.into();
        if !uniq.contains(&l) {
            uniq.push(l);
        }
    }
    Ok(InstanceBag {
        id,
        feature_dim,
        features,
        geometries,
        labels: uniq,
    })
}

/// JSON Lines record for one bag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BagRecord {
    pub id: String,
    #[serde(default)]
    pub labels: Vec<String>,
    pub instances: Vec<InstanceRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub geom: RegionGeometry,
    pub feat: Vec<f64>,
}

impl BagRecord {
    /// Converts to a bag, enforcing the whole-frame instance 0 and filtering
    /// the rest.
    pub fn into_bag<T: Scalar>(self, filter: &RegionFilter) -> Result<InstanceBag<T>> {
        let mut instances = self.instances.into_iter();
        let whole = instances
            .next()
            .filter(|i| i.geom.is_full_frame())
            .ok_or_else(|| Error::WholeImageGeometry(self.id.clone()))?;
        let conv = |v: Vec<f64>| v.into_iter().map(T::of).collect::<Vec<T>>();
        let regions = instances.map(|i| (conv(i.feat), i.geom)).collect();
        build_bag(self.id, conv(whole.feat), regions, filter, self.labels).map_err(|e| match e {
            // report positions as they appear in the file
            Error::RegionDimension {
                bag,
                index,
                expected,
                found,
            } => Error::RegionDimension {
                bag,
                index: index + 1,
                expected,
                found,
            },
            e => e,
        })
    }
}

/// Parses bag JSON Lines. Blank lines are skipped.
pub fn parse_bags_jsonl<T: Scalar>(
    text: &str,
    source: &str,
    filter: &RegionFilter,
) -> Result<Vec<InstanceBag<T>>> {
    let mut bags = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let wrap = |msg: String| Error::Parse {
            path: source.to_string(),
            line: lineno + 1,
            msg,
        };
        let record: BagRecord = serde_json::from_str(line).map_err(|e| wrap(e.to_string()))?;
        bags.push(record.into_bag(filter).map_err(|e| wrap(e.to_string()))?);
    }
    Ok(bags)
}

pub fn read_bags_jsonl<T: Scalar>(
    path: impl AsRef<Path>,
    filter: &RegionFilter,
) -> Result<Vec<InstanceBag<T>>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_bags_jsonl(&text, &path.display().to_string(), filter)
}

pub fn write_bags_jsonl<T: Scalar>(path: impl AsRef<Path>, bags: &[InstanceBag<T>]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for bag in bags {
        serde_json::to_writer(&mut out, &bag.to_record())?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}
