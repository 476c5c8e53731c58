//! Affordance-labeled shape corpus.
//!
//! Classes map a label to the functionalities its objects provide and,
//! optionally, to a procedural generator. Shapes are axis-aligned and centered
//! in the grid. Physical placement is a cube of [`DESK_SCALE`] meters standing
//! on the `y = 0` plane.

mod corpus;
mod shapes;

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::voxcore::{GeometryError, QuarterTurn, VoxelGrid};

pub use corpus::{ingest_off_directory, Corpus, CorpusEntry, IngestReport, Split, MANIFEST_FILE};
pub use shapes::{Generator, IntRange};

/// Physical edge of generated grids, in meters.
pub const DESK_SCALE: f64 = 2.0;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("invalid class spec: {0}")]
    InvalidSpec(String),
    #[error("does not fit a grid of edge {dim}: {what}")]
    OutOfBounds { dim: usize, what: String },
    #[error("unknown class '{0}'")]
    UnknownClass(String),
    #[error("class '{0}' has no procedural generator")]
    NoGenerator(String),
    #[error("class '{label}' has {count} sample(s); a split needs at least 2")]
    TooFewSamples { label: String, count: usize },
    #[error("train fraction must lie strictly between 0 and 1, got {0}")]
    InvalidFraction(f64),
    #[error("sample count must be at least 1")]
    NoSamples,
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Procedural,
    External,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledShape {
    pub grid: VoxelGrid,
    pub class_label: String,
    pub affordances: BTreeSet<String>,
    pub source: Source,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub class_label: String,
    pub affordances: BTreeSet<String>,
    /// Absent for classes that only come from ingested meshes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<Generator>,
}

impl ClassSpec {
    pub fn new(label: &str, affordances: &[&str], generator: Option<Generator>) -> Self {
        ClassSpec {
            class_label: label.to_string(),
            affordances: affordances.iter().map(|a| a.to_string()).collect(),
            generator,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<(), DatasetError> {
        if self.class_label.is_empty() || self.class_label.contains(['/', '\\']) || self.class_label.starts_with('.') {
            return Err(DatasetError::InvalidSpec(format!("bad class label '{}'", self.class_label)));
        }
        if self.affordances.is_empty() {
            return Err(DatasetError::InvalidSpec(format!("class '{}' has no affordances", self.class_label)));
        }
        match &self.generator {
            Some(g) => g.validate(dim),
            None => Ok(()),
        }
    }
}

/// Registered classes in a fixed order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassTable(pub Vec<ClassSpec>);

impl ClassTable {
    /// Table, chair, tub and monitor sized for a grid of edge `dim`.
    pub fn desk(dim: usize) -> Self {
        ClassTable(vec![
            ClassSpec::new("table", &["support-ability"], Some(Generator::desk_table().scaled(dim))),
            ClassSpec::new("chair", &["sit-ability", "lean-ability"], Some(Generator::desk_chair().scaled(dim))),
            ClassSpec::new("tub", &["contain-ability", "wash-ability"], Some(Generator::desk_tub().scaled(dim))),
            ClassSpec::new("monitor", &["display-ability"], Some(Generator::desk_monitor().scaled(dim))),
        ])
    }

    pub fn get(&self, label: &str) -> Option<&ClassSpec> {
        self.0.iter().find(|c| c.class_label == label)
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(|c| c.class_label.as_str())
    }

    /// Classes providing `affordance`, in table order.
    pub fn classes_with(&self, affordance: &str) -> Vec<&str> {
        self.0
            .iter()
            .filter(|c| c.affordances.contains(affordance))
            .map(|c| c.class_label.as_str())
            .collect()
    }

    pub fn validate(&self, dim: usize) -> Result<(), DatasetError> {
        let mut seen = BTreeSet::new();
        for c in &self.0 {
            c.validate(dim)?;
            if !seen.insert(&c.class_label) {
                return Err(DatasetError::InvalidSpec(format!("duplicate class '{}'", c.class_label)));
            }
        }
        Ok(())
    }
}

/// Placement shared by every corpus grid of edge `dim`.
pub fn desk_placement(grid: VoxelGrid) -> VoxelGrid {
    grid.with_placement([-DESK_SCALE / 2.0, 0.0, -DESK_SCALE / 2.0], DESK_SCALE)
}

/// `count` samples of `spec`, deterministic in `rng_seed`.
pub fn generate_class(spec: &ClassSpec, dim: usize, count: usize, rng_seed: u64) -> Result<Vec<LabeledShape>, DatasetError> {
    if count == 0 {
        return Err(DatasetError::NoSamples);
    }
    spec.validate(dim)?;
    let generator = spec
        .generator
        .as_ref()
        .ok_or_else(|| DatasetError::NoGenerator(spec.class_label.clone()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    Ok((0..count)
        .map(|_| LabeledShape {
            grid: desk_placement(generator.sample(dim, &mut rng)),
            class_label: spec.class_label.clone(),
            affordances: spec.affordances.clone(),
            source: Source::Procedural,
        })
        .collect())
}

/// Per-class seed: FNV-1a of the label mixed with the corpus seed, so adding a
/// class leaves the others unchanged.
pub fn class_seed(seed: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Every shape followed by its 90, 180 and 270 degree turns about the
/// vertical axis.
pub fn augment(shapes: &[LabeledShape]) -> Vec<LabeledShape> {
    shapes
        .iter()
        .flat_map(|s| {
            QuarterTurn::ALL.into_iter().map(move |t| LabeledShape {
                grid: s.grid.rotate_quarter(t),
                ..s.clone()
            })
        })
        .collect()
}

/// Stratified split. Each class keeps `round(n * train_fraction)` samples,
/// clamped to `[1, n - 1]`, chosen by a seeded shuffle. Both outputs preserve
/// input order.
pub fn split(
    shapes: &[LabeledShape],
    train_fraction: f64,
    rng_seed: u64,
) -> Result<(Vec<LabeledShape>, Vec<LabeledShape>), DatasetError> {
    let (train, held) = split_indices(shapes, train_fraction, rng_seed)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| shapes[i].clone()).collect();
    Ok((pick(&train), pick(&held)))
}

pub(crate) fn split_indices(
    shapes: &[LabeledShape],
    train_fraction: f64,
    rng_seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), DatasetError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DatasetError::InvalidFraction(train_fraction));
    }
    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in shapes.iter().enumerate() {
        by_class.entry(&s.class_label).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut is_train = vec![false; shapes.len()];
    for (label, mut idx) in by_class {
        let n = idx.len();
        if n < 2 {
            return Err(DatasetError::TooFewSamples {
                label: label.to_string(),
                count: n,
            });
        }
        let keep = ((n as f64 * train_fraction).round() as usize).clamp(1, n - 1);
        idx.shuffle(&mut rng);
        for &i in &idx[..keep] {
            is_train[i] = true;
        }
    }
    Ok((0..shapes.len()).partition(|&i| is_train[i]))
}
