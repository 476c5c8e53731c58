//! A loaded model plus its corpus, with lazily computed class essences.
//!
//! Everything here is read-only after construction apart from write-once
//! caches, so a session can be shared across request threads.

use std::collections::BTreeMap;
use std::sync::{Mutex, OnceLock};
use std::time::Instant;

use affordgen::affordlab::{
    containability_test, default_sphere_radius, supportability_test, AffordError, ContainabilityResult, CubeProbe,
    SupportabilityMap,
};
use affordgen::arithmetic::{
    class_essence, combine, importance_vector, nearest_by_features, ArithmeticError, ClassEssence, CombineRequest,
    ImportanceVector,
};
use affordgen::dataset::{ClassTable, Corpus, Split, DESK_SCALE};
use affordgen::vae::{LatentCode, Model, VaeError};
use affordgen::voxcore::{DensityGrid, VoxelGrid};
use serde::{Deserialize, Serialize};

/// Threshold applied to decoded occupancy probabilities.
pub const DECODE_THRESHOLD: f64 = 0.5;

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("unknown class '{0}'")]
    UnknownClass(String),
    #[error("class '{0}' has no samples in the corpus")]
    EmptyClass(String),
    #[error("{name} must lie in [0, 1], got {value}")]
    InvalidPercent { name: &'static str, value: f64 },
    #[error("corpus grids have edge {corpus}, the model expects {model}")]
    DimensionMismatch { corpus: usize, model: usize },
    #[error(transparent)]
    Arithmetic(#[from] ArithmeticError),
    #[error(transparent)]
    Vae(#[from] VaeError),
    #[error(transparent)]
    Afford(#[from] AffordError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffordParams {
    pub probe: CubeProbe,
    /// Physical sphere radius; a sixteenth of the grid edge when absent.
    pub sphere_radius: Option<f64>,
}

impl Default for AffordParams {
    fn default() -> Self {
        AffordParams {
            probe: CubeProbe::default(),
            sphere_radius: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffordanceReport {
    pub supportability: SupportabilityMap,
    pub containability: ContainabilityResult,
    pub probe: CubeProbe,
    pub sphere_radius: f64,
}

pub fn affordance_report(grid: &VoxelGrid, params: &AffordParams) -> Result<AffordanceReport, AffordError> {
    let radius = params.sphere_radius.unwrap_or_else(|| default_sphere_radius(grid));
    Ok(AffordanceReport {
        supportability: supportability_test(grid, &params.probe)?,
        containability: containability_test(grid, radius)?,
        probe: params.probe,
        sphere_radius: radius,
    })
}

#[derive(Clone, Debug)]
pub struct Essence {
    pub essence: ClassEssence,
    pub importance: ImportanceVector,
    pub density: DensityGrid,
}

impl Essence {
    pub fn grid(&self) -> VoxelGrid {
        self.density.threshold(DECODE_THRESHOLD)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NearestObject {
    pub class_label: String,
    pub base_index: usize,
    pub distance: f64,
}

#[derive(Clone, Debug)]
pub struct Combination {
    pub code: LatentCode,
    pub density: DensityGrid,
    pub grid: VoxelGrid,
    pub report: AffordanceReport,
    pub nearest: Vec<NearestObject>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LogEntry {
    pub operation: String,
    pub millis: u128,
    pub ok: bool,
}

pub struct Session {
    model: Model,
    corpus: Corpus,
    placement: ([f64; 3], f64),
    void_code: OnceLock<LatentCode>,
    essences: BTreeMap<String, OnceLock<Essence>>,
    /// Decoder features of unrotated training shapes, with their corpus entry.
    features: OnceLock<Vec<(usize, Vec<f64>)>>,
    log: Mutex<Vec<LogEntry>>,
}

impl Session {
    pub fn new(model: Model, corpus: Corpus) -> Result<Session, SessionError> {
        if corpus.dim != model.config().input_dim {
            return Err(SessionError::DimensionMismatch {
                corpus: corpus.dim,
                model: model.config().input_dim,
            });
        }
        let placement = corpus
            .entries
            .first()
            .map(|e| (e.shape.grid.translate, e.shape.grid.scale()))
            .unwrap_or(([-DESK_SCALE / 2.0, 0.0, -DESK_SCALE / 2.0], DESK_SCALE));
        let essences = corpus.classes.labels().map(|l| (l.to_string(), OnceLock::new())).collect();
        Ok(Session {
            model,
            corpus,
            placement,
            void_code: OnceLock::new(),
            essences,
            features: OnceLock::new(),
            log: Mutex::new(Vec::new()),
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn classes(&self) -> &ClassTable {
        &self.corpus.classes
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn sample_count(&self, label: &str) -> usize {
        self.corpus.class_shapes(label, None).len()
    }

    pub fn request_log(&self) -> Vec<LogEntry> {
        self.log.lock().map(|l| l.clone()).unwrap_or_default()
    }

    fn record<T, E>(&self, operation: String, start: Instant, r: &Result<T, E>) {
        if let Ok(mut l) = self.log.lock() {
            l.push(LogEntry {
                operation,
                millis: start.elapsed().as_millis(),
                ok: r.is_ok(),
            });
        }
    }

    /// Decoded occupancy probabilities at the corpus placement.
    pub fn decode(&self, code: &LatentCode) -> Result<DensityGrid, SessionError> {
        let mut d = self.model.decode(&code.means)?;
        (d.translate, d.scale) = self.placement;
        Ok(d)
    }

    fn void_code(&self) -> Result<&LatentCode, SessionError> {
        if let Some(c) = self.void_code.get() {
            return Ok(c);
        }
        let code = self.model.encode(&VoxelGrid::empty(self.corpus.dim))?;
        Ok(self.void_code.get_or_init(|| code))
    }

    /// Essence of `label` over its training shapes (all shapes when the
    /// corpus has no split), its importance vector and decode.
    pub fn essence(&self, label: &str) -> Result<&Essence, SessionError> {
        let start = Instant::now();
        let r = self.essence_inner(label);
        self.record(format!("essence {label}"), start, &r);
        r
    }

    fn essence_inner(&self, label: &str) -> Result<&Essence, SessionError> {
        let cell = self
            .essences
            .get(label)
            .ok_or_else(|| SessionError::UnknownClass(label.to_string()))?;
        if let Some(e) = cell.get() {
            return Ok(e);
        }
        let e = self.compute_essence(label)?;
        Ok(cell.get_or_init(|| e))
    }

    fn compute_essence(&self, label: &str) -> Result<Essence, SessionError> {
        let mut shapes = self.corpus.class_shapes(label, Some(Split::Train));
        if shapes.is_empty() {
            shapes = self.corpus.class_shapes(label, None);
        }
        if shapes.is_empty() {
            return Err(SessionError::EmptyClass(label.to_string()));
        }
        let grids: Vec<&VoxelGrid> = shapes.iter().map(|s| &s.grid).collect();
        let codes = self.model.encode_many(&grids)?;
        let essence = class_essence(&codes, label)?;
        let importance = importance_vector(&essence.code, self.void_code()?)?;
        let density = self.decode(&essence.code)?;
        Ok(Essence {
            essence,
            importance,
            density,
        })
    }

    fn features(&self) -> Result<&[(usize, Vec<f64>)], SessionError> {
        if let Some(f) = self.features.get() {
            return Ok(f);
        }
        let picks: Vec<usize> = (0..self.corpus.entries.len())
            .filter(|&i| {
                let e = &self.corpus.entries[i];
                e.split == Split::Train && e.rotation == 0
            })
            .collect();
        let grids: Vec<&VoxelGrid> = picks.iter().map(|&i| &self.corpus.entries[i].shape.grid).collect();
        let codes = self.model.encode_many(&grids)?;
        let f = picks
            .into_iter()
            .zip(codes)
            .map(|(i, c)| Ok((i, self.model.decoder_features(&c.means)?)))
            .collect::<Result<Vec<_>, SessionError>>()?;
        Ok(self.features.get_or_init(|| f))
    }

    /// Up to `k` unrotated training shapes closest to `code` in decoder
    /// feature space.
    pub fn nearest(&self, code: &LatentCode, k: usize) -> Result<Vec<NearestObject>, SessionError> {
        let features = self.features()?;
        if features.is_empty() {
            return Ok(vec![]);
        }
        let query = self.model.decoder_features(&code.means)?;
        let all: Vec<Vec<f64>> = features.iter().map(|(_, f)| f.clone()).collect();
        let hits = nearest_by_features(&query, &all, k.min(all.len()))?;
        Ok(hits
            .into_iter()
            .map(|n| {
                let e = &self.corpus.entries[features[n.index].0];
                NearestObject {
                    class_label: e.shape.class_label.clone(),
                    base_index: e.base_index,
                    distance: n.distance,
                }
            })
            .collect())
    }

    /// Merges the essences of `base` and `top`, decodes the result and runs
    /// both affordance tests on it.
    pub fn combine(
        &self,
        base: &str,
        top: &str,
        base_percent: f64,
        top_percent: f64,
        params: &AffordParams,
    ) -> Result<Combination, SessionError> {
        let start = Instant::now();
        let r = self.combine_inner(base, top, base_percent, top_percent, params);
        self.record(format!("combine {base}+{top}"), start, &r);
        r
    }

    fn combine_inner(
        &self,
        base: &str,
        top: &str,
        base_percent: f64,
        top_percent: f64,
        params: &AffordParams,
    ) -> Result<Combination, SessionError> {
        for (name, value) in [("base_percent", base_percent), ("top_percent", top_percent)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(SessionError::InvalidPercent { name, value });
            }
        }
        let b = self.essence(base)?;
        let t = self.essence(top)?;
        let request = CombineRequest {
            base: b.essence.code.clone(),
            top: t.essence.code.clone(),
            base_percent,
            top_percent,
        };
        let code = combine(&request, &b.importance, &t.importance)?;
        let density = self.decode(&code)?;
        let grid = density.threshold(DECODE_THRESHOLD);
        let report = affordance_report(&grid, params)?;
        let nearest = self.nearest(&code, 2)?;
        Ok(Combination {
            code,
            density,
            grid,
            report,
            nearest,
        })
    }
}
