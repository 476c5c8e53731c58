//! Latent-space functionality arithmetic.
//!
//! A class essence is the average posterior of a class. Importance vectors rank
//! latent components by how far they move away from the code of an empty grid
//! and from the prior; the combination operator then takes the important
//! components of a top object into a base object.

use serde::{Deserialize, Serialize};

use crate::vae::{LatentCode, Model, VaeError};

pub const DEFAULT_W_VOID: f64 = 2.0 / 3.0;
pub const DEFAULT_W_PRIOR: f64 = 1.0 / 3.0;

#[derive(Debug, thiserror::Error)]
pub enum ArithmeticError {
    #[error("no codes to average")]
    Empty,
    #[error("latent length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("variance must be positive, got {0}")]
    InvalidVariance(f64),
    #[error("percent must lie in [0, 1], got {0}")]
    InvalidPercent(f64),
    #[error("importance weights must be non-negative and sum to 1")]
    InvalidWeights,
    #[error("requested {k} neighbours from {n} candidates")]
    TooManyNeighbours { k: usize, n: usize },
    #[error(transparent)]
    Vae(#[from] VaeError),
}

fn check_len(expected: usize, got: usize) -> Result<(), ArithmeticError> {
    if expected == got {
        Ok(())
    } else {
        Err(ArithmeticError::LengthMismatch { expected, got })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassEssence {
    pub code: LatentCode,
    pub class_label: String,
    pub sample_count: usize,
}

/// Component-wise average of a class's codes. Means are averaged directly and
/// variances in variance space.
pub fn class_essence(codes: &[LatentCode], class_label: &str) -> Result<ClassEssence, ArithmeticError> {
    let first = codes.first().ok_or(ArithmeticError::Empty)?;
    let j = first.len();
    let mut means = vec![0.0; j];
    let mut vars = vec![0.0; j];
    for c in codes {
        c.validate()?;
        check_len(j, c.len())?;
        for k in 0..j {
            means[k] += c.means[k];
            vars[k] += c.log_variances[k].exp();
        }
    }
    let n = codes.len() as f64;
    Ok(ClassEssence {
        code: LatentCode {
            means: means.into_iter().map(|m| m / n).collect(),
            log_variances: vars.into_iter().map(|v| (v / n).ln()).collect(),
        },
        class_label: class_label.to_string(),
        sample_count: codes.len(),
    })
}

/// KL divergence `KL(p || q)` of two univariate Gaussians given as `(mean, variance)`.
pub fn gaussian_kl(p: (f64, f64), q: (f64, f64)) -> Result<f64, ArithmeticError> {
    for v in [p.1, q.1] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(ArithmeticError::InvalidVariance(v));
        }
    }
    Ok(kl_log(p.0, p.1.ln(), q.0, q.1.ln()))
}

/// Same divergence with log-variances, which keeps extreme codes finite.
fn kl_log(mp: f64, lvp: f64, mq: f64, lvq: f64) -> f64 {
    let d = mp - mq;
    let ratio = lvp - lvq;
    // 0.5 * (r - 1 - ln r) with r = vp / vq, plus the mean term
    (0.5 * (ratio.exp_m1() - ratio) + 0.5 * d * d * (-lvq).exp()).max(0.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceVector {
    pub scores: Vec<f64>,
    pub w_void: f64,
    pub w_prior: f64,
}

impl ImportanceVector {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

pub fn importance_vector(code: &LatentCode, void_code: &LatentCode) -> Result<ImportanceVector, ArithmeticError> {
    importance_vector_weighted(code, void_code, DEFAULT_W_VOID, DEFAULT_W_PRIOR)
}

/// Weighted sum of the unit-normalized per-component divergences from the
/// empty-grid code and from the prior.
pub fn importance_vector_weighted(
    code: &LatentCode,
    void_code: &LatentCode,
    w_void: f64,
    w_prior: f64,
) -> Result<ImportanceVector, ArithmeticError> {
    if !(w_void >= 0.0 && w_prior >= 0.0 && ((w_void + w_prior) - 1.0).abs() < 1e-12) {
        return Err(ArithmeticError::InvalidWeights);
    }
    code.validate()?;
    void_code.validate()?;
    check_len(code.len(), void_code.len())?;
    let j = code.len();
    let mut d_void = Vec::with_capacity(j);
    let mut d_prior = Vec::with_capacity(j);
    for k in 0..j {
        let (m, lv) = (code.means[k], code.log_variances[k]);
        d_void.push(kl_log(m, lv, void_code.means[k], void_code.log_variances[k]));
        d_prior.push(kl_log(m, lv, 0.0, 0.0));
    }
    normalize(&mut d_void);
    normalize(&mut d_prior);
    Ok(ImportanceVector {
        scores: d_void
            .iter()
            .zip(&d_prior)
            .map(|(a, b)| w_void * a + w_prior * b)
            .collect(),
        w_void,
        w_prior,
    })
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// Number of components selected by `percent`: `ceil(percent * j)`, with a
/// small slack so that e.g. `0.3 * 10` selects 3, not 4.
pub fn mask_count(percent: f64, j: usize) -> usize {
    let raw = percent * j as f64;
    ((raw - 1e-9 * j.max(1) as f64).ceil().max(0.0) as usize).min(j)
}

/// Marks the `ceil(percent * J)` highest-scoring components; equal scores
/// prefer the lower index.
pub fn importance_mask(iv: &ImportanceVector, percent: f64) -> Result<Vec<bool>, ArithmeticError> {
    if !(0.0..=1.0).contains(&percent) {
        return Err(ArithmeticError::InvalidPercent(percent));
    }
    let j = iv.len();
    let mut order: Vec<usize> = (0..j).collect();
    order.sort_by(|&a, &b| iv.scores[b].total_cmp(&iv.scores[a]).then(a.cmp(&b)));
    let mut mask = vec![false; j];
    for &k in &order[..mask_count(percent, j)] {
        mask[k] = true;
    }
    Ok(mask)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CombineRequest {
    pub base: LatentCode,
    pub top: LatentCode,
    pub base_percent: f64,
    pub top_percent: f64,
}

/// Per-component merge of a base and a top code:
///
/// | base important | top important | result |
/// |---|---|---|
/// | no | no | base |
/// | no | yes | top |
/// | yes | no | base |
/// | yes | yes | average of means and of variances |
pub fn combine(
    request: &CombineRequest,
    base_iv: &ImportanceVector,
    top_iv: &ImportanceVector,
) -> Result<LatentCode, ArithmeticError> {
    let j = request.base.len();
    request.base.validate()?;
    request.top.validate()?;
    check_len(j, request.top.len())?;
    check_len(j, base_iv.len())?;
    check_len(j, top_iv.len())?;
    let base_mask = importance_mask(base_iv, request.base_percent)?;
    let top_mask = importance_mask(top_iv, request.top_percent)?;
    Ok(combine_masked(&request.base, &request.top, &base_mask, &top_mask))
}

/// The merge rule applied with explicit masks.
pub fn combine_masked(base: &LatentCode, top: &LatentCode, base_mask: &[bool], top_mask: &[bool]) -> LatentCode {
    let mut out = base.clone();
    for k in 0..base.len() {
        match (base_mask[k], top_mask[k]) {
            (_, false) => {}
            (false, true) => {
                out.means[k] = top.means[k];
                out.log_variances[k] = top.log_variances[k];
            }
            (true, true) => {
                out.means[k] = 0.5 * (base.means[k] + top.means[k]);
                let var = 0.5 * (base.log_variances[k].exp() + top.log_variances[k].exp());
                out.log_variances[k] = var.ln();
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Neighbour {
    pub index: usize,
    pub distance: f64,
}

/// The `k` dataset codes whose decoder penultimate-layer activations (at the
/// means) are closest to those of `generated`.
pub fn nearest_in_dataset(
    generated: &LatentCode,
    dataset_codes: &[LatentCode],
    model: &Model,
    k: usize,
) -> Result<Vec<Neighbour>, ArithmeticError> {
    let features: Vec<Vec<f64>> = dataset_codes
        .iter()
        .map(|c| model.decoder_features(&c.means))
        .collect::<Result<_, _>>()?;
    let query = model.decoder_features(&generated.means)?;
    nearest_by_features(&query, &features, k)
}

/// Euclidean k-nearest search over precomputed feature vectors; ascending
/// distance, equal distances by lower index.
pub fn nearest_by_features(query: &[f64], features: &[Vec<f64>], k: usize) -> Result<Vec<Neighbour>, ArithmeticError> {
    if features.is_empty() {
        return Err(ArithmeticError::Empty);
    }
    if k > features.len() {
        return Err(ArithmeticError::TooManyNeighbours { k, n: features.len() });
    }
    let mut all: Vec<Neighbour> = features
        .iter()
        .enumerate()
        .map(|(index, f)| {
            check_len(query.len(), f.len())?;
            let d2: f64 = f.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum();
            Ok(Neighbour {
                index,
                distance: d2.sqrt(),
            })
        })
        .collect::<Result<_, ArithmeticError>>()?;
    all.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.index.cmp(&b.index)));
    all.truncate(k);
    Ok(all)
}
