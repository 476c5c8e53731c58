use rand::seq::index::sample;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::network::Model;
use super::train::batch_loss;
use super::VaeError;
use crate::voxcore::VoxelGrid;

/// Magnitudes below this are compared in absolute terms.
pub const GRAD_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: usize,
    /// Tensor holding the worst parameter.
    pub worst_tensor: String,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    /// `(parameter index, analytic, numeric)` for every checked parameter.
    pub entries: Vec<(usize, f64, f64)>,
}

impl GradCheckReport {
    /// True when every entry satisfies `|a - n| <= atol + rtol * |n|`.
    pub fn within(&self, atol: f64, rtol: f64) -> bool {
        self.entries.iter().all(|&(_, a, n)| (a - n).abs() <= atol + rtol * n.abs())
    }
}

/// Adds uniform noise in `[-scale, scale)` to every trainable parameter.
/// Freshly initialized biases are exactly zero, which parks empty-input
/// activations on the ReLU hinge where the loss is not differentiable.
pub fn jitter_parameters(model: &mut Model, scale: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mask = model.trainable_mask();
    for (p, t) in model.parameters_mut().iter_mut().zip(mask) {
        if t {
            *p += rng.random_range(-scale..scale);
        }
    }
}

/// Compares the analytic gradient with central differences on `count`
/// randomly chosen trainable parameters, for a single-sample batch with fixed
/// `noise` and `alpha`.
pub fn grad_check(
    model: &Model,
    sample_grid: &VoxelGrid,
    noise: &[f64],
    alpha: f64,
    epsilon: f64,
    count: usize,
    seed: u64,
) -> Result<GradCheckReport, VaeError> {
    let (_, analytic) = model.loss_and_gradient(&[sample_grid], noise, alpha)?;
    let x = model.grid_batch(&[sample_grid])?;
    let trainable: Vec<usize> = model
        .trainable_mask()
        .iter()
        .enumerate()
        .filter_map(|(i, &t)| t.then_some(i))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = sample(&mut rng, trainable.len(), count.min(trainable.len()));

    let mut probe = model.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        checked: 0,
        worst_tensor: String::new(),
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        entries: Vec::with_capacity(count),
    };
    for pick in picks.iter() {
        let k = trainable[pick];
        let orig = probe.params[k];
        probe.params[k] = orig + epsilon;
        let up = batch_loss(&probe, &x, noise, alpha, None).loss;
        probe.params[k] = orig - epsilon;
        let down = batch_loss(&probe, &x, noise, alpha, None).loss;
        probe.params[k] = orig;
        let numeric = (up - down) / (2.0 * epsilon);
        let a = analytic[k];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_FLOOR);
        report.checked += 1;
        report.entries.push((k, a, numeric));
        if err > report.max_relative_error || report.worst_tensor.is_empty() {
            report.max_relative_error = err;
            report.worst_analytic = a;
            report.worst_numeric = numeric;
            report.worst_tensor = model
                .tensor_specs()
                .iter()
                .find(|s| (s.offset..s.offset + s.len()).contains(&k))
                .map(|s| s.name.clone())
                .unwrap_or_default();
        }
    }
    Ok(report)
}
