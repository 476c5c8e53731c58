use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::loss::{kl_unit, soft_free_bits_step, CLIP_EPS};
use super::network::{sigmoid, Mode, Model};
use super::ops::Act;
use super::{TrainConfig, VaeError};
use crate::voxcore::VoxelGrid;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    /// Plain gradient descent with a fixed step.
    Sgd,
    Adam,
}

/// Means over one epoch's batches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub recon: f64,
    /// Summed over components, per sample.
    pub kl: f64,
    pub mean_gamma: f64,
    /// Fraction of voxels with probability above 0.5.
    pub predicted_occupancy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<EpochStats>,
}

impl TrainReport {
    pub fn losses(&self) -> Vec<f64> {
        self.history.iter().map(|e| e.loss).collect()
    }
}

/// Loss terms of one batch, averaged per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchLoss {
    pub loss: f64,
    pub recon: f64,
    pub kl: Vec<f64>,
    pub predicted_occupancy: f64,
}

/// Training-mode loss of a batch with the given noise (`n * J` values) and,
/// when `grads` is supplied, its gradient accumulated into it.
pub(crate) fn batch_loss(
    model: &Model,
    x: &Act,
    noise: &[f64],
    alpha: f64,
    grads: Option<&mut [f64]>,
) -> BatchLoss {
    let n = x.n;
    let j = model.latent_dim();
    let scale = 1.0 / n as f64;
    let enc = model.encode_forward(x, Mode::Train);
    let z = Model::sample_latent(&enc.mu, &enc.logvar, noise);
    let dec = model.decode_forward(&z, n, Mode::Train);

    let mut recon = 0.0;
    let mut occupied = 0usize;
    let mut dlogits = dec.logits.same_shape();
    for ((&t, &logit), d) in x.data.iter().zip(&dec.logits.data).zip(dlogits.data.iter_mut()) {
        let p = sigmoid(logit);
        occupied += (p > 0.5) as usize;
        let clipped = p.clamp(CLIP_EPS, 1.0 - CLIP_EPS);
        recon -= alpha * t * clipped.ln() + (1.0 - t) * (1.0 - clipped).ln();
        if p > CLIP_EPS && p < 1.0 - CLIP_EPS {
            *d = scale * (-alpha * t * (1.0 - p) + (1.0 - t) * p);
        }
    }
    let mut kl = vec![0.0; j];
    let mut reg = 0.0;
    for i in 0..n {
        for c in 0..j {
            let k = kl_unit(enc.mu[i * j + c], enc.logvar[i * j + c]);
            kl[c] += k * scale;
            reg += model.gamma[c] * k;
        }
    }
    let out = BatchLoss {
        loss: (recon + reg) * scale,
        recon: recon * scale,
        kl,
        predicted_occupancy: occupied as f64 / x.data.len() as f64,
    };

    if let Some(grads) = grads {
        let dz = model.decode_backward(&dec, dlogits, grads);
        let mut dmu = vec![0.0; n * j];
        let mut dlogvar = vec![0.0; n * j];
        for i in 0..n {
            for c in 0..j {
                let k = i * j + c;
                let g = model.gamma[c] * scale;
                dmu[k] = g * enc.mu[k];
                dlogvar[k] = g * 0.5 * enc.logvar[k].exp_m1();
            }
        }
        Model::latent_backward(&enc.logvar, noise, &dz, &mut dmu, &mut dlogvar);
        model.encode_backward(&enc, &dmu, &dlogvar, grads);
    }
    out
}

impl Model {
    /// Training-mode loss and full parameter gradient for a batch with fixed noise.
    pub fn loss_and_gradient(
        &self,
        grids: &[&VoxelGrid],
        noise: &[f64],
        alpha: f64,
    ) -> Result<(BatchLoss, Vec<f64>), VaeError> {
        let x = self.grid_batch(grids)?;
        let expected = grids.len() * self.latent_dim();
        if noise.len() != expected {
            return Err(VaeError::LengthMismatch {
                expected,
                got: noise.len(),
            });
        }
        let mut grads = vec![0.0; self.parameter_count()];
        let loss = batch_loss(self, &x, noise, alpha, Some(&mut grads));
        Ok((loss, grads))
    }
}

struct OptState {
    kind: Optimizer,
    lr: f64,
    mask: Vec<bool>,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl OptState {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(kind: Optimizer, lr: f64, mask: Vec<bool>) -> Self {
        let n = mask.len();
        OptState {
            kind,
            lr,
            mask,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for k in 0..params.len() {
            if !self.mask[k] {
                continue;
            }
            let g = grads[k];
            match self.kind {
                Optimizer::Sgd => params[k] -= self.lr * g,
                Optimizer::Adam => {
                    self.m[k] = Self::BETA1 * self.m[k] + (1.0 - Self::BETA1) * g;
                    self.v[k] = Self::BETA2 * self.v[k] + (1.0 - Self::BETA2) * g * g;
                    params[k] -= self.lr * (self.m[k] / c1) / ((self.v[k] / c2).sqrt() + Self::EPS);
                }
            }
        }
    }
}

/// Fits `model` to `data`. Deterministic for a given `config.rng_seed`; the
/// only randomness is the batch order and the latent noise.
pub fn train(model: &mut Model, data: &[VoxelGrid], config: &TrainConfig) -> Result<TrainReport, VaeError> {
    config.validate()?;
    if data.is_empty() {
        return Err(VaeError::EmptyDataset);
    }
    let d = model.config().input_dim;
    if let Some(g) = data.iter().find(|g| g.dim() != d) {
        return Err(VaeError::DimensionMismatch {
            expected: d,
            got: g.dim(),
        });
    }
    for g in model.gamma.iter_mut() {
        *g = g.clamp(config.gamma_init, 1.0);
    }
    let j = model.latent_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut opt = OptState::new(config.optimizer, config.learning_rate, model.trainable_mask());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grads = vec![0.0; model.parameter_count()];
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut sums = [0.0; 4];
        let mut batches = 0usize;
        for (step, chunk) in order.chunks(config.batch_size).enumerate() {
            let grids: Vec<&VoxelGrid> = chunk.iter().map(|&i| &data[i]).collect();
            let x = model.grid_batch(&grids)?;
            let noise: Vec<f64> = (0..chunk.len() * j).map(|_| StandardNormal.sample(&mut rng)).collect();
            grads.fill(0.0);
            let b = batch_loss(model, &x, &noise, config.alpha, Some(&mut grads));
            if !b.loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(VaeError::Diverged { epoch, step });
            }
            opt.step(&mut model.params, &grads);
            model.gamma = soft_free_bits_step(&b.kl, &model.gamma, config.lambda_bits, config.gamma_rate, config.gamma_init).1;
            sums[0] += b.loss;
            sums[1] += b.recon;
            sums[2] += b.kl.iter().sum::<f64>();
            sums[3] += b.predicted_occupancy;
            batches += 1;
        }
        let nb = batches as f64;
        let stats = EpochStats {
            epoch,
            loss: sums[0] / nb,
            recon: sums[1] / nb,
            kl: sums[2] / nb,
            mean_gamma: model.gamma.iter().sum::<f64>() / j as f64,
            predicted_occupancy: sums[3] / nb,
        };
        log::info!(
            "epoch {epoch}: loss {:.4} recon {:.4} kl {:.4} occupancy {:.4}",
            stats.loss,
            stats.recon,
            stats.kl,
            stats.predicted_occupancy
        );
        history.push(stats);
    }
    recalibrate_batch_norm(model, data, config.batch_size)?;
    Ok(TrainReport { history })
}

/// Replaces the running statistics with population statistics over `data`,
/// gathered batch by batch under training-mode normalization.
pub(crate) fn recalibrate_batch_norm(model: &mut Model, data: &[VoxelGrid], batch_size: usize) -> Result<(), VaeError> {
    let mut acc: Vec<(Vec<f64>, Vec<f64>)> = vec![];
    let mut total = 0.0;
    for chunk in data.chunks(batch_size.max(2)) {
        let grids: Vec<&VoxelGrid> = chunk.iter().collect();
        let x = model.grid_batch(&grids)?;
        let w = chunk.len() as f64;
        let stats = model.bn_batch_stats(&x);
        if acc.is_empty() {
            acc = stats.iter().map(|(m, _)| (vec![0.0; m.len()], vec![0.0; m.len()])).collect();
        }
        for ((sm, sq), (m, v)) in acc.iter_mut().zip(&stats) {
            for c in 0..m.len() {
                sm[c] += w * m[c];
                sq[c] += w * (v[c] + m[c] * m[c]);
            }
        }
        total += w;
    }
    let pop: Vec<(Vec<f64>, Vec<f64>)> = acc
        .into_iter()
        .map(|(sm, sq)| {
            let mean: Vec<f64> = sm.iter().map(|s| s / total).collect();
            let var = sq.iter().zip(&mean).map(|(q, m)| (q / total - m * m).max(0.0)).collect();
            (mean, var)
        })
        .collect();
    model.set_running_stats(&pop);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vae::ModelConfig;

    fn tiny() -> Model {
        let cfg = ModelConfig {
            input_dim: 8,
            latent_dim: 4,
            channel_widths: vec![4, 8],
            stack_dense: true,
        };
        Model::new(cfg, 3, 0.01).unwrap()
    }

    fn shape() -> VoxelGrid {
        let mut g = VoxelGrid::empty(8);
        g.fill_box([1, 0, 1], [7, 2, 7], true);
        g.fill_box([3, 2, 3], [5, 6, 5], true);
        g
    }

    #[test]
    fn zero_noise_step_is_repeatable() {
        let m = tiny();
        let g = shape();
        let a = m.loss_and_gradient(&[&g, &g], &[0.0; 8], 10.0).unwrap();
        let b = m.loss_and_gradient(&[&g, &g], &[0.0; 8], 10.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn same_seed_same_history() {
        let data = vec![shape(); 6];
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 3,
            rng_seed: 11,
            ..TrainConfig::default()
        };
        let mut a = tiny();
        let mut b = tiny();
        let ha = train(&mut a, &data, &cfg).unwrap();
        let hb = train(&mut b, &data, &cfg).unwrap();
        assert_eq!(ha, hb);
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_input() {
        let mut m = tiny();
        assert!(matches!(train(&mut m, &[], &TrainConfig::default()), Err(VaeError::EmptyDataset)));
        assert!(train(&mut m, &[VoxelGrid::empty(4)], &TrainConfig::default()).is_err());
        let bad = TrainConfig {
            alpha: 0.5,
            ..TrainConfig::default()
        };
        assert!(train(&mut m, &[shape()], &bad).is_err());
    }

    #[test]
    fn gamma_stays_in_range_during_training() {
        let mut m = tiny();
        let cfg = TrainConfig {
            epochs: 4,
            batch_size: 2,
            ..TrainConfig::default()
        };
        train(&mut m, &vec![shape(); 4], &cfg).unwrap();
        assert!(m.gamma().iter().all(|&g| (cfg.gamma_init..=1.0).contains(&g)));
    }
}
