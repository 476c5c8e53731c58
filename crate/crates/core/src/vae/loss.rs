use super::{LatentCode, VaeError};

/// Probabilities are clipped to `[CLIP_EPS, 1 - CLIP_EPS]` before the logarithm.
pub const CLIP_EPS: f64 = 1e-7;

/// Log-variances are clamped to this range when sampling.
pub const LOGVAR_MIN: f64 = -30.0;
pub const LOGVAR_MAX: f64 = 20.0;

/// Weighted binary cross-entropy summed over voxels. `alpha` scales the
/// occupied-voxel term; `alpha = 1` is the plain cross-entropy.
pub fn recon_loss(x: &[f64], x_prob: &[f64], alpha: f64) -> Result<f64, VaeError> {
    if x.len() != x_prob.len() {
        return Err(VaeError::LengthMismatch {
            expected: x.len(),
            got: x_prob.len(),
        });
    }
    Ok(x.iter()
        .zip(x_prob)
        .map(|(&t, &p)| voxel_bce(t, p, alpha))
        .sum())
}

#[inline]
pub(crate) fn voxel_bce(t: f64, p: f64, alpha: f64) -> f64 {
    let p = p.clamp(CLIP_EPS, 1.0 - CLIP_EPS);
    -(alpha * t * p.ln() + (1.0 - t) * (1.0 - p).ln())
}

/// Per-component KL divergence of the posterior from the unit Gaussian.
pub fn kl_components(code: &LatentCode) -> Result<Vec<f64>, VaeError> {
    code.validate()?;
    Ok(code
        .means
        .iter()
        .zip(&code.log_variances)
        .map(|(&m, &lv)| kl_unit(m, lv))
        .collect())
}

#[inline]
pub(crate) fn kl_unit(mean: f64, log_var: f64) -> f64 {
    // exp_m1 keeps the result non-negative and exact near the prior
    0.5 * (mean * mean + (log_var.exp_m1() - log_var))
}

/// Regularizer term `sum_j gamma_j KL_j` and the adjusted weights: a
/// component below the `lambda_bits` target has its weight shrunk by `rate`
/// (never under `gamma_floor`), otherwise grown by `rate` (never over 1).
pub fn soft_free_bits_step(
    kl: &[f64],
    gamma: &[f64],
    lambda_bits: f64,
    rate: f64,
    gamma_floor: f64,
) -> (f64, Vec<f64>) {
    let term = kl.iter().zip(gamma).map(|(k, g)| k * g).sum();
    let next = kl
        .iter()
        .zip(gamma)
        .map(|(&k, &g)| {
            if k < lambda_bits {
                (g * (1.0 - rate)).max(gamma_floor)
            } else {
                (g * (1.0 + rate)).min(1.0)
            }
        })
        .collect();
    (term, next)
}

/// `z = mean + sigma * noise` with the log-variance clamped for stability.
pub fn reparameterize(code: &LatentCode, noise: &[f64]) -> Result<Vec<f64>, VaeError> {
    if noise.len() != code.len() || code.log_variances.len() != code.len() {
        return Err(VaeError::LengthMismatch {
            expected: code.len(),
            got: noise.len(),
        });
    }
    Ok(code
        .means
        .iter()
        .zip(&code.log_variances)
        .zip(noise)
        .map(|((&m, &lv), &e)| m + sigma(lv) * e)
        .collect())
}

#[inline]
pub(crate) fn sigma(log_var: f64) -> f64 {
    (0.5 * log_var.clamp(LOGVAR_MIN, LOGVAR_MAX)).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{RngExt, SeedableRng};
    use rand_distr::StandardNormal;

    #[test]
    fn recon_single_voxel_values() {
        let ln2 = std::f64::consts::LN_2;
        assert!((recon_loss(&[1.0], &[0.5], 10.0).unwrap() - 10.0 * ln2).abs() < 1e-12);
        for alpha in [1.0, 3.0, 10.0] {
            assert!((recon_loss(&[0.0], &[0.5], alpha).unwrap() - ln2).abs() < 1e-12);
        }
    }

    #[test]
    fn recon_perfect_reconstruction_is_near_zero() {
        let x = [1.0, 0.0, 1.0, 0.0];
        let bound = 4.0 * 11.0 * -(1.0 - CLIP_EPS).ln();
        assert!(recon_loss(&x, &x, 10.0).unwrap() <= bound + 1e-15);
        assert!(recon_loss(&x, &[0.0; 3], 1.0).is_err());
    }

    #[test]
    fn recon_matches_termwise_cross_entropy() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let n = rng.random_range(1..50);
            let x: Vec<f64> = (0..n).map(|_| rng.random_bool(0.3) as u8 as f64).collect();
            let p: Vec<f64> = (0..n).map(|_| rng.random_range(0.001..0.999)).collect();
            let mut oracle = 0.0;
            for i in 0..n {
                oracle += if x[i] == 1.0 { -p[i].ln() } else { -(1.0 - p[i]).ln() };
            }
            assert!((recon_loss(&x, &p, 1.0).unwrap() - oracle).abs() < 1e-9);
        }
    }

    #[test]
    fn kl_closed_forms() {
        let kl = |m: f64, v: f64| kl_components(&LatentCode::new(vec![m], vec![v.ln()]).unwrap()).unwrap()[0];
        assert_eq!(kl(0.0, 1.0), 0.0);
        assert!((kl(1.0, 1.0) - 0.5).abs() < 1e-12);
        let e = std::f64::consts::E;
        assert!((kl(0.0, e) - (e - 2.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn kl_is_nonnegative_and_zero_only_at_prior() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let m: f64 = rng.random_range(-3.0..3.0);
            let lv: f64 = rng.random_range(-5.0..5.0);
            let k = kl_unit(m, lv);
            assert!(k > 0.0, "{m} {lv} {k}");
        }
        assert_eq!(kl_unit(0.0, 0.0), 0.0);
    }

    #[test]
    fn free_bits_update_values() {
        let (term, g) = soft_free_bits_step(&[0.2], &[0.01], 0.1, 0.05, 0.01);
        assert!((g[0] - 0.0105).abs() < 1e-15);
        assert!((term - 0.002).abs() < 1e-15);
        let (_, g) = soft_free_bits_step(&[0.5, 0.3], &[1.0, 1.0], 0.1, 0.05, 0.01);
        assert_eq!(g, vec![1.0, 1.0]);
        let (_, g) = soft_free_bits_step(&[0.01, 0.0], &[0.5, 0.8], 0.1, 0.05, 0.01);
        assert!(g[0] < 0.5 && g[1] < 0.8);
    }

    proptest! {
        #[test]
        fn free_bits_stay_in_range(
            steps in proptest::collection::vec(proptest::collection::vec(0.0f64..0.3, 4), 1..60),
            floor in 0.001f64..1.0,
            rate in 0.0f64..0.9,
        ) {
            let mut gamma = vec![floor; 4];
            for kl in steps {
                gamma = soft_free_bits_step(&kl, &gamma, 0.1, rate, floor).1;
                for &g in &gamma {
                    prop_assert!(g >= floor && g <= 1.0);
                }
            }
        }
    }

    #[test]
    fn reparameterize_contract() {
        let code = LatentCode::new(vec![0.5, -1.0], vec![0.3, 1.0]).unwrap();
        assert_eq!(reparameterize(&code, &[0.0, 0.0]).unwrap(), code.means);
        let collapsed = LatentCode::new(vec![0.5, -1.0], vec![-1e6, -1e6]).unwrap();
        let z = reparameterize(&collapsed, &[3.0, -3.0]).unwrap();
        assert!((z[0] - 0.5).abs() < 1e-5 && (z[1] + 1.0).abs() < 1e-5);
        assert!(reparameterize(&code, &[0.0]).is_err());
    }

    #[test]
    fn reparameterize_monte_carlo_mean() {
        let code = LatentCode::new(vec![1.5, -0.5], vec![0.0, 2.0f64.ln()]).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let n = 100_000;
        let mut sum = [0.0; 2];
        for _ in 0..n {
            let noise: Vec<f64> = (0..2).map(|_| rng.sample(StandardNormal)).collect();
            let z = reparameterize(&code, &noise).unwrap();
            sum[0] += z[0];
            sum[1] += z[1];
        }
        for j in 0..2 {
            let sd = code.log_variances[j].exp().sqrt();
            let tol = 3.0 * sd / (n as f64).sqrt();
            assert!((sum[j] / n as f64 - code.means[j]).abs() < tol);
        }
    }
}
