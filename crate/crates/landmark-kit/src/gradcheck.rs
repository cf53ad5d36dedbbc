//! Finite-difference verification of every analytic derivative in the
//! crate: encoder parameter gradients, loss gradients, and the weighted-mean
//! decode Jacobian.
//!
//! Each suite draws random configurations, compares analytic derivatives
//! against central differences, and reports the worst relative error
//! `|analytic - fd| / max(|analytic|, |fd|, 1e-3)`. The expected ceilings
//! are [`ENCODE_GRAD_TOL`], [`LOSS_GRAD_TOL`] and [`JACOBIAN_TOL`].

use crate::adaptive::{heatmap_l2_loss, loss_grad_sigma, LossConfig};
use crate::decode::{decode_weighted_mean, weighted_mean_jacobian, Activation, OutputUnits};
use crate::encode::{encode_grad, encode_kind, n_angles, CovarianceSpec, EncodingKind, Heatmap};
use crate::error::Result;
use crate::geometry::LandmarkSet;
use crate::rng::SmallRng;

pub const ENCODE_GRAD_TOL: f64 = 1e-5;
pub const LOSS_GRAD_TOL: f64 = 1e-5;
pub const JACOBIAN_TOL: f64 = 1e-4;

/// Worst relative error observed by one suite.
#[derive(Debug, Clone, Copy)]
pub struct SuiteResult {
    pub max_rel_err: f64,
    pub trials: usize,
}

impl SuiteResult {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err.is_finite() && self.max_rel_err < tol
    }
}

/// Results of all three suites.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub encode: SuiteResult,
    pub loss: SuiteResult,
    pub jacobian: SuiteResult,
}

impl GradCheckReport {
    pub fn all_pass(&self) -> bool {
        self.encode.passes(ENCODE_GRAD_TOL)
            && self.loss.passes(LOSS_GRAD_TOL)
            && self.jacobian.passes(JACOBIAN_TOL)
    }
}

/// Central difference `(f(x+h) - f(x-h)) / 2h`.
pub fn central_diff(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

fn rel_err(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-3)
}

struct RandomConfig {
    lms: LandmarkSet,
    cov: CovarianceSpec,
    size: Vec<usize>,
}

fn random_config(rng: &mut SmallRng, trial: usize) -> RandomConfig {
    // alternate 2-d and 3-d trials
    let dim = if trial % 3 == 2 { 3 } else { 2 };
    let n_classes = 1 + rng.below(2);
    let size: Vec<usize> = match dim {
        2 => vec![24 + rng.below(17), 24 + rng.below(17)],
        _ => vec![12 + rng.below(4), 12 + rng.below(4), 12 + rng.below(4)],
    };
    let sigmas: Vec<f64> = (0..n_classes * dim)
        .map(|_| rng.uniform_in(1.0, 4.0))
        .collect();
    let rotation: Vec<f64> = (0..n_classes * n_angles(dim))
        .map(|_| rng.uniform_in(-std::f64::consts::PI, std::f64::consts::PI))
        .collect();
    let cov = CovarianceSpec::new(n_classes, dim, sigmas, rotation).expect("valid random cov");
    let class_names = (0..n_classes).map(|c| format!("class_{c}")).collect();
    let mut lms = LandmarkSet::new_missing(1, n_classes, 1, dim, class_names).unwrap();
    for c in 0..n_classes {
        let p: Vec<f64> = size
            .iter()
            .map(|&s| rng.uniform_in(0.25 * s as f64, 0.75 * s as f64))
            .collect();
        lms.set(0, c, 0, &p).unwrap();
    }
    RandomConfig { lms, cov, size }
}

fn perturbed_cov(
    cov: &CovarianceSpec,
    sigma_idx: Option<usize>,
    rot_idx: Option<usize>,
    delta: f64,
) -> CovarianceSpec {
    let mut sigmas = cov.sigmas_flat().to_vec();
    let mut rotation = cov.rotation_flat().to_vec();
    if let Some(i) = sigma_idx {
        sigmas[i] += delta;
    }
    if let Some(i) = rot_idx {
        rotation[i] += delta;
    }
    CovarianceSpec::new(cov.n_classes(), cov.dim(), sigmas, rotation).expect("perturbed cov valid")
}

/// Analytic encoder gradients vs central differences of re-encoded
/// heatmaps, at step `1e-4 * sigma` (sigmas) and `1e-4` rad (rotations).
pub fn check_encode_grad(trials: usize, seed: u64) -> Result<SuiteResult> {
    let mut rng = SmallRng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for trial in 0..trials {
        let cfg = random_config(&mut rng, trial);
        let grad = encode_grad(&cfg.lms, 0, &cfg.cov, &cfg.size)?;
        let dim = cfg.cov.dim();
        let vol: usize = cfg.size.iter().product();
        for c in 0..cfg.cov.n_classes() {
            for k in 0..dim {
                let h = 1e-4 * cfg.cov.sigma(c)[k];
                let idx = c * dim + k;
                let plus = encode_kind(
                    &cfg.lms,
                    0,
                    &perturbed_cov(&cfg.cov, Some(idx), None, h),
                    EncodingKind::Gaussian,
                    &cfg.size,
                )?;
                let minus = encode_kind(
                    &cfg.lms,
                    0,
                    &perturbed_cov(&cfg.cov, Some(idx), None, -h),
                    EncodingKind::Gaussian,
                    &cfg.size,
                )?;
                let analytic = grad.d_sigma(c, k);
                for x in 0..vol {
                    let fd = (plus.channel(c)[x] - minus.channel(c)[x]) / (2.0 * h);
                    worst = worst.max(rel_err(analytic[x], fd));
                }
            }
            for j in 0..cfg.cov.n_angles() {
                let h = 1e-4;
                let idx = c * cfg.cov.n_angles() + j;
                let plus = encode_kind(
                    &cfg.lms,
                    0,
                    &perturbed_cov(&cfg.cov, None, Some(idx), h),
                    EncodingKind::Gaussian,
                    &cfg.size,
                )?;
                let minus = encode_kind(
                    &cfg.lms,
                    0,
                    &perturbed_cov(&cfg.cov, None, Some(idx), -h),
                    EncodingKind::Gaussian,
                    &cfg.size,
                )?;
                let analytic = grad.d_rotation(c, j);
                for x in 0..vol {
                    let fd = (plus.channel(c)[x] - minus.channel(c)[x]) / (2.0 * h);
                    worst = worst.max(rel_err(analytic[x], fd));
                }
            }
        }
    }
    Ok(SuiteResult {
        max_rel_err: worst,
        trials,
    })
}

/// Analytic loss gradients (chained through the encoder) vs central
/// differences of the full loss under perturbed covariance parameters.
pub fn check_loss_grad(trials: usize, seed: u64) -> Result<SuiteResult> {
    let mut rng = SmallRng::seed_from_u64(seed.wrapping_add(0x10));
    let mut worst = 0.0f64;
    for trial in 0..trials {
        let cfg = random_config(&mut rng, trial);
        // prediction: a displaced, differently-spread blob set
        let spread = rng.uniform_in(0.6, 1.5);
        let pred_cov = CovarianceSpec::new(
            cfg.cov.n_classes(),
            cfg.cov.dim(),
            cfg.cov.sigmas_flat().iter().map(|s| s * spread).collect(),
            cfg.cov.rotation_flat().to_vec(),
        )?;
        let mut pred_lms = cfg.lms.clone();
        for c in 0..pred_lms.n_classes() {
            let p: Vec<f64> = cfg
                .lms
                .get(0, c, 0)
                .unwrap()
                .iter()
                .map(|v| v + rng.uniform_in(-2.0, 2.0))
                .collect();
            pred_lms.set(0, c, 0, &p).unwrap();
        }
        let pred = encode_kind(&pred_lms, 0, &pred_cov, EncodingKind::Gaussian, &cfg.size)?;
        let loss_cfg = LossConfig::new(rng.uniform_in(0.0, 5.0))?;

        let target = encode_grad(&cfg.lms, 0, &cfg.cov, &cfg.size)?;
        let grads = loss_grad_sigma(&pred, &target, &cfg.cov, &loss_cfg)?;

        let loss_at = |cov: &CovarianceSpec| -> f64 {
            let t = encode_kind(&cfg.lms, 0, cov, EncodingKind::Gaussian, &cfg.size).unwrap();
            heatmap_l2_loss(&pred, &t, cov, &loss_cfg).unwrap()
        };
        let dim = cfg.cov.dim();
        for c in 0..cfg.cov.n_classes() {
            for k in 0..dim {
                let idx = c * dim + k;
                let h = 1e-4 * cfg.cov.sigma(c)[k];
                let fd = (loss_at(&perturbed_cov(&cfg.cov, Some(idx), None, h))
                    - loss_at(&perturbed_cov(&cfg.cov, Some(idx), None, -h)))
                    / (2.0 * h);
                worst = worst.max(rel_err(grads.d_sigma[idx], fd));
            }
            for j in 0..cfg.cov.n_angles() {
                let idx = c * cfg.cov.n_angles() + j;
                let h = 1e-4;
                let fd = (loss_at(&perturbed_cov(&cfg.cov, None, Some(idx), h))
                    - loss_at(&perturbed_cov(&cfg.cov, None, Some(idx), -h)))
                    / (2.0 * h);
                worst = worst.max(rel_err(grads.d_rotation[idx], fd));
            }
        }
    }
    Ok(SuiteResult {
        max_rel_err: worst,
        trials,
    })
}

/// Analytic weighted-mean Jacobian vs central differences over every pixel
/// of small random heatmaps, softmax and identity activations.
pub fn check_soft_argmax_jacobian(trials: usize, seed: u64) -> Result<SuiteResult> {
    let mut rng = SmallRng::seed_from_u64(seed.wrapping_add(0x20));
    let mut worst = 0.0f64;
    for trial in 0..trials {
        let dims = [5 + rng.below(4), 5 + rng.below(4)];
        let vol = dims[0] * dims[1];
        let values: Vec<f64> = (0..vol).map(|_| rng.uniform_in(0.05, 2.0)).collect();
        let h = Heatmap::from_values(1, &dims, values.clone())?;
        let act = if trial % 2 == 0 {
            Activation::Softmax {
                temperature: rng.uniform_in(0.3, 2.0),
            }
        } else {
            Activation::IdentityNormalize
        };
        let jac = weighted_mean_jacobian(&h, &act, OutputUnits::Pixels)?;
        let eps = 1e-6;
        for x in 0..vol {
            let mut plus = values.clone();
            plus[x] += eps;
            let mut minus = values.clone();
            minus[x] -= eps;
            let yp = decode_weighted_mean(
                &Heatmap::from_values(1, &dims, plus)?,
                &act,
                OutputUnits::Pixels,
            )?;
            let ym = decode_weighted_mean(
                &Heatmap::from_values(1, &dims, minus)?,
                &act,
                OutputUnits::Pixels,
            )?;
            for d in 0..2 {
                let fd = (yp.get(0, 0, 0).unwrap()[d] - ym.get(0, 0, 0).unwrap()[d]) / (2.0 * eps);
                worst = worst.max(rel_err(jac[d * vol + x], fd));
            }
        }
    }
    Ok(SuiteResult {
        max_rel_err: worst,
        trials,
    })
}

/// Run all three suites.
pub fn run_all(trials: usize, seed: u64) -> Result<GradCheckReport> {
    Ok(GradCheckReport {
        encode: check_encode_grad(trials, seed)?,
        loss: check_loss_grad(trials, seed)?,
        jacobian: check_soft_argmax_jacobian(trials, seed)?,
    })
}
