//! Adaptive heatmap regression machinery: the Gaussian-heatmap L2 loss with
//! sigma regularization, Nesterov-momentum updates of the covariance
//! parameters, and a plateau scheduler that multiplicatively shrinks sigmas.
//!
//! The loss is pinned as
//! `L = mean_c |pred_c - target_c|^2 / n_pixels + alpha * mean_c |sigma_c|^2`:
//! the regularizer pushes sigmas toward zero unless the data term resists,
//! which is what makes the heatmap spread shrink as predictions sharpen.
//! Rotation angles carry no regularization.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::encode::{CovarianceSpec, EncodeGrad, Heatmap};
use crate::error::{Error, Result};

/// Loss weighting: `alpha` scales the sigma regularization term.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossConfig {
    pub alpha: f64,
}

impl LossConfig {
    pub fn new(alpha: f64) -> Result<Self> {
        if !alpha.is_finite() || alpha < 0.0 {
            return Err(Error::InvalidParameter(
                "alpha must be finite and >= 0".into(),
            ));
        }
        Ok(LossConfig { alpha })
    }
}

fn check_same_shape(pred: &Heatmap, target: &Heatmap) -> Result<()> {
    if pred.n_channels() != target.n_channels() || pred.dims() != target.dims() {
        return Err(Error::ShapeMismatch(format!(
            "pred ({}x{:?}) vs target ({}x{:?})",
            pred.n_channels(),
            pred.dims(),
            target.n_channels(),
            target.dims()
        )));
    }
    Ok(())
}

/// Mean squared difference per channel (`|pred_c - target_c|^2 / n_pixels`).
pub fn per_channel_l2(pred: &Heatmap, target: &Heatmap) -> Result<Vec<f64>> {
    check_same_shape(pred, target)?;
    let n = pred.volume() as f64;
    Ok((0..pred.n_channels())
        .map(|c| {
            pred.channel(c)
                .iter()
                .zip(target.channel(c))
                .map(|(p, t)| (p - t) * (p - t))
                .sum::<f64>()
                / n
        })
        .collect())
}

/// Mean-per-pixel L2 loss plus sigma regularization.
pub fn heatmap_l2_loss(
    pred: &Heatmap,
    target: &Heatmap,
    cov: &CovarianceSpec,
    cfg: &LossConfig,
) -> Result<f64> {
    let channel_losses = per_channel_l2(pred, target)?;
    if pred.n_channels() != cov.n_classes() {
        return Err(Error::ShapeMismatch(format!(
            "{} channels vs {} covariance classes",
            pred.n_channels(),
            cov.n_classes()
        )));
    }
    let c = cov.n_classes() as f64;
    let data: f64 = channel_losses.iter().sum::<f64>() / c;
    let reg: f64 = cov.sigmas_flat().iter().map(|s| s * s).sum::<f64>() / c;
    let loss = data + cfg.alpha * reg;
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    Ok(loss)
}

/// Gradients of the loss with respect to the covariance parameters,
/// `(C, D)` sigmas and `(C, n_angles)` rotations, row-major.
#[derive(Debug, Clone)]
pub struct CovGrads {
    pub d_sigma: Vec<f64>,
    pub d_rotation: Vec<f64>,
}

/// Chain the loss through the encoded target: `target` must come from
/// [`crate::encode::encode_grad`] under the same `cov`.
///
/// `dL/dsigma = sum_x dL/dtarget(x) * dtarget(x)/dsigma + 2 alpha sigma / C`
/// with `dL/dtarget(x) = 2 (target(x) - pred(x)) / (n_pixels * C)`.
pub fn loss_grad_sigma(
    pred: &Heatmap,
    target: &EncodeGrad,
    cov: &CovarianceSpec,
    cfg: &LossConfig,
) -> Result<CovGrads> {
    check_same_shape(pred, &target.heatmap)?;
    if pred.n_channels() != cov.n_classes() {
        return Err(Error::ShapeMismatch(format!(
            "{} channels vs {} covariance classes",
            pred.n_channels(),
            cov.n_classes()
        )));
    }
    let n = pred.volume() as f64;
    let c_count = cov.n_classes() as f64;
    let dim = cov.dim();
    let na = cov.n_angles();
    let mut grads = CovGrads {
        d_sigma: vec![0.0; cov.n_classes() * dim],
        d_rotation: vec![0.0; cov.n_classes() * na],
    };
    for c in 0..cov.n_classes() {
        let pred_c = pred.channel(c);
        let target_c = target.heatmap.channel(c);
        for k in 0..dim {
            let dh = target.d_sigma(c, k);
            let mut acc = 0.0;
            for x in 0..pred_c.len() {
                acc += 2.0 * (target_c[x] - pred_c[x]) / (n * c_count) * dh[x];
            }
            grads.d_sigma[c * dim + k] = acc + 2.0 * cfg.alpha * cov.sigma(c)[k] / c_count;
        }
        for j in 0..na {
            let dh = target.d_rotation(c, j);
            let mut acc = 0.0;
            for x in 0..pred_c.len() {
                acc += 2.0 * (target_c[x] - pred_c[x]) / (n * c_count) * dh[x];
            }
            grads.d_rotation[c * na + j] = acc;
        }
    }
    if !grads
        .d_sigma
        .iter()
        .chain(&grads.d_rotation)
        .all(|g| g.is_finite())
    {
        return Err(Error::NonFinite("covariance gradient".into()));
    }
    Ok(grads)
}

/// SGD with Nesterov momentum over the covariance parameters. Sigmas are
/// clamped to `sigma_min` after every step.
#[derive(Debug, Clone)]
pub struct NesterovSgd {
    lr: f64,
    momentum: f64,
    sigma_min: f64,
    v_sigma: Vec<f64>,
    v_rotation: Vec<f64>,
}

impl NesterovSgd {
    pub fn new(lr: f64, momentum: f64, sigma_min: f64) -> Result<Self> {
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(Error::InvalidParameter("learning rate must be > 0".into()));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidParameter("momentum must be in [0, 1)".into()));
        }
        if !(sigma_min > 0.0) {
            return Err(Error::InvalidParameter("sigma_min must be > 0".into()));
        }
        Ok(NesterovSgd {
            lr,
            momentum,
            sigma_min,
            v_sigma: Vec::new(),
            v_rotation: Vec::new(),
        })
    }

    /// One update: `b <- m b + g`, effective gradient `g + m b`, parameters
    /// moved by `-lr`. Non-finite gradients are rejected with the velocity
    /// state untouched.
    pub fn step(&mut self, cov: &CovarianceSpec, grads: &CovGrads) -> Result<CovarianceSpec> {
        if grads.d_sigma.len() != cov.sigmas_flat().len()
            || grads.d_rotation.len() != cov.rotation_flat().len()
        {
            return Err(Error::ShapeMismatch(
                "gradient shape differs from covariance".into(),
            ));
        }
        if !grads
            .d_sigma
            .iter()
            .chain(&grads.d_rotation)
            .all(|g| g.is_finite())
        {
            return Err(Error::NonFinite("gradient passed to optimizer".into()));
        }
        if self.v_sigma.is_empty() {
            self.v_sigma = vec![0.0; grads.d_sigma.len()];
            self.v_rotation = vec![0.0; grads.d_rotation.len()];
        }
        let mut sigmas = cov.sigmas_flat().to_vec();
        let mut rotation = cov.rotation_flat().to_vec();
        for (i, g) in grads.d_sigma.iter().enumerate() {
            self.v_sigma[i] = self.momentum * self.v_sigma[i] + g;
            let eff = g + self.momentum * self.v_sigma[i];
            sigmas[i] = (sigmas[i] - self.lr * eff).max(self.sigma_min);
        }
        for (i, g) in grads.d_rotation.iter().enumerate() {
            self.v_rotation[i] = self.momentum * self.v_rotation[i] + g;
            let eff = g + self.momentum * self.v_rotation[i];
            rotation[i] -= self.lr * eff;
        }
        CovarianceSpec::new(cov.n_classes(), cov.dim(), sigmas, rotation)
    }
}

/// Plateau scheduler configuration: once a per-landmark loss window of
/// length `window` is full and the variance of its recent half falls below
/// `threshold` times the variance of its older half, that landmark's sigmas
/// are multiplied by `decay` (never below `sigma_min`).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct SchedulerConfig {
    pub window: usize,
    pub decay: f64,
    pub sigma_min: f64,
    pub threshold: f64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig {
            window: 10,
            decay: 0.9,
            sigma_min: 0.5,
            threshold: 0.5,
        }
    }
}

impl SchedulerConfig {
    fn validate(&self) -> Result<()> {
        if self.window < 2 {
            return Err(Error::InvalidParameter(
                "scheduler window must be >= 2".into(),
            ));
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(Error::InvalidParameter("decay must be in (0, 1)".into()));
        }
        if !(self.sigma_min > 0.0) {
            return Err(Error::InvalidParameter("sigma_min must be > 0".into()));
        }
        if !self.threshold.is_finite() || self.threshold < 0.0 {
            return Err(Error::InvalidParameter(
                "threshold must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Ring buffers of recent per-landmark losses plus the trigger config.
#[derive(Debug, Clone)]
pub struct SchedulerState {
    cfg: SchedulerConfig,
    buffers: Vec<VecDeque<f64>>,
}

impl SchedulerState {
    pub fn new(cfg: SchedulerConfig, n_classes: usize) -> Result<Self> {
        cfg.validate()?;
        Ok(SchedulerState {
            cfg,
            buffers: vec![VecDeque::new(); n_classes],
        })
    }

    pub fn config(&self) -> &SchedulerConfig {
        &self.cfg
    }
}

fn variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

/// Append one per-landmark loss observation and decay sigmas of landmarks
/// whose loss has plateaued. Sigmas never increase.
pub fn adaloss_update(
    state: &mut SchedulerState,
    losses: &[f64],
    cov: &CovarianceSpec,
) -> Result<CovarianceSpec> {
    if losses.len() != state.buffers.len() || losses.len() != cov.n_classes() {
        return Err(Error::ShapeMismatch(format!(
            "{} losses for {} classes",
            losses.len(),
            cov.n_classes()
        )));
    }
    if !losses.iter().all(|l| l.is_finite()) {
        return Err(Error::NonFinite("scheduler loss".into()));
    }
    let cfg = state.cfg;
    let dim = cov.dim();
    let mut sigmas = cov.sigmas_flat().to_vec();
    for (c, &loss) in losses.iter().enumerate() {
        let buf = &mut state.buffers[c];
        buf.push_back(loss);
        if buf.len() > cfg.window {
            buf.pop_front();
        }
        if buf.len() < cfg.window {
            continue;
        }
        let half = cfg.window / 2;
        let series: Vec<f64> = buf.iter().copied().collect();
        let var_old = variance(&series[..half]);
        let var_recent = variance(&series[series.len() - half..]);
        let plateaued = if var_old == 0.0 {
            var_recent == 0.0
        } else {
            var_recent / var_old < cfg.threshold
        };
        if plateaued {
            for k in 0..dim {
                let s = &mut sigmas[c * dim + k];
                *s = (cfg.decay * *s).max(cfg.sigma_min);
            }
        }
    }
    CovarianceSpec::new(
        cov.n_classes(),
        cov.dim(),
        sigmas,
        cov.rotation_flat().to_vec(),
    )
}
