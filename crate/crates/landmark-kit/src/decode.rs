//! Recover continuous landmark coordinates from predicted heatmaps.
//!
//! Three decoders are provided: plain argmax, the weighted spatial mean of
//! an activated heatmap, and its local windowed variant (argmax first, then
//! the weighted mean over a window centered there). The weighted mean with a
//! softmax activation is the soft-argmax decoder; its Jacobian with respect
//! to the heatmap is analytic (see [`weighted_mean_jacobian`]), which is the
//! contract differentiable-decoding pipelines rely on.
//!
//! Activations normalize the heatmap into a probability vector. Local
//! windows are clipped at grid borders and renormalized, never padded; for
//! all three activations, restricting the activation to the window is
//! exactly equivalent to activating the full grid and renormalizing the
//! clipped window.

use crate::encode::{GridWalk, Heatmap};
use crate::error::{Error, Result};
use crate::geometry::LandmarkSet;

/// Heatmap-to-probability post-processing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    /// Divide by the sum. Requires nonnegative values with a positive sum.
    IdentityNormalize,
    /// Clamp negatives to zero, then divide by the sum.
    ReluNormalize,
    /// `exp(v / temperature)`, normalized. Never degenerates.
    Softmax { temperature: f64 },
}

impl Activation {
    pub fn softmax(temperature: f64) -> Result<Self> {
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(Error::InvalidParameter(
                "softmax temperature must be > 0".into(),
            ));
        }
        Ok(Activation::Softmax { temperature })
    }

    /// Probability weights for one channel (sums to 1).
    pub(crate) fn weights(&self, values: &[f64], channel: usize) -> Result<Vec<f64>> {
        match *self {
            Activation::IdentityNormalize => {
                if values.iter().any(|v| *v < 0.0) {
                    return Err(Error::DegenerateInput {
                        channel,
                        reason: "identity normalization needs nonnegative values".into(),
                    });
                }
                let sum: f64 = values.iter().sum();
                if sum <= 0.0 {
                    return Err(Error::DegenerateInput {
                        channel,
                        reason: "all values are zero".into(),
                    });
                }
                Ok(values.iter().map(|v| v / sum).collect())
            }
            Activation::ReluNormalize => {
                let mut w: Vec<f64> = values.iter().map(|v| v.max(0.0)).collect();
                let sum: f64 = w.iter().sum();
                if sum <= 0.0 {
                    return Err(Error::DegenerateInput {
                        channel,
                        reason: "all values are <= 0".into(),
                    });
                }
                for v in &mut w {
                    *v /= sum;
                }
                Ok(w)
            }
            Activation::Softmax { temperature } => {
                let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut w: Vec<f64> = values
                    .iter()
                    .map(|v| ((v - max) / temperature).exp())
                    .collect();
                let sum: f64 = w.iter().sum();
                for v in &mut w {
                    *v /= sum;
                }
                Ok(w)
            }
        }
    }
}

/// Coordinate units of decoded landmarks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputUnits {
    /// Continuous pixel coordinates (default; what the metrics consume).
    Pixels,
    /// Pixel coordinates divided by the grid extent per dimension.
    Normalized,
}

/// Decoding strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMethod {
    Argmax,
    WeightedMean,
    LocalWeightedMean,
}

/// Full decoder configuration.
#[derive(Debug, Clone)]
pub struct DecodeConfig {
    pub method: DecodeMethod,
    pub activation: Activation,
    /// Odd window extent per dimension (local method only).
    pub window: Vec<usize>,
    pub output_units: OutputUnits,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            method: DecodeMethod::LocalWeightedMean,
            activation: Activation::Softmax { temperature: 1.0 },
            window: vec![3, 3],
            output_units: OutputUnits::Pixels,
        }
    }
}

fn class_names(n: usize) -> Vec<String> {
    (0..n).map(|c| format!("class_{c}")).collect()
}

fn to_units(coord: &mut [f64], dims: &[usize], units: OutputUnits) {
    if units == OutputUnits::Normalized {
        for (v, &s) in coord.iter_mut().zip(dims) {
            *v /= s as f64;
        }
    }
}

/// Argmax decode result: integer peak coordinates plus a per-channel flag
/// marking channels whose maximum was not unique.
#[derive(Debug, Clone)]
pub struct ArgmaxDecode {
    pub landmarks: LandmarkSet,
    pub ties: Vec<bool>,
}

/// Integer coordinates of each channel's maximum; ties break to the
/// lexicographically smallest index. An all-equal channel returns the
/// origin with its tie flag set.
pub fn decode_argmax(h: &Heatmap) -> Result<ArgmaxDecode> {
    decode_argmax_units(h, OutputUnits::Pixels)
}

pub fn decode_argmax_units(h: &Heatmap, units: OutputUnits) -> Result<ArgmaxDecode> {
    let mut lms = LandmarkSet::new_missing(
        1,
        h.n_channels(),
        1,
        h.spatial_dim(),
        class_names(h.n_channels()),
    )?;
    let mut ties = Vec::with_capacity(h.n_channels());
    for c in 0..h.n_channels() {
        let (flat, tie) = channel_argmax(h.channel(c));
        ties.push(tie);
        let mut coord: Vec<f64> = h.unravel(flat).iter().map(|&i| i as f64).collect();
        to_units(&mut coord, h.dims(), units);
        lms.set(0, c, 0, &coord)?;
    }
    Ok(ArgmaxDecode {
        landmarks: lms,
        ties,
    })
}

/// First maximum in scan order (= lexicographically smallest index) and
/// whether the maximum value occurs more than once.
fn channel_argmax(values: &[f64]) -> (usize, bool) {
    let mut best = 0usize;
    let mut best_v = values[0];
    let mut tie = false;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > best_v {
            best = i;
            best_v = v;
            tie = false;
        } else if v == best_v {
            tie = true;
        }
    }
    (best, tie)
}

/// Weighted spatial mean over the activated heatmap.
///
/// In pixel units this is `sum_x x * act(H)(x)` per dimension; normalized
/// units divide the result by the grid extent, so the two differ exactly by
/// that factor.
pub fn decode_weighted_mean(
    h: &Heatmap,
    act: &Activation,
    units: OutputUnits,
) -> Result<LandmarkSet> {
    let mut lms = LandmarkSet::new_missing(
        1,
        h.n_channels(),
        1,
        h.spatial_dim(),
        class_names(h.n_channels()),
    )?;
    for c in 0..h.n_channels() {
        let w = act.weights(h.channel(c), c)?;
        let mut coord = vec![0.0; h.spatial_dim()];
        GridWalk::full(h.dims()).for_each(|flat, xyz| {
            for (acc, &x) in coord.iter_mut().zip(xyz) {
                *acc += w[flat] * x;
            }
        });
        to_units(&mut coord, h.dims(), units);
        lms.set(0, c, 0, &coord)?;
    }
    Ok(lms)
}

fn check_window(window: &[usize], dims: &[usize]) -> Result<()> {
    if window.len() != dims.len() {
        return Err(Error::DimensionMismatch {
            expected: dims.len(),
            got: window.len(),
        });
    }
    for (d, (&w, &s)) in window.iter().zip(dims).enumerate() {
        if w == 0 || w % 2 == 0 {
            return Err(Error::InvalidParameter(format!(
                "window must be odd and >= 1, got {w} on dim {d}"
            )));
        }
        if w > s {
            return Err(Error::InvalidParameter(format!(
                "window {w} exceeds grid extent {s} on dim {d}"
            )));
        }
    }
    Ok(())
}

/// Weighted mean restricted to a window around one center pixel, clipped at
/// the borders and renormalized. Returns pixel-unit coordinates.
fn windowed_mean(
    h: &Heatmap,
    channel: usize,
    center: &[usize],
    window: &[usize],
    act: &Activation,
) -> Result<Vec<f64>> {
    let center_f: Vec<f64> = center.iter().map(|&v| v as f64).collect();
    let half: Vec<f64> = window.iter().map(|&w| ((w - 1) / 2) as f64).collect();
    let walk = GridWalk::around(h.dims(), &center_f, &half);
    let values = h.channel(channel);
    let mut local = Vec::new();
    let mut coords = Vec::new();
    walk.for_each(|flat, xyz| {
        local.push(values[flat]);
        coords.push(xyz.to_vec());
    });
    let w = act.weights(&local, channel)?;
    let mut coord = vec![0.0; h.spatial_dim()];
    for (wi, xyz) in w.iter().zip(&coords) {
        for (acc, &x) in coord.iter_mut().zip(xyz) {
            *acc += wi * x;
        }
    }
    Ok(coord)
}

/// Locate the argmax, then take the weighted mean over a window centered
/// there. Window extents are odd, clipped at borders with renormalization.
pub fn decode_local_weighted_mean(
    h: &Heatmap,
    act: &Activation,
    window: &[usize],
    units: OutputUnits,
) -> Result<LandmarkSet> {
    check_window(window, h.dims())?;
    let mut lms = LandmarkSet::new_missing(
        1,
        h.n_channels(),
        1,
        h.spatial_dim(),
        class_names(h.n_channels()),
    )?;
    for c in 0..h.n_channels() {
        let (flat, _) = channel_argmax(h.channel(c));
        let center = h.unravel(flat);
        let mut coord = windowed_mean(h, c, &center, window, act)?;
        to_units(&mut coord, h.dims(), units);
        lms.set(0, c, 0, &coord)?;
    }
    Ok(lms)
}

/// Top-k peaks per channel under greedy non-maximum suppression, each
/// refined by a local windowed weighted mean.
///
/// Candidate peaks are pixels that are maximal among their orthogonal
/// neighbors and strictly above the channel minimum, so constant channels
/// produce no peaks. Candidates are taken in descending value order; a
/// candidate closer than `min_separation` (Euclidean, pixels) to an already
/// accepted peak is suppressed. Missing peaks leave sentinel instances.
pub fn decode_multi_instance(
    h: &Heatmap,
    k: usize,
    min_separation: f64,
    cfg: &DecodeConfig,
) -> Result<LandmarkSet> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be >= 1".into()));
    }
    if !(min_separation >= 0.0) {
        return Err(Error::InvalidParameter(
            "min_separation must be >= 0".into(),
        ));
    }
    check_window(&cfg.window, h.dims())?;
    let nd = h.spatial_dim();
    let mut lms = LandmarkSet::new_missing(1, h.n_channels(), k, nd, class_names(h.n_channels()))?;
    for c in 0..h.n_channels() {
        let values = h.channel(c);
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut candidates: Vec<(usize, f64)> = Vec::new();
        'pixels: for flat in 0..values.len() {
            let v = values[flat];
            if v <= min {
                continue;
            }
            let idx = h.unravel(flat);
            for d in 0..nd {
                let stride: usize = h.dims()[d + 1..].iter().product();
                if idx[d] > 0 && values[flat - stride] > v {
                    continue 'pixels;
                }
                if idx[d] + 1 < h.dims()[d] && values[flat + stride] > v {
                    continue 'pixels;
                }
            }
            candidates.push((flat, v));
        }
        candidates.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));

        let mut accepted: Vec<Vec<usize>> = Vec::new();
        for (flat, _) in candidates {
            if accepted.len() == k {
                break;
            }
            let idx = h.unravel(flat);
            let far_enough = accepted.iter().all(|a| {
                let d2: f64 = a
                    .iter()
                    .zip(&idx)
                    .map(|(&p, &q)| (p as f64 - q as f64).powi(2))
                    .sum();
                d2.sqrt() >= min_separation
            });
            if far_enough {
                accepted.push(idx);
            }
        }
        for (i, center) in accepted.iter().enumerate() {
            let mut coord = windowed_mean(h, c, center, &cfg.window, &cfg.activation)?;
            to_units(&mut coord, h.dims(), cfg.output_units);
            lms.set(0, c, i, &coord)?;
        }
    }
    Ok(lms)
}

/// Dispatch on the configured method.
pub fn decode(h: &Heatmap, cfg: &DecodeConfig) -> Result<LandmarkSet> {
    match cfg.method {
        DecodeMethod::Argmax => Ok(decode_argmax_units(h, cfg.output_units)?.landmarks),
        DecodeMethod::WeightedMean => decode_weighted_mean(h, &cfg.activation, cfg.output_units),
        DecodeMethod::LocalWeightedMean => {
            decode_local_weighted_mean(h, &cfg.activation, &cfg.window, cfg.output_units)
        }
    }
}

/// Analytic Jacobian of the weighted-mean decode: entry `(c, d, x)` is the
/// derivative of decoded coordinate `d` of channel `c` with respect to the
/// heatmap value at flat position `x`.
///
/// For softmax, `d y_d / d H_x = p_x (x_d - y_d) / T`; for the normalizing
/// activations, `(x_d - y_d) / S` on the supported set with `S` the
/// normalizer. Layout is `(C, D, volume)` row-major.
pub fn weighted_mean_jacobian(
    h: &Heatmap,
    act: &Activation,
    units: OutputUnits,
) -> Result<Vec<f64>> {
    let nd = h.spatial_dim();
    let vol = h.volume();
    let mut jac = vec![0.0; h.n_channels() * nd * vol];
    for c in 0..h.n_channels() {
        let values = h.channel(c);
        let w = act.weights(values, c)?;
        let mut decoded = vec![0.0; nd];
        GridWalk::full(h.dims()).for_each(|flat, xyz| {
            for (acc, &x) in decoded.iter_mut().zip(xyz) {
                *acc += w[flat] * x;
            }
        });
        match *act {
            Activation::Softmax { temperature } => {
                GridWalk::full(h.dims()).for_each(|flat, xyz| {
                    for d in 0..nd {
                        jac[(c * nd + d) * vol + flat] =
                            w[flat] * (xyz[d] - decoded[d]) / temperature;
                    }
                });
            }
            Activation::IdentityNormalize | Activation::ReluNormalize => {
                let support = |v: f64| match act {
                    Activation::ReluNormalize => v > 0.0,
                    _ => true,
                };
                let s: f64 = match act {
                    Activation::ReluNormalize => values.iter().map(|v| v.max(0.0)).sum(),
                    _ => values.iter().sum(),
                };
                GridWalk::full(h.dims()).for_each(|flat, xyz| {
                    if support(values[flat]) {
                        for d in 0..nd {
                            jac[(c * nd + d) * vol + flat] = (xyz[d] - decoded[d]) / s;
                        }
                    }
                });
            }
        }
        if units == OutputUnits::Normalized {
            for d in 0..nd {
                let extent = h.dims()[d] as f64;
                for v in &mut jac[(c * nd + d) * vol..(c * nd + d + 1) * vol] {
                    *v /= extent;
                }
            }
        }
    }
    Ok(jac)
}
