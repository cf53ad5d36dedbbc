//! Consistent resizing of landmark coordinates and image tensors.
//!
//! The single source of truth for coordinate scaling is the pixel-center
//! mapping `y' = (y + 0.5) * (to / from) - 0.5`, whose fixed point is the
//! pixel-edge origin -0.5. Images are resampled with the inverse of the
//! same mapping, so encode -> resize -> decode stays consistent.

use crate::error::{Error, Result};
use crate::geometry::LandmarkSet;

use super::{Tensor, TensorData};

/// Scale landmark coordinates from a `from_size` grid to a `to_size` grid
/// under the pixel-center convention.
pub fn resize_landmarks(
    lms: &LandmarkSet,
    from_size: &[usize],
    to_size: &[usize],
) -> Result<LandmarkSet> {
    if from_size.len() != lms.dim() || to_size.len() != lms.dim() {
        return Err(Error::DimensionMismatch {
            expected: lms.dim(),
            got: from_size.len().min(to_size.len()),
        });
    }
    if from_size.iter().chain(to_size).any(|&s| s == 0) {
        return Err(Error::InvalidParameter(
            "resize extents must be >= 1".into(),
        ));
    }
    let factors: Vec<f64> = from_size
        .iter()
        .zip(to_size)
        .map(|(&f, &t)| t as f64 / f as f64)
        .collect();
    let mut out = lms.clone();
    for n in 0..lms.n_samples() {
        for c in 0..lms.n_classes() {
            for i in 0..lms.n_instances() {
                if let Some(p) = lms.get(n, c, i) {
                    let scaled: Vec<f64> = p
                        .iter()
                        .zip(&factors)
                        .map(|(y, s)| (y + 0.5) * s - 0.5)
                        .collect();
                    out.set(n, c, i, &scaled)?;
                }
            }
        }
    }
    Ok(out)
}

/// Image resampling filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interp {
    Nearest,
    #[default]
    Linear,
}

/// Resample the trailing spatial axes of a tensor to `to_size`. A tensor
/// with one more axis than `to_size` is treated as channels-first and
/// resampled per channel. Output is always f32.
pub fn resize_image(tensor: &Tensor, to_size: &[usize], interp: Interp) -> Result<Tensor> {
    let shape = tensor.shape();
    let (channels, from_size) = if shape.len() == to_size.len() {
        (None, shape.to_vec())
    } else if shape.len() == to_size.len() + 1 {
        (Some(shape[0]), shape[1..].to_vec())
    } else {
        return Err(Error::ShapeMismatch(format!(
            "cannot resize shape {shape:?} to {to_size:?}"
        )));
    };
    if !(2..=3).contains(&to_size.len()) {
        return Err(Error::InvalidParameter(
            "resize supports 2-d and 3-d images".into(),
        ));
    }
    if to_size.iter().any(|&s| s == 0) {
        return Err(Error::InvalidParameter(
            "resize extents must be >= 1".into(),
        ));
    }
    let values = tensor.to_f64_vec();
    let in_vol: usize = from_size.iter().product();
    let out_vol: usize = to_size.iter().product();
    let n_channels = channels.unwrap_or(1);
    let mut out = Vec::with_capacity(n_channels * out_vol);
    for c in 0..n_channels {
        let plane = &values[c * in_vol..(c + 1) * in_vol];
        resample_plane(plane, &from_size, to_size, interp, &mut out);
    }
    let out_shape = match channels {
        Some(c) => {
            let mut s = vec![c];
            s.extend_from_slice(to_size);
            s
        }
        None => to_size.to_vec(),
    };
    Tensor::new(
        out_shape,
        TensorData::F32(out.into_iter().map(|v| v as f32).collect()),
    )
}

fn resample_plane(plane: &[f64], from: &[usize], to: &[usize], interp: Interp, out: &mut Vec<f64>) {
    let nd = to.len();
    let mut idx = vec![0usize; nd];
    let strides: Vec<usize> = (0..nd)
        .map(|d| from[d + 1..].iter().product::<usize>())
        .collect();
    loop {
        // source coordinate of this output pixel center
        let src: Vec<f64> = (0..nd)
            .map(|d| (idx[d] as f64 + 0.5) * from[d] as f64 / to[d] as f64 - 0.5)
            .collect();
        let v = match interp {
            Interp::Nearest => {
                let mut flat = 0;
                for d in 0..nd {
                    let s = src[d].round().clamp(0.0, from[d] as f64 - 1.0) as usize;
                    flat += s * strides[d];
                }
                plane[flat]
            }
            Interp::Linear => {
                // multilinear over the 2^nd corner lattice, border replicate
                let lo: Vec<i64> = src.iter().map(|s| s.floor() as i64).collect();
                let frac: Vec<f64> = src.iter().zip(&lo).map(|(s, l)| s - *l as f64).collect();
                let mut acc = 0.0;
                for corner in 0..(1usize << nd) {
                    let mut weight = 1.0;
                    let mut flat = 0;
                    for d in 0..nd {
                        let hi = (corner >> d) & 1 == 1;
                        weight *= if hi { frac[d] } else { 1.0 - frac[d] };
                        let p = (lo[d] + hi as i64).clamp(0, from[d] as i64 - 1) as usize;
                        flat += p * strides[d];
                    }
                    acc += weight * plane[flat];
                }
                acc
            }
        };
        out.push(v);
        // advance odometer
        let mut d = nd;
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < to[d] {
                break;
            }
            idx[d] = 0;
        }
    }
}
