//! Target heatmap generation from landmarks.
//!
//! Heatmaps are peak-normalized: the encoded distribution has amplitude 1 at
//! the landmark. The Gaussian kernel is
//! `H(x) = exp(-1/2 (x-mu)^T Sigma^-1 (x-mu))` with
//! `Sigma = R diag(sigma^2) R^T`, parameterized by per-axis scales and
//! explicit rotation angles (one angle in 2-D, three in 3-D). The Laplace
//! kernel is `exp(-|R diag(1/sigma) R^T (x-mu)|_1)`; one-hot places a single
//! 1 at the pixel nearest the landmark (ties round toward the lower index).
//!
//! [`encode_grad`] additionally returns the analytic partial derivative of
//! every pixel with respect to every scale and rotation parameter, which is
//! what makes the heatmap parameters learnable.

use crate::error::{Error, Result};
use crate::geometry::{LandmarkSet, Spacing};

/// Number of rotation angles for a spatial dimensionality.
pub fn n_angles(dim: usize) -> usize {
    if dim == 2 {
        1
    } else {
        3
    }
}

/// Per-landmark scale and rotation parameters of the encoding distribution;
/// the learnable state of adaptive heatmap regression.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSpec {
    n_classes: usize,
    dim: usize,
    sigmas: Vec<f64>,   // (C, D) row-major, pixels
    rotation: Vec<f64>, // (C, n_angles) row-major, radians
}

impl CovarianceSpec {
    pub fn new(n_classes: usize, dim: usize, sigmas: Vec<f64>, rotation: Vec<f64>) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::InvalidParameter(format!(
                "dim must be 2 or 3, got {dim}"
            )));
        }
        if sigmas.len() != n_classes * dim {
            return Err(Error::ShapeMismatch(format!(
                "expected {} sigmas, got {}",
                n_classes * dim,
                sigmas.len()
            )));
        }
        if rotation.len() != n_classes * n_angles(dim) {
            return Err(Error::ShapeMismatch(format!(
                "expected {} rotation angles, got {}",
                n_classes * n_angles(dim),
                rotation.len()
            )));
        }
        if !sigmas.iter().all(|s| s.is_finite() && *s > 0.0) {
            return Err(Error::InvalidParameter(
                "sigmas must be finite and > 0".into(),
            ));
        }
        if !rotation.iter().all(|a| a.is_finite()) {
            return Err(Error::InvalidParameter(
                "rotation angles must be finite".into(),
            ));
        }
        Ok(CovarianceSpec {
            n_classes,
            dim,
            sigmas,
            rotation,
        })
    }

    /// Same isotropic sigma for every class and axis, zero rotation.
    pub fn isotropic(n_classes: usize, dim: usize, sigma: f64) -> Result<Self> {
        Self::new(
            n_classes,
            dim,
            vec![sigma; n_classes * dim],
            vec![0.0; n_classes * n_angles(dim)],
        )
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_angles(&self) -> usize {
        n_angles(self.dim)
    }

    pub fn sigma(&self, class: usize) -> &[f64] {
        &self.sigmas[class * self.dim..(class + 1) * self.dim]
    }

    pub fn rotation(&self, class: usize) -> &[f64] {
        let na = self.n_angles();
        &self.rotation[class * na..(class + 1) * na]
    }

    pub fn sigmas_flat(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn rotation_flat(&self) -> &[f64] {
        &self.rotation
    }
}

/// Parametric form of the encoded distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncodingKind {
    Gaussian,
    Laplace,
    OneHot,
}

impl std::str::FromStr for EncodingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(EncodingKind::Gaussian),
            "laplace" => Ok(EncodingKind::Laplace),
            "one-hot" | "one_hot" => Ok(EncodingKind::OneHot),
            other => Err(Error::InvalidParameter(format!(
                "unknown encoding kind '{other}'"
            ))),
        }
    }
}

/// Encoding switches beyond the distribution family.
#[derive(Debug, Clone, Copy)]
pub struct EncodeOptions {
    pub kind: EncodingKind,
    /// Rescale each channel to sum to 1 (default: peak-normalized, off).
    pub normalize: bool,
    /// Optional cutoff radius in units of sigma: pixels outside the rotated
    /// bounding box of `radius * sigma` are left at zero. At radius 6 the
    /// Gaussian values dropped are below 1.6e-8.
    pub truncate_sigmas: Option<f64>,
}

impl EncodeOptions {
    pub fn new(kind: EncodingKind) -> Self {
        EncodeOptions {
            kind,
            normalize: false,
            truncate_sigmas: None,
        }
    }
}

impl Default for EncodeOptions {
    fn default() -> Self {
        Self::new(EncodingKind::Gaussian)
    }
}

/// Dense per-landmark likelihood grid of shape `(channels, S1, ..., SD)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    n_channels: usize,
    dims: Vec<usize>,
    values: Vec<f64>,
    spacing: Option<Spacing>,
}

impl Heatmap {
    pub fn zeros(n_channels: usize, dims: &[usize]) -> Result<Self> {
        if dims.len() != 2 && dims.len() != 3 {
            return Err(Error::InvalidParameter(format!(
                "heatmap must be 2-d or 3-d, got {}-d",
                dims.len()
            )));
        }
        if dims.iter().any(|&s| s == 0) {
            return Err(Error::InvalidParameter(
                "heatmap extents must be >= 1".into(),
            ));
        }
        let vol: usize = dims.iter().product();
        Ok(Heatmap {
            n_channels,
            dims: dims.to_vec(),
            values: vec![0.0; n_channels * vol],
            spacing: None,
        })
    }

    pub fn from_values(n_channels: usize, dims: &[usize], values: Vec<f64>) -> Result<Self> {
        let mut h = Self::zeros(n_channels, dims)?;
        if values.len() != h.values.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} values, got {}",
                h.values.len(),
                values.len()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter(
                "heatmap values must be finite".into(),
            ));
        }
        h.values = values;
        Ok(h)
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn spatial_dim(&self) -> usize {
        self.dims.len()
    }

    pub fn volume(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn spacing(&self) -> Option<&Spacing> {
        self.spacing.as_ref()
    }

    pub fn set_spacing(&mut self, spacing: Option<Spacing>) {
        self.spacing = spacing;
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let vol = self.volume();
        &self.values[c * vol..(c + 1) * vol]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let vol = self.volume();
        &mut self.values[c * vol..(c + 1) * vol]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, c: usize, idx: &[usize]) -> f64 {
        self.channel(c)[self.ravel(idx)]
    }

    /// Row-major flat offset of a multi-index.
    pub fn ravel(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.dims.len());
        let mut flat = 0;
        for (d, &i) in idx.iter().enumerate() {
            debug_assert!(i < self.dims[d]);
            flat = flat * self.dims[d] + i;
        }
        flat
    }

    /// Multi-index of a row-major flat offset.
    pub fn unravel(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dims.len()];
        for d in (0..self.dims.len()).rev() {
            idx[d] = flat % self.dims[d];
            flat /= self.dims[d];
        }
        idx
    }
}

// 3x3 row-major rotation helpers. 2-D uses the top-left block with the
// third axis fixed.

fn plane_rotation(p: usize, q: usize, angle: f64) -> [f64; 9] {
    let (s, c) = angle.sin_cos();
    let mut m = [0.0; 9];
    m[0] = 1.0;
    m[4] = 1.0;
    m[8] = 1.0;
    m[p * 3 + p] = c;
    m[p * 3 + q] = -s;
    m[q * 3 + p] = s;
    m[q * 3 + q] = c;
    m
}

fn plane_rotation_deriv(p: usize, q: usize, angle: f64) -> [f64; 9] {
    let (s, c) = angle.sin_cos();
    let mut m = [0.0; 9];
    m[p * 3 + p] = -s;
    m[p * 3 + q] = -c;
    m[q * 3 + p] = c;
    m[q * 3 + q] = -s;
    m
}

fn mat_mul(a: &[f64; 9], b: &[f64; 9]) -> [f64; 9] {
    let mut m = [0.0; 9];
    for r in 0..3 {
        for c in 0..3 {
            m[r * 3 + c] = (0..3).map(|k| a[r * 3 + k] * b[k * 3 + c]).sum();
        }
    }
    m
}

/// Angle-to-plane assignment: in 2-D the single angle rotates plane (0,1);
/// in 3-D angle j rotates the plane of the two axes other than j.
fn angle_planes(dim: usize) -> &'static [(usize, usize)] {
    if dim == 2 {
        &[(0, 1)]
    } else {
        &[(1, 2), (0, 2), (0, 1)]
    }
}

/// Rotation matrix R = R_0(a_0) * R_1(a_1) * ... for the class angles.
pub(crate) fn rotation_matrix(dim: usize, angles: &[f64]) -> [f64; 9] {
    let mut m = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    for (&(p, q), &a) in angle_planes(dim).iter().zip(angles) {
        m = mat_mul(&m, &plane_rotation(p, q, a));
    }
    m
}

/// d R / d angle_j for the same factorization.
fn rotation_matrix_deriv(dim: usize, angles: &[f64], j: usize) -> [f64; 9] {
    let mut m = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    for (k, (&(p, q), &a)) in angle_planes(dim).iter().zip(angles).enumerate() {
        let f = if k == j {
            plane_rotation_deriv(p, q, a)
        } else {
            plane_rotation(p, q, a)
        };
        m = mat_mul(&m, &f);
    }
    m
}

/// Nearest pixel with .5 ties broken toward the lower index.
fn round_half_down(v: f64) -> f64 {
    (v - 0.5).ceil()
}

pub(crate) struct GridWalk {
    dims: Vec<usize>,
    lo: Vec<usize>,
    hi: Vec<usize>, // exclusive
}

impl GridWalk {
    pub(crate) fn full(dims: &[usize]) -> Self {
        GridWalk {
            dims: dims.to_vec(),
            lo: vec![0; dims.len()],
            hi: dims.to_vec(),
        }
    }

    /// Bounding box of `|x_d - mu_d| <= radius_d`, clipped to the grid.
    /// Empty when the box misses the grid entirely.
    pub(crate) fn around(dims: &[usize], mu: &[f64], radius: &[f64]) -> Self {
        let mut lo = Vec::with_capacity(dims.len());
        let mut hi = Vec::with_capacity(dims.len());
        for d in 0..dims.len() {
            let l = (mu[d] - radius[d]).floor().max(0.0);
            let h = (mu[d] + radius[d]).ceil() + 1.0;
            let l = (l as i64).clamp(0, dims[d] as i64) as usize;
            let h = (h.max(0.0) as i64).clamp(0, dims[d] as i64) as usize;
            lo.push(l.min(dims[d]));
            hi.push(h);
        }
        GridWalk {
            dims: dims.to_vec(),
            lo,
            hi,
        }
    }

    /// Visit every (flat_offset, coordinates) in the box, row-major.
    pub(crate) fn for_each(&self, mut f: impl FnMut(usize, &[f64])) {
        if self.lo.iter().zip(&self.hi).any(|(l, h)| l >= h) {
            return;
        }
        let nd = self.dims.len();
        let mut idx = self.lo.clone();
        let mut coord = vec![0.0; nd];
        loop {
            for d in 0..nd {
                coord[d] = idx[d] as f64;
            }
            let mut flat = 0;
            for d in 0..nd {
                flat = flat * self.dims[d] + idx[d];
            }
            f(flat, &coord);
            // advance odometer
            let mut d = nd;
            loop {
                if d == 0 {
                    return;
                }
                d -= 1;
                idx[d] += 1;
                if idx[d] < self.hi[d] {
                    break;
                }
                idx[d] = self.lo[d];
            }
        }
    }
}

/// Kernel value at offset `diff = x - mu` for one class of `cov`.
fn kernel_value(
    kind: EncodingKind,
    cov: &CovarianceSpec,
    class: usize,
    rot: &[f64; 9],
    diff: &[f64],
) -> f64 {
    let dim = cov.dim();
    let sigma = cov.sigma(class);
    // u = R^T (x - mu): coordinates in the distribution's principal frame.
    let mut u = [0.0; 3];
    for k in 0..dim {
        u[k] = (0..dim).map(|r| rot[r * 3 + k] * diff[r]).sum();
    }
    match kind {
        EncodingKind::Gaussian => {
            let q: f64 = (0..dim).map(|k| (u[k] / sigma[k]).powi(2)).sum();
            (-0.5 * q).exp()
        }
        EncodingKind::Laplace => {
            // |R diag(1/sigma) R^T (x-mu)|_1 with v = R diag(1/sigma) u.
            let mut l1 = 0.0;
            for r in 0..dim {
                let v: f64 = (0..dim).map(|k| rot[r * 3 + k] * u[k] / sigma[k]).sum();
                l1 += v.abs();
            }
            (-l1).exp()
        }
        EncodingKind::OneHot => unreachable!("one-hot takes no kernel"),
    }
}

/// Axis-aligned half-extent of the `radius`-sigma region of class `class`
/// (per-axis norm of the scaled rotation rows).
fn truncation_radius(cov: &CovarianceSpec, class: usize, rot: &[f64; 9], radius: f64) -> Vec<f64> {
    let dim = cov.dim();
    let sigma = cov.sigma(class);
    (0..dim)
        .map(|r| {
            let s: f64 = (0..dim).map(|k| (rot[r * 3 + k] * sigma[k]).powi(2)).sum();
            radius * s.sqrt()
        })
        .collect()
}

/// Generate the target heatmap for one sample of `lms`.
///
/// Channels of missing landmarks are all zero. Landmarks outside the grid
/// still contribute their clipped tail. Multiple instances superpose by
/// elementwise maximum, keeping each peak at amplitude 1.
pub fn encode(
    lms: &LandmarkSet,
    sample: usize,
    cov: &CovarianceSpec,
    opts: &EncodeOptions,
    size: &[usize],
) -> Result<Heatmap> {
    if lms.dim() != cov.dim() {
        return Err(Error::DimensionMismatch {
            expected: cov.dim(),
            got: lms.dim(),
        });
    }
    if size.len() != lms.dim() {
        return Err(Error::DimensionMismatch {
            expected: lms.dim(),
            got: size.len(),
        });
    }
    if lms.n_classes() != cov.n_classes() {
        return Err(Error::ShapeMismatch(format!(
            "{} landmark classes vs {} covariance classes",
            lms.n_classes(),
            cov.n_classes()
        )));
    }
    if sample >= lms.n_samples() {
        return Err(Error::InvalidParameter(format!(
            "sample {sample} out of range"
        )));
    }
    if let Some(r) = opts.truncate_sigmas {
        if !(r > 0.0) {
            return Err(Error::InvalidParameter(
                "truncation radius must be > 0".into(),
            ));
        }
    }

    let mut heatmap = Heatmap::zeros(lms.n_classes(), size)?;
    for c in 0..lms.n_classes() {
        let rot = rotation_matrix(cov.dim(), cov.rotation(c));
        let channel = heatmap.channel_mut(c);
        for i in 0..lms.n_instances() {
            let Some(mu) = lms.get(sample, c, i) else {
                continue;
            };
            let mu = mu.to_vec();
            match opts.kind {
                EncodingKind::OneHot => {
                    let mut idx = Vec::with_capacity(size.len());
                    let mut inside = true;
                    for d in 0..size.len() {
                        let p = round_half_down(mu[d]);
                        if p < 0.0 || p >= size[d] as f64 {
                            inside = false;
                            break;
                        }
                        idx.push(p as usize);
                    }
                    if inside {
                        let mut flat = 0;
                        for d in 0..size.len() {
                            flat = flat * size[d] + idx[d];
                        }
                        channel[flat] = 1.0;
                    }
                }
                kind => {
                    let walk = match opts.truncate_sigmas {
                        Some(r) => GridWalk::around(size, &mu, &truncation_radius(cov, c, &rot, r)),
                        None => GridWalk::full(size),
                    };
                    let mut diff = vec![0.0; size.len()];
                    walk.for_each(|flat, coord| {
                        for d in 0..coord.len() {
                            diff[d] = coord[d] - mu[d];
                        }
                        let v = kernel_value(kind, cov, c, &rot, &diff);
                        if v > channel[flat] {
                            channel[flat] = v;
                        }
                    });
                }
            }
        }
        if opts.normalize {
            let sum: f64 = channel.iter().sum();
            if sum > 0.0 {
                for v in channel.iter_mut() {
                    *v /= sum;
                }
            }
        }
    }
    Ok(heatmap)
}

/// Convenience wrapper with default options for a kind.
pub fn encode_kind(
    lms: &LandmarkSet,
    sample: usize,
    cov: &CovarianceSpec,
    kind: EncodingKind,
    size: &[usize],
) -> Result<Heatmap> {
    encode(lms, sample, cov, &EncodeOptions::new(kind), size)
}

/// Heatmap plus the analytic derivative of every pixel with respect to each
/// scale and rotation parameter.
#[derive(Debug, Clone)]
pub struct EncodeGrad {
    pub heatmap: Heatmap,
    d_sigma: Vec<f64>,    // (C, D, volume)
    d_rotation: Vec<f64>, // (C, n_angles, volume)
}

impl EncodeGrad {
    pub fn d_sigma(&self, class: usize, axis: usize) -> &[f64] {
        let vol = self.heatmap.volume();
        let dim = self.heatmap.spatial_dim();
        let o = (class * dim + axis) * vol;
        &self.d_sigma[o..o + vol]
    }

    pub fn d_rotation(&self, class: usize, angle: usize) -> &[f64] {
        let vol = self.heatmap.volume();
        let na = n_angles(self.heatmap.spatial_dim());
        let o = (class * na + angle) * vol;
        &self.d_rotation[o..o + vol]
    }
}

/// Peak-normalized Gaussian heatmap with analytic parameter gradients.
///
/// With `u = R^T (x - mu)` and `q = sum_k u_k^2 / sigma_k^2`:
/// `dH/dsigma_k = H u_k^2 / sigma_k^3` and
/// `dH/dtheta_j = -H sum_k u_k (dR/dtheta_j^T (x-mu))_k / sigma_k^2`.
/// With several instances the gradient follows the maximum branch.
pub fn encode_grad(
    lms: &LandmarkSet,
    sample: usize,
    cov: &CovarianceSpec,
    size: &[usize],
) -> Result<EncodeGrad> {
    if lms.dim() != cov.dim() {
        return Err(Error::DimensionMismatch {
            expected: cov.dim(),
            got: lms.dim(),
        });
    }
    if size.len() != lms.dim() {
        return Err(Error::DimensionMismatch {
            expected: lms.dim(),
            got: size.len(),
        });
    }
    if lms.n_classes() != cov.n_classes() {
        return Err(Error::ShapeMismatch(format!(
            "{} landmark classes vs {} covariance classes",
            lms.n_classes(),
            cov.n_classes()
        )));
    }
    if sample >= lms.n_samples() {
        return Err(Error::InvalidParameter(format!(
            "sample {sample} out of range"
        )));
    }

    let heatmap = Heatmap::zeros(lms.n_classes(), size)?;
    let vol = heatmap.volume();
    let dim = cov.dim();
    let na = n_angles(dim);
    let mut out = EncodeGrad {
        heatmap,
        d_sigma: vec![0.0; lms.n_classes() * dim * vol],
        d_rotation: vec![0.0; lms.n_classes() * na * vol],
    };

    for c in 0..lms.n_classes() {
        let sigma = cov.sigma(c).to_vec();
        let angles = cov.rotation(c).to_vec();
        let rot = rotation_matrix(dim, &angles);
        let rot_derivs: Vec<[f64; 9]> = (0..na)
            .map(|j| rotation_matrix_deriv(dim, &angles, j))
            .collect();
        for i in 0..lms.n_instances() {
            let Some(mu) = lms.get(sample, c, i) else {
                continue;
            };
            let mu = mu.to_vec();
            let mut diff = vec![0.0; dim];
            GridWalk::full(size).for_each(|flat, coord| {
                for d in 0..dim {
                    diff[d] = coord[d] - mu[d];
                }
                let mut u = [0.0; 3];
                for k in 0..dim {
                    u[k] = (0..dim).map(|r| rot[r * 3 + k] * diff[r]).sum();
                }
                let q: f64 = (0..dim).map(|k| (u[k] / sigma[k]).powi(2)).sum();
                let h = (-0.5 * q).exp();
                if h > out.heatmap.channel(c)[flat] {
                    out.heatmap.channel_mut(c)[flat] = h;
                    for k in 0..dim {
                        out.d_sigma[(c * dim + k) * vol + flat] =
                            h * u[k] * u[k] / (sigma[k] * sigma[k] * sigma[k]);
                    }
                    for (j, dr) in rot_derivs.iter().enumerate() {
                        let mut dq = 0.0;
                        for k in 0..dim {
                            let du_k: f64 = (0..dim).map(|r| dr[r * 3 + k] * diff[r]).sum();
                            dq += 2.0 * u[k] * du_k / (sigma[k] * sigma[k]);
                        }
                        out.d_rotation[(c * na + j) * vol + flat] = -0.5 * h * dq;
                    }
                }
            });
        }
    }
    Ok(out)
}

/// Connected component of set pixels in a binary mask.
struct Component {
    size: usize,
    seed: usize, // flat index of the raster-first pixel
    centroid: Vec<f64>,
}

/// Per channel, the centroid of each orthogonally connected component of set
/// pixels, one instance per component, ordered by descending size then by
/// raster position of the component seed. Empty channels yield sentinels.
pub fn mask_to_landmarks(mask: &Heatmap) -> Result<LandmarkSet> {
    for c in 0..mask.n_channels() {
        if let Some(v) = mask.channel(c).iter().find(|v| **v != 0.0 && **v != 1.0) {
            return Err(Error::InvalidParameter(format!(
                "mask values must be 0 or 1, found {v}"
            )));
        }
    }

    let dims = mask.dims().to_vec();
    let nd = dims.len();
    let vol = mask.volume();
    let mut per_channel: Vec<Vec<Component>> = Vec::with_capacity(mask.n_channels());

    for c in 0..mask.n_channels() {
        let values = mask.channel(c);
        let mut visited = vec![false; vol];
        let mut comps = Vec::new();
        for start in 0..vol {
            if values[start] != 1.0 || visited[start] {
                continue;
            }
            // flood fill with orthogonal adjacency
            let mut stack = vec![start];
            visited[start] = true;
            let mut size = 0usize;
            let mut centroid = vec![0.0; nd];
            while let Some(flat) = stack.pop() {
                size += 1;
                let idx = mask.unravel(flat);
                for (d, &i) in idx.iter().enumerate() {
                    centroid[d] += i as f64;
                }
                for d in 0..nd {
                    // stride of dimension d
                    let stride: usize = dims[d + 1..].iter().product();
                    if idx[d] > 0 {
                        let n = flat - stride;
                        if !visited[n] && values[n] == 1.0 {
                            visited[n] = true;
                            stack.push(n);
                        }
                    }
                    if idx[d] + 1 < dims[d] {
                        let n = flat + stride;
                        if !visited[n] && values[n] == 1.0 {
                            visited[n] = true;
                            stack.push(n);
                        }
                    }
                }
            }
            for v in &mut centroid {
                *v /= size as f64;
            }
            comps.push(Component {
                size,
                seed: start,
                centroid,
            });
        }
        comps.sort_by(|a, b| b.size.cmp(&a.size).then(a.seed.cmp(&b.seed)));
        per_channel.push(comps);
    }

    let n_instances = per_channel
        .iter()
        .map(|c| c.len())
        .max()
        .unwrap_or(0)
        .max(1);
    let class_names = (0..mask.n_channels())
        .map(|c| format!("class_{c}"))
        .collect();
    let mut lms = LandmarkSet::new_missing(1, mask.n_channels(), n_instances, nd, class_names)?;
    for (c, comps) in per_channel.iter().enumerate() {
        for (i, comp) in comps.iter().enumerate() {
            lms.set(0, c, i, &comp.centroid)?;
        }
    }
    Ok(lms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SmallRng;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("class_{i}")).collect()
    }

    fn one_landmark(mu: &[f64]) -> LandmarkSet {
        let mut lms = LandmarkSet::new_missing(1, 1, 1, mu.len(), names(1)).unwrap();
        lms.set(0, 0, 0, mu).unwrap();
        lms
    }

    #[test]
    fn gaussian_formula_values() {
        let lms = one_landmark(&[20.0, 30.0]);
        let cov = CovarianceSpec::isotropic(1, 2, 3.0).unwrap();
        let h = encode_kind(&lms, 0, &cov, EncodingKind::Gaussian, &[64, 64]).unwrap();
        assert_eq!(h.value(0, &[20, 30]), 1.0);
        let expected = (-0.5f64).exp();
        assert!((h.value(0, &[23, 30]) - expected).abs() < 1e-12);
        assert!((expected - 0.606531).abs() < 1e-6);
    }

    #[test]
    fn one_hot_nearest_pixel_rounding() {
        let lms = one_landmark(&[20.6, 30.2]);
        let cov = CovarianceSpec::isotropic(1, 2, 3.0).unwrap();
        let h = encode_kind(&lms, 0, &cov, EncodingKind::OneHot, &[64, 64]).unwrap();
        assert_eq!(h.value(0, &[21, 30]), 1.0);
        assert_eq!(h.channel(0).iter().sum::<f64>(), 1.0);

        // .5 ties break toward the lower index
        let lms = one_landmark(&[20.5, 30.5]);
        let h = encode_kind(&lms, 0, &cov, EncodingKind::OneHot, &[64, 64]).unwrap();
        assert_eq!(h.value(0, &[20, 30]), 1.0);
    }

    #[test]
    fn isotropic_gaussian_invariant_under_grid_rotation() {
        let s = 33usize;
        let center = (s as f64 - 1.0) / 2.0;
        let lms = one_landmark(&[center, center]);
        let cov = CovarianceSpec::isotropic(1, 2, 4.0).unwrap();
        let h = encode_kind(&lms, 0, &cov, EncodingKind::Gaussian, &[s, s]).unwrap();
        for r in 0..s {
            for c in 0..s {
                let rotated = h.value(0, &[c, s - 1 - r]);
                assert!((h.value(0, &[r, c]) - rotated).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sentinel_channel_is_zero() {
        let mut lms = LandmarkSet::new_missing(1, 2, 1, 2, names(2)).unwrap();
        lms.set(0, 0, 0, &[10.0, 10.0]).unwrap();
        let cov = CovarianceSpec::isotropic(2, 2, 3.0).unwrap();
        let h = encode_kind(&lms, 0, &cov, EncodingKind::Gaussian, &[32, 32]).unwrap();
        assert!(h.channel(1).iter().all(|v| *v == 0.0));
        assert!(h.channel(0).iter().any(|v| *v > 0.0));
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(CovarianceSpec::isotropic(1, 2, 0.0).is_err());
        assert!(CovarianceSpec::isotropic(1, 2, -1.0).is_err());
        let lms = one_landmark(&[5.0, 5.0]);
        let cov = CovarianceSpec::isotropic(1, 2, 3.0).unwrap();
        assert!(encode_kind(&lms, 0, &cov, EncodingKind::Gaussian, &[0, 64]).is_err());
    }

    #[test]
    fn peak_is_at_nearest_pixel_and_one_on_grid() {
        let mut rng = SmallRng::seed_from_u64(3);
        let cov = CovarianceSpec::isotropic(1, 2, 2.5).unwrap();
        for _ in 0..50 {
            let mu = [rng.uniform_in(8.0, 40.0), rng.uniform_in(8.0, 40.0)];
            let lms = one_landmark(&mu);
            let h = encode_kind(&lms, 0, &cov, EncodingKind::Gaussian, &[48, 48]).unwrap();
            let (argmax, max) =
                h.channel(0)
                    .iter()
                    .enumerate()
                    .fold(
                        (0, f64::MIN),
                        |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc },
                    );
            let idx = h.unravel(argmax);
            let nearest = [mu[0].round() as usize, mu[1].round() as usize];
            assert_eq!(&idx[..], &nearest[..]);
            let at_nearest = h.value(0, &nearest);
            assert_eq!(max, at_nearest);
        }
        let lms = one_landmark(&[17.0, 23.0]);
        let h = encode_kind(&lms, 0, &cov, EncodingKind::Gaussian, &[48, 48]).unwrap();
        assert_eq!(h.value(0, &[17, 23]), 1.0);
    }

    #[test]
    fn gaussian_monotone_in_sigma_off_peak() {
        let lms = one_landmark(&[24.0, 24.0]);
        let mut prev = None;
        for sigma in [1.0, 2.0, 3.0, 5.0, 8.0] {
            let cov = CovarianceSpec::isotropic(1, 2, sigma).unwrap();
            let h = encode_kind(&lms, 0, &cov, EncodingKind::Gaussian, &[48, 48]).unwrap();
            let v = h.value(0, &[30, 20]);
            if let Some(p) = prev {
                assert!(v >= p, "sigma {sigma}: {v} < {p}");
            }
            prev = Some(v);
        }
    }

    #[test]
    fn laplace_and_gaussian_closed_forms_on_axis() {
        let sigma = 2.0;
        let lms = one_landmark(&[24.0, 24.0]);
        let cov = CovarianceSpec::isotropic(1, 2, sigma).unwrap();
        let g = encode_kind(&lms, 0, &cov, EncodingKind::Gaussian, &[48, 48]).unwrap();
        let l = encode_kind(&lms, 0, &cov, EncodingKind::Laplace, &[48, 48]).unwrap();
        assert_eq!(g.value(0, &[24, 24]), 1.0);
        assert_eq!(l.value(0, &[24, 24]), 1.0);
        for d in 1..8 {
            let df = d as f64;
            let gv = g.value(0, &[24 + d, 24]);
            let lv = l.value(0, &[24 + d, 24]);
            assert!((gv - (-df * df / (2.0 * sigma * sigma)).exp()).abs() < 1e-12);
            assert!((lv - (-df / sigma).exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn rotated_anisotropic_laplace_closed_form() {
        // sigma (4,1), theta pi/4: M = R diag(1/sigma) R^T works out to
        // [[0.625, -0.375], [-0.375, 0.625]], so |M (1,0)|_1 = 1 and
        // |M (1,1)|_1 = 0.5.
        let lms = one_landmark(&[24.0, 24.0]);
        let cov =
            CovarianceSpec::new(1, 2, vec![4.0, 1.0], vec![std::f64::consts::FRAC_PI_4]).unwrap();
        let h = encode_kind(&lms, 0, &cov, EncodingKind::Laplace, &[48, 48]).unwrap();
        assert!((h.value(0, &[25, 24]) - (-1.0f64).exp()).abs() < 1e-12);
        assert!((h.value(0, &[25, 25]) - (-0.5f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn rotated_anisotropic_gaussian_has_tilted_axes() {
        // sigma (4, 1) rotated 45 degrees: the diagonal direction decays
        // like the long axis, the anti-diagonal like the short axis.
        let lms = one_landmark(&[24.0, 24.0]);
        let cov =
            CovarianceSpec::new(1, 2, vec![4.0, 1.0], vec![std::f64::consts::FRAC_PI_4]).unwrap();
        let h = encode_kind(&lms, 0, &cov, EncodingKind::Gaussian, &[48, 48]).unwrap();
        let along = h.value(0, &[27, 27]);
        let across = h.value(0, &[27, 21]);
        assert!(along > across * 10.0, "along {along} across {across}");
    }

    #[test]
    fn truncation_changes_values_below_1e7() {
        let lms = one_landmark(&[20.0, 25.0]);
        let cov = CovarianceSpec::new(1, 2, vec![3.0, 1.5], vec![0.4]).unwrap();
        let full = encode_kind(&lms, 0, &cov, EncodingKind::Gaussian, &[64, 64]).unwrap();
        let mut opts = EncodeOptions::new(EncodingKind::Gaussian);
        opts.truncate_sigmas = Some(6.0);
        let cut = encode(&lms, 0, &cov, &opts, &[64, 64]).unwrap();
        let max_diff = full
            .values()
            .iter()
            .zip(cut.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_diff < 1e-7, "max diff {max_diff}");
    }

    #[test]
    fn normalize_flag_sums_to_one() {
        let lms = one_landmark(&[20.0, 25.0]);
        let cov = CovarianceSpec::isotropic(1, 2, 3.0).unwrap();
        let mut opts = EncodeOptions::new(EncodingKind::Gaussian);
        opts.normalize = true;
        let h = encode(&lms, 0, &cov, &opts, &[64, 64]).unwrap();
        assert!((h.channel(0).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn out_of_grid_landmark_yields_clipped_tail() {
        let lms = one_landmark(&[-4.0, 30.0]);
        let cov = CovarianceSpec::isotropic(1, 2, 3.0).unwrap();
        let h = encode_kind(&lms, 0, &cov, EncodingKind::Gaussian, &[64, 64]).unwrap();
        let expected = (-0.5f64 * (16.0 / 9.0)).exp();
        assert!((h.value(0, &[0, 30]) - expected).abs() < 1e-12);

        // one-hot outside the grid leaves the channel empty
        let oh = encode_kind(&lms, 0, &cov, EncodingKind::OneHot, &[64, 64]).unwrap();
        assert!(oh.channel(0).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn grad_zero_at_peak_and_for_isotropic_rotation() {
        let lms = one_landmark(&[16.0, 16.0]);
        let cov = CovarianceSpec::isotropic(1, 2, 3.0).unwrap();
        let g = encode_grad(&lms, 0, &cov, &[33, 33]).unwrap();
        // peak pixel value is 1 regardless of sigma
        let peak = g.heatmap.ravel(&[16, 16]);
        assert_eq!(g.d_sigma(0, 0)[peak], 0.0);
        assert_eq!(g.d_sigma(0, 1)[peak], 0.0);
        // isotropic: rotating changes nothing anywhere
        for v in g.d_rotation(0, 0) {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn mask_centroids_and_ordering() {
        let mut mask = Heatmap::zeros(1, &[16, 16]).unwrap();
        // singleton at (7, 9)
        let at = mask.ravel(&[7, 9]);
        mask.channel_mut(0)[at] = 1.0;
        let lms = mask_to_landmarks(&mask).unwrap();
        assert_eq!(lms.get(0, 0, 0).unwrap(), &[7.0, 9.0]);

        // 2x2 block centroid
        let mut mask = Heatmap::zeros(1, &[16, 16]).unwrap();
        for r in [4, 5] {
            for c in [10, 11] {
                let at = mask.ravel(&[r, c]);
                mask.channel_mut(0)[at] = 1.0;
            }
        }
        let lms = mask_to_landmarks(&mask).unwrap();
        assert_eq!(lms.get(0, 0, 0).unwrap(), &[4.5, 10.5]);

        // size 5 and size 3 components: larger first
        let mut mask = Heatmap::zeros(1, &[16, 16]).unwrap();
        for c in 2..7 {
            let at = mask.ravel(&[1, c]);
            mask.channel_mut(0)[at] = 1.0;
        }
        for c in 2..5 {
            let at = mask.ravel(&[10, c]);
            mask.channel_mut(0)[at] = 1.0;
        }
        let lms = mask_to_landmarks(&mask).unwrap();
        assert_eq!(lms.n_instances(), 2);
        assert_eq!(lms.get(0, 0, 0).unwrap(), &[1.0, 4.0]);
        assert_eq!(lms.get(0, 0, 1).unwrap(), &[10.0, 3.0]);
    }

    #[test]
    fn mask_empty_channel_and_non_binary() {
        let mask = Heatmap::zeros(2, &[8, 8]).unwrap();
        let lms = mask_to_landmarks(&mask).unwrap();
        assert!(lms.is_missing(0, 0, 0));
        assert!(lms.is_missing(0, 1, 0));

        let mut bad = Heatmap::zeros(1, &[8, 8]).unwrap();
        bad.channel_mut(0)[3] = 0.5;
        assert!(mask_to_landmarks(&bad).is_err());
    }

    /// Independent reference: label components by repeated neighbor sweeps
    /// (no shared code with the flood fill above), then compare counts,
    /// sizes and centroids on random masks.
    #[test]
    fn mask_components_match_reference_labelling() {
        let mut rng = SmallRng::seed_from_u64(77);
        for _ in 0..20 {
            let (h, w) = (12usize, 15usize);
            let mut mask = Heatmap::zeros(1, &[h, w]).unwrap();
            for v in mask.channel_mut(0).iter_mut() {
                *v = if rng.uniform() < 0.3 { 1.0 } else { 0.0 };
            }

            // reference: iterative label propagation
            let values = mask.channel(0).to_vec();
            let mut labels: Vec<usize> = (0..h * w)
                .map(|i| if values[i] == 1.0 { i + 1 } else { 0 })
                .collect();
            let mut changed = true;
            while changed {
                changed = false;
                for r in 0..h {
                    for c in 0..w {
                        let i = r * w + c;
                        if labels[i] == 0 {
                            continue;
                        }
                        let mut m = labels[i];
                        if r > 0 && labels[i - w] > 0 {
                            m = m.min(labels[i - w]);
                        }
                        if r + 1 < h && labels[i + w] > 0 {
                            m = m.min(labels[i + w]);
                        }
                        if c > 0 && labels[i - 1] > 0 {
                            m = m.min(labels[i - 1]);
                        }
                        if c + 1 < w && labels[i + 1] > 0 {
                            m = m.min(labels[i + 1]);
                        }
                        if m < labels[i] {
                            labels[i] = m;
                            changed = true;
                        }
                    }
                }
            }
            use std::collections::HashMap;
            let mut by_label: HashMap<usize, (usize, f64, f64)> = HashMap::new();
            for r in 0..h {
                for c in 0..w {
                    let l = labels[r * w + c];
                    if l > 0 {
                        let e = by_label.entry(l).or_insert((0, 0.0, 0.0));
                        e.0 += 1;
                        e.1 += r as f64;
                        e.2 += c as f64;
                    }
                }
            }
            let mut reference: Vec<(usize, f64, f64)> = by_label
                .values()
                .map(|(n, sr, sc)| (*n, sr / *n as f64, sc / *n as f64))
                .collect();
            reference.sort_by(|a, b| {
                b.0.cmp(&a.0).then(
                    a.1.partial_cmp(&b.1)
                        .unwrap()
                        .then(a.2.partial_cmp(&b.2).unwrap()),
                )
            });

            let lms = mask_to_landmarks(&mask).unwrap();
            let mut got: Vec<(f64, f64)> = (0..lms.n_instances())
                .filter_map(|i| lms.get(0, 0, i).map(|p| (p[0], p[1])))
                .collect();
            assert_eq!(got.len(), reference.len());
            // sizes can tie, so compare as multisets of centroids
            let mut want: Vec<(f64, f64)> = reference.iter().map(|r| (r.1, r.2)).collect();
            got.sort_by(|a, b| a.partial_cmp(b).unwrap());
            want.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for (g, w) in got.iter().zip(&want) {
                assert!((g.0 - w.0).abs() < 1e-9 && (g.1 - w.1).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn three_d_gaussian_basic() {
        let mut lms = LandmarkSet::new_missing(1, 1, 1, 3, names(1)).unwrap();
        lms.set(0, 0, 0, &[8.0, 9.0, 10.0]).unwrap();
        let cov = CovarianceSpec::isotropic(1, 3, 2.0).unwrap();
        let h = encode_kind(&lms, 0, &cov, EncodingKind::Gaussian, &[20, 20, 20]).unwrap();
        assert_eq!(h.value(0, &[8, 9, 10]), 1.0);
        let v = h.value(0, &[8, 9, 12]);
        assert!((v - (-0.5f64).exp()).abs() < 1e-12);
    }
}
