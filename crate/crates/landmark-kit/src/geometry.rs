//! Coordinate conventions, affine transforms on landmarks, and patch/ROI
//! coordinate remapping.
//!
//! Coordinates are continuous and ordered like array indices: `dim0` is the
//! row, `dim1` the column, `dim2` the depth when present. Integer value `k`
//! is the center of pixel `k`. Missing landmarks are encoded by non-finite
//! coordinates and are skipped (never transformed, never propagated) by
//! every operation here.

use crate::error::{Error, Result};

/// Continuous-pixel landmark coordinates of shape
/// `(samples, classes, instances, dim)` with `dim` 2 or 3.
///
/// Missing entries are a reserved non-finite sentinel; an entry is either
/// fully finite or fully missing.
#[derive(Debug, Clone)]
pub struct LandmarkSet {
    n_samples: usize,
    n_classes: usize,
    n_instances: usize,
    dim: usize,
    coords: Vec<f64>,
    class_names: Vec<String>,
}

impl LandmarkSet {
    /// All coordinates initialized to the missing sentinel.
    pub fn new_missing(
        n_samples: usize,
        n_classes: usize,
        n_instances: usize,
        dim: usize,
        class_names: Vec<String>,
    ) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::InvalidParameter(format!(
                "dim must be 2 or 3, got {dim}"
            )));
        }
        if n_instances == 0 {
            return Err(Error::InvalidParameter(
                "need at least one instance slot".into(),
            ));
        }
        if class_names.len() != n_classes {
            return Err(Error::InvalidParameter(format!(
                "{} class names for {} classes",
                class_names.len(),
                n_classes
            )));
        }
        Ok(LandmarkSet {
            n_samples,
            n_classes,
            n_instances,
            dim,
            coords: vec![f64::NAN; n_samples * n_classes * n_instances * dim],
            class_names,
        })
    }

    /// Build from a flat coordinate buffer laid out `(N, C, I, D)` row-major.
    /// Entries must be fully finite or fully non-finite per landmark.
    pub fn from_raw(
        n_samples: usize,
        n_classes: usize,
        n_instances: usize,
        dim: usize,
        coords: Vec<f64>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        let mut set = Self::new_missing(n_samples, n_classes, n_instances, dim, class_names)?;
        if coords.len() != set.coords.len() {
            return Err(Error::ShapeMismatch(format!(
                "coordinate buffer has {} values, expected {}",
                coords.len(),
                set.coords.len()
            )));
        }
        for (k, chunk) in coords.chunks(dim).enumerate() {
            let finite = chunk.iter().filter(|v| v.is_finite()).count();
            if finite != 0 && finite != dim {
                return Err(Error::InvalidParameter(format!(
                    "landmark {k} is partially finite; entries must be fully finite or fully missing"
                )));
            }
        }
        set.coords = coords;
        Ok(set)
    }

    /// Convenience: one sample, one instance per class.
    pub fn single_sample(
        points: &[Option<Vec<f64>>],
        dim: usize,
        class_names: Vec<String>,
    ) -> Result<Self> {
        let mut set = Self::new_missing(1, points.len(), 1, dim, class_names)?;
        for (c, p) in points.iter().enumerate() {
            if let Some(p) = p {
                set.set(0, c, 0, p)?;
            }
        }
        Ok(set)
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_instances(&self) -> usize {
        self.n_instances
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    /// Replace the class labels (count must match).
    pub fn with_class_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n_classes {
            return Err(Error::ShapeMismatch(format!(
                "{} names for {} classes",
                names.len(),
                self.n_classes
            )));
        }
        self.class_names = names;
        Ok(self)
    }

    fn offset(&self, n: usize, c: usize, i: usize) -> usize {
        debug_assert!(n < self.n_samples && c < self.n_classes && i < self.n_instances);
        ((n * self.n_classes + c) * self.n_instances + i) * self.dim
    }

    /// Coordinates of one landmark, or `None` when missing.
    pub fn get(&self, n: usize, c: usize, i: usize) -> Option<&[f64]> {
        let o = self.offset(n, c, i);
        let p = &self.coords[o..o + self.dim];
        if p[0].is_finite() {
            Some(p)
        } else {
            None
        }
    }

    pub fn is_missing(&self, n: usize, c: usize, i: usize) -> bool {
        self.get(n, c, i).is_none()
    }

    pub fn set(&mut self, n: usize, c: usize, i: usize, point: &[f64]) -> Result<()> {
        if point.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: point.len(),
            });
        }
        if !point.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter(
                "use set_missing for absent landmarks; coordinates must be finite".into(),
            ));
        }
        let o = self.offset(n, c, i);
        self.coords[o..o + self.dim].copy_from_slice(point);
        Ok(())
    }

    pub fn set_missing(&mut self, n: usize, c: usize, i: usize) {
        let o = self.offset(n, c, i);
        for v in &mut self.coords[o..o + self.dim] {
            *v = f64::NAN;
        }
    }

    /// Iterate `(n, c, i, Option<point>)` in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, usize, Option<&[f64]>)> {
        let (nc, ni) = (self.n_classes, self.n_instances);
        (0..self.n_samples)
            .flat_map(move |n| (0..nc).flat_map(move |c| (0..ni).map(move |i| (n, c, i))))
            .map(move |(n, c, i)| (n, c, i, self.get(n, c, i)))
    }

    pub fn count_missing(&self) -> usize {
        self.iter().filter(|(_, _, _, p)| p.is_none()).count()
    }

    /// Stack single-sample sets (identical classes/instances/dim) into one
    /// multi-sample set.
    pub fn stack(samples: &[LandmarkSet]) -> Result<LandmarkSet> {
        let first = samples
            .first()
            .ok_or_else(|| Error::InvalidParameter("cannot stack zero landmark sets".into()))?;
        let mut coords = Vec::with_capacity(samples.len() * first.coords.len());
        for s in samples {
            if s.n_classes != first.n_classes
                || s.n_instances != first.n_instances
                || s.dim != first.dim
            {
                return Err(Error::ShapeMismatch(
                    "stacked landmark sets must agree in shape".into(),
                ));
            }
            coords.extend_from_slice(&s.coords);
        }
        let total: usize = samples.iter().map(|s| s.n_samples).sum();
        LandmarkSet::from_raw(
            total,
            first.n_classes,
            first.n_instances,
            first.dim,
            coords,
            first.class_names.clone(),
        )
    }

    /// Apply a finite-point map to every present landmark.
    fn map_points(&self, mut f: impl FnMut(&[f64], &mut [f64])) -> LandmarkSet {
        let mut out = self.clone();
        let d = self.dim;
        for k in (0..self.coords.len()).step_by(d) {
            if self.coords[k].is_finite() {
                let (src, dst) = (&self.coords[k..k + d], &mut out.coords[k..k + d]);
                f(src, dst);
            }
        }
        out
    }
}

/// Equality treats any two missing entries as equal (the sentinel is
/// non-finite, so the derived comparison would never match).
impl PartialEq for LandmarkSet {
    fn eq(&self, other: &Self) -> bool {
        self.n_samples == other.n_samples
            && self.n_classes == other.n_classes
            && self.n_instances == other.n_instances
            && self.dim == other.dim
            && self.class_names == other.class_names
            && self
                .coords
                .iter()
                .zip(&other.coords)
                .all(|(a, b)| a == b || (!a.is_finite() && !b.is_finite()))
    }
}

/// Physical pixel spacing in mm per pixel, one value per dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Spacing(Vec<f64>);

impl Spacing {
    pub fn new(per_dim: Vec<f64>) -> Result<Self> {
        if per_dim.is_empty() || per_dim.len() > 3 {
            return Err(Error::InvalidParameter(
                "spacing must have 1..=3 entries".into(),
            ));
        }
        if !per_dim.iter().all(|s| s.is_finite() && *s > 0.0) {
            return Err(Error::InvalidParameter(
                "spacing must be finite and > 0".into(),
            ));
        }
        Ok(Spacing(per_dim))
    }

    pub fn isotropic(dim: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Homogeneous affine transform on landmark coordinates: a `(D+1) x (D+1)`
/// row-major matrix with fixed last row `(0, ..., 0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineTransform {
    dim: usize,
    m: Vec<f64>, // (dim+1)^2 row-major
}

impl AffineTransform {
    pub fn identity(dim: usize) -> Self {
        let n = dim + 1;
        let mut m = vec![0.0; n * n];
        for k in 0..n {
            m[k * n + k] = 1.0;
        }
        AffineTransform { dim, m }
    }

    /// From a row-major `(D+1) x (D+1)` matrix; the last row must be
    /// `(0,...,0,1)` and the linear block invertible.
    pub fn from_matrix(dim: usize, m: Vec<f64>) -> Result<Self> {
        let n = dim + 1;
        if !(dim == 2 || dim == 3) {
            return Err(Error::InvalidParameter(format!(
                "affine dim must be 2 or 3, got {dim}"
            )));
        }
        if m.len() != n * n {
            return Err(Error::ShapeMismatch(format!(
                "affine matrix needs {} entries, got {}",
                n * n,
                m.len()
            )));
        }
        if !m.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter(
                "affine matrix entries must be finite".into(),
            ));
        }
        for (k, v) in m[n * dim..].iter().enumerate() {
            let want = if k == dim { 1.0 } else { 0.0 };
            if *v != want {
                return Err(Error::InvalidParameter(
                    "last affine row must be (0,...,0,1)".into(),
                ));
            }
        }
        let t = AffineTransform { dim, m };
        if t.linear_det().abs() < 1e-12 {
            return Err(Error::SingularMatrix);
        }
        Ok(t)
    }

    pub fn translation(offset: &[f64]) -> Result<Self> {
        let dim = offset.len();
        let mut t = Self::identity(dim);
        let n = dim + 1;
        for (r, o) in offset.iter().enumerate() {
            t.m[r * n + dim] = *o;
        }
        Self::from_matrix(dim, t.m)
    }

    pub fn scaling(factors: &[f64]) -> Result<Self> {
        let dim = factors.len();
        let mut t = Self::identity(dim);
        let n = dim + 1;
        for (r, s) in factors.iter().enumerate() {
            t.m[r * n + r] = *s;
        }
        Self::from_matrix(dim, t.m)
    }

    /// 2-D rotation by `angle` radians about `center`. A positive angle
    /// turns axis 1 toward axis 0 (counterclockwise when dim1 points right
    /// and dim0 points down), so +90 degrees about the center of a 4x4 grid
    /// maps (0,0) to (0,3).
    pub fn rotation_2d(angle: f64, center: &[f64]) -> Result<Self> {
        if center.len() != 2 {
            return Err(Error::DimensionMismatch {
                expected: 2,
                got: center.len(),
            });
        }
        let (s, c) = angle.sin_cos();
        // x' = R (x - center) + center
        let m = vec![
            c,
            s,
            center[0] - c * center[0] - s * center[1],
            -s,
            c,
            center[1] + s * center[0] - c * center[1],
            0.0,
            0.0,
            1.0,
        ];
        Self::from_matrix(2, m)
    }

    /// Horizontal flip of axis `axis` in an image of `extent` pixels along
    /// that axis, under the pixel-center convention: `x' = (extent-1) - x`.
    pub fn flip_axis(dim: usize, axis: usize, extent: usize) -> Result<Self> {
        if axis >= dim {
            return Err(Error::InvalidParameter(format!(
                "axis {axis} out of range for dim {dim}"
            )));
        }
        let mut t = Self::identity(dim);
        let n = dim + 1;
        t.m[axis * n + axis] = -1.0;
        t.m[axis * n + dim] = (extent - 1) as f64;
        Self::from_matrix(dim, t.m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &[f64] {
        &self.m
    }

    fn linear_det(&self) -> f64 {
        let n = self.dim + 1;
        let a = |r: usize, c: usize| self.m[r * n + c];
        match self.dim {
            2 => a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0),
            3 => {
                a(0, 0) * (a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1))
                    - a(0, 1) * (a(1, 0) * a(2, 2) - a(1, 2) * a(2, 0))
                    + a(0, 2) * (a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0))
            }
            _ => unreachable!(),
        }
    }

    fn apply_point(&self, p: &[f64], out: &mut [f64]) {
        let n = self.dim + 1;
        for r in 0..self.dim {
            let mut acc = self.m[r * n + self.dim];
            for c in 0..self.dim {
                acc += self.m[r * n + c] * p[c];
            }
            out[r] = acc;
        }
    }
}

/// Transform every present landmark by `t`; missing entries are preserved.
pub fn apply_affine(lms: &LandmarkSet, t: &AffineTransform) -> Result<LandmarkSet> {
    if t.dim != lms.dim() {
        return Err(Error::DimensionMismatch {
            expected: lms.dim(),
            got: t.dim,
        });
    }
    let mut buf = vec![0.0; t.dim];
    Ok(lms.map_points(|src, dst| {
        t.apply_point(src, &mut buf);
        dst.copy_from_slice(&buf);
    }))
}

/// `apply_affine(lms, compose(a, b))` equals applying `b` first, then `a`.
pub fn compose(a: &AffineTransform, b: &AffineTransform) -> Result<AffineTransform> {
    if a.dim != b.dim {
        return Err(Error::DimensionMismatch {
            expected: a.dim,
            got: b.dim,
        });
    }
    let n = a.dim + 1;
    let mut m = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                acc += a.m[r * n + k] * b.m[k * n + c];
            }
            m[r * n + c] = acc;
        }
    }
    AffineTransform::from_matrix(a.dim, m)
}

/// Inverse transform; fails on a singular linear block.
pub fn invert(t: &AffineTransform) -> Result<AffineTransform> {
    let d = t.dim;
    let n = d + 1;
    let det = t.linear_det();
    if !det.is_finite() || det.abs() < 1e-12 {
        return Err(Error::SingularMatrix);
    }
    // Invert the linear block by adjugate, then inv_translation = -L^-1 b.
    let a = |r: usize, c: usize| t.m[r * n + c];
    let mut li = vec![0.0; d * d];
    match d {
        2 => {
            li[0] = a(1, 1) / det;
            li[1] = -a(0, 1) / det;
            li[2] = -a(1, 0) / det;
            li[3] = a(0, 0) / det;
        }
        3 => {
            let cof = |r0: usize, c0: usize, r1: usize, c1: usize| {
                a(r0, c0) * a(r1, c1) - a(r0, c1) * a(r1, c0)
            };
            // Adjugate transpose laid out row-major.
            li[0] = cof(1, 1, 2, 2) / det;
            li[1] = -cof(0, 1, 2, 2) / det;
            li[2] = cof(0, 1, 1, 2) / det;
            li[3] = -cof(1, 0, 2, 2) / det;
            li[4] = cof(0, 0, 2, 2) / det;
            li[5] = -cof(0, 0, 1, 2) / det;
            li[6] = cof(1, 0, 2, 1) / det;
            li[7] = -cof(0, 0, 2, 1) / det;
            li[8] = cof(0, 0, 1, 1) / det;
        }
        _ => unreachable!(),
    }
    let mut m = vec![0.0; n * n];
    for r in 0..d {
        for c in 0..d {
            m[r * n + c] = li[r * d + c];
        }
        let mut acc = 0.0;
        for c in 0..d {
            acc -= li[r * d + c] * a(c, d);
        }
        m[r * n + d] = acc;
    }
    m[d * n + d] = 1.0;
    AffineTransform::from_matrix(d, m)
}

/// Integer-origin patch/ROI placed inside a parent image.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSpec {
    origin: Vec<usize>,
    size: Vec<usize>,
    parent_size: Vec<usize>,
}

impl PatchSpec {
    pub fn new(origin: Vec<usize>, size: Vec<usize>, parent_size: Vec<usize>) -> Result<Self> {
        if origin.len() != size.len() || size.len() != parent_size.len() {
            return Err(Error::ShapeMismatch(
                "patch fields must share one dimensionality".into(),
            ));
        }
        for d in 0..size.len() {
            if size[d] == 0 {
                return Err(Error::InvalidParameter(
                    "patch size must be >= 1 per dim".into(),
                ));
            }
            if origin[d] + size[d] > parent_size[d] {
                return Err(Error::InvalidParameter(format!(
                    "patch exceeds parent along dim {d}: origin {} + size {} > {}",
                    origin[d], size[d], parent_size[d]
                )));
            }
        }
        Ok(PatchSpec {
            origin,
            size,
            parent_size,
        })
    }

    pub fn origin(&self) -> &[usize] {
        &self.origin
    }

    pub fn size(&self) -> &[usize] {
        &self.size
    }

    pub fn parent_size(&self) -> &[usize] {
        &self.parent_size
    }
}

/// Place a patch of exactly `size` as close to `center` as the parent's
/// borders allow: `origin = clamp(round(center - size/2), 0, parent - size)`.
pub fn crop_roi(parent_size: &[usize], center: &[f64], size: &[usize]) -> Result<PatchSpec> {
    if center.len() != parent_size.len() || size.len() != parent_size.len() {
        return Err(Error::DimensionMismatch {
            expected: parent_size.len(),
            got: center.len(),
        });
    }
    let mut origin = Vec::with_capacity(size.len());
    for d in 0..size.len() {
        if size[d] > parent_size[d] {
            return Err(Error::InvalidParameter(format!(
                "requested size {} exceeds parent {} along dim {d}",
                size[d], parent_size[d]
            )));
        }
        if !center[d].is_finite() {
            return Err(Error::InvalidParameter("roi center must be finite".into()));
        }
        let ideal = (center[d] - size[d] as f64 / 2.0).round();
        let max_origin = (parent_size[d] - size[d]) as f64;
        origin.push(ideal.clamp(0.0, max_origin) as usize);
    }
    PatchSpec::new(origin, size.to_vec(), parent_size.to_vec())
}

/// Patch-local coordinates to parent-image coordinates (adds the origin).
pub fn patch_to_global(lms: &LandmarkSet, patch: &PatchSpec) -> Result<LandmarkSet> {
    if patch.origin.len() != lms.dim() {
        return Err(Error::DimensionMismatch {
            expected: lms.dim(),
            got: patch.origin.len(),
        });
    }
    Ok(lms.map_points(|src, dst| {
        for d in 0..src.len() {
            dst[d] = src[d] + patch.origin[d] as f64;
        }
    }))
}

/// Parent-image coordinates to patch-local coordinates (subtracts the
/// origin). Exact inverse of [`patch_to_global`].
pub fn global_to_patch(lms: &LandmarkSet, patch: &PatchSpec) -> Result<LandmarkSet> {
    if patch.origin.len() != lms.dim() {
        return Err(Error::DimensionMismatch {
            expected: lms.dim(),
            got: patch.origin.len(),
        });
    }
    Ok(lms.map_points(|src, dst| {
        for d in 0..src.len() {
            dst[d] = src[d] - patch.origin[d] as f64;
        }
    }))
}
