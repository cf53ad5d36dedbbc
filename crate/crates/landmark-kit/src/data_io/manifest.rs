//! Dataset manifests: a JSON index of images with landmarks, target
//! heatmaps, binary masks, or patches.
//!
//! One manifest drives one dataset kind:
//! - `landmark` — images with landmark coordinates (inline arrays).
//! - `heatmap`  — images with precomputed target heatmap tensors.
//! - `mask`     — images with binary masks; landmarks are derived as
//!   connected-component centroids.
//! - `patch`    — image patches with patch-local landmarks; global
//!   coordinates are derived from the patch origin.
//!
//! Entries load lazily and independently: a broken file fails that entry
//! only, and iteration continues. When `resize_to` is set, images and
//! landmark coordinates are resized consistently and the reported spacing
//! is rescaled accordingly (`patch` manifests reject `resize_to`).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encode::mask_to_landmarks;
use crate::error::{Error, Result};
use crate::geometry::{patch_to_global, AffineTransform, LandmarkSet, PatchSpec, Spacing};

use super::{read_tensor, resize_image, resize_landmarks, Interp, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ManifestKind {
    Landmark,
    Heatmap,
    Mask,
    Patch,
}

/// Inline landmark coordinates: either one point (or null) per class, or a
/// per-class list of instances.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LandmarksJson {
    PerClass(Vec<Option<Vec<f64>>>),
    PerInstance(Vec<Vec<Option<Vec<f64>>>>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PatchJson {
    pub origin: Vec<usize>,
    pub size: Vec<usize>,
    pub parent_size: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub image_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landmarks: Option<LandmarksJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heatmap_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<String>,
    pub spacing: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patch: Option<PatchJson>,
    /// Optional row-major (D+1)x(D+1) affine applied to the landmarks on
    /// load (landmark manifests only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub affine: Option<Vec<Vec<f64>>>,
}

impl ManifestEntry {
    /// Explicit id, or the image file stem.
    pub fn id(&self) -> String {
        match &self.id {
            Some(id) => id.clone(),
            None => Path::new(&self.image_path)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| self.image_path.clone()),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub kind: ManifestKind,
    pub spatial_dims: usize,
    pub class_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resize_to: Option<Vec<usize>>,
    #[serde(default)]
    pub resize_interp: Interp,
    pub entries: Vec<ManifestEntry>,
    #[serde(skip)]
    root: PathBuf,
}

/// One fully loaded manifest entry.
#[derive(Debug, Clone)]
pub struct LoadedEntry {
    pub id: String,
    pub image: Tensor,
    /// Landmarks in image coordinates (global coordinates for patches).
    pub landmarks: Option<LandmarkSet>,
    /// Patch-local coordinates (patch manifests only).
    pub patch_local: Option<LandmarkSet>,
    /// Target heatmap tensor (heatmap manifests only).
    pub heatmap: Option<Tensor>,
    pub spacing: Spacing,
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut manifest: DatasetManifest = serde_json::from_str(&text)?;
    manifest.root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    manifest.validate()?;
    Ok(manifest)
}

impl DatasetManifest {
    pub fn from_json(text: &str, root: &Path) -> Result<Self> {
        let mut manifest: DatasetManifest = serde_json::from_str(text)?;
        manifest.root = root.to_path_buf();
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.spatial_dims;
        if d != 2 && d != 3 {
            return Err(Error::Manifest(format!(
                "spatial_dims must be 2 or 3, got {d}"
            )));
        }
        if self.class_names.is_empty() {
            return Err(Error::Manifest("class_names must be non-empty".into()));
        }
        if let Some(to) = &self.resize_to {
            if to.len() != d || to.iter().any(|&s| s == 0) {
                return Err(Error::Manifest(format!(
                    "resize_to must be {d} positive extents"
                )));
            }
            if self.kind == ManifestKind::Patch {
                return Err(Error::Manifest(
                    "resize_to is not supported for patch manifests".into(),
                ));
            }
        }
        for (i, entry) in self.entries.iter().enumerate() {
            let ctx = |msg: String| Error::Manifest(format!("entry {i} ({}): {msg}", entry.id()));
            if entry.spacing.len() != d || !entry.spacing.iter().all(|s| s.is_finite() && *s > 0.0)
            {
                return Err(ctx(format!("spacing must be {d} positive values")));
            }
            match self.kind {
                ManifestKind::Landmark => {
                    if entry.landmarks.is_none() {
                        return Err(ctx("landmark manifests need a landmarks field".into()));
                    }
                }
                ManifestKind::Heatmap => {
                    if entry.heatmap_path.is_none() {
                        return Err(ctx("heatmap manifests need a heatmap_path".into()));
                    }
                }
                ManifestKind::Mask => {
                    if entry.mask_path.is_none() {
                        return Err(ctx("mask manifests need a mask_path".into()));
                    }
                }
                ManifestKind::Patch => {
                    if entry.landmarks.is_none() || entry.patch.is_none() {
                        return Err(ctx("patch manifests need landmarks and patch fields".into()));
                    }
                }
            }
            if entry.affine.is_some() && self.kind != ManifestKind::Landmark {
                return Err(ctx("affine is only supported on landmark manifests".into()));
            }
        }
        Ok(())
    }

    fn landmarks_from_json(&self, lj: &LandmarksJson, id: &str) -> Result<LandmarkSet> {
        let d = self.spatial_dims;
        let c = self.class_names.len();
        let entry_err = |msg: String| Error::Entry {
            id: id.to_string(),
            reason: msg,
        };
        let per_instance: Vec<Vec<Option<Vec<f64>>>> = match lj {
            LandmarksJson::PerClass(points) => points.iter().map(|p| vec![p.clone()]).collect(),
            LandmarksJson::PerInstance(rows) => rows.clone(),
        };
        if per_instance.len() != c {
            return Err(entry_err(format!(
                "{} landmark rows for {c} classes",
                per_instance.len()
            )));
        }
        let n_instances = per_instance
            .iter()
            .map(|r| r.len())
            .max()
            .unwrap_or(1)
            .max(1);
        let mut lms = LandmarkSet::new_missing(1, c, n_instances, d, self.class_names.clone())?;
        for (ci, row) in per_instance.iter().enumerate() {
            for (ii, point) in row.iter().enumerate() {
                if let Some(point) = point {
                    if point.len() != d {
                        return Err(entry_err(format!(
                            "landmark for class {ci} has {} coords, expected {d}",
                            point.len()
                        )));
                    }
                    lms.set(0, ci, ii, point)?;
                }
            }
        }
        Ok(lms)
    }

    /// Load one entry; failures are reported per entry.
    pub fn load_entry(&self, entry: &ManifestEntry) -> Result<LoadedEntry> {
        let id = entry.id();
        let wrap = |e: Error| Error::Entry {
            id: id.clone(),
            reason: e.to_string(),
        };
        let d = self.spatial_dims;

        let image = read_tensor(&self.root.join(&entry.image_path)).map_err(wrap)?;
        let image_spatial: Vec<usize> = if image.shape().len() == d {
            image.shape().to_vec()
        } else if image.shape().len() == d + 1 {
            image.shape()[1..].to_vec()
        } else {
            return Err(Error::Entry {
                id,
                reason: format!(
                    "image shape {:?} does not match spatial_dims {d}",
                    image.shape()
                ),
            });
        };

        let mut landmarks: Option<LandmarkSet> = None;
        let mut patch_local: Option<LandmarkSet> = None;
        let mut heatmap: Option<Tensor> = None;

        match self.kind {
            ManifestKind::Landmark => {
                let lj = entry.landmarks.as_ref().expect("validated");
                let mut lms = self.landmarks_from_json(lj, &id)?;
                if let Some(rows) = &entry.affine {
                    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
                    let t = AffineTransform::from_matrix(d, flat).map_err(wrap)?;
                    lms = crate::geometry::apply_affine(&lms, &t).map_err(wrap)?;
                }
                landmarks = Some(lms);
            }
            ManifestKind::Heatmap => {
                let hp = entry.heatmap_path.as_ref().expect("validated");
                heatmap = Some(read_tensor(&self.root.join(hp)).map_err(wrap)?);
            }
            ManifestKind::Mask => {
                let mp = entry.mask_path.as_ref().expect("validated");
                let mask = read_tensor(&self.root.join(mp)).map_err(wrap)?;
                let as_heatmap = mask.to_heatmap().map_err(wrap)?;
                if as_heatmap.n_channels() != self.class_names.len() {
                    return Err(Error::Entry {
                        id,
                        reason: format!(
                            "mask has {} channels for {} classes",
                            as_heatmap.n_channels(),
                            self.class_names.len()
                        ),
                    });
                }
                let derived = mask_to_landmarks(&as_heatmap)
                    .and_then(|l| l.with_class_names(self.class_names.clone()))
                    .map_err(wrap)?;
                landmarks = Some(derived);
            }
            ManifestKind::Patch => {
                let lj = entry.landmarks.as_ref().expect("validated");
                let local = self.landmarks_from_json(lj, &id)?;
                let pj = entry.patch.as_ref().expect("validated");
                let patch =
                    PatchSpec::new(pj.origin.clone(), pj.size.clone(), pj.parent_size.clone())
                        .map_err(wrap)?;
                landmarks = Some(patch_to_global(&local, &patch).map_err(wrap)?);
                patch_local = Some(local);
            }
        }

        let mut spacing_values = entry.spacing.clone();
        let mut image = image;
        if let Some(to) = &self.resize_to {
            image = resize_image(&image, to, self.resize_interp).map_err(wrap)?;
            if let Some(lms) = landmarks.take() {
                landmarks = Some(resize_landmarks(&lms, &image_spatial, to).map_err(wrap)?);
            }
            if let Some(h) = heatmap.take() {
                heatmap = Some(resize_image(&h, to, Interp::Linear).map_err(wrap)?);
            }
            for (s, (&f, &t)) in spacing_values.iter_mut().zip(image_spatial.iter().zip(to)) {
                *s *= f as f64 / t as f64;
            }
        }

        let spacing = Spacing::new(spacing_values).map_err(wrap)?;
        Ok(LoadedEntry {
            id,
            image,
            landmarks,
            patch_local,
            heatmap,
            spacing,
        })
    }

    /// Lazy iteration in file order; a failed entry yields its error and
    /// iteration continues.
    pub fn iter_entries(&self) -> impl Iterator<Item = Result<LoadedEntry>> + '_ {
        self.entries.iter().map(|e| self.load_entry(e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::{write_npy, Tensor};
    use tempfile::tempdir;

    fn write_image(dir: &Path, name: &str, dims: &[usize]) {
        let t = Tensor::from_f32(dims.to_vec(), vec![0.25; dims.iter().product()]).unwrap();
        write_npy(&dir.join(name), &t).unwrap();
    }

    #[test]
    fn landmark_manifest_iterates_in_order() {
        let dir = tempdir().unwrap();
        for name in ["a.npy", "b.npy", "c.npy"] {
            write_image(dir.path(), name, &[16, 16]);
        }
        let json = r#"{
            "kind": "landmark",
            "spatial_dims": 2,
            "class_names": ["L1"],
            "entries": [
                {"image_path": "a.npy", "landmarks": [[1.0, 2.0]], "spacing": [1.0, 1.0]},
                {"image_path": "b.npy", "landmarks": [[3.0, 4.0]], "spacing": [1.0, 1.0]},
                {"image_path": "c.npy", "landmarks": [null], "spacing": [1.0, 1.0]}
            ]
        }"#;
        let manifest = DatasetManifest::from_json(json, dir.path()).unwrap();
        let loaded: Vec<_> = manifest.iter_entries().collect();
        assert_eq!(loaded.len(), 3);
        let ids: Vec<String> = loaded
            .iter()
            .map(|e| e.as_ref().unwrap().id.clone())
            .collect();
        assert_eq!(ids, vec!["a", "b", "c"]);
        let last = loaded[2].as_ref().unwrap();
        assert!(last.landmarks.as_ref().unwrap().is_missing(0, 0, 0));
    }

    #[test]
    fn missing_file_fails_only_that_entry() {
        let dir = tempdir().unwrap();
        write_image(dir.path(), "ok.npy", &[8, 8]);
        let json = r#"{
            "kind": "landmark",
            "spatial_dims": 2,
            "class_names": ["L1"],
            "entries": [
                {"image_path": "gone.npy", "landmarks": [[1.0, 2.0]], "spacing": [1.0, 1.0]},
                {"image_path": "ok.npy", "landmarks": [[3.0, 4.0]], "spacing": [1.0, 1.0]}
            ]
        }"#;
        let manifest = DatasetManifest::from_json(json, dir.path()).unwrap();
        let loaded: Vec<_> = manifest.iter_entries().collect();
        assert!(loaded[0].is_err());
        assert!(matches!(loaded[0].as_ref().unwrap_err(), Error::Entry { id, .. } if id == "gone"));
        assert!(loaded[1].is_ok());
    }

    #[test]
    fn mask_manifest_derives_centroids() {
        let dir = tempdir().unwrap();
        write_image(dir.path(), "img.npy", &[8, 8]);
        let mut mask = vec![0.0f32; 64];
        mask[3 * 8 + 4] = 1.0;
        mask[3 * 8 + 5] = 1.0;
        write_npy(
            &dir.path().join("mask.npy"),
            &Tensor::from_f32(vec![8, 8], mask).unwrap(),
        )
        .unwrap();
        let json = r#"{
            "kind": "mask",
            "spatial_dims": 2,
            "class_names": ["L1"],
            "entries": [
                {"image_path": "img.npy", "mask_path": "mask.npy", "spacing": [0.5, 0.5]}
            ]
        }"#;
        let manifest = DatasetManifest::from_json(json, dir.path()).unwrap();
        let entry = manifest.iter_entries().next().unwrap().unwrap();
        let lms = entry.landmarks.unwrap();
        assert_eq!(lms.class_names(), &["L1".to_string()]);
        assert_eq!(lms.get(0, 0, 0).unwrap(), &[3.0, 4.5]);
    }

    #[test]
    fn patch_manifest_reports_local_and_global() {
        let dir = tempdir().unwrap();
        write_image(dir.path(), "patch.npy", &[16, 16]);
        let json = r#"{
            "kind": "patch",
            "spatial_dims": 2,
            "class_names": ["L1"],
            "entries": [
                {"image_path": "patch.npy",
                 "landmarks": [[3.5, 2.0]],
                 "patch": {"origin": [192, 192], "size": [16, 16], "parent_size": [512, 512]},
                 "spacing": [1.0, 1.0]}
            ]
        }"#;
        let manifest = DatasetManifest::from_json(json, dir.path()).unwrap();
        let entry = manifest.iter_entries().next().unwrap().unwrap();
        assert_eq!(
            entry.patch_local.unwrap().get(0, 0, 0).unwrap(),
            &[3.5, 2.0]
        );
        assert_eq!(
            entry.landmarks.unwrap().get(0, 0, 0).unwrap(),
            &[195.5, 194.0]
        );
    }

    #[test]
    fn resize_rescales_landmarks_and_spacing() {
        let dir = tempdir().unwrap();
        write_image(dir.path(), "img.npy", &[64, 64]);
        let json = r#"{
            "kind": "landmark",
            "spatial_dims": 2,
            "class_names": ["L1"],
            "resize_to": [32, 32],
            "entries": [
                {"image_path": "img.npy", "landmarks": [[31.5, 15.5]], "spacing": [0.5, 0.5]}
            ]
        }"#;
        let manifest = DatasetManifest::from_json(json, dir.path()).unwrap();
        let entry = manifest.iter_entries().next().unwrap().unwrap();
        assert_eq!(entry.image.shape(), &[32, 32]);
        let p = entry.landmarks.unwrap();
        let p = p.get(0, 0, 0).unwrap();
        assert!((p[0] - 15.5).abs() < 1e-12 && (p[1] - 7.5).abs() < 1e-12);
        assert_eq!(entry.spacing.as_slice(), &[1.0, 1.0]);
    }

    #[test]
    fn affine_applies_to_landmarks() {
        let dir = tempdir().unwrap();
        write_image(dir.path(), "img.npy", &[16, 16]);
        let json = r#"{
            "kind": "landmark",
            "spatial_dims": 2,
            "class_names": ["L1"],
            "entries": [
                {"image_path": "img.npy",
                 "landmarks": [[1.0, 2.0]],
                 "affine": [[1.0, 0.0, 10.0], [0.0, 1.0, -1.0], [0.0, 0.0, 1.0]],
                 "spacing": [1.0, 1.0]}
            ]
        }"#;
        let manifest = DatasetManifest::from_json(json, dir.path()).unwrap();
        let entry = manifest.iter_entries().next().unwrap().unwrap();
        assert_eq!(entry.landmarks.unwrap().get(0, 0, 0).unwrap(), &[11.0, 1.0]);
    }

    #[test]
    fn validation_rejects_kind_field_mismatches() {
        let bad = r#"{
            "kind": "mask",
            "spatial_dims": 2,
            "class_names": ["L1"],
            "entries": [{"image_path": "a.npy", "spacing": [1.0, 1.0]}]
        }"#;
        assert!(DatasetManifest::from_json(bad, Path::new(".")).is_err());

        let bad_patch_resize = r#"{
            "kind": "patch",
            "spatial_dims": 2,
            "class_names": ["L1"],
            "resize_to": [8, 8],
            "entries": [{"image_path": "a.npy", "landmarks": [[1.0,2.0]],
                         "patch": {"origin":[0,0],"size":[8,8],"parent_size":[64,64]},
                         "spacing": [1.0, 1.0]}]
        }"#;
        assert!(DatasetManifest::from_json(bad_patch_resize, Path::new(".")).is_err());
    }

    #[test]
    fn multi_instance_landmarks_json() {
        let dir = tempdir().unwrap();
        write_image(dir.path(), "img.npy", &[16, 16]);
        let json = r#"{
            "kind": "landmark",
            "spatial_dims": 2,
            "class_names": ["L1"],
            "entries": [
                {"image_path": "img.npy",
                 "landmarks": [[[1.0, 2.0], [5.0, 6.0], null]],
                 "spacing": [1.0, 1.0]}
            ]
        }"#;
        let manifest = DatasetManifest::from_json(json, dir.path()).unwrap();
        let entry = manifest.iter_entries().next().unwrap().unwrap();
        let lms = entry.landmarks.unwrap();
        assert_eq!(lms.n_instances(), 3);
        assert_eq!(lms.get(0, 0, 1).unwrap(), &[5.0, 6.0]);
        assert!(lms.is_missing(0, 0, 2));
    }
}
