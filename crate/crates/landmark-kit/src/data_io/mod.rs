//! File formats: NPY/NPZ tensors, grayscale PNG, landmark CSV tables and
//! dataset manifests.
//!
//! Medical formats (DICOM, NIfTI) are intentionally not parsed; data enters
//! pre-converted as tensors, with physical spacing carried by the manifest.

mod csv;
mod manifest;
mod npy;
mod npz;
mod png_io;
mod resize;

pub use csv::{read_landmarks_csv, write_landmarks_csv, LandmarkTable};
pub use manifest::{
    load_manifest, DatasetManifest, LandmarksJson, LoadedEntry, ManifestEntry, ManifestKind,
    PatchJson,
};
pub use npy::{read_npy, write_npy};
pub use npz::{read_npz, write_npz};
pub use png_io::{read_png, write_png};
pub use resize::{resize_image, resize_landmarks, Interp};

use std::path::Path;

use crate::error::{Error, Result};

/// Element type of a stored tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
    U8,
    U16,
}

impl Dtype {
    pub fn descr(&self) -> &'static str {
        match self {
            Dtype::F32 => "<f4",
            Dtype::F64 => "<f8",
            Dtype::U8 => "|u1",
            Dtype::U16 => "<u2",
        }
    }

    pub fn item_size(&self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
            Dtype::U8 => 1,
            Dtype::U16 => 2,
        }
    }
}

/// Dense array payload in its native element type.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U8(Vec<u8>),
    U16(Vec<u16>),
}

/// Dense C-order array with shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: TensorData,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: TensorData) -> Result<Self> {
        let count: usize = shape.iter().product();
        let len = match &data {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::U8(v) => v.len(),
            TensorData::U16(v) => v.len(),
        };
        if count != len {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} implies {count} elements, got {len}"
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_f64(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        Tensor::new(shape, TensorData::F64(values))
    }

    pub fn from_f32(shape: Vec<usize>, values: Vec<f32>) -> Result<Self> {
        Tensor::new(shape, TensorData::F32(values))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn dtype(&self) -> Dtype {
        match self.data {
            TensorData::F32(_) => Dtype::F32,
            TensorData::F64(_) => Dtype::F64,
            TensorData::U8(_) => Dtype::U8,
            TensorData::U16(_) => Dtype::U16,
        }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn byte_len(&self) -> usize {
        self.len() * self.dtype().item_size()
    }

    /// Values widened to f64 regardless of storage type.
    pub fn to_f64_vec(&self) -> Vec<f64> {
        match &self.data {
            TensorData::F32(v) => v.iter().map(|x| *x as f64).collect(),
            TensorData::F64(v) => v.clone(),
            TensorData::U8(v) => v.iter().map(|x| *x as f64).collect(),
            TensorData::U16(v) => v.iter().map(|x| *x as f64).collect(),
        }
    }

    /// View a `(C, S1..SD)` or `(S1..SD)` tensor as a heatmap (the
    /// single-channel case gets one channel).
    pub fn to_heatmap(&self) -> Result<crate::encode::Heatmap> {
        let (channels, dims) = match self.shape.len() {
            2 => (1, self.shape.clone()),
            3 | 4 => (self.shape[0], self.shape[1..].to_vec()),
            n => {
                return Err(Error::ShapeMismatch(format!(
                    "cannot interpret {n}-d tensor as heatmap"
                )))
            }
        };
        crate::encode::Heatmap::from_values(channels, &dims, self.to_f64_vec())
    }
}

/// Read a dense tensor, dispatching on the file extension (`.npy`, `.png`).
pub fn read_tensor(path: &Path) -> Result<Tensor> {
    match extension(path) {
        Some("npy") => read_npy(path),
        Some("png") => read_png(path),
        Some("npz") => Err(Error::InvalidParameter(format!(
            "{} is an archive; use read_npz for named members",
            path.display()
        ))),
        _ => Err(Error::InvalidParameter(format!(
            "unsupported tensor extension on {} (supported: .npy, .png)",
            path.display()
        ))),
    }
}

/// Write a dense tensor, dispatching on the file extension (`.npy`, `.png`).
pub fn write_tensor(path: &Path, tensor: &Tensor) -> Result<()> {
    match extension(path) {
        Some("npy") => write_npy(path, tensor),
        Some("png") => write_png(path, tensor),
        _ => Err(Error::InvalidParameter(format!(
            "unsupported tensor extension on {} (supported: .npy, .png)",
            path.display()
        ))),
    }
}

fn extension(path: &Path) -> Option<&str> {
    path.extension().and_then(|e| e.to_str())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use tempfile::tempdir;

    #[test]
    fn dispatch_by_extension() {
        let dir = tempdir().unwrap();
        let t = Tensor::from_f32(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let npy = dir.path().join("a.npy");
        write_tensor(&npy, &t).unwrap();
        assert_eq!(read_tensor(&npy).unwrap(), t);

        let png = dir.path().join("a.png");
        let t8 = Tensor::new(vec![2, 2], TensorData::U8(vec![9, 8, 7, 6])).unwrap();
        write_tensor(&png, &t8).unwrap();
        assert_eq!(read_tensor(&png).unwrap(), t8);

        assert!(read_tensor(&dir.path().join("a.npz")).is_err());
        assert!(read_tensor(&dir.path().join("a.bin")).is_err());
    }

    proptest! {
        #[test]
        fn npy_round_trip_preserves_f64_bits(values in proptest::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 1..64)) {
            let t = Tensor::from_f64(vec![values.len()], values.clone()).unwrap();
            let bytes = super::npy::to_npy_bytes(&t).unwrap();
            let back = super::npy::from_npy_bytes(&bytes, 0).unwrap();
            match back.data() {
                TensorData::F64(v) => {
                    prop_assert_eq!(
                        v.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                        values.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
                    );
                }
                _ => prop_assert!(false, "dtype changed"),
            }
        }

        #[test]
        fn npz_round_trip_arbitrary_u16(values in proptest::collection::vec(any::<u16>(), 1..64)) {
            let t = Tensor::new(vec![values.len()], TensorData::U16(values.clone())).unwrap();
            let bytes = super::npz::to_npz_bytes(&[("arr", &t)]).unwrap();
            let back = super::npz::from_npz_bytes(&bytes).unwrap();
            prop_assert_eq!(back.len(), 1);
            match back[0].1.data() {
                TensorData::U16(v) => prop_assert_eq!(v, &values),
                _ => prop_assert!(false, "dtype changed"),
            }
        }
    }
}
