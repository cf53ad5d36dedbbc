//! Grayscale PNG input/output (8- and 16-bit only).

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};

use super::{Tensor, TensorData};

pub fn read_png(path: &Path) -> Result<Tensor> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(std::io::BufReader::new(file));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::format(0, format!("png header: {e}")))?;
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::format(0, format!("png frame: {e}")))?;
    if info.color_type != png::ColorType::Grayscale {
        return Err(Error::format(
            0,
            format!(
                "png color type {:?} unsupported; grayscale only",
                info.color_type
            ),
        ));
    }
    let (h, w) = (info.height as usize, info.width as usize);
    let shape = vec![h, w];
    match info.bit_depth {
        png::BitDepth::Eight => {
            buf.truncate(info.buffer_size());
            Tensor::new(shape, TensorData::U8(buf))
        }
        png::BitDepth::Sixteen => {
            let values = buf[..info.buffer_size()]
                .chunks_exact(2)
                .map(|b| u16::from_be_bytes([b[0], b[1]]))
                .collect();
            Tensor::new(shape, TensorData::U16(values))
        }
        other => Err(Error::format(
            0,
            format!("png bit depth {other:?} unsupported; 8 or 16 bit only"),
        )),
    }
}

/// Write a 2-d U8 or U16 tensor as a grayscale PNG.
pub fn write_png(path: &Path, tensor: &Tensor) -> Result<()> {
    if tensor.shape().len() != 2 {
        return Err(Error::InvalidParameter(format!(
            "png output needs a 2-d tensor, got shape {:?}",
            tensor.shape()
        )));
    }
    let (h, w) = (tensor.shape()[0] as u32, tensor.shape()[1] as u32);
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), w, h);
    encoder.set_color(png::ColorType::Grayscale);
    let bytes: Vec<u8> = match tensor.data() {
        TensorData::U8(v) => {
            encoder.set_depth(png::BitDepth::Eight);
            v.clone()
        }
        TensorData::U16(v) => {
            encoder.set_depth(png::BitDepth::Sixteen);
            v.iter().flat_map(|x| x.to_be_bytes()).collect()
        }
        _ => {
            return Err(Error::InvalidParameter(
                "png output supports u8/u16 grayscale tensors only".into(),
            ))
        }
    };
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::format(0, format!("png encode: {e}")))?;
    writer
        .write_image_data(&bytes)
        .map_err(|e| Error::format(0, format!("png encode: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn eight_bit_round_trip_and_values() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("t.png");
        let t = Tensor::new(vec![2, 2], TensorData::U8(vec![0, 255, 128, 64])).unwrap();
        write_png(&path, &t).unwrap();
        let back = read_png(&path).unwrap();
        assert_eq!(back.shape(), &[2, 2]);
        match back.data() {
            TensorData::U8(v) => assert_eq!(v, &[0, 255, 128, 64]),
            _ => panic!("dtype changed"),
        }
    }

    #[test]
    fn sixteen_bit_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("t16.png");
        let t = Tensor::new(vec![2, 3], TensorData::U16(vec![0, 65535, 1000, 4, 5, 6])).unwrap();
        write_png(&path, &t).unwrap();
        let back = read_png(&path).unwrap();
        match back.data() {
            TensorData::U16(v) => assert_eq!(v, &[0, 65535, 1000, 4, 5, 6]),
            _ => panic!("dtype changed"),
        }
    }

    #[test]
    fn float_tensor_rejected_for_png() {
        let dir = tempdir().unwrap();
        let t = Tensor::new(vec![1, 1], TensorData::F32(vec![0.5])).unwrap();
        assert!(write_png(&dir.path().join("f.png"), &t).is_err());
    }
}
