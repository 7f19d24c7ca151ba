//! Binary float container: a tiny self-describing format used for every
//! stored tensor (images, flows, perturbations, model parameters).
//!
//! Layout, in order:
//!   1. magic bytes `FBC1`
//!   2. little-endian u32 header length
//!   3. UTF-8 JSON header `{"shape": [...], "dtype": "f32"|"f64", "order": "row-major"}`
//!   4. raw little-endian values, row-major
//!
//! `f64` is the default dtype so that a value read back is bit-identical to
//! the value computed; `f32` is accepted for interchange with tools that
//! expect single precision.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image_buffer::ImageBuffer;

const MAGIC: &[u8; 4] = b"FBC1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dtype {
    #[serde(rename = "f32")]
    F32,
    #[serde(rename = "f64")]
    F64,
}

impl Dtype {
    fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    shape: Vec<usize>,
    dtype: Dtype,
    order: String,
}

/// Tensor of arbitrary rank as read from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub shape: Vec<usize>,
    pub dtype: Dtype,
    pub data: Vec<f64>,
}

pub fn write_container(path: &Path, shape: &[usize], data: &[f64], dtype: Dtype) -> Result<()> {
    let expected: usize = shape.iter().product();
    if expected != data.len() {
        return Err(Error::dim(
            format!("{expected} values for shape {shape:?}"),
            format!("{}", data.len()),
        ));
    }
    let header = Header {
        shape: shape.to_vec(),
        dtype,
        order: "row-major".into(),
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let mut buf =
        Vec::with_capacity(4 + 4 + header_bytes.len() + data.len() * dtype.size());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header_bytes);
    match dtype {
        Dtype::F64 => {
            for &v in data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        Dtype::F32 => {
            for &v in data {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_container(path: &Path) -> Result<Container> {
    let bytes = fs::read(path)?;
    parse_container(&bytes).map_err(|e| match e {
        Error::Container(msg) => Error::Container(format!("{}: {msg}", path.display())),
        other => other,
    })
}

fn parse_container(bytes: &[u8]) -> Result<Container> {
    if bytes.len() < 8 || &bytes[0..4] != MAGIC {
        return Err(Error::Container("missing FBC1 magic".into()));
    }
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let header_end = 8 + header_len;
    if bytes.len() < header_end {
        return Err(Error::Container("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&bytes[8..header_end])
        .map_err(|e| Error::Container(format!("bad header json: {e}")))?;
    if header.order != "row-major" {
        return Err(Error::Container(format!(
            "unsupported order {:?}",
            header.order
        )));
    }
    let count: usize = header.shape.iter().product();
    let payload = &bytes[header_end..];
    if payload.len() != count * header.dtype.size() {
        return Err(Error::Container(format!(
            "payload holds {} bytes, shape {:?} as {:?} needs {}",
            payload.len(),
            header.shape,
            header.dtype,
            count * header.dtype.size()
        )));
    }
    let mut data = Vec::with_capacity(count);
    match header.dtype {
        Dtype::F64 => {
            for chunk in payload.chunks_exact(8) {
                data.push(f64::from_le_bytes(chunk.try_into().unwrap()));
            }
        }
        Dtype::F32 => {
            for chunk in payload.chunks_exact(4) {
                data.push(f32::from_le_bytes(chunk.try_into().unwrap()) as f64);
            }
        }
    }
    Ok(Container {
        shape: header.shape,
        dtype: header.dtype,
        data,
    })
}

pub fn save_image(path: &Path, image: &ImageBuffer) -> Result<()> {
    let (h, w, c) = image.dim();
    let data: Vec<f64> = image.as_array().iter().copied().collect();
    write_container(path, &[h, w, c], &data, Dtype::F64)
}

pub fn load_image(path: &Path) -> Result<ImageBuffer> {
    let c = read_container(path)?;
    let [h, w, ch]: [usize; 3] = c
        .shape
        .as_slice()
        .try_into()
        .map_err(|_| Error::Container(format!("image container must be rank 3, got {:?}", c.shape)))?;
    let arr = Array3::from_shape_vec((h, w, ch), c.data)
        .map_err(|e| Error::Container(e.to_string()))?;
    ImageBuffer::from_array(arr)
}

/// Stores a displacement field as shape `[H, W, 2]` with the last axis
/// ordered (horizontal, vertical).
pub fn save_flow(path: &Path, du: &Array2<f64>, dv: &Array2<f64>) -> Result<()> {
    let (h, w) = du.dim();
    if dv.dim() != (h, w) {
        return Err(Error::dim(format!("{:?}", du.dim()), format!("{:?}", dv.dim())));
    }
    let mut data = Vec::with_capacity(h * w * 2);
    for v in 0..h {
        for u in 0..w {
            data.push(du[(v, u)]);
            data.push(dv[(v, u)]);
        }
    }
    write_container(path, &[h, w, 2], &data, Dtype::F64)
}

pub fn load_flow(path: &Path) -> Result<(Array2<f64>, Array2<f64>)> {
    let c = read_container(path)?;
    let [h, w, two]: [usize; 3] = c
        .shape
        .as_slice()
        .try_into()
        .map_err(|_| Error::Container(format!("flow container must be rank 3, got {:?}", c.shape)))?;
    if two != 2 {
        return Err(Error::Container(format!(
            "flow container last axis must be 2, got {two}"
        )));
    }
    let mut du = Array2::zeros((h, w));
    let mut dv = Array2::zeros((h, w));
    for v in 0..h {
        for u in 0..w {
            du[(v, u)] = c.data[(v * w + u) * 2];
            dv[(v, u)] = c.data[(v * w + u) * 2 + 1];
        }
    }
    Ok((du, dv))
}

pub fn save_vec(path: &Path, data: &[f64]) -> Result<()> {
    write_container(path, &[data.len()], data, Dtype::F64)
}

pub fn load_vec(path: &Path) -> Result<Array1<f64>> {
    let c = read_container(path)?;
    if c.shape.len() != 1 {
        return Err(Error::Container(format!(
            "expected rank-1 container, got {:?}",
            c.shape
        )));
    }
    Ok(Array1::from_vec(c.data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn image_roundtrip_is_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("img.fbc");
        let img = ImageBuffer::from_fn(5, 4, 3, |v, u, c| {
            ((v * 31 + u * 17 + c * 7) as f64 / 97.0).fract()
        })
        .unwrap();
        save_image(&path, &img).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn f32_roundtrip_loses_only_precision() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("v.fbc");
        let data = [0.1, 0.25, 0.9999];
        write_container(&path, &[3], &data, Dtype::F32).unwrap();
        let c = read_container(&path).unwrap();
        assert_eq!(c.dtype, Dtype::F32);
        for (a, b) in c.data.iter().zip(data.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
        // 0.25 is exactly representable in f32
        assert_eq!(c.data[1], 0.25);
    }

    #[test]
    fn flow_roundtrip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("f.fbc");
        let du = Array2::from_shape_fn((3, 4), |(v, u)| v as f64 - u as f64 * 0.5);
        let dv = Array2::from_shape_fn((3, 4), |(v, u)| u as f64 + v as f64 * 0.25);
        save_flow(&path, &du, &dv).unwrap();
        let (du2, dv2) = load_flow(&path).unwrap();
        assert_eq!(du, du2);
        assert_eq!(dv, dv2);
    }

    #[test]
    fn rejects_malformed_containers() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.fbc");
        std::fs::write(&path, b"not a container").unwrap();
        assert!(matches!(read_container(&path), Err(Error::Container(_))));

        // valid magic, truncated payload
        let good = dir.path().join("good.fbc");
        write_container(&good, &[4], &[1.0, 2.0, 3.0, 4.0], Dtype::F64).unwrap();
        let mut bytes = std::fs::read(&good).unwrap();
        bytes.truncate(bytes.len() - 8);
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(read_container(&path), Err(Error::Container(_))));
    }

    #[test]
    fn shape_data_mismatch_rejected_on_write() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("x.fbc");
        assert!(write_container(&path, &[2, 2], &[1.0], Dtype::F64).is_err());
    }
}
