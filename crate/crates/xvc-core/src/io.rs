//! File formats: the flat binary tensor format used for fixtures, and
//! PGM/PPM image export for visual inspection.
//!
//! Tensor files: magic `XVT1`, then rank and each dimension as 64-bit
//! little-endian unsigned integers, then the payload as 64-bit IEEE doubles,
//! row-major. Validity masks ride in sidecar files (same format, values 0/1)
//! named `<stem>.mask.xvt` next to `<stem>.xvt`.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"XVT1";

/// Plain tensor payload as read from or written to disk.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorData {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl TensorData {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(Error::Format(format!(
                "tensor data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(TensorData { shape, data })
    }
}

pub fn write_tensor(path: &Path, shape: &[usize], data: &[f64]) -> Result<()> {
    let numel: usize = shape.iter().product();
    if data.len() != numel {
        return Err(Error::Format(format!(
            "refusing to write {} values with shape {:?}",
            data.len(),
            shape
        )));
    }
    let mut buf = Vec::with_capacity(4 + 8 * (1 + shape.len()) + 8 * data.len());
    buf.extend_from_slice(TENSOR_MAGIC);
    buf.extend_from_slice(&(shape.len() as u64).to_le_bytes());
    for &d in shape {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<TensorData> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    parse_tensor(&bytes).map_err(|e| Error::Format(format!("{}: {}", path.display(), e)))
}

fn parse_tensor(bytes: &[u8]) -> std::result::Result<TensorData, String> {
    if bytes.len() < 12 || &bytes[0..4] != TENSOR_MAGIC {
        return Err("missing XVT1 magic".into());
    }
    let mut off = 4;
    let read_u64 = |off: &mut usize| -> std::result::Result<u64, String> {
        if *off + 8 > bytes.len() {
            return Err("truncated header".into());
        }
        let v = u64::from_le_bytes(bytes[*off..*off + 8].try_into().unwrap());
        *off += 8;
        Ok(v)
    };
    let rank = read_u64(&mut off)? as usize;
    if rank > 16 {
        return Err(format!("implausible rank {rank}"));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(read_u64(&mut off)? as usize);
    }
    let numel: usize = shape.iter().product();
    if bytes.len() != off + 8 * numel {
        return Err(format!(
            "payload length {} does not match shape {:?}",
            bytes.len() - off,
            shape
        ));
    }
    let mut data = Vec::with_capacity(numel);
    for i in 0..numel {
        let start = off + 8 * i;
        data.push(f64::from_le_bytes(bytes[start..start + 8].try_into().unwrap()));
    }
    Ok(TensorData { shape, data })
}

/// Sidecar path for a validity mask: `depth.xvt` -> `depth.mask.xvt`.
pub fn mask_path(tensor_path: &Path) -> PathBuf {
    let stem = tensor_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    tensor_path.with_file_name(format!("{stem}.mask.xvt"))
}

pub fn write_mask(path: &Path, shape: &[usize], mask: &[bool]) -> Result<()> {
    let data: Vec<f64> = mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    write_tensor(path, shape, &data)
}

pub fn read_mask(path: &Path) -> Result<(Vec<usize>, Vec<bool>)> {
    let t = read_tensor(path)?;
    let mask = t.data.iter().map(|&v| v != 0.0).collect();
    Ok((t.shape, mask))
}

/// Write a depth map with its validity-mask sidecar.
pub fn write_depth(path: &Path, depth: &crate::camera::DepthMap) -> Result<()> {
    write_tensor(path, &[depth.height, depth.width], &depth.values)?;
    write_mask(&mask_path(path), &[depth.height, depth.width], &depth.valid)
}

/// Read a depth map; the validity mask comes from the sidecar when present,
/// otherwise every pixel is valid.
pub fn read_depth(path: &Path) -> Result<crate::camera::DepthMap> {
    let t = read_tensor(path)?;
    let [h, w] = t.shape[..] else {
        return Err(Error::Format(format!(
            "{}: depth must be rank 2, got {:?}",
            path.display(),
            t.shape
        )));
    };
    let sidecar = mask_path(path);
    let valid = if sidecar.exists() {
        let (mshape, mask) = read_mask(&sidecar)?;
        if mshape != t.shape {
            return Err(Error::Format(format!(
                "{}: mask shape {:?} does not match depth {:?}",
                sidecar.display(),
                mshape,
                t.shape
            )));
        }
        mask
    } else {
        vec![true; h * w]
    };
    crate::camera::DepthMap::new(h, w, t.data, valid)
}

/// 8-bit binary PGM (grayscale). Values are clamped to [0, 1] and quantized.
pub fn write_pgm(path: &Path, width: usize, height: usize, values: &[f64]) -> Result<()> {
    if values.len() != width * height {
        return Err(Error::Format(format!(
            "pgm: {} values for {}x{}",
            values.len(),
            width,
            height
        )));
    }
    let mut buf = format!("P5\n{width} {height}\n255\n").into_bytes();
    buf.extend(values.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    let mut file = fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

/// 8-bit binary PPM (RGB interleaved). Grayscale inputs can be replicated by
/// the caller.
pub fn write_ppm(path: &Path, width: usize, height: usize, rgb: &[f64]) -> Result<()> {
    if rgb.len() != width * height * 3 {
        return Err(Error::Format(format!(
            "ppm: {} values for {}x{}x3",
            rgb.len(),
            width,
            height
        )));
    }
    let mut buf = format!("P6\n{width} {height}\n255\n").into_bytes();
    buf.extend(rgb.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    let mut file = fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_roundtrip() {
        let dir = std::env::temp_dir().join("xvc_io_test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.xvt");
        let shape = vec![2, 3];
        let data = vec![1.0, -2.5, 3.25, 0.0, 1e-300, 7.125];
        write_tensor(&path, &shape, &data).unwrap();
        let back = read_tensor(&path).unwrap();
        assert_eq!(back.shape, shape);
        assert_eq!(back.data, data);
    }

    #[test]
    fn rank_zero_roundtrip() {
        let dir = std::env::temp_dir().join("xvc_io_test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("scalar.xvt");
        write_tensor(&path, &[], &[42.0]).unwrap();
        let back = read_tensor(&path).unwrap();
        assert!(back.shape.is_empty());
        assert_eq!(back.data, vec![42.0]);
    }

    #[test]
    fn corrupt_magic_rejected() {
        let dir = std::env::temp_dir().join("xvc_io_test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.xvt");
        fs::write(&path, b"NOPE").unwrap();
        assert!(read_tensor(&path).is_err());
    }

    #[test]
    fn mask_sidecar_naming() {
        assert_eq!(
            mask_path(Path::new("/a/b/depth.xvt")),
            PathBuf::from("/a/b/depth.mask.xvt")
        );
    }
}
