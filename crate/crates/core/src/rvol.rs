//! The RVOL on-disk format: a JSON sidecar (`name.rvol`) describing shape,
//! dtype, spacing and ordering, plus a raw little-endian payload stored next
//! to it as `name.raw`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{element_count, Mask, Volume};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    U8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RvolHeader {
    pub shape: Vec<usize>,
    pub dtype: Dtype,
    pub spacing: Vec<f64>,
    pub order: String,
}

const ROW_MAJOR: &str = "row-major";

/// Path of the binary payload belonging to a sidecar.
pub fn payload_path(sidecar: &Path) -> PathBuf {
    sidecar.with_extension("raw")
}

fn write_pair(path: &Path, header: &RvolHeader, payload: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let json = serde_json::to_vec_pretty(header)?;
    fs::write(path, json).map_err(|e| Error::io(path, e))?;
    let raw = payload_path(path);
    fs::write(&raw, payload).map_err(|e| Error::io(&raw, e))
}

fn read_pair(path: &Path, expected: Dtype) -> Result<(RvolHeader, Vec<u8>)> {
    let json = fs::read(path).map_err(|e| Error::io(path, e))?;
    let header: RvolHeader = serde_json::from_slice(&json)?;
    if header.order != ROW_MAJOR {
        return Err(Error::InvalidVolume(format!(
            "{}: unsupported order {:?}",
            path.display(),
            header.order
        )));
    }
    if header.dtype != expected {
        return Err(Error::InvalidVolume(format!(
            "{}: expected dtype {:?}, found {:?}",
            path.display(),
            expected,
            header.dtype
        )));
    }
    let raw = payload_path(path);
    let payload = fs::read(&raw).map_err(|e| Error::io(&raw, e))?;
    let width = match expected {
        Dtype::F32 => 4,
        Dtype::U8 => 1,
    };
    if payload.len() != element_count(&header.shape) * width {
        return Err(Error::InvalidVolume(format!(
            "{}: payload has {} bytes, header implies {}",
            raw.display(),
            payload.len(),
            element_count(&header.shape) * width
        )));
    }
    Ok((header, payload))
}

pub fn write_volume(path: &Path, v: &Volume) -> Result<()> {
    let header = RvolHeader {
        shape: v.shape().to_vec(),
        dtype: Dtype::F32,
        spacing: v.spacing().to_vec(),
        order: ROW_MAJOR.into(),
    };
    let payload: Vec<u8> = v
        .data()
        .iter()
        .flat_map(|&x| (x as f32).to_le_bytes())
        .collect();
    write_pair(path, &header, &payload)
}

pub fn read_volume(path: &Path) -> Result<Volume> {
    let (header, payload) = read_pair(path, Dtype::F32)?;
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Volume::new(header.shape, data)?.with_spacing(header.spacing)
}

pub fn write_mask(path: &Path, m: &Mask, spacing: &[f64]) -> Result<()> {
    let header = RvolHeader {
        shape: m.shape().to_vec(),
        dtype: Dtype::U8,
        spacing: spacing.to_vec(),
        order: ROW_MAJOR.into(),
    };
    write_pair(path, &header, m.data())
}

pub fn read_mask(path: &Path) -> Result<Mask> {
    read_mask_with_spacing(path).map(|(m, _)| m)
}

/// Mask plus the voxel spacing recorded in its sidecar.
pub fn read_mask_with_spacing(path: &Path) -> Result<(Mask, Vec<f64>)> {
    let (header, payload) = read_pair(path, Dtype::U8)?;
    if header.spacing.len() != header.shape.len() {
        return Err(Error::InvalidVolume(format!(
            "{}: spacing {:?} does not match shape {:?}",
            path.display(),
            header.spacing,
            header.shape
        )));
    }
    Ok((Mask::new(header.shape, payload)?, header.spacing))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn volume_round_trip_through_f32() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.rvol");
        let v = Volume::from_fn(vec![3, 4, 5], |i| (i[0] * 20 + i[1] * 5 + i[2]) as f64 * 0.25)
            .unwrap()
            .with_spacing(vec![1.0, 0.5, 2.0])
            .unwrap();
        write_volume(&path, &v).unwrap();
        assert_eq!(read_volume(&path).unwrap(), v);
        let header: serde_json::Value =
            serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
        assert_eq!(header["dtype"], "f32");
        assert_eq!(header["order"], "row-major");
        assert_eq!(fs::read(payload_path(&path)).unwrap().len(), 60 * 4);
    }

    #[test]
    fn mask_round_trip_and_dtype_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.rvol");
        let m = Mask::new(vec![2, 3], vec![0, 1, 1, 0, 0, 1]).unwrap();
        write_mask(&path, &m, &[1.0, 1.0]).unwrap();
        assert_eq!(read_mask(&path).unwrap(), m);
        assert!(read_volume(&path).is_err());
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.rvol");
        write_volume(&path, &Volume::filled(vec![4, 4], 1.0).unwrap()).unwrap();
        fs::write(payload_path(&path), [0u8; 8]).unwrap();
        assert!(read_volume(&path).is_err());
    }
}
