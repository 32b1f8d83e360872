use std::path::Path;

use log::warn;

use super::PointCloud;
use crate::error::{Error, Result};

const RECORD: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ScanStats {
    /// Records whose reflectance fell outside `[0, 1]` and was clamped.
    pub clamped_reflectance: usize,
}

/// Decodes little-endian `(x, y, z, r)` float32 quadruples.
pub fn decode_kitti(bytes: &[u8]) -> Result<(PointCloud, ScanStats)> {
    if !bytes.len().is_multiple_of(RECORD) {
        return Err(Error::SizeNotMultipleOf16(bytes.len()));
    }
    let n = bytes.len() / RECORD;
    let mut points = Vec::with_capacity(n);
    let mut reflectance = Vec::with_capacity(n);
    let mut stats = ScanStats::default();
    for (index, rec) in bytes.chunks_exact(RECORD).enumerate() {
        let f = |i: usize| f32::from_le_bytes([rec[4 * i], rec[4 * i + 1], rec[4 * i + 2], rec[4 * i + 3]]);
        let (x, y, z, r) = (f(0), f(1), f(2), f(3));
        if ![x, y, z, r].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteValue { index });
        }
        let clamped = r.clamp(0.0, 1.0);
        if clamped != r {
            stats.clamped_reflectance += 1;
        }
        points.push([x, y, z]);
        reflectance.push(clamped);
    }
    Ok((PointCloud { points, reflectance }, stats))
}

pub fn encode_kitti(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * RECORD);
    for (p, r) in cloud.iter() {
        for v in [p[0], p[1], p[2], r] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Reads a velodyne scan; clamped reflectance values are logged.
pub fn read_kitti_bin(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (cloud, stats) = decode_kitti(&bytes)?;
    if stats.clamped_reflectance > 0 {
        warn!(
            "{}: clamped {} reflectance values into [0, 1]",
            path.display(),
            stats.clamped_reflectance
        );
    }
    Ok(cloud)
}

pub fn write_kitti_bin(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_kitti(cloud)).map_err(|e| Error::io(path, e))
}
