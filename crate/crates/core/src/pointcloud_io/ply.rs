use std::fmt::Write as _;
use std::path::Path;

use super::PointCloud;
use crate::class::Class;
use crate::error::{Error, Result};

/// ASCII PLY with `x y z` floats and `red green blue` bytes per vertex.
pub fn encode_colored_ply(cloud: &PointCloud, labels: &[Class]) -> Result<String> {
    if labels.len() != cloud.len() {
        return Err(Error::LengthMismatch(format!(
            "{} labels for {} points",
            labels.len(),
            cloud.len()
        )));
    }
    let mut out = format!(
        "ply\nformat ascii 1.0\nelement vertex {}\n\
         property float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        cloud.len()
    );
    for (p, class) in cloud.points().iter().zip(labels) {
        let [r, g, b] = class.color();
        // `{}` on f32 prints the shortest string that parses back exactly
        writeln!(out, "{} {} {} {r} {g} {b}", p[0], p[1], p[2]).expect("writing to a String");
    }
    Ok(out)
}

pub fn write_colored_ply(cloud: &PointCloud, labels: &[Class], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = encode_colored_ply(cloud, labels)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
