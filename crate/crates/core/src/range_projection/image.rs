use std::path::Path;

use crate::error::{Error, Result};

pub const X: &str = "x";
pub const Y: &str = "y";
pub const Z: &str = "z";
pub const REFLECTANCE: &str = "reflectance";
pub const DEPTH: &str = "depth";

/// Channels every projected image carries, in storage order.
pub const BASE_CHANNELS: [&str; 5] = [X, Y, Z, REFLECTANCE, DEPTH];

#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    pub name: String,
    pub data: Vec<f32>,
}

/// `height x width` grid of named per-pixel planes with a validity mask.
///
/// Channels are exactly zero wherever the mask is unset, and `point_index`
/// maps each valid pixel to the point it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeImage {
    height: usize,
    width: usize,
    channels: Vec<Channel>,
    mask: Vec<bool>,
    point_index: Vec<Option<u32>>,
}

impl RangeImage {
    /// All-invalid image carrying the base channels.
    pub fn empty(height: usize, width: usize) -> Self {
        let n = height * width;
        RangeImage {
            height,
            width,
            channels: BASE_CHANNELS
                .iter()
                .map(|name| Channel {
                    name: name.to_string(),
                    data: vec![0.0; n],
                })
                .collect(),
            mask: vec![false; n],
            point_index: vec![None; n],
        }
    }

    /// Builds an image from explicit planes; enforces the zero-outside-mask
    /// rule by clearing channels at invalid pixels.
    pub fn from_parts(
        height: usize,
        width: usize,
        mut channels: Vec<Channel>,
        mask: Vec<bool>,
        point_index: Vec<Option<u32>>,
    ) -> Result<Self> {
        let n = height * width;
        if mask.len() != n || point_index.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "mask/point_index of {}/{} entries for a {height}x{width} image",
                mask.len(),
                point_index.len()
            )));
        }
        for (i, c) in channels.iter().enumerate() {
            if c.data.len() != n {
                return Err(Error::ShapeMismatch(format!(
                    "channel {} has {} values, expected {n}",
                    c.name,
                    c.data.len()
                )));
            }
            if channels[..i].iter().any(|o| o.name == c.name) {
                return Err(Error::ShapeMismatch(format!("duplicate channel {}", c.name)));
            }
        }
        for c in &mut channels {
            for (v, &m) in c.data.iter_mut().zip(&mask) {
                if !m {
                    *v = 0.0;
                }
            }
        }
        let point_index = point_index
            .into_iter()
            .zip(&mask)
            .map(|(p, &m)| if m { p } else { None })
            .collect();
        Ok(RangeImage {
            height,
            width,
            channels,
            mask,
            point_index,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.mask[self.index(row, col)]
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn point_index(&self) -> &[Option<u32>] {
        &self.point_index
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn channel_names(&self) -> impl Iterator<Item = &str> {
        self.channels.iter().map(|c| c.name.as_str())
    }

    pub fn channel(&self, name: &str) -> Result<&[f32]> {
        self.channels
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.data.as_slice())
            .ok_or_else(|| Error::MissingChannel(name.to_string()))
    }

    /// Appends a plane, zeroing it at invalid pixels.
    pub fn add_channel(&mut self, name: impl Into<String>, mut data: Vec<f32>) -> Result<()> {
        let name = name.into();
        if data.len() != self.pixel_count() {
            return Err(Error::ShapeMismatch(format!(
                "channel {name} has {} values, expected {}",
                data.len(),
                self.pixel_count()
            )));
        }
        if self.channels.iter().any(|c| c.name == name) {
            return Err(Error::ShapeMismatch(format!("duplicate channel {name}")));
        }
        for (v, &m) in data.iter_mut().zip(&self.mask) {
            if !m {
                *v = 0.0;
            }
        }
        self.channels.push(Channel { name, data });
        Ok(())
    }

    pub(crate) fn set_pixel(&mut self, at: usize, point: [f32; 3], reflectance: f32, depth: f32, index: u32) {
        self.mask[at] = true;
        self.point_index[at] = Some(index);
        for (c, v) in self.channels.iter_mut().zip([point[0], point[1], point[2], reflectance, depth]) {
            c.data[at] = v;
        }
    }

    /// Serializes as a text manifest followed by raw planes:
    ///
    /// ```text
    /// rangeseg-rangeimage 1
    /// height <H>
    /// width <W>
    /// channels <name>...
    /// end
    /// ```
    ///
    /// then one little-endian f32 plane per channel, the mask as one byte
    /// per pixel, and the point index as little-endian i32 (-1 for none),
    /// all row-major.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = format!(
            "{IMAGE_MAGIC} 1\nheight {}\nwidth {}\nchannels",
            self.height, self.width
        )
        .into_bytes();
        for c in &self.channels {
            out.push(b' ');
            out.extend_from_slice(c.name.as_bytes());
        }
        out.extend_from_slice(b"\nend\n");
        for c in &self.channels {
            for v in &c.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend(self.mask.iter().map(|&m| m as u8));
        for p in &self.point_index {
            let v = p.map_or(-1i32, |i| i as i32);
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Malformed(format!("range image: {m}"));
        let mut pos = 0;
        let mut lines = Vec::new();
        while lines.last() != Some(&"end") {
            let rest = &bytes[pos..];
            let end = rest
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| bad("truncated manifest"))?;
            let line = std::str::from_utf8(&rest[..end]).map_err(|_| bad("manifest is not UTF-8"))?;
            lines.push(line);
            pos += end + 1;
            if lines.len() > 5 {
                return Err(bad("manifest too long"));
            }
        }
        let [magic, height, width, channels, _end] = lines[..] else {
            return Err(bad("unexpected manifest layout"));
        };
        if magic != format!("{IMAGE_MAGIC} 1") {
            return Err(bad("not a range image file"));
        }
        let number = |line: &str, key: &str| -> Result<usize> {
            line.strip_prefix(key)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| bad(&format!("bad {key} line")))
        };
        let height = number(height, "height ")?;
        let width = number(width, "width ")?;
        let names: Vec<&str> = channels
            .strip_prefix("channels")
            .ok_or_else(|| bad("bad channels line"))?
            .split_whitespace()
            .collect();
        let n = height
            .checked_mul(width)
            .ok_or_else(|| bad("image too large"))?;
        let expected = n
            .checked_mul(names.len() * 4 + 1 + 4)
            .ok_or_else(|| bad("image too large"))?;
        let payload = &bytes[pos..];
        if payload.len() != expected {
            return Err(bad(&format!("payload is {} bytes, expected {expected}", payload.len())));
        }
        let mut planes = payload.chunks_exact(n * 4);
        let channels = names
            .iter()
            .map(|name| Channel {
                name: name.to_string(),
                data: planes
                    .next()
                    .expect("length checked")
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                    .collect(),
            })
            .collect();
        let rest = &payload[names.len() * n * 4..];
        let mask = rest[..n]
            .iter()
            .map(|&b| match b {
                0 => Ok(false),
                1 => Ok(true),
                _ => Err(bad("mask byte outside {0, 1}")),
            })
            .collect::<Result<Vec<_>>>()?;
        let point_index = rest[n..]
            .chunks_exact(4)
            .map(|b| {
                let v = i32::from_le_bytes([b[0], b[1], b[2], b[3]]);
                u32::try_from(v).ok()
            })
            .collect();
        RangeImage::from_parts(height, width, channels, mask, point_index)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

const IMAGE_MAGIC: &str = "rangeseg-rangeimage";

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn serialization_round_trip() {
        let mut img = RangeImage::empty(2, 3);
        img.set_pixel(1, [1.0, -2.0, 0.5], 0.25, 2.3, 7);
        img.set_pixel(5, [-0.0, 3.0, 1.5], 1.0, 3.4, 2);
        img.add_channel("feature0", vec![9.0; 6]).unwrap();
        let back = RangeImage::from_bytes(&img.to_bytes()).unwrap();
        assert_eq!(back, img);
        assert_eq!(back.channel("feature0").unwrap(), &[0.0, 9.0, 0.0, 0.0, 0.0, 9.0]);
    }

    #[test]
    fn corrupt_payload_is_rejected() {
        let bytes = RangeImage::empty(2, 2).to_bytes();
        assert!(RangeImage::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(RangeImage::from_bytes(b"nonsense").is_err());
        let mut flipped = bytes.clone();
        let mask_at = bytes.len() - 4 * 4 - 4;
        flipped[mask_at] = 7;
        assert!(RangeImage::from_bytes(&flipped).is_err());
    }

    #[test]
    fn missing_channel_is_reported() {
        let img = RangeImage::empty(1, 1);
        assert!(matches!(img.channel("feature3"), Err(Error::MissingChannel(_))));
    }
}
