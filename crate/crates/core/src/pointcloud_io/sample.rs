use std::path::Path;

use super::npy::{self, Dtype};
use crate::class::{Class, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::range_projection::image::{Channel, RangeImage, BASE_CHANNELS};

/// Channels stored per pixel: x, y, z, intensity, depth, label.
const SAMPLE_CHANNELS: usize = 6;

/// Largest distance from an integer a stored label may have.
const LABEL_TOLERANCE: f64 = 0.01;

/// Range image with a per-pixel class map.
///
/// Invalid pixels always carry label 0.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub image: RangeImage,
    labels: Vec<u8>,
}

impl LabeledSample {
    pub fn new(image: RangeImage, mut labels: Vec<u8>) -> Result<Self> {
        if labels.len() != image.pixel_count() {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for {} pixels",
                labels.len(),
                image.pixel_count()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
            return Err(Error::UnsupportedDtypeOrShape(format!("label {bad} out of range")));
        }
        for (l, &m) in labels.iter_mut().zip(image.mask()) {
            if !m {
                *l = 0;
            }
        }
        Ok(LabeledSample { image, labels })
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn height(&self) -> usize {
        self.image.height()
    }

    pub fn width(&self) -> usize {
        self.image.width()
    }

    /// Valid-pixel count per class id.
    pub fn class_counts(&self) -> [u64; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for (&l, &m) in self.labels.iter().zip(self.image.mask()) {
            if m {
                counts[l as usize] += 1;
            }
        }
        counts
    }

    pub fn label_at(&self, row: usize, col: usize) -> Option<Class> {
        let at = self.image.index(row, col);
        self.image.mask()[at]
            .then(|| Class::from_id(self.labels[at]))
            .flatten()
    }
}

/// Decodes an `(H, W, 6)` array of x, y, z, intensity, depth, label.
///
/// A pixel is valid where depth > 0; its point index is its rank among
/// valid pixels in row-major order.
pub fn decode_labeled_sample(bytes: &[u8]) -> Result<LabeledSample> {
    let arr = npy::parse(bytes)?;
    if !matches!(arr.dtype, Dtype::F32 | Dtype::F64) {
        return Err(Error::UnsupportedDtypeOrShape(format!("dtype {:?}", arr.dtype)));
    }
    let [h, w, SAMPLE_CHANNELS] = arr.shape[..] else {
        return Err(Error::UnsupportedDtypeOrShape(format!(
            "shape {:?}, expected (H, W, {SAMPLE_CHANNELS})",
            arr.shape
        )));
    };
    if h == 0 || w == 0 {
        return Err(Error::UnsupportedDtypeOrShape(format!("shape {:?}", arr.shape)));
    }
    let values = arr.to_f64();
    let n = h * w;
    let mut planes = vec![vec![0f32; n]; 5];
    let mut labels = vec![0u8; n];
    let mut mask = vec![false; n];
    let mut point_index = vec![None; n];
    let mut next = 0u32;
    for (p, px) in values.chunks_exact(SAMPLE_CHANNELS).enumerate() {
        if px.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { index: p });
        }
        let rounded = px[5].round();
        if (px[5] - rounded).abs() > LABEL_TOLERANCE || rounded < 0.0 || rounded >= NUM_CLASSES as f64 {
            return Err(Error::UnsupportedDtypeOrShape(format!(
                "label {} at pixel {p} is not a class id",
                px[5]
            )));
        }
        if px[4] > 0.0 {
            mask[p] = true;
            point_index[p] = Some(next);
            next += 1;
            labels[p] = rounded as u8;
            for (c, plane) in planes.iter_mut().enumerate() {
                plane[p] = px[c] as f32;
            }
        }
    }
    let channels = BASE_CHANNELS
        .iter()
        .zip(planes)
        .map(|(name, data)| Channel {
            name: name.to_string(),
            data,
        })
        .collect();
    let image = RangeImage::from_parts(h, w, channels, mask, point_index)?;
    LabeledSample::new(image, labels)
}

pub fn encode_labeled_sample(sample: &LabeledSample) -> Result<Vec<u8>> {
    let img = &sample.image;
    let planes = BASE_CHANNELS
        .iter()
        .map(|name| img.channel(name))
        .collect::<Result<Vec<_>>>()?;
    let mut data = Vec::with_capacity(img.pixel_count() * SAMPLE_CHANNELS * 4);
    for p in 0..img.pixel_count() {
        for plane in &planes {
            data.extend_from_slice(&plane[p].to_le_bytes());
        }
        data.extend_from_slice(&(sample.labels[p] as f32).to_le_bytes());
    }
    Ok(npy::encode(
        Dtype::F32,
        &[img.height(), img.width(), SAMPLE_CHANNELS],
        &data,
    ))
}

pub fn read_labeled_sample(path: impl AsRef<Path>) -> Result<LabeledSample> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_labeled_sample(&bytes)
}

pub fn write_labeled_sample(sample: &LabeledSample, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_labeled_sample(sample)?).map_err(|e| Error::io(path, e))
}
