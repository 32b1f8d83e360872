//! Per-point features learned from the 8-connected neighborhood.
//!
//! Every neighbor offset goes through a shared MLP, the eight results are
//! max-pooled, the pooled vector is joined with the centre point's
//! (x, y, z, r) and a second MLP maps it to `N` features. All pixels of all
//! scans in a batch go through as one set of rows.

use rand::Rng;
use rangeseg_autograd::{Scalar, Tensor, Var};

use crate::error::{Error, Result};
use crate::layers::{Builder, Dense, Norm, Pass};
use crate::neighborhood::{build_neighbor_field, CoordMode, SLOTS};
use crate::range_projection::image::{self, RangeImage};

/// Centre channels appended to the pooled neighbor features.
pub const CENTER_CHANNELS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractorConfig {
    /// Output features per pixel (`N`).
    pub features: usize,
    /// Widths of the shared neighbor MLP; its input is a 3-vector.
    pub mlp1: Vec<usize>,
    /// Hidden widths of the second MLP, before the final linear layer to `N`.
    pub mlp2: Vec<usize>,
    pub coords: CoordMode,
    /// Let neighborhoods wrap across the azimuth seam.
    pub wrap: bool,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        ExtractorConfig {
            features: 3,
            mlp1: vec![8, 16],
            mlp2: vec![16],
            coords: CoordMode::Relative,
            wrap: false,
        }
    }
}

impl ExtractorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.features == 0 || self.mlp1.is_empty() || self.mlp1.iter().chain(&self.mlp2).any(|&w| w == 0) {
            return Err(Error::InvalidConfig(format!(
                "extractor widths must be positive with a non-empty first MLP: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn pooled_width(&self) -> usize {
        *self.mlp1.last().expect("validated")
    }
}

/// Extractor inputs of one scan: `[H*W, 8, 3]` neighbor coordinates and
/// `[H*W, 4]` centre (x, y, z, r), both zero at invalid pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanInputs {
    pub height: usize,
    pub width: usize,
    pub neighbors: Vec<f32>,
    pub centers: Vec<f32>,
}

impl ScanInputs {
    pub fn new(img: &RangeImage, coords: CoordMode, wrap: bool) -> Result<Self> {
        let field = build_neighbor_field(img, coords, wrap)?;
        let planes = [image::X, image::Y, image::Z, image::REFLECTANCE]
            .map(|name| img.channel(name))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let mut centers = Vec::with_capacity(img.pixel_count() * CENTER_CHANNELS);
        for i in 0..img.pixel_count() {
            centers.extend(planes.iter().map(|p| p[i]));
        }
        Ok(ScanInputs {
            height: img.height(),
            width: img.width(),
            neighbors: field.values,
            centers,
        })
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }
}

/// Stacks scans of equal size into `([P, 8, 3], [P, 4])` tensors.
pub fn batch_tensors<T: Scalar>(scans: &[&ScanInputs]) -> Result<(Tensor<T>, Tensor<T>)> {
    let Some(first) = scans.first() else {
        return Err(Error::EmptyDataset);
    };
    if let Some(s) = scans.iter().find(|s| (s.height, s.width) != (first.height, first.width)) {
        return Err(Error::ShapeHeterogeneity(format!(
            "{}x{} and {}x{}",
            first.height, first.width, s.height, s.width
        )));
    }
    let p = first.pixel_count() * scans.len();
    let cast = |v: &f32| T::from_f32_lossy(*v);
    let neighbors = scans.iter().flat_map(|s| s.neighbors.iter().map(cast)).collect();
    let centers = scans.iter().flat_map(|s| s.centers.iter().map(cast)).collect();
    Ok((
        Tensor::new(&[p, SLOTS, 3], neighbors)?,
        Tensor::new(&[p, CENTER_CHANNELS], centers)?,
    ))
}

#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    config: ExtractorConfig,
    mlp1: Vec<(Dense, Norm)>,
    mlp2: Vec<(Dense, Norm)>,
    out: Dense,
}

/// Handles produced by [`FeatureExtractor::forward`].
#[derive(Debug, Clone, Copy)]
pub struct ExtractorOutput {
    /// `[B, N, H, W]` feature image.
    pub features: Var,
    /// `[P, C]` max-pooled neighbor features.
    pub pooled: Var,
}

impl FeatureExtractor {
    pub(crate) fn build<T: Scalar, R: Rng + ?Sized>(
        config: &ExtractorConfig,
        b: &mut Builder<'_, T, R>,
    ) -> Result<Self> {
        config.validate()?;
        let mut mlp1 = Vec::new();
        let mut width = 3;
        for (i, &w) in config.mlp1.iter().enumerate() {
            let name = format!("extractor.mlp1.{i}");
            mlp1.push((b.dense(&name, width, w)?, b.norm(&format!("{name}.bn"), w)?));
            width = w;
        }
        let mut mlp2 = Vec::new();
        width += CENTER_CHANNELS;
        for (i, &w) in config.mlp2.iter().enumerate() {
            let name = format!("extractor.mlp2.{i}");
            mlp2.push((b.dense(&name, width, w)?, b.norm(&format!("{name}.bn"), w)?));
            width = w;
        }
        let out = b.dense("extractor.out", width, config.features)?;
        Ok(FeatureExtractor {
            config: config.clone(),
            mlp1,
            mlp2,
            out,
        })
    }

    pub fn config(&self) -> &ExtractorConfig {
        &self.config
    }

    /// `neighbors: [B*H*W, 8, 3]`, `centers: [B*H*W, 4]` (see [`batch_tensors`]).
    pub fn forward<T: Scalar>(
        &self,
        pass: &mut Pass<'_, T>,
        neighbors: Var,
        centers: Var,
        batch: usize,
        height: usize,
        width: usize,
    ) -> Result<ExtractorOutput> {
        let p = batch * height * width;
        if pass.tape.shape(neighbors) != [p, SLOTS, 3] || pass.tape.shape(centers) != [p, CENTER_CHANNELS] {
            return Err(Error::ShapeMismatch(format!(
                "extractor inputs {:?} and {:?} for {batch}x{height}x{width}",
                pass.tape.shape(neighbors),
                pass.tape.shape(centers)
            )));
        }
        let mut x = pass.tape.reshape(neighbors, &[p * SLOTS, 3])?;
        for (dense, norm) in &self.mlp1 {
            x = pass.dense(dense, x)?;
            x = pass.tape.relu(x);
            x = pass.norm(norm, x)?;
        }
        let c = self.config.pooled_width();
        let sets = pass.tape.reshape(x, &[p, SLOTS, c])?;
        let pooled = pass.tape.max_over_set(sets)?;
        let mut x = pass.tape.concat(pooled, centers, 1)?;
        for (dense, norm) in &self.mlp2 {
            x = pass.dense(dense, x)?;
            x = pass.tape.relu(x);
            x = pass.norm(norm, x)?;
        }
        let x = pass.dense(&self.out, x)?;
        let x = pass.tape.reshape(x, &[batch, height, width, self.config.features])?;
        let features = pass.tape.nhwc_to_nchw(x)?;
        Ok(ExtractorOutput { features, pooled })
    }
}
