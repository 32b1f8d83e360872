//! Encoder-decoder segmenter with skip connections.
//!
//! Stage `s` of the encoder works at `base_channels * 2^s` channels; each
//! decoder stage upsamples, concatenates the matching encoder map and runs
//! another double convolution. Convolutions are zero-padded so the logits
//! keep the input's spatial size.

use rand::Rng;
use rangeseg_autograd::{Scalar, Var};

use crate::class::NUM_CLASSES;
use crate::error::{Error, Result};
use crate::layers::{Builder, Conv, Norm, Pass, UpConv};

#[derive(Debug, Clone, PartialEq)]
pub struct UNetConfig {
    /// Number of down/up-sampling stages (`D`).
    pub depth: usize,
    /// Channels of the first encoder stage (`C0`).
    pub base_channels: usize,
    pub in_channels: usize,
    /// Class count (`K`).
    pub out_channels: usize,
    /// Batch-normalize after every 3x3 convolution (conv, norm, ReLU).
    pub batch_norm: bool,
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig {
            depth: 3,
            base_channels: 16,
            in_channels: 3,
            out_channels: NUM_CLASSES,
            batch_norm: true,
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.in_channels == 0 || self.out_channels == 0 || self.depth > 16 {
            return Err(Error::InvalidConfig(format!("unet: {self:?}")));
        }
        Ok(())
    }

    /// Channels of encoder stage `s`; `s = depth` is the bottleneck.
    pub fn stage_channels(&self, s: usize) -> usize {
        self.base_channels << s
    }

    /// Spatial sizes must be multiples of this.
    pub fn divisor(&self) -> usize {
        1 << self.depth
    }

    pub fn check_input(&self, height: usize, width: usize) -> Result<()> {
        let d = self.divisor();
        if !height.is_multiple_of(d) || !width.is_multiple_of(d) || height == 0 || width == 0 {
            return Err(Error::IndivisibleSpatialDims {
                height,
                width,
                divisor: d,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct DoubleConv {
    convs: [(Conv, Option<Norm>); 2],
}

impl DoubleConv {
    fn build<T: Scalar, R: Rng + ?Sized>(
        b: &mut Builder<'_, T, R>,
        name: &str,
        cin: usize,
        cout: usize,
        batch_norm: bool,
    ) -> Result<Self> {
        let mut layer = |i: usize, cin: usize| -> Result<(Conv, Option<Norm>)> {
            let name = format!("{name}.conv{i}");
            let conv = b.conv(&name, cin, cout, 3)?;
            let norm = batch_norm.then(|| b.norm(&format!("{name}.bn"), cout)).transpose()?;
            Ok((conv, norm))
        };
        Ok(DoubleConv {
            convs: [layer(0, cin)?, layer(1, cout)?],
        })
    }

    fn forward<T: Scalar>(&self, pass: &mut Pass<'_, T>, mut x: Var) -> Result<Var> {
        for (conv, norm) in &self.convs {
            x = pass.conv(conv, x)?;
            if let Some(norm) = norm {
                x = pass.norm(norm, x)?;
            }
            x = pass.tape.relu(x);
        }
        Ok(x)
    }
}

#[derive(Debug, Clone)]
pub struct UNet {
    config: UNetConfig,
    down: Vec<DoubleConv>,
    bottleneck: DoubleConv,
    up: Vec<(UpConv, DoubleConv)>,
    head: Conv,
}

impl UNet {
    pub(crate) fn build<T: Scalar, R: Rng + ?Sized>(config: &UNetConfig, b: &mut Builder<'_, T, R>) -> Result<Self> {
        config.validate()?;
        let bn = config.batch_norm;
        let mut down = Vec::new();
        let mut cin = config.in_channels;
        for s in 0..config.depth {
            let c = config.stage_channels(s);
            down.push(DoubleConv::build(b, &format!("unet.down{s}"), cin, c, bn)?);
            cin = c;
        }
        let bottleneck = DoubleConv::build(b, "unet.bottleneck", cin, config.stage_channels(config.depth), bn)?;
        let mut up = Vec::new();
        for s in (0..config.depth).rev() {
            let c = config.stage_channels(s);
            let upconv = b.upconv(&format!("unet.up{s}.upconv"), 2 * c, c)?;
            up.push((upconv, DoubleConv::build(b, &format!("unet.up{s}"), 2 * c, c, bn)?));
        }
        let head = b.conv("unet.head", config.stage_channels(0), config.out_channels, 1)?;
        Ok(UNet {
            config: config.clone(),
            down,
            bottleneck,
            up,
            head,
        })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    /// `[B, in_channels, H, W]` features to `[B, K, H, W]` logits.
    pub fn forward<T: Scalar>(&self, pass: &mut Pass<'_, T>, x: Var) -> Result<Var> {
        let shape = pass.tape.shape(x).to_vec();
        let [_, c, h, w] = shape[..] else {
            return Err(Error::ShapeMismatch(format!("unet input {shape:?}")));
        };
        if c != self.config.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "unet expects {} input channels, got {c}",
                self.config.in_channels
            )));
        }
        self.config.check_input(h, w)?;
        let mut skips = Vec::with_capacity(self.down.len());
        let mut x = x;
        for stage in &self.down {
            let y = stage.forward(pass, x)?;
            skips.push(y);
            x = pass.tape.maxpool2x2(y)?;
        }
        x = self.bottleneck.forward(pass, x)?;
        for ((upconv, stage), skip) in self.up.iter().zip(skips.into_iter().rev()) {
            let y = pass.upconv(upconv, x)?;
            let y = pass.tape.concat_channels(y, skip)?;
            x = stage.forward(pass, y)?;
        }
        pass.conv(&self.head, x)
    }
}
