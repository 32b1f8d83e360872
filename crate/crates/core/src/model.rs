//! Feature extractor and U-Net bundled with their parameters.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rangeseg_autograd::{AdamConfig, AdamState, Bound, Checkpoint, Mode, ParamStore, RunningStats, Scalar, Tape, Tensor, Var};

use crate::class::Class;
use crate::error::{Error, Result};
use crate::feature_extractor::{batch_tensors, ExtractorConfig, ExtractorOutput, FeatureExtractor, ScanInputs};
use crate::layers::{Builder, NamedStats, Pass};
use crate::neighborhood::CoordMode;
use crate::range_projection::RangeImage;
use crate::unet::{UNet, UNetConfig};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelConfig {
    pub extractor: ExtractorConfig,
    pub unet: UNetConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.extractor.validate()?;
        self.unet.validate()?;
        if self.unet.in_channels != self.extractor.features {
            return Err(Error::InvalidConfig(format!(
                "unet takes {} channels but the extractor emits {}",
                self.unet.in_channels, self.extractor.features
            )));
        }
        Ok(())
    }

    fn to_meta(&self) -> Vec<(String, String)> {
        let list = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let e = &self.extractor;
        let u = &self.unet;
        [
            ("extractor.features", e.features.to_string()),
            ("extractor.mlp1", list(&e.mlp1)),
            ("extractor.mlp2", list(&e.mlp2)),
            ("extractor.coords", coords_name(e.coords).to_string()),
            ("extractor.wrap", e.wrap.to_string()),
            ("unet.depth", u.depth.to_string()),
            ("unet.base_channels", u.base_channels.to_string()),
            ("unet.in_channels", u.in_channels.to_string()),
            ("unet.out_channels", u.out_channels.to_string()),
            ("unet.batch_norm", u.batch_norm.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    fn from_meta<T: Scalar>(ckpt: &Checkpoint<T>) -> Result<Self> {
        fn get<'a, T: Scalar>(c: &'a Checkpoint<T>, key: &str) -> Result<&'a str> {
            c.meta(key)
                .ok_or_else(|| Error::Malformed(format!("checkpoint lacks {key}")))
        }
        fn parse<V: std::str::FromStr, T: Scalar>(c: &Checkpoint<T>, key: &str) -> Result<V> {
            get(c, key)?
                .parse()
                .map_err(|_| Error::Malformed(format!("checkpoint {key} is not a valid value")))
        }
        let list = |key: &str| -> Result<Vec<usize>> {
            let s = get(ckpt, key)?;
            if s.is_empty() {
                return Ok(Vec::new());
            }
            s.split(',')
                .map(|v| v.parse().map_err(|_| Error::Malformed(format!("checkpoint {key}: {s:?}"))))
                .collect()
        };
        let config = ModelConfig {
            extractor: ExtractorConfig {
                features: parse(ckpt, "extractor.features")?,
                mlp1: list("extractor.mlp1")?,
                mlp2: list("extractor.mlp2")?,
                coords: parse_coords(get(ckpt, "extractor.coords")?)
                    .ok_or_else(|| Error::Malformed("checkpoint extractor.coords".into()))?,
                wrap: parse(ckpt, "extractor.wrap")?,
            },
            unet: UNetConfig {
                depth: parse(ckpt, "unet.depth")?,
                base_channels: parse(ckpt, "unet.base_channels")?,
                in_channels: parse(ckpt, "unet.in_channels")?,
                out_channels: parse(ckpt, "unet.out_channels")?,
                batch_norm: parse(ckpt, "unet.batch_norm")?,
            },
        };
        config.validate()?;
        Ok(config)
    }
}

pub fn coords_name(mode: CoordMode) -> &'static str {
    match mode {
        CoordMode::Relative => "relative",
        CoordMode::Absolute => "absolute",
    }
}

pub fn parse_coords(s: &str) -> Option<CoordMode> {
    match s {
        "relative" => Some(CoordMode::Relative),
        "absolute" => Some(CoordMode::Absolute),
        _ => None,
    }
}

/// Handles of one recorded forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    pub features: Var,
    pub pooled: Var,
    pub logits: Var,
}

#[derive(Debug, Clone)]
pub struct Model<T: Scalar> {
    config: ModelConfig,
    params: ParamStore<T>,
    stats: Vec<NamedStats<T>>,
    extractor: FeatureExtractor,
    unet: UNet,
}

impl<T: Scalar> Model<T> {
    /// Freshly initialised model; weights are drawn from a generator seeded with `seed`.
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut stats = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder {
            params: &mut params,
            stats: &mut stats,
            rng: &mut rng,
        };
        let extractor = FeatureExtractor::build(&config.extractor, &mut b)?;
        let unet = UNet::build(&config.unet, &mut b)?;
        Ok(Model {
            config: config.clone(),
            params,
            stats,
            extractor,
            unet,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn stats(&self) -> &[NamedStats<T>] {
        &self.stats
    }

    pub fn scan_inputs(&self, img: &RangeImage) -> Result<ScanInputs> {
        ScanInputs::new(img, self.config.extractor.coords, self.config.extractor.wrap)
    }

    /// Records extractor and U-Net on `tape` for a batch of equally sized scans.
    pub fn forward(
        &mut self,
        tape: &mut Tape<T>,
        bound: &Bound,
        scans: &[&ScanInputs],
        mode: Mode,
        momentum: T,
    ) -> Result<Forward> {
        let (neighbors, centers) = batch_tensors::<T>(scans)?;
        let (h, w) = (scans[0].height, scans[0].width);
        self.config.unet.check_input(h, w)?;
        let neighbors = tape.constant(neighbors);
        let centers = tape.constant(centers);
        self.forward_vars(tape, bound, neighbors, centers, scans.len(), h, w, mode, momentum)
    }

    /// Like [`Model::forward`] with the extractor inputs already on the tape.
    #[allow(clippy::too_many_arguments)]
    pub fn forward_vars(
        &mut self,
        tape: &mut Tape<T>,
        bound: &Bound,
        neighbors: Var,
        centers: Var,
        batch: usize,
        height: usize,
        width: usize,
        mode: Mode,
        momentum: T,
    ) -> Result<Forward> {
        let mut pass = Pass {
            tape,
            bound,
            stats: &mut self.stats,
            momentum,
            mode,
        };
        let out = self
            .extractor
            .forward(&mut pass, neighbors, centers, batch, height, width)?;
        let logits = self.unet.forward(&mut pass, out.features)?;
        Ok(Forward {
            features: out.features,
            pooled: out.pooled,
            logits,
        })
    }

    /// Runs only the feature extractor.
    #[allow(clippy::too_many_arguments)]
    pub fn forward_features(
        &mut self,
        tape: &mut Tape<T>,
        bound: &Bound,
        neighbors: Var,
        centers: Var,
        batch: usize,
        height: usize,
        width: usize,
        mode: Mode,
        momentum: T,
    ) -> Result<ExtractorOutput> {
        let mut pass = Pass {
            tape,
            bound,
            stats: &mut self.stats,
            momentum,
            mode,
        };
        self.extractor
            .forward(&mut pass, neighbors, centers, batch, height, width)
    }

    /// Runs only the U-Net on a `[B, N, H, W]` feature image.
    pub fn forward_unet(&mut self, tape: &mut Tape<T>, bound: &Bound, features: Var, mode: Mode, momentum: T) -> Result<Var> {
        let mut pass = Pass {
            tape,
            bound,
            stats: &mut self.stats,
            momentum,
            mode,
        };
        self.unet.forward(&mut pass, features)
    }

    /// Eval-mode `[B, K, H, W]` logits; running statistics are left untouched.
    pub fn logits(&self, scans: &[&ScanInputs]) -> Result<Tensor<T>> {
        let mut scratch = self.clone();
        let mut tape = Tape::new();
        let bound = scratch.params.bind(&mut tape);
        let f = scratch.forward(&mut tape, &bound, scans, Mode::Eval, T::one())?;
        Ok(tape.value(f.logits).clone())
    }

    pub fn predict(&self, img: &RangeImage) -> Result<SegmentationMap> {
        let inputs = self.scan_inputs(img)?;
        let logits = self.logits(&[&inputs])?;
        Ok(SegmentationMap::from_logits(logits.data(), img.mask(), img.height(), img.width()))
    }

    /// Parameters, batch-norm statistics and (optionally) optimizer state.
    pub fn to_checkpoint(&self, adam: Option<&AdamState<T>>) -> Checkpoint<T> {
        let mut meta = self.config.to_meta();
        let mut tensors: Vec<(String, Tensor<T>)> =
            self.params.iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
        for (name, s) in &self.stats {
            let c = s.channels();
            tensors.push((format!("{name}.running_mean"), Tensor::new(&[c], s.mean.clone()).expect("length c")));
            tensors.push((format!("{name}.running_var"), Tensor::new(&[c], s.var.clone()).expect("length c")));
        }
        if let Some(adam) = adam {
            meta.push(("adam.step".into(), adam.step.to_string()));
            meta.push(("adam.beta1".into(), adam.config.beta1.to_string()));
            meta.push(("adam.beta2".into(), adam.config.beta2.to_string()));
            meta.push(("adam.eps".into(), adam.config.eps.to_string()));
            for ((name, _), (m, v)) in self.params.iter().zip(adam.first.iter().zip(&adam.second)) {
                tensors.push((format!("adam.m.{name}"), m.clone()));
                tensors.push((format!("adam.v.{name}"), v.clone()));
            }
        }
        Checkpoint { meta, tensors }
    }

    /// Rebuilds a model (and its optimizer state, when stored) from a checkpoint.
    pub fn from_checkpoint(ckpt: &Checkpoint<T>) -> Result<(Self, Option<AdamState<T>>)> {
        let config = ModelConfig::from_meta(ckpt)?;
        let mut model = Model::new(&config, 0)?;
        let take = |name: &str, shape: &[usize]| -> Result<Tensor<T>> {
            let t = ckpt
                .tensor(name)
                .ok_or_else(|| Error::Malformed(format!("checkpoint lacks tensor {name}")))?;
            if t.shape() != shape {
                return Err(Error::Malformed(format!(
                    "checkpoint tensor {name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            Ok(t.clone())
        };
        let names: Vec<(String, Vec<usize>)> = model
            .params
            .iter()
            .map(|(n, t)| (n.to_string(), t.shape().to_vec()))
            .collect();
        for (id, (name, shape)) in model.params.ids().collect::<Vec<_>>().into_iter().zip(&names) {
            *model.params.get_mut(id) = take(name, shape)?;
        }
        for (name, s) in &mut model.stats {
            let c = [s.channels()];
            *s = RunningStats {
                mean: take(&format!("{name}.running_mean"), &c)?.into_data(),
                var: take(&format!("{name}.running_var"), &c)?.into_data(),
            };
        }
        let adam = match ckpt.meta("adam.step") {
            None => None,
            Some(step) => {
                let num = |key: &str| -> Result<f64> {
                    ckpt.meta(key)
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| Error::Malformed(format!("checkpoint {key}")))
                };
                let mut state = AdamState::new(
                    &model.params,
                    AdamConfig {
                        beta1: num("adam.beta1")?,
                        beta2: num("adam.beta2")?,
                        eps: num("adam.eps")?,
                    },
                );
                state.step = step
                    .parse()
                    .map_err(|_| Error::Malformed("checkpoint adam.step".into()))?;
                for (i, (name, shape)) in names.iter().enumerate() {
                    state.first[i] = take(&format!("adam.m.{name}"), shape)?;
                    state.second[i] = take(&format!("adam.v.{name}"), shape)?;
                }
                Some(state)
            }
        };
        Ok((model, adam))
    }
}

/// Per-pixel class, `None` where the image has no return.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationMap {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<Option<Class>>,
}

/// Id written for pixels without a prediction.
pub const NO_LABEL: u8 = u8::MAX;

impl SegmentationMap {
    /// Argmax over the classes of `[1, K, H, W]` logits at valid pixels;
    /// ties go to the lower class id.
    pub fn from_logits<T: Scalar>(logits: &[T], mask: &[bool], height: usize, width: usize) -> Self {
        let plane = height * width;
        let k = if plane == 0 { 0 } else { logits.len() / plane };
        let labels = (0..plane)
            .map(|i| {
                if !mask[i] {
                    return None;
                }
                let mut best = 0;
                for c in 1..k {
                    if logits[c * plane + i] > logits[best * plane + i] {
                        best = c;
                    }
                }
                Class::from_id(best as u8)
            })
            .collect();
        SegmentationMap { height, width, labels }
    }

    /// Class ids with [`NO_LABEL`] at invalid pixels.
    pub fn ids(&self) -> Vec<u8> {
        self.labels.iter().map(|l| l.map_or(NO_LABEL, Class::id)).collect()
    }
}

impl fmt::Display for SegmentationMap {
    /// One text row per image row: class ids, `.` for no return.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for row in self.labels.chunks(self.width.max(1)) {
            let line: String = row
                .iter()
                .map(|l| l.map_or('.', |c| char::from(b'0' + c.id())))
                .collect();
            writeln!(f, "{line}")?;
        }
        Ok(())
    }
}
