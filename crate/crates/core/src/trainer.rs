//! Training loop, prediction and evaluation over labeled samples.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rangeseg_autograd::{checkpoint, AdamConfig, AdamState, Checkpoint, DType, Mode, Scalar, Tape};
use rayon::prelude::*;

use crate::class::{Class, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::feature_extractor::ScanInputs;
use crate::loss_metrics::{
    border_weight_map, focal_loss, inverse_frequency_weights, ConfusionMatrix, FocalTargets, IoUReport, LossConfig,
};
use crate::model::{Model, ModelConfig, SegmentationMap};
use crate::pointcloud_io::{read_labeled_sample, LabeledSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl Precision {
    pub fn dtype(self) -> DType {
        match self {
            Precision::F32 => DType::F32,
            Precision::F64 => DType::F64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub bn_momentum: f64,
    pub seed: u64,
    /// Write a checkpoint every this many steps (0 disables).
    pub checkpoint_interval: usize,
    /// Directory for interval checkpoints.
    pub checkpoint_dir: Option<PathBuf>,
    pub precision: Precision,
    /// Stop after this many optimizer steps even if epochs remain.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 4,
            epochs: 10,
            bn_momentum: 0.99,
            seed: 0,
            checkpoint_interval: 0,
            checkpoint_dir: None,
            precision: Precision::F32,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0
            || self.epochs == 0
            || !(self.bn_momentum > 0.0 && self.bn_momentum < 1.0)
            || !(self.learning_rate > 0.0 && self.learning_rate.is_finite())
            || self.max_steps == Some(0)
        {
            return Err(Error::InvalidConfig(format!("train: {self:?}")));
        }
        if self.checkpoint_interval > 0 && self.checkpoint_dir.is_none() {
            return Err(Error::InvalidConfig("checkpoint interval set without a checkpoint directory".into()));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub enum LogRecord {
    Step { step: usize, epoch: usize, loss: f64 },
    Epoch { epoch: usize, train_iou: IoUReport },
}

impl fmt::Display for LogRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LogRecord::Step { step, epoch, loss } => write!(f, "step={step} epoch={epoch} loss={loss}"),
            LogRecord::Epoch { epoch, train_iou } => {
                let cell = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
                write!(f, "epoch={epoch} train_iou")?;
                for c in Class::OBJECTS {
                    write!(f, " {}={}", c.name(), cell(train_iou.class(c)))?;
                }
                write!(f, " average={}", cell(train_iou.average))
            }
        }
    }
}

pub struct TrainOutcome<T: Scalar> {
    pub model: Model<T>,
    pub adam: AdamState<T>,
    pub log: Vec<LogRecord>,
    pub class_weights: [f64; NUM_CLASSES],
}

/// All samples must share one size.
pub fn check_dataset(dataset: &[LabeledSample]) -> Result<(usize, usize)> {
    let first = dataset.first().ok_or(Error::EmptyDataset)?;
    let size = (first.height(), first.width());
    if let Some(s) = dataset.iter().find(|s| (s.height(), s.width()) != size) {
        return Err(Error::ShapeHeterogeneity(format!(
            "{}x{} and {}x{}",
            size.0,
            size.1,
            s.height(),
            s.width()
        )));
    }
    Ok(size)
}

/// Class weights from the loss config, or inverse frequencies over `dataset`.
pub fn resolve_class_weights(dataset: &[LabeledSample], loss: &LossConfig) -> [f64; NUM_CLASSES] {
    loss.class_weights.unwrap_or_else(|| {
        let mut counts = [0u64; NUM_CLASSES];
        for s in dataset {
            for (c, n) in counts.iter_mut().zip(s.class_counts()) {
                *c += n;
            }
        }
        inverse_frequency_weights(&counts)
    })
}

struct Prepared {
    inputs: ScanInputs,
    weights: Vec<f64>,
}

/// Trains a fresh model; `sink` sees every log record as it is produced.
pub fn train<T: Scalar>(
    dataset: &[LabeledSample],
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    loss_cfg: &LossConfig,
    sink: &mut dyn FnMut(&LogRecord),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    loss_cfg.validate()?;
    model_cfg.validate()?;
    let (h, w) = check_dataset(dataset)?;
    model_cfg.unet.check_input(h, w)?;

    let mut model = Model::<T>::new(model_cfg, cfg.seed)?;
    let mut adam = AdamState::new(model.params(), AdamConfig::default());
    let class_weights = resolve_class_weights(dataset, loss_cfg);
    let prepared = dataset
        .par_iter()
        .map(|s| {
            Ok(Prepared {
                inputs: model.scan_inputs(&s.image)?,
                weights: border_weight_map(
                    s.labels(),
                    s.image.mask(),
                    h,
                    w,
                    &class_weights,
                    loss_cfg.w0,
                    loss_cfg.sigma,
                )?
                .values,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(1);
    let lr = T::from_f64_lossy(cfg.learning_rate);
    let momentum = T::from_f64_lossy(cfg.bn_momentum);
    let gamma = loss_cfg.effective_gamma();
    let mut log = Vec::new();
    let mut emit = |r: LogRecord, log: &mut Vec<LogRecord>| {
        sink(&r);
        log.push(r);
    };
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut step = 0;
    'epochs: for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut confusion = ConfusionMatrix::default();
        for batch in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| step >= m) {
                break 'epochs;
            }
            step += 1;
            let scans: Vec<&ScanInputs> = batch.iter().map(|&i| &prepared[i].inputs).collect();
            let labels: Vec<u8> = batch.iter().flat_map(|&i| dataset[i].labels().iter().copied()).collect();
            let mask: Vec<bool> = batch
                .iter()
                .flat_map(|&i| dataset[i].image.mask().iter().copied())
                .collect();
            let weights: Vec<f64> = batch
                .iter()
                .flat_map(|&i| prepared[i].weights.iter().copied())
                .collect();

            let mut tape = Tape::new();
            let bound = model.params().bind(&mut tape);
            let fwd = model.forward(&mut tape, &bound, &scans, Mode::Train, momentum)?;
            let probs = tape.softmax_channels(fwd.logits)?;
            let targets = FocalTargets {
                labels: &labels,
                mask: &mask,
                weights: &weights,
                gamma,
            };
            let loss = focal_loss(&mut tape, probs, &targets)?;
            let loss_value = tape.value(loss).data()[0].to_f64_lossy();
            if !loss_value.is_finite() {
                return Err(Error::Diverged { step });
            }
            let logits = tape.value(fwd.logits).data();
            let plane = h * w;
            for (j, &i) in batch.iter().enumerate() {
                let seg = SegmentationMap::from_logits(
                    &logits[j * NUM_CLASSES * plane..(j + 1) * NUM_CLASSES * plane],
                    dataset[i].image.mask(),
                    h,
                    w,
                );
                confusion.add(&seg.ids(), dataset[i].labels(), dataset[i].image.mask())?;
            }
            tape.backward(loss)?;
            let grads = bound.grads(&tape);
            adam.step(model.params_mut(), &grads, lr)?;
            emit(
                LogRecord::Step {
                    step,
                    epoch,
                    loss: loss_value,
                },
                &mut log,
            );
            if cfg.checkpoint_interval > 0 && step % cfg.checkpoint_interval == 0 {
                let dir = cfg.checkpoint_dir.as_ref().expect("validated");
                save_checkpoint(&model, Some(&adam), dir.join(format!("step_{step:06}.ckpt")))?;
            }
        }
        emit(
            LogRecord::Epoch {
                epoch,
                train_iou: confusion.report(),
            },
            &mut log,
        );
    }
    Ok(TrainOutcome {
        model,
        adam,
        log,
        class_weights,
    })
}

/// How per-sample results are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregation {
    /// Sum confusion counts over the dataset, then compute IoU.
    #[default]
    Global,
    /// Average each class's IoU over the samples where it is present.
    PerSample,
}

/// Eval-mode IoU over `dataset`; independent of sample order.
pub fn evaluate<T: Scalar>(model: &Model<T>, dataset: &[LabeledSample], aggregation: Aggregation) -> Result<IoUReport> {
    let per_sample = dataset
        .par_iter()
        .map(|s| {
            let seg = model.predict(&s.image)?;
            let mut cm = ConfusionMatrix::default();
            cm.add(&seg.ids(), s.labels(), s.image.mask())?;
            Ok(cm)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = ConfusionMatrix::default();
    per_sample.iter().for_each(|cm| total.merge(cm));
    let mut report = total.report();
    if aggregation == Aggregation::PerSample {
        let reports: Vec<IoUReport> = per_sample.iter().map(ConfusionMatrix::report).collect();
        // summed in sorted order so the result does not depend on sample order
        let mean = |mut vals: Vec<f64>| {
            vals.sort_by(f64::total_cmp);
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        };
        report.per_class = std::array::from_fn(|c| mean(reports.iter().filter_map(|r| r.per_class[c]).collect()));
        report.average = mean(reports.iter().filter_map(|r| r.average).collect());
    }
    Ok(report)
}

/// Reads every `.npy` sample of `dir`, sorted by file name.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Vec<(PathBuf, LabeledSample)>> {
    let dir = dir.as_ref();
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|e| Error::io(dir, e)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|e| e == "npy") && p.is_file())
        .collect();
    paths.sort();
    let samples = paths
        .into_par_iter()
        .map(|p| read_labeled_sample(&p).map(|s| (p, s)))
        .collect::<Result<Vec<_>>>()?;
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(samples)
}

pub fn save_checkpoint<T: Scalar>(model: &Model<T>, adam: Option<&AdamState<T>>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = model.to_checkpoint(adam).to_bytes()?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// A checkpoint loaded at whatever precision it was saved in.
pub enum LoadedModel {
    F32(Model<f32>, Option<AdamState<f32>>),
    F64(Model<f64>, Option<AdamState<f64>>),
}

impl LoadedModel {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Ok(match checkpoint::peek_dtype(bytes)? {
            DType::F32 => {
                let (m, a) = Model::from_checkpoint(&Checkpoint::from_bytes(bytes)?)?;
                LoadedModel::F32(m, a)
            }
            DType::F64 => {
                let (m, a) = Model::from_checkpoint(&Checkpoint::from_bytes(bytes)?)?;
                LoadedModel::F64(m, a)
            }
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn config(&self) -> &ModelConfig {
        match self {
            LoadedModel::F32(m, _) => m.config(),
            LoadedModel::F64(m, _) => m.config(),
        }
    }

    pub fn predict(&self, img: &crate::RangeImage) -> Result<SegmentationMap> {
        match self {
            LoadedModel::F32(m, _) => m.predict(img),
            LoadedModel::F64(m, _) => m.predict(img),
        }
    }

    pub fn evaluate(&self, dataset: &[LabeledSample], aggregation: Aggregation) -> Result<IoUReport> {
        match self {
            LoadedModel::F32(m, _) => evaluate(m, dataset, aggregation),
            LoadedModel::F64(m, _) => evaluate(m, dataset, aggregation),
        }
    }
}
