use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use rangeseg::pointcloud_io::{
    encode_labeled_sample, npy, read_kitti_bin, read_labeled_sample, write_colored_ply, write_kitti_bin,
};
use rangeseg::synthetic_scenes::{generate, SceneConfig};
use rangeseg::trainer::{load_dataset, save_checkpoint, Aggregation, LogRecord};
use rangeseg::{project, unproject, Class, LabeledSample, LoadedModel, Precision, RangeImage};

mod config;
mod render;

use config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "rangeseg", version, about = "LiDAR range-image segmentation toolkit")]
struct Cli {
    /// Worker threads for the parallel stages.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct ConfigArgs {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Override a configuration key, e.g. `--set unet.depth=2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        RunConfig::load(self.config.as_deref(), &self.overrides)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Project a raw scan into a range image and print drop statistics.
    Project {
        scan: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Generate labeled synthetic scans.
    Synth {
        #[arg(short = 'n', long)]
        count: usize,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        cars: usize,
        #[arg(long, default_value_t = 2)]
        pedestrians: usize,
        #[arg(long, default_value_t = 2)]
        cyclists: usize,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train a model on a directory of labeled samples.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Directory for interval checkpoints (see train.checkpoint_interval).
        #[arg(long)]
        checkpoint_dir: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Segment one labeled sample (.npy) or raw scan (.bin).
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        input: PathBuf,
        /// Output label map: (H, W) uint8 .npy, 255 where there is no return.
        #[arg(short, long)]
        output: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Print per-class IoU over a directory of labeled samples.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Average IoU per sample instead of over pooled counts.
        #[arg(long)]
        per_sample: bool,
    },
    /// Render a sample as a range-image PNG or a colored PLY.
    #[command(group = clap::ArgGroup::new("format").required(true).multiple(true))]
    Export {
        /// Labeled sample (.npy).
        input: PathBuf,
        #[arg(long, group = "format")]
        png: Option<PathBuf>,
        #[arg(long, group = "format")]
        ply: Option<PathBuf>,
        /// Color by this model's predictions instead of the stored labels.
        #[arg(long)]
        ckpt: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.max(1))
        .build()
        .context("starting the thread pool")
        .and_then(|pool| pool.install(|| run(cli.command)));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Project { scan, output, config } => {
            let cfg = config.load()?;
            let cloud = read_kitti_bin(&scan)?;
            let (img, stats) = project(&cloud, &cfg.grid)?;
            img.write(&output)?;
            println!("{stats}");
        }
        Command::Synth {
            count,
            output,
            seed,
            cars,
            pedestrians,
            cyclists,
            config,
        } => {
            let cfg = config.load()?;
            fs::create_dir_all(&output).with_context(|| format!("creating {}", output.display()))?;
            for i in 0..count {
                let scene_cfg = SceneConfig {
                    seed: seed.wrapping_add(i as u64),
                    cars,
                    pedestrians,
                    cyclists,
                    grid: cfg.grid,
                    ..SceneConfig::default()
                };
                let scene = generate(&scene_cfg)?;
                write_kitti_bin(&scene.cloud, output.join(format!("scan_{i:06}.bin")))?;
                let sample = scene.to_sample(&cfg.grid)?;
                fs::write(output.join(format!("sample_{i:06}.npy")), encode_labeled_sample(&sample)?)?;
                info!("scene {i}: {} points, class counts {:?}", scene.cloud.len(), scene.class_counts());
            }
            println!("wrote {count} samples to {}", output.display());
        }
        Command::Train {
            data,
            output,
            checkpoint_dir,
            config,
        } => {
            let mut cfg = config.load()?;
            if let Some(dir) = &checkpoint_dir {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            cfg.train.checkpoint_dir = checkpoint_dir;
            let samples: Vec<LabeledSample> = load_dataset(&data)?.into_iter().map(|(_, s)| s).collect();
            let mut print = |r: &LogRecord| println!("{r}");
            match cfg.train.precision {
                Precision::F32 => {
                    let out = rangeseg::train::<f32>(&samples, &cfg.train, &cfg.model, &cfg.loss, &mut print)?;
                    save_checkpoint(&out.model, Some(&out.adam), &output)?;
                }
                Precision::F64 => {
                    let out = rangeseg::train::<f64>(&samples, &cfg.train, &cfg.model, &cfg.loss, &mut print)?;
                    save_checkpoint(&out.model, Some(&out.adam), &output)?;
                }
            }
        }
        Command::Predict {
            ckpt,
            input,
            output,
            config,
        } => {
            let model = LoadedModel::read(&ckpt)?;
            let img = load_image(&input, &config)?;
            let seg = model.predict(&img)?;
            fs::write(&output, npy::encode(npy::Dtype::U8, &[seg.height, seg.width], &seg.ids()))
                .with_context(|| format!("writing {}", output.display()))?;
            let mut counts = [0usize; rangeseg::NUM_CLASSES];
            for c in seg.labels.iter().flatten() {
                counts[c.id() as usize] += 1;
            }
            let summary: Vec<String> = Class::ALL
                .iter()
                .map(|c| format!("{}={}", c.name(), counts[c.id() as usize]))
                .collect();
            println!("{}", summary.join(" "));
        }
        Command::Eval { ckpt, data, per_sample } => {
            let model = LoadedModel::read(&ckpt)?;
            let samples: Vec<LabeledSample> = load_dataset(&data)?.into_iter().map(|(_, s)| s).collect();
            let aggregation = if per_sample {
                Aggregation::PerSample
            } else {
                Aggregation::Global
            };
            print!("{}", model.evaluate(&samples, aggregation)?);
        }
        Command::Export { input, png, ply, ckpt } => {
            let sample = read_labeled_sample(&input)?;
            let labels: Vec<Option<Class>> = match &ckpt {
                Some(ckpt) => LoadedModel::read(ckpt)?.predict(&sample.image)?.labels,
                None => (0..sample.height() * sample.width())
                    .map(|i| {
                        sample.image.mask()[i]
                            .then(|| Class::from_id(sample.labels()[i]))
                            .flatten()
                    })
                    .collect(),
            };
            if let Some(path) = png {
                render::render_png(&sample.image, &labels)?
                    .save(&path)
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            if let Some(path) = ply {
                let cloud = unproject(&sample.image)?;
                let point_labels: Vec<Class> = labels.iter().flatten().copied().collect();
                write_colored_ply(&cloud, &point_labels, &path)?;
            }
        }
    }
    Ok(())
}

/// A labeled sample's image, or a raw scan projected with the configured grid.
fn load_image(path: &Path, config: &ConfigArgs) -> Result<RangeImage> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("npy") => Ok(read_labeled_sample(path)?.image),
        Some("bin") => {
            let cfg = config.load()?;
            Ok(project(&read_kitti_bin(path)?, &cfg.grid)?.0)
        }
        _ => bail!("{}: expected a .npy sample or a .bin scan", path.display()),
    }
}

