//! LiDAR range-image segmentation: projection, neighborhood features,
//! U-Net segmentation, focal-loss training and IoU evaluation.

pub mod class;
pub mod error;
pub mod feature_extractor;
mod layers;
pub mod loss_metrics;
pub mod model;
pub mod neighborhood;
pub mod pointcloud_io;
pub mod range_projection;
pub mod synthetic_scenes;
pub mod trainer;
pub mod unet;

pub use class::{Class, NUM_CLASSES};
pub use error::{Error, Result};
pub use feature_extractor::{ExtractorConfig, ScanInputs};
pub use layers::{NamedStats, Pass};
pub use loss_metrics::{IoUReport, LossConfig};
pub use model::{Model, ModelConfig, SegmentationMap};
pub use neighborhood::{build_neighbor_field, CoordMode, NeighborField};
pub use pointcloud_io::{LabeledSample, PointCloud};
pub use range_projection::{project, spherical_coords, unproject, GridConfig, ProjectionStats, RangeImage};
pub use unet::UNetConfig;
pub use trainer::{evaluate, train, LoadedModel, Precision, TrainConfig};
