//! Full field-of-view depth from a wide image and a narrow tele depth crop.
//!
//! A three-stage hourglass hierarchy predicts an initial log-depth map,
//! propagates the tele depth pasted into its centre, and combines both.
//! Everything runs on a small reverse-mode autograd tape in [`tensor`].

pub mod data;
pub mod error;
pub mod hierarchy;
pub mod hourglass;
pub mod losses;
pub mod map;
pub mod metrics;
pub mod stereo;
pub mod tensor;

pub use data::{Sample, SceneSpec, StageLosses, TrainOptions, Trainer};
pub use error::{Error, Result};
pub use hierarchy::{fill_telefov, HierarchyConfig, HierarchyModel, HierarchyOutput};
pub use hourglass::{HourglassConfig, HourglassParams};
pub use losses::{LossKind, LossWeights, WindowSpec};
pub use map::{DepthMap, LogDepthMap, TeleRegion};
pub use metrics::{colorize_depth, correlation_map, depth_metrics, CorrelationGrid, MetricReport};
pub use stereo::{stereo_disparity, tele_stereo_depth, DisparityMap, Paths, StereoParams};
pub use tensor::{Tape, Tensor, Var};
