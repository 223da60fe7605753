//! File formats, geometry helpers, synthetic scenes and the training loop.

mod geometry;
mod io;
mod synth;
mod train;

pub use geometry::{
    bottom_random_crop, crop_image, from_log_depth, resize_bilinear, resize_image, tele_region,
    to_log_depth, MAX_DEPTH, MIN_DEPTH,
};
pub use io::{
    decode_pfm, decode_pgm16, decode_ppm, encode_pfm, encode_pgm16, encode_ppm, load_depth,
    load_image, load_pfm, save_depth, save_pfm, save_ppm, scan_dataset, DatasetEntry,
};
pub use synth::{
    synth_dataset, synth_scene, synth_stereo_pair, SceneSpec, StereoPair, SynthScene,
    DISPARITY_DEPTH_SCALE,
};
pub use train::{epoch_order, evaluate_dataset, evaluate_losses, Adam, StageLosses, TrainOptions, Trainer};

use std::path::Path;

use crate::error::{Error, Result};
use crate::map::{DepthMap, LogDepthMap, TeleRegion};
use crate::tensor::Tensor;

/// One training or evaluation example.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub wide_rgb: Tensor,
    pub gt_depth: DepthMap,
    pub tele_depth: LogDepthMap,
    pub region: TeleRegion,
}

impl Sample {
    /// Uses the centred ground-truth crop as tele depth.
    pub fn from_ground_truth(wide_rgb: Tensor, gt_depth: DepthMap) -> Result<Self> {
        let (c, h, w) = wide_rgb.dims3()?;
        if c != 3 || gt_depth.dims() != (h, w) {
            return Err(Error::dim(format!(
                "image {:?} and depth {:?} disagree",
                wide_rgb.shape(),
                gt_depth.dims()
            )));
        }
        let region = tele_region(h, w)?;
        let tele_depth = to_log_depth(&gt_depth).crop(&region)?;
        Ok(Sample { wide_rgb, gt_depth, tele_depth, region })
    }

    /// Replaces the tele depth, e.g. with a stereo estimate.
    pub fn with_tele_depth(mut self, tele_depth: LogDepthMap) -> Result<Self> {
        if tele_depth.dims() != (self.region.height, self.region.width) {
            return Err(Error::dim(format!(
                "tele depth {:?} does not match region {:?}",
                tele_depth.dims(),
                self.region
            )));
        }
        self.tele_depth = tele_depth;
        Ok(self)
    }

    pub fn dims(&self) -> (usize, usize) {
        self.gt_depth.dims()
    }

    /// Ground truth in log depth.
    pub fn target(&self) -> LogDepthMap {
        to_log_depth(&self.gt_depth)
    }
}

/// Loads every entry of a dataset directory with ground-truth tele depth.
pub fn load_dataset(root: impl AsRef<Path>) -> Result<Vec<Sample>> {
    scan_dataset(root)?
        .iter()
        .map(|e| Sample::from_ground_truth(load_image(&e.rgb)?, load_depth(&e.depth)?))
        .collect()
}
