//! Flat `key = value` run configuration.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use teledepth::data::TrainOptions;
use teledepth::{HierarchyConfig, LossKind, LossWeights, Paths, StereoParams, WindowSpec};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub base_channels: usize,
    pub levels: usize,
    pub color_guidance: bool,
    pub detach_stages: bool,

    pub loss: LossKind,
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub window_radius: usize,

    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    pub shuffle: bool,

    pub dataset: Option<PathBuf>,
    pub synth_height: usize,
    pub synth_width: usize,
    pub synth_objects: usize,
    pub scale_jitter: f64,
    /// Bottom-anchored, horizontally random training crop; 0 disables.
    pub crop_height: usize,
    pub crop_width: usize,

    pub census_radius: usize,
    pub d_max: usize,
    pub p1: f64,
    pub p2: f64,
    pub sgm_paths: usize,
    pub lr_tolerance: f64,
    pub wm_radius: usize,
    pub depth_scale: f64,

    pub resize_height: usize,
    pub resize_width: usize,
    pub corr_crop_height: usize,
    pub corr_crop_width: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let stereo = StereoParams::default();
        let weights = LossWeights::default();
        RunConfig {
            base_channels: 16,
            levels: 3,
            color_guidance: true,
            detach_stages: false,
            loss: LossKind::SiL1Windowed,
            w1: weights.w1,
            w2: weights.w2,
            w3: weights.w3,
            window_radius: WindowSpec::default().radius(),
            lr: 1e-3,
            epochs: 40,
            seed: 0,
            shuffle: true,
            dataset: None,
            synth_height: 48,
            synth_width: 64,
            synth_objects: 4,
            scale_jitter: 0.5,
            crop_height: 0,
            crop_width: 0,
            census_radius: stereo.census_radius,
            d_max: stereo.d_max,
            p1: stereo.p1,
            p2: stereo.p2,
            sgm_paths: stereo.paths.count(),
            lr_tolerance: stereo.tol,
            wm_radius: stereo.wm_radius,
            depth_scale: stereo.depth_scale,
            resize_height: 240,
            resize_width: 320,
            corr_crop_height: 240,
            corr_crop_width: 240,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| anyhow::anyhow!("invalid value `{value}` for `{key}`: {e}"))
}

impl RunConfig {
    /// Applies `key = value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .with_context(|| format!("line {}: expected key = value", n + 1))?;
            self.set(key.trim(), value.trim())
                .with_context(|| format!("line {}", n + 1))?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "base_channels" => self.base_channels = parse(key, v)?,
            "levels" => self.levels = parse(key, v)?,
            "color_guidance" => self.color_guidance = parse(key, v)?,
            "detach_stages" => self.detach_stages = parse(key, v)?,
            "loss" => self.loss = parse(key, v)?,
            "w1" => self.w1 = parse(key, v)?,
            "w2" => self.w2 = parse(key, v)?,
            "w3" => self.w3 = parse(key, v)?,
            "window_radius" => self.window_radius = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "shuffle" => self.shuffle = parse(key, v)?,
            "dataset" => self.dataset = Some(PathBuf::from(v)),
            "synth_height" => self.synth_height = parse(key, v)?,
            "synth_width" => self.synth_width = parse(key, v)?,
            "synth_objects" => self.synth_objects = parse(key, v)?,
            "scale_jitter" => self.scale_jitter = parse(key, v)?,
            "crop_height" => self.crop_height = parse(key, v)?,
            "crop_width" => self.crop_width = parse(key, v)?,
            "census_radius" => self.census_radius = parse(key, v)?,
            "d_max" => self.d_max = parse(key, v)?,
            "p1" => self.p1 = parse(key, v)?,
            "p2" => self.p2 = parse(key, v)?,
            "sgm_paths" => self.sgm_paths = parse(key, v)?,
            "lr_tolerance" => self.lr_tolerance = parse(key, v)?,
            "wm_radius" => self.wm_radius = parse(key, v)?,
            "depth_scale" => self.depth_scale = parse(key, v)?,
            "resize_height" => self.resize_height = parse(key, v)?,
            "resize_width" => self.resize_width = parse(key, v)?,
            "corr_crop_height" => self.corr_crop_height = parse(key, v)?,
            "corr_crop_width" => self.corr_crop_width = parse(key, v)?,
            _ => bail!("unknown config key `{key}`"),
        }
        Ok(())
    }

    pub fn hierarchy(&self) -> HierarchyConfig {
        HierarchyConfig {
            base_channels: self.base_channels,
            levels: self.levels,
            color_guidance: self.color_guidance,
            detach_stages: self.detach_stages,
        }
    }

    pub fn train_options(&self) -> Result<TrainOptions> {
        Ok(TrainOptions {
            weights: LossWeights { w1: self.w1, w2: self.w2, w3: self.w3 },
            loss: self.loss,
            window: WindowSpec::new(self.window_radius)?,
            lr: self.lr,
            shuffle_seed: self.shuffle.then_some(self.seed),
        })
    }

    pub fn stereo(&self) -> Result<StereoParams> {
        let paths = match self.sgm_paths {
            4 => Paths::Four,
            8 => Paths::Eight,
            n => bail!("sgm_paths must be 4 or 8, got {n}"),
        };
        Ok(StereoParams {
            census_radius: self.census_radius,
            d_max: self.d_max,
            p1: self.p1,
            p2: self.p2,
            paths,
            tol: self.lr_tolerance,
            wm_radius: self.wm_radius,
            depth_scale: self.depth_scale,
            ..StereoParams::default()
        })
    }
}
