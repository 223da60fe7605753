use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use teledepth::data::{
    self, bottom_random_crop, crop_image, from_log_depth, load_dataset, load_depth, load_image,
    resize_bilinear, save_depth, save_pfm, save_ppm, synth_scene, to_log_depth, SceneSpec,
};
use teledepth::metrics::CSV_HEADER;
use teledepth::{
    colorize_depth, correlation_map, depth_metrics, stereo_disparity, tele_stereo_depth, DepthMap,
    HierarchyModel, MetricReport, Sample, TeleRegion, Trainer,
};

use crate::config::RunConfig;
use crate::UsageError;

/// Where samples come from.
pub enum Source {
    Directory(PathBuf),
    Synthetic(usize),
}

impl Source {
    pub fn resolve(config: &RunConfig, data: Option<PathBuf>, synthetic: Option<usize>) -> Result<Source> {
        match (data.or_else(|| config.dataset.clone()), synthetic) {
            (_, Some(n)) => Ok(Source::Synthetic(n)),
            (Some(p), None) => Ok(Source::Directory(p)),
            (None, None) => Err(UsageError("no dataset root given and --synthetic not set".into()).into()),
        }
    }
}

/// Seeds of synthetic splits never overlap.
#[derive(Clone, Copy)]
pub enum Split {
    Train,
    Eval,
}

fn scene_seed(seed: u64, split: Split, index: usize) -> u64 {
    let split = match split {
        Split::Train => 0,
        Split::Eval => 1,
    };
    (seed << 24) ^ (split << 23) ^ index as u64
}

pub fn load_samples(config: &RunConfig, source: &Source, split: Split) -> Result<(Vec<String>, Vec<Sample>)> {
    match source {
        Source::Directory(root) => {
            let entries = data::scan_dataset(root)?;
            let samples = load_dataset(root)?;
            Ok((entries.into_iter().map(|e| e.id).collect(), samples))
        }
        Source::Synthetic(n) => {
            let mut ids = Vec::with_capacity(*n);
            let mut samples = Vec::with_capacity(*n);
            for i in 0..*n {
                let spec = SceneSpec {
                    levels: config.levels,
                    objects: config.synth_objects,
                    scale_jitter: config.scale_jitter,
                    ..SceneSpec::new(scene_seed(config.seed, split, i), config.synth_height, config.synth_width)
                };
                samples.push(synth_scene(&spec)?.sample);
                ids.push(format!("synth{i:04}"));
            }
            Ok((ids, samples))
        }
    }
}

fn random_crops(config: &RunConfig, samples: Vec<Sample>) -> Result<Vec<Sample>> {
    if config.crop_height == 0 && config.crop_width == 0 {
        return Ok(samples);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    samples
        .into_iter()
        .map(|s| {
            let (h, w) = s.dims();
            let r = bottom_random_crop(h, w, config.crop_height, config.crop_width, &mut rng)?;
            Ok(Sample::from_ground_truth(crop_image(&s.wide_rgb, &r)?, s.gt_depth.crop(&r)?)?)
        })
        .collect()
}

pub fn train(config: &RunConfig, source: &Source, out: &Path, log: Option<PathBuf>) -> Result<()> {
    let (_, samples) = load_samples(config, source, Split::Train)?;
    let samples = random_crops(config, samples)?;
    let model = HierarchyModel::new(&config.hierarchy(), config.seed)?;
    let mut trainer = Trainer::new(model, config.train_options()?)?;
    let log = log.unwrap_or_else(|| out.with_extension("loss.csv"));
    let mut csv = String::from("epoch,l1,l2,l3,total\n");
    for epoch in 0..config.epochs {
        let l = trainer.train_epoch(&samples)?;
        eprintln!(
            "epoch {:>3}  total {:.5}  L1 {:.5}  L2 {:.5}  L3 {:.5}",
            epoch + 1,
            l.total,
            l.l1,
            l.l2,
            l.l3
        );
        writeln!(csv, "{},{},{},{},{}", epoch + 1, l.l1, l.l2, l.l3, l.total)?;
    }
    trainer.model.save(out)?;
    fs::write(&log, csv).with_context(|| format!("writing {}", log.display()))?;
    Ok(())
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_depth_outputs(prefix: &Path, name: &str, log_depth: &DepthMap, range: (f64, f64)) -> Result<()> {
    let depth = from_log_depth(log_depth);
    save_depth(&depth, with_suffix(prefix, &format!("_{name}.pfm")))?;
    save_ppm(&colorize_depth(&depth, Some(range), true), with_suffix(prefix, &format!("_{name}.ppm")))?;
    Ok(())
}

fn finite_or_numeric_error(map: &DepthMap, what: &str) -> Result<()> {
    if map.values().iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(teledepth::Error::Training { sample: 0, message: format!("{what} contains non-finite values") }.into())
    }
}

pub enum TeleInput {
    Depth(PathBuf),
    Pair(PathBuf, PathBuf),
}

pub fn infer(config: &RunConfig, checkpoint: &Path, image: &Path, tele: TeleInput, prefix: &Path) -> Result<()> {
    let model = HierarchyModel::load(checkpoint)?;
    let rgb = load_image(image)?;
    let (_, h, w) = rgb.dims3()?;
    model.check_input(h, w)?;
    let region = data::tele_region(h, w)?;
    let tele = match tele {
        TeleInput::Depth(path) => to_log_depth(&load_depth(path)?),
        TeleInput::Pair(l, r) => {
            let left = load_image(l)?;
            let right = load_image(r)?;
            let log = tele_stereo_depth(&left, &right, &config.stereo()?)?;
            save_depth(&from_log_depth(&log), with_suffix(prefix, "_telestereo.pfm"))?;
            log
        }
    };
    if tele.dims() != (region.height, region.width) {
        return Err(teledepth::Error::Dimension(format!(
            "tele depth is {:?} but the tele region of a {h}x{w} frame is {}x{}",
            tele.dims(),
            region.height,
            region.width
        ))
        .into());
    }
    let out = model.infer(&rgb, &tele, &region)?;
    let maps = [("initial", &out.initial), ("propagated", &out.propagated), ("final", &out.final_depth)];
    for (name, m) in maps {
        finite_or_numeric_error(m, name)?;
    }
    let (lo, hi) = maps
        .iter()
        .flat_map(|(_, m)| m.values().iter().map(|v| v.exp()))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    for (name, m) in maps {
        write_depth_outputs(prefix, name, m, (lo, hi))?;
    }
    Ok(())
}

pub fn eval(
    config: &RunConfig,
    checkpoint: Option<&Path>,
    source: &Source,
    out: &Path,
    oracle: bool,
) -> Result<()> {
    let model = match (checkpoint, oracle) {
        (Some(p), _) => Some(HierarchyModel::load(p)?),
        (None, true) => None,
        (None, false) => return Err(UsageError("eval needs a checkpoint".into()).into()),
    };
    let (ids, samples) = load_samples(config, source, Split::Eval)?;
    let stages = ["initial", "propagated", "final"];
    let mut per_stage: [Vec<MetricReport>; 3] = Default::default();
    let mut csv = String::from("# lower is better: rmse,rel; higher is better: d1,d2,d3 (percent)\n");
    csv.push_str(CSV_HEADER);
    csv.push('\n');
    for (id, s) in ids.iter().zip(&samples) {
        let preds: [DepthMap; 3] = match (&model, oracle) {
            (_, true) => [s.gt_depth.clone(), s.gt_depth.clone(), s.gt_depth.clone()],
            (Some(m), false) => {
                let o = m.infer(&s.wide_rgb, &s.tele_depth, &s.region)?;
                [from_log_depth(&o.initial), from_log_depth(&o.propagated), from_log_depth(&o.final_depth)]
            }
            (None, false) => unreachable!("checked above"),
        };
        for (k, pred) in preds.iter().enumerate() {
            finite_or_numeric_error(pred, stages[k])?;
            let r = depth_metrics(pred, &s.gt_depth)?;
            writeln!(csv, "{}", r.to_csv_row(&format!("{id}/{}", stages[k])))?;
            per_stage[k].push(r);
        }
    }
    for (k, reports) in per_stage.iter().enumerate() {
        let mean = MetricReport::mean(reports)?;
        eprintln!("mean {:<10} {mean}", stages[k]);
        writeln!(csv, "{}", mean.to_csv_row(&format!("mean/{}", stages[k])))?;
    }
    fs::write(out, csv).with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}

pub fn correlate(config: &RunConfig, source: &Source, prefix: &Path) -> Result<()> {
    let (_, samples) = load_samples(config, source, Split::Eval)?;
    let (rh, rw) = (config.resize_height, config.resize_width);
    let maps = samples
        .iter()
        .map(|s| resize_bilinear(&s.gt_depth, rh, rw))
        .collect::<teledepth::Result<Vec<_>>>()?;
    let (ch, cw) = (config.corr_crop_height, config.corr_crop_width);
    if ch > rh || cw > rw || ch == 0 || cw == 0 {
        return Err(UsageError(format!("crop {cw}x{ch} does not fit resized {rw}x{rh}")).into());
    }
    let crop = TeleRegion { y0: (rh - ch) / 2, x0: (rw - cw) / 2, height: ch, width: cw };
    let grid = correlation_map(&maps, &crop)?;
    let degenerate = grid.degenerate.iter().filter(|&&d| d).count();
    if degenerate > 0 {
        eprintln!("{degenerate} cells have zero variance and were set to 0");
    }
    save_pfm(grid.height, grid.width, &grid.values, with_suffix(prefix, "_corr.pfm"))?;
    let heat = DepthMap::dense(grid.height, grid.width, grid.values.clone())?;
    save_ppm(&colorize_depth(&heat, Some((-1.0, 1.0)), false), with_suffix(prefix, "_corr.ppm"))?;
    Ok(())
}

pub fn stereo(config: &RunConfig, left: &Path, right: &Path, prefix: &Path) -> Result<()> {
    let params = config.stereo()?;
    let l = load_image(left)?;
    let r = load_image(right)?;
    let disp = stereo_disparity(&l, &r, &params)?;
    save_pfm(disp.height, disp.width, &disp.disp, with_suffix(prefix, "_disparity.pfm"))?;
    let log: Vec<f64> = disp
        .disp
        .iter()
        .map(|&d| teledepth::stereo::disparity_to_log_depth(d, &params))
        .collect();
    save_pfm(disp.height, disp.width, &log, with_suffix(prefix, "_logdepth.pfm"))?;
    let dmap = DepthMap::new(disp.height, disp.width, disp.disp.clone(), disp.valid.clone())?;
    save_ppm(
        &colorize_depth(&dmap, Some((0.0, params.d_max as f64)), false),
        with_suffix(prefix, "_disparity.ppm"),
    )?;
    Ok(())
}
