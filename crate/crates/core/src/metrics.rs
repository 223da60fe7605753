//! Depth error metrics, centre-pixel correlation grids and colourisation.

use std::fmt;

use crate::error::{Error, Result};
use crate::map::{DepthMap, TeleRegion};
use crate::tensor::Tensor;

/// RMSE and REL are lower-is-better; the δ accuracies are percentages.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricReport {
    pub rmse: f64,
    pub rel: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
}

pub const CSV_HEADER: &str = "name,rmse,rel,d1,d2,d3";

impl MetricReport {
    pub fn to_csv_row(&self, name: &str) -> String {
        format!(
            "{name},{:.6},{:.6},{:.4},{:.4},{:.4}",
            self.rmse, self.rel, self.delta1, self.delta2, self.delta3
        )
    }

    /// Component-wise mean of `reports`.
    pub fn mean(reports: &[MetricReport]) -> Result<MetricReport> {
        if reports.is_empty() {
            return Err(Error::domain("no reports to average"));
        }
        let n = reports.len() as f64;
        let sum = |f: fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        Ok(MetricReport {
            rmse: sum(|r| r.rmse),
            rel: sum(|r| r.rel),
            delta1: sum(|r| r.delta1),
            delta2: sum(|r| r.delta2),
            delta3: sum(|r| r.delta3),
        })
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "rmse {:.4}  rel {:.4}  d1 {:.2}  d2 {:.2}  d3 {:.2}",
            self.rmse, self.rel, self.delta1, self.delta2, self.delta3
        )
    }
}

/// Linear-depth metrics over the jointly valid pixels.
///
/// A pixel counts towards δᵢ when `max(p/g, g/p) < 1.25^i` (strict).
pub fn depth_metrics(pred: &DepthMap, gt: &DepthMap) -> Result<MetricReport> {
    let joint = pred.joint_mask(gt)?;
    let (mut se, mut rel, mut n) = (0.0, 0.0, 0usize);
    let mut hits = [0usize; 3];
    let thresholds = [1.25, 1.25f64.powi(2), 1.25f64.powi(3)];
    for ((&p, &g), &ok) in pred.values().iter().zip(gt.values()).zip(&joint) {
        if !ok {
            continue;
        }
        if g.is_nan() || g <= 0.0 {
            return Err(Error::domain(format!("ground truth must be positive where valid, got {g}")));
        }
        let diff = p - g;
        se += diff * diff;
        rel += diff.abs() / g;
        let ratio = (p / g).max(g / p);
        for (hit, &t) in hits.iter_mut().zip(&thresholds) {
            if ratio < t {
                *hit += 1;
            }
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::domain("no jointly valid pixels"));
    }
    let nf = n as f64;
    Ok(MetricReport {
        rmse: (se / nf).sqrt(),
        rel: rel / nf,
        delta1: 100.0 * hits[0] as f64 / nf,
        delta2: 100.0 * hits[1] as f64 / nf,
        delta3: 100.0 * hits[2] as f64 / nf,
    })
}

/// Pearson correlation of every crop pixel with the crop centre, across a
/// dataset of maps.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationGrid {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    /// Cells whose value series has zero variance (reported as 0).
    pub degenerate: Vec<bool>,
}

impl CorrelationGrid {
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn centre(&self) -> (usize, usize) {
        (self.height / 2, self.width / 2)
    }
}

pub fn correlation_map(maps: &[DepthMap], crop: &TeleRegion) -> Result<CorrelationGrid> {
    if maps.len() < 3 {
        return Err(Error::domain(format!("need at least 3 maps, got {}", maps.len())));
    }
    let dims = maps[0].dims();
    if let Some(m) = maps.iter().find(|m| m.dims() != dims) {
        return Err(Error::dim(format!("map dims {:?} differ from {:?}", m.dims(), dims)));
    }
    crop.check_inside(dims.0, dims.1)?;
    let w = dims.1;
    let (ch, cw) = (crop.height, crop.width);
    let centre = (crop.y0 + ch / 2) * w + crop.x0 + cw / 2;
    let n = maps.len() as f64;

    let centred = |idx: usize| -> (Vec<f64>, f64) {
        let series: Vec<f64> = maps.iter().map(|m| m.values()[idx]).collect();
        let mean = series.iter().sum::<f64>() / n;
        let dev: Vec<f64> = series.iter().map(|v| v - mean).collect();
        let ss = dev.iter().map(|d| d * d).sum::<f64>();
        (dev, ss)
    };
    let (c_dev, c_ss) = centred(centre);

    let mut values = vec![0.0; ch * cw];
    let mut degenerate = vec![false; ch * cw];
    for y in 0..ch {
        for x in 0..cw {
            let cell = y * cw + x;
            let idx = (crop.y0 + y) * w + crop.x0 + x;
            if idx == centre {
                values[cell] = 1.0;
                degenerate[cell] = c_ss == 0.0;
                continue;
            }
            let (dev, ss) = centred(idx);
            if ss == 0.0 || c_ss == 0.0 {
                degenerate[cell] = true;
                continue;
            }
            let cov: f64 = dev.iter().zip(&c_dev).map(|(a, b)| a * b).sum();
            values[cell] = (cov / (ss.sqrt() * c_ss.sqrt())).clamp(-1.0, 1.0);
        }
    }
    Ok(CorrelationGrid { height: ch, width: cw, values, degenerate })
}

/// 256-entry blue to red ramp (jet-like).
pub fn colormap_lut() -> [[u8; 3]; 256] {
    let mut lut = [[0u8; 3]; 256];
    for (i, entry) in lut.iter_mut().enumerate() {
        let t = i as f64 / 255.0;
        let ramp = |c: f64| (1.5 - (4.0 * t - c).abs()).clamp(0.0, 1.0);
        *entry = [
            (ramp(3.0) * 255.0).round() as u8,
            (ramp(2.0) * 255.0).round() as u8,
            (ramp(1.0) * 255.0).round() as u8,
        ];
    }
    lut
}

/// Maps valid values linearly (or in log space) onto [`colormap_lut`];
/// invalid pixels are black. Without `range`, the valid min/max are used.
pub fn colorize_depth(depth: &DepthMap, range: Option<(f64, f64)>, log_scale: bool) -> Tensor {
    let (h, w) = depth.dims();
    let n = h * w;
    let lut = colormap_lut();
    let tf = |v: f64| if log_scale { v.max(f64::MIN_POSITIVE).ln() } else { v };
    let valid = |i: usize| depth.mask()[i] && depth.values()[i].is_finite();
    let (lo, hi) = match range {
        Some((a, b)) => (tf(a), tf(b)),
        None => (0..n).filter(|&i| valid(i)).map(|i| tf(depth.values()[i])).fold(
            (f64::INFINITY, f64::NEG_INFINITY),
            |(lo, hi), v| (lo.min(v), hi.max(v)),
        ),
    };
    let mut data = vec![0.0; 3 * n];
    for i in 0..n {
        if !valid(i) {
            continue;
        }
        let t = if hi > lo { (tf(depth.values()[i]) - lo) / (hi - lo) } else { 0.0 };
        let k = (t.clamp(0.0, 1.0) * 255.0).round() as usize;
        for c in 0..3 {
            data[c * n + i] = lut[k][c] as f64 / 255.0;
        }
    }
    Tensor::new([3, h, w], data).expect("sized")
}
