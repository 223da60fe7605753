//! Classical stereo matcher producing tele-FoV depth.
//!
//! Census transform and Hamming matching cost, semi-global aggregation,
//! winner-take-all with parabolic subpixel refinement, left-right
//! consistency check, then hole filling and a guided weighted median.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::map::LogDepthMap;
use crate::tensor::Tensor;

/// Single-channel image.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::dim(format!(
                "{height}x{width} image needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(GrayImage { height, width, data })
    }

    /// Rec. 601 luma of a `[3, H, W]` colour image.
    pub fn from_rgb(rgb: &Tensor) -> Result<Self> {
        let (c, h, w) = rgb.dims3()?;
        if c != 3 {
            return Err(Error::dim(format!("expected 3 channels, got {c}")));
        }
        let d = rgb.data();
        let n = h * w;
        let data = (0..n)
            .map(|i| 0.299 * d[i] + 0.587 * d[n + i] + 0.114 * d[2 * n + i])
            .collect();
        Ok(GrayImage { height: h, width: w, data })
    }

    fn at_clamped(&self, y: isize, x: isize) -> f64 {
        let y = y.clamp(0, self.height as isize - 1) as usize;
        let x = x.clamp(0, self.width as isize - 1) as usize;
        self.data[y * self.width + x]
    }

    fn flipped(&self) -> GrayImage {
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.data.chunks(self.width) {
            data.extend(row.iter().rev());
        }
        GrayImage { data, ..*self }
    }
}

/// Per-pixel census bitstrings.
#[derive(Clone, Debug, PartialEq)]
pub struct CensusMap {
    pub height: usize,
    pub width: usize,
    /// Number of meaningful bits per code.
    pub bits: u32,
    pub codes: Vec<u32>,
}

/// Census transform. Bit `k` (neighbours in row-major order, centre
/// skipped) is set iff that neighbour is strictly brighter than the centre.
/// Neighbourhoods are edge-clamped.
pub fn census(image: &GrayImage, radius: usize) -> Result<CensusMap> {
    if !(1..=2).contains(&radius) {
        return Err(Error::domain(format!("census radius must be 1 or 2, got {radius}")));
    }
    let r = radius as isize;
    let (h, w) = (image.height, image.width);
    let mut codes = vec![0u32; h * w];
    codes.par_chunks_mut(w.max(1)).enumerate().for_each(|(y, row)| {
        for (x, code) in row.iter_mut().enumerate() {
            let c = image.data[y * w + x];
            let mut bit = 0;
            let mut v = 0u32;
            for dy in -r..=r {
                for dx in -r..=r {
                    if dy == 0 && dx == 0 {
                        continue;
                    }
                    if image.at_clamped(y as isize + dy, x as isize + dx) > c {
                        v |= 1 << bit;
                    }
                    bit += 1;
                }
            }
            *code = v;
        }
    });
    let side = 2 * radius as u32 + 1;
    Ok(CensusMap {
        height: h,
        width: w,
        bits: side * side - 1,
        codes,
    })
}

/// Matching costs indexed `[(y * width + x) * (d_max + 1) + d]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CostVolume {
    pub height: usize,
    pub width: usize,
    pub d_max: usize,
    pub costs: Vec<f64>,
}

impl CostVolume {
    pub fn depth(&self) -> usize {
        self.d_max + 1
    }

    pub fn at(&self, y: usize, x: usize) -> &[f64] {
        let n = self.depth();
        &self.costs[(y * self.width + x) * n..][..n]
    }
}

/// `cost(x, y, d) = hamming(left(x, y), right(x - d, y))`; references left
/// of the frame cost the full bit width.
pub fn build_cost_volume(left: &CensusMap, right: &CensusMap, d_max: usize) -> Result<CostVolume> {
    if (left.height, left.width, left.bits) != (right.height, right.width, right.bits) {
        return Err(Error::dim("census maps differ in size or bit width"));
    }
    if d_max >= left.width {
        return Err(Error::domain(format!(
            "d_max {d_max} must be smaller than the image width {}",
            left.width
        )));
    }
    let (h, w, n) = (left.height, left.width, d_max + 1);
    let mut costs = vec![0.0; h * w * n];
    costs.par_chunks_mut(w * n).enumerate().for_each(|(y, row)| {
        for x in 0..w {
            let l = left.codes[y * w + x];
            for d in 0..n {
                row[x * n + d] = if d > x {
                    left.bits as f64
                } else {
                    (l ^ right.codes[y * w + x - d]).count_ones() as f64
                };
            }
        }
    });
    Ok(CostVolume {
        height: h,
        width: w,
        d_max,
        costs,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Paths {
    Four,
    Eight,
}

impl Paths {
    fn directions(self) -> &'static [(isize, isize)] {
        const EIGHT: [(isize, isize); 8] = [
            (0, 1),
            (0, -1),
            (1, 0),
            (-1, 0),
            (1, 1),
            (1, -1),
            (-1, 1),
            (-1, -1),
        ];
        match self {
            Paths::Four => &EIGHT[..4],
            Paths::Eight => &EIGHT[..],
        }
    }

    pub fn count(self) -> usize {
        self.directions().len()
    }
}

/// Semi-global aggregation: for each path direction `r`,
/// `Lr(p,d) = C(p,d) + min(Lr(p-r,d), Lr(p-r,d±1) + p1, min_k Lr(p-r,k) + p2) - min_k Lr(p-r,k)`,
/// summed over directions.
pub fn sgm_aggregate(volume: &CostVolume, p1: f64, p2: f64, paths: Paths) -> Result<CostVolume> {
    if !(p1 >= 0.0 && p1 <= p2 && p2.is_finite()) {
        return Err(Error::domain(format!(
            "SGM penalties need 0 <= p1 <= p2, got p1 = {p1}, p2 = {p2}"
        )));
    }
    let (h, w, n) = (volume.height, volume.width, volume.depth());
    let mut total = vec![0.0; volume.costs.len()];
    let mut lr = vec![0.0; volume.costs.len()];
    for &(dy, dx) in paths.directions() {
        let ys: Vec<usize> = if dy >= 0 { (0..h).collect() } else { (0..h).rev().collect() };
        let xs: Vec<usize> = if dx >= 0 { (0..w).collect() } else { (0..w).rev().collect() };
        for &y in &ys {
            for &x in &xs {
                let here = (y * w + x) * n;
                let c = &volume.costs[here..here + n];
                let py = y as isize - dy;
                let px = x as isize - dx;
                if py < 0 || px < 0 || py >= h as isize || px >= w as isize {
                    lr[here..here + n].copy_from_slice(c);
                    continue;
                }
                let prev_at = (py as usize * w + px as usize) * n;
                let (before, after) = lr.split_at_mut(here.max(prev_at));
                let (prev, cur) = if prev_at < here {
                    (&before[prev_at..prev_at + n], &mut after[..n])
                } else {
                    // predecessor lies later in memory
                    let (cur, rest) = (&mut before[here..here + n], &after[..n]);
                    (rest, cur)
                };
                let min_prev = prev.iter().copied().fold(f64::INFINITY, f64::min);
                for d in 0..n {
                    let mut best = prev[d];
                    if d > 0 {
                        best = best.min(prev[d - 1] + p1);
                    }
                    if d + 1 < n {
                        best = best.min(prev[d + 1] + p1);
                    }
                    best = best.min(min_prev + p2);
                    cur[d] = c[d] + best - min_prev;
                }
            }
        }
        total.iter_mut().zip(&lr).for_each(|(t, l)| *t += l);
    }
    Ok(CostVolume {
        costs: total,
        ..*volume
    })
}

/// Subpixel disparities with a validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct DisparityMap {
    pub height: usize,
    pub width: usize,
    pub disp: Vec<f64>,
    pub valid: Vec<bool>,
}

impl DisparityMap {
    pub fn new(height: usize, width: usize, disp: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        if disp.len() != height * width || valid.len() != height * width {
            return Err(Error::dim("disparity map buffers do not match dims"));
        }
        Ok(DisparityMap {
            height,
            width,
            disp,
            valid,
        })
    }

    pub fn uniform(height: usize, width: usize, d: f64) -> Self {
        DisparityMap {
            height,
            width,
            disp: vec![d; height * width],
            valid: vec![true; height * width],
        }
    }

    fn flipped(&self) -> DisparityMap {
        let flip = |v: &[f64]| -> Vec<f64> {
            v.chunks(self.width).flat_map(|r| r.iter().rev().copied()).collect()
        };
        let valid = self
            .valid
            .chunks(self.width)
            .flat_map(|r| r.iter().rev().copied())
            .collect();
        DisparityMap {
            disp: flip(&self.disp),
            valid,
            ..*self
        }
    }
}

/// Winner-take-all with a parabola through the argmin and its neighbours.
pub fn wta_disparity(agg: &CostVolume) -> DisparityMap {
    let n = agg.depth();
    let disp = agg
        .costs
        .chunks(n)
        .map(|c| {
            let mut best = 0;
            for d in 1..n {
                if c[d] < c[best] {
                    best = d;
                }
            }
            if best == 0 || best + 1 >= n {
                return best as f64;
            }
            let (cm, c0, cp) = (c[best - 1], c[best], c[best + 1]);
            let denom = cm - 2.0 * c0 + cp;
            if denom <= 0.0 {
                return best as f64;
            }
            let offset = ((cm - cp) / (2.0 * denom)).clamp(-0.5, 0.5);
            best as f64 + offset
        })
        .collect::<Vec<_>>();
    let valid = vec![true; disp.len()];
    DisparityMap {
        height: agg.height,
        width: agg.width,
        disp,
        valid,
    }
}

/// Keeps pixels whose left disparity agrees with the right map at the
/// matched location within `tol` pixels.
pub fn lr_check(left: &DisparityMap, right: &DisparityMap, tol: f64) -> Result<DisparityMap> {
    if (left.height, left.width) != (right.height, right.width) {
        return Err(Error::dim("left and right disparity maps differ in size"));
    }
    let w = left.width;
    let valid = (0..left.disp.len())
        .map(|i| {
            let (y, x) = (i / w, i % w);
            let dl = left.disp[i];
            let xr = x as f64 - dl.round();
            if !left.valid[i] || xr < 0.0 || xr >= w as f64 {
                return false;
            }
            let j = y * w + xr as usize;
            right.valid[j] && (dl - right.disp[j]).abs() <= tol
        })
        .collect();
    Ok(DisparityMap {
        valid,
        ..left.clone()
    })
}

/// Fills invalid pixels from the nearer-background valid neighbour in the
/// row, then applies a colour-guided weighted median.
pub fn refine(disp: &DisparityMap, guide: &Tensor, wm_radius: usize) -> Result<DisparityMap> {
    if wm_radius == 0 {
        return Err(Error::domain("weighted median radius must be at least 1"));
    }
    let (gc, gh, gw) = guide.dims3()?;
    if (gh, gw) != (disp.height, disp.width) {
        return Err(Error::dim(format!(
            "guide is {gh}x{gw}, disparity is {}x{}",
            disp.height, disp.width
        )));
    }
    let filled = fill_invalid(disp)?;
    let (h, w) = (disp.height, disp.width);
    let plane = h * w;
    let g = guide.data();
    let sigma_c2 = 2.0 * 0.1f64.powi(2);
    let sigma_s2 = 2.0 * (wm_radius as f64).powi(2);
    let r = wm_radius as isize;

    let mut out = vec![0.0; plane];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let mut samples: Vec<(f64, f64)> = Vec::with_capacity((2 * wm_radius + 1).pow(2));
        for (x, o) in row.iter_mut().enumerate() {
            samples.clear();
            let i = y * w + x;
            for dy in -r..=r {
                let ny = y as isize + dy;
                if ny < 0 || ny >= h as isize {
                    continue;
                }
                for dx in -r..=r {
                    let nx = x as isize + dx;
                    if nx < 0 || nx >= w as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    let dc: f64 = (0..gc).map(|c| (g[c * plane + i] - g[c * plane + j]).powi(2)).sum();
                    let ds = (dy * dy + dx * dx) as f64;
                    let wt = (-dc / sigma_c2 - ds / sigma_s2).exp();
                    samples.push((filled[j], wt));
                }
            }
            samples.sort_by(|a, b| a.0.total_cmp(&b.0));
            let half = samples.iter().map(|s| s.1).sum::<f64>() / 2.0;
            let mut acc = 0.0;
            *o = samples.last().map_or(filled[i], |s| s.0);
            for &(v, wt) in &samples {
                acc += wt;
                if acc >= half {
                    *o = v;
                    break;
                }
            }
        }
    });
    Ok(DisparityMap::uniform(h, w, 0.0).with_values(out))
}

impl DisparityMap {
    fn with_values(mut self, disp: Vec<f64>) -> Self {
        self.disp = disp;
        self
    }
}

/// Invalid pixels take the smaller of the nearest valid disparities to
/// their left and right. Rows with no valid pixel copy the nearest row.
fn fill_invalid(disp: &DisparityMap) -> Result<Vec<f64>> {
    let (h, w) = (disp.height, disp.width);
    if !disp.valid.iter().any(|&v| v) {
        return Err(Error::domain("no valid disparity anywhere to fill from"));
    }
    let mut out = disp.disp.clone();
    let mut row_ok = vec![false; h];
    for y in 0..h {
        let valid = &disp.valid[y * w..(y + 1) * w];
        if !valid.iter().any(|&v| v) {
            continue;
        }
        row_ok[y] = true;
        let src = &disp.disp[y * w..(y + 1) * w];
        let mut left = vec![None; w];
        let mut last = None;
        for x in 0..w {
            if valid[x] {
                last = Some(src[x]);
            }
            left[x] = last;
        }
        let mut next = None;
        for x in (0..w).rev() {
            if valid[x] {
                next = Some(src[x]);
                continue;
            }
            out[y * w + x] = match (left[x], next) {
                (Some(a), Some(b)) => a.min(b),
                (Some(a), None) | (None, Some(a)) => a,
                (None, None) => unreachable!("row has a valid pixel"),
            };
        }
    }
    for y in 0..h {
        if row_ok[y] {
            continue;
        }
        let src = (0..h)
            .filter(|&k| row_ok[k])
            .min_by_key(|&k| (k as isize - y as isize).unsigned_abs())
            .expect("some row is valid");
        out.copy_within(src * w..(src + 1) * w, y * w);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StereoParams {
    pub census_radius: usize,
    pub d_max: usize,
    pub p1: f64,
    pub p2: f64,
    pub paths: Paths,
    pub tol: f64,
    pub wm_radius: usize,
    /// Scale `k` of the inverse-depth mapping `log(k / (d + eps))`.
    pub depth_scale: f64,
    pub eps: f64,
}

impl Default for StereoParams {
    fn default() -> Self {
        StereoParams {
            census_radius: 2,
            d_max: 64,
            p1: 4.0,
            p2: 32.0,
            paths: Paths::Eight,
            tol: 1.0,
            wm_radius: 4,
            depth_scale: 1.0,
            eps: 0.5,
        }
    }
}

fn disparity_one_side(left: &GrayImage, right: &GrayImage, p: &StereoParams) -> Result<DisparityMap> {
    let cl = census(left, p.census_radius)?;
    let cr = census(right, p.census_radius)?;
    let vol = build_cost_volume(&cl, &cr, p.d_max)?;
    let agg = sgm_aggregate(&vol, p.p1, p.p2, p.paths)?;
    Ok(wta_disparity(&agg))
}

/// Refined left-view disparity of a rectified colour pair.
pub fn stereo_disparity(left: &Tensor, right: &Tensor, params: &StereoParams) -> Result<DisparityMap> {
    if left.shape() != right.shape() {
        return Err(Error::dim(format!(
            "stereo pair dims differ: {:?} vs {:?}",
            left.shape(),
            right.shape()
        )));
    }
    let gl = GrayImage::from_rgb(left)?;
    let gr = GrayImage::from_rgb(right)?;
    let dl = disparity_one_side(&gl, &gr, params)?;
    // right view: mirror both images so the right one becomes the reference
    let dr = disparity_one_side(&gr.flipped(), &gl.flipped(), params)?.flipped();
    let checked = lr_check(&dl, &dr, params.tol)?;
    refine(&checked, left, params.wm_radius)
}

/// `log(k / (d + eps))`, strictly decreasing in `d`.
pub fn disparity_to_log_depth(d: f64, params: &StereoParams) -> f64 {
    (params.depth_scale / (d.max(0.0) + params.eps)).ln()
}

/// Full pipeline from a rectified tele pair to a log-depth map.
pub fn tele_stereo_depth(left: &Tensor, right: &Tensor, params: &StereoParams) -> Result<LogDepthMap> {
    let disp = stereo_disparity(left, right, params)?;
    let values = disp.disp.iter().map(|&d| disparity_to_log_depth(d, params)).collect();
    LogDepthMap::dense(disp.height, disp.width, values)
}
