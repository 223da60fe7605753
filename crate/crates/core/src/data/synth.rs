//! Procedural scenes: textured fronto-parallel rectangles and ellipses over
//! a ground plane, rendered into a wide image, dense depth, and optionally a
//! rectified tele stereo pair with exact integer disparities.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Sample;
use crate::error::{Error, Result};
use crate::map::{DepthMap, TeleRegion};
use crate::tensor::Tensor;

/// Relative depth of a surface with disparity `d` is `DISPARITY_DEPTH_SCALE / d`.
pub const DISPARITY_DEPTH_SCALE: f64 = 12.0;

const HAZE: [f64; 3] = [0.72, 0.76, 0.82];

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    /// Hourglass depth the dims must be compatible with.
    pub levels: usize,
    pub objects: usize,
    pub min_disparity: u32,
    pub max_disparity: u32,
    /// Amplitude of the multiplicative texture noise, in `[0, 1]`.
    pub texture_contrast: f64,
    /// Fraction of the way to the haze colour at the farthest surface.
    pub haze: f64,
    /// Global depth scale is `exp(u)`, `u ~ U(-scale_jitter, scale_jitter)`.
    pub scale_jitter: f64,
    pub stereo: bool,
}

impl SceneSpec {
    pub fn new(seed: u64, height: usize, width: usize) -> Self {
        SceneSpec {
            seed,
            height,
            width,
            levels: 3,
            objects: 4,
            min_disparity: 2,
            max_disparity: 12,
            texture_contrast: 0.5,
            haze: 0.5,
            scale_jitter: 0.5,
            stereo: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let f = 1usize << self.levels;
        if self.height == 0 || self.width == 0 || !self.height.is_multiple_of(f) || !self.width.is_multiple_of(f) {
            return Err(Error::domain(format!(
                "scene dims {}x{} must be non-zero multiples of {f}",
                self.height, self.width
            )));
        }
        if self.min_disparity == 0 || self.min_disparity > self.max_disparity {
            return Err(Error::domain(format!(
                "disparity range [{}, {}] must satisfy 1 <= min <= max",
                self.min_disparity, self.max_disparity
            )));
        }
        if !(0.0..=1.0).contains(&self.texture_contrast) || !(0.0..=1.0).contains(&self.haze) {
            return Err(Error::domain("texture contrast and haze must lie in [0, 1]"));
        }
        if !(self.scale_jitter >= 0.0 && self.scale_jitter.is_finite()) {
            return Err(Error::domain("scale jitter must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Rectified pair with left-view ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct StereoPair {
    pub left: Tensor,
    pub right: Tensor,
    pub disparity: Vec<f64>,
    /// Left pixels whose match is visible in the right image.
    pub non_occluded: Vec<bool>,
    pub height: usize,
    pub width: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthScene {
    pub sample: Sample,
    pub tele_pair: Option<StereoPair>,
    /// Global factor applied to the relative depth.
    pub depth_scale: f64,
}

#[derive(Clone, Copy, Debug)]
enum Shape {
    Rect { y0: f64, x0: f64, y1: f64, x1: f64 },
    Ellipse { cy: f64, cx: f64, ry: f64, rx: f64 },
}

impl Shape {
    fn contains(&self, y: f64, x: f64) -> bool {
        match *self {
            Shape::Rect { y0, x0, y1, x1 } => y >= y0 && y < y1 && x >= x0 && x < x1,
            Shape::Ellipse { cy, cx, ry, rx } => {
                let (dy, dx) = ((y - cy) / ry, (x - cx) / rx);
                dy * dy + dx * dx <= 1.0
            }
        }
    }
}

#[derive(Clone, Debug)]
struct Surface {
    shape: Option<Shape>,
    disparity: u32,
    color: [f64; 3],
    texture_seed: u64,
}

#[derive(Clone, Debug)]
struct Scene {
    height: usize,
    ground_near: u32,
    ground_far: u32,
    surfaces: Vec<Surface>,
    contrast: f64,
    haze: f64,
    d_min: f64,
    d_max: f64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn hash_unit(seed: u64, y: i64, x: i64) -> f64 {
    let h = splitmix(seed ^ splitmix((y as u64).wrapping_mul(0x1_0000_0001) ^ (x as u64)));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

impl Scene {
    fn build(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Scene {
        let (h, w) = (spec.height as f64, spec.width as f64);
        let (lo, hi) = (spec.min_disparity, spec.max_disparity);
        let ground_far = lo;
        let ground_near = lo + (hi - lo) * 2 / 3;
        let mut surfaces = vec![Surface {
            shape: None,
            disparity: 0,
            color: [rng.gen_range(0.3..0.7), rng.gen_range(0.4..0.8), rng.gen_range(0.2..0.6)],
            texture_seed: rng.gen(),
        }];
        for _ in 0..spec.objects {
            let d = rng.gen_range(lo..=hi);
            let size = h.min(w) * rng.gen_range(0.08..0.16) * (0.6 + d as f64 / hi as f64);
            let cy = rng.gen_range(0.0..h);
            let cx = rng.gen_range(0.0..w);
            let aspect: f64 = rng.gen_range(0.6..1.6);
            let (ry, rx) = (size, size * aspect);
            let shape = if rng.gen_bool(0.5) {
                Shape::Rect { y0: cy - ry, x0: cx - rx, y1: cy + ry, x1: cx + rx }
            } else {
                Shape::Ellipse { cy, cx, ry, rx }
            };
            surfaces.push(Surface {
                shape: Some(shape),
                disparity: d,
                color: [rng.gen_range(0.1..1.0), rng.gen_range(0.1..1.0), rng.gen_range(0.1..1.0)],
                texture_seed: rng.gen(),
            });
        }
        Scene {
            height: spec.height,
            ground_near,
            ground_far,
            surfaces,
            contrast: spec.texture_contrast,
            haze: spec.haze,
            d_min: lo as f64,
            d_max: hi as f64,
        }
    }

    /// Ground disparity grows from the top row to the bottom row.
    fn ground_disparity(&self, y: usize) -> u32 {
        if self.height < 2 {
            return self.ground_far;
        }
        let t = y as f64 / (self.height - 1) as f64;
        let span = (self.ground_near - self.ground_far) as f64;
        self.ground_far + (t * span).round() as u32
    }

    fn disparity_of(&self, s: usize, y: usize) -> u32 {
        if s == 0 {
            self.ground_disparity(y)
        } else {
            self.surfaces[s].disparity
        }
    }

    /// Front surface seen at left-view column `x_left` of row `y`.
    fn front_left(&self, y: usize, x_left: i64) -> (usize, u32) {
        let mut best = (0, self.ground_disparity(y));
        for (s, surf) in self.surfaces.iter().enumerate().skip(1) {
            let shape = surf.shape.expect("objects have shapes");
            if shape.contains(y as f64 + 0.5, x_left as f64 + 0.5) && (surf.disparity, s) > (best.1, best.0) {
                best = (s, surf.disparity);
            }
        }
        best
    }

    /// Front surface seen at right-view column `x_right`: each surface is
    /// shifted left by its own disparity.
    fn front_right(&self, y: usize, x_right: i64) -> (usize, u32) {
        let mut best = (0, self.ground_disparity(y));
        for (s, surf) in self.surfaces.iter().enumerate().skip(1) {
            let shape = surf.shape.expect("objects have shapes");
            let x_left = x_right + surf.disparity as i64;
            if shape.contains(y as f64 + 0.5, x_left as f64 + 0.5) && (surf.disparity, s) > (best.1, best.0) {
                best = (s, surf.disparity);
            }
        }
        best
    }

    /// Colour of surface `s` at left-view texture coordinate `(y, x_left)`.
    fn shade(&self, s: usize, y: usize, x_left: i64) -> [f64; 3] {
        let surf = &self.surfaces[s];
        let (yi, seed) = (y as i64, surf.texture_seed);
        let fine = hash_unit(seed, yi, x_left);
        let coarse = hash_unit(seed ^ 0x5bd1_e995, yi.div_euclid(4), x_left.div_euclid(4));
        let n = 0.6 * fine + 0.4 * coarse;
        let gain = 1.0 - self.contrast + self.contrast * 2.0 * n;
        let d = self.disparity_of(s, y) as f64;
        let t = if self.d_max > self.d_min {
            self.haze * (self.d_max / d - 1.0) / (self.d_max / self.d_min - 1.0)
        } else {
            0.0
        };
        let mut c = [0.0; 3];
        for k in 0..3 {
            let v = (surf.color[k] * gain).clamp(0.0, 1.0);
            c[k] = (1.0 - t) * v + t * HAZE[k];
        }
        c
    }

    fn render_left(&self, region: &TeleRegion) -> (Tensor, Vec<u32>, Vec<usize>) {
        let (rh, rw) = (region.height, region.width);
        let n = rh * rw;
        let mut img = vec![0.0; 3 * n];
        let mut disp = vec![0; n];
        let mut owner = vec![0; n];
        for y in 0..rh {
            for x in 0..rw {
                let (fy, fx) = (region.y0 + y, (region.x0 + x) as i64);
                let (s, d) = self.front_left(fy, fx);
                let c = self.shade(s, fy, fx);
                let i = y * rw + x;
                for k in 0..3 {
                    img[k * n + i] = c[k];
                }
                disp[i] = d;
                owner[i] = s;
            }
        }
        (Tensor::new([3, rh, rw], img).expect("sized"), disp, owner)
    }

    fn render_pair(&self, region: &TeleRegion) -> StereoPair {
        let (left, disp, owner) = self.render_left(region);
        let (rh, rw) = (region.height, region.width);
        let n = rh * rw;
        let mut right = vec![0.0; 3 * n];
        for y in 0..rh {
            for x in 0..rw {
                let (fy, xr) = (region.y0 + y, (region.x0 + x) as i64);
                let (s, d) = self.front_right(fy, xr);
                let c = self.shade(s, fy, xr + d as i64);
                for k in 0..3 {
                    right[k * n + y * rw + x] = c[k];
                }
            }
        }
        let mut non_occluded = vec![false; n];
        for y in 0..rh {
            for x in 0..rw {
                let i = y * rw + x;
                let xr = x as i64 - disp[i] as i64;
                non_occluded[i] =
                    xr >= 0 && self.front_right(region.y0 + y, xr + region.x0 as i64).0 == owner[i];
            }
        }
        StereoPair {
            left,
            right: Tensor::new([3, rh, rw], right).expect("sized"),
            disparity: disp.iter().map(|&d| d as f64).collect(),
            non_occluded,
            height: rh,
            width: rw,
        }
    }
}

/// Renders one scene. Deterministic in `spec`.
pub fn synth_scene(spec: &SceneSpec) -> Result<SynthScene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let scene = Scene::build(spec, &mut rng);
    let depth_scale = rng.gen_range(-spec.scale_jitter..=spec.scale_jitter).exp();
    let full = TeleRegion { y0: 0, x0: 0, height: spec.height, width: spec.width };
    let (wide_rgb, disp, _) = scene.render_left(&full);
    let depth = disp
        .iter()
        .map(|&d| depth_scale * DISPARITY_DEPTH_SCALE / d as f64)
        .collect();
    let gt_depth = DepthMap::dense(spec.height, spec.width, depth)?;
    let sample = Sample::from_ground_truth(wide_rgb, gt_depth)?;
    let tele_pair = spec.stereo.then(|| scene.render_pair(&sample.region));
    Ok(SynthScene { sample, tele_pair, depth_scale })
}

/// Full-frame rectified pair of the scene described by `spec`.
pub fn synth_stereo_pair(spec: &SceneSpec) -> Result<StereoPair> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let scene = Scene::build(spec, &mut rng);
    let full = TeleRegion { y0: 0, x0: 0, height: spec.height, width: spec.width };
    Ok(scene.render_pair(&full))
}

/// `count` scenes with seeds `seed, seed + 1, ...`.
pub fn synth_dataset(base: &SceneSpec, count: usize) -> Result<Vec<Sample>> {
    (0..count as u64)
        .map(|i| {
            let spec = SceneSpec { seed: base.seed.wrapping_add(i), ..base.clone() };
            synth_scene(&spec).map(|s| s.sample)
        })
        .collect()
}
