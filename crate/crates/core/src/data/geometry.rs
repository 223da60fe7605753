use rand::Rng;

use crate::error::{Error, Result};
use crate::map::{DepthMap, LogDepthMap, TeleRegion};
use crate::tensor::Tensor;

pub const MIN_DEPTH: f64 = 1e-3;
pub const MAX_DEPTH: f64 = 1e4;

/// Source coordinate of output index `i` when resampling `n_in -> n_out`
/// with corner pixels aligned.
fn source_coord(i: usize, n_in: usize, n_out: usize) -> f64 {
    if n_out == 1 || n_in == 1 {
        0.0
    } else {
        i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64
    }
}

fn taps(i: usize, n_in: usize, n_out: usize) -> (usize, usize, f64) {
    let s = source_coord(i, n_in, n_out);
    let lo = (s.floor() as usize).min(n_in - 1);
    let hi = (lo + 1).min(n_in - 1);
    (lo, hi, s - lo as f64)
}

/// Bilinear resize with edge clamping.
///
/// Invalid source pixels do not contribute; an output pixel is valid only
/// if its nearest source pixel is valid.
pub fn resize_bilinear(map: &DepthMap, new_height: usize, new_width: usize) -> Result<DepthMap> {
    if new_height < 2 || new_width < 2 {
        return Err(Error::domain(format!(
            "resize target must be at least 2x2, got {new_height}x{new_width}"
        )));
    }
    let (h, w) = map.dims();
    if (h, w) == (new_height, new_width) {
        return Ok(map.clone());
    }
    let src = map.values();
    let mask = map.mask();
    let mut values = vec![0.0; new_height * new_width];
    let mut out_mask = vec![false; new_height * new_width];
    for y in 0..new_height {
        let (y0, y1, fy) = taps(y, h, new_height);
        let ny = source_coord(y, h, new_height).round() as usize;
        for x in 0..new_width {
            let (x0, x1, fx) = taps(x, w, new_width);
            let nx = source_coord(x, w, new_width).round() as usize;
            let i = y * new_width + x;
            out_mask[i] = mask[ny.min(h - 1) * w + nx.min(w - 1)];
            let corners = [
                (y0, x0, (1.0 - fy) * (1.0 - fx)),
                (y0, x1, (1.0 - fy) * fx),
                (y1, x0, fy * (1.0 - fx)),
                (y1, x1, fy * fx),
            ];
            let (mut acc, mut wsum) = (0.0, 0.0);
            for (sy, sx, wt) in corners {
                if mask[sy * w + sx] && wt > 0.0 {
                    acc += wt * src[sy * w + sx];
                    wsum += wt;
                }
            }
            values[i] = if wsum > 0.0 { acc / wsum } else { 0.0 };
        }
    }
    DepthMap::new(new_height, new_width, values, out_mask)
}

/// Bilinear resize of every channel of a `[C, H, W]` image.
pub fn resize_image(image: &Tensor, new_height: usize, new_width: usize) -> Result<Tensor> {
    let (c, h, w) = image.dims3()?;
    let mut out = Vec::with_capacity(c * new_height * new_width);
    for ch in 0..c {
        let plane = image.data()[ch * h * w..(ch + 1) * h * w].to_vec();
        let map = DepthMap::dense(h, w, plane)?;
        out.extend_from_slice(resize_bilinear(&map, new_height, new_width)?.values());
    }
    Tensor::new([c, new_height, new_width], out)
}

/// Natural log of depth clamped to `[1e-3, 1e4]`; the mask is kept.
pub fn to_log_depth(depth: &DepthMap) -> LogDepthMap {
    depth.map_values(|d| {
        let d = if d.is_nan() { MIN_DEPTH } else { d };
        d.clamp(MIN_DEPTH, MAX_DEPTH).ln()
    })
}

pub fn from_log_depth(log_depth: &LogDepthMap) -> DepthMap {
    log_depth.map_values(f64::exp)
}

/// Centred region with half the frame's height and width.
pub fn tele_region(height: usize, width: usize) -> Result<TeleRegion> {
    if !height.is_multiple_of(2) || !width.is_multiple_of(2) || height == 0 || width == 0 {
        return Err(Error::domain(format!(
            "frame dims must be even and non-zero, got {height}x{width}"
        )));
    }
    Ok(TeleRegion {
        y0: height / 4,
        x0: width / 4,
        height: height / 2,
        width: width / 2,
    })
}

/// Crop window of `crop_h x crop_w` taken at a random column and at the
/// bottom rows of an `h x w` frame.
pub fn bottom_random_crop(
    height: usize,
    width: usize,
    crop_h: usize,
    crop_w: usize,
    rng: &mut impl Rng,
) -> Result<TeleRegion> {
    if crop_h > height || crop_w > width || crop_h == 0 || crop_w == 0 {
        return Err(Error::domain(format!(
            "cannot crop {crop_h}x{crop_w} from {height}x{width}"
        )));
    }
    Ok(TeleRegion {
        y0: height - crop_h,
        x0: rng.gen_range(0..=width - crop_w),
        height: crop_h,
        width: crop_w,
    })
}

/// Crops every channel of a `[C, H, W]` image.
pub fn crop_image(image: &Tensor, region: &TeleRegion) -> Result<Tensor> {
    let (c, h, w) = image.dims3()?;
    region.check_inside(h, w)?;
    let mut out = Vec::with_capacity(c * region.height * region.width);
    for ch in 0..c {
        for y in region.y0..region.y0 + region.height {
            let row = ch * h * w + y * w;
            out.extend_from_slice(&image.data()[row + region.x0..row + region.x0 + region.width]);
        }
    }
    Tensor::new([c, region.height, region.width], out)
}
