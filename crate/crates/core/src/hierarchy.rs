//! Three chained hourglasses: single-image depth, tele-FoV depth
//! propagation, and combination of the two.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::hourglass::{HourglassConfig, HourglassParams, HourglassVars};
use crate::map::{LogDepthMap, TeleRegion};
use crate::tensor::{Tape, Tensor, Var};

pub const BUNDLE_MAGIC: &[u8; 4] = b"HHD3";

/// Architecture shared by the three stages plus the wiring flags.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HierarchyConfig {
    pub base_channels: usize,
    pub levels: usize,
    /// Feed the colour image to stages 2 and 3 as well.
    pub color_guidance: bool,
    /// Stop gradients from stages 2 and 3 reaching earlier stages.
    pub detach_stages: bool,
}

impl Default for HierarchyConfig {
    fn default() -> Self {
        HierarchyConfig {
            base_channels: 16,
            levels: 3,
            color_guidance: true,
            detach_stages: false,
        }
    }
}

impl HierarchyConfig {
    pub fn stage_configs(&self) -> [HourglassConfig; 3] {
        let c = if self.color_guidance { 3 } else { 0 };
        let mk = |in_channels| HourglassConfig {
            in_channels,
            base_channels: self.base_channels,
            levels: self.levels,
            out_channels: 1,
        };
        [mk(3), mk(c + 1), mk(c + 2)]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HierarchyModel {
    pub net1: HourglassParams,
    pub net2: HourglassParams,
    pub net3: HourglassParams,
    pub detach_stages: bool,
}

/// Intermediate and final log-depth maps of one pass.
#[derive(Clone, Debug, PartialEq)]
pub struct HierarchyOutput {
    pub initial: LogDepthMap,
    pub filled: LogDepthMap,
    pub propagated: LogDepthMap,
    pub final_depth: LogDepthMap,
}

/// Tape handles of one [`HierarchyModel::forward_hierarchy`] pass.
#[derive(Clone, Debug)]
pub struct HierarchyPass {
    pub params: [HourglassVars; 3],
    pub initial: Var,
    pub filled: Var,
    pub propagated: Var,
    pub final_depth: Var,
}

impl HierarchyPass {
    pub fn output(&self, tape: &Tape) -> Result<HierarchyOutput> {
        let map = |v: Var| LogDepthMap::from_tensor(tape.value(v));
        Ok(HierarchyOutput {
            initial: map(self.initial)?,
            filled: map(self.filled)?,
            propagated: map(self.propagated)?,
            final_depth: map(self.final_depth)?,
        })
    }
}

/// Pastes the valid pixels of `tele` into `initial` at `region`.
///
/// Outside the region, and at masked-out tele pixels, the initial value is
/// kept. There is no blending at the seam.
pub fn fill_telefov(
    initial: &LogDepthMap,
    tele: &LogDepthMap,
    region: &TeleRegion,
) -> Result<LogDepthMap> {
    let plan = FillPlan::new(initial.dims(), tele, region)?;
    let mut out = initial.clone();
    for &(dst, v) in &plan.writes {
        out.values_mut()[dst] = v;
        out.mask_mut()[dst] = true;
    }
    Ok(out)
}

struct FillPlan {
    writes: Vec<(usize, f64)>,
}

impl FillPlan {
    fn new(frame: (usize, usize), tele: &LogDepthMap, region: &TeleRegion) -> Result<Self> {
        let (h, w) = frame;
        region.check_inside(h, w)?;
        if tele.dims() != (region.height, region.width) {
            return Err(Error::dim(format!(
                "tele map is {:?} but the region is {}x{}",
                tele.dims(),
                region.height,
                region.width
            )));
        }
        let mut writes = Vec::with_capacity(region.height * region.width);
        for y in 0..region.height {
            for x in 0..region.width {
                if tele.is_valid(y, x) {
                    writes.push(((region.y0 + y) * w + region.x0 + x, tele.get(y, x)));
                }
            }
        }
        Ok(FillPlan { writes })
    }
}

/// Tape version of [`fill_telefov`]; gradient flows to `initial` only where
/// its value survives.
pub fn fill_telefov_var(
    tape: &mut Tape,
    initial: Var,
    tele: &LogDepthMap,
    region: &TeleRegion,
) -> Result<Var> {
    let t = tape.value(initial);
    let (c, h, w) = t.dims3()?;
    if c != 1 {
        return Err(Error::dim(format!("fill expects a 1-channel map, got {c}")));
    }
    let plan = FillPlan::new((h, w), tele, region)?;
    let mut value = t.clone();
    for &(dst, v) in &plan.writes {
        value.data_mut()[dst] = v;
    }
    let replaced: Vec<usize> = plan.writes.iter().map(|&(d, _)| d).collect();
    Ok(tape.custom_unary(initial, value, move |g| {
        let mut g = g.clone();
        for &d in &replaced {
            g.data_mut()[d] = 0.0;
        }
        g
    }))
}

impl HierarchyModel {
    pub fn new(config: &HierarchyConfig, seed: u64) -> Result<Self> {
        Self::with_bias(config, seed, 0.0)
    }

    /// Initialises every bias to `bias` (positive values keep relus alive).
    pub fn with_bias(config: &HierarchyConfig, seed: u64, bias: f64) -> Result<Self> {
        let [c1, c2, c3] = config.stage_configs();
        Ok(HierarchyModel {
            net1: HourglassParams::build_with_bias(c1, seed.wrapping_mul(3), bias)?,
            net2: HourglassParams::build_with_bias(c2, seed.wrapping_mul(3).wrapping_add(1), bias)?,
            net3: HourglassParams::build_with_bias(c3, seed.wrapping_mul(3).wrapping_add(2), bias)?,
            detach_stages: config.detach_stages,
        })
    }

    pub fn from_nets(net1: HourglassParams, net2: HourglassParams, net3: HourglassParams) -> Result<Self> {
        let c1 = net1.config().in_channels;
        let c2 = net2.config().in_channels;
        let c3 = net3.config().in_channels;
        let ok = c1 == 3 && ((c2, c3) == (4, 5) || (c2, c3) == (1, 2));
        if !ok {
            return Err(Error::dim(format!(
                "stage input channels ({c1}, {c2}, {c3}) must be (3, 4, 5) or (3, 1, 2)"
            )));
        }
        Ok(HierarchyModel {
            net1,
            net2,
            net3,
            detach_stages: false,
        })
    }

    pub fn color_guidance(&self) -> bool {
        self.net2.config().in_channels == 4
    }

    pub fn nets(&self) -> [&HourglassParams; 3] {
        [&self.net1, &self.net2, &self.net3]
    }

    pub fn nets_mut(&mut self) -> [&mut HourglassParams; 3] {
        [&mut self.net1, &mut self.net2, &mut self.net3]
    }

    /// Checks the input dims against every stage.
    pub fn check_input(&self, height: usize, width: usize) -> Result<()> {
        for n in self.nets() {
            n.config().check_input(height, width)?;
        }
        Ok(())
    }

    /// Records all three stages on `tape`.
    pub fn forward_hierarchy(
        &self,
        tape: &mut Tape,
        wide_rgb: &Tensor,
        tele_depth: &LogDepthMap,
        region: &TeleRegion,
    ) -> Result<HierarchyPass> {
        let trainable = tape.is_recording();
        let params = [
            self.net1.register(tape, trainable),
            self.net2.register(tape, trainable),
            self.net3.register(tape, trainable),
        ];
        self.forward_with(tape, params, wide_rgb, tele_depth, region)
    }

    /// As [`forward_hierarchy`](Self::forward_hierarchy), with parameters
    /// already on the tape.
    pub fn forward_with(
        &self,
        tape: &mut Tape,
        params: [HourglassVars; 3],
        wide_rgb: &Tensor,
        tele_depth: &LogDepthMap,
        region: &TeleRegion,
    ) -> Result<HierarchyPass> {
        let (c, h, w) = wide_rgb.dims3()?;
        if c != 3 {
            return Err(Error::dim(format!("wide image must have 3 channels, got {c}")));
        }
        self.check_input(h, w)?;
        let rgb = tape.constant(wide_rgb.clone());

        let initial = params[0].forward(tape, rgb)?;
        let init_in = if self.detach_stages { tape.detach(initial) } else { initial };
        let filled = fill_telefov_var(tape, init_in, tele_depth, region)?;

        let stage2_in = if self.color_guidance() {
            tape.concat_channels(rgb, filled)?
        } else {
            filled
        };
        let propagated = params[1].forward(tape, stage2_in)?;

        let (init3, prop3) = if self.detach_stages {
            (tape.detach(initial), tape.detach(propagated))
        } else {
            (initial, propagated)
        };
        let depths = tape.concat_channels(init3, prop3)?;
        let stage3_in = if self.color_guidance() {
            tape.concat_channels(rgb, depths)?
        } else {
            depths
        };
        let final_depth = params[2].forward(tape, stage3_in)?;

        Ok(HierarchyPass {
            params,
            initial,
            filled,
            propagated,
            final_depth,
        })
    }

    /// All four maps, computed without gradient bookkeeping.
    pub fn infer(
        &self,
        wide_rgb: &Tensor,
        tele_depth: &LogDepthMap,
        region: &TeleRegion,
    ) -> Result<HierarchyOutput> {
        let mut tape = Tape::inference();
        let pass = self.forward_hierarchy(&mut tape, wide_rgb, tele_depth, region)?;
        pass.output(&tape)
    }

    pub fn infer_final(
        &self,
        wide_rgb: &Tensor,
        tele_depth: &LogDepthMap,
        region: &TeleRegion,
    ) -> Result<LogDepthMap> {
        let mut tape = Tape::inference();
        let pass = self.forward_hierarchy(&mut tape, wide_rgb, tele_depth, region)?;
        LogDepthMap::from_tensor(tape.value(pass.final_depth))
    }

    /// `HHD3` followed by three `HHG1` blocks.
    pub fn write_to(&self, out: &mut impl Write) -> Result<()> {
        out.write_all(BUNDLE_MAGIC)
            .map_err(|e| Error::Checkpoint(format!("write failed: {e}")))?;
        for n in self.nets() {
            n.write_to(out)?;
        }
        Ok(())
    }

    pub fn read_from(input: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        input
            .read_exact(&mut magic)
            .map_err(|_| Error::Checkpoint("truncated checkpoint".into()))?;
        if &magic != BUNDLE_MAGIC {
            return Err(Error::Checkpoint(format!(
                "bad magic {:?} (\"{}\"), expected \"HHD3\"",
                magic,
                String::from_utf8_lossy(&magic)
            )));
        }
        let net1 = HourglassParams::read_from(input)?;
        let net2 = HourglassParams::read_from(input)?;
        let net3 = HourglassParams::read_from(input)?;
        Self::from_nets(net1, net2, net3).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path.as_ref(), buf)
            .map_err(|e| Error::Checkpoint(format!("writing {}: {e}", path.as_ref().display())))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path.as_ref())
            .map_err(|e| Error::Checkpoint(format!("reading {}: {e}", path.as_ref().display())))?;
        let mut cursor = &bytes[..];
        let m = Self::read_from(&mut cursor)?;
        if !cursor.is_empty() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after checkpoint",
                cursor.len()
            )));
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn region() -> TeleRegion {
        TeleRegion {
            x0: 4,
            y0: 2,
            width: 8,
            height: 4,
        }
    }

    #[test]
    fn fill_examples() {
        let r = region();
        let initial = LogDepthMap::dense(8, 16, (0..128).map(|i| i as f64 * 0.1).collect()).unwrap();
        let same = fill_telefov(&initial, &initial.crop(&r).unwrap(), &r).unwrap();
        assert_eq!(same, initial);

        let zeros = LogDepthMap::full(8, 16, 0.0);
        let ones = LogDepthMap::full(4, 8, 1.0);
        let f = fill_telefov(&zeros, &ones, &r).unwrap();
        for y in 0..8 {
            for x in 0..16 {
                assert_eq!(f.get(y, x), if r.contains(y, x) { 1.0 } else { 0.0 });
            }
        }
        assert_eq!(f.get(1, 4), 0.0);
        assert_eq!(f.get(2, 3), 0.0);

        let wrong = LogDepthMap::full(4, 7, 1.0);
        assert!(matches!(fill_telefov(&zeros, &wrong, &r), Err(Error::Dimension(_))));
    }

    #[test]
    fn fill_is_idempotent() {
        let r = region();
        let initial = LogDepthMap::dense(8, 16, (0..128).map(|i| (i as f64).sin()).collect()).unwrap();
        let tele = LogDepthMap::dense(4, 8, (0..32).map(|i| (i as f64).cos()).collect()).unwrap();
        let once = fill_telefov(&initial, &tele, &r).unwrap();
        let twice = fill_telefov(&once, &tele, &r).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn zero_model_passes_tele_through_fill_only() {
        let cfg = HierarchyConfig {
            base_channels: 2,
            levels: 2,
            ..Default::default()
        };
        let mut m = HierarchyModel::new(&cfg, 1).unwrap();
        for n in m.nets_mut() {
            n.tensors_mut().for_each(|t| t.data_mut().fill(0.0));
        }
        let r = region();
        let tele = LogDepthMap::full(4, 8, 2.5);
        let rgb = Tensor::full([3, 8, 16], 0.3);
        let out = m.infer(&rgb, &tele, &r).unwrap();
        assert!(out.initial.values().iter().all(|&v| v == 0.0));
        assert!(out.propagated.values().iter().all(|&v| v == 0.0));
        assert!(out.final_depth.values().iter().all(|&v| v == 0.0));
        assert_eq!(out.filled.crop(&r).unwrap(), tele);
        assert_eq!(m.infer_final(&rgb, &tele, &r).unwrap(), out.final_depth);
    }

    #[test]
    fn bundle_round_trip_and_bad_magic() {
        let cfg = HierarchyConfig {
            base_channels: 2,
            levels: 1,
            ..Default::default()
        };
        let m = HierarchyModel::new(&cfg, 9).unwrap();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"HHD3");
        assert_eq!(&buf[4..8], b"HHG1");
        assert_eq!(HierarchyModel::read_from(&mut &buf[..]).unwrap(), m);
        buf[0] = b'X';
        assert!(matches!(
            HierarchyModel::read_from(&mut &buf[..]),
            Err(Error::Checkpoint(_))
        ));
    }
}
