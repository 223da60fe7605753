//! Scale-invariant depth losses and their weighted combination.
//!
//! Every loss works on the deviation `D = P - T` between predicted and
//! ground-truth log depth over the valid pixels of the target mask. The
//! scale-invariant losses only see differences of `D`, so adding a constant
//! to the prediction (a global depth scale) leaves them unchanged.

use crate::error::{Error, Result};
use crate::map::LogDepthMap;
use crate::tensor::{Tape, Tensor, Var};

/// Square neighbourhood used by the windowed loss: `(2r+1) × (2r+1)`,
/// centre pixel excluded.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowSpec {
    radius: usize,
}

impl WindowSpec {
    pub fn new(radius: usize) -> Result<Self> {
        if radius == 0 {
            return Err(Error::domain("window radius must be at least 1"));
        }
        Ok(WindowSpec { radius })
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    /// Number of neighbours of an interior pixel.
    pub fn neighbours(&self) -> usize {
        let side = 2 * self.radius + 1;
        side * side - 1
    }
}

impl Default for WindowSpec {
    /// 17×17.
    fn default() -> Self {
        WindowSpec { radius: 8 }
    }
}

/// Per-stage weights of the total loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w1: 0.5,
            w2: 0.5,
            w3: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.w1, self.w2, self.w3]
            .iter()
            .any(|w| !w.is_finite() || *w < 0.0)
        {
            return Err(Error::domain(format!("loss weights must be non-negative: {self:?}")));
        }
        Ok(())
    }
}

/// Which per-stage loss to train with.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    SiL1Exact,
    SiL1Windowed,
    SiL2,
    Combined,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "si_l1_exact" => Ok(LossKind::SiL1Exact),
            "si_l1_windowed" => Ok(LossKind::SiL1Windowed),
            "si_l2" => Ok(LossKind::SiL2),
            "combined" => Ok(LossKind::Combined),
            other => Err(Error::Usage(format!("unknown loss kind `{other}`"))),
        }
    }
}

impl LossKind {
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::SiL1Exact => "si_l1_exact",
            LossKind::SiL1Windowed => "si_l1_windowed",
            LossKind::SiL2 => "si_l2",
            LossKind::Combined => "combined",
        }
    }

    /// Records this loss of `pred` against `target` on `tape`.
    pub fn apply(
        &self,
        tape: &mut Tape,
        pred: Var,
        target: &LogDepthMap,
        window: WindowSpec,
    ) -> Result<Var> {
        match self {
            LossKind::SiL1Exact => si_l1_exact(tape, pred, target),
            LossKind::SiL1Windowed => si_l1_windowed(tape, pred, target, window),
            LossKind::SiL2 => si_l2(tape, pred, target),
            LossKind::Combined => combined_l1(tape, pred, target, window),
        }
    }

    /// Evaluates the loss between two maps over their joint mask.
    pub fn evaluate(&self, pred: &LogDepthMap, target: &LogDepthMap, window: WindowSpec) -> Result<f64> {
        let joint = pred.joint_mask(target)?;
        let target = target.clone().with_mask(joint)?;
        let mut tape = Tape::inference();
        let p = tape.constant(pred.to_tensor());
        let l = self.apply(&mut tape, p, &target, window)?;
        Ok(tape.value(l).item().expect("losses are scalar"))
    }
}

/// Deviations over the valid pixels, with their flat indices.
struct Deviation {
    index: Vec<usize>,
    d: Vec<f64>,
}

fn deviation(tape: &Tape, pred: Var, target: &LogDepthMap) -> Result<Deviation> {
    let p = tape.value(pred);
    if p.len() != target.values().len() {
        return Err(Error::dim(format!(
            "prediction shape {:?} does not match {}x{} target",
            p.shape(),
            target.height(),
            target.width()
        )));
    }
    let mut index = Vec::new();
    let mut d = Vec::new();
    for (i, ((&pv, &tv), &m)) in p.data().iter().zip(target.values()).zip(target.mask()).enumerate() {
        if m {
            index.push(i);
            d.push(pv - tv);
        }
    }
    if d.len() < 2 {
        return Err(Error::domain(format!(
            "loss needs at least 2 valid pixels, got {}",
            d.len()
        )));
    }
    Ok(Deviation { index, d })
}

/// Records a scalar loss whose gradient w.r.t. `pred` is `grad` times the
/// upstream gradient.
fn record(tape: &mut Tape, pred: Var, value: f64, grad: Option<Vec<f64>>) -> Var {
    let shape = tape.value(pred).shape().to_vec();
    let grad = grad.unwrap_or_default();
    tape.custom_unary(pred, Tensor::scalar(value), move |g| {
        let s = g.data()[0];
        Tensor::new(shape.clone(), grad.iter().map(|v| v * s).collect()).expect("grad sized to pred")
    })
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Exact pairwise L1 scale-invariant loss, `(1/N²) Σᵢ Σⱼ |Dᵢ − Dⱼ|`.
///
/// Quadratic in the number of valid pixels.
pub fn si_l1_exact(tape: &mut Tape, pred: Var, target: &LogDepthMap) -> Result<Var> {
    let dev = deviation(tape, pred, target)?;
    let n = dev.d.len();
    let norm = 1.0 / (n * n) as f64;
    let mut total = 0.0;
    for &di in &dev.d {
        for &dj in &dev.d {
            total += (di - dj).abs();
        }
    }
    let grad = tape.is_recording().then(|| {
        let mut g = vec![0.0; tape.value(pred).len()];
        for (&i, &di) in dev.index.iter().zip(&dev.d) {
            let s: f64 = dev.d.iter().map(|&dj| sign(di - dj)).sum();
            g[i] = 2.0 * norm * s;
        }
        g
    });
    Ok(record(tape, pred, total * norm, grad))
}

/// Windowed L1 scale-invariant loss.
///
/// Sums `|Dᵢ − Dₘ|` over each valid pixel `i` and every valid in-frame
/// neighbour `m ≠ i` of its window, normalised by the number of summed
/// pairs.
pub fn si_l1_windowed(
    tape: &mut Tape,
    pred: Var,
    target: &LogDepthMap,
    window: WindowSpec,
) -> Result<Var> {
    let (h, w) = target.dims();
    let dev = deviation(tape, pred, target)?;
    let mut dfull = vec![0.0; h * w];
    for (&i, &d) in dev.index.iter().zip(&dev.d) {
        dfull[i] = d;
    }
    let mask = target.mask();
    let recording = tape.is_recording();
    let mut grad = if recording { vec![0.0; h * w] } else { Vec::new() };
    let r = window.radius() as isize;
    let mut total = 0.0;
    let mut pairs = 0usize;

    for dy in -r..=r {
        for dx in -r..=r {
            if dy == 0 && dx == 0 {
                continue;
            }
            let y_lo = (-dy).max(0) as usize;
            let y_hi = (h as isize - dy.max(0)).max(0) as usize;
            let x_lo = (-dx).max(0) as usize;
            let x_hi = (w as isize - dx.max(0)).max(0) as usize;
            for y in y_lo..y_hi.min(h) {
                let ny = (y as isize + dy) as usize;
                for x in x_lo..x_hi.min(w) {
                    let i = y * w + x;
                    let m = ny * w + (x as isize + dx) as usize;
                    if !(mask[i] && mask[m]) {
                        continue;
                    }
                    let diff = dfull[i] - dfull[m];
                    total += diff.abs();
                    pairs += 1;
                    if recording {
                        let s = sign(diff);
                        grad[i] += s;
                        grad[m] -= s;
                    }
                }
            }
        }
    }
    if pairs == 0 {
        return Err(Error::domain("no valid neighbour pairs inside the window"));
    }
    let norm = 1.0 / pairs as f64;
    grad.iter_mut().for_each(|g| *g *= norm);
    Ok(record(tape, pred, total * norm, recording.then_some(grad)))
}

/// Fully scale-invariant L2 loss, `(1/N) ΣDᵢ² − (1/N²)(ΣDᵢ)²`.
pub fn si_l2(tape: &mut Tape, pred: Var, target: &LogDepthMap) -> Result<Var> {
    let dev = deviation(tape, pred, target)?;
    let n = dev.d.len() as f64;
    let mean = dev.d.iter().sum::<f64>() / n;
    // centred form of the same quantity, stable under large shifts
    let value = dev.d.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n;
    let grad = tape.is_recording().then(|| {
        let mut g = vec![0.0; tape.value(pred).len()];
        for (&i, &d) in dev.index.iter().zip(&dev.d) {
            g[i] = 2.0 * (d - mean) / n;
        }
        g
    });
    Ok(record(tape, pred, value, grad))
}

/// Plain masked L1, `(1/N) Σ|Dᵢ|`.
pub fn l1(tape: &mut Tape, pred: Var, target: &LogDepthMap) -> Result<Var> {
    let dev = deviation(tape, pred, target)?;
    let n = dev.d.len() as f64;
    let value = dev.d.iter().map(|d| d.abs()).sum::<f64>() / n;
    let grad = tape.is_recording().then(|| {
        let mut g = vec![0.0; tape.value(pred).len()];
        for (&i, &d) in dev.index.iter().zip(&dev.d) {
            g[i] = sign(d) / n;
        }
        g
    });
    Ok(record(tape, pred, value, grad))
}

/// `0.5 · si_l1_windowed + (1/N) Σ|Dᵢ|`. Not shift-invariant.
pub fn combined_l1(
    tape: &mut Tape,
    pred: Var,
    target: &LogDepthMap,
    window: WindowSpec,
) -> Result<Var> {
    let si = si_l1_windowed(tape, pred, target, window)?;
    let half = tape.scale(si, 0.5);
    let abs = l1(tape, pred, target)?;
    tape.add(half, abs)
}

/// `w1·L1 + w2·L2 + w3·L3`.
pub fn total_loss(tape: &mut Tape, stage: [Var; 3], weights: &LossWeights) -> Result<Var> {
    for v in stage {
        if tape.value(v).len() != 1 {
            return Err(Error::Usage("total_loss expects scalar stage losses".into()));
        }
    }
    let a = tape.scale(stage[0], weights.w1);
    let b = tape.scale(stage[1], weights.w2);
    let c = tape.scale(stage[2], weights.w3);
    let ab = tape.add(a, b)?;
    tape.add(ab, c)
}
