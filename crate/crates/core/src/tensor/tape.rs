use super::conv::{col2im, gemm, im2col, ConvGeom, Mat};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Pointwise operations exposed through [`Tape::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Elementwise {
    Relu,
    Abs,
    Add,
    Sub,
    Scale(f64),
}

type BackwardFn = Box<dyn Fn(&Tensor) -> Tensor + Send + Sync>;

enum Op {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        geom: ConvGeom,
        cols: Vec<f64>,
    },
    MaxPool2 {
        input: Var,
        argmax: Vec<usize>,
    },
    Upsample2 {
        input: Var,
    },
    Concat {
        a: Var,
        b: Var,
    },
    Relu(Var),
    Abs(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Mean(Var),
    Sum(Var),
    Custom {
        input: Var,
        backward: BackwardFn,
    },
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Ordered record of executed operations.
///
/// Nodes are appended in execution order, so every input precedes the
/// operations consuming it and a single reverse sweep is a valid
/// topological backward pass. An inference tape stores values only.
pub struct Tape {
    nodes: Vec<Node>,
    recording: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient of `var`, or zeros shaped like `like` if no gradient reached it.
    pub fn get_or_zeros(&self, var: Var, like: &Tensor) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape().to_vec()))
    }
}

impl Tape {
    /// A tape that records operations for a later backward pass.
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            recording: true,
        }
    }

    /// A tape that keeps forward values only; `backward` is rejected.
    pub fn inference() -> Self {
        Tape {
            nodes: Vec::new(),
            recording: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Trainable input: gradients are collected for it.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        let rg = self.recording;
        self.push(value, rg, Op::Leaf)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, false, Op::Leaf)
    }

    /// Copies `var` into a constant, cutting gradient flow.
    pub fn detach(&mut self, var: Var) -> Var {
        let v = self.value(var).clone();
        self.constant(v)
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        let op = if self.recording && requires_grad {
            op
        } else {
            Op::Leaf
        };
        self.nodes.push(Node {
            value,
            requires_grad: self.recording && requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::dim(format!("{what}: shapes {sa:?} and {sb:?} differ")));
        }
        Ok(())
    }

    /// 2-D convolution with zero padding; `weight` is `[C_out, C_in, kH, kW]`.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (c_in, h, w) = self.value(input).dims3()?;
        let wt = self.value(weight);
        let [c_out, wc_in, kh, kw] = wt.shape()[..] else {
            return Err(Error::dim(format!(
                "conv2d weight must be 4-D, got {:?}",
                wt.shape()
            )));
        };
        if wc_in != c_in {
            return Err(Error::dim(format!(
                "conv2d input has {c_in} channels but weight expects {wc_in}"
            )));
        }
        if self.value(bias).shape() != [c_out] {
            return Err(Error::dim(format!(
                "conv2d bias shape {:?} does not match {c_out} output channels",
                self.value(bias).shape()
            )));
        }
        if stride == 0 {
            return Err(Error::domain("conv2d stride must be positive"));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::dim(format!("conv2d kernel {kh}x{kw} must be odd")));
        }
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(Error::dim(format!(
                "conv2d kernel {kh}x{kw} larger than padded input {h}x{w} (+{padding})"
            )));
        }
        let geom = ConvGeom {
            c_in,
            h,
            w,
            kh,
            kw,
            stride,
            padding,
            h_out: (h + 2 * padding - kh) / stride + 1,
            w_out: (w + 2 * padding - kw) / stride + 1,
        };
        let cols = im2col(self.value(input).data(), &geom);
        let n = geom.cols();
        let mut out = vec![0.0; c_out * n];
        for (row, b) in out.chunks_mut(n).zip(self.value(bias).data()) {
            row.fill(*b);
        }
        gemm(
            Mat {
                data: self.value(weight).data(),
                rows: c_out,
                cols: geom.rows(),
                transposed: false,
            },
            Mat {
                data: &cols,
                rows: geom.rows(),
                cols: n,
                transposed: false,
            },
            1.0,
            &mut out,
        );
        let value = Tensor::new([c_out, geom.h_out, geom.w_out], out)?;
        let rg = self.any_grad(&[input, weight, bias]);
        let cols = if rg && self.recording { cols } else { Vec::new() };
        Ok(self.push(
            value,
            rg,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
                cols,
            },
        ))
    }

    /// 2×2 max pooling with stride 2. Ties go to the first cell in row-major order.
    pub fn pool_max2(&mut self, input: Var) -> Result<Var> {
        let (c, h, w) = self.value(input).dims3()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::dim(format!("pool_max2 needs even dims, got {h}x{w}")));
        }
        let (ho, wo) = (h / 2, w / 2);
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(c * ho * wo);
        let mut argmax = Vec::with_capacity(c * ho * wo);
        for ch in 0..c {
            let base = ch * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if x[idx] > x[best] || (x[idx].is_nan() && !x[best].is_nan()) {
                            best = idx;
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best);
                }
            }
        }
        let value = Tensor::new([c, ho, wo], out)?;
        let rg = self.any_grad(&[input]);
        Ok(self.push(value, rg, Op::MaxPool2 { input, argmax }))
    }

    /// Nearest-neighbour 2× upsampling.
    pub fn upsample_nearest2(&mut self, input: Var) -> Result<Var> {
        let (c, h, w) = self.value(input).dims3()?;
        let x = self.value(input).data();
        let (ho, wo) = (2 * h, 2 * w);
        let mut out = vec![0.0; c * ho * wo];
        for ch in 0..c {
            for oy in 0..ho {
                let src = &x[ch * h * w + (oy / 2) * w..][..w];
                let dst = &mut out[ch * ho * wo + oy * wo..][..wo];
                for (ox, d) in dst.iter_mut().enumerate() {
                    *d = src[ox / 2];
                }
            }
        }
        let value = Tensor::new([c, ho, wo], out)?;
        let rg = self.any_grad(&[input]);
        Ok(self.push(value, rg, Op::Upsample2 { input }))
    }

    /// Stacks the channels of `a` then `b`.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ca, ha, wa) = self.value(a).dims3()?;
        let (cb, hb, wb) = self.value(b).dims3()?;
        if (ha, wa) != (hb, wb) {
            return Err(Error::dim(format!(
                "concat_channels: spatial dims {ha}x{wa} and {hb}x{wb} differ"
            )));
        }
        let mut data = Vec::with_capacity((ca + cb) * ha * wa);
        data.extend_from_slice(self.value(a).data());
        data.extend_from_slice(self.value(b).data());
        let value = Tensor::new([ca + cb, ha, wa], data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, rg, Op::Concat { a, b }))
    }

    pub fn elementwise(&mut self, kind: Elementwise, x: Var, y: Option<Var>) -> Result<Var> {
        let need_y = matches!(kind, Elementwise::Add | Elementwise::Sub);
        match (need_y, y) {
            (true, None) => Err(Error::Usage(format!("{kind:?} needs two operands"))),
            (false, Some(_)) => Err(Error::Usage(format!("{kind:?} takes one operand"))),
            (true, Some(y)) if kind == Elementwise::Add => self.add(x, y),
            (true, Some(y)) => self.sub(x, y),
            (false, None) => Ok(match kind {
                Elementwise::Relu => self.relu(x),
                Elementwise::Abs => self.abs(x),
                Elementwise::Scale(c) => self.scale(x, c),
                Elementwise::Add | Elementwise::Sub => unreachable!(),
            }),
        }
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let src = self.value(x);
        let data = src.data().iter().map(|&v| f(v)).collect();
        let value = Tensor {
            shape: src.shape().to_vec(),
            data,
        };
        let rg = self.any_grad(&[x]);
        self.push(value, rg, op)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, |v| if v > 0.0 || v.is_nan() { v } else { 0.0 }, Op::Relu(x))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.map(x, f64::abs, Op::Abs(x))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.map(x, |v| v * c, Op::Scale(x, c))
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        self.same_shape(a, b, "elementwise")?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor {
            shape: ta.shape().to_vec(),
            data,
        };
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, rg, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.is_empty() {
            return Err(Error::domain("mean of an empty tensor"));
        }
        let m = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor::scalar(m), rg, Op::Mean(x)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.any_grad(&[x]);
        self.push(Tensor::scalar(s), rg, Op::Sum(x))
    }

    /// Records a unary op whose forward value was computed by the caller.
    /// `backward` maps the output gradient to the input gradient.
    pub fn custom_unary(
        &mut self,
        input: Var,
        value: Tensor,
        backward: impl Fn(&Tensor) -> Tensor + Send + Sync + 'static,
    ) -> Var {
        let rg = self.any_grad(&[input]);
        self.push(
            value,
            rg,
            Op::Custom {
                input,
                backward: Box::new(backward),
            },
        )
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.recording {
            return Err(Error::Usage(
                "backward on a tape created without gradient recording".into(),
            ));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor {
            shape: self.value(loss).shape().to_vec(),
            data: vec![1.0],
        });

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(&node.op, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], var: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[var.0].requires_grad {
            return;
        }
        let slot = grads[var.0].get_or_insert_with(|| Tensor::zeros(self.value(var).shape().to_vec()));
        f(&mut slot.data);
    }

    fn propagate(&self, op: &Op, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        match op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
                cols,
            } => {
                let c_out = self.value(*weight).shape()[0];
                let n = geom.cols();
                let k = geom.rows();
                self.accumulate(grads, *bias, |db| {
                    for (d, row) in db.iter_mut().zip(gd.chunks(n)) {
                        *d += row.iter().sum::<f64>();
                    }
                });
                self.accumulate(grads, *weight, |dw| {
                    gemm(
                        Mat { data: gd, rows: c_out, cols: n, transposed: false },
                        Mat { data: cols, rows: k, cols: n, transposed: true },
                        1.0,
                        dw,
                    );
                });
                if self.nodes[input.0].requires_grad {
                    let mut dcols = vec![0.0; k * n];
                    gemm(
                        Mat {
                            data: self.value(*weight).data(),
                            rows: c_out,
                            cols: k,
                            transposed: true,
                        },
                        Mat { data: gd, rows: c_out, cols: n, transposed: false },
                        0.0,
                        &mut dcols,
                    );
                    self.accumulate(grads, *input, |dx| col2im(&dcols, geom, dx));
                }
            }
            Op::MaxPool2 { input, argmax } => {
                self.accumulate(grads, *input, |dx| {
                    for (&idx, &gv) in argmax.iter().zip(gd) {
                        dx[idx] += gv;
                    }
                });
            }
            Op::Upsample2 { input } => {
                let (c, h, w) = self.value(*input).dims3().expect("recorded as 3-D");
                let wo = 2 * w;
                self.accumulate(grads, *input, |dx| {
                    for ch in 0..c {
                        for oy in 0..2 * h {
                            for ox in 0..wo {
                                dx[ch * h * w + (oy / 2) * w + ox / 2] +=
                                    gd[ch * 4 * h * w + oy * wo + ox];
                            }
                        }
                    }
                });
            }
            Op::Concat { a, b } => {
                let na = self.value(*a).len();
                self.accumulate(grads, *a, |da| add_into(da, &gd[..na]));
                self.accumulate(grads, *b, |db| add_into(db, &gd[na..]));
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                self.accumulate(grads, *x, |dx| {
                    for ((d, &v), &gv) in dx.iter_mut().zip(xv).zip(gd) {
                        if v > 0.0 {
                            *d += gv;
                        }
                    }
                });
            }
            Op::Abs(x) => {
                let xv = self.value(*x).data();
                self.accumulate(grads, *x, |dx| {
                    for ((d, &v), &gv) in dx.iter_mut().zip(xv).zip(gd) {
                        *d += sign(v) * gv;
                    }
                });
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |da| add_into(da, gd));
                self.accumulate(grads, *b, |db| add_into(db, gd));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |da| add_into(da, gd));
                self.accumulate(grads, *b, |db| {
                    db.iter_mut().zip(gd).for_each(|(d, &gv)| *d -= gv)
                });
            }
            Op::Scale(x, c) => {
                self.accumulate(grads, *x, |dx| {
                    dx.iter_mut().zip(gd).for_each(|(d, &gv)| *d += c * gv)
                });
            }
            Op::Mean(x) => {
                let n = self.value(*x).len() as f64;
                let share = gd[0] / n;
                self.accumulate(grads, *x, |dx| dx.iter_mut().for_each(|d| *d += share));
            }
            Op::Sum(x) => {
                self.accumulate(grads, *x, |dx| dx.iter_mut().for_each(|d| *d += gd[0]));
            }
            Op::Custom { input, backward } => {
                let gi = backward(g);
                self.accumulate(grads, *input, |dx| add_into(dx, gi.data()));
            }
        }
    }
}

/// Sign with the convention `sign(0) = 0`.
#[inline]
pub(crate) fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn conv_identity_kernel() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1, 3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]));
        let w = tape.leaf(t(&[1, 1, 1, 1], &[1.0]));
        let b = tape.leaf(t(&[1], &[0.0]));
        let y = tape.conv2d(x, w, b, 1, 0).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
    }

    #[test]
    fn conv_zero_kernel_gives_bias() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2, 4, 4], &[0.3; 32]));
        let w = tape.leaf(Tensor::zeros([3, 2, 3, 3]));
        let b = tape.leaf(t(&[3], &[1.0, -2.0, 0.5]));
        let y = tape.conv2d(x, w, b, 1, 1).unwrap();
        let v = tape.value(y);
        assert_eq!(v.shape(), &[3, 4, 4]);
        for (c, bias) in [1.0, -2.0, 0.5].iter().enumerate() {
            assert!(v.data()[c * 16..(c + 1) * 16].iter().all(|x| x == bias));
        }
    }

    #[test]
    fn conv_all_ones_sums_window() {
        let mut tape = Tape::inference();
        let x = tape.constant(t(&[1, 3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]));
        let w = tape.constant(Tensor::full([1, 1, 3, 3], 1.0));
        let b = tape.constant(Tensor::zeros([1]));
        let y = tape.conv2d(x, w, b, 1, 0).unwrap();
        assert_eq!(tape.value(y).data(), &[45.0]);
    }

    #[test]
    fn conv_output_extent_and_errors() {
        let mut tape = Tape::inference();
        let x = tape.constant(Tensor::zeros([2, 7, 5]));
        let w = tape.constant(Tensor::zeros([4, 2, 3, 3]));
        let b = tape.constant(Tensor::zeros([4]));
        let y = tape.conv2d(x, w, b, 2, 1).unwrap();
        assert_eq!(tape.value(y).shape(), &[4, 4, 3]);

        let bad = tape.constant(Tensor::zeros([4, 3, 3, 3]));
        assert!(matches!(tape.conv2d(x, bad, b, 1, 1), Err(Error::Dimension(_))));
        let even = tape.constant(Tensor::zeros([4, 2, 2, 2]));
        assert!(tape.conv2d(x, even, b, 1, 1).is_err());
    }

    #[test]
    fn pool_constant_and_max() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::full([2, 4, 6], 3.5));
        let y = tape.pool_max2(x).unwrap();
        assert_eq!(tape.value(y).shape(), &[2, 2, 3]);
        assert!(tape.value(y).data().iter().all(|&v| v == 3.5));

        let x = tape.leaf(t(&[1, 2, 2], &[1., 2., 3., 4.]));
        let y = tape.pool_max2(x).unwrap();
        assert_eq!(tape.value(y).data(), &[4.0]);

        let odd = tape.leaf(Tensor::zeros([1, 3, 2]));
        assert!(matches!(tape.pool_max2(odd), Err(Error::Dimension(_))));
    }

    #[test]
    fn pool_gradient_goes_to_argmax_and_first_tie() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1, 2, 4], &[1., 5., 7., 7., 2., 3., 7., 7.]));
        let y = tape.pool_max2(x).unwrap();
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert_eq!(
            g.get(x).unwrap().data(),
            &[0., 1., 1., 0., 0., 0., 0., 0.]
        );
    }

    #[test]
    fn upsample_replicates_and_sums_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1, 1, 1], &[1.0]));
        let y = tape.upsample_nearest2(x).unwrap();
        assert_eq!(tape.value(y).data(), &[1., 1., 1., 1.]);
        let x2 = tape.leaf(t(&[1, 2, 2], &[1., 2., 3., 4.]));
        let y2 = tape.upsample_nearest2(x2).unwrap();
        let s = tape.sum(y2);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x2).unwrap().data(), &[4.0; 4]);
    }

    #[test]
    fn concat_shapes_and_split() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::full([2, 4, 4], 1.0));
        let b = tape.leaf(Tensor::full([3, 4, 4], 2.0));
        let c = tape.concat_channels(a, b).unwrap();
        assert_eq!(tape.value(c).shape(), &[5, 4, 4]);
        assert_eq!(&tape.value(c).slice_channels(0..2).unwrap(), tape.value(a));

        let empty = tape.leaf(Tensor::zeros([0, 4, 4]));
        let same = tape.concat_channels(a, empty).unwrap();
        assert_eq!(tape.value(same), tape.value(a));

        let bad = tape.leaf(Tensor::zeros([1, 4, 3]));
        assert!(matches!(tape.concat_channels(a, bad), Err(Error::Dimension(_))));

        let scaled = tape.scale(c, 1.0);
        let s = tape.sum(scaled);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(a).unwrap().data(), &[1.0; 32]);
        assert_eq!(g.get(b).unwrap().data(), &[1.0; 48]);
    }

    #[test]
    fn elementwise_values_and_subgradients() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3], &[-1.0, 2.0, 0.0]));
        let r = tape.elementwise(Elementwise::Relu, x, None).unwrap();
        assert_eq!(tape.value(r).data(), &[0.0, 2.0, 0.0]);

        let y = tape.leaf(t(&[2], &[-3.0, 0.0]));
        let a = tape.elementwise(Elementwise::Abs, y, None).unwrap();
        let s = tape.sum(a);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(y).unwrap().data(), &[-1.0, 0.0]);

        let neg = tape.elementwise(Elementwise::Scale(-1.0), x, None).unwrap();
        let z = tape.elementwise(Elementwise::Add, x, Some(neg)).unwrap();
        assert!(tape.value(z).data().iter().all(|&v| v == 0.0));

        let short = tape.leaf(t(&[2], &[1.0, 1.0]));
        assert!(matches!(
            tape.elementwise(Elementwise::Sub, x, Some(short)),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            tape.elementwise(Elementwise::Add, x, None),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn relu_gradient_zero_at_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3], &[-1.0, 0.0, 2.0]));
        let r = tape.relu(x);
        let s = tape.sum(r);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn mean_values_and_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3], &[1., 2., 3.]));
        let m = tape.mean(x).unwrap();
        assert_eq!(tape.value(m).item(), Some(2.0));
        let c = tape.leaf(Tensor::full([5], 1.7));
        let mc = tape.mean(c).unwrap();
        assert!((tape.value(mc).item().unwrap() - 1.7).abs() < 1e-15);
        let g = tape.backward(m).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0 / 3.0; 3]);

        let e = tape.leaf(Tensor::zeros([0]));
        assert!(matches!(tape.mean(e), Err(Error::Domain(_))));
    }

    #[test]
    fn backward_examples() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[4], &[0.1, -3.0, 2.0, 5.0]));
        let s = tape.sum(x);
        assert_eq!(tape.backward(s).unwrap().get(x).unwrap().data(), &[1.0; 4]);

        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[2.0, -2.0]));
        let a = tape.abs(x);
        let m = tape.mean(a).unwrap();
        assert_eq!(tape.backward(m).unwrap().get(x).unwrap().data(), &[0.5, -0.5]);

        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1], &[3.0]));
        let y = tape.add(x, x).unwrap();
        assert_eq!(tape.backward(y).unwrap().get(x).unwrap().data(), &[2.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_and_inference_tapes() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros([2]));
        assert!(matches!(tape.backward(x), Err(Error::Usage(_))));

        let mut tape = Tape::inference();
        let x = tape.leaf(Tensor::zeros([1]));
        assert!(matches!(tape.backward(x), Err(Error::Usage(_))));
    }

    #[test]
    fn k_fold_use_accumulates() {
        for k in 1..5 {
            let mut tape = Tape::new();
            let x = tape.leaf(t(&[2], &[0.7, -1.3]));
            let mut acc = tape.scale(x, 1.5);
            for _ in 1..k {
                let term = tape.scale(x, 1.5);
                acc = tape.add(acc, term).unwrap();
            }
            let s = tape.sum(acc);
            let g = tape.backward(s).unwrap();
            assert_eq!(g.get(x).unwrap().data(), &[1.5 * k as f64; 2]);
        }
    }

    #[test]
    fn inputs_are_not_modified() {
        let mut tape = Tape::new();
        let x0 = t(&[1, 2, 2], &[1., -2., 3., -4.]);
        let x = tape.leaf(x0.clone());
        let r = tape.relu(x);
        let a = tape.abs(r);
        let _ = tape.upsample_nearest2(a).unwrap();
        assert_eq!(tape.value(x), &x0);
    }
}
