//! Encoder-decoder depth network with concatenation skip connections.
//!
//! Layout for `levels = L`, `base = B`:
//!
//! ```text
//! enc{i}      conv3x3  (i == 0 ? in : B·2^(i-1)) -> B·2^i   + relu, then 2x2 max-pool
//! bottleneck  conv3x3  B·2^(L-1) -> B·2^L                    + relu
//! dec{i}      upsample, concat enc{i} activation,
//!             conv3x3  B·2^(i+1) + B·2^i -> B·2^i            + relu   (i = L-1 .. 0)
//! head        conv1x1  B -> out                               linear
//! ```

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HHG1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HourglassConfig {
    pub in_channels: usize,
    pub base_channels: usize,
    pub levels: usize,
    pub out_channels: usize,
}

impl HourglassConfig {
    /// Default toy network: three levels, 16 base channels, one output.
    pub fn new(in_channels: usize) -> Self {
        HourglassConfig {
            in_channels,
            base_channels: 16,
            levels: 3,
            out_channels: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.base_channels == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::domain(format!("invalid hourglass config {self:?}")));
        }
        if self.levels > 16 {
            return Err(Error::domain(format!("{} levels is too deep", self.levels)));
        }
        Ok(())
    }

    /// Spatial dims must survive `levels` halvings.
    pub fn check_input(&self, height: usize, width: usize) -> Result<()> {
        let f = 1usize << self.levels;
        if height == 0 || width == 0 || !height.is_multiple_of(f) || !width.is_multiple_of(f) {
            return Err(Error::dim(format!(
                "input {height}x{width} is not divisible by 2^{} = {f}",
                self.levels
            )));
        }
        Ok(())
    }

    fn width_at(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Conv layers in parameter order.
    pub fn layers(&self) -> Vec<LayerSpec> {
        let mut out = Vec::with_capacity(2 * self.levels + 2);
        for i in 0..self.levels {
            let c_in = if i == 0 { self.in_channels } else { self.width_at(i - 1) };
            out.push(LayerSpec::new(format!("enc{i}"), c_in, self.width_at(i), 3));
        }
        out.push(LayerSpec::new(
            "bottleneck".into(),
            self.width_at(self.levels - 1),
            self.width_at(self.levels),
            3,
        ));
        for i in (0..self.levels).rev() {
            out.push(LayerSpec::new(
                format!("dec{i}"),
                self.width_at(i + 1) + self.width_at(i),
                self.width_at(i),
                3,
            ));
        }
        out.push(LayerSpec::new("head".into(), self.base_channels, self.out_channels, 1));
        out
    }

    /// Total number of scalar weights and biases.
    pub fn param_count(&self) -> usize {
        self.layers()
            .iter()
            .map(|l| l.c_out * l.c_in * l.kernel * l.kernel + l.c_out)
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
}

impl LayerSpec {
    fn new(name: String, c_in: usize, c_out: usize, kernel: usize) -> Self {
        LayerSpec {
            name,
            c_in,
            c_out,
            kernel,
        }
    }

    fn weight_shape(&self) -> [usize; 4] {
        [self.c_out, self.c_in, self.kernel, self.kernel]
    }
}

/// Named weights of one hourglass, in layer order (`<layer>.weight`, `<layer>.bias`).
#[derive(Clone, Debug, PartialEq)]
pub struct HourglassParams {
    config: HourglassConfig,
    params: Vec<(String, Tensor)>,
}

impl HourglassParams {
    /// Uniform weights in `±sqrt(6 / fan_in)`, zero biases.
    pub fn build(config: HourglassConfig, seed: u64) -> Result<Self> {
        Self::build_with_bias(config, seed, 0.0)
    }

    /// As [`build`](Self::build) but with every bias set to `bias`.
    pub fn build_with_bias(config: HourglassConfig, seed: u64, bias: f64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        for layer in config.layers() {
            let fan_in = layer.c_in * layer.kernel * layer.kernel;
            let bound = (6.0 / fan_in as f64).sqrt();
            let shape = layer.weight_shape();
            let n: usize = shape.iter().product();
            let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
            params.push((format!("{}.weight", layer.name), Tensor::new(shape, w)?));
            params.push((
                format!("{}.bias", layer.name),
                Tensor::full([layer.c_out], bias),
            ));
        }
        Ok(HourglassParams { config, params })
    }

    /// All-zero parameters.
    pub fn zeros(config: HourglassConfig) -> Result<Self> {
        let mut p = Self::build(config, 0)?;
        for (_, t) in &mut p.params {
            t.data_mut().fill(0.0);
        }
        Ok(p)
    }

    pub fn config(&self) -> &HourglassConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.params.iter_mut().map(|(_, t)| t)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|(_, t)| t.len()).sum()
    }

    /// Puts every parameter on `tape`, as trainable leaves or constants.
    pub fn register(&self, tape: &mut Tape, trainable: bool) -> HourglassVars {
        let vars = self
            .params
            .iter()
            .map(|(_, t)| {
                if trainable {
                    tape.leaf(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        HourglassVars {
            config: self.config,
            vars,
        }
    }

    /// Runs the network on a fresh inference tape.
    pub fn predict(&self, input: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::inference();
        let vars = self.register(&mut tape, false);
        let x = tape.constant(input.clone());
        let y = vars.forward(&mut tape, x)?;
        Ok(tape.value(y).clone())
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
        let p = Self::read_from(&mut cursor)?;
        if !cursor.is_empty() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after checkpoint",
                cursor.len()
            )));
        }
        Ok(p)
    }

    /// Serialises as one `HHG1` block.
    pub fn write_to(&self, out: &mut impl Write) -> Result<()> {
        let werr = |e: std::io::Error| Error::Checkpoint(format!("write failed: {e}"));
        let c = &self.config;
        out.write_all(CHECKPOINT_MAGIC).map_err(werr)?;
        for v in [c.in_channels, c.base_channels, c.levels, c.out_channels, self.params.len()] {
            out.write_all(&(v as i32).to_le_bytes()).map_err(werr)?;
        }
        for (name, t) in &self.params {
            out.write_all(&(name.len() as u16).to_le_bytes()).map_err(werr)?;
            out.write_all(name.as_bytes()).map_err(werr)?;
            out.write_all(&[t.shape().len() as u8]).map_err(werr)?;
            for &e in t.shape() {
                out.write_all(&(e as u32).to_le_bytes()).map_err(werr)?;
            }
            let mut raw = Vec::with_capacity(t.len() * 8);
            for v in t.data() {
                raw.extend_from_slice(&v.to_le_bytes());
            }
            out.write_all(&raw).map_err(werr)?;
        }
        Ok(())
    }

    /// Parses one `HHG1` block, validating every name and shape against the
    /// layout implied by the embedded config.
    pub fn read_from(input: &mut impl Read) -> Result<Self> {
        let mut r = Reader(input);
        let magic: [u8; 4] = r.array()?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint(format!(
                "bad magic {:?} (\"{}\"), expected \"HHG1\"",
                magic,
                String::from_utf8_lossy(&magic)
            )));
        }
        let mut header = [0usize; 5];
        for h in &mut header {
            let v = i32::from_le_bytes(r.array()?);
            *h = usize::try_from(v)
                .map_err(|_| Error::Checkpoint(format!("negative header field {v}")))?;
        }
        let [in_channels, base_channels, levels, out_channels, count] = header;
        let config = HourglassConfig {
            in_channels,
            base_channels,
            levels,
            out_channels,
        };
        config
            .validate()
            .map_err(|e| Error::Checkpoint(format!("embedded config: {e}")))?;
        let layout = Self::zeros(config)?;
        if count != layout.params.len() {
            return Err(Error::Checkpoint(format!(
                "config implies {} parameters, file declares {count}",
                layout.params.len()
            )));
        }
        let mut params = Vec::with_capacity(count);
        for (expect_name, expect) in &layout.params {
            let len = u16::from_le_bytes(r.array()?) as usize;
            let name = String::from_utf8(r.bytes(len)?)
                .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
            if &name != expect_name {
                return Err(Error::Checkpoint(format!(
                    "expected parameter `{expect_name}`, found `{name}`"
                )));
            }
            let rank = r.array::<1>()?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u32::from_le_bytes(r.array()?) as usize);
            }
            if shape != expect.shape() {
                return Err(Error::Checkpoint(format!(
                    "shape mismatch for `{name}`: file {shape:?}, config {:?}",
                    expect.shape()
                )));
            }
            let raw = r.bytes(expect.len() * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            params.push((name, Tensor::new(shape, data)?));
        }
        Ok(HourglassParams { config, params })
    }
}

struct Reader<'a, R: Read>(&'a mut R);

impl<R: Read> Reader<'_, R> {
    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.0
            .read_exact(&mut b)
            .map_err(|_| Error::Checkpoint("truncated checkpoint".into()))?;
        Ok(b)
    }

    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut b = vec![0u8; n];
        self.0
            .read_exact(&mut b)
            .map_err(|_| Error::Checkpoint("truncated checkpoint".into()))?;
        Ok(b)
    }
}

/// Parameters of one hourglass as recorded on a tape.
#[derive(Clone, Debug)]
pub struct HourglassVars {
    config: HourglassConfig,
    vars: Vec<Var>,
}

impl HourglassVars {
    /// Wraps tape handles laid out like [`HourglassParams::iter`].
    pub fn from_vars(tape: &Tape, config: HourglassConfig, vars: Vec<Var>) -> Result<Self> {
        config.validate()?;
        let layers = config.layers();
        if vars.len() != 2 * layers.len() {
            return Err(Error::dim(format!(
                "expected {} parameter handles, got {}",
                2 * layers.len(),
                vars.len()
            )));
        }
        for (layer, pair) in layers.iter().zip(vars.chunks(2)) {
            let w = tape.value(pair[0]).shape();
            let b = tape.value(pair[1]).shape();
            if w != layer.weight_shape().as_slice() || b != [layer.c_out] {
                return Err(Error::dim(format!(
                    "{}: got weight {w:?} and bias {b:?}",
                    layer.name
                )));
            }
        }
        Ok(HourglassVars { config, vars })
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    fn layer(&self, idx: usize) -> (Var, Var) {
        (self.vars[2 * idx], self.vars[2 * idx + 1])
    }

    fn conv_relu(&self, tape: &mut Tape, idx: usize, x: Var) -> Result<Var> {
        let (w, b) = self.layer(idx);
        let y = tape.conv2d(x, w, b, 1, 1)?;
        Ok(tape.relu(y))
    }

    /// `input` is `[in_channels, H, W]`; returns `[out_channels, H, W]`.
    pub fn forward(&self, tape: &mut Tape, input: Var) -> Result<Var> {
        let cfg = &self.config;
        let (c, h, w) = tape.value(input).dims3()?;
        if c != cfg.in_channels {
            return Err(Error::dim(format!(
                "hourglass expects {} input channels, got {c}",
                cfg.in_channels
            )));
        }
        cfg.check_input(h, w)?;

        let mut skips = Vec::with_capacity(cfg.levels);
        let mut x = input;
        for i in 0..cfg.levels {
            let e = self.conv_relu(tape, i, x)?;
            skips.push(e);
            x = tape.pool_max2(e)?;
        }
        x = self.conv_relu(tape, cfg.levels, x)?;
        for (step, i) in (0..cfg.levels).rev().enumerate() {
            let up = tape.upsample_nearest2(x)?;
            let cat = tape.concat_channels(up, skips[i])?;
            x = self.conv_relu(tape, cfg.levels + 1 + step, cat)?;
        }
        let (w, b) = self.layer(2 * cfg.levels + 1);
        tape.conv2d(x, w, b, 1, 0)
    }
}
