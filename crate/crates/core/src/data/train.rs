use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Sample;
use crate::error::{Error, Result};
use crate::hierarchy::HierarchyModel;
use crate::losses::{total_loss, LossKind, LossWeights, WindowSpec};
use crate::tensor::{Tape, Tensor};

/// Adam with per-scalar first and second moment estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of `params` with matching `grads`.
    pub fn update<'a>(
        &mut self,
        params: impl IntoIterator<Item = &'a mut Tensor>,
        grads: &[Tensor],
    ) -> Result<()> {
        let params: Vec<&mut Tensor> = params.into_iter().collect();
        if params.len() != grads.len() {
            return Err(Error::Usage(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(Error::Usage("parameter set changed between steps".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || self.m[k].len() != p.len() {
                return Err(Error::dim(format!(
                    "gradient {:?} does not match parameter {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, (w, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let step = self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
                *w -= step;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainOptions {
    pub weights: LossWeights,
    pub loss: LossKind,
    pub window: WindowSpec,
    pub lr: f64,
    /// Shuffles the sample order each epoch when set.
    pub shuffle_seed: Option<u64>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            weights: LossWeights::default(),
            loss: LossKind::SiL1Windowed,
            window: WindowSpec::default(),
            lr: 1e-3,
            shuffle_seed: None,
        }
    }
}

/// Per-stage losses and their weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StageLosses {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub total: f64,
}

impl StageLosses {
    fn is_finite(&self) -> bool {
        [self.l1, self.l2, self.l3, self.total].iter().all(|v| v.is_finite())
    }
}

/// Records the three stage losses and their total for `sample`.
fn record(
    model: &HierarchyModel,
    tape: &mut Tape,
    sample: &Sample,
    options: &TrainOptions,
) -> Result<(crate::hierarchy::HierarchyPass, crate::tensor::Var, StageLosses)> {
    let target = sample.target();
    let pass = model.forward_hierarchy(tape, &sample.wide_rgb, &sample.tele_depth, &sample.region)?;
    let l1 = options.loss.apply(tape, pass.initial, &target, options.window)?;
    let l2 = options.loss.apply(tape, pass.propagated, &target, options.window)?;
    let l3 = options.loss.apply(tape, pass.final_depth, &target, options.window)?;
    let total = total_loss(tape, [l1, l2, l3], &options.weights)?;
    let value = |v| tape.value(v).item().unwrap_or(f64::NAN);
    let losses = StageLosses {
        l1: value(l1),
        l2: value(l2),
        l3: value(l3),
        total: value(total),
    };
    Ok((pass, total, losses))
}

/// Stage losses of `sample` without touching the model.
pub fn evaluate_losses(model: &HierarchyModel, sample: &Sample, options: &TrainOptions) -> Result<StageLosses> {
    let mut tape = Tape::inference();
    Ok(record(model, &mut tape, sample, options)?.2)
}

/// Mean stage losses over a dataset.
pub fn evaluate_dataset(model: &HierarchyModel, dataset: &[Sample], options: &TrainOptions) -> Result<StageLosses> {
    let mut acc = StageLosses::default();
    for s in dataset {
        let l = evaluate_losses(model, s, options)?;
        acc.l1 += l.l1;
        acc.l2 += l.l2;
        acc.l3 += l.l3;
        acc.total += l.total;
    }
    let n = dataset.len().max(1) as f64;
    Ok(StageLosses {
        l1: acc.l1 / n,
        l2: acc.l2 / n,
        l3: acc.l3 / n,
        total: acc.total / n,
    })
}

/// Model plus optimizer state across epochs.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: HierarchyModel,
    pub options: TrainOptions,
    optimizer: Adam,
    epoch: u64,
}

impl Trainer {
    pub fn new(model: HierarchyModel, options: TrainOptions) -> Result<Self> {
        options.weights.validate()?;
        if !(options.lr >= 0.0 && options.lr.is_finite()) {
            return Err(Error::domain(format!("learning rate must be finite and >= 0, got {}", options.lr)));
        }
        Ok(Trainer {
            model,
            optimizer: Adam::new(options.lr),
            options,
            epoch: 0,
        })
    }

    pub fn epochs_done(&self) -> u64 {
        self.epoch
    }

    pub fn optimizer(&self) -> &Adam {
        &self.optimizer
    }

    /// Forward, backward and one optimizer step on a single sample.
    /// `index` only labels errors.
    pub fn step(&mut self, sample: &Sample, index: usize) -> Result<StageLosses> {
        let mut tape = Tape::new();
        let (pass, total, losses) = record(&self.model, &mut tape, sample, &self.options)?;
        if !losses.is_finite() {
            return Err(Error::Training {
                sample: index,
                message: format!("non-finite loss {losses:?}"),
            });
        }
        let grads = tape.backward(total)?;
        let mut flat = Vec::new();
        for vars in &pass.params {
            for &v in vars.vars() {
                flat.push(grads.get_or_zeros(v, tape.value(v)));
            }
        }
        let params = self.model.nets_mut().into_iter().flat_map(|n| n.tensors_mut());
        self.optimizer.update(params, &flat)?;
        Ok(losses)
    }

    /// One pass over `dataset`; returns running means of the stage losses.
    pub fn train_epoch(&mut self, dataset: &[Sample]) -> Result<StageLosses> {
        if dataset.is_empty() {
            return Err(Error::domain("empty training set"));
        }
        let order = match self.options.shuffle_seed {
            Some(seed) => epoch_order(dataset.len(), seed, self.epoch),
            None => (0..dataset.len()).collect(),
        };
        let mut acc = StageLosses::default();
        for &i in &order {
            let l = self.step(&dataset[i], i)?;
            acc.l1 += l.l1;
            acc.l2 += l.l2;
            acc.l3 += l.l3;
            acc.total += l.total;
        }
        self.epoch += 1;
        let n = dataset.len() as f64;
        Ok(StageLosses {
            l1: acc.l1 / n,
            l2: acc.l2 / n,
            l3: acc.l3 / n,
            total: acc.total / n,
        })
    }
}

/// Epoch order for a shuffle seed, as used by [`Trainer::train_epoch`].
pub fn epoch_order(len: usize, shuffle_seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed.wrapping_add(epoch)));
    order
}
