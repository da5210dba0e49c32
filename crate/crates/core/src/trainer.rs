//! Mask-respecting optimizers, the step learning-rate schedule, the training
//! loop and evaluation.

use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use crate::data::{BatchSampler, Dataset};
use crate::error::{Error, Result};
use crate::model::{GradMode, Model, Parameter};
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    SgdMomentum,
    Adam,
}

impl OptimizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::SgdMomentum => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" | "sgd_momentum" => Ok(OptimizerKind::SgdMomentum),
            "adam" => Ok(OptimizerKind::Adam),
            _ => Err(Error::Config(format!("unknown optimizer `{s}` (sgd|adam)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Schedule {
    /// `lr0 · factor^floor(iter / every)`.
    StepDecay { factor: f64, every: u64 },
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub schedule: Schedule,
}

impl OptimizerConfig {
    /// Momentum 0.9, weight decay 5e-4, lr 0.1 decayed ×0.1 every 25k steps.
    pub fn sgd() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::SgdMomentum,
            lr0: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            schedule: Schedule::StepDecay { factor: 0.1, every: 25_000 },
        }
    }

    /// lr 0.001, no weight decay, constant schedule.
    pub fn adam() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            lr0: 0.001,
            weight_decay: 0.0,
            schedule: Schedule::Constant,
            ..Self::sgd()
        }
    }

    pub fn for_kind(kind: OptimizerKind) -> Self {
        match kind {
            OptimizerKind::SgdMomentum => Self::sgd(),
            OptimizerKind::Adam => Self::adam(),
        }
    }
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self::sgd()
    }
}

pub fn lr_at(iter: u64, cfg: &OptimizerConfig) -> f64 {
    match cfg.schedule {
        Schedule::Constant => cfg.lr0,
        Schedule::StepDecay { factor, every } => cfg.lr0 * factor.powi((iter / every.max(1)) as i32),
    }
}

fn check_grads<T: Real>(params: &[Parameter<T>], grads: &[Tensor<T>]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::shape(format!("{} gradients for {} parameters", grads.len(), params.len())));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.value.shape() != g.shape() {
            return Err(Error::shape(format!("gradient {:?} for `{}` {:?}", g.shape(), p.name, p.value.shape())));
        }
    }
    Ok(())
}

fn non_finite(name: &str) -> Error {
    Error::Numerics { node: usize::MAX, detail: format!("optimizer update of `{name}` is not finite") }
}

/// `ĝ = c ⊙ (grad + wd·w)`, `v ← μ·v + ĝ`, `w ← w − lr·v`.
pub fn sgd_momentum_step<T: Real>(params: &mut [Parameter<T>], grads: &[Tensor<T>], lr: f64, momentum: f64, weight_decay: f64) -> Result<()> {
    check_grads(params, grads)?;
    let (lr, mu, wd) = (T::of_f64(lr), T::of_f64(momentum), T::of_f64(weight_decay));
    for (p, g) in params.iter_mut().zip(grads) {
        let v = p.velocity.get_or_insert_with(|| Tensor::zeros(p.value.shape()));
        let w = p.value.data_mut();
        for (((w, v), &c), &g) in w.iter_mut().zip(v.data_mut()).zip(p.mask.data()).zip(g.data()) {
            if c == T::zero() {
                *v = T::zero();
                *w = T::zero();
                continue;
            }
            let gh = c * (g + wd * *w);
            *v = mu * *v + gh;
            *w = *w - lr * *v;
        }
        if !p.value.is_finite() {
            return Err(non_finite(&p.name));
        }
    }
    Ok(())
}

/// Bias-corrected Adam on `c ⊙ (grad + wd·w)`; `t` is the 1-based step.
#[allow(clippy::too_many_arguments)]
pub fn adam_step<T: Real>(
    params: &mut [Parameter<T>],
    grads: &[Tensor<T>],
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    t: u64,
) -> Result<()> {
    check_grads(params, grads)?;
    if t == 0 {
        return Err(Error::Domain("adam step count starts at 1".into()));
    }
    let bc1 = 1.0 - beta1.powi(t as i32);
    let bc2 = 1.0 - beta2.powi(t as i32);
    let (b1, b2, wd) = (T::of_f64(beta1), T::of_f64(beta2), T::of_f64(weight_decay));
    let (one, step, eps, bc2) = (T::one(), T::of_f64(lr / bc1), T::of_f64(eps), T::of_f64(bc2));
    for (p, g) in params.iter_mut().zip(grads) {
        let m = p.velocity.get_or_insert_with(|| Tensor::zeros(p.value.shape()));
        let v = p.second_moment.get_or_insert_with(|| Tensor::zeros(p.value.shape()));
        let w = p.value.data_mut();
        for ((((w, m), v), &c), &g) in w.iter_mut().zip(m.data_mut()).zip(v.data_mut()).zip(p.mask.data()).zip(g.data()) {
            if c == T::zero() {
                *m = T::zero();
                *v = T::zero();
                *w = T::zero();
                continue;
            }
            let gh = c * (g + wd * *w);
            *m = b1 * *m + (one - b1) * gh;
            *v = b2 * *v + (one - b2) * gh * gh;
            *w = *w - step * *m / ((*v / bc2).sqrt() + eps);
        }
        if !p.value.is_finite() {
            return Err(non_finite(&p.name));
        }
    }
    Ok(())
}

/// Percent of examples whose argmax logit (lowest class on ties) misses the
/// label.
pub fn evaluate<T: Real>(model: &Model<T>, data: &Dataset) -> Result<f64> {
    const CHUNK: usize = 500;
    if data.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty split".into()));
    }
    let mut wrong = 0usize;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(CHUNK) {
        let batch = data.batch::<T>(chunk);
        let logits = model.predict(&batch.inputs)?;
        let k = logits.shape()[1];
        for (row, &label) in logits.data().chunks(k).zip(&batch.labels) {
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            wrong += usize::from(best != label);
        }
    }
    Ok(100.0 * wrong as f64 / data.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub iterations: u64,
    pub eval_every: u64,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    /// Record elapsed milliseconds; when off `wall_ms` is 0 so metrics files
    /// are byte-reproducible.
    pub wall_clock: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { iterations: 30_000, eval_every: 1_000, batch_size: 100, optimizer: OptimizerConfig::sgd(), wall_clock: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub iter: u64,
    pub train_loss: f64,
    pub val_err: f64,
    pub test_err: f64,
    pub lr: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainMetrics {
    pub rows: Vec<MetricsRow>,
}

impl TrainMetrics {
    pub const CSV_HEADER: &'static str = "iter,train_loss,val_err,test_err,lr,wall_ms";

    pub fn last(&self) -> Option<&MetricsRow> {
        self.rows.last()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(s, "{},{:.6},{:.2},{:.2},{},{}", r.iter, r.train_loss, r.val_err, r.test_err, r.lr, r.wall_ms);
        }
        s
    }
}

/// Splits used by [`train`]. `val` and `test` are evaluated at every
/// logging point.
pub struct TrainData<'a> {
    pub train: &'a Dataset,
    pub val: &'a Dataset,
    pub test: &'a Dataset,
}

fn masked_residue<T: Real>(model: &Model<T>) -> f64 {
    model
        .params
        .iter()
        .flat_map(|p| p.value.data().iter().zip(p.mask.data()))
        .map(|(&w, &c)| (w * (T::one() - c)).as_f64().abs())
        .sum()
}

/// Runs exactly `cfg.iterations` minibatch steps. Row 0 reports the loss on
/// the first `batch_size` training examples; later rows report the mean
/// minibatch loss since the previous row. On a non-finite update the model is
/// restored to the parameters of the last logged row and the error returned.
pub fn train<T: Real>(model: &mut Model<T>, data: &TrainData<'_>, cfg: &TrainConfig, rng: &Rng) -> Result<TrainMetrics> {
    if cfg.batch_size == 0 || cfg.eval_every == 0 {
        return Err(Error::Config("batch_size and eval_every must be positive".into()));
    }
    let start = Instant::now();
    let masks_before: Vec<Tensor<T>> = model.params.iter().map(|p| p.mask.clone()).collect();
    let mut sampler = BatchSampler::new(data.train.len(), cfg.batch_size, rng.derive("minibatches"))?;
    let mut metrics = TrainMetrics::default();
    let wall = |start: &Instant| if cfg.wall_clock { start.elapsed().as_millis() as u64 } else { 0 };

    let first: Vec<usize> = (0..cfg.batch_size.min(data.train.len())).collect();
    let initial_loss = model.loss(&data.train.batch::<T>(&first))?.as_f64();
    let log = |model: &Model<T>, iter: u64, loss: f64, start: &Instant| -> Result<MetricsRow> {
        Ok(MetricsRow {
            iter,
            train_loss: loss,
            val_err: evaluate(model, data.val)?,
            test_err: evaluate(model, data.test)?,
            lr: lr_at(iter, &cfg.optimizer),
            wall_ms: wall(start),
        })
    };
    metrics.rows.push(log(model, 0, initial_loss, &start)?);
    let mut last_good = model.clone();
    let (mut loss_sum, mut loss_n) = (0.0, 0u64);

    for iter in 0..cfg.iterations {
        let batch = data.train.batch::<T>(&sampler.next_indices());
        let step = (|| -> Result<f64> {
            let mut lg = model.forward(&batch, GradMode::Weights)?;
            let loss = lg.loss_value().as_f64();
            let grads = lg.backward()?.weights;
            let lr = lr_at(iter, &cfg.optimizer);
            let o = &cfg.optimizer;
            match o.kind {
                OptimizerKind::SgdMomentum => sgd_momentum_step(&mut model.params, &grads, lr, o.momentum, o.weight_decay)?,
                OptimizerKind::Adam => adam_step(&mut model.params, &grads, lr, o.beta1, o.beta2, o.eps, o.weight_decay, model.steps + 1)?,
            }
            Ok(loss)
        })();
        match step {
            Ok(loss) => {
                model.steps += 1;
                loss_sum += loss;
                loss_n += 1;
            }
            Err(e @ Error::Numerics { .. }) => {
                *model = last_good;
                return Err(e);
            }
            Err(e) => return Err(e),
        }
        let done = iter + 1;
        if done % cfg.eval_every == 0 || done == cfg.iterations {
            metrics.rows.push(log(model, done, loss_sum / loss_n as f64, &start)?);
            (loss_sum, loss_n) = (0.0, 0);
            last_good = model.clone();
        }
    }

    let intact = model.params.iter().zip(&masks_before).all(|(p, m)| &p.mask == m);
    if !intact || masked_residue(model) != 0.0 {
        return Err(Error::State("training disturbed the pruning masks".into()));
    }
    Ok(metrics)
}
