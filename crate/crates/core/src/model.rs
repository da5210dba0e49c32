//! Model specifications, parameters with connectivity masks, and the loss
//! graph `L(c ⊙ w; D)`.

use std::fmt;
use std::str::FromStr;

use crate::autograd::{Graph, NodeId};
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::init::{initialize, InitMethod};
use crate::layers::{self, GruWeights, LstmWeights};
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

/// A named weight tensor with its binary connectivity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    /// Entries in {0, 1}; all ones when `prunable` is false.
    pub mask: Tensor<T>,
    pub prunable: bool,
    pub fan_in: usize,
    pub fan_out: usize,
    /// Optimizer state, allocated on first use.
    pub velocity: Option<Tensor<T>>,
    pub second_moment: Option<Tensor<T>>,
}

impl<T: Real> Parameter<T> {
    pub fn new(name: &str, value: Tensor<T>, prunable: bool, fan_in: usize, fan_out: usize) -> Self {
        let mask = Tensor::ones(value.shape());
        Parameter {
            name: name.to_string(),
            value,
            mask,
            prunable,
            fan_in,
            fan_out,
            velocity: None,
            second_moment: None,
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn retained(&self) -> usize {
        self.mask.data().iter().filter(|&&c| c != T::zero()).count()
    }

    /// Installs a 0/1 mask and zeroes the weights it removes.
    pub fn apply_mask(&mut self, keep: &[bool]) -> Result<()> {
        if keep.len() != self.value.len() {
            return Err(Error::shape(format!(
                "mask of {} entries for parameter `{}` with {}",
                keep.len(),
                self.name,
                self.value.len()
            )));
        }
        if !self.prunable && keep.iter().any(|k| !k) {
            return Err(Error::State(format!("parameter `{}` is not prunable", self.name)));
        }
        for ((c, w), &k) in self.mask.data_mut().iter_mut().zip(self.value.data_mut()).zip(keep) {
            *c = if k { T::one() } else { T::zero() };
            if !k {
                *w = T::zero();
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerSpec {
    Flatten,
    Relu,
    MaxPool2,
    Dense { name: String, inputs: usize, outputs: usize },
    Conv { name: String, kh: usize, kw: usize, cin: usize, cout: usize, stride: usize },
    /// Reads `b×1×steps×inputs` and emits the last hidden state.
    Lstm { name: String, inputs: usize, hidden: usize },
    Gru { name: String, inputs: usize, hidden: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Lenet300,
    Lenet5Caffe,
    LstmS,
    GruS,
    Custom,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Lenet300 => "lenet300",
            ModelKind::Lenet5Caffe => "lenet5caffe",
            ModelKind::LstmS => "lstm_s",
            ModelKind::GruS => "gru_s",
            ModelKind::Custom => "custom",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "lenet300" | "lenet_300_100" => Ok(ModelKind::Lenet300),
            "lenet5caffe" | "lenet5" | "lenet_5_caffe" => Ok(ModelKind::Lenet5Caffe),
            "lstm_s" => Ok(ModelKind::LstmS),
            "gru_s" => Ok(ModelKind::GruS),
            _ => Err(Error::Config(format!("unknown model `{s}` (lenet300|lenet5caffe|lstm_s|gru_s)"))),
        }
    }
}

/// Declarative architecture: per-example input shape and a layer list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_shape: Vec<usize>,
    pub classes: usize,
    pub layers: Vec<LayerSpec>,
}

fn dense(name: &str, inputs: usize, outputs: usize) -> LayerSpec {
    LayerSpec::Dense { name: name.into(), inputs, outputs }
}

/// Hidden units of the small recurrent models.
pub const RNN_HIDDEN: usize = 128;

impl ModelSpec {
    pub fn by_name(name: &str) -> Result<Self> {
        Ok(Self::of_kind(name.parse()?))
    }

    pub fn of_kind(kind: ModelKind) -> Self {
        match kind {
            ModelKind::Lenet300 => Self::lenet300(),
            ModelKind::Lenet5Caffe => Self::lenet5caffe(),
            ModelKind::LstmS => Self::lstm_s(),
            ModelKind::GruS => Self::gru_s(),
            ModelKind::Custom => panic!("custom specs are built with ModelSpec::mlp"),
        }
    }

    /// 784-300-100-10 fully connected network.
    pub fn lenet300() -> Self {
        ModelSpec {
            kind: ModelKind::Lenet300,
            input_shape: vec![1, 28, 28],
            classes: 10,
            layers: vec![
                LayerSpec::Flatten,
                dense("fc1", 784, 300),
                LayerSpec::Relu,
                dense("fc2", 300, 100),
                LayerSpec::Relu,
                dense("fc3", 100, 10),
            ],
        }
    }

    /// Caffe LeNet-5: conv(5×5, 20) → pool → conv(5×5, 50) → pool → fc 500 → fc 10.
    pub fn lenet5caffe() -> Self {
        ModelSpec {
            kind: ModelKind::Lenet5Caffe,
            input_shape: vec![1, 28, 28],
            classes: 10,
            layers: vec![
                LayerSpec::Conv { name: "conv1".into(), kh: 5, kw: 5, cin: 1, cout: 20, stride: 1 },
                LayerSpec::MaxPool2,
                LayerSpec::Conv { name: "conv2".into(), kh: 5, kw: 5, cin: 20, cout: 50, stride: 1 },
                LayerSpec::MaxPool2,
                LayerSpec::Flatten,
                dense("fc1", 800, 500),
                LayerSpec::Relu,
                dense("fc2", 500, 10),
            ],
        }
    }

    /// One LSTM layer over image rows (28 steps of 28 pixels) and a classifier.
    pub fn lstm_s() -> Self {
        ModelSpec {
            kind: ModelKind::LstmS,
            input_shape: vec![1, 28, 28],
            classes: 10,
            layers: vec![
                LayerSpec::Lstm { name: "lstm".into(), inputs: 28, hidden: RNN_HIDDEN },
                dense("fc", RNN_HIDDEN, 10),
            ],
        }
    }

    pub fn gru_s() -> Self {
        ModelSpec {
            kind: ModelKind::GruS,
            input_shape: vec![1, 28, 28],
            classes: 10,
            layers: vec![
                LayerSpec::Gru { name: "gru".into(), inputs: 28, hidden: RNN_HIDDEN },
                dense("fc", RNN_HIDDEN, 10),
            ],
        }
    }

    /// Fully connected ReLU network with the given widths, input `[b×sizes[0]]`.
    pub fn mlp(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "an mlp needs at least input and output widths");
        let mut layers = Vec::new();
        for (i, w) in sizes.windows(2).enumerate() {
            if i > 0 {
                layers.push(LayerSpec::Relu);
            }
            layers.push(dense(&format!("fc{}", i + 1), w[0], w[1]));
        }
        ModelSpec {
            kind: ModelKind::Custom,
            input_shape: vec![sizes[0]],
            classes: *sizes.last().unwrap(),
            layers,
        }
    }

    pub fn name(&self) -> &'static str {
        self.kind.as_str()
    }

    /// `(name, shape, prunable, fan_in, fan_out)` for every parameter, in
    /// declaration order.
    fn parameter_layout(&self) -> Vec<(String, Vec<usize>, bool, usize, usize)> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                LayerSpec::Dense { name, inputs, outputs } => {
                    out.push((format!("{name}.weight"), vec![*inputs, *outputs], true, *inputs, *outputs));
                    out.push((format!("{name}.bias"), vec![*outputs], false, *inputs, *outputs));
                }
                LayerSpec::Conv { name, kh, kw, cin, cout, .. } => {
                    let (fi, fo) = (kh * kw * cin, kh * kw * cout);
                    out.push((format!("{name}.weight"), vec![*kh, *kw, *cin, *cout], true, fi, fo));
                    out.push((format!("{name}.bias"), vec![*cout], false, fi, fo));
                }
                LayerSpec::Lstm { name, inputs, hidden } | LayerSpec::Gru { name, inputs, hidden } => {
                    let gates = if matches!(layer, LayerSpec::Lstm { .. }) { 4 } else { 3 };
                    let cols = gates * hidden;
                    out.push((format!("{name}.w_x"), vec![*inputs, cols], true, *inputs, cols));
                    out.push((format!("{name}.w_h"), vec![*hidden, cols], true, *hidden, cols));
                    out.push((format!("{name}.bias"), vec![cols], false, *inputs, cols));
                }
                LayerSpec::Flatten | LayerSpec::Relu | LayerSpec::MaxPool2 => {}
            }
        }
        out
    }

    pub fn total_params(&self) -> usize {
        self.parameter_layout().iter().map(|(_, s, ..)| s.iter().product::<usize>()).sum()
    }

    pub fn prunable_params(&self) -> usize {
        self.parameter_layout()
            .iter()
            .filter(|(_, _, p, ..)| *p)
            .map(|(_, s, ..)| s.iter().product::<usize>())
            .sum()
    }
}

/// Instantiated parameters for a [`ModelSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub spec: ModelSpec,
    pub params: Vec<Parameter<T>>,
    pub init: InitMethod,
    /// Optimizer steps taken so far.
    pub steps: u64,
}

/// Weights drawn per `init`, biases zero, masks all ones.
pub fn build_model<T: Real>(spec: &ModelSpec, init: InitMethod, rng: &Rng) -> Result<Model<T>> {
    let mut params = Vec::new();
    for (name, shape, prunable, fan_in, fan_out) in spec.parameter_layout() {
        let value = if prunable {
            initialize(init, &shape, fan_in, fan_out, &mut rng.derive(&name))?
        } else {
            Tensor::zeros(&shape)
        };
        params.push(Parameter::new(&name, value, prunable, fan_in, fan_out));
    }
    Ok(Model { spec: spec.clone(), params, init, steps: 0 })
}

/// Which adjoints a forward pass should make available.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradMode {
    /// Forward only.
    None,
    /// `∂L/∂w` for every parameter.
    Weights,
    /// Additionally `∂L/∂c` through explicit mask leaves.
    WeightsAndMasks,
}

#[derive(Debug, Clone, Copy)]
struct Bound {
    weight: NodeId,
    mask: Option<NodeId>,
    effective: NodeId,
}

/// Gradients from one backward pass, aligned with `Model::params`.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    pub weights: Vec<Tensor<T>>,
    /// `∂L/∂c` per parameter; only present for prunable parameters under
    /// [`GradMode::WeightsAndMasks`].
    pub masks: Vec<Option<Tensor<T>>>,
}

/// A forward pass over one batch, ready for backward.
pub struct LossGraph<T: Real> {
    pub graph: Graph<T>,
    pub loss: NodeId,
    pub logits: NodeId,
    bound: Vec<Bound>,
    mode: GradMode,
}

impl<T: Real> LossGraph<T> {
    pub fn loss_value(&self) -> T {
        self.graph.value(self.loss).data()[0]
    }

    pub fn logits(&self) -> &Tensor<T> {
        self.graph.value(self.logits)
    }

    /// Replaces the loss by `factor · L`.
    pub fn scale_loss(&mut self, factor: T) {
        self.loss = self.graph.scale(self.loss, factor);
    }

    pub fn backward(&mut self) -> Result<Gradients<T>> {
        if self.mode == GradMode::None {
            return Err(Error::State("loss graph was built without gradients".into()));
        }
        self.graph.backward(self.loss)?;
        let mut weights = Vec::with_capacity(self.bound.len());
        let mut masks = Vec::with_capacity(self.bound.len());
        for b in &self.bound {
            let shape = self.graph.value(b.weight).shape().to_vec();
            weights.push(self.graph.take_grad(b.weight).unwrap_or_else(|| Tensor::zeros(&shape)));
            masks.push(b.mask.map(|m| self.graph.take_grad(m).unwrap_or_else(|| Tensor::zeros(&shape))));
        }
        Ok(Gradients { weights, masks })
    }
}

impl<T: Real> Model<T> {
    pub fn prunable_count(&self) -> usize {
        self.params.iter().filter(|p| p.prunable).map(|p| p.len()).sum()
    }

    pub fn total_count(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    pub fn retained_count(&self) -> usize {
        self.params.iter().filter(|p| p.prunable).map(|p| p.retained()).sum()
    }

    pub fn param(&self, name: &str) -> Option<&Parameter<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn masks_all_ones(&self) -> bool {
        self.params.iter().all(|p| p.mask.data().iter().all(|&c| c == T::one()))
    }

    /// Fresh weights from `init` with the current masks applied.
    pub fn reinitialized(&self, init: InitMethod, rng: &Rng) -> Result<Model<T>> {
        let mut fresh: Model<T> = build_model(&self.spec, init, rng)?;
        for (dst, src) in fresh.params.iter_mut().zip(&self.params) {
            if src.prunable {
                let keep: Vec<bool> = src.mask.data().iter().map(|&c| c != T::zero()).collect();
                dst.apply_mask(&keep)?;
            }
        }
        Ok(fresh)
    }

    fn bind(&self, g: &mut Graph<T>, mode: GradMode) -> Result<Vec<Bound>> {
        let mut bound = Vec::with_capacity(self.params.len());
        for p in &self.params {
            let weight = g.leaf(p.value.clone(), mode != GradMode::None);
            let (mask, effective) = if p.prunable {
                let c = g.leaf(p.mask.clone(), mode == GradMode::WeightsAndMasks);
                (Some(c), g.mul(c, weight)?)
            } else {
                (None, weight)
            };
            bound.push(Bound {
                weight,
                mask: (mode == GradMode::WeightsAndMasks).then_some(mask).flatten(),
                effective,
            });
        }
        Ok(bound)
    }

    fn build_logits(&self, g: &mut Graph<T>, bound: &[Bound], inputs: &Tensor<T>) -> Result<NodeId> {
        let expect: Vec<usize> = std::iter::once(inputs.shape()[0]).chain(self.spec.input_shape.iter().copied()).collect();
        if inputs.shape() != expect.as_slice() {
            return Err(Error::shape(format!(
                "model `{}` expects inputs {expect:?}, got {:?}",
                self.spec.name(),
                inputs.shape()
            )));
        }
        let batch = inputs.shape()[0];
        let mut next = 0usize;
        let mut take = |n: usize| {
            let ids: Vec<NodeId> = bound[next..next + n].iter().map(|b| b.effective).collect();
            next += n;
            ids
        };
        let mut x = g.constant(inputs.clone());
        for layer in &self.spec.layers {
            x = match layer {
                LayerSpec::Flatten => {
                    let n = g.value(x).len() / batch;
                    g.reshape(x, &[batch, n])?
                }
                LayerSpec::Relu => g.relu(x),
                LayerSpec::MaxPool2 => g.maxpool2x2(x)?,
                LayerSpec::Dense { .. } => {
                    let p = take(2);
                    layers::dense(g, x, p[0], p[1])?
                }
                LayerSpec::Conv { stride, .. } => {
                    let p = take(2);
                    layers::conv2d(g, x, p[0], p[1], *stride)?
                }
                LayerSpec::Lstm { hidden, .. } => {
                    let p = take(3);
                    let w = LstmWeights { w_x: p[0], w_h: p[1], bias: p[2], hidden: *hidden };
                    let steps = layers::sequence_steps(g.value(x))?;
                    let mut h = g.constant(Tensor::zeros(&[batch, *hidden]));
                    let mut c = g.constant(Tensor::zeros(&[batch, *hidden]));
                    for s in steps {
                        let xt = g.constant(s);
                        (h, c) = layers::lstm_cell(g, xt, h, c, &w)?;
                    }
                    h
                }
                LayerSpec::Gru { hidden, .. } => {
                    let p = take(3);
                    let w = GruWeights { w_x: p[0], w_h: p[1], bias: p[2], hidden: *hidden };
                    let steps = layers::sequence_steps(g.value(x))?;
                    let mut h = g.constant(Tensor::zeros(&[batch, *hidden]));
                    for s in steps {
                        let xt = g.constant(s);
                        h = layers::gru_cell(g, xt, h, &w)?;
                    }
                    h
                }
            };
        }
        Ok(x)
    }

    /// Builds `L(c ⊙ w; batch)` (mean softmax cross-entropy).
    pub fn forward(&self, batch: &Batch<T>, mode: GradMode) -> Result<LossGraph<T>> {
        if batch.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        let mut graph = Graph::new();
        let bound = self.bind(&mut graph, mode)?;
        let logits = self.build_logits(&mut graph, &bound, &batch.inputs)?;
        let loss = graph.softmax_cross_entropy(logits, &batch.labels)?;
        graph.check_finite()?;
        Ok(LossGraph { graph, loss, logits, bound, mode })
    }

    pub fn loss(&self, batch: &Batch<T>) -> Result<T> {
        Ok(self.forward(batch, GradMode::None)?.loss_value())
    }

    /// Logits for a batch of inputs, no gradient bookkeeping.
    pub fn predict(&self, inputs: &Tensor<T>) -> Result<Tensor<T>> {
        let mut graph = Graph::new();
        let bound = self.bind(&mut graph, GradMode::None)?;
        let logits = self.build_logits(&mut graph, &bound, inputs)?;
        graph.check_finite()?;
        Ok(graph.value(logits).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::grad_check;

    #[test]
    fn lenet_parameter_counts() {
        let l300 = ModelSpec::lenet300();
        assert_eq!(l300.prunable_params(), 784 * 300 + 300 * 100 + 100 * 10);
        assert_eq!(l300.prunable_params(), 266_200);
        assert_eq!(l300.total_params(), 266_610);
        let l5 = ModelSpec::lenet5caffe();
        assert_eq!(l5.total_params(), 431_080);
        assert_eq!(l5.prunable_params(), 430_500);
        let m: Model<f32> = build_model(&l5, InitMethod::VarianceScalingXavier, &Rng::new(0)).unwrap();
        assert_eq!(m.total_count(), 431_080);
        assert_eq!(m.prunable_count(), 430_500);
    }

    #[test]
    fn build_is_deterministic_and_fresh() {
        let spec = ModelSpec::lenet300();
        let a: Model<f32> = build_model(&spec, InitMethod::VarianceScalingXavier, &Rng::new(4)).unwrap();
        let b: Model<f32> = build_model(&spec, InitMethod::VarianceScalingXavier, &Rng::new(4)).unwrap();
        assert_eq!(a, b);
        assert!(a.masks_all_ones());
        assert_eq!(a.steps, 0);
        let bias = a.param("fc1.bias").unwrap();
        assert!(!bias.prunable && bias.value.data().iter().all(|&v| v == 0.0));
        let names: std::collections::HashSet<_> = a.params.iter().map(|p| p.name.clone()).collect();
        assert_eq!(names.len(), a.params.len());
    }

    #[test]
    fn unknown_model_is_config_error() {
        assert!(matches!(ModelSpec::by_name("alexnet"), Err(Error::Config(_))));
        assert_eq!(ModelSpec::by_name("lenet5caffe").unwrap().kind, ModelKind::Lenet5Caffe);
    }

    #[test]
    fn input_shape_is_checked() {
        let m: Model<f64> = build_model(&ModelSpec::mlp(&[2, 4, 2]), InitMethod::VarianceScalingXavier, &Rng::new(1)).unwrap();
        let batch = Batch { inputs: Tensor::zeros(&[3, 5]), labels: vec![0, 1, 0] };
        assert!(matches!(m.forward(&batch, GradMode::Weights), Err(Error::Shape(_))));
    }

    /// Whole-model gradient check on a tiny batch, over every parameter.
    fn model_grad_check(spec: &ModelSpec, batch: &Batch<f64>) -> f64 {
        let model: Model<f64> = build_model(spec, InitMethod::VarianceScalingXavier, &Rng::new(3)).unwrap();
        let mut model = model;
        for (i, p) in model.params.iter_mut().enumerate() {
            if !p.prunable {
                p.value = Rng::new(50 + i as u64).normal(p.value.shape(), 0.0, 0.1).unwrap();
            }
        }
        let values: Vec<Tensor<f64>> = model.params.iter().map(|p| p.value.clone()).collect();
        grad_check(&values, 1e-5, |g, ids| {
            let bound: Vec<Bound> = ids.iter().map(|&id| Bound { weight: id, mask: None, effective: id }).collect();
            let logits = model.build_logits(g, &bound, &batch.inputs)?;
            g.softmax_cross_entropy(logits, &batch.labels)
        })
        .unwrap()
    }

    #[test]
    fn small_models_pass_grad_check() {
        let mut rng = Rng::new(12);
        let mlp = ModelSpec::mlp(&[5, 7, 6, 3]);
        let batch = Batch { inputs: rng.normal(&[4, 5], 0.0, 1.0).unwrap(), labels: vec![0, 1, 2, 1] };
        let err = model_grad_check(&mlp, &batch);
        assert!(err < 1e-5, "mlp {err}");

        let conv = ModelSpec {
            kind: ModelKind::Custom,
            input_shape: vec![1, 8, 8],
            classes: 3,
            layers: vec![
                LayerSpec::Conv { name: "conv1".into(), kh: 3, kw: 3, cin: 1, cout: 2, stride: 1 },
                LayerSpec::MaxPool2,
                LayerSpec::Flatten,
                LayerSpec::Relu,
                dense("fc1", 18, 3),
            ],
        };
        let batch = Batch { inputs: rng.normal(&[2, 1, 8, 8], 0.0, 1.0).unwrap(), labels: vec![2, 0] };
        let err = model_grad_check(&conv, &batch);
        assert!(err < 1e-4, "conv {err}");

        for rnn in [LayerSpec::Lstm { name: "lstm".into(), inputs: 4, hidden: 3 }, LayerSpec::Gru { name: "gru".into(), inputs: 4, hidden: 3 }] {
            let spec = ModelSpec {
                kind: ModelKind::Custom,
                input_shape: vec![1, 3, 4],
                classes: 2,
                layers: vec![rnn, dense("fc", 3, 2)],
            };
            let batch = Batch { inputs: rng.normal(&[2, 1, 3, 4], 0.0, 1.0).unwrap(), labels: vec![1, 0] };
            let err = model_grad_check(&spec, &batch);
            assert!(err < 1e-4, "rnn {err}");
        }
    }

    #[test]
    fn recurrent_zoo_builds_and_runs() {
        let mut rng = Rng::new(2);
        let batch: Batch<f64> = Batch { inputs: rng.normal(&[2, 1, 28, 28], 0.0, 1.0).unwrap(), labels: vec![3, 7] };
        for spec in [ModelSpec::lstm_s(), ModelSpec::gru_s()] {
            let m: Model<f32> = build_model(&spec, InitMethod::VarianceScalingXavier, &Rng::new(0)).unwrap();
            let batch = Batch { inputs: batch.inputs.cast(), labels: batch.labels.clone() };
            let mut lg = m.forward(&batch, GradMode::Weights).unwrap();
            assert!(lg.loss_value().is_finite());
            let grads = lg.backward().unwrap();
            assert_eq!(grads.weights.len(), 5);
        }
    }

    #[test]
    fn masked_weights_receive_zero_gradient() {
        let mut rng = Rng::new(5);
        let mut m: Model<f64> = build_model(&ModelSpec::mlp(&[3, 4, 2]), InitMethod::VarianceScalingHe, &Rng::new(6)).unwrap();
        let keep: Vec<bool> = (0..12).map(|i| i % 3 != 0).collect();
        m.params[0].apply_mask(&keep).unwrap();
        let batch = Batch { inputs: rng.normal(&[5, 3], 0.0, 1.0).unwrap(), labels: vec![0, 1, 1, 0, 1] };
        let mut lg = m.forward(&batch, GradMode::Weights).unwrap();
        let grads = lg.backward().unwrap();
        for (j, &k) in keep.iter().enumerate() {
            if !k {
                assert_eq!(grads.weights[0].data()[j], 0.0);
                assert_eq!(m.params[0].value.data()[j], 0.0);
            }
        }
        assert!(m.params[1].apply_mask(&[true, false, true, true]).is_err());
    }
}
