//! Tape-based reverse-mode differentiation.
//!
//! Values are computed eagerly as nodes are appended; `backward` walks the
//! tape in reverse creation order, which is a valid topological order because
//! a node can only reference nodes created before it.

use crate::error::{Error, Result};
use crate::tensor::{gemm, sigmoid, Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    cout: usize,
    stride: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.kh * self.kw * self.cin
    }

    fn rows(&self) -> usize {
        self.batch * self.oh * self.ow
    }
}

enum Op<T> {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddRowBias(NodeId, NodeId),
    AddChannelBias(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Scale(NodeId, T),
    AddScalar(NodeId),
    Sum(NodeId),
    Reshape(NodeId),
    SliceCols { input: NodeId, start: usize },
    Conv2d { input: NodeId, kernel: NodeId, geom: ConvGeom, cols: Option<Vec<T>> },
    MaxPool2 { input: NodeId, argmax: Vec<usize> },
    SoftmaxCrossEntropy { logits: NodeId, probs: Vec<T>, labels: Vec<usize> },
}

struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
    requires_grad: bool,
}

/// A computation graph plus, after [`Graph::backward`], the adjoint of every
/// node that requires a gradient.
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
    first_nonfinite: Option<usize>,
    backward_done: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn accumulate<T: Real>(slot: &mut Option<Tensor<T>>, shape: &[usize], f: impl FnOnce(&mut [T])) {
    let t = slot.get_or_insert_with(|| Tensor::zeros(shape));
    f(t.data_mut());
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), grads: Vec::new(), first_nonfinite: None, backward_done: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Gradient of the last backward root with respect to `id`.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take_grad(&mut self, id: NodeId) -> Option<Tensor<T>> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }

    /// Fails with the id of the first node whose value is not finite.
    pub fn check_finite(&self) -> Result<()> {
        match self.first_nonfinite {
            None => Ok(()),
            Some(node) => Err(Error::Numerics { node, detail: "forward activation".into() }),
        }
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, requires_grad: bool) -> NodeId {
        let id = self.nodes.len();
        if self.first_nonfinite.is_none() && !value.is_finite() {
            self.first_nonfinite = Some(id);
        }
        self.nodes.push(Node { op, value, requires_grad });
        NodeId(id)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> NodeId {
        self.push(Op::Leaf, value, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.leaf(value, false)
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|&i| self.nodes[i.0].requires_grad)
    }

    fn binary(&mut self, a: NodeId, b: NodeId, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<NodeId> {
        let v = self.value(a).zip_map(self.value(b), f)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(op, v, rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// `x[b×n] + bias[n]`, bias broadcast over rows.
    pub fn add_row_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (rows, cols) = self.value(x).dims2()?;
        let bv = self.value(bias);
        if bv.len() != cols {
            return Err(Error::shape(format!("bias of length {} for {cols} columns", bv.len())));
        }
        let mut out = self.value(x).data().to_vec();
        for r in 0..rows {
            for (o, &b) in out[r * cols..(r + 1) * cols].iter_mut().zip(bv.data()) {
                *o = *o + b;
            }
        }
        let v = Tensor::new(&[rows, cols], out)?;
        let rg = self.rg(&[x, bias]);
        Ok(self.push(Op::AddRowBias(x, bias), v, rg))
    }

    /// `x[b×c×h×w] + bias[c]`, one bias per channel.
    pub fn add_channel_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let xs = self.value(x).shape().to_vec();
        let &[b, c, h, w] = xs.as_slice() else {
            return Err(Error::shape(format!("channel bias expects 4-D input, got {xs:?}")));
        };
        let bv = self.value(bias).data();
        if bv.len() != c {
            return Err(Error::shape(format!("bias of length {} for {c} channels", bv.len())));
        }
        let plane = h * w;
        let mut out = self.value(x).data().to_vec();
        for (i, chunk) in out.chunks_mut(plane).enumerate() {
            let bias_v = bv[i % c];
            chunk.iter_mut().for_each(|v| *v = *v + bias_v);
        }
        debug_assert_eq!(out.len(), b * c * plane);
        let v = Tensor::new(&xs, out)?;
        let rg = self.rg(&[x, bias]);
        Ok(self.push(Op::AddChannelBias(x, bias), v, rg))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = crate::tensor::matmul(self.value(a), self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::MatMul(a, b), v, rg))
    }

    fn unary(&mut self, a: NodeId, f: impl Fn(T) -> T, op: Op<T>) -> NodeId {
        let v = self.value(a).map(f);
        let rg = self.rg(&[a]);
        self.push(op, v, rg)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| if x > T::zero() { x } else { T::zero() }, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| x.exp(), Op::Exp(a))
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| x.ln(), Op::Log(a))
    }

    pub fn scale(&mut self, a: NodeId, c: T) -> NodeId {
        self.unary(a, |x| x * c, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: NodeId, c: T) -> NodeId {
        self.unary(a, |x| x + c, Op::AddScalar(a))
    }

    /// `1 - a`.
    pub fn one_minus(&mut self, a: NodeId) -> NodeId {
        let neg = self.scale(a, -T::one());
        self.add_scalar(neg, T::one())
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(Op::Sum(a), v, rg)
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let v = self.value(a).reshape(shape)?;
        let rg = self.rg(&[a]);
        Ok(self.push(Op::Reshape(a), v, rg))
    }

    /// Columns `start..start+len` of a matrix.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (rows, cols) = self.value(a).dims2()?;
        if len == 0 || start + len > cols {
            return Err(Error::shape(format!("column slice {start}..{} of {cols}", start + len)));
        }
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&src[r * cols + start..r * cols + start + len]);
        }
        let v = Tensor::new(&[rows, len], out)?;
        let rg = self.rg(&[a]);
        Ok(self.push(Op::SliceCols { input: a, start }, v, rg))
    }

    /// Valid cross-correlation of `x[b×cin×h×w]` with `kernel[kh×kw×cin×cout]`.
    pub fn conv2d(&mut self, x: NodeId, kernel: NodeId, stride: usize) -> Result<NodeId> {
        let xs = self.value(x).shape().to_vec();
        let ks = self.value(kernel).shape().to_vec();
        let (&[batch, cin, h, w], &[kh, kw, kcin, cout]) = (xs.as_slice(), ks.as_slice()) else {
            return Err(Error::shape(format!("conv2d expects 4-D input and kernel, got {xs:?} and {ks:?}")));
        };
        if kcin != cin {
            return Err(Error::shape(format!("kernel expects {kcin} input channels, input has {cin}")));
        }
        if stride == 0 || h < kh || w < kw {
            return Err(Error::shape(format!("conv2d {h}x{w} input with {kh}x{kw} kernel, stride {stride}")));
        }
        let geom = ConvGeom {
            batch,
            cin,
            h,
            w,
            kh,
            kw,
            cout,
            stride,
            oh: (h - kh) / stride + 1,
            ow: (w - kw) / stride + 1,
        };
        // cols is patch × (batch·plane); one gemm yields cout × (batch·plane)
        let cols = im2col(self.value(x).data(), &geom);
        let n = geom.rows();
        let mut out_mat = vec![T::zero(); cout * n];
        gemm(true, false, cout, geom.patch(), n, self.value(kernel).data(), &cols, T::zero(), &mut out_mat);
        let out = channel_major_to_nchw(&out_mat, batch, cout, geom.oh * geom.ow);
        let v = Tensor::new(&[batch, cout, geom.oh, geom.ow], out)?;
        let rg = self.rg(&[x, kernel]);
        let cols = self.nodes[kernel.0].requires_grad.then_some(cols);
        Ok(self.push(Op::Conv2d { input: x, kernel, geom, cols }, v, rg))
    }

    /// 2×2 max pooling with stride 2; ties resolve to the first element in
    /// row-major order within the window.
    pub fn maxpool2x2(&mut self, x: NodeId) -> Result<NodeId> {
        let xs = self.value(x).shape().to_vec();
        let &[b, c, h, w] = xs.as_slice() else {
            return Err(Error::shape(format!("maxpool expects 4-D input, got {xs:?}")));
        };
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape(format!("maxpool needs even spatial dims, got {h}x{w}")));
        }
        let (oh, ow) = (h / 2, w / 2);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(b * c * oh * ow);
        let mut argmax = Vec::with_capacity(b * c * oh * ow);
        for plane in 0..b * c {
            let base = plane * h * w;
            for oy in 0..oh {
                let r0 = base + 2 * oy * w;
                let (top, bottom) = (&src[r0..r0 + w], &src[r0 + w..r0 + 2 * w]);
                for ox in 0..ow {
                    // scan order (0,0), (0,1), (1,0), (1,1); strict > keeps the first maximum
                    let mut best = (top[2 * ox], r0 + 2 * ox);
                    for (v, idx) in [(top[2 * ox + 1], r0 + 2 * ox + 1), (bottom[2 * ox], r0 + w + 2 * ox), (bottom[2 * ox + 1], r0 + w + 2 * ox + 1)] {
                        if v > best.0 {
                            best = (v, idx);
                        }
                    }
                    out.push(best.0);
                    argmax.push(best.1);
                }
            }
        }
        let v = Tensor::new(&[b, c, oh, ow], out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(Op::MaxPool2 { input: x, argmax }, v, rg))
    }

    /// Mean softmax cross-entropy of `logits[b×k]` against integer labels.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let (b, k) = self.value(logits).dims2()?;
        if labels.len() != b {
            return Err(Error::shape(format!("{} labels for a batch of {b}", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::shape(format!("label {bad} out of range for {k} classes")));
        }
        let z = self.value(logits).data();
        let mut probs = vec![T::zero(); b * k];
        let mut total = 0.0f64;
        for i in 0..b {
            let row = &z[i * k..(i + 1) * k];
            let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let mut denom = T::zero();
            for (p, &v) in probs[i * k..(i + 1) * k].iter_mut().zip(row) {
                *p = (v - max).exp();
                denom = denom + *p;
            }
            for p in &mut probs[i * k..(i + 1) * k] {
                *p = *p / denom;
            }
            let lse = max + denom.ln();
            total += (lse - row[labels[i]]).as_f64();
        }
        let v = Tensor::scalar(T::of_f64(total / b as f64));
        let rg = self.rg(&[logits]);
        Ok(self.push(Op::SoftmaxCrossEntropy { logits, probs, labels: labels.to_vec() }, v, rg))
    }

    /// Propagates adjoints from the scalar `root` to every node that requires
    /// a gradient.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        if root.0 >= self.nodes.len() {
            return Err(Error::State("backward called before forward built the loss".into()));
        }
        if self.backward_done {
            return Err(Error::State("backward already ran on this graph".into()));
        }
        if self.nodes[root.0].value.len() != 1 {
            return Err(Error::State("backward root must be a scalar".into()));
        }
        self.check_finite()?;
        self.backward_done = true;
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::ones(self.nodes[root.0].value.shape()));
        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        let want = |id: NodeId| self.nodes[id.0].requires_grad;
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -T::one() } else { T::one() };
                if want(*a) {
                    accumulate(&mut grads[a.0], g.shape(), |d| add_into(d, gd));
                }
                if want(*b) {
                    accumulate(&mut grads[b.0], g.shape(), |d| {
                        for (x, &y) in d.iter_mut().zip(gd) {
                            *x = *x + sign * y;
                        }
                    });
                }
            }
            Op::Mul(a, b) => {
                for (this, other) in [(*a, *b), (*b, *a)] {
                    if want(this) {
                        let ov = self.nodes[other.0].value.data();
                        accumulate(&mut grads[this.0], g.shape(), |d| {
                            for ((x, &y), &o) in d.iter_mut().zip(gd).zip(ov) {
                                *x = *x + y * o;
                            }
                        });
                    }
                }
            }
            Op::AddRowBias(x, bias) => {
                if want(*x) {
                    accumulate(&mut grads[x.0], g.shape(), |d| add_into(d, gd));
                }
                if want(*bias) {
                    let (rows, cols) = g.dims2()?;
                    let bshape = self.nodes[bias.0].value.shape().to_vec();
                    accumulate(&mut grads[bias.0], &bshape, |d| {
                        for r in 0..rows {
                            add_into(d, &gd[r * cols..(r + 1) * cols]);
                        }
                    });
                }
            }
            Op::AddChannelBias(x, bias) => {
                if want(*x) {
                    accumulate(&mut grads[x.0], g.shape(), |d| add_into(d, gd));
                }
                if want(*bias) {
                    let c = self.nodes[bias.0].value.len();
                    let plane = g.shape()[2] * g.shape()[3];
                    accumulate(&mut grads[bias.0], &[c], |d| {
                        for (i, chunk) in gd.chunks(plane).enumerate() {
                            d[i % c] = d[i % c] + chunk.iter().fold(T::zero(), |a, &v| a + v);
                        }
                    });
                }
            }
            Op::MatMul(a, b) => {
                let av = &self.nodes[a.0].value;
                let bv = &self.nodes[b.0].value;
                let (m, k) = av.dims2()?;
                let (_, n) = bv.dims2()?;
                if want(*a) {
                    accumulate(&mut grads[a.0], av.shape(), |d| {
                        gemm(false, true, m, n, k, gd, bv.data(), T::one(), d)
                    });
                }
                if want(*b) {
                    accumulate(&mut grads[b.0], bv.shape(), |d| {
                        gemm(true, false, k, m, n, av.data(), gd, T::one(), d)
                    });
                }
            }
            Op::Relu(a) => {
                let xv = self.nodes[a.0].value.data();
                accumulate(&mut grads[a.0], g.shape(), |d| {
                    for ((x, &y), &v) in d.iter_mut().zip(gd).zip(xv) {
                        if v > T::zero() {
                            *x = *x + y;
                        }
                    }
                });
            }
            Op::Sigmoid(a) | Op::Tanh(a) | Op::Exp(a) => {
                let out = node.value.data();
                let deriv: fn(T) -> T = match node.op {
                    Op::Sigmoid(_) => |s| s * (T::one() - s),
                    Op::Tanh(_) => |t| T::one() - t * t,
                    _ => |e| e,
                };
                accumulate(&mut grads[a.0], g.shape(), |d| {
                    for ((x, &y), &o) in d.iter_mut().zip(gd).zip(out) {
                        *x = *x + y * deriv(o);
                    }
                });
            }
            Op::Log(a) => {
                let xv = self.nodes[a.0].value.data();
                accumulate(&mut grads[a.0], g.shape(), |d| {
                    for ((x, &y), &v) in d.iter_mut().zip(gd).zip(xv) {
                        *x = *x + y / v;
                    }
                });
            }
            Op::Scale(a, c) => {
                let c = *c;
                accumulate(&mut grads[a.0], g.shape(), |d| {
                    for (x, &y) in d.iter_mut().zip(gd) {
                        *x = *x + y * c;
                    }
                });
            }
            Op::AddScalar(a) => {
                accumulate(&mut grads[a.0], g.shape(), |d| add_into(d, gd));
            }
            Op::Sum(a) => {
                let shape = self.nodes[a.0].value.shape().to_vec();
                let y = gd[0];
                accumulate(&mut grads[a.0], &shape, |d| d.iter_mut().for_each(|x| *x = *x + y));
            }
            Op::Reshape(a) => {
                let shape = self.nodes[a.0].value.shape().to_vec();
                accumulate(&mut grads[a.0], &shape, |d| add_into(d, gd));
            }
            Op::SliceCols { input, start } => {
                let shape = self.nodes[input.0].value.shape().to_vec();
                let (rows, len) = g.dims2()?;
                let cols = shape[1];
                let start = *start;
                accumulate(&mut grads[input.0], &shape, |d| {
                    for r in 0..rows {
                        add_into(&mut d[r * cols + start..r * cols + start + len], &gd[r * len..(r + 1) * len]);
                    }
                });
            }
            Op::Conv2d { input, kernel, geom, cols } => {
                let cout = geom.cout;
                let n = geom.rows();
                let gmat = nchw_to_channel_major(gd, geom.batch, cout, geom.oh * geom.ow);
                if want(*kernel) {
                    let cols = cols.as_ref().expect("im2col saved when kernel requires grad");
                    let kshape = self.nodes[kernel.0].value.shape().to_vec();
                    accumulate(&mut grads[kernel.0], &kshape, |d| {
                        gemm(false, true, geom.patch(), n, cout, cols, &gmat, T::one(), d)
                    });
                }
                if want(*input) {
                    let kv = self.nodes[kernel.0].value.data();
                    let mut dcols = vec![T::zero(); geom.patch() * n];
                    gemm(false, false, geom.patch(), cout, n, kv, &gmat, T::zero(), &mut dcols);
                    let xshape = self.nodes[input.0].value.shape().to_vec();
                    accumulate(&mut grads[input.0], &xshape, |d| col2im_add(&dcols, geom, d));
                }
            }
            Op::MaxPool2 { input, argmax } => {
                let shape = self.nodes[input.0].value.shape().to_vec();
                accumulate(&mut grads[input.0], &shape, |d| {
                    for (&idx, &y) in argmax.iter().zip(gd) {
                        d[idx] = d[idx] + y;
                    }
                });
            }
            Op::SoftmaxCrossEntropy { logits, probs, labels } => {
                let shape = self.nodes[logits.0].value.shape().to_vec();
                let (b, k) = (shape[0], shape[1]);
                let coef = gd[0] / T::of_f64(b as f64);
                accumulate(&mut grads[logits.0], &shape, |d| {
                    for i in 0..b {
                        for j in 0..k {
                            let onehot = if labels[i] == j { T::one() } else { T::zero() };
                            d[i * k + j] = d[i * k + j] + coef * (probs[i * k + j] - onehot);
                        }
                    }
                });
            }
        }
        Ok(())
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (x, &y) in dst.iter_mut().zip(src) {
        *x = *x + y;
    }
}

/// Rows are output positions `(b, oy, ox)`; columns are `(ky, kx, ci)`,
/// matching the row-major flattening of a `kh×kw×cin×cout` kernel.
/// Column matrix `patch × (batch·oh·ow)`; row `(ky·kw + kx)·cin + ci` matches
/// the kernel layout.
fn im2col<T: Real>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let plane = g.oh * g.ow;
    let n = g.batch * plane;
    let mut cols = vec![T::zero(); g.patch() * n];
    for ky in 0..g.kh {
        for kx in 0..g.kw {
            for ci in 0..g.cin {
                let r = (ky * g.kw + kx) * g.cin + ci;
                for b in 0..g.batch {
                    let src = &x[(b * g.cin + ci) * g.h * g.w..][..g.h * g.w];
                    let dst = &mut cols[r * n + b * plane..][..plane];
                    for oy in 0..g.oh {
                        let row = &src[(oy * g.stride + ky) * g.w..][..g.w];
                        let out = &mut dst[oy * g.ow..][..g.ow];
                        if g.stride == 1 {
                            out.iter_mut().zip(&row[kx..]).for_each(|(o, &v)| *o = v);
                        } else {
                            for (ox, o) in out.iter_mut().enumerate() {
                                *o = row[ox * g.stride + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im_add<T: Real>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let plane = g.oh * g.ow;
    let n = g.batch * plane;
    for ky in 0..g.kh {
        for kx in 0..g.kw {
            for ci in 0..g.cin {
                let r = (ky * g.kw + kx) * g.cin + ci;
                for b in 0..g.batch {
                    let dst = &mut dx[(b * g.cin + ci) * g.h * g.w..][..g.h * g.w];
                    let src = &cols[r * n + b * plane..][..plane];
                    for oy in 0..g.oh {
                        let row = &mut dst[(oy * g.stride + ky) * g.w..][..g.w];
                        let src_row = &src[oy * g.ow..][..g.ow];
                        if g.stride == 1 {
                            row[kx..].iter_mut().zip(src_row).for_each(|(d, &v)| *d = *d + v);
                        } else {
                            for (ox, &v) in src_row.iter().enumerate() {
                                let i = ox * g.stride + kx;
                                row[i] = row[i] + v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `c × (b·p)` to `b × c × p`.
fn channel_major_to_nchw<T: Real>(m: &[T], batch: usize, c: usize, plane: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(m.len());
    for b in 0..batch {
        for ch in 0..c {
            out.extend_from_slice(&m[(ch * batch + b) * plane..][..plane]);
        }
    }
    out
}

fn nchw_to_channel_major<T: Real>(x: &[T], batch: usize, c: usize, plane: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(x.len());
    for ch in 0..c {
        for b in 0..batch {
            out.extend_from_slice(&x[(b * c + ch) * plane..][..plane]);
        }
    }
    out
}

/// Largest relative disagreement between the analytic gradient and a central
/// difference, over every entry of every tensor in `params`.
///
/// `build` receives the graph and one leaf per parameter and must return the
/// scalar loss node. The relative error of an entry is
/// `|a - d| / max(|a|, |d|, 1e-8)`.
pub fn grad_check<F>(params: &[Tensor<f64>], eps: f64, build: F) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId>,
{
    if !(eps > 0.0 && eps <= 1e-3) {
        return Err(Error::Domain(format!("grad_check epsilon must lie in (0, 1e-3], got {eps}")));
    }
    let eval = |ps: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = ps.iter().map(|p| g.leaf(p.clone(), false)).collect();
        let loss = build(&mut g, &ids)?;
        g.check_finite()?;
        Ok(g.value(loss).data()[0])
    };

    let mut g = Graph::new();
    let ids: Vec<NodeId> = params.iter().map(|p| g.leaf(p.clone(), true)).collect();
    let loss = build(&mut g, &ids)?;
    g.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = ids
        .iter()
        .zip(params)
        .map(|(&id, p)| g.grad(id).cloned().unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();

    let mut work: Vec<Tensor<f64>> = params.to_vec();
    let mut worst = 0.0f64;
    for p in 0..params.len() {
        for j in 0..params[p].len() {
            let orig = work[p].data()[j];
            work[p].data_mut()[j] = orig + eps;
            let plus = eval(&work)?;
            work[p].data_mut()[j] = orig - eps;
            let minus = eval(&work)?;
            work[p].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[p].data()[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64_slice(shape, v).unwrap()
    }

    #[test]
    fn single_weight_hand_calculus() {
        // L = (c·w·x - y)^2 / 2 with x=2, y=0, w=3, c=1
        let mut g = Graph::<f64>::new();
        let w = g.leaf(t(&[1], &[3.0]), true);
        let c = g.leaf(t(&[1], &[1.0]), true);
        let x = g.constant(t(&[1], &[2.0]));
        let y = g.constant(t(&[1], &[0.0]));
        let u = g.mul(c, w).unwrap();
        let p = g.mul(u, x).unwrap();
        let r = g.sub(p, y).unwrap();
        let sq = g.mul(r, r).unwrap();
        let half = g.scale(sq, 0.5);
        let loss = g.sum(half);
        g.backward(loss).unwrap();
        assert_eq!(g.value(loss).data(), &[18.0]);
        assert_eq!(g.grad(w).unwrap().data(), &[12.0]);
        assert_eq!(g.grad(c).unwrap().data(), &[36.0]);
    }

    #[test]
    fn uniform_logits_give_ln10() {
        let mut g = Graph::<f64>::new();
        let z = g.constant(Tensor::zeros(&[4, 10]));
        let loss = g.softmax_cross_entropy(z, &[0, 3, 7, 9]).unwrap();
        assert!((g.value(loss).data()[0] - 10f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn peaked_logits_give_zero_loss() {
        let mut g = Graph::<f64>::new();
        let mut z = vec![0.0; 10];
        z[2] = 800.0;
        let logits = g.constant(t(&[1, 10], &z));
        let loss = g.softmax_cross_entropy(logits, &[2]).unwrap();
        assert_eq!(g.value(loss).data()[0], 0.0);
        assert!(g.check_finite().is_ok());
    }

    #[test]
    fn backward_state_errors() {
        let mut g = Graph::<f64>::new();
        assert!(matches!(g.backward(NodeId(0)), Err(Error::State(_))));
        let a = g.leaf(t(&[1], &[1.0]), true);
        let s = g.sum(a);
        g.backward(s).unwrap();
        assert!(matches!(g.backward(s), Err(Error::State(_))));
        let mut g = Graph::<f64>::new();
        let a = g.leaf(t(&[2], &[1.0, 2.0]), true);
        assert!(matches!(g.backward(a), Err(Error::State(_))));
    }

    #[test]
    fn nonfinite_reports_node() {
        let mut g = Graph::<f64>::new();
        let a = g.leaf(t(&[2], &[1.0, -1.0]), true);
        let l = g.log(a);
        let s = g.sum(l);
        match g.check_finite() {
            Err(Error::Numerics { node, .. }) => assert_eq!(node, l.0),
            other => panic!("expected numerics error, got {other:?}"),
        }
        assert!(matches!(g.backward(s), Err(Error::Numerics { .. })));
    }

    #[test]
    fn maxpool_ties_route_to_first() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(&[1, 1, 2, 2], &[5.0, 5.0, 5.0, 5.0]), true);
        let p = g.maxpool2x2(x).unwrap();
        let s = g.sum(p);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0, 0.0, 0.0, 0.0]);

        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let p = g.maxpool2x2(x).unwrap();
        assert_eq!(g.value(p).data(), &[4.0]);
        let odd = g.constant(Tensor::zeros(&[1, 1, 3, 2]));
        assert!(matches!(g.maxpool2x2(odd), Err(Error::Shape(_))));
    }

    #[test]
    fn grad_check_rejects_bad_epsilon() {
        let p = [t(&[1], &[1.0])];
        let f = |g: &mut Graph<f64>, ids: &[NodeId]| Ok(g.sum(ids[0]));
        assert!(grad_check(&p, 0.0, f).is_err());
        assert!(grad_check(&p, 1e-2, f).is_err());
    }

    #[test]
    fn elementwise_ops_grad_check() {
        let mut rng = Rng::new(9);
        let a = rng.normal::<f64>(&[3, 4], 0.0, 1.0).unwrap();
        let b = rng.normal::<f64>(&[3, 4], 0.0, 1.0).unwrap().map(|v| v.abs() + 0.5);
        let bias = rng.normal::<f64>(&[4], 0.0, 1.0).unwrap();
        let err = grad_check(&[a, b, bias], 1e-5, |g, ids| {
            let s = g.sigmoid(ids[0]);
            let th = g.tanh(ids[1]);
            let m = g.mul(s, th)?;
            let l = g.log(ids[1]);
            let e = g.exp(m);
            let d = g.sub(e, l)?;
            let a2 = g.add(d, ids[0])?;
            let biased = g.add_row_bias(a2, ids[2])?;
            let sl = g.slice_cols(biased, 1, 2)?;
            let om = g.one_minus(sl);
            let r = g.reshape(om, &[6])?;
            let sq = g.mul(r, r)?;
            Ok(g.sum(sq))
        })
        .unwrap();
        assert!(err < 1e-6, "max rel err {err}");
    }
}
