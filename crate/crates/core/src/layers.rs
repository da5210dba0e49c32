//! Layer definitions expressed as graph builders.
//!
//! Weight arguments are the *effective* weights `c ⊙ w`; callers bind the
//! mask product before invoking a layer (see [`crate::model`]).

use crate::autograd::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::model::Parameter;
use crate::tensor::{Real, Tensor};

/// `x·w + bias` for `x[b×n_in]`, `w[n_in×n_out]`.
pub fn dense<T: Real>(g: &mut Graph<T>, x: NodeId, w: NodeId, bias: NodeId) -> Result<NodeId> {
    let xw = g.matmul(x, w)?;
    g.add_row_bias(xw, bias)
}

pub fn conv2d<T: Real>(g: &mut Graph<T>, x: NodeId, kernel: NodeId, bias: NodeId, stride: usize) -> Result<NodeId> {
    let y = g.conv2d(x, kernel, stride)?;
    g.add_channel_bias(y, bias)
}

/// Node ids of one LSTM layer's effective parameters.
///
/// `w_x[n_in×4H]`, `w_h[H×4H]`, `bias[4H]`; gate column blocks are ordered
/// input, forget, candidate, output.
#[derive(Debug, Clone, Copy)]
pub struct LstmWeights {
    pub w_x: NodeId,
    pub w_h: NodeId,
    pub bias: NodeId,
    pub hidden: usize,
}

/// One LSTM step; returns `(h_t, c_t)`.
pub fn lstm_cell<T: Real>(
    g: &mut Graph<T>,
    x_t: NodeId,
    h_prev: NodeId,
    c_prev: NodeId,
    p: &LstmWeights,
) -> Result<(NodeId, NodeId)> {
    let h = p.hidden;
    let xw = g.matmul(x_t, p.w_x)?;
    let hw = g.matmul(h_prev, p.w_h)?;
    let pre = g.add(xw, hw)?;
    let pre = g.add_row_bias(pre, p.bias)?;
    let i_pre = g.slice_cols(pre, 0, h)?;
    let f_pre = g.slice_cols(pre, h, h)?;
    let g_pre = g.slice_cols(pre, 2 * h, h)?;
    let o_pre = g.slice_cols(pre, 3 * h, h)?;
    let i = g.sigmoid(i_pre);
    let f = g.sigmoid(f_pre);
    let cand = g.tanh(g_pre);
    let o = g.sigmoid(o_pre);
    let keep = g.mul(f, c_prev)?;
    let write = g.mul(i, cand)?;
    let c = g.add(keep, write)?;
    let tc = g.tanh(c);
    let h_t = g.mul(o, tc)?;
    Ok((h_t, c))
}

/// Node ids of one GRU layer's effective parameters.
///
/// `w_x[n_in×3H]`, `w_h[H×3H]`, `bias[3H]`; column blocks are update,
/// reset, candidate.
#[derive(Debug, Clone, Copy)]
pub struct GruWeights {
    pub w_x: NodeId,
    pub w_h: NodeId,
    pub bias: NodeId,
    pub hidden: usize,
}

/// One GRU step:
/// `z = σ(x W_xz + h W_hz + b_z)`, `r = σ(x W_xr + h W_hr + b_r)`,
/// `n = tanh(x W_xn + (r ⊙ h) W_hn + b_n)`, `h_t = (1 - z) ⊙ n + z ⊙ h`.
pub fn gru_cell<T: Real>(g: &mut Graph<T>, x_t: NodeId, h_prev: NodeId, p: &GruWeights) -> Result<NodeId> {
    let h = p.hidden;
    let xw = g.matmul(x_t, p.w_x)?;
    let xw = g.add_row_bias(xw, p.bias)?;
    let w_hzr = g.slice_cols(p.w_h, 0, 2 * h)?;
    let w_hn = g.slice_cols(p.w_h, 2 * h, h)?;
    let hzr = g.matmul(h_prev, w_hzr)?;
    let xz = g.slice_cols(xw, 0, h)?;
    let xr = g.slice_cols(xw, h, h)?;
    let xn = g.slice_cols(xw, 2 * h, h)?;
    let hz = g.slice_cols(hzr, 0, h)?;
    let hr = g.slice_cols(hzr, h, h)?;
    let z_pre = g.add(xz, hz)?;
    let r_pre = g.add(xr, hr)?;
    let z = g.sigmoid(z_pre);
    let r = g.sigmoid(r_pre);
    let rh = g.mul(r, h_prev)?;
    let rhw = g.matmul(rh, w_hn)?;
    let n_pre = g.add(xn, rhw)?;
    let n = g.tanh(n_pre);
    let one_minus_z = g.one_minus(z);
    let new_part = g.mul(one_minus_z, n)?;
    let old_part = g.mul(z, h_prev)?;
    g.add(new_part, old_part)
}

/// Splits `x[b×1×steps×features]` into per-step `b×features` tensors.
pub fn sequence_steps<T: Real>(x: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
    let &[b, c, steps, feat] = x.shape() else {
        return Err(Error::shape(format!("sequence input must be b×1×steps×features, got {:?}", x.shape())));
    };
    if c != 1 {
        return Err(Error::shape(format!("sequence input must have one channel, got {c}")));
    }
    (0..steps)
        .map(|t| {
            let mut data = Vec::with_capacity(b * feat);
            for i in 0..b {
                let base = (i * steps + t) * feat;
                data.extend_from_slice(&x.data()[base..base + feat]);
            }
            Tensor::new(&[b, feat], data)
        })
        .collect()
}

fn bind_effective<T: Real>(g: &mut Graph<T>, p: &Parameter<T>) -> Result<NodeId> {
    let w = g.constant(p.value.clone());
    if p.prunable {
        let c = g.constant(p.mask.clone());
        g.mul(c, w)
    } else {
        Ok(w)
    }
}

/// Forward of a single dense layer on concrete tensors.
pub fn dense_forward<T: Real>(x: &Tensor<T>, weight: &Parameter<T>, bias: &Parameter<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let xi = g.constant(x.clone());
    let w = bind_effective(&mut g, weight)?;
    let b = bind_effective(&mut g, bias)?;
    let y = dense(&mut g, xi, w, b)?;
    Ok(g.value(y).clone())
}

/// Forward of a single (bias-free) convolution on concrete tensors.
pub fn conv2d_forward<T: Real>(x: &Tensor<T>, kernel: &Parameter<T>, stride: usize) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let xi = g.constant(x.clone());
    let k = bind_effective(&mut g, kernel)?;
    let y = g.conv2d(xi, k, stride)?;
    Ok(g.value(y).clone())
}

pub fn maxpool2x2_forward<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let xi = g.constant(x.clone());
    let y = g.maxpool2x2(xi)?;
    Ok(g.value(y).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::grad_check;
    use crate::rng::Rng;

    fn param(name: &str, value: Tensor<f64>, prunable: bool) -> Parameter<f64> {
        Parameter::new(name, value, prunable, 1, 1)
    }

    fn randn(rng: &mut Rng, shape: &[usize], std: f64) -> Tensor<f64> {
        rng.normal(shape, 0.0, std).unwrap()
    }

    fn naive_dense(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
        let (bn, nin) = x.dims2().unwrap();
        let nout = w.shape()[1];
        let mut out = vec![0.0; bn * nout];
        for i in 0..bn {
            for j in 0..nout {
                let mut acc = b.data()[j];
                for k in 0..nin {
                    acc += x.data()[i * nin + k] * w.data()[k * nout + j];
                }
                out[i * nout + j] = acc;
            }
        }
        out
    }

    /// Direct six-loop cross-correlation, `x[b×cin×h×w]`, `k[kh×kw×cin×cout]`.
    fn naive_conv(x: &Tensor<f64>, k: &Tensor<f64>, stride: usize) -> (Vec<usize>, Vec<f64>) {
        let [b, cin, h, w] = x.shape().try_into().unwrap();
        let [kh, kw, _, cout] = k.shape().try_into().unwrap();
        let (oh, ow) = ((h - kh) / stride + 1, (w - kw) / stride + 1);
        let mut out = vec![0.0; b * cout * oh * ow];
        for n in 0..b {
            for co in 0..cout {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for ky in 0..kh {
                            for kx in 0..kw {
                                for ci in 0..cin {
                                    let xv = x.data()[((n * cin + ci) * h + oy * stride + ky) * w + ox * stride + kx];
                                    let kv = k.data()[((ky * kw + kx) * cin + ci) * cout + co];
                                    acc += xv * kv;
                                }
                            }
                        }
                        out[((n * cout + co) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        (vec![b, cout, oh, ow], out)
    }

    #[test]
    fn dense_identity_and_fully_pruned() {
        let mut rng = Rng::new(1);
        let x = randn(&mut rng, &[3, 4], 1.0);
        let eye = Tensor::from_f64_slice(&[4, 4], &[1., 0., 0., 0., 0., 1., 0., 0., 0., 0., 1., 0., 0., 0., 0., 1.]).unwrap();
        let w = param("w", eye, true);
        let b = param("b", Tensor::zeros(&[4]), false);
        assert_eq!(dense_forward(&x, &w, &b).unwrap(), x);

        let mut w = param("w", randn(&mut rng, &[4, 2], 1.0), true);
        w.mask = Tensor::zeros(&[4, 2]);
        let b = param("b", Tensor::from_f64_slice(&[2], &[0.5, -2.0]).unwrap(), false);
        let y = dense_forward(&x, &w, &b).unwrap();
        assert_eq!(y.data(), &[0.5, -2.0, 0.5, -2.0, 0.5, -2.0]);
    }

    #[test]
    fn dense_matches_loop_oracle() {
        let mut rng = Rng::new(2);
        let x = randn(&mut rng, &[6, 9], 1.0);
        let w = param("w", randn(&mut rng, &[9, 5], 1.0), true);
        let b = param("b", randn(&mut rng, &[5], 1.0), false);
        let y = dense_forward(&x, &w, &b).unwrap();
        for (got, want) in y.data().iter().zip(naive_dense(&x, &w.value, &b.value)) {
            assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0));
        }
        let bad = param("w", randn(&mut rng, &[8, 5], 1.0), true);
        assert!(matches!(dense_forward(&x, &bad, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn conv_unit_kernel_and_shapes() {
        let mut rng = Rng::new(3);
        let x = randn(&mut rng, &[2, 1, 5, 5], 1.0);
        let k = param("k", Tensor::ones(&[1, 1, 1, 1]), true);
        assert_eq!(conv2d_forward(&x, &k, 1).unwrap(), x);

        // two input channels, one output: channel-pair sum
        let x2 = randn(&mut rng, &[1, 2, 3, 3], 1.0);
        let k2 = param("k", Tensor::ones(&[1, 1, 2, 1]), true);
        let y = conv2d_forward(&x2, &k2, 1).unwrap();
        for p in 0..9 {
            assert!((y.data()[p] - (x2.data()[p] + x2.data()[9 + p])).abs() < 1e-15);
        }

        let img = Tensor::<f64>::zeros(&[1, 1, 28, 28]);
        let k5 = param("k", Tensor::zeros(&[5, 5, 1, 20]), true);
        assert_eq!(conv2d_forward(&img, &k5, 1).unwrap().shape(), &[1, 20, 24, 24]);
        let small = Tensor::<f64>::zeros(&[1, 1, 4, 4]);
        assert!(matches!(conv2d_forward(&small, &k5, 1), Err(Error::Shape(_))));
        let wrong_c = Tensor::<f64>::zeros(&[1, 3, 8, 8]);
        assert!(matches!(conv2d_forward(&wrong_c, &k5, 1), Err(Error::Shape(_))));
    }

    #[test]
    fn conv_matches_six_loop_oracle() {
        let mut rng = Rng::new(4);
        let x = randn(&mut rng, &[2, 2, 6, 6], 1.0);
        let k = param("k", randn(&mut rng, &[3, 3, 2, 3], 1.0), true);
        for stride in [1, 2] {
            let y = conv2d_forward(&x, &k, stride).unwrap();
            let (shape, want) = naive_conv(&x, &k.value, stride);
            assert_eq!(y.shape(), shape.as_slice());
            for (got, want) in y.data().iter().zip(want) {
                assert!((got - want).abs() <= 1e-10 * want.abs().max(1.0));
            }
        }
    }

    #[test]
    fn maxpool_forward() {
        let x = Tensor::<f64>::from_f64_slice(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(maxpool2x2_forward(&x).unwrap().data(), &[4.0]);
    }

    #[test]
    fn maxpool_gradient_check_away_from_ties() {
        let mut rng = Rng::new(5);
        // distinct values spaced far beyond epsilon
        let mut perm = rng.permutation(2 * 2 * 4 * 4);
        perm.iter_mut().for_each(|v| *v += 1);
        let x = Tensor::from_f64_slice(&[2, 2, 4, 4], &perm.iter().map(|&v| v as f64 * 0.02).collect::<Vec<_>>()).unwrap();
        let wts = randn(&mut rng, &[2, 2, 2, 2], 1.0);
        let err = grad_check(&[x, wts], 1e-5, |g, ids| {
            let p = g.maxpool2x2(ids[0])?;
            let m = g.mul(p, ids[1])?;
            let t = g.tanh(m);
            Ok(g.sum(t))
        })
        .unwrap();
        assert!(err < 1e-5, "maxpool rel err {err}");
    }

    #[test]
    fn conv_gradient_check() {
        let mut rng = Rng::new(6);
        let x = randn(&mut rng, &[2, 2, 6, 6], 1.0);
        let k = randn(&mut rng, &[3, 3, 2, 3], 0.5);
        let b = randn(&mut rng, &[3], 0.5);
        for stride in [1, 2] {
            let err = grad_check(&[x.clone(), k.clone(), b.clone()], 1e-5, |g, ids| {
                let y = conv2d(g, ids[0], ids[1], ids[2], stride)?;
                let t = g.tanh(y);
                let sq = g.mul(t, t)?;
                Ok(g.sum(sq))
            })
            .unwrap();
            assert!(err < 1e-4, "conv stride {stride} rel err {err}");
        }
    }

    fn lstm_loss(g: &mut Graph<f64>, ids: &[NodeId], xs: &[Tensor<f64>], hidden: usize) -> Result<NodeId> {
        let p = LstmWeights { w_x: ids[0], w_h: ids[1], bias: ids[2], hidden };
        let b = xs[0].shape()[0];
        let mut h = g.constant(Tensor::zeros(&[b, hidden]));
        let mut c = g.constant(Tensor::zeros(&[b, hidden]));
        for x in xs {
            let xi = g.constant(x.clone());
            (h, c) = lstm_cell(g, xi, h, c, &p)?;
        }
        let logits = g.matmul(h, ids[3])?;
        g.softmax_cross_entropy(logits, &[0, 2])
    }

    #[test]
    fn lstm_three_step_gradient_check() {
        let mut rng = Rng::new(7);
        let (nin, hidden) = (3, 4);
        let xs: Vec<_> = (0..3).map(|_| randn(&mut rng, &[2, nin], 1.0)).collect();
        let params = [
            randn(&mut rng, &[nin, 4 * hidden], 0.5),
            randn(&mut rng, &[hidden, 4 * hidden], 0.5),
            randn(&mut rng, &[4 * hidden], 0.5),
            randn(&mut rng, &[hidden, 3], 0.5),
        ];
        let err = grad_check(&params, 1e-5, |g, ids| lstm_loss(g, ids, &xs, hidden)).unwrap();
        assert!(err < 1e-4, "lstm rel err {err}");
    }

    #[test]
    fn gru_three_step_gradient_check() {
        let mut rng = Rng::new(8);
        let (nin, hidden) = (3, 4);
        let xs: Vec<_> = (0..3).map(|_| randn(&mut rng, &[2, nin], 1.0)).collect();
        let params = [
            randn(&mut rng, &[nin, 3 * hidden], 0.5),
            randn(&mut rng, &[hidden, 3 * hidden], 0.5),
            randn(&mut rng, &[3 * hidden], 0.5),
            randn(&mut rng, &[hidden, 3], 0.5),
        ];
        let err = grad_check(&params, 1e-5, |g, ids| {
            let p = GruWeights { w_x: ids[0], w_h: ids[1], bias: ids[2], hidden };
            let mut h = g.constant(Tensor::zeros(&[2, hidden]));
            for x in &xs {
                let xi = g.constant(x.clone());
                h = gru_cell(g, xi, h, &p)?;
            }
            let logits = g.matmul(h, ids[3])?;
            g.softmax_cross_entropy(logits, &[1, 0])
        })
        .unwrap();
        assert!(err < 1e-4, "gru rel err {err}");
    }

    #[test]
    fn lstm_zero_weights_zero_state() {
        let mut g = Graph::<f64>::new();
        let hidden = 5;
        let x = g.constant(Tensor::ones(&[2, 3]));
        let p = LstmWeights {
            w_x: g.constant(Tensor::zeros(&[3, 4 * hidden])),
            w_h: g.constant(Tensor::zeros(&[hidden, 4 * hidden])),
            bias: g.constant(Tensor::zeros(&[4 * hidden])),
            hidden,
        };
        let h0 = g.constant(Tensor::zeros(&[2, hidden]));
        let c0 = g.constant(Tensor::zeros(&[2, hidden]));
        let (h, c) = lstm_cell(&mut g, x, h0, c0, &p).unwrap();
        assert!(g.value(h).data().iter().all(|&v| v == 0.0));
        assert!(g.value(c).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lstm_saturated_forget_keeps_cell() {
        let mut rng = Rng::new(9);
        let hidden = 3;
        let mut g = Graph::<f64>::new();
        let x = g.constant(randn(&mut rng, &[2, 4], 1.0));
        let mut bias = vec![0.0; 4 * hidden];
        bias[..hidden].iter_mut().for_each(|v| *v = -60.0); // input gate closed
        bias[hidden..2 * hidden].iter_mut().for_each(|v| *v = 60.0); // forget gate open
        let p = LstmWeights {
            w_x: g.constant(Tensor::zeros(&[4, 4 * hidden])),
            w_h: g.constant(Tensor::zeros(&[hidden, 4 * hidden])),
            bias: g.constant(Tensor::from_f64_slice(&[4 * hidden], &bias).unwrap()),
            hidden,
        };
        let c_prev = randn(&mut rng, &[2, hidden], 1.0);
        let h0 = g.constant(Tensor::zeros(&[2, hidden]));
        let c0 = g.constant(c_prev.clone());
        let (_, c) = lstm_cell(&mut g, x, h0, c0, &p).unwrap();
        assert_eq!(g.value(c), &c_prev);
    }

    #[test]
    fn gru_zero_weights_keep_half_state() {
        // z = σ(0) = 1/2 and n = 0, so h_t = h_prev / 2
        let mut g = Graph::<f64>::new();
        let hidden = 2;
        let x = g.constant(Tensor::ones(&[1, 3]));
        let p = GruWeights {
            w_x: g.constant(Tensor::zeros(&[3, 3 * hidden])),
            w_h: g.constant(Tensor::zeros(&[hidden, 3 * hidden])),
            bias: g.constant(Tensor::zeros(&[3 * hidden])),
            hidden,
        };
        let h0 = g.constant(Tensor::from_f64_slice(&[1, 2], &[0.8, -0.4]).unwrap());
        let h = gru_cell(&mut g, x, h0, &p).unwrap();
        assert_eq!(g.value(h).data(), &[0.4, -0.2]);
    }

    #[test]
    fn sequence_split_rows() {
        let x = Tensor::<f64>::from_f64_slice(&[2, 1, 2, 3], &(0..12).map(|v| v as f64).collect::<Vec<_>>()).unwrap();
        let steps = sequence_steps(&x).unwrap();
        assert_eq!(steps.len(), 2);
        assert_eq!(steps[0].data(), &[0., 1., 2., 6., 7., 8.]);
        assert_eq!(steps[1].data(), &[3., 4., 5., 9., 10., 11.]);
    }
}
