//! The Wengert tape: operation recording and reverse-mode replay.
//!
//! A [`Tape`] owns every tensor produced during one forward computation.
//! Operations append a node holding the result plus a boxed backward rule
//! that scatters the incoming gradient to the operation's inputs.
//! [`Tape::backward`] walks the nodes once, in reverse execution order, and
//! leaves gradients populated on the `requires_grad` leaves. A tape is
//! confined to one thread; independent tapes never share state.

use std::sync::Arc;

use super::{Result, Tensor, TensorError};
use crate::rng::Rng;

/// Handle to a tensor recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

pub(crate) type BackFn = Box<dyn Fn(&[f64], &mut GradSink<'_>) + Send>;

pub(crate) struct Node {
    value: Tensor,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
    backward: Option<BackFn>,
}

/// Accumulates gradients into per-node buffers during the reverse sweep.
pub(crate) struct GradSink<'a> {
    grads: &'a mut Vec<Option<Vec<f64>>>,
}

impl GradSink<'_> {
    /// Run `add` against the (zero-initialized) gradient buffer of `target`.
    pub(crate) fn accumulate(&mut self, target: Var, len: usize, add: impl FnOnce(&mut [f64])) {
        let slot = &mut self.grads[target.0];
        let buf = slot.get_or_insert_with(|| vec![0.0; len]);
        add(buf);
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Record an input tensor. Only `requires_grad` leaves receive a gradient
    /// from [`Tape::backward`].
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, None)
    }

    /// Record a constant input (never differentiated).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` call w.r.t. leaf `v`, if it was reached.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub(crate) fn push(
        &mut self,
        value: Tensor,
        requires_grad: bool,
        backward: Option<BackFn>,
    ) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            grad: None,
            backward,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse sweep from a scalar loss. Visits each recorded operation at
    /// most once, in reverse execution order, and stores gradients on every
    /// `requires_grad` leaf reachable from `loss` (d loss / d loss = 1).
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(TensorError::NonScalarLoss {
                shape: self.nodes[loss.0].value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            if self.nodes[id].backward.is_some() {
                let node = &self.nodes[id];
                let f = node.backward.as_ref().unwrap();
                let mut sink = GradSink { grads: &mut grads };
                f(&g, &mut sink);
            } else {
                self.nodes[id].grad = Some(g);
            }
        }
        Ok(())
    }

    // ── Elementwise binary ──────────────────────────────────────────

    fn check_same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape("add", a, b)?;
        let (da, db) = (self.value(a).shared(), self.value(b).shared());
        let out: Vec<f64> = da.iter().zip(db.iter()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(self.shape(a).to_vec(), out)?;
        let (ra, rb) = (self.requires_grad(a), self.requires_grad(b));
        let n = da.len();
        let back = (ra || rb).then(|| -> BackFn {
            Box::new(move |g, sink| {
                if ra {
                    sink.accumulate(a, n, |acc| {
                        for (ac, gv) in acc.iter_mut().zip(g) {
                            *ac += gv;
                        }
                    });
                }
                if rb {
                    sink.accumulate(b, n, |acc| {
                        for (ac, gv) in acc.iter_mut().zip(g) {
                            *ac += gv;
                        }
                    });
                }
            })
        });
        Ok(self.push(value, ra || rb, back))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape("sub", a, b)?;
        let (da, db) = (self.value(a).shared(), self.value(b).shared());
        let out: Vec<f64> = da.iter().zip(db.iter()).map(|(x, y)| x - y).collect();
        let value = Tensor::new(self.shape(a).to_vec(), out)?;
        let (ra, rb) = (self.requires_grad(a), self.requires_grad(b));
        let n = da.len();
        let back = (ra || rb).then(|| -> BackFn {
            Box::new(move |g, sink| {
                if ra {
                    sink.accumulate(a, n, |acc| {
                        for (ac, gv) in acc.iter_mut().zip(g) {
                            *ac += gv;
                        }
                    });
                }
                if rb {
                    sink.accumulate(b, n, |acc| {
                        for (ac, gv) in acc.iter_mut().zip(g) {
                            *ac -= gv;
                        }
                    });
                }
            })
        });
        Ok(self.push(value, ra || rb, back))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape("mul", a, b)?;
        let (da, db) = (self.value(a).shared(), self.value(b).shared());
        let out: Vec<f64> = da.iter().zip(db.iter()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(self.shape(a).to_vec(), out)?;
        let (ra, rb) = (self.requires_grad(a), self.requires_grad(b));
        let n = da.len();
        let back = (ra || rb).then(|| -> BackFn {
            let (da, db) = (Arc::clone(&da), Arc::clone(&db));
            Box::new(move |g, sink| {
                if ra {
                    sink.accumulate(a, n, |acc| {
                        for i in 0..n {
                            acc[i] += g[i] * db[i];
                        }
                    });
                }
                if rb {
                    sink.accumulate(b, n, |acc| {
                        for i in 0..n {
                            acc[i] += g[i] * da[i];
                        }
                    });
                }
            })
        });
        Ok(self.push(value, ra || rb, back))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape("div", a, b)?;
        let (da, db) = (self.value(a).shared(), self.value(b).shared());
        let out: Vec<f64> = da.iter().zip(db.iter()).map(|(x, y)| x / y).collect();
        let value = Tensor::new(self.shape(a).to_vec(), out)?;
        let out_arc = value.shared();
        let (ra, rb) = (self.requires_grad(a), self.requires_grad(b));
        let n = da.len();
        let back = (ra || rb).then(|| -> BackFn {
            let db = Arc::clone(&db);
            Box::new(move |g, sink| {
                if ra {
                    sink.accumulate(a, n, |acc| {
                        for i in 0..n {
                            acc[i] += g[i] / db[i];
                        }
                    });
                }
                if rb {
                    sink.accumulate(b, n, |acc| {
                        for i in 0..n {
                            acc[i] -= g[i] * out_arc[i] / db[i];
                        }
                    });
                }
            })
        });
        Ok(self.push(value, ra || rb, back))
    }

    // ── Scalar and unary ────────────────────────────────────────────

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let da = self.value(a).shared();
        let out: Vec<f64> = da.iter().map(|x| x + c).collect();
        let value = Tensor::from_shared(self.shape(a).to_vec(), Arc::new(out));
        let ra = self.requires_grad(a);
        let n = da.len();
        let back = ra.then(|| -> BackFn {
            Box::new(move |g, sink| {
                sink.accumulate(a, n, |acc| {
                    for (ac, gv) in acc.iter_mut().zip(g) {
                        *ac += gv;
                    }
                });
            })
        });
        self.push(value, ra, back)
    }

    pub fn mul_scalar(&mut self, a: Var, c: f64) -> Var {
        let da = self.value(a).shared();
        let out: Vec<f64> = da.iter().map(|x| x * c).collect();
        let value = Tensor::from_shared(self.shape(a).to_vec(), Arc::new(out));
        let ra = self.requires_grad(a);
        let n = da.len();
        let back = ra.then(|| -> BackFn {
            Box::new(move |g, sink| {
                sink.accumulate(a, n, |acc| {
                    for (ac, gv) in acc.iter_mut().zip(g) {
                        *ac += c * gv;
                    }
                });
            })
        });
        self.push(value, ra, back)
    }

    /// 1 - a, elementwise. Recurs constantly in the loss formulas.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.mul_scalar(a, -1.0);
        self.add_scalar(neg, 1.0)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let da = self.value(a).shared();
        let out: Vec<f64> = da.iter().map(|x| x.ln()).collect();
        let value = Tensor::from_shared(self.shape(a).to_vec(), Arc::new(out));
        let ra = self.requires_grad(a);
        let n = da.len();
        let back = ra.then(|| -> BackFn {
            let da = Arc::clone(&da);
            Box::new(move |g, sink| {
                sink.accumulate(a, n, |acc| {
                    for i in 0..n {
                        acc[i] += g[i] / da[i];
                    }
                });
            })
        });
        self.push(value, ra, back)
    }

    /// Clamp to [lo, hi]; gradient passes where the input is inside the
    /// closed interval and is zero outside.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let da = self.value(a).shared();
        let out: Vec<f64> = da.iter().map(|x| x.clamp(lo, hi)).collect();
        let value = Tensor::from_shared(self.shape(a).to_vec(), Arc::new(out));
        let ra = self.requires_grad(a);
        let n = da.len();
        let back = ra.then(|| -> BackFn {
            let da = Arc::clone(&da);
            Box::new(move |g, sink| {
                sink.accumulate(a, n, |acc| {
                    for i in 0..n {
                        if da[i] >= lo && da[i] <= hi {
                            acc[i] += g[i];
                        }
                    }
                });
            })
        });
        self.push(value, ra, back)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let da = self.value(a).shared();
        let out: Vec<f64> = da.iter().map(|x| 1.0 / (1.0 + (-x).exp())).collect();
        let value = Tensor::from_shared(self.shape(a).to_vec(), Arc::new(out));
        let out_arc = value.shared();
        let ra = self.requires_grad(a);
        let n = da.len();
        let back = ra.then(|| -> BackFn {
            Box::new(move |g, sink| {
                sink.accumulate(a, n, |acc| {
                    for i in 0..n {
                        let y = out_arc[i];
                        acc[i] += g[i] * y * (1.0 - y);
                    }
                });
            })
        });
        self.push(value, ra, back)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let da = self.value(a).shared();
        let out: Vec<f64> = da.iter().map(|x| x.max(0.0)).collect();
        let value = Tensor::from_shared(self.shape(a).to_vec(), Arc::new(out));
        let ra = self.requires_grad(a);
        let n = da.len();
        let back = ra.then(|| -> BackFn {
            let da = Arc::clone(&da);
            Box::new(move |g, sink| {
                sink.accumulate(a, n, |acc| {
                    for i in 0..n {
                        if da[i] > 0.0 {
                            acc[i] += g[i];
                        }
                    }
                });
            })
        });
        self.push(value, ra, back)
    }

    /// PReLU with one learnable slope per channel of an [N, C, H, W] input.
    pub fn prelu(&mut self, a: Var, slope: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 4 {
            return Err(TensorError::BadRank {
                op: "prelu",
                expected: 4,
                shape,
            });
        }
        let channels = shape[1];
        if self.shape(slope) != [channels] {
            return Err(TensorError::ShapeMismatch {
                op: "prelu",
                lhs: shape,
                rhs: self.shape(slope).to_vec(),
            });
        }
        let (da, ds) = (self.value(a).shared(), self.value(slope).shared());
        let batch = shape[0];
        let plane = shape[2] * shape[3];
        let n = da.len();
        let mut out = vec![0.0; n];
        for ni in 0..batch {
            for c in 0..channels {
                let s = ds[c];
                let base = (ni * channels + c) * plane;
                for i in base..base + plane {
                    let x = da[i];
                    out[i] = if x > 0.0 { x } else { s * x };
                }
            }
        }
        let value = Tensor::new(shape, out)?;
        let (ra, rs) = (self.requires_grad(a), self.requires_grad(slope));
        let back = (ra || rs).then(|| -> BackFn {
            let (da, ds) = (Arc::clone(&da), Arc::clone(&ds));
            Box::new(move |g, sink| {
                if ra {
                    sink.accumulate(a, n, |acc| {
                        for ni in 0..batch {
                            for c in 0..channels {
                                let s = ds[c];
                                let base = (ni * channels + c) * plane;
                                for i in base..base + plane {
                                    acc[i] += g[i] * if da[i] > 0.0 { 1.0 } else { s };
                                }
                            }
                        }
                    });
                }
                if rs {
                    sink.accumulate(slope, channels, |acc| {
                        for ni in 0..batch {
                            for c in 0..channels {
                                let base = (ni * channels + c) * plane;
                                let mut acc_c = 0.0;
                                for i in base..base + plane {
                                    if da[i] <= 0.0 {
                                        acc_c += g[i] * da[i];
                                    }
                                }
                                acc[c] += acc_c;
                            }
                        }
                    });
                }
            })
        });
        Ok(self.push(value, ra || rs, back))
    }

    // ── Reductions ──────────────────────────────────────────────────

    pub fn sum(&mut self, a: Var) -> Var {
        let da = self.value(a).shared();
        let total: f64 = da.iter().sum();
        let ra = self.requires_grad(a);
        let n = da.len();
        let back = ra.then(|| -> BackFn {
            Box::new(move |g, sink| {
                let gv = g[0];
                sink.accumulate(a, n, |acc| {
                    for ac in acc.iter_mut() {
                        *ac += gv;
                    }
                });
            })
        });
        self.push(Tensor::scalar(total), ra, back)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).numel();
        let s = self.sum(a);
        self.mul_scalar(s, 1.0 / n as f64)
    }

    // ── Structural ──────────────────────────────────────────────────

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(a).reshaped(shape)?;
        let ra = self.requires_grad(a);
        let n = value.numel();
        let back = ra.then(|| -> BackFn {
            Box::new(move |g, sink| {
                sink.accumulate(a, n, |acc| {
                    for (ac, gv) in acc.iter_mut().zip(g) {
                        *ac += gv;
                    }
                });
            })
        });
        Ok(self.push(value, ra, back))
    }

    /// Concatenate two [N, C, H, W] tensors along the channel axis.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() != 4 || sb.len() != 4 {
            return Err(TensorError::BadRank {
                op: "concat_channels",
                expected: 4,
                shape: if sa.len() != 4 { sa } else { sb },
            });
        }
        if sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3] {
            return Err(TensorError::ShapeMismatch {
                op: "concat_channels",
                lhs: sa,
                rhs: sb,
            });
        }
        let (n, c1, c2, h, w) = (sa[0], sa[1], sb[1], sa[2], sa[3]);
        let plane = h * w;
        let (da, db) = (self.value(a).shared(), self.value(b).shared());
        let mut out = vec![0.0; n * (c1 + c2) * plane];
        for ni in 0..n {
            let a_base = ni * c1 * plane;
            let b_base = ni * c2 * plane;
            let o_base = ni * (c1 + c2) * plane;
            out[o_base..o_base + c1 * plane].copy_from_slice(&da[a_base..a_base + c1 * plane]);
            out[o_base + c1 * plane..o_base + (c1 + c2) * plane]
                .copy_from_slice(&db[b_base..b_base + c2 * plane]);
        }
        let value = Tensor::new(vec![n, c1 + c2, h, w], out)?;
        let (ra, rb) = (self.requires_grad(a), self.requires_grad(b));
        let (na, nb) = (da.len(), db.len());
        let back = (ra || rb).then(|| -> BackFn {
            Box::new(move |g, sink| {
                if ra {
                    sink.accumulate(a, na, |acc| {
                        for ni in 0..n {
                            let a_base = ni * c1 * plane;
                            let o_base = ni * (c1 + c2) * plane;
                            for i in 0..c1 * plane {
                                acc[a_base + i] += g[o_base + i];
                            }
                        }
                    });
                }
                if rb {
                    sink.accumulate(b, nb, |acc| {
                        for ni in 0..n {
                            let b_base = ni * c2 * plane;
                            let o_base = ni * (c1 + c2) * plane + c1 * plane;
                            for i in 0..c2 * plane {
                                acc[b_base + i] += g[o_base + i];
                            }
                        }
                    });
                }
            })
        });
        Ok(self.push(value, ra || rb, back))
    }

    /// Spatial (channel) dropout on an [N, C, H, W] tensor: each (sample,
    /// channel) plane is zeroed with probability `rate`, survivors are scaled
    /// by 1/(1-rate). Training-time only; masks are drawn from `rng`.
    pub fn channel_dropout(&mut self, a: Var, rate: f64, rng: &mut Rng) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 4 {
            return Err(TensorError::BadRank {
                op: "channel_dropout",
                expected: 4,
                shape,
            });
        }
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::Invalid {
                op: "channel_dropout",
                msg: format!("rate {rate} outside [0, 1)"),
            });
        }
        let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let plane = h * w;
        let keep_scale = 1.0 / (1.0 - rate);
        let mask: Arc<Vec<f64>> = Arc::new(
            (0..n * c)
                .map(|_| if rng.bernoulli(rate) { 0.0 } else { keep_scale })
                .collect(),
        );
        let da = self.value(a).shared();
        let mut out = vec![0.0; da.len()];
        for (nc, &m) in mask.iter().enumerate() {
            let base = nc * plane;
            for i in 0..plane {
                out[base + i] = da[base + i] * m;
            }
        }
        let value = Tensor::new(shape, out)?;
        let ra = self.requires_grad(a);
        let total = da.len();
        let back = ra.then(|| -> BackFn {
            let mask = Arc::clone(&mask);
            Box::new(move |g, sink| {
                sink.accumulate(a, total, |acc| {
                    for (nc, &m) in mask.iter().enumerate() {
                        let base = nc * plane;
                        for i in 0..plane {
                            acc[base + i] += g[base + i] * m;
                        }
                    }
                });
            })
        });
        Ok(self.push(value, ra, back))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(tape: &mut Tape, shape: Vec<usize>, data: Vec<f64>) -> Var {
        tape.leaf(Tensor::new(shape, data).unwrap(), true)
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, vec![3], vec![1.0, -2.0, 0.5]);
        let loss = tape.sum(x);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_of_sum_of_squares_is_2x() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, vec![4], vec![1.0, -2.0, 0.5, 3.0]);
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0, -4.0, 1.0, 6.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, vec![2], vec![1.0, 2.0]);
        let err = tape.backward(x).unwrap_err();
        assert!(matches!(err, TensorError::NonScalarLoss { .. }));
    }

    #[test]
    fn sigmoid_at_zero_is_half() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::scalar(0.0));
        let y = tape.sigmoid(x);
        assert_eq!(tape.value(y).item(), 0.5);
    }

    #[test]
    fn prelu_definition() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, vec![1, 1, 1, 2], vec![-2.0, 2.0]);
        let s = tape.leaf(Tensor::new(vec![1], vec![0.25]).unwrap(), true);
        let y = tape.prelu(x, s).unwrap();
        assert_eq!(tape.value(y).data(), &[-0.5, 2.0]);
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let mut tape = Tape::new();
        let a = leaf(&mut tape, vec![2], vec![1.0, 2.0]);
        let b = leaf(&mut tape, vec![3], vec![1.0, 2.0, 3.0]);
        assert!(tape.add(a, b).is_err());
        assert!(tape.mul(a, b).is_err());
    }

    #[test]
    fn concat_channels_roundtrip() {
        let mut tape = Tape::new();
        let a = leaf(&mut tape, vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let b = leaf(&mut tape, vec![1, 2, 2, 2], (5..13).map(f64::from).collect());
        let c = tape.concat_channels(a, b).unwrap();
        assert_eq!(tape.shape(c), &[1, 3, 2, 2]);
        let s = tape.sum(c);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(a).unwrap(), &[1.0; 4]);
        assert_eq!(tape.grad(b).unwrap(), &[1.0; 8]);
    }

    #[test]
    fn channel_dropout_zeroes_whole_planes() {
        let mut tape = Tape::new();
        let mut rng = Rng::new(9);
        let x = leaf(&mut tape, vec![2, 4, 3, 3], vec![1.0; 72]);
        let y = tape.channel_dropout(x, 0.5, &mut rng).unwrap();
        let data = tape.value(y).data();
        for nc in 0..8 {
            let plane = &data[nc * 9..(nc + 1) * 9];
            let first = plane[0];
            assert!(first == 0.0 || (first - 2.0).abs() < 1e-15);
            assert!(plane.iter().all(|&v| v == first));
        }
    }

    #[test]
    fn dropout_rate_one_rejected() {
        let mut tape = Tape::new();
        let mut rng = Rng::new(9);
        let x = leaf(&mut tape, vec![1, 1, 2, 2], vec![1.0; 4]);
        assert!(tape.channel_dropout(x, 1.0, &mut rng).is_err());
    }

    #[test]
    fn unreached_leaf_has_no_grad() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, vec![2], vec![1.0, 2.0]);
        let y = leaf(&mut tape, vec![2], vec![3.0, 4.0]);
        let loss = tape.sum(x);
        tape.backward(loss).unwrap();
        assert!(tape.grad(y).is_none());
    }
}
