//! Convolution, dense and batch-normalization operations on the tape.
//!
//! Convolutions are explicit cross-correlation loops arranged so the inner
//! loop runs over contiguous rows; correctness and reproducibility matter
//! more than throughput here, but the layout keeps the compiler vectorizing.

use std::sync::Arc;

use super::tape::{BackFn, Tape, Var};
use super::{Result, Tensor, TensorError};

/// Exponential-moving-average factor for batch-norm running statistics.
pub const BN_MOMENTUM: f64 = 0.1;
/// Lower bound applied to batch and running variances before normalizing.
pub const BN_VARIANCE_FLOOR: f64 = 1e-5;

#[derive(Clone, Copy)]
struct ConvDims {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    stride: usize,
    padding: usize,
    ho: usize,
    wo: usize,
}

/// Valid output-column range for one kernel column: all `ow` in `lo..hi`
/// have `ow*stride + kw - padding` inside `[0, w)`.
fn col_range(wo: usize, w: usize, stride: usize, kw: usize, padding: usize) -> (usize, usize) {
    let lo = if kw >= padding {
        0
    } else {
        (padding - kw).div_ceil(stride)
    };
    let max_in = w as isize - 1 - kw as isize + padding as isize;
    if max_in < 0 {
        return (0, 0);
    }
    let hi = (max_in as usize / stride + 1).min(wo);
    (lo.min(hi), hi)
}

fn conv2d_forward(x: &[f64], w: &[f64], b: &[f64], d: ConvDims) -> Vec<f64> {
    let mut out = vec![0.0; d.n * d.cout * d.ho * d.wo];
    let plane_in = d.h * d.w;
    let plane_out = d.ho * d.wo;
    for n in 0..d.n {
        for co in 0..d.cout {
            let o_base = (n * d.cout + co) * plane_out;
            out[o_base..o_base + plane_out].fill(b[co]);
            for ci in 0..d.cin {
                let x_base = (n * d.cin + ci) * plane_in;
                for kh in 0..d.k {
                    for kw in 0..d.k {
                        let wv = w[((co * d.cin + ci) * d.k + kh) * d.k + kw];
                        let (lo, hi) = col_range(d.wo, d.w, d.stride, kw, d.padding);
                        for oh in 0..d.ho {
                            let ih = (oh * d.stride + kh) as isize - d.padding as isize;
                            if ih < 0 || ih >= d.h as isize {
                                continue;
                            }
                            let x_row = &x[x_base + ih as usize * d.w..][..d.w];
                            let o_row = &mut out[o_base + oh * d.wo..][..d.wo];
                            if d.stride == 1 {
                                let off = kw as isize - d.padding as isize;
                                let xs = &x_row[(lo as isize + off) as usize..][..hi - lo];
                                for (o, xv) in o_row[lo..hi].iter_mut().zip(xs) {
                                    *o += wv * xv;
                                }
                            } else {
                                for ow in lo..hi {
                                    let iw = ow * d.stride + kw - d.padding;
                                    o_row[ow] += wv * x_row[iw];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv2d_backward_input(g: &[f64], w: &[f64], d: ConvDims, dx: &mut [f64]) {
    debug_assert_eq!(dx.len(), d.n * d.cin * d.h * d.w);
    let plane_in = d.h * d.w;
    let plane_out = d.ho * d.wo;
    for n in 0..d.n {
        for co in 0..d.cout {
            let g_base = (n * d.cout + co) * plane_out;
            for ci in 0..d.cin {
                let x_base = (n * d.cin + ci) * plane_in;
                for kh in 0..d.k {
                    for kw in 0..d.k {
                        let wv = w[((co * d.cin + ci) * d.k + kh) * d.k + kw];
                        let (lo, hi) = col_range(d.wo, d.w, d.stride, kw, d.padding);
                        for oh in 0..d.ho {
                            let ih = (oh * d.stride + kh) as isize - d.padding as isize;
                            if ih < 0 || ih >= d.h as isize {
                                continue;
                            }
                            let dx_row = &mut dx[x_base + ih as usize * d.w..][..d.w];
                            let g_row = &g[g_base + oh * d.wo..][..d.wo];
                            if d.stride == 1 {
                                let off = kw as isize - d.padding as isize;
                                let xs =
                                    &mut dx_row[(lo as isize + off) as usize..][..hi - lo];
                                for (o, gv) in xs.iter_mut().zip(&g_row[lo..hi]) {
                                    *o += wv * gv;
                                }
                            } else {
                                for ow in lo..hi {
                                    let iw = ow * d.stride + kw - d.padding;
                                    dx_row[iw] += wv * g_row[ow];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

fn conv2d_backward_weight(g: &[f64], x: &[f64], d: ConvDims, dw: &mut [f64]) {
    debug_assert_eq!(dw.len(), d.cout * d.cin * d.k * d.k);
    let plane_in = d.h * d.w;
    let plane_out = d.ho * d.wo;
    for n in 0..d.n {
        for co in 0..d.cout {
            let g_base = (n * d.cout + co) * plane_out;
            for ci in 0..d.cin {
                let x_base = (n * d.cin + ci) * plane_in;
                for kh in 0..d.k {
                    for kw in 0..d.k {
                        let (lo, hi) = col_range(d.wo, d.w, d.stride, kw, d.padding);
                        let mut acc = 0.0;
                        for oh in 0..d.ho {
                            let ih = (oh * d.stride + kh) as isize - d.padding as isize;
                            if ih < 0 || ih >= d.h as isize {
                                continue;
                            }
                            let x_row = &x[x_base + ih as usize * d.w..][..d.w];
                            let g_row = &g[g_base + oh * d.wo..][..d.wo];
                            if d.stride == 1 {
                                let off = kw as isize - d.padding as isize;
                                let xs = &x_row[(lo as isize + off) as usize..][..hi - lo];
                                for (gv, xv) in g_row[lo..hi].iter().zip(xs) {
                                    acc += gv * xv;
                                }
                            } else {
                                for ow in lo..hi {
                                    let iw = ow * d.stride + kw - d.padding;
                                    acc += g_row[ow] * x_row[iw];
                                }
                            }
                        }
                        dw[((co * d.cin + ci) * d.k + kh) * d.k + kw] += acc;
                    }
                }
            }
        }
    }
}

fn sum_over_channel_planes(g: &[f64], n: usize, c: usize, plane: usize, db: &mut [f64]) {
    debug_assert_eq!(db.len(), c);
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * plane;
            db[ci] += g[base..base + plane].iter().sum::<f64>();
        }
    }
}

impl Tape {
    /// 2-D cross-correlation with per-output-channel bias.
    ///
    /// `input` is [N, Cin, H, W], `weight` is [Cout, Cin, k, k] with odd k,
    /// `bias` is [Cout]. Differentiable w.r.t. all three.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let ws = self.shape(weight).to_vec();
        let bs = self.shape(bias).to_vec();
        if xs.len() != 4 {
            return Err(TensorError::BadRank {
                op: "conv2d",
                expected: 4,
                shape: xs,
            });
        }
        if ws.len() != 4 || ws[2] != ws[3] {
            return Err(TensorError::Invalid {
                op: "conv2d",
                msg: format!("weight must be [Cout, Cin, k, k], got {ws:?}"),
            });
        }
        if ws[2] % 2 == 0 {
            return Err(TensorError::Invalid {
                op: "conv2d",
                msg: format!("kernel size {} must be odd", ws[2]),
            });
        }
        if stride == 0 {
            return Err(TensorError::Invalid {
                op: "conv2d",
                msg: "stride must be >= 1".into(),
            });
        }
        if xs[1] != ws[1] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: xs,
                rhs: ws,
            });
        }
        if bs != [ws[0]] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: ws,
                rhs: bs,
            });
        }
        let (n, cin, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, k) = (ws[0], ws[2]);
        let h_num = h + 2 * padding;
        let w_num = w + 2 * padding;
        if h_num < k || w_num < k {
            return Err(TensorError::Invalid {
                op: "conv2d",
                msg: format!("kernel {k} is larger than padded input {h_num}x{w_num}"),
            });
        }
        let d = ConvDims {
            n,
            cin,
            h,
            w,
            cout,
            k,
            stride,
            padding,
            ho: (h_num - k) / stride + 1,
            wo: (w_num - k) / stride + 1,
        };
        let (dx, dw, db) = (
            self.value(input).shared(),
            self.value(weight).shared(),
            self.value(bias).shared(),
        );
        let out = conv2d_forward(&dx, &dw, &db, d);
        let value = Tensor::new(vec![n, cout, d.ho, d.wo], out)?;
        let (ri, rw, rb) = (
            self.requires_grad(input),
            self.requires_grad(weight),
            self.requires_grad(bias),
        );
        let back = (ri || rw || rb).then(|| -> BackFn {
            let (dx, dw) = (Arc::clone(&dx), Arc::clone(&dw));
            Box::new(move |g, sink| {
                if ri {
                    sink.accumulate(input, dx.len(), |acc| {
                        conv2d_backward_input(g, &dw, d, acc);
                    });
                }
                if rw {
                    sink.accumulate(weight, dw.len(), |acc| {
                        conv2d_backward_weight(g, &dx, d, acc);
                    });
                }
                if rb {
                    sink.accumulate(bias, d.cout, |acc| {
                        sum_over_channel_planes(g, d.n, d.cout, d.ho * d.wo, acc);
                    });
                }
            })
        });
        Ok(self.push(value, ri || rw || rb, back))
    }

    /// Transposed 2-D convolution (the adjoint of [`Tape::conv2d`] in its
    /// spatial indexing). `weight` is [Cin, Cout, k, k]; the output spatial
    /// extent is `(H - 1) * stride - 2 * padding + k`.
    pub fn conv2d_transposed(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let ws = self.shape(weight).to_vec();
        let bs = self.shape(bias).to_vec();
        if xs.len() != 4 {
            return Err(TensorError::BadRank {
                op: "conv2d_transposed",
                expected: 4,
                shape: xs,
            });
        }
        if ws.len() != 4 || ws[2] != ws[3] {
            return Err(TensorError::Invalid {
                op: "conv2d_transposed",
                msg: format!("weight must be [Cin, Cout, k, k], got {ws:?}"),
            });
        }
        if stride == 0 {
            return Err(TensorError::Invalid {
                op: "conv2d_transposed",
                msg: "stride must be >= 1".into(),
            });
        }
        if xs[1] != ws[0] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d_transposed",
                lhs: xs,
                rhs: ws,
            });
        }
        if bs != [ws[1]] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d_transposed",
                lhs: ws,
                rhs: bs,
            });
        }
        let (n, cin, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, k) = (ws[1], ws[2]);
        let ho = (h - 1) * stride + k;
        let wo = (w - 1) * stride + k;
        if ho < 2 * padding + 1 || wo < 2 * padding + 1 {
            return Err(TensorError::Invalid {
                op: "conv2d_transposed",
                msg: format!("padding {padding} consumes the whole {ho}x{wo} output"),
            });
        }
        let (ho, wo) = (ho - 2 * padding, wo - 2 * padding);
        // The transposed convolution scatters with exactly conv2d's gather
        // indexing run backwards, so its three kernels are the conv2d kernels
        // with input and output swapped and the weight axes read as
        // [Cin, Cout, k, k].
        let d = ConvDims {
            n,
            cin: cout, // conv2d-view input channels = our output channels
            h: ho,
            w: wo,
            cout: cin,
            k,
            stride,
            padding,
            ho: h,
            wo: w,
        };
        let (dx, dwt, db) = (
            self.value(input).shared(),
            self.value(weight).shared(),
            self.value(bias).shared(),
        );
        // conv2d kernels expect [Cout, Cin, k, k] = our [Cin, Cout, k, k]: no
        // transposition needed, the roles swap with the dims.
        let mut out = vec![0.0; n * cout * ho * wo];
        conv2d_backward_input(&dx, &dwt, d, &mut out);
        let plane_out = ho * wo;
        for ni in 0..n {
            for co in 0..cout {
                let base = (ni * cout + co) * plane_out;
                for v in &mut out[base..base + plane_out] {
                    *v += db[co];
                }
            }
        }
        let value = Tensor::new(vec![n, cout, ho, wo], out)?;
        let (ri, rw, rb) = (
            self.requires_grad(input),
            self.requires_grad(weight),
            self.requires_grad(bias),
        );
        let back = (ri || rw || rb).then(|| -> BackFn {
            let (dx, dwt) = (Arc::clone(&dx), Arc::clone(&dwt));
            Box::new(move |g, sink| {
                if ri {
                    // Gradient of a scatter is the matching gather, which is
                    // conv2d's forward indexing; accumulate its output.
                    let gi = conv2d_forward(g, &dwt, &vec![0.0; d.cout], d);
                    sink.accumulate(input, gi.len(), |acc| {
                        for (a, v) in acc.iter_mut().zip(&gi) {
                            *a += v;
                        }
                    });
                }
                if rw {
                    sink.accumulate(weight, dwt.len(), |acc| {
                        conv2d_backward_weight(&dx, g, d, acc);
                    });
                }
                if rb {
                    sink.accumulate(bias, cout, |acc| {
                        sum_over_channel_planes(g, n, cout, plane_out, acc);
                    });
                }
            })
        });
        Ok(self.push(value, ri || rw || rb, back))
    }

    /// Affine layer: `input` [N, din] x `weight` [dout, din] + `bias` [dout].
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let ws = self.shape(weight).to_vec();
        let bs = self.shape(bias).to_vec();
        if xs.len() != 2 || ws.len() != 2 {
            return Err(TensorError::BadRank {
                op: "dense",
                expected: 2,
                shape: if xs.len() != 2 { xs } else { ws },
            });
        }
        if xs[1] != ws[1] || bs != [ws[0]] {
            return Err(TensorError::ShapeMismatch {
                op: "dense",
                lhs: xs,
                rhs: ws,
            });
        }
        let (n, din, dout) = (xs[0], xs[1], ws[0]);
        let (dx, dw, db) = (
            self.value(input).shared(),
            self.value(weight).shared(),
            self.value(bias).shared(),
        );
        let mut out = vec![0.0; n * dout];
        for ni in 0..n {
            let x_row = &dx[ni * din..][..din];
            for o in 0..dout {
                let w_row = &dw[o * din..][..din];
                let mut acc = db[o];
                for i in 0..din {
                    acc += x_row[i] * w_row[i];
                }
                out[ni * dout + o] = acc;
            }
        }
        let value = Tensor::new(vec![n, dout], out)?;
        let (ri, rw, rb) = (
            self.requires_grad(input),
            self.requires_grad(weight),
            self.requires_grad(bias),
        );
        let back = (ri || rw || rb).then(|| -> BackFn {
            let (dx, dw) = (Arc::clone(&dx), Arc::clone(&dw));
            Box::new(move |g, sink| {
                if ri {
                    sink.accumulate(input, n * din, |acc| {
                        for ni in 0..n {
                            let acc_row = &mut acc[ni * din..][..din];
                            for o in 0..dout {
                                let gv = g[ni * dout + o];
                                let w_row = &dw[o * din..][..din];
                                for i in 0..din {
                                    acc_row[i] += gv * w_row[i];
                                }
                            }
                        }
                    });
                }
                if rw {
                    sink.accumulate(weight, dout * din, |acc| {
                        for ni in 0..n {
                            let x_row = &dx[ni * din..][..din];
                            for o in 0..dout {
                                let gv = g[ni * dout + o];
                                let acc_row = &mut acc[o * din..][..din];
                                for i in 0..din {
                                    acc_row[i] += gv * x_row[i];
                                }
                            }
                        }
                    });
                }
                if rb {
                    sink.accumulate(bias, dout, |acc| {
                        for ni in 0..n {
                            for o in 0..dout {
                                acc[o] += g[ni * dout + o];
                            }
                        }
                    });
                }
            })
        });
        Ok(self.push(value, ri || rw || rb, back))
    }
}

/// Per-channel running statistics for batch normalization. Updated outside
/// the tape (they never receive gradients).
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn identity(channels: usize) -> Self {
        RunningStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    /// Normalize with batch statistics and update the running ones. Falls
    /// back to the running statistics when a channel has fewer than two
    /// elements to estimate from.
    Train,
    /// Normalize with the running statistics.
    Eval,
}

impl Tape {
    /// Batch normalization over the channel axis of an [N, C, H, W] tensor.
    ///
    /// `gamma`/`beta` are the learnable per-channel affine parameters; the
    /// running statistics live outside the tape and the variance is floored
    /// at [`BN_VARIANCE_FLOOR`] before the square root.
    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        stats: &mut RunningStats,
        mode: BnMode,
    ) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        if xs.len() != 4 {
            return Err(TensorError::BadRank {
                op: "batch_norm",
                expected: 4,
                shape: xs,
            });
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        if self.shape(gamma) != [c] || self.shape(beta) != [c] || stats.mean.len() != c {
            return Err(TensorError::ShapeMismatch {
                op: "batch_norm",
                lhs: xs,
                rhs: self.shape(gamma).to_vec(),
            });
        }
        let plane = h * w;
        let per_channel = n * plane;
        let use_batch = mode == BnMode::Train && per_channel >= 2;

        let dx = self.value(input).shared();
        let (dgamma, dbeta) = (self.value(gamma).shared(), self.value(beta).shared());

        let (mean, var): (Vec<f64>, Vec<f64>) = if use_batch {
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for ci in 0..c {
                let mut sum = 0.0;
                for ni in 0..n {
                    let base = (ni * c + ci) * plane;
                    sum += dx[base..base + plane].iter().sum::<f64>();
                }
                let m = sum / per_channel as f64;
                let mut sq = 0.0;
                for ni in 0..n {
                    let base = (ni * c + ci) * plane;
                    for &v in &dx[base..base + plane] {
                        let d = v - m;
                        sq += d * d;
                    }
                }
                mean[ci] = m;
                var[ci] = sq / per_channel as f64;
            }
            // Running statistics track the raw (unfloored) batch moments.
            for ci in 0..c {
                stats.mean[ci] = (1.0 - BN_MOMENTUM) * stats.mean[ci] + BN_MOMENTUM * mean[ci];
                stats.var[ci] = (1.0 - BN_MOMENTUM) * stats.var[ci] + BN_MOMENTUM * var[ci];
            }
            (mean, var)
        } else {
            (stats.mean.clone(), stats.var.clone())
        };

        let inv_std: Arc<Vec<f64>> = Arc::new(
            var.iter()
                .map(|&v| 1.0 / v.max(BN_VARIANCE_FLOOR).sqrt())
                .collect(),
        );
        // Channels sitting on the floor have zero derivative through the
        // variance.
        let var_active: Arc<Vec<bool>> =
            Arc::new(var.iter().map(|&v| v > BN_VARIANCE_FLOOR).collect());
        let mean = Arc::new(mean);

        let mut out = vec![0.0; dx.len()];
        for ci in 0..c {
            let (m, is, ga, be) = (mean[ci], inv_std[ci], dgamma[ci], dbeta[ci]);
            for ni in 0..n {
                let base = (ni * c + ci) * plane;
                for i in base..base + plane {
                    out[i] = (dx[i] - m) * is * ga + be;
                }
            }
        }
        let value = Tensor::new(xs, out)?;
        let (ri, rg, rb) = (
            self.requires_grad(input),
            self.requires_grad(gamma),
            self.requires_grad(beta),
        );
        let back = (ri || rg || rb).then(|| -> BackFn {
            let dx = Arc::clone(&dx);
            let dgamma = Arc::clone(&dgamma);
            let mean = Arc::clone(&mean);
            let inv_std = Arc::clone(&inv_std);
            let var_active = Arc::clone(&var_active);
            let total = dx.len();
            Box::new(move |g, sink| {
                let m_count = per_channel as f64;
                if ri {
                    sink.accumulate(input, total, |acc| {
                        for ci in 0..c {
                            let (mu, is, ga) = (mean[ci], inv_std[ci], dgamma[ci]);
                            if use_batch {
                                // Batch statistics depend on the input:
                                // propagate through mean and variance.
                                let mut sum_dxhat = 0.0;
                                let mut sum_dxhat_xc = 0.0;
                                for ni in 0..n {
                                    let base = (ni * c + ci) * plane;
                                    for i in base..base + plane {
                                        let dxhat = g[i] * ga;
                                        sum_dxhat += dxhat;
                                        sum_dxhat_xc += dxhat * (dx[i] - mu);
                                    }
                                }
                                let dvar = if var_active[ci] {
                                    sum_dxhat_xc * (-0.5) * is * is * is
                                } else {
                                    0.0
                                };
                                let dmu = -sum_dxhat * is;
                                for ni in 0..n {
                                    let base = (ni * c + ci) * plane;
                                    for i in base..base + plane {
                                        let dxhat = g[i] * ga;
                                        acc[i] += dxhat * is
                                            + dvar * 2.0 * (dx[i] - mu) / m_count
                                            + dmu / m_count;
                                    }
                                }
                            } else {
                                let scale = ga * is;
                                for ni in 0..n {
                                    let base = (ni * c + ci) * plane;
                                    for i in base..base + plane {
                                        acc[i] += g[i] * scale;
                                    }
                                }
                            }
                        }
                    });
                }
                if rg {
                    sink.accumulate(gamma, c, |acc| {
                        for ci in 0..c {
                            let (mu, is) = (mean[ci], inv_std[ci]);
                            let mut s = 0.0;
                            for ni in 0..n {
                                let base = (ni * c + ci) * plane;
                                for i in base..base + plane {
                                    s += g[i] * (dx[i] - mu) * is;
                                }
                            }
                            acc[ci] += s;
                        }
                    });
                }
                if rb {
                    sink.accumulate(beta, c, |acc| {
                        for ci in 0..c {
                            let mut s = 0.0;
                            for ni in 0..n {
                                let base = (ni * c + ci) * plane;
                                for i in base..base + plane {
                                    s += g[i];
                                }
                            }
                            acc[ci] += s;
                        }
                    });
                }
            })
        });
        Ok(self.push(value, ri || rg || rb, back))
    }
}
