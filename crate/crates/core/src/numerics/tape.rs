//! Reverse-mode differentiation over a static tape of the architecture's operations.

use super::kernels::{self, ConvGeom};
use super::scalar::{matmul, Layout, Scalar};
use super::tensor::{dims2, dims4, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Per-channel batch statistics produced by a train-mode batch-norm.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (divisor `M`) variance used for normalisation.
    pub var: Vec<f64>,
    /// Number of values per channel.
    pub count: usize,
}

enum Op<T> {
    Leaf,
    Conv2d { x: Var, w: Var, b: Var, geom: ConvGeom },
    ConvTranspose2d { y: Var, w: Var, b: Var, geom: ConvGeom },
    MaxPool { x: Var, argmax: Vec<u32> },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T>, batch: bool },
    LeakyRelu { x: Var, slope: T },
    Interpolate { x: Var, rows: Vec<usize>, cols: Vec<usize> },
    Linear { x: Var, w: Var, b: Var },
    Dropout { x: Var, mask: Vec<T> },
    Reshape { x: Var },
    SoftmaxCrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<T> },
    Mse { pred: Var, target: Vec<T> },
    Sum { x: Var },
    WeightedSum { terms: Vec<(Var, T)> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Records a forward computation and replays it backwards.
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Record an input or parameter. Only leaves with `requires_grad` receive gradients.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Gradient of the last `backward` loss with respect to `v`, if it was reached.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads[v.0].as_deref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<T>> {
        self.grads[v.0].take()
    }

    fn ng(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Stride-1 cross-correlation: `x [N,C,H,W]`, `w [F,C,k,k]`, `b [F]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, padding: usize) -> Result<Var> {
        let (n, c, h, wd) = dims4(self.value(x).shape(), "conv2d input")?;
        let (f, wc, kh, kw) = dims4(self.value(w).shape(), "conv2d weight")?;
        if wc != c {
            return Err(Error::config(format!(
                "conv2d: input has {c} channels but weight expects {wc}"
            )));
        }
        if kh != kw || kh % 2 == 0 || 2 * padding + 1 != kh {
            return Err(Error::config(format!(
                "conv2d: kernel {kh}x{kw} with padding {padding} does not preserve spatial size"
            )));
        }
        if self.value(b).len() != f {
            return Err(Error::shape(format!("conv2d: bias must have {f} entries")));
        }
        let geom = ConvGeom { channels: c, height: h, width: wd, kernel: kh, padding };
        let out = kernels::conv2d_forward(
            self.value(x).data(),
            n,
            &geom,
            self.value(w).data(),
            self.value(b).data(),
            f,
        );
        let value = Tensor::new([n, f, geom.out_height(), geom.out_width()], out)?;
        let ng = self.ng(&[x, w, b]);
        Ok(self.push(value, Op::Conv2d { x, w, b, geom }, ng))
    }

    /// Adjoint of [`Tape::conv2d`]: `y [N,F,H,W]`, `w [F,C,k,k]`, `b [C]` gives `[N,C,H,W]`.
    pub fn conv_transpose2d(&mut self, y: Var, w: Var, b: Var, padding: usize) -> Result<Var> {
        let (n, f, h, wd) = dims4(self.value(y).shape(), "conv_transpose2d input")?;
        let (wf, c, kh, kw) = dims4(self.value(w).shape(), "conv_transpose2d weight")?;
        if wf != f {
            return Err(Error::config(format!(
                "conv_transpose2d: input has {f} channels but weight expects {wf}"
            )));
        }
        if kh != kw || kh % 2 == 0 || 2 * padding + 1 != kh {
            return Err(Error::config(format!(
                "conv_transpose2d: kernel {kh}x{kw} with padding {padding} does not preserve spatial size"
            )));
        }
        if self.value(b).len() != c {
            return Err(Error::shape(format!(
                "conv_transpose2d: bias must have {c} entries"
            )));
        }
        // Same-padding: the output side has the input's spatial size.
        let geom = ConvGeom { channels: c, height: h, width: wd, kernel: kh, padding };
        let out = kernels::conv_transpose2d_forward(
            self.value(y).data(),
            n,
            &geom,
            self.value(w).data(),
            self.value(b).data(),
            f,
        );
        let value = Tensor::new([n, c, h, wd], out)?;
        let ng = self.ng(&[y, w, b]);
        Ok(self.push(value, Op::ConvTranspose2d { y, w, b, geom }, ng))
    }

    /// 2x2 / stride-2 max pooling; a trailing odd row or column is dropped.
    pub fn maxpool2d(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = dims4(self.value(x).shape(), "maxpool2d input")?;
        if h < 2 || w < 2 {
            return Err(Error::shape(format!("maxpool2d: {h}x{w} is smaller than 2x2")));
        }
        let (out, argmax) = kernels::maxpool2x2_forward(self.value(x).data(), n * c, h, w);
        let value = Tensor::new([n, c, h / 2, w / 2], out)?;
        let ng = self.ng(&[x]);
        Ok(self.push(value, Op::MaxPool { x, argmax }, ng))
    }

    /// Batch normalisation with batch statistics (biased variance).
    pub fn batchnorm2d_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, BatchStats)> {
        let (n, c, h, w) = dims4(self.value(x).shape(), "batchnorm2d input")?;
        let hw = h * w;
        if n * hw < 2 {
            return Err(Error::shape(
                "batchnorm2d: train mode needs at least 2 values per channel",
            ));
        }
        self.check_affine(gamma, beta, c)?;
        let (mean, var) = kernels::channel_mean_var(self.value(x).data(), n, c, hw);
        let inv_std: Vec<T> = var
            .iter()
            .map(|&v| T::one() / (v + T::lit(eps)).sqrt())
            .collect();
        let stats = BatchStats {
            mean: mean.iter().map(|v| v.as_f64()).collect(),
            var: var.iter().map(|v| v.as_f64()).collect(),
            count: n * hw,
        };
        let (value, xhat) = self.affine_normalise(x, gamma, beta, &mean, &inv_std, [n, c, h, w])?;
        let ng = self.ng(&[x, gamma, beta]);
        let var = self.push(
            value,
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch: true },
            ng,
        );
        Ok((var, stats))
    }

    /// Batch normalisation with fixed (running) statistics.
    pub fn batchnorm2d_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let (n, c, h, w) = dims4(self.value(x).shape(), "batchnorm2d input")?;
        self.check_affine(gamma, beta, c)?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(Error::shape("batchnorm2d: running stats have wrong length"));
        }
        let mean: Vec<T> = running_mean.iter().map(|&m| T::lit(m)).collect();
        let inv_std: Vec<T> = running_var
            .iter()
            .map(|&v| T::lit(1.0 / (v + eps).sqrt()))
            .collect();
        let (value, xhat) = self.affine_normalise(x, gamma, beta, &mean, &inv_std, [n, c, h, w])?;
        let ng = self.ng(&[x, gamma, beta]);
        Ok(self.push(
            value,
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch: false },
            ng,
        ))
    }

    fn check_affine(&self, gamma: Var, beta: Var, c: usize) -> Result<()> {
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(Error::shape(format!(
                "batchnorm2d: gamma/beta must have {c} entries"
            )));
        }
        Ok(())
    }

    fn affine_normalise(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        inv_std: &[T],
        [n, c, h, w]: [usize; 4],
    ) -> Result<(Tensor<T>, Vec<T>)> {
        let hw = h * w;
        let xs = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![T::zero(); xs.len()];
        let mut out = vec![T::zero(); xs.len()];
        for s in 0..n {
            for ch in 0..c {
                let base = (s * c + ch) * hw;
                let (mu, is, gg, bb) = (mean[ch], inv_std[ch], g[ch], b[ch]);
                for i in base..base + hw {
                    let xh = (xs[i] - mu) * is;
                    xhat[i] = xh;
                    out[i] = gg * xh + bb;
                }
            }
        }
        Ok((Tensor::new([n, c, h, w], out)?, xhat))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let s = T::lit(slope);
        let value = self
            .value(x)
            .map(|v| if v >= T::zero() { v } else { s * v });
        let ng = self.ng(&[x]);
        self.push(value, Op::LeakyRelu { x, slope: s }, ng)
    }

    /// Nearest-neighbour upsampling of `[N,C,h,w]` to `[N,C,H,W]`.
    pub fn interpolate_nearest(&mut self, x: Var, target: (usize, usize)) -> Result<Var> {
        let (n, c, h, w) = dims4(self.value(x).shape(), "interpolate input")?;
        let (th, tw) = target;
        if th < h || tw < w {
            return Err(Error::shape(format!(
                "interpolate: target {th}x{tw} is smaller than input {h}x{w}"
            )));
        }
        let rows = kernels::nearest_index_map(h, th);
        let cols = kernels::nearest_index_map(w, tw);
        let out = kernels::interpolate_forward(self.value(x).data(), n * c, (h, w), &rows, &cols);
        let value = Tensor::new([n, c, th, tw], out)?;
        let ng = self.ng(&[x]);
        Ok(self.push(value, Op::Interpolate { x, rows, cols }, ng))
    }

    /// Affine map `x W^T + b`: `x [N,D]`, `w [K,D]`, `b [K]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (n, d) = dims2(self.value(x).shape(), "linear input")?;
        let (k, wd) = dims2(self.value(w).shape(), "linear weight")?;
        if wd != d {
            return Err(Error::shape(format!(
                "linear: input has {d} features but weight expects {wd}"
            )));
        }
        if self.value(b).len() != k {
            return Err(Error::shape(format!("linear: bias must have {k} entries")));
        }
        let bias = self.value(b).data();
        let mut out: Vec<T> = (0..n).flat_map(|_| bias.iter().copied()).collect();
        matmul(
            n,
            d,
            k,
            self.value(x).data(),
            Layout::Normal,
            self.value(w).data(),
            Layout::Transposed,
            &mut out,
            true,
        );
        let value = Tensor::new([n, k], out)?;
        let ng = self.ng(&[x, w, b]);
        Ok(self.push(value, Op::Linear { x, w, b }, ng))
    }

    /// Inverted dropout. Identity when `train` is false or `rate` is zero.
    pub fn dropout(&mut self, x: Var, rate: f64, train: bool, rng: &mut impl rand::Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::config(format!("dropout rate {rate} not in [0, 1)")));
        }
        if !train || rate == 0.0 {
            return Ok(x);
        }
        let keep = T::lit(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..self.value(x).len())
            .map(|_| {
                if rng.random::<f64>() < rate {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let src = self.value(x);
        let data = src.data().iter().zip(&mask).map(|(&a, &m)| a * m).collect();
        let value = Tensor::new(src.shape().to_vec(), data)?;
        let ng = self.ng(&[x]);
        Ok(self.push(value, Op::Dropout { x, mask }, ng))
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let ng = self.ng(&[x]);
        Ok(self.push(value, Op::Reshape { x }, ng))
    }

    /// Mean over the batch of `-log softmax(logits)[target]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (n, k) = dims2(self.value(logits).shape(), "cross-entropy logits")?;
        if targets.len() != n {
            return Err(Error::input(format!(
                "cross-entropy: {n} rows but {} targets",
                targets.len()
            )));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= k) {
            return Err(Error::input(format!("cross-entropy: target {t} outside [0, {k})")));
        }
        let probs = softmax_rows(self.value(logits).data(), n, k);
        let z = self.value(logits).data();
        let mut loss = 0.0f64;
        for (i, &t) in targets.iter().enumerate() {
            let row = &z[i * k..(i + 1) * k];
            let m = row.iter().fold(f64::NEG_INFINITY, |a, v| a.max(v.as_f64()));
            let lse = m + row.iter().map(|v| (v.as_f64() - m).exp()).sum::<f64>().ln();
            loss += lse - row[t].as_f64();
        }
        let value = Tensor::scalar(T::lit(loss / n as f64));
        let ng = self.ng(&[logits]);
        Ok(self.push(
            value,
            Op::SoftmaxCrossEntropy { logits, targets: targets.to_vec(), probs },
            ng,
        ))
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var> {
        let p = self.value(pred);
        if p.shape() != target.shape() {
            return Err(Error::shape(format!(
                "mse: prediction {:?} vs target {:?}",
                p.shape(),
                target.shape()
            )));
        }
        let sum: f64 = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(&a, &b)| {
                let d = (a - b).as_f64();
                d * d
            })
            .sum();
        let value = Tensor::scalar(T::lit(sum / p.len() as f64));
        let ng = self.ng(&[pred]);
        Ok(self.push(value, Op::Mse { pred, target: target.data().to_vec() }, ng))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().map(|v| v.as_f64()).sum::<f64>();
        let ng = self.ng(&[x]);
        self.push(Tensor::scalar(T::lit(total)), Op::Sum { x }, ng)
    }

    /// `sum_i w_i * s_i` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut total = 0.0;
        for &(v, w) in terms {
            if self.value(v).len() != 1 {
                return Err(Error::shape("weighted_sum: terms must be scalars"));
            }
            total += w * self.value(v).data()[0].as_f64();
        }
        let vars: Vec<Var> = terms.iter().map(|t| t.0).collect();
        let ng = self.ng(&vars);
        let terms = terms.iter().map(|&(v, w)| (v, T::lit(w))).collect();
        Ok(self.push(Tensor::scalar(T::lit(total)), Op::WeightedSum { terms }, ng))
    }

    /// Populate gradients of the scalar `loss` for every node that requires them.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.grads.iter_mut().for_each(|g| *g = None);
        if !self.nodes[loss.0].needs_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(dout) = self.grads[i].take() else {
                continue;
            };
            self.backprop_node(i, &dout)?;
            // intermediate gradients are released once propagated
        }
        Ok(())
    }


    /// Take (or allocate) the gradient buffer of `v` if it needs one.
    fn grad_buf(&mut self, v: Var) -> Option<Vec<T>> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let len = self.nodes[v.0].value.len();
        Some(self.grads[v.0].take().unwrap_or_else(|| vec![T::zero(); len]))
    }

    fn restore(&mut self, v: Var, g: Option<Vec<T>>) {
        if let Some(g) = g {
            self.grads[v.0] = Some(g);
        }
    }

    fn backprop_node(&mut self, i: usize, dout: &[T]) -> Result<()> {
        // Split the borrow: the op lives in `nodes`, gradients in `grads`.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        let result = self.backprop_op(&op, dout);
        self.nodes[i].op = op;
        result
    }

    fn backprop_op(&mut self, op: &Op<T>, dout: &[T]) -> Result<()> {
        match op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom } => {
                let n = self.value(*x).shape()[0];
                let f = self.value(*w).shape()[0];
                let mut dx = self.grad_buf(*x);
                let mut dw = self.grad_buf(*w);
                let mut db = self.grad_buf(*b);
                kernels::conv2d_backward(
                    self.nodes[x.0].value.data(),
                    n,
                    geom,
                    self.nodes[w.0].value.data(),
                    f,
                    dout,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                self.restore(*x, dx);
                self.restore(*w, dw);
                self.restore(*b, db);
            }
            Op::ConvTranspose2d { y, w, b, geom } => {
                let n = self.value(*y).shape()[0];
                let f = self.value(*w).shape()[0];
                let mut dy = self.grad_buf(*y);
                let mut dw = self.grad_buf(*w);
                let mut db = self.grad_buf(*b);
                kernels::conv_transpose2d_backward(
                    self.nodes[y.0].value.data(),
                    n,
                    geom,
                    self.nodes[w.0].value.data(),
                    f,
                    dout,
                    dy.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                self.restore(*y, dy);
                self.restore(*w, dw);
                self.restore(*b, db);
            }
            Op::MaxPool { x, argmax } => {
                let (n, c, h, w) = dims4(self.value(*x).shape(), "maxpool")?;
                accumulate(&mut self.grads, &self.nodes, *x, |g| kernels::maxpool2x2_backward(dout, argmax, n * c, h, w, g));
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch } => {
                let (n, c, h, w) = dims4(self.value(*x).shape(), "batchnorm")?;
                let hw = h * w;
                let m = (n * hw) as f64;
                let mut sum_dy = vec![0.0f64; c];
                let mut sum_dy_xhat = vec![0.0f64; c];
                for s in 0..n {
                    for ch in 0..c {
                        let base = (s * c + ch) * hw;
                        let mut a = 0.0;
                        let mut bsum = 0.0;
                        for j in base..base + hw {
                            let d = dout[j].as_f64();
                            a += d;
                            bsum += d * xhat[j].as_f64();
                        }
                        sum_dy[ch] += a;
                        sum_dy_xhat[ch] += bsum;
                    }
                }
                accumulate(&mut self.grads, &self.nodes, *beta, |g| {
                    for ch in 0..c {
                        g[ch] += T::lit(sum_dy[ch]);
                    }
                });
                accumulate(&mut self.grads, &self.nodes, *gamma, |g| {
                    for ch in 0..c {
                        g[ch] += T::lit(sum_dy_xhat[ch]);
                    }
                });
                let gam = self.nodes[gamma.0].value.data();
                let batch = *batch;
                accumulate(&mut self.grads, &self.nodes, *x, |g| {
                    for s in 0..n {
                        for ch in 0..c {
                            let base = (s * c + ch) * hw;
                            let scale = gam[ch] * inv_std[ch];
                            if batch {
                                let mean_dy = T::lit(sum_dy[ch] / m);
                                let mean_dy_xhat = T::lit(sum_dy_xhat[ch] / m);
                                for j in base..base + hw {
                                    g[j] += scale * (dout[j] - mean_dy - xhat[j] * mean_dy_xhat);
                                }
                            } else {
                                for j in base..base + hw {
                                    g[j] += scale * dout[j];
                                }
                            }
                        }
                    }
                });
            }
            Op::LeakyRelu { x, slope } => {
                let slope = *slope;
                let src = self.nodes[x.0].value.data();
                accumulate(&mut self.grads, &self.nodes, *x, |g| {
                    for ((gv, &xv), &d) in g.iter_mut().zip(src).zip(dout) {
                        *gv += if xv >= T::zero() { d } else { slope * d };
                    }
                });
            }
            Op::Interpolate { x, rows, cols } => {
                let (n, c, h, w) = dims4(self.value(*x).shape(), "interpolate")?;
                accumulate(&mut self.grads, &self.nodes, *x, |g| {
                    kernels::interpolate_backward(dout, n * c, (h, w), rows, cols, g)
                });
            }
            Op::Linear { x, w, b } => {
                let (n, d) = dims2(self.value(*x).shape(), "linear")?;
                let k = self.value(*w).shape()[0];
                let mut dx = self.grad_buf(*x);
                let mut dw = self.grad_buf(*w);
                if let Some(dx) = dx.as_deref_mut() {
                    matmul(n, k, d, dout, Layout::Normal, self.nodes[w.0].value.data(), Layout::Normal, dx, true);
                }
                if let Some(dw) = dw.as_deref_mut() {
                    matmul(k, n, d, dout, Layout::Transposed, self.nodes[x.0].value.data(), Layout::Normal, dw, true);
                }
                self.restore(*x, dx);
                self.restore(*w, dw);
                accumulate(&mut self.grads, &self.nodes, *b, |g| {
                    for row in dout.chunks(k) {
                        for (gv, &dv) in g.iter_mut().zip(row) {
                            *gv += dv;
                        }
                    }
                });
            }
            Op::Dropout { x, mask } => {
                accumulate(&mut self.grads, &self.nodes, *x, |g| {
                    for ((gv, &m), &d) in g.iter_mut().zip(mask).zip(dout) {
                        *gv += m * d;
                    }
                });
            }
            Op::Reshape { x } => {
                accumulate(&mut self.grads, &self.nodes, *x, |g| {
                    for (gv, &d) in g.iter_mut().zip(dout) {
                        *gv += d;
                    }
                });
            }
            Op::SoftmaxCrossEntropy { logits, targets, probs } => {
                let n = targets.len();
                let k = probs.len() / n;
                let scale = dout[0] / T::lit(n as f64);
                accumulate(&mut self.grads, &self.nodes, *logits, |g| {
                    for (r, &t) in targets.iter().enumerate() {
                        for j in 0..k {
                            let y = if j == t { T::one() } else { T::zero() };
                            g[r * k + j] += scale * (probs[r * k + j] - y);
                        }
                    }
                });
            }
            Op::Mse { pred, target } => {
                let n = target.len();
                let scale = dout[0] * T::lit(2.0 / n as f64);
                let p = self.nodes[pred.0].value.data();
                accumulate(&mut self.grads, &self.nodes, *pred, |g| {
                    for ((gv, &pv), &tv) in g.iter_mut().zip(p).zip(target) {
                        *gv += scale * (pv - tv);
                    }
                });
            }
            Op::Sum { x } => {
                let d = dout[0];
                accumulate(&mut self.grads, &self.nodes, *x, |g| g.iter_mut().for_each(|v| *v += d));
            }
            Op::WeightedSum { terms } => {
                for &(v, w) in terms {
                    let d = dout[0] * w;
                    accumulate(&mut self.grads, &self.nodes, v, |g| g[0] += d);
                }
            }
        }
        Ok(())
    }
}

fn accumulate<T: Scalar>(
    grads: &mut [Option<Vec<T>>],
    nodes: &[Node<T>],
    v: Var,
    f: impl FnOnce(&mut [T]),
) {
    if !nodes[v.0].needs_grad {
        return;
    }
    let len = nodes[v.0].value.len();
    f(grads[v.0].get_or_insert_with(|| vec![T::zero(); len]));
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<T: Scalar>(z: &[T], n: usize, k: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(n * k);
    for row in z.chunks(k).take(n) {
        let m = row.iter().fold(f64::NEG_INFINITY, |a, v| a.max(v.as_f64()));
        let exps: Vec<f64> = row.iter().map(|v| (v.as_f64() - m).exp()).collect();
        let total: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| T::lit(e / total)));
    }
    out
}
