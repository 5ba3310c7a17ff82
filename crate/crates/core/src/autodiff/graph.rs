//! Reverse-mode differentiation over a per-forward-pass operation record.
//!
//! A [`Graph`] is built by one forward pass and consumed by one call to
//! [`Graph::backward`]. Nodes are appended in execution order, so walking
//! the record backwards is a valid reverse topological order and visits
//! each node once.

use super::kernels::{self, gemm, rm, tr, ConvGeom};
use super::tensor::Tensor;
use crate::error::{shape_err, Error, Result};

/// Handle to a value recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Exponential moving averages kept by a batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        geom: ConvGeom,
    },
    ConvTransposed {
        input: Var,
        kernel: Var,
        geom: ConvGeom,
    },
    Dense {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Act {
        input: Var,
        kind: Activation,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        mode: BnMode,
    },
    Concat {
        a: Var,
        b: Var,
    },
    Slice {
        input: Var,
        start: usize,
    },
    Reshape {
        input: Var,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale {
        input: Var,
        factor: f64,
    },
    AddScalar {
        input: Var,
    },
    Abs {
        input: Var,
    },
    Ln {
        input: Var,
    },
    Clamp {
        input: Var,
        lo: f64,
        hi: f64,
    },
    RowNorm {
        input: Var,
    },
    Sum {
        input: Var,
    },
    Mean {
        input: Var,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    consumed: bool,
}

fn dims4(t: &Tensor, what: &str) -> Result<(usize, usize, usize, usize)> {
    match *t.shape() {
        [n, c, h, w] => Ok((n, c, h, w)),
        ref s => Err(shape_err!("{what} must be [N,C,H,W], got {s:?}")),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

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

    /// 2-D convolution, kernel `[F, C, k, k]`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, pad: usize) -> Result<Var> {
        let (n, c, h, w) = dims4(self.value(input), "conv2d input")?;
        let (f, kc, kh, kw) = dims4(self.value(kernel), "conv2d kernel")?;
        if kc != c {
            return Err(shape_err!(
                "conv2d kernel expects {kc} input channels, input has {c}"
            ));
        }
        if kh != kw {
            return Err(shape_err!("conv2d kernel must be square, got {kh}x{kw}"));
        }
        if stride == 0 {
            return Err(shape_err!("conv2d stride must be >= 1"));
        }
        let k = kh;
        if k > h + 2 * pad || k > w + 2 * pad {
            return Err(shape_err!(
                "conv2d kernel {k} exceeds padded input {}x{}",
                h + 2 * pad,
                w + 2 * pad
            ));
        }
        if (h + 2 * pad - k) % stride != 0 || (w + 2 * pad - k) % stride != 0 {
            return Err(shape_err!(
                "conv2d output extent not exact: ({h}+2*{pad}-{k})/{stride}"
            ));
        }
        let geom = ConvGeom {
            channels: c,
            height: h,
            width: w,
            k,
            stride,
            pad,
            out_h: (h + 2 * pad - k) / stride + 1,
            out_w: (w + 2 * pad - k) / stride + 1,
        };
        let out = kernels::conv2d_forward(
            self.value(input).data(),
            self.value(kernel).data(),
            n,
            f,
            &geom,
        );
        let value = Tensor::new(vec![n, f, geom.out_h, geom.out_w], out)?;
        let rg = self.rg(&[input, kernel]);
        Ok(self.push(value, Op::Conv2d { input, kernel, geom }, rg))
    }

    /// Transposed convolution with a `[F, C, k, k]` kernel mapping `F`
    /// channels to `C`; the adjoint of [`Graph::conv2d`] with the same kernel.
    pub fn conv2d_transposed(
        &mut self,
        input: Var,
        kernel: Var,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (n, f, h, w) = dims4(self.value(input), "conv2d_transposed input")?;
        let (kf, c, kh, kw) = dims4(self.value(kernel), "conv2d_transposed kernel")?;
        if kf != f {
            return Err(shape_err!(
                "conv2d_transposed kernel expects {kf} input channels, input has {f}"
            ));
        }
        if kh != kw {
            return Err(shape_err!(
                "conv2d_transposed kernel must be square, got {kh}x{kw}"
            ));
        }
        if stride == 0 {
            return Err(shape_err!("conv2d_transposed stride must be >= 1"));
        }
        let k = kh;
        let full_h = (h - 1) * stride + k;
        let full_w = (w - 1) * stride + k;
        if full_h <= 2 * pad || full_w <= 2 * pad {
            return Err(shape_err!(
                "conv2d_transposed padding {pad} consumes the whole output"
            ));
        }
        let geom = ConvGeom {
            channels: c,
            height: full_h - 2 * pad,
            width: full_w - 2 * pad,
            k,
            stride,
            pad,
            out_h: h,
            out_w: w,
        };
        let out = kernels::conv_transposed_forward(
            self.value(input).data(),
            self.value(kernel).data(),
            n,
            f,
            &geom,
        );
        let value = Tensor::new(vec![n, c, geom.height, geom.width], out)?;
        let rg = self.rg(&[input, kernel]);
        Ok(self.push(value, Op::ConvTransposed { input, kernel, geom }, rg))
    }

    /// Affine map `input[N,D] * weight[D,M] + bias[M]`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (n, d) = match *self.shape(input) {
            [n, d] => (n, d),
            ref s => return Err(shape_err!("dense input must be [N,D], got {s:?}")),
        };
        let m = match *self.shape(weight) {
            [wd, m] if wd == d => m,
            ref s => {
                return Err(shape_err!(
                    "dense weight must be [{d},M], got {s:?}"
                ))
            }
        };
        if self.shape(bias) != [m] {
            return Err(shape_err!(
                "dense bias must be [{m}], got {:?}",
                self.shape(bias)
            ));
        }
        let mut out = Vec::with_capacity(n * m);
        for _ in 0..n {
            out.extend_from_slice(self.value(bias).data());
        }
        gemm(
            n,
            d,
            m,
            self.value(input).data(),
            rm(d),
            self.value(weight).data(),
            rm(m),
            1.0,
            &mut out,
            rm(m),
        );
        let value = Tensor::new(vec![n, m], out)?;
        let rg = self.rg(&[input, weight, bias]);
        Ok(self.push(value, Op::Dense { input, weight, bias }, rg))
    }

    pub fn activation(&mut self, input: Var, kind: Activation) -> Result<Var> {
        if let Activation::LeakyRelu(alpha) = kind {
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "leaky_relu slope must lie in (0,1), got {alpha}"
                )));
            }
        }
        let x = self.value(input);
        let data = x
            .data()
            .iter()
            .map(|&v| match kind {
                Activation::Relu => v.max(0.0),
                Activation::LeakyRelu(a) => {
                    if v > 0.0 {
                        v
                    } else {
                        a * v
                    }
                }
                Activation::Tanh => v.tanh(),
                Activation::Sigmoid => sigmoid(v),
            })
            .collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        let rg = self.rg(&[input]);
        Ok(self.push(value, Op::Act { input, kind }, rg))
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        self.activation(input, Activation::Relu)
    }

    pub fn tanh(&mut self, input: Var) -> Result<Var> {
        self.activation(input, Activation::Tanh)
    }

    pub fn sigmoid(&mut self, input: Var) -> Result<Var> {
        self.activation(input, Activation::Sigmoid)
    }

    /// Per-channel batch normalization over every axis except axis 1.
    ///
    /// Train mode normalizes with the batch statistics and folds them into
    /// `running`; eval mode normalizes with `running` and leaves it alone.
    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        mode: BnMode,
        running: &mut RunningStats,
    ) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        if shape.len() < 2 {
            return Err(shape_err!("batch_norm input needs [N,C,...], got {shape:?}"));
        }
        let (n, c) = (shape[0], shape[1]);
        let inner: usize = shape[2..].iter().product();
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(shape_err!(
                "batch_norm gamma/beta must be [{c}], got {:?} / {:?}",
                self.shape(gamma),
                self.shape(beta)
            ));
        }
        if running.mean.len() != c || running.var.len() != c {
            return Err(shape_err!(
                "batch_norm running stats hold {} channels, input has {c}",
                running.mean.len()
            ));
        }
        let x = self.value(input).data();
        let count = (n * inner) as f64;
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        match mode {
            BnMode::Train => {
                for b in 0..n {
                    for ch in 0..c {
                        let s = &x[(b * c + ch) * inner..][..inner];
                        mean[ch] += s.iter().sum::<f64>();
                    }
                }
                mean.iter_mut().for_each(|m| *m /= count);
                for b in 0..n {
                    for ch in 0..c {
                        let s = &x[(b * c + ch) * inner..][..inner];
                        var[ch] += s.iter().map(|v| (v - mean[ch]).powi(2)).sum::<f64>();
                    }
                }
                var.iter_mut().for_each(|v| *v /= count);
                let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
                for ch in 0..c {
                    running.mean[ch] =
                        (1.0 - BN_MOMENTUM) * running.mean[ch] + BN_MOMENTUM * mean[ch];
                    running.var[ch] =
                        (1.0 - BN_MOMENTUM) * running.var[ch] + BN_MOMENTUM * var[ch] * unbias;
                }
            }
            BnMode::Eval => {
                mean.copy_from_slice(&running.mean);
                var.copy_from_slice(&running.var);
            }
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = vec![0.0; x.len()];
        let mut out = vec![0.0; x.len()];
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * inner;
                for i in base..base + inner {
                    let h = (x[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = h;
                    out[i] = g[ch] * h + bt[ch];
                }
            }
        }
        let value = Tensor::new(shape, out)?;
        let rg = self.rg(&[input, gamma, beta]);
        Ok(self.push(
            value,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                mode,
            },
            rg,
        ))
    }

    /// Concatenates along axis 1 (channels for images, features for rows).
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() < 2 || sa.len() != sb.len() || sa[0] != sb[0] || sa[2..] != sb[2..] {
            return Err(shape_err!(
                "concat needs matching batch and trailing extents, got {sa:?} and {sb:?}"
            ));
        }
        let (n, ca, cb) = (sa[0], sa[1], sb[1]);
        let inner: usize = sa[2..].iter().product();
        let mut shape = sa.to_vec();
        shape[1] = ca + cb;
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(n * (ca + cb) * inner);
        for i in 0..n {
            out.extend_from_slice(&da[i * ca * inner..(i + 1) * ca * inner]);
            out.extend_from_slice(&db[i * cb * inner..(i + 1) * cb * inner]);
        }
        let value = Tensor::new(shape, out)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Concat { a, b }, rg))
    }

    /// Channel concatenation of two `[N,C,H,W]` maps.
    pub fn channel_concat(&mut self, a: Var, b: Var) -> Result<Var> {
        dims4(self.value(a), "channel_concat lhs")?;
        dims4(self.value(b), "channel_concat rhs")?;
        self.concat(a, b)
    }

    /// Takes `len` entries of axis 1 starting at `start`.
    pub fn slice_axis1(&mut self, input: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(input).to_vec();
        if s.len() < 2 || start + len > s[1] {
            return Err(shape_err!(
                "slice [{start}, {}) out of range for {s:?}",
                start + len
            ));
        }
        let inner: usize = s[2..].iter().product();
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(s[0] * len * inner);
        for i in 0..s[0] {
            let base = (i * s[1] + start) * inner;
            out.extend_from_slice(&x[base..base + len * inner]);
        }
        let mut shape = s;
        shape[1] = len;
        let value = Tensor::new(shape, out)?;
        let rg = self.rg(&[input]);
        Ok(self.push(value, Op::Slice { input, start }, rg))
    }

    pub fn reshape(&mut self, input: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(input).clone().reshaped(shape)?;
        let rg = self.rg(&[input]);
        Ok(self.push(value, Op::Reshape { input }, rg))
    }

    /// `[N, ...] -> [N, prod(...)]`
    pub fn flatten(&mut self, input: Var) -> Result<Var> {
        let s = self.shape(input);
        let n = s[0];
        let rest = s[1..].iter().product();
        self.reshape(input, vec![n, rest])
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err!(
                "{what} operands differ: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            ));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, op, rg))
    }

    fn map(&mut self, input: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let data = self.value(input).data().iter().map(|&x| f(x)).collect();
        let value = Tensor::new(self.shape(input).to_vec(), data)?;
        let rg = self.rg(&[input]);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        self.zip_with(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Result<Var> {
        self.map(input, Op::Scale { input, factor }, |x| x * factor)
    }

    pub fn add_scalar(&mut self, input: Var, c: f64) -> Result<Var> {
        self.map(input, Op::AddScalar { input }, |x| x + c)
    }

    pub fn abs(&mut self, input: Var) -> Result<Var> {
        self.map(input, Op::Abs { input }, f64::abs)
    }

    /// Natural log; every input must be strictly positive.
    pub fn ln(&mut self, input: Var) -> Result<Var> {
        if self.value(input).data().iter().any(|&v| v <= 0.0) {
            return Err(Error::NonFinite("ln of a non-positive value".into()));
        }
        self.map(input, Op::Ln { input }, f64::ln)
    }

    pub fn clamp(&mut self, input: Var, lo: f64, hi: f64) -> Result<Var> {
        self.map(input, Op::Clamp { input, lo, hi }, |x| x.clamp(lo, hi))
    }

    /// Euclidean norm of each row of an `[N, D]` tensor, giving `[N]`.
    pub fn row_norm(&mut self, input: Var) -> Result<Var> {
        let (n, d) = match *self.shape(input) {
            [n, d] => (n, d),
            ref s => return Err(shape_err!("row_norm needs [N,D], got {s:?}")),
        };
        let x = self.value(input).data();
        let data = (0..n)
            .map(|i| x[i * d..(i + 1) * d].iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let value = Tensor::new(vec![n], data)?;
        let rg = self.rg(&[input]);
        Ok(self.push(value, Op::RowNorm { input }, rg))
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(input).sum());
        let rg = self.rg(&[input]);
        Ok(self.push(value, Op::Sum { input }, rg))
    }

    pub fn mean(&mut self, input: Var) -> Result<Var> {
        let t = self.value(input);
        if t.is_empty() {
            return Err(shape_err!("mean of an empty tensor"));
        }
        let value = Tensor::scalar(t.sum() / t.len() as f64);
        let rg = self.rg(&[input]);
        Ok(self.push(value, Op::Mean { input }, rg))
    }

    /// Scalar value of a one-element node.
    pub fn item(&self, v: Var) -> f64 {
        self.value(v).data()[0]
    }

    /// Gradient of the last backward pass with respect to `v`, if any path
    /// from the loss reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn grad_or_zeros(&self, v: Var) -> Tensor {
        self.grad(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(self.shape(v)))
    }

    /// Fingerprint of which side of every non-smooth point each recorded
    /// non-smooth operator sits on. Finite-difference checks compare these to
    /// detect a probe that straddles a kink.
    pub fn kink_pattern(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match node.op {
                Op::Act { input, kind } if matches!(kind, Activation::Relu | Activation::LeakyRelu(_)) => {
                    out.extend(self.value(input).data().iter().map(|&v| (v > 0.0) as u8));
                }
                Op::Abs { input } => {
                    out.extend(self.value(input).data().iter().map(|&v| (v > 0.0) as u8));
                }
                Op::Clamp { input, lo, hi } => {
                    out.extend(
                        self.value(input)
                            .data()
                            .iter()
                            .map(|&v| if v < lo { 0 } else if v > hi { 2 } else { 1 }),
                    );
                }
                Op::RowNorm { .. } => {
                    out.extend(node.value.data().iter().map(|&v| (v > 0.0) as u8));
                }
                _ => {}
            }
        }
        out
    }

    /// Smallest distance of any input tracked by [`Graph::kink_pattern`] from
    /// its switching point; `f64::INFINITY` when nothing is tracked.
    pub fn kink_margin(&self) -> f64 {
        let mut m = f64::INFINITY;
        for node in &self.nodes {
            match node.op {
                Op::Act { input, kind } if matches!(kind, Activation::Relu | Activation::LeakyRelu(_)) => {
                    m = self.value(input).data().iter().fold(m, |m, v| m.min(v.abs()));
                }
                Op::Abs { input } => {
                    m = self.value(input).data().iter().fold(m, |m, v| m.min(v.abs()));
                }
                Op::Clamp { input, lo, hi } => {
                    m = self.value(input).data().iter().fold(m, |m, &v| m.min((v - lo).abs()).min((v - hi).abs()));
                }
                Op::RowNorm { .. } => {
                    m = node.value.data().iter().fold(m, |m, v| m.min(v.abs()));
                }
                _ => {}
            }
        }
        m
    }

    /// Reverse accumulation from a one-element `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::InvalidArgument(
                "graph already consumed by a backward pass".into(),
            ));
        }
        if self.value(loss).len() != 1 {
            return Err(shape_err!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            ));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(gout) = grads[i].take() else {
                continue;
            };
            self.backprop_node(i, &gout, &mut grads);
            grads[i] = Some(gout);
        }

        self.grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.map(|data| {
                    Tensor::new(self.nodes[i].value.shape().to_vec(), data)
                        .expect("gradient shape tracks value shape")
                })
            })
            .collect();
        Ok(())
    }

    fn backprop_node(&self, i: usize, gout: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let mut acc = |v: Var, g: Vec<f64>| match &mut grads[v.0] {
            Some(existing) => existing.iter_mut().zip(&g).for_each(|(e, x)| *e += x),
            slot @ None => *slot = Some(g),
        };
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { input, kernel, geom } => {
                let n = self.shape(*input)[0];
                let f = self.shape(*kernel)[0];
                let (dx, dk) = kernels::conv2d_backward(
                    self.value(*input).data(),
                    self.value(*kernel).data(),
                    gout,
                    n,
                    f,
                    geom,
                    needs(*input),
                    needs(*kernel),
                );
                if let Some(dx) = dx {
                    acc(*input, dx);
                }
                if let Some(dk) = dk {
                    acc(*kernel, dk);
                }
            }
            Op::ConvTransposed { input, kernel, geom } => {
                let n = self.shape(*input)[0];
                let f = self.shape(*kernel)[0];
                let (dy, dk) = kernels::conv_transposed_backward(
                    self.value(*input).data(),
                    self.value(*kernel).data(),
                    gout,
                    n,
                    f,
                    geom,
                    needs(*input),
                    needs(*kernel),
                );
                if let Some(dy) = dy {
                    acc(*input, dy);
                }
                if let Some(dk) = dk {
                    acc(*kernel, dk);
                }
            }
            Op::Dense { input, weight, bias } => {
                let (n, d) = (self.shape(*input)[0], self.shape(*input)[1]);
                let m = self.shape(*weight)[1];
                if needs(*input) {
                    let mut dx = vec![0.0; n * d];
                    gemm(n, m, d, gout, rm(m), self.value(*weight).data(), tr(m), 0.0, &mut dx, rm(d));
                    acc(*input, dx);
                }
                if needs(*weight) {
                    let mut dw = vec![0.0; d * m];
                    gemm(d, n, m, self.value(*input).data(), tr(d), gout, rm(m), 0.0, &mut dw, rm(m));
                    acc(*weight, dw);
                }
                if needs(*bias) {
                    let mut db = vec![0.0; m];
                    for row in gout.chunks_exact(m) {
                        db.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                    }
                    acc(*bias, db);
                }
            }
            Op::Act { input, kind } => {
                if needs(*input) {
                    let x = self.value(*input).data();
                    let y = node.value.data();
                    let dx = gout
                        .iter()
                        .zip(x.iter().zip(y))
                        .map(|(&g, (&xv, &yv))| {
                            g * match kind {
                                Activation::Relu => (xv > 0.0) as u8 as f64,
                                Activation::LeakyRelu(a) => {
                                    if xv > 0.0 {
                                        1.0
                                    } else {
                                        *a
                                    }
                                }
                                Activation::Tanh => 1.0 - yv * yv,
                                Activation::Sigmoid => yv * (1.0 - yv),
                            }
                        })
                        .collect();
                    acc(*input, dx);
                }
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                mode,
            } => {
                let s = self.shape(*input);
                let (n, c) = (s[0], s[1]);
                let inner: usize = s[2..].iter().product();
                let count = (n * inner) as f64;
                let mut sum_g = vec![0.0; c];
                let mut sum_gx = vec![0.0; c];
                for b in 0..n {
                    for ch in 0..c {
                        let base = (b * c + ch) * inner;
                        for j in base..base + inner {
                            sum_g[ch] += gout[j];
                            sum_gx[ch] += gout[j] * xhat[j];
                        }
                    }
                }
                if needs(*gamma) {
                    acc(*gamma, sum_gx.clone());
                }
                if needs(*beta) {
                    acc(*beta, sum_g.clone());
                }
                if needs(*input) {
                    let gm = self.value(*gamma).data();
                    let mut dx = vec![0.0; gout.len()];
                    for b in 0..n {
                        for ch in 0..c {
                            let base = (b * c + ch) * inner;
                            let scale = gm[ch] * inv_std[ch];
                            for j in base..base + inner {
                                dx[j] = match mode {
                                    BnMode::Train => {
                                        scale
                                            * (gout[j]
                                                - sum_g[ch] / count
                                                - xhat[j] * sum_gx[ch] / count)
                                    }
                                    BnMode::Eval => scale * gout[j],
                                };
                            }
                        }
                    }
                    acc(*input, dx);
                }
            }
            Op::Concat { a, b } => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let inner: usize = sa[2..].iter().product();
                let (ca, cb) = (sa[1] * inner, sb[1] * inner);
                let n = sa[0];
                if needs(*a) {
                    let mut da = Vec::with_capacity(n * ca);
                    for i in 0..n {
                        da.extend_from_slice(&gout[i * (ca + cb)..i * (ca + cb) + ca]);
                    }
                    acc(*a, da);
                }
                if needs(*b) {
                    let mut db = Vec::with_capacity(n * cb);
                    for i in 0..n {
                        db.extend_from_slice(&gout[i * (ca + cb) + ca..(i + 1) * (ca + cb)]);
                    }
                    acc(*b, db);
                }
            }
            Op::Slice { input, start } => {
                if needs(*input) {
                    let s = self.shape(*input);
                    let inner: usize = s[2..].iter().product();
                    let len = node.value.shape()[1];
                    let mut dx = vec![0.0; self.value(*input).len()];
                    for i in 0..s[0] {
                        let dst = (i * s[1] + start) * inner;
                        let src = i * len * inner;
                        dx[dst..dst + len * inner].copy_from_slice(&gout[src..src + len * inner]);
                    }
                    acc(*input, dx);
                }
            }
            Op::Reshape { input } => {
                if needs(*input) {
                    acc(*input, gout.to_vec());
                }
            }
            Op::Add(a, b) => {
                if needs(*a) {
                    acc(*a, gout.to_vec());
                }
                if needs(*b) {
                    acc(*b, gout.to_vec());
                }
            }
            Op::Sub(a, b) => {
                if needs(*a) {
                    acc(*a, gout.to_vec());
                }
                if needs(*b) {
                    acc(*b, gout.iter().map(|g| -g).collect());
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if needs(*a) {
                    acc(*a, gout.iter().zip(vb).map(|(g, y)| g * y).collect());
                }
                if needs(*b) {
                    acc(*b, gout.iter().zip(va).map(|(g, x)| g * x).collect());
                }
            }
            Op::Scale { input, factor } => {
                if needs(*input) {
                    acc(*input, gout.iter().map(|g| g * factor).collect());
                }
            }
            Op::AddScalar { input } => {
                if needs(*input) {
                    acc(*input, gout.to_vec());
                }
            }
            Op::Abs { input } => {
                if needs(*input) {
                    let x = self.value(*input).data();
                    acc(
                        *input,
                        gout.iter()
                            .zip(x)
                            .map(|(g, &v)| {
                                if v > 0.0 {
                                    *g
                                } else if v < 0.0 {
                                    -g
                                } else {
                                    0.0
                                }
                            })
                            .collect(),
                    );
                }
            }
            Op::Ln { input } => {
                if needs(*input) {
                    let x = self.value(*input).data();
                    acc(*input, gout.iter().zip(x).map(|(g, v)| g / v).collect());
                }
            }
            Op::Clamp { input, lo, hi } => {
                if needs(*input) {
                    let x = self.value(*input).data();
                    acc(
                        *input,
                        gout.iter()
                            .zip(x)
                            .map(|(g, &v)| if v < *lo || v > *hi { 0.0 } else { *g })
                            .collect(),
                    );
                }
            }
            Op::RowNorm { input } => {
                if needs(*input) {
                    let x = self.value(*input).data();
                    let norms = node.value.data();
                    let d = self.shape(*input)[1];
                    let mut dx = vec![0.0; x.len()];
                    for (row, (&nrm, &g)) in norms.iter().zip(gout).enumerate() {
                        if nrm > 0.0 {
                            for j in row * d..(row + 1) * d {
                                dx[j] = g * x[j] / nrm;
                            }
                        }
                    }
                    acc(*input, dx);
                }
            }
            Op::Sum { input } => {
                if needs(*input) {
                    acc(*input, vec![gout[0]; self.value(*input).len()]);
                }
            }
            Op::Mean { input } => {
                if needs(*input) {
                    let len = self.value(*input).len();
                    acc(*input, vec![gout[0] / len as f64; len]);
                }
            }
        }
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
