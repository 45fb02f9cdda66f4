//! Reverse-mode differentiation over a linear tape.
//!
//! Every operation appends a node holding its value plus whatever the backward rule needs.
//! `backward` walks the nodes once, newest first, and accumulates gradients into leaves.

use crate::error::{invalid, Result, TensorError};
use crate::tensor::{Real, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Pointwise nonlinearities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Sigmoid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub padding: usize,
}

impl Conv2dSpec {
    pub fn same() -> Self {
        Self { stride: 1, padding: 1 }
    }
}

/// Per-channel batch statistics from a training-mode normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Biased variance, as used for the normalization itself.
    pub var: Vec<T>,
}

struct ConvGeom {
    n: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    h_out: usize,
    w_out: usize,
    stride: usize,
    padding: usize,
}

impl ConvGeom {
    fn patch_len(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn out_len(&self) -> usize {
        self.h_out * self.w_out
    }
}

enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        geom: ConvGeom,
        /// im2col buffers for all samples, kept only when the kernel needs a gradient.
        cols: Option<Vec<T>>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, T),
    MulScalar {
        input: Var,
        scalar: Var,
    },
    Exp(Var),
    Activation {
        input: Var,
        kind: Activation,
    },
    BatchNormTrain {
        input: Var,
        scale: Var,
        shift: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    BatchNormEval {
        input: Var,
        scale: Var,
        shift: Var,
        mean: Vec<T>,
        inv_std: Vec<T>,
    },
    GlobalAvgPool(Var),
    Dense {
        input: Var,
        weight: Var,
        bias: Var,
    },
    LogClamped {
        input: Var,
        eps: T,
        complement: bool,
    },
    Sum(Var),
    SumSquares(Var),
    Reshape(Var),
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d {
                input, kernel, bias, ..
            } => vec![*input, *kernel, *bias],
            Op::Add(a, b) | Op::Sub(a, b) => vec![*a, *b],
            Op::MulScalar { input, scalar } => vec![*input, *scalar],
            Op::BatchNormTrain {
                input, scale, shift, ..
            }
            | Op::BatchNormEval {
                input, scale, shift, ..
            } => vec![*input, *scale, *shift],
            Op::Dense { input, weight, bias } => vec![*input, *weight, *bias],
            Op::Scale(a, _) | Op::Exp(a) | Op::GlobalAvgPool(a) | Op::Sum(a) | Op::SumSquares(a) | Op::Reshape(a) => {
                vec![*a]
            }
            Op::Activation { input, .. } | Op::LogClamped { input, .. } => vec![*input],
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    visited: Vec<usize>,
}

impl<T: Real> Gradients<T> {
    /// Gradient with respect to `var`, if one reached it.
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    /// Gradient with respect to a leaf; zeros for leaves the loss does not depend on.
    pub fn take(&mut self, var: Var, tape: &Tape<T>) -> Tensor<T> {
        self.grads[var.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(tape.value(var).shape()))
    }

    /// Node indices in the order the backward pass visited them.
    pub fn visit_order(&self) -> &[usize] {
        &self.visited
    }
}

/// Record of operations for one forward pass. Confined to one thread at a time.
#[derive(Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

fn ensure_same(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(TensorError::ShapeMismatch {
            op,
            expected: a.to_vec(),
            got: b.to_vec(),
        });
    }
    Ok(())
}

fn im2col<T: Real>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let howo = g.out_len();
    for ci in 0..g.c_in {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * howo..(row + 1) * howo];
                for oy in 0..g.h_out {
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    let line = &mut dst[oy * g.w_out..(oy + 1) * g.w_out];
                    if iy < 0 || iy >= g.h as isize {
                        line.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.padding as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let howo = g.out_len();
    for ci in 0..g.c_in {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let src = &cols[row * howo..(row + 1) * howo];
                for oy in 0..g.h_out {
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for ox in 0..g.w_out {
                        let ix = (ox * g.stride + kj) as isize - g.padding as isize;
                        if ix >= 0 && ix < g.w as isize {
                            plane[iy as usize * g.w + ix as usize] =
                                plane[iy as usize * g.w + ix as usize] + src[oy * g.w_out + ox];
                        }
                    }
                }
            }
        }
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn needs_grad(&self, var: Var) -> bool {
        self.nodes[var.0].needs_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let needs_grad = op.inputs().iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf: receives a gradient.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant leaf: gradients stop here.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<T>, trainable: bool) -> Var {
        if trainable {
            self.param(value)
        } else {
            self.constant(value)
        }
    }

    /// 2D cross-correlation (no kernel flip) with zero padding.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, spec: Conv2dSpec) -> Result<Var> {
        let xs = self.value(input).shape();
        let ks = self.value(kernel).shape();
        let bs = self.value(bias).shape();
        if xs.len() != 4 {
            return invalid(format!("conv2d: input must be [N,C,H,W], got {xs:?}"));
        }
        if ks.len() != 4 {
            return invalid(format!("conv2d: kernel must be [Co,Ci,kH,kW], got {ks:?}"));
        }
        if spec.stride == 0 {
            return invalid("conv2d: stride must be positive");
        }
        if ks[1] != xs[1] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d input channels",
                expected: vec![ks[1]],
                got: vec![xs[1]],
            });
        }
        ensure_same("conv2d bias", &[ks[0]], bs)?;
        let (hp, wp) = (xs[2] + 2 * spec.padding, xs[3] + 2 * spec.padding);
        if ks[2] > hp || ks[3] > wp {
            return invalid(format!(
                "conv2d: kernel {}x{} larger than padded input {hp}x{wp}",
                ks[2], ks[3]
            ));
        }
        let geom = ConvGeom {
            n: xs[0],
            c_in: xs[1],
            h: xs[2],
            w: xs[3],
            c_out: ks[0],
            kh: ks[2],
            kw: ks[3],
            h_out: (hp - ks[2]) / spec.stride + 1,
            w_out: (wp - ks[3]) / spec.stride + 1,
            stride: spec.stride,
            padding: spec.padding,
        };
        let keep_cols = self.needs_grad(kernel);
        let (plen, howo) = (geom.patch_len(), geom.out_len());
        let x = self.value(input).data();
        let k = self.value(kernel).data();
        let b = self.value(bias).data();
        let sample_in = geom.c_in * geom.h * geom.w;
        let sample_out = geom.c_out * howo;
        let mut out = vec![T::zero(); geom.n * sample_out];
        let mut all_cols = if keep_cols {
            vec![T::zero(); geom.n * plen * howo]
        } else {
            Vec::new()
        };
        let mut scratch = vec![T::zero(); if keep_cols { 0 } else { plen * howo }];
        for s in 0..geom.n {
            let cols: &mut [T] = if keep_cols {
                &mut all_cols[s * plen * howo..(s + 1) * plen * howo]
            } else {
                &mut scratch
            };
            im2col(&x[s * sample_in..(s + 1) * sample_in], &geom, cols);
            let o = &mut out[s * sample_out..(s + 1) * sample_out];
            for (co, row) in o.chunks_mut(howo).enumerate() {
                row.iter_mut().for_each(|v| *v = b[co]);
            }
            T::gemm(geom.c_out, plen, howo, k, false, cols, false, o, true);
        }
        let value = Tensor::new([geom.n, geom.c_out, geom.h_out, geom.w_out], out)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
                cols: keep_cols.then_some(all_cols),
            },
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), "add", |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), "sub", |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    /// Multiply by a compile-time constant.
    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let v = self.value(a).map(|x| x * c);
        self.push(v, Op::Scale(a, c))
    }

    /// Multiply every element of `a` by the single value held in `scalar`.
    pub fn mul_scalar(&mut self, a: Var, scalar: Var) -> Result<Var> {
        let s = self.value(scalar).item()?;
        let v = self.value(a).map(|x| x * s);
        Ok(self.push(v, Op::MulScalar { input: a, scalar }))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.exp());
        self.push(v, Op::Exp(a))
    }

    pub fn activation(&mut self, input: Var, kind: Activation) -> Result<Var> {
        let x = self.value(input);
        if !x.is_finite() {
            return Err(TensorError::NonFinite("activation input"));
        }
        let v = match kind {
            Activation::Relu => x.map(|v| if v > T::zero() { v } else { T::zero() }),
            Activation::LeakyRelu(slope) => {
                if !(slope > 0.0 && slope < 1.0) {
                    return invalid(format!("leaky_relu slope {slope} outside (0,1)"));
                }
                let s = T::from_f64_lossy(slope);
                x.map(|v| if v > T::zero() { v } else { v * s })
            }
            Activation::Sigmoid => x.map(sigmoid),
        };
        Ok(self.push(v, Op::Activation { input, kind }))
    }

    fn bn_shapes(&self, input: Var, scale: Var, shift: Var) -> Result<(usize, usize, usize)> {
        let xs = self.value(input).shape();
        if xs.len() != 4 {
            return invalid(format!("batch_norm: input must be [N,C,H,W], got {xs:?}"));
        }
        ensure_same("batch_norm scale", &[xs[1]], self.value(scale).shape())?;
        ensure_same("batch_norm shift", &[xs[1]], self.value(shift).shape())?;
        Ok((xs[0], xs[1], xs[2] * xs[3]))
    }

    /// Training-mode normalization by batch statistics. Returns the statistics so the caller
    /// can update its running averages.
    pub fn batch_norm_train(&mut self, input: Var, scale: Var, shift: Var, eps: T) -> Result<(Var, BatchStats<T>)> {
        let (n, c, hw) = self.bn_shapes(input, scale, shift)?;
        let m = n * hw;
        if m < 2 {
            return invalid("batch_norm: training mode needs at least two values per channel");
        }
        let x = self.value(input).data();
        let g = self.value(scale).data();
        let b = self.value(shift).data();
        let mf = T::from_usize(m).unwrap();
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for ch in 0..c {
            let vals = || (0..n).flat_map(move |s| x[(s * c + ch) * hw..(s * c + ch + 1) * hw].iter());
            let mu = vals().copied().sum::<T>() / mf;
            let v = vals().map(|&v| (v - mu) * (v - mu)).sum::<T>() / mf;
            mean[ch] = mu;
            var[ch] = v;
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = vec![T::zero(); x.len()];
        let mut out = vec![T::zero(); x.len()];
        for s in 0..n {
            for ch in 0..c {
                let base = (s * c + ch) * hw;
                for i in base..base + hw {
                    xhat[i] = (x[i] - mean[ch]) * inv_std[ch];
                    out[i] = g[ch] * xhat[i] + b[ch];
                }
            }
        }
        let value = Tensor::new(self.value(input).shape().to_vec(), out)?;
        let var_out = self.push(
            value,
            Op::BatchNormTrain {
                input,
                scale,
                shift,
                xhat,
                inv_std,
            },
        );
        Ok((var_out, BatchStats { mean, var }))
    }

    /// Inference-mode normalization with fixed running statistics.
    pub fn batch_norm_eval(
        &mut self,
        input: Var,
        scale: Var,
        shift: Var,
        running: &BatchStats<T>,
        eps: T,
    ) -> Result<Var> {
        let (n, c, hw) = self.bn_shapes(input, scale, shift)?;
        if running.mean.len() != c || running.var.len() != c {
            return invalid("batch_norm: running statistics do not match channel count");
        }
        let x = self.value(input).data();
        let g = self.value(scale).data();
        let b = self.value(shift).data();
        let inv_std: Vec<T> = running.var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut out = vec![T::zero(); x.len()];
        for s in 0..n {
            for ch in 0..c {
                let base = (s * c + ch) * hw;
                for i in base..base + hw {
                    out[i] = g[ch] * (x[i] - running.mean[ch]) * inv_std[ch] + b[ch];
                }
            }
        }
        let value = Tensor::new(self.value(input).shape().to_vec(), out)?;
        Ok(self.push(
            value,
            Op::BatchNormEval {
                input,
                scale,
                shift,
                mean: running.mean.clone(),
                inv_std,
            },
        ))
    }

    /// `[N,C,H,W] → [N,C]` spatial mean.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let xs = self.value(input).shape();
        if xs.len() != 4 {
            return invalid(format!("global_avg_pool: expected [N,C,H,W], got {xs:?}"));
        }
        let (n, c, hw) = (xs[0], xs[1], xs[2] * xs[3]);
        let inv = T::one() / T::from_usize(hw).unwrap();
        let out: Vec<T> = self
            .value(input)
            .data()
            .chunks(hw)
            .map(|p| p.iter().copied().sum::<T>() * inv)
            .collect();
        let value = Tensor::new([n, c], out)?;
        Ok(self.push(value, Op::GlobalAvgPool(input)))
    }

    /// `[N,F] · [O,F]ᵀ + [O] → [N,O]`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let xs = self.value(input).shape();
        let ws = self.value(weight).shape();
        if xs.len() != 2 || ws.len() != 2 {
            return invalid(format!("dense: expected [N,F] and [O,F], got {xs:?} and {ws:?}"));
        }
        if xs[1] != ws[1] {
            return Err(TensorError::ShapeMismatch {
                op: "dense features",
                expected: vec![ws[1]],
                got: vec![xs[1]],
            });
        }
        ensure_same("dense bias", &[ws[0]], self.value(bias).shape())?;
        let (n, f, o) = (xs[0], xs[1], ws[0]);
        let b = self.value(bias).data();
        let mut out: Vec<T> = (0..n).flat_map(|_| b.iter().copied()).collect();
        T::gemm(
            n,
            f,
            o,
            self.value(input).data(),
            false,
            self.value(weight).data(),
            true,
            &mut out,
            true,
        );
        let value = Tensor::new([n, o], out)?;
        Ok(self.push(value, Op::Dense { input, weight, bias }))
    }

    /// `ln(clamp(p, eps, 1-eps))`, or `ln(1 - clamp(p, eps, 1-eps))` when `complement`.
    pub fn log_clamped(&mut self, input: Var, eps: T, complement: bool) -> Var {
        let hi = T::one() - eps;
        let v = self.value(input).map(|p| {
            let c = p.max(eps).min(hi);
            if complement {
                (T::one() - c).ln()
            } else {
                c.ln()
            }
        });
        self.push(v, Op::LogClamped { input, eps, complement })
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).data().iter().map(|&x| x * x).sum());
        self.push(v, Op::SumSquares(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).clone().reshape(shape.to_vec())?;
        Ok(self.push(v, Op::Reshape(a)))
    }

    /// Gradients of the single-element node `loss` with respect to every trainable leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(TensorError::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape().to_vec(), T::one()));
        let mut visited = Vec::with_capacity(loss.0 + 1);
        for idx in (0..=loss.0).rev() {
            visited.push(idx);
            let node = &self.nodes[idx];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backward_node(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        for (i, node) in self.nodes.iter().enumerate() {
            let keep = matches!(node.op, Op::Leaf) && node.needs_grad;
            if keep {
                if grads[i].is_none() {
                    grads[i] = Some(Tensor::zeros(node.value.shape()));
                }
            } else {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads, visited })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], var: Var, g: Tensor<T>) {
        if !self.nodes[var.0].needs_grad {
            return;
        }
        match &mut grads[var.0] {
            Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, &b)| *a = *a + b),
            slot @ None => *slot = Some(g),
        }
    }

    fn backward_node(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Scale(a, c) => {
                let c = *c;
                self.accumulate(grads, *a, g.map(|v| v * c));
            }
            Op::MulScalar { input, scalar } => {
                let s = self.value(*scalar).item()?;
                if self.needs_grad(*input) {
                    self.accumulate(grads, *input, g.map(|v| v * s));
                }
                if self.needs_grad(*scalar) {
                    let x = self.value(*input).data();
                    let ds: T = g.data().iter().zip(x).map(|(&a, &b)| a * b).sum();
                    let shape = self.value(*scalar).shape().to_vec();
                    self.accumulate(grads, *scalar, Tensor::new(shape, vec![ds])?);
                }
            }
            Op::Exp(a) => {
                let dx = g.zip_map(&node.value, "exp backward", |gv, y| gv * y)?;
                self.accumulate(grads, *a, dx);
            }
            Op::Activation { input, kind } => {
                let x = self.value(*input);
                let dx = match *kind {
                    Activation::Relu => {
                        g.zip_map(x, "relu backward", |gv, xv| if xv > T::zero() { gv } else { T::zero() })?
                    }
                    Activation::LeakyRelu(slope) => {
                        let s = T::from_f64_lossy(slope);
                        g.zip_map(
                            x,
                            "leaky_relu backward",
                            |gv, xv| {
                                if xv > T::zero() {
                                    gv
                                } else {
                                    gv * s
                                }
                            },
                        )?
                    }
                    Activation::Sigmoid => {
                        g.zip_map(&node.value, "sigmoid backward", |gv, y| gv * y * (T::one() - y))?
                    }
                };
                self.accumulate(grads, *input, dx);
            }
            Op::BatchNormTrain {
                input,
                scale,
                shift,
                xhat,
                inv_std,
            } => {
                let xs = self.value(*input).shape();
                let (n, c, hw) = (xs[0], xs[1], xs[2] * xs[3]);
                let gamma = self.value(*scale).data();
                let gd = g.data();
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for s in 0..n {
                    for ch in 0..c {
                        let base = (s * c + ch) * hw;
                        for i in base..base + hw {
                            dgamma[ch] = dgamma[ch] + gd[i] * xhat[i];
                            dbeta[ch] = dbeta[ch] + gd[i];
                        }
                    }
                }
                if self.needs_grad(*input) {
                    let m = T::from_usize(n * hw).unwrap();
                    let mut dx = vec![T::zero(); gd.len()];
                    for s in 0..n {
                        for ch in 0..c {
                            let base = (s * c + ch) * hw;
                            let k = gamma[ch] * inv_std[ch] / m;
                            for i in base..base + hw {
                                dx[i] = k * (m * gd[i] - dbeta[ch] - xhat[i] * dgamma[ch]);
                            }
                        }
                    }
                    self.accumulate(grads, *input, Tensor::new(xs.to_vec(), dx)?);
                }
                self.accumulate(grads, *scale, Tensor::new([c], dgamma)?);
                self.accumulate(grads, *shift, Tensor::new([c], dbeta)?);
            }
            Op::BatchNormEval {
                input,
                scale,
                shift,
                mean,
                inv_std,
            } => {
                let xs = self.value(*input).shape();
                let (n, c, hw) = (xs[0], xs[1], xs[2] * xs[3]);
                let gamma = self.value(*scale).data();
                let x = self.value(*input).data();
                let gd = g.data();
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                let mut dx = vec![T::zero(); gd.len()];
                for s in 0..n {
                    for ch in 0..c {
                        let base = (s * c + ch) * hw;
                        for i in base..base + hw {
                            dgamma[ch] = dgamma[ch] + gd[i] * (x[i] - mean[ch]) * inv_std[ch];
                            dbeta[ch] = dbeta[ch] + gd[i];
                            dx[i] = gd[i] * gamma[ch] * inv_std[ch];
                        }
                    }
                }
                self.accumulate(grads, *input, Tensor::new(xs.to_vec(), dx)?);
                self.accumulate(grads, *scale, Tensor::new([c], dgamma)?);
                self.accumulate(grads, *shift, Tensor::new([c], dbeta)?);
            }
            Op::GlobalAvgPool(a) => {
                let xs = self.value(*a).shape();
                let hw = xs[2] * xs[3];
                let inv = T::one() / T::from_usize(hw).unwrap();
                let dx: Vec<T> = g
                    .data()
                    .iter()
                    .flat_map(|&v| std::iter::repeat_n(v * inv, hw))
                    .collect();
                self.accumulate(grads, *a, Tensor::new(xs.to_vec(), dx)?);
            }
            Op::Dense { input, weight, bias } => {
                let xs = self.value(*input).shape();
                let ws = self.value(*weight).shape();
                let (n, f, o) = (xs[0], xs[1], ws[0]);
                if self.needs_grad(*input) {
                    let mut dx = vec![T::zero(); n * f];
                    T::gemm(
                        n,
                        o,
                        f,
                        g.data(),
                        false,
                        self.value(*weight).data(),
                        false,
                        &mut dx,
                        false,
                    );
                    self.accumulate(grads, *input, Tensor::new([n, f], dx)?);
                }
                if self.needs_grad(*weight) {
                    let mut dw = vec![T::zero(); o * f];
                    T::gemm(
                        o,
                        n,
                        f,
                        g.data(),
                        true,
                        self.value(*input).data(),
                        false,
                        &mut dw,
                        false,
                    );
                    self.accumulate(grads, *weight, Tensor::new([o, f], dw)?);
                }
                if self.needs_grad(*bias) {
                    let mut db = vec![T::zero(); o];
                    for row in g.data().chunks(o) {
                        db.iter_mut().zip(row).for_each(|(a, &b)| *a = *a + b);
                    }
                    self.accumulate(grads, *bias, Tensor::new([o], db)?);
                }
            }
            Op::LogClamped { input, eps, complement } => {
                let (lo, hi) = (*eps, T::one() - *eps);
                let dx = g.zip_map(self.value(*input), "log backward", |gv, p| {
                    if p < lo || p > hi {
                        T::zero()
                    } else if *complement {
                        -gv / (T::one() - p)
                    } else {
                        gv / p
                    }
                })?;
                self.accumulate(grads, *input, dx);
            }
            Op::Sum(a) => {
                let gv = g.item()?;
                let shape = self.value(*a).shape().to_vec();
                self.accumulate(grads, *a, Tensor::full(shape, gv));
            }
            Op::SumSquares(a) => {
                let two_g = g.item()? * T::from_f64_lossy(2.0);
                self.accumulate(grads, *a, self.value(*a).map(|x| two_g * x));
            }
            Op::Reshape(a) => {
                let shape = self.value(*a).shape().to_vec();
                self.accumulate(grads, *a, g.clone().reshape(shape)?);
            }
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
                cols,
            } => self.conv_backward(*input, *kernel, *bias, geom, cols.as_deref(), g, grads)?,
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_backward(
        &self,
        input: Var,
        kernel: Var,
        bias: Var,
        geom: &ConvGeom,
        cols: Option<&[T]>,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<()> {
        let (plen, howo) = (geom.patch_len(), geom.out_len());
        let sample_out = geom.c_out * howo;
        let gd = g.data();
        if self.needs_grad(bias) {
            let mut db = vec![T::zero(); geom.c_out];
            for s in 0..geom.n {
                for (co, acc) in db.iter_mut().enumerate() {
                    let row = &gd[s * sample_out + co * howo..s * sample_out + (co + 1) * howo];
                    *acc = *acc + row.iter().copied().sum::<T>();
                }
            }
            self.accumulate(grads, bias, Tensor::new([geom.c_out], db)?);
        }
        if self.needs_grad(kernel) {
            let cols = cols.expect("im2col buffers kept for kernels that need gradients");
            let mut dk = vec![T::zero(); geom.c_out * plen];
            for s in 0..geom.n {
                T::gemm(
                    geom.c_out,
                    howo,
                    plen,
                    &gd[s * sample_out..(s + 1) * sample_out],
                    false,
                    &cols[s * plen * howo..(s + 1) * plen * howo],
                    true,
                    &mut dk,
                    true,
                );
            }
            let shape = self.value(kernel).shape().to_vec();
            self.accumulate(grads, kernel, Tensor::new(shape, dk)?);
        }
        if self.needs_grad(input) {
            let k = self.value(kernel).data();
            let sample_in = geom.c_in * geom.h * geom.w;
            let mut dx = vec![T::zero(); geom.n * sample_in];
            let mut dcols = vec![T::zero(); plen * howo];
            for s in 0..geom.n {
                T::gemm(
                    plen,
                    geom.c_out,
                    howo,
                    k,
                    true,
                    &gd[s * sample_out..(s + 1) * sample_out],
                    false,
                    &mut dcols,
                    false,
                );
                col2im(&dcols, geom, &mut dx[s * sample_in..(s + 1) * sample_in]);
            }
            let shape = self.value(input).shape().to_vec();
            self.accumulate(grads, input, Tensor::new(shape, dx)?);
        }
        Ok(())
    }
}

pub(crate) fn sigmoid<T: Real>(v: T) -> T {
    // split by sign so exp never overflows
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}
