//! Residual denoising generator (applied Siamese-style), texture-difference discriminator and
//! the positive scale γ.

use rand::Rng;

use crate::autodiff::{Activation, BatchStats, Conv2dSpec, Tape, Var};
use crate::error::{invalid, Result, TensorError};
use crate::seeds::{rng_for, tag};
use crate::tensor::{Real, Tensor};

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;
const KERNEL: usize = 3;

fn fan_in_uniform<T: Real>(shape: [usize; 4], rng: &mut impl Rng) -> Tensor<T> {
    let fan_in = (shape[1] * shape[2] * shape[3]) as f64;
    let bound = (6.0 / fan_in).sqrt();
    Tensor::from_fn(shape, |_| T::from_f64_lossy(rng.random_range(-bound..bound)))
}

/// How normalization layers behave during a forward pass.
pub enum NormMode<'a, T> {
    /// Use running statistics.
    Eval,
    /// Use batch statistics and collect them, one entry per normalization layer.
    Train(&'a mut Vec<BatchStats<T>>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorConfig {
    /// Number of convolution layers, at least 2.
    pub depth: usize,
    pub channels: usize,
    pub batch_norm: bool,
    /// Offset-HU per network unit; the residual network sees `y / input_scale`.
    pub input_scale: f64,
}

impl GeneratorConfig {
    pub fn desk() -> Self {
        Self {
            depth: 7,
            channels: 32,
            batch_norm: false,
            input_scale: 100.0,
        }
    }

    pub fn paper_scale() -> Self {
        Self {
            depth: 17,
            channels: 64,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 {
            return invalid(format!("generator depth must be at least 2, got {}", self.depth));
        }
        if self.channels == 0 {
            return invalid("generator channels must be positive");
        }
        if !(self.input_scale > 0.0) {
            return invalid("generator input_scale must be positive");
        }
        Ok(())
    }

    fn layer_shapes(&self) -> Vec<[usize; 4]> {
        let c = self.channels;
        let mut shapes = vec![[c, 1, KERNEL, KERNEL]];
        shapes.extend(std::iter::repeat_n([c, c, KERNEL, KERNEL], self.depth - 2));
        shapes.push([1, c, KERNEL, KERNEL]);
        shapes
    }

    fn has_norm(&self, layer: usize) -> bool {
        self.batch_norm && layer > 0 && layer + 1 < self.depth
    }

    /// Trainable parameter count.
    pub fn param_count(&self) -> usize {
        self.layer_shapes()
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let conv = s.iter().product::<usize>() + s[0];
                conv + if self.has_norm(i) { 2 * s[0] } else { 0 }
            })
            .sum()
    }

    /// Pixels on each side whose output depends on zero padding.
    pub fn receptive_radius(&self) -> usize {
        self.depth * (KERNEL / 2)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormParams<T> {
    pub scale: Tensor<T>,
    pub shift: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenLayer<T> {
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
    pub norm: Option<NormParams<T>>,
}

/// One parameter store; both Siamese branches read it.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator<T> {
    pub config: GeneratorConfig,
    pub layers: Vec<GenLayer<T>>,
}

#[derive(Clone, Debug)]
pub struct GenLayerVars {
    kernel: Var,
    bias: Var,
    norm: Option<(Var, Var)>,
}

/// Tape handles for a bound generator.
#[derive(Clone, Debug)]
pub struct GeneratorVars {
    layers: Vec<GenLayerVars>,
}

impl GeneratorVars {
    /// Trainable handles in [`Generator::params`] order.
    pub fn params(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(l.kernel);
            out.push(l.bias);
            if let Some((s, b)) = l.norm {
                out.push(s);
                out.push(b);
            }
        }
        out
    }
}

impl<T: Real> Generator<T> {
    /// Fan-in uniform kernels, zero biases, zero final layer (so the network starts as identity).
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_for(seed, &[tag::INIT_GEN]);
        let shapes = config.layer_shapes();
        let last = shapes.len() - 1;
        let layers = shapes
            .iter()
            .enumerate()
            .map(|(i, &s)| GenLayer {
                kernel: if i == last {
                    Tensor::zeros(s)
                } else {
                    fan_in_uniform(s, &mut rng)
                },
                bias: Tensor::zeros([s[0]]),
                norm: config.has_norm(i).then(|| NormParams {
                    scale: Tensor::full([s[0]], T::one()),
                    shift: Tensor::zeros([s[0]]),
                    running_mean: Tensor::zeros([s[0]]),
                    running_var: Tensor::full([s[0]], T::one()),
                }),
            })
            .collect();
        Ok(Self { config, layers })
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(&l.kernel);
            out.push(&l.bias);
            if let Some(n) = &l.norm {
                out.push(&n.scale);
                out.push(&n.shift);
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(&mut l.kernel);
            out.push(&mut l.bias);
            if let Some(n) = &mut l.norm {
                out.push(&mut n.scale);
                out.push(&mut n.shift);
            }
        }
        out
    }

    /// Trainable parameters followed by normalization running statistics.
    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut out = self.params();
        for n in self.layers.iter().filter_map(|l| l.norm.as_ref()) {
            out.push(&n.running_mean);
            out.push(&n.running_var);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        let mut running = Vec::new();
        for l in &mut self.layers {
            out.push(&mut l.kernel);
            out.push(&mut l.bias);
            if let Some(n) = &mut l.norm {
                out.push(&mut n.scale);
                out.push(&mut n.shift);
                running.push(&mut n.running_mean);
                running.push(&mut n.running_var);
            }
        }
        out.extend(running);
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> Generator<U> {
        Generator {
            config: self.config.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| GenLayer {
                    kernel: l.kernel.cast(),
                    bias: l.bias.cast(),
                    norm: l.norm.as_ref().map(|n| NormParams {
                        scale: n.scale.cast(),
                        shift: n.shift.cast(),
                        running_mean: n.running_mean.cast(),
                        running_var: n.running_var.cast(),
                    }),
                })
                .collect(),
        }
    }

    /// Place the parameters on `tape`, as trainable leaves or as constants.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> GeneratorVars {
        GeneratorVars {
            layers: self
                .layers
                .iter()
                .map(|l| GenLayerVars {
                    kernel: tape.leaf(l.kernel.clone(), trainable),
                    bias: tape.leaf(l.bias.clone(), trainable),
                    norm: l.norm.as_ref().map(|n| {
                        (
                            tape.leaf(n.scale.clone(), trainable),
                            tape.leaf(n.shift.clone(), trainable),
                        )
                    }),
                })
                .collect(),
        }
    }

    /// `x̂ = y − s·R(y/s)` for input `[N,1,H,W]`.
    pub fn forward(&self, tape: &mut Tape<T>, vars: &GeneratorVars, y: Var, mut mode: NormMode<'_, T>) -> Result<Var> {
        let shape = tape.value(y).shape().to_vec();
        if shape.len() != 4 {
            return invalid(format!("generator input must be [N,1,H,W], got {shape:?}"));
        }
        if shape[1] != 1 {
            return invalid(format!("generator expects a single input channel, got {}", shape[1]));
        }
        let scale = self.config.input_scale;
        let mut h = tape.scale(y, T::from_f64_lossy(1.0 / scale));
        let last = vars.layers.len() - 1;
        let eps = T::from_f64_lossy(BN_EPS);
        for (i, (lv, layer)) in vars.layers.iter().zip(&self.layers).enumerate() {
            h = tape.conv2d(h, lv.kernel, lv.bias, Conv2dSpec::same())?;
            if i == last {
                break;
            }
            if let (Some((s, b)), Some(np)) = (lv.norm, &layer.norm) {
                h = match &mut mode {
                    NormMode::Train(stats) => {
                        let (out, st) = tape.batch_norm_train(h, s, b, eps)?;
                        stats.push(st);
                        out
                    }
                    NormMode::Eval => {
                        let running = BatchStats {
                            mean: np.running_mean.data().to_vec(),
                            var: np.running_var.data().to_vec(),
                        };
                        tape.batch_norm_eval(h, s, b, &running, eps)?
                    }
                };
            }
            h = tape.activation(h, Activation::Relu)?;
        }
        let residual = tape.scale(h, T::from_f64_lossy(scale));
        tape.sub(y, residual)
    }

    /// Fold batch statistics from a training-mode pass into the running averages.
    pub fn update_running_stats(&mut self, stats: &[BatchStats<T>]) -> Result<()> {
        let m = T::from_f64_lossy(BN_MOMENTUM);
        let one = T::one();
        let mut it = stats.iter();
        for n in self.layers.iter_mut().filter_map(|l| l.norm.as_mut()) {
            let st = it
                .next()
                .ok_or_else(|| TensorError::Invalid("missing batch statistics".into()))?;
            for (r, &b) in n.running_mean.data_mut().iter_mut().zip(&st.mean) {
                *r = (one - m) * *r + m * b;
            }
            for (r, &b) in n.running_var.data_mut().iter_mut().zip(&st.var) {
                *r = (one - m) * *r + m * b;
            }
        }
        Ok(())
    }

    /// Inference on a whole `[N,1,H,W]` batch with running statistics.
    pub fn apply(&self, y: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let yv = tape.constant(y.clone());
        let out = self.forward(&mut tape, &vars, yv, NormMode::Eval)?;
        Ok(tape.value(out).clone())
    }
}

/// Both branches through one parameter set; gradients from both accumulate in the same leaves.
pub fn siamese_forward<T: Real>(
    generator: &Generator<T>,
    tape: &mut Tape<T>,
    vars: &GeneratorVars,
    y1: Var,
    y2: Var,
    stats: Option<&mut Vec<BatchStats<T>>>,
) -> Result<(Var, Var)> {
    let (s1, s2) = (tape.value(y1).shape(), tape.value(y2).shape());
    if s1 != s2 {
        return Err(TensorError::ShapeMismatch {
            op: "siamese branches",
            expected: s1.to_vec(),
            got: s2.to_vec(),
        });
    }
    match stats {
        Some(st) => {
            let a = generator.forward(tape, vars, y1, NormMode::Train(st))?;
            let b = generator.forward(tape, vars, y2, NormMode::Train(st))?;
            Ok((a, b))
        }
        None => {
            let a = generator.forward(tape, vars, y1, NormMode::Eval)?;
            let b = generator.forward(tape, vars, y2, NormMode::Eval)?;
            Ok((a, b))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorConfig {
    /// Output channels of the four stride-2 blocks.
    pub widths: [usize; 4],
    pub slope: f64,
    /// Offset-HU per network unit for the incoming texture differences.
    pub input_scale: f64,
}

impl DiscriminatorConfig {
    pub const BASE_WIDTHS: [usize; 4] = [32, 64, 128, 256];

    pub fn scaled(multiplier: f64) -> Self {
        Self {
            widths: Self::BASE_WIDTHS.map(|w| ((w as f64 * multiplier).round() as usize).max(1)),
            slope: 0.2,
            input_scale: 100.0,
        }
    }

    /// The width multiplier whose parameter count lies closest (in ratio) to `target`.
    pub fn matched_to(target: usize) -> Self {
        let mut best = Self::scaled(1.0);
        let mut best_gap = f64::INFINITY;
        for step in 1..=800 {
            let cand = Self::scaled(step as f64 * 0.005);
            let gap = (cand.param_count() as f64 / target as f64).ln().abs();
            if gap < best_gap {
                best_gap = gap;
                best = cand;
            }
        }
        best
    }

    pub fn param_count(&self) -> usize {
        let mut c_in = 1;
        let mut total = 0;
        for &w in &self.widths {
            total += w * c_in * KERNEL * KERNEL + w;
            c_in = w;
        }
        total + c_in + 1
    }
}

/// Scores texture-difference patches: `[N,1,h,w] → [N]` probabilities of being real.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator<T> {
    pub config: DiscriminatorConfig,
    pub convs: Vec<(Tensor<T>, Tensor<T>)>,
    pub head_weight: Tensor<T>,
    pub head_bias: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct DiscriminatorVars {
    convs: Vec<(Var, Var)>,
    head: (Var, Var),
}

impl DiscriminatorVars {
    pub fn params(&self) -> Vec<Var> {
        let mut out: Vec<Var> = self.convs.iter().flat_map(|&(k, b)| [k, b]).collect();
        out.push(self.head.0);
        out.push(self.head.1);
        out
    }
}

impl<T: Real> Discriminator<T> {
    pub fn new(config: DiscriminatorConfig, seed: u64) -> Self {
        let mut rng = rng_for(seed, &[tag::INIT_DISC]);
        let mut c_in = 1;
        let mut convs = Vec::new();
        for &w in &config.widths {
            convs.push((fan_in_uniform([w, c_in, KERNEL, KERNEL], &mut rng), Tensor::zeros([w])));
            c_in = w;
        }
        let head = fan_in_uniform::<T>([1, c_in, 1, 1], &mut rng)
            .reshape([1, c_in])
            .expect("same length");
        Self {
            config,
            convs,
            head_weight: head,
            head_bias: Tensor::zeros([1]),
        }
    }

    /// Zero the final dense layer so every output starts at exactly 0.5.
    pub fn with_zero_head(mut self) -> Self {
        self.head_weight = Tensor::zeros(self.head_weight.shape());
        self.head_bias = Tensor::zeros([1]);
        self
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        let mut out: Vec<&Tensor<T>> = self.convs.iter().flat_map(|(k, b)| [k, b]).collect();
        out.push(&self.head_weight);
        out.push(&self.head_bias);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out: Vec<&mut Tensor<T>> = self.convs.iter_mut().flat_map(|(k, b)| [k, b]).collect();
        out.push(&mut self.head_weight);
        out.push(&mut self.head_bias);
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> Discriminator<U> {
        Discriminator {
            config: self.config.clone(),
            convs: self.convs.iter().map(|(k, b)| (k.cast(), b.cast())).collect(),
            head_weight: self.head_weight.cast(),
            head_bias: self.head_bias.cast(),
        }
    }

    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> DiscriminatorVars {
        DiscriminatorVars {
            convs: self
                .convs
                .iter()
                .map(|(k, b)| (tape.leaf(k.clone(), trainable), tape.leaf(b.clone(), trainable)))
                .collect(),
            head: (
                tape.leaf(self.head_weight.clone(), trainable),
                tape.leaf(self.head_bias.clone(), trainable),
            ),
        }
    }

    pub fn forward(&self, tape: &mut Tape<T>, vars: &DiscriminatorVars, delta: Var) -> Result<Var> {
        let shape = tape.value(delta).shape().to_vec();
        if shape.len() != 4 || shape[1] != 1 {
            return invalid(format!("discriminator input must be [N,1,h,w], got {shape:?}"));
        }
        let mut h = tape.scale(delta, T::from_f64_lossy(1.0 / self.config.input_scale));
        let spec = Conv2dSpec { stride: 2, padding: 1 };
        for &(k, b) in &vars.convs {
            h = tape.conv2d(h, k, b, spec)?;
            h = tape.activation(h, Activation::LeakyRelu(self.config.slope))?;
        }
        let pooled = tape.global_avg_pool(h)?;
        let logit = tape.dense(pooled, vars.head.0, vars.head.1)?;
        let p = tape.activation(logit, Activation::Sigmoid)?;
        tape.reshape(p, &[shape[0]])
    }

    /// Probabilities for a batch, without recording gradients.
    pub fn score(&self, delta: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let d = tape.constant(delta.clone());
        let p = self.forward(&mut tape, &vars, d)?;
        Ok(tape.value(p).clone())
    }
}

/// Positive scale applied to generated texture differences, stored as `ln γ`.
#[derive(Clone, Debug, PartialEq)]
pub struct GammaParam<T> {
    pub log_gamma: Tensor<T>,
    pub learnable: bool,
}

impl<T: Real> GammaParam<T> {
    pub fn new(gamma: f64, learnable: bool) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return invalid(format!("gamma must be positive, got {gamma}"));
        }
        Ok(Self {
            log_gamma: Tensor::scalar(T::from_f64_lossy(gamma.ln())),
            learnable,
        })
    }

    pub fn value(&self) -> f64 {
        self.log_gamma.data()[0].as_f64().exp()
    }

    pub fn cast<U: Real>(&self) -> GammaParam<U> {
        GammaParam {
            log_gamma: self.log_gamma.cast(),
            learnable: self.learnable,
        }
    }

    /// Returns (leaf for ln γ, node holding γ).
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> (Var, Var) {
        let leaf = tape.leaf(self.log_gamma.clone(), trainable && self.learnable);
        let g = tape.exp(leaf);
        (leaf, g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_scale_parameter_count() {
        let cfg = GeneratorConfig::paper_scale();
        let expected = (64 * 9 + 64) + 15 * (64 * 64 * 9 + 64) + (64 * 9 + 1);
        assert_eq!(expected, 555_137);
        assert_eq!(cfg.param_count(), expected);
        let g = Generator::<f32>::new(cfg, 0).unwrap();
        assert_eq!(g.param_count(), expected);
    }

    #[test]
    fn desk_discriminator_strength_matches_generator() {
        for cfg in [GeneratorConfig::desk(), GeneratorConfig::paper_scale()] {
            let gp = cfg.param_count();
            let d = DiscriminatorConfig::matched_to(gp);
            let ratio = d.param_count() as f64 / gp as f64;
            assert!((0.5..=2.0).contains(&ratio), "ratio {ratio}");
            let disc = Discriminator::<f64>::new(d.clone(), 1);
            assert_eq!(disc.param_count(), d.param_count());
        }
    }

    #[test]
    fn zero_final_layer_is_identity() {
        let g = Generator::<f64>::new(GeneratorConfig::desk(), 3).unwrap();
        let y = Tensor::from_fn([2, 1, 16, 16], |i| 1000.0 + (i as f64 * 0.37).sin() * 40.0);
        assert_eq!(g.apply(&y).unwrap(), y);
    }

    #[test]
    fn rejects_multichannel_input() {
        let g = Generator::<f64>::new(GeneratorConfig::desk(), 3).unwrap();
        assert!(g.apply(&Tensor::zeros([1, 2, 8, 8])).is_err());
    }

    #[test]
    fn zero_head_scores_half() {
        let d = Discriminator::<f64>::new(DiscriminatorConfig::scaled(0.25), 9).with_zero_head();
        let x = Tensor::from_fn([3, 1, 16, 16], |i| (i as f64).cos() * 50.0);
        let p = d.score(&x).unwrap();
        assert_eq!(p.shape(), &[3]);
        assert!(p.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn gamma_stays_positive() {
        let g = GammaParam::<f64>::new(1.0, true).unwrap();
        assert_eq!(g.value(), 1.0);
        assert!(GammaParam::<f64>::new(0.0, true).is_err());
        assert!(GammaParam::<f64>::new(-1.0, true).is_err());
        let mut g = g;
        g.log_gamma.data_mut()[0] = -700.0;
        assert!(g.value() > 0.0);
    }
}
