//! Thresholded alternating optimisation of discriminator and generator, with telemetry.

use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::autodiff::{BatchStats, Tape, Var};
use crate::error::{invalid, FormatError, Result, TensorError};
use crate::losses::{discriminator_loss, generator_loss, texture_difference_values, AdversarialForm, LossConfig};
use crate::models::{
    siamese_forward, Discriminator, DiscriminatorConfig, GammaParam, Generator, GeneratorConfig, GeneratorVars,
};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::seeds::{derive_seed, rng_for, tag};
use crate::synthdata::PatchPair;
use crate::tensor::{DType, Real, Tensor};

/// Arithmetic used for training.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    Train32,
    Test64,
}

impl Precision {
    pub fn name(self) -> &'static str {
        match self {
            Precision::Train32 => "train32",
            Precision::Test64 => "test64",
        }
    }

    pub fn dtype(self) -> DType {
        match self {
            Precision::Train32 => DType::F32,
            Precision::Test64 => DType::F64,
        }
    }
}

impl FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train32" => Ok(Precision::Train32),
            "test64" => Ok(Precision::Test64),
            _ => Err(format!("unknown precision {s:?} (expected train32 or test64)")),
        }
    }
}

/// Operating point presets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Denoise,
    Sharpen,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Denoise => "denoise",
            Task::Sharpen => "sharpen",
        }
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "denoise" => Ok(Task::Denoise),
            "sharpen" => Ok(Task::Sharpen),
            _ => Err(format!("unknown task {s:?} (expected denoise or sharpen)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub loss: LossConfig,
    /// Blending weight used at inference.
    pub eta: f64,
    /// Discriminator update threshold.
    pub t_d: f64,
    /// Cap on discriminator updates per generator update.
    pub n_d: usize,
    /// Number of generator updates.
    pub n_updates: usize,
    pub lr_gen: f64,
    pub lr_disc: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub precision: Precision,
    pub gamma_init: f64,
    pub gamma_learnable: bool,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
}

/// Patch side the λ presets are scaled for.
pub const PRESET_PATCH: usize = 32;

impl TrainConfig {
    /// Desk-scale defaults for a task.
    ///
    /// Data terms are summed over each patch, so the λ presets carry a factor of the patch
    /// pixel count to keep the adversarial/data balance of a per-pixel formulation.
    pub fn preset(task: Task) -> Self {
        let pixels = (PRESET_PATCH * PRESET_PATCH) as f64;
        let (lambda, sigma_hu, alpha, eta, n_d) = match task {
            Task::Denoise => (0.4 * pixels, 7.8, 0.5, 0.3, 1),
            Task::Sharpen => (0.04 * pixels, 50.0, 1.0, 1.0, 5),
        };
        let generator = GeneratorConfig::desk();
        Self {
            loss: LossConfig {
                lambda,
                sigma_hu,
                alpha,
                adversarial: AdversarialForm::NonSaturating,
            },
            eta,
            t_d: 0.2,
            n_d,
            n_updates: 2000,
            lr_gen: 3e-5,
            lr_disc: 3e-6,
            batch_size: 32,
            seed: 0,
            precision: Precision::Train32,
            gamma_init: 1.0,
            gamma_learnable: true,
            discriminator: DiscriminatorConfig::matched_to(generator.param_count()),
            generator,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if !(0.0..=1.0).contains(&self.eta) {
            return invalid(format!("eta must lie in [0, 1], got {}", self.eta));
        }
        if !(self.t_d > 0.0) || !self.t_d.is_finite() {
            return invalid(format!("T_d must be positive, got {}", self.t_d));
        }
        if self.n_d < 1 {
            return invalid("N_d must be at least 1");
        }
        if self.n_updates < 1 {
            return invalid("N must be at least 1");
        }
        for (name, lr) in [("lr_gen", self.lr_gen), ("lr_disc", self.lr_disc)] {
            if !(lr > 0.0) || !lr.is_finite() {
                return invalid(format!("{name} must be positive, got {lr}"));
            }
        }
        if self.batch_size < 1 {
            return invalid("batch size must be at least 1");
        }
        if !(self.gamma_init > 0.0) || !self.gamma_init.is_finite() {
            return invalid(format!("gamma must be positive, got {}", self.gamma_init));
        }
        self.generator.validate()?;
        if self.discriminator.widths.contains(&0) {
            return invalid("discriminator widths must be positive");
        }
        if !(self.discriminator.input_scale > 0.0) {
            return invalid("discriminator input scale must be positive");
        }
        Ok(())
    }

    /// The same configuration as the λ = 0 bias-reducing baseline.
    pub fn bias_reducing(&self) -> Self {
        let mut c = self.clone();
        c.loss.lambda = 0.0;
        c
    }
}

/// One generator update.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub gen_loss: f64,
    /// Last discriminator loss evaluated; absent when λ = 0.
    pub disc_loss: Option<f64>,
    pub n_d: usize,
    pub gamma: f64,
    /// Wall-clock seconds since the run started.
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub records: Vec<StepRecord>,
}

impl TrainingLog {
    pub const HEADER: &'static str = "step,gen_loss,disc_loss,n_d,gamma,seconds";

    pub fn csv_row(r: &StepRecord) -> String {
        let d = r.disc_loss.map(|v| format!("{v:e}")).unwrap_or_default();
        format!(
            "{},{:e},{},{},{:e},{:.3}",
            r.step, r.gen_loss, d, r.n_d, r.gamma, r.seconds
        )
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::HEADER);
        s.push('\n');
        for r in &self.records {
            let _ = writeln!(s, "{}", Self::csv_row(r));
        }
        s
    }

    pub fn parse_csv(text: &str) -> std::result::Result<Self, FormatError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == Self::HEADER => {}
            _ => {
                return Err(FormatError::Config {
                    line: 1,
                    msg: format!("expected header {:?}", Self::HEADER),
                })
            }
        }
        let mut records = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |msg: &str| FormatError::Config {
                line: i + 1,
                msg: msg.to_string(),
            };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(bad("expected 6 fields"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad("bad number"));
            records.push(StepRecord {
                step: f[0].parse().map_err(|_| bad("bad step"))?,
                gen_loss: num(f[1])?,
                disc_loss: if f[2].is_empty() { None } else { Some(num(f[2])?) },
                n_d: f[3].parse().map_err(|_| bad("bad n_d"))?,
                gamma: num(f[4])?,
                seconds: num(f[5])?,
            });
        }
        Ok(Self { records })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("training aborted at step {step}: non-finite {what}")]
    NonFinite {
        step: usize,
        what: &'static str,
        log: TrainingLog,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// The two halves of one outer iteration, as seen by [`run_alternating`].
pub trait AlternatingObjective {
    /// Select the mini-batch for generator update `step`.
    fn begin_step(&mut self, step: usize) -> Result<()>;
    /// False when the texture weight is zero: the discriminator is then never consulted.
    fn uses_discriminator(&self) -> bool;
    /// d(θ_g, θ_d) on the current mini-batch.
    fn discriminator_loss(&mut self) -> Result<f64>;
    fn discriminator_step(&mut self) -> Result<()>;
    /// One generator update; returns g(θ_g, θ_d) before the update.
    fn generator_step(&mut self) -> Result<f64>;
    fn gamma(&self) -> f64;
}

fn abort(step: usize, what: &'static str, log: &TrainingLog) -> TrainError {
    TrainError::NonFinite {
        step,
        what,
        log: log.clone(),
    }
}

fn lift(e: TensorError, step: usize, log: &TrainingLog) -> TrainError {
    match e {
        TensorError::NonFinite(what) => abort(step, what, log),
        other => TrainError::Tensor(other),
    }
}

/// Run generator updates `start..end`, appending one record per update.
///
/// Before each generator update the discriminator is stepped while its loss exceeds `t_d`,
/// at most `n_d` times.
pub fn run_alternating<O: AlternatingObjective>(
    obj: &mut O,
    t_d: f64,
    n_d: usize,
    start: usize,
    end: usize,
    log: &mut TrainingLog,
    mut on_record: impl FnMut(&StepRecord),
) -> std::result::Result<(), TrainError> {
    let clock = Instant::now();
    for step in start..end {
        obj.begin_step(step).map_err(|e| lift(e, step, log))?;
        let mut updates = 0;
        let mut disc_loss = None;
        if obj.uses_discriminator() {
            let mut d = obj.discriminator_loss().map_err(|e| lift(e, step, log))?;
            if !d.is_finite() {
                return Err(abort(step, "discriminator loss", log));
            }
            while d > t_d && updates < n_d {
                obj.discriminator_step().map_err(|e| lift(e, step, log))?;
                updates += 1;
                d = obj.discriminator_loss().map_err(|e| lift(e, step, log))?;
                if !d.is_finite() {
                    return Err(abort(step, "discriminator loss", log));
                }
            }
            disc_loss = Some(d);
        }
        let g = obj.generator_step().map_err(|e| lift(e, step, log))?;
        if !g.is_finite() {
            return Err(abort(step, "generator loss", log));
        }
        let record = StepRecord {
            step,
            gen_loss: g,
            disc_loss,
            n_d: updates,
            gamma: obj.gamma(),
            seconds: clock.elapsed().as_secs_f64(),
        };
        on_record(&record);
        log.records.push(record);
    }
    Ok(())
}

/// Everything that evolves during training.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState<T> {
    pub generator: Generator<T>,
    pub gamma: GammaParam<T>,
    pub discriminator: Discriminator<T>,
    /// Over generator parameters followed by ln γ.
    pub adam_gen: AdamState<T>,
    pub adam_disc: AdamState<T>,
    /// Completed generator updates.
    pub step: usize,
}

impl<T: Real> TrainState<T> {
    /// Fresh models initialised from the run seed.
    pub fn init(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let generator = Generator::new(cfg.generator.clone(), derive_seed(cfg.seed, &[tag::INIT_GEN]))?;
        let discriminator = Discriminator::new(cfg.discriminator.clone(), derive_seed(cfg.seed, &[tag::INIT_DISC]));
        let gamma = GammaParam::new(cfg.gamma_init, cfg.gamma_learnable)?;
        let adam_gen = AdamState::new(generator.params().into_iter().chain([&gamma.log_gamma]));
        let adam_disc = AdamState::new(discriminator.params());
        Ok(Self {
            generator,
            gamma,
            discriminator,
            adam_gen,
            adam_disc,
            step: 0,
        })
    }

    pub fn cast<U: Real>(&self) -> TrainState<U> {
        TrainState {
            generator: self.generator.cast(),
            gamma: self.gamma.cast(),
            discriminator: self.discriminator.cast(),
            adam_gen: self.adam_gen.cast(),
            adam_disc: self.adam_disc.cast(),
            step: self.step,
        }
    }
}

/// Position of mini-batch `step` in the seeded epoch-by-epoch shuffle of `len` samples.
pub fn batch_indices(seed: u64, step: usize, batch: usize, len: usize) -> Vec<usize> {
    let mut cached: Option<(usize, Vec<usize>)> = None;
    (0..batch)
        .map(|k| {
            let q = step * batch + k;
            let (epoch, pos) = (q / len, q % len);
            if cached.as_ref().map(|c| c.0) != Some(epoch) {
                cached = Some((epoch, epoch_order(seed, epoch, len)));
            }
            cached.as_ref().unwrap().1[pos]
        })
        .collect()
}

fn epoch_order(seed: u64, epoch: usize, len: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng_for(seed, &[tag::SHUFFLE, epoch as u64]));
    order
}

/// Two distinct target-bank indices per batch element for update `step`.
pub fn target_pairs(seed: u64, step: usize, batch: usize, bank: usize) -> Vec<(usize, usize)> {
    let mut rng = rng_for(seed, &[tag::TARGET_PICK, step as u64]);
    (0..batch)
        .map(|_| {
            let i = rng.random_range(0..bank);
            let mut j = rng.random_range(0..bank - 1);
            if j >= i {
                j += 1;
            }
            (i, j)
        })
        .collect()
}

struct Batch<T> {
    tape: Tape<T>,
    gen_vars: GeneratorVars,
    gamma_leaf: Var,
    gamma: Var,
    x: Var,
    x1: Var,
    x2: Var,
    stats: Vec<BatchStats<T>>,
    real: Option<Tensor<T>>,
    fake: Option<Tensor<T>>,
}

fn stack_as<T: Real>(parts: impl Iterator<Item = Tensor<f64>>) -> Result<Tensor<T>> {
    let v: Vec<Tensor<f64>> = parts
        .map(|t| {
            let s = t.shape().to_vec();
            let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
            t.reshape([1, 1, h, w])
        })
        .collect::<Result<_>>()?;
    Ok(Tensor::stack(&v)?.cast())
}

/// The TMGAN objective over a patch dataset and a target-texture bank.
pub struct TmganObjective<'a, T> {
    cfg: &'a TrainConfig,
    pub state: &'a mut TrainState<T>,
    train: &'a [PatchPair],
    bank: &'a [Tensor<f64>],
    batch: Option<Batch<T>>,
}

impl<'a, T: Real> TmganObjective<'a, T> {
    pub fn new(
        cfg: &'a TrainConfig,
        state: &'a mut TrainState<T>,
        train: &'a [PatchPair],
        bank: &'a [Tensor<f64>],
    ) -> Result<Self> {
        cfg.validate()?;
        if train.is_empty() {
            return invalid("training set is empty");
        }
        let p = train[0].x.shape().to_vec();
        if cfg.loss.lambda > 0.0 {
            if bank.len() < 2 {
                return invalid("target texture bank needs at least 2 patches");
            }
            let b = bank[0].shape();
            if b[b.len() - 2..] != p[p.len() - 2..] {
                return invalid(format!("target patches {:?} do not match training patches {:?}", b, p));
            }
        }
        Ok(Self {
            cfg,
            state,
            train,
            bank,
            batch: None,
        })
    }

    fn batch(&mut self) -> Result<&mut Batch<T>> {
        self.batch
            .as_mut()
            .ok_or_else(|| TensorError::Invalid("no mini-batch selected".into()))
    }

    fn disc_value(&self, trainable: bool) -> Result<(Tape<T>, Var, Vec<Var>)> {
        let b = self
            .batch
            .as_ref()
            .ok_or_else(|| TensorError::Invalid("no mini-batch selected".into()))?;
        let (real, fake) = (b.real.clone().unwrap(), b.fake.clone().unwrap());
        let disc = &self.state.discriminator;
        let mut tape = Tape::new();
        let vars = disc.bind(&mut tape, trainable);
        let r = tape.constant(real);
        let f = tape.constant(fake);
        let loss = discriminator_loss(&mut tape, disc, &vars, r, f)?;
        Ok((tape, loss, vars.params()))
    }
}

impl<T: Real> AlternatingObjective for TmganObjective<'_, T> {
    fn begin_step(&mut self, step: usize) -> Result<()> {
        let k = self.cfg.batch_size;
        let idx = batch_indices(self.cfg.seed, step, k, self.train.len());
        let pick = |f: fn(&PatchPair) -> &Tensor<f64>| stack_as::<T>(idx.iter().map(|&i| f(&self.train[i]).clone()));
        let (xs, y1s, y2s) = (pick(|p| &p.x)?, pick(|p| &p.y1)?, pick(|p| &p.y2)?);

        let gen = &self.state.generator;
        let mut tape = Tape::new();
        let gen_vars = gen.bind(&mut tape, true);
        let (gamma_leaf, gamma) = self.state.gamma.bind(&mut tape, true);
        let x = tape.constant(xs);
        let y1 = tape.constant(y1s);
        let y2 = tape.constant(y2s);
        let mut stats = Vec::new();
        let bn = gen.config.batch_norm;
        let (x1, x2) = siamese_forward(gen, &mut tape, &gen_vars, y1, y2, bn.then_some(&mut stats))?;

        let (mut real, mut fake) = (None, None);
        if self.uses_discriminator() {
            let pairs = target_pairs(self.cfg.seed, step, k, self.bank.len());
            let diffs = pairs.iter().map(|&(i, j)| {
                self.bank[i]
                    .zip_map(&self.bank[j], "target difference", |a, b| a - b)
                    .expect("bank patches share a shape")
            });
            real = Some(stack_as::<T>(diffs)?);
            let g = tape.value(gamma).data()[0];
            fake = Some(texture_difference_values(tape.value(x1), tape.value(x2), g)?);
        }
        self.batch = Some(Batch {
            tape,
            gen_vars,
            gamma_leaf,
            gamma,
            x,
            x1,
            x2,
            stats,
            real,
            fake,
        });
        Ok(())
    }

    fn uses_discriminator(&self) -> bool {
        self.cfg.loss.lambda > 0.0
    }

    fn discriminator_loss(&mut self) -> Result<f64> {
        let (tape, loss, _) = self.disc_value(false)?;
        Ok(tape.value(loss).item()?.as_f64())
    }

    fn discriminator_step(&mut self) -> Result<()> {
        let (tape, loss, vars) = self.disc_value(true)?;
        let mut grads = tape.backward(loss)?;
        let g: Vec<Tensor<T>> = vars.iter().map(|&v| grads.take(v, &tape)).collect();
        let state = &mut *self.state;
        adam_step(
            &mut state.discriminator.params_mut(),
            &g,
            &mut state.adam_disc,
            &AdamConfig::with_lr(self.cfg.lr_disc),
        )
    }

    fn generator_step(&mut self) -> Result<f64> {
        let cfg = self.cfg;
        let uses_disc = self.uses_discriminator();
        let disc = self.state.discriminator.clone();
        let b = self.batch()?;
        let tape = &mut b.tape;
        let dvars = uses_disc.then(|| disc.bind(tape, false));
        let loss = generator_loss(
            tape,
            b.x,
            b.x1,
            b.x2,
            b.gamma,
            dvars.as_ref().map(|v| (&disc, v)),
            &cfg.loss,
        )?;
        let value = tape.value(loss).item()?.as_f64();
        if !value.is_finite() {
            return Err(TensorError::NonFinite("generator loss"));
        }
        let mut grads = tape.backward(loss)?;
        let mut g: Vec<Tensor<T>> = b.gen_vars.params().iter().map(|&v| grads.take(v, tape)).collect();
        g.push(grads.take(b.gamma_leaf, tape));
        let stats = std::mem::take(&mut b.stats);
        self.batch = None;

        let state = &mut *self.state;
        let mut params = state.generator.params_mut();
        params.push(&mut state.gamma.log_gamma);
        adam_step(&mut params, &g, &mut state.adam_gen, &AdamConfig::with_lr(cfg.lr_gen))?;
        if state.generator.config.batch_norm {
            state.generator.update_running_stats(&stats)?;
        }
        state.step += 1;
        Ok(value)
    }

    fn gamma(&self) -> f64 {
        self.state.gamma.value()
    }
}

/// Continue training `state` up to `cfg.n_updates` generator updates.
pub fn train<T: Real>(
    cfg: &TrainConfig,
    state: &mut TrainState<T>,
    train_set: &[PatchPair],
    bank: &[Tensor<f64>],
    log: &mut TrainingLog,
    on_record: impl FnMut(&StepRecord),
) -> std::result::Result<(), TrainError> {
    let start = state.step;
    if start > cfg.n_updates {
        return Err(TensorError::Invalid(format!(
            "state already has {start} updates, more than N = {}",
            cfg.n_updates
        ))
        .into());
    }
    let mut obj = TmganObjective::new(cfg, state, train_set, bank)?;
    run_alternating(&mut obj, cfg.t_d, cfg.n_d, start, cfg.n_updates, log, on_record)
}

/// Mean squared error of the generator's output on `y1` against the clean patches.
pub fn validation_mse<T: Real>(generator: &Generator<T>, set: &[PatchPair]) -> Result<f64> {
    if set.is_empty() {
        return invalid("validation set is empty");
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for p in set {
        let y = stack_as::<T>(std::iter::once(p.y1.clone()))?;
        let out = generator.apply(&y)?;
        for (a, b) in out.data().iter().zip(p.x.data()) {
            let d = a.as_f64() - b;
            total += d * d;
        }
        count += p.x.len();
    }
    Ok(total / count as f64)
}

/// Mean squared error of the noisy inputs `y1` against the clean patches.
pub fn identity_mse(set: &[PatchPair]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for p in set {
        total +=
            p.y1.data()
                .iter()
                .zip(p.x.data())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
        count += p.x.len();
    }
    total / count as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for t in [Task::Denoise, Task::Sharpen] {
            TrainConfig::preset(t).validate().unwrap();
        }
        let d = TrainConfig::preset(Task::Denoise);
        assert_eq!((d.loss.alpha, d.eta, d.t_d, d.n_d), (0.5, 0.3, 0.2, 1));
        assert_eq!((d.lr_gen, d.lr_disc, d.batch_size), (3e-5, 3e-6, 32));
        let s = TrainConfig::preset(Task::Sharpen);
        assert_eq!((s.loss.alpha, s.eta, s.n_d), (1.0, 1.0, 5));
    }

    #[test]
    fn validation_rejects_out_of_range() {
        let base = TrainConfig::preset(Task::Denoise);
        let cases: Vec<fn(&mut TrainConfig)> = vec![
            |c| c.eta = 1.5,
            |c| c.t_d = 0.0,
            |c| c.n_d = 0,
            |c| c.n_updates = 0,
            |c| c.lr_gen = -1.0,
            |c| c.batch_size = 0,
            |c| c.loss.alpha = 0.4,
            |c| c.loss.lambda = -0.1,
            |c| c.loss.sigma_hu = 0.0,
            |c| c.gamma_init = 0.0,
        ];
        for f in cases {
            let mut c = base.clone();
            f(&mut c);
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn batches_cover_each_epoch_once() {
        let len = 10;
        let mut seen: Vec<usize> = (0..5).flat_map(|s| batch_indices(3, s, 2, len)).collect();
        seen.sort();
        assert_eq!(seen, (0..len).collect::<Vec<_>>());
        assert_eq!(batch_indices(3, 7, 4, len), batch_indices(3, 7, 4, len));
        assert_ne!(batch_indices(3, 0, 10, len), batch_indices(4, 0, 10, len));
    }

    #[test]
    fn target_pairs_are_distinct() {
        for (i, j) in target_pairs(1, 0, 500, 3) {
            assert_ne!(i, j);
            assert!(i < 3 && j < 3);
        }
    }

    #[test]
    fn log_csv_round_trip() {
        let log = TrainingLog {
            records: vec![
                StepRecord {
                    step: 0,
                    gen_loss: 1.5,
                    disc_loss: Some(0.25),
                    n_d: 1,
                    gamma: 1.0,
                    seconds: 0.5,
                },
                StepRecord {
                    step: 1,
                    gen_loss: 0.1,
                    disc_loss: None,
                    n_d: 0,
                    gamma: 0.9,
                    seconds: 1.25,
                },
            ],
        };
        let csv = log.to_csv();
        assert!(csv.starts_with("step,gen_loss,disc_loss,n_d,gamma,seconds\n"));
        assert_eq!(TrainingLog::parse_csv(&csv).unwrap(), log);
    }
}
