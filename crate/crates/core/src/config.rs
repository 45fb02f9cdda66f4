//! Line-oriented `key = value` run configuration.
//!
//! Every knob of training, data synthesis, target texture and evaluation has a key. Unknown or
//! repeated keys are errors. A `task` line selects the preset the remaining keys override,
//! wherever it appears in the file.

use std::collections::HashSet;
use std::fmt::Write as _;

use crate::error::FormatError;
use crate::losses::AdversarialForm;
use crate::models::DiscriminatorConfig;
use crate::seeds::{derive_seed, tag};
use crate::synthdata::{Correlation, DatasetConfig, DeformationSpec, TextureRole, TextureSpec, DEFAULT_SPACING_MM};
use crate::trainer::{Task, TrainConfig};

/// Held-out evaluation set produced by `gen-data` and consumed by `evaluate`.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    /// Number of test exams (whole phantoms).
    pub exams: usize,
    /// Noisy water images whose enhanced outputs supply texture ROIs.
    pub water_draws: usize,
    /// Side of each square NPS ROI (power of two).
    pub roi_size: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub task: Task,
    pub train: TrainConfig,
    pub data: DatasetConfig,
    pub target: TextureSpec,
    pub target_bank: usize,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn preset(task: Task) -> Self {
        let (deformation, noise_std, noise_corr, target_std, target_corr) = match task {
            Task::Denoise => (
                DeformationSpec::Identity,
                60.0,
                Correlation::BandPass {
                    narrow_px: 0.5,
                    wide_px: 1.5,
                },
                20.0,
                Correlation::LowPass { sigma_px: 1.5 },
            ),
            Task::Sharpen => (
                DeformationSpec::GaussianBlur { sigma_mm: (0.8, 0.8) },
                15.0,
                Correlation::LowPass { sigma_px: 1.0 },
                30.0,
                Correlation::BandPass {
                    narrow_px: 0.5,
                    wide_px: 1.5,
                },
            ),
        };
        let mut cfg = Self {
            task,
            train: TrainConfig::preset(task),
            data: DatasetConfig {
                phantom_count: 24,
                phantom_size: 128,
                phantom_shapes: 8,
                patch_size: crate::trainer::PRESET_PATCH,
                pairs_per_phantom: 64,
                split_fraction: 0.97,
                pixel_spacing_mm: DEFAULT_SPACING_MM,
                deformation,
                noise: TextureSpec {
                    base_std_hu: noise_std,
                    correlation: noise_corr,
                    seed: 0,
                    role: TextureRole::InputNoise,
                },
                seed: 0,
            },
            target: TextureSpec {
                base_std_hu: target_std,
                correlation: target_corr,
                seed: 0,
                role: TextureRole::Target,
            },
            target_bank: 512,
            eval: EvalConfig {
                exams: 3,
                water_draws: 16,
                roi_size: 64,
            },
        };
        cfg.set_seed(0);
        cfg
    }

    /// Set the master seed and every stream derived from it.
    pub fn set_seed(&mut self, seed: u64) {
        self.train.seed = seed;
        self.data.seed = seed;
        self.data.noise.seed = derive_seed(seed, &[tag::INPUT_NOISE]);
        self.target.seed = derive_seed(seed, &[tag::TARGET_TEXTURE]);
    }

    pub fn seed(&self) -> u64 {
        self.train.seed
    }

    pub fn parse_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let text = std::str::from_utf8(bytes).map_err(|e| FormatError::Invalid(format!("config is not UTF-8: {e}")))?;
        Self::parse(text)
    }

    pub fn parse(text: &str) -> Result<Self, FormatError> {
        let entries = entries(text)?;
        let task = match entries.iter().find(|e| e.key == "task") {
            Some(e) => e.value.parse::<Task>().map_err(|m| e.err(m))?,
            None => Task::Denoise,
        };
        let mut cfg = Self::preset(task);
        if let Some(e) = entries.iter().find(|e| e.key == "seed") {
            cfg.set_seed(parse_num(e)?);
        }
        for e in entries.iter().filter(|e| e.key != "task" && e.key != "seed") {
            cfg.apply(e)?;
        }
        cfg.validate().map_err(|m| FormatError::Config { line: 0, msg: m })?;
        Ok(cfg)
    }

    /// Apply one `key = value` override, as if it appeared in a file.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), FormatError> {
        let e = Entry {
            line: 0,
            key: key.to_string(),
            value: value.to_string(),
        };
        match key {
            "seed" => self.set_seed(parse_num(&e)?),
            "task" => return Err(e.err("task can only be chosen in the config file".into())),
            _ => self.apply(&e)?,
        }
        Ok(())
    }

    fn apply(&mut self, e: &Entry) -> Result<(), FormatError> {
        if apply_train_key(&mut self.train, e)? {
            return Ok(());
        }
        let d = &mut self.data;
        match e.key.as_str() {
            "phantom_count" => d.phantom_count = parse_num(e)?,
            "phantom_size" => d.phantom_size = parse_num(e)?,
            "phantom_shapes" => d.phantom_shapes = parse_num(e)?,
            "patch_size" => d.patch_size = parse_num(e)?,
            "pairs_per_phantom" => d.pairs_per_phantom = parse_num(e)?,
            "split_fraction" => d.split_fraction = parse_num(e)?,
            "pixel_spacing_mm" => d.pixel_spacing_mm = parse_num(e)?,
            "deformation" => d.deformation = parse_deformation(e)?,
            "noise_std_hu" => d.noise.base_std_hu = parse_num(e)?,
            "noise_correlation" => d.noise.correlation = parse_correlation(e)?,
            "target_std_hu" => self.target.base_std_hu = parse_num(e)?,
            "target_correlation" => self.target.correlation = parse_correlation(e)?,
            "target_bank" => self.target_bank = parse_num(e)?,
            "eval_exams" => self.eval.exams = parse_num(e)?,
            "eval_water_draws" => self.eval.water_draws = parse_num(e)?,
            "eval_roi_size" => self.eval.roi_size = parse_num(e)?,
            _ => return Err(e.err(format!("unknown key {:?}", e.key))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), String> {
        self.train.validate().map_err(|e| e.to_string())?;
        self.data.noise.validate().map_err(|e| e.to_string())?;
        self.target.validate().map_err(|e| e.to_string())?;
        let d = &self.data;
        if d.phantom_count == 0 || d.pairs_per_phantom == 0 {
            return Err("phantom_count and pairs_per_phantom must be positive".into());
        }
        if d.phantom_size < 16 {
            return Err(format!("phantom_size must be at least 16, got {}", d.phantom_size));
        }
        if d.patch_size < 16 || d.patch_size > d.phantom_size {
            return Err(format!(
                "patch_size must lie in 16..={} (the discriminator downsamples four times), got {}",
                d.phantom_size, d.patch_size
            ));
        }
        if !(d.pixel_spacing_mm > 0.0) {
            return Err("pixel_spacing_mm must be positive".into());
        }
        if !(d.split_fraction > 0.0 && d.split_fraction < 1.0) {
            return Err(format!("split_fraction must lie in (0, 1), got {}", d.split_fraction));
        }
        if self.target_bank < 2 {
            return Err("target_bank must hold at least 2 patches".into());
        }
        if self.eval.exams == 0 || self.eval.water_draws < 2 {
            return Err("eval_exams must be positive and eval_water_draws at least 2".into());
        }
        if !self.eval.roi_size.is_power_of_two() || self.eval.roi_size < 8 || self.eval.roi_size > d.phantom_size {
            return Err(format!(
                "eval_roi_size must be a power of two in 8..={}, got {}",
                d.phantom_size, self.eval.roi_size
            ));
        }
        Ok(())
    }

    /// Canonical text form; parses back to an equal configuration.
    pub fn to_text(&self) -> String {
        let d = &self.data;
        let mut s = format!("task = {}\nseed = {}\n", self.task.name(), self.seed());
        s.push_str(&train_keys_text(&self.train));
        let _ = write!(
            s,
            "phantom_count = {}\nphantom_size = {}\nphantom_shapes = {}\npatch_size = {}\n\
             pairs_per_phantom = {}\nsplit_fraction = {}\npixel_spacing_mm = {}\ndeformation = {}\n\
             noise_std_hu = {}\nnoise_correlation = {}\ntarget_std_hu = {}\ntarget_correlation = {}\n\
             target_bank = {}\neval_exams = {}\neval_water_draws = {}\neval_roi_size = {}\n",
            d.phantom_count,
            d.phantom_size,
            d.phantom_shapes,
            d.patch_size,
            d.pairs_per_phantom,
            d.split_fraction,
            d.pixel_spacing_mm,
            deformation_text(&d.deformation),
            d.noise.base_std_hu,
            correlation_text(&d.noise.correlation),
            self.target.base_std_hu,
            correlation_text(&self.target.correlation),
            self.target_bank,
            self.eval.exams,
            self.eval.water_draws,
            self.eval.roi_size,
        );
        s
    }
}

/// Text block holding exactly the training keys, as stored in checkpoints.
pub fn train_config_text(cfg: &TrainConfig) -> String {
    format!("seed = {}\n{}", cfg.seed, train_keys_text(cfg))
}

/// Inverse of [`train_config_text`].
pub fn parse_train_config(text: &str) -> Result<TrainConfig, FormatError> {
    let mut cfg = TrainConfig::preset(Task::Denoise);
    for e in entries(text)? {
        if e.key == "seed" {
            cfg.seed = parse_num(&e)?;
        } else if !apply_train_key(&mut cfg, &e)? {
            return Err(e.err(format!("unknown key {:?}", e.key)));
        }
    }
    cfg.validate().map_err(|m| FormatError::Config {
        line: 0,
        msg: m.to_string(),
    })?;
    Ok(cfg)
}

fn train_keys_text(t: &TrainConfig) -> String {
    let g = &t.generator;
    let dc = &t.discriminator;
    let w = dc.widths;
    format!(
        "precision = {}\nlambda = {}\nsigma_hu = {}\nalpha = {}\nadversarial = {}\neta = {}\nt_d = {}\n\
         n_d = {}\nn_updates = {}\nlr_gen = {}\nlr_disc = {}\nbatch_size = {}\ngamma_init = {}\n\
         gamma_learnable = {}\ngen_depth = {}\ngen_channels = {}\ngen_batch_norm = {}\n\
         gen_input_scale = {}\ndisc_widths = {},{},{},{}\ndisc_slope = {}\ndisc_input_scale = {}\n",
        t.precision.name(),
        t.loss.lambda,
        t.loss.sigma_hu,
        t.loss.alpha,
        match t.loss.adversarial {
            AdversarialForm::NonSaturating => "non_saturating",
            AdversarialForm::Minimax => "minimax",
        },
        t.eta,
        t.t_d,
        t.n_d,
        t.n_updates,
        t.lr_gen,
        t.lr_disc,
        t.batch_size,
        t.gamma_init,
        t.gamma_learnable,
        g.depth,
        g.channels,
        g.batch_norm,
        g.input_scale,
        w[0],
        w[1],
        w[2],
        w[3],
        dc.slope,
        dc.input_scale,
    )
}

/// Returns false when `e` is not a training key.
fn apply_train_key(t: &mut TrainConfig, e: &Entry) -> Result<bool, FormatError> {
    match e.key.as_str() {
        "precision" => t.precision = e.value.parse().map_err(|m| e.err(m))?,
        "lambda" => t.loss.lambda = parse_num(e)?,
        "sigma_hu" => t.loss.sigma_hu = parse_num(e)?,
        "alpha" => t.loss.alpha = parse_num(e)?,
        "adversarial" => {
            t.loss.adversarial = match e.value.as_str() {
                "non_saturating" => AdversarialForm::NonSaturating,
                "minimax" => AdversarialForm::Minimax,
                v => return Err(e.err(format!("unknown adversarial form {v:?}"))),
            }
        }
        "eta" => t.eta = parse_num(e)?,
        "t_d" => t.t_d = parse_num(e)?,
        "n_d" => t.n_d = parse_num(e)?,
        "n_updates" => t.n_updates = parse_num(e)?,
        "lr_gen" => t.lr_gen = parse_num(e)?,
        "lr_disc" => t.lr_disc = parse_num(e)?,
        "batch_size" => t.batch_size = parse_num(e)?,
        "gamma_init" => t.gamma_init = parse_num(e)?,
        "gamma_learnable" => t.gamma_learnable = parse_num(e)?,
        "gen_depth" => t.generator.depth = parse_num(e)?,
        "gen_channels" => t.generator.channels = parse_num(e)?,
        "gen_batch_norm" => t.generator.batch_norm = parse_num(e)?,
        "gen_input_scale" => t.generator.input_scale = parse_num(e)?,
        "disc_widths" => {
            t.discriminator.widths = if e.value == "auto" {
                DiscriminatorConfig::matched_to(t.generator.param_count()).widths
            } else {
                let v = parse_list::<usize>(e)?;
                v.try_into()
                    .map_err(|_| e.err("disc_widths needs 4 values or `auto`".into()))?
            }
        }
        "disc_slope" => t.discriminator.slope = parse_num(e)?,
        "disc_input_scale" => t.discriminator.input_scale = parse_num(e)?,
        _ => return Ok(false),
    }
    Ok(true)
}

struct Entry {
    line: usize,
    key: String,
    value: String,
}

impl Entry {
    fn err(&self, msg: String) -> FormatError {
        FormatError::Config { line: self.line, msg }
    }
}

fn entries(text: &str) -> Result<Vec<Entry>, FormatError> {
    let mut seen = HashSet::new();
    let mut out: Vec<Entry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |msg: String| FormatError::Config { line: i + 1, msg };
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("expected `key = value`, got {line:?}")))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || v.is_empty() {
            return Err(bad("empty key or value".into()));
        }
        if !seen.insert(k.to_string()) {
            return Err(bad(format!("duplicate key {k:?}")));
        }
        out.push(Entry {
            line: i + 1,
            key: k.to_string(),
            value: v.to_string(),
        });
    }
    // `disc_widths = auto` depends on the final generator shape
    out.sort_by_key(|e| e.key == "disc_widths");
    Ok(out)
}

fn parse_num<V: std::str::FromStr>(e: &Entry) -> Result<V, FormatError> {
    e.value
        .parse()
        .map_err(|_| e.err(format!("invalid value {:?} for {}", e.value, e.key)))
}

fn parse_list<V: std::str::FromStr>(e: &Entry) -> Result<Vec<V>, FormatError> {
    e.value
        .split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| e.err(format!("invalid list item {p:?} for {}", e.key)))
        })
        .collect()
}

fn split_kind(e: &Entry) -> (&str, Option<&str>) {
    match e.value.split_once(':') {
        Some((k, a)) => (k.trim(), Some(a.trim())),
        None => (e.value.as_str(), None),
    }
}

fn args(e: &Entry, a: Option<&str>, n: usize) -> Result<Vec<f64>, FormatError> {
    let sub = Entry {
        line: e.line,
        key: e.key.clone(),
        value: a.unwrap_or("").to_string(),
    };
    let v: Vec<f64> = if a.is_some() { parse_list(&sub)? } else { Vec::new() };
    if v.len() != n {
        return Err(e.err(format!("{} expects {n} parameter(s)", e.key)));
    }
    Ok(v)
}

fn parse_correlation(e: &Entry) -> Result<Correlation, FormatError> {
    let (kind, a) = split_kind(e);
    let c = match kind {
        "white" if a.is_none() => Correlation::White,
        "lowpass" => Correlation::LowPass {
            sigma_px: args(e, a, 1)?[0],
        },
        "bandpass" => {
            let v = args(e, a, 2)?;
            Correlation::BandPass {
                narrow_px: v[0],
                wide_px: v[1],
            }
        }
        _ => {
            return Err(e.err(format!(
                "unknown correlation {:?} (white, lowpass:SIGMA, bandpass:NARROW,WIDE)",
                e.value
            )))
        }
    };
    c.validate().map_err(|m| e.err(m.to_string()))?;
    Ok(c)
}

fn correlation_text(c: &Correlation) -> String {
    match c {
        Correlation::White => "white".into(),
        Correlation::LowPass { sigma_px } => format!("lowpass:{sigma_px}"),
        Correlation::BandPass { narrow_px, wide_px } => format!("bandpass:{narrow_px},{wide_px}"),
        Correlation::Taps(_) => "taps".into(),
    }
}

fn parse_deformation(e: &Entry) -> Result<DeformationSpec, FormatError> {
    let (kind, a) = split_kind(e);
    match kind {
        "identity" if a.is_none() => Ok(DeformationSpec::Identity),
        "blur" => {
            let v = args(e, a, 2)?;
            if !(v[0] > 0.0 && v[1] > 0.0) {
                return Err(e.err("blur sigmas must be positive".into()));
            }
            Ok(DeformationSpec::GaussianBlur { sigma_mm: (v[0], v[1]) })
        }
        _ => Err(e.err(format!("unknown deformation {:?} (identity, blur:SY,SX)", e.value))),
    }
}

fn deformation_text(d: &DeformationSpec) -> String {
    match d {
        DeformationSpec::Identity => "identity".into(),
        DeformationSpec::GaussianBlur { sigma_mm } => format!("blur:{},{}", sigma_mm.0, sigma_mm.1),
    }
}
