//! Self-check suites: gradients against finite differences, the texture-difference
//! Gaussianity checker against known distributions, and NPS against analytic spectra.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rustfft::num_complex::Complex;

use crate::autodiff::{Activation, BatchStats, Conv2dSpec, Tape, Var};
use crate::error::Result;
use crate::gradcheck::{check_tape_gradients, finite_diff_check, GradCheckOptions, GradCheckReport};
use crate::losses::{discriminator_loss, generator_loss, AdversarialForm, LossConfig};
use crate::metrics::{nps_2d, theorem1_check, Detrend, Nps2d};
use crate::models::{siamese_forward, Discriminator, DiscriminatorConfig, GammaParam, Generator, GeneratorConfig};
use crate::seeds::rng_for;
use crate::synthdata::{sample_texture, Correlation, TextureRole, TextureSpec};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteReport {
    pub suite: &'static str,
    pub outcomes: Vec<CheckOutcome>,
}

impl SuiteReport {
    pub fn pass(&self) -> bool {
        self.outcomes.iter().all(|o| o.pass)
    }

    /// One `PASS`/`FAIL` line per check.
    pub fn render(&self) -> String {
        self.outcomes
            .iter()
            .map(|o| {
                format!(
                    "[{}] {} {}: {}\n",
                    self.suite,
                    if o.pass { "PASS" } else { "FAIL" },
                    o.name,
                    o.detail
                )
            })
            .collect()
    }
}

fn random(shape: &[usize], rng: &mut impl Rng, scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.sample::<f64, _>(StandardNormal) * scale)
}

fn grad_outcome(name: &str, r: GradCheckReport) -> CheckOutcome {
    CheckOutcome {
        name: name.to_string(),
        pass: r.pass,
        detail: format!("max_rel_error={:.3e} over {} probes", r.max_rel_error, r.probes),
    }
}

type Build = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;

fn primitive_cases(rng: &mut impl Rng) -> Vec<(&'static str, Build, Vec<Tensor<f64>>)> {
    let bn_stats = BatchStats {
        mean: vec![0.3, -0.2, 0.1],
        var: vec![1.5, 0.7, 2.0],
    };
    vec![
        (
            "conv2d same",
            Box::new(|t: &mut Tape<f64>, v: &[Var]| {
                let o = t.conv2d(v[0], v[1], v[2], Conv2dSpec::same())?;
                Ok(t.sum_squares(o))
            }),
            vec![
                random(&[2, 2, 6, 5], rng, 1.0),
                random(&[3, 2, 3, 3], rng, 0.5),
                random(&[3], rng, 0.5),
            ],
        ),
        (
            "conv2d stride 2",
            Box::new(|t: &mut Tape<f64>, v: &[Var]| {
                let o = t.conv2d(v[0], v[1], v[2], Conv2dSpec { stride: 2, padding: 1 })?;
                Ok(t.sum_squares(o))
            }),
            vec![
                random(&[2, 1, 8, 7], rng, 1.0),
                random(&[4, 1, 3, 3], rng, 0.5),
                random(&[4], rng, 0.5),
            ],
        ),
        (
            "add/sub/scale",
            Box::new(|t: &mut Tape<f64>, v: &[Var]| {
                let s = t.add(v[0], v[1])?;
                let d = t.sub(s, v[2])?;
                let c = t.scale(d, 0.7);
                Ok(t.sum_squares(c))
            }),
            vec![
                random(&[3, 4], rng, 1.0),
                random(&[3, 4], rng, 1.0),
                random(&[3, 4], rng, 1.0),
            ],
        ),
        (
            "mul_scalar/exp",
            Box::new(|t: &mut Tape<f64>, v: &[Var]| {
                let g = t.exp(v[1]);
                let m = t.mul_scalar(v[0], g)?;
                Ok(t.sum_squares(m))
            }),
            vec![random(&[2, 5], rng, 1.0), random(&[1], rng, 0.3)],
        ),
        (
            "relu",
            Box::new(|t: &mut Tape<f64>, v: &[Var]| {
                let a = t.activation(v[0], Activation::Relu)?;
                Ok(t.sum_squares(a))
            }),
            vec![random(&[4, 6], rng, 1.0)],
        ),
        (
            "leaky relu",
            Box::new(|t: &mut Tape<f64>, v: &[Var]| {
                let a = t.activation(v[0], Activation::LeakyRelu(0.2))?;
                Ok(t.sum_squares(a))
            }),
            vec![random(&[4, 6], rng, 1.0)],
        ),
        (
            "sigmoid",
            Box::new(|t: &mut Tape<f64>, v: &[Var]| {
                let a = t.activation(v[0], Activation::Sigmoid)?;
                Ok(t.sum_squares(a))
            }),
            vec![random(&[4, 6], rng, 2.0)],
        ),
        (
            "batch norm (batch statistics)",
            Box::new(|t: &mut Tape<f64>, v: &[Var]| {
                let (o, _) = t.batch_norm_train(v[0], v[1], v[2], 1e-5)?;
                let s = t.activation(o, Activation::Sigmoid)?;
                Ok(t.sum_squares(s))
            }),
            vec![
                random(&[4, 3, 3, 2], rng, 2.0),
                random(&[3], rng, 1.0),
                random(&[3], rng, 1.0),
            ],
        ),
        (
            "batch norm (running statistics)",
            Box::new(move |t: &mut Tape<f64>, v: &[Var]| {
                let o = t.batch_norm_eval(v[0], v[1], v[2], &bn_stats, 1e-5)?;
                let s = t.activation(o, Activation::Sigmoid)?;
                Ok(t.sum_squares(s))
            }),
            vec![
                random(&[2, 3, 3, 3], rng, 1.0),
                random(&[3], rng, 1.0),
                random(&[3], rng, 1.0),
            ],
        ),
        (
            "global average pool/dense",
            Box::new(|t: &mut Tape<f64>, v: &[Var]| {
                let p = t.global_avg_pool(v[0])?;
                let d = t.dense(p, v[1], v[2])?;
                let s = t.activation(d, Activation::Sigmoid)?;
                Ok(t.sum_squares(s))
            }),
            vec![
                random(&[3, 4, 5, 5], rng, 1.0),
                random(&[2, 4], rng, 1.0),
                random(&[2], rng, 1.0),
            ],
        ),
        (
            "clamped logs",
            Box::new(|t: &mut Tape<f64>, v: &[Var]| {
                let p = t.activation(v[0], Activation::Sigmoid)?;
                let a = t.log_clamped(p, 1e-7, false);
                let b = t.log_clamped(p, 1e-7, true);
                let r = t.reshape(b, &[10])?;
                let (sa, sb) = (t.sum(a), t.sum(r));
                t.add(sa, sb)
            }),
            vec![random(&[2, 5], rng, 1.5)],
        ),
    ]
}

fn small_generator(rng: &mut impl Rng) -> Generator<f64> {
    let cfg = GeneratorConfig {
        depth: 3,
        channels: 3,
        batch_norm: true,
        input_scale: 100.0,
    };
    let mut g = Generator::<f64>::new(cfg, 3).unwrap();
    // a live final layer and non-trivial normalisation, so every parameter matters
    for p in g.params_mut() {
        let s = p.shape().to_vec();
        *p = random(&s, rng, 0.4);
    }
    g
}

/// Generator loss through the whole Siamese model, analytic vs numeric, in parameter order
/// followed by ln γ.
fn generator_loss_check(cfg: &LossConfig, opts: &GradCheckOptions, rng: &mut impl Rng) -> Result<GradCheckReport> {
    let gen = small_generator(rng);
    let disc = Discriminator::<f64>::new(DiscriminatorConfig::scaled(0.0625), 4);
    let x = random(&[2, 1, 16, 16], rng, 30.0).map(|v| v + 1000.0);
    let y1 = x.zip_map(&random(&[2, 1, 16, 16], rng, 20.0), "y", |a, b| a + b)?;
    let y2 = x.zip_map(&random(&[2, 1, 16, 16], rng, 20.0), "y", |a, b| a + b)?;
    let gamma = GammaParam::<f64>::new(1.3, true)?;

    let eval = |g: &Generator<f64>, gm: &GammaParam<f64>, trainable: bool| -> Result<(f64, Vec<Tensor<f64>>)> {
        let mut tape = Tape::new();
        let gv = g.bind(&mut tape, trainable);
        let (leaf, gvar) = gm.bind(&mut tape, trainable);
        let dv = disc.bind(&mut tape, false);
        let (xv, a, b) = (
            tape.constant(x.clone()),
            tape.constant(y1.clone()),
            tape.constant(y2.clone()),
        );
        let mut stats = Vec::new();
        let (x1, x2) = siamese_forward(g, &mut tape, &gv, a, b, Some(&mut stats))?;
        let loss = generator_loss(&mut tape, xv, x1, x2, gvar, Some((&disc, &dv)), cfg)?;
        let value = tape.value(loss).item()?;
        if !trainable {
            return Ok((value, Vec::new()));
        }
        let mut grads = tape.backward(loss)?;
        let mut out: Vec<_> = gv.params().iter().map(|&v| grads.take(v, &tape)).collect();
        out.push(grads.take(leaf, &tape));
        Ok((value, out))
    };
    let (_, grads) = eval(&gen, &gamma, true)?;
    let mut params: Vec<Tensor<f64>> = gen.params().into_iter().cloned().collect();
    params.push(gamma.log_gamma.clone());
    let mut objective = |ps: &[Tensor<f64>]| -> Result<f64> {
        let mut g = gen.clone();
        for (slot, p) in g.params_mut().into_iter().zip(ps) {
            *slot = p.clone();
        }
        let mut gm = gamma.clone();
        gm.log_gamma = ps[ps.len() - 1].clone();
        Ok(eval(&g, &gm, false)?.0)
    };
    finite_diff_check(&mut objective, &grads, &params, opts)
}

fn discriminator_loss_check(opts: &GradCheckOptions, rng: &mut impl Rng) -> Result<GradCheckReport> {
    let disc = Discriminator::<f64>::new(DiscriminatorConfig::scaled(0.0625), 5);
    let real = random(&[3, 1, 16, 16], rng, 40.0);
    let fake = random(&[3, 1, 16, 16], rng, 60.0);
    let eval = |d: &Discriminator<f64>, trainable: bool| -> Result<(f64, Vec<Tensor<f64>>)> {
        let mut tape = Tape::new();
        let dv = d.bind(&mut tape, trainable);
        let (r, f) = (tape.constant(real.clone()), tape.constant(fake.clone()));
        let loss = discriminator_loss(&mut tape, d, &dv, r, f)?;
        let value = tape.value(loss).item()?;
        if !trainable {
            return Ok((value, Vec::new()));
        }
        let mut grads = tape.backward(loss)?;
        Ok((value, dv.params().iter().map(|&v| grads.take(v, &tape)).collect()))
    };
    let (_, grads) = eval(&disc, true)?;
    let params: Vec<Tensor<f64>> = disc.params().into_iter().cloned().collect();
    let mut objective = |ps: &[Tensor<f64>]| -> Result<f64> {
        let mut d = disc.clone();
        for (slot, p) in d.params_mut().into_iter().zip(ps) {
            *slot = p.clone();
        }
        Ok(eval(&d, false)?.0)
    };
    finite_diff_check(&mut objective, &grads, &params, opts)
}

/// Every differentiable primitive and both training losses against central differences.
pub fn grad_suite(seed: u64) -> Result<SuiteReport> {
    let opts = GradCheckOptions {
        seed,
        ..Default::default()
    };
    let mut rng = rng_for(seed, &[0x4752_4144]);
    let mut outcomes = Vec::new();
    for (name, build, params) in primitive_cases(&mut rng) {
        outcomes.push(grad_outcome(name, check_tape_gradients(&*build, &params, &opts)?));
    }
    outcomes.push(grad_outcome(
        "discriminator loss",
        discriminator_loss_check(&opts, &mut rng)?,
    ));
    for (name, lambda, alpha, form) in [
        (
            "generator loss (non-saturating)",
            2.0,
            0.5,
            AdversarialForm::NonSaturating,
        ),
        ("generator loss (minimax)", 2.0, 0.75, AdversarialForm::Minimax),
        ("generator loss (lambda 0)", 0.0, 1.0, AdversarialForm::NonSaturating),
    ] {
        let cfg = LossConfig {
            lambda,
            sigma_hu: 25.0,
            alpha,
            adversarial: form,
        };
        outcomes.push(grad_outcome(name, generator_loss_check(&cfg, &opts, &mut rng)?));
    }
    Ok(SuiteReport {
        suite: "grad",
        outcomes,
    })
}

/// Samples per distribution in the theorem suite.
pub const THEOREM_SUITE_SAMPLES: usize = 100_000;

fn laplace(rng: &mut impl Rng, std: f64) -> f64 {
    let b = std / 2f64.sqrt();
    let u: f64 = rng.random_range(-0.5..0.5);
    -b * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// Gaussian pairs must pass and recover σ within 3%; Bernoulli(±σ) and Laplace pairs must be
/// rejected.
pub fn theorem_suite(seed: u64) -> Result<SuiteReport> {
    let sigma = 25.0;
    let n = THEOREM_SUITE_SAMPLES;
    let mut rng = rng_for(seed, &[0x5448_4d31]);
    let normal = Normal::new(0.0, sigma).unwrap();
    let mut draw = |f: &mut dyn FnMut(&mut rand_chacha::ChaCha8Rng) -> f64| -> (Vec<f64>, Vec<f64>) {
        let a = (0..n).map(|_| f(&mut rng)).collect();
        let b = (0..n).map(|_| f(&mut rng)).collect();
        (a, b)
    };
    let (g1, g2) = draw(&mut |r| normal.sample(r));
    let (b1, b2) = draw(&mut |r| if r.random_bool(0.5) { sigma } else { -sigma });
    let (l1, l2) = draw(&mut |r| laplace(r, sigma));

    let mut outcomes = Vec::new();
    let g = theorem1_check(&g1, &g2, None)?;
    let rel = (g.component_std - sigma).abs() / sigma;
    outcomes.push(CheckOutcome {
        name: "gaussian pairs accepted".into(),
        pass: g.difference_gaussian && g.symmetric && rel < 0.03,
        detail: format!(
            "KS p={:.3}, sigma_hat={:.3} (true {sigma}, rel err {:.2}%), max|z|={:.2}",
            g.ks_p_value,
            g.component_std,
            100.0 * rel,
            g.max_cf_imag_z
        ),
    });
    for (name, a, b) in [("bernoulli", &b1, &b2), ("laplace", &l1, &l2)] {
        let r = theorem1_check(a, b, None)?;
        outcomes.push(CheckOutcome {
            name: format!("{name} pairs rejected"),
            pass: !r.difference_gaussian,
            detail: format!("KS D={:.4}, p={:.2e}", r.ks_statistic, r.ks_p_value),
        });
    }
    Ok(SuiteReport {
        suite: "theorem",
        outcomes,
    })
}

/// `|K(f)|²` of centred taps at every cell of an `n×n` DFT, by direct summation.
pub fn taps_power(taps: &Tensor<f64>, n: usize) -> Vec<f64> {
    let (kh, kw) = (taps.shape()[0], taps.shape()[1]);
    let (ry, rx) = ((kh / 2) as f64, (kw / 2) as f64);
    let mut out = vec![0.0; n * n];
    for ky in 0..n {
        for kx in 0..n {
            let mut acc = Complex::new(0.0, 0.0);
            for i in 0..kh {
                for j in 0..kw {
                    let ph = -2.0 * std::f64::consts::PI * (ky as f64 * (i as f64 - ry) + kx as f64 * (j as f64 - rx))
                        / n as f64;
                    acc += Complex::from_polar(taps.data()[i * kw + j], ph);
                }
            }
            out[ky * n + kx] = acc.norm_sqr();
        }
    }
    out
}

/// Largest per-bin relative deviation between two radial curves built on the same grid.
fn worst_bin(measured: &Nps2d, expected: &Nps2d) -> Result<f64> {
    let m = measured.radial(None)?;
    let e = expected.radial(None)?;
    Ok(m.power
        .iter()
        .zip(&e.power)
        .map(|(a, b)| (a - b).abs() / b)
        .fold(0.0, f64::max))
}

pub const NPS_SUITE_ROIS: usize = 200;
pub const NPS_SUITE_SIZE: usize = 64;

/// White and filtered noise against their analytic spectra, plus the Parseval identity.
pub fn nps_suite(seed: u64) -> Result<SuiteReport> {
    let (n, count, spacing, std) = (NPS_SUITE_SIZE, NPS_SUITE_ROIS, 0.5, 10.0);
    let mut outcomes = Vec::new();
    for (name, corr) in [
        ("white", Correlation::White),
        ("low-pass", Correlation::LowPass { sigma_px: 1.5 }),
        (
            "band-pass",
            Correlation::BandPass {
                narrow_px: 0.7,
                wide_px: 2.0,
            },
        ),
    ] {
        let spec = TextureSpec {
            base_std_hu: std,
            correlation: corr,
            seed,
            role: TextureRole::InputNoise,
        };
        let rois = (0..count as u64)
            .map(|i| sample_texture(&spec, n, n, i))
            .collect::<Result<Vec<_>>>()?;
        let measured = nps_2d(&rois, (spacing, spacing), Detrend::RoiMean)?;
        let gain = spec.gain();
        let power = taps_power(&spec.correlation.taps(), n)
            .into_iter()
            .map(|k| gain * gain * k * spacing * spacing)
            .collect();
        let expected = Nps2d {
            power,
            ..measured.clone()
        };
        let worst = worst_bin(&measured, &expected)?;
        outcomes.push(CheckOutcome {
            name: format!("{name} noise matches analytic NPS"),
            pass: worst < 0.10,
            detail: format!("worst bin deviation {:.2}% over {count} ROIs of {n}x{n}", 100.0 * worst),
        });

        let var: f64 = rois
            .iter()
            .map(|r| {
                let m = r.sum() / r.len() as f64;
                r.data().iter().map(|v| (v - m) * (v - m)).sum::<f64>() / r.len() as f64
            })
            .sum::<f64>()
            / count as f64;
        let integral = measured.integral();
        let err = (integral - var).abs() / var;
        outcomes.push(CheckOutcome {
            name: format!("{name} noise Parseval"),
            pass: err < 0.02,
            detail: format!("integral {integral:.4} vs variance {var:.4} ({:.2e} rel)", err),
        });
    }
    Ok(SuiteReport { suite: "nps", outcomes })
}
