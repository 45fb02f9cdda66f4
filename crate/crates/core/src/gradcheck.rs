//! Central finite-difference validation of analytic gradients.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{invalid, Result};
use crate::seeds::{rng_for, tag};
use crate::tensor::Tensor;

/// Builds a scalar loss on the tape from the parameter variables.
pub type BuildFn<'a> = &'a dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckOptions {
    pub probes: usize,
    pub h: f64,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            probes: 50,
            h: 1e-5,
            tolerance: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub probes: usize,
    /// (parameter index, element index) of the worst probe.
    pub worst: Option<(usize, usize)>,
    pub pass: bool,
}

/// Compare `gradient` against central differences of `objective` at randomly probed
/// coordinates of `params`.
///
/// Relative error is `|analytic − numeric| / max(|analytic|, |numeric|, floor)` where
/// `floor = 1e-6·(1 + |f|)` keeps coordinates with vanishing gradient from dividing by
/// rounding noise.
pub fn finite_diff_check(
    objective: &mut dyn FnMut(&[Tensor<f64>]) -> Result<f64>,
    gradient: &[Tensor<f64>],
    params: &[Tensor<f64>],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    if params.len() != gradient.len() {
        return invalid("gradcheck: gradient count differs from parameter count");
    }
    for (p, g) in params.iter().zip(gradient) {
        g.expect_shape("gradcheck", p.shape())?;
    }
    let total: usize = params.iter().map(Tensor::len).sum();
    if total == 0 {
        return invalid("gradcheck: no parameters");
    }
    let f0 = objective(params)?;
    let floor = 1e-6 * (1.0 + f0.abs());
    let mut rng = rng_for(opts.seed, &[tag::PROBE]);
    let mut work: Vec<Tensor<f64>> = params.to_vec();
    let mut max_rel: f64 = 0.0;
    let mut worst = None;
    for _ in 0..opts.probes {
        let mut flat = rng.random_range(0..total);
        let mut which = 0;
        while flat >= work[which].len() {
            flat -= work[which].len();
            which += 1;
        }
        let orig = work[which].data()[flat];
        work[which].data_mut()[flat] = orig + opts.h;
        let plus = objective(&work)?;
        work[which].data_mut()[flat] = orig - opts.h;
        let minus = objective(&work)?;
        work[which].data_mut()[flat] = orig;
        let numeric = (plus - minus) / (2.0 * opts.h);
        let analytic = gradient[which].data()[flat];
        let denom = analytic.abs().max(numeric.abs()).max(floor);
        let rel = (analytic - numeric).abs() / denom;
        if !(rel <= max_rel) {
            max_rel = rel;
            worst = Some((which, flat));
        }
    }
    Ok(GradCheckReport {
        max_rel_error: max_rel,
        probes: opts.probes,
        worst,
        pass: max_rel.is_finite() && max_rel < opts.tolerance,
    })
}

/// Tape-built scalar function of `params`, evaluated with gradients.
pub fn tape_value_and_grad(build: BuildFn<'_>, params: &[Tensor<f64>]) -> Result<(f64, Vec<Tensor<f64>>)> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    let value = tape.value(loss).item()?;
    let mut grads = tape.backward(loss)?;
    Ok((value, vars.iter().map(|&v| grads.take(v, &tape)).collect()))
}

/// Gradient check of a tape-built function against its own backward pass.
pub fn check_tape_gradients(
    build: BuildFn<'_>,
    params: &[Tensor<f64>],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let (_, grads) = tape_value_and_grad(build, params)?;
    let mut objective = |ps: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.constant(p.clone())).collect();
        let loss = build(&mut tape, &vars)?;
        tape.value(loss).item()
    };
    finite_diff_check(&mut objective, &grads, params, opts)
}
