//! Texture differences, the discriminator's binary cross-entropy and the generator's
//! adversarial plus bias-reducing loss.

use crate::autodiff::{Tape, Var};
use crate::error::{invalid, Result, TensorError};
use crate::models::{Discriminator, DiscriminatorVars};
use crate::tensor::{Real, Tensor};

/// Probabilities are clamped to `[PROB_EPS, 1 − PROB_EPS]` before any logarithm.
pub const PROB_EPS: f64 = 1e-7;

/// Generator-side adversarial term.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdversarialForm {
    /// `−λ·log f(γΔx̂)`.
    NonSaturating,
    /// `+λ·log(1 − f(γΔx̂))`.
    Minimax,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    /// Texture weight, λ ≥ 0.
    pub lambda: f64,
    /// Data-fit scale in offset-HU, σ > 0.
    pub sigma_hu: f64,
    /// Bias-reduction mixing, α ∈ [0.5, 1].
    pub alpha: f64,
    pub adversarial: AdversarialForm,
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return invalid(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !(self.sigma_hu > 0.0) || !self.sigma_hu.is_finite() {
            return invalid(format!("sigma must be > 0, got {}", self.sigma_hu));
        }
        if !(0.5..=1.0).contains(&self.alpha) {
            return invalid(format!("alpha must lie in [0.5, 1.0], got {}", self.alpha));
        }
        Ok(())
    }
}

/// `γ·(x̂₁ − x̂₂)`. Anything common to both branches cancels before γ is applied.
pub fn texture_difference<T: Real>(tape: &mut Tape<T>, x1: Var, x2: Var, gamma: Var) -> Result<Var> {
    let d = tape.sub(x1, x2)?;
    tape.mul_scalar(d, gamma)
}

/// Untaped [`texture_difference`].
pub fn texture_difference_values<T: Real>(x1: &Tensor<T>, x2: &Tensor<T>, gamma: T) -> Result<Tensor<T>> {
    if !(gamma > T::zero()) {
        return invalid("gamma must be positive");
    }
    let d = x1.zip_map(x2, "texture_difference", |a, b| a - b)?;
    Ok(d.map(|v| v * gamma))
}

/// `ẑ₁ = αx̂₁ + (1−α)x̂₂`, `ẑ₂ = (1−α)x̂₁ + αx̂₂`.
pub fn bias_reducing_pair<T: Real>(tape: &mut Tape<T>, x1: Var, x2: Var, alpha: f64) -> Result<(Var, Var)> {
    if !(0.5..=1.0).contains(&alpha) {
        return invalid(format!("alpha must lie in [0.5, 1.0], got {alpha}"));
    }
    if alpha == 1.0 {
        return Ok((x1, x2));
    }
    let a = T::from_f64_lossy(alpha);
    let b = T::from_f64_lossy(1.0 - alpha);
    let (a1, b2) = (tape.scale(x1, a), tape.scale(x2, b));
    let (b1, a2) = (tape.scale(x1, b), tape.scale(x2, a));
    Ok((tape.add(a1, b2)?, tape.add(b1, a2)?))
}

fn batch_len<T: Real>(tape: &Tape<T>, v: Var) -> Result<usize> {
    let s = tape.value(v).shape();
    if s.len() != 1 || s[0] == 0 {
        return invalid(format!("expected a [K] probability vector, got {s:?}"));
    }
    Ok(s[0])
}

/// Binary cross-entropy from probabilities: `−(1/K)·Σ[log p_real + log(1 − p_fake)]`.
pub fn bce_from_probs<T: Real>(tape: &mut Tape<T>, p_real: Var, p_fake: Var) -> Result<Var> {
    let k = batch_len(tape, p_real)?;
    let kf = batch_len(tape, p_fake)?;
    if k != kf {
        return Err(TensorError::ShapeMismatch {
            op: "bce batches",
            expected: vec![k],
            got: vec![kf],
        });
    }
    let eps = T::from_f64_lossy(PROB_EPS);
    let lr = tape.log_clamped(p_real, eps, false);
    let lf = tape.log_clamped(p_fake, eps, true);
    let sr = tape.sum(lr);
    let sf = tape.sum(lf);
    let total = tape.add(sr, sf)?;
    Ok(tape.scale(total, T::from_f64_lossy(-1.0 / k as f64)))
}

/// Discriminator loss on real target differences `t₁ − t₂` and fake differences `γΔx̂`.
///
/// Pass `fake` as a constant to keep generator parameters out of the gradient.
pub fn discriminator_loss<T: Real>(
    tape: &mut Tape<T>,
    disc: &Discriminator<T>,
    vars: &DiscriminatorVars,
    real: Var,
    fake: Var,
) -> Result<Var> {
    let pr = disc.forward(tape, vars, real)?;
    let pf = disc.forward(tape, vars, fake)?;
    bce_from_probs(tape, pr, pf)
}

/// `(1/(2σ²K))·Σ_k(‖ẑ₁−x‖² + ‖ẑ₂−x‖²)`, norms summed over each patch.
pub fn bias_reducing_loss<T: Real>(tape: &mut Tape<T>, x: Var, x1: Var, x2: Var, cfg: &LossConfig) -> Result<Var> {
    let k = tape.value(x).shape()[0];
    let (z1, z2) = bias_reducing_pair(tape, x1, x2, cfg.alpha)?;
    let e1 = tape.sub(z1, x)?;
    let e2 = tape.sub(z2, x)?;
    let s1 = tape.sum_squares(e1);
    let s2 = tape.sum_squares(e2);
    let s = tape.add(s1, s2)?;
    let w = 1.0 / (2.0 * cfg.sigma_hu * cfg.sigma_hu * k as f64);
    Ok(tape.scale(s, T::from_f64_lossy(w)))
}

/// Adversarial term from discriminator probabilities on fake differences.
pub fn adversarial_term<T: Real>(tape: &mut Tape<T>, p_fake: Var, cfg: &LossConfig) -> Result<Var> {
    let k = batch_len(tape, p_fake)?;
    let eps = T::from_f64_lossy(PROB_EPS);
    let (logs, sign) = match cfg.adversarial {
        AdversarialForm::NonSaturating => (tape.log_clamped(p_fake, eps, false), -1.0),
        AdversarialForm::Minimax => (tape.log_clamped(p_fake, eps, true), 1.0),
    };
    let s = tape.sum(logs);
    Ok(tape.scale(s, T::from_f64_lossy(sign * cfg.lambda / k as f64)))
}

/// Full generator loss for Siamese outputs `x1`, `x2` of the batch with clean patches `x`.
///
/// With λ = 0 the discriminator is never consulted and the result is exactly
/// [`bias_reducing_loss`]. Discriminator parameters should be bound as constants.
pub fn generator_loss<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    x1: Var,
    x2: Var,
    gamma: Var,
    disc: Option<(&Discriminator<T>, &DiscriminatorVars)>,
    cfg: &LossConfig,
) -> Result<Var> {
    cfg.validate()?;
    let data = bias_reducing_loss(tape, x, x1, x2, cfg)?;
    if cfg.lambda == 0.0 {
        return Ok(data);
    }
    let (d, dv) =
        disc.ok_or_else(|| TensorError::Invalid("lambda > 0 requires a discriminator for the texture term".into()))?;
    let fake = texture_difference(tape, x1, x2, gamma)?;
    let p = d.forward(tape, dv, fake)?;
    let adv = adversarial_term(tape, p, cfg)?;
    tape.add(data, adv)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(lambda: f64, sigma: f64, alpha: f64) -> LossConfig {
        LossConfig {
            lambda,
            sigma_hu: sigma,
            alpha,
            adversarial: AdversarialForm::NonSaturating,
        }
    }

    #[test]
    fn equal_outputs_have_zero_difference() {
        let a = Tensor::<f64>::from_fn([2, 1, 4, 4], |i| (i as f64).sin() * 100.0);
        for g in [0.5, 1.0, 3.7] {
            let d = texture_difference_values(&a, &a, g).unwrap();
            assert!(d.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn constant_difference_scales() {
        let a = Tensor::<f64>::full([1, 1, 3, 3], 5.0);
        let b = Tensor::<f64>::full([1, 1, 3, 3], 2.0);
        let d = texture_difference_values(&a, &b, 2.0).unwrap();
        assert!(d.data().iter().all(|&v| v == 6.0));
    }

    #[test]
    fn clean_image_and_bias_cancel_exactly() {
        // integer-valued components keep every sum exact
        let n = 64;
        let x = Tensor::<f64>::from_fn([1, 1, 8, 8], |i| 1000.0 + (i % 7) as f64 * 40.0);
        let b = Tensor::<f64>::from_fn([1, 1, 8, 8], |i| (i % 5) as f64 - 2.0);
        let d1 = Tensor::<f64>::from_fn([1, 1, 8, 8], |i| ((i * 37) % 23) as f64 - 11.0);
        let d2 = Tensor::<f64>::from_fn([1, 1, 8, 8], |i| ((i * 53) % 19) as f64 - 9.0);
        let xh1 = Tensor::from_fn([1, 1, 8, 8], |i| x.data()[i] + b.data()[i] + d1.data()[i]);
        let xh2 = Tensor::from_fn([1, 1, 8, 8], |i| x.data()[i] + b.data()[i] + d2.data()[i]);
        let via_outputs = texture_difference_values(&xh1, &xh2, 1.5).unwrap();
        let via_texture = texture_difference_values(&d1, &d2, 1.5).unwrap();
        assert_eq!(via_outputs, via_texture);
        assert_eq!(via_outputs.len(), n);
    }

    #[test]
    fn rejects_mismatched_shapes() {
        let a = Tensor::<f64>::zeros([1, 1, 4, 4]);
        let b = Tensor::<f64>::zeros([1, 1, 4, 5]);
        assert!(texture_difference_values(&a, &b, 1.0).is_err());
        let mut tape = Tape::new();
        let (va, vb) = (tape.constant(a), tape.constant(b));
        let g = tape.constant(Tensor::scalar(1.0));
        assert!(texture_difference(&mut tape, va, vb, g).is_err());
    }

    fn probs(tape: &mut Tape<f64>, v: &[f64]) -> Var {
        tape.constant(Tensor::new([v.len()], v.to_vec()).unwrap())
    }

    #[test]
    fn bce_at_half_is_two_ln2() {
        let mut tape = Tape::new();
        let (r, f) = (probs(&mut tape, &[0.5; 4]), probs(&mut tape, &[0.5; 4]));
        let l = bce_from_probs(&mut tape, r, f).unwrap();
        assert!((tape.value(l).item().unwrap() - 2.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn bce_hand_values() {
        let mut tape = Tape::new();
        let (r, f) = (probs(&mut tape, &[0.8, 0.6]), probs(&mut tape, &[0.3, 0.1]));
        let l = bce_from_probs(&mut tape, r, f).unwrap();
        let expected = -0.5 * ((0.8f64.ln() + 0.6f64.ln()) + (0.7f64.ln() + 0.9f64.ln()));
        assert!((tape.value(l).item().unwrap() - expected).abs() < 1e-10);
    }

    #[test]
    fn bce_perfect_discriminator_tends_to_zero_and_stays_finite() {
        let mut tape = Tape::new();
        let (r, f) = (probs(&mut tape, &[1.0, 1.0]), probs(&mut tape, &[0.0, 0.0]));
        let l = bce_from_probs(&mut tape, r, f).unwrap();
        let v = tape.value(l).item().unwrap();
        assert!((0.0..1e-6).contains(&v), "{v}");
        // the opposite extreme is clamped, not infinite
        let (r, f) = (probs(&mut tape, &[0.0]), probs(&mut tape, &[1.0]));
        let l = bce_from_probs(&mut tape, r, f).unwrap();
        assert!(tape.value(l).item().unwrap().is_finite());
    }

    #[test]
    fn mixing_endpoints_and_sum() {
        let mut tape = Tape::<f64>::new();
        let x1 = tape.constant(Tensor::new([3], vec![1.0, 2.0, 3.0]).unwrap());
        let x2 = tape.constant(Tensor::new([3], vec![5.0, -4.0, 0.25]).unwrap());
        let (z1, z2) = bias_reducing_pair(&mut tape, x1, x2, 0.5).unwrap();
        assert_eq!(tape.value(z1), tape.value(z2));
        assert_eq!(tape.value(z1).data(), &[3.0, -1.0, 1.625]);
        let (z1, z2) = bias_reducing_pair(&mut tape, x1, x2, 1.0).unwrap();
        assert_eq!((z1, z2), (x1, x2));
        let (z1, z2) = bias_reducing_pair(&mut tape, x1, x2, 0.75).unwrap();
        for i in 0..3 {
            let s = tape.value(z1).data()[i] + tape.value(z2).data()[i];
            let t = tape.value(x1).data()[i] + tape.value(x2).data()[i];
            assert!((s - t).abs() < 1e-12);
        }
        assert!(bias_reducing_pair(&mut tape, x1, x2, 0.4).is_err());
    }

    fn gen_loss_value(x: f64, a: f64, b: f64, c: &LossConfig) -> f64 {
        let mut tape = Tape::new();
        let s = |tape: &mut Tape<f64>, v| tape.constant(Tensor::new([1, 1, 1, 1], vec![v]).unwrap());
        let (xv, av, bv) = (s(&mut tape, x), s(&mut tape, a), s(&mut tape, b));
        let g = tape.constant(Tensor::scalar(1.0));
        let l = generator_loss(&mut tape, xv, av, bv, g, None, c).unwrap();
        tape.value(l).item().unwrap()
    }

    #[test]
    fn generator_loss_hand_values() {
        assert_eq!(gen_loss_value(7.0, 7.0, 7.0, &cfg(0.0, 1.0, 0.5)), 0.0);
        assert_eq!(gen_loss_value(0.0, 2.0, 4.0, &cfg(0.0, 1.0, 1.0)), 10.0);
    }

    #[test]
    fn texture_term_requires_discriminator() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::<f64>::zeros([1, 1, 2, 2]));
        let g = tape.constant(Tensor::scalar(1.0));
        assert!(generator_loss(&mut tape, x, x, x, g, None, &cfg(0.4, 7.8, 0.5)).is_err());
    }

    #[test]
    fn operating_points_validate() {
        assert!(cfg(0.4, 7.8, 0.5).validate().is_ok());
        assert!(cfg(0.04, 50.0, 1.0).validate().is_ok());
        assert!(cfg(-0.1, 50.0, 1.0).validate().is_err());
        assert!(cfg(0.1, 0.0, 1.0).validate().is_err());
        assert!(cfg(0.1, 1.0, 1.1).validate().is_err());
    }
}
