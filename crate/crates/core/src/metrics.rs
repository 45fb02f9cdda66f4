//! Image-quality and texture statistics: PSNR, SSIM, noise level, radial noise power spectra,
//! Monte-Carlo bias/texture decomposition and the difference-Gaussianity checker.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{invalid, Result, TensorError};
use crate::tensor::Tensor;

fn image_dims(t: &Tensor<f64>) -> Result<(usize, usize)> {
    let s = t.shape();
    let (h, w) = match s.len() {
        0 | 1 => return invalid(format!("expected an image, got shape {s:?}")),
        n => (s[n - 2], s[n - 1]),
    };
    if s[..s.len() - 2].iter().product::<usize>() != 1 {
        return invalid(format!("expected a single image, got shape {s:?}"));
    }
    Ok((h, w))
}

fn same_shape(a: &Tensor<f64>, b: &Tensor<f64>, op: &'static str) -> Result<()> {
    b.expect_shape(op, a.shape())
}

/// Peak signal-to-noise ratio in dB; `+∞` for identical images.
pub fn psnr(a: &Tensor<f64>, b: &Tensor<f64>, peak: f64) -> Result<f64> {
    same_shape(a, b, "psnr")?;
    if !(peak > 0.0) {
        return invalid(format!("psnr peak must be positive, got {peak}"));
    }
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Normalised 1-D Gaussian window used by [`ssim`].
pub fn ssim_window() -> [f64; SSIM_WINDOW] {
    let c = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

fn filter_valid(img: &[f64], h: usize, w: usize, win: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = win.len();
    let (ho, wo) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * wo];
    for i in 0..h {
        for j in 0..wo {
            rows[i * wo + j] = (0..k).map(|t| win[t] * img[i * w + j + t]).sum();
        }
    }
    let mut out = vec![0.0; ho * wo];
    for i in 0..ho {
        for j in 0..wo {
            out[i * wo + j] = (0..k).map(|t| win[t] * rows[(i + t) * wo + j]).sum();
        }
    }
    (out, ho, wo)
}

/// Mean structural similarity over all fully contained 11×11 Gaussian windows.
pub fn ssim(a: &Tensor<f64>, b: &Tensor<f64>, dynamic_range: f64) -> Result<f64> {
    same_shape(a, b, "ssim")?;
    let (h, w) = image_dims(a)?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return invalid(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"
        ));
    }
    if !(dynamic_range > 0.0) {
        return invalid("ssim dynamic range must be positive");
    }
    let win = ssim_window();
    let (x, y) = (a.data(), b.data());
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(p, q)| p * q).collect();
    let (mx, ho, wo) = filter_valid(x, h, w, &win);
    let (my, ..) = filter_valid(y, h, w, &win);
    let (sxx, ..) = filter_valid(&xx, h, w, &win);
    let (syy, ..) = filter_valid(&yy, h, w, &win);
    let (sxy, ..) = filter_valid(&xy, h, w, &win);
    let c1 = (SSIM_K1 * dynamic_range).powi(2);
    let c2 = (SSIM_K2 * dynamic_range).powi(2);
    let total: f64 = (0..ho * wo)
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cxy = sxy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / (ho * wo) as f64)
}

/// Unbiased sample standard deviation after mean removal.
pub fn noise_std(region: &[f64]) -> Result<f64> {
    if region.len() < 100 {
        return invalid(format!("noise_std needs at least 100 pixels, got {}", region.len()));
    }
    let n = region.len() as f64;
    let m = region.iter().sum::<f64>() / n;
    Ok((region.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0)).sqrt())
}

/// How each ROI is made zero-mean before the transform.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Detrend {
    /// Subtract each ROI's own mean (pure-noise inputs).
    RoiMean,
    /// Subtract the pixelwise ensemble mean (repeated scans of one object).
    EnsembleMean,
}

/// Ensemble-averaged 2-D noise power spectrum, unshifted DFT layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Nps2d {
    pub n: usize,
    pub spacing_mm: (f64, f64),
    /// `n×n`, HU²·mm², index `[ky·n + kx]`.
    pub power: Vec<f64>,
    pub ensemble_count: usize,
}

/// Radially binned noise power spectrum.
#[derive(Clone, Debug, PartialEq)]
pub struct NpsCurve {
    /// cycles/mm, strictly increasing over (0, Nyquist].
    pub bin_centers: Vec<f64>,
    /// HU²·mm².
    pub power: Vec<f64>,
    pub ensemble_count: usize,
}

fn signed_index(k: usize, n: usize) -> f64 {
    if k <= n / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

/// 2-D transform of each mean-removed ROI, `|DFT|²·(dx·dy)/(Nx·Ny)`, averaged over the ensemble.
pub fn nps_2d(rois: &[Tensor<f64>], spacing_mm: (f64, f64), detrend: Detrend) -> Result<Nps2d> {
    if rois.len() < 2 {
        return invalid(format!("NPS needs at least 2 ROIs, got {}", rois.len()));
    }
    let (n, w) = image_dims(&rois[0])?;
    if n != w || !n.is_power_of_two() {
        return invalid(format!("NPS ROIs must be square with a power-of-two side, got {n}x{w}"));
    }
    for r in rois {
        let d = image_dims(r)?;
        if d != (n, n) {
            return Err(TensorError::ShapeMismatch {
                op: "nps ROI",
                expected: vec![n, n],
                got: vec![d.0, d.1],
            });
        }
    }
    if !(spacing_mm.0 > 0.0 && spacing_mm.1 > 0.0) {
        return invalid("pixel spacing must be positive");
    }
    let ensemble_mean: Vec<f64> = match detrend {
        Detrend::EnsembleMean => (0..n * n)
            .map(|i| rois.iter().map(|r| r.data()[i]).sum::<f64>() / rois.len() as f64)
            .collect(),
        Detrend::RoiMean => Vec::new(),
    };
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(n);
    let mut acc = vec![0.0; n * n];
    let mut buf = vec![Complex::new(0.0, 0.0); n * n];
    let mut col = vec![Complex::new(0.0, 0.0); n];
    for r in rois {
        let d = r.data();
        let mean = d.iter().sum::<f64>() / (n * n) as f64;
        for (i, c) in buf.iter_mut().enumerate() {
            let base = match detrend {
                Detrend::RoiMean => mean,
                Detrend::EnsembleMean => ensemble_mean[i],
            };
            *c = Complex::new(d[i] - base, 0.0);
        }
        for row in buf.chunks_mut(n) {
            fft.process(row);
        }
        for kx in 0..n {
            for ky in 0..n {
                col[ky] = buf[ky * n + kx];
            }
            fft.process(&mut col);
            for ky in 0..n {
                buf[ky * n + kx] = col[ky];
            }
        }
        for (a, c) in acc.iter_mut().zip(&buf) {
            *a += c.norm_sqr();
        }
    }
    // ensemble-mean detrending removes one degree of freedom per pixel
    let dof = match detrend {
        Detrend::RoiMean => rois.len() as f64,
        Detrend::EnsembleMean => rois.len() as f64 - 1.0,
    };
    let scale = spacing_mm.0 * spacing_mm.1 / (n * n) as f64 / dof;
    acc.iter_mut().for_each(|v| *v *= scale);
    Ok(Nps2d {
        n,
        spacing_mm,
        power: acc,
        ensemble_count: rois.len(),
    })
}

impl Nps2d {
    /// Frequency of DFT cell `(ky, kx)` in cycles/mm.
    pub fn frequency(&self, ky: usize, kx: usize) -> (f64, f64) {
        let n = self.n as f64;
        (
            signed_index(ky, self.n) / (n * self.spacing_mm.0),
            signed_index(kx, self.n) / (n * self.spacing_mm.1),
        )
    }

    /// Area of one frequency cell, (cycles/mm)².
    pub fn cell_area(&self) -> f64 {
        let n = self.n as f64;
        1.0 / (n * self.spacing_mm.0 * n * self.spacing_mm.1)
    }

    /// `Σ NPS·Δf_x·Δf_y`, the variance carried by the spectrum.
    pub fn integral(&self) -> f64 {
        self.power.iter().sum::<f64>() * self.cell_area()
    }

    /// Bin width and count: one DFT cell per bin up to Nyquist unless `bins` overrides.
    pub fn binning(&self, bins: Option<usize>) -> Result<(f64, usize)> {
        let d = self.spacing_mm.0.max(self.spacing_mm.1);
        let nyquist = 1.0 / (2.0 * d);
        let count = bins.unwrap_or(self.n / 2);
        if count == 0 || count > self.n / 2 {
            return invalid(format!("bin count must lie in 1..={}, got {count}", self.n / 2));
        }
        Ok((nyquist / count as f64, count))
    }

    /// Assign each non-DC cell to the bin containing its radial frequency and average.
    pub fn radial(&self, bins: Option<usize>) -> Result<NpsCurve> {
        let (width, count) = self.binning(bins)?;
        let mut sum = vec![0.0; count];
        let mut cnt = vec![0usize; count];
        for ky in 0..self.n {
            for kx in 0..self.n {
                if ky == 0 && kx == 0 {
                    continue;
                }
                let (fy, fx) = self.frequency(ky, kx);
                let f = (fy * fy + fx * fx).sqrt();
                // bin k covers ((k-½)w, (k+½)w]
                let k = (f / width - 0.5).ceil() as isize;
                if k >= 1 && (k as usize) <= count {
                    sum[k as usize - 1] += self.power[ky * self.n + kx];
                    cnt[k as usize - 1] += 1;
                }
            }
        }
        if cnt.contains(&0) {
            return invalid("radial binning left an empty bin");
        }
        Ok(NpsCurve {
            bin_centers: (1..=count).map(|k| k as f64 * width).collect(),
            power: sum.iter().zip(&cnt).map(|(s, &c)| s / c as f64).collect(),
            ensemble_count: self.ensemble_count,
        })
    }
}

/// Radially averaged NPS of an ROI ensemble.
pub fn nps_radial(
    rois: &[Tensor<f64>],
    spacing_mm: (f64, f64),
    detrend: Detrend,
    bins: Option<usize>,
) -> Result<NpsCurve> {
    nps_2d(rois, spacing_mm, detrend)?.radial(bins)
}

/// L2 distance between curves each scaled to unit total power.
pub fn nps_distance(a: &NpsCurve, b: &NpsCurve) -> Result<f64> {
    if a.bin_centers.len() != b.bin_centers.len()
        || a.bin_centers
            .iter()
            .zip(&b.bin_centers)
            .any(|(x, y)| (x - y).abs() > 1e-12 * x.abs().max(1.0))
    {
        return invalid("nps_distance: curves use different binning");
    }
    let (sa, sb) = (a.power.iter().sum::<f64>(), b.power.iter().sum::<f64>());
    if !(sa > 0.0 && sb > 0.0) {
        return invalid("nps_distance: a curve has zero total power");
    }
    Ok(a.power
        .iter()
        .zip(&b.power)
        .map(|(x, y)| (x / sa - y / sb).powi(2))
        .sum::<f64>()
        .sqrt())
}

/// Monte-Carlo decomposition of an estimator's output into bias and texture.
#[derive(Clone, Debug, PartialEq)]
pub struct BiasEstimate {
    /// `mean_m h(y_m) − x`.
    pub bias: Tensor<f64>,
    /// `h(y_m) − (x + bias)` for each draw.
    pub textures: Vec<Tensor<f64>>,
}

/// Estimate `B̂_X` and texture samples from outputs of `M ≥ 2` noisy realisations of `x`.
pub fn estimate_bias(x: &Tensor<f64>, outputs: &[Tensor<f64>]) -> Result<BiasEstimate> {
    if outputs.len() < 2 {
        return invalid(format!("bias estimation needs at least 2 draws, got {}", outputs.len()));
    }
    for o in outputs {
        o.expect_shape("estimate_bias", x.shape())?;
    }
    let m = outputs.len() as f64;
    let mean = Tensor::from_fn(x.shape(), |i| outputs.iter().map(|o| o.data()[i]).sum::<f64>() / m);
    let bias = mean.zip_map(x, "bias", |a, b| a - b)?;
    let center = x.zip_map(&bias, "bias", |a, b| a + b)?;
    let textures = outputs
        .iter()
        .map(|o| o.zip_map(&center, "texture", |a, b| a - b))
        .collect::<Result<_>>()?;
    Ok(BiasEstimate { bias, textures })
}

/// Run `generator` on `draws` independent corruptions of `x` and decompose the outputs.
pub fn estimate_bias_with(
    x: &Tensor<f64>,
    draws: usize,
    mut corrupt: impl FnMut(u64) -> Result<Tensor<f64>>,
    mut generator: impl FnMut(&Tensor<f64>) -> Result<Tensor<f64>>,
) -> Result<BiasEstimate> {
    let outputs = (0..draws as u64)
        .map(|m| generator(&corrupt(m)?))
        .collect::<Result<Vec<_>>>()?;
    estimate_bias(x, &outputs)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleRole {
    EstimationNoise,
    Target,
}

/// Zero-mean texture patches of one role.
#[derive(Clone, Debug, PartialEq)]
pub struct TextureSampleSet {
    pub role: SampleRole,
    pub samples: Vec<Tensor<f64>>,
}

impl TextureSampleSet {
    pub fn pooled(&self) -> Vec<f64> {
        self.samples.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    /// |mean| / std over all pooled pixels.
    pub fn mean_to_std(&self) -> f64 {
        let v = self.pooled();
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let s = (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt();
        m.abs() / s
    }
}

pub const THEOREM_MIN_SAMPLES: usize = 10_000;
pub const THEOREM_ALPHA: f64 = 0.01;
const CF_PROBES: [f64; 5] = [0.5, 1.0, 1.5, 2.0, 3.0];

#[derive(Clone, Debug, PartialEq)]
pub struct TheoremReport {
    pub samples: usize,
    pub ks_statistic: f64,
    pub ks_p_value: f64,
    /// δ₁ − δ₂ is consistent with N(0, 2σ²) at the 1% level.
    pub difference_gaussian: bool,
    /// std(δ₁ − δ₂)/√2.
    pub component_std: f64,
    /// Largest |z| of the empirical characteristic function's imaginary part.
    pub max_cf_imag_z: f64,
    /// δ₁ is consistent with a distribution symmetric about zero.
    pub symmetric: bool,
    pub note: &'static str,
}

/// Asymptotic Kolmogorov survival function with Stephens' small-sample correction.
pub fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample Kolmogorov–Smirnov statistic against `N(0, std²)`.
pub fn ks_statistic_normal(samples: &[f64], std: f64) -> f64 {
    let normal = Normal::new(0.0, std).expect("positive std");
    let mut s = samples.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = normal.cdf(v);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Check that paired draws behave as the texture theorem predicts: their difference is
/// Gaussian and each draw is symmetric about zero.
///
/// With `sigma_hypothesis` the difference is tested against `N(0, 2σ²)`; otherwise σ is the
/// implied component std. Independence of the draws is assumed, not tested.
pub fn theorem1_check(d1: &[f64], d2: &[f64], sigma_hypothesis: Option<f64>) -> Result<TheoremReport> {
    if d1.len() != d2.len() {
        return invalid("theorem check: paired sample sets differ in length");
    }
    if d1.len() < THEOREM_MIN_SAMPLES {
        return invalid(format!(
            "theorem check needs at least {THEOREM_MIN_SAMPLES} paired samples, got {}",
            d1.len()
        ));
    }
    let n = d1.len();
    let diff: Vec<f64> = d1.iter().zip(d2).map(|(a, b)| a - b).collect();
    let diff_std = (diff.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    let component_std = diff_std / 2f64.sqrt();
    if !(component_std > 0.0) {
        return invalid("theorem check: samples have zero spread");
    }
    let sigma = sigma_hypothesis.unwrap_or(component_std);
    let ks = ks_statistic_normal(&diff, sigma * 2f64.sqrt());
    let p = ks_p_value(ks, n);

    let z_crit = Normal::new(0.0, 1.0)
        .unwrap()
        .inverse_cdf(1.0 - THEOREM_ALPHA / (2.0 * CF_PROBES.len() as f64));
    let max_z = CF_PROBES
        .iter()
        .map(|&t| {
            let w = t / component_std;
            let (s, s2) = d1.iter().fold((0.0, 0.0), |(a, b), &v| {
                let q = (w * v).sin();
                (a + q, b + q * q)
            });
            let mean = s / n as f64;
            let se = (s2 / n as f64 / n as f64).sqrt();
            if se > 0.0 {
                (mean / se).abs()
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max);
    Ok(TheoremReport {
        samples: n,
        ks_statistic: ks,
        ks_p_value: p,
        difference_gaussian: p >= THEOREM_ALPHA,
        component_std,
        max_cf_imag_z: max_z,
        symmetric: max_z < z_crit,
        note: "independence of the paired draws is assumed, not tested",
    })
}

/// [`theorem1_check`] on two sample sets of paired patches.
pub fn theorem1_check_sets(
    first: &TextureSampleSet,
    second: &TextureSampleSet,
    sigma_hypothesis: Option<f64>,
) -> Result<TheoremReport> {
    theorem1_check(&first.pooled(), &second.pooled(), sigma_hypothesis)
}
