//! Synthetic ground truth, correlated noise and target textures, the deformation operator, and
//! the paired-patch dataset.
//!
//! Pixel values are offset-HU: air is 0, water is 1000.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Result};
use crate::seeds::{derive_seed, rng_for, tag};
use crate::tensor::Tensor;

pub const WATER_HU: f64 = 1000.0;
pub const AIR_HU: f64 = 0.0;
/// 40 cm display field of view over 512 pixels.
pub const DEFAULT_SPACING_MM: f64 = 0.78;

/// Insert contrasts relative to water. −1000 is left out so an insert never equals air.
const CONTRASTS: [f64; 14] = [
    30.0, -30.0, 60.0, -60.0, 100.0, -100.0, 200.0, -200.0, 400.0, -400.0, 700.0, -700.0, 1000.0, -950.0,
];

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomImage {
    /// `[H, W]`, offset-HU.
    pub pixels: Tensor<f64>,
    /// (dy, dx) in millimetres.
    pub pixel_spacing_mm: (f64, f64),
}

/// Water disc on air with `n_shapes` random ellipse/rectangle inserts.
pub fn generate_phantom(seed: u64, h: usize, w: usize, n_shapes: usize) -> Result<PhantomImage> {
    if h < 16 || w < 16 {
        return invalid(format!("phantom must be at least 16x16, got {h}x{w}"));
    }
    if n_shapes == 0 {
        return invalid("phantom needs at least one insert");
    }
    let mut rng = rng_for(seed, &[tag::PHANTOM]);
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let radius = 0.46 * h.min(w) as f64;
    let mut px = vec![AIR_HU; h * w];
    for i in 0..h {
        for j in 0..w {
            let (dy, dx) = (i as f64 - cy, j as f64 - cx);
            if dy * dy + dx * dx <= radius * radius {
                px[i * w + j] = WATER_HU;
            }
        }
    }
    let size = h.min(w) as f64;
    for _ in 0..n_shapes {
        let contrast = CONTRASTS[rng.random_range(0..CONTRASTS.len())];
        let value = WATER_HU + contrast;
        let r = rng.random_range(0.0..0.5) * radius;
        let phi = rng.random_range(0.0..std::f64::consts::TAU);
        let (sy, sx) = (cy + r * phi.sin(), cx + r * phi.cos());
        let a = rng.random_range(0.04..0.16) * size + 1.5;
        let b = rng.random_range(0.04..0.16) * size + 1.5;
        let theta = rng.random_range(0.0..std::f64::consts::PI);
        let ellipse = rng.random_bool(0.5);
        let (st, ct) = theta.sin_cos();
        for i in 0..h {
            for j in 0..w {
                let (dy, dx) = (i as f64 - sy, j as f64 - sx);
                let u = ct * dx + st * dy;
                let v = -st * dx + ct * dy;
                let inside = if ellipse {
                    (u / a).powi(2) + (v / b).powi(2) <= 1.0
                } else {
                    u.abs() <= a && v.abs() <= b
                };
                let (ry, rx) = (i as f64 - cy, j as f64 - cx);
                if inside && ry * ry + rx * rx <= radius * radius {
                    px[i * w + j] = value;
                }
            }
        }
    }
    Ok(PhantomImage {
        pixels: Tensor::new([h, w], px)?,
        pixel_spacing_mm: (DEFAULT_SPACING_MM, DEFAULT_SPACING_MM),
    })
}

/// Uniform water image, for noise and texture measurements.
pub fn water_image(h: usize, w: usize) -> Tensor<f64> {
    Tensor::full([h, w], WATER_HU)
}

/// Which independent random stream a texture draws from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TextureRole {
    InputNoise,
    Target,
}

impl TextureRole {
    fn tag(self) -> u64 {
        match self {
            TextureRole::InputNoise => tag::INPUT_NOISE,
            TextureRole::Target => tag::TARGET_TEXTURE,
        }
    }
}

/// Spatial correlation of a noise field.
#[derive(Clone, Debug, PartialEq)]
pub enum Correlation {
    White,
    /// Gaussian low-pass with the given standard deviation in pixels.
    LowPass {
        sigma_px: f64,
    },
    /// Difference of two unit-sum Gaussians: zero DC gain, peaked mid-band.
    BandPass {
        narrow_px: f64,
        wide_px: f64,
    },
    /// Explicit `[kh, kw]` filter taps (odd sizes, centred).
    Taps(Tensor<f64>),
}

fn gaussian_taps_1d(sigma: f64) -> Vec<f64> {
    let r = (4.0 * sigma).ceil().max(1.0) as isize;
    let raw: Vec<f64> = (-r..=r)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

fn outer(a: &[f64], b: &[f64]) -> Tensor<f64> {
    Tensor::from_fn([a.len(), b.len()], |i| a[i / b.len()] * b[i % b.len()])
}

fn pad_center(t: &Tensor<f64>, size: usize) -> Tensor<f64> {
    let (h, w) = (t.shape()[0], t.shape()[1]);
    let (oy, ox) = ((size - h) / 2, (size - w) / 2);
    let mut out = Tensor::zeros([size, size]);
    for i in 0..h {
        for j in 0..w {
            out.data_mut()[(i + oy) * size + j + ox] = t.data()[i * w + j];
        }
    }
    out
}

impl Correlation {
    pub fn validate(&self) -> Result<()> {
        match self {
            Correlation::White => Ok(()),
            Correlation::LowPass { sigma_px } if *sigma_px > 0.0 => Ok(()),
            Correlation::BandPass { narrow_px, wide_px } if *narrow_px > 0.0 && *wide_px > *narrow_px => Ok(()),
            Correlation::Taps(t)
                if t.rank() == 2
                    && t.shape()[0] % 2 == 1
                    && t.shape()[1] % 2 == 1
                    && t.data().iter().any(|&v| v != 0.0) =>
            {
                Ok(())
            }
            other => invalid(format!("invalid correlation kernel {other:?}")),
        }
    }

    /// Filter taps, `[kh, kw]` with odd sides.
    pub fn taps(&self) -> Tensor<f64> {
        match self {
            Correlation::White => Tensor::scalar(1.0).reshape([1, 1]).unwrap(),
            Correlation::LowPass { sigma_px } => {
                let g = gaussian_taps_1d(*sigma_px);
                outer(&g, &g)
            }
            Correlation::BandPass { narrow_px, wide_px } => {
                let gw = gaussian_taps_1d(*wide_px);
                let gn = gaussian_taps_1d(*narrow_px);
                let wide = outer(&gw, &gw);
                let narrow = pad_center(&outer(&gn, &gn), gw.len());
                narrow.zip_map(&wide, "band-pass taps", |a, b| a - b).unwrap()
            }
            Correlation::Taps(t) => t.clone(),
        }
    }

    /// Largest tap offset from the centre.
    pub fn radius(&self) -> usize {
        let t = self.taps();
        t.shape()[0].max(t.shape()[1]) / 2
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TextureSpec {
    pub base_std_hu: f64,
    pub correlation: Correlation,
    pub seed: u64,
    pub role: TextureRole,
}

impl TextureSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_std_hu >= 0.0) || !self.base_std_hu.is_finite() {
            return invalid(format!("texture std must be non-negative, got {}", self.base_std_hu));
        }
        self.correlation.validate()
    }

    /// The same spec on a different seed.
    pub fn reseeded(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    /// Gain that maps unit white noise through the taps to `base_std_hu`.
    pub fn gain(&self) -> f64 {
        let energy: f64 = self.correlation.taps().data().iter().map(|v| v * v).sum();
        self.base_std_hu / energy.sqrt()
    }
}

/// Circular convolution of `field` (`[h,w]`) with centred `taps`.
pub fn circular_filter(field: &Tensor<f64>, taps: &Tensor<f64>) -> Tensor<f64> {
    let (h, w) = (field.shape()[0], field.shape()[1]);
    let (kh, kw) = (taps.shape()[0], taps.shape()[1]);
    let (ry, rx) = ((kh / 2) as isize, (kw / 2) as isize);
    let f = field.data();
    let k = taps.data();
    let mut out = vec![0.0; h * w];
    for i in 0..h as isize {
        for j in 0..w as isize {
            let mut acc = 0.0;
            for a in 0..kh as isize {
                let si = (i - (a - ry)).rem_euclid(h as isize) as usize;
                let row = &f[si * w..(si + 1) * w];
                for b in 0..kw as isize {
                    let sj = (j - (b - rx)).rem_euclid(w as isize) as usize;
                    acc += k[(a * kw as isize + b) as usize] * row[sj];
                }
            }
            out[(i * w as isize + j) as usize] = acc;
        }
    }
    Tensor::new([h, w], out).unwrap()
}

/// Zero-mean correlated Gaussian field on an `h×w` torus. Distinct `draw_index` values give
/// independent draws.
pub fn sample_texture(spec: &TextureSpec, h: usize, w: usize, draw_index: u64) -> Result<Tensor<f64>> {
    spec.validate()?;
    if h == 0 || w == 0 {
        return invalid("texture field must be non-empty");
    }
    if spec.base_std_hu == 0.0 {
        return Ok(Tensor::zeros([h, w]));
    }
    let mut rng = rng_for(spec.seed, &[spec.role.tag(), draw_index]);
    let white = Tensor::from_fn([h, w], |_| rng.sample::<f64, _>(StandardNormal));
    let gain = spec.gain();
    let mut field = match &spec.correlation {
        Correlation::White => white,
        c => circular_filter(&white, &c.taps()),
    };
    let mean = field.sum() / (h * w) as f64;
    field.data_mut().iter_mut().for_each(|v| *v = (*v - mean) * gain);
    Ok(field)
}

/// `h×w` texture cropped from a larger torus so it carries no wrap-around correlation.
pub fn sample_texture_patch(spec: &TextureSpec, h: usize, w: usize, draw_index: u64) -> Result<Tensor<f64>> {
    spec.validate()?;
    let m = spec.correlation.radius();
    if m == 0 {
        return sample_texture(spec, h, w, draw_index);
    }
    let big = sample_texture(spec, h + 2 * m, w + 2 * m, draw_index)?;
    Ok(crop(&big, m, m, h, w))
}

pub fn crop(img: &Tensor<f64>, r: usize, c: usize, h: usize, w: usize) -> Tensor<f64> {
    let wi = img.shape()[1];
    Tensor::from_fn([h, w], |k| img.data()[(r + k / w) * wi + c + k % w])
}

#[derive(Clone, Debug, PartialEq)]
pub enum DeformationSpec {
    Identity,
    /// Separable Gaussian blur, (σy, σx) in millimetres.
    GaussianBlur {
        sigma_mm: (f64, f64),
    },
}

fn reflect(i: isize, n: usize) -> usize {
    // half-sample symmetric: … b a | a b c … c b | b …
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

/// Apply the forward operator G to a `[H,W]` image.
pub fn apply_deformation(x: &Tensor<f64>, spec: &DeformationSpec, spacing_mm: (f64, f64)) -> Result<Tensor<f64>> {
    if x.rank() != 2 {
        return invalid(format!("deformation expects [H,W], got {:?}", x.shape()));
    }
    match spec {
        DeformationSpec::Identity => Ok(x.clone()),
        DeformationSpec::GaussianBlur { sigma_mm } => {
            let (sy, sx) = *sigma_mm;
            if !(sy > 0.0 && sx > 0.0) {
                return invalid(format!("blur sigma must be positive, got ({sy}, {sx})"));
            }
            let ky = gaussian_taps_1d(sy / spacing_mm.0);
            let kx = gaussian_taps_1d(sx / spacing_mm.1);
            let (h, w) = (x.shape()[0], x.shape()[1]);
            let (ry, rx) = ((ky.len() / 2) as isize, (kx.len() / 2) as isize);
            let d = x.data();
            let mut tmp = vec![0.0; h * w];
            for i in 0..h {
                for j in 0..w {
                    tmp[i * w + j] = kx
                        .iter()
                        .enumerate()
                        .map(|(b, &k)| k * d[i * w + reflect(j as isize + b as isize - rx, w)])
                        .sum();
                }
            }
            let mut out = vec![0.0; h * w];
            for i in 0..h {
                for j in 0..w {
                    out[i * w + j] = ky
                        .iter()
                        .enumerate()
                        .map(|(a, &k)| k * tmp[reflect(i as isize + a as isize - ry, h) * w + j])
                        .sum();
                }
            }
            Ok(Tensor::new([h, w], out)?)
        }
    }
}

/// `y_i = G(x) + w_i` for draws `i = 1, 2` keyed off `seed`.
pub fn make_pair(
    x: &PhantomImage,
    deform: &DeformationSpec,
    noise: &TextureSpec,
    seed: u64,
) -> Result<(Tensor<f64>, Tensor<f64>)> {
    let gx = apply_deformation(&x.pixels, deform, x.pixel_spacing_mm)?;
    let (h, w) = (gx.shape()[0], gx.shape()[1]);
    let spec = noise.reseeded(derive_seed(noise.seed, &[seed]));
    let mut ys = Vec::with_capacity(2);
    for i in 1..=2u64 {
        let wn = sample_texture_patch(&spec, h, w, i)?;
        ys.push(gx.zip_map(&wn, "make_pair", |a, b| a + b)?);
    }
    let y2 = ys.pop().unwrap();
    Ok((ys.pop().unwrap(), y2))
}

/// Training sample: clean patch and two independently corrupted versions, each `[1,p,p]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchPair {
    pub x: Tensor<f64>,
    pub y1: Tensor<f64>,
    pub y2: Tensor<f64>,
    pub origin: PatchOrigin,
}

/// Everything needed to regenerate a patch bit-for-bit.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatchOrigin {
    pub index: usize,
    pub phantom: usize,
    pub phantom_seed: u64,
    pub row: usize,
    pub col: usize,
    pub pair_seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub phantom_count: usize,
    pub phantom_size: usize,
    pub phantom_shapes: usize,
    pub patch_size: usize,
    pub pairs_per_phantom: usize,
    pub split_fraction: f64,
    pub pixel_spacing_mm: f64,
    pub deformation: DeformationSpec,
    pub noise: TextureSpec,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: Vec<PatchPair>,
    pub validation: Vec<PatchPair>,
}

fn phantom_for(cfg: &DatasetConfig, phantom_seed: u64) -> Result<PhantomImage> {
    let mut p = generate_phantom(phantom_seed, cfg.phantom_size, cfg.phantom_size, cfg.phantom_shapes)?;
    p.pixel_spacing_mm = (cfg.pixel_spacing_mm, cfg.pixel_spacing_mm);
    Ok(p)
}

fn patch_from(cfg: &DatasetConfig, gx: &Tensor<f64>, x: &Tensor<f64>, origin: PatchOrigin) -> Result<PatchPair> {
    let p = cfg.patch_size;
    let spec = cfg.noise.reseeded(origin.pair_seed);
    let mut ys = Vec::with_capacity(2);
    for i in 1..=2u64 {
        let wn = sample_texture_patch(&spec, p, p, i)?;
        let g = crop(gx, origin.row, origin.col, p, p);
        ys.push(g.zip_map(&wn, "patch pair", |a, b| a + b)?.reshape([1, p, p])?);
    }
    let y2 = ys.pop().unwrap();
    Ok(PatchPair {
        x: crop(x, origin.row, origin.col, p, p).reshape([1, p, p])?,
        y1: ys.pop().unwrap(),
        y2,
        origin,
    })
}

/// Rebuild one patch from its recorded origin.
pub fn regenerate_patch(cfg: &DatasetConfig, origin: &PatchOrigin) -> Result<PatchPair> {
    let ph = phantom_for(cfg, origin.phantom_seed)?;
    let gx = apply_deformation(&ph.pixels, &cfg.deformation, ph.pixel_spacing_mm)?;
    patch_from(cfg, &gx, &ph.pixels, origin.clone())
}

/// Number of training patches for `total` patches at `fraction`.
pub fn split_sizes(total: usize, fraction: f64) -> Result<(usize, usize)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return invalid(format!("split fraction must lie in (0,1), got {fraction}"));
    }
    let train = (fraction * total as f64).round() as usize;
    if train == 0 || train == total {
        return invalid(format!(
            "split of {total} patches at {fraction} leaves an empty {} set; add patches or change the fraction",
            if train == 0 { "training" } else { "validation" }
        ));
    }
    Ok((train, total - train))
}

/// Random patches from seeded phantoms, shuffled and partitioned at the patch level.
pub fn build_dataset(cfg: &DatasetConfig) -> Result<Dataset> {
    cfg.noise.validate()?;
    if cfg.patch_size == 0 || cfg.patch_size > cfg.phantom_size {
        return invalid(format!(
            "patch size {} must lie in 1..={}",
            cfg.patch_size, cfg.phantom_size
        ));
    }
    let total = cfg.phantom_count * cfg.pairs_per_phantom;
    let (n_train, _) = split_sizes(total, cfg.split_fraction)?;
    let mut all = Vec::with_capacity(total);
    for j in 0..cfg.phantom_count {
        let phantom_seed = derive_seed(cfg.seed, &[tag::PHANTOM, j as u64]);
        let ph = phantom_for(cfg, phantom_seed)?;
        let gx = apply_deformation(&ph.pixels, &cfg.deformation, ph.pixel_spacing_mm)?;
        let mut rng = rng_for(cfg.seed, &[tag::PATCHES, j as u64]);
        let span = cfg.phantom_size - cfg.patch_size + 1;
        for k in 0..cfg.pairs_per_phantom {
            let origin = PatchOrigin {
                index: all.len(),
                phantom: j,
                phantom_seed,
                row: rng.random_range(0..span),
                col: rng.random_range(0..span),
                pair_seed: derive_seed(cfg.seed, &[tag::INPUT_NOISE, j as u64, k as u64]),
            };
            all.push(patch_from(cfg, &gx, &ph.pixels, origin)?);
        }
    }
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut rng_for(cfg.seed, &[tag::SPLIT]));
    let mut slots: Vec<Option<PatchPair>> = all.into_iter().map(Some).collect();
    let mut take = |i: usize| slots[i].take().expect("each index once");
    let train = order[..n_train].iter().map(|&i| take(i)).collect();
    let validation = order[n_train..].iter().map(|&i| take(i)).collect();
    Ok(Dataset { train, validation })
}

/// `count` independent target-texture patches of side `patch_size`.
pub fn build_texture_bank(spec: &TextureSpec, count: usize, patch_size: usize) -> Result<Vec<Tensor<f64>>> {
    (0..count as u64)
        .map(|i| sample_texture_patch(spec, patch_size, patch_size, i))
        .collect()
}
