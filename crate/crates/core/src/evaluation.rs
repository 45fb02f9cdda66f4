//! Held-out evaluation data and the texture/fidelity summaries computed on it.

use crate::error::{invalid, Result};
use crate::metrics::{noise_std, nps_radial, Detrend, NpsCurve};
use crate::seeds::{derive_seed, tag};
use crate::synthdata::{
    apply_deformation, generate_phantom, sample_texture_patch, water_image, DeformationSpec, TextureSpec,
};
use crate::tensor::Tensor;

/// A held-out exam: clean phantom and one corrupted acquisition of it.
#[derive(Clone, Debug, PartialEq)]
pub struct Exam {
    pub clean: Tensor<f64>,
    pub noisy: Tensor<f64>,
}

/// Exams drawn from phantom seeds disjoint from the training streams.
pub fn exam_set(
    seed: u64,
    count: usize,
    size: usize,
    shapes: usize,
    spacing_mm: f64,
    deformation: &DeformationSpec,
    noise: &TextureSpec,
) -> Result<Vec<Exam>> {
    (0..count as u64)
        .map(|i| {
            let mut ph = generate_phantom(derive_seed(seed, &[tag::EVAL, tag::PHANTOM, i]), size, size, shapes)?;
            ph.pixel_spacing_mm = (spacing_mm, spacing_mm);
            let gx = apply_deformation(&ph.pixels, deformation, ph.pixel_spacing_mm)?;
            let w = sample_texture_patch(
                &noise.reseeded(derive_seed(seed, &[tag::EVAL, tag::INPUT_NOISE, i])),
                size,
                size,
                0,
            )?;
            Ok(Exam {
                noisy: gx.zip_map(&w, "exam", |a, b| a + b)?,
                clean: ph.pixels,
            })
        })
        .collect()
}

/// Side of the water images that yield four interior ROIs of side `roi` with `margin` to spare.
pub fn water_size(roi: usize, margin: usize) -> usize {
    2 * roi + 2 * margin
}

/// Noisy acquisitions of a uniform water slab.
pub fn water_scans(seed: u64, count: usize, size: usize, noise: &TextureSpec) -> Result<Vec<Tensor<f64>>> {
    let water = water_image(size, size);
    (0..count as u64)
        .map(|i| {
            let w = sample_texture_patch(
                &noise.reseeded(derive_seed(seed, &[tag::EVAL, tag::INPUT_NOISE, 1 << 32 | i])),
                size,
                size,
                0,
            )?;
            water.zip_map(&w, "water scan", |a, b| a + b)
        })
        .collect()
}

/// Independent target-texture ROIs for reference spectra.
pub fn target_rois(seed: u64, count: usize, roi: usize, target: &TextureSpec) -> Result<Vec<Tensor<f64>>> {
    let spec = target.reseeded(derive_seed(seed, &[tag::EVAL, tag::TARGET_TEXTURE]));
    (0..count as u64)
        .map(|i| sample_texture_patch(&spec, roi, roi, i))
        .collect()
}

/// Non-overlapping `roi×roi` tiles from each image, keeping `margin` pixels off every edge.
pub fn interior_rois(images: &[Tensor<f64>], roi: usize, margin: usize) -> Result<Vec<Tensor<f64>>> {
    let mut out = Vec::new();
    for img in images {
        if img.rank() != 2 {
            return invalid(format!("expected [H,W] images, got {:?}", img.shape()));
        }
        let (h, w) = (img.shape()[0], img.shape()[1]);
        if h < roi + 2 * margin || w < roi + 2 * margin {
            return invalid(format!(
                "{h}x{w} image cannot hold a {roi}-pixel ROI with margin {margin}"
            ));
        }
        let (ny, nx) = ((h - 2 * margin) / roi, (w - 2 * margin) / roi);
        for a in 0..ny {
            for b in 0..nx {
                let (r0, c0) = (margin + a * roi, margin + b * roi);
                out.push(Tensor::from_fn([roi, roi], |k| {
                    img.data()[(r0 + k / roi) * w + c0 + k % roi]
                }));
            }
        }
    }
    Ok(out)
}

/// Noise level and radial NPS of a set of uniform-region ROIs.
#[derive(Clone, Debug, PartialEq)]
pub struct TextureSummary {
    pub noise_std: f64,
    pub nps: NpsCurve,
}

pub fn texture_summary(rois: &[Tensor<f64>], spacing_mm: (f64, f64)) -> Result<TextureSummary> {
    let pooled: Vec<f64> = rois
        .iter()
        .flat_map(|r| {
            let m = r.sum() / r.len() as f64;
            r.data().iter().map(move |v| v - m)
        })
        .collect();
    Ok(TextureSummary {
        noise_std: noise_std(&pooled)?,
        nps: nps_radial(rois, spacing_mm, Detrend::RoiMean, None)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interior_tiles_skip_margins() {
        let img = Tensor::from_fn([20, 20], |k| k as f64);
        let rois = interior_rois(std::slice::from_ref(&img), 8, 2).unwrap();
        assert_eq!(rois.len(), 4);
        assert_eq!(rois[0].data()[0], img.data()[2 * 20 + 2]);
        assert_eq!(rois[3].data()[0], img.data()[10 * 20 + 10]);
        assert!(interior_rois(&[img], 18, 2).is_err());
    }
}
