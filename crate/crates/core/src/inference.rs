//! Applying trained generators to whole images and blending two model outputs.

use crate::error::{invalid, Result};
use crate::models::Generator;
use crate::tensor::{Real, Tensor};

/// Run the generator over a whole `[H,W]` image (fully convolutional, no tiling).
pub fn enhance<T: Real>(generator: &Generator<T>, y: &Tensor<f64>) -> Result<Tensor<f64>> {
    if y.rank() != 2 {
        return invalid(format!("enhance expects an [H,W] image, got {:?}", y.shape()));
    }
    let (h, w) = (y.shape()[0], y.shape()[1]);
    let input = y.clone().reshape([1, 1, h, w])?.cast::<T>();
    generator.apply(&input)?.cast::<f64>().reshape([h, w])
}

/// `η·a + (1−η)·b` pixelwise. The endpoints return the corresponding input exactly.
pub fn blend(tmgan: &Tensor<f64>, br: &Tensor<f64>, eta: f64) -> Result<Tensor<f64>> {
    if !(0.0..=1.0).contains(&eta) {
        return invalid(format!("eta must lie in [0, 1], got {eta}"));
    }
    br.expect_shape("blend", tmgan.shape())?;
    if eta == 1.0 {
        return Ok(tmgan.clone());
    }
    if eta == 0.0 {
        return Ok(br.clone());
    }
    // b + η(a − b) stays inside [min(a,b), max(a,b)] and is affine in η
    tmgan.zip_map(br, "blend", |a, b| b + eta * (a - b))
}
