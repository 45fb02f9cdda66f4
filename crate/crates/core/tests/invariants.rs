use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tmgan::checkpoint::{decode_any, decode_checkpoint, encode_checkpoint};
use tmgan::formats::ImageFile;
use tmgan::inference::{blend, enhance};
use tmgan::losses::texture_difference_values;
use tmgan::metrics::ks_p_value;
use tmgan::models::{Generator, GeneratorConfig};
use tmgan::trainer::{Precision, Task, TrainConfig, TrainState};
use tmgan::{FormatError, Tensor};

fn random_generator(seed: u64) -> Generator<f64> {
    let cfg = GeneratorConfig {
        depth: 4,
        channels: 4,
        batch_norm: false,
        input_scale: 100.0,
    };
    let mut g = Generator::<f64>::new(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in g.params_mut() {
        p.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.3..0.3));
    }
    g
}

fn image(h: usize, w: usize, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn([h, w], |_| 1000.0 + rng.random_range(-80.0..80.0))
}

#[test]
fn patch_and_whole_image_agree_away_from_patch_borders() {
    let g = random_generator(3);
    let r = g.config.receptive_radius();
    let img = image(48, 40, 4);
    let whole = enhance(&g, &img).unwrap();
    let (r0, c0, ph, pw) = (9, 7, 24, 20);
    let patch = Tensor::from_fn([ph, pw], |k| img.data()[(r0 + k / pw) * 40 + c0 + k % pw]);
    let out = enhance(&g, &patch).unwrap();
    let mut worst: f64 = 0.0;
    for i in r..ph - r {
        for j in r..pw - r {
            worst = worst.max((out.data()[i * pw + j] - whole.data()[(r0 + i) * 40 + c0 + j]).abs());
        }
    }
    assert!(worst <= 1e-6, "interior mismatch {worst}");
    // the generator did change the image, so the comparison is not vacuous
    assert!(whole.data().iter().zip(img.data()).any(|(a, b)| (a - b).abs() > 1e-3));
}

#[test]
fn texture_difference_cancels_shared_content_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 256;
    let base: Vec<f64> = (0..n).map(|_| rng.random_range(0..4000) as f64).collect();
    let d1: Vec<f64> = (0..n).map(|_| rng.random_range(-200..200) as f64).collect();
    let d2: Vec<f64> = (0..n).map(|_| rng.random_range(-200..200) as f64).collect();
    let t = |v: Vec<f64>| Tensor::new([n], v).unwrap();
    let x1 = t(base.iter().zip(&d1).map(|(b, d)| b + d).collect());
    let x2 = t(base.iter().zip(&d2).map(|(b, d)| b + d).collect());
    let gamma = 0.75;
    let got = texture_difference_values(&x1, &x2, gamma).unwrap();
    let want: Vec<f64> = d1.iter().zip(&d2).map(|(a, b)| gamma * (a - b)).collect();
    assert_eq!(got.data(), &want[..]);
}

#[test]
fn kolmogorov_tail_matches_tabulated_critical_values() {
    // asymptotic critical values of sqrt(n)·D: 1.3581 at 5%, 1.6276 at 1%
    let n = 1_000_000;
    let d = |lambda: f64| lambda / (n as f64).sqrt();
    assert!((ks_p_value(d(1.3581), n) - 0.05).abs() < 1e-3);
    assert!((ks_p_value(d(1.6276), n) - 0.01).abs() < 3e-4);
    assert_eq!(ks_p_value(0.0, n), 1.0);
}

fn small_train_config() -> TrainConfig {
    let mut cfg = TrainConfig::preset(Task::Denoise);
    cfg.generator.depth = 3;
    cfg.generator.channels = 2;
    cfg.discriminator = tmgan::models::DiscriminatorConfig::scaled(0.0625);
    cfg.precision = Precision::Test64;
    cfg
}

#[test]
fn every_single_byte_corruption_is_rejected() {
    let cfg = small_train_config();
    let state = TrainState::<f64>::init(&cfg).unwrap();
    let bytes = encode_checkpoint(&cfg, &state);
    assert_eq!(decode_checkpoint::<f64>(&bytes).unwrap().state, state);
    for i in (0..bytes.len()).step_by(7) {
        let mut bad = bytes.clone();
        bad[i] ^= 0x20;
        assert!(decode_any(&bad).is_err(), "flip at byte {i} accepted");
    }
    for cut in [0, 3, 10, bytes.len() / 2, bytes.len() - 1] {
        assert!(decode_any(&bytes[..cut]).is_err(), "truncation to {cut} accepted");
    }
    let mut longer = bytes.clone();
    longer.push(0);
    assert!(decode_any(&longer).is_err());
}

#[test]
fn image_truncation_is_rejected() {
    let img = ImageFile::new(image(5, 3, 1), (0.5, 0.7));
    let bytes = img.encode().unwrap();
    assert_eq!(ImageFile::decode(&bytes).unwrap(), img);
    for cut in 0..bytes.len() {
        assert!(ImageFile::decode(&bytes[..cut]).is_err());
    }
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(ImageFile::decode(&bad), Err(FormatError::BadMagic { .. })));
}

proptest! {
    #[test]
    fn blend_endpoints_are_exact_and_interior_is_affine(
        a in prop::collection::vec(-4000.0f64..4000.0, 16),
        b in prop::collection::vec(-4000.0f64..4000.0, 16),
        eta in 0.0f64..=1.0,
    ) {
        let ta = Tensor::new([4, 4], a.clone()).unwrap();
        let tb = Tensor::new([4, 4], b.clone()).unwrap();
        prop_assert_eq!(blend(&ta, &tb, 1.0).unwrap(), ta.clone());
        prop_assert_eq!(blend(&ta, &tb, 0.0).unwrap(), tb.clone());
        let m = blend(&ta, &tb, eta).unwrap();
        for ((&x, &y), &v) in a.iter().zip(&b).zip(m.data()) {
            let want = eta * x + (1.0 - eta) * y;
            prop_assert!((v - want).abs() <= 1e-12 * (1.0 + x.abs().max(y.abs())));
            prop_assert!(v >= x.min(y) - 1e-9 && v <= x.max(y) + 1e-9);
        }
    }
}

#[test]
fn blend_rejects_out_of_range_weights() {
    let t = Tensor::<f64>::zeros([2, 2]);
    assert!(blend(&t, &t, -0.1).is_err());
    assert!(blend(&t, &t, 1.5).is_err());
    assert!(blend(&t, &Tensor::zeros([2, 3]), 0.5).is_err());
}
