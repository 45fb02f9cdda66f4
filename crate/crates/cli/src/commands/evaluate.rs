use std::fmt::Write as _;
use std::path::Path;

use tmgan::evaluation::{interior_rois, texture_summary, TextureSummary};
use tmgan::metrics::{nps_distance, psnr, ssim, NpsCurve};
use tmgan::Tensor;

use crate::layout;
use crate::{CliError, CliResult, EvaluateArgs};

pub const METRICS_HEADER: &str = "method,psnr_db,ssim,noise_std_hu,nps_distance_to_target";
pub const NPS_HEADER: &str = "frequency_per_mm,nps_hu2_mm2";

/// One row of the metrics table; absent fields are written empty.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub method: String,
    pub psnr_db: Option<f64>,
    pub ssim: Option<f64>,
    pub noise_std_hu: Option<f64>,
    pub nps_distance: Option<f64>,
}

impl MetricsRow {
    pub fn csv(&self) -> String {
        let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{}",
            self.method,
            f(self.psnr_db),
            f(self.ssim),
            f(self.noise_std_hu),
            f(self.nps_distance)
        )
    }
}

pub fn nps_csv(curve: &NpsCurve) -> String {
    let mut s = format!("{NPS_HEADER}\n");
    for (f, p) in curve.bin_centers.iter().zip(&curve.power) {
        let _ = writeln!(s, "{f},{p}");
    }
    s
}

/// Images `name(i)` for i in 0..count, or None when the first is missing.
fn read_series(dir: &Path, count: usize, name: fn(usize) -> String) -> CliResult<Option<Vec<Tensor<f64>>>> {
    if count == 0 || !dir.join(name(0)).exists() {
        return Ok(None);
    }
    (0..count)
        .map(|i| Ok(layout::read_image(&dir.join(name(i)))?.pixels))
        .collect::<CliResult<Vec<_>>>()
        .map(Some)
}

/// Mean PSNR and SSIM over exams, with the peak set to each truth image's dynamic range.
pub fn fidelity(outputs: &[Tensor<f64>], truth: &[Tensor<f64>]) -> CliResult<(f64, f64)> {
    let (mut p, mut s) = (0.0, 0.0);
    for (o, t) in outputs.iter().zip(truth) {
        let hi = t.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = t.data().iter().cloned().fold(f64::INFINITY, f64::min);
        let range = hi - lo;
        if range <= 0.0 {
            return Err(CliError::Runtime("ground-truth exam has no dynamic range".into()));
        }
        p += psnr(o, t, range)?;
        s += ssim(o, t, range)?;
    }
    let n = truth.len() as f64;
    Ok((p / n, s / n))
}

struct Scored {
    row: MetricsRow,
    nps: Option<NpsCurve>,
}

#[allow(clippy::too_many_arguments)]
fn score(
    name: &str,
    dir: &Path,
    truth: &[Tensor<f64>],
    waters: usize,
    roi: usize,
    margin: usize,
    spacing: (f64, f64),
    target: &TextureSummary,
) -> CliResult<Scored> {
    let exams = read_series(dir, truth.len(), layout::exam_name)?;
    let water = read_series(dir, waters, layout::water_name)?;
    if exams.is_none() && water.is_none() {
        return Err(CliError::Runtime(format!(
            "{}: no exam_*.txim or water_*.txim images for method {name}",
            dir.display()
        )));
    }
    let (psnr_db, ssim) = match &exams {
        Some(e) => {
            let (p, s) = fidelity(e, truth)?;
            (Some(p), Some(s))
        }
        None => (None, None),
    };
    let texture = match &water {
        Some(w) => Some(texture_summary(&interior_rois(w, roi, margin)?, spacing)?),
        None => None,
    };
    let nps_distance = match &texture {
        Some(t) => Some(nps_distance(&t.nps, &target.nps)?),
        None => None,
    };
    Ok(Scored {
        row: MetricsRow {
            method: name.to_string(),
            psnr_db,
            ssim,
            noise_std_hu: texture.as_ref().map(|t| t.noise_std),
            nps_distance,
        },
        nps: texture.map(|t| t.nps),
    })
}

pub fn run(args: &EvaluateArgs) -> CliResult<()> {
    let cfg = layout::read_config(&args.data.join(layout::CONFIG))?;
    let spacing = (cfg.data.pixel_spacing_mm, cfg.data.pixel_spacing_mm);
    let roi = cfg.eval.roi_size;
    let margin = cfg.train.generator.depth + 1;
    let truth = read_series(
        &layout::eval_dir(&args.data, "truth"),
        cfg.eval.exams,
        layout::exam_name,
    )?
    .ok_or_else(|| CliError::Runtime(format!("{}: missing ground truth", args.data.display())))?;
    let target_dir = layout::eval_dir(&args.data, "target");
    let target_images: Vec<Tensor<f64>> = layout::list_images(&target_dir)?
        .iter()
        .map(|p| Ok(layout::read_image(p)?.pixels))
        .collect::<CliResult<_>>()?;
    let target = texture_summary(&target_images, spacing)?;

    let mut scored = vec![score(
        "input",
        &layout::eval_dir(&args.data, "input"),
        &truth,
        cfg.eval.water_draws,
        roi,
        margin,
        spacing,
        &target,
    )?];
    for (name, dir) in &args.methods {
        scored.push(score(
            name,
            dir,
            &truth,
            cfg.eval.water_draws,
            roi,
            margin,
            spacing,
            &target,
        )?);
    }
    scored.push(Scored {
        row: MetricsRow {
            method: "target".into(),
            psnr_db: None,
            ssim: None,
            noise_std_hu: Some(target.noise_std),
            nps_distance: Some(nps_distance(&target.nps, &target.nps)?),
        },
        nps: Some(target.nps.clone()),
    });

    std::fs::create_dir_all(&args.out)?;
    let mut table = format!("{METRICS_HEADER}\n");
    for s in &scored {
        table.push_str(&s.row.csv());
        table.push('\n');
        if let Some(curve) = &s.nps {
            std::fs::write(args.out.join(format!("nps_{}.csv", s.row.method)), nps_csv(curve))?;
        }
    }
    std::fs::write(args.out.join("metrics.csv"), &table)?;
    print!("{table}");
    Ok(())
}
