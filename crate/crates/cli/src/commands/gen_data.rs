use std::path::Path;

use tmgan::config::RunConfig;
use tmgan::evaluation::{exam_set, target_rois, water_scans, water_size};
use tmgan::formats::{Manifest, ManifestRow, Split};
use tmgan::seeds::{derive_seed, tag};
use tmgan::synthdata::{build_dataset, build_texture_bank, generate_phantom, PatchPair};
use tmgan::trainer::Task;

use crate::layout::{self, write_image};
use crate::{CliError, CliResult, GenDataArgs};

/// Number of target-texture ROIs written for the reference spectrum.
pub const TARGET_ROIS: usize = 64;

pub fn run(args: &GenDataArgs) -> CliResult<()> {
    let mut cfg = match &args.config {
        Some(p) => layout::read_config(p)?,
        None => RunConfig::preset(Task::Denoise),
    };
    if let Some(seed) = args.seed {
        cfg.set_seed(seed);
    }
    prepare_dir(&args.out, args.force)?;
    write_dataset(&cfg, &args.out)
}

fn prepare_dir(out: &Path, force: bool) -> CliResult<()> {
    if out.exists() {
        let non_empty = std::fs::read_dir(out)?.next().is_some();
        if non_empty && !force {
            return Err(CliError::Usage(format!(
                "{} is not empty; pass --force to overwrite",
                out.display()
            )));
        }
        for name in layout::ENTRIES {
            let p = out.join(name);
            if p.is_dir() {
                std::fs::remove_dir_all(&p)?;
            } else if p.is_file() {
                std::fs::remove_file(&p)?;
            }
        }
    }
    std::fs::create_dir_all(out)?;
    Ok(())
}

fn patch_pixels(t: &tmgan::Tensor<f64>) -> CliResult<tmgan::Tensor<f64>> {
    let p = t.shape()[1];
    Ok(t.clone().reshape([p, p])?)
}

/// Write every artifact of `cfg` under `out`, which must exist.
pub fn write_dataset(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let data = &cfg.data;
    let spacing = (data.pixel_spacing_mm, data.pixel_spacing_mm);
    for dir in [layout::PHANTOMS, layout::PATCHES, layout::BANK] {
        std::fs::create_dir_all(out.join(dir))?;
    }
    for part in ["input", "truth", "target"] {
        std::fs::create_dir_all(layout::eval_dir(out, part))?;
    }
    std::fs::write(out.join(layout::CONFIG), cfg.to_text())?;

    for j in 0..data.phantom_count {
        let ph = generate_phantom(
            derive_seed(data.seed, &[tag::PHANTOM, j as u64]),
            data.phantom_size,
            data.phantom_size,
            data.phantom_shapes,
        )?;
        write_image(&layout::phantom_path(out, j), ph.pixels, spacing)?;
    }

    let set = build_dataset(data)?;
    let mut manifest = Manifest::default();
    let mut rows = |pairs: &[PatchPair], split: Split| -> CliResult<()> {
        for pair in pairs {
            let i = pair.origin.index;
            write_image(&layout::patch_path(out, i, "x"), patch_pixels(&pair.x)?, spacing)?;
            write_image(&layout::patch_path(out, i, "y1"), patch_pixels(&pair.y1)?, spacing)?;
            write_image(&layout::patch_path(out, i, "y2"), patch_pixels(&pair.y2)?, spacing)?;
            manifest.rows.push(ManifestRow {
                split,
                origin: pair.origin.clone(),
            });
        }
        Ok(())
    };
    rows(&set.train, Split::Train)?;
    rows(&set.validation, Split::Validation)?;
    std::fs::write(out.join(layout::MANIFEST), manifest.to_csv())?;

    for (i, t) in build_texture_bank(&cfg.target, cfg.target_bank, data.patch_size)?
        .into_iter()
        .enumerate()
    {
        write_image(&layout::bank_path(out, i), t, spacing)?;
    }

    let seed = cfg.seed();
    let exams = exam_set(
        seed,
        cfg.eval.exams,
        data.phantom_size,
        data.phantom_shapes,
        data.pixel_spacing_mm,
        &data.deformation,
        &data.noise,
    )?;
    for (i, e) in exams.into_iter().enumerate() {
        write_image(
            &layout::eval_dir(out, "input").join(layout::exam_name(i)),
            e.noisy,
            spacing,
        )?;
        write_image(
            &layout::eval_dir(out, "truth").join(layout::exam_name(i)),
            e.clean,
            spacing,
        )?;
    }
    let margin = cfg.train.generator.depth + 1;
    let size = water_size(cfg.eval.roi_size, margin);
    for (i, w) in water_scans(seed, cfg.eval.water_draws, size, &data.noise)?
        .into_iter()
        .enumerate()
    {
        write_image(&layout::eval_dir(out, "input").join(layout::water_name(i)), w, spacing)?;
    }
    for (i, t) in target_rois(seed, TARGET_ROIS, cfg.eval.roi_size, &cfg.target)?
        .into_iter()
        .enumerate()
    {
        write_image(
            &layout::eval_dir(out, "target").join(layout::target_name(i)),
            t,
            spacing,
        )?;
    }
    Ok(())
}
