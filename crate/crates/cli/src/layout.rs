//! On-disk layout of an exported dataset.
//!
//! ```text
//! config.txt                 resolved run configuration
//! manifest.csv               one row per patch with the seeds that regenerate it
//! phantoms/phantom_NNN.txim  clean phantoms
//! patches/patch_NNNNN_{x,y1,y2}.txim
//! bank/target_NNNNN.txim     target-texture patches
//! eval/input/{exam,water}_NNN.txim
//! eval/truth/exam_NNN.txim
//! eval/target/target_NNN.txim
//! ```

use std::path::{Path, PathBuf};

use tmgan::config::RunConfig;
use tmgan::formats::{ImageFile, Manifest, Split};
use tmgan::synthdata::PatchPair;
use tmgan::Tensor;

use crate::{CliError, CliResult};

pub const CONFIG: &str = "config.txt";
pub const MANIFEST: &str = "manifest.csv";
pub const PHANTOMS: &str = "phantoms";
pub const PATCHES: &str = "patches";
pub const BANK: &str = "bank";
pub const EVAL: &str = "eval";

/// Everything `gen-data` writes at the top level, in removal order for `--force`.
pub const ENTRIES: [&str; 6] = [CONFIG, MANIFEST, PHANTOMS, PATCHES, BANK, EVAL];

pub fn phantom_path(root: &Path, j: usize) -> PathBuf {
    root.join(PHANTOMS).join(format!("phantom_{j:03}.txim"))
}

pub fn patch_path(root: &Path, index: usize, part: &str) -> PathBuf {
    root.join(PATCHES).join(format!("patch_{index:05}_{part}.txim"))
}

pub fn bank_path(root: &Path, i: usize) -> PathBuf {
    root.join(BANK).join(format!("target_{i:05}.txim"))
}

pub fn eval_dir(root: &Path, part: &str) -> PathBuf {
    root.join(EVAL).join(part)
}

pub fn exam_name(i: usize) -> String {
    format!("exam_{i:03}.txim")
}

pub fn water_name(i: usize) -> String {
    format!("water_{i:03}.txim")
}

pub fn target_name(i: usize) -> String {
    format!("target_{i:03}.txim")
}

pub fn read_image(path: &Path) -> CliResult<ImageFile> {
    ImageFile::read(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

pub fn write_image(path: &Path, pixels: Tensor<f64>, spacing_mm: (f64, f64)) -> CliResult<()> {
    ImageFile::new(pixels, spacing_mm)
        .write(path)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

/// Parse a run configuration file; any problem with it is a usage error.
pub fn read_config(path: &Path) -> CliResult<RunConfig> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    RunConfig::parse_bytes(&bytes).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

pub fn read_manifest(root: &Path) -> CliResult<Manifest> {
    let path = root.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    Manifest::parse_csv(&text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn patch_image(root: &Path, index: usize, part: &str, p: usize) -> CliResult<Tensor<f64>> {
    let path = patch_path(root, index, part);
    let img = read_image(&path)?;
    if img.pixels.shape() != [p, p] {
        return Err(CliError::Runtime(format!(
            "{}: expected a {p}x{p} patch, got {:?}",
            path.display(),
            img.pixels.shape()
        )));
    }
    Ok(img.pixels.reshape([1, p, p])?)
}

/// Patches of one split, in manifest order.
pub fn load_patches(root: &Path, manifest: &Manifest, split: Split, p: usize) -> CliResult<Vec<PatchPair>> {
    manifest
        .rows
        .iter()
        .filter(|r| r.split == split)
        .map(|r| {
            let i = r.origin.index;
            Ok(PatchPair {
                x: patch_image(root, i, "x", p)?,
                y1: patch_image(root, i, "y1", p)?,
                y2: patch_image(root, i, "y2", p)?,
                origin: r.origin.clone(),
            })
        })
        .collect()
}

pub fn load_bank(root: &Path, count: usize, p: usize) -> CliResult<Vec<Tensor<f64>>> {
    (0..count)
        .map(|i| {
            let path = bank_path(root, i);
            let img = read_image(&path)?;
            if img.pixels.shape() != [p, p] {
                return Err(CliError::Runtime(format!(
                    "{}: expected a {p}x{p} patch",
                    path.display()
                )));
            }
            Ok(img.pixels)
        })
        .collect()
}

/// `.txim` files directly inside `dir`, sorted by name.
pub fn list_images(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))? {
        let path = entry?.path();
        if path.is_file() && path.extension().is_some_and(|x| x == "txim") {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}
