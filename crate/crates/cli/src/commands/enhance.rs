use std::path::{Path, PathBuf};

use tmgan::checkpoint::{load_checkpoint, AnyCheckpoint};
use tmgan::inference::{blend, enhance};
use tmgan::Tensor;

use crate::layout;
use crate::{CliError, CliResult, EnhanceArgs};

fn load(path: &Path) -> CliResult<AnyCheckpoint> {
    load_checkpoint(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

/// Generator output of either precision, widened to 64-bit.
pub fn apply(ckpt: &AnyCheckpoint, image: &Tensor<f64>) -> CliResult<Tensor<f64>> {
    Ok(match ckpt {
        AnyCheckpoint::F32(c) => enhance(&c.state.generator, image)?,
        AnyCheckpoint::F64(c) => enhance(&c.state.generator, image)?,
    })
}

/// Blended output for one image.
pub fn enhance_one(
    tmgan: &AnyCheckpoint,
    br: Option<&AnyCheckpoint>,
    eta: f64,
    image: &Tensor<f64>,
) -> CliResult<Tensor<f64>> {
    let a = apply(tmgan, image)?;
    match br {
        _ if eta == 1.0 => Ok(a),
        Some(br) => Ok(blend(&a, &apply(br, image)?, eta)?),
        None => Err(CliError::Usage(format!(
            "eta = {eta} needs a bias-reducing checkpoint (--br)"
        ))),
    }
}

pub fn run(args: &EnhanceArgs) -> CliResult<()> {
    let tmgan = load(&args.tmgan)?;
    let eta = args.eta.unwrap_or(tmgan.config().eta);
    if !(0.0..=1.0).contains(&eta) {
        return Err(CliError::Usage(format!("--eta must lie in [0, 1], got {eta}")));
    }
    if eta < 1.0 && args.br.is_none() {
        return Err(CliError::Usage(format!(
            "eta = {eta} needs a bias-reducing checkpoint (--br)"
        )));
    }
    // with eta = 1 the companion does not contribute and is not loaded
    let br = match &args.br {
        Some(p) if eta < 1.0 => Some(load(p)?),
        _ => None,
    };

    let jobs: Vec<(PathBuf, PathBuf)> = if args.input.is_dir() {
        std::fs::create_dir_all(&args.output)?;
        layout::list_images(&args.input)?
            .into_iter()
            .map(|p| {
                let out = args.output.join(p.file_name().expect("listed files have names"));
                (p, out)
            })
            .collect()
    } else {
        vec![(args.input.clone(), args.output.clone())]
    };
    if !args.force {
        if let Some((_, o)) = jobs.iter().find(|(_, o)| o.exists()) {
            return Err(CliError::Usage(format!(
                "{} exists; pass --force to overwrite",
                o.display()
            )));
        }
    }
    for (input, output) in jobs {
        let img = layout::read_image(&input)?;
        let out = enhance_one(&tmgan, br.as_ref(), eta, &img.pixels).map_err(|e| match e {
            CliError::Runtime(m) => CliError::Runtime(format!("{}: {m}", input.display())),
            other => other,
        })?;
        layout::write_image(&output, out, img.spacing_f64())?;
    }
    Ok(())
}
