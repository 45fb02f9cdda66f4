use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use tmgan::checkpoint::{load_checkpoint, save_checkpoint, AnyCheckpoint};
use tmgan::formats::Split;
use tmgan::synthdata::PatchPair;
use tmgan::trainer::{train, Precision, StepRecord, TrainConfig, TrainError, TrainState, TrainingLog};
use tmgan::{Real, Tensor};

use crate::layout;
use crate::{CliError, CliResult, Mode, TrainArgs};

/// Training log written next to checkpoint `out`.
pub fn log_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".log.csv");
    PathBuf::from(s)
}

/// Training settings after applying config file and flags over the dataset's configuration.
pub fn resolve_config(args: &TrainArgs) -> CliResult<TrainConfig> {
    let base = match &args.config {
        Some(p) => layout::read_config(p)?,
        None => layout::read_config(&args.data.join(layout::CONFIG))?,
    };
    let mut cfg = base.train;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(p) = args.precision {
        cfg.precision = p.into();
    }
    if args.mode == Some(Mode::Br) {
        cfg = cfg.bias_reducing();
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

pub fn run(args: &TrainArgs) -> CliResult<()> {
    let data_cfg = layout::read_config(&args.data.join(layout::CONFIG))?;
    let p = data_cfg.data.patch_size;
    let manifest = layout::read_manifest(&args.data)?;
    let train_set = layout::load_patches(&args.data, &manifest, Split::Train, p)?;
    let bank = layout::load_bank(&args.data, data_cfg.target_bank, p)?;
    if train_set.is_empty() || bank.is_empty() {
        return Err(CliError::Runtime(
            "dataset has no training patches or no target texture".into(),
        ));
    }
    let session = Session {
        out: &args.out,
        save_every: args.save_every,
        quiet: args.quiet,
        train_set: &train_set,
        bank: &bank,
    };
    match &args.resume {
        Some(path) => match load_checkpoint(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))? {
            AnyCheckpoint::F32(c) => session.run(&c.config, c.state),
            AnyCheckpoint::F64(c) => session.run(&c.config, c.state),
        },
        None => {
            let cfg = resolve_config(args)?;
            match cfg.precision {
                Precision::Train32 => session.run(&cfg, TrainState::<f32>::init(&cfg)?),
                Precision::Test64 => session.run(&cfg, TrainState::<f64>::init(&cfg)?),
            }
        }
    }
}

struct Session<'a> {
    out: &'a Path,
    save_every: usize,
    quiet: bool,
    train_set: &'a [PatchPair],
    bank: &'a [Tensor<f64>],
}

impl Session<'_> {
    fn run<T: Real>(&self, cfg: &TrainConfig, mut state: TrainState<T>) -> CliResult<()> {
        let log_file = log_path(self.out);
        let mut earlier = String::from(TrainingLog::HEADER);
        earlier.push('\n');
        let mut offset = 0.0;
        if state.step > 0 {
            // keep the rows that led up to the resumed state
            if let Ok(text) = std::fs::read_to_string(&log_file) {
                let log = TrainingLog::parse_csv(&text)?;
                for r in log.records.iter().filter(|r| r.step < state.step) {
                    earlier.push_str(&TrainingLog::csv_row(r));
                    earlier.push('\n');
                    offset = r.seconds;
                }
            }
        }
        std::fs::write(&log_file, earlier)?;
        let mut file = std::fs::OpenOptions::new().append(true).open(&log_file)?;

        let started = Instant::now();
        let every = (cfg.n_updates / 10).max(1);
        let chunk = if self.save_every == 0 {
            cfg.n_updates
        } else {
            self.save_every
        };
        let mut write_err = None;
        let mut saved = false;
        while state.step < cfg.n_updates {
            let mut part = cfg.clone();
            part.n_updates = (state.step + chunk).min(cfg.n_updates);
            let base = offset + started.elapsed().as_secs_f64();
            let mut log = TrainingLog::default();
            let result = train(&part, &mut state, self.train_set, self.bank, &mut log, |r| {
                let row = StepRecord {
                    seconds: base + r.seconds,
                    ..r.clone()
                };
                if let Err(e) = writeln!(file, "{}", TrainingLog::csv_row(&row)) {
                    write_err.get_or_insert(e);
                }
                if !self.quiet && (r.step + 1) % every == 0 {
                    eprintln!(
                        "step {}/{}  gen_loss {:.4e}  n_d {}  gamma {:.4}",
                        r.step + 1,
                        cfg.n_updates,
                        r.gen_loss,
                        r.n_d,
                        r.gamma
                    );
                }
            });
            if let Some(e) = write_err.take() {
                return Err(CliError::Runtime(format!("{}: {e}", log_file.display())));
            }
            match result {
                Ok(()) => {}
                Err(e @ TrainError::NonFinite { .. }) => return Err(CliError::Runtime(e.to_string())),
                Err(TrainError::Tensor(e)) => return Err(e.into()),
            }
            save_checkpoint(self.out, cfg, &state)
                .map_err(|e| CliError::Runtime(format!("{}: {e}", self.out.display())))?;
            saved = true;
        }
        if !saved {
            save_checkpoint(self.out, cfg, &state)?;
        }
        Ok(())
    }
}
