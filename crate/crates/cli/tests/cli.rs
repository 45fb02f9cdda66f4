use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tmgan::checkpoint::{load_checkpoint, AnyCheckpoint};
use tmgan::config::RunConfig;
use tmgan::formats::{ImageFile, Manifest};
use tmgan::inference::enhance;
use tmgan::synthdata::regenerate_patch;
use tmgan::trainer::TrainingLog;

const TINY: &str = "\
task = denoise
seed = 21
precision = test64
phantom_count = 2
phantom_size = 32
patch_size = 16
pairs_per_phantom = 4
split_fraction = 0.75
target_bank = 6
gen_depth = 3
gen_channels = 4
disc_widths = auto
batch_size = 2
n_updates = 5
lr_gen = 1e-3
lr_disc = 1e-3
eval_exams = 2
eval_water_draws = 2
eval_roi_size = 16
";

fn tmgan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tmgan")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = tmgan(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
    data: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let config = root.join("run.cfg");
    std::fs::write(&config, TINY).unwrap();
    let data = root.join("data");
    ok(&["gen-data", "--config", s(&config), "--out", s(&data)]);
    Fixture {
        _dir: dir,
        root,
        config,
        data,
    }
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn gen_data_is_reproducible_and_guarded() {
    let f = fixture();
    let first = tree(&f.data);
    let manifest = Manifest::parse_csv(&std::fs::read_to_string(f.data.join("manifest.csv")).unwrap()).unwrap();
    assert_eq!(manifest.rows.len(), 8);
    let patches = first.iter().filter(|(p, _)| p.starts_with("patches")).count();
    assert_eq!(patches, 3 * manifest.rows.len());

    let refused = tmgan(&["gen-data", "--config", s(&f.config), "--out", s(&f.data)]);
    assert_eq!(refused.status.code(), Some(1));
    ok(&["gen-data", "--config", s(&f.config), "--out", s(&f.data), "--force"]);
    assert_eq!(tree(&f.data), first);

    // the manifest seeds regenerate the stored pixels
    let cfg = RunConfig::parse(TINY).unwrap();
    for row in &manifest.rows {
        let pair = regenerate_patch(&cfg.data, &row.origin).unwrap();
        let stored = ImageFile::read(&f.data.join(format!("patches/patch_{:05}_y2.txim", row.origin.index))).unwrap();
        assert_eq!(stored.pixels.data(), pair.y2.data());
    }
}

#[test]
fn seed_flag_overrides_the_config() {
    let f = fixture();
    let other = f.root.join("other");
    ok(&["gen-data", "--config", s(&f.config), "--out", s(&other), "--seed", "22"]);
    let written = RunConfig::parse(&std::fs::read_to_string(other.join("config.txt")).unwrap()).unwrap();
    assert_eq!(written.seed(), 22);
    assert_ne!(
        std::fs::read(other.join("patches/patch_00000_y1.txim")).unwrap(),
        std::fs::read(f.data.join("patches/patch_00000_y1.txim")).unwrap()
    );
}

#[test]
fn training_logs_every_update_and_is_deterministic() {
    let f = fixture();
    let a = f.root.join("a.ckpt");
    let b = f.root.join("b.ckpt");
    ok(&["train", "--data", s(&f.data), "--out", s(&a), "--quiet"]);
    ok(&["train", "--data", s(&f.data), "--out", s(&b), "--quiet"]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let log = TrainingLog::parse_csv(&std::fs::read_to_string(f.root.join("a.ckpt.log.csv")).unwrap()).unwrap();
    assert_eq!(log.records.len(), 5);
    assert!(log.records.iter().all(|r| r.disc_loss.is_some()));

    let br = f.root.join("br.ckpt");
    ok(&[
        "train",
        "--data",
        s(&f.data),
        "--out",
        s(&br),
        "--mode",
        "br",
        "--quiet",
    ]);
    let log = TrainingLog::parse_csv(&std::fs::read_to_string(f.root.join("br.ckpt.log.csv")).unwrap()).unwrap();
    assert_eq!(log.records.len(), 5);
    assert!(log.records.iter().all(|r| r.n_d == 0 && r.disc_loss.is_none()));
}

#[test]
fn resume_continues_to_the_same_checkpoint() {
    let f = fixture();
    let whole = f.root.join("whole.ckpt");
    ok(&["train", "--data", s(&f.data), "--out", s(&whole), "--quiet"]);

    let short = TINY.replace("n_updates = 5", "n_updates = 2");
    let short_cfg = f.root.join("short.cfg");
    std::fs::write(&short_cfg, short).unwrap();
    let part = f.root.join("part.ckpt");
    ok(&[
        "train",
        "--data",
        s(&f.data),
        "--out",
        s(&part),
        "--config",
        s(&short_cfg),
        "--quiet",
    ]);
    // periodic saves do not perturb the run
    let mid = f.root.join("mid.ckpt");
    ok(&[
        "train",
        "--data",
        s(&f.data),
        "--out",
        s(&mid),
        "--save-every",
        "2",
        "--quiet",
    ]);
    assert_eq!(std::fs::read(&mid).unwrap(), std::fs::read(&whole).unwrap());

    // extend the 2-update run to the full length
    let resumed = f.root.join("resumed.ckpt");
    let AnyCheckpoint::F64(mut c) = load_checkpoint(&part).unwrap() else {
        panic!("test64 run wrote a 32-bit checkpoint")
    };
    c.config.n_updates = 5;
    tmgan::checkpoint::save_checkpoint(&resumed, &c.config, &c.state).unwrap();
    ok(&[
        "train",
        "--data",
        s(&f.data),
        "--out",
        s(&resumed),
        "--resume",
        s(&resumed),
        "--quiet",
    ]);
    assert_eq!(std::fs::read(&resumed).unwrap(), std::fs::read(&whole).unwrap());

    let conflict = tmgan(&[
        "train",
        "--data",
        s(&f.data),
        "--out",
        s(&resumed),
        "--resume",
        s(&resumed),
        "--seed",
        "3",
    ]);
    assert_eq!(conflict.status.code(), Some(1));
}

#[test]
fn enhance_blends_and_round_trips() {
    let f = fixture();
    let tm = f.root.join("tm.ckpt");
    let br = f.root.join("br.ckpt");
    ok(&["train", "--data", s(&f.data), "--out", s(&tm), "--quiet"]);
    ok(&[
        "train",
        "--data",
        s(&f.data),
        "--out",
        s(&br),
        "--mode",
        "br",
        "--quiet",
    ]);
    let input = f.data.join("eval/input/exam_000.txim");
    let img = ImageFile::read(&input).unwrap();
    let direct = |ckpt: &Path| match load_checkpoint(ckpt).unwrap() {
        AnyCheckpoint::F64(c) => enhance(&c.state.generator, &img.pixels).unwrap(),
        AnyCheckpoint::F32(c) => enhance(&c.state.generator, &img.pixels).unwrap(),
    };

    let one = f.root.join("one.txim");
    ok(&[
        "enhance",
        "--tmgan",
        s(&tm),
        "--eta",
        "1",
        "--input",
        s(&input),
        "--output",
        s(&one),
    ]);
    let got = ImageFile::read(&one).unwrap();
    assert_eq!(got.pixels, direct(&tm));
    assert_eq!(got.spacing_mm, img.spacing_mm);
    assert_eq!(ImageFile::decode(&got.encode().unwrap()).unwrap(), got);

    let zero = f.root.join("zero.txim");
    ok(&[
        "enhance",
        "--tmgan",
        s(&tm),
        "--br",
        s(&br),
        "--eta",
        "0",
        "--input",
        s(&input),
        "--output",
        s(&zero),
    ]);
    assert_eq!(ImageFile::read(&zero).unwrap().pixels, direct(&br));

    // the denoise preset blends at 0.3, which needs the companion
    let missing = tmgan(&[
        "enhance",
        "--tmgan",
        s(&tm),
        "--input",
        s(&input),
        "--output",
        s(&f.root.join("x.txim")),
    ]);
    assert_eq!(missing.status.code(), Some(1));
    let exists = tmgan(&[
        "enhance",
        "--tmgan",
        s(&tm),
        "--eta",
        "1",
        "--input",
        s(&input),
        "--output",
        s(&one),
    ]);
    assert_eq!(exists.status.code(), Some(1));

    let out_dir = f.root.join("enhanced");
    ok(&[
        "enhance",
        "--tmgan",
        s(&tm),
        "--br",
        s(&br),
        "--input",
        s(&f.data.join("eval/input")),
        "--output",
        s(&out_dir),
    ]);
    assert_eq!(std::fs::read_dir(&out_dir).unwrap().count(), 4);
}

#[test]
fn evaluate_writes_documented_tables() {
    let f = fixture();
    let tm = f.root.join("tm.ckpt");
    ok(&["train", "--data", s(&f.data), "--out", s(&tm), "--quiet"]);
    let enhanced = f.root.join("enhanced");
    ok(&[
        "enhance",
        "--tmgan",
        s(&tm),
        "--eta",
        "1",
        "--input",
        s(&f.data.join("eval/input")),
        "--output",
        s(&enhanced),
    ]);
    let truth = f.data.join("eval/truth");
    let out = f.root.join("metrics");
    ok(&[
        "evaluate",
        "--data",
        s(&f.data),
        "--method",
        &format!("tmgan={}", s(&enhanced)),
        "--method",
        &format!("truth={}", s(&truth)),
        "--out",
        s(&out),
    ]);
    let table = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "method,psnr_db,ssim,noise_std_hu,nps_distance_to_target");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("input,"));
    assert!(lines[2].starts_with("tmgan,"));
    assert_eq!(lines[3], "truth,inf,1,,");
    let target: Vec<&str> = lines[4].split(',').collect();
    assert_eq!((target[0], target[1], target[2], target[4]), ("target", "", "", "0"));
    for name in ["input", "tmgan", "target"] {
        let nps = std::fs::read_to_string(out.join(format!("nps_{name}.csv"))).unwrap();
        assert!(nps.starts_with("frequency_per_mm,nps_hu2_mm2\n"));
        assert_eq!(nps.lines().count(), 1 + 8);
    }
    assert!(!out.join("nps_truth.csv").exists());

    let bad = tmgan(&[
        "evaluate",
        "--data",
        s(&f.data),
        "--method",
        "input=x",
        "--out",
        s(&out),
    ]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn configuration_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "task = denoise\nwarp_factor = 9\n").unwrap();
    let out = tmgan(&["gen-data", "--config", s(&cfg), "--out", s(&dir.path().join("d"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("warp_factor"));
    assert_eq!(tmgan(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(tmgan(&["--help"]).status.code(), Some(0));
    let missing = tmgan(&[
        "train",
        "--data",
        s(&dir.path().join("nowhere")),
        "--out",
        s(&dir.path().join("c")),
    ]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn check_theorem_reports_counterexamples_failing() {
    let out = ok(&["check", "theorem"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("PASS bernoulli pairs rejected"), "{text}");
    assert!(text.contains("PASS laplace pairs rejected"), "{text}");
}

#[test]
fn check_grad_prints_errors_below_tolerance() {
    let out = ok(&["check", "grad"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let errors: Vec<f64> = text
        .lines()
        .filter_map(|l| l.split("max_rel_error=").nth(1))
        .map(|r| r.split_whitespace().next().unwrap().parse().unwrap())
        .collect();
    assert!(errors.len() >= 12);
    assert!(errors.iter().all(|&e| e < 1e-4), "{errors:?}");
}
