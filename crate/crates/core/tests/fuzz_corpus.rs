//! Replays the checked-in fuzz corpus through the same properties the fuzz targets assert.

use std::path::{Path, PathBuf};

use tmgan::checkpoint::decode_any;
use tmgan::config::RunConfig;
use tmgan::formats::{ImageFile, Manifest};
use tmgan::trainer::TrainingLog;

fn corpus(target: &str) -> Vec<(PathBuf, Vec<u8>)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(target);
    let mut files: Vec<_> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    assert!(!files.is_empty(), "empty corpus {}", dir.display());
    files
        .into_iter()
        .map(|p| (p.clone(), std::fs::read(p).unwrap()))
        .collect()
}

#[test]
fn image_seeds_decode_and_reencode_exactly() {
    for (path, bytes) in corpus("image_file") {
        let img = ImageFile::decode(&bytes).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(img.encode().unwrap(), bytes, "{}", path.display());
    }
}

#[test]
fn checkpoint_seeds_round_trip() {
    for (path, bytes) in corpus("checkpoint") {
        let ckpt = decode_any(&bytes).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(ckpt.encode(), bytes, "{}", path.display());
    }
}

#[test]
fn config_seeds_parse_to_canonical_text() {
    for (path, bytes) in corpus("run_config") {
        let cfg = RunConfig::parse_bytes(&bytes).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }
}

#[test]
fn csv_seeds_parse() {
    for (path, bytes) in corpus("manifest") {
        let m = Manifest::parse_csv(std::str::from_utf8(&bytes).unwrap())
            .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(m.to_csv().as_bytes(), &bytes[..]);
    }
    for (path, bytes) in corpus("training_log") {
        let log = TrainingLog::parse_csv(std::str::from_utf8(&bytes).unwrap())
            .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(log.to_csv().as_bytes(), &bytes[..]);
    }
}
