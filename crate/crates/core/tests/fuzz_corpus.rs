//! Replays the checked-in fuzz corpus through the same entry points the
//! fuzz targets exercise.

use std::fs;
use std::path::Path;

use satswarm::runtime::rows::parse_rows;
use satswarm::runtime::{Checkpoint, RunConfig};

fn corpus(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fuzz/corpus").join(target);
    let mut files: Vec<_> = fs::read_dir(&dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    files.sort();
    assert!(!files.is_empty(), "no seeds in {}", dir.display());
    files
}

#[test]
fn config_seeds() {
    let mut accepted = 0;
    for (name, bytes) in corpus("parse_config") {
        let Ok(text) = std::str::from_utf8(&bytes) else {
            continue;
        };
        if let Ok(cfg) = RunConfig::parse(text) {
            let back = RunConfig::parse(&cfg.to_toml()).unwrap();
            assert_eq!(back, cfg, "{name}");
            accepted += 1;
        }
    }
    assert!(accepted >= 2);
    assert!(RunConfig::parse("[env]\nwarp = 1\n").is_err());
}

#[test]
fn checkpoint_seeds() {
    let mut decoded = 0;
    for (name, bytes) in corpus("decode_checkpoint") {
        if let Ok(ck) = Checkpoint::decode(&bytes) {
            assert_eq!(ck.encode(), bytes, "{name}");
            decoded += 1;
        }
    }
    assert!(decoded >= 2);
}

#[test]
fn row_seeds() {
    for (name, bytes) in corpus("parse_rows") {
        let table = parse_rows(std::str::from_utf8(&bytes).unwrap()).unwrap();
        assert!(!table.columns.is_empty(), "{name}");
        assert!(table.rows.iter().all(|r| r.len() == table.columns.len()), "{name}");
    }
}
