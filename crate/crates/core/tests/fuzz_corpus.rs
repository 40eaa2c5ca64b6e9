//! Replays the checked-in fuzz corpus so parser regressions surface in the
//! normal test run.

use std::fs;
use std::path::PathBuf;

use ftn_core::harness::{model_to_string, parse_model, ExperimentConfig};

fn seeds(target: &str) -> Vec<(PathBuf, String)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| {
            let text = String::from_utf8_lossy(&fs::read(&p).unwrap()).into_owned();
            (p, text)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds in {}", dir.display());
    out
}

#[test]
fn model_seeds_parse_or_fail_cleanly() {
    let mut accepted = 0;
    for (path, text) in seeds("parse_model") {
        if let Ok(m) = parse_model(&text) {
            let s = model_to_string(&m);
            assert_eq!(
                model_to_string(&parse_model(&s).unwrap()),
                s,
                "{}",
                path.display()
            );
            accepted += 1;
        }
    }
    assert!(accepted >= 2);
}

#[test]
fn config_seeds_parse_or_fail_cleanly() {
    let mut accepted = 0;
    for (path, text) in seeds("parse_config") {
        if let Ok(cfg) = ExperimentConfig::parse(&text) {
            assert_eq!(
                ExperimentConfig::parse(&cfg.to_text()).unwrap(),
                cfg,
                "{}",
                path.display()
            );
            accepted += 1;
        }
    }
    assert!(accepted >= 3);
}
