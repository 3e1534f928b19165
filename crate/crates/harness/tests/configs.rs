use std::path::{Path, PathBuf};

use pulsectl::ExperimentConfig;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn shipped_configs_load() {
    let mut n = 0;
    for entry in std::fs::read_dir(configs()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert!(n >= 4);
}

#[test]
fn default_file_spells_out_the_defaults() {
    let mut c = ExperimentConfig::load(&configs().join("default.toml")).unwrap();
    c.out_dir = ExperimentConfig::default().out_dir;
    assert_eq!(c, ExperimentConfig::default());
}
