#![allow(dead_code)]

use std::path::{Path, PathBuf};

use clincot::config::RunConfig;

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/demo")
}

/// Demo config with its output redirected to `out`.
pub fn demo_config(out: &Path) -> RunConfig {
    let mut cfg = RunConfig::load(&fixture_dir().join("config.toml")).expect("demo config loads");
    cfg.paths.output = out.to_path_buf();
    cfg
}

pub fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}
