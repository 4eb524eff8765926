#![allow(dead_code)]

use std::path::{Path, PathBuf};

use regkg_cli::commands::{self, MockOptions, Session};
use regkg_cli::config::AppConfig;

pub fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(rel)
}

pub fn synthetic_mock() -> MockOptions {
    MockOptions {
        script: Some(fixture("synthetic/script.json")),
        ..MockOptions::default()
    }
}

/// Builds the synthetic bundle into `dir`.
pub fn build_synthetic(dir: &Path) {
    commands::build(
        &fixture("synthetic/corpus.txt"),
        dir,
        &AppConfig::default(),
        &synthetic_mock(),
    )
    .unwrap();
}

pub fn synthetic_session(dir: &Path, mock: &MockOptions) -> Session {
    build_synthetic(dir);
    Session::open(dir, &AppConfig::default(), mock).unwrap()
}
