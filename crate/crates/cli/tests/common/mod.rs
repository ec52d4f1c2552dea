#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use conceptcause::pipeline::{Pipeline, PipelineConfig};

/// A pipeline small enough to build in a few seconds.
pub fn small_config() -> PipelineConfig {
    let mut c = PipelineConfig::default();
    c.seed = 11;
    c.data.train_count = 160;
    c.data.test_count = 40;
    c.target.train.epochs = 3;
    c.autoencoders.train.epochs = 1;
    c.autoencoders.train.hidden_channels = 8;
    c.autoencoders.train.code_channels = 8;
    c.interventions.passes = 2;
    c.explain.neighbors = 4;
    c
}

pub fn write_config(dir: &Path, config: &PipelineConfig) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_vec_pretty(config).unwrap()).unwrap();
    path
}

/// Artifacts of `small_config`, built on first use.
pub fn fitted() -> &'static Pipeline {
    static CELL: OnceLock<(tempfile::TempDir, Pipeline)> = OnceLock::new();
    &CELL
        .get_or_init(|| {
            let dir = tempfile::tempdir().unwrap();
            let p = Pipeline::new(small_config(), Some(dir.path().to_path_buf())).unwrap();
            p.run_all().unwrap();
            (dir, p)
        })
        .1
}
