#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::time::Duration;

use d3po_core::checkpoint::Checkpoint;
use d3po_core::d3po::TrainConfig;
use d3po_core::diffusion::{Denoiser, DenoiserConfig, ScheduleSpec};
use d3po_core::seeds;
use d3po_service::ServiceConfig;

pub fn write_checkpoint(dir: &Path, hidden: Vec<usize>, steps: usize) -> PathBuf {
    let cfg = DenoiserConfig {
        time_dim: 8,
        class_dim: 4,
        hidden,
        ..DenoiserConfig::default()
    };
    let den = Denoiser::init(cfg, &mut seeds::rng(1, "init", 0)).unwrap();
    let path = dir.join("init.ckpt");
    let spec = ScheduleSpec { steps, ..ScheduleSpec::default() };
    Checkpoint::new(den, spec, 0).save(&path).unwrap();
    path
}

/// A small session: 4-step chain, tiny network, `k` pairs per epoch.
pub fn small(dir: &Path, k: usize, min_labeled: usize) -> ServiceConfig {
    let ckpt = write_checkpoint(dir, vec![8], 4);
    ServiceConfig {
        pairs_per_epoch: k,
        min_labeled,
        claim_timeout: Duration::from_secs(60),
        train: TrainConfig {
            lr: 1e-3,
            ..TrainConfig::default()
        },
        ..ServiceConfig::new(dir.join("home"), ckpt)
    }
}
