//! Building blocks shared by the subcommands and the acceptance suite.

use std::path::Path;

use d3po_core::checkpoint::Checkpoint;
use d3po_core::d3po::{run_d3po, run_reward_weighted, EpochStats, RunOutcome, TrainConfig};
use d3po_core::diffusion::{
    pretrain, sample_trajectories, Denoiser, DenoiserConfig, NoiseSchedule, PretrainConfig,
    SampleRequest, ScheduleSpec, ShapeDatasetSpec, Trajectory,
};
use d3po_core::preference::{label_from_objective, Objective};
use d3po_core::seeds;
use serde::Serialize;

use crate::error::Result;

/// Fresh network trained on the shape dataset.
pub fn pretrain_model(
    arch: &DenoiserConfig,
    data: &ShapeDatasetSpec,
    schedule: &ScheduleSpec,
    cfg: &PretrainConfig,
    progress: impl FnMut(usize, f64),
) -> Result<(Denoiser, Vec<f64>)> {
    let sched = NoiseSchedule::new(schedule)?;
    let mut den = Denoiser::init(arch.clone(), &mut seeds::rng(cfg.seed, "init", 0))?;
    let losses = pretrain(&mut den, data, &sched, cfg, progress)?;
    Ok((den, losses))
}

/// Requests for `count` samples cycling over `classes`, seeded from
/// `(seed, stream, i)`.
pub fn sample_requests(seed: u64, stream: &str, count: usize, classes: &[usize]) -> Vec<SampleRequest> {
    (0..count as u64)
        .map(|i| SampleRequest {
            class: classes[i as usize % classes.len()],
            init_seed: seeds::derive(seed, &format!("{stream}-init"), i),
            noise_seed: seeds::derive(seed, &format!("{stream}-noise"), i),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSummary {
    pub objective: String,
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl EvalSummary {
    pub fn from_scores(objective: &Objective, scores: &[f64]) -> Self {
        let n = scores.len() as f64;
        let mean = scores.iter().sum::<f64>() / n;
        let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
        Self {
            objective: objective.kind().to_string(),
            count: scores.len(),
            mean,
            std: var.sqrt(),
            min: scores.iter().copied().fold(f64::INFINITY, f64::min),
            max: scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Scores of `count` fresh samples, classes round-robin.
pub fn score_samples(
    den: &Denoiser,
    sched: &NoiseSchedule,
    objective: &Objective,
    reqs: &[SampleRequest],
    guidance: f64,
) -> Result<(Vec<Trajectory>, Vec<f64>)> {
    let trajs = sample_trajectories(den, reqs, sched, guidance)?;
    let scores = trajs
        .iter()
        .map(|t| objective.score(t.final_image(), t.class))
        .collect::<d3po_core::Result<Vec<f64>>>()?;
    Ok((trajs, scores))
}

/// Oracle-labeled D3PO run, or the reward-weighted baseline when
/// `baseline` is set.
pub fn finetune(
    init: &Denoiser,
    train: &TrainConfig,
    sched: &NoiseSchedule,
    objective: &Objective,
    baseline: bool,
    on_epoch: impl FnMut(&EpochStats, &Denoiser),
) -> Result<RunOutcome> {
    let out = if baseline {
        run_reward_weighted(init, train, sched, |t| objective.score(t.final_image(), t.class), on_epoch)?
    } else {
        run_d3po(init, train, sched, |p| label_from_objective(objective, p), on_epoch)?
    };
    Ok(out)
}

pub fn load_checkpoint(path: &Path) -> Result<(Checkpoint, NoiseSchedule)> {
    let ck = Checkpoint::load(path)?;
    let sched = NoiseSchedule::new(&ck.meta.schedule)?;
    Ok((ck, sched))
}
