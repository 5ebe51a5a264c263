//! Oracle fine-tuning experiments at desk scale: a shared pretrained model,
//! seeded D3PO and reward-weighted runs, and the measurements taken on
//! their outcomes. Results are cached on disk keyed by a digest of the
//! run's inputs.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use d3po_cli::ops;
use d3po_core::checkpoint::Checkpoint;
use d3po_core::d3po::{generate_pairs, kl_estimate, PairRecord, TrainConfig};
use d3po_core::diffusion::{Denoiser, DenoiserConfig, NoiseSchedule, PretrainConfig, ScheduleSpec, ShapeDatasetSpec};
use d3po_core::mdp::trajectory_to_segment;
use d3po_core::preference::{label_from_objective, Objective, ObjectiveKind};
use d3po_core::theory::{bt_nll, digest, implied_q_sum, spearman};
use serde::{Deserialize, Serialize};

pub type Result<T> = std::result::Result<T, Box<dyn std::error::Error + Send + Sync>>;

/// Bumped whenever a change invalidates cached results.
pub const CACHE_VERSION: u32 = 1;

/// First pair id used for held-out pairs.
pub const HELD_OUT_IDS: u64 = 1 << 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Protocol {
    pub data: ShapeDatasetSpec,
    pub schedule: ScheduleSpec,
    pub arch: DenoiserConfig,
    pub pretrain: PretrainConfig,
    pub train: TrainConfig,
    pub eval_samples: usize,
    pub guidance: f64,
}

impl Default for Protocol {
    fn default() -> Self {
        Self {
            data: ShapeDatasetSpec::default(),
            schedule: ScheduleSpec::default(),
            arch: DenoiserConfig::default(),
            pretrain: PretrainConfig::default(),
            train: TrainConfig::default(),
            eval_samples: 256,
            guidance: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Method {
    D3po,
    RewardWeighted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub objective: ObjectiveKind,
    pub seed: u64,
    pub beta: f64,
    pub method: Method,
}

/// Scores of the evaluation samples before and after one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub spec: RunSpec,
    pub pre_mean: f64,
    /// Best single evaluation sample of the pretrained model.
    pub pre_best: f64,
    pub post_mean: f64,
    pub last_epoch_kl: f64,
    pub ties: usize,
    pub secs: f64,
}

impl RunSummary {
    pub fn improvement(&self) -> f64 {
        self.post_mean - self.pre_mean
    }

    /// Share of the pretrained-to-best gap closed by the run.
    pub fn gap_fraction(&self) -> f64 {
        self.improvement() / (self.pre_best - self.pre_mean)
    }
}

pub struct Lab {
    pub protocol: Protocol,
    pub cache: PathBuf,
    pub sched: NoiseSchedule,
    pub pretrained: Denoiser,
    pub pretrain_secs: f64,
}

fn cache_key(tag: &str, inputs: &impl Serialize) -> String {
    format!("{tag}-{}", digest(&(CACHE_VERSION, inputs)))
}

impl Lab {
    /// Loads the pretrained model from `cache` or trains and stores it.
    pub fn open(protocol: Protocol, cache: &Path) -> Result<Self> {
        fs::create_dir_all(cache)?;
        let sched = NoiseSchedule::new(&protocol.schedule)?;
        let key = cache_key("pretrained", &(&protocol.data, &protocol.schedule, &protocol.arch, &protocol.pretrain));
        let path = cache.join(format!("{key}.ckpt"));
        let started = Instant::now();
        if !path.exists() {
            let (den, _) = ops::pretrain_model(&protocol.arch, &protocol.data, &protocol.schedule, &protocol.pretrain, |_, _| {})
?;
            Checkpoint::new(den, protocol.schedule, 0).save(&path)?;
        }
        // Runs always start from the stored f32 weights.
        let pretrained = Checkpoint::load(&path)?.denoiser;
        Ok(Self {
            protocol,
            cache: cache.to_path_buf(),
            sched,
            pretrained,
            pretrain_secs: started.elapsed().as_secs_f64(),
        })
    }

    pub fn objective(&self, kind: ObjectiveKind) -> Objective {
        Objective::new(kind, &self.protocol.data)
    }

    /// Per-sample scores of `eval_samples` fresh samples, classes
    /// round-robin, drawn from the seed's evaluation stream.
    pub fn evaluate(&self, den: &Denoiser, objective: &Objective, seed: u64) -> Result<Vec<f64>> {
        let reqs = ops::sample_requests(seed, "eval", self.protocol.eval_samples, &self.protocol.train.classes);
        let (_, scores) = ops::score_samples(den, &self.sched, objective, &reqs, self.protocol.guidance)
?;
        Ok(scores)
    }

    pub fn train_config(&self, spec: &RunSpec) -> TrainConfig {
        TrainConfig {
            seed: spec.seed,
            beta: spec.beta,
            guidance: self.protocol.guidance,
            ..self.protocol.train.clone()
        }
    }

    /// Runs (or loads) one fine-tuning run.
    pub fn run(&self, spec: &RunSpec) -> Result<(Denoiser, RunSummary)> {
        let key = cache_key("run", &(&self.protocol, spec));
        let ckpt = self.cache.join(format!("{key}.ckpt"));
        let summary_path = self.cache.join(format!("{key}.json"));
        if ckpt.exists() && summary_path.exists() {
            let summary: RunSummary = serde_json::from_slice(&fs::read(&summary_path)?)?;
            return Ok((Checkpoint::load(&ckpt)?.denoiser, summary));
        }
        let objective = self.objective(spec.objective);
        let pre = self.evaluate(&self.pretrained, &objective, spec.seed)?;
        let started = Instant::now();
        let mut ties = 0;
        let out = ops::finetune(
            &self.pretrained,
            &self.train_config(spec),
            &self.sched,
            &objective,
            spec.method == Method::RewardWeighted,
            |stats, _| ties += stats.ties_skipped,
        )?;
        let secs = started.elapsed().as_secs_f64();
        let post = self.evaluate(&out.theta, &objective, spec.seed)?;
        let summary = RunSummary {
            spec: spec.clone(),
            pre_mean: mean(&pre),
            pre_best: pre.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            post_mean: mean(&post),
            last_epoch_kl: out.history.last().map_or(0.0, |s| s.mean_kl),
            ties,
            secs,
        };
        Checkpoint::new(out.theta.clone(), self.protocol.schedule, self.protocol.train.epochs as u64).save(&ckpt)?;
        fs::write(&summary_path, serde_json::to_vec_pretty(&summary)?)?;
        Ok((out.theta, summary))
    }

    /// `n` pairs sampled from `den` with ids outside every training epoch.
    pub fn held_out_pairs(&self, den: &Denoiser, seed: u64, n: usize) -> Result<Vec<PairRecord>> {
        let classes = &self.protocol.train.classes;
        let specs: Vec<(u64, usize)> = (0..n)
            .map(|i| (HELD_OUT_IDS + i as u64, classes[i % classes.len()]))
            .collect();
        Ok(generate_pairs(den, &specs, seed, 0, &self.sched, self.protocol.guidance)?)
    }

    /// Timestep-averaged KL of `theta` from the pretrained model, at states
    /// visited by `theta`.
    pub fn kl_from_pretrained(&self, theta: &Denoiser, seed: u64, pairs: usize) -> Result<f64> {
        let held = self.held_out_pairs(theta, seed, pairs)?;
        let refs: Vec<&PairRecord> = held.iter().collect();
        Ok(kl_estimate(theta, &self.pretrained.frozen(), &refs, &self.sched, self.protocol.guidance)?)
    }

    /// Spearman correlation between trajectory-summed implied rewards and
    /// oracle scores over both trajectories of every held-out pair, and the
    /// Bradley-Terry NLL of the implied rewards on the oracle's labels.
    pub fn implicit_reward(
        &self,
        theta: &Denoiser,
        objective: &Objective,
        sample_from: &Denoiser,
        beta: f64,
        seed: u64,
        pairs: usize,
    ) -> Result<ImplicitReward> {
        let held = self.held_out_pairs(sample_from, seed, pairs)?;
        let reference = self.pretrained.frozen();
        let mut implied = Vec::with_capacity(2 * held.len());
        let mut oracle = Vec::with_capacity(2 * held.len());
        let mut labeled = Vec::with_capacity(held.len());
        for pair in &held {
            let mut q = [0.0; 2];
            for (k, traj) in [&pair.a, &pair.b].into_iter().enumerate() {
                let seg = trajectory_to_segment(traj.clone(), k as u64)?;
                q[k] = implied_q_sum(theta, &reference, &seg, beta, &self.sched, self.protocol.guidance)?;
                implied.push(q[k]);
                oracle.push(objective.score(traj.final_image(), pair.class)?);
            }
            labeled.push((label_from_objective(objective, pair)?, q[0], q[1]));
        }
        Ok(ImplicitReward {
            spearman: spearman(&implied, &oracle)?,
            bt_nll: bt_nll(&labeled)?,
            pairs: held.len(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImplicitReward {
    pub spearman: f64,
    pub bt_nll: f64,
    pub pairs: usize,
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}
