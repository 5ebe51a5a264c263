use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::diffusion::{predict_mu_batch, Denoiser, NoiseSchedule};
use crate::error::{Error, Result};
use crate::ndcore::{adam_step, backward, AdamConfig, AdamState, ParamSet, Role, Tape, Tensor};

use super::loss::{pair_transitions, step_loss_on};
use super::pair::{generate_pairs, PairRecord, PreferenceLabel};
use crate::mdp::log_policy_batch;

/// Order in which a pair's timesteps are visited.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepOrder {
    /// Diffusion time `T` down to 1 (MDP time 0 up to `T-1`).
    #[default]
    DescendingDiffusionTime,
    AscendingDiffusionTime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub beta: f64,
    pub lr: f64,
    pub clip_norm: Option<f64>,
    pub weight_decay: f64,
    pub epochs: usize,
    pub pairs_per_epoch: usize,
    /// Every sub-segment contributes when set; otherwise only MDP time 0.
    pub all_steps: bool,
    pub seed: u64,
    pub guidance: f64,
    /// Loss contributions averaged into one optimizer update.
    pub accumulate: usize,
    /// Keep the initial model as reference instead of rotating per epoch.
    pub fixed_reference: bool,
    pub order: StepOrder,
    /// Softmax temperature of the reward-weighted baseline.
    pub tau: f64,
    /// Samples per reward-weighted update.
    pub baseline_batch: usize,
    /// Class indices cycled through when generating pairs.
    pub classes: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            beta: 0.1,
            lr: 1e-5,
            clip_norm: Some(1.0),
            weight_decay: 1e-4,
            epochs: 50,
            pairs_per_epoch: 64,
            all_steps: true,
            seed: 0,
            guidance: 5.0,
            accumulate: 1,
            fixed_reference: false,
            order: StepOrder::default(),
            tau: 1.0,
            baseline_batch: 2,
            classes: (0..5).collect(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) {
            return Err(Error::invalid("beta must be > 0"));
        }
        if !(self.lr > 0.0) || !(self.tau > 0.0) {
            return Err(Error::invalid("lr and tau must be > 0"));
        }
        if self.accumulate == 0 || self.baseline_batch == 0 {
            return Err(Error::invalid("accumulate and baseline_batch must be >= 1"));
        }
        if self.classes.is_empty() {
            return Err(Error::invalid("no classes to sample"));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            clip_norm: self.clip_norm,
            ..AdamConfig::default()
        }
    }

    /// MDP times visited for one pair, in training order.
    pub fn mdp_steps(&self, steps: usize) -> Vec<usize> {
        if !self.all_steps {
            return vec![0];
        }
        match self.order {
            StepOrder::DescendingDiffusionTime => (0..steps).collect(),
            StepOrder::AscendingDiffusionTime => (0..steps).rev().collect(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: u64,
    pub mean_loss: f64,
    pub pairs_consumed: usize,
    pub ties_skipped: usize,
    /// Number of `(pair, t)` loss terms.
    pub contributions: usize,
    pub updates: usize,
    /// Mean over timesteps of the estimated `KL(pi_theta || pi_ref)`.
    pub mean_kl: f64,
    pub wall_secs: f64,
}

/// A frozen deep copy of `theta`.
pub fn advance_reference(theta: &Denoiser) -> Denoiser {
    theta.frozen()
}

const CHUNK: usize = 256;

/// Reference log-densities for every listed `(pair, t)`, `[A, B]` each.
fn batched_reference(
    reference: &Denoiser,
    items: &[(&PairRecord, usize)],
    sched: &NoiseSchedule,
    w: f64,
) -> Result<Vec<[f64; 2]>> {
    let mut out = Vec::with_capacity(items.len());
    for chunk in items.chunks(CHUNK / 2) {
        let mut transitions = Vec::with_capacity(chunk.len() * 2);
        for (pair, t) in chunk {
            transitions.extend(pair_transitions(pair, *t)?);
        }
        let lp = log_policy_batch(reference, &transitions, sched, w)?;
        out.extend(lp.chunks(2).map(|c| [c[0], c[1]]));
    }
    Ok(out)
}

/// Mean over diffusion timesteps of `KL(pi_theta || pi_ref)` at the states
/// of `pairs`. Both policies are Gaussians with the same `sigma_t`, so each
/// term is `|mu_theta - mu_ref|^2 / (2 sigma_t^2)`.
pub fn kl_estimate(
    theta: &Denoiser,
    reference: &Denoiser,
    pairs: &[&PairRecord],
    sched: &NoiseSchedule,
    w: f64,
) -> Result<f64> {
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let steps = sched.steps();
    let d = theta.config.pixels();
    let mut per_t = vec![0.0; steps + 1];
    let mut rows = Vec::new();
    for pair in pairs {
        for traj in [&pair.a, &pair.b] {
            for k in 0..steps {
                rows.push((&traj.states[k], steps - k, pair.class));
            }
        }
    }
    for chunk in rows.chunks(CHUNK) {
        let mut xs = Vec::with_capacity(chunk.len() * d);
        for (x, _, _) in chunk {
            xs.extend_from_slice(x.data());
        }
        let xs = Tensor::new(vec![chunk.len(), d], xs)?;
        let ts: Vec<usize> = chunk.iter().map(|r| r.1).collect();
        let cs: Vec<usize> = chunk.iter().map(|r| r.2).collect();
        let mu_t = predict_mu_batch(theta, &xs, &ts, &cs, sched, w)?;
        let mu_r = predict_mu_batch(reference, &xs, &ts, &cs, sched, w)?;
        for (i, &t) in ts.iter().enumerate() {
            let sq: f64 = mu_t
                .row_slice(i)
                .iter()
                .zip(mu_r.row_slice(i))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            per_t[t] += sq / (2.0 * sched.sigma(t).powi(2));
        }
    }
    let per_state = (pairs.len() * 2) as f64;
    Ok(per_t[1..].iter().map(|s| s / per_state).sum::<f64>() / steps as f64)
}

/// One pass over labeled pairs. Ties are skipped; every other pair adds one
/// loss term per visited timestep, with an optimizer update after every
/// `cfg.accumulate` terms.
pub fn finetune_epoch(
    theta: &mut Denoiser,
    reference: &Denoiser,
    pairs: &[PairRecord],
    cfg: &TrainConfig,
    opt: &mut AdamState,
    sched: &NoiseSchedule,
) -> Result<EpochStats> {
    let started = Instant::now();
    cfg.validate()?;
    if reference.role() != Role::Reference {
        return Err(Error::invalid("reference model must be frozen"));
    }
    if theta.config != reference.config {
        return Err(Error::invalid("policy and reference architectures differ"));
    }
    if let Some(p) = pairs.iter().find(|p| p.label.is_none()) {
        return Err(Error::Unlabeled(p.id));
    }
    let mut stats = EpochStats {
        epoch: pairs.first().map_or(0, |p| p.epoch),
        ..EpochStats::default()
    };
    let labeled: Vec<(&PairRecord, PreferenceLabel)> = pairs
        .iter()
        .filter_map(|p| match p.label {
            Some(PreferenceLabel::Tie) | None => None,
            Some(l) => Some((p, l)),
        })
        .collect();
    stats.ties_skipped = pairs.len() - labeled.len();
    stats.pairs_consumed = labeled.len();
    if labeled.is_empty() {
        stats.wall_secs = started.elapsed().as_secs_f64();
        return Ok(stats);
    }

    let steps = cfg.mdp_steps(sched.steps());
    let items: Vec<(&PairRecord, usize)> = labeled
        .iter()
        .flat_map(|(p, _)| steps.iter().map(move |&t| (*p, t)))
        .collect();
    let ref_lp = batched_reference(reference, &items, sched, cfg.guidance)?;
    let adam = cfg.adam();

    let mut acc: Option<ParamSet> = None;
    let mut pending = 0usize;
    let mut loss_sum = 0.0;
    let mut item = 0;
    for (pair, label) in &labeled {
        for &t in &steps {
            let mut tape = Tape::new();
            let bound = tape.bind(&theta.params)?;
            let loss = step_loss_on(
                &mut tape,
                &bound,
                &theta.config,
                sched,
                pair,
                *label,
                t,
                ref_lp[item],
                cfg.beta,
                cfg.guidance,
            )?;
            item += 1;
            loss_sum += tape.value(loss).item();
            let grads = backward(&tape, loss)?;
            match acc.as_mut() {
                Some(a) => a.axpy(1.0, &grads)?,
                None => acc = Some(grads),
            }
            pending += 1;
            stats.contributions += 1;
            if pending == cfg.accumulate {
                flush(theta, &mut acc, &mut pending, opt, &adam)?;
                stats.updates += 1;
            }
        }
    }
    if pending > 0 {
        flush(theta, &mut acc, &mut pending, opt, &adam)?;
        stats.updates += 1;
    }
    stats.mean_loss = loss_sum / stats.contributions as f64;
    let consumed: Vec<&PairRecord> = labeled.iter().map(|(p, _)| *p).collect();
    stats.mean_kl = kl_estimate(theta, reference, &consumed, sched, cfg.guidance)?;
    stats.wall_secs = started.elapsed().as_secs_f64();
    Ok(stats)
}

fn flush(
    theta: &mut Denoiser,
    acc: &mut Option<ParamSet>,
    pending: &mut usize,
    opt: &mut AdamState,
    adam: &AdamConfig,
) -> Result<()> {
    let mut g = acc.take().expect("accumulated gradient");
    if *pending > 1 {
        let mut avg = g.zeros_like();
        avg.axpy(1.0 / *pending as f64, &g)?;
        g = avg;
    }
    adam_step(&mut theta.params, &g, opt, adam)?;
    *pending = 0;
    Ok(())
}

/// Pair ids and classes for one epoch.
pub fn epoch_pair_specs(cfg: &TrainConfig, epoch: u64) -> Vec<(u64, usize)> {
    let k = cfg.pairs_per_epoch as u64;
    (0..k)
        .map(|i| (epoch * k + i, cfg.classes[(i as usize) % cfg.classes.len()]))
        .collect()
}

/// Final state of a fine-tuning run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub theta: Denoiser,
    pub reference: Denoiser,
    pub history: Vec<EpochStats>,
}

/// Full loop: sample pairs with the current policy, label them, train one
/// epoch, rotate the reference (unless fixed). `label` plays the
/// annotator; `on_epoch` sees each epoch's stats and the updated policy.
pub fn run_d3po(
    init: &Denoiser,
    cfg: &TrainConfig,
    sched: &NoiseSchedule,
    mut label: impl FnMut(&PairRecord) -> Result<PreferenceLabel>,
    mut on_epoch: impl FnMut(&EpochStats, &Denoiser),
) -> Result<RunOutcome> {
    cfg.validate()?;
    let mut theta = Denoiser {
        config: init.config.clone(),
        params: init.params.with_role(Role::Trainable),
    };
    let mut reference = advance_reference(&theta);
    let mut opt = AdamState::new(&theta.params);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs as u64 {
        let specs = epoch_pair_specs(cfg, epoch);
        let mut pairs = generate_pairs(&theta, &specs, cfg.seed, epoch, sched, cfg.guidance)?;
        for p in &mut pairs {
            p.label = Some(label(p)?);
        }
        let mut stats = finetune_epoch(&mut theta, &reference, &pairs, cfg, &mut opt, sched)?;
        stats.epoch = epoch;
        if !cfg.fixed_reference {
            reference = advance_reference(&theta);
        }
        on_epoch(&stats, &theta);
        history.push(stats);
    }
    Ok(RunOutcome {
        theta,
        reference,
        history,
    })
}
