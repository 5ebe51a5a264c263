//! Reward-weighted likelihood fine-tuning, the comparison method.

use std::time::Instant;

use crate::diffusion::{Denoiser, DenoiserConfig, NoiseSchedule, Trajectory};
use crate::error::{Error, Result};
use crate::mdp::{log_policy_on, Action, State};
use crate::ndcore::{adam_step, backward, AdamState, Bound, Role, Tape, Var};

use super::pair::generate_pairs;
use super::train::{advance_reference, epoch_pair_specs, EpochStats, RunOutcome, TrainConfig};

/// `softmax(r / tau)`, shifted by the maximum for stability.
pub fn softmax_weights(rewards: &[f64], tau: f64) -> Result<Vec<f64>> {
    if rewards.is_empty() {
        return Err(Error::invalid("empty reward batch"));
    }
    if !(tau > 0.0) || rewards.iter().any(|r| !r.is_finite()) {
        return Err(Error::invalid("rewards must be finite and tau > 0"));
    }
    let m = rewards.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = rewards.iter().map(|r| ((r - m) / tau).exp()).collect();
    let z: f64 = e.iter().sum();
    Ok(e.into_iter().map(|v| v / z).collect())
}

/// `-sum_i w_i sum_t log pi(a_t^i | s_t^i)` with `w = softmax(r / tau)`.
#[allow(clippy::too_many_arguments)]
pub fn reward_weighted_step(
    tape: &mut Tape,
    theta: &Bound,
    cfg: &DenoiserConfig,
    sched: &NoiseSchedule,
    samples: &[(&Trajectory, f64)],
    tau: f64,
    w: f64,
) -> Result<Var> {
    let all: Vec<usize> = (0..sched.steps()).collect();
    weighted_log_likelihood(tape, theta, cfg, sched, samples, &all, tau, w)
}

/// The single-timestep term `-sum_i w_i log pi(a_t^i | s_t^i)`.
#[allow(clippy::too_many_arguments)]
pub fn reward_weighted_term(
    tape: &mut Tape,
    theta: &Bound,
    cfg: &DenoiserConfig,
    sched: &NoiseSchedule,
    samples: &[(&Trajectory, f64)],
    t: usize,
    tau: f64,
    w: f64,
) -> Result<Var> {
    weighted_log_likelihood(tape, theta, cfg, sched, samples, &[t], tau, w)
}

#[allow(clippy::too_many_arguments)]
fn weighted_log_likelihood(
    tape: &mut Tape,
    theta: &Bound,
    cfg: &DenoiserConfig,
    sched: &NoiseSchedule,
    samples: &[(&Trajectory, f64)],
    steps: &[usize],
    tau: f64,
    w: f64,
) -> Result<Var> {
    let rewards: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let weights = softmax_weights(&rewards, tau)?;
    let horizon = sched.steps();
    let mut transitions = Vec::with_capacity(samples.len() * steps.len());
    let mut row_weights = Vec::with_capacity(samples.len() * steps.len());
    for ((traj, _), wi) in samples.iter().zip(&weights) {
        if !traj.is_complete() || traj.steps() != horizon {
            return Err(Error::invalid("incomplete trajectory in reward batch"));
        }
        for &t in steps {
            if t >= horizon {
                return Err(Error::invalid(format!("MDP time {t} outside 0..{horizon}")));
            }
            transitions.push((
                State {
                    class: traj.class,
                    t,
                    x: &traj.states[t],
                },
                Action {
                    x_next: &traj.states[t + 1],
                },
            ));
            row_weights.push(-wi);
        }
    }
    let lp = log_policy_on(tape, theta, cfg, sched, &transitions, w)?;
    let weighted = tape.mul_col(lp, &row_weights)?;
    Ok(tape.sum(weighted))
}

/// Same samples and update schedule as [`super::run_d3po`]: each batch of
/// `cfg.baseline_batch` samples is fitted by reward-weighted likelihood,
/// one optimizer update per visited timestep (or one per batch over the
/// whole chain when `all_steps` is off).
pub fn run_reward_weighted(
    init: &Denoiser,
    cfg: &TrainConfig,
    sched: &NoiseSchedule,
    mut reward: impl FnMut(&Trajectory) -> Result<f64>,
    mut on_epoch: impl FnMut(&EpochStats, &Denoiser),
) -> Result<RunOutcome> {
    cfg.validate()?;
    let mut theta = Denoiser {
        config: init.config.clone(),
        params: init.params.with_role(Role::Trainable),
    };
    let reference = advance_reference(&theta);
    let mut opt = AdamState::new(&theta.params);
    let adam = cfg.adam();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs as u64 {
        let started = Instant::now();
        let specs = epoch_pair_specs(cfg, epoch);
        let pairs = generate_pairs(&theta, &specs, cfg.seed, epoch, sched, cfg.guidance)?;
        let mut samples = Vec::with_capacity(pairs.len() * 2);
        for p in &pairs {
            for traj in [&p.a, &p.b] {
                samples.push((traj.as_ref(), reward(traj)?));
            }
        }
        let mut stats = EpochStats {
            epoch,
            pairs_consumed: pairs.len(),
            ..EpochStats::default()
        };
        let mut loss_sum = 0.0;
        let steps = sched.steps();
        for batch in samples.chunks(cfg.baseline_batch) {
            let visits: Vec<Option<usize>> = if cfg.all_steps {
                cfg.mdp_steps(steps).into_iter().map(Some).collect()
            } else {
                vec![None]
            };
            for t in visits {
                let mut tape = Tape::new();
                let bound = tape.bind(&theta.params)?;
                let (c, tau, w) = (&theta.config, cfg.tau, cfg.guidance);
                let loss = match t {
                    Some(t) => reward_weighted_term(&mut tape, &bound, c, sched, batch, t, tau, w)?,
                    None => reward_weighted_step(&mut tape, &bound, c, sched, batch, tau, w)?,
                };
                loss_sum += tape.value(loss).item();
                let grads = backward(&tape, loss)?;
                adam_step(&mut theta.params, &grads, &mut opt, &adam)?;
                stats.updates += 1;
                stats.contributions += batch.len();
            }
        }
        stats.mean_loss = if stats.updates > 0 {
            loss_sum / stats.updates as f64
        } else {
            0.0
        };
        stats.wall_secs = started.elapsed().as_secs_f64();
        on_epoch(&stats, &theta);
        history.push(stats);
    }
    Ok(RunOutcome {
        theta,
        reference,
        history,
    })
}
