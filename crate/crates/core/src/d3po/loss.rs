use crate::diffusion::{Denoiser, DenoiserConfig, NoiseSchedule, Trajectory};
use crate::error::{Error, Result};
use crate::mdp::{log_policy_batch, log_policy_on, Action, State};
use crate::ndcore::{Bound, Tape, Var};

use super::pair::{PairRecord, PreferenceLabel};

/// `-log sigmoid(beta * delta)` in the stable form `softplus(-beta * delta)`.
pub fn preference_loss(beta: f64, delta: f64) -> f64 {
    crate::ndcore::softplus(-beta * delta)
}

/// `(state, action)` of trajectory A then B at MDP time `t`.
pub fn pair_transitions(pair: &PairRecord, t: usize) -> Result<[(State<'_>, Action<'_>); 2]> {
    let steps = pair.a.steps();
    if t >= steps || pair.b.steps() != steps {
        return Err(Error::invalid(format!("MDP time {t} outside 0..{steps}")));
    }
    Ok([transition(&pair.a, pair.class, t), transition(&pair.b, pair.class, t)])
}

fn transition(traj: &Trajectory, class: usize, t: usize) -> (State<'_>, Action<'_>) {
    (
        State {
            class,
            t,
            x: &traj.states[t],
        },
        Action {
            x_next: &traj.states[t + 1],
        },
    )
}

/// Reference log-densities `[A, B]` at MDP time `t`.
pub fn reference_log_probs(
    reference: &Denoiser,
    pair: &PairRecord,
    t: usize,
    sched: &NoiseSchedule,
    w: f64,
) -> Result<[f64; 2]> {
    let lp = log_policy_batch(reference, &pair_transitions(pair, t)?, sched, w)?;
    Ok([lp[0], lp[1]])
}

/// Step loss with the reference log-densities `[A, B]` supplied. One
/// denoiser forward covers both trajectories.
#[allow(clippy::too_many_arguments)]
pub fn step_loss_on(
    tape: &mut Tape,
    theta: &Bound,
    cfg: &DenoiserConfig,
    sched: &NoiseSchedule,
    pair: &PairRecord,
    label: PreferenceLabel,
    t: usize,
    ref_lp: [f64; 2],
    beta: f64,
    w: f64,
) -> Result<Var> {
    let (win, lose) = match label {
        PreferenceLabel::A => (0, 1),
        PreferenceLabel::B => (1, 0),
        PreferenceLabel::Tie => return Err(Error::TieLabel),
    };
    if !(beta > 0.0) {
        return Err(Error::invalid("beta must be > 0"));
    }
    let lp = log_policy_on(tape, theta, cfg, sched, &pair_transitions(pair, t)?, w)?;
    let lw = tape.rows(lp, win, 1)?;
    let ll = tape.rows(lp, lose, 1)?;
    let diff = tape.sub(lw, ll)?;
    let delta = tape.add_scalar(diff, -(ref_lp[win] - ref_lp[lose]));
    let z = tape.scale(delta, -beta);
    let loss = tape.softplus(z);
    Ok(tape.sum(loss))
}

/// Direct preference loss at MDP time `t`:
/// `softplus(-beta * ((lp_w - ref_w) - (lp_l - ref_l)))`. Gradients reach
/// only `theta`.
#[allow(clippy::too_many_arguments)]
pub fn step_loss(
    tape: &mut Tape,
    theta: &Bound,
    cfg: &DenoiserConfig,
    reference: &Denoiser,
    pair: &PairRecord,
    label: PreferenceLabel,
    t: usize,
    beta: f64,
    sched: &NoiseSchedule,
    w: f64,
) -> Result<Var> {
    if label == PreferenceLabel::Tie {
        return Err(Error::TieLabel);
    }
    let ref_lp = reference_log_probs(reference, pair, t, sched, w)?;
    step_loss_on(tape, theta, cfg, sched, pair, label, t, ref_lp, beta, w)
}
