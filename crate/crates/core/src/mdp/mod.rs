//! The denoising chain as a finite-horizon MDP.
//!
//! MDP time `t = 0..T-1` walks diffusion time `T..1`: the state at `t`
//! holds `x_{T-t}`, the action holds `x_{T-1-t}`, and the transition is the
//! index shift. Use [`diffusion_time`] instead of doing the arithmetic at
//! call sites.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::diffusion::{predict_mu_on, Denoiser, DenoiserConfig, NoiseSchedule, Trajectory};
use crate::error::{Error, Result};
use crate::ndcore::{Bound, Tape, Tensor, Var};

/// Diffusion timestep of the transition taken at MDP time `t`.
pub fn diffusion_time(t: usize, steps: usize) -> usize {
    assert!(t < steps, "MDP time {t} outside 0..{steps}");
    steps - t
}

#[derive(Debug, Clone, Copy)]
pub struct State<'a> {
    pub class: usize,
    pub t: usize,
    pub x: &'a Tensor,
}

#[derive(Debug, Clone, Copy)]
pub struct Action<'a> {
    pub x_next: &'a Tensor,
}

/// `(state, action)` pairs from MDP time `start` to `T-1`, borrowed from a
/// shared trajectory.
#[derive(Debug, Clone)]
pub struct Segment {
    traj: Arc<Trajectory>,
    start: usize,
    source: u64,
}

impl Segment {
    pub fn start(&self) -> usize {
        self.start
    }

    pub fn source(&self) -> u64 {
        self.source
    }

    pub fn horizon(&self) -> usize {
        self.traj.steps()
    }

    pub fn len(&self) -> usize {
        self.horizon() - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn trajectory(&self) -> &Arc<Trajectory> {
        &self.traj
    }

    /// State at absolute MDP time `t` (`start <= t <= T`).
    pub fn state(&self, t: usize) -> State<'_> {
        assert!(t >= self.start && t <= self.horizon(), "MDP time {t} outside segment");
        State {
            class: self.traj.class,
            t,
            x: &self.traj.states[t],
        }
    }

    /// Action at absolute MDP time `t` (`start <= t < T`).
    pub fn action(&self, t: usize) -> Action<'_> {
        assert!(t >= self.start && t < self.horizon(), "MDP time {t} has no action");
        Action {
            x_next: &self.traj.states[t + 1],
        }
    }

    pub fn pairs(&self) -> impl Iterator<Item = (State<'_>, Action<'_>)> {
        (self.start..self.horizon()).map(|t| (self.state(t), self.action(t)))
    }

    pub fn shares_storage(&self, other: &Segment) -> bool {
        Arc::ptr_eq(&self.traj, &other.traj)
    }
}

/// Full segment (`start = 0`) over a complete trajectory.
pub fn trajectory_to_segment(traj: Arc<Trajectory>, source: u64) -> Result<Segment> {
    if !traj.is_complete() {
        return Err(Error::invalid(format!(
            "trajectory has {} states for {} steps",
            traj.states.len(),
            traj.steps()
        )));
    }
    if traj.steps() == 0 {
        return Err(Error::invalid("trajectory has no steps"));
    }
    Ok(Segment {
        traj,
        start: 0,
        source,
    })
}

/// The suffixes `sigma_i` for `i = 0..T-1`, sharing the trajectory.
pub fn sub_segments(seg: &Segment) -> Result<Vec<Segment>> {
    if seg.is_empty() {
        return Err(Error::invalid("empty segment"));
    }
    if seg.start != 0 {
        return Err(Error::invalid("sub-segments are taken from a full segment"));
    }
    Ok((0..seg.horizon())
        .map(|start| Segment {
            start,
            ..seg.clone()
        })
        .collect())
}

/// `sum_d [-log(2 pi)/2 - log sigma - (a - mu)^2 / (2 sigma^2)]`.
pub fn gaussian_log_density(a: &[f64], mu: &[f64], sigma: f64) -> f64 {
    let sq: f64 = a.iter().zip(mu).map(|(x, m)| (x - m) * (x - m)).sum();
    normalizer(a.len(), sigma) - sq / (2.0 * sigma * sigma)
}

fn normalizer(dims: usize, sigma: f64) -> f64 {
    -(dims as f64) * (0.5 * (2.0 * PI).ln() + sigma.ln())
}

/// Log-densities of a batch of transitions as a `[n, 1]` column, one
/// denoiser forward for the whole batch.
pub fn log_policy_on(
    tape: &mut Tape,
    bound: &Bound,
    cfg: &DenoiserConfig,
    sched: &NoiseSchedule,
    transitions: &[(State<'_>, Action<'_>)],
    w: f64,
) -> Result<Var> {
    if transitions.is_empty() {
        return Err(Error::invalid("no transitions"));
    }
    let steps = sched.steps();
    let d = cfg.pixels();
    let n = transitions.len();
    let mut xs = Vec::with_capacity(n * d);
    let mut acts = Vec::with_capacity(n * d);
    let mut ts = Vec::with_capacity(n);
    let mut classes = Vec::with_capacity(n);
    for (s, a) in transitions {
        if s.t >= steps {
            return Err(Error::invalid(format!("MDP time {} outside 0..{steps}", s.t)));
        }
        if s.x.len() != d || a.x_next.len() != d {
            return Err(Error::shape(
                "log_policy",
                format!("state {} / action {} pixels, expected {d}", s.x.len(), a.x_next.len()),
            ));
        }
        xs.extend_from_slice(s.x.data());
        acts.extend_from_slice(a.x_next.data());
        ts.push(diffusion_time(s.t, steps));
        classes.push(s.class);
    }
    let xs = Tensor::new(vec![n, d], xs)?;
    let mu = predict_mu_on(tape, bound, cfg, sched, &xs, &ts, &classes, w)?;
    let a = tape.input(Tensor::new(vec![n, d], acts)?);
    let diff = tape.sub(a, mu)?;
    let sq = tape.mul(diff, diff)?;
    let sq = tape.sum_cols(sq);
    let inv: Vec<f64> = ts
        .iter()
        .map(|&t| -1.0 / (2.0 * sched.sigma(t).powi(2)))
        .collect();
    let quad = tape.mul_col(sq, &inv)?;
    let consts: Vec<f64> = ts.iter().map(|&t| normalizer(d, sched.sigma(t))).collect();
    let consts = tape.input(Tensor::new(vec![n, 1], consts)?);
    tape.add(quad, consts)
}

/// Value-only log-densities of a batch of transitions.
pub fn log_policy_batch(
    den: &Denoiser,
    transitions: &[(State<'_>, Action<'_>)],
    sched: &NoiseSchedule,
    w: f64,
) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let bound = tape.bind(&den.params)?;
    let lp = log_policy_on(&mut tape, &bound, &den.config, sched, transitions, w)?;
    let out = tape.value(lp).data().to_vec();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("log-policy".into()));
    }
    Ok(out)
}

/// Value-only `log pi(action | state)`.
pub fn log_policy(
    den: &Denoiser,
    state: State<'_>,
    action: Action<'_>,
    sched: &NoiseSchedule,
    w: f64,
) -> Result<f64> {
    Ok(log_policy_batch(den, &[(state, action)], sched, w)?[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalizer_values() {
        assert!((gaussian_log_density(&[0.0, 0.0], &[0.0, 0.0], 1.0) + (2.0 * PI).ln()).abs() < 1e-15);
        let one = gaussian_log_density(&[0.7], &[0.5], 0.2);
        let want = -0.5 * (2.0 * PI).ln() - 0.2f64.ln() - 0.5;
        assert!((one - want).abs() < 1e-12);
    }

    #[test]
    fn time_mapping() {
        assert_eq!(diffusion_time(0, 20), 20);
        assert_eq!(diffusion_time(19, 20), 1);
    }
}
