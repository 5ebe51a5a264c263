//! Ancestral sampling of full denoising chains.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::denoiser::{predict_mu_batch, Denoiser};
use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::ndcore::Tensor;
use crate::seeds;

/// A recorded chain `x_T, x_{T-1}, ..., x_0`.
///
/// `step_seeds[k]` drives the noise of the move from `states[k]` to
/// `states[k + 1]`, i.e. diffusion time `T - k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub class: usize,
    pub states: Vec<Tensor>,
    pub init_seed: u64,
    pub step_seeds: Vec<u64>,
    pub guidance: f64,
}

impl Trajectory {
    /// Number of denoising steps `T`.
    pub fn steps(&self) -> usize {
        self.step_seeds.len()
    }

    pub fn is_complete(&self) -> bool {
        !self.step_seeds.is_empty() && self.states.len() == self.step_seeds.len() + 1
    }

    pub fn initial(&self) -> &Tensor {
        &self.states[0]
    }

    pub fn final_image(&self) -> &Tensor {
        self.states.last().expect("non-empty trajectory")
    }
}

/// Standard normal tensor drawn from a seeded stream.
pub fn gaussian(seed: u64, shape: &[usize]) -> Tensor {
    let mut rng = seeds::rng_from(seed);
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}

/// What to sample: class, the seed of `x_T`, and the seed from which the
/// per-step seeds are derived.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleRequest {
    pub class: usize,
    pub init_seed: u64,
    pub noise_seed: u64,
}

impl SampleRequest {
    pub fn step_seeds(&self, steps: usize) -> Vec<u64> {
        (0..steps as u64)
            .map(|k| seeds::derive(self.noise_seed, "step", k))
            .collect()
    }
}

/// Samples one chain. Parameters are only read.
pub fn sample_trajectory(
    den: &Denoiser,
    req: SampleRequest,
    sched: &NoiseSchedule,
    w: f64,
) -> Result<Trajectory> {
    Ok(sample_trajectories(den, &[req], sched, w)?.remove(0))
}

/// Samples many chains at once; each row uses only its own seeds, so the
/// result for a request does not depend on what else is in the batch.
pub fn sample_trajectories(
    den: &Denoiser,
    reqs: &[SampleRequest],
    sched: &NoiseSchedule,
    w: f64,
) -> Result<Vec<Trajectory>> {
    let d = den.config.pixels();
    let steps = sched.steps();
    let mut out: Vec<Trajectory> = reqs
        .iter()
        .map(|r| Trajectory {
            class: r.class,
            states: vec![gaussian(r.init_seed, &[d])],
            init_seed: r.init_seed,
            step_seeds: r.step_seeds(steps),
            guidance: w,
        })
        .collect();
    replay_from_states(den, &mut out, sched)?;
    Ok(out)
}

/// Regenerates every state after `x_T` from the stored seeds.
pub fn replay(den: &Denoiser, traj: &Trajectory, sched: &NoiseSchedule) -> Result<Trajectory> {
    if traj.step_seeds.len() != sched.steps() {
        return Err(Error::invalid("trajectory length does not match schedule"));
    }
    let mut t = vec![Trajectory {
        states: vec![gaussian(traj.init_seed, &[den.config.pixels()])],
        ..traj.clone()
    }];
    replay_from_states(den, &mut t, sched)?;
    Ok(t.remove(0))
}

fn replay_from_states(den: &Denoiser, trajs: &mut [Trajectory], sched: &NoiseSchedule) -> Result<()> {
    if trajs.is_empty() {
        return Ok(());
    }
    let d = den.config.pixels();
    let steps = sched.steps();
    let w = trajs[0].guidance;
    if trajs.iter().any(|t| t.guidance != w) {
        return Err(Error::invalid("batched trajectories must share a guidance weight"));
    }
    let classes: Vec<usize> = trajs.iter().map(|t| t.class).collect();
    for k in 0..steps {
        let t = steps - k;
        let rows: Vec<&Tensor> = trajs.iter().map(|tr| &tr.states[k]).collect();
        let xs = Tensor::stack_rows(&rows)?.reshape(vec![trajs.len(), d])?;
        let ts = vec![t; trajs.len()];
        let mu = predict_mu_batch(den, &xs, &ts, &classes, sched, w)?;
        let sigma = sched.sigma(t);
        for (i, tr) in trajs.iter_mut().enumerate() {
            let z = gaussian(tr.step_seeds[k], &[d]);
            let next: Vec<f64> = mu
                .row_slice(i)
                .iter()
                .zip(z.data())
                .map(|(m, n)| m + sigma * n)
                .collect();
            tr.states.push(Tensor::new(vec![d], next)?);
        }
    }
    Ok(())
}
