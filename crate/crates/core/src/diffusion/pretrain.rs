use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::denoiser::{predict_mu_on, Denoiser, DenoiserConfig};
use super::schedule::{forward_diffuse, posterior_mean, NoiseSchedule};
use super::shapes::ShapeDatasetSpec;
use crate::error::{Error, Result};
use crate::ndcore::{adam_step, backward, AdamConfig, AdamState, Bound, Tape, Tensor, Var};
use crate::seeds;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub steps: usize,
    pub weighting: LossWeighting,
    pub batch: usize,
    pub p_uncond: f64,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 3000,
            weighting: LossWeighting::default(),
            batch: 64,
            p_uncond: 0.1,
            adam: AdamConfig {
                lr: 1e-3,
                weight_decay: 0.0,
                clip_norm: Some(1.0),
                ..AdamConfig::default()
            },
            seed: 0,
        }
    }
}

/// Per-item weight on the squared mean error.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossWeighting {
    /// Plain mean squared error in mean space.
    #[default]
    Uniform,
    /// Each item divided by `eps_coef(t)^2`, which equals the squared
    /// error of the noise prediction.
    NoiseEquivalent,
}

impl LossWeighting {
    pub fn weight(self, t: usize, sched: &NoiseSchedule) -> f64 {
        match self {
            LossWeighting::Uniform => 1.0,
            LossWeighting::NoiseEquivalent => sched.eps_coef(t).powi(-2),
        }
    }
}

/// Mean squared error between the predicted mean `mu(x_t, t, c)` and the
/// forward-process posterior mean, over a batch of `(x0, class)`.
///
/// Each item draws its own `t` uniformly from `1..=T` and `eps ~ N(0, I)`;
/// its class is replaced by the null class with probability `p_uncond`.
#[allow(clippy::too_many_arguments)]
pub fn pretrain_step<R: Rng>(
    tape: &mut Tape,
    bound: &Bound,
    den: &Denoiser,
    batch: &[(Tensor, usize)],
    sched: &NoiseSchedule,
    p_uncond: f64,
    weighting: LossWeighting,
    rng: &mut R,
) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::invalid("empty pretraining batch"));
    }
    let d = den.config.pixels();
    let mut xs = Vec::with_capacity(batch.len() * d);
    let mut targets = Vec::with_capacity(batch.len() * d);
    let mut ts = Vec::with_capacity(batch.len());
    let mut classes = Vec::with_capacity(batch.len());
    for (x0, c) in batch {
        if x0.len() != d {
            return Err(Error::shape("pretrain_step", format!("image of {} pixels", x0.len())));
        }
        let t = rng.random_range(1..=sched.steps());
        let eps: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let eps = Tensor::new(x0.shape().to_vec(), eps)?;
        let xt = forward_diffuse(x0, t, &eps, sched)?;
        targets.extend_from_slice(posterior_mean(x0, &xt, t, sched)?.data());
        xs.extend_from_slice(xt.data());
        ts.push(t);
        classes.push(if rng.random::<f64>() < p_uncond {
            den.config.null_class()
        } else {
            *c
        });
    }
    let n = batch.len();
    let xs = Tensor::new(vec![n, d], xs)?;
    let target = Tensor::new(vec![n, d], targets)?;
    pretrain_loss(tape, bound, den, &xs, &ts, &classes, &target, sched, weighting)
}

/// Weighted squared error between the unguided, unclamped mean and
/// `target`, averaged over every pixel.
#[allow(clippy::too_many_arguments)]
pub fn pretrain_loss(
    tape: &mut Tape,
    bound: &Bound,
    den: &Denoiser,
    xs: &Tensor,
    ts: &[usize],
    classes: &[usize],
    target: &Tensor,
    sched: &NoiseSchedule,
    weighting: LossWeighting,
) -> Result<Var> {
    let cfg = DenoiserConfig {
        clip_x0: false,
        ..den.config.clone()
    };
    let mu = predict_mu_on(tape, bound, &cfg, sched, xs, ts, classes, 0.0)?;
    let target = tape.input(target.clone());
    let diff = tape.sub(mu, target)?;
    let mut sq = tape.mul(diff, diff)?;
    if weighting != LossWeighting::Uniform {
        let w: Vec<f64> = ts.iter().map(|&t| weighting.weight(t, sched)).collect();
        sq = tape.mul_col(sq, &w)?;
    }
    let total = tape.sum(sq);
    Ok(tape.scale(total, 1.0 / xs.len() as f64))
}

/// Trains `den` in place on freshly drawn shapes; calls `progress(step,
/// loss)` after every update. Returns the per-step losses.
pub fn pretrain(
    den: &mut Denoiser,
    data: &ShapeDatasetSpec,
    sched: &NoiseSchedule,
    cfg: &PretrainConfig,
    mut progress: impl FnMut(usize, f64),
) -> Result<Vec<f64>> {
    let mut opt = AdamState::new(&den.params);
    let mut data_rng = seeds::rng(cfg.seed, "pretrain-data", 0);
    let mut noise_rng = seeds::rng(cfg.seed, "pretrain", 0);
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch: Vec<(Tensor, usize)> = (0..cfg.batch).map(|_| data.sample(&mut data_rng)).collect();
        let mut tape = Tape::new();
        let bound = tape.bind(&den.params)?;
        let loss = pretrain_step(&mut tape, &bound, den, &batch, sched, cfg.p_uncond, cfg.weighting, &mut noise_rng)?;
        let value = tape.value(loss).item();
        let grads = backward(&tape, loss)?;
        drop(tape);
        adam_step(&mut den.params, &grads, &mut opt, &cfg.adam)?;
        losses.push(value);
        progress(step, value);
    }
    Ok(losses)
}
