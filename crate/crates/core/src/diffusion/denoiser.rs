//! Noise-prediction network `eps(x_t, t, c)` and the guided mean.
//!
//! The input row is `[x_t | sinusoidal(t) | class_embed[c]]`; the class
//! table carries one extra row, the null class used for guidance. The MLP
//! output is either the noise itself or a clean-image estimate `x0_hat`,
//! turned into noise by `(x_t - sqrt(abar) x0_hat) / sqrt(1 - abar)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::ndcore::{mlp, Bound, ParamSet, Role, Tape, Tensor, Var};

pub const CLASS_EMBED: &str = "class_embed";

/// What the MLP output stands for.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Parameterization {
    Noise,
    #[default]
    CleanImage,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiserConfig {
    pub side: usize,
    pub classes: usize,
    pub time_dim: usize,
    pub class_dim: usize,
    pub hidden: Vec<usize>,
    pub output: Parameterization,
    /// Clamp the guided clean-image estimate to the data range `[-1, 1]`
    /// before forming the mean.
    pub clip_x0: bool,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            side: 16,
            classes: 5,
            time_dim: 32,
            class_dim: 16,
            hidden: vec![192, 192],
            output: Parameterization::default(),
            clip_x0: true,
        }
    }
}

impl DenoiserConfig {
    pub fn pixels(&self) -> usize {
        self.side * self.side
    }

    pub fn input_width(&self) -> usize {
        self.pixels() + self.time_dim + self.class_dim
    }

    /// Row index of the unconditional class.
    pub fn null_class(&self) -> usize {
        self.classes
    }

    pub fn validate(&self) -> Result<()> {
        if self.side == 0 || self.classes == 0 || !self.time_dim.is_multiple_of(2) {
            return Err(Error::invalid(
                "denoiser needs side > 0, classes > 0 and an even time_dim",
            ));
        }
        Ok(())
    }
}

/// Network weights together with the architecture they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    pub config: DenoiserConfig,
    pub params: ParamSet,
}

impl Denoiser {
    pub fn init<R: Rng>(config: DenoiserConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new(Role::Trainable);
        let table: Vec<f64> = (0..(config.classes + 1) * config.class_dim)
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        params.insert(
            CLASS_EMBED,
            Tensor::new(vec![config.classes + 1, config.class_dim], table)?,
        )?;
        let mut widths = vec![config.input_width()];
        widths.extend(&config.hidden);
        widths.push(config.pixels());
        mlp::init_layers(&mut params, &widths, rng)?;
        Ok(Self { config, params })
    }

    /// Checks that `params` carries exactly the entries `config` implies.
    pub fn from_parts(config: DenoiserConfig, params: ParamSet) -> Result<Self> {
        config.validate()?;
        let table = params
            .get(CLASS_EMBED)
            .ok_or_else(|| Error::invalid("missing class embedding"))?;
        if table.shape() != [config.classes + 1, config.class_dim] {
            return Err(Error::shape(CLASS_EMBED, format!("{:?}", table.shape())));
        }
        let layers = mlp::layer_count(&params);
        if layers != config.hidden.len() + 1 {
            return Err(Error::invalid(format!(
                "expected {} layers, found {layers}",
                config.hidden.len() + 1
            )));
        }
        let first = params.get(&mlp::weight_name(0)).expect("layer 0");
        let last = params.get(&mlp::weight_name(layers - 1)).expect("last layer");
        if first.shape()[0] != config.input_width() || last.shape()[1] != config.pixels() {
            return Err(Error::shape(
                "denoiser",
                "layer widths disagree with the configuration",
            ));
        }
        Ok(Self { config, params })
    }

    /// A frozen deep copy.
    pub fn frozen(&self) -> Self {
        Self {
            config: self.config.clone(),
            params: self.params.frozen(),
        }
    }

    pub fn role(&self) -> Role {
        self.params.role()
    }
}

/// Sinusoidal embedding of diffusion time `t` (positions spread over
/// `[0, 1000]` so the low frequencies still move for short chains).
pub fn time_embedding(t: usize, steps: usize, dim: usize) -> Vec<f64> {
    let pos = t as f64 * 1000.0 / steps as f64;
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for i in 0..half {
        let freq = (-(10_000f64).ln() * i as f64 / half as f64).exp();
        out.push((pos * freq).sin());
    }
    for i in 0..half {
        let freq = (-(10_000f64).ln() * i as f64 / half as f64).exp();
        out.push((pos * freq).cos());
    }
    out
}

/// Noise prediction for a batch. `xs` is `[batch, pixels]`; `ts` and
/// `classes` give each row's diffusion time and class row.
pub fn eps_on(
    tape: &mut Tape,
    bound: &Bound,
    cfg: &DenoiserConfig,
    sched: &NoiseSchedule,
    xs: Var,
    ts: &[usize],
    classes: &[usize],
) -> Result<Var> {
    let batch = tape.value(xs).rows();
    if tape.value(xs).cols() != cfg.pixels() {
        return Err(Error::shape(
            "denoiser input",
            format!("{} pixels, expected {}", tape.value(xs).cols(), cfg.pixels()),
        ));
    }
    if ts.len() != batch || classes.len() != batch {
        return Err(Error::shape("denoiser input", "one t and class per row required"));
    }
    if let Some(c) = classes.iter().find(|&&c| c > cfg.null_class()) {
        return Err(Error::invalid(format!("class row {c} out of range")));
    }
    let mut temb = Vec::with_capacity(batch * cfg.time_dim);
    for &t in ts {
        temb.extend(time_embedding(t, sched.steps(), cfg.time_dim));
    }
    let temb = tape.input(Tensor::new(vec![batch, cfg.time_dim], temb)?);
    let table = bound.get(CLASS_EMBED)?;
    let cemb = tape.gather_rows(table, classes)?;
    let input = tape.concat_cols(&[xs, temb, cemb])?;
    let out = mlp::mlp_forward_on(tape, bound, input, cfg.hidden.len() + 1)?;
    match cfg.output {
        Parameterization::Noise => Ok(out),
        Parameterization::CleanImage => {
            let inv_sd: Vec<f64> = ts
                .iter()
                .map(|&t| 1.0 / (1.0 - sched.alpha_bar(t)).sqrt())
                .collect();
            let gain: Vec<f64> = ts
                .iter()
                .zip(&inv_sd)
                .map(|(&t, k)| sched.alpha_bar(t).sqrt() * k)
                .collect();
            let mut scaled = tape.value(xs).clone();
            let c = scaled.cols();
            for (row, k) in scaled.data_mut().chunks_mut(c).zip(&inv_sd) {
                row.iter_mut().for_each(|v| *v *= k);
            }
            let x_term = tape.input(scaled);
            let x0_term = tape.mul_col(out, &gain)?;
            tape.sub(x_term, x0_term)
        }
    }
}

/// Guided mean of `p(x_{t-1} | x_t, c)` for a batch:
/// `mu = (x_t - beta_t / sqrt(1 - alpha_bar_t) * eps_hat) / sqrt(alpha_t)` with
/// `eps_hat = (1 + w) eps(c) - w eps(null)`. With `w == 0` the unconditional
/// branch is not evaluated. With `cfg.clip_x0` the mean is instead the
/// posterior mean around `clamp(x0_hat, -1, 1)`, where
/// `x0_hat = (x_t - sqrt(1 - alpha_bar_t) eps_hat) / sqrt(alpha_bar_t)`; the
/// two agree whenever no pixel is clamped.
#[allow(clippy::too_many_arguments)]
pub fn predict_mu_on(
    tape: &mut Tape,
    bound: &Bound,
    cfg: &DenoiserConfig,
    sched: &NoiseSchedule,
    xs: &Tensor,
    ts: &[usize],
    classes: &[usize],
    w: f64,
) -> Result<Var> {
    for &t in ts {
        sched.check_t(t)?;
    }
    let batch = xs.rows();
    let eps_hat = if w == 0.0 {
        let x = tape.input(xs.clone());
        eps_on(tape, bound, cfg, sched, x, ts, classes)?
    } else {
        let doubled = Tensor::stack_rows(&[xs, xs])?.reshape(vec![2 * batch, xs.cols()])?;
        let x = tape.input(doubled);
        let mut ts2 = ts.to_vec();
        ts2.extend_from_slice(ts);
        let mut cs2 = classes.to_vec();
        cs2.extend(std::iter::repeat_n(cfg.null_class(), batch));
        let eps = eps_on(tape, bound, cfg, sched, x, &ts2, &cs2)?;
        let cond = tape.rows(eps, 0, batch)?;
        let uncond = tape.rows(eps, batch, batch)?;
        let cond = tape.scale(cond, 1.0 + w);
        let uncond = tape.scale(uncond, w);
        tape.sub(cond, uncond)?
    };
    if cfg.clip_x0 {
        return clipped_mean(tape, sched, xs, ts, eps_hat);
    }
    let coef: Vec<f64> = ts
        .iter()
        .map(|&t| sched.eps_coef(t))
        .collect();
    let inv_sqrt_alpha: Vec<f64> = ts.iter().map(|&t| 1.0 / sched.alpha(t).sqrt()).collect();
    let mut scaled_x = xs.clone();
    let c = xs.cols();
    for (row, k) in scaled_x.data_mut().chunks_mut(c).zip(&inv_sqrt_alpha) {
        row.iter_mut().for_each(|v| *v *= k);
    }
    let x_term = tape.input(scaled_x.reshape(vec![batch, c])?);
    let eps_term = tape.mul_col(eps_hat, &coef)?;
    tape.sub(x_term, eps_term)
}

fn scaled_rows(xs: &Tensor, k: &[f64]) -> Tensor {
    let mut out = xs.clone();
    let c = out.cols();
    for (row, k) in out.data_mut().chunks_mut(c).zip(k) {
        row.iter_mut().for_each(|v| *v *= k);
    }
    out
}

fn clipped_mean(
    tape: &mut Tape,
    sched: &NoiseSchedule,
    xs: &Tensor,
    ts: &[usize],
    eps_hat: Var,
) -> Result<Var> {
    let inv_sqrt_ab: Vec<f64> = ts.iter().map(|&t| 1.0 / sched.alpha_bar(t).sqrt()).collect();
    let eps_gain: Vec<f64> = ts
        .iter()
        .zip(&inv_sqrt_ab)
        .map(|(&t, k)| (1.0 - sched.alpha_bar(t)).sqrt() * k)
        .collect();
    let x_term = tape.input(scaled_rows(xs, &inv_sqrt_ab));
    let eps_term = tape.mul_col(eps_hat, &eps_gain)?;
    let x0 = tape.sub(x_term, eps_term)?;
    let x0 = tape.map(
        x0,
        |v| v.clamp(-1.0, 1.0),
        |v| if v.abs() < 1.0 { 1.0 } else { 0.0 },
    );
    let (c0, ct): (Vec<f64>, Vec<f64>) = ts
        .iter()
        .map(|&t| {
            let (prev, ab) = (sched.alpha_bar_prev(t), sched.alpha_bar(t));
            (
                prev.sqrt() * sched.beta(t) / (1.0 - ab),
                sched.alpha(t).sqrt() * (1.0 - prev) / (1.0 - ab),
            )
        })
        .unzip();
    let x0_term = tape.mul_col(x0, &c0)?;
    let xt_term = tape.input(scaled_rows(xs, &ct));
    tape.add(x0_term, xt_term)
}

/// Value-only guided mean for a single image.
pub fn predict_mu(
    den: &Denoiser,
    x_t: &Tensor,
    t: usize,
    class: usize,
    sched: &NoiseSchedule,
    w: f64,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let bound = tape.bind(&den.params)?;
    let xs = x_t.clone().reshape(vec![1, x_t.len()])?;
    let mu = predict_mu_on(&mut tape, &bound, &den.config, sched, &xs, &[t], &[class], w)?;
    tape.value(mu).clone().reshape(x_t.shape().to_vec())
}

/// Value-only guided means for a batch `[batch, pixels]`.
pub fn predict_mu_batch(
    den: &Denoiser,
    xs: &Tensor,
    ts: &[usize],
    classes: &[usize],
    sched: &NoiseSchedule,
    w: f64,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let bound = tape.bind(&den.params)?;
    let mu = predict_mu_on(&mut tape, &bound, &den.config, sched, xs, ts, classes, w)?;
    let out = tape.value(mu).clone();
    if !out.is_finite() {
        return Err(Error::NonFinite("predicted mean".into()));
    }
    Ok(out)
}
