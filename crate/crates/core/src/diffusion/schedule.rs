use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndcore::Tensor;

/// Smallest per-step sampling standard deviation; keeps the Gaussian
/// log-density finite at the final step where the posterior variance is 0.
pub const SIGMA_MIN: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleKind {
    /// `alpha_bar(t) ∝ cos²((t/T + s)/(1 + s) · π/2)`.
    Cosine { offset: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleSpec {
    pub steps: usize,
    pub kind: ScheduleKind,
    /// Scale on the posterior standard deviation (1.0 is ancestral DDPM).
    pub eta: f64,
    pub sigma_min: f64,
    /// Target `alpha_bar_T`; the cosine curve itself reaches 0 there.
    pub final_alpha_bar: f64,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self {
            steps: 20,
            kind: ScheduleKind::Cosine { offset: 0.008 },
            eta: 1.0,
            sigma_min: SIGMA_MIN,
            final_alpha_bar: 5e-4,
        }
    }
}

/// Per-step tables, indexed by diffusion time `t = 1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    sigma: Vec<f64>,
    eta: f64,
    sigma_min: f64,
}

impl NoiseSchedule {
    pub fn new(spec: &ScheduleSpec) -> Result<Self> {
        make_schedule(spec.steps, spec)
    }

    /// Schedule from explicit betas.
    pub fn from_betas(beta: Vec<f64>, eta: f64, sigma_min: f64) -> Result<Self> {
        if beta.is_empty() {
            return Err(Error::invalid("schedule needs at least one step"));
        }
        if let Some(b) = beta.iter().find(|&&b| !(b > 0.0 && b < 1.0)) {
            return Err(Error::invalid(format!("beta {b} outside (0, 1)")));
        }
        if !(sigma_min > 0.0) || eta < 0.0 {
            return Err(Error::invalid("sigma_min must be > 0 and eta >= 0"));
        }
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(alpha.len());
        let mut acc = 1.0;
        for a in &alpha {
            acc *= a;
            alpha_bar.push(acc);
        }
        let sigma = (0..beta.len())
            .map(|i| {
                let prev = if i == 0 { 1.0 } else { alpha_bar[i - 1] };
                let tilde = (1.0 - prev) / (1.0 - alpha_bar[i]) * beta[i];
                (eta * tilde.sqrt()).max(sigma_min)
            })
            .collect();
        Ok(Self {
            beta,
            alpha,
            alpha_bar,
            sigma,
            eta,
            sigma_min,
        })
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    fn idx(&self, t: usize) -> usize {
        assert!(t >= 1 && t <= self.steps(), "diffusion time {t} outside 1..={}", self.steps());
        t - 1
    }

    pub fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::invalid(format!(
                "diffusion time {t} outside 1..={}",
                self.steps()
            )));
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[self.idx(t)]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[self.idx(t)]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[self.idx(t)]
    }

    /// `alpha_bar` at `t - 1`, with the empty product 1 at `t = 1`.
    pub fn alpha_bar_prev(&self, t: usize) -> f64 {
        if t == 1 {
            1.0
        } else {
            self.alpha_bar(t - 1)
        }
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[self.idx(t)]
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn sigma_min(&self) -> f64 {
        self.sigma_min
    }

    /// Coefficient on the noise prediction in the mean:
    /// `beta_t / (sqrt(alpha_t) sqrt(1 - alpha_bar_t))`.
    pub fn eps_coef(&self, t: usize) -> f64 {
        self.beta(t) / (self.alpha(t).sqrt() * (1.0 - self.alpha_bar(t)).sqrt())
    }
}

/// Builds a `T`-step schedule. `alpha_bar` follows the cosine curve for
/// `t < T`; the last value is `min(final_alpha_bar, alpha_bar_{T-1} / 2)`
/// so the final `alpha_T` stays bounded away from 0.
pub fn make_schedule(steps: usize, spec: &ScheduleSpec) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::invalid("schedule needs T >= 1"));
    }
    if !(spec.final_alpha_bar > 0.0 && spec.final_alpha_bar < 1.0) {
        return Err(Error::invalid("final_alpha_bar must lie in (0, 1)"));
    }
    let alpha_bar: Vec<f64> = match spec.kind {
        ScheduleKind::Cosine { offset } => {
            let f = |t: f64| {
                let x = (t / steps as f64 + offset) / (1.0 + offset) * std::f64::consts::FRAC_PI_2;
                x.cos().powi(2)
            };
            (0..=steps)
                .map(|t| if t == 0 { 1.0 } else { f(t as f64) / f(0.0) })
                .collect()
        }
    };
    let mut prev = 1.0;
    let beta = (1..=steps)
        .map(|t| {
            let target = if t == steps {
                spec.final_alpha_bar.min(prev * 0.5)
            } else {
                alpha_bar[t]
            };
            let b = (1.0 - target / prev).clamp(1e-8, 1.0 - 1e-8);
            prev *= 1.0 - b;
            b
        })
        .collect();
    NoiseSchedule::from_betas(beta, spec.eta, spec.sigma_min)
}

/// `x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps`.
pub fn forward_diffuse(x0: &Tensor, t: usize, eps: &Tensor, sched: &NoiseSchedule) -> Result<Tensor> {
    sched.check_t(t)?;
    mix(x0, eps, sched.alpha_bar(t))
}

/// The closed-form mixture for an explicit `alpha_bar`.
pub fn mix(x0: &Tensor, eps: &Tensor, alpha_bar: f64) -> Result<Tensor> {
    let (a, b) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    x0.zip_map(eps, |x, e| a * x + b * e)
}

/// Mean of `q(x_{t-1} | x_t, x0)`.
pub fn posterior_mean(x0: &Tensor, xt: &Tensor, t: usize, sched: &NoiseSchedule) -> Result<Tensor> {
    sched.check_t(t)?;
    let prev = sched.alpha_bar_prev(t);
    let ab = sched.alpha_bar(t);
    let c0 = prev.sqrt() * sched.beta(t) / (1.0 - ab);
    let ct = sched.alpha(t).sqrt() * (1.0 - prev) / (1.0 - ab);
    x0.zip_map(xt, |a, b| c0 * a + ct * b)
}

/// `x_{t-1} = mu + sigma_t z`.
pub fn reverse_step(mu: &Tensor, sigma: f64, z: &Tensor) -> Result<Tensor> {
    mu.zip_map(z, |m, n| m + sigma * n)
}
