use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndcore::sigmoid;
use crate::seeds;

use super::report::VerificationReport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prop2Config {
    pub q0: f64,
    pub q1: f64,
    pub sigma2: f64,
    pub delta: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub trials: usize,
    pub seed: u64,
}

impl Default for Prop2Config {
    fn default() -> Self {
        Self {
            q0: 1.0,
            q1: 0.0,
            sigma2: 0.25,
            delta: 0.1,
            q_min: 0.0,
            q_max: 1.0,
            trials: 10_000,
            seed: 0,
        }
    }
}

impl Prop2Config {
    pub fn validate(&self) -> Result<()> {
        let inside = |q: f64| q >= self.q_min && q <= self.q_max;
        if !(inside(self.q0) && inside(self.q1)) {
            return Err(Error::invalid("expected returns must lie in [q_min, q_max]"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) || !(self.sigma2 >= 0.0) {
            return Err(Error::invalid("need delta in (0, 1) and sigma2 >= 0"));
        }
        if self.trials < 10_000 {
            return Err(Error::invalid("at least 10^4 trials are required"));
        }
        Ok(())
    }

    /// `xi = exp(q_max) / exp(q_min)`.
    pub fn xi(&self) -> f64 {
        (self.q_max - self.q_min).exp()
    }

    /// `(xi^2 + 1)(exp(sigma^2) - 1) / (16 xi)`, the variance bound on the
    /// preference probability.
    pub fn variance_bound(&self) -> f64 {
        let xi = self.xi();
        (xi * xi + 1.0) * (self.sigma2.exp() - 1.0) / (16.0 * xi)
    }

    /// The stated deviation bound `variance_bound / delta`.
    pub fn bound(&self) -> f64 {
        self.variance_bound() / self.delta
    }

    /// The deviation a two-sided Chebyshev step gives from the same
    /// variance bound: `sqrt(variance_bound / delta)`.
    pub fn chebyshev_bound(&self) -> f64 {
        (self.variance_bound() / self.delta).sqrt()
    }
}

/// Deviations `|p* - p~*|` over the trials: returns drawn from
/// `N(Q_i, sigma^2)` and clipped to `[q_min, q_max]`, compared with the
/// probability formed from the expected returns.
pub fn prop2_deviations(cfg: &Prop2Config) -> Result<Vec<f64>> {
    cfg.validate()?;
    let sd = cfg.sigma2.sqrt();
    let mean_p = sigmoid(cfg.q0 - cfg.q1);
    let mut rng = seeds::rng(cfg.seed, "mc", 0);
    Ok((0..cfg.trials)
        .map(|_| {
            let z0: f64 = rng.sample(StandardNormal);
            let z1: f64 = rng.sample(StandardNormal);
            let x0 = (cfg.q0 + sd * z0).clamp(cfg.q_min, cfg.q_max);
            let x1 = (cfg.q1 + sd * z1).clamp(cfg.q_min, cfg.q_max);
            (sigmoid(x0 - x1) - mean_p).abs()
        })
        .collect())
}

fn violation_rate(devs: &[f64], bound: f64) -> f64 {
    // A deviation of exactly 0 is never a violation, even when the bound is 0.
    let hits = devs.iter().filter(|&&d| d > 0.0 && d >= bound).count();
    hits as f64 / devs.len() as f64
}

/// Empirical frequency of `|p* - p~*| >= bound`, which must not exceed
/// `delta`. A bound above 1 cannot be violated and passes with a warning.
pub fn verify_prop2(cfg: &Prop2Config) -> Result<VerificationReport> {
    let devs = prop2_deviations(cfg)?;
    let bound = cfg.bound();
    let rate = violation_rate(&devs, bound);
    let mut report = VerificationReport::new(
        format!("prop2[sigma2={}, delta={}]", cfg.sigma2, cfg.delta),
        rate,
        cfg.delta,
        cfg,
    );
    report.add_detail("bound", bound);
    report.add_detail("chebyshev_bound", cfg.chebyshev_bound());
    report.add_detail(
        "chebyshev_violation_rate",
        violation_rate(&devs, cfg.chebyshev_bound()),
    );
    if bound > 1.0 {
        report.warning = Some(format!("bound {bound:.4} exceeds 1; the check is vacuous"));
    }
    Ok(report)
}

/// The 3 x 3 grid `sigma in {0.1, 0.3, 0.5}`, `delta in {0.05, 0.1, 0.2}`
/// with `Q = (1, 0)` clipped to `[0, 1]`.
pub fn prop2_grid(trials: usize, seed: u64) -> Vec<Prop2Config> {
    let mut out = Vec::new();
    for sigma in [0.1f64, 0.3, 0.5] {
        for delta in [0.05, 0.1, 0.2] {
            out.push(Prop2Config {
                sigma2: sigma * sigma,
                delta,
                trials,
                seed,
                ..Prop2Config::default()
            });
        }
    }
    out
}
