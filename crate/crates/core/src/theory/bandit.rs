use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds;

/// One-state bandit with a KL-regularized objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditSpec {
    pub q: Vec<f64>,
    pub pi_ref: Vec<f64>,
    pub beta: f64,
}

impl BanditSpec {
    pub fn new(q: Vec<f64>, pi_ref: Vec<f64>, beta: f64) -> Result<Self> {
        let spec = Self { q, pi_ref, beta };
        spec.validate()?;
        Ok(spec)
    }

    pub fn uniform(q: Vec<f64>, beta: f64) -> Result<Self> {
        let n = q.len();
        Self::new(q, vec![1.0 / n as f64; n], beta)
    }

    pub fn actions(&self) -> usize {
        self.q.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.q.is_empty() || self.q.len() != self.pi_ref.len() {
            return Err(Error::invalid("Q and pi_ref must be non-empty and equally long"));
        }
        if !(self.beta > 0.0) || self.q.iter().any(|q| !q.is_finite()) {
            return Err(Error::invalid("beta must be > 0 and Q finite"));
        }
        if self.pi_ref.iter().any(|&p| !(p > 0.0)) {
            return Err(Error::invalid("pi_ref must be strictly positive"));
        }
        if (self.pi_ref.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("pi_ref must sum to 1"));
        }
        Ok(())
    }

    /// `E_pi[Q] - beta * KL(pi || pi_ref)`, with `0 log 0 = 0`.
    pub fn objective(&self, pi: &[f64]) -> f64 {
        let mut value = 0.0;
        for ((&p, &q), &r) in pi.iter().zip(&self.q).zip(&self.pi_ref) {
            value += p * q;
            if p > 0.0 {
                value -= self.beta * p * (p / r).ln();
            }
        }
        value
    }
}

/// `pi*(a) ∝ pi_ref(a) exp(Q(a) / beta)`, normalized in log space.
pub fn closed_form_policy(spec: &BanditSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let logits: Vec<f64> = spec
        .q
        .iter()
        .zip(&spec.pi_ref)
        .map(|(q, r)| r.ln() + q / spec.beta)
        .collect();
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    Ok(e.into_iter().map(|v| v / z).collect())
}

/// Euclidean projection onto the probability simplex.
fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, &x) in u.iter().enumerate() {
        cum += x;
        let t = (cum - 1.0) / (i + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

/// Maximizes the KL-regularized objective by search alone: projected
/// gradient ascent from `pi_ref`, then repeated pairwise line searches on a
/// grid of `resolution` points whose window shrinks every pass.
pub fn brute_force_policy(spec: &BanditSpec, resolution: usize) -> Result<Vec<f64>> {
    spec.validate()?;
    let n = spec.actions();
    if n > 6 {
        return Err(Error::invalid("brute force is limited to 6 actions"));
    }
    if resolution < 1000 {
        return Err(Error::invalid("resolution must be at least 1000 points"));
    }
    let mut pi = spec.pi_ref.clone();
    let floor = 1e-300;
    let step = 0.05 / (1.0 + spec.q.iter().map(|q| q.abs()).fold(0.0, f64::max) + spec.beta);
    for _ in 0..2000 {
        let grad: Vec<f64> = (0..n)
            .map(|i| spec.q[i] - spec.beta * ((pi[i].max(floor) / spec.pi_ref[i]).ln() + 1.0))
            .collect();
        let next = project_simplex(&pi.iter().zip(&grad).map(|(p, g)| p + step * g).collect::<Vec<_>>());
        if spec.objective(&next) >= spec.objective(&pi) {
            pi = next;
        }
    }
    if n == 1 {
        return Ok(vec![1.0]);
    }
    let mut best = spec.objective(&pi);
    for _ in 0..200 {
        let before = best;
        for i in 0..n {
            for j in i + 1..n {
                let total = pi[i] + pi[j];
                let mut lo = 0.0;
                let mut hi = total;
                let mut center = pi[i];
                while hi - lo > total * 1e-16 + f64::MIN_POSITIVE {
                    let mut arg = center;
                    let mut val = best;
                    for k in 0..=resolution {
                        let x = lo + (hi - lo) * k as f64 / resolution as f64;
                        let mut cand = pi.clone();
                        cand[i] = x;
                        cand[j] = total - x;
                        let v = spec.objective(&cand);
                        if v > val {
                            val = v;
                            arg = x;
                        }
                    }
                    center = arg;
                    best = val;
                    let half = 2.0 * (hi - lo) / resolution as f64;
                    lo = (center - half).max(0.0);
                    hi = (center + half).min(total);
                }
                pi[i] = center;
                pi[j] = total - center;
            }
        }
        if best - before <= 0.0 {
            break;
        }
    }
    Ok(pi)
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Random bandits: `n` in `{2, 3, 4}`, `Q` uniform in `[-2, 2]`,
/// `beta` in `{0.1, 1}`, and a random positive reference.
pub fn random_bandits(seed: u64, count: usize) -> Vec<BanditSpec> {
    (0..count)
        .map(|k| {
            let mut rng = seeds::rng(seed, "bandit", k as u64);
            let n = rng.random_range(2..=4);
            let q = (0..n).map(|_| rng.random_range(-2.0..=2.0)).collect();
            let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
            let z: f64 = raw.iter().sum();
            let beta = if rng.random::<bool>() { 0.1 } else { 1.0 };
            BanditSpec {
                q,
                pi_ref: raw.iter().map(|r| r / z).collect(),
                beta,
            }
        })
        .collect()
}
