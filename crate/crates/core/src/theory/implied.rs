use crate::d3po::PreferenceLabel;
use crate::diffusion::{Denoiser, NoiseSchedule};
use crate::error::{Error, Result};
use crate::mdp::{log_policy_batch, Action, Segment, State};
use crate::ndcore::softplus;

/// `beta * log(pi_theta(a|s) / pi_ref(a|s))`.
pub fn implied_q(
    theta: &Denoiser,
    reference: &Denoiser,
    state: State<'_>,
    action: Action<'_>,
    beta: f64,
    sched: &NoiseSchedule,
    w: f64,
) -> Result<f64> {
    if theta.config != reference.config {
        return Err(Error::invalid("policy and reference architectures differ"));
    }
    let t = log_policy_batch(theta, &[(state, action)], sched, w)?[0];
    let r = log_policy_batch(reference, &[(state, action)], sched, w)?[0];
    Ok(beta * (t - r))
}

/// Sum of [`implied_q`] over every transition of `segment`.
pub fn implied_q_sum(
    theta: &Denoiser,
    reference: &Denoiser,
    segment: &Segment,
    beta: f64,
    sched: &NoiseSchedule,
    w: f64,
) -> Result<f64> {
    if theta.config != reference.config {
        return Err(Error::invalid("policy and reference architectures differ"));
    }
    let transitions: Vec<_> = segment.pairs().collect();
    let t = log_policy_batch(theta, &transitions, sched, w)?;
    let r = log_policy_batch(reference, &transitions, sched, w)?;
    Ok(beta * t.iter().zip(&r).map(|(a, b)| a - b).sum::<f64>())
}

/// Mean `-log p(winner)` under Bradley-Terry on the scorer's outputs
/// `(label, score_a, score_b)`; ties are left out.
pub fn bt_nll(items: &[(PreferenceLabel, f64, f64)]) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for &(label, a, b) in items {
        let margin = match label {
            PreferenceLabel::A => a - b,
            PreferenceLabel::B => b - a,
            PreferenceLabel::Tie => continue,
        };
        total += softplus(-margin);
        n += 1;
    }
    if n == 0 {
        return Err(Error::invalid("no non-tie records"));
    }
    Ok(total / n as f64)
}

/// Spearman rank correlation with average ranks for ties; 0 when either
/// side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::invalid("need two equally long series of length >= 2"));
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mx) * (b - my);
        vx += (a - mx).powi(2);
        vy += (b - my).powi(2);
    }
    if vx == 0.0 || vy == 0.0 {
        return Ok(0.0);
    }
    Ok(cov / (vx * vy).sqrt())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}
