mod common;

use std::f64::consts::PI;
use std::sync::Arc;

use d3po_core::diffusion::{gaussian, sample_trajectory, SampleRequest, Trajectory};
use d3po_core::mdp::{
    gaussian_log_density, log_policy, log_policy_batch, sub_segments, trajectory_to_segment,
    Action, State,
};
use d3po_core::ndcore::Tensor;
use d3po_core::seeds;
use rand::Rng;

fn sampled(steps: usize, side: usize) -> (d3po_core::diffusion::Denoiser, Arc<Trajectory>) {
    let den = common::tiny_denoiser(side, vec![6], 8);
    let sched = common::schedule(steps);
    let req = SampleRequest {
        class: 1,
        init_seed: 3,
        noise_seed: 4,
    };
    let traj = sample_trajectory(&den, req, &sched, 5.0).unwrap();
    (den, Arc::new(traj))
}

#[test]
fn segment_maps_states_and_actions() {
    let (_, traj) = sampled(20, 2);
    let seg = trajectory_to_segment(traj.clone(), 7).unwrap();
    assert_eq!(seg.len(), 20);
    assert_eq!(seg.start(), 0);
    assert_eq!(seg.source(), 7);
    assert_eq!(seg.state(0).x, traj.initial());
    assert_eq!(seg.action(19).x_next, traj.final_image());
    for (t, (s, a)) in seg.pairs().enumerate() {
        assert_eq!(s.t, t);
        assert_eq!(s.x, &traj.states[t]);
        assert_eq!(a.x_next, &traj.states[t + 1]);
    }
}

#[test]
fn incomplete_trajectory_rejected() {
    let (_, traj) = sampled(5, 2);
    let mut short = (*traj).clone();
    short.states.pop();
    assert!(trajectory_to_segment(Arc::new(short), 0).is_err());
}

#[test]
fn sub_segments_share_storage() {
    let (_, traj) = sampled(20, 2);
    let seg = trajectory_to_segment(traj, 0).unwrap();
    let subs = sub_segments(&seg).unwrap();
    assert_eq!(subs.len(), 20);
    assert_eq!(subs[0].len(), seg.len());
    assert_eq!(subs[0].start(), 0);
    assert_eq!(subs[19].len(), 1);
    for (i, s) in subs.iter().enumerate() {
        assert_eq!(s.start(), i);
        assert!(s.shares_storage(&seg));
        assert!(std::ptr::eq(s.state(i).x, seg.state(i).x));
    }
    assert!(sub_segments(&subs[3]).is_err());
}

#[test]
fn gaussian_log_density_examples() {
    let two = gaussian_log_density(&[0.4, -0.2], &[0.4, -0.2], 1.0);
    assert!((two + (2.0 * PI).ln()).abs() < 1e-12);
    assert!((two - -1.8378770664093453).abs() < 1e-12);

    let mu = [0.1, 0.2, 0.3];
    let d = mu.len() as f64;
    let s = gaussian_log_density(&mu, &mu, 0.3);
    let s2 = gaussian_log_density(&mu, &mu, 0.6);
    assert!(((s - s2) - d * 2f64.ln()).abs() < 1e-12);

    let one = gaussian_log_density(&[0.9], &[0.5], 0.4);
    assert!((one - (-0.5 * (2.0 * PI).ln() - 0.4f64.ln() - 0.5)).abs() < 1e-12);
}

#[test]
fn density_integrates_to_one() {
    let (den, traj) = sampled(6, 1);
    let sched = common::schedule(6);
    let seg = trajectory_to_segment(traj, 0).unwrap();
    let state = seg.state(2);
    let t = d3po_core::mdp::diffusion_time(2, 6);
    let sigma = sched.sigma(t);
    let mu = d3po_core::diffusion::predict_mu(&den, state.x, t, state.class, &sched, 5.0)
        .unwrap()
        .item();
    // Uniform proposal over mu +- 8 sigma; the density is evaluated in closed form.
    let (lo, width) = (mu - 8.0 * sigma, 16.0 * sigma);
    let mut rng = seeds::rng(0, "mc", 0);
    let n = 1_000_000;
    let mut acc = 0.0;
    for _ in 0..n {
        let a = lo + width * rng.random::<f64>();
        acc += gaussian_log_density(&[a], &[mu], sigma).exp();
    }
    let integral = acc / n as f64 * width;
    assert!((integral - 1.0).abs() < 0.01, "{integral}");

    // The library log-policy agrees with the closed form at one point.
    let a = Tensor::new(vec![1], vec![mu + 0.3 * sigma]).unwrap();
    let lp = log_policy(&den, state, Action { x_next: &a }, &sched, 5.0).unwrap();
    assert!((lp - gaussian_log_density(a.data(), &[mu], sigma)).abs() < 1e-9);
}

#[test]
fn reference_copy_gives_identical_log_policy() {
    let (den, traj) = sampled(8, 3);
    let sched = common::schedule(8);
    let frozen = den.frozen();
    let seg = trajectory_to_segment(traj, 0).unwrap();
    let pairs: Vec<(State, Action)> = seg.pairs().collect();
    let a = log_policy_batch(&den, &pairs, &sched, 5.0).unwrap();
    let b = log_policy_batch(&frozen, &pairs, &sched, 5.0).unwrap();
    assert_eq!(
        a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
    for (i, (s, x)) in pairs.iter().enumerate() {
        assert_eq!(log_policy(&den, *s, *x, &sched, 5.0).unwrap().to_bits(), a[i].to_bits());
    }
}

#[test]
fn realized_action_density_matches_recorded_noise() {
    let (den, traj) = sampled(10, 3);
    let sched = common::schedule(10);
    let seg = trajectory_to_segment(traj.clone(), 0).unwrap();
    let d = 9.0;
    for (k, (s, a)) in seg.pairs().enumerate() {
        let t = sched.steps() - k;
        let sigma = sched.sigma(t);
        let z = gaussian(traj.step_seeds[k], &[9]);
        let analytic = -d * (0.5 * (2.0 * PI).ln() + sigma.ln()) - 0.5 * z.sq_norm();
        let lp = log_policy(&den, s, a, &sched, 5.0).unwrap();
        let scale = analytic.abs().max(1.0);
        assert!((lp - analytic).abs() / scale < 1e-6, "t={t}: {lp} vs {analytic}");
    }
}

#[test]
fn shape_mismatch_rejected() {
    let (den, traj) = sampled(4, 2);
    let sched = common::schedule(4);
    let seg = trajectory_to_segment(traj, 0).unwrap();
    let wrong = Tensor::zeros(&[5]);
    assert!(log_policy(&den, seg.state(0), Action { x_next: &wrong }, &sched, 0.0).is_err());
}
