use rand::Rng;

use super::report::VerificationReport;
use crate::d3po::{generate_pair, reference_log_probs, step_loss_on, PreferenceLabel};
use crate::diffusion::{Denoiser, DenoiserConfig, NoiseSchedule, Parameterization, ScheduleSpec};
use crate::error::Result;
use crate::ndcore::{grad_check, Role};
use crate::seeds;

/// Finite-difference check of the per-step preference loss on a tiny
/// network, over every timestep of a 4-step chain. `measured` is the worst
/// relative error.
pub fn verify_step_loss_gradients(seed: u64, tolerance: f64) -> Result<VerificationReport> {
    let config = DenoiserConfig {
        side: 2,
        classes: 3,
        time_dim: 4,
        class_dim: 3,
        hidden: vec![5],
        output: Parameterization::CleanImage,
        clip_x0: true,
    };
    let spec = ScheduleSpec { steps: 4, ..ScheduleSpec::default() };
    let sched = NoiseSchedule::new(&spec)?;
    let reference = Denoiser::init(config.clone(), &mut seeds::rng(seed, "gradcheck-init", 0))?.frozen();
    let mut theta = reference.params.with_role(Role::Trainable);
    let mut rng = seeds::rng(seed, "gradcheck-perturb", 0);
    for (_, t) in theta.iter_mut()? {
        t.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.05..0.05));
    }
    let w = 1.5;
    let pair = generate_pair(&reference, 1, seed, 0, &sched, w)?;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for t in 0..sched.steps() {
        let ref_lp = reference_log_probs(&reference, &pair, t, &sched, w)?;
        let check = grad_check(
            |tape, bound| {
                step_loss_on(tape, bound, &config, &sched, &pair, PreferenceLabel::A, t, ref_lp, 0.1, w)
            },
            &theta,
            1e-6,
        )?;
        worst = worst.max(check.max_rel_error);
        checked += check.checked;
    }
    let mut report = VerificationReport::new("grad_check", worst, tolerance, &(seed, &config, spec));
    report.add_detail("elements_checked", checked);
    report.add_detail("timesteps", sched.steps());
    Ok(report)
}
