//! Numerical checks of the KL-regularized optimum, the return-noise
//! bound, and the implicit reward carried by a fine-tuned policy.

mod bandit;
mod gradients;
mod implied;
mod prop2;
mod report;

pub use bandit::{
    brute_force_policy, closed_form_policy, random_bandits, total_variation, BanditSpec,
};
pub use gradients::verify_step_loss_gradients;
pub use implied::{bt_nll, implied_q, implied_q_sum, spearman};
pub use prop2::{prop2_deviations, prop2_grid, verify_prop2, Prop2Config};
pub use report::{digest, VerificationReport};

use crate::error::{Error, Result};

/// Largest total-variation distance between the closed-form policy and the
/// brute-force maximizer over `specs`.
pub fn verify_prop1(specs: &[BanditSpec], tolerance: f64) -> Result<VerificationReport> {
    if specs.len() < 5 {
        return Err(Error::invalid("at least 5 bandits are required"));
    }
    let mut worst: f64 = 0.0;
    for spec in specs {
        let closed = closed_form_policy(spec)?;
        let brute = brute_force_policy(spec, 1000)?;
        worst = worst.max(total_variation(&closed, &brute));
    }
    let mut report = VerificationReport::new("prop1", worst, tolerance, &specs);
    report.add_detail("bandits", specs.len());
    Ok(report)
}
