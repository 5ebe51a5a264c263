//! Preference fine-tuning of the denoiser from labeled trajectory pairs.

mod baseline;
mod loss;
mod pair;
mod train;

pub use baseline::{
    reward_weighted_step, reward_weighted_term, run_reward_weighted, softmax_weights,
};
pub use loss::{pair_transitions, preference_loss, reference_log_probs, step_loss, step_loss_on};
pub use pair::{generate_pair, generate_pairs, pair_requests, PairRecord, PreferenceLabel};
pub use train::{
    advance_reference, epoch_pair_specs, finetune_epoch, kl_estimate, run_d3po, EpochStats,
    RunOutcome, StepOrder, TrainConfig,
};
