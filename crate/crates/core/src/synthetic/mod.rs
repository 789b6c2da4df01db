//! Verification backends with computable ground truth.

mod hmm;
mod noisy;

pub use hmm::{
    hmm_as_backends, hmm_exact_filtering, mean_tv_distance, pf_filtering_estimates, DiscreteHmm,
    HmmReward, HmmRewardSpace, HmmTransition,
};
pub use noisy::{noisy_task_backends, NoisyReward, NoisyRewardTask, NoisyTransition};
