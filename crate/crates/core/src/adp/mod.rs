//! Adversarial pre-training of the generator on offline teacher ODE pairs
//! with latent and data-space discriminators.

mod pairs;
mod train;

pub use pairs::{
    collect_ode_pairs, interpolate_batch, interpolate_pair, pair_seed, CollectSpec, OdePairDataset,
    PairBatch, NULL_LABEL,
};
pub use train::{
    adp_train, cubic_cdf, cubic_map, sample_cubic_t, sample_uniform_disc_t, AdpConfig, AdpTrainer,
    StepReport,
};
