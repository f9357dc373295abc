//! Latent-space energy-based model: the tilted-Gaussian prior, short-run
//! Langevin prior/posterior samplers, the contrastive prior update and the
//! generator update, partition-function diagnostics, and the sequential
//! training loop over tasks.

mod langevin;
mod prior;
mod train;

pub use langevin::{langevin, LangevinConfig};
pub use prior::{log_z_mc, PriorParams, PriorVars};
pub use train::{
    train_ebm, update_generator, update_prior, EbmDims, EbmLogRecord, EBMState, TrainState,
};
