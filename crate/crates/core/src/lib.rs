//! Continual learning with latent-space energy-based replay and progressive
//! parameter selection.
//!
//! The crate is organised bottom-up:
//!
//! - [`diffcore`] — dense tensors, seeded deterministic randomness,
//!   reverse-mode gradients on a recording tape, and a finite-difference
//!   oracle. Generic over the scalar type; the rest of the crate uses the
//!   `f64` aliases exported below.
//! - [`textdata`] — closed vocabulary, the unified QA serialization,
//!   synthetic task generators, and task-order enumeration.
//! - [`seqmodel`] — recurrent sequence networks: the latent-conditioned
//!   decoder, the inference encoder, the softmax operators with their local
//!   and total energies, decoding, and the small base language model.
//! - [`latent_ebm`] — the latent-space EBM prior, short-run Langevin
//!   samplers, the contrastive prior/generator updates, and the sequential
//!   EBM training loop.
//! - [`replay`] — pseudo-sample generation at ratio gamma, the append-only
//!   sample store, and merging into the current task's training set.
//! - [`pps`] — progressive parameter selection: per-task prompt slots,
//!   freezing, the selection loss, and the combined loss.
//! - [`harness`] — the experiment driver: continual/multitask runs,
//!   baselines, ablations, metrics, order batteries, sweeps, and file
//!   outputs behind the `ppsebm` CLI.

pub mod diffcore;
pub mod error;
pub mod harness;
pub mod latent_ebm;
pub mod pps;
pub mod replay;
pub mod seqmodel;
pub mod textdata;

pub use error::{CoreError, Result};

/// Default scalar for the whole artifact: 64-bit everywhere.
pub type Real = f64;

/// Dense tensor over [`Real`].
pub type Tensor = diffcore::TensorBase<Real>;
/// Recording tape over [`Real`].
pub type Tape = diffcore::TapeBase<Real>;
/// Tape variable over [`Real`].
pub type Var = diffcore::VarBase<Real>;
/// Gradient map over [`Real`].
pub type Gradients = diffcore::GradientsBase<Real>;

/// Single-precision aliases, for callers that trade accuracy for footprint.
pub type Tensor32 = diffcore::TensorBase<f32>;
pub type Tape32 = diffcore::TapeBase<f32>;
pub type Var32 = diffcore::VarBase<f32>;

pub use diffcore::Rng;
