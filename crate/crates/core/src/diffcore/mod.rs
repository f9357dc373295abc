//! Dense tensors, deterministic seeded randomness, reverse-mode gradients,
//! and a finite-difference oracle.
//!
//! Everything here is generic over the scalar type via [`Scalar`]; the crate
//! root exports `f64` aliases which the rest of the artifact uses.

mod fdcheck;
mod rng;
mod scalar;
mod tape;
mod tensor;

pub use fdcheck::finite_diff_check;
pub use rng::Rng;
pub use scalar::Scalar;
pub use tape::{GradientsBase, TapeBase, VarBase};
pub use tensor::TensorBase;
