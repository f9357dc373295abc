//! Recurrent sequence networks: the latent-conditioned autoregressive
//! decoder, the inference encoder, the softmax operators with local/total
//! energies, top-k decoding, and the small base language model.

mod baselm;
mod checkpoint;
mod decoder;
mod energy;
mod gru;
mod infer;

pub use baselm::{lm_greedy_answer, qa_step_batch, BaseLmParams, BaseLmVars, QaStepBatch};
pub use checkpoint::{CheckpointDoc, TensorEntry, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use decoder::{DecoderParams, DecoderVars};
pub use energy::{apply_operators, local_energy, local_energy_batch, total_energy, EnergyBreakdown};
pub use gru::{GruParams, GruVars};
pub use infer::{train_inference_net, InferTrainLog, InferenceNetParams, InferenceNetVars};

use crate::{Gradients, Tensor, Var};

/// Parameter/gradient pairs gathered from one backward pass, with a
/// per-group learning-rate multiplier (used to route the selection loss to
/// the unfrozen prompt slot only).
pub struct GradBundle<'a> {
    entries: Vec<(&'a mut Tensor, Tensor, f64)>,
}

impl<'a> Default for GradBundle<'a> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> GradBundle<'a> {
    pub fn new() -> Self {
        GradBundle {
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, param: &'a mut Tensor, var: &Var, grads: &mut Gradients, mult: f64) {
        if let Some(g) = grads.take(var) {
            self.entries.push((param, g, mult));
        }
    }

    pub fn push_all(
        &mut self,
        params: Vec<&'a mut Tensor>,
        vars: &[&Var],
        grads: &mut Gradients,
        mult: f64,
    ) {
        debug_assert_eq!(params.len(), vars.len());
        for (p, v) in params.into_iter().zip(vars) {
            self.push(p, v, grads, mult);
        }
    }

    /// Global L2 norm of all collected gradients (before multipliers).
    pub fn global_norm(&self) -> f64 {
        self.entries
            .iter()
            .map(|(_, g, _)| g.sq_norm())
            .sum::<f64>()
            .sqrt()
    }

    /// SGD step `p -= lr * mult * g`, with optional global-norm clipping.
    pub fn apply_sgd(self, lr: f64, clip: Option<f64>) {
        let scale = match clip {
            Some(c) => {
                let n = self.global_norm();
                if n > c {
                    c / n
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        for (param, grad, mult) in self.entries {
            param.add_scaled(&grad, -lr * mult * scale);
        }
    }

    /// Ascent step `p += lr * mult * g` (no clipping).
    pub fn apply_ascent(self, lr: f64) {
        for (param, grad, mult) in self.entries {
            param.add_scaled(&grad, lr * mult);
        }
    }
}
