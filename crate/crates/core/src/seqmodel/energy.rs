//! Softmax operators and the local/total energy of the inference path.
//!
//! Both operators map the inference logits z_m through a softmax. The first
//! fills the decoder's latent input slot; the second weights the decoder's
//! next-symbol log-distribution after it has consumed x_m. The latent is
//! d-dimensional while the distribution covers V symbols, so the weighting
//! contracts against the log-probabilities of the first d symbols (d <= V);
//! the weights sum to one, which keeps the energy a nonnegative
//! cross-entropy-style quantity (uniform conditional gives exactly log V).

use crate::error::{CoreError, Result};
use crate::seqmodel::decoder::{DecoderParams, DecoderVars};
use crate::seqmodel::infer::InferenceNetParams;
use crate::textdata::{GEN_ID, PAD_ID};
use crate::{Tape, Tensor, Var};

/// Both operator outputs for one latent logit vector: (o1, o2), each
/// `softmax(z)`.
pub fn apply_operators(z: &Tensor) -> Result<(Tensor, Tensor)> {
    if !z.all_finite() {
        return Err(CoreError::NonFinite {
            op: "apply_operators",
        });
    }
    let tape = Tape::new();
    let o = tape.constant(z).softmax()?.value().with_grad(true);
    Ok((o.clone(), o))
}

/// Per-task local energies and their exact sum.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyBreakdown {
    pub per_task: Vec<f64>,
    pub total: f64,
}

/// Batched local energy, (B,): for each sequence x_i with latent logits
/// z_i, run the decoder over x_i with o1(z_i) in the latent slot, take the
/// next-symbol log-distribution after the final token, and contract its
/// first d entries with o2(z_i).
pub fn local_energy_batch(dec: &DecoderVars, xs: &[&[usize]], z: &Var) -> Result<Var> {
    let batch = xs.len();
    if batch == 0 || xs.iter().any(|x| x.is_empty()) {
        return Err(CoreError::InvalidArgument(
            "local_energy needs nonempty sequences".into(),
        ));
    }
    let shape = z.shape();
    if shape.len() != 2 || shape[0] != batch {
        return Err(CoreError::ShapeMismatch {
            op: "local_energy",
            lhs: shape,
            rhs: vec![batch, dec.w_h0.shape()[0]],
        });
    }
    let d = shape[1];
    let vocab = dec.embedding.shape()[0];
    let hidden = dec.w_h0.shape()[1];
    if d > vocab {
        return Err(CoreError::InvalidArgument(format!(
            "latent dim {d} exceeds vocabulary size {vocab}"
        )));
    }
    let tape = z.tape().clone();

    let o1 = z.softmax()?;
    let o2 = o1.clone();

    // run the decoder over x with o1 in the latent slot; keep the hidden
    // state reached after each sequence's final token
    let mut h = o1.matmul(&dec.w_h0)?.add_rowvec(&dec.b_h0)?;
    let max_len = xs.iter().map(|x| x.len()).max().expect("nonempty batch");
    let mut finals = tape.constant(&Tensor::zeros(vec![batch, hidden]));
    for t in 0..=max_len {
        let ids: Vec<usize> = xs
            .iter()
            .map(|x| {
                if t == 0 {
                    GEN_ID
                } else if t - 1 < x.len() {
                    x[t - 1]
                } else {
                    PAD_ID
                }
            })
            .collect();
        for &id in &ids {
            if id >= vocab {
                return Err(CoreError::TokenOutOfRange { id, vocab });
            }
        }
        let emb = dec.embedding.gather_rows(&ids)?;
        let u = Var::concat(1, &[emb, o1.clone()])?;
        h = dec.gru.step(&u, &h)?;
        let mut mask = Tensor::zeros(vec![batch, hidden]);
        let mut any = false;
        for (i, x) in xs.iter().enumerate() {
            if x.len() == t {
                any = true;
                for c in 0..hidden {
                    mask.data_mut()[i * hidden + c] = 1.0;
                }
            }
        }
        if any {
            finals = finals.add(&h.mul(&tape.constant(&mask))?)?;
        }
    }

    let log_dist = finals
        .matmul(&dec.w_out)?
        .add_rowvec(&dec.b_out)?
        .log_softmax()?; // (B×V)

    // selector picking the first d symbols: (V×d) constant [I_d; 0]
    let mut sel = Tensor::zeros(vec![vocab, d]);
    for i in 0..d {
        sel.data_mut()[i * d + i] = 1.0;
    }
    let picked = log_dist.matmul(&tape.constant(&sel))?; // (B×d)
    o2.mul(&picked)?.sum_rows()?.neg()
}

/// Local energy of one (x_m, z_m) pair: nonnegative scalar.
pub fn local_energy(dec: &DecoderParams, x: &[usize], z_m: &Tensor) -> Result<f64> {
    let tape = Tape::new();
    let dvars = dec.vars(&tape, false);
    let z = tape.constant(&Tensor::from_vec(vec![1, z_m.numel()], z_m.data().to_vec())?);
    let e = local_energy_batch(&dvars, &[x], &z)?;
    Ok(e.value().data()[0])
}

/// Total energy over one representative input per task: z_m comes from the
/// inference encoder, and the total is the exact sum of the local terms.
pub fn total_energy(
    dec: &DecoderParams,
    inf: &InferenceNetParams,
    per_task_inputs: &[Vec<usize>],
) -> Result<EnergyBreakdown> {
    if per_task_inputs.is_empty() {
        return Err(CoreError::InvalidArgument(
            "total_energy needs at least one task".into(),
        ));
    }
    let mut per_task = Vec::with_capacity(per_task_inputs.len());
    for x in per_task_inputs {
        let z = inf.infer_logits(x)?;
        per_task.push(local_energy(dec, x, &z)?);
    }
    let total = per_task.iter().sum();
    Ok(EnergyBreakdown { per_task, total })
}
