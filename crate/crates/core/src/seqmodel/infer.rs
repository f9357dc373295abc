//! Inference encoder: amortized map from a token sequence to latent logits.

use crate::diffcore::Rng;
use crate::error::{CoreError, Result};
use crate::seqmodel::checkpoint::CheckpointDoc;
use crate::seqmodel::decoder::DecoderParams;
use crate::seqmodel::energy::local_energy_batch;
use crate::seqmodel::gru::{GruParams, GruVars};
use crate::textdata::PAD_ID;
use crate::{Tape, Tensor, Var};

#[derive(Debug, Clone)]
pub struct InferenceNetParams {
    /// Token embeddings, V×e.
    pub embedding: Tensor,
    /// Recurrent encoder cell, e -> h.
    pub gru: GruParams,
    /// Head mapping the final hidden state to latent logits, h -> d.
    pub w_head: Tensor,
    pub b_head: Tensor,
}

impl InferenceNetParams {
    pub fn init(vocab: usize, embed: usize, hidden: usize, latent: usize, rng: &mut Rng) -> Self {
        InferenceNetParams {
            embedding: rng.normal_tensor_scaled(vec![vocab, embed], 0.5),
            gru: GruParams::init(embed, hidden, rng),
            w_head: rng.normal_tensor_scaled(vec![hidden, latent], 1.0 / (hidden as f64).sqrt()),
            b_head: Tensor::zeros(vec![latent]),
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.w_head.shape()[1]
    }

    pub fn vars(&self, tape: &Tape, trainable: bool) -> InferenceNetVars {
        let reg = |t: &Tensor| {
            if trainable {
                tape.param(t)
            } else {
                tape.constant(t)
            }
        };
        InferenceNetVars {
            embedding: reg(&self.embedding),
            gru: self.gru.vars(tape, trainable),
            w_head: reg(&self.w_head),
            b_head: reg(&self.b_head),
        }
    }

    pub fn fields(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.embedding];
        out.extend(self.gru.fields());
        out.extend([&self.w_head, &self.b_head]);
        out
    }

    pub fn fields_mut(&mut self) -> Vec<&mut Tensor> {
        let InferenceNetParams {
            embedding,
            gru,
            w_head,
            b_head,
        } = self;
        let mut out = vec![embedding];
        out.extend(gru.fields_mut());
        out.extend([w_head, b_head]);
        out
    }

    pub fn all_finite(&self) -> bool {
        self.fields().iter().all(|t| t.all_finite())
    }

    /// Latent logits z for one sequence (forward only).
    pub fn infer_logits(&self, x: &[usize]) -> Result<Tensor> {
        let tape = Tape::new();
        let vars = self.vars(&tape, false);
        let z = vars.encode_batch(&tape, &[x])?;
        Ok(Tensor::vector(z.value().data().to_vec()))
    }

    pub fn write_into(&self, doc: &mut CheckpointDoc, prefix: &str) {
        doc.insert(&format!("{prefix}embedding"), &self.embedding);
        self.gru.write_into(doc, &format!("{prefix}gru."));
        doc.insert(&format!("{prefix}w_head"), &self.w_head);
        doc.insert(&format!("{prefix}b_head"), &self.b_head);
    }

    pub fn read_from(doc: &CheckpointDoc, prefix: &str) -> Result<Self> {
        Ok(InferenceNetParams {
            embedding: doc.tensor(&format!("{prefix}embedding"))?,
            gru: GruParams::read_from(doc, &format!("{prefix}gru."))?,
            w_head: doc.tensor(&format!("{prefix}w_head"))?,
            b_head: doc.tensor(&format!("{prefix}b_head"))?,
        })
    }
}

pub struct InferenceNetVars {
    pub embedding: Var,
    pub gru: GruVars,
    pub w_head: Var,
    pub b_head: Var,
}

impl InferenceNetVars {
    pub fn fields(&self) -> Vec<&Var> {
        let mut out = vec![&self.embedding];
        out.extend(self.gru.fields());
        out.extend([&self.w_head, &self.b_head]);
        out
    }

    /// Encode a batch of sequences to latent logits, (B×d). Each sequence's
    /// final hidden state (at its own length) feeds the head.
    pub fn encode_batch(&self, tape: &Tape, xs: &[&[usize]]) -> Result<Var> {
        let batch = xs.len();
        if batch == 0 || xs.iter().any(|x| x.is_empty()) {
            return Err(CoreError::InvalidArgument(
                "encode_batch needs nonempty sequences".into(),
            ));
        }
        let vocab = self.embedding.shape()[0];
        let hidden = self.gru.w_hr.shape()[0];
        let mut max_len = 0;
        for x in xs {
            for &id in *x {
                if id >= vocab {
                    return Err(CoreError::TokenOutOfRange { id, vocab });
                }
            }
            max_len = max_len.max(x.len());
        }
        let mut h = tape.constant(&Tensor::zeros(vec![batch, hidden]));
        let mut finals = tape.constant(&Tensor::zeros(vec![batch, hidden]));
        for t in 0..max_len {
            let ids: Vec<usize> = xs
                .iter()
                .map(|x| if t < x.len() { x[t] } else { PAD_ID })
                .collect();
            let x = self.embedding.gather_rows(&ids)?;
            h = self.gru.step(&x, &h)?;
            // pick up the hidden state of sequences that end exactly here
            let mut mask = Tensor::zeros(vec![batch, hidden]);
            let mut any = false;
            for (i, xseq) in xs.iter().enumerate() {
                if xseq.len() == t + 1 {
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
        finals.matmul(&self.w_head)?.add_rowvec(&self.b_head)
    }
}

/// Full-data mean energies at each accepted descent step.
#[derive(Debug, Clone)]
pub struct InferTrainLog {
    pub energies: Vec<f64>,
}

/// Train the inference encoder to minimize the mean local energy of its own
/// latents, with the generator fixed. Full-batch gradient descent with a
/// backtracking halving line search, so the logged energy sequence is
/// non-increasing.
pub fn train_inference_net(
    inf: &mut InferenceNetParams,
    dec: &DecoderParams,
    data: &[Vec<usize>],
    steps: usize,
    lr0: f64,
) -> Result<InferTrainLog> {
    if data.is_empty() {
        return Err(CoreError::InvalidArgument(
            "train_inference_net needs data".into(),
        ));
    }
    let xs: Vec<&[usize]> = data.iter().map(|v| v.as_slice()).collect();

    let mean_energy = |inf: &InferenceNetParams| -> Result<f64> {
        let tape = Tape::new();
        let ivars = inf.vars(&tape, false);
        let dvars = dec.vars(&tape, false);
        let z = ivars.encode_batch(&tape, &xs)?;
        let e = local_energy_batch(&dvars, &xs, &z)?.mean()?;
        Ok(e.item())
    };

    let mut current = mean_energy(inf)?;
    if !current.is_finite() {
        return Err(CoreError::TrainingDiverged {
            task: 0,
            iteration: 0,
        });
    }
    let mut log = InferTrainLog {
        energies: vec![current],
    };

    for step in 0..steps {
        let tape = Tape::new();
        let ivars = inf.vars(&tape, true);
        let dvars = dec.vars(&tape, false);
        let z = ivars.encode_batch(&tape, &xs)?;
        let loss = local_energy_batch(&dvars, &xs, &z)?.mean()?;
        if !loss.item().is_finite() {
            return Err(CoreError::TrainingDiverged {
                task: 0,
                iteration: step,
            });
        }
        let mut grads = tape.backward(&loss)?;

        // own the gradient tensors so we can retry with smaller steps
        let grad_list: Vec<Option<Tensor>> = ivars
            .fields()
            .iter()
            .map(|v| grads.take(v))
            .collect();

        let mut lr = lr0;
        let mut accepted = false;
        for _ in 0..40 {
            let mut candidate = inf.clone();
            for (p, g) in candidate.fields_mut().into_iter().zip(&grad_list) {
                if let Some(g) = g {
                    p.add_scaled(g, -lr);
                }
            }
            let e = mean_energy(&candidate)?;
            if e.is_finite() && e <= current {
                *inf = candidate;
                current = e;
                accepted = true;
                break;
            }
            lr *= 0.5;
        }
        if !accepted {
            break; // no descent direction at any step size: converged
        }
        log.energies.push(current);
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_zero_params_give_zero_vector() {
        let mut rng = Rng::new(1);
        let mut inf = InferenceNetParams::init(8, 4, 5, 3, &mut rng);
        for f in inf.fields_mut() {
            f.scale_in_place(0.0);
        }
        let z = inf.infer_logits(&[1, 2, 3]).unwrap();
        assert_eq!(z.shape(), &[3]);
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn output_length_is_latent_dim_for_any_input_length() {
        let mut rng = Rng::new(2);
        let inf = InferenceNetParams::init(8, 4, 5, 3, &mut rng);
        for len in [1, 2, 7, 19] {
            let x: Vec<usize> = (0..len).map(|i| (i * 3 + 1) % 8).collect();
            assert_eq!(inf.infer_logits(&x).unwrap().numel(), 3);
        }
    }

    #[test]
    fn deterministic_for_fixed_input() {
        let mut rng = Rng::new(3);
        let inf = InferenceNetParams::init(8, 4, 5, 3, &mut rng);
        let a = inf.infer_logits(&[5, 2, 7]).unwrap();
        let b = inf.infer_logits(&[5, 2, 7]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_input_rejected() {
        let mut rng = Rng::new(4);
        let inf = InferenceNetParams::init(8, 4, 5, 3, &mut rng);
        assert!(inf.infer_logits(&[]).is_err());
    }

    #[test]
    fn batch_encode_matches_single() {
        let mut rng = Rng::new(5);
        let inf = InferenceNetParams::init(10, 4, 6, 3, &mut rng);
        let a: Vec<usize> = vec![1, 2, 3, 4, 5];
        let b: Vec<usize> = vec![7, 8];
        let tape = Tape::new();
        let vars = inf.vars(&tape, false);
        let z = vars
            .encode_batch(&tape, &[a.as_slice(), b.as_slice()])
            .unwrap()
            .value();
        let za = inf.infer_logits(&a).unwrap();
        let zb = inf.infer_logits(&b).unwrap();
        for i in 0..3 {
            assert!((z.data()[i] - za.data()[i]).abs() < 1e-12);
            assert!((z.data()[3 + i] - zb.data()[i]).abs() < 1e-12);
        }
    }
}
