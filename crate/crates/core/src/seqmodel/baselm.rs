//! Small recurrent base language model used by the continual learner.
//!
//! Unconditioned (no latent slot); prompt-slot rows are prepended to the
//! input embeddings as extra leading steps. The QA loss is the negative
//! log-likelihood of the answer tokens plus the terminal EOS, given
//! `[prompts, GEN, question, SEP]`.

use crate::diffcore::Rng;
use crate::error::{CoreError, Result};
use crate::seqmodel::checkpoint::CheckpointDoc;
use crate::seqmodel::gru::{GruParams, GruVars};
use crate::textdata::{QAPair, Vocab, EOS_ID, PAD_ID};
use crate::{Tape, Tensor, Var};

#[derive(Debug, Clone)]
pub struct BaseLmParams {
    /// Token embeddings, V×e. Prompt rows copied from here must share
    /// width e.
    pub embedding: Tensor,
    /// Recurrent cell, e -> h.
    pub gru: GruParams,
    /// Output projection h -> V and bias.
    pub w_out: Tensor,
    pub b_out: Tensor,
}

impl BaseLmParams {
    pub fn init(vocab: usize, embed: usize, hidden: usize, rng: &mut Rng) -> Self {
        BaseLmParams {
            embedding: rng.normal_tensor_scaled(vec![vocab, embed], 0.5),
            gru: GruParams::init(embed, hidden, rng),
            w_out: rng.normal_tensor_scaled(vec![hidden, vocab], 1.0 / (hidden as f64).sqrt()),
            b_out: Tensor::zeros(vec![vocab]),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.shape()[0]
    }

    pub fn embed_dim(&self) -> usize {
        self.embedding.shape()[1]
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_out.shape()[0]
    }

    pub fn vars(&self, tape: &Tape, trainable: bool) -> BaseLmVars {
        let reg = |t: &Tensor| {
            if trainable {
                tape.param(t)
            } else {
                tape.constant(t)
            }
        };
        BaseLmVars {
            embedding: reg(&self.embedding),
            gru: self.gru.vars(tape, trainable),
            w_out: reg(&self.w_out),
            b_out: reg(&self.b_out),
        }
    }

    pub fn fields(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.embedding];
        out.extend(self.gru.fields());
        out.extend([&self.w_out, &self.b_out]);
        out
    }

    pub fn fields_mut(&mut self) -> Vec<&mut Tensor> {
        let BaseLmParams {
            embedding,
            gru,
            w_out,
            b_out,
        } = self;
        let mut out = vec![embedding];
        out.extend(gru.fields_mut());
        out.extend([w_out, b_out]);
        out
    }

    pub fn all_finite(&self) -> bool {
        self.fields().iter().all(|t| t.all_finite())
    }

    pub fn write_into(&self, doc: &mut CheckpointDoc, prefix: &str) {
        doc.insert(&format!("{prefix}embedding"), &self.embedding);
        self.gru.write_into(doc, &format!("{prefix}gru."));
        doc.insert(&format!("{prefix}w_out"), &self.w_out);
        doc.insert(&format!("{prefix}b_out"), &self.b_out);
    }

    pub fn read_from(doc: &CheckpointDoc, prefix: &str) -> Result<Self> {
        Ok(BaseLmParams {
            embedding: doc.tensor(&format!("{prefix}embedding"))?,
            gru: GruParams::read_from(doc, &format!("{prefix}gru."))?,
            w_out: doc.tensor(&format!("{prefix}w_out"))?,
            b_out: doc.tensor(&format!("{prefix}b_out"))?,
        })
    }
}

pub struct BaseLmVars {
    pub embedding: Var,
    pub gru: GruVars,
    pub w_out: Var,
    pub b_out: Var,
}

impl BaseLmVars {
    pub fn fields(&self) -> Vec<&Var> {
        let mut out = vec![&self.embedding];
        out.extend(self.gru.fields());
        out.extend([&self.w_out, &self.b_out]);
        out
    }

    /// Masked answer NLL per example, (B,). `prompt_steps` are extra leading
    /// inputs, one (B×e) variable per prompt row, consumed before the token
    /// steps; no loss is attached to them.
    pub fn answer_nll_batch(&self, prompt_steps: &[Var], batch: &QaStepBatch) -> Result<Var> {
        let b = batch.batch;
        let hidden = self.gru.w_hr.shape()[0];
        let tape = self.embedding.tape().clone();
        let mut h = tape.constant(&Tensor::zeros(vec![b, hidden]));
        for p in prompt_steps {
            h = self.gru.step(p, &h)?;
        }
        let mut acc = tape.constant(&Tensor::zeros(vec![b]));
        for t in 0..batch.steps {
            let x = self.embedding.gather_rows(&batch.prev[t])?;
            h = self.gru.step(&x, &h)?;
            if batch.mask[t].iter().all(|&m| m == 0.0) {
                continue;
            }
            let lp = h
                .matmul(&self.w_out)?
                .add_rowvec(&self.b_out)?
                .log_softmax()?
                .take_per_row(&batch.tgt[t])?;
            let lp = if batch.mask[t].iter().all(|&m| m == 1.0) {
                lp
            } else {
                lp.mul(&tape.constant(&Tensor::vector(batch.mask[t].clone())))?
            };
            acc = acc.add(&lp)?;
        }
        acc.neg()
    }
}

/// Padded stepwise batch of serialized QA pairs: per-step previous-token
/// ids, target ids, and a 0/1 loss mask restricted to answer positions
/// (answer tokens plus the terminal EOS).
#[derive(Debug, Clone)]
pub struct QaStepBatch {
    pub prev: Vec<Vec<usize>>,
    pub tgt: Vec<Vec<usize>>,
    pub mask: Vec<Vec<f64>>,
    pub batch: usize,
    pub steps: usize,
    /// Total number of masked target positions across the batch.
    pub answer_positions: usize,
}

pub fn qa_step_batch(vocab: &Vocab, pairs: &[&QAPair]) -> Result<QaStepBatch> {
    if pairs.is_empty() {
        return Err(CoreError::InvalidArgument("empty batch".into()));
    }
    let encoded: Vec<Vec<usize>> = pairs
        .iter()
        .map(|p| vocab.encode(p))
        .collect::<Result<_>>()?;
    let q_lens: Vec<usize> = pairs.iter().map(|p| p.question().len()).collect();
    let steps = encoded.iter().map(|e| e.len() - 1).max().expect("nonempty");
    let b = pairs.len();
    let mut prev = vec![vec![PAD_ID; b]; steps];
    let mut tgt = vec![vec![PAD_ID; b]; steps];
    let mut mask = vec![vec![0.0; b]; steps];
    let mut answer_positions = 0usize;
    for (i, ids) in encoded.iter().enumerate() {
        // ids = [GEN q SEP y EOS]; inputs ids[..n-1], targets ids[1..];
        // answer span starts at the step whose input is SEP
        let first_answer_step = q_lens[i] + 1;
        for t in 0..ids.len() - 1 {
            prev[t][i] = ids[t];
            tgt[t][i] = ids[t + 1];
            if t >= first_answer_step {
                mask[t][i] = 1.0;
                answer_positions += 1;
            }
        }
    }
    Ok(QaStepBatch {
        prev,
        tgt,
        mask,
        batch: b,
        steps,
        answer_positions,
    })
}

/// Greedy-decode an answer given `[prompts, GEN, question, SEP]`.
/// `prompt_rows`, when present, is the stacked (n×e) prompt matrix in
/// prepend order. Decoding stops at EOS (not emitted) or `max_len`.
pub fn lm_greedy_answer(
    lm: &BaseLmParams,
    prompt_rows: Option<&Tensor>,
    question_ids: &[usize],
    max_len: usize,
) -> Result<Vec<usize>> {
    let tape = Tape::new();
    let vars = lm.vars(&tape, false);
    let hidden = lm.hidden_dim();
    let mut h = tape.constant(&Tensor::zeros(vec![1, hidden]));
    if let Some(rows) = prompt_rows {
        let rows_var = tape.constant(rows);
        for r in 0..rows.shape()[0] {
            let x = rows_var.gather_rows(&[r])?;
            h = vars.gru.step(&x, &h)?;
        }
    }
    let mut prefix: Vec<usize> = Vec::with_capacity(question_ids.len() + 2);
    prefix.push(crate::textdata::GEN_ID);
    prefix.extend_from_slice(question_ids);
    prefix.push(crate::textdata::SEP_ID);
    for &id in &prefix {
        let x = vars.embedding.gather_rows(&[id])?;
        h = vars.gru.step(&x, &h)?;
    }
    let mut out = Vec::new();
    for _ in 0..max_len {
        let logits = h.matmul(&vars.w_out)?.add_rowvec(&vars.b_out)?.value();
        let next = logits
            .data()
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
            .expect("nonempty vocab")
            .0;
        if next == EOS_ID {
            break;
        }
        out.push(next);
        let x = vars.embedding.gather_rows(&[next])?;
        h = vars.gru.step(&x, &h)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textdata::Source;

    fn pair(q: &[&str], a: &[&str]) -> QAPair {
        QAPair::new(
            q.iter().map(|s| s.to_string()).collect(),
            a.iter().map(|s| s.to_string()).collect(),
            Source::Real,
        )
        .unwrap()
    }

    #[test]
    fn uniform_model_nll_is_answer_len_times_log_v() {
        let vocab = Vocab::default_desk();
        let v = vocab.size() as f64;
        let mut rng = Rng::new(1);
        let mut lm = BaseLmParams::init(vocab.size(), 4, 5, &mut rng);
        for f in lm.fields_mut() {
            f.scale_in_place(0.0);
        }
        let p1 = pair(&["w00", "w01"], &["lab0"]);
        let p2 = pair(&["w05"], &["tag1", "tag2"]);
        let batch = qa_step_batch(&vocab, &[&p1, &p2]).unwrap();
        // answer positions: (1 answer token + EOS) + (2 + EOS) = 5
        assert_eq!(batch.answer_positions, 5);
        let tape = Tape::new();
        let vars = lm.vars(&tape, false);
        let nll = vars.answer_nll_batch(&[], &batch).unwrap().value();
        let total: f64 = nll.data().iter().sum();
        assert!((total - 5.0 * v.ln()).abs() < 1e-10);
    }

    #[test]
    fn prompts_change_the_conditional() {
        let vocab = Vocab::default_desk();
        let mut rng = Rng::new(2);
        let lm = BaseLmParams::init(vocab.size(), 4, 5, &mut rng);
        let p = pair(&["w00", "w01"], &["lab0"]);
        let batch = qa_step_batch(&vocab, &[&p]).unwrap();
        let nll_plain = {
            let tape = Tape::new();
            let vars = lm.vars(&tape, false);
            vars.answer_nll_batch(&[], &batch).unwrap().value().data()[0]
        };
        let nll_prompted = {
            let tape = Tape::new();
            let vars = lm.vars(&tape, false);
            let row = tape.constant(&rng.normal_tensor_scaled(vec![1, 4], 1.0));
            vars.answer_nll_batch(&[row], &batch).unwrap().value().data()[0]
        };
        assert!((nll_plain - nll_prompted).abs() > 1e-9);
    }

    #[test]
    fn greedy_answer_stops_and_excludes_eos() {
        let vocab = Vocab::default_desk();
        let mut rng = Rng::new(3);
        let lm = BaseLmParams::init(vocab.size(), 4, 5, &mut rng);
        let out = lm_greedy_answer(&lm, None, &[7, 8], 6).unwrap();
        assert!(out.len() <= 6);
        assert!(out.iter().all(|&t| t != EOS_ID));
    }
}
