//! Progressive parameter selection: per-task selected-parameter slots
//! copied from base-model embedding rows, newest-first concatenation with
//! frozen past slots, the selection loss, and the combined training loss.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffcore::Rng;
use crate::error::{CoreError, Result};
use crate::seqmodel::{qa_step_batch, BaseLmParams};
use crate::textdata::{QAPair, Vocab};
use crate::{Tape, Tensor, Var};

/// One task's selected parameters: `p_len` rows copied from the base
/// model's embedding matrix, trainable while its task is learned and
/// bit-immutable once frozen.
#[derive(Debug, Clone)]
pub struct PromptSlot {
    task_index: usize,
    row_indices: Vec<usize>,
    values: Tensor,
    frozen: bool,
    seed: u64,
}

impl PromptSlot {
    pub fn task_index(&self) -> usize {
        self.task_index
    }

    pub fn row_indices(&self) -> &[usize] {
        &self.row_indices
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn frozen(&self) -> bool {
        self.frozen
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn p_len(&self) -> usize {
        self.row_indices.len()
    }

    pub fn width(&self) -> usize {
        self.values.shape()[1]
    }

    /// SHA-256 over the little-endian bytes of the slot values.
    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.values.to_le_bytes());
        format!("{:x}", hasher.finalize())
    }

    /// Gradient step on the slot values; rejected once frozen.
    pub fn apply_grad(&mut self, grad: &Tensor, step: f64) -> Result<()> {
        if self.frozen {
            return Err(CoreError::InvalidArgument(format!(
                "slot for task {} is frozen",
                self.task_index
            )));
        }
        if grad.shape() != self.values.shape() {
            return Err(CoreError::ShapeMismatch {
                op: "slot update",
                lhs: grad.shape().to_vec(),
                rhs: self.values.shape().to_vec(),
            });
        }
        self.values.add_scaled(grad, -step);
        Ok(())
    }
}

/// Record form used inside experiment checkpoints.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlotRecord {
    pub task_index: usize,
    pub row_indices: Vec<usize>,
    pub seed: u64,
    pub frozen: bool,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl From<&PromptSlot> for SlotRecord {
    fn from(s: &PromptSlot) -> SlotRecord {
        SlotRecord {
            task_index: s.task_index,
            row_indices: s.row_indices.clone(),
            seed: s.seed,
            frozen: s.frozen,
            shape: s.values.shape().to_vec(),
            values: s.values.data().to_vec(),
        }
    }
}

impl TryFrom<&SlotRecord> for PromptSlot {
    type Error = CoreError;

    fn try_from(r: &SlotRecord) -> Result<PromptSlot> {
        Ok(PromptSlot {
            task_index: r.task_index,
            row_indices: r.row_indices.clone(),
            values: Tensor::from_vec(r.shape.clone(), r.values.clone())?,
            frozen: r.frozen,
            seed: r.seed,
        })
    }
}

/// Ordered per-task slots, newest first. At most one slot is unfrozen and
/// it is always the newest.
#[derive(Debug, Clone, Default)]
pub struct PromptBank {
    slots: Vec<PromptSlot>,
}

impl PromptBank {
    pub fn new() -> Self {
        PromptBank { slots: Vec::new() }
    }

    /// Slots newest first.
    pub fn slots(&self) -> &[PromptSlot] {
        &self.slots
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Copy `p_len` randomly selected embedding rows of the base model into
    /// a fresh trainable slot for task `m`. Every existing slot must
    /// already be frozen.
    pub fn new_slot(
        &mut self,
        base: &BaseLmParams,
        p_len: usize,
        m: usize,
        rng: &mut Rng,
    ) -> Result<()> {
        if let Some(open) = self.slots.iter().find(|s| !s.frozen) {
            return Err(CoreError::InvalidArgument(format!(
                "unfrozen slot for task {} present",
                open.task_index
            )));
        }
        if let Some(newest) = self.slots.first() {
            if m <= newest.task_index {
                return Err(CoreError::InvalidArgument(format!(
                    "task index {m} not after newest slot {}",
                    newest.task_index
                )));
            }
        }
        let rows = base.vocab_size();
        if p_len < 1 || p_len > rows {
            return Err(CoreError::InvalidArgument(format!(
                "p_len {p_len} outside 1..={rows}"
            )));
        }
        let e = base.embed_dim();
        let row_indices = rng.sample_without_replacement(rows, p_len);
        let mut values = Tensor::zeros(vec![p_len, e]);
        for (slot_row, &src_row) in row_indices.iter().enumerate() {
            let src = &base.embedding.data()[src_row * e..(src_row + 1) * e];
            values.data_mut()[slot_row * e..(slot_row + 1) * e].copy_from_slice(src);
        }
        self.slots.insert(
            0,
            PromptSlot {
                task_index: m,
                row_indices,
                values,
                frozen: false,
                seed: rng.seed(),
            },
        );
        Ok(())
    }

    /// Reinsert a slot restored from a checkpoint as the newest entry.
    /// The same ordering and freezing invariants as `new_slot` apply.
    pub fn restore_slot(&mut self, slot: PromptSlot) -> Result<()> {
        if let Some(newest) = self.slots.first() {
            if !newest.frozen {
                return Err(CoreError::InvalidArgument(format!(
                    "unfrozen slot for task {} present",
                    newest.task_index
                )));
            }
            if slot.task_index <= newest.task_index {
                return Err(CoreError::InvalidArgument(format!(
                    "task index {} not after newest slot {}",
                    slot.task_index, newest.task_index
                )));
            }
        }
        self.slots.insert(0, slot);
        Ok(())
    }

    /// Freeze the slot for `task_index`; only the newest may be frozen, and
    /// freezing twice is a no-op.
    pub fn freeze(&mut self, task_index: usize) -> Result<()> {
        let newest = self
            .slots
            .first_mut()
            .ok_or_else(|| CoreError::InvalidArgument("no slots to freeze".into()))?;
        if newest.task_index != task_index {
            return Err(CoreError::InvalidArgument(format!(
                "slot {task_index} is not the newest ({})",
                newest.task_index
            )));
        }
        newest.frozen = true;
        Ok(())
    }

    pub fn freeze_newest(&mut self) -> Result<()> {
        let newest = self
            .slots
            .first()
            .ok_or_else(|| CoreError::InvalidArgument("no slots to freeze".into()))?;
        let idx = newest.task_index;
        self.freeze(idx)
    }

    pub fn unfrozen_mut(&mut self) -> Option<&mut PromptSlot> {
        self.slots.iter_mut().find(|s| !s.frozen)
    }

    /// Prompt rows prepended to an embedded input:
    /// `[P_m rows, ..., P_1 rows, x]`.
    pub fn concat_prompts(&self, x_embedded: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let width = x_embedded
            .first()
            .map(|v| v.len())
            .or_else(|| self.slots.first().map(|s| s.width()));
        let Some(width) = width else {
            return Ok(Vec::new());
        };
        let mut out = Vec::new();
        for slot in &self.slots {
            if slot.width() != width {
                return Err(CoreError::ShapeMismatch {
                    op: "concat_prompts",
                    lhs: vec![slot.p_len(), slot.width()],
                    rhs: vec![x_embedded.len(), width],
                });
            }
            for r in 0..slot.p_len() {
                out.push(slot.values.row(r).to_vec());
            }
        }
        for x in x_embedded {
            if x.len() != width {
                return Err(CoreError::ShapeMismatch {
                    op: "concat_prompts",
                    lhs: vec![x.len()],
                    rhs: vec![width],
                });
            }
            out.push(x.clone());
        }
        Ok(out)
    }

    /// All prompt rows stacked newest-first as one (n×e) matrix, for
    /// decoding.
    pub fn stacked_rows(&self) -> Option<Tensor> {
        if self.slots.is_empty() {
            return None;
        }
        let e = self.slots[0].width();
        let n: usize = self.slots.iter().map(|s| s.p_len()).sum();
        let mut out = Tensor::zeros(vec![n, e]);
        let mut at = 0;
        for slot in &self.slots {
            let len = slot.p_len() * e;
            out.data_mut()[at..at + len].copy_from_slice(slot.values.data());
            at += len;
        }
        Some(out)
    }

    /// Register the bank on a tape for a batch of size `batch`: per-step
    /// (B×e) input variables in prepend order, plus the unfrozen slot's
    /// variable when present (the only slot that can receive gradients;
    /// frozen slots are registered as constants).
    pub fn vars(&self, tape: &Tape, batch: usize) -> BankVars {
        let mut step_inputs = Vec::new();
        let mut slot_vars = Vec::new();
        let mut unfrozen = None;
        for slot in &self.slots {
            let var = if slot.frozen {
                tape.constant(&slot.values)
            } else {
                tape.param(&slot.values)
            };
            if !slot.frozen {
                unfrozen = Some(var.clone());
            }
            for r in 0..slot.p_len() {
                let ids = vec![r; batch];
                if let Ok(step) = var.gather_rows(&ids) {
                    step_inputs.push(step);
                }
            }
            slot_vars.push((var, slot.frozen));
        }
        BankVars {
            step_inputs,
            slot_vars,
            unfrozen,
        }
    }
}

/// Bank registered on a tape.
pub struct BankVars {
    /// One (B×e) input per prompt row, newest slot first.
    pub step_inputs: Vec<Var>,
    /// (slot var, frozen) in newest-first order.
    pub slot_vars: Vec<(Var, bool)>,
    /// The single trainable slot, when one exists.
    pub unfrozen: Option<Var>,
}

/// Selection loss: summed negative log-likelihood of answer tokens given
/// `[P_m, ..., P_1, x]` under the base model, differentiable with respect
/// to the unfrozen slot only. Requires exactly one unfrozen slot.
pub fn selection_loss(
    bank: &PromptBank,
    base: &BaseLmParams,
    pairs: &[&QAPair],
    vocab: &Vocab,
) -> Result<f64> {
    let unfrozen = bank.slots.iter().filter(|s| !s.frozen).count();
    if unfrozen != 1 {
        return Err(CoreError::InvalidArgument(format!(
            "selection loss needs exactly one unfrozen slot, found {unfrozen}"
        )));
    }
    let batch = qa_step_batch(vocab, pairs)?;
    let tape = Tape::new();
    let bank_vars = bank.vars(&tape, batch.batch);
    let lm_vars = base.vars(&tape, false);
    let nll = lm_vars.answer_nll_batch(&bank_vars.step_inputs, &batch)?;
    Ok(nll.sum()?.item())
}

/// Combined training loss `L = L_QA + lambda_p * L_P`.
pub fn combined_loss(l_qa: f64, l_p: f64, lambda_p: f64) -> Result<f64> {
    if !l_qa.is_finite() || !l_p.is_finite() || !lambda_p.is_finite() {
        return Err(CoreError::NonFinite {
            op: "combined_loss",
        });
    }
    Ok(l_qa + lambda_p * l_p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textdata::Source;

    fn base(rng: &mut Rng) -> BaseLmParams {
        BaseLmParams::init(Vocab::default_desk().size(), 4, 5, rng)
    }

    fn pair(q: &[&str], a: &[&str]) -> QAPair {
        QAPair::new(
            q.iter().map(|s| s.to_string()).collect(),
            a.iter().map(|s| s.to_string()).collect(),
            Source::Real,
        )
        .unwrap()
    }

    #[test]
    fn new_slot_copies_distinct_rows() {
        let mut rng = Rng::new(1);
        let lm = base(&mut rng);
        let mut bank = PromptBank::new();
        bank.new_slot(&lm, 10, 1, &mut rng).unwrap();
        let slot = &bank.slots()[0];
        assert_eq!(slot.p_len(), 10);
        let mut ids = slot.row_indices().to_vec();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 10);
        let e = lm.embed_dim();
        for (r, &src) in slot.row_indices().iter().enumerate() {
            assert_eq!(
                slot.values().row(r),
                &lm.embedding.data()[src * e..(src + 1) * e]
            );
        }
    }

    #[test]
    fn same_seed_same_rows() {
        let mut r1 = Rng::new(7);
        let mut r2 = Rng::new(7);
        let lm = base(&mut Rng::new(0));
        let mut b1 = PromptBank::new();
        let mut b2 = PromptBank::new();
        b1.new_slot(&lm, 6, 1, &mut r1).unwrap();
        b2.new_slot(&lm, 6, 1, &mut r2).unwrap();
        assert_eq!(b1.slots()[0].row_indices(), b2.slots()[0].row_indices());
    }

    #[test]
    fn oversized_p_len_rejected() {
        let mut rng = Rng::new(2);
        let lm = base(&mut rng);
        let mut bank = PromptBank::new();
        assert!(bank.new_slot(&lm, lm.vocab_size() + 1, 1, &mut rng).is_err());
    }

    #[test]
    fn unfrozen_older_slot_blocks_new_slot() {
        let mut rng = Rng::new(3);
        let lm = base(&mut rng);
        let mut bank = PromptBank::new();
        bank.new_slot(&lm, 4, 1, &mut rng).unwrap();
        assert!(bank.new_slot(&lm, 4, 2, &mut rng).is_err());
        bank.freeze(1).unwrap();
        bank.new_slot(&lm, 4, 2, &mut rng).unwrap();
        assert_eq!(bank.slots()[0].task_index(), 2);
        assert_eq!(bank.slots()[1].task_index(), 1);
    }

    #[test]
    fn freeze_rules() {
        let mut rng = Rng::new(4);
        let lm = base(&mut rng);
        let mut bank = PromptBank::new();
        bank.new_slot(&lm, 4, 1, &mut rng).unwrap();
        bank.freeze(1).unwrap();
        bank.freeze(1).unwrap(); // idempotent
        bank.new_slot(&lm, 4, 2, &mut rng).unwrap();
        assert!(bank.freeze(1).is_err()); // not the newest
        let checksum_before = bank.slots()[1].checksum();
        bank.freeze(2).unwrap();
        assert_eq!(bank.slots()[1].checksum(), checksum_before);
    }

    #[test]
    fn frozen_slot_rejects_writes() {
        let mut rng = Rng::new(5);
        let lm = base(&mut rng);
        let mut bank = PromptBank::new();
        bank.new_slot(&lm, 3, 1, &mut rng).unwrap();
        bank.freeze(1).unwrap();
        let g = Tensor::zeros(vec![3, lm.embed_dim()]);
        let err = bank.slots[0].clone().apply_grad(&g, 0.1).unwrap_err();
        assert!(matches!(err, CoreError::InvalidArgument(_)));
    }

    #[test]
    fn concat_order_newest_first() {
        let mut rng = Rng::new(6);
        let lm = base(&mut rng);
        let mut bank = PromptBank::new();
        bank.new_slot(&lm, 2, 1, &mut rng).unwrap();
        bank.freeze(1).unwrap();
        bank.new_slot(&lm, 3, 2, &mut rng).unwrap();
        let x = vec![vec![9.0; lm.embed_dim()]; 5];
        let out = bank.concat_prompts(&x).unwrap();
        assert_eq!(out.len(), 3 + 2 + 5);
        assert_eq!(out[0], bank.slots()[0].values().row(0).to_vec()); // newest first
        assert_eq!(out[3], bank.slots()[1].values().row(0).to_vec());
        assert_eq!(out[5], vec![9.0; lm.embed_dim()]);

        let empty = PromptBank::new();
        assert_eq!(empty.concat_prompts(&x).unwrap(), x);
    }

    #[test]
    fn selection_loss_uniform_model() {
        let vocab = Vocab::default_desk();
        let mut rng = Rng::new(7);
        let mut lm = base(&mut rng);
        for f in lm.fields_mut() {
            f.scale_in_place(0.0);
        }
        let mut bank = PromptBank::new();
        bank.new_slot(&lm, 4, 1, &mut rng).unwrap();
        let p1 = pair(&["w00", "w01"], &["lab0"]);
        let p2 = pair(&["w02"], &["tag0", "tag1", "tag2"]);
        // answer positions: (1+EOS) + (3+EOS) = 6
        let l_p = selection_loss(&bank, &lm, &[&p1, &p2], &vocab).unwrap();
        let expected = 6.0 * (vocab.size() as f64).ln();
        assert!((l_p - expected).abs() < 1e-10, "{l_p} vs {expected}");
    }

    #[test]
    fn selection_loss_needs_exactly_one_unfrozen() {
        let vocab = Vocab::default_desk();
        let mut rng = Rng::new(8);
        let lm = base(&mut rng);
        let p = pair(&["w00"], &["lab0"]);
        let empty = PromptBank::new();
        assert!(selection_loss(&empty, &lm, &[&p], &vocab).is_err());
        let mut frozen_only = PromptBank::new();
        frozen_only.new_slot(&lm, 2, 1, &mut rng).unwrap();
        frozen_only.freeze(1).unwrap();
        assert!(selection_loss(&frozen_only, &lm, &[&p], &vocab).is_err());
    }

    #[test]
    fn combined_loss_arithmetic() {
        assert_eq!(combined_loss(1.0, 2.0, 0.05).unwrap(), 1.1);
        assert_eq!(combined_loss(3.5, 123.0, 0.0).unwrap(), 3.5);
        let l1 = combined_loss(1.0, 2.0, 0.25).unwrap();
        let l2 = combined_loss(1.0, 4.0, 0.25).unwrap();
        assert!((l2 - l1 - 0.25 * 2.0).abs() < 1e-15);
        assert!(combined_loss(f64::NAN, 0.0, 0.1).is_err());
    }

    #[test]
    fn slot_record_round_trip() {
        let mut rng = Rng::new(9);
        let lm = base(&mut rng);
        let mut bank = PromptBank::new();
        bank.new_slot(&lm, 3, 1, &mut rng).unwrap();
        bank.freeze(1).unwrap();
        let rec = SlotRecord::from(&bank.slots()[0]);
        let back = PromptSlot::try_from(&rec).unwrap();
        assert_eq!(back.checksum(), bank.slots()[0].checksum());
        assert!(back.frozen());
        assert_eq!(back.task_index(), 1);
    }
}

