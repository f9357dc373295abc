//! Evaluation metrics, the score matrix, and forgetting curves.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::pps::PromptBank;
use crate::seqmodel::{lm_greedy_answer, BaseLmParams};
use crate::textdata::{Metric, TaskDataset, Vocab};

/// 100 if prediction equals reference exactly, else 0.
pub fn exact_match(prediction: &[String], reference: &[String]) -> f64 {
    if prediction == reference {
        100.0
    } else {
        0.0
    }
}

/// Bag-of-tokens F1 in [0, 100]: harmonic mean of multiset precision and
/// recall over answer tokens.
pub fn token_f1(prediction: &[String], reference: &[String]) -> f64 {
    if prediction.is_empty() || reference.is_empty() {
        return if prediction == reference { 100.0 } else { 0.0 };
    }
    let mut counts = std::collections::HashMap::<&str, isize>::new();
    for t in reference {
        *counts.entry(t.as_str()).or_insert(0) += 1;
    }
    let mut overlap = 0isize;
    for t in prediction {
        let c = counts.entry(t.as_str()).or_insert(0);
        if *c > 0 {
            overlap += 1;
            *c -= 1;
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / prediction.len() as f64;
    let recall = overlap as f64 / reference.len() as f64;
    100.0 * 2.0 * precision * recall / (precision + recall)
}

/// Greedy-decode every test question given `[prompts, x]` and score with
/// the task's metric. Never mutates the model, bank, or dataset.
pub fn evaluate(
    lm: &BaseLmParams,
    bank: &PromptBank,
    task: &TaskDataset,
    vocab: &Vocab,
    max_len: usize,
) -> Result<f64> {
    if task.test.is_empty() {
        return Err(CoreError::InvalidArgument(format!(
            "task `{}` has an empty test set",
            task.name
        )));
    }
    let prompts = bank.stacked_rows();
    let mut total = 0.0;
    for pair in &task.test {
        let q_ids: Vec<usize> = pair
            .question()
            .iter()
            .map(|w| {
                vocab
                    .id(w)
                    .ok_or_else(|| CoreError::InvalidArgument(format!("unknown token `{w}`")))
            })
            .collect::<Result<_>>()?;
        let out_ids = lm_greedy_answer(lm, prompts.as_ref(), &q_ids, max_len)?;
        let predicted: Vec<String> = out_ids
            .iter()
            .filter_map(|&id| vocab.token(id).map(str::to_string))
            .collect();
        total += match task.metric {
            Metric::ExactMatch => exact_match(&predicted, pair.answer()),
            Metric::TokenF1 => token_f1(&predicted, pair.answer()),
        };
    }
    Ok(total / task.test.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportKind {
    Continual,
    Multitask,
}

/// Score matrix and summary for one run. `scores[i][j]` is task i's test
/// score after finishing training stage j.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub kind: ReportKind,
    pub task_names: Vec<String>,
    /// Trained task per column (single "multitask" column for the upper
    /// bound).
    pub stage_tasks: Vec<String>,
    pub scores: Vec<Vec<f64>>,
    /// Mean over tasks of the final column.
    pub final_average: f64,
    /// Wall-clock seconds; kept out of metrics.jsonl so reruns match
    /// byte for byte.
    pub wall_clock_secs: f64,
    /// (task index, checksum) recorded when each slot froze.
    pub slot_checksums: Vec<(usize, String)>,
}

/// Per-task forgetting series: scores from the task's own stage onward,
/// and the drop from its own stage to the final stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskForgetting {
    pub task: String,
    pub series: Vec<f64>,
    pub delta: f64,
}

impl MetricsReport {
    pub fn final_column(&self) -> Vec<f64> {
        self.scores
            .iter()
            .map(|row| *row.last().expect("at least one stage"))
            .collect()
    }

    /// Forgetting series per task; rejected for multitask reports.
    pub fn forgetting(&self) -> Result<Vec<TaskForgetting>> {
        if self.kind == ReportKind::Multitask {
            return Err(CoreError::InvalidArgument(
                "forgetting curves need a continual report".into(),
            ));
        }
        let mut out = Vec::with_capacity(self.task_names.len());
        for (i, task) in self.task_names.iter().enumerate() {
            let own_stage = self
                .stage_tasks
                .iter()
                .position(|t| t == task)
                .ok_or_else(|| {
                    CoreError::InvalidArgument(format!("task `{task}` never trained"))
                })?;
            let series: Vec<f64> = self.scores[i][own_stage..].to_vec();
            let delta = series.first().unwrap_or(&0.0) - series.last().unwrap_or(&0.0);
            out.push(TaskForgetting {
                task: task.clone(),
                series,
                delta,
            });
        }
        Ok(out)
    }

    /// Mean over tasks of the forgetting delta.
    pub fn mean_forgetting(&self) -> Result<f64> {
        let f = self.forgetting()?;
        Ok(f.iter().map(|t| t.delta).sum::<f64>() / f.len() as f64)
    }
}
