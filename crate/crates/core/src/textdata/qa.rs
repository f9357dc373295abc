//! Unified question–answer examples and per-task datasets.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::textdata::vocab::Vocab;

/// Where an example came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Real,
    Generated,
}

/// One QA example. Both spans are nonempty token lists containing no
/// reserved symbols.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QAPair {
    question: Vec<String>,
    answer: Vec<String>,
    source: Source,
}

impl QAPair {
    pub fn new(question: Vec<String>, answer: Vec<String>, source: Source) -> Result<QAPair> {
        if question.is_empty() || answer.is_empty() {
            return Err(CoreError::InvalidArgument(
                "question and answer must be nonempty".into(),
            ));
        }
        for w in question.iter().chain(answer.iter()) {
            if Vocab::is_reserved(w) {
                return Err(CoreError::ReservedToken(w.clone()));
            }
        }
        Ok(QAPair {
            question,
            answer,
            source,
        })
    }

    pub fn question(&self) -> &[String] {
        &self.question
    }

    pub fn answer(&self) -> &[String] {
        &self.answer
    }

    pub fn source(&self) -> Source {
        self.source
    }

    pub fn question_text(&self) -> String {
        self.question.join(" ")
    }

    pub fn answer_text(&self) -> String {
        self.answer.join(" ")
    }

    /// Same pair marked as generated.
    pub fn into_generated(mut self) -> QAPair {
        self.source = Source::Generated;
        self
    }
}

/// JSONL wire form: one object per line with space-joined token spans.
#[derive(Serialize, Deserialize)]
struct JsonPair {
    question: String,
    answer: String,
    source: Source,
}

impl From<&QAPair> for JsonPair {
    fn from(p: &QAPair) -> JsonPair {
        JsonPair {
            question: p.question_text(),
            answer: p.answer_text(),
            source: p.source,
        }
    }
}

impl TryFrom<JsonPair> for QAPair {
    type Error = CoreError;

    fn try_from(j: JsonPair) -> Result<QAPair> {
        let split = |s: &str| -> Vec<String> {
            s.split_whitespace().map(str::to_string).collect()
        };
        QAPair::new(split(&j.question), split(&j.answer), j.source)
    }
}

impl QAPair {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&JsonPair::from(self)).expect("plain struct serializes")
    }

    pub fn from_json_line(line: &str) -> Result<QAPair> {
        let j: JsonPair = serde_json::from_str(line)?;
        QAPair::try_from(j)
    }
}

/// Evaluation metric for a task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    ExactMatch,
    TokenF1,
}

/// Per-task train/test splits.
#[derive(Debug, Clone)]
pub struct TaskDataset {
    pub name: String,
    pub train: Vec<QAPair>,
    pub test: Vec<QAPair>,
    pub metric: Metric,
}

impl TaskDataset {
    /// Write one split as JSONL.
    pub fn write_jsonl<W: Write>(pairs: &[QAPair], mut w: W) -> Result<()> {
        for p in pairs {
            writeln!(w, "{}", p.to_json_line())?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<QAPair>> {
        let mut out = Vec::new();
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(QAPair::from_json_line(&line)?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_answer_rejected() {
        assert!(QAPair::new(vec!["w00".into()], vec![], Source::Real).is_err());
    }

    #[test]
    fn reserved_token_rejected() {
        let err = QAPair::new(vec!["<sep>".into()], vec!["w00".into()], Source::Real).unwrap_err();
        assert!(matches!(err, CoreError::ReservedToken(_)));
    }

    #[test]
    fn jsonl_round_trip() {
        let p = QAPair::new(
            vec!["w01".into(), "w02".into()],
            vec!["lab1".into()],
            Source::Generated,
        )
        .unwrap();
        let line = p.to_json_line();
        assert!(line.contains("\"generated\""));
        let back = QAPair::from_json_line(&line).unwrap();
        assert_eq!(back, p);
    }
}
