//! Closed vocabulary, the unified QA serialization, synthetic desk-scale
//! task generators, and task-order enumeration.

mod qa;
mod tasks;
mod vocab;

pub use qa::{Metric, QAPair, Source, TaskDataset};
pub use tasks::{kind_for_name, make_task, task_orders, TaskKind};
pub use vocab::{Vocab, EOS_ID, GEN_ID, PAD_ID, SEP_ID};
