//! Synthetic desk-scale task generators and task-order enumeration.
//!
//! Three task families stand in for sentiment analysis, semantic role
//! labeling, and goal-oriented dialogue. Every answer is a deterministic
//! function of the question, so 100% accuracy is attainable, and each
//! question opens with a family marker token so the families stay
//! distinguishable inside one shared symbol space.

use std::collections::HashSet;

use crate::diffcore::Rng;
use crate::error::{CoreError, Result};
use crate::textdata::qa::{Metric, QAPair, Source, TaskDataset};

/// Task family. `Classify` answers with one label decided by the majority
/// symbol class, `Tag` answers with one tag per content symbol, `Slots`
/// answers with the key/value pairs present in the question.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Classify,
    Tag,
    Slots,
}

const CONTENT: usize = 48;
const TAG_CLASSES: usize = 4;
const KEYS: usize = 4;
const VALUES: usize = 8;

fn word(i: usize) -> String {
    format!("w{i:02}")
}

/// Class of a content symbol for the two-way classify rule.
fn class2(sym: &str) -> usize {
    sym[1..].parse::<usize>().expect("content symbol") % 2
}

/// Class of a content symbol for the four-way tag rule.
fn class4(sym: &str) -> usize {
    sym[1..].parse::<usize>().expect("content symbol") % TAG_CLASSES
}

/// The hidden rule: recover the answer from the question alone.
fn rule_answer(kind: TaskKind, question: &[String]) -> Vec<String> {
    match kind {
        TaskKind::Classify => {
            let ones: usize = question[1..].iter().map(|s| class2(s)).sum();
            let zeros = question.len() - 1 - ones;
            let label = usize::from(ones > zeros);
            vec![format!("lab{label}")]
        }
        TaskKind::Tag => question[1..]
            .iter()
            .map(|s| format!("tag{}", class4(s)))
            .collect(),
        TaskKind::Slots => {
            let mut bindings: Vec<Option<String>> = vec![None; KEYS];
            for w in question.windows(2) {
                if let Some(k) = w[0].strip_prefix("key") {
                    if w[1].starts_with("val") {
                        let k: usize = k.parse().expect("key symbol");
                        if bindings[k].is_none() {
                            bindings[k] = Some(w[1].clone());
                        }
                    }
                }
            }
            let mut out = Vec::new();
            for (k, v) in bindings.into_iter().enumerate() {
                if let Some(v) = v {
                    out.push(format!("key{k}"));
                    out.push(v);
                }
            }
            out
        }
    }
}

fn gen_question(kind: TaskKind, rng: &mut Rng) -> Vec<String> {
    match kind {
        TaskKind::Classify => {
            // odd content lengths keep the two-class majority tie-free
            let len = [3, 5, 7][rng.below(3)];
            let mut q = vec!["ask-label".to_string()];
            q.extend((0..len).map(|_| word(rng.below(CONTENT))));
            q
        }
        TaskKind::Tag => {
            let len = 3 + rng.below(4);
            let mut q = vec!["ask-tags".to_string()];
            q.extend((0..len).map(|_| word(rng.below(CONTENT))));
            q
        }
        TaskKind::Slots => {
            // filler prefix, then adjacent key/value pairs
            let n_keys = 1 + rng.below(2);
            let keys = rng.sample_without_replacement(KEYS, n_keys);
            let mut q = vec!["ask-slots".to_string()];
            for _ in 0..1 + rng.below(2) {
                q.push(word(rng.below(CONTENT)));
            }
            for &k in &keys {
                q.push(format!("key{k}"));
                q.push(format!("val{}", rng.below(VALUES)));
            }
            q
        }
    }
}

/// Generate a task with `n_train` + `n_test` distinct questions; answers
/// follow the family rule, so identical seeds give bit-identical datasets.
pub fn make_task(kind: TaskKind, seed: u64, n_train: usize, n_test: usize) -> Result<TaskDataset> {
    if n_train < 1 || n_test < 1 {
        return Err(CoreError::InvalidArgument(
            "n_train and n_test must be at least 1".into(),
        ));
    }
    let mut rng = Rng::new(seed);
    let total = n_train + n_test;
    let mut seen: HashSet<String> = HashSet::with_capacity(total);
    let mut pairs: Vec<QAPair> = Vec::with_capacity(total);
    let mut attempts = 0usize;
    while pairs.len() < total {
        attempts += 1;
        if attempts > total * 1000 {
            return Err(CoreError::InvalidArgument(format!(
                "could not generate {total} distinct questions for {kind:?}"
            )));
        }
        let q = gen_question(kind, &mut rng);
        let key = q.join(" ");
        if !seen.insert(key) {
            continue;
        }
        let a = rule_answer(kind, &q);
        pairs.push(QAPair::new(q, a, Source::Real)?);
    }
    let test = pairs.split_off(n_train);
    let (name, metric) = match kind {
        TaskKind::Classify => ("sst-toy", Metric::ExactMatch),
        TaskKind::Tag => ("srl-toy", Metric::TokenF1),
        TaskKind::Slots => ("woz-toy", Metric::ExactMatch),
    };
    Ok(TaskDataset {
        name: name.to_string(),
        train: pairs,
        test,
        metric,
    })
}

/// Task family for a battery task name.
pub fn kind_for_name(name: &str) -> Result<TaskKind> {
    match name {
        "sst-toy" | "classify" => Ok(TaskKind::Classify),
        "srl-toy" | "tag" => Ok(TaskKind::Tag),
        "woz-toy" | "slots" => Ok(TaskKind::Slots),
        other => Err(CoreError::InvalidArgument(format!(
            "unknown task kind `{other}`"
        ))),
    }
}

/// All 6 permutations of three distinct names, in lexicographic order of
/// position indices; the first order is the input order.
pub fn task_orders(names: &[String]) -> Result<Vec<Vec<String>>> {
    if names.len() != 3 {
        return Err(CoreError::InvalidArgument(format!(
            "expected exactly 3 task names, got {}",
            names.len()
        )));
    }
    let distinct: HashSet<&String> = names.iter().collect();
    if distinct.len() != 3 {
        return Err(CoreError::InvalidArgument(
            "task names must be distinct".into(),
        ));
    }
    const PERMS: [[usize; 3]; 6] = [
        [0, 1, 2],
        [0, 2, 1],
        [1, 0, 2],
        [1, 2, 0],
        [2, 0, 1],
        [2, 1, 0],
    ];
    Ok(PERMS
        .iter()
        .map(|p| p.iter().map(|&i| names[i].clone()).collect())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classify_answers_in_label_set() {
        let ds = make_task(TaskKind::Classify, 1, 4, 2).unwrap();
        assert_eq!(ds.train.len(), 4);
        assert_eq!(ds.test.len(), 2);
        for p in ds.train.iter().chain(ds.test.iter()) {
            assert_eq!(p.answer().len(), 1);
            assert!(p.answer()[0].starts_with("lab"));
        }
    }

    #[test]
    fn tag_answer_length_matches_content_length() {
        let ds = make_task(TaskKind::Tag, 7, 32, 8).unwrap();
        for p in ds.train.iter().chain(ds.test.iter()) {
            assert_eq!(p.answer().len(), p.question().len() - 1);
        }
    }

    #[test]
    fn same_seed_same_dataset() {
        let a = make_task(TaskKind::Slots, 99, 16, 4).unwrap();
        let b = make_task(TaskKind::Slots, 99, 16, 4).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
    }

    #[test]
    fn train_test_disjoint_questions() {
        let ds = make_task(TaskKind::Classify, 3, 64, 16).unwrap();
        let train_qs: HashSet<String> = ds.train.iter().map(|p| p.question_text()).collect();
        for p in &ds.test {
            assert!(!train_qs.contains(&p.question_text()));
        }
    }

    #[test]
    fn zero_sizes_rejected() {
        assert!(make_task(TaskKind::Tag, 1, 0, 4).is_err());
        assert!(make_task(TaskKind::Tag, 1, 4, 0).is_err());
    }

    #[test]
    fn unknown_kind_rejected() {
        assert!(kind_for_name("squad").is_err());
    }

    #[test]
    fn orders_enumeration() {
        let names: Vec<String> = ["a", "b", "c"].map(String::from).to_vec();
        let orders = task_orders(&names).unwrap();
        assert_eq!(orders.len(), 6);
        assert_eq!(orders[0], names);
        assert_eq!(orders[5], vec!["c", "b", "a"]);
        let set: HashSet<Vec<String>> = orders.into_iter().collect();
        assert_eq!(set.len(), 6);
    }

    #[test]
    fn duplicate_names_rejected() {
        let names: Vec<String> = ["a", "b", "a"].map(String::from).to_vec();
        assert!(task_orders(&names).is_err());
    }
}
