//! Generative replay: pseudo-sample generation from the trained EBM at
//! ratio gamma, the append-only per-stage sample store, and merging
//! generated past-task data into the current task's training set.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diffcore::Rng;
use crate::error::{CoreError, Result};
use crate::latent_ebm::{langevin, EBMState, LangevinConfig};
use crate::textdata::{QAPair, Source, TaskDataset, Vocab, GEN_ID};

/// Replay settings.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ReplayConfig {
    /// Pseudo-sample count as a fraction of the current task's train size.
    pub gamma: f64,
    /// Top-k for decoding pseudo-samples.
    pub k: usize,
    /// Attempt budget multiplier before reporting a shortfall.
    pub max_attempts_factor: usize,
    /// Maximum decoded length per sample.
    pub max_len: usize,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        ReplayConfig {
            gamma: 0.05,
            k: 1,
            max_attempts_factor: 10,
            max_len: 32,
        }
    }
}

impl ReplayConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(CoreError::InvalidArgument(format!(
                "gamma {} outside [0, 1]",
                self.gamma
            )));
        }
        if self.k < 1 || self.max_len < 1 {
            return Err(CoreError::InvalidArgument(
                "replay needs k >= 1 and max_len >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Report returned when the attempt budget ran out before `count` valid
/// samples were decoded.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Shortfall {
    pub requested: usize,
    pub produced: usize,
    pub attempts: usize,
}

/// Result of one generation round.
#[derive(Debug, Clone)]
pub struct GeneratedBatch {
    pub pairs: Vec<QAPair>,
    pub shortfall: Option<Shortfall>,
}

/// Draw latents from the EBM prior with short-run Langevin dynamics,
/// decode each with top-k starting after GEN, and keep decodes that parse
/// as `question SEP answer EOS` with nonempty spans. Invalid decodes are
/// discarded; generation stops once `count` pairs exist or the attempt
/// budget `count * max_attempts_factor` is spent, reporting a shortfall
/// rather than failing.
pub fn generate_pseudo(
    state: &EBMState,
    count: usize,
    cfg: &ReplayConfig,
    lcfg: &LangevinConfig,
    vocab: &Vocab,
    rng: &mut Rng,
) -> Result<GeneratedBatch> {
    cfg.validate()?;
    if count == 0 {
        return Ok(GeneratedBatch {
            pairs: Vec::new(),
            shortfall: None,
        });
    }
    let d = state.latent_dim();
    let budget = count * cfg.max_attempts_factor.max(1);
    let mut pairs = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while pairs.len() < count && attempts < budget {
        let round = (count - pairs.len()).min(budget - attempts);
        let zs = langevin(
            |z| state.alpha.prior_score(z),
            round,
            d,
            lcfg.k0,
            lcfg.s0,
            rng,
        )?;
        for row in 0..round {
            attempts += 1;
            let z = crate::Tensor::vector(zs.row(row).to_vec());
            let decoded = state.decoder.decode_topk(&z, cfg.k, cfg.max_len, rng)?;
            let mut ids = Vec::with_capacity(decoded.len() + 1);
            ids.push(GEN_ID);
            ids.extend_from_slice(&decoded);
            if let Ok(pair) = vocab.decode(&ids) {
                pairs.push(pair.into_generated());
                if pairs.len() == count {
                    break;
                }
            }
        }
    }
    let shortfall = (pairs.len() < count).then_some(Shortfall {
        requested: count,
        produced: pairs.len(),
        attempts,
    });
    Ok(GeneratedBatch { pairs, shortfall })
}

/// JSONL line inside a stage file.
#[derive(Serialize, Deserialize)]
struct StoreLine {
    question: String,
    answer: String,
    source: Source,
    stage: usize,
}

/// Append-only persistent store: one `stage_<m>.jsonl` file per stage under
/// the root directory. Stages must strictly increase; loading returns all
/// stages concatenated in stage order.
#[derive(Debug)]
pub struct SampleStore {
    root: PathBuf,
    stages: Vec<usize>,
}

impl SampleStore {
    pub fn open(root: &Path) -> Result<SampleStore> {
        fs::create_dir_all(root)?;
        let mut stages = Vec::new();
        for entry in fs::read_dir(root)? {
            let name = entry?.file_name();
            let name = name.to_string_lossy();
            if let Some(num) = name
                .strip_prefix("stage_")
                .and_then(|s| s.strip_suffix(".jsonl"))
            {
                if let Ok(m) = num.parse::<usize>() {
                    stages.push(m);
                }
            }
        }
        stages.sort_unstable();
        Ok(SampleStore {
            root: root.to_path_buf(),
            stages,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn stages(&self) -> &[usize] {
        &self.stages
    }

    fn stage_path(&self, stage: usize) -> PathBuf {
        self.root.join(format!("stage_{stage}.jsonl"))
    }

    /// Write one stage file. The stage index must be strictly greater than
    /// every stage already present.
    pub fn persist(&mut self, stage: usize, samples: &[QAPair]) -> Result<()> {
        if let Some(&last) = self.stages.last() {
            if stage <= last {
                return Err(CoreError::StageRegression { given: stage, last });
            }
        }
        let mut file = fs::File::create(self.stage_path(stage))?;
        for p in samples {
            let line = StoreLine {
                question: p.question_text(),
                answer: p.answer_text(),
                source: Source::Generated,
                stage,
            };
            writeln!(file, "{}", serde_json::to_string(&line)?)?;
        }
        self.stages.push(stage);
        Ok(())
    }

    /// All stored samples, stages concatenated in order.
    pub fn load(&self) -> Result<Vec<QAPair>> {
        let mut out = Vec::new();
        for &stage in &self.stages {
            let path = self.stage_path(stage);
            let file = BufReader::new(fs::File::open(&path)?);
            for (i, line) in file.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let parsed: StoreLine =
                    serde_json::from_str(&line).map_err(|e| CoreError::MalformedStoreLine {
                        file: path.display().to_string(),
                        line: i + 1,
                        reason: e.to_string(),
                    })?;
                let split =
                    |s: &str| -> Vec<String> { s.split_whitespace().map(str::to_string).collect() };
                let pair = QAPair::new(split(&parsed.question), split(&parsed.answer), parsed.source)
                    .map_err(|e| CoreError::MalformedStoreLine {
                        file: path.display().to_string(),
                        line: i + 1,
                        reason: e.to_string(),
                    })?;
                out.push(pair);
            }
        }
        Ok(out)
    }
}

/// Outcome of merging replay data into one task's training list.
#[derive(Debug, Clone)]
pub struct MergeOutcome {
    pub train: Vec<QAPair>,
    pub generated: usize,
    pub shortfall: Option<Shortfall>,
}

/// Request `ceil(gamma * |train|)` pseudo-pairs, generated fresh for this
/// stage and persisted, then return the current train list plus the
/// pseudo-pairs, shuffled with the experiment RNG. gamma = 0 means no
/// generation and no store access: the train list is returned as is.
#[allow(clippy::too_many_arguments)]
pub fn merge(
    current: &TaskDataset,
    store: &mut SampleStore,
    stage: usize,
    state: &EBMState,
    cfg: &ReplayConfig,
    lcfg: &LangevinConfig,
    vocab: &Vocab,
    rng: &mut Rng,
) -> Result<MergeOutcome> {
    cfg.validate()?;
    if cfg.gamma == 0.0 {
        return Ok(MergeOutcome {
            train: current.train.clone(),
            generated: 0,
            shortfall: None,
        });
    }
    let requested = (cfg.gamma * current.train.len() as f64).ceil() as usize;
    let batch = generate_pseudo(state, requested, cfg, lcfg, vocab, rng)?;
    store.persist(stage, &batch.pairs)?;
    let mut train = current.train.clone();
    train.extend(batch.pairs.iter().cloned());
    rng.shuffle(&mut train);
    Ok(MergeOutcome {
        generated: batch.pairs.len(),
        shortfall: batch.shortfall,
        train,
    })
}
