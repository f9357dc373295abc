//! Experiment configuration.

use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Training regimes: the full method, its ablations, and the two
/// reference baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Replay and selection loss both active.
    Ppsebm,
    /// Replay only (selection-loss weight forced to 0).
    OnlyEbm,
    /// Selection loss only (sampling ratio forced to 0).
    OnlyPps,
    /// Prompt slots allocated but untrained, no replay.
    Neither,
    /// Plain sequential fine-tuning: no slots, no replay.
    Finetune,
    /// Joint training on all tasks at once (upper bound).
    Multitask,
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::Ppsebm => "ppsebm",
            Method::OnlyEbm => "only_ebm",
            Method::OnlyPps => "only_pps",
            Method::Neither => "neither",
            Method::Finetune => "finetune",
            Method::Multitask => "multitask",
        }
    }

    /// Whether this method allocates prompt slots.
    pub fn uses_prompts(&self) -> bool {
        !matches!(self, Method::Finetune | Method::Multitask)
    }

    /// (effective gamma, effective lambda_p) under this method.
    pub fn effective(&self, gamma: f64, lambda_p: f64) -> (f64, f64) {
        match self {
            Method::Ppsebm => (gamma, lambda_p),
            Method::OnlyEbm => (gamma, 0.0),
            Method::OnlyPps => (0.0, lambda_p),
            Method::Neither => (0.0, 0.0),
            Method::Finetune | Method::Multitask => (0.0, 0.0),
        }
    }
}

impl FromStr for Method {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Method> {
        match s {
            "ppsebm" => Ok(Method::Ppsebm),
            "only_ebm" => Ok(Method::OnlyEbm),
            "only_pps" => Ok(Method::OnlyPps),
            "neither" => Ok(Method::Neither),
            "finetune" => Ok(Method::Finetune),
            "multitask" => Ok(Method::Multitask),
            other => Err(CoreError::Config(format!("unknown method `{other}`"))),
        }
    }
}

/// One experiment's full configuration. Every field has a CLI flag and a
/// JSON key; flags override the file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub method: Method,
    pub task_order: Vec<String>,
    /// Pseudo-sample ratio against the current task's train size.
    pub gamma: f64,
    /// Selection-loss weight.
    pub lambda_p: f64,
    /// Top-k for pseudo-sample decoding.
    pub k: usize,
    /// Rows per prompt slot.
    pub p_len: usize,
    /// Latent dimension d.
    pub latent_dim: usize,
    /// Langevin steps for prior / posterior chains.
    pub k0: usize,
    pub k1: usize,
    /// Langevin step sizes.
    pub s0: f64,
    pub s1: f64,
    /// Prior / generator learning rates.
    pub eta0: f64,
    pub eta1: f64,
    /// EBM batch size and iterations per task.
    pub ebm_batch: usize,
    pub ebm_iters: usize,
    /// Base-LM epochs per task with early-stop patience.
    pub epochs: usize,
    pub patience: usize,
    /// Base-LM learning rate and batch size.
    pub lm_lr: f64,
    pub lm_batch: usize,
    pub seed: u64,
    /// Dataset seed; defaults to `seed` so one flag pins everything, while
    /// batteries pin it explicitly to share datasets across runs.
    pub data_seed: Option<u64>,
    pub out_dir: PathBuf,
    pub n_train: usize,
    pub n_test: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub prior_hidden: usize,
    pub max_len: usize,
    /// Base-LM pretraining steps on the generic format corpus.
    pub pretrain_steps: usize,
    /// Diagnostic inference-net descent steps per EBM phase.
    pub infer_steps: usize,
    /// Replay attempt budget multiplier.
    pub max_attempts_factor: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            method: Method::Ppsebm,
            task_order: vec!["sst-toy".into(), "srl-toy".into(), "woz-toy".into()],
            gamma: 0.05,
            lambda_p: 0.05,
            k: 1,
            p_len: 10,
            latent_dim: 16,
            k0: 20,
            k1: 20,
            s0: 0.1,
            s1: 0.1,
            eta0: 1e-4,
            eta1: 1e-3,
            ebm_batch: 16,
            ebm_iters: 500,
            epochs: 20,
            patience: 3,
            lm_lr: 0.25,
            lm_batch: 32,
            seed: 42,
            data_seed: None,
            out_dir: PathBuf::from("ppsebm-out"),
            n_train: 512,
            n_test: 128,
            embed_dim: 32,
            hidden_dim: 64,
            prior_hidden: 64,
            max_len: 32,
            pretrain_steps: 300,
            infer_steps: 20,
            max_attempts_factor: 10,
        }
    }
}

impl ExperimentConfig {
    /// Minutes-scale battery preset: spec-true method knobs with the
    /// training schedule sized for CPU runs (fewer, larger EBM steps and a
    /// tighter epoch budget).
    pub fn toy_battery() -> Self {
        ExperimentConfig {
            eta0: 1e-3,
            eta1: 0.1,
            ebm_batch: 8,
            ebm_iters: 150,
            epochs: 12,
            ..ExperimentConfig::default()
        }
    }

    pub fn data_seed(&self) -> u64 {
        self.data_seed.unwrap_or(self.seed)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CoreError::Config(msg));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma {} outside [0, 1]", self.gamma));
        }
        if self.lambda_p < 0.0 || !self.lambda_p.is_finite() {
            return bad(format!("lambda_p {} must be >= 0", self.lambda_p));
        }
        if self.k < 1 {
            return bad("k must be >= 1".into());
        }
        if self.p_len < 1 {
            return bad("p_len must be >= 1".into());
        }
        if self.s0 < 0.0 || self.s1 < 0.0 {
            return bad("langevin step sizes must be >= 0".into());
        }
        if self.task_order.is_empty() {
            return bad("task_order must not be empty".into());
        }
        if self.n_train < 1 || self.n_test < 1 {
            return bad("n_train and n_test must be >= 1".into());
        }
        if self.lm_batch < 1 || self.ebm_batch < 1 {
            return bad("batch sizes must be >= 1".into());
        }
        if self.max_len < 1 {
            return bad("max_len must be >= 1".into());
        }
        Ok(())
    }

    /// Load a JSON config file.
    pub fn from_json_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| CoreError::Config(e.to_string()))?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ExperimentConfig::default().validate().unwrap();
        ExperimentConfig::toy_battery().validate().unwrap();
    }

    #[test]
    fn method_masks() {
        assert_eq!(Method::Ppsebm.effective(0.05, 0.05), (0.05, 0.05));
        assert_eq!(Method::OnlyEbm.effective(0.05, 0.05), (0.05, 0.0));
        assert_eq!(Method::OnlyPps.effective(0.05, 0.05), (0.0, 0.05));
        assert_eq!(Method::Neither.effective(0.05, 0.05), (0.0, 0.0));
        assert!(!Method::Finetune.uses_prompts());
        assert!(Method::Neither.uses_prompts());
    }

    #[test]
    fn bad_gamma_rejected() {
        let cfg = ExperimentConfig {
            gamma: 1.5,
            ..ExperimentConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(CoreError::Config(_))));
    }

    #[test]
    fn json_round_trip() {
        let cfg = ExperimentConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back.seed, cfg.seed);
        assert_eq!(back.method, cfg.method);
    }
}
