//! Continual and multitask experiment runners.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::diffcore::Rng;
use crate::error::{CoreError, Result};
use crate::harness::config::{ExperimentConfig, Method};
use crate::harness::eval::{evaluate, MetricsReport, ReportKind};
use crate::latent_ebm::{train_ebm, EbmDims, EBMState, LangevinConfig, TrainState};
use crate::pps::{PromptBank, SlotRecord};
use crate::replay::{merge, ReplayConfig, SampleStore, Shortfall};
use crate::seqmodel::{
    qa_step_batch, train_inference_net, BaseLmParams, CheckpointDoc, GradBundle,
};
use crate::textdata::{kind_for_name, make_task, QAPair, Source, TaskDataset, Vocab};
use crate::Tape;

/// Gradient clip (global L2 norm) for base-LM SGD steps.
const LM_GRAD_CLIP: f64 = 5.0;
/// Early-stop improvement threshold on the epoch mean loss.
const PLATEAU_DELTA: f64 = 1e-4;
/// Inference-net diagnostic subsample size and initial step size.
const INFER_SUBSAMPLE: usize = 48;
const INFER_LR: f64 = 0.5;
/// Pretraining corpus size.
const PRETRAIN_PAIRS: usize = 256;

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: usize,
    pub task: String,
    pub scores: BTreeMap<String, f64>,
    pub average: f64,
    pub l_qa: f64,
    pub l_p: f64,
    pub combined: f64,
    pub epochs_ran: usize,
    pub generated: usize,
    pub shortfall: Option<Shortfall>,
    pub infer_energy: Option<f64>,
    pub slot_checksum: Option<String>,
}

/// Build the ordered datasets. Task identity is pinned by the data seed
/// and the task name, so the same task is bit-identical in every order.
pub fn build_tasks(cfg: &ExperimentConfig) -> Result<Vec<TaskDataset>> {
    let data_root = Rng::new(cfg.data_seed());
    cfg.task_order
        .iter()
        .map(|name| {
            let kind = kind_for_name(name)?;
            let seed = data_root.derive(&format!("task/{name}")).seed();
            let mut ds = make_task(kind, seed, cfg.n_train, cfg.n_test)?;
            ds.name = name.clone();
            Ok(ds)
        })
        .collect()
}

/// Brief pretraining on a generic synthetic corpus: random content-symbol
/// questions with random short answers, which teaches the serialization
/// format (answer after SEP, terminated by EOS) without any task rule.
pub fn pretrain_base_lm(
    vocab: &Vocab,
    cfg: &ExperimentConfig,
    rng: &mut Rng,
) -> Result<BaseLmParams> {
    let mut lm = BaseLmParams::init(vocab.size(), cfg.embed_dim, cfg.hidden_dim, rng);
    if cfg.pretrain_steps == 0 {
        return Ok(lm);
    }
    let content: Vec<String> = (0..48).map(|i| format!("w{i:02}")).collect();
    let answerable: Vec<String> = (4..vocab.size())
        .map(|id| vocab.token(id).expect("dense ids").to_string())
        .collect();
    let corpus: Vec<QAPair> = (0..PRETRAIN_PAIRS)
        .map(|_| {
            let qlen = 4 + rng.below(7);
            let alen = 1 + rng.below(4);
            let q: Vec<String> = (0..qlen)
                .map(|_| content[rng.below(content.len())].clone())
                .collect();
            // half the answers echo question tokens, teaching copying as a
            // generic skill; the rest are arbitrary
            let a = (0..alen)
                .map(|_| {
                    if rng.uniform() < 0.5 {
                        q[rng.below(q.len())].clone()
                    } else {
                        answerable[rng.below(answerable.len())].clone()
                    }
                })
                .collect();
            QAPair::new(q, a, Source::Real)
        })
        .collect::<Result<_>>()?;

    for _ in 0..cfg.pretrain_steps {
        let pairs: Vec<&QAPair> = (0..cfg.lm_batch)
            .map(|_| &corpus[rng.below(corpus.len())])
            .collect();
        let batch = qa_step_batch(vocab, &pairs)?;
        let tape = Tape::new();
        let vars = lm.vars(&tape, true);
        let loss = vars.answer_nll_batch(&[], &batch)?.mean()?;
        let mut grads = tape.backward(&loss)?;
        let mut bundle = GradBundle::new();
        bundle.push_all(lm.fields_mut(), &vars.fields(), &mut grads, 1.0);
        bundle.apply_sgd(cfg.lm_lr, Some(LM_GRAD_CLIP));
    }
    if !lm.all_finite() {
        return Err(CoreError::TrainingDiverged {
            task: 0,
            iteration: cfg.pretrain_steps,
        });
    }
    Ok(lm)
}

pub struct StageTrainStats {
    pub l_qa: f64,
    pub l_p: f64,
    pub combined: f64,
    pub epochs_ran: usize,
}

/// Train the base LM (and the unfrozen prompt slot, when present) on one
/// stage's merged data, minimizing `L = L_QA + lambda_p * L_P`. The two
/// losses are the same answer NLL on a batch; what differs is the routing:
/// the QA loss drives the base parameters and the selection loss drives
/// the unfrozen slot, scaled by lambda_p. Early-stops on a training-loss
/// plateau.
pub fn train_lm_stage(
    lm: &mut BaseLmParams,
    bank: &mut PromptBank,
    vocab: &Vocab,
    merged: &[QAPair],
    lambda_p: f64,
    cfg: &ExperimentConfig,
    rng: &mut Rng,
) -> Result<StageTrainStats> {
    if merged.is_empty() {
        return Err(CoreError::InvalidArgument("empty training set".into()));
    }
    let mut best = f64::INFINITY;
    let mut streak = 0usize;
    let mut last_epoch_loss = f64::INFINITY;
    let mut epochs_ran = 0usize;
    let mut lr = cfg.lm_lr;
    let mut decays = 0usize;
    for _epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..merged.len()).collect();
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.lm_batch) {
            let pairs: Vec<&QAPair> = chunk.iter().map(|&i| &merged[i]).collect();
            let batch = qa_step_batch(vocab, &pairs)?;
            let tape = Tape::new();
            let bank_vars = bank.vars(&tape, batch.batch);
            let lm_vars = lm.vars(&tape, true);
            let loss = lm_vars
                .answer_nll_batch(&bank_vars.step_inputs, &batch)?
                .mean()?;
            let loss_val = loss.item();
            if !loss_val.is_finite() {
                return Err(CoreError::TrainingDiverged {
                    task: bank.slots().first().map_or(0, |s| s.task_index()),
                    iteration: epochs_ran,
                });
            }
            let mut grads = tape.backward(&loss)?;
            let mut bundle = GradBundle::new();
            bundle.push_all(lm.fields_mut(), &lm_vars.fields(), &mut grads, 1.0);
            if lambda_p > 0.0 {
                if let (Some(var), Some(slot)) = (&bank_vars.unfrozen, bank.unfrozen_mut()) {
                    if let Some(g) = grads.take(var) {
                        // selection loss drives the slot: step = lr * lambda_p * grad
                        slot.apply_grad(&g, cfg.lm_lr * lambda_p)?;
                    }
                }
            }
            bundle.apply_sgd(cfg.lm_lr, Some(LM_GRAD_CLIP));
            loss_sum += loss_val;
            batches += 1;
        }
        last_epoch_loss = loss_sum / batches as f64;
        epochs_ran += 1;
        if last_epoch_loss < best - PLATEAU_DELTA {
            best = last_epoch_loss;
            streak = 0;
        } else {
            streak += 1;
            if streak >= cfg.patience {
                break;
            }
        }
    }
    if !lm.all_finite() {
        return Err(CoreError::TrainingDiverged {
            task: bank.slots().first().map_or(0, |s| s.task_index()),
            iteration: epochs_ran,
        });
    }
    let combined = crate::pps::combined_loss(last_epoch_loss, last_epoch_loss, lambda_p)?;
    Ok(StageTrainStats {
        l_qa: last_epoch_loss,
        l_p: last_epoch_loss,
        combined,
        epochs_ran,
    })
}

fn encode_all(vocab: &Vocab, pairs: &[QAPair]) -> Result<Vec<Vec<usize>>> {
    pairs.iter().map(|p| vocab.encode(p)).collect()
}

fn save_checkpoint(
    path: &Path,
    cfg: &ExperimentConfig,
    stage: usize,
    lm: &BaseLmParams,
    ebm: &EBMState,
    bank: &PromptBank,
) -> Result<()> {
    let mut doc = CheckpointDoc::new();
    lm.write_into(&mut doc, "base.");
    ebm.write_into(&mut doc, "ebm.");
    let slots: Vec<SlotRecord> = bank.slots().iter().map(SlotRecord::from).collect();
    doc.meta = json!({
        "config": cfg,
        "stage": stage,
        "slots": slots,
        "ebm_counters": { "t": ebm.train.t, "m": ebm.train.m },
    });
    doc.save(path)
}

/// Load an experiment checkpoint back into (config, stage, base LM, bank).
pub fn load_checkpoint(path: &Path) -> Result<(ExperimentConfig, usize, BaseLmParams, PromptBank)> {
    let doc = CheckpointDoc::load(path)?;
    let cfg: ExperimentConfig = serde_json::from_value(doc.meta["config"].clone())
        .map_err(|e| CoreError::Checkpoint(format!("bad config meta: {e}")))?;
    let stage = doc.meta["stage"]
        .as_u64()
        .ok_or_else(|| CoreError::Checkpoint("missing stage".into()))? as usize;
    let lm = BaseLmParams::read_from(&doc, "base.")?;
    let slots: Vec<SlotRecord> = serde_json::from_value(doc.meta["slots"].clone())
        .map_err(|e| CoreError::Checkpoint(format!("bad slots meta: {e}")))?;
    let mut bank = PromptBank::new();
    for rec in slots.iter().rev() {
        bank.restore_slot(crate::pps::PromptSlot::try_from(rec)?)?;
    }
    Ok((cfg, stage, lm, bank))
}

fn write_forgetting_csv(path: &Path, report: &MetricsReport) -> Result<()> {
    let mut file = BufWriter::new(File::create(path)?);
    let stages = report.stage_tasks.len();
    let header: Vec<String> = (1..=stages).map(|i| format!("stage_{i}")).collect();
    writeln!(file, "task,{},delta", header.join(","))?;
    for tf in report.forgetting()? {
        let lead = stages - tf.series.len();
        let mut cells: Vec<String> = vec![String::new(); lead];
        cells.extend(tf.series.iter().map(|v| format!("{v}")));
        writeln!(file, "{},{},{}", tf.task, cells.join(","), tf.delta)?;
    }
    Ok(())
}

fn write_run_info(dir: &Path, report: &MetricsReport) -> Result<()> {
    let info = json!({
        "kind": report.kind,
        "final_average": report.final_average,
        "wall_clock_secs": report.wall_clock_secs,
    });
    fs::write(dir.join("run_info.json"), serde_json::to_string_pretty(&info)?)?;
    Ok(())
}

/// Run one config: continual methods through the staged loop, multitask
/// through the joint trainer.
pub fn run(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    if cfg.method == Method::Multitask {
        run_multitask(cfg)
    } else {
        run_continual(cfg)
    }
}

/// The continual loop: per stage, optionally extend the EBM with the
/// previous stage's (replay-augmented) data and merge fresh pseudo-samples
/// into the current task, allocate and train a prompt slot, train the base
/// LM on the merged data, freeze, and evaluate every task.
pub fn run_continual(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    let started = Instant::now();
    cfg.validate()?;
    if cfg.method == Method::Multitask {
        return Err(CoreError::Config(
            "run_continual cannot run the multitask method".into(),
        ));
    }
    let vocab = Vocab::default_desk();
    if cfg.latent_dim > vocab.size() {
        return Err(CoreError::Config(format!(
            "latent_dim {} exceeds vocabulary size {}",
            cfg.latent_dim,
            vocab.size()
        )));
    }
    let (gamma_eff, lambda_eff) = cfg.method.effective(cfg.gamma, cfg.lambda_p);
    let root = Rng::new(cfg.seed);
    let tasks = build_tasks(cfg)?;

    fs::create_dir_all(&cfg.out_dir)?;
    let mut metrics_file = BufWriter::new(File::create(cfg.out_dir.join("metrics.jsonl"))?);
    let mut ebm_log = if gamma_eff > 0.0 {
        Some(BufWriter::new(File::create(
            cfg.out_dir.join("ebm_train.jsonl"),
        )?))
    } else {
        None
    };

    let mut lm = pretrain_base_lm(&vocab, cfg, &mut root.derive("pretrain"))?;
    let dims = EbmDims {
        vocab: vocab.size(),
        embed: cfg.embed_dim,
        hidden: cfg.hidden_dim,
        latent: cfg.latent_dim,
        prior_hidden: cfg.prior_hidden,
    };
    let tstate = TrainState {
        t: 0,
        m: 0,
        eta0: cfg.eta0,
        eta1: cfg.eta1,
        batch: cfg.ebm_batch,
        iters_per_task: cfg.ebm_iters,
    };
    let mut ebm = EBMState::new(dims, tstate, &mut root.derive("ebm-init"));
    let mut store = if gamma_eff > 0.0 {
        Some(SampleStore::open(&cfg.out_dir.join("store"))?)
    } else {
        None
    };
    let mut bank = PromptBank::new();
    let lcfg = LangevinConfig {
        k0: cfg.k0,
        k1: cfg.k1,
        s0: cfg.s0,
        s1: cfg.s1,
    };
    let rcfg = ReplayConfig {
        gamma: gamma_eff,
        k: cfg.k,
        max_attempts_factor: cfg.max_attempts_factor,
        max_len: cfg.max_len,
    };

    let n_tasks = tasks.len();
    let mut scores = vec![vec![0.0; n_tasks]; n_tasks];
    let mut checksums: Vec<(usize, String)> = Vec::new();
    let mut prev_train: Option<(String, Vec<QAPair>)> = None;

    for (idx, task) in tasks.iter().enumerate() {
        let stage = idx + 1;
        let mut generated = 0usize;
        let mut shortfall = None;
        let mut infer_energy = None;

        let merged: Vec<QAPair> = if gamma_eff > 0.0 && stage >= 2 {
            let (prev_name, prev_pairs) = prev_train.take().expect("previous stage data");
            let prev_seqs = encode_all(&vocab, &prev_pairs)?;
            let infer_sub: Vec<Vec<usize>> =
                prev_seqs.iter().take(INFER_SUBSAMPLE).cloned().collect();
            train_ebm(
                &mut ebm,
                &[(prev_name, prev_seqs)],
                &lcfg,
                &mut root.derive_indexed("ebm-train", stage),
                |rec| {
                    if let Some(f) = ebm_log.as_mut() {
                        let _ = writeln!(f, "{}", serde_json::to_string(rec).expect("log record"));
                    }
                },
            )?;
            if cfg.infer_steps > 0 {
                let log = train_inference_net(
                    &mut ebm.infer,
                    &ebm.decoder,
                    &infer_sub,
                    cfg.infer_steps,
                    INFER_LR,
                )?;
                infer_energy = log.energies.last().copied();
            }
            let outcome = merge(
                task,
                store.as_mut().expect("store open when gamma > 0"),
                stage,
                &ebm,
                &rcfg,
                &lcfg,
                &vocab,
                &mut root.derive_indexed("replay", stage),
            )?;
            generated = outcome.generated;
            shortfall = outcome.shortfall;
            outcome.train
        } else {
            task.train.clone()
        };

        if cfg.method.uses_prompts() {
            bank.new_slot(&lm, cfg.p_len, stage, &mut root.derive_indexed("slot", stage))?;
        }
        let stats = train_lm_stage(
            &mut lm,
            &mut bank,
            &vocab,
            &merged,
            lambda_eff,
            cfg,
            &mut root.derive_indexed("lm", stage),
        )?;
        let slot_checksum = if cfg.method.uses_prompts() {
            bank.freeze_newest()?;
            let c = bank.slots()[0].checksum();
            checksums.push((stage, c.clone()));
            Some(c)
        } else {
            None
        };

        let mut col_scores = BTreeMap::new();
        for (i, t) in tasks.iter().enumerate() {
            let s = evaluate(&lm, &bank, t, &vocab, cfg.max_len)?;
            scores[i][idx] = s;
            col_scores.insert(t.name.clone(), s);
        }
        let average = col_scores.values().sum::<f64>() / n_tasks as f64;

        let record = StageRecord {
            stage,
            task: task.name.clone(),
            scores: col_scores,
            average,
            l_qa: stats.l_qa,
            l_p: stats.l_p,
            combined: stats.combined,
            epochs_ran: stats.epochs_ran,
            generated,
            shortfall,
            infer_energy,
            slot_checksum,
        };
        writeln!(metrics_file, "{}", serde_json::to_string(&record)?)?;

        save_checkpoint(
            &cfg.out_dir.join(format!("checkpoint_stage_{stage}.json")),
            cfg,
            stage,
            &lm,
            &ebm,
            &bank,
        )?;
        prev_train = Some((task.name.clone(), merged));
    }
    metrics_file.flush()?;
    if let Some(f) = ebm_log.as_mut() {
        f.flush()?;
    }

    let report = MetricsReport {
        kind: ReportKind::Continual,
        task_names: tasks.iter().map(|t| t.name.clone()).collect(),
        stage_tasks: tasks.iter().map(|t| t.name.clone()).collect(),
        final_average: scores.iter().map(|r| r[n_tasks - 1]).sum::<f64>() / n_tasks as f64,
        scores,
        wall_clock_secs: started.elapsed().as_secs_f64(),
        slot_checksums: checksums,
    };
    write_forgetting_csv(&cfg.out_dir.join("forgetting.csv"), &report)?;
    write_run_info(&cfg.out_dir, &report)?;
    Ok(report)
}

/// Upper bound: joint training on the union of all train splits, no
/// prompts, no replay; one evaluation column.
pub fn run_multitask(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    let started = Instant::now();
    cfg.validate()?;
    let vocab = Vocab::default_desk();
    let root = Rng::new(cfg.seed);
    let tasks = build_tasks(cfg)?;
    fs::create_dir_all(&cfg.out_dir)?;
    let mut metrics_file = BufWriter::new(File::create(cfg.out_dir.join("metrics.jsonl"))?);

    let mut lm = pretrain_base_lm(&vocab, cfg, &mut root.derive("pretrain"))?;
    let union: Vec<QAPair> = tasks.iter().flat_map(|t| t.train.iter().cloned()).collect();
    let mut bank = PromptBank::new();
    let stats = train_lm_stage(
        &mut lm,
        &mut bank,
        &vocab,
        &union,
        0.0,
        cfg,
        &mut root.derive("lm-multitask"),
    )?;

    let n_tasks = tasks.len();
    let mut col_scores = BTreeMap::new();
    let mut scores = vec![vec![0.0; 1]; n_tasks];
    for (i, t) in tasks.iter().enumerate() {
        let s = evaluate(&lm, &bank, t, &vocab, cfg.max_len)?;
        scores[i][0] = s;
        col_scores.insert(t.name.clone(), s);
    }
    let average = col_scores.values().sum::<f64>() / n_tasks as f64;
    let record = StageRecord {
        stage: 1,
        task: "multitask".into(),
        scores: col_scores,
        average,
        l_qa: stats.l_qa,
        l_p: stats.l_p,
        combined: stats.combined,
        epochs_ran: stats.epochs_ran,
        generated: 0,
        shortfall: None,
        infer_energy: None,
        slot_checksum: None,
    };
    writeln!(metrics_file, "{}", serde_json::to_string(&record)?)?;
    metrics_file.flush()?;

    let report = MetricsReport {
        kind: ReportKind::Multitask,
        task_names: tasks.iter().map(|t| t.name.clone()).collect(),
        stage_tasks: vec!["multitask".into()],
        final_average: average,
        scores,
        wall_clock_secs: started.elapsed().as_secs_f64(),
        slot_checksums: Vec::new(),
    };
    write_run_info(&cfg.out_dir, &report)?;
    Ok(report)
}
