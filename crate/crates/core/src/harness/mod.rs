//! Continual-learning experiment driver: the staged training loop,
//! baselines and ablations, metrics, task-order batteries, sweeps, and
//! file outputs.

mod battery;
mod config;
mod eval;
mod run;

pub use battery::{
    run_ablation, run_battery, run_sweep, BatteryOutcome, BatteryRow, MethodSpec, RunSummary,
    SweepParam, SWEEP_GRID,
};
pub use config::{ExperimentConfig, Method};
pub use eval::{evaluate, exact_match, token_f1, MetricsReport, ReportKind, TaskForgetting};
pub use run::{
    build_tasks, load_checkpoint, pretrain_base_lm, run, run_continual, run_multitask,
    train_lm_stage, StageRecord, StageTrainStats,
};
