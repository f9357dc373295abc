//! Command-line driver for continual-learning experiments.

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use ppsebm::harness::{
    build_tasks, evaluate, load_checkpoint, run, run_ablation, run_battery, run_sweep,
    BatteryOutcome, ExperimentConfig, Method, MethodSpec, MetricsReport, SweepParam, SWEEP_GRID,
};
use ppsebm::textdata::Vocab;
use ppsebm::Result;

#[derive(Parser)]
#[command(name = "ppsebm", about = "Latent-EBM generative replay with progressive parameter selection on synthetic QA tasks", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Every config field has a flag; flags override the JSON config file.
#[derive(Args, Clone)]
struct ConfigFlags {
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// ppsebm | only_ebm | only_pps | neither | finetune | multitask
    #[arg(long)]
    method: Option<String>,
    /// Comma-separated task names, e.g. sst-toy,srl-toy,woz-toy
    #[arg(long, value_delimiter = ',')]
    order: Option<Vec<String>>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long = "lambda-p")]
    lambda_p: Option<f64>,
    /// Top-k for pseudo-sample decoding.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long = "p-len")]
    p_len: Option<usize>,
    #[arg(long = "latent-dim")]
    latent_dim: Option<usize>,
    #[arg(long)]
    k0: Option<usize>,
    #[arg(long)]
    k1: Option<usize>,
    #[arg(long)]
    s0: Option<f64>,
    #[arg(long)]
    s1: Option<f64>,
    #[arg(long)]
    eta0: Option<f64>,
    #[arg(long)]
    eta1: Option<f64>,
    #[arg(long = "ebm-batch")]
    ebm_batch: Option<usize>,
    #[arg(long = "ebm-iters")]
    ebm_iters: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long = "lm-lr")]
    lm_lr: Option<f64>,
    #[arg(long = "lm-batch")]
    lm_batch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "data-seed")]
    data_seed: Option<u64>,
    #[arg(long = "out")]
    out_dir: Option<PathBuf>,
    #[arg(long = "n-train")]
    n_train: Option<usize>,
    #[arg(long = "n-test")]
    n_test: Option<usize>,
    #[arg(long = "embed-dim")]
    embed_dim: Option<usize>,
    #[arg(long = "hidden-dim")]
    hidden_dim: Option<usize>,
    #[arg(long = "prior-hidden")]
    prior_hidden: Option<usize>,
    #[arg(long = "max-len")]
    max_len: Option<usize>,
    #[arg(long = "pretrain-steps")]
    pretrain_steps: Option<usize>,
    #[arg(long = "infer-steps")]
    infer_steps: Option<usize>,
    #[arg(long = "max-attempts-factor")]
    max_attempts_factor: Option<usize>,
}

impl ConfigFlags {
    fn build(&self, base: ExperimentConfig) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_json_file(path)?,
            None => base,
        };
        if let Some(m) = &self.method {
            cfg.method = Method::from_str(m)?;
        }
        if let Some(o) = &self.order {
            cfg.task_order = o.clone();
        }
        macro_rules! take {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field.clone() { cfg.$field = v; })*
            };
        }
        take!(
            gamma, lambda_p, k, p_len, latent_dim, k0, k1, s0, s1, eta0, eta1, ebm_batch,
            ebm_iters, epochs, patience, lm_lr, lm_batch, seed, n_train, n_test, embed_dim,
            hidden_dim, prior_hidden, max_len, pretrain_steps, infer_steps, max_attempts_factor,
            out_dir
        );
        if let Some(ds) = self.data_seed {
            cfg.data_seed = Some(ds);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment configuration.
    Train(ConfigFlags),
    /// Run methods over all six task orders and aggregate a table.
    Battery {
        #[command(flatten)]
        flags: ConfigFlags,
        /// Comma-separated method list.
        #[arg(long, value_delimiter = ',', default_value = "ppsebm,finetune")]
        methods: Vec<String>,
    },
    /// The four ablation rows (neither, only_pps, only_ebm, ppsebm) on the
    /// given order.
    Ablate(ConfigFlags),
    /// Sweep gamma or lambda_p over a value grid.
    Sweep {
        #[command(flatten)]
        flags: ConfigFlags,
        /// gamma | lambda_p
        #[arg(long)]
        param: String,
        /// Comma-separated values; defaults to the reported grid.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
        /// Run all six orders per grid point (slow); default is the given
        /// order only.
        #[arg(long, default_value_t = false)]
        all_orders: bool,
    },
    /// Evaluate a saved checkpoint on its tasks.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn print_report(report: &MetricsReport) {
    println!("tasks: {}", report.task_names.join(", "));
    for (i, task) in report.task_names.iter().enumerate() {
        let cells: Vec<String> = report.scores[i].iter().map(|v| format!("{v:6.2}")).collect();
        println!("  {task:>8}: {}", cells.join(" "));
    }
    println!("final average: {:.2}", report.final_average);
}

fn print_table(outcome: &BatteryOutcome) {
    println!("orders: {}", outcome.order_labels.join(" | "));
    for row in &outcome.rows {
        let cells: Vec<String> = row.per_order.iter().map(|v| format!("{v:6.2}")).collect();
        println!(
            "  {:<24} {}  avg {:6.2}  std {:5.2}",
            row.label,
            cells.join(" "),
            row.average,
            row.std
        );
    }
}

fn main_inner() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Train(flags) => {
            let cfg = flags.build(ExperimentConfig::default())?;
            let report = run(&cfg)?;
            print_report(&report);
            println!("outputs in {}", cfg.out_dir.display());
        }
        Command::Battery { flags, methods } => {
            let cfg = flags.build(ExperimentConfig::toy_battery())?;
            let specs: Vec<MethodSpec> = methods
                .iter()
                .map(|m| Ok(MethodSpec::new(Method::from_str(m)?, cfg.gamma, cfg.lambda_p)))
                .collect::<Result<_>>()?;
            let outcome = run_battery(&cfg, &specs, true)?;
            print_table(&outcome);
            println!("table written to {}", cfg.out_dir.join("table.csv").display());
        }
        Command::Ablate(flags) => {
            let cfg = flags.build(ExperimentConfig::toy_battery())?;
            let outcome = run_ablation(&cfg)?;
            print_table(&outcome);
        }
        Command::Sweep {
            flags,
            param,
            values,
            all_orders,
        } => {
            let cfg = flags.build(ExperimentConfig::toy_battery())?;
            let param = SweepParam::from_str(&param)?;
            let values = values.unwrap_or_else(|| SWEEP_GRID.to_vec());
            let outcome = run_sweep(&cfg, param, &values, all_orders)?;
            print_table(&outcome);
        }
        Command::Eval { checkpoint } => {
            let (cfg, stage, lm, bank) = load_checkpoint(&checkpoint)?;
            let vocab = Vocab::default_desk();
            let tasks = build_tasks(&cfg)?;
            println!("checkpoint after stage {stage} ({})", cfg.method.label());
            let mut total = 0.0;
            for task in &tasks {
                let score = evaluate(&lm, &bank, task, &vocab, cfg.max_len)?;
                println!("  {:>8}: {score:6.2}", task.name);
                total += score;
            }
            println!("average: {:.2}", total / tasks.len() as f64);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match main_inner() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
