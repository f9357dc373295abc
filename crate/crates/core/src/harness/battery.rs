//! Order batteries, the ablation preset, and parameter sweeps.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::harness::config::{ExperimentConfig, Method};
use crate::harness::eval::MetricsReport;
use crate::harness::run::run;
use crate::textdata::task_orders;

/// The sweep grid reported in the parameter analysis.
pub const SWEEP_GRID: [f64; 8] = [0.0, 0.01, 0.03, 0.05, 0.07, 0.1, 0.15, 0.2];

/// One battery row request: a method with pinned gamma / lambda_p.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodSpec {
    pub label: String,
    pub method: Method,
    pub gamma: f64,
    pub lambda_p: f64,
}

impl MethodSpec {
    pub fn new(method: Method, gamma: f64, lambda_p: f64) -> MethodSpec {
        let (ge, le) = method.effective(gamma, lambda_p);
        MethodSpec {
            label: match method {
                Method::Ppsebm => format!("ppsebm(g={ge},lp={le})"),
                _ => method.label().to_string(),
            },
            method,
            gamma,
            lambda_p,
        }
    }
}

/// One aggregated battery row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatteryRow {
    pub label: String,
    pub per_order: Vec<f64>,
    pub average: f64,
    /// Population standard deviation of the per-order averages.
    pub std: f64,
}

/// One completed run inside a battery.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub label: String,
    pub order_index: usize,
    pub order: Vec<String>,
    pub report: MetricsReport,
    pub run_dir: PathBuf,
}

#[derive(Debug, Clone)]
pub struct BatteryOutcome {
    pub order_labels: Vec<String>,
    pub rows: Vec<BatteryRow>,
    pub runs: Vec<RunSummary>,
}

fn population_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

fn sanitize(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Run every (method × order) cell. With `all_orders`, the three base
/// tasks expand to all six permutations; otherwise only the given order
/// runs. Cells are independent: each owns its RNG, store, and output
/// directory, and they run in parallel. Datasets are pinned by the base
/// seed, so every cell sees identical tasks.
pub fn run_battery(
    base: &ExperimentConfig,
    methods: &[MethodSpec],
    all_orders: bool,
) -> Result<BatteryOutcome> {
    base.validate()?;
    if methods.is_empty() {
        return Err(CoreError::Config("battery needs at least one method".into()));
    }
    let orders: Vec<Vec<String>> = if all_orders {
        task_orders(&base.task_order)?
    } else {
        vec![base.task_order.clone()]
    };
    let order_labels: Vec<String> = orders.iter().map(|o| o.join(" ")).collect();

    let mut jobs: Vec<(usize, MethodSpec, usize, Vec<String>)> = Vec::new();
    for (mi, spec) in methods.iter().enumerate() {
        for (oi, order) in orders.iter().enumerate() {
            jobs.push((mi, spec.clone(), oi, order.clone()));
        }
    }

    let summaries: Vec<RunSummary> = jobs
        .into_par_iter()
        .map(|(_, spec, oi, order)| -> Result<RunSummary> {
            let run_dir = base
                .out_dir
                .join(sanitize(&spec.label))
                .join(format!("order_{oi}"));
            let cfg = ExperimentConfig {
                method: spec.method,
                gamma: spec.gamma,
                lambda_p: spec.lambda_p,
                task_order: order.clone(),
                out_dir: run_dir.clone(),
                data_seed: Some(base.data_seed()),
                ..base.clone()
            };
            let report = run(&cfg)?;
            Ok(RunSummary {
                label: spec.label.clone(),
                order_index: oi,
                order,
                report,
                run_dir,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::with_capacity(methods.len());
    for spec in methods {
        let mut per_order = vec![0.0; orders.len()];
        for s in summaries.iter().filter(|s| s.label == spec.label) {
            per_order[s.order_index] = s.report.final_average;
        }
        let average = per_order.iter().sum::<f64>() / per_order.len() as f64;
        rows.push(BatteryRow {
            label: spec.label.clone(),
            std: population_std(&per_order),
            per_order,
            average,
        });
    }

    let outcome = BatteryOutcome {
        order_labels,
        rows,
        runs: summaries,
    };
    write_table_csv(&base.out_dir, &outcome)?;
    Ok(outcome)
}

fn write_table_csv(dir: &std::path::Path, outcome: &BatteryOutcome) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut file = BufWriter::new(File::create(dir.join("table.csv"))?);
    writeln!(
        file,
        "method,{},average,std",
        outcome.order_labels.join(",")
    )?;
    for row in &outcome.rows {
        let cells: Vec<String> = row.per_order.iter().map(|v| format!("{v:.2}")).collect();
        writeln!(
            file,
            "{},{},{:.2},{:.2}",
            row.label,
            cells.join(","),
            row.average,
            row.std
        )?;
    }
    Ok(())
}

/// The four ablation rows on the given order: neither, only_pps,
/// only_ebm, ppsebm.
pub fn run_ablation(base: &ExperimentConfig) -> Result<BatteryOutcome> {
    let methods = [
        Method::Neither,
        Method::OnlyPps,
        Method::OnlyEbm,
        Method::Ppsebm,
    ]
    .map(|m| MethodSpec::new(m, base.gamma, base.lambda_p));
    run_battery(base, &methods, false)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Gamma,
    LambdaP,
}

impl std::str::FromStr for SweepParam {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<SweepParam> {
        match s {
            "gamma" => Ok(SweepParam::Gamma),
            "lambda_p" | "lambda-p" => Ok(SweepParam::LambdaP),
            other => Err(CoreError::Config(format!(
                "unknown sweep parameter `{other}` (expected gamma or lambda_p)"
            ))),
        }
    }
}

/// Sweep one parameter over a value grid, all orders per point.
pub fn run_sweep(
    base: &ExperimentConfig,
    param: SweepParam,
    values: &[f64],
    all_orders: bool,
) -> Result<BatteryOutcome> {
    if values.is_empty() {
        return Err(CoreError::Config("sweep needs at least one value".into()));
    }
    let methods: Vec<MethodSpec> = values
        .iter()
        .map(|&v| {
            let (gamma, lambda_p, tag) = match param {
                SweepParam::Gamma => (v, base.lambda_p, format!("gamma={v}")),
                SweepParam::LambdaP => (base.gamma, v, format!("lambda_p={v}")),
            };
            MethodSpec {
                label: format!("ppsebm({tag})"),
                method: Method::Ppsebm,
                gamma,
                lambda_p,
            }
        })
        .collect();
    run_battery(base, &methods, all_orders)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn std_is_population_std() {
        let v = [2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0];
        assert!((population_std(&v) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn sweep_grid_matches_reported_values() {
        assert_eq!(
            SWEEP_GRID,
            [0.0, 0.01, 0.03, 0.05, 0.07, 0.1, 0.15, 0.2]
        );
    }
}
