//! On-disk experiment output.
//!
//! `emit_report` writes into one directory:
//!
//! * `matrix_seed<S>.csv` per seed: the result matrix, `T` rows of `T` cells
//! * `summary.json`: one [`SummaryRecord`]
//! * `curve.csv`: header plus one row per task with the first-task accuracy
//!   and the running average accuracy, mean and standard deviation over seeds
//!
//! Files are written to a temporary name and renamed into place.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MeanStd, RunReport};
use crate::error::{Error, Result};
use crate::optim::Method;
use crate::scenarios::Scenario;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub method: Method,
    pub scenario: Scenario,
    pub buffer_size: usize,
    pub n_tasks: usize,
    pub seeds: Vec<u64>,
    pub acc_mean: f64,
    pub acc_std: f64,
    pub forget_mean: Option<f64>,
    pub forget_std: Option<f64>,
    pub forget_abs_mean: Option<f64>,
    pub forget_abs_std: Option<f64>,
    pub per_seed_acc: Vec<f64>,
    pub per_seed_forget: Vec<Option<f64>>,
    pub steps: u64,
    pub backward_passes: u64,
    pub backward_passes_per_step: f64,
}

pub fn summary_record(report: &RunReport) -> SummaryRecord {
    let cfg = &report.config;
    SummaryRecord {
        method: cfg.method,
        scenario: cfg.scenario,
        buffer_size: cfg.buffer_size,
        n_tasks: cfg.n_tasks,
        seeds: cfg.seeds.clone(),
        acc_mean: report.acc.mean,
        acc_std: report.acc.std,
        forget_mean: report.forget.map(|f| f.mean),
        forget_std: report.forget.map(|f| f.std),
        forget_abs_mean: report.forget_abs.map(|f| f.mean),
        forget_abs_std: report.forget_abs.map(|f| f.std),
        per_seed_acc: report.runs.iter().map(|r| r.summary.acc).collect(),
        per_seed_forget: report.runs.iter().map(|r| r.summary.forget).collect(),
        steps: report.steps,
        backward_passes: report.backward_passes,
        backward_passes_per_step: if report.steps == 0 {
            0.0
        } else {
            report.backward_passes as f64 / report.steps as f64
        },
    }
}

fn write_atomic(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let tmp = dir.join(format!(".{name}.tmp"));
    let dest = dir.join(name);
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, &dest).map_err(|e| Error::io(&dest, e))
}

fn cell(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.6}")).unwrap_or_default()
}

fn curve_stats(values: Vec<Option<f64>>) -> (Option<f64>, Option<f64>) {
    let vals: Option<Vec<f64>> = values.into_iter().collect();
    match vals {
        Some(v) if !v.is_empty() => {
            let s = MeanStd::of(&v);
            (Some(s.mean), Some(s.std))
        }
        _ => (None, None),
    }
}

fn curve_csv(report: &RunReport) -> String {
    let tasks = report.runs.first().map_or(0, |r| r.matrix.tasks());
    let mut out =
        String::from("task,first_task_acc_mean,first_task_acc_std,avg_acc_mean,avg_acc_std\n");
    for i in 0..tasks {
        let (fm, fs) = curve_stats(report.runs.iter().map(|r| r.matrix.get(i, 0)).collect());
        let (am, as_) = curve_stats(
            report
                .runs
                .iter()
                .map(|r| r.summary.per_task_curve[i])
                .collect(),
        );
        writeln!(
            out,
            "{i},{},{},{},{}",
            cell(fm),
            cell(fs),
            cell(am),
            cell(as_)
        )
        .expect("writing to a String");
    }
    out
}

pub fn emit_report(report: &RunReport, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    for run in &report.runs {
        write_atomic(
            out_dir,
            &format!("matrix_seed{}.csv", run.seed),
            &run.matrix.to_csv(),
        )?;
    }
    let mut summary = serde_json::to_string_pretty(&summary_record(report))
        .map_err(|e| Error::Usage(format!("summary serialization failed: {e}")))?;
    summary.push('\n');
    write_atomic(out_dir, "summary.json", &summary)?;
    write_atomic(out_dir, "curve.csv", &curve_csv(report))
}
