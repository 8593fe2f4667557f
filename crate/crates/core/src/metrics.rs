//! Result matrix and the ACC / Forget summaries derived from it.
//!
//! `R[i][j]` is the test accuracy on task `j` measured right after training
//! task `i`. With `T` tasks:
//!
//! * `ACC = (1/T) Σ_j R[T-1][j]`
//! * `Forget = (1/(T-1)) Σ_{j<T-1} (R[T-1][j] - F_j)`, where `F_j` is the best
//!   accuracy task `j` ever reached (max over rows `r >= j`).
//!
//! Forget is therefore `<= 0`; [`MetricSummary::forget_abs`] carries the
//! magnitude for "lower is better" reporting.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultMatrix {
    tasks: usize,
    cells: Vec<Option<f64>>,
}

impl ResultMatrix {
    pub fn new(tasks: usize) -> Result<Self> {
        if tasks == 0 {
            return Err(Error::Config(
                "result matrix needs at least one task".into(),
            ));
        }
        Ok(Self {
            tasks,
            cells: vec![None; tasks * tasks],
        })
    }

    pub fn tasks(&self) -> usize {
        self.tasks
    }

    pub fn record(&mut self, after_task: usize, on_task: usize, accuracy: f64) -> Result<()> {
        if after_task >= self.tasks || on_task >= self.tasks {
            return Err(Error::Usage(format!(
                "cell ({after_task}, {on_task}) outside a {0}x{0} matrix",
                self.tasks
            )));
        }
        if !(0.0..=1.0).contains(&accuracy) {
            return Err(Error::Usage(format!("accuracy {accuracy} outside [0, 1]")));
        }
        let cell = &mut self.cells[after_task * self.tasks + on_task];
        if cell.is_some() {
            return Err(Error::Usage(format!(
                "cell ({after_task}, {on_task}) already recorded"
            )));
        }
        *cell = Some(accuracy);
        Ok(())
    }

    pub fn get(&self, after_task: usize, on_task: usize) -> Option<f64> {
        if after_task >= self.tasks || on_task >= self.tasks {
            return None;
        }
        self.cells[after_task * self.tasks + on_task]
    }

    fn final_row(&self) -> Result<Vec<f64>> {
        let last = self.tasks - 1;
        (0..self.tasks)
            .map(|j| {
                self.get(last, j).ok_or_else(|| {
                    Error::Usage(format!("final-row cell ({last}, {j}) not recorded"))
                })
            })
            .collect()
    }

    /// Mean of the final row.
    pub fn acc_final(&self) -> Result<f64> {
        let row = self.final_row()?;
        Ok(row.iter().sum::<f64>() / self.tasks as f64)
    }

    /// Signed forgetting; `None` for a single task. Unrecorded cells above
    /// the final row are skipped when taking the per-task best.
    pub fn forgetting(&self) -> Result<Option<f64>> {
        if self.tasks < 2 {
            return Ok(None);
        }
        let row = self.final_row()?;
        let last = self.tasks - 1;
        let mut sum = 0.0;
        for (j, &fin) in row.iter().enumerate().take(last) {
            let best = (j..self.tasks)
                .filter_map(|r| self.get(r, j))
                .fold(f64::NEG_INFINITY, f64::max);
            sum += fin - best;
        }
        Ok(Some(sum / last as f64))
    }

    /// Average accuracy over tasks seen so far, after each task. `None` where
    /// a row is incomplete.
    pub fn average_curve(&self) -> Vec<Option<f64>> {
        (0..self.tasks)
            .map(|i| {
                let vals: Option<Vec<f64>> = (0..=i).map(|j| self.get(i, j)).collect();
                vals.map(|v| v.iter().sum::<f64>() / v.len() as f64)
            })
            .collect()
    }

    /// Accuracy of task 0 after each task.
    pub fn first_task_curve(&self) -> Vec<Option<f64>> {
        (0..self.tasks).map(|i| self.get(i, 0)).collect()
    }

    pub fn summary(&self) -> Result<MetricSummary> {
        let forget = self.forgetting()?;
        Ok(MetricSummary {
            acc: self.acc_final()?,
            forget,
            forget_abs: forget.map(f64::abs),
            per_task_curve: self.average_curve(),
        })
    }

    /// `T` lines of `T` comma-separated values with 6 decimals; unrecorded
    /// cells are left empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.tasks {
            for j in 0..self.tasks {
                if j > 0 {
                    out.push(',');
                }
                if let Some(v) = self.get(i, j) {
                    write!(out, "{v:.6}").expect("writing to a String");
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().collect();
        let mut m = Self::new(lines.len())?;
        for (i, line) in lines.iter().enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != m.tasks {
                return Err(Error::format(
                    format!("row {i}"),
                    format!("expected {} fields, found {}", m.tasks, fields.len()),
                ));
            }
            for (j, f) in fields.iter().enumerate() {
                if f.is_empty() {
                    continue;
                }
                let v: f64 = f
                    .parse()
                    .map_err(|e| Error::format(format!("cell ({i}, {j})"), format!("{e}")))?;
                m.record(i, j, v)?;
            }
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub acc: f64,
    /// Signed, `<= 0` when tasks were forgotten. `None` for single-task runs.
    pub forget: Option<f64>,
    pub forget_abs: Option<f64>,
    pub per_task_curve: Vec<Option<f64>>,
}
