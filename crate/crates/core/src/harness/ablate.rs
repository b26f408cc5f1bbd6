use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{run_permutations, RunConfig};
use crate::classifier::InitMode;
use crate::dataset::Dataset;
use crate::error::Result;

/// One-factor-at-a-time sweep values. Every other setting stays at the base
/// configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationGrid {
    pub tau: Vec<f64>,
    pub ratio: Vec<usize>,
    /// Swept with old class embeddings left trainable, so the proximity
    /// term is active.
    pub alpha: Vec<f64>,
    pub init_mode: Vec<InitMode>,
}

impl Default for AblationGrid {
    fn default() -> Self {
        Self {
            tau: vec![0.01, 0.1, 1.0, 2.0, 3.0, 4.0, 5.0],
            ratio: vec![0, 1, 5, 10, 20],
            alpha: vec![0.1, 0.2, 0.5, 1.0],
            init_mode: vec![InitMode::Random, InitMode::Mapping],
        }
    }
}

/// A base run configuration together with the sweep applied to it.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSpec {
    pub base: RunConfig,
    pub grid: AblationGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub axis: String,
    pub value: String,
    pub runs: usize,
    pub terminal_mean: f64,
    pub terminal_std: f64,
    pub mean_f1: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, axis: &str, value: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.axis == axis && r.value == value)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("axis,value,runs,terminal_mean,terminal_std\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{},{}", r.axis, r.value, r.runs, r.terminal_mean, r.terminal_std);
        }
        out
    }
}

fn init_name(m: InitMode) -> &'static str {
    match m {
        InitMode::Random => "random",
        InitMode::Mapping => "mapping",
    }
}

pub fn ablate(ds: &Dataset, base: &RunConfig, grid: &AblationGrid) -> Result<AblationReport> {
    let mut jobs: Vec<(&str, String, RunConfig)> = Vec::new();
    for &t in &grid.tau {
        let mut c = base.clone();
        c.training.ot.tau = t;
        jobs.push(("tau", t.to_string(), c));
    }
    for &r in &grid.ratio {
        let mut c = base.clone();
        c.training.replay.ratio = r;
        jobs.push(("ratio", r.to_string(), c));
    }
    for &a in &grid.alpha {
        let mut c = base.clone();
        c.training.alpha = a;
        c.training.soft_freeze = true;
        jobs.push(("alpha", a.to_string(), c));
    }
    for &m in &grid.init_mode {
        let mut c = base.clone();
        c.training.init_mode = m;
        jobs.push(("init_mode", init_name(m).into(), c));
    }
    let mut rows = Vec::with_capacity(jobs.len());
    for (axis, value, cfg) in jobs {
        let rep = run_permutations(ds, &cfg)?;
        let terminal: Vec<f64> = rep.runs.iter().filter_map(|r| r.f1.last().copied()).collect();
        let n = terminal.len() as f64;
        let mean = terminal.iter().sum::<f64>() / n;
        let std = (terminal.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        rows.push(AblationRow {
            axis: axis.into(),
            value,
            runs: rep.runs.len(),
            terminal_mean: mean,
            terminal_std: std,
            mean_f1: rep.mean_f1,
        });
    }
    Ok(AblationReport { rows })
}
