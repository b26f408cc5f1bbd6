use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::MetricsReport;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    Csv,
    Json,
}

impl ExportFormat {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            _ => Err(Error::Config(format!("unknown export format {s:?}"))),
        }
    }
}

pub const CSV_HEADER: &str = "variant,run,seed,order,task,metric,value";

fn order_key(order: &[usize]) -> String {
    order.iter().map(usize::to_string).collect::<Vec<_>>().join("-")
}

pub(crate) fn to_csv(report: &MetricsReport) -> String {
    let v = report.variant.name();
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for (i, run) in report.runs.iter().enumerate() {
        let key = order_key(&run.order);
        for (t, f1) in run.f1.iter().enumerate() {
            let _ = writeln!(out, "{v},{i},{},{key},{t},f1,{f1}", run.seed);
            if let Some(log) = run.tasks.get(t) {
                let last = log.epochs.last();
                let rows: [(&str, f64); 8] = [
                    ("best_dev_f1", log.best_dev_f1),
                    ("epochs", log.epochs.len() as f64),
                    ("loss_classification", last.map_or(0.0, |e| e.classification)),
                    ("loss_replay", last.map_or(0.0, |e| e.replay)),
                    ("loss_distill", last.map_or(0.0, |e| e.distill)),
                    ("loss_ot", last.map_or(0.0, |e| e.ot)),
                    ("loss_embed_reg", last.map_or(0.0, |e| e.embed_reg)),
                    ("nonconverged", log.epochs.iter().map(|e| e.nonconverged).sum::<usize>() as f64),
                ];
                for (name, value) in rows {
                    let _ = writeln!(out, "{v},{i},{},{key},{t},{name},{value}", run.seed);
                }
            }
        }
    }
    if !report.runs.is_empty() {
        for (t, (m, s)) in report.mean_f1.iter().zip(&report.std_f1).enumerate() {
            let _ = writeln!(out, "{v},mean,,,{t},f1,{m}");
            let _ = writeln!(out, "{v},std,,,{t},f1,{s}");
        }
    }
    out
}

/// Writes the report as CSV (one row per run, task and metric, then the
/// per-position mean and standard deviation) or as the full nested JSON.
pub fn export_metrics(report: &MetricsReport, format: ExportFormat, path: &Path) -> Result<()> {
    let text = match format {
        ExportFormat::Csv => to_csv(report),
        ExportFormat::Json => serde_json::to_string_pretty(report)? + "\n",
    };
    fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{StreamReport, Variant};

    fn report(perms: usize, tasks: usize) -> MetricsReport {
        let runs = (0..perms)
            .map(|p| StreamReport {
                order: (0..tasks).collect(),
                seed: p as u64,
                f1: (0..tasks).map(|t| 0.1 * t as f64 + 0.01 * p as f64 + 1.0 / 3.0).collect(),
                tasks: vec![],
                nonconverged: 0,
            })
            .collect();
        MetricsReport::from_runs(Variant::Ledot, runs).unwrap()
    }

    #[test]
    fn csv_counts_and_round_trip() {
        let r = report(5, 5);
        let csv = to_csv(&r);
        let f1_rows: Vec<&str> = csv.lines().filter(|l| l.contains(",f1,") && !l.contains(",mean,") && !l.contains(",std,")).collect();
        assert_eq!(f1_rows.len(), 25);
        assert_eq!(csv.lines().filter(|l| l.contains(",mean,")).count(), 5);
        for (line, expected) in f1_rows.iter().zip(r.runs.iter().flat_map(|run| &run.f1)) {
            let v: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
            assert_eq!(v, *expected);
        }
    }

    #[test]
    fn empty_report_is_header_only() {
        let r = MetricsReport::from_runs(Variant::Ledot, vec![]).unwrap();
        assert_eq!(to_csv(&r), format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn json_round_trip() {
        let r = report(2, 3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        export_metrics(&r, ExportFormat::Json, &path).unwrap();
        let back: MetricsReport = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(back, r);
    }
}
