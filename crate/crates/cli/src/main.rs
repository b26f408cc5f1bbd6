use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;

use ledot_core::dataset::{make_synthetic_stream, read_feature_file, write_feature_file, SyntheticConfig};
use ledot_core::harness::{
    ablate, export_metrics, run_permutations, threads_from_env, train_stream, with_threads, AblationSpec,
    ExportFormat, MetricsReport, RunConfig, Variant,
};
use ledot_core::numerics::SeededRng;
use ledot_core::replay::save_checkpoint;

/// Continual event detection over frozen-encoder span features.
///
/// Worker threads are capped by LEDOT_THREADS (0 or unset = one per core).
#[derive(Parser)]
#[command(name = "ledot", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset (manifest + tensor blob).
    GenSynthetic {
        /// Synthetic profile as JSON; defaults apply to missing keys.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train one stream in the dataset's task order.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "ledot")]
        variant: String,
        /// Run configuration as JSON; only `training` is used here.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train every (seed, task order) pair and average by stream position.
    Permute {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Number of task orders; overrides the config.
        #[arg(long)]
        perms: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// One-factor sweeps over tau, r, alpha and class-embedding init.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        /// `{"base": <run config>, "grid": {...}}`; both parts are optional.
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert a JSON metrics report to CSV or JSON.
    Export {
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value = "csv")]
        format: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read_json<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

fn write_report(report: &MetricsReport, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    export_metrics(report, ExportFormat::Json, &out.join("report.json"))?;
    export_metrics(report, ExportFormat::Csv, &out.join("metrics.csv"))?;
    Ok(())
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::GenSynthetic { config, out, seed } => {
            let cfg: SyntheticConfig = read_json(config.as_deref())?;
            let ds = make_synthetic_stream(&cfg, &mut SeededRng::new(seed))?;
            let manifest = write_feature_file(&ds, &out)?;
            println!("{}", manifest.display());
        }
        Cmd::Train {
            data,
            variant,
            config,
            seed,
            out,
        } => {
            let cfg: RunConfig = read_json(config.as_deref())?;
            let variant = Variant::parse(&variant)?;
            let ds = read_feature_file(&data)?;
            let order: Vec<usize> = (0..ds.layout.task_labels.len()).collect();
            let (run, state) = train_stream(&ds, variant, &cfg.training, &order, seed)?;
            let report = MetricsReport::from_runs(variant, vec![run])?;
            write_report(&report, &out)?;
            save_checkpoint(&state.replay, &out.join("replay.bin"))?;
            fs::write(out.join("model.json"), serde_json::to_string(&(&state.params, &state.tables, &state.seen))?)?;
            println!("terminal F1 {:.4}", report.terminal_f1());
        }
        Cmd::Permute {
            data,
            config,
            perms,
            out,
        } => {
            let mut cfg: RunConfig = read_json(config.as_deref())?;
            if let Some(k) = perms {
                cfg.permutations = k;
                cfg.orders.clear();
            }
            let ds = read_feature_file(&data)?;
            let report = run_permutations(&ds, &cfg)?;
            write_report(&report, &out)?;
            println!("terminal F1 {:.4} over {} runs", report.terminal_f1(), report.runs.len());
        }
        Cmd::Ablate { data, grid, out } => {
            let spec: AblationSpec = read_json(grid.as_deref())?;
            let ds = read_feature_file(&data)?;
            let report = ablate(&ds, &spec.base, &spec.grid)?;
            fs::create_dir_all(&out)?;
            fs::write(out.join("ablation.csv"), report.to_csv())?;
            fs::write(out.join("ablation.json"), serde_json::to_string_pretty(&report)? + "\n")?;
            print!("{}", report.to_csv());
        }
        Cmd::Export { report, format, out } => {
            let text = fs::read_to_string(&report).with_context(|| format!("reading {}", report.display()))?;
            let parsed: MetricsReport = serde_json::from_str(&text)?;
            export_metrics(&parsed, ExportFormat::parse(&format)?, &out)?;
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let threads = threads_from_env()?;
    let start = Instant::now();
    with_threads(threads, || run(cli.cmd))??;
    // timing goes to stderr so the written outputs stay reproducible
    eprintln!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
