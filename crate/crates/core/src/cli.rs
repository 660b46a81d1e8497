//! Command implementations behind the `gsnop` binary.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Checkpoint, CheckpointMeta};
use crate::config::RunConfig;
use crate::ctdg::{generate_synthetic, CtdgStore};
use crate::error::{Error, Result};
use crate::eval::{write_results_csv, MetricReport, ResultRow};
use crate::latent::AggregatorKind;
use crate::model::Model;
use crate::train::{evaluate_test, train, Experiment, StepLog, TrainSummary};

pub const RESOLVED_CONFIG: &str = "config.resolved";
pub const LOSS_LOG: &str = "loss.csv";
pub const CHECKPOINT: &str = "checkpoint";
pub const METRICS: &str = "metrics.json";
pub const RESULTS: &str = "results.csv";
pub const TRAIN_SUMMARY: &str = "train_summary.json";
pub const BENCH_CSV: &str = "bench.csv";

#[derive(Debug, Parser)]
#[command(name = "gsnop", version, about = "Neural-process link prediction on continuous-time dynamic graphs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct CommonArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `seed` (and `seeds` for multi-run commands).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `out_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model and write its checkpoint and loss log.
    Train(CommonArgs),
    /// Score the test split with a trained checkpoint.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        /// Defaults to `<out>/checkpoint`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train and evaluate every listed variant for every seed.
    Ablate(CommonArgs),
    /// Train and evaluate across training-set sample ratios.
    Sparsity(CommonArgs),
    /// Time forward passes over growing synthetic graphs.
    Bench(CommonArgs),
}

/// Loads a config and applies command-line overrides. Relative CSV paths are
/// made absolute so the resolved config works from any directory.
pub fn resolve(args: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
        cfg.seeds = vec![seed];
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    if let Some(p) = &cfg.csv_path {
        cfg.csv_path = Some(std::path::absolute(p).map_err(|e| Error::io(p, e))?);
    }
    Ok(cfg)
}

fn prepare_out(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.out_dir.clone();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let path = dir.join(RESOLVED_CONFIG);
    std::fs::write(&path, cfg.to_toml()?).map_err(|e| Error::io(&path, e))?;
    Ok(dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Serde(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_loss_log(path: &Path, log: &[StepLog]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))?;
    for row in log {
        w.serialize(row).map_err(|e| Error::Serde(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_loss_log(path: &Path) -> Result<Vec<StepLog>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .collect::<std::result::Result<Vec<StepLog>, _>>()
        .map_err(|e| Error::Serde(e.to_string()))
}

fn meta_for(data: &CtdgStore) -> CheckpointMeta {
    CheckpointMeta {
        time_scale: if data.max_t() > 0.0 { data.max_t() } else { 1.0 },
        num_nodes: data.node_count(),
        edge_dim: data.edge_dim(),
    }
}

pub struct TrainArtifacts {
    pub model: Model,
    pub experiment: Experiment,
    pub log: Vec<StepLog>,
    pub summary: TrainSummary,
}

/// Builds the data split and trains one model. A diverged run returns the
/// error after handing back the last good parameters through `on_abort`.
fn train_run(
    cfg: &RunConfig,
    variant: AggregatorKind,
    seed: u64,
    sample_ratio: f64,
    on_abort: impl FnOnce(&TrainArtifacts) -> Result<()>,
) -> Result<TrainArtifacts> {
    let data = cfg.load_data()?;
    let meta = meta_for(&data);
    let mut split = cfg.split_spec();
    split.sample_ratio = sample_ratio;
    let experiment = Experiment::new(data, &split, seed)?;
    let mut model = Model::new(cfg.model_config(variant), meta, seed)?;
    let outcome = train(&mut model, &experiment, &cfg.train_config(), seed)?;
    let artifacts = TrainArtifacts {
        model,
        experiment,
        log: outcome.log,
        summary: outcome.summary,
    };
    if let Some(e) = outcome.aborted {
        on_abort(&artifacts)?;
        return Err(e);
    }
    Ok(artifacts)
}

pub fn cmd_train(cfg: &RunConfig) -> Result<TrainArtifacts> {
    let dir = prepare_out(cfg)?;
    let persist = |a: &TrainArtifacts| -> Result<()> {
        a.model.checkpoint().save(&dir.join(CHECKPOINT))?;
        write_loss_log(&dir.join(LOSS_LOG), &a.log)?;
        write_json(&dir.join(TRAIN_SUMMARY), &a.summary)
    };
    let artifacts = train_run(cfg, cfg.variant, cfg.seed, cfg.sample_ratio, persist)?;
    persist(&artifacts)?;
    Ok(artifacts)
}

fn result_row(variant: AggregatorKind, seed: u64, ratio: f64, exp: &Experiment, r: &MetricReport) -> ResultRow {
    ResultRow {
        variant: variant.to_string(),
        seed,
        split: "test".into(),
        sample_ratio: ratio,
        train_events: exp.split.train.len(),
        data_hash: exp.data_hash.clone(),
        ap: r.ap,
        mrr: r.mrr,
    }
}

pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path) -> Result<MetricReport> {
    let dir = prepare_out(cfg)?;
    let ckpt = Checkpoint::load(checkpoint)?;
    let data = cfg.load_data()?;
    let expected = meta_for(&data);
    if ckpt.meta != expected {
        return Err(Error::Config(format!(
            "checkpoint was trained on {:?}, config data gives {:?}",
            ckpt.meta, expected
        )));
    }
    let experiment = Experiment::new(data, &cfg.split_spec(), cfg.seed)?;
    let model = Model::from_checkpoint(cfg.model_config(cfg.variant), &ckpt)?;
    let report = evaluate_test(&model, &experiment, &cfg.train_config(), cfg.test_queries, cfg.seed)?;
    write_json(&dir.join(METRICS), &report)?;
    let row = result_row(cfg.variant, cfg.seed, cfg.sample_ratio, &experiment, &report);
    write_results_csv(&dir.join(RESULTS), &[row])?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub row: ResultRow,
    pub report: MetricReport,
    pub best_step: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupMean {
    pub variant: String,
    pub sample_ratio: f64,
    pub runs: usize,
    pub mean_ap: f64,
    pub mean_mrr: f64,
    /// Mean loss of the last time bucket over runs where it was populated.
    pub mean_last_group_loss: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub runs: Vec<RunRecord>,
    pub means: Vec<GroupMean>,
}

fn group_means(runs: &[RunRecord]) -> Vec<GroupMean> {
    let mut keys: Vec<(String, f64)> = Vec::new();
    for r in runs {
        let key = (r.row.variant.clone(), r.row.sample_ratio);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(variant, ratio)| {
            let sel: Vec<&RunRecord> = runs
                .iter()
                .filter(|r| r.row.variant == variant && r.row.sample_ratio == ratio)
                .collect();
            let n = sel.len() as f64;
            let last: Vec<f64> = sel
                .iter()
                .filter_map(|r| r.report.time_group_loss.last().copied().flatten())
                .collect();
            GroupMean {
                variant,
                sample_ratio: ratio,
                runs: sel.len(),
                mean_ap: sel.iter().map(|r| r.report.ap).sum::<f64>() / n,
                mean_mrr: sel.iter().map(|r| r.report.mrr).sum::<f64>() / n,
                mean_last_group_loss: (!last.is_empty()).then(|| last.iter().sum::<f64>() / last.len() as f64),
            }
        })
        .collect()
}

fn run_grid(cfg: &RunConfig, jobs: &[(AggregatorKind, u64, f64)]) -> Result<SweepReport> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let runs = pool.install(|| {
        jobs.par_iter()
            .map(|&(variant, seed, ratio)| {
                let a = train_run(cfg, variant, seed, ratio, |_| Ok(()))?;
                let report = evaluate_test(&a.model, &a.experiment, &cfg.train_config(), cfg.test_queries, seed)?;
                Ok(RunRecord {
                    row: result_row(variant, seed, ratio, &a.experiment, &report),
                    report,
                    best_step: a.summary.best_step,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(SweepReport {
        means: group_means(&runs),
        runs,
    })
}

fn write_sweep(dir: &Path, report: &SweepReport) -> Result<()> {
    let rows: Vec<ResultRow> = report.runs.iter().map(|r| r.row.clone()).collect();
    write_results_csv(&dir.join(RESULTS), &rows)?;
    write_json(&dir.join(METRICS), report)
}

fn seeds(cfg: &RunConfig) -> Vec<u64> {
    if cfg.seeds.is_empty() {
        vec![cfg.seed]
    } else {
        cfg.seeds.clone()
    }
}

/// One row per (variant, seed), all variants sharing data and seeds.
pub fn cmd_ablate(cfg: &RunConfig) -> Result<SweepReport> {
    if cfg.variants.is_empty() {
        return Err(Error::Config("ablate needs at least one variant".into()));
    }
    let dir = prepare_out(cfg)?;
    let jobs: Vec<_> = seeds(cfg)
        .into_iter()
        .flat_map(|s| cfg.variants.iter().map(move |&v| (v, s, cfg.sample_ratio)))
        .collect();
    let report = run_grid(cfg, &jobs)?;
    write_sweep(&dir, &report)?;
    Ok(report)
}

/// One row per (variant, ratio, seed) with the training split subsampled.
pub fn cmd_sparsity(cfg: &RunConfig) -> Result<SweepReport> {
    if cfg.ratios.is_empty() || cfg.variants.is_empty() {
        return Err(Error::Config("sparsity needs at least one ratio and one variant".into()));
    }
    let dir = prepare_out(cfg)?;
    let mut jobs = Vec::new();
    for &v in &cfg.variants {
        for &r in &cfg.ratios {
            for s in seeds(cfg) {
                jobs.push((v, s, r));
            }
        }
    }
    let report = run_grid(cfg, &jobs)?;
    write_sweep(&dir, &report)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchPoint {
    pub events: usize,
    pub context: usize,
    pub targets: usize,
    /// Median wall-clock seconds of one forward pass.
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub points: Vec<BenchPoint>,
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Least-squares line `y = intercept + slope·x` and its R².
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<(f64, f64, f64)> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Data("linear fit needs at least two paired points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Data("linear fit needs distinct x values".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok((slope, intercept, r2))
}

/// Context/target sizes for one benchmark graph: the first half of the events
/// is context, the rest are targets.
pub fn bench_point(cfg: &RunConfig, events: usize) -> Result<BenchPoint> {
    let mut spec = cfg.synthetic_spec();
    spec.events = events;
    spec.nodes = cfg.bench_nodes;
    spec.communities = spec.communities.min(cfg.bench_nodes / 2).max(1);
    let data = generate_synthetic(&spec, cfg.data_seed())?;
    let model = Model::new(cfg.model_config(cfg.variant), meta_for(&data), cfg.seed)?;
    let (context, targets) = data.events().split_at(events / 2);
    let mut times = Vec::with_capacity(cfg.bench_repeats.max(1));
    for _ in 0..cfg.bench_repeats.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let start = Instant::now();
        let y = model.forward(&data, context, targets, &mut rng)?;
        times.push(start.elapsed().as_secs_f64());
        std::hint::black_box(y);
    }
    times.sort_by(f64::total_cmp);
    Ok(BenchPoint {
        events,
        context: context.len(),
        targets: targets.len(),
        seconds: times[times.len() / 2],
    })
}

pub fn cmd_bench(cfg: &RunConfig) -> Result<BenchReport> {
    if cfg.bench_sizes.len() < 2 {
        return Err(Error::Config("bench needs at least two sizes".into()));
    }
    let dir = prepare_out(cfg)?;
    let points = cfg
        .bench_sizes
        .iter()
        .map(|&s| bench_point(cfg, s))
        .collect::<Result<Vec<_>>>()?;
    let x: Vec<f64> = points.iter().map(|p| (p.context + p.targets) as f64).collect();
    let y: Vec<f64> = points.iter().map(|p| p.seconds).collect();
    let (slope, intercept, r2) = linear_fit(&x, &y)?;
    let report = BenchReport {
        points,
        slope,
        intercept,
        r2,
    };
    let path = dir.join(BENCH_CSV);
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))?;
    for p in &report.points {
        w.serialize(p).map_err(|e| Error::Serde(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    write_json(&dir.join(METRICS), &report)?;
    Ok(report)
}

/// Machine-readable failure line.
pub fn error_line(kind: &str, message: &str) -> String {
    serde_json::json!({ "error": { "kind": kind, "message": message } }).to_string()
}

fn dispatch(cli: Cli) -> Result<String> {
    let done = |cfg: &RunConfig| format!("wrote outputs to {}", cfg.out_dir.display());
    match cli.command {
        Command::Train(a) => {
            let cfg = resolve(&a)?;
            let out = cmd_train(&cfg)?;
            let last = out.log.last().map(|s| s.loss);
            Ok(format!("{}; {} steps, last loss {:?}", done(&cfg), out.summary.steps_run, last))
        }
        Command::Eval { common, checkpoint } => {
            let cfg = resolve(&common)?;
            let ckpt = checkpoint.unwrap_or_else(|| cfg.out_dir.join(CHECKPOINT));
            let r = cmd_eval(&cfg, &ckpt)?;
            Ok(format!("{}; AP {:.4}, MRR {:.4}", done(&cfg), r.ap, r.mrr))
        }
        Command::Ablate(a) => {
            let cfg = resolve(&a)?;
            let r = cmd_ablate(&cfg)?;
            Ok(format!("{}; {} runs", done(&cfg), r.runs.len()))
        }
        Command::Sparsity(a) => {
            let cfg = resolve(&a)?;
            let r = cmd_sparsity(&cfg)?;
            Ok(format!("{}; {} runs", done(&cfg), r.runs.len()))
        }
        Command::Bench(a) => {
            let cfg = resolve(&a)?;
            let r = cmd_bench(&cfg)?;
            Ok(format!("{}; R^2 {:.4}", done(&cfg), r.r2))
        }
    }
}

/// Runs the binary with `args` (including the program name) and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprintln!("{}", error_line("usage", e.to_string().trim()));
            return 2;
        }
    };
    match dispatch(cli) {
        Ok(msg) => {
            println!("{msg}");
            0
        }
        Err(e) => {
            eprintln!("{}", error_line(e.kind(), &e.to_string()));
            match e {
                Error::Config(_) | Error::Usage(_) => 2,
                _ => 1,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_fit_recovers_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 0.5 + 2.0 * v).collect();
        let (s, i, r2) = linear_fit(&x, &y).unwrap();
        assert!((s - 2.0).abs() < 1e-12 && (i - 0.5).abs() < 1e-12);
        assert!((r2 - 1.0).abs() < 1e-12);
        // Hand-computed: y = [1, 3, 2] on x = [0, 1, 2] gives slope 0.5, R² 0.25.
        let (s, _, r2) = linear_fit(&[0.0, 1.0, 2.0], &[1.0, 3.0, 2.0]).unwrap();
        assert!((s - 0.5).abs() < 1e-12 && (r2 - 0.25).abs() < 1e-12);
        assert!(linear_fit(&[1.0, 1.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn parse_errors_exit_nonzero() {
        assert_eq!(run(["gsnop", "frobnicate"]), 2);
        assert_eq!(run(["gsnop", "train"]), 2);
        assert_eq!(run(["gsnop", "train", "--config", "/nonexistent/x.toml"]), 1);
        let line = error_line("io", "x");
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(v["error"]["kind"], "io");
    }
}
