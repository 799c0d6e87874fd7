//! Command-line interface: `simulate`, `train`, `evaluate`, `sweep`, and
//! `export-table`.
//!
//! Every run command writes a `manifest.json` into the output directory
//! before producing anything else, recording the command, package version,
//! configuration hash, master seed, and the files the run will create. Runs
//! with the same manifest are byte-for-byte reproducible.
//!
//! Exit codes: 0 on success; 1 when a `simulate` or `evaluate` run completes
//! but fails a safety or completion condition (an audited barrier dipped
//! below tolerance, or no vehicle finished); 2 for usage, configuration, or
//! I/O errors. `sweep` compares parameterizations — including deliberately
//! aggressive ones — so it reports audit results in its output instead of
//! failing on them.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::AppConfig;
use crate::controller::ControllerTheta;
use crate::rl::checkpoint::PolicyCheckpoint;
use crate::rl::train::train_policy;
use crate::sim::metrics::EpisodeMetrics;
use crate::sim::world::{run_episode, FixedTheta, ThetaPolicy};

/// Audit tolerance: a completed run fails (exit 1) if any feasible step's
/// re-evaluated barrier dipped below this.
pub const AUDIT_TOL: f64 = -1e-6;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] crate::config::ConfigError),
    #[error("{0}")]
    Checkpoint(#[from] crate::rl::checkpoint::CheckpointError),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Usage(String),
}

#[derive(Debug, Parser)]
#[command(
    name = "cbf-mpc",
    version,
    about = "Receding-horizon merging control with learned parameters"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one merging episode; write metrics and a rollout log.
    Simulate(SimulateArgs),
    /// Train a parameter policy; write a checkpoint and a training log.
    Train(TrainArgs),
    /// Run several seeded episodes with one parameter source; write a report.
    Evaluate(EvaluateArgs),
    /// Evaluate all presets (plus an optional checkpoint) on shared seeds.
    Sweep(SweepArgs),
    /// Print a sweep or evaluation report as an aligned text table.
    ExportTable(ExportTableArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Configuration file; built-in defaults apply when the file is absent.
    #[arg(long, default_value = "config.toml")]
    pub config: PathBuf,
    /// Master random seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory (created if missing).
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Parameter source: `baseline:<preset>` or `checkpoint:<path>`.
    #[arg(long, default_value = "baseline:moderately-conservative")]
    pub theta: String,
    /// Stop after this many vehicles have crossed the merge point.
    #[arg(long)]
    pub cavs: Option<usize>,
    /// Simulated-time cap in seconds.
    #[arg(long)]
    pub time_cap: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Override the configured number of environment steps.
    #[arg(long)]
    pub steps: Option<u64>,
    /// Override the configured hidden layer widths, e.g. `64,64`.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Parameter source: `baseline:<preset>` or `checkpoint:<path>`.
    #[arg(long, default_value = "baseline:moderately-conservative")]
    pub theta: String,
    /// Number of seeded episodes (seeds are seed, seed+1, ...).
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    /// Stop each episode after this many vehicles have crossed the merge point.
    #[arg(long)]
    pub cavs: Option<usize>,
    /// Simulated-time cap in seconds.
    #[arg(long)]
    pub time_cap: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Optional extra entry: `checkpoint:<path>` evaluated alongside presets.
    #[arg(long)]
    pub theta: Option<String>,
    /// Number of seeded episodes per entry (shared across entries).
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    /// Stop each episode after this many vehicles have crossed the merge point.
    #[arg(long)]
    pub cavs: Option<usize>,
    /// Simulated-time cap in seconds.
    #[arg(long)]
    pub time_cap: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ExportTableArgs {
    /// Directory holding `sweep.json` or `evaluation.json`.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

/// Where a run gets its controller parameters.
#[derive(Debug, Clone)]
pub enum ThetaSource {
    Baseline(String),
    Checkpoint(PathBuf),
}

impl ThetaSource {
    pub fn parse(s: &str) -> Result<Self, CliError> {
        if let Some(name) = s.strip_prefix("baseline:") {
            if ControllerTheta::preset(name).is_none() {
                return Err(CliError::Usage(format!(
                    "unknown preset '{name}' (expected one of: {})",
                    ControllerTheta::PRESET_NAMES.join(", ")
                )));
            }
            Ok(Self::Baseline(name.to_string()))
        } else if let Some(path) = s.strip_prefix("checkpoint:") {
            Ok(Self::Checkpoint(PathBuf::from(path)))
        } else {
            Err(CliError::Usage(format!(
                "invalid parameter source '{s}' (expected baseline:<preset> or checkpoint:<path>)"
            )))
        }
    }

    pub fn label(&self) -> String {
        match self {
            Self::Baseline(name) => name.clone(),
            Self::Checkpoint(_) => "learned".to_string(),
        }
    }

    pub fn policy(&self) -> Result<Box<dyn ThetaPolicy>, CliError> {
        match self {
            Self::Baseline(name) => {
                let theta = ControllerTheta::preset(name)
                    .ok_or_else(|| CliError::Usage(format!("unknown preset '{name}'")))?;
                Ok(Box::new(FixedTheta(theta)))
            }
            Self::Checkpoint(path) => {
                let ck = PolicyCheckpoint::load(path)?;
                Ok(Box::new(ck.policy()))
            }
        }
    }
}

/// Written into the output directory before any other file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self { mean: 0.0, std: 0.0 };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Self { mean, std }
    }
}

impl std::fmt::Display for Stat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.3} ± {:.3}", self.mean, self.std)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Aggregate {
    pub travel_time: Stat,
    pub effort: Stat,
    pub fuel: Stat,
    pub infeasible_steps: Stat,
    pub completed: Stat,
}

impl Aggregate {
    pub fn of(per_seed: &[EpisodeMetrics]) -> Self {
        let pick = |f: fn(&EpisodeMetrics) -> f64| {
            Stat::of(&per_seed.iter().map(f).collect::<Vec<_>>())
        };
        Self {
            travel_time: pick(|m| m.mean_travel_time),
            effort: pick(|m| m.mean_effort),
            fuel: pick(|m| m.mean_fuel),
            infeasible_steps: pick(|m| m.infeasible_steps as f64),
            completed: pick(|m| m.completed as f64),
        }
    }
}

/// One parameter source evaluated over shared seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub name: String,
    pub seeds: Vec<u64>,
    pub per_seed: Vec<EpisodeMetrics>,
    pub aggregate: Aggregate,
    /// Worst audited post-step barrier value across all episodes.
    pub audit_min_barrier: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub seeds: Vec<u64>,
    pub entries: Vec<EvalReport>,
}

/// Metrics file written by `simulate`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationReport {
    pub metrics: EpisodeMetrics,
    pub audit_min_barrier: f64,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("reports serialize");
    std::fs::write(path, text + "\n").map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("cannot parse {}: {e}", path.display())))
}

fn load_config(args: &CommonArgs) -> Result<AppConfig, CliError> {
    Ok(AppConfig::load(&args.config)?)
}

fn apply_overrides(cfg: &mut AppConfig, cavs: Option<usize>, time_cap: Option<f64>) {
    if let Some(c) = cavs {
        cfg.scenario.cav_target = c;
    }
    if let Some(t) = time_cap {
        cfg.scenario.time_cap = t;
    }
}

fn prepare_out(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))
}

fn write_manifest(
    dir: &Path,
    command: &str,
    cfg: &AppConfig,
    seed: u64,
    outputs: &[&str],
) -> Result<(), CliError> {
    let manifest = RunManifest {
        command: command.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: cfg.canonical_hash(),
        seed,
        outputs: outputs.iter().map(|s| s.to_string()).collect(),
    };
    write_json(&dir.join("manifest.json"), &manifest)
}

fn evaluate_source(
    cfg: &AppConfig,
    source: &ThetaSource,
    first_seed: u64,
    n_seeds: u64,
) -> Result<EvalReport, CliError> {
    let mut policy = source.policy()?;
    let seeds: Vec<u64> = (0..n_seeds).map(|i| first_seed + i).collect();
    let mut per_seed = Vec::with_capacity(seeds.len());
    let mut audit = f64::INFINITY;
    for &s in &seeds {
        let outcome = run_episode(cfg, s, policy.as_mut());
        audit = audit.min(outcome.audit_min_barrier);
        per_seed.push(outcome.metrics);
    }
    Ok(EvalReport {
        name: source.label(),
        seeds,
        aggregate: Aggregate::of(&per_seed),
        per_seed,
        audit_min_barrier: audit,
    })
}

fn cmd_simulate(args: &SimulateArgs) -> Result<i32, CliError> {
    let mut cfg = load_config(&args.common)?;
    apply_overrides(&mut cfg, args.cavs, args.time_cap);
    let source = ThetaSource::parse(&args.theta)?;
    prepare_out(&args.common.out)?;
    write_manifest(
        &args.common.out,
        "simulate",
        &cfg,
        args.common.seed,
        &["metrics.json", "rollout.csv"],
    )?;

    let mut policy = source.policy()?;
    let outcome = run_episode(&cfg, args.common.seed, policy.as_mut());
    let report = SimulationReport {
        metrics: outcome.metrics.clone(),
        audit_min_barrier: outcome.audit_min_barrier,
    };
    write_json(&args.common.out.join("metrics.json"), &report)?;
    let csv_path = args.common.out.join("rollout.csv");
    outcome.log.write_csv(&csv_path).map_err(io_err(&csv_path))?;

    println!(
        "simulate: {} completed, {} still in zone, mean travel {:.2} s, mean effort {:.3}, mean fuel {:.2} ml, {} infeasible steps, worst audited barrier {:.3e}",
        report.metrics.completed,
        report.metrics.incomplete,
        report.metrics.mean_travel_time,
        report.metrics.mean_effort,
        report.metrics.mean_fuel,
        report.metrics.infeasible_steps,
        report.audit_min_barrier,
    );
    let ok = report.audit_min_barrier >= AUDIT_TOL && report.metrics.completed > 0;
    Ok(if ok { 0 } else { 1 })
}

fn cmd_train(args: &TrainArgs) -> Result<i32, CliError> {
    let cfg = load_config(&args.common)?;
    let steps = args.steps.unwrap_or(cfg.rl.total_steps as u64);
    let hidden = args.hidden.clone().unwrap_or_else(|| cfg.rl.hidden.clone());
    if hidden.is_empty() {
        return Err(CliError::Usage("hidden layer list must not be empty".into()));
    }
    prepare_out(&args.common.out)?;
    write_manifest(
        &args.common.out,
        "train",
        &cfg,
        args.common.seed,
        &["checkpoint.json", "training_log.csv"],
    )?;

    let out = train_policy(&cfg, args.common.seed, steps, &hidden, |p| {
        let losses = if p.gradient_updates == 0 {
            "losses pending warmup".to_string()
        } else {
            format!("critic loss {:.3} actor loss {:.3}", p.critic_loss, p.actor_loss)
        };
        println!(
            "train: step {}/{} episodes {} recent return {:.1} infeasible rate {:.3} {}",
            p.env_steps,
            p.total_steps,
            p.episodes,
            p.recent_return,
            p.recent_infeasible_rate,
            losses,
        );
    });

    let ck = PolicyCheckpoint::from_parts(
        &out.agent.actor,
        &out.featurizer,
        &out.action_map,
        out.agent.cfg.log_std_lo,
        out.agent.cfg.log_std_hi,
        cfg.canonical_hash(),
    );
    ck.save(&args.common.out.join("checkpoint.json"))?;

    let mut log = String::from("episode,return,infeasible_steps,length\n");
    for i in 0..out.stats.episode_returns.len() {
        log.push_str(&format!(
            "{},{},{},{}\n",
            i, out.stats.episode_returns[i], out.stats.episode_infeasible[i],
            out.stats.episode_lengths[i]
        ));
    }
    let log_path = args.common.out.join("training_log.csv");
    std::fs::write(&log_path, log).map_err(io_err(&log_path))?;

    println!(
        "train: finished {} env steps over {} episodes; checkpoint written to {}",
        out.stats.env_steps,
        out.stats.episodes,
        args.common.out.join("checkpoint.json").display()
    );
    Ok(0)
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<i32, CliError> {
    let mut cfg = load_config(&args.common)?;
    apply_overrides(&mut cfg, args.cavs, args.time_cap);
    if args.seeds == 0 {
        return Err(CliError::Usage("--seeds must be at least 1".into()));
    }
    let source = ThetaSource::parse(&args.theta)?;
    prepare_out(&args.common.out)?;
    write_manifest(&args.common.out, "evaluate", &cfg, args.common.seed, &["evaluation.json"])?;

    let report = evaluate_source(&cfg, &source, args.common.seed, args.seeds)?;
    write_json(&args.common.out.join("evaluation.json"), &report)?;
    println!(
        "evaluate[{}]: travel {} s, effort {}, fuel {} ml, infeasible {}, worst audited barrier {:.3e}",
        report.name,
        report.aggregate.travel_time,
        report.aggregate.effort,
        report.aggregate.fuel,
        report.aggregate.infeasible_steps,
        report.audit_min_barrier,
    );
    let ok = report.audit_min_barrier >= AUDIT_TOL
        && report.per_seed.iter().all(|m| m.completed > 0);
    Ok(if ok { 0 } else { 1 })
}

fn cmd_sweep(args: &SweepArgs) -> Result<i32, CliError> {
    let mut cfg = load_config(&args.common)?;
    apply_overrides(&mut cfg, args.cavs, args.time_cap);
    if args.seeds == 0 {
        return Err(CliError::Usage("--seeds must be at least 1".into()));
    }
    let mut sources: Vec<ThetaSource> = ControllerTheta::PRESET_NAMES
        .iter()
        .map(|n| ThetaSource::Baseline(n.to_string()))
        .collect();
    if let Some(extra) = &args.theta {
        let source = ThetaSource::parse(extra)?;
        if matches!(source, ThetaSource::Baseline(_)) {
            return Err(CliError::Usage(
                "sweep already covers every preset; --theta must be checkpoint:<path>".into(),
            ));
        }
        sources.push(source);
    }
    prepare_out(&args.common.out)?;
    write_manifest(&args.common.out, "sweep", &cfg, args.common.seed, &["sweep.json"])?;

    let mut entries = Vec::with_capacity(sources.len());
    for source in &sources {
        let report = evaluate_source(&cfg, source, args.common.seed, args.seeds)?;
        println!(
            "sweep[{}]: travel {} s, effort {}, fuel {} ml, infeasible {}",
            report.name,
            report.aggregate.travel_time,
            report.aggregate.effort,
            report.aggregate.fuel,
            report.aggregate.infeasible_steps,
        );
        entries.push(report);
    }
    let sweep = SweepReport {
        seeds: (0..args.seeds).map(|i| args.common.seed + i).collect(),
        entries,
    };
    write_json(&args.common.out.join("sweep.json"), &sweep)?;
    // A sweep is a comparison across parameterizations, some of which are
    // deliberately aggressive; per-entry audit results live in sweep.json
    // rather than gating the exit code the way simulate/evaluate do.
    Ok(0)
}

/// Render a report as an aligned five-column table.
pub fn render_table(entries: &[EvalReport]) -> String {
    let headers =
        ["source", "travel time [s]", "effort [(m/s^2)^2 s]", "fuel [ml]", "infeasible steps"];
    let mut rows: Vec<[String; 5]> = vec![headers.map(str::to_string)];
    for e in entries {
        rows.push([
            e.name.clone(),
            e.aggregate.travel_time.to_string(),
            e.aggregate.effort.to_string(),
            e.aggregate.fuel.to_string(),
            e.aggregate.infeasible_steps.to_string(),
        ]);
    }
    let widths: Vec<usize> =
        (0..5).map(|c| rows.iter().map(|r| r[c].len()).max().unwrap()).collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let line: Vec<String> =
            row.iter().enumerate().map(|(c, cell)| format!("{cell:<w$}", w = widths[c])).collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            let total: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
            out.push_str(&"-".repeat(total));
            out.push('\n');
        }
    }
    out
}

fn cmd_export_table(args: &ExportTableArgs) -> Result<i32, CliError> {
    let sweep_path = args.out.join("sweep.json");
    let eval_path = args.out.join("evaluation.json");
    let entries: Vec<EvalReport> = if sweep_path.exists() {
        read_json::<SweepReport>(&sweep_path)?.entries
    } else if eval_path.exists() {
        vec![read_json::<EvalReport>(&eval_path)?]
    } else {
        return Err(CliError::Usage(format!(
            "no sweep.json or evaluation.json in {}",
            args.out.display()
        )));
    };
    print!("{}", render_table(&entries));
    Ok(0)
}

/// Entry point used by the binary; returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Train(args) => cmd_train(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::ExportTable(args) => cmd_export_table(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}
