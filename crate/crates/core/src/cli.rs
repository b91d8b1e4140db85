//! Command-line front end: `generate-env`, `run` and `report`.
//!
//! Values come from flags, then the `--config` file, then module defaults.
//! Every output embeds the resolved configuration.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use crate::classes::Taxonomy;
use crate::config::ExperimentConfig;
use crate::env::{generate_environment, SimEnvironment};
use crate::metrics::{compute_metrics, emit_report, ReportFormat};
use crate::sim::{generate_tasks, run_deployment, summary_path, AgentKind, DeploymentLog, Task};

#[derive(Debug, Parser)]
#[command(name = "competence-nav", version, about = "Competence-aware navigation experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a random environment file.
    GenerateEnv(GenerateEnvArgs),
    /// Run one agent through a seeded deployment.
    Run(RunArgs),
    /// Summarize deployment logs into a report.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenerateEnvArgs {
    /// Experiment config file (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of map nodes.
    #[arg(long)]
    pub node_count: Option<usize>,
    /// Probability of an edge between any ordered pair of nodes.
    #[arg(long)]
    pub density: Option<f64>,
    /// Number of hazards placed on edges.
    #[arg(long)]
    pub hazard_count: Option<usize>,
    /// Fraction of hazards that are catastrophic.
    #[arg(long)]
    pub cf_fraction: Option<f64>,
    #[command(flatten)]
    pub fidelity: FidelityArgs,
    /// Environment file to write.
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Default, Args)]
pub struct FidelityArgs {
    /// Per-frame probability of detecting a visible hazard.
    #[arg(long)]
    pub tpr: Option<f64>,
    /// Expected false detections per frame.
    #[arg(long)]
    pub fpr: Option<f64>,
    /// Noise on the per-frame class probabilities.
    #[arg(long)]
    pub noise_sd: Option<f64>,
    /// Predictor frames per second.
    #[arg(long)]
    pub frame_rate: Option<f64>,
}

impl FidelityArgs {
    fn is_empty(&self) -> bool {
        self.tpr.is_none() && self.fpr.is_none() && self.noise_sd.is_none() && self.frame_rate.is_none()
    }

    fn apply(&self, f: &mut crate::introspection::SensorFidelity) {
        set(&mut f.tpr, self.tpr);
        set(&mut f.fpr, self.fpr);
        set(&mut f.global_noise_sd, self.noise_sd);
        set(&mut f.frame_rate, self.frame_rate);
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Environment file from `generate-env`.
    #[arg(long)]
    pub env: PathBuf,
    /// cpip, frequentist, baseline or oracle.
    #[arg(long)]
    pub agent: AgentKind,
    /// JSON list of `{"start": id, "goal": id}` tasks.
    #[arg(long, conflicts_with = "task_count")]
    pub tasks: Option<PathBuf>,
    /// Number of random tasks to generate.
    #[arg(long)]
    pub task_count: Option<usize>,
    /// Experiment config file (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed of the deployment's random draws.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Seed of the generated task list; defaults to the run seed.
    #[arg(long)]
    pub task_seed: Option<u64>,
    #[command(flatten)]
    pub sim: SimArgs,
    /// Overrides the fidelity stored in the environment file.
    #[command(flatten)]
    pub fidelity: FidelityArgs,
    /// Episode log (JSON lines); the summary goes next to it.
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Default, Args)]
pub struct SimArgs {
    /// Prior failure probability.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Intervention likelihood coefficient.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Mean-filter window (frames).
    #[arg(long)]
    pub window: Option<usize>,
    /// Hits before a tracklet is active.
    #[arg(long)]
    pub min_hits: Option<u32>,
    /// Frames a tracklet survives without a hit.
    #[arg(long)]
    pub max_gap: Option<u64>,
    /// Tracklet association radius.
    #[arg(long)]
    pub radius: Option<f64>,
    /// Consensus probability that triggers a belief update.
    #[arg(long)]
    pub trigger: Option<f64>,
    /// Planning cost of recovering from a non-catastrophic failure.
    #[arg(long)]
    pub recovery_cost: Option<f64>,
    /// Planning cost of a catastrophic failure.
    #[arg(long)]
    pub catastrophic_penalty: Option<f64>,
    /// Non-catastrophic failures in a row on one edge before a task is stuck.
    #[arg(long)]
    pub max_consecutive_ncf: Option<u32>,
    /// Let the cpip agent turn back mid-edge after a trigger.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub mid_edge_abort: Option<bool>,
    /// Pseudo-count of the frequentist estimate.
    #[arg(long)]
    pub frequentist_alpha: Option<f64>,
    /// Edge attempts per task before it counts as stuck.
    #[arg(long)]
    pub step_cap: Option<u32>,
}

impl SimArgs {
    fn apply(&self, c: &mut crate::sim::SimConfig) {
        set(&mut c.epsilon, self.epsilon);
        set(&mut c.delta, self.delta);
        set(&mut c.predictor.window, self.window);
        set(&mut c.predictor.min_hits, self.min_hits);
        set(&mut c.predictor.max_gap, self.max_gap);
        set(&mut c.predictor.radius, self.radius);
        set(&mut c.predictor.trigger, self.trigger);
        set(&mut c.recovery_cost, self.recovery_cost);
        set(&mut c.catastrophic_penalty, self.catastrophic_penalty);
        set(&mut c.max_consecutive_ncf, self.max_consecutive_ncf);
        set(&mut c.mid_edge_abort, self.mid_edge_abort);
        set(&mut c.frequentist_alpha, self.frequentist_alpha);
        set(&mut c.step_cap, self.step_cap);
    }
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Deployment logs, one per agent; one must be the oracle's.
    #[arg(required = true)]
    pub logs: Vec<PathBuf>,
    /// csv or json.
    #[arg(long, default_value = "csv")]
    pub format: ReportFormat,
    /// Leading fraction of tasks left out of the duration statistics.
    #[arg(long)]
    pub warmup: Option<f64>,
    /// Experiment config file (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Report file to write.
    #[arg(long, short)]
    pub out: PathBuf,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn file_name(path: &Path) -> String {
    path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

pub fn resolve_generate_config(args: &GenerateEnvArgs) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load_or_default(args.config.as_deref())?;
    set(&mut config.seed, args.seed);
    set(&mut config.env.node_count, args.node_count);
    set(&mut config.env.density, args.density);
    set(&mut config.env.hazard_count, args.hazard_count);
    set(&mut config.env.cf_fraction, args.cf_fraction);
    args.fidelity.apply(&mut config.env.fidelity);
    config.validate()?;
    Ok(config)
}

pub fn cmd_generate_env(args: &GenerateEnvArgs) -> Result<()> {
    let config = resolve_generate_config(args)?;
    let env = generate_environment(&config.env, config.seed)?;
    write_file(&args.out, &(env.to_json_string() + "\n"))
}

pub fn resolve_run_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load_or_default(args.config.as_deref())?;
    set(&mut config.seed, args.seed);
    if args.task_seed.is_some() {
        config.task_seed = args.task_seed;
    }
    set(&mut config.task_count, args.task_count);
    config.agents = vec![args.agent];
    args.sim.apply(&mut config.sim);
    config.validate()?;
    Ok(config)
}

pub fn cmd_run(args: &RunArgs) -> Result<()> {
    let mut config = resolve_run_config(args)?;
    let mut env = SimEnvironment::load(&args.env)?;
    if !args.fidelity.is_empty() {
        let mut fidelity = env.fidelity();
        args.fidelity.apply(&mut fidelity);
        env = env.with_fidelity(fidelity)?;
    }
    // echo the fidelity actually used
    config.env.fidelity = env.fidelity();
    let tasks: Vec<Task> = match &args.tasks {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
            let tasks: Vec<Task> =
                serde_json::from_str(&text).with_context(|| format!("invalid task list {}", path.display()))?;
            config.task_count = tasks.len();
            tasks
        }
        None => generate_tasks(env.map(), config.task_count, config.task_seed())?,
    };
    let (log, _) = run_deployment(&env, args.agent, &tasks, config.seed, &config.sim)?;
    write_file(&args.out, &log.to_jsonl())?;
    let mut summary = serde_json::to_string_pretty(&log.summary(config.to_json()))?;
    summary.push('\n');
    write_file(&summary_path(&args.out), &summary)
}

pub fn cmd_report(args: &ReportArgs) -> Result<()> {
    let mut config = ExperimentConfig::load_or_default(args.config.as_deref())?;
    set(&mut config.metrics.warmup_fraction, args.warmup);
    config.validate()?;
    let mut logs = Vec::new();
    let mut sources = Vec::new();
    for path in &args.logs {
        let (log, summary) = DeploymentLog::load(path)?;
        sources.push(serde_json::json!({
            "file": file_name(path),
            "agent": log.agent,
            "seed": log.seed,
            "config": summary.map(|s| s.config),
        }));
        logs.push(log);
    }
    if !logs.iter().any(|l| l.agent == AgentKind::Oracle) {
        bail!("oracle log required for relative TCD");
    }
    let metrics = compute_metrics(&logs, &Taxonomy::standard(), config.metrics)?;
    let provenance = serde_json::json!({
        "metrics": config.metrics,
        "logs": sources,
    });
    emit_report(&metrics, args.format, Some(&provenance), &args.out)?;
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::GenerateEnv(args) => cmd_generate_env(args),
        Command::Run(args) => cmd_run(args),
        Command::Report(args) => cmd_report(args),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::error::ErrorKind;

    #[test]
    fn unknown_agent_is_a_usage_error() {
        let err = Cli::try_parse_from([
            "competence-nav",
            "run",
            "--env",
            "e.json",
            "--agent",
            "robot",
            "--out",
            "o",
        ])
        .unwrap_err();
        assert_eq!(err.kind(), ErrorKind::ValueValidation);
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        std::fs::write(&cfg, r#"{"seed": 3, "task_count": 7, "sim": {"epsilon": 0.1, "delta": 0.8}}"#).unwrap();
        let cli = Cli::try_parse_from([
            "competence-nav",
            "run",
            "--env",
            "e.json",
            "--agent",
            "cpip",
            "--config",
            cfg.to_str().unwrap(),
            "--epsilon",
            "0.2",
            "--mid-edge-abort",
            "--out",
            "o",
        ])
        .unwrap();
        let Command::Run(args) = cli.command else { panic!() };
        let c = resolve_run_config(&args).unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.task_count, 7);
        assert_eq!(c.sim.epsilon, 0.2);
        assert_eq!(c.sim.delta, 0.8);
        assert!(c.sim.mid_edge_abort);
        assert_eq!(c.sim.recovery_cost, 30.0);
        assert_eq!(c.agents, vec![AgentKind::Cpip]);
    }

    #[test]
    fn invalid_flag_value_names_field() {
        let cli = Cli::try_parse_from([
            "competence-nav",
            "generate-env",
            "--density",
            "2",
            "--out",
            "x",
        ])
        .unwrap();
        let Command::GenerateEnv(args) = cli.command else { panic!() };
        let err = resolve_generate_config(&args).unwrap_err();
        assert!(format!("{err:#}").contains("density"));
    }
}
