//! Aggregation of deployment logs: completion rate, oracle-relative
//! duration, cumulative failures and avoided failures.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classes::{ClassKind, FailureClass, Taxonomy};
use crate::sim::{AgentKind, DeploymentLog, Event, Outcome, Task};
use crate::topo_map::{EdgeKey, NodeId};

pub const REPORT_VERSION: u32 = 1;

pub const CSV_COLUMNS: [&str; 9] = [
    "agent",
    "n_tasks",
    "tcr",
    "tcd_mean",
    "tcd_std",
    "avoided_cf",
    "avoided_ncf",
    "failures_cf",
    "failures_ncf",
];

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("oracle log required for relative TCD")]
    MissingOracle,
    #[error("task list of the {agent} log differs from the {reference} log")]
    TaskMismatch { agent: AgentKind, reference: AgentKind },
    #[error("more than one log for agent {0}")]
    DuplicateAgent(AgentKind),
    #[error("warm-up fraction must lie in [0, 1), got {0}")]
    InvalidWarmup(f64),
    #[error("malformed report: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One summary row per agent. Durations are `None` when the agent and the
/// oracle share no completed task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentMetrics {
    pub agent: AgentKind,
    pub n_tasks: usize,
    pub tcr: f64,
    pub tcd_mean: Option<f64>,
    pub tcd_std: Option<f64>,
    pub avoided_cf: u64,
    pub avoided_ncf: u64,
    pub failures_cf: u64,
    pub failures_ncf: u64,
}

/// Cumulative failure counts just after time `t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailurePoint {
    pub t: f64,
    pub cf: u64,
    pub ncf: u64,
}

impl FailurePoint {
    pub fn total(&self) -> u64 {
        self.cf + self.ncf
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Metrics {
    /// Sorted by agent name.
    pub rows: Vec<AgentMetrics>,
    pub cumulative_failures: BTreeMap<AgentKind, Vec<FailurePoint>>,
    /// `(task index, duration / oracle duration)` on the common completed
    /// subset, warm-up included.
    pub relative_tcd: BTreeMap<AgentKind, Vec<(usize, f64)>>,
}

impl Metrics {
    pub fn row(&self, agent: AgentKind) -> Option<&AgentMetrics> {
        self.rows.iter().find(|r| r.agent == agent)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsOptions {
    /// Leading fraction of tasks left out of the duration statistics.
    pub warmup_fraction: f64,
}

impl Default for MetricsOptions {
    fn default() -> Self {
        Self { warmup_fraction: 0.0 }
    }
}

fn class_kind(taxonomy: &Taxonomy, class: FailureClass) -> Option<ClassKind> {
    taxonomy.kind(class)
}

pub fn task_completion_rate(log: &DeploymentLog) -> f64 {
    if log.episodes.is_empty() {
        return 0.0;
    }
    let done = log.episodes.iter().filter(|e| e.outcome == Outcome::Completed).count();
    done as f64 / log.episodes.len() as f64
}

/// Step series of cumulative failures; simultaneous failures share a step.
pub fn cumulative_failures(log: &DeploymentLog, taxonomy: &Taxonomy) -> Vec<FailurePoint> {
    let mut series: Vec<FailurePoint> = Vec::new();
    let (mut cf, mut ncf) = (0, 0);
    for (_, class, t) in log.episodes.iter().flat_map(|e| e.failures()) {
        match class_kind(taxonomy, class) {
            Some(ClassKind::Catastrophic) => cf += 1,
            Some(ClassKind::NonCatastrophic) => ncf += 1,
            _ => continue,
        }
        match series.last_mut() {
            Some(last) if last.t == t => {
                last.cf = cf;
                last.ncf = ncf;
            }
            _ => series.push(FailurePoint { t, cf, ncf }),
        }
    }
    series
}

/// A consensus trigger for class `c` on edge `e`, followed by a plan made at
/// `e`'s source that no longer uses `e`, without a failure of class `c` on
/// `e` in between. Each `(edge, class)` counts at most once.
pub fn avoided_failures(log: &DeploymentLog) -> BTreeSet<(EdgeKey, FailureClass)> {
    let mut pending: HashMap<EdgeKey, BTreeSet<FailureClass>> = HashMap::new();
    let mut avoided = BTreeSet::new();
    for event in log.episodes.iter().flat_map(|e| &e.events) {
        match event {
            Event::Trigger { edge, probs, .. } => {
                let set = pending.entry((edge[0], edge[1])).or_default();
                for (i, &p) in probs.iter().enumerate() {
                    if p > 0.0 {
                        set.insert(FailureClass(i));
                    }
                }
            }
            Event::Failure { edge, class, .. } => {
                if let Some(set) = pending.get_mut(&(edge[0], edge[1])) {
                    set.remove(class);
                }
            }
            Event::Plan { node, route, .. } => {
                let uses = |e: &EdgeKey| route.windows(2).any(|w| (w[0], w[1]) == *e);
                for (edge, classes) in pending.iter_mut() {
                    if edge.0 == *node && !uses(edge) {
                        for c in std::mem::take(classes) {
                            avoided.insert((*edge, c));
                        }
                    }
                }
            }
            Event::Abort { .. } | Event::Arrive { .. } => {}
        }
    }
    avoided
}

fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (Some(mean), Some(var.sqrt()))
}

pub fn compute_metrics(
    logs: &[DeploymentLog],
    taxonomy: &Taxonomy,
    options: MetricsOptions,
) -> Result<Metrics, MetricsError> {
    if !(0.0..1.0).contains(&options.warmup_fraction) {
        return Err(MetricsError::InvalidWarmup(options.warmup_fraction));
    }
    let mut by_agent: BTreeMap<&str, &DeploymentLog> = BTreeMap::new();
    for log in logs {
        if by_agent.insert(log.agent.name(), log).is_some() {
            return Err(MetricsError::DuplicateAgent(log.agent));
        }
    }
    if logs.is_empty() {
        return Ok(Metrics::default());
    }
    let oracle = logs
        .iter()
        .find(|l| l.agent == AgentKind::Oracle)
        .ok_or(MetricsError::MissingOracle)?;
    let tasks_of = |log: &DeploymentLog| -> Vec<Task> {
        log.episodes
            .iter()
            .map(|e| Task {
                start: e.start,
                goal: e.goal,
            })
            .collect()
    };
    let reference = tasks_of(oracle);
    for log in logs {
        if tasks_of(log) != reference {
            return Err(MetricsError::TaskMismatch {
                agent: log.agent,
                reference: AgentKind::Oracle,
            });
        }
    }
    let skip = (options.warmup_fraction * reference.len() as f64).floor() as usize;

    let mut metrics = Metrics::default();
    for log in by_agent.values() {
        let ratios: Vec<(usize, f64)> = log
            .episodes
            .iter()
            .zip(&oracle.episodes)
            .filter(|(a, o)| a.outcome == Outcome::Completed && o.outcome == Outcome::Completed)
            .map(|(a, o)| {
                let r = if log.agent == AgentKind::Oracle { 1.0 } else { a.duration / o.duration };
                (a.task, r)
            })
            .collect();
        let kept: Vec<f64> = ratios.iter().filter(|(i, _)| *i >= skip).map(|(_, r)| *r).collect();
        let (tcd_mean, tcd_std) = mean_std(&kept);

        let series = cumulative_failures(log, taxonomy);
        let last = series.last().copied().unwrap_or(FailurePoint { t: 0.0, cf: 0, ncf: 0 });
        let avoided = avoided_failures(log);
        let avoided_of = |kind| {
            avoided
                .iter()
                .filter(|(_, c)| class_kind(taxonomy, *c) == Some(kind))
                .count() as u64
        };
        metrics.rows.push(AgentMetrics {
            agent: log.agent,
            n_tasks: log.episodes.len(),
            tcr: task_completion_rate(log),
            tcd_mean,
            tcd_std,
            avoided_cf: avoided_of(ClassKind::Catastrophic),
            avoided_ncf: avoided_of(ClassKind::NonCatastrophic),
            failures_cf: last.cf,
            failures_ncf: last.ncf,
        });
        metrics.cumulative_failures.insert(log.agent, series);
        metrics.relative_tcd.insert(log.agent, ratios);
    }
    Ok(metrics)
}

/// Six significant digits, fixed notation.
pub fn format_sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x.is_nan() { "NaN".into() } else if x == 0.0 { "0".into() } else { x.to_string() };
    }
    let decimals = (5 - x.abs().log10().floor() as i32).max(0) as usize;
    let s = format!("{x:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn round6(x: f64) -> f64 {
    format_sig6(x).parse().unwrap_or(x)
}

fn rounded(row: &AgentMetrics) -> AgentMetrics {
    AgentMetrics {
        tcr: round6(row.tcr),
        tcd_mean: row.tcd_mean.map(round6),
        tcd_std: row.tcd_std.map(round6),
        ..row.clone()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(format!("unknown report format '{other}' (expected csv or json)")),
        }
    }
}

/// CSV summary. Provenance, if any, goes into leading `#` comment lines.
pub fn report_csv(metrics: &Metrics, provenance: Option<&serde_json::Value>) -> String {
    let mut out = String::new();
    if let Some(p) = provenance {
        let _ = writeln!(out, "# v: {REPORT_VERSION}");
        let _ = writeln!(out, "# provenance: {p}");
    }
    out.push_str(&CSV_COLUMNS.join(","));
    out.push('\n');
    let opt = |x: Option<f64>| x.map(format_sig6).unwrap_or_default();
    for row in &metrics.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            row.agent,
            row.n_tasks,
            format_sig6(row.tcr),
            opt(row.tcd_mean),
            opt(row.tcd_std),
            row.avoided_cf,
            row.avoided_ncf,
            row.failures_cf,
            row.failures_ncf
        );
    }
    out
}

#[derive(Serialize, Deserialize)]
struct JsonReport {
    v: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<serde_json::Value>,
    rows: Vec<AgentMetrics>,
    #[serde(default)]
    cumulative_failures: BTreeMap<AgentKind, Vec<FailurePoint>>,
}

pub fn report_json(metrics: &Metrics, provenance: Option<&serde_json::Value>) -> String {
    let report = JsonReport {
        v: REPORT_VERSION,
        provenance: provenance.cloned(),
        rows: metrics.rows.iter().map(rounded).collect(),
        cumulative_failures: metrics.cumulative_failures.clone(),
    };
    let mut s = serde_json::to_string_pretty(&report).expect("report serializes");
    s.push('\n');
    s
}

pub fn emit_report(
    metrics: &Metrics,
    format: ReportFormat,
    provenance: Option<&serde_json::Value>,
    path: impl AsRef<Path>,
) -> Result<(), MetricsError> {
    let text = match format {
        ReportFormat::Csv => report_csv(metrics, provenance),
        ReportFormat::Json => report_json(metrics, provenance),
    };
    let mut file = std::fs::File::create(path)?;
    file.write_all(text.as_bytes())?;
    Ok(())
}

pub fn parse_report_csv(text: &str) -> Result<Vec<AgentMetrics>, MetricsError> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| MetricsError::Parse(e.to_string()))?;
    if header.iter().ne(CSV_COLUMNS) {
        return Err(MetricsError::Parse(format!("unexpected header {header:?}")));
    }
    reader
        .records()
        .map(|record| {
            let record = record.map_err(|e| MetricsError::Parse(e.to_string()))?;
            let field = |i: usize| record.get(i).unwrap_or("");
            let bad = |i: usize| MetricsError::Parse(format!("column {} has bad value '{}'", CSV_COLUMNS[i], field(i)));
            let float = |i: usize| field(i).parse::<f64>().map_err(|_| bad(i));
            let opt = |i: usize| if field(i).is_empty() { Ok(None) } else { float(i).map(Some) };
            let int = |i: usize| field(i).parse::<u64>().map_err(|_| bad(i));
            Ok(AgentMetrics {
                agent: field(0).parse().map_err(MetricsError::Parse)?,
                n_tasks: int(1)? as usize,
                tcr: float(2)?,
                tcd_mean: opt(3)?,
                tcd_std: opt(4)?,
                avoided_cf: int(5)?,
                avoided_ncf: int(6)?,
                failures_cf: int(7)?,
                failures_ncf: int(8)?,
            })
        })
        .collect()
}

pub fn parse_report_json(text: &str) -> Result<Vec<AgentMetrics>, MetricsError> {
    let report: JsonReport = serde_json::from_str(text).map_err(|e| MetricsError::Parse(e.to_string()))?;
    Ok(report.rows)
}

/// Route edges of a plan event, for trace checks.
pub fn route_edges(route: &[NodeId]) -> impl Iterator<Item = EdgeKey> + '_ {
    route.windows(2).map(|w| (w[0], w[1]))
}
