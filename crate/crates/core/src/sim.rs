//! Seeded deployments of navigation tasks under the four agent strategies.
//!
//! Each step the agent plans from its current node with its own estimate of
//! the per-edge outcome distributions, then attempts the first edge of the
//! plan. The outcome is drawn from the environment's ground truth; a failure
//! happens at the position of a hazard of the drawn class. Only the `cpip`
//! agent watches the frame stream while driving, updating its beliefs when
//! the predictor reaches consensus and, if enabled, turning back early.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::belief::{init_beliefs, BeliefError, BeliefPrior, FailureBelief, Observation, DEFAULT_DELTA};
use crate::classes::{ClassDist, ClassKind, FailureClass, Taxonomy};
use crate::env::SimEnvironment;
use crate::introspection::{intervention_for_failure, IntrospectionError, TraversalFrames};
use crate::predictor::{PredictorConfig, PredictorError, PredictorState};
use crate::rng::RngStream;
use crate::ssp::{build_ssp, route, value_iteration, CostParams, PlanError, Solution, SolverConfig, SspModel, SspState};
use crate::topo_map::{EdgeKey, MapError, NodeId, TopoMap};

pub const LOG_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    /// Belief filter fed by interventions and introspective predictions.
    Cpip,
    /// Smoothed failure frequencies per edge.
    Frequentist,
    /// Ignores competence; plans as if every edge always succeeds.
    Baseline,
    /// Plans with the true outcome distributions.
    Oracle,
}

impl AgentKind {
    pub const ALL: [AgentKind; 4] = [
        AgentKind::Cpip,
        AgentKind::Frequentist,
        AgentKind::Baseline,
        AgentKind::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AgentKind::Cpip => "cpip",
            AgentKind::Frequentist => "frequentist",
            AgentKind::Baseline => "baseline",
            AgentKind::Oracle => "oracle",
        }
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AgentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AgentKind::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown agent '{s}' (expected cpip, frequentist, baseline or oracle)"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Prior failure probability per class.
    pub epsilon: f64,
    /// Intervention likelihood coefficient.
    pub delta: f64,
    pub predictor: PredictorConfig,
    /// Recovery cost (s) of a non-catastrophic failure, for planning and
    /// for the simulated clock.
    pub recovery_cost: f64,
    /// Planning cost (s) of a catastrophic failure.
    pub catastrophic_penalty: f64,
    /// Consecutive non-catastrophic failures on one edge before the task
    /// counts as stuck.
    pub max_consecutive_ncf: u32,
    pub mid_edge_abort: bool,
    pub frequentist_alpha: f64,
    /// Edge attempts per task before the task counts as stuck.
    pub step_cap: u32,
    pub solver: SolverConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            delta: DEFAULT_DELTA,
            predictor: PredictorConfig::default(),
            recovery_cost: 30.0,
            catastrophic_penalty: 1000.0,
            max_consecutive_ncf: 3,
            mid_edge_abort: false,
            frequentist_alpha: 0.01,
            step_cap: 500,
            solver: SolverConfig::default(),
        }
    }
}

impl SimConfig {
    pub fn costs(&self, taxonomy: &Taxonomy) -> CostParams {
        CostParams::new(taxonomy, self.recovery_cost, self.catastrophic_penalty)
    }

    pub fn validate(&self, taxonomy: &Taxonomy) -> Result<(), SimError> {
        BeliefPrior::new(self.epsilon, taxonomy)?;
        let classes = taxonomy.len() as f64;
        if !(self.delta > 1.0 / classes && self.delta < 1.0) {
            return Err(BeliefError::InvalidDelta {
                delta: self.delta,
                classes: taxonomy.len(),
            }
            .into());
        }
        self.predictor.validate()?;
        self.costs(taxonomy).validate(taxonomy)?;
        if self.max_consecutive_ncf == 0 || self.step_cap == 0 {
            return Err(SimError::InvalidConfig("max_consecutive_ncf and step_cap must be positive".into()));
        }
        if self.frequentist_alpha < 0.0 || !self.frequentist_alpha.is_finite() {
            return Err(SimError::InvalidConfig("frequentist_alpha must be non-negative".into()));
        }
        if self.solver.tolerance <= 0.0 || !self.solver.tolerance.is_finite() || self.solver.max_iters == 0 {
            return Err(SimError::InvalidConfig("solver tolerance and max_iters must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Belief(#[from] BeliefError),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error(transparent)]
    Introspection(#[from] IntrospectionError),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error("task {index}: {start} -> {goal} is not a valid task ({reason})")]
    InvalidTask {
        index: usize,
        start: NodeId,
        goal: NodeId,
        reason: &'static str,
    },
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub start: NodeId,
    pub goal: NodeId,
}

impl Task {
    pub fn validate(&self, map: &TopoMap, index: usize) -> Result<(), SimError> {
        let invalid = |reason| SimError::InvalidTask {
            index,
            start: self.start,
            goal: self.goal,
            reason,
        };
        if !map.contains(self.start) || !map.contains(self.goal) {
            return Err(invalid("unknown node"));
        }
        if !map.reachable(self.start, self.goal)? {
            return Err(invalid("goal unreachable"));
        }
        Ok(())
    }
}

/// Uniformly random distinct `(start, goal)` pairs with a path between them.
pub fn generate_tasks(map: &TopoMap, count: usize, seed: u64) -> Result<Vec<Task>, SimError> {
    let ids: Vec<NodeId> = map.node_ids().collect();
    if ids.len() < 2 && count > 0 {
        return Err(SimError::InvalidConfig("task generation needs at least two nodes".into()));
    }
    let stream = RngStream::new(seed).child(0x7A5C);
    let mut tasks = Vec::with_capacity(count);
    for i in 0..count {
        let mut rng = stream.child(i as u64).rng();
        let mut found = None;
        for _ in 0..10_000 {
            let start = ids[rng.random_range(0..ids.len())];
            let goal = ids[rng.random_range(0..ids.len())];
            if start != goal && map.reachable(start, goal)? {
                found = Some(Task { start, goal });
                break;
            }
        }
        tasks.push(found.ok_or_else(|| SimError::InvalidConfig("could not draw a reachable task".into()))?);
    }
    Ok(tasks)
}

/// Failure and traversal counts of one edge.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeCounts {
    pub traversals: u64,
    /// One count per failure class.
    pub failures: Vec<u64>,
}

impl EdgeCounts {
    pub fn new(failure_classes: usize) -> Self {
        Self {
            traversals: 0,
            failures: vec![0; failure_classes],
        }
    }
}

/// `(count_c + alpha) / (traversals + alpha * L)` per class, with successes
/// counted as the remaining traversals. Falls back to uniform when there is
/// neither data nor smoothing.
pub fn frequentist_estimate(counts: &EdgeCounts, alpha: f64, taxonomy: &Taxonomy) -> ClassDist {
    let l = taxonomy.len() as f64;
    let denom = counts.traversals as f64 + alpha * l;
    if denom <= 0.0 {
        return taxonomy.uniform();
    }
    let failed: u64 = counts.failures.iter().sum();
    let successes = counts.traversals.saturating_sub(failed);
    let mut probs: Vec<f64> = counts.failures.iter().map(|&c| (c as f64 + alpha) / denom).collect();
    probs.push((successes as f64 + alpha) / denom);
    ClassDist(probs)
}

/// Knowledge an agent carries from task to task within a deployment.
#[derive(Clone, Debug)]
pub enum AgentState {
    Cpip {
        belief: FailureBelief,
        predictor: PredictorState,
    },
    Frequentist(Vec<EdgeCounts>),
    Baseline,
    Oracle,
}

impl AgentState {
    pub fn new(kind: AgentKind, env: &SimEnvironment, config: &SimConfig) -> Result<Self, SimError> {
        let taxonomy = env.taxonomy();
        Ok(match kind {
            AgentKind::Cpip => AgentState::Cpip {
                belief: init_beliefs(env.map(), taxonomy, BeliefPrior::new(config.epsilon, taxonomy)?)?,
                predictor: PredictorState::new(taxonomy.failure_count()),
            },
            AgentKind::Frequentist => {
                AgentState::Frequentist(vec![EdgeCounts::new(taxonomy.failure_count()); env.map().edge_count()])
            }
            AgentKind::Baseline => AgentState::Baseline,
            AgentKind::Oracle => AgentState::Oracle,
        })
    }

    pub fn kind(&self) -> AgentKind {
        match self {
            AgentState::Cpip { .. } => AgentKind::Cpip,
            AgentState::Frequentist(_) => AgentKind::Frequentist,
            AgentState::Baseline => AgentKind::Baseline,
            AgentState::Oracle => AgentKind::Oracle,
        }
    }

    /// Outcome distributions the agent plans with, in map edge order.
    pub fn edge_estimates(&self, env: &SimEnvironment, config: &SimConfig) -> Vec<ClassDist> {
        let taxonomy = env.taxonomy();
        match self {
            AgentState::Cpip { belief, .. } => belief.snapshot_all(),
            AgentState::Frequentist(counts) => counts
                .iter()
                .map(|c| frequentist_estimate(c, config.frequentist_alpha, taxonomy))
                .collect(),
            AgentState::Baseline => vec![taxonomy.certain_success(); env.map().edge_count()],
            AgentState::Oracle => env.ground_truth().to_vec(),
        }
    }

    pub fn belief(&self) -> Option<&FailureBelief> {
        match self {
            AgentState::Cpip { belief, .. } => Some(belief),
            _ => None,
        }
    }

    pub fn counts(&self) -> Option<&[EdgeCounts]> {
        match self {
            AgentState::Frequentist(c) => Some(c),
            _ => None,
        }
    }

    fn observe_outcome(
        &mut self,
        edge_pos: usize,
        edge: EdgeKey,
        outcome: Option<FailureClass>,
        env: &SimEnvironment,
        config: &SimConfig,
    ) -> Result<(), SimError> {
        match self {
            AgentState::Cpip { belief, .. } => {
                belief.record_traversal(edge)?;
                if let Some(class) = outcome {
                    let obs = intervention_for_failure(edge, class, env.taxonomy())?;
                    belief.update(&obs, config.delta)?;
                }
            }
            AgentState::Frequentist(counts) => {
                let c = &mut counts[edge_pos];
                c.traversals += 1;
                if let Some(class) = outcome {
                    c.failures[class.0] += 1;
                }
            }
            AgentState::Baseline | AgentState::Oracle => {}
        }
        Ok(())
    }
}

/// A solved planning model for one goal.
pub struct Plan {
    pub model: SspModel,
    pub solution: Solution,
}

impl Plan {
    pub fn solve(
        env: &SimEnvironment,
        estimates: &[ClassDist],
        goal: NodeId,
        config: &SimConfig,
    ) -> Result<Self, SimError> {
        let costs = config.costs(env.taxonomy());
        let model = build_ssp(env.map(), env.taxonomy(), estimates, &costs, goal)?;
        let solution = value_iteration(&model, config.solver.tolerance, config.solver.max_iters)?;
        Ok(Self { model, solution })
    }

    pub fn value(&self, node: NodeId) -> Result<f64, SimError> {
        Ok(self.solution.values.at(&self.model, &SspState::Node(node))?)
    }

    pub fn route(&self, from: NodeId) -> Result<Vec<NodeId>, SimError> {
        Ok(route(&self.model, &self.solution.policy, from)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Completed,
    CatastrophicFailure,
    Stuck,
}

/// Timestamps are seconds since the start of the deployment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    Plan {
        t: f64,
        node: NodeId,
        route: Vec<NodeId>,
    },
    Trigger {
        t: f64,
        edge: [NodeId; 2],
        frame: u64,
        progress: f64,
        probs: Vec<f64>,
    },
    Abort {
        t: f64,
        edge: [NodeId; 2],
        progress: f64,
    },
    Failure {
        t: f64,
        edge: [NodeId; 2],
        class: FailureClass,
        progress: f64,
    },
    Arrive {
        t: f64,
        edge: [NodeId; 2],
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub v: u32,
    pub task: usize,
    pub start: NodeId,
    pub goal: NodeId,
    pub agent: AgentKind,
    pub outcome: Outcome,
    /// Seconds from task start to completion or termination.
    pub duration: f64,
    /// Deployment clock at task start.
    pub t_start: f64,
    pub events: Vec<Event>,
}

impl EpisodeLog {
    pub fn failures(&self) -> impl Iterator<Item = (EdgeKey, FailureClass, f64)> + '_ {
        self.events.iter().filter_map(|e| match e {
            Event::Failure { edge, class, t, .. } => Some(((edge[0], edge[1]), *class, *t)),
            _ => None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeploymentLog {
    pub agent: AgentKind,
    pub seed: u64,
    pub tasks: Vec<Task>,
    pub episodes: Vec<EpisodeLog>,
}

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("{path}: line {line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("{path}: log mixes agents {first} and {other}")]
    MixedAgents {
        path: String,
        first: AgentKind,
        other: AgentKind,
    },
    #[error("{0}: empty log without a summary file; the agent is unknown")]
    UnknownAgent(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

/// Totals over a deployment, written next to the episode log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeploymentTotals {
    pub completed: usize,
    pub catastrophic_failure: usize,
    pub stuck: usize,
    pub failures: usize,
    pub duration: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeploymentSummary {
    pub v: u32,
    pub agent: AgentKind,
    pub seed: u64,
    pub tasks: Vec<Task>,
    /// Resolved experiment configuration, echoed for provenance.
    pub config: serde_json::Value,
    pub totals: DeploymentTotals,
}

/// `run.jsonl` -> `run.summary.json`.
pub fn summary_path(log_path: &Path) -> PathBuf {
    log_path.with_extension("summary.json")
}

impl DeploymentLog {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for episode in &self.episodes {
            out.push_str(&serde_json::to_string(episode).expect("episodes serialize"));
            out.push('\n');
        }
        out
    }

    pub fn totals(&self) -> DeploymentTotals {
        let count = |o| self.episodes.iter().filter(|e| e.outcome == o).count();
        DeploymentTotals {
            completed: count(Outcome::Completed),
            catastrophic_failure: count(Outcome::CatastrophicFailure),
            stuck: count(Outcome::Stuck),
            failures: self.episodes.iter().map(|e| e.failures().count()).sum(),
            duration: self.episodes.iter().map(|e| e.duration).sum(),
        }
    }

    pub fn summary(&self, config: serde_json::Value) -> DeploymentSummary {
        DeploymentSummary {
            v: LOG_VERSION,
            agent: self.agent,
            seed: self.seed,
            tasks: self.tasks.clone(),
            config,
            totals: self.totals(),
        }
    }

    /// Parses an episode log. `summary` supplies the agent and seed; without
    /// it they are taken from the episodes (seed 0).
    pub fn from_jsonl(text: &str, summary: Option<&DeploymentSummary>, path: &str) -> Result<Self, LogError> {
        let mut episodes: Vec<EpisodeLog> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let episode: EpisodeLog = serde_json::from_str(line).map_err(|e| LogError::Parse {
                path: path.to_string(),
                line: i + 1,
                message: e.to_string(),
            })?;
            if episode.v != LOG_VERSION {
                return Err(LogError::Parse {
                    path: path.to_string(),
                    line: i + 1,
                    message: format!("unsupported log version {}", episode.v),
                });
            }
            episodes.push(episode);
        }
        let agent = match (summary, episodes.first()) {
            (Some(s), _) => s.agent,
            (None, Some(e)) => e.agent,
            (None, None) => return Err(LogError::UnknownAgent(path.to_string())),
        };
        if let Some(e) = episodes.iter().find(|e| e.agent != agent) {
            return Err(LogError::MixedAgents {
                path: path.to_string(),
                first: agent,
                other: e.agent,
            });
        }
        let tasks = episodes
            .iter()
            .map(|e| Task {
                start: e.start,
                goal: e.goal,
            })
            .collect();
        Ok(Self {
            agent,
            seed: summary.map_or(0, |s| s.seed),
            tasks,
            episodes,
        })
    }

    /// Reads `path` and, if present, its summary file.
    pub fn load(path: impl AsRef<Path>) -> Result<(Self, Option<DeploymentSummary>), LogError> {
        let path = path.as_ref();
        let name = path.display().to_string();
        let io = |e: std::io::Error| LogError::Io {
            path: name.clone(),
            message: e.to_string(),
        };
        let text = std::fs::read_to_string(path).map_err(io)?;
        let sp = summary_path(path);
        let summary = match std::fs::read_to_string(&sp) {
            Ok(s) => Some(serde_json::from_str::<DeploymentSummary>(&s).map_err(|e| LogError::Parse {
                path: sp.display().to_string(),
                line: e.line(),
                message: e.to_string(),
            })?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
            Err(e) => return Err(io(e)),
        };
        let log = Self::from_jsonl(&text, summary.as_ref(), &name)?;
        Ok((log, summary))
    }
}

fn edge_pair(key: EdgeKey) -> [NodeId; 2] {
    [key.0, key.1]
}

/// Picks which hazard of `class` on the edge fires, weighted by its
/// failure probability, and returns its position.
fn failure_progress(env: &SimEnvironment, edge_pos: usize, class: FailureClass, u: f64) -> f64 {
    let candidates: Vec<_> = env.hazards_on(edge_pos).iter().filter(|h| h.class == class).collect();
    let total: f64 = candidates.iter().map(|h| h.failure_prob).sum();
    let mut acc = 0.0;
    for h in &candidates {
        acc += h.failure_prob / total;
        if u < acc {
            return h.position;
        }
    }
    candidates.last().map_or(u, |h| h.position)
}

/// Runs one task to completion, catastrophic failure, or stuck.
pub fn run_task(
    env: &SimEnvironment,
    state: &mut AgentState,
    task_index: usize,
    task: Task,
    rng: RngStream,
    config: &SimConfig,
    clock: f64,
) -> Result<EpisodeLog, SimError> {
    let map = env.map();
    let taxonomy = env.taxonomy();
    let mut node = task.start;
    let mut elapsed = 0.0;
    let mut events = Vec::new();
    let mut consecutive_ncf: HashMap<usize, u32> = HashMap::new();
    let mut steps = 0u32;
    let agent = state.kind();

    let finish = |outcome, elapsed, events| EpisodeLog {
        v: LOG_VERSION,
        task: task_index,
        start: task.start,
        goal: task.goal,
        agent,
        outcome,
        duration: elapsed,
        t_start: clock,
        events,
    };

    while node != task.goal {
        if steps >= config.step_cap {
            return Ok(finish(Outcome::Stuck, elapsed, events));
        }
        steps += 1;
        let step_rng = rng.child(steps as u64);

        let plan = Plan::solve(env, &state.edge_estimates(env, config), task.goal, config)?;
        let planned = plan.route(node)?;
        let next = planned[1];
        events.push(Event::Plan {
            t: clock + elapsed,
            node,
            route: planned,
        });
        let key = (node, next);
        let edge_pos = map.edge_position(key).expect("planned edges exist");
        let edge = map.edges()[edge_pos];
        let t_e = edge.traversal_time;

        let outcome_u: f64 = step_rng.child(0).rng().random();
        let drawn = env.ground_truth()[edge_pos].sample(outcome_u);
        let failure = taxonomy.is_failure(drawn).then_some(drawn);
        let fail_at = match failure {
            Some(class) => {
                let u: f64 = step_rng.child(1).rng().random();
                failure_progress(env, edge_pos, class, u)
            }
            None => f64::INFINITY,
        };

        if let AgentState::Cpip { belief, predictor } = state {
            let frames = TraversalFrames::new(
                env.hazards_on(edge_pos),
                env.fidelity(),
                &edge,
                taxonomy,
                config.epsilon,
                step_rng.child(2),
            )?;
            predictor.reset();
            let mut aborted = false;
            for k in 0..frames.len() {
                let progress = frames.progress(k);
                if progress >= fail_at {
                    break;
                }
                let estimate = predictor.ingest_frame(&frames.frame(k), &config.predictor)?;
                if !estimate.triggered {
                    continue;
                }
                // gated classes carry no evidence; the prior is a neutral observation
                let class_probs = estimate
                    .probs
                    .iter()
                    .map(|&p| if p > 0.0 { p } else { config.epsilon })
                    .collect();
                belief.update(&Observation::Perception { edge: key, class_probs }, config.delta)?;
                events.push(Event::Trigger {
                    t: clock + elapsed + progress * t_e,
                    edge: edge_pair(key),
                    frame: k,
                    progress,
                    probs: estimate.probs.clone(),
                });
                if config.mid_edge_abort {
                    let replanned = Plan::solve(env, &belief.snapshot_all(), task.goal, config)?;
                    let q = belief.transition_snapshot(key)?;
                    let back = replanned.value(node)?;
                    let ahead = replanned.value(next)?;
                    let costs = config.costs(taxonomy);
                    let mut keep_going = (1.0 - progress) * t_e + q.success() * ahead;
                    for c in taxonomy.failure_classes() {
                        keep_going += q.prob(c) * (costs.cost_of(taxonomy, c) + back);
                    }
                    let turn_back = progress * t_e + back;
                    if turn_back < keep_going {
                        elapsed += 2.0 * progress * t_e;
                        events.push(Event::Abort {
                            t: clock + elapsed,
                            edge: edge_pair(key),
                            progress,
                        });
                        aborted = true;
                    }
                }
                break;
            }
            if aborted {
                continue;
            }
        }

        match failure {
            Some(class) => {
                elapsed += fail_at * t_e;
                events.push(Event::Failure {
                    t: clock + elapsed,
                    edge: edge_pair(key),
                    class,
                    progress: fail_at,
                });
                state.observe_outcome(edge_pos, key, Some(class), env, config)?;
                if taxonomy.kind(class) == Some(ClassKind::Catastrophic) {
                    return Ok(finish(Outcome::CatastrophicFailure, elapsed, events));
                }
                elapsed += config.costs(taxonomy).cost_of(taxonomy, class);
                let streak = consecutive_ncf.entry(edge_pos).or_insert(0);
                *streak += 1;
                if *streak >= config.max_consecutive_ncf {
                    return Ok(finish(Outcome::Stuck, elapsed, events));
                }
            }
            None => {
                elapsed += t_e;
                events.push(Event::Arrive {
                    t: clock + elapsed,
                    edge: edge_pair(key),
                });
                state.observe_outcome(edge_pos, key, None, env, config)?;
                consecutive_ncf.remove(&edge_pos);
                node = next;
            }
        }
    }
    Ok(finish(Outcome::Completed, elapsed, events))
}

/// Runs the tasks in order with one persistent agent state.
pub fn run_deployment(
    env: &SimEnvironment,
    agent: AgentKind,
    tasks: &[Task],
    seed: u64,
    config: &SimConfig,
) -> Result<(DeploymentLog, AgentState), SimError> {
    config.validate(env.taxonomy())?;
    for (i, task) in tasks.iter().enumerate() {
        task.validate(env.map(), i)?;
    }
    let mut state = AgentState::new(agent, env, config)?;
    let root = RngStream::new(seed).child(0x5EED);
    let mut clock = 0.0;
    let mut episodes = Vec::with_capacity(tasks.len());
    for (i, task) in tasks.iter().enumerate() {
        let episode = run_task(env, &mut state, i, *task, root.child(i as u64), config, clock)?;
        clock += episode.duration;
        episodes.push(episode);
    }
    Ok((
        DeploymentLog {
            agent,
            seed,
            tasks: tasks.to_vec(),
            episodes,
        },
        state,
    ))
}
