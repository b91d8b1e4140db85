//! Stochastic shortest path model over a topological map.
//!
//! States are the map nodes plus one failure state per `(edge, failure class)`.
//! Traversing an edge costs its traversal time and lands either on the target
//! node (success) or in the matching failure state; the single recovery action
//! of a failure state returns to the edge's source node. The goal node is
//! absorbing at zero cost.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::classes::{ClassDist, ClassKind, FailureClass, Taxonomy};
use crate::topo_map::{EdgeKey, NodeId, TopoMap};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SspState {
    Node(NodeId),
    Failure { edge: EdgeKey, class: FailureClass },
}

/// Ordered by `(kind, target id)`: traversals before recovery, then by target.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SspAction {
    Traverse(EdgeKey),
    Recover(FailureClass),
}

#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct CostParams {
    /// Expected recovery cost (s) per failure class. Entries for catastrophic
    /// classes are ignored in favour of `catastrophic_penalty`.
    pub recovery_cost: Vec<f64>,
    pub catastrophic_penalty: f64,
}

impl CostParams {
    /// Same recovery cost for every non-catastrophic class.
    pub fn new(taxonomy: &Taxonomy, recovery_cost: f64, catastrophic_penalty: f64) -> Self {
        let recovery_cost = taxonomy
            .failure_classes()
            .map(|c| match taxonomy.kind(c) {
                Some(ClassKind::Catastrophic) => catastrophic_penalty,
                _ => recovery_cost,
            })
            .collect();
        Self {
            recovery_cost,
            catastrophic_penalty,
        }
    }

    pub fn cost_of(&self, taxonomy: &Taxonomy, class: FailureClass) -> f64 {
        match taxonomy.kind(class) {
            Some(ClassKind::Catastrophic) => self.catastrophic_penalty,
            _ => self.recovery_cost[class.0],
        }
    }

    pub fn validate(&self, taxonomy: &Taxonomy) -> Result<(), PlanError> {
        if self.recovery_cost.len() != taxonomy.failure_count() {
            return Err(PlanError::InvalidCosts(format!(
                "expected {} recovery costs, got {}",
                taxonomy.failure_count(),
                self.recovery_cost.len()
            )));
        }
        if self.catastrophic_penalty <= 0.0 || !self.catastrophic_penalty.is_finite() {
            return Err(PlanError::InvalidCosts("catastrophic_penalty must be positive".into()));
        }
        for c in taxonomy.failure_classes() {
            let cost = self.recovery_cost[c.0];
            if cost <= 0.0 || !cost.is_finite() {
                return Err(PlanError::InvalidCosts(format!(
                    "recovery cost of class {} must be positive",
                    c.0
                )));
            }
            if taxonomy.kind(c) == Some(ClassKind::NonCatastrophic) && cost > self.catastrophic_penalty {
                return Err(PlanError::InvalidCosts(format!(
                    "catastrophic_penalty {} is below recovery cost {} of class {}",
                    self.catastrophic_penalty, cost, c.0
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlanError {
    #[error("goal node {0} is not in the map")]
    GoalNotInMap(NodeId),
    #[error("belief snapshot covers {got} edges, map has {expected}")]
    MissingEdgeBelief { expected: usize, got: usize },
    #[error("belief for edge {src}->{dst} is not a normalized distribution over {classes} classes")]
    NotNormalized { src: NodeId, dst: NodeId, classes: usize },
    #[error("invalid cost parameters: {0}")]
    InvalidCosts(String),
    #[error("value iteration did not converge in {iterations} sweeps (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("value iteration diverged (value {value:e} at sweep {iterations})")]
    Diverged { iterations: usize, value: f64 },
    #[error("goal unreachable from {0:?}")]
    GoalUnreachable(SspState),
    #[error("unknown state {0:?}")]
    UnknownState(SspState),
    #[error("policy is improper from {0:?}: goal is not reached with probability one")]
    ImproperPolicy(SspState),
}

/// One `(state, action)` row: immediate cost and successor distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub action: SspAction,
    pub cost: f64,
    /// `(state index, probability)`, zero-probability successors omitted.
    pub outcomes: Vec<(usize, f64)>,
}

#[derive(Clone, Debug)]
pub struct SspModel {
    taxonomy: Taxonomy,
    states: Vec<SspState>,
    index: HashMap<SspState, usize>,
    rows: Vec<Vec<Transition>>,
    goal: usize,
}

/// Builds the planning model for reaching `goal` under the given per-edge
/// outcome distributions (`snapshot[i]` belongs to `map.edges()[i]`).
pub fn build_ssp(
    map: &TopoMap,
    taxonomy: &Taxonomy,
    snapshot: &[ClassDist],
    costs: &CostParams,
    goal: NodeId,
) -> Result<SspModel, PlanError> {
    let goal_pos = map.node_position(goal).ok_or(PlanError::GoalNotInMap(goal))?;
    if snapshot.len() != map.edge_count() {
        return Err(PlanError::MissingEdgeBelief {
            expected: map.edge_count(),
            got: snapshot.len(),
        });
    }
    costs.validate(taxonomy)?;
    let failures = taxonomy.failure_count();
    for (e, dist) in map.edges().iter().zip(snapshot) {
        if dist.0.len() != taxonomy.len() || !dist.is_normalized(1e-9) {
            return Err(PlanError::NotNormalized {
                src: e.source,
                dst: e.target,
                classes: taxonomy.len(),
            });
        }
    }

    let n = map.node_count();
    let mut states: Vec<SspState> = map.node_ids().map(SspState::Node).collect();
    for e in map.edges() {
        for class in taxonomy.failure_classes() {
            states.push(SspState::Failure {
                edge: e.key(),
                class,
            });
        }
    }
    let index: HashMap<SspState, usize> = states.iter().enumerate().map(|(i, s)| (*s, i)).collect();

    let mut rows = vec![Vec::new(); states.len()];
    for (ei, (e, dist)) in map.edges().iter().zip(snapshot).enumerate() {
        let src = map.node_position(e.source).expect("validated map");
        let dst = map.node_position(e.target).expect("validated map");
        let row = if src == goal_pos {
            Transition {
                action: SspAction::Traverse(e.key()),
                cost: 0.0,
                outcomes: vec![(goal_pos, 1.0)],
            }
        } else {
            let mut outcomes = Vec::with_capacity(failures + 1);
            for class in taxonomy.failure_classes() {
                let p = dist.prob(class);
                if p > 0.0 {
                    outcomes.push((n + ei * failures + class.0, p));
                }
            }
            if dist.success() > 0.0 {
                outcomes.push((dst, dist.success()));
            }
            Transition {
                action: SspAction::Traverse(e.key()),
                cost: e.traversal_time,
                outcomes,
            }
        };
        rows[src].push(row);

        for class in taxonomy.failure_classes() {
            rows[n + ei * failures + class.0].push(Transition {
                action: SspAction::Recover(class),
                cost: costs.cost_of(taxonomy, class),
                outcomes: vec![(src, 1.0)],
            });
        }
    }

    Ok(SspModel {
        taxonomy: taxonomy.clone(),
        states,
        index,
        rows,
        goal: goal_pos,
    })
}

impl SspModel {
    pub fn taxonomy(&self) -> &Taxonomy {
        &self.taxonomy
    }

    pub fn states(&self) -> &[SspState] {
        &self.states
    }

    pub fn state_index(&self, state: &SspState) -> Option<usize> {
        self.index.get(state).copied()
    }

    /// Admissible actions of a state, in tie-break order.
    pub fn transitions(&self, state: usize) -> &[Transition] {
        &self.rows[state]
    }

    pub fn goal_index(&self) -> usize {
        self.goal
    }

    pub fn goal(&self) -> SspState {
        self.states[self.goal]
    }

    pub fn is_goal(&self, state: usize) -> bool {
        state == self.goal
    }

    pub fn transition(&self, state: &SspState, action: &SspAction) -> Option<&Transition> {
        let i = self.state_index(state)?;
        self.rows[i].iter().find(|t| t.action == *action)
    }

    /// States with a positive-probability path to the goal under some policy.
    fn goal_reaching(&self) -> Vec<bool> {
        let mut reach = vec![false; self.states.len()];
        reach[self.goal] = true;
        let mut changed = true;
        while changed {
            changed = false;
            for s in 0..self.states.len() {
                if reach[s] {
                    continue;
                }
                if self.rows[s]
                    .iter()
                    .any(|t| t.outcomes.iter().any(|&(j, p)| p > 0.0 && reach[j] && j != s))
                {
                    reach[s] = true;
                    changed = true;
                }
            }
        }
        reach
    }

    fn q_value(&self, t: &Transition, values: &[f64]) -> f64 {
        t.cost + t.outcomes.iter().map(|&(j, p)| p * values[j]).sum::<f64>()
    }
}

/// Expected cost-to-goal per state; `f64::INFINITY` where the goal cannot be
/// reached.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueFunction {
    values: Vec<f64>,
}

impl ValueFunction {
    pub fn by_index(&self, state: usize) -> f64 {
        self.values[state]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, model: &SspModel, state: &SspState) -> Result<f64, PlanError> {
        let i = model.state_index(state).ok_or(PlanError::UnknownState(*state))?;
        let v = self.values[i];
        if v.is_finite() {
            Ok(v)
        } else {
            Err(PlanError::GoalUnreachable(*state))
        }
    }
}

/// Chosen row index per state; `None` at the goal and at dead states.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Policy {
    choice: Vec<Option<usize>>,
}

impl Policy {
    pub fn from_choices(choice: Vec<Option<usize>>) -> Self {
        Self { choice }
    }

    pub fn choice(&self, state: usize) -> Option<usize> {
        self.choice[state]
    }

    pub fn action(&self, model: &SspModel, state: &SspState) -> Option<SspAction> {
        let i = model.state_index(state)?;
        self.choice[i].map(|a| model.rows[i][a].action)
    }
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub values: ValueFunction,
    pub policy: Policy,
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub tolerance: f64,
    pub max_iters: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iters: 100_000,
        }
    }
}

const DIVERGENCE_BOUND: f64 = 1e15;

/// Gauss-Seidel value iteration from `V = 0`, followed by greedy policy
/// extraction with ties going to the earliest row.
pub fn value_iteration(model: &SspModel, tolerance: f64, max_iters: usize) -> Result<Solution, PlanError> {
    let reach = model.goal_reaching();
    let mut values: Vec<f64> = reach.iter().map(|&r| if r { 0.0 } else { f64::INFINITY }).collect();

    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        residual = 0.0;
        for s in 0..values.len() {
            if s == model.goal || !reach[s] {
                continue;
            }
            let best = model.rows[s]
                .iter()
                .map(|t| model.q_value(t, &values))
                .fold(f64::INFINITY, f64::min);
            residual = residual.max((best - values[s]).abs());
            values[s] = best;
            if best > DIVERGENCE_BOUND {
                return Err(PlanError::Diverged {
                    iterations,
                    value: best,
                });
            }
        }
        if residual < tolerance {
            break;
        }
    }
    if residual >= tolerance {
        return Err(PlanError::NotConverged {
            iterations,
            residual,
        });
    }

    let policy = greedy_policy(model, &values);
    Ok(Solution {
        values: ValueFunction { values },
        policy,
        iterations,
        residual,
    })
}

pub fn greedy_policy(model: &SspModel, values: &[f64]) -> Policy {
    let choice = (0..model.states.len())
        .map(|s| {
            if s == model.goal || !values[s].is_finite() {
                return None;
            }
            let mut best: Option<(usize, f64)> = None;
            for (a, t) in model.rows[s].iter().enumerate() {
                let q = model.q_value(t, values);
                match best {
                    Some((_, b)) if q >= b - 1e-12 * b.abs().max(1.0) => {}
                    _ if !q.is_finite() => {}
                    _ => best = Some((a, q)),
                }
            }
            best.map(|(a, _)| a)
        })
        .collect();
    Policy { choice }
}

/// Expected cumulative cost of following `policy` from `start`, by solving
/// the policy's linear Bellman system directly.
pub fn expected_cost(policy: &Policy, model: &SspModel, start: &SspState) -> Result<f64, PlanError> {
    let start_idx = model.state_index(start).ok_or(PlanError::UnknownState(*start))?;
    if start_idx == model.goal {
        return Ok(0.0);
    }

    // states the policy can visit from start
    let mut order = vec![start_idx];
    let mut slot = HashMap::from([(start_idx, 0usize)]);
    let mut cursor = 0;
    while cursor < order.len() {
        let s = order[cursor];
        cursor += 1;
        if s == model.goal {
            continue;
        }
        let a = policy.choice[s].ok_or(PlanError::ImproperPolicy(model.states[s]))?;
        for &(j, p) in &model.rows[s][a].outcomes {
            if p > 0.0 && !slot.contains_key(&j) {
                slot.insert(j, order.len());
                order.push(j);
            }
        }
    }

    // every visited state must keep a path to the goal
    let mut reaches = vec![false; order.len()];
    let mut changed = true;
    while changed {
        changed = false;
        for (k, &s) in order.iter().enumerate() {
            if reaches[k] {
                continue;
            }
            let ok = s == model.goal
                || model.rows[s][policy.choice[s].unwrap()]
                    .outcomes
                    .iter()
                    .any(|&(j, p)| p > 0.0 && reaches[slot[&j]]);
            if ok {
                reaches[k] = true;
                changed = true;
            }
        }
    }
    if let Some(k) = reaches.iter().position(|r| !r) {
        return Err(PlanError::ImproperPolicy(model.states[order[k]]));
    }

    let n = order.len();
    let mut a = DMatrix::<f64>::identity(n, n);
    let mut b = DVector::<f64>::zeros(n);
    for (k, &s) in order.iter().enumerate() {
        if s == model.goal {
            continue;
        }
        let t = &model.rows[s][policy.choice[s].unwrap()];
        b[k] = t.cost;
        for &(j, p) in &t.outcomes {
            if j != model.goal {
                a[(k, slot[&j])] -= p;
            }
        }
    }
    let solution = a
        .lu()
        .solve(&b)
        .ok_or(PlanError::ImproperPolicy(*start))?;
    let v = solution[0];
    if !v.is_finite() || v < 0.0 {
        return Err(PlanError::ImproperPolicy(*start));
    }
    Ok(v)
}

/// Node sequence obtained by following the policy's traversals under
/// success from `from` until the goal.
pub fn route(model: &SspModel, policy: &Policy, from: NodeId) -> Result<Vec<NodeId>, PlanError> {
    let mut state = SspState::Node(from);
    let mut nodes = vec![from];
    let cap = model.states.len();
    while model.state_index(&state) != Some(model.goal) {
        match policy.action(model, &state) {
            Some(SspAction::Traverse((_, next))) => {
                nodes.push(next);
                state = SspState::Node(next);
            }
            _ => return Err(PlanError::GoalUnreachable(state)),
        }
        if nodes.len() > cap {
            return Err(PlanError::ImproperPolicy(SspState::Node(from)));
        }
    }
    Ok(nodes)
}

#[derive(Serialize)]
struct DebugRow {
    action: String,
    cost: f64,
    outcomes: Vec<(String, f64)>,
}

#[derive(Serialize)]
struct DebugState {
    state: String,
    value: Option<f64>,
    action: Option<String>,
    rows: Vec<DebugRow>,
}

#[derive(Serialize)]
struct DebugDump {
    goal: String,
    states: Vec<DebugState>,
}

fn state_label(s: &SspState) -> String {
    match s {
        SspState::Node(n) => format!("n{n}"),
        SspState::Failure { edge, class } => format!("f({}->{},{})", edge.0, edge.1, class.0),
    }
}

fn action_label(a: &SspAction) -> String {
    match a {
        SspAction::Traverse((s, d)) => format!("go({s}->{d})"),
        SspAction::Recover(c) => format!("recover({})", c.0),
    }
}

/// JSON dump of states, transition rows and (optionally) a solution.
pub fn debug_json(model: &SspModel, solution: Option<&Solution>) -> serde_json::Value {
    let states = model
        .states
        .iter()
        .enumerate()
        .map(|(i, s)| DebugState {
            state: state_label(s),
            value: solution.map(|sol| sol.values.by_index(i)).filter(|v| v.is_finite()),
            action: solution
                .and_then(|sol| sol.policy.choice(i))
                .map(|a| action_label(&model.rows[i][a].action)),
            rows: model.rows[i]
                .iter()
                .map(|t| DebugRow {
                    action: action_label(&t.action),
                    cost: t.cost,
                    outcomes: t
                        .outcomes
                        .iter()
                        .map(|&(j, p)| (state_label(&model.states[j]), p))
                        .collect(),
                })
                .collect(),
        })
        .collect();
    serde_json::to_value(DebugDump {
        goal: state_label(&model.goal()),
        states,
    })
    .expect("debug dump serializes")
}
