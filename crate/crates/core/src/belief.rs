//! Per-edge failure beliefs kept as one-vs-rest log-odds per failure class.
//!
//! Each traversal observation contributes `logit(p(f | z)) - l0`, where `l0`
//! is the prior log-odds, so an observation equal to the prior is neutral.
//! Classes are tracked independently; normalization against the success
//! class happens only when a transition snapshot is read out.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::classes::{ClassDist, FailureClass, Taxonomy};
use crate::topo_map::{EdgeKey, NodeId, TopoMap};

pub const LOG_ODDS_LIMIT: f64 = 50.0;
/// Smallest success probability a snapshot will report.
pub const MIN_SUCCESS: f64 = 1e-3;
pub const DEFAULT_EPSILON: f64 = 0.05;
pub const DEFAULT_DELTA: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BeliefError {
    #[error("prior epsilon {epsilon} invalid for {classes} classes: need 0 < epsilon < 0.5 and (L-1)*epsilon < 1")]
    InvalidPrior { epsilon: f64, classes: usize },
    #[error("intervention coefficient {delta} outside (1/L, 1) for L = {classes}")]
    InvalidDelta { delta: f64, classes: usize },
    #[error("unknown edge {}->{}", .0.0, .0.1)]
    UnknownEdge(EdgeKey),
    #[error("class {0} is not a failure class")]
    NotAFailureClass(usize),
    #[error("perception probabilities must be {expected} values in [0, 1], got {got:?}")]
    BadProbabilities { expected: usize, got: Vec<f64> },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeliefPrior {
    pub epsilon: f64,
}

impl BeliefPrior {
    pub fn new(epsilon: f64, taxonomy: &Taxonomy) -> Result<Self, BeliefError> {
        let prior = Self { epsilon };
        prior.validate(taxonomy)?;
        Ok(prior)
    }

    pub fn validate(&self, taxonomy: &Taxonomy) -> Result<(), BeliefError> {
        let eps = self.epsilon;
        let failures = taxonomy.failure_count() as f64;
        if !(eps > 0.0 && eps < 0.5 && failures * eps < 1.0) {
            return Err(BeliefError::InvalidPrior {
                epsilon: eps,
                classes: taxonomy.len(),
            });
        }
        Ok(())
    }

    pub fn log_odds(&self) -> f64 {
        logit(self.epsilon)
    }
}

impl Default for BeliefPrior {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
        }
    }
}

/// Evidence about one traversal of an edge.
#[derive(Clone, Debug, PartialEq)]
pub enum Observation {
    /// A supervisor reported that a failure of `class` occurred.
    Intervention { edge: EdgeKey, class: FailureClass },
    /// Predicted probability of each failure class.
    Perception { edge: EdgeKey, class_probs: Vec<f64> },
}

impl Observation {
    pub fn edge(&self) -> EdgeKey {
        match self {
            Observation::Intervention { edge, .. } | Observation::Perception { edge, .. } => *edge,
        }
    }
}

pub fn logit(p: f64) -> f64 {
    p.ln() - (1.0 - p).ln()
}

/// `1 - 1 / (1 + exp(l))`.
pub fn sigmoid(l: f64) -> f64 {
    1.0 - 1.0 / (1.0 + l.exp())
}

/// Inverse observation likelihood of an intervention on class `observed`.
pub fn intervention_likelihood(taxonomy: &Taxonomy, observed: FailureClass, class: FailureClass, delta: f64) -> f64 {
    if class == observed {
        delta
    } else {
        (1.0 - delta) / (taxonomy.len() - 1) as f64
    }
}

/// JSON checkpoint row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeliefRow {
    pub edge: [u32; 2],
    pub class: usize,
    pub log_odds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FailureBelief {
    taxonomy: Taxonomy,
    prior: BeliefPrior,
    prior_log_odds: f64,
    keys: Vec<EdgeKey>,
    index: BTreeMap<EdgeKey, usize>,
    // keys.len() * failure_count, row-major by edge
    log_odds: Vec<f64>,
    traversal_count: Vec<u64>,
}

/// Every edge and failure class starts at the prior log-odds.
pub fn init_beliefs(map: &TopoMap, taxonomy: &Taxonomy, prior: BeliefPrior) -> Result<FailureBelief, BeliefError> {
    prior.validate(taxonomy)?;
    let keys: Vec<EdgeKey> = map.edges().iter().map(|e| e.key()).collect();
    let index = keys.iter().enumerate().map(|(i, k)| (*k, i)).collect();
    let l0 = prior.log_odds();
    Ok(FailureBelief {
        taxonomy: taxonomy.clone(),
        prior,
        prior_log_odds: l0,
        log_odds: vec![l0; keys.len() * taxonomy.failure_count()],
        traversal_count: vec![0; keys.len()],
        keys,
        index,
    })
}

impl FailureBelief {
    pub fn taxonomy(&self) -> &Taxonomy {
        &self.taxonomy
    }

    pub fn prior(&self) -> BeliefPrior {
        self.prior
    }

    pub fn edges(&self) -> &[EdgeKey] {
        &self.keys
    }

    pub fn entry_count(&self) -> usize {
        self.log_odds.len()
    }

    fn slot(&self, edge: EdgeKey, class: FailureClass) -> Result<usize, BeliefError> {
        let e = *self.index.get(&edge).ok_or(BeliefError::UnknownEdge(edge))?;
        if !self.taxonomy.is_failure(class) {
            return Err(BeliefError::NotAFailureClass(class.0));
        }
        Ok(e * self.taxonomy.failure_count() + class.0)
    }

    pub fn log_odds(&self, edge: EdgeKey, class: FailureClass) -> Result<f64, BeliefError> {
        Ok(self.log_odds[self.slot(edge, class)?])
    }

    pub fn traversal_count(&self, edge: EdgeKey) -> Result<u64, BeliefError> {
        let e = *self.index.get(&edge).ok_or(BeliefError::UnknownEdge(edge))?;
        Ok(self.traversal_count[e])
    }

    pub fn record_traversal(&mut self, edge: EdgeKey) -> Result<(), BeliefError> {
        let e = *self.index.get(&edge).ok_or(BeliefError::UnknownEdge(edge))?;
        self.traversal_count[e] += 1;
        Ok(())
    }

    /// Inverse observation likelihood `p(f_i | z)` for every failure class.
    pub fn observation_likelihoods(&self, obs: &Observation, delta: f64) -> Result<Vec<f64>, BeliefError> {
        let classes = self.taxonomy.len();
        match obs {
            Observation::Intervention { class, .. } => {
                if !self.taxonomy.is_failure(*class) {
                    return Err(BeliefError::NotAFailureClass(class.0));
                }
                if !(delta > 1.0 / classes as f64 && delta < 1.0) {
                    return Err(BeliefError::InvalidDelta { delta, classes });
                }
                Ok(self
                    .taxonomy
                    .failure_classes()
                    .map(|c| intervention_likelihood(&self.taxonomy, *class, c, delta))
                    .collect())
            }
            Observation::Perception { class_probs, .. } => {
                let expected = self.taxonomy.failure_count();
                if class_probs.len() != expected || class_probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
                    return Err(BeliefError::BadProbabilities {
                        expected,
                        got: class_probs.clone(),
                    });
                }
                Ok(class_probs.clone())
            }
        }
    }

    /// Applies one observation to its edge; other edges are untouched.
    pub fn update(&mut self, obs: &Observation, delta: f64) -> Result<(), BeliefError> {
        let edge = obs.edge();
        let base = self.slot(edge, FailureClass(0))?;
        let likelihoods = self.observation_likelihoods(obs, delta)?;
        for (i, p) in likelihoods.into_iter().enumerate() {
            let l = &mut self.log_odds[base + i];
            *l = (logit(p) + *l - self.prior_log_odds).clamp(-LOG_ODDS_LIMIT, LOG_ODDS_LIMIT);
        }
        Ok(())
    }

    /// Functional form of [`FailureBelief::update`].
    pub fn updated(&self, obs: &Observation, delta: f64) -> Result<Self, BeliefError> {
        let mut next = self.clone();
        next.update(obs, delta)?;
        Ok(next)
    }

    pub fn belief_prob(&self, edge: EdgeKey, class: FailureClass) -> Result<f64, BeliefError> {
        Ok(sigmoid(self.log_odds(edge, class)?))
    }

    /// Outcome distribution for planning: failure beliefs plus the success
    /// remainder, rescaled so success never drops below [`MIN_SUCCESS`].
    pub fn transition_snapshot(&self, edge: EdgeKey) -> Result<ClassDist, BeliefError> {
        let base = self.slot(edge, FailureClass(0))?;
        Ok(self.snapshot_at(base))
    }

    fn snapshot_at(&self, base: usize) -> ClassDist {
        let failures = self.taxonomy.failure_count();
        let mut probs: Vec<f64> = self.log_odds[base..base + failures].iter().map(|&l| sigmoid(l)).collect();
        let mass: f64 = probs.iter().sum();
        if mass > 1.0 - MIN_SUCCESS {
            let scale = (1.0 - MIN_SUCCESS) / mass;
            probs.iter_mut().for_each(|p| *p *= scale);
        }
        let success = 1.0 - probs.iter().sum::<f64>();
        probs.push(success);
        ClassDist(probs)
    }

    /// Snapshots for every edge, in map edge order.
    pub fn snapshot_all(&self) -> Vec<ClassDist> {
        let failures = self.taxonomy.failure_count();
        (0..self.keys.len()).map(|e| self.snapshot_at(e * failures)).collect()
    }

    pub fn to_rows(&self) -> Vec<BeliefRow> {
        let failures = self.taxonomy.failure_count();
        self.keys
            .iter()
            .enumerate()
            .flat_map(|(e, key)| {
                (0..failures).map(move |c| (e, key, c))
            })
            .map(|(e, key, c)| BeliefRow {
                edge: [key.0 .0, key.1 .0],
                class: c,
                log_odds: self.log_odds[e * failures + c],
            })
            .collect()
    }

    /// Restores checkpointed log-odds; edges absent from `rows` keep the prior.
    pub fn apply_rows(&mut self, rows: &[BeliefRow]) -> Result<(), BeliefError> {
        for row in rows {
            let slot = self.slot((NodeId(row.edge[0]), NodeId(row.edge[1])), FailureClass(row.class))?;
            self.log_odds[slot] = row.log_odds.clamp(-LOG_ODDS_LIMIT, LOG_ODDS_LIMIT);
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_rows()).expect("belief rows serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topo_map::{Edge, Node};

    fn line_map(edges: usize) -> TopoMap {
        let nodes = (0..=edges as u32).map(|i| Node { id: NodeId(i), xy: None }).collect();
        let edges = (0..edges as u32)
            .map(|i| Edge {
                source: NodeId(i),
                target: NodeId(i + 1),
                traversal_time: 1.0,
            })
            .collect();
        TopoMap::new(nodes, edges).unwrap()
    }

    const AB: EdgeKey = (NodeId(0), NodeId(1));
    const CF: FailureClass = FailureClass(0);
    const NCF: FailureClass = FailureClass(1);

    fn fresh() -> FailureBelief {
        init_beliefs(&line_map(1), &Taxonomy::standard(), BeliefPrior { epsilon: 0.05 }).unwrap()
    }

    fn perceive(p: f64) -> Observation {
        Observation::Perception {
            edge: AB,
            class_probs: vec![p, 0.05],
        }
    }

    #[test]
    fn prior_log_odds() {
        let b = fresh();
        let l = b.log_odds(AB, CF).unwrap();
        assert!((l - (0.05f64 / 0.95).ln()).abs() < 1e-15);
        assert!((l + 2.9444).abs() < 1e-4);
        assert!((b.belief_prob(AB, CF).unwrap() - 0.05).abs() < 1e-12);
    }

    #[test]
    fn prior_validation() {
        let tax = Taxonomy::standard();
        assert!(BeliefPrior::new(0.5, &tax).is_err());
        assert!(BeliefPrior::new(0.0, &tax).is_err());
        assert!(BeliefPrior::new(0.49, &tax).is_ok());
    }

    #[test]
    fn entry_count() {
        let b = init_beliefs(&line_map(8), &Taxonomy::standard(), BeliefPrior::default()).unwrap();
        assert_eq!(b.entry_count(), 16);
    }

    #[test]
    fn neutral_observation_is_bit_identical() {
        let mut b = fresh();
        b.update(&perceive(0.9), DEFAULT_DELTA).unwrap();
        let before = b.clone();
        b.update(&perceive(0.05), DEFAULT_DELTA).unwrap();
        assert_eq!(b, before);
    }

    #[test]
    fn repeated_perception() {
        let mut b = fresh();
        b.update(&perceive(0.9), DEFAULT_DELTA).unwrap();
        let l1 = b.log_odds(AB, CF).unwrap();
        assert!((l1 - 9f64.ln()).abs() < 1e-12);
        assert!((b.belief_prob(AB, CF).unwrap() - 0.9).abs() < 1e-12);
        b.update(&perceive(0.9), DEFAULT_DELTA).unwrap();
        let l2 = b.log_odds(AB, CF).unwrap();
        let expected = 2.0 * 9f64.ln() - (0.05f64 / 0.95).ln();
        assert!((l2 - expected).abs() < 1e-12);
        assert!((l2 - 7.3389).abs() < 1e-4);
        assert!((b.belief_prob(AB, CF).unwrap() - 0.99935).abs() < 1e-5);
    }

    #[test]
    fn intervention_case_structure() {
        let b = fresh();
        let obs = Observation::Intervention { edge: AB, class: CF };
        assert_eq!(b.observation_likelihoods(&obs, 0.9).unwrap(), vec![0.9, (1.0 - 0.9) / 2.0]);
        let after = b.updated(&obs, 0.9).unwrap();
        assert!((after.belief_prob(AB, CF).unwrap() - 0.9).abs() < 1e-12);
        assert!((after.belief_prob(AB, NCF).unwrap() - 0.05).abs() < 1e-12);
        assert!(b.updated(&obs, 0.2).is_err());
        assert!(b.updated(&obs, 1.0).is_err());
        let bad = Observation::Intervention {
            edge: AB,
            class: FailureClass(2),
        };
        assert_eq!(b.updated(&bad, 0.9), Err(BeliefError::NotAFailureClass(2)));
    }

    #[test]
    fn update_errors() {
        let b = fresh();
        let unknown = Observation::Perception {
            edge: (NodeId(1), NodeId(0)),
            class_probs: vec![0.1, 0.1],
        };
        assert!(matches!(b.updated(&unknown, 0.9), Err(BeliefError::UnknownEdge(_))));
        let bad = Observation::Perception {
            edge: AB,
            class_probs: vec![1.2, 0.1],
        };
        assert!(matches!(b.updated(&bad, 0.9), Err(BeliefError::BadProbabilities { .. })));
    }

    #[test]
    fn only_observed_edge_changes() {
        let map = line_map(3);
        let mut b = init_beliefs(&map, &Taxonomy::standard(), BeliefPrior::default()).unwrap();
        b.update(
            &Observation::Perception {
                edge: (NodeId(1), NodeId(2)),
                class_probs: vec![0.7, 0.2],
            },
            0.9,
        )
        .unwrap();
        let l0 = BeliefPrior::default().log_odds();
        assert_eq!(b.log_odds(AB, CF).unwrap(), l0);
        assert_eq!(b.log_odds((NodeId(2), NodeId(3)), NCF).unwrap(), l0);
        assert!(b.log_odds((NodeId(1), NodeId(2)), CF).unwrap() > l0);
    }

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(-2.9444) - 0.05).abs() < 1e-4);
        let s = sigmoid(LOG_ODDS_LIMIT);
        assert!(s > 1.0 - 1e-15 && s <= 1.0);
    }

    #[test]
    fn clamped_saturation() {
        let mut b = fresh();
        let certain = |p: f64| Observation::Perception {
            edge: AB,
            class_probs: vec![p, 0.0],
        };
        for _ in 0..10 {
            b.update(&certain(1.0), 0.9).unwrap();
        }
        assert_eq!(b.log_odds(AB, CF).unwrap(), LOG_ODDS_LIMIT);
        b.update(&certain(0.0), 0.9).unwrap();
        assert_eq!(b.log_odds(AB, CF).unwrap(), -LOG_ODDS_LIMIT);
    }

    #[test]
    fn snapshot_at_prior() {
        let s = fresh().transition_snapshot(AB).unwrap();
        assert!((s.0[0] - 0.05).abs() < 1e-12);
        assert!((s.0[1] - 0.05).abs() < 1e-12);
        assert!((s.0[2] - 0.90).abs() < 1e-12);
    }

    #[test]
    fn snapshot_rescales_overfull_mass() {
        let mut b = fresh();
        b.apply_rows(&[
            BeliefRow {
                edge: [0, 1],
                class: 0,
                log_odds: logit(0.7),
            },
            BeliefRow {
                edge: [0, 1],
                class: 1,
                log_odds: logit(0.6),
            },
        ])
        .unwrap();
        let s = b.transition_snapshot(AB).unwrap();
        assert!((s.0[0] - 0.7 * 0.999 / 1.3).abs() < 1e-12);
        assert!((s.0[1] - 0.6 * 0.999 / 1.3).abs() < 1e-12);
        assert!((s.0[2] - 0.001).abs() < 1e-12);
        assert!((s.total() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rows_round_trip() {
        let mut b = fresh();
        b.update(&perceive(0.3), 0.9).unwrap();
        let json = b.to_json();
        let rows: Vec<BeliefRow> = serde_json::from_str(&json).unwrap();
        let mut restored = fresh();
        restored.apply_rows(&rows).unwrap();
        assert_eq!(restored.to_rows(), b.to_rows());
        assert!(json.starts_with(r#"[{"edge":[0,1],"class":0,"log_odds":"#));
    }
}
