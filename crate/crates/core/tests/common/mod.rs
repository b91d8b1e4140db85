//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use competence_nav::classes::{ClassDist, Taxonomy};
use competence_nav::env::EnvParams;
use competence_nav::sim::SimConfig;
use competence_nav::topo_map::{Edge, Node, NodeId, TopoMap};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn map_from(nodes: u32, edges: &[(u32, u32, f64)]) -> TopoMap {
    TopoMap::new(
        (0..nodes).map(|i| Node { id: NodeId(i), xy: None }).collect(),
        edges
            .iter()
            .map(|&(s, d, t)| Edge {
                source: NodeId(s),
                target: NodeId(d),
                traversal_time: t,
            })
            .collect(),
    )
    .unwrap()
}

/// Random directed map; integer traversal times make exact ties common.
pub fn random_map(rng: &mut impl Rng, nodes: u32, density: f64, integer_times: bool) -> TopoMap {
    let mut edges = Vec::new();
    for s in 0..nodes {
        for d in 0..nodes {
            if s != d && rng.random_bool(density) {
                let t = if integer_times {
                    rng.random_range(1..20) as f64
                } else {
                    rng.random_range(1.0..20.0)
                };
                edges.push((s, d, t));
            }
        }
    }
    map_from(nodes, &edges)
}

pub fn all_success(map: &TopoMap) -> Vec<ClassDist> {
    vec![Taxonomy::standard().certain_success(); map.edge_count()]
}

/// Shortest time to `goal` from every node (Bellman-Ford on plain vectors).
pub fn distances_to(map: &TopoMap, goal: NodeId) -> Vec<f64> {
    let n = map.node_count();
    let pos = |id: NodeId| map.nodes().iter().position(|x| x.id == id).unwrap();
    let mut dist = vec![f64::INFINITY; n];
    dist[pos(goal)] = 0.0;
    for _ in 0..n {
        for e in map.edges() {
            let cand = e.traversal_time + dist[pos(e.target)];
            if cand < dist[pos(e.source)] {
                dist[pos(e.source)] = cand;
            }
        }
    }
    dist
}

/// Greedy descent on the distance field, lowest target id on ties.
pub fn shortest_route(map: &TopoMap, from: NodeId, goal: NodeId) -> Option<Vec<NodeId>> {
    let dist = distances_to(map, goal);
    let pos = |id: NodeId| map.nodes().iter().position(|x| x.id == id).unwrap();
    if dist[pos(from)].is_infinite() {
        return None;
    }
    let mut route = vec![from];
    let mut at = from;
    while at != goal {
        let next = map
            .edges()
            .iter()
            .filter(|e| e.source == at)
            .filter(|e| e.traversal_time + dist[pos(e.target)] == dist[pos(at)])
            .map(|e| e.target)
            .min()?;
        route.push(next);
        at = next;
    }
    Some(route)
}

/// Posterior of a binary variable after independent observations, each
/// reported as an inverse likelihood `p_t` relative to prior `eps`, computed
/// one step at a time in probability space.
pub fn sequential_bayes(eps: f64, ps: &[f64]) -> f64 {
    let mut b = eps;
    for &p in ps {
        let yes = b * p / eps;
        let no = (1.0 - b) * (1.0 - p) / (1.0 - eps);
        b = yes / (yes + no);
    }
    b
}

/// Environment and simulator settings used for the agent comparisons.
pub fn comparison_params() -> EnvParams {
    EnvParams {
        node_count: 20,
        hazard_count: 30,
        cf_fraction: 0.8,
        ..EnvParams::default()
    }
}

pub fn comparison_sim() -> SimConfig {
    SimConfig {
        mid_edge_abort: true,
        ..SimConfig::default()
    }
}

pub fn distinct<T: Ord + Clone>(items: &[T]) -> usize {
    items.iter().cloned().collect::<BTreeSet<_>>().len()
}
