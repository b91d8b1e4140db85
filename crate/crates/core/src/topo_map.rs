//! Directed topological navigation graph.
//!
//! Nodes are locations, edges are traversable connections with an expected
//! traversal time. The map is immutable once validated and every query
//! returns edges ordered by `(source, target)`, so anything built on top of
//! it breaks ties the same way on every run.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

/// Opaque node identifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// `(source, target)` pair identifying an edge within a map.
pub type EdgeKey = (NodeId, NodeId);

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Node {
    pub id: NodeId,
    /// Reporting metadata only; planning never reads it.
    pub xy: Option<[f64; 2]>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub source: NodeId,
    pub target: NodeId,
    /// Expected traversal time in seconds.
    pub traversal_time: f64,
}

impl Edge {
    pub fn key(&self) -> EdgeKey {
        (self.source, self.target)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum MapError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("nodes[{index}]: duplicate node id {id}")]
    DuplicateNode { index: usize, id: NodeId },
    #[error("edges[{index}]: dangling endpoint {node}")]
    DanglingEndpoint { index: usize, node: NodeId },
    #[error("edges[{index}]: non-positive traversal time {time}")]
    NonPositiveTime { index: usize, time: f64 },
    #[error("edges[{index}]: duplicate edge {src}->{dst}")]
    DuplicateEdge { index: usize, src: NodeId, dst: NodeId },
    #[error("edges[{index}]: self loop on node {node}")]
    SelfLoop { index: usize, node: NodeId },
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl MapError {
    pub(crate) fn from_json(err: serde_json::Error) -> Self {
        MapError::Parse {
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }
}

/// On-disk node record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeRecord {
    pub id: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xy: Option<[f64; 2]>,
}

/// On-disk edge record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeRecord {
    pub src: u32,
    pub dst: u32,
    pub t: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MapFile {
    nodes: Vec<NodeRecord>,
    edges: Vec<EdgeRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TopoMap {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    node_index: BTreeMap<NodeId, usize>,
    edge_index: BTreeMap<EdgeKey, usize>,
    // out_ranges[i] is the slice of `edges` leaving nodes[i]
    out_ranges: Vec<(usize, usize)>,
}

impl TopoMap {
    /// Validates and indexes a node and edge list.
    pub fn new(nodes: Vec<Node>, edges: Vec<Edge>) -> Result<Self, MapError> {
        let mut node_index = BTreeMap::new();
        for (index, node) in nodes.iter().enumerate() {
            if node_index.insert(node.id, index).is_some() {
                return Err(MapError::DuplicateNode { index, id: node.id });
            }
        }
        let mut seen = BTreeSet::new();
        for (index, e) in edges.iter().enumerate() {
            for node in [e.source, e.target] {
                if !node_index.contains_key(&node) {
                    return Err(MapError::DanglingEndpoint { index, node });
                }
            }
            if e.source == e.target {
                return Err(MapError::SelfLoop { index, node: e.source });
            }
            if e.traversal_time <= 0.0 || !e.traversal_time.is_finite() {
                return Err(MapError::NonPositiveTime {
                    index,
                    time: e.traversal_time,
                });
            }
            if !seen.insert(e.key()) {
                return Err(MapError::DuplicateEdge {
                    index,
                    src: e.source,
                    dst: e.target,
                });
            }
        }

        let mut nodes = nodes;
        nodes.sort_by_key(|n| n.id);
        let node_index: BTreeMap<NodeId, usize> =
            nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect();
        let mut edges = edges;
        edges.sort_by_key(|e| e.key());
        let edge_index = edges.iter().enumerate().map(|(i, e)| (e.key(), i)).collect();

        let mut out_ranges = vec![(0, 0); nodes.len()];
        let mut cursor = 0;
        for (i, node) in nodes.iter().enumerate() {
            let start = cursor;
            while cursor < edges.len() && edges[cursor].source == node.id {
                cursor += 1;
            }
            out_ranges[i] = (start, cursor);
        }

        Ok(Self {
            nodes,
            edges,
            node_index,
            edge_index,
            out_ranges,
        })
    }

    pub fn from_records(nodes: &[NodeRecord], edges: &[EdgeRecord]) -> Result<Self, MapError> {
        let nodes = nodes
            .iter()
            .map(|n| Node {
                id: NodeId(n.id),
                xy: n.xy,
            })
            .collect();
        let edges = edges
            .iter()
            .map(|e| Edge {
                source: NodeId(e.src),
                target: NodeId(e.dst),
                traversal_time: e.t,
            })
            .collect();
        Self::new(nodes, edges)
    }

    pub fn node_records(&self) -> Vec<NodeRecord> {
        self.nodes
            .iter()
            .map(|n| NodeRecord { id: n.id.0, xy: n.xy })
            .collect()
    }

    pub fn edge_records(&self) -> Vec<EdgeRecord> {
        self.edges
            .iter()
            .map(|e| EdgeRecord {
                src: e.source.0,
                dst: e.target.0,
                t: e.traversal_time,
            })
            .collect()
    }

    pub fn from_json_str(text: &str) -> Result<Self, MapError> {
        let file: MapFile = serde_json::from_str(text).map_err(MapError::from_json)?;
        Self::from_records(&file.nodes, &file.edges)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MapError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| MapError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        let file = MapFile {
            nodes: self.node_records(),
            edges: self.edge_records(),
        };
        serde_json::to_string_pretty(&file).expect("map records always serialize")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), MapError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_string()).map_err(|source| MapError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Nodes in ascending id order.
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().map(|n| n.id)
    }

    /// Edges in ascending `(source, target)` order.
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn contains(&self, node: NodeId) -> bool {
        self.node_index.contains_key(&node)
    }

    pub fn node_position(&self, node: NodeId) -> Option<usize> {
        self.node_index.get(&node).copied()
    }

    pub fn edge_position(&self, key: EdgeKey) -> Option<usize> {
        self.edge_index.get(&key).copied()
    }

    pub fn edge(&self, key: EdgeKey) -> Option<&Edge> {
        self.edge_position(key).map(|i| &self.edges[i])
    }

    /// Edges leaving `node`, sorted by target id.
    pub fn out_edges(&self, node: NodeId) -> Result<&[Edge], MapError> {
        let i = self.node_position(node).ok_or(MapError::UnknownNode(node))?;
        let (start, end) = self.out_ranges[i];
        Ok(&self.edges[start..end])
    }

    /// Whether a directed path leads from `from` to `to`.
    pub fn reachable(&self, from: NodeId, to: NodeId) -> Result<bool, MapError> {
        self.reachable_avoiding(from, to, |_| false)
    }

    /// Reachability over the edges for which `blocked` returns false.
    pub fn reachable_avoiding(
        &self,
        from: NodeId,
        to: NodeId,
        blocked: impl Fn(&Edge) -> bool,
    ) -> Result<bool, MapError> {
        let start = self.node_position(from).ok_or(MapError::UnknownNode(from))?;
        let goal = self.node_position(to).ok_or(MapError::UnknownNode(to))?;
        let mut visited = vec![false; self.nodes.len()];
        let mut queue = VecDeque::from([start]);
        visited[start] = true;
        while let Some(i) = queue.pop_front() {
            if i == goal {
                return Ok(true);
            }
            let (lo, hi) = self.out_ranges[i];
            for e in &self.edges[lo..hi] {
                if blocked(e) {
                    continue;
                }
                let j = self.node_index[&e.target];
                if !visited[j] {
                    visited[j] = true;
                    queue.push_back(j);
                }
            }
        }
        Ok(false)
    }

    /// True when every node reaches every other node.
    pub fn strongly_connected_avoiding(&self, blocked: impl Fn(&Edge) -> bool) -> bool {
        let Some(first) = self.nodes.first() else {
            return true;
        };
        // forward and backward sweeps from one node cover strong connectivity
        let forward = self.sweep(first.id, false, &blocked);
        let backward = self.sweep(first.id, true, &blocked);
        forward.iter().all(|&v| v) && backward.iter().all(|&v| v)
    }

    fn sweep(&self, root: NodeId, reverse: bool, blocked: &impl Fn(&Edge) -> bool) -> Vec<bool> {
        let mut visited = vec![false; self.nodes.len()];
        let root = self.node_index[&root];
        visited[root] = true;
        let mut stack = vec![root];
        while let Some(i) = stack.pop() {
            let id = self.nodes[i].id;
            for e in &self.edges {
                if blocked(e) {
                    continue;
                }
                let (from, to) = if reverse {
                    (e.target, e.source)
                } else {
                    (e.source, e.target)
                };
                if from == id {
                    let j = self.node_index[&to];
                    if !visited[j] {
                        visited[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        visited
    }
}
