//! Simulated deployment environments: a map, hidden hazards, sensor fidelity
//! and the ground-truth outcome distribution those hazards imply.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::classes::{ClassDist, ClassKind, Taxonomy};
use crate::introspection::{ground_truth, Hazard, IntrospectionError, SensorFidelity};
use crate::rng::RngStream;
use crate::topo_map::{Edge, EdgeRecord, MapError, Node, NodeId, NodeRecord, TopoMap};

#[derive(Debug, thiserror::Error)]
pub enum EnvError {
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Introspection(#[from] IntrospectionError),
    #[error("hazards[{index}]: edge {src}->{dst} is not in the map")]
    HazardEdge { index: usize, src: u32, dst: u32 },
    #[error("hazards[{index}]: class {class} not in taxonomy")]
    HazardClass { index: usize, class: &'static str },
    #[error("invalid environment parameter {field}: {message}")]
    InvalidParam { field: &'static str, message: String },
    #[error("could not {0} after {1} attempts")]
    GenerationFailed(&'static str, usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HazardRecord {
    pub src: u32,
    pub dst: u32,
    pub class: ClassKind,
    pub pos: f64,
    pub p: f64,
    pub vis: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnvFile {
    nodes: Vec<NodeRecord>,
    edges: Vec<EdgeRecord>,
    #[serde(default)]
    hazards: Vec<HazardRecord>,
    fidelity: SensorFidelity,
}

#[derive(Clone, Debug)]
pub struct SimEnvironment {
    map: TopoMap,
    taxonomy: Taxonomy,
    hazards: Vec<Hazard>,
    fidelity: SensorFidelity,
    // indexed by map edge position
    hazards_by_edge: Vec<Vec<Hazard>>,
    ground_truth: Vec<ClassDist>,
}

impl SimEnvironment {
    pub fn new(
        map: TopoMap,
        taxonomy: Taxonomy,
        hazards: Vec<Hazard>,
        fidelity: SensorFidelity,
    ) -> Result<Self, EnvError> {
        fidelity.validate()?;
        let mut hazards_by_edge = vec![Vec::new(); map.edge_count()];
        for (index, h) in hazards.iter().enumerate() {
            h.validate(&taxonomy)?;
            let pos = map.edge_position(h.edge).ok_or(EnvError::HazardEdge {
                index,
                src: h.edge.0 .0,
                dst: h.edge.1 .0,
            })?;
            hazards_by_edge[pos].push(h.clone());
        }
        let ground_truth = hazards_by_edge
            .iter()
            .map(|hs| ground_truth(hs.iter(), &taxonomy))
            .collect();
        Ok(Self {
            map,
            taxonomy,
            hazards,
            fidelity,
            hazards_by_edge,
            ground_truth,
        })
    }

    pub fn map(&self) -> &TopoMap {
        &self.map
    }

    pub fn taxonomy(&self) -> &Taxonomy {
        &self.taxonomy
    }

    pub fn hazards(&self) -> &[Hazard] {
        &self.hazards
    }

    pub fn fidelity(&self) -> SensorFidelity {
        self.fidelity
    }

    pub fn with_fidelity(mut self, fidelity: SensorFidelity) -> Result<Self, EnvError> {
        fidelity.validate()?;
        self.fidelity = fidelity;
        Ok(self)
    }

    /// Hazards on the edge at map position `edge`.
    pub fn hazards_on(&self, edge: usize) -> &[Hazard] {
        &self.hazards_by_edge[edge]
    }

    /// True outcome distributions, in map edge order.
    pub fn ground_truth(&self) -> &[ClassDist] {
        &self.ground_truth
    }

    pub fn is_hazardous(&self, edge: usize) -> bool {
        !self.hazards_by_edge[edge].is_empty()
    }

    pub fn from_json_str(text: &str) -> Result<Self, EnvError> {
        let file: EnvFile = serde_json::from_str(text).map_err(MapError::from_json)?;
        let map = TopoMap::from_records(&file.nodes, &file.edges)?;
        let taxonomy = Taxonomy::standard();
        let mut hazards = Vec::with_capacity(file.hazards.len());
        for (index, h) in file.hazards.iter().enumerate() {
            let class = taxonomy.first_of_kind(h.class).filter(|c| taxonomy.is_failure(*c)).ok_or(
                EnvError::HazardClass {
                    index,
                    class: h.class.label(),
                },
            )?;
            hazards.push(Hazard {
                edge: (NodeId(h.src), NodeId(h.dst)),
                class,
                position: h.pos,
                failure_prob: h.p,
                visibility: h.vis,
            });
        }
        Self::new(map, taxonomy, hazards, file.fidelity)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EnvError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| MapError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        let hazards = self
            .hazards
            .iter()
            .map(|h| HazardRecord {
                src: h.edge.0 .0,
                dst: h.edge.1 .0,
                class: self.taxonomy.kind(h.class).expect("validated class"),
                pos: h.position,
                p: h.failure_prob,
                vis: h.visibility,
            })
            .collect();
        let file = EnvFile {
            nodes: self.map.node_records(),
            edges: self.map.edge_records(),
            hazards,
            fidelity: self.fidelity,
        };
        serde_json::to_string_pretty(&file).expect("environment serializes")
    }
}

/// Parameters of the random environment generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvParams {
    pub node_count: usize,
    /// Probability that any ordered node pair is connected.
    pub density: f64,
    pub hazard_count: usize,
    /// Fraction of hazards that are catastrophic.
    pub cf_fraction: f64,
    pub hazard_p: [f64; 2],
    pub hazard_pos: [f64; 2],
    pub hazard_vis: [f64; 2],
    /// Traversal time range in seconds.
    pub edge_time: [f64; 2],
    pub fidelity: SensorFidelity,
}

impl Default for EnvParams {
    fn default() -> Self {
        Self {
            node_count: 20,
            density: 0.3,
            hazard_count: 10,
            cf_fraction: 0.4,
            hazard_p: [0.3, 0.9],
            hazard_pos: [0.4, 0.9],
            hazard_vis: [0.15, 0.35],
            edge_time: [30.0, 60.0],
            fidelity: SensorFidelity::default(),
        }
    }
}

fn check_range(field: &'static str, r: [f64; 2], lo: f64, hi: f64) -> Result<(), EnvError> {
    if r[0] <= r[1] && r[0] >= lo && r[1] <= hi {
        Ok(())
    } else {
        Err(EnvError::InvalidParam {
            field,
            message: format!("range {:?} must be ordered within [{lo}, {hi}]", r),
        })
    }
}

impl EnvParams {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.node_count < 2 {
            return Err(EnvError::InvalidParam {
                field: "node_count",
                message: "need at least 2 nodes".into(),
            });
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(EnvError::InvalidParam {
                field: "density",
                message: format!("{} not in (0, 1]", self.density),
            });
        }
        if !(0.0..=1.0).contains(&self.cf_fraction) {
            return Err(EnvError::InvalidParam {
                field: "cf_fraction",
                message: format!("{} not in [0, 1]", self.cf_fraction),
            });
        }
        check_range("hazard_p", self.hazard_p, f64::MIN_POSITIVE, 1.0)?;
        check_range("hazard_pos", self.hazard_pos, 0.0, 1.0)?;
        check_range("hazard_vis", self.hazard_vis, f64::MIN_POSITIVE, 1.0)?;
        check_range("edge_time", self.edge_time, f64::MIN_POSITIVE, f64::MAX)?;
        self.fidelity.validate()?;
        Ok(())
    }
}

const MAX_ATTEMPTS: usize = 1000;

fn uniform(rng: &mut impl Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

/// Draws a strongly connected random map and places hazards only where the
/// hazard-free edges keep the map strongly connected, so every task always
/// has a safe route.
pub fn generate_environment(params: &EnvParams, seed: u64) -> Result<SimEnvironment, EnvError> {
    params.validate()?;
    let root = RngStream::new(seed).child(0xE7);
    let nodes: Vec<Node> = (0..params.node_count as u32)
        .map(|id| Node { id: NodeId(id), xy: None })
        .collect();

    let mut map = None;
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = root.keyed(&[0, attempt as u64]).rng();
        let mut edges = Vec::new();
        for s in 0..params.node_count as u32 {
            for d in 0..params.node_count as u32 {
                if s == d {
                    continue;
                }
                let keep = rng.random::<f64>() < params.density;
                let t = uniform(&mut rng, params.edge_time);
                if keep {
                    edges.push(Edge {
                        source: NodeId(s),
                        target: NodeId(d),
                        traversal_time: t,
                    });
                }
            }
        }
        let candidate = TopoMap::new(nodes.clone(), edges)?;
        if candidate.strongly_connected_avoiding(|_| false) {
            map = Some(candidate);
            break;
        }
    }
    let map = map.ok_or(EnvError::GenerationFailed("draw a strongly connected map", MAX_ATTEMPTS))?;

    let taxonomy = Taxonomy::standard();
    let cf = taxonomy.first_of_kind(ClassKind::Catastrophic).expect("standard taxonomy");
    let ncf = taxonomy.first_of_kind(ClassKind::NonCatastrophic).expect("standard taxonomy");

    let mut rng = root.child(1).rng();
    let mut order: Vec<usize> = (0..map.edge_count()).collect();
    order.shuffle(&mut rng);
    let mut blocked = vec![false; map.edge_count()];
    let mut hazards = Vec::new();
    for e in order {
        if hazards.len() == params.hazard_count {
            break;
        }
        blocked[e] = true;
        let safe = map.strongly_connected_avoiding(|edge| blocked[map.edge_position(edge.key()).unwrap()]);
        if !safe {
            blocked[e] = false;
            continue;
        }
        let edge = map.edges()[e];
        let class = if rng.random::<f64>() < params.cf_fraction { cf } else { ncf };
        hazards.push(Hazard {
            edge: edge.key(),
            class,
            position: uniform(&mut rng, params.hazard_pos),
            failure_prob: uniform(&mut rng, params.hazard_p),
            visibility: uniform(&mut rng, params.hazard_vis),
        });
    }
    if hazards.len() < params.hazard_count {
        return Err(EnvError::InvalidParam {
            field: "hazard_count",
            message: format!(
                "only {} edges can carry a hazard while keeping a safe route between every pair",
                hazards.len()
            ),
        });
    }

    SimEnvironment::new(map, taxonomy, hazards, params.fidelity)
}
