//! Synthetic introspective perception.
//!
//! Hidden hazards sit at a fixed progress along an edge and become visible
//! over a window just before it. While the agent traverses the edge this
//! module produces the frame stream a trained predictor would emit: global
//! class probabilities raised by visible hazards, localized detections at the
//! hazard position with probability `tpr`, and Poisson false detections.

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::belief::Observation;
use crate::classes::{ClassDist, FailureClass, Taxonomy};
use crate::predictor::{Detection, FrameEstimate};
use crate::rng::RngStream;
use crate::topo_map::{Edge, EdgeKey};

#[derive(Clone, Debug, PartialEq)]
pub struct Hazard {
    pub edge: EdgeKey,
    pub class: FailureClass,
    /// Progress along the edge in `[0, 1]`.
    pub position: f64,
    /// Probability in `(0, 1]` that this hazard causes a failure per traversal.
    pub failure_prob: f64,
    /// Fraction of the edge before `position` from which it is perceivable.
    pub visibility: f64,
}

impl Hazard {
    pub fn validate(&self, taxonomy: &Taxonomy) -> Result<(), IntrospectionError> {
        let ok = taxonomy.is_failure(self.class)
            && (0.0..=1.0).contains(&self.position)
            && self.failure_prob > 0.0
            && self.failure_prob <= 1.0
            && self.visibility > 0.0
            && self.visibility <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(IntrospectionError::InvalidHazard(format!("{self:?}")))
        }
    }

    pub fn visible_at(&self, progress: f64) -> bool {
        progress >= self.position - self.visibility && progress <= self.position
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorFidelity {
    /// Per-frame probability of detecting a visible hazard.
    pub tpr: f64,
    /// Expected false detections per frame.
    pub fpr: f64,
    #[serde(rename = "noise_sd")]
    pub global_noise_sd: f64,
    /// Frames per second.
    pub frame_rate: f64,
}

impl Default for SensorFidelity {
    fn default() -> Self {
        Self {
            tpr: 0.95,
            fpr: 0.05,
            global_noise_sd: 0.05,
            frame_rate: 5.0,
        }
    }
}

impl SensorFidelity {
    pub fn perfect(frame_rate: f64) -> Self {
        Self {
            tpr: 1.0,
            fpr: 0.0,
            global_noise_sd: 0.0,
            frame_rate,
        }
    }

    pub fn validate(&self) -> Result<(), IntrospectionError> {
        let ok = (0.0..=1.0).contains(&self.tpr)
            && self.fpr >= 0.0
            && self.fpr.is_finite()
            && self.global_noise_sd >= 0.0
            && self.global_noise_sd.is_finite()
            && self.frame_rate > 0.0
            && self.frame_rate.is_finite();
        if ok {
            Ok(())
        } else {
            Err(IntrospectionError::InvalidFidelity(format!("{self:?}")))
        }
    }

    pub fn frame_count(&self, edge: &Edge) -> u64 {
        (edge.traversal_time * self.frame_rate).ceil() as u64
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum IntrospectionError {
    #[error("hazard on {}->{} does not belong to edge {}->{}", .hazard.0, .hazard.1, .edge.0, .edge.1)]
    EdgeMismatch { hazard: EdgeKey, edge: EdgeKey },
    #[error("invalid hazard {0}")]
    InvalidHazard(String),
    #[error("invalid sensor fidelity {0}")]
    InvalidFidelity(String),
    #[error("class {0} is not a failure class")]
    NotAFailureClass(usize),
}

/// Image-plane row used for detections of a class.
pub fn detection_row(class: FailureClass, failure_classes: usize) -> f64 {
    (class.0 + 1) as f64 / (failure_classes + 1) as f64
}

/// Frame generator for one traversal of one edge.
#[derive(Clone, Debug)]
pub struct TraversalFrames<'a> {
    hazards: Vec<&'a Hazard>,
    fidelity: SensorFidelity,
    failure_classes: usize,
    base: f64,
    frames: u64,
    rng: RngStream,
}

impl<'a> TraversalFrames<'a> {
    /// `base` is the global probability reported for a class with nothing
    /// visible (the belief prior).
    pub fn new(
        hazards: &'a [Hazard],
        fidelity: SensorFidelity,
        edge: &Edge,
        taxonomy: &Taxonomy,
        base: f64,
        rng: RngStream,
    ) -> Result<Self, IntrospectionError> {
        fidelity.validate()?;
        let mut on_edge = Vec::with_capacity(hazards.len());
        for h in hazards {
            if h.edge != edge.key() {
                return Err(IntrospectionError::EdgeMismatch {
                    hazard: h.edge,
                    edge: edge.key(),
                });
            }
            h.validate(taxonomy)?;
            on_edge.push(h);
        }
        Ok(Self {
            hazards: on_edge,
            fidelity,
            failure_classes: taxonomy.failure_count(),
            base,
            frames: fidelity.frame_count(edge),
            rng,
        })
    }

    pub fn len(&self) -> u64 {
        self.frames
    }

    pub fn is_empty(&self) -> bool {
        self.frames == 0
    }

    /// Edge progress at which frame `k` is captured.
    pub fn progress(&self, k: u64) -> f64 {
        k as f64 / self.frames as f64
    }

    pub fn frame(&self, k: u64) -> FrameEstimate {
        let u = self.progress(k);
        let mut rng = self.rng.child(k).rng();
        let mut global = vec![self.base; self.failure_classes];
        let mut detections = Vec::new();

        for h in &self.hazards {
            if !h.visible_at(u) {
                continue;
            }
            global[h.class.0] += h.failure_prob;
            if rng.random::<f64>() < self.fidelity.tpr {
                detections.push(Detection {
                    class: h.class,
                    position: [h.position, detection_row(h.class, self.failure_classes)],
                    score: h.failure_prob,
                });
            }
        }

        if self.fidelity.fpr > 0.0 {
            let poisson = Poisson::new(self.fidelity.fpr).expect("validated rate");
            let count = poisson.sample(&mut rng) as u64;
            for _ in 0..count {
                let class = FailureClass(rng.random_range(0..self.failure_classes));
                let position = [rng.random::<f64>(), rng.random::<f64>()];
                detections.push(Detection {
                    class,
                    position,
                    score: rng.random::<f64>(),
                });
            }
        }

        if self.fidelity.global_noise_sd > 0.0 {
            let noise = Normal::new(0.0, self.fidelity.global_noise_sd).expect("validated sd");
            for g in &mut global {
                *g += noise.sample(&mut rng);
            }
        }
        for g in &mut global {
            *g = g.clamp(0.0, 1.0);
        }

        FrameEstimate {
            frame_index: k,
            global_probs: global,
            detections,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = FrameEstimate> + '_ {
        (0..self.frames).map(|k| self.frame(k))
    }
}

/// The whole frame stream of one traversal.
pub fn frames_for_traversal(
    hazards: &[Hazard],
    fidelity: SensorFidelity,
    edge: &Edge,
    taxonomy: &Taxonomy,
    base: f64,
    rng: RngStream,
) -> Result<Vec<FrameEstimate>, IntrospectionError> {
    let gen = TraversalFrames::new(hazards, fidelity, edge, taxonomy, base, rng)?;
    Ok(gen.iter().collect())
}

/// True outcome distribution of an edge given the hazards on it. Per class,
/// `1 - prod(1 - p_h)`; if the classes together exceed one they are scaled
/// down proportionally and success is zero.
pub fn ground_truth<'a>(hazards: impl IntoIterator<Item = &'a Hazard>, taxonomy: &Taxonomy) -> ClassDist {
    let mut survive = vec![1.0; taxonomy.failure_count()];
    for h in hazards {
        survive[h.class.0] *= 1.0 - h.failure_prob;
    }
    let mut probs: Vec<f64> = survive.iter().map(|s| 1.0 - s).collect();
    let mass: f64 = probs.iter().sum();
    if mass > 1.0 {
        probs.iter_mut().for_each(|p| *p /= mass);
    }
    let success = (1.0 - probs.iter().sum::<f64>()).max(0.0);
    probs.push(success);
    ClassDist(probs)
}

/// Intervention signal issued when a failure of `class` occurs on `edge`.
pub fn intervention_for_failure(
    edge: EdgeKey,
    class: FailureClass,
    taxonomy: &Taxonomy,
) -> Result<Observation, IntrospectionError> {
    if !taxonomy.is_failure(class) {
        return Err(IntrospectionError::NotAFailureClass(class.0));
    }
    Ok(Observation::Intervention { edge, class })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topo_map::NodeId;

    const CF: FailureClass = FailureClass(0);
    const NCF: FailureClass = FailureClass(1);

    fn edge(t: f64) -> Edge {
        Edge {
            source: NodeId(0),
            target: NodeId(1),
            traversal_time: t,
        }
    }

    fn hazard(class: FailureClass, position: f64, p: f64, visibility: f64) -> Hazard {
        Hazard {
            edge: (NodeId(0), NodeId(1)),
            class,
            position,
            failure_prob: p,
            visibility,
        }
    }

    #[test]
    fn hazard_free_frames_are_flat() {
        let tax = Taxonomy::standard();
        let frames = frames_for_traversal(&[], SensorFidelity::perfect(5.0), &edge(3.0), &tax, 0.05, RngStream::new(1))
            .unwrap();
        assert_eq!(frames.len(), 15);
        for f in frames {
            assert_eq!(f.global_probs, vec![0.05, 0.05]);
            assert!(f.detections.is_empty());
        }
    }

    #[test]
    fn perfect_detection_window() {
        // 10 frames at progress k/10; visible over [0.3, 0.7]
        let tax = Taxonomy::standard();
        let h = [hazard(CF, 0.7, 0.5, 0.4)];
        let frames = frames_for_traversal(&h, SensorFidelity::perfect(1.0), &edge(10.0), &tax, 0.05, RngStream::new(9))
            .unwrap();
        let hit: Vec<u64> = frames
            .iter()
            .filter(|f| !f.detections.is_empty())
            .map(|f| f.frame_index)
            .collect();
        assert_eq!(hit, vec![3, 4, 5, 6, 7]);
        for f in &frames[3..=7] {
            assert_eq!(f.detections[0].position, [0.7, 1.0 / 3.0]);
            assert_eq!(f.global_probs, vec![0.55, 0.05]);
        }
    }

    #[test]
    fn frame_count_rounds_up() {
        let fid = SensorFidelity::perfect(5.0);
        assert_eq!(fid.frame_count(&edge(10.01)), 51);
        assert_eq!(fid.frame_count(&edge(10.0)), 50);
    }

    #[test]
    fn mismatched_hazard_rejected() {
        let tax = Taxonomy::standard();
        let mut h = hazard(CF, 0.5, 0.5, 0.2);
        h.edge = (NodeId(1), NodeId(0));
        assert!(matches!(
            frames_for_traversal(&[h], SensorFidelity::default(), &edge(1.0), &tax, 0.05, RngStream::new(0)),
            Err(IntrospectionError::EdgeMismatch { .. })
        ));
    }

    #[test]
    fn deterministic_streams() {
        let tax = Taxonomy::standard();
        let h = [hazard(NCF, 0.6, 0.4, 0.3)];
        let fid = SensorFidelity {
            tpr: 0.7,
            fpr: 0.5,
            global_noise_sd: 0.1,
            frame_rate: 5.0,
        };
        let a = frames_for_traversal(&h, fid, &edge(20.0), &tax, 0.05, RngStream::new(3).keyed(&[4, 5])).unwrap();
        let b = frames_for_traversal(&h, fid, &edge(20.0), &tax, 0.05, RngStream::new(3).keyed(&[4, 5])).unwrap();
        assert_eq!(a, b);
        let c = frames_for_traversal(&h, fid, &edge(20.0), &tax, 0.05, RngStream::new(3).keyed(&[4, 6])).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn ground_truth_composition() {
        let tax = Taxonomy::standard();
        let gt = ground_truth(&[hazard(CF, 0.5, 0.5, 0.1), hazard(CF, 0.6, 0.5, 0.1), hazard(NCF, 0.2, 0.1, 0.1)], &tax);
        assert!((gt.0[0] - 0.75).abs() < 1e-15);
        assert!((gt.0[1] - 0.1).abs() < 1e-15);
        assert!((gt.0[2] - 0.15).abs() < 1e-12);
        let saturated = ground_truth(&[hazard(CF, 0.5, 1.0, 0.1), hazard(NCF, 0.5, 1.0, 0.1)], &tax);
        assert_eq!(saturated.0, vec![0.5, 0.5, 0.0]);
        assert_eq!(ground_truth(&[], &tax), tax.certain_success());
    }

    #[test]
    fn interventions() {
        let tax = Taxonomy::standard();
        let e = (NodeId(0), NodeId(1));
        assert_eq!(
            intervention_for_failure(e, CF, &tax).unwrap(),
            Observation::Intervention { edge: e, class: CF }
        );
        assert_eq!(
            intervention_for_failure(e, NCF, &tax).unwrap(),
            Observation::Intervention { edge: e, class: NCF }
        );
        assert!(intervention_for_failure(e, tax.success(), &tax).is_err());
    }
}
