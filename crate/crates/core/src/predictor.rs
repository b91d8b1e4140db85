//! Competence predictor post-processing.
//!
//! Two perception branches feed this stage every frame: a global vector of
//! failure-class probabilities and a list of localized detections. Global
//! probabilities are mean-filtered over a short window, detections are
//! chained into tracklets, and a class probability is only passed through
//! while that class has an active tracklet (strict consensus).

use std::collections::VecDeque;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::classes::FailureClass;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Detection {
    pub class: FailureClass,
    pub position: [f64; 2],
    pub score: f64,
}

/// One frame of raw predictor output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameEstimate {
    pub frame_index: u64,
    /// One entry per failure class.
    pub global_probs: Vec<f64>,
    #[serde(default)]
    pub detections: Vec<Detection>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tracklet {
    pub class: FailureClass,
    pub last_position: [f64; 2],
    pub consecutive_hits: u32,
    pub frames_since_hit: u64,
}

impl Tracklet {
    pub fn is_active(&self, config: &PredictorConfig) -> bool {
        self.consecutive_hits >= config.min_hits && self.frames_since_hit <= config.max_gap
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorConfig {
    /// Mean-filter window in frames.
    pub window: usize,
    /// Hits before a tracklet becomes active.
    pub min_hits: u32,
    /// Frames a tracklet survives without a hit.
    pub max_gap: u64,
    /// Association radius.
    pub radius: f64,
    /// A consensus probability above this triggers a belief update.
    pub trigger: f64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            window: 5,
            min_hits: 3,
            max_gap: 2,
            radius: 0.1,
            trigger: 0.3,
        }
    }
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<(), PredictorError> {
        if self.window == 0 {
            return Err(PredictorError::InvalidConfig("window must be at least 1".into()));
        }
        if self.min_hits == 0 {
            return Err(PredictorError::InvalidConfig("min_hits must be at least 1".into()));
        }
        if self.radius <= 0.0 || !self.radius.is_finite() {
            return Err(PredictorError::InvalidConfig("radius must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.trigger) {
            return Err(PredictorError::InvalidConfig("trigger must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompetenceEstimate {
    /// Post-consensus probability per failure class.
    pub probs: Vec<f64>,
    pub triggered: bool,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PredictorError {
    #[error("frame index {got} does not follow {previous}")]
    NonMonotonicFrame { previous: u64, got: u64 },
    #[error("frame {frame}: {message}")]
    BadFrame { frame: u64, message: String },
    #[error("invalid predictor config: {0}")]
    InvalidConfig(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictorState {
    failure_classes: usize,
    window: VecDeque<Vec<f64>>,
    tracklets: Vec<Tracklet>,
    last_frame: Option<u64>,
}

impl PredictorState {
    pub fn new(failure_classes: usize) -> Self {
        Self {
            failure_classes,
            window: VecDeque::new(),
            tracklets: Vec::new(),
            last_frame: None,
        }
    }

    pub fn reset(&mut self) {
        self.window.clear();
        self.tracklets.clear();
        self.last_frame = None;
    }

    pub fn tracklets(&self) -> &[Tracklet] {
        &self.tracklets
    }

    /// Per-class mean over the current window.
    pub fn filtered(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.failure_classes];
        if self.window.is_empty() {
            return mean;
        }
        for frame in &self.window {
            for (m, p) in mean.iter_mut().zip(frame) {
                *m += p;
            }
        }
        let n = self.window.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    fn check(&self, frame: &FrameEstimate) -> Result<(), PredictorError> {
        let bad = |message: String| PredictorError::BadFrame {
            frame: frame.frame_index,
            message,
        };
        if let Some(previous) = self.last_frame {
            if frame.frame_index <= previous {
                return Err(PredictorError::NonMonotonicFrame {
                    previous,
                    got: frame.frame_index,
                });
            }
        }
        if frame.global_probs.len() != self.failure_classes {
            return Err(bad(format!(
                "expected {} global probabilities, got {}",
                self.failure_classes,
                frame.global_probs.len()
            )));
        }
        if frame.global_probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(bad("global probability outside [0, 1]".into()));
        }
        for d in &frame.detections {
            if d.class.0 >= self.failure_classes {
                return Err(bad(format!("detection class {} is not a failure class", d.class.0)));
            }
            if !d.position.iter().all(|x| x.is_finite()) {
                return Err(bad("non-finite detection position".into()));
            }
            if !(0.0..=1.0).contains(&d.score) {
                return Err(bad("detection score outside [0, 1]".into()));
            }
        }
        Ok(())
    }

    /// Consumes one frame and returns the consensus estimate for it.
    pub fn ingest_frame(
        &mut self,
        frame: &FrameEstimate,
        config: &PredictorConfig,
    ) -> Result<CompetenceEstimate, PredictorError> {
        self.check(frame)?;
        let elapsed = self.last_frame.map_or(0, |prev| frame.frame_index - prev);
        self.last_frame = Some(frame.frame_index);

        self.window.push_back(frame.global_probs.clone());
        while self.window.len() > config.window {
            self.window.pop_front();
        }

        for t in &mut self.tracklets {
            t.frames_since_hit += elapsed;
        }
        self.tracklets.retain(|t| t.frames_since_hit <= config.max_gap);

        let mut detections: Vec<&Detection> = frame.detections.iter().collect();
        detections.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then(a.position[0].total_cmp(&b.position[0]))
                .then(a.position[1].total_cmp(&b.position[1]))
                .then(a.class.cmp(&b.class))
        });
        let mut matched = vec![false; self.tracklets.len()];
        for d in detections {
            let nearest = self
                .tracklets
                .iter()
                .enumerate()
                .filter(|(i, t)| !matched[*i] && t.class == d.class)
                .map(|(i, t)| (i, distance(&t.last_position, &d.position)))
                .filter(|(_, dist)| *dist <= config.radius)
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            match nearest {
                Some((i, _)) => {
                    matched[i] = true;
                    let t = &mut self.tracklets[i];
                    t.consecutive_hits += 1;
                    t.frames_since_hit = 0;
                    t.last_position = d.position;
                }
                None => {
                    self.tracklets.push(Tracklet {
                        class: d.class,
                        last_position: d.position,
                        consecutive_hits: 1,
                        frames_since_hit: 0,
                    });
                    matched.push(true);
                }
            }
        }

        let filtered = self.filtered();
        let probs: Vec<f64> = filtered
            .iter()
            .enumerate()
            .map(|(class, &p)| {
                let supported = self
                    .tracklets
                    .iter()
                    .any(|t| t.class.0 == class && t.is_active(config));
                if supported {
                    p
                } else {
                    0.0
                }
            })
            .collect();
        let triggered = probs.iter().any(|&p| p > config.trigger);
        Ok(CompetenceEstimate { probs, triggered })
    }
}

fn distance(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Reads one [`FrameEstimate`] per non-blank line.
pub fn read_frames_jsonl(reader: impl BufRead) -> Result<Vec<FrameEstimate>, PredictorError> {
    let mut frames = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| PredictorError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        frames.push(serde_json::from_str(&line).map_err(|e| PredictorError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(frames)
}

pub fn write_frames_jsonl(frames: &[FrameEstimate]) -> String {
    let mut out = String::new();
    for f in frames {
        out.push_str(&serde_json::to_string(f).expect("frames serialize"));
        out.push('\n');
    }
    out
}
