mod common;

use std::collections::VecDeque;

use common::*;
use competence_nav::belief::{init_beliefs, BeliefPrior, FailureBelief, Observation, LOG_ODDS_LIMIT, MIN_SUCCESS};
use competence_nav::classes::{FailureClass, Taxonomy};
use competence_nav::predictor::{Detection, FrameEstimate, PredictorConfig, PredictorState};
use competence_nav::topo_map::NodeId;
use proptest::prelude::*;

const EDGE: (NodeId, NodeId) = (NodeId(0), NodeId(1));

fn fresh(eps: f64) -> FailureBelief {
    let tax = Taxonomy::standard();
    init_beliefs(&map_from(2, &[(0, 1, 1.0)]), &tax, BeliefPrior::new(eps, &tax).unwrap()).unwrap()
}

fn perceive(cf: f64, ncf: f64) -> Observation {
    Observation::Perception {
        edge: EDGE,
        class_probs: vec![cf, ncf],
    }
}

fn closed_form(eps: f64, ps: &[f64]) -> f64 {
    let l0 = (eps / (1.0 - eps)).ln();
    l0 + ps.iter().map(|p| (p / (1.0 - p)).ln() - l0).sum::<f64>()
}

proptest! {
    #[test]
    fn log_odds_follow_the_closed_form(eps in 0.01f64..0.3, ps in prop::collection::vec(0.2f64..0.8, 1..20)) {
        let mut b = fresh(eps);
        for &p in &ps {
            b.update(&perceive(p, eps), 0.9).unwrap();
        }
        let want = closed_form(eps, &ps);
        prop_assume!(want.abs() < LOG_ODDS_LIMIT);
        let got = b.log_odds(EDGE, FailureClass(0)).unwrap();
        prop_assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0));
        prop_assert!((b.belief_prob(EDGE, FailureClass(0)).unwrap() - sequential_bayes(eps, &ps)).abs() <= 1e-12);
    }

    #[test]
    fn perception_order_does_not_matter(ps in prop::collection::vec((0.01f64..0.99, 0.01f64..0.99), 1..10), seed in any::<u64>()) {
        let mut forward = fresh(0.05);
        for &(a, c) in &ps {
            forward.update(&perceive(a, c), 0.9).unwrap();
        }
        let mut shuffled = ps.clone();
        let k = (seed as usize) % shuffled.len();
        shuffled.rotate_left(k);
        shuffled.reverse();
        let mut backward = fresh(0.05);
        for &(a, c) in &shuffled {
            backward.update(&perceive(a, c), 0.9).unwrap();
        }
        let l = |b: &FailureBelief, c| b.log_odds(EDGE, FailureClass(c)).unwrap();
        for c in 0..2 {
            let want: Vec<f64> = ps.iter().map(|p| if c == 0 { p.0 } else { p.1 }).collect();
            prop_assume!(closed_form(0.05, &want).abs() < LOG_ODDS_LIMIT);
            prop_assert!((l(&forward, c) - l(&backward, c)).abs() <= 1e-9);
        }
    }

    #[test]
    fn belief_moves_toward_the_observation(start in prop::collection::vec(0.05f64..0.95, 0..5), p in 0.01f64..0.99) {
        let eps = 0.05;
        let mut b = fresh(eps);
        for &s in &start {
            b.update(&perceive(s, eps), 0.9).unwrap();
        }
        let l_before = b.log_odds(EDGE, FailureClass(0)).unwrap();
        b.update(&perceive(p, eps), 0.9).unwrap();
        let l_after = b.log_odds(EDGE, FailureClass(0)).unwrap();
        prop_assume!(l_before.abs() < LOG_ODDS_LIMIT - 10.0);
        if p > eps {
            prop_assert!(l_after > l_before);
        } else if p < eps {
            prop_assert!(l_after < l_before);
        }
    }

    #[test]
    fn snapshots_are_normalized(obs in prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 0..12), delta in 0.34f64..0.99) {
        let mut b = fresh(0.05);
        for (i, &(a, c)) in obs.iter().enumerate() {
            if i % 3 == 2 {
                b.update(&Observation::Intervention { edge: EDGE, class: FailureClass(i % 2) }, delta).unwrap();
            } else {
                b.update(&perceive(a, c), delta).unwrap();
            }
        }
        let s = b.transition_snapshot(EDGE).unwrap();
        prop_assert!((s.total() - 1.0).abs() <= 1e-12);
        prop_assert!(s.success() >= MIN_SUCCESS - 1e-15);
        prop_assert!(s.0.iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn mean_filter_is_linear(frames in prop::collection::vec((0.0f64..0.5, 0.0f64..0.5, 0.0f64..0.5, 0.0f64..0.5), 1..30)) {
        let config = PredictorConfig::default();
        let mut a = PredictorState::new(2);
        let mut b = PredictorState::new(2);
        let mut sum = PredictorState::new(2);
        let frame = |i: usize, g: Vec<f64>| FrameEstimate { frame_index: i as u64, global_probs: g, detections: vec![] };
        for (i, &(x0, x1, y0, y1)) in frames.iter().enumerate() {
            a.ingest_frame(&frame(i, vec![x0, x1]), &config).unwrap();
            b.ingest_frame(&frame(i, vec![y0, y1]), &config).unwrap();
            sum.ingest_frame(&frame(i, vec![x0 + y0, x1 + y1]), &config).unwrap();
            for c in 0..2 {
                prop_assert!((a.filtered()[c] + b.filtered()[c] - sum.filtered()[c]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn gate_passes_filtered_value_or_zero(seed in any::<u64>()) {
        use rand::Rng;
        let mut r = rng(seed);
        let config = PredictorConfig::default();
        let mut state = PredictorState::new(2);
        let mut window = VecDeque::new();
        for k in 0..200u64 {
            let g: Vec<f64> = (0..2).map(|_| r.random_range(0.0..1.0)).collect();
            let detections = (0..r.random_range(0..3))
                .map(|_| {
                    let c = r.random_range(0..2);
                    Detection { class: FailureClass(c), position: [0.3 + 0.3 * c as f64 + r.random_range(-0.05..0.05), 0.5], score: 0.5 }
                })
                .collect();
            let est = state.ingest_frame(&FrameEstimate { frame_index: k, global_probs: g.clone(), detections }, &config).unwrap();
            window.push_back(g);
            if window.len() > config.window { window.pop_front(); }
            for c in 0..2 {
                let mean = window.iter().map(|g: &Vec<f64>| g[c]).sum::<f64>() / window.len() as f64;
                let active = state.tracklets().iter().any(|t| t.class == FailureClass(c) && t.is_active(&config));
                if active {
                    prop_assert!((est.probs[c] - mean).abs() <= 1e-12);
                } else {
                    prop_assert_eq!(est.probs[c], 0.0);
                }
            }
            prop_assert_eq!(est.triggered, est.probs.iter().any(|&p| p > config.trigger));
        }
    }
}

#[test]
fn intervention_then_perception_matches_bayes() {
    // intervention on CF with delta 0.9, then a 0.6 perception for CF
    let eps = 0.05;
    let mut b = fresh(eps);
    b.update(&Observation::Intervention { edge: EDGE, class: FailureClass(0) }, 0.9).unwrap();
    b.update(&perceive(0.6, eps), 0.9).unwrap();
    let want = sequential_bayes(eps, &[0.9, 0.6]);
    assert!((b.belief_prob(EDGE, FailureClass(0)).unwrap() - want).abs() < 1e-12);
    let ncf = sequential_bayes(eps, &[0.05, eps]);
    assert!((b.belief_prob(EDGE, FailureClass(1)).unwrap() - ncf).abs() < 1e-12);
}
