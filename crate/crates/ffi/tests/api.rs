use std::ffi::{CStr, CString};
use std::ptr;

use competence_nav::env::{generate_environment, EnvParams};
use competence_nav::predictor::{FrameEstimate, PredictorConfig, PredictorState};
use competence_nav::sim::{generate_tasks, run_deployment, AgentKind, SimConfig};
use competence_nav_ffi::*;

const TWO_ROUTES: &str = r#"{
  "nodes": [{"id": 0}, {"id": 1}, {"id": 2}],
  "edges": [{"src": 0, "dst": 2, "t": 10.0}, {"src": 0, "dst": 1, "t": 6.0}, {"src": 1, "dst": 2, "t": 6.0}]
}"#;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = cn_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

struct Fixture {
    map: *mut CnMap,
    belief: *mut CnBelief,
}

impl Fixture {
    fn new(epsilon: f64) -> Self {
        let mut map = ptr::null_mut();
        let mut belief = ptr::null_mut();
        unsafe {
            assert_eq!(cn_map_from_json(c(TWO_ROUTES).as_ptr(), &mut map), CnStatus::Ok);
            assert_eq!(cn_belief_new(map, epsilon, &mut belief), CnStatus::Ok);
        }
        Self { map, belief }
    }

    fn snapshot(&self, src: u32, dst: u32) -> Vec<f64> {
        let mut out = vec![0.0; cn_class_count()];
        let status = unsafe { cn_belief_snapshot(self.belief, src, dst, out.as_mut_ptr(), out.len()) };
        assert_eq!(status, CnStatus::Ok);
        out
    }

    fn plan(&self, from: u32, goal: u32) -> (CnStatus, u32, f64) {
        let (mut next, mut value) = (u32::MAX, f64::NAN);
        let status = unsafe { cn_plan_next(self.map, self.belief, from, goal, 30.0, 1000.0, &mut next, &mut value) };
        (status, next, value)
    }
}

impl Drop for Fixture {
    fn drop(&mut self) {
        unsafe {
            cn_belief_free(self.belief);
            cn_map_free(self.map);
        }
    }
}

/// Expected cost of repeating one edge until success, each failure sending
/// the robot back to the edge source.
fn single_edge_value(t: f64, dist: &[f64]) -> f64 {
    (t + dist[0] * 1000.0 + dist[1] * 30.0) / dist[2]
}

#[test]
fn map_counts_and_parse_errors() {
    let fx = Fixture::new(0.05);
    unsafe {
        assert_eq!(cn_map_node_count(fx.map), 3);
        assert_eq!(cn_map_edge_count(fx.map), 3);
        assert_eq!(cn_map_node_count(ptr::null()), 0);
        let mut map = ptr::null_mut();
        assert_eq!(cn_map_from_json(c("{\"nodes\": [").as_ptr(), &mut map), CnStatus::Parse);
        assert!(map.is_null());
        assert!(last_error().contains("line"));
        let dup = r#"{"nodes": [{"id": 0}, {"id": 0}], "edges": []}"#;
        assert_eq!(cn_map_from_json(c(dup).as_ptr(), &mut map), CnStatus::Invalid);
        assert!(last_error().contains("duplicate node"));
        assert_eq!(cn_map_load(c("/nonexistent/map.json").as_ptr(), &mut map), CnStatus::Io);
        assert_eq!(cn_map_from_json(ptr::null(), &mut map), CnStatus::NullPointer);
    }
}

#[test]
fn map_loads_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    std::fs::write(&path, TWO_ROUTES).unwrap();
    let mut map = ptr::null_mut();
    unsafe {
        assert_eq!(cn_map_load(c(path.to_str().unwrap()).as_ptr(), &mut map), CnStatus::Ok);
        assert_eq!(cn_map_edge_count(map), 3);
        cn_map_free(map);
    }
}

#[test]
fn error_slot_is_cleared_by_success() {
    let fx = Fixture::new(0.05);
    let mut p = 0.0;
    unsafe {
        assert_eq!(cn_belief_prob(fx.belief, 2, 0, 0, &mut p), CnStatus::UnknownEdge);
        assert!(last_error().contains("unknown edge"));
        assert_eq!(cn_belief_prob(fx.belief, 0, 2, 0, &mut p), CnStatus::Ok);
    }
    assert!(cn_last_error().is_null());
    assert!((p - 0.05).abs() < 1e-12);
}

#[test]
fn intervention_follows_bayes_rule() {
    let fx = Fixture::new(0.05);
    unsafe {
        assert_eq!(cn_belief_intervention(fx.belief, 0, 2, 0, 0.9), CnStatus::Ok);
    }
    let (mut cf, mut ncf) = (0.0, 0.0);
    unsafe {
        cn_belief_prob(fx.belief, 0, 2, 0, &mut cf);
        cn_belief_prob(fx.belief, 0, 2, 1, &mut ncf);
    }
    // from the prior, one update lands on the logit of the likelihood:
    // delta for the observed class, (1 - delta) / (L - 1) for the other
    assert!((cf - 0.9).abs() < 1e-12, "{cf}");
    assert!((ncf - 0.05).abs() < 1e-12, "{ncf}");
    let snap = fx.snapshot(0, 2);
    assert!((snap.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    unsafe {
        assert_eq!(cn_belief_intervention(fx.belief, 0, 2, 2, 0.9), CnStatus::Invalid);
        assert_eq!(cn_belief_intervention(fx.belief, 0, 2, 0, 0.2), CnStatus::Invalid);
    }
}

#[test]
fn perception_matches_closed_form() {
    let fx = Fixture::new(0.05);
    let probs = [0.7, 0.2];
    unsafe {
        for _ in 0..3 {
            assert_eq!(cn_belief_perception(fx.belief, 0, 1, probs.as_ptr(), 2, 0.9), CnStatus::Ok);
        }
    }
    let logit = |p: f64| (p / (1.0 - p)).ln();
    for (class, &p) in probs.iter().enumerate() {
        let l = 3.0 * logit(p) - 2.0 * logit(0.05);
        let mut got = 0.0;
        unsafe { cn_belief_prob(fx.belief, 0, 1, class, &mut got) };
        assert!((got - 1.0 / (1.0 + (-l).exp())).abs() < 1e-12);
    }
    unsafe {
        assert_eq!(cn_belief_perception(fx.belief, 0, 1, probs.as_ptr(), 1, 0.9), CnStatus::Invalid);
        assert_eq!(cn_belief_perception(fx.belief, 0, 1, ptr::null(), 2, 0.9), CnStatus::NullPointer);
    }
}

#[test]
fn snapshot_rejects_short_buffers() {
    let fx = Fixture::new(0.05);
    let mut out = [0.0; 2];
    let status = unsafe { cn_belief_snapshot(fx.belief, 0, 2, out.as_mut_ptr(), out.len()) };
    assert_eq!(status, CnStatus::BufferTooSmall);
}

#[test]
fn planner_switches_route_when_the_short_edge_fails() {
    let fx = Fixture::new(0.05);
    let (status, next, value) = fx.plan(0, 2);
    assert_eq!(status, CnStatus::Ok);
    let direct = single_edge_value(10.0, &fx.snapshot(0, 2));
    let detour = single_edge_value(6.0, &fx.snapshot(0, 1)) + single_edge_value(6.0, &fx.snapshot(1, 2));
    assert!(direct < detour);
    assert_eq!(next, 2);
    assert!((value - direct).abs() < 1e-6 * direct);

    unsafe { cn_belief_intervention(fx.belief, 0, 2, 0, 0.9) };
    let (_, next, value) = fx.plan(0, 2);
    let direct = single_edge_value(10.0, &fx.snapshot(0, 2));
    assert!(detour < direct);
    assert_eq!(next, 1);
    assert!((value - detour).abs() < 1e-6 * detour);

    assert_eq!(fx.plan(2, 2), (CnStatus::Ok, 2, 0.0));
}

#[test]
fn planner_reports_bad_nodes() {
    let fx = Fixture::new(0.05);
    assert_eq!(fx.plan(9, 2).0, CnStatus::UnknownNode);
    assert_eq!(fx.plan(0, 9).0, CnStatus::UnknownNode);
    assert_eq!(fx.plan(2, 0).0, CnStatus::Unreachable);
    let mut next = 0;
    let status = unsafe { cn_plan_next(fx.map, fx.belief, 0, 2, 30.0, 1000.0, &mut next, ptr::null_mut()) };
    assert_eq!(status, CnStatus::NullPointer);
    let mut value = 0.0;
    let status = unsafe { cn_plan_next(fx.map, fx.belief, 0, 2, -1.0, 1000.0, &mut next, &mut value) };
    assert_eq!(status, CnStatus::Invalid);
}

#[test]
fn predictor_matches_library() {
    let frames: Vec<FrameEstimate> = (0..8)
        .map(|k| {
            serde_json::from_value(serde_json::json!({
                "frame_index": k,
                "global_probs": [0.2 + 0.1 * (k % 4) as f64, 0.05],
                "detections": if k >= 2 { serde_json::json!([{"class": 0, "position": [0.5, 0.0], "score": 0.8}]) } else { serde_json::json!([]) },
            }))
            .unwrap()
        })
        .collect();
    let config = PredictorConfig::default();
    let mut reference = PredictorState::new(2);
    let mut handle = ptr::null_mut();
    unsafe { assert_eq!(cn_predictor_new(ptr::null(), &mut handle), CnStatus::Ok) };
    let mut fired = false;
    for frame in &frames {
        let expected = reference.ingest_frame(frame, &config).unwrap();
        let json = c(&serde_json::to_string(frame).unwrap());
        let mut probs = [f64::NAN; 2];
        let mut triggered = false;
        let status = unsafe { cn_predictor_ingest(handle, json.as_ptr(), probs.as_mut_ptr(), 2, &mut triggered) };
        assert_eq!(status, CnStatus::Ok);
        assert_eq!(probs.to_vec(), expected.probs);
        assert_eq!(triggered, expected.triggered);
        fired |= triggered;
    }
    assert!(fired);
    unsafe {
        let json = c(&serde_json::to_string(&frames[0]).unwrap());
        let mut probs = [0.0; 2];
        let mut triggered = false;
        assert_eq!(cn_predictor_ingest(handle, json.as_ptr(), probs.as_mut_ptr(), 2, &mut triggered), CnStatus::Invalid);
        assert!(last_error().contains("does not follow"));
        cn_predictor_reset(handle);
        assert_eq!(cn_predictor_ingest(handle, json.as_ptr(), probs.as_mut_ptr(), 2, &mut triggered), CnStatus::Ok);
        assert_eq!(cn_predictor_ingest(handle, c("{").as_ptr(), probs.as_mut_ptr(), 2, &mut triggered), CnStatus::Parse);
        cn_predictor_free(handle);
        assert_eq!(cn_predictor_new(c(r#"{"window": 0}"#).as_ptr(), &mut handle), CnStatus::Invalid);
        assert_eq!(cn_predictor_new(c(r#"{"windw": 3}"#).as_ptr(), &mut handle), CnStatus::Parse);
    }
}

#[test]
fn deployment_matches_library() {
    let env = generate_environment(&EnvParams::default(), 11).unwrap();
    let config = r#"{"seed": 5, "task_count": 12, "sim": {"mid_edge_abort": true}}"#;
    let sim = SimConfig {
        mid_edge_abort: true,
        ..Default::default()
    };
    let tasks = generate_tasks(env.map(), 12, 5).unwrap();
    let (expected, _) = run_deployment(&env, AgentKind::Cpip, &tasks, 5, &sim).unwrap();

    let env_json = c(&env.to_json_string());
    let mut out = ptr::null_mut();
    unsafe {
        assert_eq!(cn_run_deployment(env_json.as_ptr(), c("cpip").as_ptr(), c(config).as_ptr(), &mut out), CnStatus::Ok);
        assert_eq!(CStr::from_ptr(out).to_str().unwrap(), expected.to_jsonl());
        cn_string_free(out);

        let mut out = ptr::null_mut();
        assert_eq!(cn_run_deployment(env_json.as_ptr(), c("robot").as_ptr(), ptr::null(), &mut out), CnStatus::Invalid);
        assert!(last_error().contains("unknown agent"));
        let bad = r#"{"sim": {"delta": 0.1}}"#;
        assert_eq!(cn_run_deployment(env_json.as_ptr(), c("oracle").as_ptr(), c(bad).as_ptr(), &mut out), CnStatus::Invalid);
        assert!(out.is_null());
    }
}

#[test]
fn null_handles_are_harmless() {
    unsafe {
        cn_map_free(ptr::null_mut());
        cn_belief_free(ptr::null_mut());
        cn_predictor_free(ptr::null_mut());
        cn_predictor_reset(ptr::null_mut());
        cn_string_free(ptr::null_mut());
        let mut p = 0.0;
        assert_eq!(cn_belief_prob(ptr::null(), 0, 1, 0, &mut p), CnStatus::NullPointer);
        let mut b = ptr::null_mut();
        assert_eq!(cn_belief_new(ptr::null(), 0.05, &mut b), CnStatus::NullPointer);
    }
}
