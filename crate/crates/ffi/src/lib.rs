//! C interface to the map loader, belief filter, planner, competence
//! predictor and deployment simulator.
//!
//! Objects are opaque heap handles released with their `*_free` function.
//! Every fallible call returns a [`CnStatus`]; on failure the message is
//! available from [`cn_last_error`] on the same thread. Strings returned
//! by the library are released with [`cn_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use competence_nav::belief::{init_beliefs, BeliefError, BeliefPrior, FailureBelief, Observation};
use competence_nav::classes::{FailureClass, Taxonomy};
use competence_nav::config::{ConfigError, ExperimentConfig};
use competence_nav::env::{EnvError, SimEnvironment};
use competence_nav::predictor::{FrameEstimate, PredictorConfig, PredictorError, PredictorState};
use competence_nav::sim::{generate_tasks, run_deployment, AgentKind, SimError};
use competence_nav::ssp::{build_ssp, value_iteration, CostParams, PlanError, SspAction, SspState, SolverConfig};
use competence_nav::topo_map::{MapError, NodeId, TopoMap};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    Invalid = 4,
    UnknownNode = 5,
    UnknownEdge = 6,
    NotConverged = 7,
    Unreachable = 8,
    Io = 9,
    BufferTooSmall = 10,
    Panic = 99,
}

/// Topological map.
pub struct CnMap(TopoMap);

/// Per-edge failure belief under the standard three-class taxonomy.
pub struct CnBelief(FailureBelief);

/// Streaming competence predictor.
pub struct CnPredictor {
    state: PredictorState,
    config: PredictorConfig,
}

struct FfiError {
    status: CnStatus,
    message: String,
}

impl FfiError {
    fn new(status: CnStatus, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }
}

impl From<MapError> for FfiError {
    fn from(e: MapError) -> Self {
        let status = match e {
            MapError::Parse { .. } => CnStatus::Parse,
            MapError::UnknownNode(_) => CnStatus::UnknownNode,
            MapError::Io { .. } => CnStatus::Io,
            _ => CnStatus::Invalid,
        };
        Self::new(status, e.to_string())
    }
}

impl From<BeliefError> for FfiError {
    fn from(e: BeliefError) -> Self {
        let status = match e {
            BeliefError::UnknownEdge(_) => CnStatus::UnknownEdge,
            _ => CnStatus::Invalid,
        };
        Self::new(status, e.to_string())
    }
}

impl From<PlanError> for FfiError {
    fn from(e: PlanError) -> Self {
        let status = match e {
            PlanError::GoalNotInMap(_) | PlanError::UnknownState(_) => CnStatus::UnknownNode,
            PlanError::NotConverged { .. } | PlanError::Diverged { .. } => CnStatus::NotConverged,
            PlanError::GoalUnreachable(_) | PlanError::ImproperPolicy(_) => CnStatus::Unreachable,
            _ => CnStatus::Invalid,
        };
        Self::new(status, e.to_string())
    }
}

impl From<PredictorError> for FfiError {
    fn from(e: PredictorError) -> Self {
        let status = match e {
            PredictorError::Parse { .. } => CnStatus::Parse,
            _ => CnStatus::Invalid,
        };
        Self::new(status, e.to_string())
    }
}

impl From<EnvError> for FfiError {
    fn from(e: EnvError) -> Self {
        match e {
            EnvError::Map(m) => m.into(),
            other => Self::new(CnStatus::Invalid, other.to_string()),
        }
    }
}

impl From<ConfigError> for FfiError {
    fn from(e: ConfigError) -> Self {
        let status = match e {
            ConfigError::Parse { .. } => CnStatus::Parse,
            ConfigError::Io { .. } => CnStatus::Io,
            _ => CnStatus::Invalid,
        };
        Self::new(status, e.to_string())
    }
}

impl From<SimError> for FfiError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Plan(p) => p.into(),
            SimError::Belief(b) => b.into(),
            SimError::Predictor(p) => p.into(),
            SimError::Map(m) => m.into(),
            other => Self::new(CnStatus::Invalid, other.to_string()),
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: &str) {
    let text = CString::new(message.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(text));
}

fn guard(f: impl FnOnce() -> Result<(), FfiError>) -> CnStatus {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CnStatus::Ok,
        Ok(Err(e)) => {
            set_last_error(&e.message);
            e.status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {message}"));
            CnStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, FfiError> {
    if p.is_null() {
        return Err(FfiError::new(CnStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| FfiError::new(CnStatus::InvalidUtf8, format!("{name}: {e}")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, FfiError> {
    p.as_ref()
        .ok_or_else(|| FfiError::new(CnStatus::NullPointer, format!("{name} is null")))
}

unsafe fn mut_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, FfiError> {
    p.as_mut()
        .ok_or_else(|| FfiError::new(CnStatus::NullPointer, format!("{name} is null")))
}

unsafe fn write_out<T>(out: *mut T, value: T, name: &str) -> Result<(), FfiError> {
    if out.is_null() {
        return Err(FfiError::new(CnStatus::NullPointer, format!("{name} is null")));
    }
    out.write(value);
    Ok(())
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, name: &str) -> Result<&'a [f64], FfiError> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(FfiError::new(CnStatus::NullPointer, format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn fill(out: *mut f64, capacity: usize, values: &[f64], name: &str) -> Result<(), FfiError> {
    if capacity < values.len() {
        return Err(FfiError::new(
            CnStatus::BufferTooSmall,
            format!("{name} holds {capacity} values, need {}", values.len()),
        ));
    }
    if values.is_empty() {
        return Ok(());
    }
    if out.is_null() {
        return Err(FfiError::new(CnStatus::NullPointer, format!("{name} is null")));
    }
    ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    Ok(())
}

fn into_c_string(text: String) -> *mut c_char {
    CString::new(text.replace('\0', " ")).expect("interior NULs removed").into_raw()
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn cn_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Number of outcome classes (failure classes plus success) of the
/// standard taxonomy.
#[no_mangle]
pub extern "C" fn cn_class_count() -> usize {
    Taxonomy::standard().len()
}

/// # Safety
/// `s` must be NULL or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn cn_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `json` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cn_map_from_json(json: *const c_char, out: *mut *mut CnMap) -> CnStatus {
    guard(|| {
        let map = TopoMap::from_json_str(str_arg(json, "json")?)?;
        write_out(out, Box::into_raw(Box::new(CnMap(map))), "out")
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cn_map_load(path: *const c_char, out: *mut *mut CnMap) -> CnStatus {
    guard(|| {
        let map = TopoMap::load(str_arg(path, "path")?)?;
        write_out(out, Box::into_raw(Box::new(CnMap(map))), "out")
    })
}

/// # Safety
/// `map` must be NULL or a handle from `cn_map_*` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cn_map_free(map: *mut CnMap) {
    if !map.is_null() {
        drop(Box::from_raw(map));
    }
}

/// # Safety
/// `map` must be a live handle or NULL (returns 0).
#[no_mangle]
pub unsafe extern "C" fn cn_map_node_count(map: *const CnMap) -> usize {
    map.as_ref().map_or(0, |m| m.0.node_count())
}

/// # Safety
/// `map` must be a live handle or NULL (returns 0).
#[no_mangle]
pub unsafe extern "C" fn cn_map_edge_count(map: *const CnMap) -> usize {
    map.as_ref().map_or(0, |m| m.0.edge_count())
}

/// Belief with every edge and failure class at prior probability `epsilon`.
///
/// # Safety
/// `map` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cn_belief_new(map: *const CnMap, epsilon: f64, out: *mut *mut CnBelief) -> CnStatus {
    guard(|| {
        let map = ref_arg(map, "map")?;
        let taxonomy = Taxonomy::standard();
        let prior = BeliefPrior::new(epsilon, &taxonomy)?;
        let belief = init_beliefs(&map.0, &taxonomy, prior)?;
        write_out(out, Box::into_raw(Box::new(CnBelief(belief))), "out")
    })
}

/// # Safety
/// `belief` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cn_belief_free(belief: *mut CnBelief) {
    if !belief.is_null() {
        drop(Box::from_raw(belief));
    }
}

/// Records a supervisor-reported failure of `class` on `src -> dst`.
///
/// # Safety
/// `belief` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cn_belief_intervention(
    belief: *mut CnBelief,
    src: u32,
    dst: u32,
    class: usize,
    delta: f64,
) -> CnStatus {
    guard(|| {
        let belief = mut_arg(belief, "belief")?;
        let obs = Observation::Intervention {
            edge: (NodeId(src), NodeId(dst)),
            class: FailureClass(class),
        };
        Ok(belief.0.update(&obs, delta)?)
    })
}

/// Folds predicted per-failure-class probabilities into the belief of
/// `src -> dst`. `probs` holds one value per failure class.
///
/// # Safety
/// `belief` must be a live handle and `probs` valid for `len` reads.
#[no_mangle]
pub unsafe extern "C" fn cn_belief_perception(
    belief: *mut CnBelief,
    src: u32,
    dst: u32,
    probs: *const f64,
    len: usize,
    delta: f64,
) -> CnStatus {
    guard(|| {
        let belief = mut_arg(belief, "belief")?;
        let obs = Observation::Perception {
            edge: (NodeId(src), NodeId(dst)),
            class_probs: slice_arg(probs, len, "probs")?.to_vec(),
        };
        Ok(belief.0.update(&obs, delta)?)
    })
}

/// # Safety
/// `belief` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cn_belief_prob(
    belief: *const CnBelief,
    src: u32,
    dst: u32,
    class: usize,
    out: *mut f64,
) -> CnStatus {
    guard(|| {
        let belief = ref_arg(belief, "belief")?;
        let p = belief.0.belief_prob((NodeId(src), NodeId(dst)), FailureClass(class))?;
        write_out(out, p, "out")
    })
}

/// Writes the outcome distribution of `src -> dst` (failure classes then
/// success, `cn_class_count()` values) into `out`.
///
/// # Safety
/// `belief` must be a live handle and `out` valid for `capacity` writes.
#[no_mangle]
pub unsafe extern "C" fn cn_belief_snapshot(
    belief: *const CnBelief,
    src: u32,
    dst: u32,
    out: *mut f64,
    capacity: usize,
) -> CnStatus {
    guard(|| {
        let belief = ref_arg(belief, "belief")?;
        let dist = belief.0.transition_snapshot((NodeId(src), NodeId(dst)))?;
        fill(out, capacity, &dist.0, "out")
    })
}

/// Plans to `goal` under the current belief and reports the first edge to
/// take from `from` together with the expected cost-to-go. At the goal the
/// next node is the goal itself and the cost is 0.
///
/// # Safety
/// `map` and `belief` must be live handles built from the same map;
/// `next` and `value` writable.
#[no_mangle]
pub unsafe extern "C" fn cn_plan_next(
    map: *const CnMap,
    belief: *const CnBelief,
    from: u32,
    goal: u32,
    recovery_cost: f64,
    catastrophic_penalty: f64,
    next: *mut u32,
    value: *mut f64,
) -> CnStatus {
    guard(|| {
        let map = &ref_arg(map, "map")?.0;
        let belief = &ref_arg(belief, "belief")?.0;
        if next.is_null() || value.is_null() {
            return Err(FfiError::new(CnStatus::NullPointer, "output pointer is null"));
        }
        if belief.edges().len() != map.edge_count() {
            return Err(FfiError::new(CnStatus::Invalid, "belief was built for a different map"));
        }
        let from = NodeId(from);
        if !map.contains(from) {
            return Err(MapError::UnknownNode(from).into());
        }
        let taxonomy = belief.taxonomy();
        let costs = CostParams::new(taxonomy, recovery_cost, catastrophic_penalty);
        costs.validate(taxonomy)?;
        let model = build_ssp(map, taxonomy, &belief.snapshot_all(), &costs, NodeId(goal))?;
        let solver = SolverConfig::default();
        let solution = value_iteration(&model, solver.tolerance, solver.max_iters)?;
        let state = SspState::Node(from);
        let v = solution.values.at(&model, &state)?;
        if !v.is_finite() {
            return Err(PlanError::GoalUnreachable(state).into());
        }
        let step = match solution.policy.action(&model, &state) {
            Some(SspAction::Traverse((_, dst))) => dst.0,
            _ => goal,
        };
        write_out(next, step, "next")?;
        write_out(value, v, "value")
    })
}

/// Predictor with default settings when `config_json` is NULL, otherwise
/// with the settings of that JSON object (missing fields take defaults).
///
/// # Safety
/// `config_json` must be NULL or a NUL-terminated string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cn_predictor_new(config_json: *const c_char, out: *mut *mut CnPredictor) -> CnStatus {
    guard(|| {
        let config = if config_json.is_null() {
            PredictorConfig::default()
        } else {
            serde_json::from_str(str_arg(config_json, "config_json")?)
                .map_err(|e| FfiError::new(CnStatus::Parse, e.to_string()))?
        };
        config.validate()?;
        let state = PredictorState::new(Taxonomy::standard().failure_count());
        write_out(out, Box::into_raw(Box::new(CnPredictor { state, config })), "out")
    })
}

/// # Safety
/// `predictor` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cn_predictor_free(predictor: *mut CnPredictor) {
    if !predictor.is_null() {
        drop(Box::from_raw(predictor));
    }
}

/// # Safety
/// `predictor` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cn_predictor_reset(predictor: *mut CnPredictor) {
    if let Some(p) = predictor.as_mut() {
        p.state.reset();
    }
}

/// Feeds one frame, given as a JSON object with `frame_index`,
/// `global_probs` and optional `detections`. Writes the per-failure-class
/// consensus into `probs` and whether it crossed the trigger threshold.
///
/// # Safety
/// `predictor` must be a live handle, `frame_json` a NUL-terminated string,
/// `probs` valid for `capacity` writes and `triggered` writable.
#[no_mangle]
pub unsafe extern "C" fn cn_predictor_ingest(
    predictor: *mut CnPredictor,
    frame_json: *const c_char,
    probs: *mut f64,
    capacity: usize,
    triggered: *mut bool,
) -> CnStatus {
    guard(|| {
        let predictor = mut_arg(predictor, "predictor")?;
        let frame: FrameEstimate = serde_json::from_str(str_arg(frame_json, "frame_json")?)
            .map_err(|e| FfiError::new(CnStatus::Parse, e.to_string()))?;
        let estimate = predictor.state.ingest_frame(&frame, &predictor.config)?;
        fill(probs, capacity, &estimate.probs, "probs")?;
        write_out(triggered, estimate.triggered, "triggered")
    })
}

/// Runs one agent through a deployment and returns the episode log as JSON
/// lines. `config_json` is an experiment configuration (NULL for defaults)
/// supplying the seeds, task count and simulator settings; sensor fidelity
/// comes from the environment.
///
/// # Safety
/// `env_json` and `agent` must be NUL-terminated strings, `config_json`
/// NULL or one, and `out` writable. Free the result with `cn_string_free`.
#[no_mangle]
pub unsafe extern "C" fn cn_run_deployment(
    env_json: *const c_char,
    agent: *const c_char,
    config_json: *const c_char,
    out: *mut *mut c_char,
) -> CnStatus {
    guard(|| {
        let env = SimEnvironment::from_json_str(str_arg(env_json, "env_json")?)?;
        let agent: AgentKind = str_arg(agent, "agent")?
            .parse()
            .map_err(|e: String| FfiError::new(CnStatus::Invalid, e))?;
        let config = if config_json.is_null() {
            ExperimentConfig::default()
        } else {
            ExperimentConfig::from_json_str(str_arg(config_json, "config_json")?, "config_json")?
        };
        config.validate()?;
        let tasks = generate_tasks(env.map(), config.task_count, config.task_seed())?;
        let (log, _) = run_deployment(&env, agent, &tasks, config.seed, &config.sim)?;
        write_out(out, into_c_string(log.to_jsonl()), "out")
    })
}
