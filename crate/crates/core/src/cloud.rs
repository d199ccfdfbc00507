//! Shared trajectory store: per-task sample safe sets with costs-to-go,
//! similarity transfer between translated roads, and persistence.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::{Matrix2, Matrix4};
use serde::{Deserialize, Serialize};

use crate::dynamics::{AgentState, ControlInput, DiscreteModel, PolygonalNormConstraint, TerminationBox};
use crate::geometry::{Layout, TaskKey};
use crate::lmpc::stage_cost;

const FORMAT: &str = "cloud-lmpc-store";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CloudError {
    #[error("record is pedestrian-affected and may not be uploaded")]
    PedestrianAffected,
    #[error("state {step} of the record is not admissible for {key}")]
    Inadmissible { key: TaskKey, step: usize },
    #[error("record does not end at the target of {0}")]
    NotTerminated(TaskKey),
    #[error("malformed record: {0}")]
    Malformed(String),
    #[error("cost-to-go does not follow the stage-cost recursion at step {0}")]
    CostMismatch(usize),
    #[error("unknown task {0}")]
    UnknownKey(TaskKey),
    #[error("safe set of {0} has no points")]
    Uninitialized(TaskKey),
    #[error("no stored state within {tol} of the query")]
    NoMatch { tol: f64 },
    #[error("store was written for layout {found}, expected {expected}")]
    LayoutMismatch { expected: String, found: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("store file is truncated: header announces {expected} records, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RecordOrigin {
    Seed,
    Executed,
    Transferred { from: TaskKey, shift: [f64; 2] },
}

/// One completed task execution. `inputs` has one entry per state, the
/// last one zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    /// `None` for generated initial trajectories.
    pub agent_id: Option<usize>,
    pub task: TaskKey,
    pub iteration: usize,
    pub start: usize,
    pub end: usize,
    pub states: Vec<AgentState>,
    pub inputs: Vec<ControlInput>,
    pub costs_to_go: Vec<f64>,
    pub pedestrian_affected: bool,
    pub origin: RecordOrigin,
}

impl TrajectoryRecord {
    /// Iteration cost of the execution.
    pub fn cost(&self) -> f64 {
        self.costs_to_go.first().copied().unwrap_or(0.0)
    }
}

/// `F(t) = h(x(t), u(t)) + F(t+1)` with `F(T) = h(x(T), 0)`.
pub fn compute_costs_to_go(
    states: &[AgentState],
    inputs: &[ControlInput],
    target: &AgentState,
    q: &Matrix4<f64>,
    r: &Matrix2<f64>,
    termination: &TerminationBox,
) -> Result<Vec<f64>, CloudError> {
    let last = states
        .last()
        .ok_or_else(|| CloudError::Malformed("empty trajectory".into()))?;
    if inputs.len() + 1 < states.len() {
        return Err(CloudError::Malformed(format!(
            "{} states but only {} inputs",
            states.len(),
            inputs.len()
        )));
    }
    if !termination.reached(last, target) {
        return Err(CloudError::Malformed("trajectory does not end at the target".into()));
    }
    let mut out = vec![0.0; states.len()];
    let t_end = states.len() - 1;
    out[t_end] = stage_cost(last, &ControlInput::ZERO, target, q, r);
    for t in (0..t_end).rev() {
        out[t] = stage_cost(&states[t], &inputs[t], target, q, r) + out[t + 1];
    }
    Ok(out)
}

/// Where a safe-set point came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointSource {
    pub agent_id: Option<usize>,
    pub iteration: usize,
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafeSetPoint {
    pub state: AgentState,
    pub cost_to_go: f64,
    /// Input applied at this point in its trajectory; zero at the end.
    pub input: ControlInput,
    /// Index of the next point of the same trajectory; the final point is
    /// its own successor.
    pub successor: usize,
    /// Index of the owning trajectory in `SafeSet::trajectories`.
    pub trajectory: usize,
    pub source: PointSource,
    /// True for the two points appended after an inexact final state to
    /// carry it exactly onto the target.
    pub synthetic: bool,
}

/// Contiguous run of points belonging to one stored trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpan {
    pub first: usize,
    pub len: usize,
}

impl TrajectorySpan {
    pub fn indices(&self) -> std::ops::Range<usize> {
        self.first..self.first + self.len
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SafeSet {
    pub key: TaskKey,
    pub points: Vec<SafeSetPoint>,
    pub trajectories: Vec<TrajectorySpan>,
}

impl SafeSet {
    pub fn new(key: TaskKey) -> Self {
        Self {
            key,
            points: Vec::new(),
            trajectories: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn append(&mut self, record: &TrajectoryRecord, bridge: Option<&Bridge>) {
        let first = self.points.len();
        let n = record.states.len();
        let len = n + if bridge.is_some() { 2 } else { 0 };
        let trajectory = self.trajectories.len();
        // the bridge costs a little more than h(x_T, 0); every stored
        // cost-to-go moves by the same amount
        let delta = bridge.map_or(0.0, |b| b.costs[0] - record.costs_to_go[n - 1]);
        let source = |step: usize| PointSource {
            agent_id: record.agent_id,
            iteration: record.iteration,
            step,
        };
        for (i, state) in record.states.iter().enumerate() {
            let input = match (i + 1 < n, bridge) {
                (true, _) => record.inputs[i],
                (false, Some(b)) => b.inputs[0],
                (false, None) => ControlInput::ZERO,
            };
            self.points.push(SafeSetPoint {
                state: *state,
                cost_to_go: record.costs_to_go[i] + delta,
                input,
                successor: first + (i + 1).min(len - 1),
                trajectory,
                source: source(record.start + i),
                synthetic: false,
            });
        }
        if let Some(b) = bridge {
            let pts = [(b.middle, b.inputs[1], b.costs[1]), (b.target, ControlInput::ZERO, 0.0)];
            for (k, (state, input, cost_to_go)) in pts.into_iter().enumerate() {
                let i = n + k;
                self.points.push(SafeSetPoint {
                    state,
                    cost_to_go,
                    input,
                    successor: first + (i + 1).min(len - 1),
                    trajectory,
                    source: source(record.start + i),
                    synthetic: true,
                });
            }
        }
        self.trajectories.push(TrajectorySpan { first, len });
    }

    /// Index reached by following successors `steps` times.
    pub fn advance(&self, mut index: usize, steps: usize) -> usize {
        for _ in 0..steps {
            index = self.points[index].successor;
        }
        index
    }

    /// Trajectories ordered by their cost from the first point, cheapest
    /// first; ties keep storage order.
    pub fn trajectories_by_cost(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.trajectories.len()).collect();
        order.sort_by(|a, b| {
            let fa = self.points[self.trajectories[*a].first].cost_to_go;
            let fb = self.points[self.trajectories[*b].first].cost_to_go;
            fa.total_cmp(&fb)
        });
        order
    }
}

/// Two synthetic steps from a record's final state to the exact target.
#[derive(Debug, Clone, PartialEq)]
struct Bridge {
    inputs: [ControlInput; 2],
    middle: AgentState,
    target: AgentState,
    /// Costs-to-go of the final state and of the middle state.
    costs: [f64; 2],
}

/// Minimum stored cost-to-go among points within `tol` (∞-norm) of `state`.
pub fn q_value(safe_set: &SafeSet, state: &AgentState, tol: f64) -> Result<f64, CloudError> {
    let x = state.to_vector();
    safe_set
        .points
        .iter()
        .filter(|p| (p.state.to_vector() - x).amax() <= tol)
        .map(|p| p.cost_to_go)
        .min_by(f64::total_cmp)
        .ok_or(CloudError::NoMatch { tol })
}

/// Everything the store needs to validate incoming records.
#[derive(Debug, Clone, PartialEq)]
pub struct StoreRules {
    pub model: DiscreteModel,
    pub velocity: PolygonalNormConstraint,
    pub input: PolygonalNormConstraint,
    pub termination: TerminationBox,
    pub q: Matrix4<f64>,
    pub r: Matrix2<f64>,
    /// Slack on position and velocity constraints of stored states.
    pub tol: f64,
}

impl StoreRules {
    pub fn from_lmpc(lmpc: &crate::lmpc::Lmpc) -> Self {
        Self {
            model: lmpc.model.clone(),
            velocity: lmpc.velocity.clone(),
            input: lmpc.input.clone(),
            termination: lmpc.cfg.termination,
            q: lmpc.cfg.q,
            r: lmpc.cfg.r,
            tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CloudStore {
    layout: Arc<Layout>,
    rules: StoreRules,
    sets: BTreeMap<TaskKey, Arc<SafeSet>>,
    versions: BTreeMap<TaskKey, u64>,
    log: Vec<TrajectoryRecord>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    layout: String,
    records: usize,
}

impl CloudStore {
    /// Empty safe sets for every task of the layout.
    pub fn new(layout: Arc<Layout>, rules: StoreRules) -> Self {
        let keys = layout.task_keys();
        Self {
            sets: keys.iter().map(|k| (*k, Arc::new(SafeSet::new(*k)))).collect(),
            versions: keys.iter().map(|k| (*k, 0)).collect(),
            layout,
            rules,
            log: Vec::new(),
        }
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn rules(&self) -> &StoreRules {
        &self.rules
    }

    pub fn version(&self, key: &TaskKey) -> Result<u64, CloudError> {
        self.versions.get(key).copied().ok_or(CloudError::UnknownKey(*key))
    }

    pub fn log(&self) -> &[TrajectoryRecord] {
        &self.log
    }

    /// Consistent read-only view of one safe set at the current version.
    pub fn snapshot(&self, key: &TaskKey) -> Result<Arc<SafeSet>, CloudError> {
        let set = self.sets.get(key).ok_or(CloudError::UnknownKey(*key))?;
        if set.is_empty() {
            return Err(CloudError::Uninitialized(*key));
        }
        Ok(Arc::clone(set))
    }

    /// Checks every record invariant against the layout and the rules.
    pub fn check_record(&self, record: &TrajectoryRecord) -> Result<(), CloudError> {
        let key = record.task;
        self.layout
            .validate_key(&key)
            .map_err(|_| CloudError::UnknownKey(key))?;
        let n = record.states.len();
        if n == 0 || record.inputs.len() != n || record.costs_to_go.len() != n {
            return Err(CloudError::Malformed(format!(
                "{} states, {} inputs, {} costs-to-go",
                n,
                record.inputs.len(),
                record.costs_to_go.len()
            )));
        }
        if record.end < record.start || record.end - record.start + 1 != n {
            return Err(CloudError::Malformed(format!(
                "steps {}..={} do not match {} states",
                record.start, record.end, n
            )));
        }
        let finite = record.states.iter().all(AgentState::is_finite)
            && record.inputs.iter().all(|u| u.ax.is_finite() && u.ay.is_finite())
            && record.costs_to_go.iter().all(|f| f.is_finite());
        if !finite {
            return Err(CloudError::Malformed("non-finite value".into()));
        }
        if record.inputs[n - 1] != ControlInput::ZERO {
            return Err(CloudError::Malformed("final input must be zero".into()));
        }
        let target = self.layout.target(key.q);
        if !self.rules.termination.reached(&record.states[n - 1], target) {
            return Err(CloudError::NotTerminated(key));
        }
        if !record.pedestrian_affected {
            for (step, x) in record.states.iter().enumerate() {
                let ok = self.layout.admissible_position_tol(&key, &x.position(), self.rules.tol)
                    && self.rules.velocity.contains(&x.velocity(), self.rules.tol);
                if !ok {
                    return Err(CloudError::Inadmissible { key, step });
                }
            }
        }
        let (q, r) = (&self.rules.q, &self.rules.r);
        for t in 0..n {
            let u = if t + 1 < n {
                record.inputs[t]
            } else {
                ControlInput::ZERO
            };
            let next = if t + 1 < n { record.costs_to_go[t + 1] } else { 0.0 };
            let expected = stage_cost(&record.states[t], &u, target, q, r) + next;
            let f = record.costs_to_go[t];
            if (f - expected).abs() > 1e-9 * f.abs().max(1.0) {
                return Err(CloudError::CostMismatch(t));
            }
        }
        Ok(())
    }

    /// Deadbeat continuation from an inexact final state to the target,
    /// when one is needed and admissible.
    fn bridge(&self, record: &TrajectoryRecord) -> Option<Bridge> {
        let key = record.task;
        let target = *self.layout.target(key.q);
        let last = record.states.last()?;
        let error = last.to_vector() - target.to_vector();
        if error.amax() <= 1e-12 {
            return None;
        }
        let (c0, c1) = self.rules.model.two_step_correction(&error)?;
        let middle = self.rules.model.step(last, &c0);
        let tol = self.rules.tol;
        let admissible = self.layout.admissible_position_tol(&key, &middle.position(), tol)
            && self.rules.velocity.contains(&middle.velocity(), tol)
            && self.rules.input.contains(&c0.to_vector(), tol)
            && self.rules.input.contains(&c1.to_vector(), tol);
        if !admissible {
            return None;
        }
        let (q, r) = (&self.rules.q, &self.rules.r);
        let f_middle = stage_cost(&middle, &c1, &target, q, r);
        let f_last = stage_cost(last, &c0, &target, q, r) + f_middle;
        Some(Bridge {
            inputs: [c0, c1],
            middle,
            target,
            costs: [f_last, f_middle],
        })
    }

    fn append(&mut self, record: TrajectoryRecord) -> u64 {
        let key = record.task;
        let bridge = self.bridge(&record);
        Arc::make_mut(self.sets.get_mut(&key).expect("key checked")).append(&record, bridge.as_ref());
        let version = self.versions.get_mut(&key).expect("key checked");
        *version += 1;
        self.log.push(record);
        *version
    }

    /// Stores an initial trajectory.
    pub fn seed(&mut self, mut record: TrajectoryRecord) -> Result<u64, CloudError> {
        record.origin = RecordOrigin::Seed;
        if record.pedestrian_affected {
            return Err(CloudError::PedestrianAffected);
        }
        self.check_record(&record)?;
        Ok(self.append(record))
    }

    /// Appends a completed execution to its task's safe set.
    pub fn upload(&mut self, record: TrajectoryRecord) -> Result<u64, CloudError> {
        if record.pedestrian_affected {
            return Err(CloudError::PedestrianAffected);
        }
        self.check_record(&record)?;
        Ok(self.append(record))
    }

    /// Copies `record` onto every translated task whose admissible region
    /// contains the shifted states, keeping the costs-to-go unchanged.
    pub fn transfer(&mut self, record: &TrajectoryRecord) -> Vec<TrajectoryRecord> {
        let mut added = Vec::new();
        for key in self.layout.task_keys() {
            if key == record.task {
                continue;
            }
            let Some(shift) = self.layout.task_shift(&record.task, &key) else {
                continue;
            };
            let states: Vec<AgentState> = record.states.iter().map(|x| x.shifted(shift)).collect();
            let derived = TrajectoryRecord {
                task: key,
                states,
                origin: RecordOrigin::Transferred {
                    from: record.task,
                    shift: [shift.x, shift.y],
                },
                ..record.clone()
            };
            if self.check_record(&derived).is_ok() {
                self.append(derived.clone());
                added.push(derived);
            }
        }
        added
    }

    /// Writes the store as JSON lines: a header, then one record per line
    /// in the order they entered the store.
    pub fn persist(&self, path: &Path) -> Result<(), CloudError> {
        let io = |source| CloudError::Io {
            path: path.display().to_string(),
            source,
        };
        let file = std::fs::File::create(path).map_err(io)?;
        let mut w = std::io::BufWriter::new(file);
        let header = Header {
            format: FORMAT.into(),
            version: FORMAT_VERSION,
            layout: self.layout.fingerprint(),
            records: self.log.len(),
        };
        let line = serde_json::to_string(&header).expect("header serializes");
        writeln!(w, "{line}").map_err(io)?;
        for record in &self.log {
            let line = serde_json::to_string(record).expect("record serializes");
            writeln!(w, "{line}").map_err(io)?;
        }
        w.flush().map_err(io)
    }

    /// Rebuilds a store by replaying a persisted log.
    pub fn load(path: &Path, layout: Arc<Layout>, rules: StoreRules) -> Result<Self, CloudError> {
        let io = |source| CloudError::Io {
            path: path.display().to_string(),
            source,
        };
        let file = std::fs::File::open(path).map_err(io)?;
        let mut lines = std::io::BufReader::new(file).lines();
        let first = lines.next().ok_or(CloudError::Parse {
            line: 1,
            message: "missing header".into(),
        })?;
        let header: Header = serde_json::from_str(&first.map_err(io)?).map_err(|e| CloudError::Parse {
            line: 1,
            message: e.to_string(),
        })?;
        if header.format != FORMAT || header.version != FORMAT_VERSION {
            return Err(CloudError::Parse {
                line: 1,
                message: format!("unsupported format {} v{}", header.format, header.version),
            });
        }
        let expected = layout.fingerprint();
        if header.layout != expected {
            return Err(CloudError::LayoutMismatch {
                expected,
                found: header.layout,
            });
        }
        let mut store = Self::new(layout, rules);
        let mut found = 0;
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            let line = line.map_err(io)?;
            if line.trim().is_empty() {
                continue;
            }
            let record: TrajectoryRecord = serde_json::from_str(&line).map_err(|e| CloudError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            if record.pedestrian_affected {
                return Err(CloudError::Parse {
                    line: line_no,
                    message: CloudError::PedestrianAffected.to_string(),
                });
            }
            store.check_record(&record).map_err(|e| CloudError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            store.append(record);
            found += 1;
        }
        if found != header.records {
            return Err(CloudError::Truncated {
                expected: header.records,
                found,
            });
        }
        Ok(store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::LayoutConfig;
    use crate::lmpc::{Lmpc, LmpcConfig};
    use nalgebra::Vector2;

    fn setup() -> (Arc<Layout>, StoreRules, Lmpc) {
        let layout = Arc::new(Layout::build(&LayoutConfig::default()).unwrap());
        let lmpc = Lmpc::new(LmpcConfig::default()).unwrap();
        (layout, StoreRules::from_lmpc(&lmpc), lmpc)
    }

    /// Straight bang-off-bang run along a horizontal road, built by hand.
    fn straight_record(layout: &Layout, lmpc: &Lmpc, key: TaskKey) -> TrajectoryRecord {
        let a = layout.target(key.p).position();
        let b = layout.target(key.q).position();
        let d = (b - a).normalize();
        // 20 m in 8 steps: accelerate for 2, cruise for 4, brake for 2
        let acc = 20.0 / (lmpc.cfg.ts * lmpc.cfg.ts * 2.0 * 6.0);
        let mut inputs = Vec::new();
        inputs.extend(std::iter::repeat_n(d * acc, 2));
        inputs.extend(std::iter::repeat_n(Vector2::zeros(), 4));
        inputs.extend(std::iter::repeat_n(-d * acc, 2));
        let inputs: Vec<ControlInput> = inputs.iter().map(ControlInput::from_vector).collect();
        let mut states = lmpc.model.rollout(layout.target(key.p), &inputs);
        // the closed-form endpoint is exact up to rounding
        let last = states.len() - 1;
        states[last] = *layout.target(key.q);
        let mut inputs = inputs;
        inputs.push(ControlInput::ZERO);
        let target = layout.target(key.q);
        let f = compute_costs_to_go(
            &states,
            &inputs,
            target,
            &lmpc.cfg.q,
            &lmpc.cfg.r,
            &lmpc.cfg.termination,
        )
        .unwrap();
        TrajectoryRecord {
            agent_id: Some(0),
            task: key,
            iteration: 1,
            start: 0,
            end: states.len() - 1,
            states,
            inputs,
            costs_to_go: f,
            pedestrian_affected: false,
            origin: RecordOrigin::Executed,
        }
    }

    #[test]
    fn cost_to_go_examples() {
        let q = Matrix4::identity() * 0.01;
        let r = Matrix2::identity() * 0.5;
        let tb = TerminationBox::default();
        let t = AgentState::new(20.0, 0.0, 0.0, 0.0);
        assert_eq!(
            compute_costs_to_go(&[t], &[ControlInput::ZERO], &t, &q, &r, &tb).unwrap(),
            vec![0.0]
        );
        let x0 = AgentState::new(21.0, 0.0, 0.0, 0.0);
        let f = compute_costs_to_go(
            &[x0, t],
            &[ControlInput::new(1.0, 0.0), ControlInput::ZERO],
            &t,
            &q,
            &r,
            &tb,
        )
        .unwrap();
        assert!((f[0] - 0.51).abs() < 1e-15);
        assert_eq!(f[1], 0.0);
        assert!(compute_costs_to_go(&[x0], &[ControlInput::ZERO], &t, &q, &r, &tb).is_err());
    }

    #[test]
    fn upload_appends_and_versions() {
        let (layout, rules, lmpc) = setup();
        let mut store = CloudStore::new(layout.clone(), rules);
        let key = TaskKey::new(0, 1, 0);
        let rec = straight_record(&layout, &lmpc, key);
        assert!(matches!(store.snapshot(&key), Err(CloudError::Uninitialized(_))));
        let before_len = rec.states.len();
        assert_eq!(store.seed(rec.clone()).unwrap(), 1);
        let snap = store.snapshot(&key).unwrap();
        assert_eq!(snap.len(), before_len);
        assert_eq!(store.upload(rec.clone()).unwrap(), 2);
        // earlier snapshot is unchanged
        assert_eq!(snap.len(), before_len);
        assert_eq!(store.snapshot(&key).unwrap().len(), 2 * before_len);
        assert_eq!(store.snapshot(&key).unwrap(), store.snapshot(&key).unwrap());
        let last = store.snapshot(&key).unwrap();
        assert_eq!(last.points[before_len - 1].successor, before_len - 1);
        assert_eq!(last.points[0].successor, 1);
    }

    #[test]
    fn upload_rejections_are_distinct() {
        let (layout, rules, lmpc) = setup();
        let mut store = CloudStore::new(layout.clone(), rules);
        let mut rec = straight_record(&layout, &lmpc, TaskKey::new(0, 1, 0));
        rec.pedestrian_affected = true;
        assert!(matches!(store.upload(rec.clone()), Err(CloudError::PedestrianAffected)));
        // the straight line runs through the mode-1 circle
        let mut rec = straight_record(&layout, &lmpc, TaskKey::new(0, 1, 0));
        rec.task = TaskKey::new(0, 1, 1);
        match store.upload(rec) {
            Err(CloudError::Inadmissible { step, .. }) => assert!(step > 0),
            other => panic!("unexpected {other:?}"),
        }
        let mut rec = straight_record(&layout, &lmpc, TaskKey::new(0, 1, 0));
        rec.costs_to_go[2] += 1.0;
        assert!(matches!(store.upload(rec), Err(CloudError::CostMismatch(_))));
    }

    #[test]
    fn q_value_takes_the_minimum() {
        let key = TaskKey::new(0, 1, 0);
        let mut set = SafeSet::new(key);
        let x = AgentState::new(5.0, 0.0, 1.0, 0.0);
        let t = AgentState::new(20.0, 0.0, 0.0, 0.0);
        for f in [10.0, 7.0] {
            set.append(
                &TrajectoryRecord {
                    agent_id: None,
                    task: key,
                    iteration: 0,
                    start: 0,
                    end: 1,
                    states: vec![x, t],
                    inputs: vec![ControlInput::ZERO; 2],
                    costs_to_go: vec![f, 0.0],
                    pedestrian_affected: false,
                    origin: RecordOrigin::Seed,
                },
                None,
            );
        }
        assert_eq!(q_value(&set, &x, 1e-9).unwrap(), 7.0);
        assert_eq!(q_value(&set, &t, 1e-9).unwrap(), 0.0);
        assert!(q_value(&set, &AgentState::default(), 1e-9).is_err());
    }

    #[test]
    fn transfer_copies_costs_exactly() {
        let (layout, rules, lmpc) = setup();
        let mut store = CloudStore::new(layout.clone(), rules);
        let rec = straight_record(&layout, &lmpc, TaskKey::new(1, 2, 0));
        store.upload(rec.clone()).unwrap();
        let added = store.transfer(&rec);
        let keys: Vec<TaskKey> = added.iter().map(|r| r.task).collect();
        // same direction on the five other horizontal roads, mode 0 only
        assert!(keys.contains(&TaskKey::new(4, 5, 0)));
        assert!(keys.contains(&TaskKey::new(0, 1, 0)));
        assert!(!keys.contains(&TaskKey::new(2, 1, 0)));
        assert!(keys.iter().all(|k| k.m == 0));
        assert_eq!(keys.len(), 5);
        for r in &added {
            assert_eq!(r.costs_to_go, rec.costs_to_go);
            store.check_record(r).unwrap();
        }
    }

    #[test]
    fn persistence_round_trips() {
        let (layout, rules, lmpc) = setup();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl");
        let empty = CloudStore::new(layout.clone(), rules.clone());
        empty.persist(&path).unwrap();
        assert_eq!(CloudStore::load(&path, layout.clone(), rules.clone()).unwrap(), empty);

        let mut store = empty.clone();
        let rec = straight_record(&layout, &lmpc, TaskKey::new(3, 4, 0));
        store.upload(rec.clone()).unwrap();
        store.transfer(&rec);
        store.persist(&path).unwrap();
        let loaded = CloudStore::load(&path, layout.clone(), rules.clone()).unwrap();
        assert_eq!(loaded, store);

        let text = std::fs::read_to_string(&path).unwrap();
        let cut: String = text.lines().take(3).map(|l| format!("{l}\n")).collect();
        std::fs::write(&path, cut).unwrap();
        assert!(matches!(
            CloudStore::load(&path, layout.clone(), rules.clone()),
            Err(CloudError::Truncated { .. })
        ));
        let half = &text[..text.len() / 2];
        std::fs::write(&path, half).unwrap();
        assert!(CloudStore::load(&path, layout, rules).is_err());
    }
}
