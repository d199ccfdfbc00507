//! Fleet simulation: task assignment, pedestrian events, per-step control
//! on a shared clock, cloud updates at task boundaries and run metrics.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::{compute_costs_to_go, CloudError, CloudStore, RecordOrigin, SafeSet, StoreRules, TrajectoryRecord};
use crate::dynamics::{AgentState, ControlInput};
use crate::geometry::{GeometryError, Layout, TaskKey};
use crate::lmpc::{
    baseline_optimal, initial_trajectory, Lmpc, LmpcError, Plan, ProblemKind, Reacquisition, SolveOutcome,
};
use crate::qp::QpStatus;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub agents: usize,
    /// Total number of tasks, split as evenly as possible between agents.
    pub tasks: usize,
    pub pedestrian_probability: f64,
    /// Inclusive range of pedestrian event durations, in steps.
    pub pedestrian_min_steps: usize,
    pub pedestrian_max_steps: usize,
    /// Detection distance; `None` uses `N·Ts·v_max`.
    pub detection_range: Option<f64>,
    pub step_cap: usize,
    pub seed: u64,
    /// Target each agent starts at; `None` spreads agents over the grid.
    pub start_targets: Option<Vec<usize>>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            agents: 3,
            tasks: 390,
            pedestrian_probability: 0.1,
            pedestrian_min_steps: 4,
            pedestrian_max_steps: 8,
            detection_range: None,
            step_cap: 200,
            seed: 7,
            start_targets: None,
        }
    }
}

impl SimConfig {
    pub fn validate(&self, layout: &Layout) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        if self.agents == 0 {
            return bad("at least one agent is needed".into());
        }
        if !(0.0..=1.0).contains(&self.pedestrian_probability) {
            return bad(format!(
                "pedestrian probability {} is outside [0, 1]",
                self.pedestrian_probability
            ));
        }
        if self.pedestrian_min_steps == 0 || self.pedestrian_min_steps > self.pedestrian_max_steps {
            return bad(format!(
                "pedestrian duration range {}..={} is empty or starts at 0",
                self.pedestrian_min_steps, self.pedestrian_max_steps
            ));
        }
        if self.detection_range.is_some_and(|d| !(d > 0.0 && d.is_finite())) {
            return bad("detection range must be positive".into());
        }
        if self.step_cap == 0 {
            return bad("step cap must be positive".into());
        }
        if let Some(t) = &self.start_targets {
            if t.len() != self.agents {
                return bad(format!("{} start targets for {} agents", t.len(), self.agents));
            }
            if let Some(bad_id) = t.iter().find(|&&id| id >= layout.targets.len()) {
                return bad(format!("start target {bad_id} does not exist"));
            }
        }
        Ok(())
    }

    fn start_target(&self, agent: usize, layout: &Layout) -> usize {
        match &self.start_targets {
            Some(t) => t[agent],
            None => agent * layout.targets.len() / self.agents,
        }
    }

    /// Tasks performed by `agent`.
    pub fn quota(&self, agent: usize) -> usize {
        self.tasks / self.agents + usize::from(agent < self.tasks % self.agents)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid simulation configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error("initial data for {key}: {source}")]
    Setup { key: TaskKey, source: Box<LmpcError> },
    #[error("agent {agent} on {key} at step {step} from {state:?}: {source}")]
    Control {
        agent: usize,
        key: TaskKey,
        step: usize,
        state: AgentState,
        source: Box<LmpcError>,
    },
    #[error("agent {agent} did not finish {key} within {steps} steps")]
    StepCap { agent: usize, key: TaskKey, steps: usize },
    #[error("agent {0} is not free")]
    AgentBusy(usize),
    #[error("baseline of {0} is not positive")]
    NoBaseline(TaskKey),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    /// One shared store, with transfer between translated tasks.
    CloudBased,
    /// A private store per agent and no transfer.
    Isolated,
}

impl fmt::Display for RunMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RunMode::CloudBased => "cloud_based",
            RunMode::Isolated => "isolated",
        })
    }
}

/// A pedestrian occupying a road's crosswalk for a window of steps.
#[derive(Debug, Clone, PartialEq)]
pub struct PedestrianEvent {
    pub key: TaskKey,
    /// Crosswalk position as arc length from the task origin.
    pub crosswalk: f64,
    /// Active for `k_on <= k < k_off`.
    pub k_on: usize,
    pub k_off: usize,
    /// End points of the pedestrian's path across the road.
    pub path: [Vector2<f64>; 2],
}

impl PedestrianEvent {
    pub fn is_active(&self, step: usize) -> bool {
        (self.k_on..self.k_off).contains(&step)
    }

    pub fn duration(&self) -> usize {
        self.k_off - self.k_on
    }
}

/// Distance travelled in one horizon at top speed.
pub fn default_detection_range(lmpc: &Lmpc) -> f64 {
    lmpc.cfg.horizon as f64 * lmpc.cfg.ts * lmpc.cfg.v_max
}

/// Whether the agent at `x` sees the active pedestrian, measured as the
/// distance to the crosswalk line.
pub fn detect(layout: &Layout, x: &AgentState, event: &PedestrianEvent, step: usize, range: f64) -> bool {
    event.is_active(step) && (layout.along_road(&event.key, &x.position()) - event.crosswalk).abs() <= range
}

/// Draws the pedestrian event of a task starting at `start`.
pub fn spawn_pedestrian(
    rng: &mut impl Rng,
    layout: &Layout,
    key: &TaskKey,
    start: usize,
    cfg: &SimConfig,
) -> Result<Option<PedestrianEvent>, SimError> {
    if !rng.gen_bool(cfg.pedestrian_probability) {
        return Ok(None);
    }
    let steps = rng.gen_range(cfg.pedestrian_min_steps..=cfg.pedestrian_max_steps);
    let crosswalk = layout.crosswalk_along(key)?;
    let d = layout.direction(key);
    let left = Vector2::new(-d.y, d.x);
    let centre = layout.target(key.p).position() + d * crosswalk;
    let half = 0.5 * layout.road_width;
    Ok(Some(PedestrianEvent {
        key: *key,
        crosswalk,
        k_on: start,
        k_off: start + steps,
        path: [centre - left * half, centre + left * half],
    }))
}

/// Optimality loss relative to the long-horizon baseline.
pub fn optimality_gap(cost: f64, baseline: f64) -> Option<f64> {
    (baseline > 0.0 && baseline.is_finite()).then(|| (cost - baseline) / baseline)
}

/// First index whose cost is within `rel` (relative) of the last cost.
pub fn settling_index(costs: &[f64], rel: f64) -> Option<usize> {
    let last = *costs.last()?;
    costs.iter().position(|c| (c - last).abs() <= rel * last.abs())
}

/// True when a cost undercuts its baseline by more than the tolerance.
pub fn below_baseline(cost: f64, baseline: f64) -> bool {
    cost < baseline - 1e-6 * baseline.max(1.0)
}

/// Task assignment: free agents, their current tasks and the per-agent
/// random streams.
#[derive(Debug, Clone)]
pub struct Coordinator {
    free: BTreeSet<usize>,
    parked: Vec<usize>,
    assigned: Vec<Option<(TaskKey, usize)>>,
    counters: Vec<usize>,
    rngs: Vec<ChaCha8Rng>,
}

impl Coordinator {
    pub fn new(start_targets: &[usize], seed: u64) -> Self {
        let rngs = (0..start_targets.len())
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                rng
            })
            .collect();
        Self {
            free: (0..start_targets.len()).collect(),
            parked: start_targets.to_vec(),
            assigned: vec![None; start_targets.len()],
            counters: vec![0; start_targets.len()],
            rngs,
        }
    }

    pub fn is_free(&self, agent: usize) -> bool {
        self.free.contains(&agent)
    }

    pub fn parked_at(&self, agent: usize) -> usize {
        self.parked[agent]
    }

    pub fn tasks_started(&self, agent: usize) -> usize {
        self.counters[agent]
    }

    pub fn current(&self, agent: usize) -> Option<(TaskKey, usize)> {
        self.assigned[agent]
    }

    pub fn rng(&mut self, agent: usize) -> &mut ChaCha8Rng {
        &mut self.rngs[agent]
    }

    /// Sends a free agent to a uniformly drawn neighbouring target in a
    /// uniformly drawn mode.
    pub fn assign(&mut self, agent: usize, layout: &Layout, step: usize) -> Result<TaskKey, SimError> {
        if !self.free.remove(&agent) {
            return Err(SimError::AgentBusy(agent));
        }
        let p = self.parked[agent];
        let neighbors = layout.neighbors(p);
        let rng = &mut self.rngs[agent];
        let q = neighbors[rng.gen_range(0..neighbors.len())];
        let m = rng.gen_range(0..layout.modes());
        let key = TaskKey::new(p, q, m);
        self.assigned[agent] = Some((key, step));
        self.counters[agent] += 1;
        Ok(key)
    }

    /// The agent has reached its destination and is ready again.
    pub fn release(&mut self, agent: usize) {
        if let Some((key, _)) = self.assigned[agent].take() {
            self.parked[agent] = key.q;
            self.free.insert(agent);
        }
    }
}

/// One completed task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskExecution {
    pub key: TaskKey,
    /// Position among all executions of the key in this run, by start
    /// step then agent id, from 1.
    pub repetition: usize,
    pub agent: usize,
    pub start_step: usize,
    pub end_step: usize,
    pub cost: f64,
    pub gap: Option<f64>,
    /// Cost below the baseline beyond tolerance.
    pub anomaly: bool,
    pub steps: usize,
    pub pedestrian: bool,
    /// Steps during which the pedestrian was detected.
    pub detected_steps: usize,
}

/// One controller solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveRecord {
    pub agent: usize,
    pub key: TaskKey,
    pub task_start: usize,
    pub step: usize,
    pub kind: ProblemKind,
    pub optimal: bool,
    pub objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: usize,
    pub horizon: usize,
    pub candidate_violation: Option<f64>,
    /// `J*(k) − (J*(k−1) − h(x(k−1), u(k−1)))`, where it applies.
    pub decrease_slack: Option<f64>,
    /// Smallest predicted distance to the keep-out circle less its radius.
    pub circle_clearance: Option<f64>,
    pub weight_sum: f64,
    pub weight_min: f64,
}

/// State of a pedestrian-affected task at one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub agent: usize,
    pub key: TaskKey,
    pub task_start: usize,
    pub step: usize,
    pub time: f64,
    pub x: f64,
    pub y: f64,
    /// Arc length along the road from the task origin.
    pub along: f64,
    /// Arc length the agent must stay below while the pedestrian is seen.
    pub limit: f64,
    pub event_active: bool,
    pub detected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimMetrics {
    pub mode: RunMode,
    pub seed: u64,
    pub executions: Vec<TaskExecution>,
    pub solves: Vec<SolveRecord>,
    pub traces: Vec<TraceRow>,
    pub baselines: BTreeMap<TaskKey, f64>,
    pub transfers: usize,
    pub clock: usize,
}

impl SimMetrics {
    /// Solves whose candidate violated the problem beyond `tol`.
    pub fn candidate_failures(&self, tol: f64) -> usize {
        self.solves
            .iter()
            .filter(|s| s.candidate_violation.is_some_and(|v| v > tol))
            .count()
    }

    /// Costs of the pedestrian-free executions of `key`, in repetition
    /// order.
    pub fn clean_costs(&self, key: &TaskKey) -> Vec<f64> {
        self.repetitions(key)
            .into_iter()
            .filter(|e| !e.pedestrian)
            .map(|e| e.cost)
            .collect()
    }

    /// Executions of `key` in repetition order.
    pub fn repetitions(&self, key: &TaskKey) -> Vec<&TaskExecution> {
        let mut runs: Vec<&TaskExecution> = self.executions.iter().filter(|e| e.key == *key).collect();
        runs.sort_by_key(|e| e.repetition);
        runs
    }
}

/// A finished run and the stores it left behind (one in cloud-based
/// mode, one per agent when isolated).
#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub metrics: SimMetrics,
    pub stores: Vec<CloudStore>,
}

/// A store holding the initial trajectory of every task.
pub fn seeded_store(layout: Arc<Layout>, lmpc: &Lmpc) -> Result<CloudStore, SimError> {
    let mut store = CloudStore::new(layout.clone(), StoreRules::from_lmpc(lmpc));
    for key in layout.task_keys() {
        let record = initial_trajectory(&key, &layout, lmpc).map_err(|source| SimError::Setup {
            key,
            source: Box::new(source),
        })?;
        store.seed(record)?;
    }
    Ok(store)
}

/// Baseline cost of every task, linearized around its initial trajectory.
/// Tasks that are translates of one another in the same mode share one
/// solve, since the stage cost only sees offsets from the target.
pub fn baselines(layout: &Layout, lmpc: &Lmpc) -> Result<BTreeMap<TaskKey, f64>, SimError> {
    let keys = layout.task_keys();
    let mut representative: Vec<(TaskKey, TaskKey)> = Vec::new();
    let mut solved: Vec<TaskKey> = Vec::new();
    for key in &keys {
        let rep = solved
            .iter()
            .find(|r| r.m == key.m && layout.task_shift(r, key).is_some())
            .copied()
            .unwrap_or_else(|| {
                solved.push(*key);
                *key
            });
        representative.push((*key, rep));
    }
    let one = |key: TaskKey| -> Result<(TaskKey, f64), SimError> {
        let setup = |source| SimError::Setup {
            key,
            source: Box::new(source),
        };
        let seed = initial_trajectory(&key, layout, lmpc).map_err(setup)?;
        let reference: Vec<Vector2<f64>> = seed.states.iter().map(|x| x.position()).collect();
        let base = baseline_optimal(&key, layout, lmpc, &reference).map_err(setup)?;
        Ok((key, base.cost))
    };
    #[cfg(feature = "parallel")]
    let results: Vec<_> = {
        use rayon::prelude::*;
        solved.into_par_iter().map(one).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<_> = solved.into_iter().map(one).collect();
    let costs: BTreeMap<TaskKey, f64> = results.into_iter().collect::<Result<_, _>>()?;
    Ok(representative
        .into_iter()
        .map(|(key, rep)| (key, costs[&rep]))
        .collect())
}

struct Context<'a> {
    layout: &'a Layout,
    lmpc: &'a Lmpc,
    range: f64,
    step_cap: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Main,
    Obstacle,
}

struct ActiveTask {
    agent: usize,
    key: TaskKey,
    start: usize,
    iteration: usize,
    event: Option<PedestrianEvent>,
    snapshot: Arc<SafeSet>,
    states: Vec<AgentState>,
    inputs: Vec<ControlInput>,
    phase: Phase,
    plan: Option<Plan>,
    last: Option<(ProblemKind, f64)>,
    detected_steps: usize,
    solves: Vec<SolveRecord>,
    trace: Vec<TraceRow>,
    done: bool,
    ts: f64,
}

impl ActiveTask {
    fn fail(&self, step: usize, source: LmpcError) -> SimError {
        SimError::Control {
            agent: self.agent,
            key: self.key,
            step,
            state: *self.states.last().expect("task has a state"),
            source: Box::new(source),
        }
    }

    /// Solves one problem at global step `step` and applies its input.
    fn advance(&mut self, ctx: &Context, step: usize) -> Result<(), SimError> {
        let (layout, lmpc) = (ctx.layout, ctx.lmpc);
        let x = *self.states.last().expect("task has a state");
        let key = self.key;
        let target = layout.target(key.q);
        let detected = self
            .event
            .as_ref()
            .is_some_and(|e| detect(layout, &x, e, step, ctx.range));
        let ss = Arc::clone(&self.snapshot);
        let ss = &*ss;
        let fail = |task: &Self, e| task.fail(step, e);

        if !detected && self.phase == Phase::Obstacle && !lmpc.position_in_hull(&x, ss) {
            // finish the moving-obstacle plan, which ends at rest inside
            // the hull, before handing back
            let prev = self.plan.as_ref().expect("obstacle phase has a plan");
            let plan = lmpc.obstacle_candidate(prev, &x);
            if let Some(event) = &self.event {
                self.trace.push(self.trace_row(layout, step, &x, event, false));
            }
            return self.apply(ctx, plan, step);
        }

        let out: SolveOutcome = if detected {
            let event = self.event.as_ref().expect("detection needs an event");
            let region = layout.before_obstacle_region_at(&key, event.crosswalk)?;
            let (candidate, check) = match (&self.phase, &self.plan) {
                (Phase::Obstacle, Some(prev)) => (lmpc.obstacle_candidate(prev, &x), true),
                _ => (lmpc.hold_candidate(&x), false),
            };
            self.detected_steps += 1;
            self.phase = Phase::Obstacle;
            lmpc.solve_obstacle(&x, &key, layout, &region, ss, &candidate, check)
                .map_err(|e| fail(self, e))?
        } else if self.phase == Phase::Obstacle {
            self.phase = Phase::Main;
            match lmpc
                .reacquire_safe_set(&x, &key, layout, ss)
                .map_err(|e| fail(self, e))?
            {
                Reacquisition::Stored { candidate, .. } => lmpc
                    .solve_main(&x, &key, layout, ss, &candidate)
                    .map_err(|e| fail(self, e))?,
                Reacquisition::Steered { outcome, .. } => outcome,
            }
        } else {
            let candidate = match &self.plan {
                Some(prev) => lmpc.build_candidate(prev, &x, ss),
                None => lmpc.first_candidate(&x, ss).map_err(|e| fail(self, e))?,
            };
            lmpc.solve_main(&x, &key, layout, ss, &candidate)
                .map_err(|e| fail(self, e))?
        };

        let decrease_slack = match (out.kind, self.last) {
            (ProblemKind::Main, Some((ProblemKind::Main | ProblemKind::Reacquire, prev))) => {
                let h = lmpc.stage_cost(
                    &self.states[self.states.len() - 2],
                    self.inputs.last().expect("a step was taken"),
                    target,
                );
                Some(out.objective - (prev - h))
            }
            _ => None,
        };
        let circle_clearance = layout.circle(&key).map(|c| {
            out.plan
                .states
                .iter()
                .map(|s| (s.position() - c.center).norm() - c.radius)
                .fold(f64::INFINITY, f64::min)
        });
        self.solves.push(SolveRecord {
            agent: self.agent,
            key,
            task_start: self.start,
            step,
            kind: out.kind,
            optimal: out.status == QpStatus::Optimal,
            objective: out.objective,
            primal_residual: out.primal_residual,
            dual_residual: out.dual_residual,
            iterations: out.iterations,
            horizon: out.plan.horizon(),
            candidate_violation: out.candidate_violation,
            decrease_slack,
            circle_clearance,
            weight_sum: out.weight_sum,
            weight_min: out.weight_min,
        });
        if let Some(event) = &self.event {
            self.trace.push(self.trace_row(layout, step, &x, event, detected));
        }

        self.last = Some((out.kind, out.objective));
        self.apply(ctx, out.plan, step)
    }

    /// Applies the first input of `plan` and checks termination.
    fn apply(&mut self, ctx: &Context, plan: Plan, step: usize) -> Result<(), SimError> {
        let (layout, lmpc) = (ctx.layout, ctx.lmpc);
        let x = *self.states.last().expect("task has a state");
        let key = self.key;
        let target = layout.target(key.q);
        let u = plan.inputs[0];
        let next = lmpc.model.step(&x, &u);
        self.plan = Some(plan);
        self.inputs.push(u);
        self.states.push(next);
        if self.phase == Phase::Main && lmpc.cfg.termination.reached(&next, target) {
            self.done = true;
            if let Some(event) = &self.event {
                let row = self.trace_row(layout, step + 1, &next, event, false);
                self.trace.push(row);
            }
        } else if self.inputs.len() >= ctx.step_cap {
            return Err(SimError::StepCap {
                agent: self.agent,
                key,
                steps: ctx.step_cap,
            });
        }
        Ok(())
    }

    fn trace_row(
        &self,
        layout: &Layout,
        step: usize,
        x: &AgentState,
        event: &PedestrianEvent,
        detected: bool,
    ) -> TraceRow {
        TraceRow {
            agent: self.agent,
            key: self.key,
            task_start: self.start,
            step,
            time: (step - self.start) as f64 * self.ts,
            x: x.sx,
            y: x.sy,
            along: layout.along_road(&self.key, &x.position()),
            limit: event.crosswalk - layout.crosswalk_margin,
            event_active: event.is_active(step),
            detected,
        }
    }

    fn record(&self, lmpc: &Lmpc, target: &AgentState) -> Result<TrajectoryRecord, CloudError> {
        let mut inputs = self.inputs.clone();
        inputs.push(ControlInput::ZERO);
        let cfg = &lmpc.cfg;
        let costs_to_go = compute_costs_to_go(&self.states, &inputs, target, &cfg.q, &cfg.r, &cfg.termination)?;
        Ok(TrajectoryRecord {
            agent_id: Some(self.agent),
            task: self.key,
            iteration: self.iteration,
            start: self.start,
            end: self.start + self.inputs.len(),
            states: self.states.clone(),
            inputs,
            costs_to_go,
            pedestrian_affected: self.detected_steps > 0,
            origin: RecordOrigin::Executed,
        })
    }
}

/// Runs the fleet until every agent has used its task quota. `initial`
/// replaces the freshly seeded store; in isolated mode every agent starts
/// from its own copy.
pub fn run(
    layout: Arc<Layout>,
    lmpc: &Lmpc,
    cfg: &SimConfig,
    mode: RunMode,
    baselines: &BTreeMap<TaskKey, f64>,
    initial: Option<CloudStore>,
) -> Result<SimOutcome, SimError> {
    cfg.validate(&layout)?;
    let store = match initial {
        Some(s) => s,
        None => seeded_store(layout.clone(), lmpc)?,
    };
    let mut stores = match mode {
        RunMode::CloudBased => vec![store],
        RunMode::Isolated => vec![store; cfg.agents],
    };
    let store_of = |agent: usize| match mode {
        RunMode::CloudBased => 0,
        RunMode::Isolated => agent,
    };
    let ctx = Context {
        layout: &layout,
        lmpc,
        range: cfg.detection_range.unwrap_or_else(|| default_detection_range(lmpc)),
        step_cap: cfg.step_cap,
    };
    let starts: Vec<usize> = (0..cfg.agents).map(|i| cfg.start_target(i, &layout)).collect();
    let mut coord = Coordinator::new(&starts, cfg.seed);
    let mut active: Vec<Option<ActiveTask>> = (0..cfg.agents).map(|_| None).collect();
    let mut executions = Vec::new();
    let mut solves = Vec::new();
    let mut traces = Vec::new();
    let mut transfers = 0;
    let mut clock = 0;

    loop {
        // assignments, in agent order
        for agent in 0..cfg.agents {
            if active[agent].is_some() || coord.tasks_started(agent) >= cfg.quota(agent) {
                continue;
            }
            let key = coord.assign(agent, &layout, clock)?;
            let event = spawn_pedestrian(coord.rng(agent), &layout, &key, clock, cfg)?;
            let snapshot = stores[store_of(agent)].snapshot(&key)?;
            active[agent] = Some(ActiveTask {
                agent,
                key,
                start: clock,
                iteration: coord.tasks_started(agent),
                event,
                snapshot,
                // parked agents rest exactly on their target
                states: vec![*layout.target(key.p)],
                inputs: Vec::new(),
                phase: Phase::Main,
                plan: None,
                last: None,
                detected_steps: 0,
                solves: Vec::new(),
                trace: Vec::new(),
                done: false,
                ts: lmpc.cfg.ts,
            });
        }
        if active.iter().all(Option::is_none) {
            break;
        }

        // controller steps touch only their own task and snapshot
        let step = clock;
        let advance = |task: &mut Option<ActiveTask>| match task {
            Some(t) => t.advance(&ctx, step),
            None => Ok(()),
        };
        #[cfg(feature = "parallel")]
        let results: Vec<Result<(), SimError>> = {
            use rayon::prelude::*;
            active.par_iter_mut().map(advance).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let results: Vec<Result<(), SimError>> = active.iter_mut().map(advance).collect();
        for r in results {
            r?;
        }
        clock += 1;

        // task completions and cloud updates, in agent order
        for agent in 0..cfg.agents {
            if !active[agent].as_ref().is_some_and(|t| t.done) {
                continue;
            }
            let task = active[agent].take().expect("checked above");
            let target = layout.target(task.key.q);
            let record = task.record(lmpc, target)?;
            let cost = record.cost();
            if !record.pedestrian_affected {
                let store = &mut stores[store_of(agent)];
                store.upload(record.clone())?;
                if mode == RunMode::CloudBased {
                    transfers += store.transfer(&record).len();
                }
            }
            let baseline = baselines.get(&task.key).copied().unwrap_or(f64::NAN);
            executions.push(TaskExecution {
                key: task.key,
                repetition: 0,
                agent,
                start_step: task.start,
                end_step: clock,
                cost,
                gap: optimality_gap(cost, baseline),
                anomaly: !record.pedestrian_affected && below_baseline(cost, baseline),
                steps: task.inputs.len(),
                pedestrian: record.pedestrian_affected,
                detected_steps: task.detected_steps,
            });
            solves.extend(task.solves);
            traces.extend(task.trace);
            coord.release(agent);
        }
    }

    executions.sort_by_key(|e| (e.start_step, e.agent));
    let mut seen: BTreeMap<TaskKey, usize> = BTreeMap::new();
    for e in &mut executions {
        let n = seen.entry(e.key).or_insert(0);
        *n += 1;
        e.repetition = *n;
    }
    solves.sort_by_key(|s| (s.task_start, s.agent, s.step));
    traces.sort_by_key(|t| (t.task_start, t.agent, t.step));
    Ok(SimOutcome {
        metrics: SimMetrics {
            mode,
            seed: cfg.seed,
            executions,
            solves,
            traces,
            baselines: baselines.clone(),
            transfers,
            clock,
        },
        stores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::LayoutConfig;
    use crate::lmpc::LmpcConfig;

    fn setup() -> (Arc<Layout>, Lmpc) {
        (
            Arc::new(Layout::build(&LayoutConfig::default()).unwrap()),
            Lmpc::new(LmpcConfig::default()).unwrap(),
        )
    }

    #[test]
    fn assignment_draws_neighbours_deterministically() {
        let (layout, _) = setup();
        let mut a = Coordinator::new(&[0, 4], 3);
        let mut b = Coordinator::new(&[0, 4], 3);
        assert_eq!(layout.neighbors(0), vec![1, 3]);
        assert_eq!(layout.neighbors(4), vec![1, 3, 5, 7]);
        for step in 0..50 {
            for agent in 0..2 {
                let p = a.parked_at(agent);
                let key = a.assign(agent, &layout, step).unwrap();
                assert_eq!(key, b.assign(agent, &layout, step).unwrap());
                assert_eq!(key.p, p);
                assert_ne!(key.q, p);
                assert!(layout.neighbors(p).contains(&key.q));
                assert!(key.m < layout.modes());
                assert!(matches!(a.assign(agent, &layout, step), Err(SimError::AgentBusy(_))));
                a.release(agent);
                b.release(agent);
                assert_eq!(a.parked_at(agent), key.q);
            }
        }
        assert_eq!(a.tasks_started(0), 50);
    }

    #[test]
    fn agents_draw_from_separate_streams() {
        let (layout, _) = setup();
        let mut c = Coordinator::new(&[4, 4], 11);
        let draws = |c: &mut Coordinator, agent| -> Vec<u64> { (0..8).map(|_| c.rng(agent).gen()).collect() };
        let first = draws(&mut c, 0);
        assert_ne!(first, draws(&mut c, 1));
        // one agent's draws do not shift another's
        let mut d = Coordinator::new(&[4, 4], 11);
        d.assign(1, &layout, 0).unwrap();
        assert_eq!(first, draws(&mut d, 0));
    }

    #[test]
    fn pedestrian_spawn_examples() {
        let (layout, _) = setup();
        let key = TaskKey::new(0, 1, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let never = SimConfig {
            pedestrian_probability: 0.0,
            ..SimConfig::default()
        };
        for _ in 0..100 {
            assert!(spawn_pedestrian(&mut rng, &layout, &key, 0, &never).unwrap().is_none());
        }
        let always = SimConfig {
            pedestrian_probability: 1.0,
            pedestrian_min_steps: 5,
            pedestrian_max_steps: 5,
            ..SimConfig::default()
        };
        let e = spawn_pedestrian(&mut rng, &layout, &key, 17, &always).unwrap().unwrap();
        assert_eq!((e.k_on, e.k_off, e.duration()), (17, 22, 5));
        assert!(!e.is_active(16) && e.is_active(17) && e.is_active(21) && !e.is_active(22));
        assert_eq!(e.crosswalk, 10.0);
        assert_eq!(e.path, [Vector2::new(10.0, -2.0), Vector2::new(10.0, 2.0)]);
        // same seed, same event
        let draw = |seed| {
            spawn_pedestrian(
                &mut ChaCha8Rng::seed_from_u64(seed),
                &layout,
                &key,
                0,
                &SimConfig::default(),
            )
            .unwrap()
        };
        assert_eq!(draw(9), draw(9));
    }

    #[test]
    fn detection_examples() {
        let (layout, lmpc) = setup();
        let range = default_detection_range(&lmpc);
        assert_eq!(range, 18.0);
        let key = TaskKey::new(0, 1, 0);
        let event = PedestrianEvent {
            key,
            crosswalk: 10.0,
            k_on: 5,
            k_off: 10,
            path: [Vector2::new(10.0, -2.0), Vector2::new(10.0, 2.0)],
        };
        let at = |sx: f64| AgentState::new(sx, 0.0, 0.0, 0.0);
        assert!(detect(&layout, &at(0.0), &event, 5, range));
        assert!(!detect(&layout, &at(0.0), &event, 4, range));
        assert!(!detect(&layout, &at(0.0), &event, 10, range));
        assert!(detect(&layout, &at(10.0 - 18.0), &event, 6, range));
        assert!(!detect(&layout, &at(10.0 - 18.0 - 1e-9), &event, 6, range));
        // travelling the other way along the same road
        let back = PedestrianEvent {
            key: TaskKey::new(1, 0, 0),
            ..event
        };
        assert!(detect(&layout, &at(20.0), &back, 6, range));
        assert!(detect(&layout, &at(28.0), &back, 6, range));
        assert!(!detect(&layout, &at(28.0 + 1e-9), &back, 6, range));
    }

    #[test]
    fn gap_and_anomaly_examples() {
        assert_eq!(optimality_gap(11.0, 10.0), Some(0.1));
        assert_eq!(optimality_gap(10.0, 10.0), Some(0.0));
        assert_eq!(optimality_gap(5.0, 0.0), None);
        assert!(below_baseline(9.0, 10.0));
        assert!(!below_baseline(10.0 - 1e-6, 10.0));
        assert!(!below_baseline(12.0, 10.0));
    }

    #[test]
    fn settling_index_examples() {
        assert_eq!(settling_index(&[], 0.01), None);
        assert_eq!(settling_index(&[5.0], 0.01), Some(0));
        assert_eq!(settling_index(&[20.0, 15.0, 10.05, 10.0], 0.01), Some(2));
        assert_eq!(settling_index(&[10.0, 20.0, 10.0], 0.01), Some(0));
    }

    #[test]
    fn quotas_split_the_budget() {
        let cfg = SimConfig {
            agents: 3,
            tasks: 8,
            ..SimConfig::default()
        };
        assert_eq!((0..3).map(|a| cfg.quota(a)).collect::<Vec<_>>(), vec![3, 3, 2]);
        let (layout, _) = setup();
        assert!(cfg.validate(&layout).is_ok());
        let bad = SimConfig {
            pedestrian_min_steps: 9,
            ..SimConfig::default()
        };
        assert!(matches!(bad.validate(&layout), Err(SimError::Config(_))));
    }

    #[test]
    fn empty_budget_gives_empty_metrics() {
        let (layout, lmpc) = setup();
        let cfg = SimConfig {
            tasks: 0,
            ..SimConfig::default()
        };
        let out = run(layout, &lmpc, &cfg, RunMode::CloudBased, &BTreeMap::new(), None).unwrap();
        assert!(out.metrics.executions.is_empty() && out.metrics.solves.is_empty());
        assert_eq!(out.metrics.clock, 0);
        assert_eq!(out.stores.len(), 1);
    }

    #[test]
    fn short_runs_are_deterministic() {
        let (layout, lmpc) = setup();
        let cfg = SimConfig {
            tasks: 9,
            pedestrian_probability: 0.5,
            ..SimConfig::default()
        };
        let base: BTreeMap<TaskKey, f64> = layout.task_keys().into_iter().map(|k| (k, 10.0)).collect();
        for mode in [RunMode::CloudBased, RunMode::Isolated] {
            let a = run(layout.clone(), &lmpc, &cfg, mode, &base, None).unwrap();
            let b = run(layout.clone(), &lmpc, &cfg, mode, &base, None).unwrap();
            assert_eq!(a.metrics, b.metrics);
            assert_eq!(a.metrics.executions.len(), 9);
            assert_eq!(a.stores.len(), if mode == RunMode::Isolated { 3 } else { 1 });
            assert_eq!(a.metrics.candidate_failures(1e-6), 0);
        }
    }
}
