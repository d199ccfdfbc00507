//! Learning MPC: the safe-set problem, the moving-obstacle problem, their
//! candidate solutions, initial trajectories and the long-horizon baseline.

mod baseline;
mod candidate;
mod problem;
mod reacquire;
mod seed;

pub use baseline::{baseline_optimal, BaselineResult};
pub use problem::{linearize_obstacle, tail_position, BuiltProblem, Vars};
pub use reacquire::Reacquisition;
pub use seed::{initial_trajectory, seed_waypoints};

use nalgebra::{Matrix2, Matrix4};
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    AgentState, ControlInput, DiscreteModel, DynamicsError, PolygonalNormConstraint, TerminationBox,
};
use crate::geometry::GeometryError;
use crate::qp::{QpError, QpSettings, QpStatus};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmpcConfig {
    pub horizon: usize,
    pub ts: f64,
    pub q: Matrix4<f64>,
    pub r: Matrix2<f64>,
    pub polygon_sides: usize,
    pub v_max: f64,
    pub a_max: f64,
    pub termination: TerminationBox,
    #[serde(skip)]
    pub qp: QpSettings,
    /// Stored trajectories (cheapest first) contributing terminal points.
    pub local_trajectories: usize,
    /// Points taken from each of those trajectories, nearest first.
    pub local_points: usize,
    /// Cruise speed and acceleration of the generated initial trajectories.
    pub seed_speed: f64,
    pub seed_accel: f64,
    pub baseline_horizon: usize,
    pub baseline_relinearizations: usize,
    /// Longest horizon tried when steering back onto stored data.
    pub reacquire_max_horizon: usize,
    /// Slack allowed when checking candidate solutions and stored states.
    pub feasibility_tol: f64,
}

impl Default for LmpcConfig {
    fn default() -> Self {
        Self {
            horizon: 4,
            ts: 1.5,
            q: Matrix4::identity() * 0.01,
            r: Matrix2::identity() * 0.5,
            polygon_sides: 16,
            v_max: 3.0,
            a_max: 1.5,
            termination: TerminationBox::default(),
            qp: QpSettings::default(),
            local_trajectories: 10,
            local_points: 6,
            seed_speed: 1.0,
            seed_accel: 0.5,
            baseline_horizon: 40,
            baseline_relinearizations: 10,
            reacquire_max_horizon: 40,
            feasibility_tol: 1e-6,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LmpcError {
    #[error("invalid controller configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error("safe set of {0} is empty")]
    EmptySafeSet(crate::geometry::TaskKey),
    #[error("linearization point {point:?} lies inside the keep-out circle")]
    CandidateInsideObstacle { point: [f64; 2] },
    #[error("no initial trajectory for {key}: {reason}")]
    Seed {
        key: crate::geometry::TaskKey,
        reason: String,
    },
    #[error("solver returned {status:?} for {what}")]
    Solver { what: String, status: QpStatus },
    #[error("cannot steer back onto stored data for {key} from {state:?}: {reason}")]
    Reacquire {
        key: crate::geometry::TaskKey,
        state: AgentState,
        reason: String,
    },
    #[error("state lies outside the before-obstacle region")]
    PastCrosswalk,
}

impl LmpcConfig {
    pub fn validate(&self) -> Result<(), LmpcError> {
        let bad = |m: &str| Err(LmpcError::Config(m.to_string()));
        if self.horizon == 0 {
            return bad("horizon must be at least 1");
        }
        if !(self.ts > 0.0 && self.ts.is_finite()) {
            return bad("sample time must be positive");
        }
        if self.q.cholesky().is_none() || (self.q - self.q.transpose()).amax() > 0.0 {
            return bad("Q must be symmetric positive definite");
        }
        if self.r.cholesky().is_none() || (self.r - self.r.transpose()).amax() > 0.0 {
            return bad("R must be symmetric positive definite");
        }
        if self.polygon_sides < 3 {
            return bad("polygon needs at least 3 sides");
        }
        if !(self.v_max > 0.0 && self.a_max > 0.0 && self.v_max.is_finite() && self.a_max.is_finite()) {
            return bad("speed and acceleration limits must be positive");
        }
        if !(self.termination.position > 0.0 && self.termination.velocity > 0.0) {
            return bad("termination tolerances must be positive");
        }
        if !(self.seed_speed > 0.0 && self.seed_accel > 0.0) {
            return bad("seed speed and acceleration must be positive");
        }
        if self.local_trajectories == 0 || self.local_points == 0 {
            return bad("local safe set must take at least one point");
        }
        if self.reacquire_max_horizon < self.horizon {
            return bad("reacquisition horizon cap is below the horizon");
        }
        if self.baseline_horizon == 0 {
            return bad("baseline horizon must be positive");
        }
        Ok(())
    }
}

/// `‖x − x̂‖²_Q + ‖u‖²_R`.
pub fn stage_cost(x: &AgentState, u: &ControlInput, target: &AgentState, q: &Matrix4<f64>, r: &Matrix2<f64>) -> f64 {
    let dx = x.to_vector() - target.to_vector();
    let du = u.to_vector();
    dx.dot(&(q * dx)) + du.dot(&(r * du))
}

/// Predicted trajectory: `states` has one more entry than `inputs`, and
/// `weights` are barycentric weights on safe-set point indices describing
/// the terminal state.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub states: Vec<AgentState>,
    pub inputs: Vec<ControlInput>,
    pub weights: Vec<(usize, f64)>,
}

impl Plan {
    pub fn horizon(&self) -> usize {
        self.inputs.len()
    }

    pub fn terminal(&self) -> &AgentState {
        self.states.last().expect("plan has a state")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    Main,
    Obstacle,
    Reacquire,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOutcome {
    pub kind: ProblemKind,
    pub plan: Plan,
    pub objective: f64,
    pub status: QpStatus,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: usize,
    /// Largest constraint violation of the candidate in this problem.
    pub candidate_violation: Option<f64>,
    pub weight_sum: f64,
    pub weight_min: f64,
}

impl SolveOutcome {
    /// The input applied at the current step.
    pub fn input(&self) -> ControlInput {
        self.plan.inputs[0]
    }
}

/// Model, constraint polygons and settings shared by every solve.
#[derive(Debug, Clone, PartialEq)]
pub struct Lmpc {
    pub cfg: LmpcConfig,
    pub model: DiscreteModel,
    pub velocity: PolygonalNormConstraint,
    pub input: PolygonalNormConstraint,
}

impl Lmpc {
    pub fn new(cfg: LmpcConfig) -> Result<Self, LmpcError> {
        cfg.validate()?;
        Ok(Self {
            model: DiscreteModel::discretize(cfg.ts)?,
            velocity: PolygonalNormConstraint::new(cfg.v_max, cfg.polygon_sides)?,
            input: PolygonalNormConstraint::new(cfg.a_max, cfg.polygon_sides)?,
            cfg,
        })
    }

    pub fn stage_cost(&self, x: &AgentState, u: &ControlInput, target: &AgentState) -> f64 {
        stage_cost(x, u, target, &self.cfg.q, &self.cfg.r)
    }
}

#[cfg(test)]
mod tests;
