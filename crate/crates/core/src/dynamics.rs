//! Double-integrator agent model and polygonal norm-ball constraints.

use nalgebra::{Matrix4, Matrix4x2, Vector2, Vector4};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DynamicsError {
    #[error("sample time must be positive and finite, got {0}")]
    InvalidSampleTime(f64),
    #[error("polygon needs at least 3 sides, got {0}")]
    TooFewSides(usize),
    #[error("polygon radius must be positive and finite, got {0}")]
    InvalidRadius(f64),
}

/// Position and velocity of one agent, in metres and metres per second.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AgentState {
    pub sx: f64,
    pub sy: f64,
    pub vx: f64,
    pub vy: f64,
}

impl AgentState {
    pub const fn new(sx: f64, sy: f64, vx: f64, vy: f64) -> Self {
        Self { sx, sy, vx, vy }
    }

    /// A state at rest at `position`.
    pub fn at_rest(position: Vector2<f64>) -> Self {
        Self::new(position.x, position.y, 0.0, 0.0)
    }

    pub fn to_vector(&self) -> Vector4<f64> {
        Vector4::new(self.sx, self.sy, self.vx, self.vy)
    }

    pub fn from_vector(v: &Vector4<f64>) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.sx, self.sy)
    }

    pub fn velocity(&self) -> Vector2<f64> {
        Vector2::new(self.vx, self.vy)
    }

    /// Same velocity, position moved by `shift`.
    pub fn shifted(&self, shift: Vector2<f64>) -> Self {
        Self::new(self.sx + shift.x, self.sy + shift.y, self.vx, self.vy)
    }

    pub fn is_finite(&self) -> bool {
        self.sx.is_finite() && self.sy.is_finite() && self.vx.is_finite() && self.vy.is_finite()
    }
}

/// Acceleration command in m/s².
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    pub ax: f64,
    pub ay: f64,
}

impl ControlInput {
    pub const ZERO: ControlInput = ControlInput { ax: 0.0, ay: 0.0 };

    pub const fn new(ax: f64, ay: f64) -> Self {
        Self { ax, ay }
    }

    pub fn to_vector(&self) -> Vector2<f64> {
        Vector2::new(self.ax, self.ay)
    }

    pub fn from_vector(v: &Vector2<f64>) -> Self {
        Self::new(v[0], v[1])
    }
}

/// Task completion test: `‖s − ŝ‖∞ ≤ position` and `‖v − v̂‖∞ ≤ velocity`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TerminationBox {
    pub position: f64,
    pub velocity: f64,
}

impl Default for TerminationBox {
    fn default() -> Self {
        Self {
            position: 0.01,
            velocity: 0.001,
        }
    }
}

impl TerminationBox {
    pub fn reached(&self, x: &AgentState, target: &AgentState) -> bool {
        let d = x.to_vector() - target.to_vector();
        d[0].abs().max(d[1].abs()) <= self.position && d[2].abs().max(d[3].abs()) <= self.velocity
    }
}

/// Zero-order-hold discretization of the planar double integrator.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteModel {
    pub a: Matrix4<f64>,
    pub b: Matrix4x2<f64>,
    pub ts: f64,
}

impl DiscreteModel {
    /// Exact ZOH matrices. The continuous state matrix is nilpotent of
    /// order two, so the exponential series stops after the linear term.
    pub fn discretize(ts: f64) -> Result<Self, DynamicsError> {
        if !(ts > 0.0 && ts.is_finite()) {
            return Err(DynamicsError::InvalidSampleTime(ts));
        }
        let half = 0.5 * ts * ts;
        #[rustfmt::skip]
        let a = Matrix4::new(
            1.0, 0.0, ts,  0.0,
            0.0, 1.0, 0.0, ts,
            0.0, 0.0, 1.0, 0.0,
            0.0, 0.0, 0.0, 1.0,
        );
        #[rustfmt::skip]
        let b = Matrix4x2::new(
            half, 0.0,
            0.0,  half,
            ts,   0.0,
            0.0,  ts,
        );
        Ok(Self { a, b, ts })
    }

    pub fn step(&self, x: &AgentState, u: &ControlInput) -> AgentState {
        AgentState::from_vector(&(self.a * x.to_vector() + self.b * u.to_vector()))
    }

    /// Inputs `(c₀, c₁)` that cancel a state offset `error` in two steps:
    /// `A²e + A B c₀ + B c₁ = 0`.
    pub fn two_step_correction(&self, error: &Vector4<f64>) -> Option<(ControlInput, ControlInput)> {
        let ab = self.a * self.b;
        let mut m = Matrix4::zeros();
        m.fixed_view_mut::<4, 2>(0, 0).copy_from(&ab);
        m.fixed_view_mut::<4, 2>(0, 2).copy_from(&self.b);
        let c = m.lu().solve(&(-(self.a * self.a) * error))?;
        Some((ControlInput::new(c[0], c[1]), ControlInput::new(c[2], c[3])))
    }

    /// Roll out an input sequence; the result includes `x0` and has
    /// `inputs.len() + 1` entries.
    pub fn rollout(&self, x0: &AgentState, inputs: &[ControlInput]) -> Vec<AgentState> {
        let mut out = Vec::with_capacity(inputs.len() + 1);
        out.push(*x0);
        let mut x = *x0;
        for u in inputs {
            x = self.step(&x, u);
            out.push(x);
        }
        out
    }
}

/// One half-plane `normal · v <= offset` with a unit normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalfPlane {
    pub normal: Vector2<f64>,
    pub offset: f64,
}

impl HalfPlane {
    pub fn contains(&self, v: &Vector2<f64>, tol: f64) -> bool {
        self.normal.dot(v) <= self.offset + tol
    }
}

/// Regular K-gon inscribed in the disc of the given radius, used in place
/// of the Euclidean norm bound on velocity and acceleration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolygonalNormConstraint {
    pub radius: f64,
    pub sides: usize,
    pub half_planes: Vec<HalfPlane>,
}

impl PolygonalNormConstraint {
    pub fn new(radius: f64, sides: usize) -> Result<Self, DynamicsError> {
        if sides < 3 {
            return Err(DynamicsError::TooFewSides(sides));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(DynamicsError::InvalidRadius(radius));
        }
        let k = sides as f64;
        let offset = radius * (PI / k).cos();
        let half_planes = (0..sides)
            .map(|i| {
                let angle = 2.0 * PI * (i as f64 + 0.5) / k;
                HalfPlane {
                    normal: Vector2::new(angle.cos(), angle.sin()),
                    offset,
                }
            })
            .collect();
        Ok(Self {
            radius,
            sides,
            half_planes,
        })
    }

    pub fn contains(&self, v: &Vector2<f64>, tol: f64) -> bool {
        self.half_planes.iter().all(|h| h.contains(v, tol))
    }

    /// Polygon corners: the points at angles `2πk/K` on the circle.
    pub fn vertices(&self) -> Vec<Vector2<f64>> {
        let k = self.sides as f64;
        (0..self.sides)
            .map(|i| {
                let angle = 2.0 * PI * i as f64 / k;
                Vector2::new(angle.cos(), angle.sin()) * self.radius
            })
            .collect()
    }

    /// Radius of the largest disc contained in the polygon.
    pub fn inradius(&self) -> f64 {
        self.radius * (PI / self.sides as f64).cos()
    }
}
