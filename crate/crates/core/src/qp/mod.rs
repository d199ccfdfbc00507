//! Dense convex quadratic programming.
//!
//! Problems are stated as
//!
//! ```text
//! minimize    ½ zᵀ P z + qᵀ z
//! subject to  A_eq z = b_eq
//!             A_in z ≤ b_in
//! ```
//!
//! and solved with an over-relaxed ADMM iteration on the equilibrated
//! problem, followed by an active-set polishing step that recovers
//! solutions accurate to near machine precision once ADMM has identified
//! the active constraints.

mod active_set;
mod admm;

use nalgebra::{DMatrix, DVector};

pub use admm::solve;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("objective matrix is not positive semidefinite")]
    NotConvex,
    #[error("problem data contains non-finite values")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_in: DMatrix<f64>,
    pub b_in: DVector<f64>,
    /// Constant added to the reported objective.
    pub offset: f64,
}

impl QpProblem {
    /// Validates dimensions and convexity; `p` is symmetrized.
    pub fn new(
        p: DMatrix<f64>,
        q: DVector<f64>,
        a_eq: DMatrix<f64>,
        b_eq: DVector<f64>,
        a_in: DMatrix<f64>,
        b_in: DVector<f64>,
    ) -> Result<Self, QpError> {
        let n = q.len();
        if p.shape() != (n, n) {
            return Err(QpError::Dimension(format!("P is {:?}, expected ({n}, {n})", p.shape())));
        }
        if a_eq.ncols() != n || a_eq.nrows() != b_eq.len() {
            return Err(QpError::Dimension(format!(
                "A_eq is {:?} with {} right-hand sides, expected {n} columns",
                a_eq.shape(),
                b_eq.len()
            )));
        }
        if a_in.ncols() != n || a_in.nrows() != b_in.len() {
            return Err(QpError::Dimension(format!(
                "A_in is {:?} with {} right-hand sides, expected {n} columns",
                a_in.shape(),
                b_in.len()
            )));
        }
        let finite = |m: &[f64]| m.iter().all(|v| v.is_finite());
        if !(finite(p.as_slice())
            && finite(q.as_slice())
            && finite(a_eq.as_slice())
            && finite(b_eq.as_slice())
            && finite(a_in.as_slice())
            && finite(b_in.as_slice()))
        {
            return Err(QpError::NonFinite);
        }
        let p = (&p + p.transpose()) * 0.5;
        if n > 0 {
            let scale = p.amax().max(1.0);
            let shifted = &p + DMatrix::identity(n, n) * (1e-9 * scale);
            if shifted.cholesky().is_none() {
                return Err(QpError::NotConvex);
            }
        }
        Ok(Self {
            p,
            q,
            a_eq,
            b_eq,
            a_in,
            b_in,
            offset: 0.0,
        })
    }

    pub fn with_offset(mut self, offset: f64) -> Self {
        self.offset = offset;
        self
    }

    pub fn num_vars(&self) -> usize {
        self.q.len()
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.p * z)) + self.q.dot(z) + self.offset
    }

    /// Largest violation of any constraint at `z`.
    pub fn constraint_violation(&self, z: &DVector<f64>) -> f64 {
        let eq = (&self.a_eq * z - &self.b_eq).amax();
        let ineq = (&self.a_in * z - &self.b_in).iter().fold(0.0f64, |acc, v| acc.max(*v));
        eq.max(ineq)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub z: DVector<f64>,
    pub y_eq: DVector<f64>,
    /// Multipliers of the inequality rows, nonnegative.
    pub y_in: DVector<f64>,
    pub status: QpStatus,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub complementarity: f64,
    pub objective: f64,
    pub iterations: usize,
    pub polished: bool,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSettings {
    pub tol: f64,
    pub max_iter: usize,
    pub rho: f64,
    pub sigma: f64,
    /// Over-relaxation factor in (0, 2).
    pub alpha: f64,
    /// Iterations between residual checks, penalty updates and polish attempts.
    pub check_interval: usize,
    pub scaling_iters: usize,
    pub polish: bool,
    /// Tolerance of the primal infeasibility certificate.
    pub infeasibility_tol: f64,
    /// Window (iterations) and relative change defining a stagnated residual.
    pub stagnation_window: usize,
    pub stagnation_rel: f64,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 20_000,
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            check_interval: 25,
            scaling_iters: 10,
            polish: true,
            infeasibility_tol: 1e-6,
            stagnation_window: 100,
            stagnation_rel: 1e-8,
        }
    }
}

/// Max-norm residuals of the KKT conditions: primal feasibility,
/// stationarity (including multiplier sign) and complementary slackness.
pub fn kkt_residuals(p: &QpProblem, z: &DVector<f64>, y_eq: &DVector<f64>, y_in: &DVector<f64>) -> (f64, f64, f64) {
    let primal = p.constraint_violation(z);
    let grad = &p.p * z + &p.q + p.a_eq.tr_mul(y_eq) + p.a_in.tr_mul(y_in);
    let sign = y_in.iter().fold(0.0f64, |acc, v| acc.max(-v));
    let dual = grad.amax().max(sign);
    let slack = &p.a_in * z - &p.b_in;
    let complementarity = y_in
        .iter()
        .zip(slack.iter())
        .fold(0.0f64, |acc, (y, s)| acc.max((y * s).abs()));
    (primal, dual, complementarity)
}

#[cfg(test)]
mod oracle;
