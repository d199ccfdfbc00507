//! QP assembly for the safe-set problem and the moving-obstacle problem.

use nalgebra::{DMatrix, DVector, Vector2};

use super::{Lmpc, LmpcError, Plan, ProblemKind, SolveOutcome};
use crate::cloud::SafeSet;
use crate::dynamics::{AgentState, ControlInput, HalfPlane};
use crate::geometry::{BeforeObstacleRegion, ForbiddenCircle, Layout, TaskKey};
use crate::qp::{self, QpProblem};

/// Column map of the decision vector
/// `[u_0 … u_{H−1}, x_1 … x_H, λ_0 … λ_{M−1}]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Vars {
    pub horizon: usize,
    /// Safe-set indices carrying a barycentric weight, ascending.
    pub points: Vec<usize>,
}

impl Vars {
    pub fn u(&self, t: usize) -> usize {
        2 * t
    }

    /// Column of `x_t` for `1 ≤ t ≤ H`.
    pub fn x(&self, t: usize) -> usize {
        2 * self.horizon + 4 * (t - 1)
    }

    pub fn lambda(&self, j: usize) -> usize {
        6 * self.horizon + j
    }

    pub fn len(&self) -> usize {
        6 * self.horizon + self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Decision vector of a plan whose weights live on `self.points`.
    pub fn pack(&self, plan: &Plan) -> DVector<f64> {
        let mut z = DVector::zeros(self.len());
        for t in 0..self.horizon {
            let u = plan.inputs[t];
            z[self.u(t)] = u.ax;
            z[self.u(t) + 1] = u.ay;
            let x = plan.states[t + 1].to_vector();
            for i in 0..4 {
                z[self.x(t + 1) + i] = x[i];
            }
        }
        for (idx, w) in &plan.weights {
            if let Ok(j) = self.points.binary_search(idx) {
                z[self.lambda(j)] = *w;
            }
        }
        z
    }
}

/// A built problem together with its column map.
#[derive(Debug, Clone, PartialEq)]
pub struct BuiltProblem {
    pub kind: ProblemKind,
    pub qp: QpProblem,
    pub vars: Vars,
}

type Row = (Vec<(usize, f64)>, f64);

pub(super) struct Assembly {
    n: usize,
    p: DMatrix<f64>,
    q: DVector<f64>,
    offset: f64,
    pub(super) eq: Vec<Row>,
    pub(super) ineq: Vec<Row>,
}

impl Assembly {
    fn new(n: usize) -> Self {
        Self {
            n,
            p: DMatrix::zeros(n, n),
            q: DVector::zeros(n),
            offset: 0.0,
            eq: Vec::new(),
            ineq: Vec::new(),
        }
    }

    fn dense(n: usize, rows: &[Row]) -> (DMatrix<f64>, DVector<f64>) {
        let mut a = DMatrix::zeros(rows.len(), n);
        let mut b = DVector::zeros(rows.len());
        for (i, (coeffs, rhs)) in rows.iter().enumerate() {
            for (j, v) in coeffs {
                a[(i, *j)] += v;
            }
            b[i] = *rhs;
        }
        (a, b)
    }

    pub(super) fn finish(self) -> Result<QpProblem, LmpcError> {
        let (a_eq, b_eq) = Self::dense(self.n, &self.eq);
        let (a_in, b_in) = Self::dense(self.n, &self.ineq);
        Ok(QpProblem::new(self.p, self.q, a_eq, b_eq, a_in, b_in)?.with_offset(self.offset))
    }

    /// `normal · (s at column col) <= offset`.
    fn position_half_plane(&mut self, col: usize, h: &HalfPlane) {
        self.ineq
            .push((vec![(col, h.normal.x), (col + 1, h.normal.y)], h.offset));
    }
}

/// Half-planes `n_tᵀ(s − c) ≥ D`, with `n_t` the unit vector from the
/// centre towards each linearization point, written as `normal·s ≤ offset`.
pub fn linearize_obstacle(points: &[Vector2<f64>], circle: &ForbiddenCircle) -> Result<Vec<HalfPlane>, LmpcError> {
    points.iter().map(|s| supporting_half_plane(s, circle)).collect()
}

fn supporting_half_plane(s: &Vector2<f64>, circle: &ForbiddenCircle) -> Result<HalfPlane, LmpcError> {
    let d = s - circle.center;
    let dist = d.norm();
    if dist < circle.radius - 1e-6 || dist == 0.0 {
        return Err(LmpcError::CandidateInsideObstacle { point: [s.x, s.y] });
    }
    let n = d / dist;
    Ok(HalfPlane {
        normal: -n,
        offset: -(circle.radius + n.dot(&circle.center)),
    })
}

/// Weighted combination of the positions reached `r` successor steps
/// after each weighted point.
pub fn tail_position(safe_set: &SafeSet, weights: &[(usize, f64)], r: usize) -> Vector2<f64> {
    weights
        .iter()
        .map(|(j, w)| safe_set.points[safe_set.advance(*j, r)].state.position() * *w)
        .sum()
}

/// Steps from a point to the end of its trajectory.
fn remaining(safe_set: &SafeSet, j: usize) -> usize {
    let span = safe_set.trajectories[safe_set.points[j].trajectory];
    span.first + span.len - 1 - j
}

impl Lmpc {
    /// Dynamics, state and input constraints and stage costs shared by all
    /// trajectory problems. `costed_states` is the number of predicted
    /// states after `x_0` that carry a stage cost.
    #[allow(clippy::too_many_arguments, clippy::needless_range_loop)]
    pub(super) fn base_assembly(
        &self,
        x0: &AgentState,
        target: &AgentState,
        n: usize,
        horizon: usize,
        costed_states: usize,
        corridor: &crate::geometry::Rect,
        obstacle: &[Option<HalfPlane>],
    ) -> Assembly {
        let vars = Vars {
            horizon,
            points: Vec::new(),
        };
        let (a, b) = (&self.model.a, &self.model.b);
        let (qw, rw) = (&self.cfg.q, &self.cfg.r);
        let mut asm = Assembly::new(n);
        let xt = target.to_vector();
        let dx0 = x0.to_vector() - xt;
        asm.offset += dx0.dot(&(qw * dx0));
        for t in 0..horizon {
            let cu = vars.u(t);
            for i in 0..2 {
                for j in 0..2 {
                    asm.p[(cu + i, cu + j)] += 2.0 * rw[(i, j)];
                }
            }
            let cx = vars.x(t + 1);
            if t < costed_states {
                for i in 0..4 {
                    for j in 0..4 {
                        asm.p[(cx + i, cx + j)] += 2.0 * qw[(i, j)];
                    }
                }
                let lin = -2.0 * (qw * xt);
                for i in 0..4 {
                    asm.q[cx + i] += lin[i];
                }
                asm.offset += xt.dot(&(qw * xt));
            }
            // x_{t+1} − A x_t − B u_t = 0
            let x_prev = x0.to_vector();
            for i in 0..4 {
                let mut row = vec![(cx + i, 1.0)];
                for j in 0..2 {
                    row.push((cu + j, -b[(i, j)]));
                }
                let rhs = if t == 0 {
                    (a * x_prev)[i]
                } else {
                    let cp = vars.x(t);
                    for j in 0..4 {
                        if a[(i, j)] != 0.0 {
                            row.push((cp + j, -a[(i, j)]));
                        }
                    }
                    0.0
                };
                asm.eq.push((row, rhs));
            }
            // corridor box
            asm.ineq.push((vec![(cx, 1.0)], corridor.max.x));
            asm.ineq.push((vec![(cx, -1.0)], -corridor.min.x));
            asm.ineq.push((vec![(cx + 1, 1.0)], corridor.max.y));
            asm.ineq.push((vec![(cx + 1, -1.0)], -corridor.min.y));
            for h in &self.velocity.half_planes {
                asm.ineq
                    .push((vec![(cx + 2, h.normal.x), (cx + 3, h.normal.y)], h.offset));
            }
            for h in &self.input.half_planes {
                asm.ineq.push((vec![(cu, h.normal.x), (cu + 1, h.normal.y)], h.offset));
            }
            if let Some(h) = &obstacle[t] {
                asm.position_half_plane(cx, h);
            }
        }
        asm
    }

    fn obstacle_rows(
        &self,
        circle: Option<ForbiddenCircle>,
        candidate: &Plan,
        horizon: usize,
    ) -> Result<Vec<Option<HalfPlane>>, LmpcError> {
        match circle {
            None => Ok(vec![None; horizon]),
            Some(c) => {
                let pos: Vec<Vector2<f64>> = candidate.states[1..=horizon].iter().map(|x| x.position()).collect();
                Ok(linearize_obstacle(&pos, &c)?.into_iter().map(Some).collect())
            }
        }
    }

    /// Safe-set problem: reach the convex hull of stored states in
    /// `candidate.horizon()` steps, paying the interpolated cost-to-go.
    /// Obstacle constraints are linearized around the candidate.
    pub fn build_main_problem(
        &self,
        x0: &AgentState,
        key: &TaskKey,
        layout: &Layout,
        safe_set: &SafeSet,
        candidate: &Plan,
        points: &[usize],
    ) -> Result<BuiltProblem, LmpcError> {
        if safe_set.is_empty() || points.is_empty() {
            return Err(LmpcError::EmptySafeSet(*key));
        }
        let horizon = candidate.horizon();
        let vars = Vars {
            horizon,
            points: points.to_vec(),
        };
        let n = vars.len();
        let target = layout.target(key.q);
        let corridor = layout.corridor(key)?;
        let circle = layout.circle(key);
        let obstacle = self.obstacle_rows(circle, candidate, horizon)?;
        let mut asm = self.base_assembly(x0, target, n, horizon, horizon - 1, &corridor, &obstacle);
        let cx = vars.x(horizon);
        for i in 0..4 {
            let mut row = vec![(cx + i, 1.0)];
            for (j, idx) in points.iter().enumerate() {
                row.push((vars.lambda(j), -safe_set.points[*idx].state.to_vector()[i]));
            }
            asm.eq.push((row, 0.0));
        }
        asm.eq
            .push(((0..points.len()).map(|j| (vars.lambda(j), 1.0)).collect(), 1.0));
        for (j, idx) in points.iter().enumerate() {
            asm.q[vars.lambda(j)] = safe_set.points[*idx].cost_to_go;
            asm.ineq.push((vec![(vars.lambda(j), -1.0)], 0.0));
        }
        if let Some(c) = circle {
            // keep the stored continuations of the weighted points, taken
            // together, outside the circle
            let longest = points.iter().map(|j| remaining(safe_set, *j)).max().unwrap_or(0);
            for r in 1..=longest {
                let sigma = tail_position(safe_set, &candidate.weights, r);
                let h = supporting_half_plane(&sigma, &c)?;
                let row = points
                    .iter()
                    .enumerate()
                    .map(|(j, idx)| {
                        let s = safe_set.points[safe_set.advance(*idx, r)].state.position();
                        (vars.lambda(j), h.normal.dot(&s))
                    })
                    .collect();
                asm.ineq.push((row, h.offset));
            }
        }
        Ok(BuiltProblem {
            kind: ProblemKind::Main,
            qp: asm.finish()?,
            vars,
        })
    }

    /// Moving-obstacle problem: stay before the crosswalk and come to rest
    /// at a position in the convex hull of stored positions. No terminal
    /// cost.
    #[allow(clippy::too_many_arguments)]
    pub fn build_bo_problem(
        &self,
        x0: &AgentState,
        key: &TaskKey,
        layout: &Layout,
        region: &BeforeObstacleRegion,
        safe_set: &SafeSet,
        candidate: &Plan,
        points: &[usize],
    ) -> Result<BuiltProblem, LmpcError> {
        if safe_set.is_empty() || points.is_empty() {
            return Err(LmpcError::EmptySafeSet(*key));
        }
        if !region.contains_tol(&x0.position(), self.cfg.feasibility_tol) {
            return Err(LmpcError::PastCrosswalk);
        }
        let horizon = candidate.horizon();
        let vars = Vars {
            horizon,
            points: points.to_vec(),
        };
        let n = vars.len();
        let target = layout.target(key.q);
        let obstacle = self.obstacle_rows(region.circle, candidate, horizon)?;
        let mut asm = self.base_assembly(x0, target, n, horizon, horizon - 1, &region.corridor, &obstacle);
        for t in 1..=horizon {
            asm.position_half_plane(vars.x(t), &region.cut);
        }
        let cx = vars.x(horizon);
        for i in 0..2 {
            let mut row = vec![(cx + i, 1.0)];
            for (j, idx) in points.iter().enumerate() {
                row.push((vars.lambda(j), -safe_set.points[*idx].state.position()[i]));
            }
            asm.eq.push((row, 0.0));
        }
        asm.eq.push((vec![(cx + 2, 1.0)], 0.0));
        asm.eq.push((vec![(cx + 3, 1.0)], 0.0));
        asm.eq
            .push(((0..points.len()).map(|j| (vars.lambda(j), 1.0)).collect(), 1.0));
        for j in 0..points.len() {
            asm.ineq.push((vec![(vars.lambda(j), -1.0)], 0.0));
        }
        Ok(BuiltProblem {
            kind: ProblemKind::Obstacle,
            qp: asm.finish()?,
            vars,
        })
    }

    /// Solves a built problem warm-started at the candidate and reads the
    /// plan back, with states re-rolled through the model.
    pub fn solve_built(
        &self,
        x0: &AgentState,
        built: &BuiltProblem,
        candidate: Option<&Plan>,
    ) -> Result<SolveOutcome, LmpcError> {
        let warm = candidate.map(|c| built.vars.pack(c));
        let candidate_violation = warm.as_ref().map(|z| built.qp.constraint_violation(z));
        let sol = qp::solve(&built.qp, warm.as_ref(), &self.cfg.qp)?;
        if !sol.is_optimal() {
            return Err(LmpcError::Solver {
                what: format!("{:?} problem", built.kind),
                status: sol.status,
            });
        }
        let vars = &built.vars;
        let inputs: Vec<ControlInput> = (0..vars.horizon)
            .map(|t| ControlInput::new(sol.z[vars.u(t)], sol.z[vars.u(t) + 1]))
            .collect();
        let states = self.model.rollout(x0, &inputs);
        let weights = vars
            .points
            .iter()
            .enumerate()
            .filter_map(|(j, idx)| {
                let w = sol.z[vars.lambda(j)];
                (w > 1e-12).then_some((*idx, w))
            })
            .collect();
        let weight_sum = (0..vars.points.len()).map(|j| sol.z[vars.lambda(j)]).sum::<f64>();
        let weight_min = (0..vars.points.len())
            .map(|j| sol.z[vars.lambda(j)])
            .fold(f64::INFINITY, f64::min);
        Ok(SolveOutcome {
            kind: built.kind,
            plan: Plan {
                states,
                inputs,
                weights,
            },
            objective: sol.objective,
            status: sol.status,
            primal_residual: sol.primal_residual,
            dual_residual: sol.dual_residual,
            iterations: sol.iterations,
            candidate_violation,
            weight_sum,
            weight_min,
        })
    }
}
