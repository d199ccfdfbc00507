//! Steering back onto stored data after a moving-obstacle episode.

use nalgebra::Vector2;

use super::{Lmpc, LmpcError, Plan, ProblemKind, SolveOutcome};
use crate::cloud::SafeSet;
use crate::dynamics::{AgentState, ControlInput};
use crate::geometry::{hull_distance, Layout, TaskKey};

/// Result of rejoining the safe set.
#[derive(Debug, Clone, PartialEq)]
pub enum Reacquisition {
    /// The state is a stored state; its stored continuation is a feasible
    /// candidate and no extra steps are needed.
    Stored { index: usize, candidate: Plan },
    /// A safe-set solve over `horizon ≥ N` steps; the horizon shrinks back
    /// to N as the plan is followed.
    Steered { horizon: usize, outcome: SolveOutcome },
}

const SCP_PASSES: usize = 3;

impl Lmpc {
    /// Whether the position of `x` is a convex combination, up to
    /// `feasibility_tol`, of the stored positions of the cheapest
    /// executions.
    pub fn position_in_hull(&self, x: &AgentState, safe_set: &SafeSet) -> bool {
        let positions: Vec<Vector2<f64>> = safe_set
            .trajectories_by_cost()
            .into_iter()
            .take(self.cfg.local_trajectories)
            .flat_map(|t| safe_set.trajectories[t].indices())
            .map(|i| safe_set.points[i].state.position())
            .collect();
        hull_distance(&positions, &x.position()) <= self.cfg.feasibility_tol
    }

    fn reacquire_passes(
        &self,
        x0: &AgentState,
        key: &TaskKey,
        layout: &Layout,
        safe_set: &SafeSet,
        mut reference: Plan,
    ) -> Result<Option<SolveOutcome>, LmpcError> {
        let mut outcome = None;
        for pass in 0..SCP_PASSES {
            let points = self.select_points(safe_set, &reference, false, |_| true);
            let built = self.build_main_problem(x0, key, layout, safe_set, &reference, &points)?;
            let warm = (pass > 0).then_some(&reference);
            match self.solve_built(x0, &built, warm) {
                Ok(mut out) => {
                    out.kind = ProblemKind::Reacquire;
                    out.candidate_violation = None;
                    reference = out.plan.clone();
                    outcome = Some(out);
                }
                Err(LmpcError::Solver { .. }) => break,
                Err(e) => return Err(e),
            }
        }
        Ok(outcome)
    }

    /// Finds a way from `x0` back to the stored states of the task.
    pub fn reacquire_safe_set(
        &self,
        x0: &AgentState,
        key: &TaskKey,
        layout: &Layout,
        safe_set: &SafeSet,
    ) -> Result<Reacquisition, LmpcError> {
        let fail = |reason: String| LmpcError::Reacquire {
            key: *key,
            state: *x0,
            reason,
        };
        if safe_set.is_empty() {
            return Err(LmpcError::EmptySafeSet(*key));
        }
        let x = x0.to_vector();
        if let Some(index) = safe_set
            .points
            .iter()
            .position(|p| (p.state.to_vector() - x).amax() <= 1e-9)
        {
            return Ok(Reacquisition::Stored {
                index,
                candidate: self.stored_continuation(x0, safe_set, index, self.cfg.horizon),
            });
        }
        if !self.position_in_hull(x0, safe_set) {
            return Err(fail("position is outside the hull of stored positions".into()));
        }
        let best = safe_set.trajectories_by_cost()[0];
        let span = safe_set.trajectories[best];
        let anchor = span
            .indices()
            .min_by(|a, b| {
                let da = (safe_set.points[*a].state.position() - x0.position()).norm();
                let db = (safe_set.points[*b].state.position() - x0.position()).norm();
                da.total_cmp(&db)
            })
            .expect("stored trajectories are non-empty");
        for horizon in self.cfg.horizon..=self.cfg.reacquire_max_horizon {
            // linearize first around holding position, then around the
            // stored path from the nearest point
            let hold = Plan {
                states: vec![*x0; horizon + 1],
                inputs: vec![ControlInput::ZERO; horizon],
                weights: vec![(anchor, 1.0)],
            };
            let mut states = vec![*x0];
            let mut j = anchor;
            for _ in 0..horizon {
                j = safe_set.points[j].successor;
                states.push(safe_set.points[j].state);
            }
            let along = Plan {
                states,
                inputs: vec![ControlInput::ZERO; horizon],
                weights: vec![(j, 1.0)],
            };
            for start in [hold, along] {
                if let Some(outcome) = self.reacquire_passes(x0, key, layout, safe_set, start)? {
                    return Ok(Reacquisition::Steered { horizon, outcome });
                }
            }
        }
        Err(fail(format!(
            "no feasible plan within {} steps",
            self.cfg.reacquire_max_horizon
        )))
    }
}
