//! Candidate solutions and local safe-set selection.

use std::collections::BTreeMap;

use nalgebra::Vector2;

use super::{Lmpc, LmpcError, Plan, SolveOutcome};
use crate::cloud::SafeSet;
use crate::dynamics::{AgentState, ControlInput};
use crate::geometry::{BeforeObstacleRegion, Layout, TaskKey};

impl Lmpc {
    /// Stored continuation of point `index` over `horizon` steps, rolled
    /// out from `x0`, with all weight on the point reached at the end.
    pub fn stored_continuation(&self, x0: &AgentState, safe_set: &SafeSet, index: usize, horizon: usize) -> Plan {
        let mut j = index;
        let mut inputs = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            inputs.push(safe_set.points[j].input);
            j = safe_set.points[j].successor;
        }
        Plan {
            states: self.model.rollout(x0, &inputs),
            inputs,
            weights: vec![(j, 1.0)],
        }
    }

    /// Candidate for the first solve of a task: the opening steps of the
    /// cheapest stored execution. When `x0` is off that execution's start,
    /// the first two inputs also cancel the offset.
    pub fn first_candidate(&self, x0: &AgentState, safe_set: &SafeSet) -> Result<Plan, LmpcError> {
        let best = *safe_set
            .trajectories_by_cost()
            .first()
            .ok_or(LmpcError::EmptySafeSet(safe_set.key))?;
        let first = safe_set.trajectories[best].first;
        let mut plan = self.stored_continuation(x0, safe_set, first, self.cfg.horizon);
        let error = x0.to_vector() - safe_set.points[first].state.to_vector();
        if error.amax() > 0.0 && plan.horizon() >= 2 {
            if let Some((c0, c1)) = self.model.two_step_correction(&error) {
                plan.inputs[0] = ControlInput::from_vector(&(plan.inputs[0].to_vector() + c0.to_vector()));
                plan.inputs[1] = ControlInput::from_vector(&(plan.inputs[1].to_vector() + c1.to_vector()));
                plan.states = self.model.rollout(x0, &plan.inputs);
            }
        }
        Ok(plan)
    }

    /// Shifts an optimal plan by one step. A plan longer than the nominal
    /// horizon just drops its first step; otherwise the weighted stored
    /// successors extend it, driven by the weighted stored inputs.
    pub fn build_candidate(&self, prev: &Plan, x_next: &AgentState, safe_set: &SafeSet) -> Plan {
        let mut inputs = prev.inputs[1..].to_vec();
        let weights = if prev.horizon() > self.cfg.horizon {
            prev.weights.clone()
        } else {
            let mut u = Vector2::zeros();
            let mut shifted: BTreeMap<usize, f64> = BTreeMap::new();
            for (j, w) in &prev.weights {
                let p = &safe_set.points[*j];
                u += p.input.to_vector() * *w;
                *shifted.entry(p.successor).or_insert(0.0) += *w;
            }
            inputs.push(ControlInput::from_vector(&u));
            shifted.into_iter().collect()
        };
        Plan {
            states: self.model.rollout(x_next, &inputs),
            inputs,
            weights,
        }
    }

    /// Standing still at `x0` for the nominal horizon; used to linearize
    /// the first moving-obstacle solve.
    pub fn hold_candidate(&self, x0: &AgentState) -> Plan {
        let inputs = vec![ControlInput::ZERO; self.cfg.horizon];
        Plan {
            states: self.model.rollout(x0, &inputs),
            inputs,
            weights: Vec::new(),
        }
    }

    /// Shift of a moving-obstacle plan, which ends at rest, followed by
    /// one step of holding still.
    pub fn obstacle_candidate(&self, prev: &Plan, x_next: &AgentState) -> Plan {
        let mut inputs = prev.inputs[1..].to_vec();
        inputs.push(ControlInput::ZERO);
        Plan {
            states: self.model.rollout(x_next, &inputs),
            inputs,
            weights: prev.weights.clone(),
        }
    }

    /// Points given a weight: the candidate's support plus, from each of
    /// the cheapest stored executions, the points nearest to the
    /// candidate's terminal state.
    pub fn select_points(
        &self,
        safe_set: &SafeSet,
        candidate: &Plan,
        positions_only: bool,
        admit: impl Fn(&AgentState) -> bool,
    ) -> Vec<usize> {
        let reference = candidate.terminal().to_vector();
        let distance = |x: &AgentState| {
            let d = x.to_vector() - reference;
            if positions_only {
                d[0] * d[0] + d[1] * d[1]
            } else {
                d.norm_squared()
            }
        };
        let mut chosen: Vec<usize> = candidate.weights.iter().map(|(j, _)| *j).collect();
        for t in safe_set
            .trajectories_by_cost()
            .into_iter()
            .take(self.cfg.local_trajectories)
        {
            let mut near: Vec<(f64, usize)> = safe_set.trajectories[t]
                .indices()
                .filter(|j| admit(&safe_set.points[*j].state))
                .map(|j| (distance(&safe_set.points[j].state), j))
                .collect();
            near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            chosen.extend(near.into_iter().take(self.cfg.local_points).map(|(_, j)| j));
        }
        chosen.sort_unstable();
        chosen.dedup();
        chosen
    }

    /// One safe-set solve from `x0` around `candidate`.
    pub fn solve_main(
        &self,
        x0: &AgentState,
        key: &TaskKey,
        layout: &Layout,
        safe_set: &SafeSet,
        candidate: &Plan,
    ) -> Result<SolveOutcome, LmpcError> {
        let points = self.select_points(safe_set, candidate, false, |_| true);
        let built = self.build_main_problem(x0, key, layout, safe_set, candidate, &points)?;
        self.solve_built(x0, &built, Some(candidate))
    }

    /// One moving-obstacle solve. `check_candidate` is false when the
    /// candidate is only a linearization reference.
    #[allow(clippy::too_many_arguments)]
    pub fn solve_obstacle(
        &self,
        x0: &AgentState,
        key: &TaskKey,
        layout: &Layout,
        region: &BeforeObstacleRegion,
        safe_set: &SafeSet,
        candidate: &Plan,
        check_candidate: bool,
    ) -> Result<SolveOutcome, LmpcError> {
        let tol = self.cfg.feasibility_tol;
        let points = self.select_points(safe_set, candidate, true, |x| region.contains_tol(&x.position(), tol));
        let built = self.build_bo_problem(x0, key, layout, region, safe_set, candidate, &points)?;
        let mut out = self.solve_built(x0, &built, Some(candidate))?;
        if !check_candidate {
            out.candidate_violation = None;
        }
        Ok(out)
    }
}
