//! Long-horizon reference solution used to measure the optimality gap.

use nalgebra::{DVector, Vector2};

use super::{Lmpc, LmpcError};
use crate::dynamics::{AgentState, ControlInput};
use crate::geometry::{Layout, TaskKey};
use crate::qp;

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineResult {
    pub cost: f64,
    pub states: Vec<AgentState>,
    pub inputs: Vec<ControlInput>,
    /// Number of solves, including relinearizations.
    pub solves: usize,
    /// Cost change between the last two solves.
    pub last_change: f64,
}

/// Minimizes the summed stage cost over `cfg.baseline_horizon` steps with
/// the target as terminal equality. The keep-out circle is linearized
/// around `reference` positions and then around each solution in turn.
pub fn baseline_optimal(
    key: &TaskKey,
    layout: &Layout,
    lmpc: &Lmpc,
    reference: &[Vector2<f64>],
) -> Result<BaselineResult, LmpcError> {
    let cfg = &lmpc.cfg;
    let horizon = cfg.baseline_horizon;
    let start = *layout.target(key.p);
    let target = *layout.target(key.q);
    if lmpc.stage_cost(&start, &ControlInput::ZERO, &target) == 0.0 {
        return Ok(BaselineResult {
            cost: 0.0,
            states: vec![start],
            inputs: Vec::new(),
            solves: 0,
            last_change: 0.0,
        });
    }
    let corridor = layout.corridor(key)?;
    let circle = layout.circle(key);
    let at = |t: usize| reference.get(t).copied().unwrap_or(target.position());
    let mut positions: Vec<Vector2<f64>> = (0..=horizon).map(at).collect();
    let mut warm: Option<DVector<f64>> = None;
    let mut previous = f64::INFINITY;
    let rounds = if circle.is_some() {
        cfg.baseline_relinearizations.max(1)
    } else {
        1
    };
    let mut result = None;
    for round in 0..rounds {
        let obstacle = match circle {
            None => vec![None; horizon],
            Some(c) => super::linearize_obstacle(&positions[1..], &c)?
                .into_iter()
                .map(Some)
                .collect(),
        };
        let n = 6 * horizon;
        let mut asm = lmpc.base_assembly(&start, &target, n, horizon, horizon, &corridor, &obstacle);
        let vars = super::Vars {
            horizon,
            points: Vec::new(),
        };
        for i in 0..4 {
            asm.eq.push((vec![(vars.x(horizon) + i, 1.0)], target.to_vector()[i]));
        }
        let problem = asm.finish()?;
        let sol = qp::solve(&problem, warm.as_ref(), &cfg.qp)?;
        if !sol.is_optimal() {
            return Err(LmpcError::Solver {
                what: format!("baseline for {key} (round {round})"),
                status: sol.status,
            });
        }
        let inputs: Vec<ControlInput> = (0..horizon)
            .map(|t| ControlInput::new(sol.z[vars.u(t)], sol.z[vars.u(t) + 1]))
            .collect();
        let states = lmpc.model.rollout(&start, &inputs);
        let change = if previous.is_finite() {
            (sol.objective - previous).abs()
        } else if circle.is_none() {
            0.0
        } else {
            f64::INFINITY
        };
        previous = sol.objective;
        positions = states.iter().map(|x| x.position()).collect();
        warm = Some(sol.z.clone());
        result = Some(BaselineResult {
            cost: sol.objective,
            states,
            inputs,
            solves: round + 1,
            last_change: change,
        });
        if change <= 1e-6 {
            break;
        }
    }
    Ok(result.expect("at least one round"))
}
