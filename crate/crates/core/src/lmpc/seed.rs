//! Slow waypoint-following initial trajectories.

use nalgebra::Vector2;

use super::{Lmpc, LmpcError};
use crate::cloud::{compute_costs_to_go, RecordOrigin, TrajectoryRecord};
use crate::dynamics::ControlInput;
use crate::geometry::{Layout, TaskKey};

/// Waypoints from origin to destination: a straight line, or a detour
/// through the wider gap beside the keep-out circle.
pub fn seed_waypoints(layout: &Layout, key: &TaskKey) -> Result<Vec<Vector2<f64>>, LmpcError> {
    layout.validate_key(key)?;
    let a = layout.target(key.p).position();
    let b = layout.target(key.q).position();
    let Some(circle) = layout.circle(key) else {
        return Ok(vec![a, b]);
    };
    let d = layout.direction(key);
    let left = Vector2::new(-d.y, d.x);
    let half = 0.5 * layout.road_width;
    let along = d.dot(&(circle.center - a));
    let lateral = left.dot(&(circle.center - a));
    let left_gap = (lateral + circle.radius, half);
    let right_gap = (-half, lateral - circle.radius);
    let width = |g: (f64, f64)| g.1 - g.0;
    let gap = if width(left_gap) >= width(right_gap) {
        left_gap
    } else {
        right_gap
    };
    if width(gap) <= 0.0 {
        return Err(LmpcError::Seed {
            key: *key,
            reason: format!("keep-out circle of radius {} blocks the road", circle.radius),
        });
    }
    let via = a + d * along + left * (0.5 * (gap.0 + gap.1));
    Ok(vec![a, via, b])
}

/// Rest-to-rest profile over a straight segment of length `length`:
/// `n` steps of constant acceleration, `m` of cruise and `n` of braking,
/// using the fewest steps that respect the speed and acceleration caps.
fn segment_profile(length: f64, ts: f64, v_cap: f64, a_cap: f64) -> (usize, usize, f64) {
    let mut best: Option<(usize, usize, f64)> = None;
    for n in 1..200usize {
        for m in 0..400usize {
            let acc = length / (ts * ts * (n * (n + m)) as f64);
            if acc <= a_cap && n as f64 * acc * ts <= v_cap {
                let total = 2 * n + m;
                if best.is_none_or(|(bn, bm, _)| total < 2 * bn + bm) {
                    best = Some((n, m, acc));
                }
                break;
            }
        }
    }
    best.expect("caps are positive")
}

/// Initial trajectory of a task, validated state by state.
pub fn initial_trajectory(key: &TaskKey, layout: &Layout, lmpc: &Lmpc) -> Result<TrajectoryRecord, LmpcError> {
    let reject = |reason: String| LmpcError::Seed { key: *key, reason };
    let waypoints = seed_waypoints(layout, key)?;
    let cfg = &lmpc.cfg;
    // stay strictly inside the polygons
    let v_cap = cfg.seed_speed.min(0.9 * lmpc.velocity.inradius());
    let a_cap = cfg.seed_accel.min(0.9 * lmpc.input.inradius());
    let mut inputs = Vec::new();
    for w in waypoints.windows(2) {
        let seg = w[1] - w[0];
        let length = seg.norm();
        if length == 0.0 {
            continue;
        }
        let dir = seg / length;
        let (n, m, acc) = segment_profile(length, cfg.ts, v_cap, a_cap);
        let push = ControlInput::from_vector(&(dir * acc));
        let brake = ControlInput::from_vector(&(-dir * acc));
        inputs.extend(std::iter::repeat_n(push, n));
        inputs.extend(std::iter::repeat_n(ControlInput::ZERO, m));
        inputs.extend(std::iter::repeat_n(brake, n));
    }
    let start = layout.target(key.p);
    let target = layout.target(key.q);
    let states = lmpc.model.rollout(start, &inputs);
    for (t, x) in states.iter().enumerate() {
        if !layout.admissible_position(key, &x.position()) {
            return Err(reject(format!(
                "state {t} at ({:.3}, {:.3}) is not admissible",
                x.sx, x.sy
            )));
        }
        if !lmpc.velocity.contains(&x.velocity(), 0.0) {
            return Err(reject(format!("state {t} exceeds the velocity bound")));
        }
    }
    if !cfg
        .termination
        .reached(states.last().expect("rollout is non-empty"), target)
    {
        return Err(reject("does not terminate at the target".into()));
    }
    inputs.push(ControlInput::ZERO);
    let costs_to_go = compute_costs_to_go(&states, &inputs, target, &cfg.q, &cfg.r, &cfg.termination)
        .map_err(|e| reject(e.to_string()))?;
    Ok(TrajectoryRecord {
        agent_id: None,
        task: *key,
        iteration: 0,
        start: 0,
        end: states.len() - 1,
        states,
        inputs,
        costs_to_go,
        pedestrian_affected: false,
        origin: RecordOrigin::Seed,
    })
}
