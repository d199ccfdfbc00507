use std::sync::Arc;

use nalgebra::Vector2;
use proptest::prelude::*;

use super::*;
use crate::cloud::SafeSet;
use crate::geometry::{ForbiddenCircle, Layout, LayoutConfig, TaskKey};
use crate::sim::seeded_store;

struct Setup {
    layout: Arc<Layout>,
    lmpc: Lmpc,
}

impl Setup {
    fn new() -> Self {
        Self {
            layout: Arc::new(Layout::build(&LayoutConfig::default()).unwrap()),
            lmpc: Lmpc::new(LmpcConfig::default()).unwrap(),
        }
    }

    fn safe_set(&self, key: &TaskKey) -> Arc<SafeSet> {
        seeded_store(self.layout.clone(), &self.lmpc)
            .unwrap()
            .snapshot(key)
            .unwrap()
    }
}

/// Stage costs along a plan plus the weighted terminal cost-to-go.
fn plan_cost(lmpc: &Lmpc, plan: &Plan, target: &AgentState, safe_set: &SafeSet) -> f64 {
    let stages: f64 = plan
        .inputs
        .iter()
        .zip(&plan.states)
        .map(|(u, x)| lmpc.stage_cost(x, u, target))
        .sum();
    let terminal: f64 = plan
        .weights
        .iter()
        .map(|(j, w)| w * safe_set.points[*j].cost_to_go)
        .sum();
    stages + terminal
}

#[test]
fn stage_cost_examples() {
    let cfg = LmpcConfig::default();
    let t = AgentState::new(20.0, 0.0, 0.0, 0.0);
    assert_eq!(stage_cost(&t, &ControlInput::ZERO, &t, &cfg.q, &cfg.r), 0.0);
    let x = AgentState::new(21.0, 0.0, 0.0, 0.0);
    assert!((stage_cost(&x, &ControlInput::ZERO, &t, &cfg.q, &cfg.r) - 0.01).abs() < 1e-15);
    assert!((stage_cost(&t, &ControlInput::new(1.0, 0.0), &t, &cfg.q, &cfg.r) - 0.5).abs() < 1e-15);
}

#[test]
fn config_validation() {
    assert!(LmpcConfig::default().validate().is_ok());
    let cfg = LmpcConfig {
        horizon: 0,
        ..LmpcConfig::default()
    };
    assert!(cfg.validate().is_err());
    let cfg = LmpcConfig {
        q: Matrix4::zeros(),
        ..LmpcConfig::default()
    };
    assert!(cfg.validate().is_err());
}

#[test]
fn linearization_examples() {
    let circle = ForbiddenCircle {
        center: Vector2::new(0.0, 0.0),
        radius: 1.5,
    };
    let h = linearize_obstacle(&[Vector2::new(3.0, 0.0)], &circle).unwrap();
    assert_eq!(h[0].normal, Vector2::new(-1.0, 0.0));
    assert_eq!(h[0].offset, -1.5);
    let h = linearize_obstacle(&[Vector2::new(0.0, -1.5)], &circle).unwrap();
    assert_eq!(h[0].normal, Vector2::new(0.0, 1.0));
    assert_eq!(h[0].offset, -1.5);
    assert!(matches!(
        linearize_obstacle(&[Vector2::new(0.5, 0.0)], &circle),
        Err(LmpcError::CandidateInsideObstacle { .. })
    ));
}

proptest! {
    #[test]
    fn linearization_is_conservative_and_keeps_its_point(
        angle in 0.0..std::f64::consts::TAU,
        dist in 1.5..10.0f64,
        along in -20.0..20.0f64,
    ) {
        let circle = ForbiddenCircle { center: Vector2::new(1.0, -2.0), radius: 1.5 };
        let dir = Vector2::new(angle.cos(), angle.sin());
        let s = circle.center + dir * dist;
        let h = &linearize_obstacle(&[s], &circle).unwrap()[0];
        prop_assert!(h.normal.dot(&s) <= h.offset + 1e-12);
        // the boundary line of the half-plane never enters the circle
        let tangent = Vector2::new(-dir.y, dir.x);
        let on_line = circle.center + dir * circle.radius + tangent * along;
        prop_assert!((h.normal.dot(&on_line) - h.offset).abs() <= 1e-9);
        prop_assert!((on_line - circle.center).norm() >= circle.radius - 1e-12);
    }
}

#[test]
fn first_solve_from_the_seed_is_feasible_and_no_worse() {
    let setup = Setup::new();
    for m in 0..2 {
        let key = TaskKey::new(0, 1, m);
        let ss = setup.safe_set(&key);
        let x0 = *setup.layout.target(0);
        let target = setup.layout.target(1);
        let candidate = setup.lmpc.first_candidate(&x0, &ss).unwrap();
        let out = setup
            .lmpc
            .solve_main(&x0, &key, &setup.layout, &ss, &candidate)
            .unwrap();
        assert_eq!(out.kind, ProblemKind::Main);
        assert!(out.candidate_violation.unwrap() <= 1e-9, "mode {m}");
        assert!(out.objective <= plan_cost(&setup.lmpc, &candidate, target, &ss) + 1e-6);
        assert!((out.weight_sum - 1.0).abs() <= 1e-9 && out.weight_min >= -1e-9);
        for x in &out.plan.states {
            assert!(setup.layout.admissible_position_tol(&key, &x.position(), 1e-6));
        }
        // the shifted plan is a feasible point of the next problem
        let next = setup.lmpc.model.step(&x0, &out.input());
        let shifted = setup.lmpc.build_candidate(&out.plan, &next, &ss);
        let again = setup
            .lmpc
            .solve_main(&next, &key, &setup.layout, &ss, &shifted)
            .unwrap();
        assert!(again.candidate_violation.unwrap() <= 1e-6, "mode {m}");
        let h = setup.lmpc.stage_cost(&x0, &out.input(), target);
        assert!(again.objective <= out.objective - h + 1e-5, "mode {m}");
    }
}

#[test]
fn equilibrium_at_the_target() {
    let setup = Setup::new();
    let key = TaskKey::new(3, 4, 0);
    let ss = setup.safe_set(&key);
    let x0 = *setup.layout.target(4);
    let last = ss.trajectories[0].first + ss.trajectories[0].len - 1;
    let candidate = setup.lmpc.stored_continuation(&x0, &ss, last, setup.lmpc.cfg.horizon);
    let out = setup
        .lmpc
        .solve_main(&x0, &key, &setup.layout, &ss, &candidate)
        .unwrap();
    assert!(out.objective.abs() <= 1e-6);
    assert!(out.input().to_vector().amax() <= 1e-6);
}

#[test]
fn only_obstacle_modes_constrain_the_circle() {
    let setup = Setup::new();
    // the free-road seed drives straight through the mode-1 circle
    let free = TaskKey::new(0, 1, 0);
    let ss = setup.safe_set(&free);
    let x0 = *setup.layout.target(0);
    let mut candidate = setup.lmpc.first_candidate(&x0, &ss).unwrap();
    let circle = setup.layout.circle(&TaskKey::new(0, 1, 1)).unwrap();
    candidate.states[1] = AgentState::new(circle.center.x, circle.center.y, 0.0, 0.0);
    let points = setup.lmpc.select_points(&ss, &candidate, false, |_| true);
    assert!(setup
        .lmpc
        .build_main_problem(&x0, &free, &setup.layout, &ss, &candidate, &points)
        .is_ok());
    assert!(setup.layout.circle(&free).is_none());
    let blocked = TaskKey::new(0, 1, 1);
    assert!(matches!(
        setup
            .lmpc
            .build_main_problem(&x0, &blocked, &setup.layout, &ss, &candidate, &points),
        Err(LmpcError::CandidateInsideObstacle { .. })
    ));
}

#[test]
fn obstacle_problem_stops_before_the_crosswalk() {
    let setup = Setup::new();
    for m in 0..2 {
        let key = TaskKey::new(0, 1, m);
        let ss = setup.safe_set(&key);
        let crosswalk = setup.layout.crosswalk_along(&key).unwrap();
        let region = setup.layout.before_obstacle_region_at(&key, crosswalk).unwrap();
        let limit = crosswalk - setup.layout.crosswalk_margin;
        // a few metres ahead of the origin; coasting with zero input only
        // stays clear of the circle on the free road
        let speed = if m == 0 { 1.0 } else { 0.0 };
        let x0 = AgentState::new(2.0, 0.0, speed, 0.0);
        let candidate = setup.lmpc.hold_candidate(&x0);
        let out = setup
            .lmpc
            .solve_obstacle(&x0, &key, &setup.layout, &region, &ss, &candidate, false)
            .unwrap_or_else(|e| panic!("mode {m}: {e}"));
        assert_eq!(out.kind, ProblemKind::Obstacle);
        assert!(out.candidate_violation.is_none());
        for x in &out.plan.states {
            assert!(setup.layout.along_road(&key, &x.position()) <= limit + 1e-6);
        }
        let end = out.plan.terminal();
        assert!(end.velocity().amax() <= 1e-6);
        assert!(setup.lmpc.position_in_hull(end, &ss));
    }
    // past the cut the problem is refused
    let key = TaskKey::new(0, 1, 0);
    let ss = setup.safe_set(&key);
    let region = setup.layout.before_obstacle_region(&key).unwrap();
    let x0 = AgentState::new(15.0, 0.0, 1.0, 0.0);
    let candidate = setup.lmpc.hold_candidate(&x0);
    assert_eq!(
        setup
            .lmpc
            .solve_obstacle(&x0, &key, &setup.layout, &region, &ss, &candidate, false),
        Err(LmpcError::PastCrosswalk)
    );
}

#[test]
fn reacquire_examples() {
    let setup = Setup::new();
    let key = TaskKey::new(0, 1, 0);
    let ss = setup.safe_set(&key);
    let span = ss.trajectories[0];
    let j = span.first + span.len / 2;
    let stored = ss.points[j].state;
    match setup
        .lmpc
        .reacquire_safe_set(&stored, &key, &setup.layout, &ss)
        .unwrap()
    {
        Reacquisition::Stored { index, candidate } => {
            assert_eq!(index, j);
            assert_eq!(candidate.states[0], stored);
        }
        other => panic!("expected a stored point, got {other:?}"),
    }
    // same position, half the speed
    let slow = AgentState::new(stored.sx, stored.sy, stored.vx * 0.5, stored.vy * 0.5);
    match setup.lmpc.reacquire_safe_set(&slow, &key, &setup.layout, &ss).unwrap() {
        Reacquisition::Steered { horizon, outcome } => {
            assert!(horizon >= setup.lmpc.cfg.horizon);
            assert_eq!(outcome.kind, ProblemKind::Reacquire);
            assert!((outcome.weight_sum - 1.0).abs() <= 1e-9);
            for x in &outcome.plan.states {
                assert!(setup.layout.admissible_position_tol(&key, &x.position(), 1e-6));
            }
        }
        other => panic!("expected a steered plan, got {other:?}"),
    }
    // off the stored line
    let off = AgentState::new(stored.sx, stored.sy + 1.0, 0.0, 0.0);
    assert!(matches!(
        setup.lmpc.reacquire_safe_set(&off, &key, &setup.layout, &ss),
        Err(LmpcError::Reacquire { .. })
    ));
}

#[test]
fn baseline_examples() {
    let setup = Setup::new();
    let key = TaskKey::new(0, 0, 0);
    let r = baseline_optimal(&key, &setup.layout, &setup.lmpc, &[]).unwrap();
    assert_eq!(r.cost, 0.0);
    for m in 0..2 {
        let key = TaskKey::new(0, 1, m);
        let seed = initial_trajectory(&key, &setup.layout, &setup.lmpc).unwrap();
        let reference: Vec<Vector2<f64>> = seed.states.iter().map(|x| x.position()).collect();
        let r = baseline_optimal(&key, &setup.layout, &setup.lmpc, &reference).unwrap();
        assert!(r.cost > 0.0 && r.cost <= seed.cost());
        assert!(r.last_change <= 1e-6);
        let end = r.states.last().unwrap();
        assert!((end.to_vector() - setup.layout.target(1).to_vector()).amax() <= 1e-6);
    }
}
