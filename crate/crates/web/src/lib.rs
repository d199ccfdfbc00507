//! WebAssembly bindings for the browser demo. Every call returns JSON.

use std::sync::Arc;

use cloud_lmpc::geometry::{Layout, LayoutConfig, TaskKey};
use cloud_lmpc::lmpc::{initial_trajectory, Lmpc, LmpcConfig};
use cloud_lmpc::sim::{self, RunMode, SimConfig};
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn setup() -> Result<(Arc<Layout>, Lmpc), String> {
    let layout = Layout::build(&LayoutConfig::default()).map_err(|e| e.to_string())?;
    let lmpc = Lmpc::new(LmpcConfig::default()).map_err(|e| e.to_string())?;
    Ok((Arc::new(layout), lmpc))
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("plain data serializes")
}

#[derive(Serialize)]
struct Trajectory {
    key: String,
    cost: f64,
    points: Vec<[f64; 2]>,
}

#[derive(Serialize)]
struct Execution {
    key: String,
    mode: usize,
    repetition: usize,
    agent: usize,
    cost: f64,
    gap: Option<f64>,
    pedestrian: bool,
}

#[derive(Serialize)]
struct FleetSummary {
    executions: Vec<Execution>,
    solves: usize,
    transfers: usize,
    steps: usize,
}

/// The default road grid: targets, road corridors and obstacles.
pub fn layout_json() -> Result<String, String> {
    let (layout, _) = setup()?;
    Ok(to_json(&*layout))
}

/// Positions and cost of the generated initial trajectory of one task.
pub fn seed_trajectory_json(p: usize, q: usize, m: usize) -> Result<String, String> {
    let (layout, lmpc) = setup()?;
    let key = TaskKey::new(p, q, m);
    layout.validate_key(&key).map_err(|e| e.to_string())?;
    let record = initial_trajectory(&key, &layout, &lmpc).map_err(|e| e.to_string())?;
    Ok(to_json(&Trajectory {
        key: key.to_string(),
        cost: record.cost(),
        points: record.states.iter().map(|s| [s.position().x, s.position().y]).collect(),
    }))
}

/// Runs a short fleet simulation and lists every finished task.
pub fn simulate_json(tasks: usize, seed: u64, pedestrian_probability: f64, cloud: bool) -> Result<String, String> {
    let (layout, lmpc) = setup()?;
    let cfg = SimConfig {
        tasks,
        seed,
        pedestrian_probability,
        ..SimConfig::default()
    };
    cfg.validate(&layout).map_err(|e| e.to_string())?;
    let baselines = sim::baselines(&layout, &lmpc).map_err(|e| e.to_string())?;
    let mode = if cloud { RunMode::CloudBased } else { RunMode::Isolated };
    let m = sim::run(layout, &lmpc, &cfg, mode, &baselines, None)
        .map_err(|e| e.to_string())?
        .metrics;
    Ok(to_json(&FleetSummary {
        executions: m
            .executions
            .iter()
            .map(|e| Execution {
                key: e.key.to_string(),
                mode: e.key.m,
                repetition: e.repetition,
                agent: e.agent,
                cost: e.cost,
                gap: e.gap,
                pedestrian: e.pedestrian,
            })
            .collect(),
        solves: m.solves.len(),
        transfers: m.transfers,
        steps: m.clock,
    }))
}

#[wasm_bindgen]
pub fn layout() -> Result<String, JsError> {
    layout_json().map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn seed_trajectory(p: usize, q: usize, m: usize) -> Result<String, JsError> {
    seed_trajectory_json(p, q, m).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn simulate(tasks: usize, seed: u64, pedestrian_probability: f64, cloud: bool) -> Result<String, JsError> {
    simulate_json(tasks, seed, pedestrian_probability, cloud).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_lists_the_grid() {
        let v: serde_json::Value = serde_json::from_str(&layout_json().unwrap()).unwrap();
        assert_eq!(v["targets"].as_array().unwrap().len(), 9);
        assert_eq!(v["roads"].as_array().unwrap().len(), 12);
    }

    #[test]
    fn seed_trajectory_ends_at_the_target() {
        let v: serde_json::Value = serde_json::from_str(&seed_trajectory_json(0, 1, 0).unwrap()).unwrap();
        let points = v["points"].as_array().unwrap();
        let last = &points[points.len() - 1];
        assert!((last[0].as_f64().unwrap() - 20.0).abs() < 1e-6);
        assert!(last[1].as_f64().unwrap().abs() < 1e-6);
        assert!(seed_trajectory_json(0, 4, 0).is_err());
    }

    #[test]
    fn simulate_reports_each_task() {
        let v: serde_json::Value = serde_json::from_str(&simulate_json(4, 1, 0.0, true).unwrap()).unwrap();
        assert_eq!(v["executions"].as_array().unwrap().len(), 4);
        assert!(simulate_json(4, 1, 2.0, true).is_err());
    }
}
