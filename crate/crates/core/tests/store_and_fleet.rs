use std::sync::Arc;

use cloud_lmpc::cloud::{CloudError, CloudStore, RecordOrigin, StoreRules};
use cloud_lmpc::geometry::{Layout, LayoutConfig, TaskKey};
use cloud_lmpc::lmpc::{initial_trajectory, Lmpc, LmpcConfig};
use cloud_lmpc::sim::{self, RunMode, SimConfig};

fn setup() -> (Arc<Layout>, Lmpc) {
    let layout = Arc::new(Layout::build(&LayoutConfig::default()).unwrap());
    (layout, Lmpc::new(LmpcConfig::default()).unwrap())
}

#[test]
fn seeded_store_survives_persist_and_load() {
    let (layout, lmpc) = setup();
    let mut store = sim::seeded_store(layout.clone(), &lmpc).unwrap();
    let key = TaskKey { p: 0, q: 1, m: 0 };
    let seed = initial_trajectory(&key, &layout, &lmpc).unwrap();
    let added = store.transfer(&seed);
    assert!(!added.is_empty());
    for record in &added {
        assert!(matches!(record.origin, RecordOrigin::Transferred { from, .. } if from == key));
        assert_eq!(record.costs_to_go, seed.costs_to_go);
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("store.jsonl");
    store.persist(&path).unwrap();
    let loaded = CloudStore::load(&path, layout.clone(), StoreRules::from_lmpc(&lmpc)).unwrap();
    assert_eq!(loaded, store);
    assert_eq!(loaded.log().len(), 48 + added.len());

    let other = Arc::new(
        Layout::build(&LayoutConfig {
            spacing: 25.0,
            ..LayoutConfig::default()
        })
        .unwrap(),
    );
    let err = CloudStore::load(&path, other, StoreRules::from_lmpc(&lmpc)).unwrap_err();
    assert!(matches!(err, CloudError::LayoutMismatch { .. }));
}

#[test]
fn short_fleet_runs_in_both_modes() {
    let (layout, lmpc) = setup();
    let baselines = sim::baselines(&layout, &lmpc).unwrap();
    let cfg = SimConfig {
        tasks: 12,
        pedestrian_probability: 0.5,
        ..SimConfig::default()
    };
    let cloud = sim::run(layout.clone(), &lmpc, &cfg, RunMode::CloudBased, &baselines, None).unwrap();
    let isolated = sim::run(layout.clone(), &lmpc, &cfg, RunMode::Isolated, &baselines, None).unwrap();
    assert_eq!(cloud.stores.len(), 1);
    assert_eq!(isolated.stores.len(), 3);
    for m in [&cloud.metrics, &isolated.metrics] {
        assert_eq!(m.executions.len(), 12);
        assert!(m.solves.iter().all(|s| s.optimal));
        assert_eq!(m.candidate_failures(1e-6), 0);
        assert!(m.executions.iter().all(|e| e.steps <= cfg.step_cap));
    }
    assert!(cloud.metrics.transfers > 0);
    assert_eq!(isolated.metrics.transfers, 0);

    // a later run can start from the data a previous one left behind
    let resumed = sim::run(
        layout,
        &lmpc,
        &cfg,
        RunMode::CloudBased,
        &baselines,
        Some(cloud.stores[0].clone()),
    )
    .unwrap();
    assert_eq!(resumed.metrics.executions.len(), 12);
    assert!(resumed.stores[0].log().len() > cloud.stores[0].log().len());
}
