//! Experiment driver: configuration, the `run` and `validate` commands,
//! CSV tables and SVG plots.

pub mod config;
pub mod output;
pub mod svg;

use std::path::{Path, PathBuf};

use cloud_lmpc::cloud::{CloudError, CloudStore, StoreRules};
use cloud_lmpc::geometry::TaskKey;
use cloud_lmpc::lmpc::initial_trajectory;
use cloud_lmpc::sim::{self, RunMode, SimError, SimMetrics};

pub use config::{ModeSelection, Overrides, Prepared, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("run failed: {0}")]
    Runtime(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::Io { .. } => 3,
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(m) => CliError::Config(m),
            SimError::Cloud(c) => c.into(),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<CloudError> for CliError {
    fn from(e: CloudError) -> Self {
        match e {
            CloudError::Io { path, source } => CliError::Io {
                path: path.into(),
                source,
            },
            other => CliError::Runtime(other.to_string()),
        }
    }
}

pub(crate) fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One finished run of the `run` command.
#[derive(Debug, Clone)]
pub struct ModeRun {
    pub metrics: SimMetrics,
    pub dir: PathBuf,
}

/// Runs every selected mode with the same seed and writes the tables,
/// plots and (optionally) the final store.
pub fn cmd_run(prepared: &Prepared) -> Result<Vec<ModeRun>, CliError> {
    let Prepared { config, layout, lmpc } = prepared;
    let out = &config.output;
    std::fs::create_dir_all(&out.out_dir).map_err(io_error(&out.out_dir))?;
    let baselines = sim::baselines(layout, lmpc)?;
    output::write_baselines(&out.out_dir.join("baselines.csv"), &baselines)?;
    let initial = match &out.cloud_in {
        Some(path) => Some(CloudStore::load(path, layout.clone(), StoreRules::from_lmpc(lmpc))?),
        None => None,
    };
    let mut runs = Vec::new();
    for mode in out.mode.modes() {
        let outcome = sim::run(layout.clone(), lmpc, &config.fleet, mode, &baselines, initial.clone())?;
        let dir = out.out_dir.join(mode.to_string());
        output::write_run(&dir, &outcome.metrics)?;
        if let Some(path) = &out.cloud_out {
            match mode {
                RunMode::CloudBased => outcome.stores[0].persist(path)?,
                RunMode::Isolated if out.mode == ModeSelection::Isolated => {
                    for (agent, store) in outcome.stores.iter().enumerate() {
                        store.persist(&agent_store_path(path, agent))?;
                    }
                }
                RunMode::Isolated => {}
            }
        }
        runs.push(ModeRun {
            metrics: outcome.metrics,
            dir,
        });
    }
    if let [cloud, isolated] = runs.as_slice() {
        output::write_comparison(
            &out.out_dir.join("comparison.csv"),
            layout,
            &cloud.metrics,
            &isolated.metrics,
        )?;
    }
    Ok(runs)
}

/// `store.toml` becomes `store.agent2.toml` for agent 2.
pub fn agent_store_path(path: &Path, agent: usize) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}.agent{agent}.{}", ext.to_string_lossy()),
        None => format!("{stem}.agent{agent}"),
    };
    path.with_file_name(name)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeyReport {
    pub key: TaskKey,
    pub seed_cost: Option<f64>,
    pub baseline: Option<f64>,
    pub error: Option<String>,
}

impl KeyReport {
    pub fn valid(&self) -> bool {
        self.error.is_none()
    }
}

/// Generates and checks every initial trajectory, then (when all are
/// valid) every baseline, without simulating.
pub fn cmd_validate(prepared: &Prepared) -> Result<Vec<KeyReport>, CliError> {
    let Prepared { layout, lmpc, .. } = prepared;
    let store = CloudStore::new(layout.clone(), StoreRules::from_lmpc(lmpc));
    let mut reports: Vec<KeyReport> = layout
        .task_keys()
        .into_iter()
        .map(|key| {
            let seed = initial_trajectory(&key, layout, lmpc).map_err(|e| e.to_string());
            let checked = seed.and_then(|s| store.check_record(&s).map(|_| s.cost()).map_err(|e| e.to_string()));
            KeyReport {
                key,
                seed_cost: checked.as_ref().ok().copied(),
                baseline: None,
                error: checked.err(),
            }
        })
        .collect();
    if reports.iter().all(KeyReport::valid) {
        let baselines = sim::baselines(layout, lmpc)?;
        for r in &mut reports {
            let (seed, base) = (r.seed_cost.expect("valid seed"), baselines[&r.key]);
            r.baseline = Some(base);
            if base > seed + 1e-6 * seed.max(1.0) {
                r.error = Some(format!("baseline {base} exceeds seed cost {seed}"));
            }
        }
    }
    Ok(reports)
}
