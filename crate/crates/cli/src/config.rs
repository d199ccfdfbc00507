//! Run configuration: a TOML file with one table per concern, overridden
//! by command-line flags.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use cloud_lmpc::dynamics::TerminationBox;
use cloud_lmpc::geometry::{Layout, LayoutConfig, ObstaclePlacement};
use cloud_lmpc::lmpc::{Lmpc, LmpcConfig};
use cloud_lmpc::qp::QpSettings;
use cloud_lmpc::sim::{RunMode, SimConfig};
use nalgebra::{Matrix2, Matrix4, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeSelection {
    CloudBased,
    Isolated,
    Both,
}

impl ModeSelection {
    pub fn modes(self) -> Vec<RunMode> {
        match self {
            ModeSelection::CloudBased => vec![RunMode::CloudBased],
            ModeSelection::Isolated => vec![RunMode::Isolated],
            ModeSelection::Both => vec![RunMode::CloudBased, RunMode::Isolated],
        }
    }

    pub fn parse(s: &str) -> Result<Self, CliError> {
        match s {
            "cloud_based" => Ok(ModeSelection::CloudBased),
            "isolated" => Ok(ModeSelection::Isolated),
            "both" => Ok(ModeSelection::Both),
            _ => Err(CliError::Config(format!(
                "mode `{s}` is not one of cloud_based, isolated, both"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LayoutSection {
    pub rows: usize,
    pub cols: usize,
    pub spacing: f64,
    pub road_width: f64,
    pub crosswalk_fraction: f64,
    pub crosswalk_margin: f64,
    pub obstacle_radius: f64,
    pub obstacle_fraction: f64,
    pub obstacle_lateral: f64,
}

impl Default for LayoutSection {
    fn default() -> Self {
        let d = LayoutConfig::default();
        Self {
            rows: d.rows,
            cols: d.cols,
            spacing: d.spacing,
            road_width: d.road_width,
            crosswalk_fraction: d.crosswalk_fraction,
            crosswalk_margin: d.crosswalk_margin,
            obstacle_radius: d.obstacle.radius,
            obstacle_fraction: d.obstacle.fraction,
            obstacle_lateral: d.obstacle.lateral,
        }
    }
}

impl LayoutSection {
    pub fn to_config(&self) -> LayoutConfig {
        LayoutConfig {
            rows: self.rows,
            cols: self.cols,
            spacing: self.spacing,
            road_width: self.road_width,
            crosswalk_fraction: self.crosswalk_fraction,
            obstacle: ObstaclePlacement {
                radius: self.obstacle_radius,
                fraction: self.obstacle_fraction,
                lateral: self.obstacle_lateral,
            },
            obstacle_overrides: Vec::new(),
            crosswalk_margin: self.crosswalk_margin,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerSection {
    pub horizon: usize,
    pub ts: f64,
    /// Diagonal of the state weight.
    pub q: [f64; 4],
    /// Diagonal of the input weight.
    pub r: [f64; 2],
    pub polygon_sides: usize,
    pub v_max: f64,
    pub a_max: f64,
    pub termination_position: f64,
    pub termination_velocity: f64,
    pub local_trajectories: usize,
    pub local_points: usize,
    pub seed_speed: f64,
    pub seed_accel: f64,
    pub baseline_horizon: usize,
    pub baseline_relinearizations: usize,
    pub reacquire_max_horizon: usize,
    pub feasibility_tol: f64,
    pub qp_tol: f64,
    pub qp_max_iter: usize,
}

impl Default for ControllerSection {
    fn default() -> Self {
        let d = LmpcConfig::default();
        let qp = QpSettings::default();
        Self {
            horizon: d.horizon,
            ts: d.ts,
            q: [d.q[(0, 0)], d.q[(1, 1)], d.q[(2, 2)], d.q[(3, 3)]],
            r: [d.r[(0, 0)], d.r[(1, 1)]],
            polygon_sides: d.polygon_sides,
            v_max: d.v_max,
            a_max: d.a_max,
            termination_position: d.termination.position,
            termination_velocity: d.termination.velocity,
            local_trajectories: d.local_trajectories,
            local_points: d.local_points,
            seed_speed: d.seed_speed,
            seed_accel: d.seed_accel,
            baseline_horizon: d.baseline_horizon,
            baseline_relinearizations: d.baseline_relinearizations,
            reacquire_max_horizon: d.reacquire_max_horizon,
            feasibility_tol: d.feasibility_tol,
            qp_tol: qp.tol,
            qp_max_iter: qp.max_iter,
        }
    }
}

impl ControllerSection {
    pub fn to_config(&self) -> LmpcConfig {
        LmpcConfig {
            horizon: self.horizon,
            ts: self.ts,
            q: Matrix4::from_diagonal(&Vector4::from(self.q)),
            r: Matrix2::from_diagonal(&Vector2::from(self.r)),
            polygon_sides: self.polygon_sides,
            v_max: self.v_max,
            a_max: self.a_max,
            termination: TerminationBox {
                position: self.termination_position,
                velocity: self.termination_velocity,
            },
            qp: QpSettings {
                tol: self.qp_tol,
                max_iter: self.qp_max_iter,
                ..QpSettings::default()
            },
            local_trajectories: self.local_trajectories,
            local_points: self.local_points,
            seed_speed: self.seed_speed,
            seed_accel: self.seed_accel,
            baseline_horizon: self.baseline_horizon,
            baseline_relinearizations: self.baseline_relinearizations,
            reacquire_max_horizon: self.reacquire_max_horizon,
            feasibility_tol: self.feasibility_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub mode: ModeSelection,
    pub out_dir: PathBuf,
    /// Store loaded as the initial data of every run.
    pub cloud_in: Option<PathBuf>,
    /// Where the final store is written.
    pub cloud_out: Option<PathBuf>,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            mode: ModeSelection::CloudBased,
            out_dir: PathBuf::from("out"),
            cloud_in: None,
            cloud_out: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub layout: LayoutSection,
    pub controller: ControllerSection,
    pub fleet: SimConfig,
    pub output: OutputSection,
}

/// Command-line values that replace file settings when given.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub mode: Option<ModeSelection>,
    pub out_dir: Option<PathBuf>,
    pub cloud_in: Option<PathBuf>,
    pub cloud_out: Option<PathBuf>,
    pub tasks: Option<usize>,
    pub agents: Option<usize>,
}

/// A checked configuration with the objects built from it.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: RunConfig,
    pub layout: Arc<Layout>,
    pub lmpc: Lmpc,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.fleet.seed = seed;
        }
        if let Some(mode) = o.mode {
            self.output.mode = mode;
        }
        if let Some(dir) = &o.out_dir {
            self.output.out_dir = dir.clone();
        }
        if let Some(p) = &o.cloud_in {
            self.output.cloud_in = Some(p.clone());
        }
        if let Some(p) = &o.cloud_out {
            self.output.cloud_out = Some(p.clone());
        }
        if let Some(t) = o.tasks {
            self.fleet.tasks = t;
        }
        if let Some(a) = o.agents {
            self.fleet.agents = a;
        }
    }

    /// Validates every section and builds the layout and controller.
    pub fn prepare(self) -> Result<Prepared, CliError> {
        let config_err = |e: &dyn std::fmt::Display| CliError::Config(e.to_string());
        let layout = Layout::build(&self.layout.to_config()).map_err(|e| config_err(&e))?;
        let lmpc = Lmpc::new(self.controller.to_config()).map_err(|e| config_err(&e))?;
        self.fleet.validate(&layout).map_err(|e| config_err(&e))?;
        Ok(Prepared {
            config: self,
            layout: Arc::new(layout),
            lmpc,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = RunConfig::from_toml("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        let lmpc = cfg.controller.to_config();
        assert_eq!(lmpc, LmpcConfig::default());
        assert_eq!(cfg.layout.to_config(), LayoutConfig::default());
        assert_eq!(cfg.fleet.agents, 3);
        assert_eq!(cfg.fleet.pedestrian_probability, 0.1);
        assert!(cfg.prepare().is_ok());
    }

    #[test]
    fn shipped_config_matches_defaults() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../config/default.toml");
        assert_eq!(RunConfig::from_file(&path).unwrap(), RunConfig::default());
    }

    #[test]
    fn sections_and_overrides() {
        let mut cfg = RunConfig::from_toml(
            "[controller]\nhorizon = 6\nq = [1.0, 1.0, 0.5, 0.5]\n\n[fleet]\ntasks = 12\n\n[output]\nmode = \"both\"\n",
        )
        .unwrap();
        assert_eq!(cfg.controller.horizon, 6);
        assert_eq!(cfg.controller.to_config().q[(2, 2)], 0.5);
        assert_eq!(cfg.output.mode, ModeSelection::Both);
        cfg.apply(&Overrides {
            tasks: Some(3),
            seed: Some(42),
            ..Overrides::default()
        });
        assert_eq!((cfg.fleet.tasks, cfg.fleet.seed), (3, 42));
    }

    #[test]
    fn bad_values_are_rejected() {
        let err = RunConfig::from_toml("[controller]\nhorizon = 0\n")
            .unwrap()
            .prepare()
            .unwrap_err();
        assert!(matches!(err, CliError::Config(m) if m.contains("horizon")));
        let err = RunConfig::from_toml("[fleet]\npedestrian_probability = 1.5\n")
            .unwrap()
            .prepare()
            .unwrap_err();
        assert!(matches!(err, CliError::Config(m) if m.contains("probability")));
        let err = RunConfig::from_toml("[fleet]\nagnets = 3\n").unwrap_err();
        assert!(matches!(err, CliError::Config(m) if m.contains("agnets") && m.contains("line 2")));
        assert!(ModeSelection::parse("cloud").is_err());
    }
}
