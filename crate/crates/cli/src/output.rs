//! CSV tables of a run and the plots drawn from them.

use std::collections::BTreeMap;
use std::path::Path;

use cloud_lmpc::geometry::{Layout, TaskKey};
use cloud_lmpc::lmpc::ProblemKind;
use cloud_lmpc::sim::{settling_index, SimMetrics};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::svg::{LineChart, Series};
use crate::{io_error, CliError};

pub const METRICS_FILE: &str = "metrics.csv";
pub const SOLVES_FILE: &str = "solves.csv";
pub const TRACE_FILE: &str = "pedestrian_trace.csv";

/// One task execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub run_mode: String,
    pub p: usize,
    pub q: usize,
    pub m: usize,
    pub repetition: usize,
    pub agent: usize,
    pub start_step: usize,
    pub end_step: usize,
    pub cost: f64,
    pub baseline: Option<f64>,
    pub gap: Option<f64>,
    pub steps: usize,
    pub pedestrian: bool,
    pub detected_steps: usize,
    pub anomaly: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveRow {
    pub run_mode: String,
    pub agent: usize,
    pub p: usize,
    pub q: usize,
    pub m: usize,
    pub task_start: usize,
    pub step: usize,
    pub kind: ProblemKind,
    pub optimal: bool,
    pub objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: usize,
    pub horizon: usize,
    pub candidate_violation: Option<f64>,
    pub decrease_slack: Option<f64>,
    pub circle_clearance: Option<f64>,
    pub weight_sum: f64,
    pub weight_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceCsvRow {
    pub run_mode: String,
    pub agent: usize,
    pub p: usize,
    pub q: usize,
    pub m: usize,
    pub task_start: usize,
    pub step: usize,
    pub time: f64,
    pub x: f64,
    pub y: f64,
    pub along: f64,
    pub limit: f64,
    pub event_active: bool,
    pub detected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub p: usize,
    pub q: usize,
    pub m: usize,
    pub cloud_repetitions: usize,
    pub isolated_repetitions: usize,
    pub cloud_settling: Option<usize>,
    pub isolated_settling: Option<usize>,
}

pub fn metrics_rows(m: &SimMetrics) -> Vec<MetricsRow> {
    m.executions
        .iter()
        .map(|e| MetricsRow {
            run_mode: m.mode.to_string(),
            p: e.key.p,
            q: e.key.q,
            m: e.key.m,
            repetition: e.repetition,
            agent: e.agent,
            start_step: e.start_step,
            end_step: e.end_step,
            cost: e.cost,
            baseline: m.baselines.get(&e.key).copied(),
            gap: e.gap,
            steps: e.steps,
            pedestrian: e.pedestrian,
            detected_steps: e.detected_steps,
            anomaly: e.anomaly,
        })
        .collect()
}

pub fn solve_rows(m: &SimMetrics) -> Vec<SolveRow> {
    m.solves
        .iter()
        .map(|s| SolveRow {
            run_mode: m.mode.to_string(),
            agent: s.agent,
            p: s.key.p,
            q: s.key.q,
            m: s.key.m,
            task_start: s.task_start,
            step: s.step,
            kind: s.kind,
            optimal: s.optimal,
            objective: s.objective,
            primal_residual: s.primal_residual,
            dual_residual: s.dual_residual,
            iterations: s.iterations,
            horizon: s.horizon,
            candidate_violation: s.candidate_violation,
            decrease_slack: s.decrease_slack,
            circle_clearance: s.circle_clearance,
            weight_sum: s.weight_sum,
            weight_min: s.weight_min,
        })
        .collect()
}

pub fn trace_rows(m: &SimMetrics) -> Vec<TraceCsvRow> {
    m.traces
        .iter()
        .map(|t| TraceCsvRow {
            run_mode: m.mode.to_string(),
            agent: t.agent,
            p: t.key.p,
            q: t.key.q,
            m: t.key.m,
            task_start: t.task_start,
            step: t.step,
            time: t.time,
            x: t.x,
            y: t.y,
            along: t.along,
            limit: t.limit,
            event_active: t.event_active,
            detected: t.detected,
        })
        .collect()
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(io_error(path))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(source) => CliError::Io {
                path: path.to_path_buf(),
                source,
            },
            _ => unreachable!("checked to be an io error"),
        }
    } else {
        CliError::Runtime(format!("{}: {e}", path.display()))
    }
}

pub fn write_baselines(path: &Path, baselines: &BTreeMap<TaskKey, f64>) -> Result<(), CliError> {
    #[derive(Serialize)]
    struct Row {
        p: usize,
        q: usize,
        m: usize,
        baseline: f64,
    }
    let rows: Vec<Row> = baselines
        .iter()
        .map(|(k, b)| Row {
            p: k.p,
            q: k.q,
            m: k.m,
            baseline: *b,
        })
        .collect();
    write_csv(path, &rows)
}

/// Tables of one run followed by the plots drawn from them.
pub fn write_run(dir: &Path, m: &SimMetrics) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(io_error(dir))?;
    write_csv(&dir.join(METRICS_FILE), &metrics_rows(m))?;
    write_csv(&dir.join(SOLVES_FILE), &solve_rows(m))?;
    write_csv(&dir.join(TRACE_FILE), &trace_rows(m))?;
    plot_dir(dir)
}

/// Regenerates the plots of a run directory from its CSV files.
pub fn plot_dir(dir: &Path) -> Result<(), CliError> {
    let metrics: Vec<MetricsRow> = read_csv(&dir.join(METRICS_FILE))?;
    let trace: Vec<TraceCsvRow> = read_csv(&dir.join(TRACE_FILE))?;
    let write = |name: &str, svg: String| {
        let path = dir.join(name);
        std::fs::write(&path, svg).map_err(io_error(&path))
    };
    write("cost_vs_repetition.svg", cost_plot(&metrics, 4).render())?;
    write("gap_moving_average.svg", gap_plot(&metrics, 5).render())?;
    write("pedestrian_position.svg", pedestrian_plot(&trace).render())
}

fn key_label(p: usize, q: usize, m: usize) -> String {
    format!("{p}->{q}/m{m}")
}

/// Pedestrian-free cost against repetition for the `count` keys with the
/// most repetitions, with their baselines dashed.
pub fn cost_plot(rows: &[MetricsRow], count: usize) -> LineChart {
    let mut by_key: BTreeMap<(usize, usize, usize), Vec<&MetricsRow>> = BTreeMap::new();
    for r in rows.iter().filter(|r| !r.pedestrian) {
        by_key.entry((r.p, r.q, r.m)).or_default().push(r);
    }
    let mut keys: Vec<_> = by_key.iter().collect();
    keys.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then(a.0.cmp(b.0)));
    let mut series = Vec::new();
    for ((p, q, m), runs) in keys.into_iter().take(count) {
        let mut runs = runs.clone();
        runs.sort_by_key(|r| r.repetition);
        series.push(Series::line(
            key_label(*p, *q, *m),
            runs.iter().map(|r| (r.repetition as f64, r.cost)).collect(),
        ));
        if let Some(b) = runs[0].baseline {
            let last = runs.last().expect("non-empty").repetition as f64;
            series.push(Series::dashed(
                format!("baseline {}", key_label(*p, *q, *m)),
                vec![(1.0, b), (last, b)],
            ));
        }
    }
    LineChart {
        title: "Iteration cost by repetition".into(),
        x_label: "repetition".into(),
        y_label: "cost".into(),
        series,
    }
}

/// Trailing mean over up to `window` values.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    (0..values.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window.max(1));
            let w = &values[lo..=i];
            w.iter().sum::<f64>() / w.len() as f64
        })
        .collect()
}

/// Optimality gap (percent) of each agent's pedestrian-free tasks,
/// smoothed over `window` tasks.
pub fn gap_plot(rows: &[MetricsRow], window: usize) -> LineChart {
    let mut by_agent: BTreeMap<usize, Vec<&MetricsRow>> = BTreeMap::new();
    for r in rows.iter().filter(|r| !r.pedestrian && r.gap.is_some()) {
        by_agent.entry(r.agent).or_default().push(r);
    }
    let series = by_agent
        .into_iter()
        .map(|(agent, mut runs)| {
            runs.sort_by_key(|r| r.start_step);
            let gaps: Vec<f64> = runs.iter().map(|r| 100.0 * r.gap.expect("filtered")).collect();
            let avg = moving_average(&gaps, window);
            Series::line(
                format!("agent {agent}"),
                avg.into_iter().enumerate().map(|(i, g)| ((i + 1) as f64, g)).collect(),
            )
        })
        .collect();
    LineChart {
        title: format!("Optimality gap, moving average over {window} tasks"),
        x_label: "task".into(),
        y_label: "gap [%]".into(),
        series,
    }
}

/// Along-road position against time for the first pedestrian-affected
/// task, with the stopping limit and the detected interval.
pub fn pedestrian_plot(rows: &[TraceCsvRow]) -> LineChart {
    let mut series = Vec::new();
    let mut title = "No pedestrian-affected task".to_string();
    if let Some(first) = rows.iter().min_by_key(|r| (r.task_start, r.agent)) {
        let task: Vec<&TraceCsvRow> = rows
            .iter()
            .filter(|r| r.task_start == first.task_start && r.agent == first.agent)
            .collect();
        title = format!(
            "Agent {} on {} (step {})",
            first.agent,
            key_label(first.p, first.q, first.m),
            first.task_start
        );
        series.push(Series::line(
            "position".into(),
            task.iter().map(|r| (r.time, r.along)).collect(),
        ));
        let t_end = task.last().expect("non-empty").time;
        series.push(Series::dashed(
            "stop limit".into(),
            vec![(0.0, first.limit), (t_end, first.limit)],
        ));
        let detected: Vec<(f64, f64)> = task.iter().filter(|r| r.detected).map(|r| (r.time, r.along)).collect();
        if !detected.is_empty() {
            series.push(Series::points("detected".into(), detected));
        }
    }
    LineChart {
        title,
        x_label: "time [s]".into(),
        y_label: "distance along road [m]".into(),
        series,
    }
}

pub fn comparison_rows(layout: &Layout, cloud: &SimMetrics, isolated: &SimMetrics) -> Vec<ComparisonRow> {
    layout
        .task_keys()
        .into_iter()
        .map(|key| {
            let (c, i) = (cloud.clean_costs(&key), isolated.clean_costs(&key));
            ComparisonRow {
                p: key.p,
                q: key.q,
                m: key.m,
                cloud_repetitions: c.len(),
                isolated_repetitions: i.len(),
                cloud_settling: settling_index(&c, 0.01),
                isolated_settling: settling_index(&i, 0.01),
            }
        })
        .collect()
}

pub fn write_comparison(
    path: &Path,
    layout: &Layout,
    cloud: &SimMetrics,
    isolated: &SimMetrics,
) -> Result<(), CliError> {
    write_csv(path, &comparison_rows(layout, cloud, isolated))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(agent: usize, rep: usize, cost: f64, pedestrian: bool) -> MetricsRow {
        MetricsRow {
            run_mode: "cloud_based".into(),
            p: 0,
            q: 1,
            m: 0,
            repetition: rep,
            agent,
            start_step: 10 * rep,
            end_step: 10 * rep + 9,
            cost,
            baseline: Some(10.0),
            gap: Some((cost - 10.0) / 10.0),
            steps: 9,
            pedestrian,
            detected_steps: 0,
            anomaly: false,
        }
    }

    #[test]
    fn moving_average_examples() {
        assert_eq!(moving_average(&[], 5), Vec::<f64>::new());
        assert_eq!(moving_average(&[2.0, 4.0, 6.0], 2), vec![2.0, 3.0, 5.0]);
        assert_eq!(moving_average(&[1.0; 7], 5), vec![1.0; 7]);
    }

    #[test]
    fn csv_round_trip_keeps_every_field() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let rows = vec![
            row(0, 1, 12.5, false),
            MetricsRow {
                gap: None,
                ..row(1, 2, 0.1 + 0.2, true)
            },
        ];
        write_csv(&path, &rows).unwrap();
        let back: Vec<MetricsRow> = read_csv(&path).unwrap();
        assert_eq!(back, rows);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(
            "run_mode,p,q,m,repetition,agent,start_step,end_step,cost,baseline,gap,steps,pedestrian,detected_steps,anomaly\n"
        ));
    }

    #[test]
    fn plots_skip_pedestrian_tasks() {
        let rows = vec![row(0, 1, 14.0, false), row(0, 2, 30.0, true), row(1, 3, 12.0, false)];
        let chart = cost_plot(&rows, 4);
        assert_eq!(chart.series[0].points, vec![(1.0, 14.0), (3.0, 12.0)]);
        assert_eq!(chart.series[1].points, vec![(1.0, 10.0), (3.0, 10.0)]);
        let gaps = gap_plot(&rows, 5);
        assert_eq!(gaps.series.len(), 2);
        assert_eq!(gaps.series[0].points.len(), 1);
        assert!((gaps.series[0].points[0].1 - 40.0).abs() < 1e-12);
        assert_eq!(pedestrian_plot(&[]).series.len(), 0);
    }
}
