//! Road grid: targets, corridors, mode-dependent keep-out circles and
//! crosswalks.

use crate::dynamics::{AgentState, HalfPlane};
use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use std::fmt;

/// Number of operating modes per road: mode 0 is obstacle free, mode 1
/// carries the road's keep-out circle.
pub const MODES: usize = 2;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GeometryError {
    #[error("grid needs at least 2 rows and 2 columns, got {rows}x{cols}")]
    GridTooSmall { rows: usize, cols: usize },
    #[error("need spacing > road width > 0 (spacing {spacing}, width {width})")]
    BadRoadDimensions { spacing: f64, width: f64 },
    #[error("crosswalk fraction must lie strictly inside (0, 1), got {0}")]
    BadCrosswalk(f64),
    #[error("obstacle on road {p}-{q}: {reason}")]
    BadObstacle { p: usize, q: usize, reason: String },
    #[error("no road joins targets {p} and {q}")]
    NoSuchRoad { p: usize, q: usize },
    #[error("invalid task {0}")]
    InvalidTask(TaskKey),
    #[error("safety margin {margin} m does not leave room before the crosswalk ({available} m from origin)")]
    MarginTooLarge { margin: f64, available: f64 },
}

/// Placement of a road's mode-1 keep-out circle, relative to the road.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObstaclePlacement {
    /// Circle radius in metres.
    pub radius: f64,
    /// Position of the centre along the road, as a fraction of its length
    /// measured from the lower-numbered target.
    pub fraction: f64,
    /// Signed lateral offset of the centre from the road axis (positive to
    /// the left of the lower-to-higher direction).
    pub lateral: f64,
}

impl Default for ObstaclePlacement {
    fn default() -> Self {
        Self {
            radius: 1.5,
            fraction: 0.4,
            lateral: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutConfig {
    pub rows: usize,
    pub cols: usize,
    pub spacing: f64,
    pub road_width: f64,
    pub crosswalk_fraction: f64,
    pub obstacle: ObstaclePlacement,
    /// Per-road placements, keyed by the (unordered) pair of target ids.
    pub obstacle_overrides: Vec<((usize, usize), ObstaclePlacement)>,
    /// Distance kept between an agent and a crosswalk in use.
    pub crosswalk_margin: f64,
}

impl Default for LayoutConfig {
    fn default() -> Self {
        Self {
            rows: 3,
            cols: 3,
            spacing: 20.0,
            road_width: 4.0,
            crosswalk_fraction: 0.5,
            obstacle: ObstaclePlacement::default(),
            obstacle_overrides: Vec::new(),
            crosswalk_margin: 1.0,
        }
    }
}

/// Axis-aligned rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: Vector2<f64>,
    pub max: Vector2<f64>,
}

impl Rect {
    pub fn contains(&self, s: &Vector2<f64>, tol: f64) -> bool {
        s.x >= self.min.x - tol && s.x <= self.max.x + tol && s.y >= self.min.y - tol && s.y <= self.max.y + tol
    }

    pub fn translated(&self, shift: Vector2<f64>) -> Rect {
        Rect {
            min: self.min + shift,
            max: self.max + shift,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForbiddenCircle {
    pub center: Vector2<f64>,
    pub radius: f64,
}

impl ForbiddenCircle {
    /// True when `s` keeps at least `radius` from the centre.
    pub fn allows(&self, s: &Vector2<f64>, tol: f64) -> bool {
        (s - self.center).norm() >= self.radius - tol
    }
}

/// Undirected road between two adjacent targets; `origin < dest`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Road {
    pub origin: usize,
    pub dest: usize,
    pub corridor: Rect,
    /// Indexed by mode.
    pub forbidden_by_mode: Vec<Option<ForbiddenCircle>>,
    /// Crosswalk position as arc length from `origin`.
    pub crosswalk_coord: f64,
}

/// A directed traversal of one road in one mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TaskKey {
    pub p: usize,
    pub q: usize,
    pub m: usize,
}

impl TaskKey {
    pub const fn new(p: usize, q: usize, m: usize) -> Self {
        Self { p, q, m }
    }
}

impl fmt::Display for TaskKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}/m{}", self.p, self.q, self.m)
    }
}

/// Linear description of the part of a road before its crosswalk.
#[derive(Debug, Clone, PartialEq)]
pub struct BeforeObstacleRegion {
    pub corridor: Rect,
    /// `normal · s <= offset`, the cut across the road ahead of the crosswalk.
    pub cut: HalfPlane,
    pub circle: Option<ForbiddenCircle>,
}

impl BeforeObstacleRegion {
    /// Membership test; the cut itself is exclusive.
    pub fn contains(&self, s: &Vector2<f64>) -> bool {
        self.corridor.contains(s, 0.0)
            && self.cut.normal.dot(s) < self.cut.offset
            && self.circle.is_none_or(|c| c.allows(s, 0.0))
    }

    /// Inclusive test with tolerance, for checking solver output.
    pub fn contains_tol(&self, s: &Vector2<f64>, tol: f64) -> bool {
        self.corridor.contains(s, tol) && self.cut.contains(s, tol) && self.circle.is_none_or(|c| c.allows(s, tol))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub targets: Vec<AgentState>,
    pub roads: Vec<Road>,
    pub rows: usize,
    pub cols: usize,
    pub road_width: f64,
    pub spacing: f64,
    pub crosswalk_margin: f64,
}

impl Layout {
    pub fn build(cfg: &LayoutConfig) -> Result<Self, GeometryError> {
        if cfg.rows < 2 || cfg.cols < 2 {
            return Err(GeometryError::GridTooSmall {
                rows: cfg.rows,
                cols: cfg.cols,
            });
        }
        if !(cfg.road_width > 0.0 && cfg.spacing > cfg.road_width && cfg.spacing.is_finite()) {
            return Err(GeometryError::BadRoadDimensions {
                spacing: cfg.spacing,
                width: cfg.road_width,
            });
        }
        if !(cfg.crosswalk_fraction > 0.0 && cfg.crosswalk_fraction < 1.0) {
            return Err(GeometryError::BadCrosswalk(cfg.crosswalk_fraction));
        }
        let targets: Vec<AgentState> = (0..cfg.rows)
            .flat_map(|r| {
                (0..cfg.cols)
                    .map(move |c| AgentState::at_rest(Vector2::new(c as f64 * cfg.spacing, r as f64 * cfg.spacing)))
            })
            .collect();
        let half = 0.5 * cfg.road_width;
        let mut roads = Vec::new();
        for r in 0..cfg.rows {
            for c in 0..cfg.cols {
                let id = r * cfg.cols + c;
                let mut ends = Vec::with_capacity(2);
                if c + 1 < cfg.cols {
                    ends.push(id + 1);
                }
                if r + 1 < cfg.rows {
                    ends.push(id + cfg.cols);
                }
                for dest in ends {
                    let a = targets[id].position();
                    let b = targets[dest].position();
                    // the corridor also covers the intersection squares at both ends
                    let widen = Vector2::new(half, half);
                    let corridor = Rect {
                        min: a.inf(&b) - widen,
                        max: a.sup(&b) + widen,
                    };
                    let placement = cfg
                        .obstacle_overrides
                        .iter()
                        .find(|((u, v), _)| (*u, *v) == (id, dest) || (*v, *u) == (id, dest))
                        .map(|(_, pl)| *pl)
                        .unwrap_or(cfg.obstacle);
                    let circle = place_circle(id, dest, a, b, &corridor, &placement)?;
                    roads.push(Road {
                        origin: id,
                        dest,
                        corridor,
                        forbidden_by_mode: vec![None, Some(circle)],
                        crosswalk_coord: cfg.crosswalk_fraction * (b - a).norm(),
                    });
                }
            }
        }
        let layout = Layout {
            targets,
            roads,
            rows: cfg.rows,
            cols: cfg.cols,
            road_width: cfg.road_width,
            spacing: cfg.spacing,
            crosswalk_margin: cfg.crosswalk_margin,
        };
        Ok(layout)
    }

    pub fn modes(&self) -> usize {
        MODES
    }

    pub fn target(&self, id: usize) -> &AgentState {
        &self.targets[id]
    }

    /// All directed (task, mode) pairs, sorted.
    pub fn task_keys(&self) -> Vec<TaskKey> {
        let mut keys: Vec<TaskKey> = self
            .roads
            .iter()
            .flat_map(|r| {
                (0..MODES).flat_map(move |m| [TaskKey::new(r.origin, r.dest, m), TaskKey::new(r.dest, r.origin, m)])
            })
            .collect();
        keys.sort();
        keys
    }

    /// Targets joined to `p` by a road.
    pub fn neighbors(&self, p: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .roads
            .iter()
            .filter_map(|r| {
                if r.origin == p {
                    Some(r.dest)
                } else if r.dest == p {
                    Some(r.origin)
                } else {
                    None
                }
            })
            .collect();
        out.sort_unstable();
        out
    }

    pub fn road_between(&self, p: usize, q: usize) -> Result<&Road, GeometryError> {
        self.roads
            .iter()
            .find(|r| (r.origin, r.dest) == (p, q) || (r.origin, r.dest) == (q, p))
            .ok_or(GeometryError::NoSuchRoad { p, q })
    }

    pub fn validate_key(&self, key: &TaskKey) -> Result<&Road, GeometryError> {
        if key.p == key.q || key.m >= MODES || key.p >= self.targets.len() || key.q >= self.targets.len() {
            return Err(GeometryError::InvalidTask(*key));
        }
        self.road_between(key.p, key.q)
            .map_err(|_| GeometryError::InvalidTask(*key))
    }

    /// Keep-out circle active for the task, if any.
    pub fn circle(&self, key: &TaskKey) -> Option<ForbiddenCircle> {
        self.validate_key(key).ok().and_then(|r| r.forbidden_by_mode[key.m])
    }

    pub fn corridor(&self, key: &TaskKey) -> Result<Rect, GeometryError> {
        Ok(self.validate_key(key)?.corridor)
    }

    /// Unit vector along the direction of travel.
    pub fn direction(&self, key: &TaskKey) -> Vector2<f64> {
        (self.targets[key.q].position() - self.targets[key.p].position()).normalize()
    }

    /// Arc length of `s` along the direction of travel, from the origin.
    pub fn along_road(&self, key: &TaskKey, s: &Vector2<f64>) -> f64 {
        self.direction(key).dot(&(s - self.targets[key.p].position()))
    }

    /// Crosswalk arc length measured from the task origin.
    pub fn crosswalk_along(&self, key: &TaskKey) -> Result<f64, GeometryError> {
        let road = self.validate_key(key)?;
        let length = (self.targets[road.dest].position() - self.targets[road.origin].position()).norm();
        Ok(if key.p == road.origin {
            road.crosswalk_coord
        } else {
            length - road.crosswalk_coord
        })
    }

    /// Position constraint of the task: inside the corridor and outside
    /// the keep-out circle of the task's mode.
    pub fn admissible_position(&self, key: &TaskKey, s: &Vector2<f64>) -> bool {
        self.admissible_position_tol(key, s, 0.0)
    }

    pub fn admissible_position_tol(&self, key: &TaskKey, s: &Vector2<f64>, tol: f64) -> bool {
        match self.validate_key(key) {
            Ok(road) => {
                road.corridor.contains(s, tol) && road.forbidden_by_mode[key.m].is_none_or(|c| c.allows(s, tol))
            }
            Err(_) => false,
        }
    }

    /// The part of the road strictly before the crosswalk, less the
    /// layout's safety margin.
    pub fn before_obstacle_region(&self, key: &TaskKey) -> Result<BeforeObstacleRegion, GeometryError> {
        let crosswalk = self.crosswalk_along(key)?;
        self.before_obstacle_region_at(key, crosswalk)
    }

    pub fn before_obstacle_region_at(
        &self,
        key: &TaskKey,
        crosswalk_coord: f64,
    ) -> Result<BeforeObstacleRegion, GeometryError> {
        let road = self.validate_key(key)?;
        if self.crosswalk_margin >= crosswalk_coord {
            return Err(GeometryError::MarginTooLarge {
                margin: self.crosswalk_margin,
                available: crosswalk_coord,
            });
        }
        let d = self.direction(key);
        let origin = self.targets[key.p].position();
        Ok(BeforeObstacleRegion {
            corridor: road.corridor,
            cut: HalfPlane {
                normal: d,
                offset: crosswalk_coord - self.crosswalk_margin + d.dot(&origin),
            },
            circle: road.forbidden_by_mode[key.m],
        })
    }

    /// Shift that carries task `from` onto task `to` when their roads are
    /// translates of one another travelled in the same direction.
    pub fn task_shift(&self, from: &TaskKey, to: &TaskKey) -> Option<Vector2<f64>> {
        let a = self.validate_key(from).ok()?;
        let b = self.validate_key(to).ok()?;
        let shift = self.targets[to.p].position() - self.targets[from.p].position();
        let da = self.targets[from.q].position() - self.targets[from.p].position();
        let db = self.targets[to.q].position() - self.targets[to.p].position();
        if (da - db).norm() > 1e-9 {
            return None;
        }
        let moved = a.corridor.translated(shift);
        ((moved.min - b.corridor.min).norm() <= 1e-9 && (moved.max - b.corridor.max).norm() <= 1e-9).then_some(shift)
    }

    /// Stable fingerprint of the layout (FNV-1a over its JSON form).
    pub fn fingerprint(&self) -> String {
        let text = serde_json::to_string(self).expect("layout serializes");
        let mut hash: u64 = 0xcbf29ce484222325;
        for byte in text.bytes() {
            hash ^= u64::from(byte);
            hash = hash.wrapping_mul(0x100000001b3);
        }
        format!("{hash:016x}")
    }
}

/// Shift carrying road `a` onto road `b` (both in their origin→dest
/// direction) if `b`'s corridor is an exact translate of `a`'s.
pub fn parallel_shift(layout: &Layout, a: &Road, b: &Road) -> Option<Vector2<f64>> {
    layout.task_shift(&TaskKey::new(a.origin, a.dest, 0), &TaskKey::new(b.origin, b.dest, 0))
}

/// Position part of a state.
pub fn project_position(x: &AgentState) -> Vector2<f64> {
    x.position()
}

fn cross(o: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    (a - o).perp(&(b - o))
}

/// Convex hull in counter-clockwise order, without collinear vertices.
pub fn convex_hull(points: &[Vector2<f64>]) -> Vec<Vector2<f64>> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Vector2<f64>> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Vector2<f64>>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for p in iter {
            while hull.len() >= start + 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(*p);
        }
        hull.pop();
    }
    hull
}

fn segment_distance(a: &Vector2<f64>, b: &Vector2<f64>, s: &Vector2<f64>) -> f64 {
    let d = b - a;
    let len2 = d.norm_squared();
    let t = if len2 > 0.0 {
        ((s - a).dot(&d) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (a + d * t - s).norm()
}

/// Euclidean distance from `s` to the convex hull of `points`; infinite
/// for an empty set.
pub fn hull_distance(points: &[Vector2<f64>], s: &Vector2<f64>) -> f64 {
    let hull = convex_hull(points);
    match hull.len() {
        0 => f64::INFINITY,
        1 => (hull[0] - s).norm(),
        2 => segment_distance(&hull[0], &hull[1], s),
        k => {
            let edges = (0..k).map(|i| (hull[i], hull[(i + 1) % k]));
            if edges.clone().all(|(a, b)| cross(&a, &b, s) >= 0.0) {
                return 0.0;
            }
            edges
                .map(|(a, b)| segment_distance(&a, &b, s))
                .fold(f64::INFINITY, f64::min)
        }
    }
}

fn place_circle(
    p: usize,
    q: usize,
    a: Vector2<f64>,
    b: Vector2<f64>,
    corridor: &Rect,
    placement: &ObstaclePlacement,
) -> Result<ForbiddenCircle, GeometryError> {
    let bad = |reason: &str| GeometryError::BadObstacle {
        p,
        q,
        reason: reason.to_string(),
    };
    if !(placement.radius > 0.0 && placement.radius.is_finite()) {
        return Err(bad("radius must be positive"));
    }
    if !(placement.fraction > 0.0 && placement.fraction < 1.0) {
        return Err(bad("fraction must lie strictly inside (0, 1)"));
    }
    let dir = (b - a).normalize();
    let left = Vector2::new(-dir.y, dir.x);
    let center = a + (b - a) * placement.fraction + left * placement.lateral;
    let circle = ForbiddenCircle {
        center,
        radius: placement.radius,
    };
    if !circle.allows(&a, -1e-9) || !circle.allows(&b, -1e-9) {
        return Err(bad("circle covers a target"));
    }
    let nearest = Vector2::new(
        center.x.clamp(corridor.min.x, corridor.max.x),
        center.y.clamp(corridor.min.y, corridor.max.y),
    );
    if (nearest - center).norm() >= placement.radius {
        return Err(bad("circle does not reach the corridor"));
    }
    Ok(circle)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_layout() -> Layout {
        Layout::build(&LayoutConfig::default()).unwrap()
    }

    #[test]
    fn counts_for_default_and_small_grids() {
        let layout = default_layout();
        assert_eq!(layout.targets.len(), 9);
        assert_eq!(layout.roads.len(), 12);
        assert_eq!(layout.task_keys().len(), 48);
        let small = Layout::build(&LayoutConfig {
            rows: 2,
            cols: 2,
            ..LayoutConfig::default()
        })
        .unwrap();
        assert_eq!(small.roads.len(), 4);
        assert_eq!(small.task_keys().len(), 16);
        assert_eq!(small.task_keys().len(), 2 * small.roads.len() * small.modes());
    }

    #[test]
    fn degenerate_geometry_is_rejected() {
        let cfg = LayoutConfig {
            rows: 1,
            ..LayoutConfig::default()
        };
        assert!(matches!(Layout::build(&cfg), Err(GeometryError::GridTooSmall { .. })));
        let cfg = LayoutConfig {
            road_width: 25.0,
            ..LayoutConfig::default()
        };
        assert!(matches!(
            Layout::build(&cfg),
            Err(GeometryError::BadRoadDimensions { .. })
        ));
        let cfg = LayoutConfig {
            obstacle: ObstaclePlacement {
                radius: 9.0,
                ..ObstaclePlacement::default()
            },
            ..LayoutConfig::default()
        };
        assert!(matches!(Layout::build(&cfg), Err(GeometryError::BadObstacle { .. })));
    }

    #[test]
    fn corridors_contain_endpoints_and_targets_are_distinct() {
        let layout = default_layout();
        for road in &layout.roads {
            assert!(road.corridor.contains(&layout.targets[road.origin].position(), 0.0));
            assert!(road.corridor.contains(&layout.targets[road.dest].position(), 0.0));
            assert_ne!(road.origin, road.dest);
            assert!(road.crosswalk_coord > 0.0 && road.crosswalk_coord < layout.spacing);
        }
        for (i, a) in layout.targets.iter().enumerate() {
            for b in &layout.targets[i + 1..] {
                assert!((a.position() - b.position()).norm() > 1.0);
            }
        }
        let road = layout.road_between(1, 2).unwrap();
        assert!(road.corridor.contains(&Vector2::new(20.0, 0.0), 0.0));
        assert!(road.corridor.contains(&Vector2::new(40.0, 0.0), 0.0));
    }

    #[test]
    fn admissible_position_examples() {
        let layout = default_layout();
        for key in layout.task_keys() {
            assert!(layout.admissible_position(&key, &layout.targets[key.p].position()));
            assert!(layout.admissible_position(&key, &layout.targets[key.q].position()));
        }
        let key = TaskKey::new(0, 1, 1);
        let c = layout.circle(&key).unwrap();
        assert!(!layout.admissible_position(&key, &c.center));
        assert!(layout.admissible_position(&TaskKey::new(0, 1, 0), &c.center));
        assert!(!layout.admissible_position(&key, &Vector2::new(10.0, 5.0)));
    }

    #[test]
    fn before_obstacle_region_examples() {
        let layout = default_layout();
        for key in [TaskKey::new(0, 1, 0), TaskKey::new(1, 0, 1), TaskKey::new(4, 7, 1)] {
            let region = layout.before_obstacle_region(&key).unwrap();
            assert!(region.contains(&layout.targets[key.p].position()));
            assert!(!region.contains(&layout.targets[key.q].position()));
            let cross = layout.crosswalk_along(&key).unwrap();
            let at_cut = layout.targets[key.p].position() + layout.direction(&key) * (cross - layout.crosswalk_margin);
            assert!(!region.contains(&at_cut));
        }
        let mut tight = default_layout();
        tight.crosswalk_margin = 10.0;
        assert!(matches!(
            tight.before_obstacle_region(&TaskKey::new(0, 1, 0)),
            Err(GeometryError::MarginTooLarge { .. })
        ));
    }

    #[test]
    fn parallel_shift_examples() {
        let layout = default_layout();
        let r01 = layout.road_between(0, 1).unwrap();
        let r34 = layout.road_between(3, 4).unwrap();
        let r03 = layout.road_between(0, 3).unwrap();
        assert_eq!(parallel_shift(&layout, r01, r34), Some(Vector2::new(0.0, 20.0)));
        assert_eq!(parallel_shift(&layout, r01, r03), None);
        assert_eq!(parallel_shift(&layout, r01, r01), Some(Vector2::zeros()));
        // reversed direction is not a translate
        assert_eq!(layout.task_shift(&TaskKey::new(0, 1, 0), &TaskKey::new(4, 3, 0)), None);
    }

    #[test]
    fn shifted_corridor_points_stay_in_target_corridor() {
        use rand::{Rng, SeedableRng};
        let layout = default_layout();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for a in &layout.roads {
            for b in &layout.roads {
                let Some(shift) = parallel_shift(&layout, a, b) else {
                    continue;
                };
                for _ in 0..1000 {
                    let s = Vector2::new(
                        rng.gen_range(a.corridor.min.x..=a.corridor.max.x),
                        rng.gen_range(a.corridor.min.y..=a.corridor.max.y),
                    );
                    assert!(b.corridor.contains(&(s + shift), 1e-9));
                }
            }
        }
    }

    #[test]
    fn project_position_examples() {
        assert_eq!(
            project_position(&AgentState::new(1.0, 2.0, 3.0, 4.0)),
            Vector2::new(1.0, 2.0)
        );
        assert_eq!(project_position(&AgentState::default()), Vector2::zeros());
        let layout = default_layout();
        assert_eq!(project_position(&layout.targets[4]), Vector2::new(20.0, 20.0));
    }

    #[test]
    fn fingerprint_is_stable_and_sensitive() {
        let a = default_layout();
        assert_eq!(a.fingerprint(), default_layout().fingerprint());
        let b = Layout::build(&LayoutConfig {
            spacing: 25.0,
            ..LayoutConfig::default()
        })
        .unwrap();
        assert_ne!(a.fingerprint(), b.fingerprint());
    }

    /// Distance to the hull by brute force: zero inside any triangle of
    /// input points, otherwise the nearest segment between two of them.
    fn brute_hull_distance(points: &[Vector2<f64>], s: &Vector2<f64>) -> f64 {
        let n = points.len();
        for i in 0..n {
            for j in i + 1..n {
                for k in j + 1..n {
                    let (a, b, c) = (points[i], points[j], points[k]);
                    let signs = [cross(&a, &b, s), cross(&b, &c, s), cross(&c, &a, s)];
                    let area = cross(&a, &b, &c);
                    if area != 0.0 && signs.iter().all(|v| v * area >= 0.0) {
                        return 0.0;
                    }
                }
            }
        }
        let mut best = points.iter().map(|p| (p - s).norm()).fold(f64::INFINITY, f64::min);
        for i in 0..n {
            for j in i + 1..n {
                best = best.min(segment_distance(&points[i], &points[j], s));
            }
        }
        best
    }

    #[test]
    fn hull_distance_examples() {
        let square = [
            Vector2::new(0.0, 0.0),
            Vector2::new(2.0, 0.0),
            Vector2::new(2.0, 2.0),
            Vector2::new(0.0, 2.0),
            Vector2::new(1.0, 1.0),
        ];
        assert_eq!(convex_hull(&square).len(), 4);
        assert_eq!(hull_distance(&square, &Vector2::new(1.5, 0.5)), 0.0);
        assert_eq!(hull_distance(&square, &Vector2::new(3.0, 1.0)), 1.0);
        assert!((hull_distance(&square, &Vector2::new(3.0, 3.0)) - 2f64.sqrt()).abs() < 1e-15);
        // collinear points form a segment
        let line = [
            Vector2::new(20.0, 40.0),
            Vector2::new(30.0, 40.0),
            Vector2::new(40.0, 40.0),
        ];
        assert_eq!(convex_hull(&line).len(), 2);
        assert!(hull_distance(&line, &Vector2::new(27.8, 40.000000000000014)) < 1e-13);
        assert_eq!(hull_distance(&line, &Vector2::new(45.0, 40.0)), 5.0);
        assert_eq!(hull_distance(&line[..1], &Vector2::new(20.0, 43.0)), 3.0);
        assert_eq!(hull_distance(&[], &Vector2::zeros()), f64::INFINITY);
    }

    proptest::proptest! {
        #[test]
        fn hull_distance_matches_brute_force(
            raw in proptest::collection::vec((-5i32..5, -5i32..5), 1..8),
            sx in -7i32..7,
            sy in -7i32..7,
        ) {
            let points: Vec<Vector2<f64>> = raw.iter().map(|(x, y)| Vector2::new(*x as f64, *y as f64)).collect();
            let s = Vector2::new(sx as f64 * 0.75, sy as f64 * 0.75);
            let d = hull_distance(&points, &s);
            proptest::prop_assert!((d - brute_hull_distance(&points, &s)).abs() <= 1e-12);
            for p in &points {
                proptest::prop_assert!(hull_distance(&points, p) <= 1e-12);
            }
        }
    }
}
