//! Supervised samples from trajectories: fixed-length history and future
//! windows in an ego-centric frame, neighbor selection, and occupancy grids
//! of heterogeneous agent features.

mod records;
mod samples;

use std::collections::HashMap;
use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

pub use records::{
    format_class_sidecar, format_trajectory_records, parse_trajectory_file, parse_trajectory_text,
    read_class_sidecar, records_from_trajectories, trajectories_from_records, write_class_sidecar,
    write_trajectory_file, TrajectoryRecord,
};
pub use samples::{read_samples, write_samples, SampleSet, SAMPLE_FORMAT_VERSION};

use crate::agent::{AgentClass, AgentSize, ClassTable};
use crate::error::{Error, Result};
use crate::state::Trajectory;
use crate::vec2::{Vec2, WorldPoint};

/// Length of the per-agent feature vector: class one-hot, length, width,
/// speed, heading rate.
pub const FEATURE_LEN: usize = AgentClass::COUNT + 4;

/// Speed below which a heading is considered undefined.
pub const MIN_HEADING_SPEED: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    /// Cell extent `(longitudinal, lateral)` in meters.
    pub cell: (f64, f64),
    pub features: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            rows: 13,
            cols: 3,
            cell: (2.0, 4.0),
            features: FEATURE_LEN,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.rows < 1 || self.cols < 1 {
            return Err(Error::InvalidArgument("grid needs at least one row and column".into()));
        }
        if !(self.cell.0 > 0.0 && self.cell.1 > 0.0) {
            return Err(Error::InvalidArgument("grid cells must have positive extent".into()));
        }
        if self.features < 1 {
            return Err(Error::InvalidArgument("grid needs at least one feature".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols * self.features
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cell containing an ego-frame position. Row grows with x (ahead),
    /// column with y (left); the ego sits at the grid center.
    pub fn cell_of(&self, p: Vec2) -> Option<(usize, usize)> {
        let r = (p.x / self.cell.0 + self.rows as f64 / 2.0).floor();
        let c = (p.y / self.cell.1 + self.cols as f64 / 2.0).floor();
        if r >= 0.0 && c >= 0.0 && r < self.rows as f64 && c < self.cols as f64 {
            Some((r as usize, c as usize))
        } else {
            None
        }
    }

    /// Ego-frame center of a cell.
    pub fn cell_center(&self, r: usize, c: usize) -> Vec2 {
        Vec2::new(
            (r as f64 + 0.5 - self.rows as f64 / 2.0) * self.cell.0,
            (c as f64 + 0.5 - self.cols as f64 / 2.0) * self.cell.1,
        )
    }
}

/// Dense `rows × cols × features` tensor, row-major with features innermost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub rows: usize,
    pub cols: usize,
    pub features: usize,
    pub data: Vec<f64>,
}

impl Grid {
    pub fn zeros(spec: &GridSpec) -> Self {
        Grid {
            rows: spec.rows,
            cols: spec.cols,
            features: spec.features,
            data: vec![0.0; spec.len()],
        }
    }

    pub fn cell(&self, r: usize, c: usize) -> &[f64] {
        let at = (r * self.cols + c) * self.features;
        &self.data[at..at + self.features]
    }

    fn cell_mut(&mut self, r: usize, c: usize) -> &mut [f64] {
        let at = (r * self.cols + c) * self.features;
        &mut self.data[at..at + self.features]
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// `[one-hot class, length, width, speed, heading rate]`. The rate is the
/// wrapped change between the two velocity headings divided by `dt`, and 0
/// when either heading is undefined.
pub fn heterogeneous_features(class: AgentClass, size: AgentSize, velocity: Vec2, prev_velocity: Vec2, dt: f64) -> Vec<f64> {
    let mut f = vec![0.0; FEATURE_LEN];
    f[class.index()] = 1.0;
    f[AgentClass::COUNT] = size.length;
    f[AgentClass::COUNT + 1] = size.width;
    f[AgentClass::COUNT + 2] = velocity.norm();
    f[AgentClass::COUNT + 3] = if velocity.norm() >= MIN_HEADING_SPEED && prev_velocity.norm() >= MIN_HEADING_SPEED && dt > 0.0 {
        wrap_angle(velocity.angle() - prev_velocity.angle()) / dt
    } else {
        0.0
    };
    f
}

/// Wraps an angle to `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    if w > PI {
        w - TAU
    } else {
        w
    }
}

/// Position and motion of one agent at the anchor frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentContext {
    pub id: u64,
    pub class: AgentClass,
    pub position: WorldPoint,
    pub velocity: Vec2,
    pub prev_velocity: Vec2,
    pub heading: f64,
}

/// Agents within `range` of the ego and within `±fov/2` of its heading.
pub fn horizon_neighbors<'a>(all: &'a [AgentContext], ego: &AgentContext, fov: f64, range: f64) -> Vec<&'a AgentContext> {
    let full = fov >= TAU - 1e-12;
    all.iter()
        .filter(|a| a.id != ego.id)
        .filter(|a| {
            let d = a.position - ego.position;
            if d.norm() > range {
                return false;
            }
            full || wrap_angle(d.angle() - ego.heading).abs() <= fov / 2.0
        })
        .collect()
}

/// Sums each item's feature vector into the cell containing its ego-frame
/// position; items outside the grid are dropped.
pub fn occupancy_grid<'a>(items: impl IntoIterator<Item = (Vec2, &'a [f64])>, spec: &GridSpec) -> Result<Grid> {
    let mut g = Grid::zeros(spec);
    for (p, f) in items {
        if f.len() != spec.features {
            return Err(Error::ShapeMismatch(format!(
                "feature vector of length {} for a grid with {} features",
                f.len(),
                spec.features
            )));
        }
        if let Some((r, c)) = spec.cell_of(p) {
            for (acc, v) in g.cell_mut(r, c).iter_mut().zip(f) {
                *acc += v;
            }
        }
    }
    Ok(g)
}

/// Neighbor state at the anchor frame, in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeighborState {
    pub id: u64,
    pub class: AgentClass,
    pub position: WorldPoint,
    pub velocity: Vec2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub sample_id: u64,
    pub ego_id: u64,
    pub ego_class: AgentClass,
    pub anchor_frame: i64,
    /// Last history point, world frame.
    pub anchor: WorldPoint,
    /// Radians; the ego frame's +x axis in world coordinates.
    pub heading: f64,
    /// Smoothed anchor velocity, world frame.
    pub ego_velocity: Vec2,
    /// Ego-frame positions, oldest first; the last entry is the origin.
    pub history: Vec<Vec2>,
    /// Ego-frame positions of the frames after the anchor.
    pub future: Vec<Vec2>,
    pub horizon_grid: Grid,
    pub neighbor_grid: Grid,
    pub neighbors: Vec<NeighborState>,
}

impl Sample {
    pub fn to_world(&self, p: Vec2) -> WorldPoint {
        self.anchor + p.rotate(self.heading)
    }

    pub fn to_local(&self, p: WorldPoint) -> Vec2 {
        (p - self.anchor).rotate(-self.heading)
    }

    pub fn history_world(&self) -> Vec<WorldPoint> {
        self.history.iter().map(|&p| self.to_world(p)).collect()
    }

    pub fn future_world(&self) -> Vec<WorldPoint> {
        self.future.iter().map(|&p| self.to_world(p)).collect()
    }

    pub fn validate(&self, cfg: &WindowConfig) -> Result<()> {
        if self.history.len() != cfg.history_len() || self.future.len() != cfg.future_len() {
            return Err(Error::ShapeMismatch(format!(
                "sample {} has {}/{} history/future points, expected {}/{}",
                self.sample_id,
                self.history.len(),
                self.future.len(),
                cfg.history_len(),
                cfg.future_len()
            )));
        }
        for (g, spec) in [(&self.horizon_grid, &cfg.horizon_grid), (&self.neighbor_grid, &cfg.neighbor_grid)] {
            if (g.rows, g.cols, g.features) != (spec.rows, spec.cols, spec.features) || g.data.len() != spec.len() {
                return Err(Error::ShapeMismatch(format!("sample {} grid shape mismatch", self.sample_id)));
            }
            if g.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!("sample {} grid not finite", self.sample_id)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowConfig {
    /// Seconds of history.
    pub history_s: f64,
    /// Seconds of future.
    pub future_s: f64,
    pub fps: f64,
    /// Frames between consecutive anchors of one agent.
    pub stride: usize,
    /// Seconds of displacement used for the heading and smoothed velocities.
    pub heading_window_s: f64,
    pub horizon_grid: GridSpec,
    pub horizon_fov: f64,
    pub horizon_range: f64,
    pub neighbor_grid: GridSpec,
    pub neighbor_fov: f64,
    pub neighbor_range: f64,
    /// Neighbors within this distance are kept for simulation baselines.
    pub context_range: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            history_s: 3.0,
            future_s: 5.0,
            fps: crate::state::DEFAULT_FPS,
            stride: 5,
            heading_window_s: 0.5,
            horizon_grid: GridSpec::default(),
            horizon_fov: PI,
            horizon_range: 30.0,
            neighbor_grid: GridSpec::default(),
            neighbor_fov: TAU,
            neighbor_range: 15.0,
            context_range: 50.0,
        }
    }
}

impl WindowConfig {
    pub fn history_len(&self) -> usize {
        (self.history_s * self.fps).round() as usize
    }

    pub fn future_len(&self) -> usize {
        (self.future_s * self.fps).round() as usize
    }

    fn heading_window(&self) -> usize {
        ((self.heading_window_s * self.fps).round() as usize).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.history_s > 0.0) {
            return Err(Error::config("dataset.history_s", "must be positive"));
        }
        if !(self.future_s > 0.0) {
            return Err(Error::config("dataset.future_s", "must be positive"));
        }
        if !(self.fps > 0.0) {
            return Err(Error::config("dataset.fps", "must be positive"));
        }
        if self.history_len() < 2 {
            return Err(Error::config("dataset.history_s", "must cover at least two frames"));
        }
        if self.future_len() < 1 {
            return Err(Error::config("dataset.future_s", "must cover at least one frame"));
        }
        if self.stride < 1 {
            return Err(Error::config("dataset.stride", "must be at least 1"));
        }
        if !(self.heading_window_s > 0.0) {
            return Err(Error::config("dataset.heading_window_s", "must be positive"));
        }
        for (key, fov) in [("dataset.horizon_fov", self.horizon_fov), ("dataset.neighbor_fov", self.neighbor_fov)] {
            if !(fov > 0.0 && fov <= TAU + 1e-12) {
                return Err(Error::config(key, "must lie in (0, 2π]"));
            }
        }
        for (key, r) in [
            ("dataset.horizon_range", self.horizon_range),
            ("dataset.neighbor_range", self.neighbor_range),
            ("dataset.context_range", self.context_range),
        ] {
            if !(r > 0.0) {
                return Err(Error::config(key, "must be positive"));
            }
        }
        self.horizon_grid.validate()?;
        self.neighbor_grid.validate()?;
        for g in [&self.horizon_grid, &self.neighbor_grid] {
            if g.features != FEATURE_LEN {
                return Err(Error::config(
                    "dataset.grid_features",
                    format!("agent features have length {FEATURE_LEN}"),
                ));
            }
        }
        Ok(())
    }
}

/// Mean velocity over the `window` frames ending at index `i`, shortened
/// at the start of the trajectory.
fn smoothed_velocity(points: &[(i64, WorldPoint)], i: usize, window: usize, fps: f64) -> Vec2 {
    let n = window.min(i);
    if n == 0 {
        return Vec2::ZERO;
    }
    let (f0, p0) = points[i - n];
    let (f1, p1) = points[i];
    (p1 - p0) * (fps / (f1 - f0) as f64)
}

fn context_at(t: &Trajectory, i: usize, window: usize, fps: f64) -> AgentContext {
    let points = t.points();
    let velocity = smoothed_velocity(points, i, window, fps);
    let prev_velocity = if i > 0 {
        smoothed_velocity(points, i - 1, window, fps)
    } else {
        velocity
    };
    AgentContext {
        id: t.agent_id,
        class: t.class,
        position: points[i].1,
        velocity,
        prev_velocity,
        heading: if velocity.norm() > 0.0 { velocity.angle() } else { 0.0 },
    }
}

/// Index ranges of maximal runs of consecutive frame ids.
fn consecutive_runs(points: &[(i64, WorldPoint)]) -> Vec<std::ops::Range<usize>> {
    let mut runs = Vec::new();
    let mut start = 0;
    for i in 1..=points.len() {
        if i == points.len() || points[i].0 != points[i - 1].0 + 1 {
            runs.push(start..i);
            start = i;
        }
    }
    runs
}

/// Cuts every agent's trajectory into samples. An anchor frame qualifies
/// when the agent is observed on every frame of its history and future
/// windows. Sample ids are assigned sequentially from `first_id`.
pub fn window_samples(trajs: &[Trajectory], classes: &ClassTable, cfg: &WindowConfig, first_id: u64) -> Result<Vec<Sample>> {
    cfg.validate()?;
    let hist = cfg.history_len();
    let fut = cfg.future_len();
    let window = cfg.heading_window();
    let dt = 1.0 / cfg.fps;

    let mut present: HashMap<i64, Vec<(usize, usize)>> = HashMap::new();
    for (ti, t) in trajs.iter().enumerate() {
        for (pi, &(f, _)) in t.points().iter().enumerate() {
            present.entry(f).or_default().push((ti, pi));
        }
    }

    let mut out = Vec::new();
    let mut next_id = first_id;
    for t in trajs {
        let points = t.points();
        for run in consecutive_runs(points) {
            if run.len() < hist + fut {
                continue;
            }
            let mut i = run.start + hist - 1;
            while i + fut < run.end {
                let (frame, anchor) = points[i];
                // Heading from the displacement over the last window of history.
                let back = window.min(hist - 1);
                let disp = anchor - points[i - back].1;
                let heading = if disp.norm() > 1e-9 { disp.angle() } else { 0.0 };
                let ego = AgentContext {
                    heading,
                    ..context_at(t, i, window, cfg.fps)
                };
                let local = |p: WorldPoint| (p - anchor).rotate(-heading);

                let others: Vec<AgentContext> = present
                    .get(&frame)
                    .map(|v| {
                        v.iter()
                            .filter(|&&(ti, _)| trajs[ti].agent_id != t.agent_id)
                            .map(|&(ti, pi)| context_at(&trajs[ti], pi, window, cfg.fps))
                            .collect()
                    })
                    .unwrap_or_default();

                let grid_for = |fov: f64, range: f64, spec: &GridSpec| -> Result<Grid> {
                    let sel = horizon_neighbors(&others, &ego, fov, range);
                    let feats: Vec<(Vec2, Vec<f64>)> = sel
                        .iter()
                        .map(|a| {
                            let f = heterogeneous_features(a.class, classes.size(a.class), a.velocity, a.prev_velocity, dt);
                            (local(a.position), f)
                        })
                        .collect();
                    occupancy_grid(feats.iter().map(|(p, f)| (*p, f.as_slice())), spec)
                };
                let horizon_grid = grid_for(cfg.horizon_fov, cfg.horizon_range, &cfg.horizon_grid)?;
                let neighbor_grid = grid_for(cfg.neighbor_fov, cfg.neighbor_range, &cfg.neighbor_grid)?;

                let mut neighbors: Vec<NeighborState> = others
                    .iter()
                    .filter(|a| a.position.distance(anchor) <= cfg.context_range)
                    .map(|a| NeighborState {
                        id: a.id,
                        class: a.class,
                        position: a.position,
                        velocity: a.velocity,
                    })
                    .collect();
                neighbors.sort_by_key(|n| n.id);

                out.push(Sample {
                    sample_id: next_id,
                    ego_id: t.agent_id,
                    ego_class: t.class,
                    anchor_frame: frame,
                    anchor,
                    heading,
                    ego_velocity: ego.velocity,
                    history: points[i + 1 - hist..=i].iter().map(|&(_, p)| local(p)).collect(),
                    future: points[i + 1..=i + fut].iter().map(|&(_, p)| local(p)).collect(),
                    horizon_grid,
                    neighbor_grid,
                    neighbors,
                });
                next_id += 1;
                i += cfg.stride;
            }
        }
    }
    Ok(out)
}
