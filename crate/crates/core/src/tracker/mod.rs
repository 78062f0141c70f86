//! Tracking by detection: ORCA motion prediction, gated minimum-cost
//! association, track lifecycle, and trajectory export.

mod assign;
mod detection;
mod identity;

use std::collections::BTreeMap;
use std::path::Path;

pub use assign::{assign, Assignment};
pub use identity::{identity_correspondence, IdentityReport};
pub use detection::{
    detection_center_world, format_detections, masked_representation, parse_detections, read_detections,
    write_detections, BBox, Detection, Mask, SegmentedPatch,
};

use crate::agent::{AgentClass, ClassTable};
use crate::dataset::{write_trajectory_file, TrajectoryRecord};
use crate::error::{Error, Result};
use crate::geometry::{project_to_pixel, Homography};
use crate::orca::{predict_next_state, AgentDisc, MotionPrior, SimParams};
use crate::state::Trajectory;
use crate::vec2::{Vec2, WorldPoint};

/// Cost assigned to gated (track, detection) pairs.
pub const GATED: f64 = f64::INFINITY;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackStatus {
    Tentative,
    Confirmed,
    Deleted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: u64,
    pub class: AgentClass,
    pub position: WorldPoint,
    pub velocity: Vec2,
    pub last_bbox: BBox,
    pub status: TrackStatus,
    pub hits: u32,
    /// Consecutive matched frames; confirmation counts these.
    pub streak: u32,
    pub age: u32,
    pub time_since_update: u32,
    /// Matched positions, plus predicted positions for frames without a
    /// match (the last `time_since_update` entries are such predictions).
    pub history: Trajectory,
    pub appearance: Option<Vec<f64>>,
    /// Whether the track has ever reached `Confirmed`.
    pub was_confirmed: bool,
    predicted_position: WorldPoint,
    predicted_velocity: Vec2,
    predicted_bbox: BBox,
}

impl Track {
    pub fn is_live(&self) -> bool {
        self.status != TrackStatus::Deleted
    }

    pub fn predicted_position(&self) -> WorldPoint {
        self.predicted_position
    }

    pub fn predicted_bbox(&self) -> BBox {
        self.predicted_bbox
    }

    /// History up to the last matched frame.
    pub fn observed_history(&self) -> Trajectory {
        let last = self.history.last_frame() - i64::from(self.time_since_update);
        self.history
            .segment(self.history.first_frame(), last)
            .expect("first frame is always matched")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerConfig {
    pub confirm_hits: u32,
    pub max_misses: u32,
    /// Meters.
    pub gate_distance: f64,
    /// `(w_dist, w_iou, w_app)`.
    pub cost_weights: (f64, f64, f64),
    pub fps: f64,
    pub homography: Homography,
    /// Weight of the measurement in the position/velocity blend.
    pub alpha: f64,
    pub min_confidence: f64,
    pub time_horizon: f64,
    pub neighbor_radius: f64,
    /// Ratio of maximum to preferred speed for the motion prior.
    pub speed_cap_factor: f64,
    pub classes: ClassTable,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            confirm_hits: 3,
            max_misses: 5,
            gate_distance: 4.0,
            cost_weights: (0.6, 0.4, 0.0),
            fps: crate::state::DEFAULT_FPS,
            homography: Homography::identity(),
            alpha: 0.7,
            min_confidence: 0.5,
            time_horizon: crate::orca::DEFAULT_TIME_HORIZON,
            neighbor_radius: crate::orca::DEFAULT_NEIGHBOR_RADIUS,
            speed_cap_factor: 1.25,
            classes: ClassTable::default(),
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.confirm_hits < 1 {
            return Err(Error::config("tracker.confirm_hits", "must be at least 1"));
        }
        if self.max_misses < 1 {
            return Err(Error::config("tracker.max_misses", "must be at least 1"));
        }
        if !(self.gate_distance > 0.0) {
            return Err(Error::config("tracker.gate_distance", "must be positive"));
        }
        let (a, b, c) = self.cost_weights;
        if a < 0.0 || b < 0.0 || c < 0.0 || ((a + b + c) - 1.0).abs() > 1e-9 {
            return Err(Error::config(
                "tracker.w_dist",
                "cost weights must be non-negative and sum to 1",
            ));
        }
        if !(self.fps > 0.0) {
            return Err(Error::config("tracker.fps", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config("tracker.alpha", "must lie in [0, 1]"));
        }
        Ok(())
    }

    fn motion_prior(&self, class: AgentClass) -> MotionPrior {
        MotionPrior {
            radius: self.classes.size(class).disc_radius(),
            max_speed: self.classes.pref_speed(class) * self.speed_cap_factor,
            sim: SimParams {
                dt: 1.0 / self.fps,
                time_horizon: self.time_horizon,
                neighbor_radius: self.neighbor_radius,
            },
        }
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na > 0.0 && nb > 0.0 {
        dot / (na * nb)
    } else {
        0.0
    }
}

/// Cost matrix between the tracks' predicted states and the detections.
/// Pairs farther apart than the gate, or of different classes, get [`GATED`].
pub fn association_cost(tracks: &[&Track], dets: &[Detection], cfg: &TrackerConfig) -> Result<Vec<Vec<f64>>> {
    let centers = dets
        .iter()
        .map(|d| detection_center_world(d, &cfg.homography))
        .collect::<Result<Vec<_>>>()?;
    let (w_dist, w_iou, w_app) = cfg.cost_weights;
    Ok(tracks
        .iter()
        .map(|t| {
            dets.iter()
                .zip(&centers)
                .map(|(d, &c)| {
                    let dist = t.predicted_position.distance(c);
                    if t.class != d.class || dist > cfg.gate_distance {
                        return GATED;
                    }
                    let dist_term = dist / cfg.gate_distance;
                    let iou_term = 1.0 - t.predicted_bbox.iou(&d.bbox);
                    match (&t.appearance, &d.appearance) {
                        (Some(a), Some(b)) if w_app > 0.0 => {
                            w_dist * dist_term + w_iou * iou_term + w_app * (1.0 - cosine(a, b))
                        }
                        _ => {
                            let norm = w_dist + w_iou;
                            if norm > 0.0 {
                                (w_dist * dist_term + w_iou * iou_term) / norm
                            } else {
                                0.0
                            }
                        }
                    }
                })
                .collect()
        })
        .collect())
}

/// Stateful multi-object tracker. Frames must be fed in order, one call per
/// frame id, including frames without detections.
#[derive(Debug, Clone)]
pub struct Tracker {
    cfg: TrackerConfig,
    h_inv: Homography,
    tracks: Vec<Track>,
    finished: Vec<Track>,
    next_id: u64,
    last_frame: Option<i64>,
}

impl Tracker {
    pub fn new(cfg: TrackerConfig) -> Result<Self> {
        cfg.validate()?;
        let h_inv = cfg.homography.inverse();
        Ok(Tracker {
            cfg,
            h_inv,
            tracks: Vec::new(),
            finished: Vec::new(),
            next_id: 1,
            last_frame: None,
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    /// Tracks that are not deleted.
    pub fn live_tracks(&self) -> &[Track] {
        &self.tracks
    }

    /// Every track ever created, live or deleted, ordered by id.
    pub fn all_tracks(&self) -> Vec<&Track> {
        let mut all: Vec<&Track> = self.finished.iter().chain(&self.tracks).collect();
        all.sort_by_key(|t| t.id);
        all
    }

    pub fn expected_frame(&self) -> Option<i64> {
        self.last_frame.map(|f| f + 1)
    }

    fn predicted_bbox(&self, last: &BBox, position: WorldPoint) -> BBox {
        match project_to_pixel(&self.h_inv, position) {
            Ok(c) => BBox::centered(c, last.w, last.h),
            Err(_) => *last,
        }
    }

    fn predict(&mut self) {
        let neighbors: Vec<AgentDisc> = self
            .tracks
            .iter()
            .map(|t| {
                let prior = self.cfg.motion_prior(t.class);
                AgentDisc {
                    id: t.id,
                    position: t.position,
                    velocity: t.velocity,
                    radius: prior.radius,
                    pref_speed: t.velocity.norm(),
                    max_speed: prior.max_speed,
                    goal: t.position + t.velocity * prior.sim.time_horizon,
                }
            })
            .collect();
        let predictions: Vec<(WorldPoint, Vec2)> = self
            .tracks
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let others: Vec<AgentDisc> = neighbors
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, d)| *d)
                    .collect();
                predict_next_state(t.position, t.velocity, &others, &self.cfg.motion_prior(t.class))
            })
            .collect();
        for (i, (p, v)) in predictions.into_iter().enumerate() {
            let bbox = self.predicted_bbox(&self.tracks[i].last_bbox, p);
            let t = &mut self.tracks[i];
            t.predicted_position = p;
            t.predicted_velocity = v;
            t.predicted_bbox = bbox;
        }
    }

    /// Processes the detections of one frame.
    pub fn track_frame(&mut self, frame_id: i64, dets: &[Detection]) -> Result<()> {
        if let Some(expected) = self.expected_frame() {
            if frame_id != expected {
                return Err(Error::FrameOutOfOrder { expected, got: frame_id });
            }
        }
        if let Some(d) = dets.iter().find(|d| d.frame_id != frame_id) {
            return Err(Error::FrameOutOfOrder {
                expected: frame_id,
                got: d.frame_id,
            });
        }
        let dets: Vec<&Detection> = dets.iter().filter(|d| d.confidence >= self.cfg.min_confidence).collect();
        let centers = dets
            .iter()
            .map(|d| detection_center_world(d, &self.cfg.homography))
            .collect::<Result<Vec<_>>>()?;

        self.predict();

        let track_refs: Vec<&Track> = self.tracks.iter().collect();
        let owned: Vec<Detection> = dets.iter().map(|d| (*d).clone()).collect();
        let cost = association_cost(&track_refs, &owned, &self.cfg)?;
        let result = if track_refs.is_empty() {
            Assignment {
                unmatched_cols: (0..owned.len()).collect(),
                ..Assignment::default()
            }
        } else {
            assign(&cost, GATED)
        };

        let alpha = self.cfg.alpha;
        let fps = self.cfg.fps;
        for &(ti, di) in &result.matches {
            let z = centers[di];
            let d = dets[di];
            let confirm_hits = self.cfg.confirm_hits;
            let t = &mut self.tracks[ti];
            let measured_velocity = (z - t.position) * fps;
            t.position = z * alpha + t.predicted_position * (1.0 - alpha);
            t.velocity = measured_velocity * alpha + t.predicted_velocity * (1.0 - alpha);
            t.last_bbox = d.bbox;
            if d.appearance.is_some() {
                t.appearance = d.appearance.clone();
            }
            t.hits += 1;
            t.streak += 1;
            t.time_since_update = 0;
            t.history.push(frame_id, t.position)?;
            if t.status == TrackStatus::Tentative && t.streak >= confirm_hits {
                t.status = TrackStatus::Confirmed;
                t.was_confirmed = true;
            }
        }
        for &ti in &result.unmatched_rows {
            let t = &mut self.tracks[ti];
            t.position = t.predicted_position;
            t.velocity = t.predicted_velocity;
            t.last_bbox = t.predicted_bbox;
            t.time_since_update += 1;
            t.streak = 0;
            t.history.push(frame_id, t.position)?;
            if t.time_since_update > self.cfg.max_misses {
                t.status = TrackStatus::Deleted;
            }
        }
        for t in &mut self.tracks {
            t.age += 1;
        }
        for &di in &result.unmatched_cols {
            let d = dets[di];
            let id = self.next_id;
            self.next_id += 1;
            let status = if self.cfg.confirm_hits <= 1 {
                TrackStatus::Confirmed
            } else {
                TrackStatus::Tentative
            };
            self.tracks.push(Track {
                id,
                class: d.class,
                position: centers[di],
                velocity: Vec2::ZERO,
                last_bbox: d.bbox,
                status,
                hits: 1,
                streak: 1,
                age: 1,
                time_since_update: 0,
                history: Trajectory::new(id, d.class, vec![(frame_id, centers[di])])?,
                appearance: d.appearance.clone(),
                was_confirmed: status == TrackStatus::Confirmed,
                predicted_position: centers[di],
                predicted_velocity: Vec2::ZERO,
                predicted_bbox: d.bbox,
            });
        }

        let (dead, live): (Vec<Track>, Vec<Track>) =
            std::mem::take(&mut self.tracks).into_iter().partition(|t| !t.is_live());
        self.tracks = live;
        self.finished.extend(dead);
        self.last_frame = Some(frame_id);
        Ok(())
    }

    /// Trajectories of every track that reached confirmation.
    pub fn confirmed_trajectories(&self) -> Vec<Trajectory> {
        self.all_tracks()
            .into_iter()
            .filter(|t| t.was_confirmed)
            .map(Track::observed_history)
            .collect()
    }
}

/// Runs a tracker over every frame from the first to the last detection
/// frame; frames without detections are processed as empty.
pub fn run_tracker(cfg: TrackerConfig, detections: &BTreeMap<i64, Vec<Detection>>) -> Result<Tracker> {
    let mut tracker = Tracker::new(cfg)?;
    if let (Some((&first, _)), Some((&last, _))) = (detections.first_key_value(), detections.last_key_value()) {
        for frame in first..=last {
            let dets = detections.get(&frame).map(Vec::as_slice).unwrap_or(&[]);
            tracker.track_frame(frame, dets)?;
        }
    }
    Ok(tracker)
}

/// Records for the trajectory file: one per (frame, confirmed track), sorted
/// by frame then track id.
pub fn trajectory_records<'a>(tracks: impl IntoIterator<Item = &'a Track>) -> Vec<TrajectoryRecord> {
    let mut records: Vec<TrajectoryRecord> = tracks
        .into_iter()
        .filter(|t| t.was_confirmed)
        .flat_map(|t| {
            let h = t.observed_history();
            let class = t.class;
            let id = t.id;
            h.points()
                .iter()
                .map(move |&(f, p)| TrajectoryRecord {
                    frame_id: f,
                    vehicle_id: id,
                    x: p.x,
                    y: p.y,
                    class: Some(class),
                })
                .collect::<Vec<_>>()
        })
        .collect();
    records.sort_by_key(|r| (r.frame_id, r.vehicle_id));
    records
}

pub fn export_trajectories<'a>(tracks: impl IntoIterator<Item = &'a Track>, path: &Path) -> Result<()> {
    write_trajectory_file(path, &trajectory_records(tracks))
}
