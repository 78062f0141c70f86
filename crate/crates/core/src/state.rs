//! Per-agent trajectories and the state space built from them: history,
//! velocities, local concentration, and size.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::agent::{AgentClass, AgentSize};
use crate::error::{Error, Result};
use crate::vec2::{Vec2, WorldPoint};

/// Default frame rate of the pipeline.
pub const DEFAULT_FPS: f64 = 30.0;

/// Default concentration box, meters.
pub const DEFAULT_CONCENTRATION_BOX: (f64, f64) = (10.0, 10.0);

/// Longest run of missing frames that is bridged by interpolation.
pub const MAX_INTERPOLATED_GAP: i64 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub agent_id: u64,
    pub class: AgentClass,
    points: Vec<(i64, WorldPoint)>,
}

impl Trajectory {
    /// Builds a trajectory; frame ids must be strictly increasing and the
    /// point list non-empty.
    pub fn new(agent_id: u64, class: AgentClass, points: Vec<(i64, WorldPoint)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::TooShort { needed: 1, got: 0 });
        }
        if points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::InvalidArgument(format!(
                "trajectory {agent_id}: frame ids must be strictly increasing"
            )));
        }
        Ok(Trajectory {
            agent_id,
            class,
            points,
        })
    }

    pub fn points(&self) -> &[(i64, WorldPoint)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn first_frame(&self) -> i64 {
        self.points[0].0
    }

    pub fn last_frame(&self) -> i64 {
        self.points[self.points.len() - 1].0
    }

    pub fn positions(&self) -> impl Iterator<Item = WorldPoint> + '_ {
        self.points.iter().map(|p| p.1)
    }

    pub fn position_at(&self, frame: i64) -> Option<WorldPoint> {
        self.points
            .binary_search_by_key(&frame, |p| p.0)
            .ok()
            .map(|i| self.points[i].1)
    }

    /// Appends a point; the frame must follow the current last frame.
    pub fn push(&mut self, frame: i64, p: WorldPoint) -> Result<()> {
        if frame <= self.last_frame() {
            return Err(Error::FrameOutOfOrder {
                expected: self.last_frame() + 1,
                got: frame,
            });
        }
        self.points.push((frame, p));
        Ok(())
    }

    /// Sub-trajectory covering frames `[from, to]` inclusive.
    pub fn segment(&self, from: i64, to: i64) -> Option<Trajectory> {
        let pts: Vec<_> = self
            .points
            .iter()
            .copied()
            .filter(|(f, _)| *f >= from && *f <= to)
            .collect();
        if pts.is_empty() {
            None
        } else {
            Some(Trajectory {
                agent_id: self.agent_id,
                class: self.class,
                points: pts,
            })
        }
    }

    /// Fills gaps of up to `max_gap` missing frames by linear interpolation
    /// and splits the trajectory at longer gaps. Every returned piece has
    /// consecutive frame ids.
    pub fn repair_gaps(&self, max_gap: i64) -> Vec<Trajectory> {
        let mut pieces = Vec::new();
        let mut cur = vec![self.points[0]];
        for w in self.points.windows(2) {
            let (f0, p0) = w[0];
            let (f1, p1) = w[1];
            let missing = f1 - f0 - 1;
            if missing > max_gap {
                pieces.push(std::mem::take(&mut cur));
            } else {
                for k in 1..=missing {
                    let t = k as f64 / (f1 - f0) as f64;
                    cur.push((f0 + k, p0 + (p1 - p0) * t));
                }
            }
            cur.push((f1, p1));
        }
        pieces.push(cur);
        pieces
            .into_iter()
            .map(|points| Trajectory {
                agent_id: self.agent_id,
                class: self.class,
                points,
            })
            .collect()
    }
}

/// Velocity by backward differences, `v_i = (p_i - p_{i-1}) * fps`, with the
/// first entry copied from the second.
pub fn derivative(t: &Trajectory, fps: f64) -> Result<Vec<Vec2>> {
    let pts = t.points();
    if pts.len() < 2 {
        return Err(Error::TooShort {
            needed: 2,
            got: pts.len(),
        });
    }
    let mut v = Vec::with_capacity(pts.len());
    v.push(Vec2::ZERO);
    for w in pts.windows(2) {
        v.push((w[1].1 - w[0].1) * fps);
    }
    v[0] = v[1];
    Ok(v)
}

/// Number of positions inside the half-open box
/// `[query.x, query.x + dx) × [query.y, query.y + dy)`.
pub fn concentration(all_positions: &[WorldPoint], query: WorldPoint, delta: (f64, f64)) -> Result<usize> {
    let (dx, dy) = delta;
    if !(dx > 0.0 && dy > 0.0) {
        return Err(Error::InvalidDelta { dx, dy });
    }
    Ok(all_positions
        .iter()
        .filter(|p| p.x >= query.x && p.x < query.x + dx && p.y >= query.y && p.y < query.y + dy)
        .count())
}

/// The per-agent state: trajectory history, its velocities, the local
/// concentration at each history frame, and the agent size.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    pub history: Trajectory,
    pub velocities: Vec<Vec2>,
    pub concentration: Vec<usize>,
    pub size: AgentSize,
}

pub fn build_state_space(
    ego: &Trajectory,
    all: &[Trajectory],
    delta: (f64, f64),
    size: AgentSize,
    fps: f64,
) -> Result<StateSpace> {
    let velocities = derivative(ego, fps)?;

    let mut by_frame: HashMap<i64, Vec<WorldPoint>> = HashMap::new();
    for t in all {
        for &(f, p) in t.points() {
            by_frame.entry(f).or_default().push(p);
        }
    }
    // The ego is counted even when it is absent from `all`.
    let ego_listed = all.iter().any(|t| t.agent_id == ego.agent_id);
    let concentration = ego
        .points()
        .iter()
        .map(|&(f, p)| {
            let others = by_frame.get(&f).map(Vec::as_slice).unwrap_or(&[]);
            let n = concentration(others, p, delta)?;
            Ok(if ego_listed { n } else { n + 1 })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(StateSpace {
        history: ego.clone(),
        velocities,
        concentration,
        size,
    })
}
