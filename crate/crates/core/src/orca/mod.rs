//! Reciprocal collision avoidance: pairwise half-plane constraints in
//! velocity space, the constrained velocity choice, and a synchronous
//! multi-agent simulation step.

mod lp;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

pub use lp::{solve_velocity, violation, VelocitySolution};

use crate::error::{Error, Result};
use crate::vec2::{Vec2, WorldPoint};

/// Default look-ahead for collision constraints, seconds.
pub const DEFAULT_TIME_HORIZON: f64 = 2.0;
/// Default radius within which other agents become constraints, meters.
pub const DEFAULT_NEIGHBOR_RADIUS: f64 = 15.0;
/// Distance to goal below which an agent stops, meters.
pub const ARRIVAL_DISTANCE: f64 = 0.1;
/// Counterclockwise rotation applied to a preferred velocity that some
/// constraint forbids, radians. Smaller angles cannot move the optimum off a
/// symmetric constraint vertex.
pub const DEADLOCK_ROTATION: f64 = 0.05;
/// Relative cross-product tolerance for the anti-parallel test.
const ANTI_PARALLEL_EPS: f64 = 1e-9;
/// A constraint forbids the preferred velocity beyond this distance, m/s.
const BLOCKED_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentDisc {
    pub id: u64,
    pub position: WorldPoint,
    pub velocity: Vec2,
    pub radius: f64,
    pub pref_speed: f64,
    pub max_speed: f64,
    pub goal: WorldPoint,
}

impl AgentDisc {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) {
            return Err(Error::InvalidArgument(format!("agent {}: radius must be positive", self.id)));
        }
        if !(self.pref_speed > 0.0 && self.pref_speed <= self.max_speed) {
            return Err(Error::InvalidArgument(format!(
                "agent {}: need 0 < pref_speed <= max_speed, got {} / {}",
                self.id, self.pref_speed, self.max_speed
            )));
        }
        Ok(())
    }
}

/// Boundary line in velocity space; velocities to the left of `direction`
/// (seen from `point`) are permitted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrcaHalfPlane {
    pub point: Vec2,
    pub direction: Vec2,
}

impl OrcaHalfPlane {
    /// Unit normal pointing into the permitted side.
    pub fn normal(&self) -> Vec2 {
        self.direction.perp()
    }

    pub fn permits(&self, v: Vec2, tol: f64) -> bool {
        violation(self, v) <= tol
    }
}

/// A half-plane together with the smallest change `u` of relative velocity
/// that leaves the truncated velocity obstacle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrcaConstraint {
    pub plane: OrcaHalfPlane,
    pub correction: Vec2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    pub dt: f64,
    pub time_horizon: f64,
    pub neighbor_radius: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            dt: 1.0 / 30.0,
            time_horizon: DEFAULT_TIME_HORIZON,
            neighbor_radius: DEFAULT_NEIGHBOR_RADIUS,
        }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::InvalidArgument("dt must be positive".into()));
        }
        if !(self.time_horizon > 0.0) {
            return Err(Error::InvalidArgument("time horizon must be positive".into()));
        }
        if !(self.neighbor_radius >= 0.0) {
            return Err(Error::InvalidArgument("neighbor radius must be non-negative".into()));
        }
        Ok(())
    }
}

/// Velocity toward the goal at preferred speed; zero once within
/// [`ARRIVAL_DISTANCE`] of the goal.
pub fn preferred_velocity(a: &AgentDisc) -> Vec2 {
    let to_goal = a.goal - a.position;
    let dist = to_goal.norm();
    if dist < ARRIVAL_DISTANCE {
        Vec2::ZERO
    } else {
        to_goal / dist * a.pref_speed
    }
}

/// The constraint `a` receives from `b`, taking half of the avoidance effort.
///
/// Overlapping discs use a cut-off circle over `dt` instead of the horizon so
/// the constraint pushes them apart within one step.
pub fn orca_constraint(a: &AgentDisc, b: &AgentDisc, time_horizon: f64, dt: f64) -> OrcaConstraint {
    let rel_pos = b.position - a.position;
    let rel_vel = a.velocity - b.velocity;
    let dist_sq = rel_pos.norm_sq();
    let combined_radius = a.radius + b.radius;
    let combined_radius_sq = combined_radius * combined_radius;

    let (direction, u) = if dist_sq > combined_radius_sq {
        let inv_horizon = 1.0 / time_horizon;
        // From the cut-off circle center to the relative velocity.
        let w = rel_vel - rel_pos * inv_horizon;
        let w_len_sq = w.norm_sq();
        let dot = w.dot(rel_pos);
        if dot < 0.0 && dot * dot > combined_radius_sq * w_len_sq {
            // Closest boundary point lies on the cut-off circle.
            let w_len = w_len_sq.sqrt();
            let unit_w = w / w_len;
            (
                Vec2::new(unit_w.y, -unit_w.x),
                unit_w * (combined_radius * inv_horizon - w_len),
            )
        } else {
            // Closest boundary point lies on one of the cone legs.
            let leg = (dist_sq - combined_radius_sq).sqrt();
            let direction = if rel_pos.det(w) > 0.0 {
                Vec2::new(
                    rel_pos.x * leg - rel_pos.y * combined_radius,
                    rel_pos.x * combined_radius + rel_pos.y * leg,
                ) / dist_sq
            } else {
                -Vec2::new(
                    rel_pos.x * leg + rel_pos.y * combined_radius,
                    -rel_pos.x * combined_radius + rel_pos.y * leg,
                ) / dist_sq
            };
            let u = direction * rel_vel.dot(direction) - rel_vel;
            (direction, u)
        }
    } else {
        let inv_dt = 1.0 / dt;
        let w = rel_vel - rel_pos * inv_dt;
        let w_len = w.norm();
        let unit_w = if w_len > 0.0 {
            w / w_len
        } else if dist_sq > 0.0 {
            -rel_pos / dist_sq.sqrt()
        } else {
            // Coincident centers with equal velocities: separate along a fixed
            // axis, ordered by id so the pair moves apart.
            if a.id < b.id {
                Vec2::new(-1.0, 0.0)
            } else {
                Vec2::new(1.0, 0.0)
            }
        };
        (
            Vec2::new(unit_w.y, -unit_w.x),
            unit_w * (combined_radius * inv_dt - w_len),
        )
    };

    OrcaConstraint {
        plane: OrcaHalfPlane {
            point: a.velocity + u * 0.5,
            direction,
        },
        correction: u,
    }
}

pub fn orca_halfplane(a: &AgentDisc, b: &AgentDisc, time_horizon: f64, dt: f64) -> OrcaHalfPlane {
    orca_constraint(a, b, time_horizon, dt).plane
}

fn anti_parallel(u: Vec2, v: Vec2) -> bool {
    let scale = u.norm() * v.norm();
    scale > 0.0 && u.dot(v) < 0.0 && u.det(v).abs() <= ANTI_PARALLEL_EPS * scale
}

/// Chooses a new velocity for `ego` against the given neighbors.
///
/// When a constraint forbids `v_pref`, or a correction points straight back
/// along it, the preference is rotated by [`DEADLOCK_ROTATION`]
/// counterclockwise before solving. This breaks symmetric deadlocks the same
/// way for every agent.
pub fn avoiding_velocity<'a>(
    ego: &AgentDisc,
    neighbors: impl IntoIterator<Item = &'a AgentDisc>,
    v_pref: Vec2,
    params: &SimParams,
) -> VelocitySolution {
    let constraints: Vec<OrcaConstraint> = neighbors
        .into_iter()
        .map(|b| orca_constraint(ego, b, params.time_horizon, params.dt))
        .collect();
    let blocked = constraints
        .iter()
        .any(|c| anti_parallel(c.correction, v_pref) || violation(&c.plane, v_pref) > BLOCKED_EPS);
    let v_pref = if blocked {
        v_pref.rotate(DEADLOCK_ROTATION)
    } else {
        v_pref
    };
    let planes: Vec<OrcaHalfPlane> = constraints.iter().map(|c| c.plane).collect();
    solve_velocity(&planes, v_pref, ego.max_speed)
}

/// Advances every agent by one step. All agents see the same pre-step
/// snapshot.
pub fn step_simulation(agents: &[AgentDisc], params: &SimParams) -> Result<Vec<AgentDisc>> {
    params.validate()?;
    let mut seen = HashSet::with_capacity(agents.len());
    for a in agents {
        if !seen.insert(a.id) {
            return Err(Error::DuplicateId(a.id));
        }
    }
    let radius_sq = params.neighbor_radius * params.neighbor_radius;
    Ok(agents
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let neighbors = agents
                .iter()
                .enumerate()
                .filter(|&(j, b)| j != i && (b.position - a.position).norm_sq() <= radius_sq)
                .map(|(_, b)| b);
            let solution = avoiding_velocity(a, neighbors, preferred_velocity(a), params);
            AgentDisc {
                velocity: solution.velocity,
                position: a.position + solution.velocity * params.dt,
                ..*a
            }
        })
        .collect())
}

/// Parameters of the motion prior used when predicting a tracked agent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionPrior {
    pub radius: f64,
    pub max_speed: f64,
    pub sim: SimParams,
}

/// One-step ORCA prediction for a tracked agent whose preferred velocity is
/// its current velocity. Returns the predicted position and velocity.
pub fn predict_next_state(
    track_position: WorldPoint,
    track_velocity: Vec2,
    neighbors: &[AgentDisc],
    prior: &MotionPrior,
) -> (WorldPoint, Vec2) {
    let speed = track_velocity.norm();
    let ego = AgentDisc {
        id: u64::MAX,
        position: track_position,
        velocity: track_velocity,
        radius: prior.radius,
        pref_speed: speed,
        max_speed: prior.max_speed.max(speed),
        goal: track_position + track_velocity * prior.sim.time_horizon,
    };
    let radius_sq = prior.sim.neighbor_radius * prior.sim.neighbor_radius;
    let nearby = neighbors
        .iter()
        .filter(|b| (b.position - track_position).norm_sq() <= radius_sq);
    let v = avoiding_velocity(&ego, nearby, track_velocity, &prior.sim).velocity;
    (track_position + v * prior.sim.dt, v)
}


#[cfg(test)]
mod circle_tests {
    use super::*;

    #[test]
    fn eight_agent_circle_swap() {
        let n = 8;
        let ring = 10.0;
        let agents: Vec<AgentDisc> = (0..n)
            .map(|i| {
                let th = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
                let p = Vec2::new(ring * th.cos(), ring * th.sin());
                AgentDisc {
                    id: i as u64,
                    position: p,
                    velocity: Vec2::ZERO,
                    radius: 0.5,
                    pref_speed: 2.0,
                    max_speed: 2.0,
                    goal: -p,
                }
            })
            .collect();
        let params = SimParams::default();
        let mut cur = agents;
        let mut min_gap = f64::INFINITY;
        for _ in 0..600 {
            cur = step_simulation(&cur, &params).unwrap();
            for i in 0..n {
                for j in i + 1..n {
                    let gap = cur[i].position.distance(cur[j].position) - cur[i].radius - cur[j].radius;
                    min_gap = min_gap.min(gap);
                }
            }
        }
        let worst = cur.iter().map(|a| a.position.distance(a.goal)).fold(0.0, f64::max);
        assert!(min_gap >= -1e-3, "min gap {min_gap}");
        assert!(worst < 0.5, "worst goal distance {worst}");
    }
}
