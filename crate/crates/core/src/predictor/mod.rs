//! Trajectory forecasting: constant-velocity and ORCA-rollout baselines and
//! the trainable interaction model.

mod checkpoint;
mod layers;
mod model;
mod train;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use layers::{Activation, Conv3x3, Linear, Lstm, LstmStep};
pub use model::{ModelConfig, ModelParams, POSITION_SCALE, VELOCITY_SCALE};
pub use train::{
    format_training_log, mean_loss, train, train_with_progress, write_training_log, EpochLog, OptimizerKind, TrainConfig,
    TrainOutcome,
};

use crate::agent::ClassTable;
use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::orca::{avoiding_velocity, AgentDisc, SimParams};
use crate::vec2::{Vec2, WorldPoint};

/// Forecast positions in the world frame, one per future frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub points: Vec<WorldPoint>,
}

/// Mean squared Euclidean displacement.
pub fn loss(pred: &[WorldPoint], truth: &[WorldPoint]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: truth.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::TooShort { needed: 1, got: 0 });
    }
    Ok(pred.iter().zip(truth).map(|(p, t)| (*p - *t).norm_sq()).sum::<f64>() / pred.len() as f64)
}

/// Model forecast for a sample, de-normalized to the world frame.
pub fn forward(m: &ModelParams, s: &Sample) -> Result<Prediction> {
    let local = m.forward_local(s)?;
    Ok(Prediction {
        points: local.into_iter().map(|p| s.to_world(p)).collect(),
    })
}

/// Loss of the model on a sample and its exact gradient.
pub fn gradient(m: &ModelParams, s: &Sample) -> Result<(f64, ModelParams)> {
    let mut g = m.zeros_like();
    let l = m.accumulate_gradient(s, 1.0, &mut g)?;
    Ok((l, g))
}

/// Extrapolates the last step of `history` for `k` seconds.
pub fn predict_constant_velocity(history: &[WorldPoint], k: f64, fps: f64) -> Result<Prediction> {
    if history.len() < 2 {
        return Err(Error::TooShort {
            needed: 2,
            got: history.len(),
        });
    }
    let last = history[history.len() - 1];
    let v = last - history[history.len() - 2];
    let n = (k * fps).round() as usize;
    Ok(Prediction {
        points: (1..=n).map(|i| last + v * i as f64).collect(),
    })
}

/// Simulation settings for the ORCA rollout baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutParams {
    pub sim: SimParams,
    pub classes: ClassTable,
    pub speed_cap_factor: f64,
}

impl Default for RolloutParams {
    fn default() -> Self {
        RolloutParams {
            sim: SimParams::default(),
            classes: ClassTable::default(),
            speed_cap_factor: 1.25,
        }
    }
}

/// Simulates the ego and its recorded neighbors for `steps` frames with
/// every preferred velocity frozen at the anchor velocity. Returns each
/// agent's positions (ego first, then neighbors in sample order).
pub fn rvo_rollout_all(s: &Sample, steps: usize, params: &RolloutParams) -> Vec<Vec<WorldPoint>> {
    let disc = |id: u64, class, position: WorldPoint, velocity: Vec2| {
        let speed = velocity.norm();
        AgentDisc {
            id,
            position,
            velocity,
            radius: params.classes.size(class).disc_radius(),
            pref_speed: speed,
            max_speed: (params.classes.pref_speed(class) * params.speed_cap_factor).max(speed),
            goal: position + velocity * params.sim.time_horizon,
        }
    };
    let mut agents = vec![disc(s.ego_id, s.ego_class, s.anchor, s.ego_velocity)];
    agents.extend(s.neighbors.iter().map(|n| disc(n.id, n.class, n.position, n.velocity)));
    let prefs: Vec<Vec2> = agents.iter().map(|a| a.velocity).collect();
    let radius_sq = params.sim.neighbor_radius * params.sim.neighbor_radius;
    let mut paths: Vec<Vec<WorldPoint>> = vec![Vec::with_capacity(steps); agents.len()];
    for _ in 0..steps {
        let next: Vec<AgentDisc> = agents
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let near = agents
                    .iter()
                    .enumerate()
                    .filter(|&(j, b)| j != i && (b.position - a.position).norm_sq() <= radius_sq)
                    .map(|(_, b)| b);
                let v = avoiding_velocity(a, near, prefs[i], &params.sim).velocity;
                AgentDisc {
                    velocity: v,
                    position: a.position + v * params.sim.dt,
                    ..*a
                }
            })
            .collect();
        agents = next;
        for (path, a) in paths.iter_mut().zip(&agents) {
            path.push(a.position);
        }
    }
    paths
}

/// Ego positions of the frozen-preference ORCA rollout over `k` seconds.
pub fn predict_rvo_rollout(s: &Sample, k: f64, fps: f64, params: &RolloutParams) -> Prediction {
    let steps = (k * fps).round() as usize;
    let mut paths = rvo_rollout_all(s, steps, params);
    Prediction {
        points: paths.swap_remove(0),
    }
}
