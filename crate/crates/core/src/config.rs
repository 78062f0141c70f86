//! Flat run configuration: `section.key = value` lines, `#` comments.
//!
//! Every key has a default; unknown keys and out-of-range values are
//! rejected with the offending key in the message. Shared physical settings
//! (`core.fps`, `orca.*`, `classes.*`) are applied to every module that
//! uses them.

use std::fmt::Write as _;
use std::path::Path;

use crate::agent::{AgentClass, AgentSize, ClassTable};
use crate::dataset::WindowConfig;
use crate::error::{Error, Result};
use crate::eval::DEFAULT_HORIZONS;
use crate::predictor::{Activation, OptimizerKind, RolloutParams, TrainConfig};
use crate::synth::{NoiseModel, ScenarioSpec};
use crate::tracker::TrackerConfig;

/// Settings of the end-to-end experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Number of generated scenarios, each treated as one video.
    pub scenarios: usize,
    pub train_fraction: f64,
    pub val_fraction: f64,
    /// Position noise levels (meters) whose tracked trajectories each train
    /// a model.
    pub noise_tiers: Vec<f64>,
    /// Longest tracker dropout bridged by interpolation, frames.
    pub max_gap: i64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            scenarios: 10,
            train_fraction: 0.7,
            val_fraction: 0.1,
            noise_tiers: vec![0.1, 0.2, 0.5],
            max_gap: crate::state::MAX_INTERPOLATED_GAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub synth: ScenarioSpec,
    pub noise: NoiseModel,
    pub tracker: TrackerConfig,
    pub window: WindowConfig,
    pub train: TrainConfig,
    pub horizons: Vec<f64>,
    pub pipeline: PipelineConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            synth: ScenarioSpec::default(),
            noise: NoiseModel::default(),
            tracker: TrackerConfig::default(),
            window: WindowConfig::default(),
            train: TrainConfig::default(),
            horizons: DEFAULT_HORIZONS.to_vec(),
            pipeline: PipelineConfig::default(),
        }
    }
}

type Getter = Box<dyn Fn(&RunConfig) -> String>;
type Setter = Box<dyn Fn(&mut RunConfig, &str) -> std::result::Result<(), String>>;

/// One configuration key.
pub struct KeySpec {
    pub name: String,
    pub help: String,
    get: Getter,
    set: Setter,
}

fn num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| format!("`{v}`: {e}"))
}

fn bool_value(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("`{v}` is not a boolean")),
    }
}

fn list(v: &str) -> std::result::Result<Vec<f64>, String> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| num::<f64>(s.trim())).collect()
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

macro_rules! key {
    ($out:ident, $name:expr, $help:expr, |$c:ident| $get:expr, |$m:ident, $v:ident| $set:expr) => {
        $out.push(KeySpec {
            name: $name.to_string(),
            help: $help.to_string(),
            get: Box::new(|$c: &RunConfig| $get.to_string()),
            set: Box::new(|$m: &mut RunConfig, $v: &str| {
                $set;
                Ok(())
            }),
        });
    };
}

fn set_classes(c: &mut RunConfig, f: impl Fn(&mut ClassTable)) {
    f(&mut c.synth.classes);
    f(&mut c.tracker.classes);
}

/// Every recognized key, grouped by section.
pub fn keys() -> Vec<KeySpec> {
    let mut k = Vec::new();
    key!(k, "core.fps", "frame rate of every stage, frames/s", |c| c.window.fps, |c, v| {
        let fps: f64 = num(v)?;
        c.synth.fps = fps;
        c.tracker.fps = fps;
        c.window.fps = fps;
    });

    key!(k, "synth.n_agents", "agents per scenario", |c| c.synth.n_agents, |c, v| c.synth.n_agents = num(v)?);
    key!(k, "synth.arena_width", "arena length along the flows, m", |c| c.synth.arena.0, |c, v| c.synth.arena.0 = num(v)?);
    key!(k, "synth.arena_height", "arena width across the flows, m", |c| c.synth.arena.1, |c, v| c.synth.arena.1 = num(v)?);
    key!(k, "synth.density_target", "nominal agents per km (reported only)", |c| c.synth.density_target, |c, v| c
        .synth
        .density_target = num(v)?);
    key!(k, "synth.duration", "simulated seconds per scenario", |c| c.synth.duration, |c, v| c.synth.duration = num(v)?);
    key!(k, "synth.seed", "scenario seed", |c| c.synth.seed, |c, v| c.synth.seed = num(v)?);
    key!(k, "synth.crossing_fraction", "probability an agent crosses the flows", |c| c.synth.crossing_fraction, |c, v| c
        .synth
        .crossing_fraction = num(v)?);
    for class in AgentClass::ALL {
        let name = class.as_str();
        k.push(KeySpec {
            name: format!("synth.mix.{name}"),
            help: format!("probability of class {name}"),
            get: Box::new(move |c| c.synth.class_mix.get(&class).copied().unwrap_or(0.0).to_string()),
            set: Box::new(move |c, v| {
                let p: f64 = num(v)?;
                if p == 0.0 {
                    c.synth.class_mix.remove(&class);
                } else {
                    c.synth.class_mix.insert(class, p);
                }
                Ok(())
            }),
        });
    }

    for class in AgentClass::ALL {
        let name = class.as_str();
        k.push(KeySpec {
            name: format!("classes.{name}.length"),
            help: format!("{name} footprint length, m"),
            get: Box::new(move |c| c.synth.classes.size(class).length.to_string()),
            set: Box::new(move |c, v| {
                let size = AgentSize::new(num(v)?, c.synth.classes.size(class).width).map_err(|e| e.to_string())?;
                set_classes(c, |t| t.set_size(class, size));
                Ok(())
            }),
        });
        k.push(KeySpec {
            name: format!("classes.{name}.width"),
            help: format!("{name} footprint width, m"),
            get: Box::new(move |c| c.synth.classes.size(class).width.to_string()),
            set: Box::new(move |c, v| {
                let size = AgentSize::new(c.synth.classes.size(class).length, num(v)?).map_err(|e| e.to_string())?;
                set_classes(c, |t| t.set_size(class, size));
                Ok(())
            }),
        });
        k.push(KeySpec {
            name: format!("classes.{name}.speed"),
            help: format!("{name} preferred speed, m/s"),
            get: Box::new(move |c| c.synth.classes.pref_speed(class).to_string()),
            set: Box::new(move |c, v| {
                let s: f64 = num(v)?;
                if !(s > 0.0 && s.is_finite()) {
                    return Err("must be positive".into());
                }
                set_classes(c, |t| t.set_pref_speed(class, s));
                Ok(())
            }),
        });
    }

    key!(k, "orca.time_horizon", "collision-avoidance time horizon, s", |c| c.synth.time_horizon, |c, v| {
        let t: f64 = num(v)?;
        c.synth.time_horizon = t;
        c.tracker.time_horizon = t;
    });
    key!(k, "orca.neighbor_radius", "radius within which agents interact, m", |c| c.synth.neighbor_radius, |c, v| {
        let r: f64 = num(v)?;
        c.synth.neighbor_radius = r;
        c.tracker.neighbor_radius = r;
    });
    key!(k, "orca.speed_cap_factor", "maximum over preferred speed", |c| c.synth.speed_cap_factor, |c, v| {
        let s: f64 = num(v)?;
        c.synth.speed_cap_factor = s;
        c.tracker.speed_cap_factor = s;
    });

    key!(k, "noise.position_sigma", "detection center noise, m", |c| c.noise.position_sigma, |c, v| c
        .noise
        .position_sigma = num(v)?);
    key!(k, "noise.miss_rate", "probability a detection is dropped", |c| c.noise.miss_rate, |c, v| c.noise.miss_rate = num(v)?);
    key!(k, "noise.false_positive_rate", "mean clutter detections per frame", |c| c.noise.false_positive_rate, |c, v| c
        .noise
        .false_positive_rate = num(v)?);
    key!(k, "noise.bbox_jitter", "maximum relative box size change", |c| c.noise.bbox_jitter, |c, v| c.noise.bbox_jitter = num(v)?);
    key!(k, "noise.seed", "detection noise seed", |c| c.noise.seed, |c, v| c.noise.seed = num(v)?);

    key!(k, "tracker.confirm_hits", "consecutive matches to confirm a track", |c| c.tracker.confirm_hits, |c, v| c
        .tracker
        .confirm_hits = num(v)?);
    key!(k, "tracker.max_misses", "missed frames before deletion", |c| c.tracker.max_misses, |c, v| c.tracker.max_misses = num(v)?);
    key!(k, "tracker.gate_distance", "association gate, m", |c| c.tracker.gate_distance, |c, v| c.tracker.gate_distance = num(v)?);
    key!(k, "tracker.w_dist", "distance cost weight", |c| c.tracker.cost_weights.0, |c, v| c.tracker.cost_weights.0 = num(v)?);
    key!(k, "tracker.w_iou", "overlap cost weight", |c| c.tracker.cost_weights.1, |c, v| c.tracker.cost_weights.1 = num(v)?);
    key!(k, "tracker.w_app", "appearance cost weight", |c| c.tracker.cost_weights.2, |c, v| c.tracker.cost_weights.2 = num(v)?);
    key!(k, "tracker.alpha", "measurement weight in the state update", |c| c.tracker.alpha, |c, v| c.tracker.alpha = num(v)?);
    key!(k, "tracker.min_confidence", "detections below this are ignored", |c| c.tracker.min_confidence, |c, v| c
        .tracker
        .min_confidence = num(v)?);

    key!(k, "dataset.history_s", "history length, s", |c| c.window.history_s, |c, v| c.window.history_s = num(v)?);
    key!(k, "dataset.future_s", "prediction horizon, s", |c| c.window.future_s, |c, v| c.window.future_s = num(v)?);
    key!(k, "dataset.stride", "frames between anchors", |c| c.window.stride, |c, v| c.window.stride = num(v)?);
    key!(k, "dataset.heading_window_s", "history span defining heading and velocity, s", |c| c.window.heading_window_s, |c, v| c
        .window
        .heading_window_s = num(v)?);
    key!(k, "dataset.grid_rows", "grid cells along the heading", |c| c.window.horizon_grid.rows, |c, v| {
        let r: usize = num(v)?;
        c.window.horizon_grid.rows = r;
        c.window.neighbor_grid.rows = r;
    });
    key!(k, "dataset.grid_cols", "grid cells across the heading", |c| c.window.horizon_grid.cols, |c, v| {
        let r: usize = num(v)?;
        c.window.horizon_grid.cols = r;
        c.window.neighbor_grid.cols = r;
    });
    key!(k, "dataset.cell_length", "grid cell extent along the heading, m", |c| c.window.horizon_grid.cell.0, |c, v| {
        let r: f64 = num(v)?;
        c.window.horizon_grid.cell.0 = r;
        c.window.neighbor_grid.cell.0 = r;
    });
    key!(k, "dataset.cell_width", "grid cell extent across the heading, m", |c| c.window.horizon_grid.cell.1, |c, v| {
        let r: f64 = num(v)?;
        c.window.horizon_grid.cell.1 = r;
        c.window.neighbor_grid.cell.1 = r;
    });
    key!(k, "dataset.horizon_fov", "horizon view angle, rad", |c| c.window.horizon_fov, |c, v| c.window.horizon_fov = num(v)?);
    key!(k, "dataset.horizon_range", "horizon view range, m", |c| c.window.horizon_range, |c, v| c.window.horizon_range = num(v)?);
    key!(k, "dataset.neighbor_fov", "neighborhood angle, rad", |c| c.window.neighbor_fov, |c, v| c.window.neighbor_fov = num(v)?);
    key!(k, "dataset.neighbor_range", "neighborhood range, m", |c| c.window.neighbor_range, |c, v| c.window.neighbor_range = num(v)?);
    key!(k, "dataset.context_range", "neighbors kept for simulation baselines, m", |c| c.window.context_range, |c, v| c
        .window
        .context_range = num(v)?);
    key!(k, "dataset.max_gap", "longest interpolated tracking gap, frames", |c| c.pipeline.max_gap, |c, v| c.pipeline.max_gap = num(
        v
    )?);

    key!(k, "train.learning_rate", "step size", |c| c.train.learning_rate, |c, v| c.train.learning_rate = num(v)?);
    key!(k, "train.batch_size", "samples per update", |c| c.train.batch_size, |c, v| c.train.batch_size = num(v)?);
    key!(k, "train.epochs", "passes over the training set", |c| c.train.epochs, |c, v| c.train.epochs = num(v)?);
    key!(k, "train.hidden_size", "recurrent state size", |c| c.train.hidden_size, |c, v| c.train.hidden_size = num(v)?);
    key!(k, "train.conv_channels", "convolution output channels", |c| c.train.conv_channels, |c, v| c.train.conv_channels = num(v)?);
    key!(k, "train.stride", "frames per recurrent step", |c| c.train.stride, |c, v| c.train.stride = num(v)?);
    key!(k, "train.seed", "initialization and shuffling seed", |c| c.train.seed, |c, v| c.train.seed = num(v)?);
    key!(k, "train.grad_clip", "maximum gradient norm", |c| c.train.grad_clip, |c, v| c.train.grad_clip = num(v)?);
    key!(k, "train.optimizer", "sgd or adam", |c| match c.train.optimizer {
        OptimizerKind::Sgd => "sgd",
        OptimizerKind::Adam => "adam",
    }, |c, v| c.train.optimizer = v.parse()?);
    key!(k, "train.conv_activation", "tanh or relu", |c| match c.train.conv_activation {
        Activation::Tanh => "tanh",
        Activation::Relu => "relu",
    }, |c, v| c.train.conv_activation = v.parse()?);
    key!(k, "train.ego_only", "zero the context grids", |c| c.train.ego_only, |c, v| c.train.ego_only = bool_value(v)?);

    key!(k, "eval.horizons", "error-curve horizons, s (comma list)", |c| join(&c.horizons), |c, v| c.horizons = list(v)?);

    key!(k, "pipeline.scenarios", "scenarios (videos) generated", |c| c.pipeline.scenarios, |c, v| c.pipeline.scenarios = num(v)?);
    key!(k, "pipeline.train_fraction", "share of scenarios for training", |c| c.pipeline.train_fraction, |c, v| c
        .pipeline
        .train_fraction = num(v)?);
    key!(k, "pipeline.val_fraction", "share of scenarios for validation", |c| c.pipeline.val_fraction, |c, v| c
        .pipeline
        .val_fraction = num(v)?);
    key!(k, "pipeline.noise_tiers", "detection noise levels, m (comma list)", |c| join(&c.pipeline.noise_tiers), |c, v| c
        .pipeline
        .noise_tiers = list(v)?);
    k
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let spec = keys()
            .into_iter()
            .find(|k| k.name == key)
            .ok_or_else(|| Error::config(key, "unknown key"))?;
        (spec.set)(self, value.trim()).map_err(|m| Error::config(key, m))
    }

    pub fn get(&self, key: &str) -> Option<String> {
        keys().into_iter().find(|k| k.name == key).map(|k| (k.get)(self))
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("override `{kv}` is not key=value")))?;
        self.set(k.trim(), v)
    }

    /// Sets every seed from one value.
    pub fn set_seed(&mut self, seed: u64) {
        self.synth.seed = seed;
        self.noise.seed = seed;
        self.train.seed = seed;
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut c = RunConfig::default();
        c.apply_text(text, origin)?;
        Ok(c)
    }

    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(origin, idx + 1, "expected `section.key = value`"))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::parse(&text, path)
    }

    /// Every key with its current value, one `key = value` line each.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for k in keys() {
            let _ = writeln!(out, "{} = {}", k.name, (k.get)(self));
        }
        out
    }

    pub fn rollout_params(&self) -> RolloutParams {
        RolloutParams {
            sim: self.synth.sim_params(),
            classes: self.synth.classes.clone(),
            speed_cap_factor: self.synth.speed_cap_factor,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.synth.time_horizon > 0.0) {
            return Err(Error::config("orca.time_horizon", "must be positive"));
        }
        if !(self.synth.neighbor_radius > 0.0) {
            return Err(Error::config("orca.neighbor_radius", "must be positive"));
        }
        self.synth.validate()?;
        self.noise.validate()?;
        self.tracker.validate()?;
        if !(0.0..=1.0).contains(&self.tracker.min_confidence) {
            return Err(Error::config("tracker.min_confidence", "must lie in [0, 1]"));
        }
        self.window.validate()?;
        self.train.validate()?;
        if self.train.stride >= self.window.history_len() {
            return Err(Error::config("train.stride", "must be shorter than the history"));
        }
        if self.horizons.is_empty() {
            return Err(Error::config("eval.horizons", "needs at least one horizon"));
        }
        if self.horizons.windows(2).any(|w| !(w[0] < w[1])) || !(self.horizons[0] > 0.0) {
            return Err(Error::config("eval.horizons", "must be positive and strictly increasing"));
        }
        let last = *self.horizons.last().expect("non-empty");
        if (last * self.window.fps).round() as usize > self.window.future_len() {
            return Err(Error::config("eval.horizons", "must not exceed dataset.future_s"));
        }
        let p = &self.pipeline;
        if p.scenarios < 3 {
            return Err(Error::config("pipeline.scenarios", "must be at least 3"));
        }
        if !(p.train_fraction > 0.0 && p.val_fraction >= 0.0 && p.train_fraction + p.val_fraction < 1.0) {
            return Err(Error::config(
                "pipeline.train_fraction",
                "train and validation shares must be non-negative and leave room for a test split",
            ));
        }
        if p.noise_tiers.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::config("pipeline.noise_tiers", "levels must be non-negative"));
        }
        if p.max_gap < 0 {
            return Err(Error::config("dataset.max_gap", "must be non-negative"));
        }
        Ok(())
    }

    /// Help text listing every key in the given sections.
    pub fn describe(sections: &[&str]) -> String {
        let defaults = RunConfig::default();
        let mut out = String::from("Config keys (section.key = default  description):\n");
        for k in keys() {
            let section = k.name.split('.').next().unwrap_or("");
            if sections.contains(&section) {
                let _ = writeln!(out, "  {} = {}  {}", k.name, (k.get)(&defaults), k.help);
            }
        }
        out
    }
}
