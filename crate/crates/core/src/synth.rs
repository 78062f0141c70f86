//! Synthetic traffic: ORCA-simulated ground truth and noisy detections
//! derived from it.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::agent::{AgentClass, AgentSize, ClassTable};
use crate::error::{Error, Result};
use crate::geometry::{estimate_homography, project_to_pixel, Homography, PixelPoint};
use crate::orca::{step_simulation, AgentDisc, SimParams, ARRIVAL_DISTANCE};
use crate::state::Trajectory;
use crate::tracker::{BBox, Detection};
use crate::vec2::{Vec2, WorldPoint};

/// Placement attempts per agent before giving up.
pub const MAX_PLACEMENT_ATTEMPTS: usize = 1000;

/// Clearance kept between discs at placement, meters.
const PLACEMENT_MARGIN: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub n_agents: usize,
    pub class_mix: BTreeMap<AgentClass, f64>,
    /// `(width, height)` in meters; flows run along the width.
    pub arena: (f64, f64),
    /// Agents per kilometer; reported only.
    pub density_target: f64,
    /// Seconds.
    pub duration: f64,
    pub fps: f64,
    pub seed: u64,
    /// Probability that an agent crosses the arena instead of following a flow.
    pub crossing_fraction: f64,
    pub time_horizon: f64,
    pub neighbor_radius: f64,
    /// Ratio of maximum to preferred speed.
    pub speed_cap_factor: f64,
    pub classes: ClassTable,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        let class_mix = [
            (AgentClass::Car, 0.35),
            (AgentClass::Bus, 0.05),
            (AgentClass::Truck, 0.05),
            (AgentClass::Rickshaw, 0.1),
            (AgentClass::Pedestrian, 0.15),
            (AgentClass::Scooter, 0.1),
            (AgentClass::Motorcycle, 0.1),
            (AgentClass::Bicycle, 0.1),
        ]
        .into_iter()
        .collect();
        ScenarioSpec {
            n_agents: 20,
            class_mix,
            arena: (200.0, 30.0),
            density_target: 100.0,
            duration: 30.0,
            fps: crate::state::DEFAULT_FPS,
            seed: 0,
            crossing_fraction: 0.2,
            time_horizon: crate::orca::DEFAULT_TIME_HORIZON,
            neighbor_radius: crate::orca::DEFAULT_NEIGHBOR_RADIUS,
            speed_cap_factor: 1.25,
            classes: ClassTable::default(),
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_agents < 1 {
            return Err(Error::config("synth.n_agents", "must be at least 1"));
        }
        let total: f64 = self.class_mix.values().sum();
        if self.class_mix.values().any(|&p| !(p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::config("synth.class_mix", "probabilities must be non-negative and sum to 1"));
        }
        if !(self.arena.0 > 0.0 && self.arena.1 > 0.0) {
            return Err(Error::config("synth.arena_width", "arena extent must be positive"));
        }
        if !(self.duration > 0.0) {
            return Err(Error::config("synth.duration", "must be positive"));
        }
        if !(self.fps > 0.0) {
            return Err(Error::config("synth.fps", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.crossing_fraction) {
            return Err(Error::config("synth.crossing_fraction", "must lie in [0, 1]"));
        }
        if !(self.speed_cap_factor >= 1.0) {
            return Err(Error::config("synth.speed_cap_factor", "must be at least 1"));
        }
        self.sim_params().validate()
    }

    pub fn sim_params(&self) -> SimParams {
        SimParams {
            dt: 1.0 / self.fps,
            time_horizon: self.time_horizon,
            neighbor_radius: self.neighbor_radius,
        }
    }

    pub fn frame_count(&self) -> usize {
        (self.duration * self.fps).round() as usize + 1
    }

    fn draw_class(&self, rng: &mut impl Rng) -> AgentClass {
        let x: f64 = rng.gen();
        let mut acc = 0.0;
        let mut last = AgentClass::Other;
        for (&c, &p) in &self.class_mix {
            if p <= 0.0 {
                continue;
            }
            acc += p;
            last = c;
            if x < acc {
                return c;
            }
        }
        last
    }
}

/// Ground truth of a generated scenario. Agent ids run from 1; an agent's
/// trajectory ends when it reaches its goal.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub trajectories: Vec<Trajectory>,
    pub classes: BTreeMap<u64, AgentClass>,
    pub sizes: BTreeMap<u64, AgentSize>,
    pub frame_count: usize,
}

impl Scenario {
    /// Largest number of agents present in any window of `length` meters
    /// along the flow axis, scaled to agents per kilometer.
    pub fn peak_density(&self, length: f64) -> f64 {
        let mut best = 0usize;
        for f in 0..self.frame_count as i64 {
            let mut xs: Vec<f64> = self.trajectories.iter().filter_map(|t| t.position_at(f)).map(|p| p.x).collect();
            xs.sort_by(f64::total_cmp);
            let mut j = 0;
            for i in 0..xs.len() {
                while xs[i] - xs[j] > length {
                    j += 1;
                }
                best = best.max(i - j + 1);
            }
        }
        best as f64 * 1000.0 / length
    }
}

fn random_route(spec: &ScenarioSpec, rng: &mut impl Rng) -> (WorldPoint, WorldPoint) {
    let (w, h) = spec.arena;
    if rng.gen_bool(spec.crossing_fraction) {
        let x = rng.gen_range(0.1 * w..0.9 * w);
        if rng.gen_bool(0.5) {
            (Vec2::new(x, 0.0), Vec2::new(x, h))
        } else {
            (Vec2::new(x, h), Vec2::new(x, 0.0))
        }
    } else {
        let y = rng.gen_range(0.0..h);
        if rng.gen_bool(0.5) {
            (Vec2::new(rng.gen_range(0.0..0.5 * w), y), Vec2::new(w, y))
        } else {
            (Vec2::new(rng.gen_range(0.5 * w..w), y), Vec2::new(0.0, y))
        }
    }
}

/// Places agents without overlap and simulates them with ORCA.
pub fn generate_scenario(spec: &ScenarioSpec) -> Result<Scenario> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut agents: Vec<AgentDisc> = Vec::with_capacity(spec.n_agents);
    let mut classes = BTreeMap::new();
    let mut sizes = BTreeMap::new();
    for k in 0..spec.n_agents {
        let id = k as u64 + 1;
        let class = spec.draw_class(&mut rng);
        let size = spec.classes.size(class);
        let radius = size.disc_radius();
        let pref = spec.classes.pref_speed(class);
        let mut placed = None;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let (start, goal) = random_route(spec, &mut rng);
            if agents
                .iter()
                .all(|b| b.position.distance(start) >= b.radius + radius + PLACEMENT_MARGIN)
            {
                placed = Some((start, goal));
                break;
            }
        }
        let (start, goal) = placed.ok_or(Error::InfeasiblePlacement {
            agent: id,
            attempts: MAX_PLACEMENT_ATTEMPTS,
        })?;
        let velocity = (goal - start).normalized() * pref;
        agents.push(AgentDisc {
            id,
            position: start,
            velocity,
            radius,
            pref_speed: pref,
            max_speed: pref * spec.speed_cap_factor,
            goal,
        });
        classes.insert(id, class);
        sizes.insert(id, size);
    }

    let params = spec.sim_params();
    let frames = spec.frame_count();
    let mut points: BTreeMap<u64, Vec<(i64, WorldPoint)>> = agents.iter().map(|a| (a.id, vec![(0, a.position)])).collect();
    for f in 1..frames as i64 {
        if agents.is_empty() {
            break;
        }
        agents = step_simulation(&agents, &params)?;
        for a in &agents {
            points.get_mut(&a.id).expect("agent registered").push((f, a.position));
        }
        agents.retain(|a| a.position.distance(a.goal) >= ARRIVAL_DISTANCE);
    }
    let trajectories = points
        .into_iter()
        .map(|(id, pts)| Trajectory::new(id, classes[&id], pts))
        .collect::<Result<Vec<_>>>()?;
    Ok(Scenario {
        trajectories,
        classes,
        sizes,
        frame_count: frames,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    /// Standard deviation of the isotropic world-space center offset, meters.
    pub position_sigma: f64,
    pub miss_rate: f64,
    /// Mean number of false positives per frame.
    pub false_positive_rate: f64,
    /// Maximum relative change of box width and height.
    pub bbox_jitter: f64,
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            position_sigma: 0.0,
            miss_rate: 0.0,
            false_positive_rate: 0.0,
            bbox_jitter: 0.0,
            seed: 0,
        }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.position_sigma >= 0.0 && self.position_sigma.is_finite()) {
            return Err(Error::config("noise.position_sigma", "must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.miss_rate) {
            return Err(Error::config("noise.miss_rate", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.false_positive_rate) {
            return Err(Error::config("noise.false_positive_rate", "must lie in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.bbox_jitter) {
            return Err(Error::config("noise.bbox_jitter", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// A generated detection with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthDetection {
    pub detection: Detection,
    /// Ground-truth agent, `None` for clutter.
    pub source: Option<u64>,
    /// World-space offset added to the true center.
    pub offset: Vec2,
}

/// Pixels per meter around a world point, per axis.
fn local_scale(h_inv: &Homography, p: WorldPoint) -> Result<(f64, f64)> {
    let c = project_to_pixel(h_inv, p)?;
    let dx = project_to_pixel(h_inv, p + Vec2::new(1.0, 0.0))?;
    let dy = project_to_pixel(h_inv, p + Vec2::new(0.0, 1.0))?;
    let d = |a: PixelPoint, b: PixelPoint| (a.u - b.u).hypot(a.v - b.v);
    Ok((d(c, dx), d(c, dy)))
}

fn make_box(
    h_inv: &Homography,
    center: WorldPoint,
    size: AgentSize,
    jitter: f64,
    rng: &mut impl Rng,
) -> Result<BBox> {
    let (sx, sy) = local_scale(h_inv, center)?;
    let (jw, jh) = if jitter > 0.0 {
        (rng.gen_range(-jitter..=jitter), rng.gen_range(-jitter..=jitter))
    } else {
        (0.0, 0.0)
    };
    let w = (size.length * sx * (1.0 + jw)).max(1.0);
    let h = (size.width * sy * (1.0 + jh)).max(1.0);
    Ok(BBox::centered(project_to_pixel(h_inv, center)?, w, h))
}

/// Turns ground truth into per-frame detections through the camera `h`
/// (pixel to world). Output is ordered by frame, true detections by agent id
/// first, then clutter.
pub fn corrupt_detections(truth: &Scenario, noise: &NoiseModel, h: &Homography, arena: (f64, f64)) -> Result<Vec<SynthDetection>> {
    noise.validate()?;
    let h_inv = h.inverse();
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let gauss = Normal::new(0.0, noise.position_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let clutter = (noise.false_positive_rate > 0.0).then(|| Poisson::new(noise.false_positive_rate).expect("positive rate"));
    let mut out = Vec::new();
    for f in 0..truth.frame_count as i64 {
        for t in &truth.trajectories {
            let Some(p) = t.position_at(f) else { continue };
            let offset = if noise.position_sigma > 0.0 {
                Vec2::new(gauss.sample(&mut rng), gauss.sample(&mut rng))
            } else {
                Vec2::ZERO
            };
            let missed = noise.miss_rate > 0.0 && rng.gen_bool(noise.miss_rate);
            let confidence = rng.gen_range(0.7..=1.0);
            let bbox = make_box(&h_inv, p + offset, truth.sizes[&t.agent_id], noise.bbox_jitter, &mut rng)?;
            if missed {
                continue;
            }
            out.push(SynthDetection {
                detection: Detection::new(f, bbox, t.class, confidence)?,
                source: Some(t.agent_id),
                offset,
            });
        }
        if let Some(pois) = &clutter {
            let n = pois.sample(&mut rng) as usize;
            for _ in 0..n {
                let p = Vec2::new(rng.gen_range(0.0..arena.0), rng.gen_range(0.0..arena.1));
                let confidence = rng.gen_range(0.3..=0.6);
                let bbox = make_box(&h_inv, p, AgentClass::Other.default_size(), noise.bbox_jitter, &mut rng)?;
                out.push(SynthDetection {
                    detection: Detection::new(f, bbox, AgentClass::Other, confidence)?,
                    source: None,
                    offset: Vec2::ZERO,
                });
            }
        }
    }
    Ok(out)
}

/// A pixel-to-world homography for a 1280×720 camera viewing the arena at
/// an oblique angle: the near edge spans the image width, the far edge is
/// foreshortened.
pub fn default_camera(arena: (f64, f64)) -> Result<Homography> {
    let (w, h) = arena;
    let world = [Vec2::new(0.0, 0.0), Vec2::new(w, 0.0), Vec2::new(w, h), Vec2::new(0.0, h)];
    let pixels = [
        PixelPoint::new(40.0, 700.0),
        PixelPoint::new(1240.0, 700.0),
        PixelPoint::new(1000.0, 100.0),
        PixelPoint::new(280.0, 100.0),
    ];
    estimate_homography(&pixels, &world)
}
