//! Deterministic synthetic traffic scenes.
//!
//! Each scene draws a scenario type, lays out lanes as chains of straight
//! and circular segments, and moves vehicles along them. Scene `i` uses its
//! own ChaCha stream derived from `(seed, i)`, so scenes can be generated in
//! any order or in parallel with identical results.

use std::f64::consts::FRAC_PI_2;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Dataset, Horizon, ScenarioKind, Scene, Split};
use crate::error::{Error, Result};
use crate::geometry::{self, Point, Se2};

const LANE_WIDTH: f64 = 3.5;
const ROUTE_SPACING: f64 = 2.0;
const MAX_LATERAL_ACCEL: f64 = 4.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioWeights {
    pub straight: f64,
    pub left_turn: f64,
    pub right_turn: f64,
    pub intersection_yield: f64,
}

impl Default for ScenarioWeights {
    fn default() -> Self {
        Self {
            straight: 0.25,
            left_turn: 0.25,
            right_turn: 0.25,
            intersection_yield: 0.25,
        }
    }
}

impl ScenarioWeights {
    pub fn as_array(&self) -> [f64; 4] {
        [
            self.straight,
            self.left_turn,
            self.right_turn,
            self.intersection_yield,
        ]
    }

    /// Normalized probability of each entry of [`ScenarioKind::ALL`].
    pub fn probabilities(&self) -> [f64; 4] {
        let w = self.as_array();
        let total: f64 = w.iter().sum();
        w.map(|v| v / total)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    /// Number of scenes to generate.
    pub scenes: usize,
    pub past_steps: usize,
    pub future_steps: usize,
    /// Seconds per step.
    pub dt: f64,
    pub min_vehicles: usize,
    pub max_vehicles: usize,
    /// Speed bounds in m/s.
    pub min_speed: f64,
    pub max_speed: f64,
    /// Turn radius bounds in meters.
    pub min_turn_radius: f64,
    pub max_turn_radius: f64,
    /// Standard deviation of Gaussian noise on observed positions (meters).
    pub noise_sigma: f64,
    /// Probability that the ego brakes in an intersection-yield scene.
    pub yield_probability: f64,
    /// Minimum route length past the ego's final future position (meters).
    pub route_extension: f64,
    /// Place each scene at a random global rotation and translation.
    pub random_pose: bool,
    /// Half-width of the uniform global translation range (meters).
    pub translation_range: f64,
    pub weights: ScenarioWeights,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            scenes: 256,
            past_steps: 4,
            future_steps: 6,
            dt: 0.5,
            min_vehicles: 2,
            max_vehicles: 6,
            min_speed: 3.0,
            max_speed: 15.0,
            min_turn_radius: 10.0,
            max_turn_radius: 40.0,
            noise_sigma: 0.05,
            yield_probability: 0.5,
            route_extension: 30.0,
            random_pose: true,
            translation_range: 100.0,
            weights: ScenarioWeights::default(),
        }
    }
}

impl GeneratorConfig {
    pub fn horizon(&self) -> Horizon {
        Horizon {
            past: self.past_steps,
            future: self.future_steps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        let in_range = |v: f64, lo: f64, hi: f64| v.is_finite() && v >= lo && v <= hi;
        if !in_range(self.min_speed, 2.0, 20.0) {
            bad.push(format!("min_speed {} outside [2, 20] m/s", self.min_speed));
        }
        if !in_range(self.max_speed, 2.0, 20.0) {
            bad.push(format!("max_speed {} outside [2, 20] m/s", self.max_speed));
        }
        if self.min_speed > self.max_speed {
            bad.push("min_speed exceeds max_speed".to_string());
        }
        if !(2..=8).contains(&self.min_vehicles) {
            bad.push(format!("min_vehicles {} outside [2, 8]", self.min_vehicles));
        }
        if !(2..=8).contains(&self.max_vehicles) {
            bad.push(format!("max_vehicles {} outside [2, 8]", self.max_vehicles));
        }
        if self.min_vehicles > self.max_vehicles {
            bad.push("min_vehicles exceeds max_vehicles".to_string());
        }
        if !in_range(self.min_turn_radius, 8.0, 60.0) {
            bad.push(format!(
                "min_turn_radius {} outside [8, 60] m",
                self.min_turn_radius
            ));
        }
        if !in_range(self.max_turn_radius, 8.0, 60.0) {
            bad.push(format!(
                "max_turn_radius {} outside [8, 60] m",
                self.max_turn_radius
            ));
        }
        if self.min_turn_radius > self.max_turn_radius {
            bad.push("min_turn_radius exceeds max_turn_radius".to_string());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            bad.push(format!("noise_sigma {} must be >= 0", self.noise_sigma));
        }
        if self.past_steps < 3 {
            bad.push(format!("past_steps {} must be >= 3", self.past_steps));
        }
        if self.future_steps < 1 {
            bad.push("future_steps must be >= 1".to_string());
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            bad.push(format!("dt {} must be positive", self.dt));
        }
        if !in_range(self.yield_probability, 0.0, 1.0) {
            bad.push(format!(
                "yield_probability {} outside [0, 1]",
                self.yield_probability
            ));
        }
        if !(self.route_extension >= 30.0 && self.route_extension.is_finite()) {
            bad.push(format!(
                "route_extension {} must be >= 30 m",
                self.route_extension
            ));
        }
        if !(self.translation_range >= 0.0 && self.translation_range.is_finite()) {
            bad.push("translation_range must be >= 0".to_string());
        }
        let w = self.weights.as_array();
        if w.iter().any(|v| !(*v >= 0.0 && v.is_finite())) || w.iter().sum::<f64>() <= 0.0 {
            bad.push("weights must be non-negative with a positive sum".to_string());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(bad))
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Segment {
    Line(f64),
    /// Signed turn angle; positive turns left.
    Arc {
        radius: f64,
        angle: f64,
    },
}

impl Segment {
    fn length(&self) -> f64 {
        match *self {
            Segment::Line(l) => l,
            Segment::Arc { radius, angle } => radius * angle.abs(),
        }
    }
}

/// A lane: a start pose followed by straight and circular segments.
/// Arc lengths outside `[0, total]` extrapolate along the end headings.
#[derive(Clone, Debug)]
struct Lane {
    start: Point,
    heading: f64,
    segments: Vec<Segment>,
}

impl Lane {
    fn straight(start: Point, heading: f64) -> Self {
        Self {
            start,
            heading,
            segments: Vec::new(),
        }
    }

    fn then(mut self, seg: Segment) -> Self {
        self.segments.push(seg);
        self
    }

    fn point_at(&self, s: f64) -> Point {
        let dir = |h: f64| [h.cos(), h.sin()];
        if s <= 0.0 {
            return geometry::add(self.start, geometry::scale(dir(self.heading), s));
        }
        let mut pos = self.start;
        let mut heading = self.heading;
        let mut remaining = s;
        for seg in &self.segments {
            let len = seg.length();
            let step = remaining.min(len);
            match *seg {
                Segment::Line(_) => {
                    pos = geometry::add(pos, geometry::scale(dir(heading), step));
                }
                Segment::Arc { radius, angle } => {
                    let sign = angle.signum();
                    let swept = sign * step / radius;
                    let left = [-heading.sin(), heading.cos()];
                    let center = geometry::add(pos, geometry::scale(left, sign * radius));
                    let rel = geometry::sub(pos, center);
                    pos = geometry::add(center, geometry::rotate(rel, swept));
                    heading += swept;
                }
            }
            remaining -= step;
            if remaining <= 0.0 {
                return pos;
            }
        }
        geometry::add(pos, geometry::scale(dir(heading), remaining))
    }
}

/// Arc-length position as a function of time.
#[derive(Clone, Copy, Debug)]
enum Motion {
    Constant {
        s0: f64,
        speed: f64,
    },
    /// Constant speed until `t = 0`, then braking to a stop.
    Brake {
        s0: f64,
        speed: f64,
        decel: f64,
    },
}

impl Motion {
    fn s_at(&self, t: f64) -> f64 {
        match *self {
            Motion::Constant { s0, speed } => s0 + speed * t,
            Motion::Brake { s0, speed, decel } => {
                if t <= 0.0 {
                    s0 + speed * t
                } else {
                    let t = t.min(speed / decel);
                    s0 + speed * t - 0.5 * decel * t * t
                }
            }
        }
    }
}

struct Agent {
    lane: Lane,
    motion: Motion,
}

impl Agent {
    fn position(&self, t: f64) -> Point {
        self.lane.point_at(self.motion.s_at(t))
    }
}

/// Generates `config.scenes` scenes from `seed`.
pub fn generate_synthetic(config: &GeneratorConfig, seed: u64) -> Result<Dataset> {
    config.validate()?;
    let scenes = (0..config.scenes)
        .into_par_iter()
        .map(|i| generate_scene(config, seed, i as u64))
        .collect();
    Ok(Dataset {
        scenes,
        split: Split::Train,
        seed: Some(seed),
    })
}

fn generate_scene(config: &GeneratorConfig, seed: u64, index: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);

    let kinds = WeightedIndex::new(config.weights.as_array()).expect("validated weights");
    let kind = ScenarioKind::ALL[kinds.sample(&mut rng)];
    let m = rng.gen_range(config.min_vehicles..=config.max_vehicles);
    let horizon_t = config.future_steps as f64 * config.dt;

    let (ego, route_lane) = ego_agent(config, kind, &mut rng);
    let mut agents = vec![ego];
    if kind == ScenarioKind::IntersectionYield {
        agents.push(crossing_agent(config, &agents[0], &mut rng));
    }
    while agents.len() < m {
        let a = surrounding_agent(config, &route_lane, &mut rng);
        agents.push(a);
    }

    let noise = Normal::new(0.0, config.noise_sigma.max(0.0)).expect("finite sigma");
    let past_t = |k: usize| (k as f64 + 1.0 - config.past_steps as f64) * config.dt;
    let future_t = |k: usize| (k as f64 + 1.0) * config.dt;

    let mut past = Vec::with_capacity(m);
    let mut future = Vec::with_capacity(m);
    for a in &agents {
        past.push(
            (0..config.past_steps)
                .map(|k| {
                    let p = a.position(past_t(k));
                    if config.noise_sigma > 0.0 {
                        [p[0] + noise.sample(&mut rng), p[1] + noise.sample(&mut rng)]
                    } else {
                        p
                    }
                })
                .collect(),
        );
        future.push(
            (0..config.future_steps)
                .map(|k| a.position(future_t(k)))
                .collect(),
        );
    }

    // Route from just behind the first observation to well past the last
    // future position.
    let ego_motion = agents[0].motion;
    let s_begin = ego_motion.s_at(past_t(0)) - 5.0;
    let s_end = ego_motion.s_at(horizon_t) + config.route_extension + rng.gen_range(0.0..20.0);
    let n = ((s_end - s_begin) / ROUTE_SPACING).ceil() as usize;
    let route: Vec<Point> = (0..=n)
        .map(|k| route_lane.point_at(s_begin + (s_end - s_begin) * k as f64 / n as f64))
        .collect();

    let scene = Scene {
        past,
        future,
        route,
        ego_index: 0,
        dt: config.dt,
        kind: Some(kind),
    };
    if config.random_pose {
        let r = config.translation_range;
        let theta = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        let t = if r > 0.0 {
            [rng.gen_range(-r..r), rng.gen_range(-r..r)]
        } else {
            [0.0, 0.0]
        };
        scene.apply_se2(&Se2::new(theta, t))
    } else {
        scene
    }
}

fn sample_speed(config: &GeneratorConfig, rng: &mut impl Rng, cap: f64) -> f64 {
    let hi = config.max_speed.min(cap).max(config.min_speed);
    if hi > config.min_speed {
        rng.gen_range(config.min_speed..hi)
    } else {
        config.min_speed
    }
}

/// The ego vehicle at `s = 0` sits at the origin heading along +x when
/// `t = 0`. Returns the agent and the lane its route follows.
fn ego_agent(config: &GeneratorConfig, kind: ScenarioKind, rng: &mut impl Rng) -> (Agent, Lane) {
    let t_f = config.future_steps as f64 * config.dt;
    let past_span = (config.past_steps - 1) as f64 * config.dt;
    // Lane starts far enough behind so the whole past lies on it.
    let back = config.max_speed * past_span + 10.0;
    let origin = [-back, 0.0];
    let radius = rng.gen_range(config.min_turn_radius..=config.max_turn_radius);

    let (lane, speed, motion_kind) = match kind {
        ScenarioKind::Straight => {
            let speed = sample_speed(config, rng, f64::INFINITY);
            (Lane::straight(origin, 0.0), speed, None)
        }
        ScenarioKind::LeftTurn | ScenarioKind::RightTurn => {
            let speed = sample_speed(config, rng, (MAX_LATERAL_ACCEL * radius).sqrt());
            let sign = if kind == ScenarioKind::LeftTurn {
                1.0
            } else {
                -1.0
            };
            let approach = rng.gen_range(0.0..0.8) * speed * t_f;
            let lane = Lane::straight(origin, 0.0)
                .then(Segment::Line(back + approach))
                .then(Segment::Arc {
                    radius,
                    angle: sign * FRAC_PI_2,
                });
            (lane, speed, None)
        }
        ScenarioKind::IntersectionYield => {
            let speed = sample_speed(config, rng, f64::INFINITY);
            let brakes = rng.gen_bool(config.yield_probability);
            let decel = rng.gen_range(2.0..4.0);
            (Lane::straight(origin, 0.0), speed, brakes.then_some(decel))
        }
    };
    let motion = match motion_kind {
        Some(decel) => Motion::Brake {
            s0: back,
            speed,
            decel,
        },
        None => Motion::Constant { s0: back, speed },
    };
    let agent = Agent {
        lane: lane.clone(),
        motion,
    };
    (agent, lane)
}

/// A vehicle on the perpendicular lane crossing the ego's path ahead.
fn crossing_agent(config: &GeneratorConfig, ego: &Agent, rng: &mut impl Rng) -> Agent {
    let ego_speed = match ego.motion {
        Motion::Constant { speed, .. } | Motion::Brake { speed, .. } => speed,
    };
    let gap = (ego_speed * rng.gen_range(1.0..2.5)).max(8.0);
    let crossing = [gap, 0.0];
    let from_right = rng.gen_bool(0.5);
    let heading = if from_right { FRAC_PI_2 } else { -FRAC_PI_2 };
    let speed = sample_speed(config, rng, f64::INFINITY);
    let arrival = rng.gen_range(0.5..2.5);
    let back = 200.0;
    let start = geometry::sub(
        crossing,
        geometry::scale([heading.cos(), heading.sin()], back),
    );
    Agent {
        lane: Lane::straight(start, heading),
        motion: Motion::Constant {
            s0: back - speed * arrival,
            speed,
        },
    }
}

fn surrounding_agent(config: &GeneratorConfig, ego_lane: &Lane, rng: &mut impl Rng) -> Agent {
    let speed = sample_speed(config, rng, f64::INFINITY);
    let back = 200.0;
    match rng.gen_range(0..4) {
        // Leading vehicle on the ego's own lane.
        0 => {
            let ego_s = config.max_speed * (config.past_steps - 1) as f64 * config.dt + 10.0;
            Agent {
                lane: ego_lane.clone(),
                motion: Motion::Constant {
                    s0: ego_s + rng.gen_range(10.0..30.0),
                    speed,
                },
            }
        }
        // Neighboring lane, same direction.
        1 => {
            let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            Agent {
                lane: Lane::straight([-back, side * LANE_WIDTH], 0.0),
                motion: Motion::Constant {
                    s0: back + rng.gen_range(-20.0..20.0),
                    speed,
                },
            }
        }
        // Oncoming, possibly turning across.
        2 => {
            let mut lane = Lane::straight([back, LANE_WIDTH], std::f64::consts::PI);
            let ahead = rng.gen_range(10.0..50.0);
            if rng.gen_bool(0.4) {
                let radius = rng.gen_range(config.min_turn_radius..=config.max_turn_radius);
                let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                lane = lane
                    .then(Segment::Line(back - ahead + rng.gen_range(-10.0..5.0)))
                    .then(Segment::Arc {
                        radius,
                        angle: sign * FRAC_PI_2,
                    });
            }
            Agent {
                lane,
                motion: Motion::Constant {
                    s0: back - ahead,
                    speed,
                },
            }
        }
        // Parked or slow vehicle on a curved side lane.
        _ => {
            let radius = rng.gen_range(config.min_turn_radius..=config.max_turn_radius);
            let start = [rng.gen_range(-30.0..30.0), rng.gen_range(-30.0..30.0)];
            let heading = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            Agent {
                lane: Lane::straight(start, heading).then(Segment::Arc {
                    radius,
                    angle: sign * FRAC_PI_2,
                }),
                motion: Motion::Constant { s0: 0.0, speed },
            }
        }
    }
}
