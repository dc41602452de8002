//! Scenes, datasets and their SE(2) action.

mod generator;
mod io;
mod route;

pub use generator::{generate_synthetic, GeneratorConfig, ScenarioWeights};
pub use io::{load_scenes, parse_scenes, save_scenes, scenes_to_string};
pub use route::{resample_route, RouteEmbedding};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, Point, Se2};

/// Number of observed and predicted positions per vehicle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Horizon {
    pub past: usize,
    pub future: usize,
}

impl Default for Horizon {
    fn default() -> Self {
        Self { past: 4, future: 6 }
    }
}

impl Horizon {
    pub fn total(&self) -> usize {
        self.past + self.future
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Straight,
    LeftTurn,
    RightTurn,
    IntersectionYield,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 4] = [
        ScenarioKind::Straight,
        ScenarioKind::LeftTurn,
        ScenarioKind::RightTurn,
        ScenarioKind::IntersectionYield,
    ];

    pub fn is_turn(self) -> bool {
        matches!(self, ScenarioKind::LeftTurn | ScenarioKind::RightTurn)
    }
}

/// One traffic scene. Vehicle 0 is the ego vehicle.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    /// `M × T_p` observed positions in meters.
    pub past: Vec<Vec<Point>>,
    /// `M × T_f` ground-truth future positions in meters.
    pub future: Vec<Vec<Point>>,
    /// Ego route polyline in meters.
    pub route: Vec<Point>,
    pub ego_index: usize,
    /// Seconds between consecutive positions.
    pub dt: f64,
    /// Generator scenario, when known.
    pub kind: Option<ScenarioKind>,
}

impl Scene {
    pub fn num_vehicles(&self) -> usize {
        self.past.len()
    }

    pub fn horizon(&self) -> Horizon {
        Horizon {
            past: self.past.first().map_or(0, Vec::len),
            future: self.future.first().map_or(0, Vec::len),
        }
    }

    pub fn ego_future(&self) -> &[Point] {
        &self.future[self.ego_index]
    }

    /// Collects every violated invariant instead of stopping at the first.
    pub fn validate(&self, horizon: Horizon) -> Result<()> {
        let mut problems = Vec::new();
        let m = self.past.len();
        if m < 2 {
            problems.push(format!("scene needs at least 2 vehicles, got {m}"));
        }
        if self.future.len() != m {
            problems.push(format!(
                "{} past tracks but {} future tracks",
                m,
                self.future.len()
            ));
        }
        for (i, (p, f)) in self.past.iter().zip(&self.future).enumerate() {
            if p.len() != horizon.past || f.len() != horizon.future {
                problems.push(format!(
                    "vehicle {i}: expected {} points, got {}",
                    horizon.total(),
                    p.len() + f.len()
                ));
            }
        }
        if self.ego_index != 0 {
            problems.push(format!("ego index must be 0, got {}", self.ego_index));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            problems.push(format!("dt must be positive, got {}", self.dt));
        }
        if route::arc_length(&self.route) <= 0.0 {
            problems.push("route needs at least 2 distinct waypoints".to_string());
        }
        let finite = self
            .past
            .iter()
            .chain(&self.future)
            .flatten()
            .chain(&self.route)
            .all(|p| p[0].is_finite() && p[1].is_finite());
        if !finite {
            problems.push("non-finite coordinate".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }

    /// Maps every past, future and route point through `g`.
    pub fn apply_se2(&self, g: &Se2) -> Scene {
        let map = |tracks: &Vec<Vec<Point>>| tracks.iter().map(|t| g.apply_all(t)).collect();
        Scene {
            past: map(&self.past),
            future: map(&self.future),
            route: g.apply_all(&self.route),
            ego_index: self.ego_index,
            dt: self.dt,
            kind: self.kind,
        }
    }

    /// Mean of all `M·T_p` observed positions.
    pub fn past_mean(&self) -> Point {
        let all: Vec<Point> = self.past.iter().flatten().copied().collect();
        geometry::mean(&all)
    }
}

/// Convenience wrapper matching the free-function form `apply_se2(scene, θ, t)`.
pub fn apply_se2(scene: &Scene, theta: f64, t: Point) -> Scene {
    scene.apply_se2(&Se2::new(theta, t))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    #[default]
    Train,
    Test,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub scenes: Vec<Scene>,
    pub split: Split,
    /// Generator seed, when the dataset is synthetic.
    pub seed: Option<u64>,
}

impl Dataset {
    pub fn new(scenes: Vec<Scene>) -> Self {
        Self {
            scenes,
            split: Split::Train,
            seed: None,
        }
    }

    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    pub fn filter_kind(&self, pred: impl Fn(ScenarioKind) -> bool) -> Dataset {
        Dataset {
            scenes: self
                .scenes
                .iter()
                .filter(|s| s.kind.is_some_and(&pred))
                .cloned()
                .collect(),
            split: self.split,
            seed: self.seed,
        }
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_scene(rng: &mut impl Rng, m: usize) -> Scene {
        let mut pt = || [rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0)];
        let past = (0..m).map(|_| (0..4).map(|_| pt()).collect()).collect();
        let future = (0..m).map(|_| (0..6).map(|_| pt()).collect()).collect();
        let route = (0..7).map(|_| pt()).collect();
        Scene {
            past,
            future,
            route,
            ego_index: 0,
            dt: 0.5,
            kind: None,
        }
    }

    fn all_points(s: &Scene) -> Vec<Point> {
        s.past
            .iter()
            .chain(&s.future)
            .flatten()
            .chain(&s.route)
            .copied()
            .collect()
    }

    #[test]
    fn identity_element_leaves_scene_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = random_scene(&mut rng, 3);
        assert_eq!(apply_se2(&s, 0.0, [0.0, 0.0]), s);
    }

    #[test]
    fn validation_reports_track_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = random_scene(&mut rng, 2);
        s.past[1].pop();
        let err = s.validate(Horizon::default()).unwrap_err().to_string();
        assert!(err.contains("expected 10 points, got 9"), "{err}");
    }

    #[test]
    fn validation_rejects_single_vehicle_and_degenerate_route() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut s = random_scene(&mut rng, 1);
        s.route = vec![[1.0, 1.0], [1.0, 1.0]];
        match s.validate(Horizon::default()) {
            Err(Error::Validation(p)) => assert_eq!(p.len(), 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn group_inverse_restores_scene(theta in -7.0..7.0f64, tx in -100.0..100.0f64,
                                        ty in -100.0..100.0f64, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random_scene(&mut rng, 3);
            let g = Se2::new(theta, [tx, ty]);
            let back = s.apply_se2(&g).apply_se2(&g.inverse());
            for (a, b) in all_points(&s).iter().zip(all_points(&back)) {
                prop_assert!(geometry::dist(*a, b) < 1e-12);
            }
        }

        #[test]
        fn transform_preserves_pairwise_distances(theta in -7.0..7.0f64, tx in -100.0..100.0f64,
                                                  ty in -100.0..100.0f64, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random_scene(&mut rng, 3);
            let a = all_points(&s);
            let b = all_points(&apply_se2(&s, theta, [tx, ty]));
            for i in 0..a.len() {
                for j in (i + 1)..a.len() {
                    let d0 = geometry::dist(a[i], a[j]);
                    let d1 = geometry::dist(b[i], b[j]);
                    prop_assert!((d0 - d1).abs() < 1e-12);
                }
            }
        }
    }
}
