//! Shows how the route steers the plan: the same scene is planned with its
//! own route, with the route mirrored to the other side, and with route
//! attraction switched off (where the route has no effect).
//!
//! ```text
//! cargo run --release --example route_attraction
//! ```

use pep::decode::ScoreMode;
use pep::geometry::{mean_dist, Point};
use pep::model::{Model, ModelConfig, ModelOptions, ModelParams};
use pep::scene::{generate_synthetic, GeneratorConfig, ScenarioWeights};

fn mirrored(route: &[Point], origin: Point, heading: Point) -> Vec<Point> {
    // Reflect across the line through `origin` along `heading`.
    let n = (heading[0].hypot(heading[1])).max(1e-12);
    let u = [heading[0] / n, heading[1] / n];
    route
        .iter()
        .map(|p| {
            let d = [p[0] - origin[0], p[1] - origin[1]];
            let along = d[0] * u[0] + d[1] * u[1];
            let foot = [origin[0] + along * u[0], origin[1] + along * u[1]];
            [2.0 * foot[0] - p[0], 2.0 * foot[1] - p[1]]
        })
        .collect()
}

fn main() -> pep::Result<()> {
    let gen = GeneratorConfig {
        scenes: 1,
        weights: ScenarioWeights {
            straight: 0.0,
            left_turn: 1.0,
            right_turn: 0.0,
            intersection_yield: 0.0,
        },
        ..Default::default()
    };
    let scene = generate_synthetic(&gen, 2)?.scenes.remove(0);
    let past = &scene.past[0];
    let last = past[past.len() - 1];
    let prev = past[past.len() - 2];
    let mut other = scene.clone();
    other.route = mirrored(&scene.route, last, [last[0] - prev[0], last[1] - prev[1]]);

    let config = ModelConfig {
        coord_dim: 16,
        hidden_dim: 16,
        ..Default::default()
    };
    let params = ModelParams::init(config, 4)?;
    for (label, route_attraction) in [
        ("route attraction on ", true),
        ("route attraction off", false),
    ] {
        let model = Model::new(
            params.clone(),
            ModelOptions {
                route_attraction,
                ..Default::default()
            },
        );
        let a = model.predict(&scene, ScoreMode::CoordinateMean)?;
        let b = model.predict(&other, ScoreMode::CoordinateMean)?;
        let mut shift = 0.0f64;
        for k in 0..a.modes.modes() {
            shift = shift.max(mean_dist(
                &a.modes.trajectory(k, 0),
                &b.modes.trajectory(k, 0),
            ));
        }
        println!("{label}: largest ego-mode change after mirroring the route {shift:.4} m");
    }
    Ok(())
}
