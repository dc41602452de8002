//! Rotates and translates a scene over the full angle grid and checks that
//! every decoded mode moves with it. Also shows the same sweep with the
//! mean subtraction disabled, which breaks the symmetry.
//!
//! ```text
//! cargo run --release --example equivariance_sweep
//! ```

use std::time::Instant;

use pep::decode::ScoreMode;
use pep::eval::{equivariance_sweep, EvalConfig};
use pep::model::{Model, ModelConfig, ModelOptions, ModelParams};
use pep::scene::{generate_synthetic, GeneratorConfig};

fn main() -> pep::Result<()> {
    let data = generate_synthetic(
        &GeneratorConfig {
            scenes: 1,
            ..Default::default()
        },
        3,
    )?;
    let config = ModelConfig {
        coord_dim: 16,
        hidden_dim: 16,
        ..Default::default()
    };
    let params = ModelParams::init(config, 0)?;
    let eval = EvalConfig::default();

    for (label, options) in [
        ("equivariant", ModelOptions::default()),
        (
            "uncentered ",
            ModelOptions {
                equivariant_init: false,
                ..Default::default()
            },
        ),
    ] {
        let model = Model::new(params.clone(), options);
        let start = Instant::now();
        let curve = equivariance_sweep(&model, &data.scenes, ScoreMode::CoordinateMean, &eval)?;
        println!(
            "{label}: max mode deviation {:.3e} m, mean {:.3e} m, plan {:.3e} m, flips {}, {:.1}s",
            curve.max_mode_deviation(),
            curve.mean_mode_deviation(),
            curve.max_plan_deviation(),
            curve.selection_flips(),
            start.elapsed().as_secs_f64()
        );
        for row in curve.rows.iter().filter(|r| r.theta_deg % 90 == 45) {
            println!("    {:>3} deg  {:.3e} m", row.theta_deg, row.mode_deviation);
        }
    }
    Ok(())
}
