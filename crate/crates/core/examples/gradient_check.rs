//! Compares every backpropagated parameter gradient of the training loss
//! with central finite differences on a tiny model.
//!
//! ```text
//! cargo run --release --example gradient_check
//! ```

use pep::decode::ScoreMode;
use pep::model::{Model, ModelConfig, ModelOptions, ModelParams};
use pep::scene::{generate_synthetic, GeneratorConfig};
use pep::train::loss::{scene_gradient, LossConfig};

/// Gradients smaller than this are compared in absolute terms; below it
/// the finite difference is dominated by rounding in the loss.
const FLOOR: f64 = 1e-3;

fn main() -> pep::Result<()> {
    let gen = GeneratorConfig {
        scenes: 1,
        min_vehicles: 3,
        max_vehicles: 3,
        ..Default::default()
    };
    let scene = generate_synthetic(&gen, 5)?.scenes.remove(0);
    let config = ModelConfig {
        coord_dim: 8,
        hidden_dim: 8,
        modes: 2,
        blocks: 2,
        ..Default::default()
    };
    let loss = LossConfig {
        score_mode: ScoreMode::Invariant,
        ..Default::default()
    };
    let mut model = Model::new(ModelParams::init(config, 1)?, ModelOptions::default());
    let (_, grads) = scene_gradient(&model, &scene, &loss)?;
    let analytic: Vec<Vec<f64>> = grads.leaves().iter().map(|t| t.data().to_vec()).collect();
    let names = model.params.tensors.names();

    let h = 1e-5;
    let mut worst = (0.0f64, String::new());
    let mut checked = 0;
    for (leaf, (name, _)) in names.iter().enumerate() {
        let len = analytic[leaf].len();
        for idx in 0..len {
            let eval = |delta: f64, model: &mut Model| -> pep::Result<f64> {
                model.params.tensors.leaves_mut()[leaf].data_mut()[idx] += delta;
                let (b, _) = scene_gradient(model, &scene, &loss)?;
                model.params.tensors.leaves_mut()[leaf].data_mut()[idx] -= delta;
                Ok(b.total)
            };
            let plus = eval(h, &mut model)?;
            let minus = eval(-h, &mut model)?;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[leaf][idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
            if rel > worst.0 {
                worst = (
                    rel,
                    format!("{name}[{idx}] analytic {a:.6e} numeric {numeric:.6e}"),
                );
            }
            checked += 1;
        }
    }
    println!("checked {checked} parameters in {} tensors", names.len());
    println!("worst relative error {:.3e} at {}", worst.0, worst.1);
    Ok(())
}
