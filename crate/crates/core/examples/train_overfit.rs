//! Overfits 32 synthetic scenes and prints the loss curve.
//!
//! ```text
//! cargo run --release --example train_overfit -- 500
//! ```

use std::time::Instant;

use pep::decode::ScoreMode;
use pep::eval::{evaluate, EvalConfig};
use pep::model::ModelConfig;
use pep::scene::{generate_synthetic, GeneratorConfig};
use pep::train::{TrainConfig, Trainer};

fn main() -> pep::Result<()> {
    let epochs: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(500);
    let data = generate_synthetic(
        &GeneratorConfig {
            scenes: 32,
            ..Default::default()
        },
        1,
    )?;
    let model = ModelConfig {
        coord_dim: 16,
        hidden_dim: 16,
        modes: 6,
        blocks: 4,
        ..Default::default()
    };
    let config = TrainConfig {
        epochs,
        batch_size: 32,
        lr0: 3e-3,
        lr_decay_every: 20,
        seed: 1,
        ..Default::default()
    };
    let mut trainer = Trainer::new(model, config, ScoreMode::CoordinateMean)?;
    let start = Instant::now();
    trainer.fit(&data, |_, r| {
        if r.epoch % 25 == 0 || r.epoch == 1 {
            println!(
                "epoch {:>4}  lr {:.2e}  loss {:>8.4}  l2_avg {:.4} m  {:.1}s",
                r.epoch,
                r.lr,
                r.loss,
                r.l2_avg,
                start.elapsed().as_secs_f64()
            );
        }
        Ok(())
    })?;
    let report = evaluate(
        &trainer.model,
        &data,
        ScoreMode::CoordinateMean,
        &EvalConfig::default(),
    )?;
    println!("training set: {}", report.summary());
    Ok(())
}
