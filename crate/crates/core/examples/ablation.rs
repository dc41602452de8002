//! Trains the full model and the two ablations (no prediction loss, no
//! route attraction) on the same synthetic set and compares held-out
//! errors, plus the constant-velocity baseline on turning scenes.
//!
//! ```text
//! cargo run --release --example ablation -- 30
//! ```

use std::time::Instant;

use pep::decode::ScoreMode;
use pep::eval::{evaluate, evaluate_baseline, EvalConfig};
use pep::model::ModelConfig;
use pep::scene::{generate_synthetic, GeneratorConfig};
use pep::train::{TrainConfig, Trainer};

fn main() -> pep::Result<()> {
    let epochs: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(30);
    let gen = GeneratorConfig {
        scenes: 2048,
        ..Default::default()
    };
    let train = generate_synthetic(&gen, 11)?;
    let test = generate_synthetic(
        &GeneratorConfig {
            scenes: 512,
            ..gen.clone()
        },
        12,
    )?;
    let turns = test.filter_kind(|k| k.is_turn());
    let model = ModelConfig {
        coord_dim: 16,
        hidden_dim: 16,
        ..Default::default()
    };
    let eval = EvalConfig::default();

    let cv = evaluate_baseline(&test, &eval)?;
    let cv_turns = evaluate_baseline(&turns, &eval)?;
    println!(
        "{:<10} l2_3s {:.3}  l2_avg {:.3}  turns l2_3s {:.3}",
        "cv", cv.l2_3s, cv.l2_avg, cv_turns.l2_3s
    );
    for (name, prediction_loss, route_attraction) in [
        ("full", true, true),
        ("pred-off", false, true),
        ("route-off", true, false),
    ] {
        let config = TrainConfig {
            epochs,
            batch_size: 32,
            lr0: 3e-3,
            lr_decay_every: (epochs / 5).max(1),
            seed: 5,
            prediction_loss,
            route_attraction,
            ..Default::default()
        };
        let start = Instant::now();
        let mut trainer = Trainer::new(model, config, ScoreMode::Invariant)?;
        trainer.fit(&train, |_, _| Ok(()))?;
        let all = evaluate(&trainer.model, &test, ScoreMode::Invariant, &eval)?;
        let t = evaluate(&trainer.model, &turns, ScoreMode::Invariant, &eval)?;
        println!(
            "{:<10} l2_3s {:.3}  l2_avg {:.3}  turns l2_3s {:.3}  selection {:.3}  ({:.0}s)",
            name,
            all.l2_3s,
            all.l2_avg,
            t.l2_3s,
            all.selection_accuracy,
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
