//! Trains briefly, saves a checkpoint, restores it and writes the same
//! per-scene report from both copies.
//!
//! ```text
//! cargo run --release --example checkpoint_eval
//! ```

use pep::decode::ScoreMode;
use pep::eval::{evaluate, EvalConfig};
use pep::model::ModelConfig;
use pep::scene::{generate_synthetic, GeneratorConfig};
use pep::train::{TrainConfig, Trainer};

fn main() -> pep::Result<()> {
    let dir = std::env::temp_dir().join("pep-checkpoint-example");
    std::fs::create_dir_all(&dir).map_err(|e| pep::Error::io(&dir, e))?;
    let train = generate_synthetic(
        &GeneratorConfig {
            scenes: 64,
            ..Default::default()
        },
        1,
    )?;
    let test = generate_synthetic(
        &GeneratorConfig {
            scenes: 32,
            ..Default::default()
        },
        2,
    )?;

    let model = ModelConfig {
        coord_dim: 8,
        hidden_dim: 8,
        ..Default::default()
    };
    let config = TrainConfig {
        epochs: 5,
        batch_size: 16,
        lr0: 3e-3,
        ..Default::default()
    };
    let mut trainer = Trainer::new(model, config, ScoreMode::Invariant)?;
    trainer.fit(&train, |_, r| {
        println!("epoch {} loss {:.4}", r.epoch, r.loss);
        Ok(())
    })?;
    let path = dir.join("checkpoint.json");
    trainer.save(&path)?;
    let restored = Trainer::load(&path)?;

    let eval = EvalConfig::default();
    let a = evaluate(&trainer.model, &test, trainer.score_mode, &eval)?;
    let b = evaluate(&restored.model, &test, restored.score_mode, &eval)?;
    assert_eq!(a.to_csv(), b.to_csv());
    let report = dir.join("report.csv");
    std::fs::write(&report, b.to_csv()).map_err(|e| pep::Error::io(&report, e))?;
    println!("{}", b.summary());
    println!("checkpoint {}, report {}", path.display(), report.display());
    Ok(())
}
