//! Trains on the synthetic mix and measures how far apart the ego modes
//! are on intersection scenes, where the ego may either yield or go.
//!
//! ```text
//! cargo run --release --example mode_diversity -- 30
//! ```

use pep::decode::ScoreMode;
use pep::geometry::mean_dist;
use pep::model::ModelConfig;
use pep::scene::{generate_synthetic, GeneratorConfig, ScenarioKind};
use pep::train::{TrainConfig, Trainer};

fn main() -> pep::Result<()> {
    let epochs: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(30);
    let gen = GeneratorConfig {
        scenes: 1024,
        ..Default::default()
    };
    let train = generate_synthetic(&gen, 11)?;
    let test = generate_synthetic(
        &GeneratorConfig {
            scenes: 256,
            ..gen.clone()
        },
        12,
    )?
    .filter_kind(|k| k == ScenarioKind::IntersectionYield);
    let config = TrainConfig {
        epochs,
        batch_size: 32,
        lr0: 3e-3,
        lr_decay_every: (epochs / 5).max(1),
        seed: 5,
        ..Default::default()
    };
    let model = ModelConfig {
        coord_dim: 16,
        hidden_dim: 16,
        ..Default::default()
    };
    let mut trainer = Trainer::new(model, config, ScoreMode::Invariant)?;
    trainer.fit(&train, |_, _| Ok(()))?;

    let mut spreads = Vec::new();
    for scene in &test.scenes {
        let p = trainer.model.predict(scene, ScoreMode::Invariant)?;
        let k = p.modes.modes();
        let ego: Vec<_> = (0..k).map(|m| p.modes.trajectory(m, 0)).collect();
        let mut widest = 0.0f64;
        for a in 0..k {
            for b in a + 1..k {
                widest = widest.max(mean_dist(&ego[a], &ego[b]));
            }
        }
        spreads.push(widest);
    }
    spreads.sort_by(f64::total_cmp);
    let n = spreads.len();
    if n == 0 {
        println!("no intersection scenes in the test set");
        return Ok(());
    }
    println!("{n} intersection scenes; widest ego-mode pair per scene (l2_avg):");
    println!(
        "  min {:.3} m, median {:.3} m, max {:.3} m",
        spreads[0],
        spreads[n / 2],
        spreads[n - 1]
    );
    let diverse = spreads.iter().filter(|&&s| s > 0.5).count();
    println!("  {diverse}/{n} scenes have two modes more than 0.5 m apart");
    Ok(())
}
