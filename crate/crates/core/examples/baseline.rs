//! Constant-velocity baseline per scenario type.
//!
//! ```text
//! cargo run --release --example baseline
//! ```

use pep::eval::{evaluate_baseline, EvalConfig};
use pep::scene::{generate_synthetic, GeneratorConfig, ScenarioKind};

fn main() -> pep::Result<()> {
    let data = generate_synthetic(
        &GeneratorConfig {
            scenes: 512,
            ..Default::default()
        },
        12,
    )?;
    let eval = EvalConfig::default();
    println!(
        "{:<18} {:>6} {:>8} {:>8} {:>8}",
        "scenario", "scenes", "l2_3s", "l2_avg", "cr_avg"
    );
    for kind in ScenarioKind::ALL {
        let subset = data.filter_kind(|k| k == kind);
        if subset.is_empty() {
            continue;
        }
        let r = evaluate_baseline(&subset, &eval)?;
        println!(
            "{:<18} {:>6} {:>8.3} {:>8.3} {:>8.4}",
            format!("{kind:?}"),
            r.scenes,
            r.l2_3s,
            r.l2_avg,
            r.cr_avg
        );
    }
    let all = evaluate_baseline(&data, &eval)?;
    println!("all: {}", all.summary());
    Ok(())
}
