//! Generates a synthetic scene file and prints what is in it.
//!
//! ```text
//! cargo run --example generate_scenes -- 64 7 /tmp/scenes.jsonl
//! ```

use std::collections::BTreeMap;

use pep::scene::{generate_synthetic, load_scenes, save_scenes, GeneratorConfig};

fn main() -> pep::Result<()> {
    let mut args = std::env::args().skip(1);
    let scenes: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(64);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(7);
    let out = args.next().unwrap_or_else(|| {
        std::env::temp_dir()
            .join("pep-scenes.jsonl")
            .display()
            .to_string()
    });

    let config = GeneratorConfig {
        scenes,
        ..Default::default()
    };
    let data = generate_synthetic(&config, seed)?;
    save_scenes(&data, &out)?;

    let mut kinds: BTreeMap<String, usize> = BTreeMap::new();
    let mut vehicles = 0;
    for s in &data.scenes {
        let kind = s.kind.map_or("unknown".to_string(), |k| format!("{k:?}"));
        *kinds.entry(kind).or_default() += 1;
        vehicles += s.num_vehicles();
    }
    println!("{} scenes, seed {seed}, written to {out}", data.len());
    for (kind, n) in &kinds {
        println!("  {kind:<18} {n}");
    }
    if !data.is_empty() {
        println!(
            "  mean vehicles per scene {:.2}",
            vehicles as f64 / data.len() as f64
        );
    }

    // Reading the file back gives the same scenes.
    let back = load_scenes(&out, config.horizon())?;
    assert_eq!(back.scenes, data.scenes);
    println!("reloaded {} scenes, identical", back.len());
    Ok(())
}
