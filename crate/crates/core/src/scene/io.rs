//! Scene files: UTF-8, one JSON object per line.
//!
//! ```text
//! {"vehicles":[[[x,y],...],...],"route":[[x,y],...],"ego":0,"dt":0.5}
//! ```
//!
//! Each vehicle carries `T_p + T_f` points, past first. An optional
//! `scenario` tag records the generator scenario. Blank lines are skipped.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, Horizon, ScenarioKind, Scene};
use crate::error::{Error, Result};
use crate::geometry::Point;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    vehicles: Vec<Vec<Point>>,
    route: Vec<Point>,
    ego: usize,
    dt: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scenario: Option<ScenarioKind>,
}

fn to_record(scene: &Scene) -> Record {
    Record {
        vehicles: scene
            .past
            .iter()
            .zip(&scene.future)
            .map(|(p, f)| p.iter().chain(f).copied().collect())
            .collect(),
        route: scene.route.clone(),
        ego: scene.ego_index,
        dt: scene.dt,
        scenario: scene.kind,
    }
}

pub fn scenes_to_string(dataset: &Dataset) -> String {
    let mut out = String::new();
    for s in &dataset.scenes {
        out.push_str(&serde_json::to_string(&to_record(s)).expect("scene serializes"));
        out.push('\n');
    }
    out
}

/// Writes the dataset atomically (temporary file, then rename).
pub fn save_scenes(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    crate::train::write_atomic(path, scenes_to_string(dataset).as_bytes())
}

pub fn load_scenes(path: impl AsRef<Path>, horizon: Horizon) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scenes(&text, horizon, &path.display().to_string())
}

/// Parses scene lines; `origin` names the source in error messages.
pub fn parse_scenes(text: &str, horizon: Horizon, origin: &str) -> Result<Dataset> {
    let mut scenes = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |field: &str, message: String| Error::Parse {
            path: origin.to_string(),
            line: line_no,
            field: field.to_string(),
            message,
        };
        let rec: Record = serde_json::from_str(line).map_err(|e| {
            let msg = e.to_string();
            let field = ["vehicles", "route", "ego", "dt", "scenario"]
                .into_iter()
                .find(|f| msg.contains(&format!("`{f}`")))
                .unwrap_or("record");
            parse_err(field, msg)
        })?;
        for (i, v) in rec.vehicles.iter().enumerate() {
            if v.len() != horizon.total() {
                return Err(parse_err(
                    "vehicles",
                    format!(
                        "vehicle {i}: expected {} points, got {}",
                        horizon.total(),
                        v.len()
                    ),
                ));
            }
        }
        let scene = Scene {
            past: rec
                .vehicles
                .iter()
                .map(|v| v[..horizon.past].to_vec())
                .collect(),
            future: rec
                .vehicles
                .iter()
                .map(|v| v[horizon.past..].to_vec())
                .collect(),
            route: rec.route,
            ego_index: rec.ego,
            dt: rec.dt,
            kind: rec.scenario,
        };
        if let Err(Error::Validation(problems)) = scene.validate(horizon) {
            return Err(parse_err("scene", problems.join("; ")));
        }
        scenes.push(scene);
    }
    Ok(Dataset::new(scenes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::tests::random_scene;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::io::Write;

    fn write_scene_line(mut w: impl Write, scene: &Scene) -> std::io::Result<()> {
        serde_json::to_writer(&mut w, &to_record(scene))?;
        w.write_all(b"\n")
    }

    #[test]
    fn empty_file_is_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        fs::write(&path, "").unwrap();
        let ds = load_scenes(&path, Horizon::default()).unwrap();
        assert!(ds.is_empty());
    }

    #[test]
    fn save_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one.jsonl");
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut scene = random_scene(&mut rng, 3);
        scene.kind = Some(ScenarioKind::LeftTurn);
        let ds = Dataset::new(vec![scene]);
        save_scenes(&ds, &path).unwrap();
        let back = load_scenes(&path, Horizon::default()).unwrap();
        assert_eq!(back.scenes, ds.scenes);
    }

    #[test]
    fn short_track_is_rejected_with_line_number() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut scene = random_scene(&mut rng, 2);
        let good = scenes_to_string(&Dataset::new(vec![scene.clone()]));
        scene.past[1].remove(0);
        let mut buf = Vec::new();
        write_scene_line(&mut buf, &scene).unwrap();
        let text = format!("{good}{}", String::from_utf8(buf).unwrap());
        let err = parse_scenes(&text, Horizon::default(), "mem").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("mem:2"), "{msg}");
        assert!(msg.contains("expected 10 points, got 9"), "{msg}");
        assert!(msg.contains("vehicles"), "{msg}");
    }

    #[test]
    fn malformed_json_reports_line_and_field() {
        let text =
            "\n{\"vehicles\": [], \"route\": [[0,0],[1,0]], \"ego\": \"zero\", \"dt\": 0.5}\n";
        let err = parse_scenes(text, Horizon::default(), "f").unwrap_err();
        match err {
            Error::Parse { line, field, .. } => {
                assert_eq!(line, 2);
                assert_eq!(field, "record");
            }
            other => panic!("unexpected {other:?}"),
        }
        let text = "{\"vehicles\": [], \"route\": [], \"ego\": 0, \"dt\": 0.5, \"extra\": 1}";
        assert!(parse_scenes(text, Horizon::default(), "f").is_err());
    }

    #[test]
    fn non_zero_ego_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut scene = random_scene(&mut rng, 2);
        scene.ego_index = 1;
        let text = scenes_to_string(&Dataset::new(vec![scene]));
        let msg = parse_scenes(&text, Horizon::default(), "f")
            .unwrap_err()
            .to_string();
        assert!(msg.contains("ego index"), "{msg}");
    }

    proptest! {
        #[test]
        fn full_precision_round_trip(seed in 0u64..10_000, m in 2usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ds = Dataset::new(vec![random_scene(&mut rng, m), random_scene(&mut rng, 2)]);
            let back = parse_scenes(&scenes_to_string(&ds), Horizon::default(), "p").unwrap();
            prop_assert_eq!(back.scenes, ds.scenes);
        }
    }
}
