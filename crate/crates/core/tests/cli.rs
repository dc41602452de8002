use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "--set",
    "model.coord_dim=4",
    "--set",
    "model.hidden_dim=4",
    "--set",
    "model.blocks=1",
    "--set",
    "model.modes=2",
    "--set",
    "train.batch_size=4",
];

fn pep(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pep"))
        .current_dir(dir)
        .args(args)
        .env_remove("PEP_TRAIN__EPOCHS")
        .output()
        .expect("binary runs")
}

fn pep_small(dir: &Path, args: &[&str]) -> Output {
    let mut all: Vec<&str> = SMALL.to_vec();
    all.extend_from_slice(args);
    pep(dir, &all)
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}\nstdout: {}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn read(path: impl AsRef<Path>) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn generate_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = ok(&pep(
        d,
        &[
            "generate", "--seed", "3", "--scenes", "5", "--out", "a.jsonl",
        ],
    ));
    assert!(out.contains("wrote 5 scenes (seed 3)"), "{out}");
    ok(&pep(
        d,
        &[
            "generate", "--seed", "3", "--scenes", "5", "--out", "b.jsonl",
        ],
    ));
    ok(&pep(
        d,
        &[
            "generate", "--seed", "4", "--scenes", "5", "--out", "c.jsonl",
        ],
    ));
    assert_eq!(read(d.join("a.jsonl")), read(d.join("b.jsonl")));
    assert_ne!(read(d.join("a.jsonl")), read(d.join("c.jsonl")));
    assert_eq!(read(d.join("a.jsonl")).lines().count(), 5);
}

#[test]
fn generate_zero_scenes_writes_an_empty_file() {
    let dir = tempfile::tempdir().unwrap();
    ok(&pep(
        dir.path(),
        &["generate", "--scenes", "0", "--out", "empty.jsonl"],
    ));
    assert_eq!(read(dir.path().join("empty.jsonl")), "");
}

#[test]
fn zero_epochs_writes_the_initial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&pep(d, &["generate", "--scenes", "4", "--out", "s.jsonl"]));
    ok(&pep_small(
        d,
        &[
            "train",
            "--data",
            "s.jsonl",
            "--epochs",
            "0",
            "--out-dir",
            "r",
        ],
    ));
    assert!(d.join("r/checkpoint.json").exists());
    let history = read(d.join("r/history.csv"));
    assert_eq!(history.lines().count(), 2, "{history}");
    assert!(read(d.join("r/config.toml")).contains("[train]"));
}

#[test]
fn resumed_training_matches_a_straight_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&pep(
        d,
        &[
            "generate", "--scenes", "6", "--seed", "9", "--out", "s.jsonl",
        ],
    ));
    ok(&pep_small(
        d,
        &[
            "train",
            "--data",
            "s.jsonl",
            "--epochs",
            "4",
            "--out-dir",
            "full",
        ],
    ));
    ok(&pep_small(
        d,
        &[
            "train",
            "--data",
            "s.jsonl",
            "--epochs",
            "2",
            "--out-dir",
            "half",
        ],
    ));
    let out = ok(&pep_small(
        d,
        &[
            "train",
            "--data",
            "s.jsonl",
            "--epochs",
            "4",
            "--resume",
            "half/checkpoint.json",
            "--out-dir",
            "resumed",
        ],
    ));
    assert!(out.contains("epoch 3") && out.contains("epoch 4"), "{out}");
    assert!(!out.contains("epoch 1 "), "{out}");
    assert_eq!(
        read(d.join("full/checkpoint.json")),
        read(d.join("resumed/checkpoint.json"))
    );
    assert_eq!(
        read(d.join("full/history.csv")),
        read(d.join("resumed/history.csv"))
    );
}

#[test]
fn eval_writes_a_per_scene_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&pep(d, &["generate", "--scenes", "5", "--out", "s.jsonl"]));
    ok(&pep_small(
        d,
        &[
            "train",
            "--data",
            "s.jsonl",
            "--epochs",
            "1",
            "--out-dir",
            "r",
        ],
    ));
    let out = ok(&pep(
        d,
        &[
            "eval",
            "--checkpoint",
            "r/checkpoint.json",
            "--data",
            "s.jsonl",
            "--out",
            "rep.csv",
        ],
    ));
    assert!(out.contains("l2_3s="), "{out}");
    let report = read(d.join("rep.csv"));
    // Header, five scenes, mean row.
    assert_eq!(report.lines().count(), 7, "{report}");
    assert!(report.lines().last().unwrap().starts_with("mean"));

    let out = ok(&pep(
        d,
        &["eval", "--baseline", "--data", "s.jsonl", "--out", "cv.csv"],
    ));
    assert!(out.contains("report written to cv.csv"), "{out}");
}

#[test]
fn eval_on_an_empty_scene_file_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&pep(d, &["generate", "--scenes", "0", "--out", "e.jsonl"]));
    let out = pep(d, &["eval", "--baseline", "--data", "e.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn missing_and_corrupt_inputs_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = pep(d, &["eval", "--baseline", "--data", "nope.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
    std::fs::write(d.join("bad.json"), "{ not json").unwrap();
    ok(&pep(d, &["generate", "--scenes", "1", "--out", "s.jsonl"]));
    let out = pep(
        d,
        &["eval", "--checkpoint", "bad.json", "--data", "s.jsonl"],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_configuration_exits_with_code_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = pep(dir.path(), &["--set", "train.lr0=-1", "generate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train.lr0"));
    let out = pep(dir.path(), &["--set", "train.nope=1", "generate"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn env_overrides_reach_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_pep"))
        .current_dir(dir.path())
        .args(["generate", "--out", "s.jsonl"])
        .env("PEP_DATA__GENERATOR__SCENES", "3")
        .output()
        .unwrap();
    let text = ok(&out);
    assert!(text.contains("wrote 3 scenes"), "{text}");
}

#[test]
fn equivariance_sweep_writes_359_angles() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&pep(d, &["generate", "--scenes", "2", "--out", "s.jsonl"]));
    let out = ok(&pep_small(
        d,
        &["equivariance", "--data", "s.jsonl", "--out", "curve.csv"],
    ));
    assert!(out.contains("359 angles x 21 transforms"), "{out}");
    let curve = read(d.join("curve.csv"));
    let mut lines = curve.lines();
    assert_eq!(
        lines.next().unwrap(),
        "theta_deg,deviation,plan_deviation,selection_flips"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 359);
    assert!(rows[0].starts_with("1,"));
    assert!(rows[358].starts_with("359,"));
    for row in rows {
        let dev: f64 = row.split(',').nth(1).unwrap().parse().unwrap();
        assert!(dev < 1e-6, "{row}");
    }
}

#[test]
fn broken_equivariance_exits_with_code_four() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&pep(d, &["generate", "--scenes", "1", "--out", "s.jsonl"]));
    let out = pep_small(
        d,
        &[
            "equivariance",
            "--data",
            "s.jsonl",
            "--break-equivariance",
            "--out",
            "curve.csv",
        ],
    );
    assert_eq!(
        out.status.code(),
        Some(4),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("exceeds tolerance"));
}
