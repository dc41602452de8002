//! Open-loop metrics, the rotation sweep and the constant-velocity baseline.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decode::{ModeSet, ScoreMode};
use crate::error::{Error, Result};
use crate::geometry::{self, Point, Se2};
use crate::model::Model;
use crate::scene::{Dataset, ScenarioKind, Scene};
use crate::train::loss::closest_mode;

/// Which SV futures a plan is checked against for collisions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollisionSource {
    #[default]
    GroundTruth,
    /// SV trajectories of the selected mode.
    Predicted,
}

/// Evaluation and sweep settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Vehicle disc radius (m); collision below twice this distance.
    pub r_coll: f64,
    pub collision_source: CollisionSource,
    /// Rotation grid in whole degrees, inclusive.
    pub theta_start_deg: u32,
    pub theta_end_deg: u32,
    pub theta_step_deg: u32,
    /// Random translations per angle, in addition to the pure rotation.
    pub translations: usize,
    /// Translations are uniform in `[−range, range]²` (m).
    pub translation_range: f64,
    /// Largest acceptable per-mode deviation (m).
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            r_coll: 1.0,
            collision_source: CollisionSource::GroundTruth,
            theta_start_deg: 1,
            theta_end_deg: 359,
            theta_step_deg: 1,
            translations: 20,
            translation_range: 100.0,
            tolerance: 1e-6,
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.r_coll.is_finite() && self.r_coll > 0.0) {
            bad.push(format!("r_coll: must be positive, got {}", self.r_coll));
        }
        if self.theta_step_deg == 0 {
            bad.push("theta_step_deg: must be positive".into());
        }
        if self.theta_start_deg > self.theta_end_deg || self.theta_end_deg >= 360 {
            bad.push(format!(
                "theta_start_deg/theta_end_deg: need start ≤ end < 360, got {}..{}",
                self.theta_start_deg, self.theta_end_deg
            ));
        }
        if !(self.translation_range.is_finite() && self.translation_range >= 0.0) {
            bad.push("translation_range: must be non-negative".into());
        }
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            bad.push("tolerance: must be positive".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(bad))
        }
    }

    pub fn thetas(&self) -> Vec<u32> {
        (self.theta_start_deg..=self.theta_end_deg)
            .step_by(self.theta_step_deg.max(1) as usize)
            .collect()
    }
}

/// `(l2_3s, l2_avg)`: distance at the last step and mean distance.
pub fn l2_metrics(plan: &[Point], gt: &[Point]) -> (f64, f64) {
    let last = match (plan.last(), gt.last()) {
        (Some(&a), Some(&b)) => geometry::dist(a, b),
        _ => 0.0,
    };
    (last, geometry::mean_dist(plan, gt))
}

/// Per-step collision flags: the plan is within `2·r_coll` of some SV.
pub fn collision_steps(plan: &[Point], svs: &[Vec<Point>], r_coll: f64) -> Vec<bool> {
    plan.iter()
        .enumerate()
        .map(|(t, &p)| svs.iter().any(|sv| geometry::dist(p, sv[t]) < 2.0 * r_coll))
        .collect()
}

/// `(cr_3s, cr_avg)` of one scene: collision at the last step (0 or 1)
/// and the fraction of colliding steps.
pub fn collision_rate(plan: &[Point], svs: &[Vec<Point>], r_coll: f64) -> (f64, f64) {
    let steps = collision_steps(plan, svs, r_coll);
    if steps.is_empty() {
        return (0.0, 0.0);
    }
    let last = if *steps.last().unwrap() { 1.0 } else { 0.0 };
    let avg = steps.iter().filter(|&&c| c).count() as f64 / steps.len() as f64;
    (last, avg)
}

/// Extrapolates the ego's last observed displacement.
pub fn baseline_constant_velocity(scene: &Scene) -> Vec<Point> {
    constant_velocity(&scene.past[scene.ego_index], scene.horizon().future)
}

fn constant_velocity(past: &[Point], steps: usize) -> Vec<Point> {
    let n = past.len();
    let last = past[n - 1];
    let v = if n >= 2 {
        geometry::sub(last, past[n - 2])
    } else {
        [0.0, 0.0]
    };
    (1..=steps)
        .map(|t| geometry::add(last, geometry::scale(v, t as f64)))
        .collect()
}

/// Metrics of one scene.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SceneRow {
    pub index: usize,
    pub scenario: Option<ScenarioKind>,
    pub mode_index: usize,
    pub l2_3s: f64,
    pub l2_avg: f64,
    pub cr_3s: f64,
    pub cr_avg: f64,
    pub min_l2_avg: f64,
    pub min_l2_3s: f64,
    /// 1 when the selected mode is also the closest to the ground truth.
    pub selection_correct: f64,
}

/// Aggregate metrics; every field is the mean of the matching row field.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub scenes: usize,
    pub l2_3s: f64,
    pub l2_avg: f64,
    pub cr_3s: f64,
    pub cr_avg: f64,
    pub min_l2_avg: f64,
    pub min_l2_3s: f64,
    pub selection_accuracy: f64,
    pub rows: Vec<SceneRow>,
}

impl EvalReport {
    pub fn from_rows(rows: Vec<SceneRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::validation("cannot evaluate an empty dataset"));
        }
        let n = rows.len() as f64;
        let mean = |f: fn(&SceneRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
        Ok(Self {
            scenes: rows.len(),
            l2_3s: mean(|r| r.l2_3s),
            l2_avg: mean(|r| r.l2_avg),
            cr_3s: mean(|r| r.cr_3s),
            cr_avg: mean(|r| r.cr_avg),
            min_l2_avg: mean(|r| r.min_l2_avg),
            min_l2_3s: mean(|r| r.min_l2_3s),
            selection_accuracy: mean(|r| r.selection_correct),
            rows,
        })
    }

    /// Per-scene rows followed by a `mean` summary row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "scene,scenario,mode,l2_3s,l2_avg,cr_3s,cr_avg,min_l2_avg,min_l2_3s,selection_correct\n",
        );
        for r in &self.rows {
            let kind = r
                .scenario
                .and_then(|k| serde_json::to_value(k).ok())
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.index,
                kind,
                r.mode_index,
                r.l2_3s,
                r.l2_avg,
                r.cr_3s,
                r.cr_avg,
                r.min_l2_avg,
                r.min_l2_3s,
                r.selection_correct
            );
        }
        let _ = writeln!(
            out,
            "mean,,,{},{},{},{},{},{},{}",
            self.l2_3s,
            self.l2_avg,
            self.cr_3s,
            self.cr_avg,
            self.min_l2_avg,
            self.min_l2_3s,
            self.selection_accuracy
        );
        out
    }

    /// Human-readable aggregate.
    pub fn summary(&self) -> String {
        format!(
            "scenes={} l2_3s={:.4} l2_avg={:.4} cr_3s={:.4} cr_avg={:.4} minL2_avg={:.4} minL2_3s={:.4} selection_accuracy={:.4}",
            self.scenes,
            self.l2_3s,
            self.l2_avg,
            self.cr_3s,
            self.cr_avg,
            self.min_l2_avg,
            self.min_l2_3s,
            self.selection_accuracy
        )
    }
}

/// SV-prediction minima over modes: `(avg, 3s)`, each minimized separately.
fn min_sv_errors(sv_modes: &[Vec<Vec<Point>>], gt_svs: &[Vec<Point>]) -> (f64, f64) {
    if gt_svs.is_empty() {
        return (0.0, 0.0);
    }
    let mut best = (f64::INFINITY, f64::INFINITY);
    for mode in sv_modes {
        let (mut last, mut avg) = (0.0, 0.0);
        for (pred, gt) in mode.iter().zip(gt_svs) {
            let (l, a) = l2_metrics(pred, gt);
            last += l;
            avg += a;
        }
        let n = gt_svs.len() as f64;
        best.0 = best.0.min(avg / n);
        best.1 = best.1.min(last / n);
    }
    best
}

fn scene_row(
    index: usize,
    scene: &Scene,
    plan: &[Point],
    mode_index: usize,
    ego_modes: &[Vec<Point>],
    sv_modes: &[Vec<Vec<Point>>],
    config: &EvalConfig,
) -> SceneRow {
    let gt = scene.ego_future();
    let (l2_3s, l2_avg) = l2_metrics(plan, gt);
    let others: Vec<Vec<Point>> = match config.collision_source {
        CollisionSource::GroundTruth => scene.future[1..].to_vec(),
        CollisionSource::Predicted => sv_modes[mode_index].clone(),
    };
    let (cr_3s, cr_avg) = collision_rate(plan, &others, config.r_coll);
    let (min_l2_avg, min_l2_3s) = min_sv_errors(sv_modes, &scene.future[1..]);
    SceneRow {
        index,
        scenario: scene.kind,
        mode_index,
        l2_3s,
        l2_avg,
        cr_3s,
        cr_avg,
        min_l2_avg,
        min_l2_3s,
        selection_correct: if closest_mode(ego_modes, gt) == mode_index {
            1.0
        } else {
            0.0
        },
    }
}

fn sv_tracks(modes: &ModeSet) -> Vec<Vec<Vec<Point>>> {
    (0..modes.modes())
        .map(|k| {
            (1..modes.vehicles)
                .map(|i| modes.trajectory(k, i))
                .collect()
        })
        .collect()
}

/// Metrics of `model` on every scene of `data`.
pub fn evaluate(
    model: &Model,
    data: &Dataset,
    score_mode: ScoreMode,
    config: &EvalConfig,
) -> Result<EvalReport> {
    config.validate()?;
    let rows: Result<Vec<SceneRow>> = data
        .scenes
        .par_iter()
        .enumerate()
        .map(|(i, scene)| {
            let p = model.predict(scene, score_mode)?;
            let ego: Vec<Vec<Point>> = (0..p.modes.modes())
                .map(|k| p.modes.trajectory(k, 0))
                .collect();
            Ok(scene_row(
                i,
                scene,
                &p.plan.trajectory,
                p.plan.mode_index,
                &ego,
                &sv_tracks(&p.modes),
                config,
            ))
        })
        .collect();
    EvalReport::from_rows(rows?)
}

/// Metrics of the constant-velocity extrapolation of every vehicle.
pub fn evaluate_baseline(data: &Dataset, config: &EvalConfig) -> Result<EvalReport> {
    config.validate()?;
    let rows = data
        .scenes
        .iter()
        .enumerate()
        .map(|(i, scene)| {
            let steps = scene.horizon().future;
            let plan = baseline_constant_velocity(scene);
            let svs: Vec<Vec<Point>> = scene.past[1..]
                .iter()
                .map(|p| constant_velocity(p, steps))
                .collect();
            scene_row(i, scene, &plan, 0, &[plan.clone()], &[svs], config)
        })
        .collect();
    EvalReport::from_rows(rows)
}

/// Deviation of the back-transformed outputs at one angle, maximized over
/// the translations and scenes tried.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub theta_deg: u32,
    /// Largest distance between index-aligned decoded points (m).
    pub mode_deviation: f64,
    /// Largest distance between plan points (m).
    pub plan_deviation: f64,
    /// Transforms under which the selected mode changed.
    pub selection_flips: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StabilityCurve {
    pub rows: Vec<SweepRow>,
    /// Deviation of the identity transform; always exactly zero.
    pub baseline_deviation: f64,
    pub translations: Vec<Point>,
}

impl StabilityCurve {
    pub fn max_mode_deviation(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.mode_deviation)
            .fold(0.0, f64::max)
    }

    pub fn mean_mode_deviation(&self) -> f64 {
        self.rows.iter().map(|r| r.mode_deviation).sum::<f64>() / self.rows.len().max(1) as f64
    }

    pub fn max_plan_deviation(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.plan_deviation)
            .fold(0.0, f64::max)
    }

    pub fn selection_flips(&self) -> usize {
        self.rows.iter().map(|r| r.selection_flips).sum()
    }

    /// `theta_deg,deviation` first, then plan deviation and flip count.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("theta_deg,deviation,plan_deviation,selection_flips\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                r.theta_deg, r.mode_deviation, r.plan_deviation, r.selection_flips
            );
        }
        out
    }
}

/// Maximum distance between index-aligned points of two mode sets after
/// mapping `moved` back through `back`.
fn mode_deviation(base: &ModeSet, moved: &ModeSet, back: &Se2) -> f64 {
    let mut worst = 0.0f64;
    for (a, b) in base.trajectories.iter().zip(&moved.trajectories) {
        for r in 0..a.rows() {
            worst = worst.max(geometry::dist(a.point(r), back.apply(b.point(r))));
        }
    }
    worst
}

fn plan_deviation(base: &[Point], moved: &[Point], back: &Se2) -> f64 {
    base.iter()
        .zip(moved)
        .map(|(&a, &b)| geometry::dist(a, back.apply(b)))
        .fold(0.0, f64::max)
}

/// Translations used by [`equivariance_sweep`] for `config`.
pub fn sweep_translations(config: &EvalConfig) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let r = config.translation_range;
    (0..config.translations)
        .map(|_| {
            if r == 0.0 {
                [0.0, 0.0]
            } else {
                [rng.gen_range(-r..=r), rng.gen_range(-r..=r)]
            }
        })
        .collect()
}

/// For every angle on the grid, and for the pure rotation plus each random
/// translation, predicts on the transformed scene, maps the outputs back
/// and records the deviation from the untransformed prediction.
pub fn equivariance_sweep(
    model: &Model,
    scenes: &[Scene],
    score_mode: ScoreMode,
    config: &EvalConfig,
) -> Result<StabilityCurve> {
    config.validate()?;
    if scenes.is_empty() {
        return Err(Error::validation(
            "equivariance sweep needs at least one scene",
        ));
    }
    let translations = sweep_translations(config);
    let baselines = scenes
        .iter()
        .map(|s| model.predict(s, score_mode))
        .collect::<Result<Vec<_>>>()?;
    let mut baseline_deviation = 0.0f64;
    for (scene, base) in scenes.iter().zip(&baselines) {
        let same = model.predict(&scene.apply_se2(&Se2::IDENTITY), score_mode)?;
        baseline_deviation =
            baseline_deviation.max(mode_deviation(&base.modes, &same.modes, &Se2::IDENTITY));
    }
    let rows: Result<Vec<SweepRow>> = config
        .thetas()
        .into_par_iter()
        .map(|deg| {
            let mut row = SweepRow {
                theta_deg: deg,
                mode_deviation: 0.0,
                plan_deviation: 0.0,
                selection_flips: 0,
            };
            let shifts = std::iter::once([0.0, 0.0]).chain(translations.iter().copied());
            for t in shifts {
                let g = Se2::from_degrees(deg as f64, t);
                let back = g.inverse();
                for (scene, base) in scenes.iter().zip(&baselines) {
                    let p = model.predict(&scene.apply_se2(&g), score_mode)?;
                    row.mode_deviation =
                        row.mode_deviation
                            .max(mode_deviation(&base.modes, &p.modes, &back));
                    row.plan_deviation = row.plan_deviation.max(plan_deviation(
                        &base.plan.trajectory,
                        &p.plan.trajectory,
                        &back,
                    ));
                    if p.plan.mode_index != base.plan.mode_index {
                        row.selection_flips += 1;
                    }
                }
            }
            Ok(row)
        })
        .collect();
    Ok(StabilityCurve {
        rows: rows?,
        baseline_deviation,
        translations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, ModelOptions, ModelParams};
    use crate::scene::tests::random_scene;
    use crate::scene::{generate_synthetic, GeneratorConfig};
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn l2_examples() {
        let gt: Vec<Point> = (0..6).map(|t| [t as f64, 1.0]).collect();
        assert_eq!(l2_metrics(&gt, &gt), (0.0, 0.0));
        let off: Vec<Point> = gt.iter().map(|p| [p[0], p[1] + 2.0]).collect();
        assert_eq!(l2_metrics(&off, &gt), (2.0, 2.0));
        let grow: Vec<Point> = gt
            .iter()
            .enumerate()
            .map(|(t, p)| [p[0] + 0.5 * (t + 1) as f64, p[1]])
            .collect();
        let (l3, avg) = l2_metrics(&grow, &gt);
        assert!((l3 - 3.0).abs() < 1e-15);
        assert!((avg - 1.75).abs() < 1e-15);
    }

    #[test]
    fn collision_examples() {
        let plan: Vec<Point> = (0..6).map(|t| [t as f64, 0.0]).collect();
        let far: Vec<Point> = (0..6).map(|t| [t as f64, 10.5]).collect();
        assert_eq!(collision_rate(&plan, &[far], 1.0), (0.0, 0.0));
        let mut touch: Vec<Point> = (0..6).map(|t| [t as f64, 30.0]).collect();
        touch[5] = plan[5];
        let (l, a) = collision_rate(&plan, &[touch], 1.0);
        assert_eq!(l, 1.0);
        assert!((a - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn collision_matches_brute_force_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let plan: Vec<Point> = (0..6)
                .map(|_| [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)])
                .collect();
            let svs: Vec<Vec<Point>> = (0..rng.gen_range(1..5))
                .map(|_| {
                    (0..6)
                        .map(|_| [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)])
                        .collect()
                })
                .collect();
            let r = rng.gen_range(0.2..2.0);
            let mut hits = [false; 6];
            for sv in &svs {
                for t in 0..6 {
                    let dx = plan[t][0] - sv[t][0];
                    let dy = plan[t][1] - sv[t][1];
                    if dx * dx + dy * dy < 4.0 * r * r {
                        hits[t] = true;
                    }
                }
            }
            let expect_avg = hits.iter().filter(|&&h| h).count() as f64 / 6.0;
            let (l, a) = collision_rate(&plan, &svs, r);
            assert_eq!(l, if hits[5] { 1.0 } else { 0.0 });
            assert_eq!(a, expect_avg);
        }
    }

    proptest! {
        #[test]
        fn l2_is_symmetric(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a: Vec<Point> = (0..6).map(|_| [rng.gen(), rng.gen()]).collect();
            let b: Vec<Point> = (0..6).map(|_| [rng.gen(), rng.gen()]).collect();
            prop_assert_eq!(l2_metrics(&a, &b), l2_metrics(&b, &a));
        }

        #[test]
        fn collision_rate_monotone_in_radius(seed in 0u64..1000, r in 0.1f64..3.0, dr in 0.0f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let plan: Vec<Point> = (0..6).map(|_| [rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0)]).collect();
            let svs = vec![(0..6).map(|_| [rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0)]).collect::<Vec<_>>()];
            let a = collision_rate(&plan, &svs, r);
            let b = collision_rate(&plan, &svs, r + dr);
            prop_assert!(b.0 >= a.0 && b.1 >= a.1);
        }
    }

    #[test]
    fn constant_velocity_baseline() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut scene = random_scene(&mut rng, 2);
        scene.past[0] = vec![[4.0, 4.0]; 4];
        assert_eq!(baseline_constant_velocity(&scene), vec![[4.0, 4.0]; 6]);

        let straight = generate_synthetic(
            &GeneratorConfig {
                scenes: 40,
                noise_sigma: 0.0,
                ..GeneratorConfig::default()
            },
            3,
        )
        .unwrap();
        let cv = straight.filter_kind(|k| k == ScenarioKind::Straight);
        assert!(!cv.is_empty());
        for s in &cv.scenes {
            let (l3, avg) = l2_metrics(&baseline_constant_velocity(s), s.ego_future());
            assert!(l3 < 1e-9 && avg < 1e-9, "{l3} {avg}");
        }
        let turns = straight.filter_kind(|k| k == ScenarioKind::LeftTurn);
        for s in &turns.scenes {
            let (l3, _) = l2_metrics(&baseline_constant_velocity(s), s.ego_future());
            assert!(l3 > 0.0);
        }
    }

    fn small() -> Model {
        let config = ModelConfig {
            coord_dim: 8,
            hidden_dim: 8,
            relation_categories: 2,
            modes: 3,
            blocks: 2,
            ..ModelConfig::default()
        };
        Model::new(
            ModelParams::init(config, 4).unwrap(),
            ModelOptions::default(),
        )
    }

    #[test]
    fn report_aggregates_are_row_means() {
        let data = generate_synthetic(
            &GeneratorConfig {
                scenes: 12,
                ..GeneratorConfig::default()
            },
            5,
        )
        .unwrap();
        let report = evaluate(
            &small(),
            &data,
            ScoreMode::CoordinateMean,
            &EvalConfig::default(),
        )
        .unwrap();
        let n = report.rows.len() as f64;
        let m = |f: fn(&SceneRow) -> f64| report.rows.iter().map(f).sum::<f64>() / n;
        assert!((report.l2_avg - m(|r| r.l2_avg)).abs() < 1e-12);
        assert!((report.cr_avg - m(|r| r.cr_avg)).abs() < 1e-12);
        assert!((report.min_l2_3s - m(|r| r.min_l2_3s)).abs() < 1e-12);
        assert_eq!(report.to_csv().lines().count(), 12 + 2);
        assert!(report
            .rows
            .iter()
            .all(|r| r.min_l2_avg >= 0.0 && r.min_l2_3s >= 0.0));
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let err = evaluate(
            &small(),
            &Dataset::new(vec![]),
            ScoreMode::CoordinateMean,
            &EvalConfig::default(),
        );
        assert!(err.is_err());
    }

    #[test]
    fn sweep_is_flat_for_random_weights_and_has_359_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let scene = random_scene(&mut rng, 3);
        let config = EvalConfig {
            translations: 2,
            ..EvalConfig::default()
        };
        let curve = equivariance_sweep(&small(), &[scene], ScoreMode::Invariant, &config).unwrap();
        assert_eq!(curve.rows.len(), 359);
        assert_eq!(curve.rows[0].theta_deg, 1);
        assert_eq!(curve.rows[358].theta_deg, 359);
        assert_eq!(curve.baseline_deviation, 0.0);
        assert!(
            curve.max_mode_deviation() < 1e-6,
            "{}",
            curve.max_mode_deviation()
        );
        assert_eq!(curve.to_csv().lines().count(), 360);
    }

    #[test]
    fn sweep_detects_uncentered_initialization() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let scene = random_scene(&mut rng, 3);
        let mut model = small();
        model.options.equivariant_init = false;
        let config = EvalConfig {
            theta_start_deg: 10,
            theta_end_deg: 350,
            theta_step_deg: 170,
            translations: 3,
            ..EvalConfig::default()
        };
        let curve =
            equivariance_sweep(&model, &[scene], ScoreMode::CoordinateMean, &config).unwrap();
        assert!(curve.max_mode_deviation() > 1e-3);
    }

    #[test]
    fn invalid_eval_config_lists_fields() {
        let bad = EvalConfig {
            r_coll: 0.0,
            theta_step_deg: 0,
            theta_end_deg: 400,
            ..EvalConfig::default()
        };
        let msg = bad.validate().unwrap_err().to_string();
        assert!(
            msg.contains("r_coll")
                && msg.contains("theta_step_deg")
                && msg.contains("theta_end_deg"),
            "{msg}"
        );
    }
}
