//! Planning, winner-takes-all and prediction losses.
//!
//! Every loss has a tape form used for gradients and is checked against
//! plain value-level arithmetic in the tests.

use serde::{Deserialize, Serialize};

use crate::decode::{forward_modes, ModeVars, ScoreMode};
use crate::error::{Error, Result};
use crate::geometry::{self, Point};
use crate::model::{Model, Params};
use crate::scene::Scene;
use crate::tensor::{argmax, argmin, Tape, Tensor, Var};

/// Which ego mode the planning loss follows.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanTarget {
    /// The mode the scorer selects.
    #[default]
    Selected,
    /// The mode closest to the ground truth.
    Closest,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub alpha: f64,
    pub prediction_loss: bool,
    pub plan_target: PlanTarget,
    pub score_mode: ScoreMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            prediction_loss: true,
            plan_target: PlanTarget::Selected,
            score_mode: ScoreMode::CoordinateMean,
        }
    }
}

/// Loss components and metrics of one scene.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub plan: f64,
    pub wta: f64,
    /// Reported even when the prediction term is switched off.
    pub pred: f64,
    /// 0 when the selected mode is the closest one, else 1.
    pub selection_miss: f64,
    /// Error of the selected ego mode.
    pub l2_avg: f64,
    pub l2_3s: f64,
}

impl LossBreakdown {
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        let n = items.len().max(1) as f64;
        let mut out = LossBreakdown::default();
        for b in items {
            out.total += b.total;
            out.plan += b.plan;
            out.wta += b.wta;
            out.pred += b.pred;
            out.selection_miss += b.selection_miss;
            out.l2_avg += b.l2_avg;
            out.l2_3s += b.l2_3s;
        }
        out.total /= n;
        out.plan /= n;
        out.wta /= n;
        out.pred /= n;
        out.selection_miss /= n;
        out.l2_avg /= n;
        out.l2_3s /= n;
        out
    }
}

/// Rows `vehicle·points .. vehicle·points + steps` of a decoded mode.
fn vehicle_rows(vehicle: usize, points: usize, steps: usize) -> Vec<usize> {
    (0..steps).map(|t| vehicle * points + t).collect()
}

fn track(t: &Tensor, rows: &[usize]) -> Vec<Point> {
    rows.iter().map(|&r| t.point(r)).collect()
}

/// Mean over steps of the distance between rows `rows` of `mode` and
/// `target` (same length).
pub fn mean_l2(tape: &mut Tape, mode: Var, rows: &[usize], target: &[Point]) -> Result<Var> {
    let pred = tape.gather_rows(mode, rows)?;
    let gt = tape.constant(Tensor::from_points(target));
    let diff = tape.sub(pred, gt)?;
    let d = tape.rowwise_l2norm(diff)?;
    Ok(tape.mean(d))
}

/// Planning loss on the ego trajectory of mode `k`.
pub fn loss_plan(tape: &mut Tape, modes: &ModeVars, k: usize, gt_ego: &[Point]) -> Result<Var> {
    mean_l2(
        tape,
        modes.modes[k],
        &vehicle_rows(0, modes.points, gt_ego.len()),
        gt_ego,
    )
}

/// Index of the ego mode with the smallest mean error, lowest on ties.
pub fn closest_mode(modes: &[Vec<Point>], gt_ego: &[Point]) -> usize {
    let errs: Vec<f64> = modes
        .iter()
        .map(|m| geometry::mean_dist(m, gt_ego))
        .collect();
    argmin(&errs).unwrap_or(0)
}

/// Cross-entropy of `softmax(scores)` against mode `target`, `scores`
/// being `1 × K`.
pub fn loss_wta(tape: &mut Tape, scores: Var, target: usize) -> Result<Var> {
    let k = tape.value(scores).cols();
    if target >= k {
        return Err(Error::validation(format!(
            "target mode {target} out of {k}"
        )));
    }
    let logp = tape.log_softmax_rows(scores);
    let mut onehot = vec![0.0; k];
    onehot[target] = -1.0;
    let pick = tape.constant(Tensor::column(&onehot));
    Ok(tape.matmul(logp, pick)?)
}

/// Scene-level minimum over modes of the mean SV error. `gt_svs[j]` is
/// the future of vehicle `j + 1`. Returns `None` for single-vehicle
/// scenes.
pub fn loss_pred(tape: &mut Tape, modes: &ModeVars, gt_svs: &[Vec<Point>]) -> Result<Option<Var>> {
    if gt_svs.is_empty() {
        return Ok(None);
    }
    let steps = gt_svs[0].len();
    let rows: Vec<usize> = (1..=gt_svs.len())
        .flat_map(|i| vehicle_rows(i, modes.points, steps))
        .collect();
    let target: Vec<Point> = gt_svs.iter().flatten().copied().collect();
    let errs: Vec<f64> = modes
        .modes
        .iter()
        .map(|&m| geometry::mean_dist(&track(tape.value(m), &rows), &target))
        .collect();
    let best = argmin(&errs).expect("at least one mode");
    Ok(Some(mean_l2(tape, modes.modes[best], &rows, &target)?))
}

/// `plan + wta + α·pred`; the prediction term is dropped when `pred` is
/// `None` or the flag is off.
pub fn total_loss(
    tape: &mut Tape,
    plan: Var,
    wta: Var,
    pred: Option<Var>,
    config: &LossConfig,
) -> Result<Var> {
    let base = tape.add(plan, wta)?;
    match pred {
        Some(p) if config.prediction_loss => {
            let p = tape.scale(p, config.alpha);
            Ok(tape.add(base, p)?)
        }
        _ => Ok(base),
    }
}

/// Value-level counterpart of [`total_loss`].
pub fn combine(plan: f64, wta: f64, pred: f64, config: &LossConfig) -> f64 {
    if config.prediction_loss {
        plan + wta + config.alpha * pred
    } else {
        plan + wta
    }
}

/// Builds the full loss of one scene on `tape`.
pub fn scene_loss(
    tape: &mut Tape,
    model: &Model,
    scene: &Scene,
    config: &LossConfig,
) -> Result<(Var, LossBreakdown, Params<Var>)> {
    let (modes, params) = forward_modes(tape, model, scene, config.score_mode)?;
    let gt_ego = scene.ego_future();
    let steps = gt_ego.len();
    let ego_rows = vehicle_rows(0, modes.points, steps);
    let ego_modes: Vec<Vec<Point>> = modes
        .modes
        .iter()
        .map(|&m| track(tape.value(m), &ego_rows))
        .collect();
    let closest = closest_mode(&ego_modes, gt_ego);
    let ego_scores = tape.gather_rows(modes.scores, &[0])?;
    let selected = argmax(tape.value(ego_scores).data()).expect("at least one mode");

    let plan_k = match config.plan_target {
        PlanTarget::Selected => selected,
        PlanTarget::Closest => closest,
    };
    let plan = loss_plan(tape, &modes, plan_k, gt_ego)?;
    let wta = loss_wta(tape, ego_scores, closest)?;
    let pred = loss_pred(tape, &modes, &scene.future[1..])?;
    let total = total_loss(tape, plan, wta, pred, config)?;

    let chosen = &ego_modes[selected];
    let breakdown = LossBreakdown {
        total: tape.value(total).item(),
        plan: tape.value(plan).item(),
        wta: tape.value(wta).item(),
        pred: pred.map_or(0.0, |p| tape.value(p).item()),
        selection_miss: if selected == closest { 0.0 } else { 1.0 },
        l2_avg: geometry::mean_dist(chosen, gt_ego),
        l2_3s: chosen
            .last()
            .zip(gt_ego.last())
            .map_or(0.0, |(&a, &b)| geometry::dist(a, b)),
    };
    Ok((total, breakdown, params))
}

/// Loss breakdown and parameter gradients of one scene.
pub fn scene_gradient(
    model: &Model,
    scene: &Scene,
    config: &LossConfig,
) -> Result<(LossBreakdown, Params<Tensor>)> {
    let mut tape = Tape::new();
    let (total, breakdown, params) = scene_loss(&mut tape, model, scene, config)?;
    let mut grads = tape.backward(total)?;
    Ok((breakdown, params.gradients(&mut grads)))
}
