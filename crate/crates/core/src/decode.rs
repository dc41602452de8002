//! Multi-modal joint decoding, mode scores and ego plan selection.
//!
//! Each of the `K` decoders maps every vehicle's centered feature
//! `G_i − Ḡ` to `T_f + 1` points and adds back the scene anchor (the mean
//! of `Ḡ` over channels). The last point of each trajectory is a score
//! indicator only; it never appears in a plan or a metric.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, Point};
use crate::model::{encode_scene, forward, vehicle_mean, Layout, Model};
use crate::scene::Scene;
use crate::tensor::{argmax, Tape, Tensor, Var};

/// How a mode's indicator point becomes a score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    /// Mean of the indicator point's two coordinates.
    #[default]
    CoordinateMean,
    /// Negative distance of the indicator point from the scene anchor;
    /// invariant under rotation and translation.
    Invariant,
}

/// Tape handles for decoded modes.
#[derive(Clone, Debug)]
pub struct ModeVars {
    /// Per mode, `M·(T_f+1) × 2`, vehicle-major.
    pub modes: Vec<Var>,
    /// Anchor point `1 × 2`.
    pub anchor: Var,
    /// `M × K`.
    pub scores: Var,
    pub points: usize,
}

/// `Ŷ_i^k = W_k·(G_i − Ḡ) + anchor` for every mode `k`.
pub fn decode(
    tape: &mut Tape,
    layout: &Layout,
    g: Var,
    decoders: &[Var],
) -> Result<(Vec<Var>, Var)> {
    let mean = vehicle_mean(tape, layout, g)?;
    let centered = tape.sub(g, mean)?;
    let anchor = tape.mean_rows(mean)?;
    let mut modes = Vec::with_capacity(decoders.len());
    for &w in decoders {
        let points = tape.value(w).rows();
        let y = tape.block_matmul(w, centered, layout.vehicles)?;
        let a = tape.broadcast_rows(anchor, layout.vehicles * points)?;
        modes.push(tape.add(y, a)?);
    }
    Ok((modes, anchor))
}

/// Scores of every vehicle under every mode, `M × K`.
pub fn mode_scores(
    tape: &mut Tape,
    vehicles: usize,
    points: usize,
    modes: &[Var],
    anchor: Var,
    score_mode: ScoreMode,
) -> Result<Var> {
    let rows: Vec<usize> = (0..vehicles).map(|i| i * points + points - 1).collect();
    let half = tape.constant(Tensor::column(&[0.5, 0.5]));
    let mut cols = Vec::with_capacity(modes.len());
    for &m in modes {
        let ind = tape.gather_rows(m, &rows)?;
        let s = match score_mode {
            ScoreMode::CoordinateMean => tape.matmul(ind, half)?,
            ScoreMode::Invariant => {
                let a = tape.broadcast_rows(anchor, vehicles)?;
                let d = tape.sub(ind, a)?;
                let n = tape.rowwise_l2norm(d)?;
                tape.scale(n, -1.0)
            }
        };
        cols.push(s);
    }
    Ok(tape.concat_cols(&cols)?)
}

/// Runs features, decoders and scores for one scene on `tape`.
pub fn forward_modes(
    tape: &mut Tape,
    model: &Model,
    scene: &Scene,
    score_mode: ScoreMode,
) -> Result<(ModeVars, crate::model::Params<Var>)> {
    let config = model.config();
    let inputs = encode_scene(scene, config, &model.options)?;
    let layout = Layout::new(scene.num_vehicles(), config.coord_dim);
    let vars = model.params.tensors.to_tape(tape);
    let features = forward(tape, &inputs, &layout, &vars, &model.options)?;
    let (modes, anchor) = decode(tape, &layout, features.g, &vars.decoders)?;
    let points = config.decoded_points();
    let scores = mode_scores(tape, layout.vehicles, points, &modes, anchor, score_mode)?;
    Ok((
        ModeVars {
            modes,
            anchor,
            scores,
            points,
        },
        vars,
    ))
}

/// `K` joint futures for all vehicles.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeSet {
    /// Per mode, `M·(T_f+1) × 2`.
    pub trajectories: Vec<Tensor>,
    pub vehicles: usize,
    /// `T_f + 1`.
    pub points: usize,
    /// Mean of `Ḡ` over channels.
    pub anchor: Point,
}

impl ModeSet {
    pub fn modes(&self) -> usize {
        self.trajectories.len()
    }

    pub fn future_steps(&self) -> usize {
        self.points - 1
    }

    /// The `T_f` predicted positions of vehicle `i` in mode `k`.
    pub fn trajectory(&self, k: usize, i: usize) -> Vec<Point> {
        (0..self.points - 1)
            .map(|t| self.trajectories[k].point(i * self.points + t))
            .collect()
    }

    pub fn indicator(&self, k: usize, i: usize) -> Point {
        self.trajectories[k].point(i * self.points + self.points - 1)
    }

    /// Value-level scores, `M × K`; matches [`mode_scores`] on the tape.
    pub fn scores(&self, score_mode: ScoreMode) -> Tensor {
        let mut out = Tensor::zeros(self.vehicles, self.modes());
        for k in 0..self.modes() {
            for i in 0..self.vehicles {
                let p = self.indicator(k, i);
                let s = match score_mode {
                    ScoreMode::CoordinateMean => 0.5 * p[0] + 0.5 * p[1],
                    ScoreMode::Invariant => -geometry::dist(p, self.anchor),
                };
                out.set(i, k, s);
            }
        }
        out
    }
}

/// The ego trajectory of the highest-scoring mode.
#[derive(Clone, Debug, PartialEq)]
pub struct Plan {
    /// `T_f` points.
    pub trajectory: Vec<Point>,
    pub mode_index: usize,
    pub scores: Vec<f64>,
}

/// Picks `argmax_k P_0^k` (lowest index on ties) and returns that mode's
/// ego trajectory without the indicator point.
pub fn select_plan(modes: &ModeSet, scores: &Tensor) -> Result<Plan> {
    if scores.rows() == 0 || scores.cols() != modes.modes() {
        return Err(Error::validation(format!(
            "score matrix {:?} does not fit {} modes",
            scores.shape(),
            modes.modes()
        )));
    }
    let ego = scores.row(0).to_vec();
    let k = argmax(&ego).ok_or_else(|| Error::validation("no modes to select from"))?;
    Ok(Plan {
        trajectory: modes.trajectory(k, 0),
        mode_index: k,
        scores: ego,
    })
}

/// Everything the model outputs for one scene.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub modes: ModeSet,
    /// `M × K`.
    pub scores: Tensor,
    pub plan: Plan,
}

impl Model {
    pub fn predict(&self, scene: &Scene, score_mode: ScoreMode) -> Result<Prediction> {
        let mut tape = Tape::new();
        let (vars, _) = forward_modes(&mut tape, self, scene, score_mode)?;
        let modes = ModeSet {
            trajectories: vars.modes.iter().map(|&v| tape.value(v).clone()).collect(),
            vehicles: scene.num_vehicles(),
            points: vars.points,
            anchor: tape.value(vars.anchor).point(0),
        };
        let scores = tape.value(vars.scores).clone();
        let plan = select_plan(&modes, &scores)?;
        Ok(Prediction {
            modes,
            scores,
            plan,
        })
    }
}
