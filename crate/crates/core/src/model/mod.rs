//! The feature pipeline: initialization, relationship reasoning and `N`
//! update blocks over equivariant (`G`, `M·C × 2`) and invariant
//! (`h`, `M × D`) vehicle features.
//!
//! Layout conventions on the tape:
//!
//! - `G` stacks vehicles, then channels: row `i·C + c` is channel `c` of
//!   vehicle `i`.
//! - Pairs are all ordered `(i, j)` with `i ≠ j`, in row-major order; pair
//!   tensors have one row per pair (or `C` rows per pair for equivariant
//!   differences).
//!
//! Every function that touches `G` uses only bias-free channel maps,
//! differences of positions, and re-added means, so rotating and
//! translating the scene moves `G` identically and leaves `h` unchanged.

mod layers;
mod params;

pub use layers::*;
pub use params::{Block, Linear, Mlp, ModelConfig, ModelParams, Params, Role};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, Point};
use crate::scene::{resample_route, Scene};
use crate::tensor::{Tape, Tensor, Var};

/// Ablation switches that change the forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelOptions {
    /// Pull the ego feature toward the route in every block.
    pub route_attraction: bool,
    /// Subtract and re-add the scene mean around the initial channel map.
    /// Turning this off breaks translation equivariance.
    pub equivariant_init: bool,
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self {
            route_attraction: true,
            equivariant_init: true,
        }
    }
}

/// Constant inputs derived from a scene.
#[derive(Clone, Debug)]
pub struct SceneInputs {
    /// `M·T_p × 2` observed positions, vehicle-major.
    pub past: Tensor,
    /// Mean of all observed positions.
    pub past_mean: Point,
    /// `M × (2T_p − 3)` speeds and turning angles.
    pub motion: Tensor,
    /// `C × 2` resampled route, absent when route attraction is off.
    pub route: Option<Tensor>,
}

/// Below this step length (meters) a heading is undefined and the turning
/// angle is taken as zero.
pub const MIN_STEP: f64 = 1e-6;

/// Per-step displacement lengths followed by signed angles between
/// consecutive displacements.
pub fn motion_features(track: &[Point]) -> Vec<f64> {
    let steps: Vec<Point> = track
        .windows(2)
        .map(|w| geometry::sub(w[1], w[0]))
        .collect();
    let mut out: Vec<f64> = steps.iter().map(|&d| geometry::norm(d)).collect();
    for w in steps.windows(2) {
        let (a, b) = (w[0], w[1]);
        if geometry::norm(a) < MIN_STEP || geometry::norm(b) < MIN_STEP {
            out.push(0.0);
        } else {
            out.push(geometry::cross(a, b).atan2(geometry::dot(a, b)));
        }
    }
    out
}

pub fn encode_scene(
    scene: &Scene,
    config: &ModelConfig,
    options: &ModelOptions,
) -> Result<SceneInputs> {
    let h = scene.horizon();
    if h.past != config.past_steps {
        return Err(Error::validation(format!(
            "scene has {} past steps, model expects {}",
            h.past, config.past_steps
        )));
    }
    if scene.num_vehicles() == 0 {
        return Err(Error::validation("scene has no vehicles"));
    }
    let points: Vec<Point> = scene.past.iter().flatten().copied().collect();
    let mut motion = Vec::with_capacity(scene.num_vehicles() * config.motion_features());
    for track in &scene.past {
        motion.extend(motion_features(track));
    }
    let route = if options.route_attraction {
        Some(resample_route(&scene.route, config.coord_dim)?.to_tensor())
    } else {
        None
    };
    Ok(SceneInputs {
        past: Tensor::from_points(&points),
        past_mean: scene.past_mean(),
        motion: Tensor::new(scene.num_vehicles(), config.motion_features(), motion)?,
        route,
    })
}

/// Equivariant features of all vehicles.
#[derive(Clone, Debug, PartialEq)]
pub struct EquivariantState {
    /// `M·C × 2`.
    pub g: Tensor,
    pub channels: usize,
}

impl EquivariantState {
    pub fn vehicles(&self) -> usize {
        self.g.rows() / self.channels
    }

    /// Channel rows of vehicle `i`.
    pub fn vehicle(&self, i: usize) -> Vec<Point> {
        (0..self.channels)
            .map(|c| self.g.point(i * self.channels + c))
            .collect()
    }
}

/// Invariant features, `M × D`.
#[derive(Clone, Debug, PartialEq)]
pub struct InvariantState {
    pub h: Tensor,
}

/// Relationship weights `c_ij ∈ [0,1]^Q` for every ordered pair `i ≠ j`.
#[derive(Clone, Debug, PartialEq)]
pub struct RelationTensor {
    vehicles: usize,
    /// `P × Q`, pairs in [`Layout`] order.
    pub values: Tensor,
}

impl RelationTensor {
    pub fn new(vehicles: usize, values: Tensor) -> Self {
        Self { vehicles, values }
    }

    /// Category weights of the pair `(i, j)`; `None` on the diagonal.
    pub fn get(&self, i: usize, j: usize) -> Option<&[f64]> {
        (i != j).then(|| self.values.row(Layout::pair_index(self.vehicles, i, j)))
    }
}

/// Tape handles produced by [`forward`].
#[derive(Clone, Copy, Debug)]
pub struct FeatureVars {
    pub g: Var,
    pub h: Var,
    pub relations: Var,
}

/// Runs initialization, relationship inference and the `N` update blocks.
pub fn forward(
    tape: &mut Tape,
    inputs: &SceneInputs,
    layout: &Layout,
    params: &Params<Var>,
    options: &ModelOptions,
) -> Result<FeatureVars> {
    let mut g = init_equivariant(
        tape,
        inputs,
        layout,
        params.init_g,
        options.equivariant_init,
    )?;
    let mut h = init_invariant(tape, inputs, &params.init_h)?;
    let relations = infer_relations(tape, layout, g, h, &params.relation)?;
    let route = match (&inputs.route, options.route_attraction) {
        (Some(r), true) => Some(tape.constant(r.clone())),
        (None, true) => {
            return Err(Error::validation(
                "route attraction is on but the scene inputs carry no route",
            ))
        }
        _ => None,
    };
    for block in &params.blocks {
        if let Some(route) = route {
            g = route_attraction(tape, layout, g, route, block.route)?;
        }
        g = inner_aggregation(tape, layout, g, h, &block.gate)?;
        g = neighbor_aggregation(tape, layout, g, h, relations, &block.edge)?;
        g = equivariant_nonlinearity(tape, layout, g, block.query, block.key)?;
        h = invariant_update(tape, layout, g, h, &block.message, &block.update)?;
    }
    Ok(FeatureVars { g, h, relations })
}

/// Weights plus the switches they were trained with.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub params: ModelParams,
    pub options: ModelOptions,
}

impl Model {
    pub fn new(params: ModelParams, options: ModelOptions) -> Self {
        Self { params, options }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.params.config
    }

    /// Feature states after the last block.
    pub fn features(
        &self,
        scene: &Scene,
    ) -> Result<(EquivariantState, InvariantState, RelationTensor)> {
        let inputs = encode_scene(scene, self.config(), &self.options)?;
        let layout = Layout::new(scene.num_vehicles(), self.config().coord_dim);
        let mut tape = Tape::new();
        let vars = self.params.tensors.to_tape(&mut tape);
        let out = forward(&mut tape, &inputs, &layout, &vars, &self.options)?;
        Ok((
            EquivariantState {
                g: tape.value(out.g).clone(),
                channels: layout.channels,
            },
            InvariantState {
                h: tape.value(out.h).clone(),
            },
            RelationTensor::new(layout.vehicles, tape.value(out.relations).clone()),
        ))
    }
}
