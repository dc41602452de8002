use super::params::Mlp;
use super::SceneInputs;
use crate::error::Result;
use crate::tensor::{Tape, Tensor, Var};

/// Precomputed row indices for a scene with `vehicles` vehicles and
/// `channels` equivariant channels.
#[derive(Clone, Debug)]
pub struct Layout {
    pub vehicles: usize,
    pub channels: usize,
    /// First and second vehicle of each ordered pair.
    pub pair_first: Vec<usize>,
    pub pair_second: Vec<usize>,
    /// `G` rows of the first/second vehicle, `C` per pair.
    pair_first_rows: Vec<usize>,
    pair_second_rows: Vec<usize>,
    /// `G` row → channel, for means over vehicles.
    row_channel: Vec<usize>,
    /// `G` row → vehicle, for means over channels.
    row_vehicle: Vec<usize>,
}

impl Layout {
    pub fn new(vehicles: usize, channels: usize) -> Self {
        let mut pair_first = Vec::new();
        let mut pair_second = Vec::new();
        for i in 0..vehicles {
            for j in 0..vehicles {
                if i != j {
                    pair_first.push(i);
                    pair_second.push(j);
                }
            }
        }
        let block_rows = |vs: &[usize]| -> Vec<usize> {
            vs.iter()
                .flat_map(|&v| (0..channels).map(move |c| v * channels + c))
                .collect()
        };
        Self {
            pair_first_rows: block_rows(&pair_first),
            pair_second_rows: block_rows(&pair_second),
            row_channel: (0..vehicles * channels).map(|r| r % channels).collect(),
            row_vehicle: (0..vehicles * channels).map(|r| r / channels).collect(),
            pair_first,
            pair_second,
            vehicles,
            channels,
        }
    }

    pub fn pairs(&self) -> usize {
        self.pair_first.len()
    }

    /// Row of pair `(i, j)`, `i ≠ j`, in a pair tensor.
    pub fn pair_index(vehicles: usize, i: usize, j: usize) -> usize {
        debug_assert!(i != j);
        i * (vehicles - 1) + if j > i { j - 1 } else { j }
    }
}

/// `tanh(x·W₁ + b₁)·W₂ + b₂` on row-batched inputs.
pub fn mlp(tape: &mut Tape, x: Var, p: &Mlp<Var>) -> Result<Var> {
    let z = tape.matmul(x, p.hidden.weight)?;
    let z = tape.add_row(z, p.hidden.bias)?;
    let z = tape.tanh(z);
    let z = tape.matmul(z, p.output.weight)?;
    Ok(tape.add_row(z, p.output.bias)?)
}

/// Mean of `G` over vehicles (`C × 2`), tiled back to `M·C × 2`.
pub fn vehicle_mean(tape: &mut Tape, layout: &Layout, g: Var) -> Result<Var> {
    let sum = tape.segment_sum(g, &layout.row_channel, layout.channels)?;
    let mean = tape.scale(sum, 1.0 / layout.vehicles as f64);
    Ok(tape.broadcast_rows(mean, layout.vehicles * layout.channels)?)
}

/// Channel mean of each vehicle's feature, `M × 2`.
pub fn channel_mean(tape: &mut Tape, layout: &Layout, g: Var) -> Result<Var> {
    let sum = tape.segment_sum(g, &layout.row_vehicle, layout.vehicles)?;
    Ok(tape.scale(sum, 1.0 / layout.channels as f64))
}

/// `G_i = W·(X_i − X̄) + X̄`, with `X̄` the mean of all observed positions.
/// With `centered = false` the mean is neither subtracted nor re-added.
pub fn init_equivariant(
    tape: &mut Tape,
    inputs: &SceneInputs,
    layout: &Layout,
    weight: Var,
    centered: bool,
) -> Result<Var> {
    let m = layout.vehicles;
    if !centered {
        let x = tape.constant(inputs.past.clone());
        return Ok(tape.block_matmul(weight, x, m)?);
    }
    let mean = inputs.past_mean;
    let mut centered_past = inputs.past.clone();
    for row in centered_past.data_mut().chunks_exact_mut(2) {
        row[0] -= mean[0];
        row[1] -= mean[1];
    }
    let x = tape.constant(centered_past);
    let g = tape.block_matmul(weight, x, m)?;
    let mean = tape.constant(Tensor::from_points(&[mean]));
    let mean = tape.broadcast_rows(mean, m * layout.channels)?;
    Ok(tape.add(g, mean)?)
}

/// `h_i = MLP([‖ΔX_i‖; angle(ΔX_i^τ, ΔX_i^{τ−1})])`.
pub fn init_invariant(tape: &mut Tape, inputs: &SceneInputs, p: &Mlp<Var>) -> Result<Var> {
    let x = tape.constant(inputs.motion.clone());
    mlp(tape, x, p)
}

/// Pair features `[h_i; h_j; ‖G_i − G_j‖]` (`P × (2D + C)`) together with
/// the per-channel differences `G_i − G_j` (`P·C × 2`).
pub(crate) fn pair_inputs(tape: &mut Tape, layout: &Layout, g: Var, h: Var) -> Result<(Var, Var)> {
    let gi = tape.gather_rows(g, &layout.pair_first_rows)?;
    let gj = tape.gather_rows(g, &layout.pair_second_rows)?;
    let diff = tape.sub(gi, gj)?;
    let dist = tape.rowwise_l2norm(diff)?;
    let dist = tape.reshape(dist, layout.pairs(), layout.channels)?;
    let hi = tape.gather_rows(h, &layout.pair_first)?;
    let hj = tape.gather_rows(h, &layout.pair_second)?;
    Ok((tape.concat_cols(&[hi, hj, dist])?, diff))
}

/// `c_ij = softmax(MLP([h_i; h_j; ‖ρ(G_i) − ρ(G_j)‖]))` for every ordered
/// pair, `ρ` being the channel mean. Returns `P × Q`.
pub fn infer_relations(
    tape: &mut Tape,
    layout: &Layout,
    g: Var,
    h: Var,
    p: &Mlp<Var>,
) -> Result<Var> {
    let centers = channel_mean(tape, layout, g)?;
    let ci = tape.gather_rows(centers, &layout.pair_first)?;
    let cj = tape.gather_rows(centers, &layout.pair_second)?;
    let d = tape.sub(ci, cj)?;
    let dist = tape.rowwise_l2norm(d)?;
    let hi = tape.gather_rows(h, &layout.pair_first)?;
    let hj = tape.gather_rows(h, &layout.pair_second)?;
    let x = tape.concat_cols(&[hi, hj, dist])?;
    let logits = mlp(tape, x, p)?;
    Ok(tape.softmax_rows(logits))
}

/// `G_0 ← G_0 + W·(L − G_0)`; other vehicles pass through.
pub fn route_attraction(
    tape: &mut Tape,
    layout: &Layout,
    g: Var,
    route: Var,
    weight: Var,
) -> Result<Var> {
    let c = layout.channels;
    let ego_rows: Vec<usize> = (0..c).collect();
    let ego = tape.gather_rows(g, &ego_rows)?;
    let toward = tape.sub(route, ego)?;
    let pull = tape.matmul(weight, toward)?;
    let ego = tape.add(ego, pull)?;
    if layout.vehicles == 1 {
        return Ok(ego);
    }
    let rest_rows: Vec<usize> = (c..layout.vehicles * c).collect();
    let rest = tape.gather_rows(g, &rest_rows)?;
    Ok(tape.concat_rows(&[ego, rest])?)
}

/// `G_i ← σ(MLP(h_i)) ⊙ (G_i − Ḡ) + Ḡ` with one gate per channel.
pub fn inner_aggregation(
    tape: &mut Tape,
    layout: &Layout,
    g: Var,
    h: Var,
    gate: &Mlp<Var>,
) -> Result<Var> {
    let mean = vehicle_mean(tape, layout, g)?;
    let centered = tape.sub(g, mean)?;
    let logits = mlp(tape, h, gate)?;
    let gates = tape.sigmoid(logits);
    let gates = tape.reshape(gates, layout.vehicles * layout.channels, 1)?;
    let scaled = tape.mul_col(centered, gates)?;
    Ok(tape.add(scaled, mean)?)
}

/// `e_ij = Σ_q c_ij,q · MLP_q([h_i; h_j; ‖G_i − G_j‖])`, then
/// `G_i ← G_i + 1/|N_i| Σ_j e_ij ⊙ (G_i − G_j)`.
pub fn neighbor_aggregation(
    tape: &mut Tape,
    layout: &Layout,
    g: Var,
    h: Var,
    relations: Var,
    edge: &[Mlp<Var>],
) -> Result<Var> {
    let pairs = layout.pairs();
    if pairs == 0 {
        return Ok(g);
    }
    let (x, diff) = pair_inputs(tape, layout, g, h)?;
    let q_count = edge.len();
    let flat_rel = tape.reshape(relations, pairs * q_count, 1)?;
    let mut weight: Option<Var> = None;
    for (q, p) in edge.iter().enumerate() {
        let e = mlp(tape, x, p)?;
        let rows: Vec<usize> = (0..pairs).map(|r| r * q_count + q).collect();
        let cq = tape.gather_rows(flat_rel, &rows)?;
        let term = tape.mul_col(e, cq)?;
        weight = Some(match weight {
            Some(acc) => tape.add(acc, term)?,
            None => term,
        });
    }
    let weight = weight.expect("at least one relationship category");
    let weight = tape.reshape(weight, pairs * layout.channels, 1)?;
    let messages = tape.mul_col(diff, weight)?;
    let targets: Vec<usize> = layout
        .pair_first
        .iter()
        .flat_map(|&i| (0..layout.channels).map(move |c| i * layout.channels + c))
        .collect();
    let summed = tape.segment_sum(messages, &targets, layout.vehicles * layout.channels)?;
    let summed = tape.scale(summed, 1.0 / (layout.vehicles - 1) as f64);
    Ok(tape.add(g, summed)?)
}

/// Per channel, `q = W_q(G_i − Ḡ)` is kept when `⟨q, k⟩ ≥ 0` with
/// `k = W_k(G_i − Ḡ)` and mirrored across `k⊥` otherwise; `Ḡ` is re-added.
pub fn equivariant_nonlinearity(
    tape: &mut Tape,
    layout: &Layout,
    g: Var,
    query: Var,
    key: Var,
) -> Result<Var> {
    let mean = vehicle_mean(tape, layout, g)?;
    let centered = tape.sub(g, mean)?;
    let q = tape.block_matmul(query, centered, layout.vehicles)?;
    let k = tape.block_matmul(key, centered, layout.vehicles)?;
    let out = tape.reflect_negative(q, k)?;
    Ok(tape.add(out, mean)?)
}

/// `p_i = Σ_j MLP_m([h_i; h_j; ‖G_i − G_j‖])`, `h_i ← MLP_h([h_i; p_i])`.
pub fn invariant_update(
    tape: &mut Tape,
    layout: &Layout,
    g: Var,
    h: Var,
    message: &Mlp<Var>,
    update: &Mlp<Var>,
) -> Result<Var> {
    let d = tape.value(h).cols();
    let p = if layout.pairs() == 0 {
        tape.constant(Tensor::zeros(layout.vehicles, d))
    } else {
        let (x, _) = pair_inputs(tape, layout, g, h)?;
        let msg = mlp(tape, x, message)?;
        tape.segment_sum(msg, &layout.pair_first, layout.vehicles)?
    };
    let x = tape.concat_cols(&[h, p])?;
    mlp(tape, x, update)
}
