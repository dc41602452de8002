//! Parameter trees.
//!
//! [`Params<T>`] has the same shape whether it holds weights (`Tensor`),
//! tape handles (`Var`), gradients or optimizer moments. Every leaf has a
//! stable dotted name and a [`Role`]; maps applied to equivariant features
//! are plain matrices with no bias slot at all.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Architecture sizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Channels of the equivariant feature (`C`); also the route length.
    pub coord_dim: usize,
    /// Width of the invariant feature (`D`).
    pub hidden_dim: usize,
    /// Relationship categories (`Q`).
    pub relation_categories: usize,
    /// Decoded modes (`K`).
    pub modes: usize,
    /// Feature update blocks (`N`).
    pub blocks: usize,
    pub past_steps: usize,
    pub future_steps: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            coord_dim: 64,
            hidden_dim: 64,
            relation_categories: 4,
            modes: 6,
            blocks: 4,
            past_steps: 4,
            future_steps: 6,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.coord_dim < 2 {
            bad.push("coord_dim must be >= 2".to_string());
        }
        for (name, v) in [
            ("hidden_dim", self.hidden_dim),
            ("relation_categories", self.relation_categories),
            ("modes", self.modes),
            ("future_steps", self.future_steps),
        ] {
            if v == 0 {
                bad.push(format!("{name} must be >= 1"));
            }
        }
        if self.past_steps < 3 {
            bad.push("past_steps must be >= 3".to_string());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(bad))
        }
    }

    /// Length of the speed/angle vector fed to the invariant initializer.
    pub fn motion_features(&self) -> usize {
        2 * self.past_steps - 3
    }

    /// Points per decoded trajectory, including the score indicator.
    pub fn decoded_points(&self) -> usize {
        self.future_steps + 1
    }
}

/// Whether a tensor multiplies equivariant features (and therefore must be
/// bias-free) or only ever sees invariant inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Equivariant,
    Invariant,
}

/// Affine map `x·W + b` for row-batched inputs; `W` is `in×out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    pub weight: T,
    pub bias: T,
}

/// Two affine layers with a tanh in between.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    pub hidden: Linear<T>,
    pub output: Linear<T>,
}

/// Weights of one feature-update block.
#[derive(Clone, Debug, PartialEq)]
pub struct Block<T> {
    /// Route attraction, `C×C`.
    pub route: T,
    /// Inner-aggregation gates, `D → C`.
    pub gate: Mlp<T>,
    /// One edge MLP per relationship category, `2D+C → C`.
    pub edge: Vec<Mlp<T>>,
    /// Nonlinearity query and key maps, `C×C`.
    pub query: T,
    pub key: T,
    /// Invariant message, `2D+C → D`.
    pub message: Mlp<T>,
    /// Invariant update, `2D → D`.
    pub update: Mlp<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Params<T> {
    /// `C×T_p`.
    pub init_g: T,
    /// `2T_p−3 → D`.
    pub init_h: Mlp<T>,
    /// `2D+1 → Q`.
    pub relation: Mlp<T>,
    pub blocks: Vec<Block<T>>,
    /// One `(T_f+1)×C` matrix per mode.
    pub decoders: Vec<T>,
}

type Visitor<'a, T, U> = dyn FnMut(&str, Role, &T) -> U + 'a;

impl<T> Linear<T> {
    fn map<U>(&self, name: &str, f: &mut Visitor<'_, T, U>) -> Linear<U> {
        Linear {
            weight: f(&format!("{name}.weight"), Role::Invariant, &self.weight),
            bias: f(&format!("{name}.bias"), Role::Invariant, &self.bias),
        }
    }

    fn zip<U, V>(&self, other: &Linear<U>, f: &mut dyn FnMut(&T, &U) -> V) -> Linear<V> {
        Linear {
            weight: f(&self.weight, &other.weight),
            bias: f(&self.bias, &other.bias),
        }
    }
}

impl<T> Mlp<T> {
    fn map<U>(&self, name: &str, f: &mut Visitor<'_, T, U>) -> Mlp<U> {
        Mlp {
            hidden: self.hidden.map(&format!("{name}.hidden"), f),
            output: self.output.map(&format!("{name}.output"), f),
        }
    }

    fn zip<U, V>(&self, other: &Mlp<U>, f: &mut dyn FnMut(&T, &U) -> V) -> Mlp<V> {
        Mlp {
            hidden: self.hidden.zip(&other.hidden, f),
            output: self.output.zip(&other.output, f),
        }
    }
}

impl<T> Block<T> {
    fn map<U>(&self, name: &str, f: &mut Visitor<'_, T, U>) -> Block<U> {
        Block {
            route: f(&format!("{name}.route"), Role::Equivariant, &self.route),
            gate: self.gate.map(&format!("{name}.gate"), f),
            edge: self
                .edge
                .iter()
                .enumerate()
                .map(|(q, m)| m.map(&format!("{name}.edge.{q}"), f))
                .collect(),
            query: f(&format!("{name}.query"), Role::Equivariant, &self.query),
            key: f(&format!("{name}.key"), Role::Equivariant, &self.key),
            message: self.message.map(&format!("{name}.message"), f),
            update: self.update.map(&format!("{name}.update"), f),
        }
    }

    fn zip<U, V>(&self, other: &Block<U>, f: &mut dyn FnMut(&T, &U) -> V) -> Block<V> {
        Block {
            route: f(&self.route, &other.route),
            gate: self.gate.zip(&other.gate, f),
            edge: self
                .edge
                .iter()
                .zip(&other.edge)
                .map(|(a, b)| a.zip(b, f))
                .collect(),
            query: f(&self.query, &other.query),
            key: f(&self.key, &other.key),
            message: self.message.zip(&other.message, f),
            update: self.update.zip(&other.update, f),
        }
    }
}

impl<T> Params<T> {
    /// Applies `f` to every leaf in a fixed order, passing its name and role.
    pub fn map<U>(&self, mut f: impl FnMut(&str, Role, &T) -> U) -> Params<U> {
        let f: &mut Visitor<'_, T, U> = &mut f;
        Params {
            init_g: f("init_g", Role::Equivariant, &self.init_g),
            init_h: self.init_h.map("init_h", f),
            relation: self.relation.map("relation", f),
            blocks: self
                .blocks
                .iter()
                .enumerate()
                .map(|(l, b)| b.map(&format!("blocks.{l}"), f))
                .collect(),
            decoders: self
                .decoders
                .iter()
                .enumerate()
                .map(|(k, d)| f(&format!("decoders.{k}"), Role::Equivariant, d))
                .collect(),
        }
    }

    /// Combines two trees of identical structure leaf by leaf.
    pub fn zip<U, V>(&self, other: &Params<U>, mut f: impl FnMut(&T, &U) -> V) -> Params<V> {
        let f: &mut dyn FnMut(&T, &U) -> V = &mut f;
        Params {
            init_g: f(&self.init_g, &other.init_g),
            init_h: self.init_h.zip(&other.init_h, f),
            relation: self.relation.zip(&other.relation, f),
            blocks: self
                .blocks
                .iter()
                .zip(&other.blocks)
                .map(|(a, b)| a.zip(b, f))
                .collect(),
            decoders: self
                .decoders
                .iter()
                .zip(&other.decoders)
                .map(|(a, b)| f(a, b))
                .collect(),
        }
    }

    /// Visits every leaf in the same order as [`Params::map`].
    pub fn for_each(&self, mut f: impl FnMut(&str, Role, &T)) {
        let _ = self.map(|n, r, t| f(n, r, t));
    }

    pub fn names(&self) -> Vec<(String, Role)> {
        let mut out = Vec::new();
        self.for_each(|n, r, _| out.push((n.to_string(), r)));
        out
    }
}

impl Params<Tensor> {
    /// Every leaf in [`Params::map`] order.
    pub fn leaves(&self) -> Vec<&Tensor> {
        let p = self;
        let mut out: Vec<&Tensor> = vec![&p.init_g];
        mlp_leaves(&p.init_h, &mut out);
        mlp_leaves(&p.relation, &mut out);
        for b in &p.blocks {
            out.push(&b.route);
            mlp_leaves(&b.gate, &mut out);
            for e in &b.edge {
                mlp_leaves(e, &mut out);
            }
            out.push(&b.query);
            out.push(&b.key);
            mlp_leaves(&b.message, &mut out);
            mlp_leaves(&b.update, &mut out);
        }
        out.extend(p.decoders.iter());
        out
    }

    pub fn leaves_mut(&mut self) -> Vec<&mut Tensor> {
        let p = self;
        let mut out: Vec<&mut Tensor> = vec![&mut p.init_g];
        mlp_leaves_mut(&mut p.init_h, &mut out);
        mlp_leaves_mut(&mut p.relation, &mut out);
        for b in &mut p.blocks {
            out.push(&mut b.route);
            mlp_leaves_mut(&mut b.gate, &mut out);
            for e in &mut b.edge {
                mlp_leaves_mut(e, &mut out);
            }
            out.push(&mut b.query);
            out.push(&mut b.key);
            mlp_leaves_mut(&mut b.message, &mut out);
            mlp_leaves_mut(&mut b.update, &mut out);
        }
        out.extend(p.decoders.iter_mut());
        out
    }

    pub fn zeros_like(&self) -> Params<Tensor> {
        self.map(|_, _, t| Tensor::zeros(t.rows(), t.cols()))
    }

    pub fn count(&self) -> usize {
        let mut n = 0;
        self.for_each(|_, _, t| n += t.len());
        n
    }

    pub fn to_tape(&self, tape: &mut Tape) -> Params<Var> {
        self.map(|_, _, t| tape.leaf(t.clone()))
    }

    pub fn named(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.for_each(|n, _, t| out.push((n.to_string(), t.clone())));
        out
    }

    /// First leaf holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<String> {
        let mut found = None;
        self.for_each(|n, _, t| {
            if found.is_none() && !t.is_finite() {
                found = Some(n.to_string());
            }
        });
        found
    }

    pub fn max_abs_diff(&self, other: &Params<Tensor>) -> f64 {
        let mut worst = 0.0f64;
        let _ = self.zip(other, |a, b| worst = worst.max(a.max_abs_diff(b)));
        worst
    }
}

fn mlp_leaves<'a>(m: &'a Mlp<Tensor>, out: &mut Vec<&'a Tensor>) {
    out.extend([
        &m.hidden.weight,
        &m.hidden.bias,
        &m.output.weight,
        &m.output.bias,
    ]);
}

fn mlp_leaves_mut<'a>(m: &'a mut Mlp<Tensor>, out: &mut Vec<&'a mut Tensor>) {
    out.push(&mut m.hidden.weight);
    out.push(&mut m.hidden.bias);
    out.push(&mut m.output.weight);
    out.push(&mut m.output.bias);
}

impl Params<Var> {
    pub fn gradients(&self, grads: &mut crate::tensor::Gradients) -> Params<Tensor> {
        self.map(|_, _, v| grads.take(*v))
    }
}

/// Trainable weights together with the architecture that shaped them.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub tensors: Params<Tensor>,
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    Tensor::new(rows, cols, data).expect("sized buffer")
}

fn linear(rng: &mut ChaCha8Rng, input: usize, output: usize) -> Linear<Tensor> {
    Linear {
        weight: uniform(rng, input, output, input),
        bias: uniform(rng, 1, output, input),
    }
}

fn mlp(rng: &mut ChaCha8Rng, input: usize, hidden: usize, output: usize) -> Mlp<Tensor> {
    Mlp {
        hidden: linear(rng, input, hidden),
        output: linear(rng, hidden, output),
    }
}

impl ModelParams {
    /// Uniform initialization in `[−1/√fan_in, 1/√fan_in]`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c, d, q) = (
            config.coord_dim,
            config.hidden_dim,
            config.relation_categories,
        );
        let pair_in = 2 * d + c;
        let tensors = Params {
            init_g: uniform(&mut rng, c, config.past_steps, config.past_steps),
            init_h: mlp(&mut rng, config.motion_features(), d, d),
            relation: mlp(&mut rng, 2 * d + 1, d, q),
            blocks: (0..config.blocks)
                .map(|_| Block {
                    route: uniform(&mut rng, c, c, c),
                    gate: mlp(&mut rng, d, d, c),
                    edge: (0..q).map(|_| mlp(&mut rng, pair_in, d, c)).collect(),
                    query: uniform(&mut rng, c, c, c),
                    key: uniform(&mut rng, c, c, c),
                    message: mlp(&mut rng, pair_in, d, d),
                    update: mlp(&mut rng, 2 * d, d, d),
                })
                .collect(),
            decoders: (0..config.modes)
                .map(|_| uniform(&mut rng, config.decoded_points(), c, c))
                .collect(),
        };
        Ok(Self { config, tensors })
    }

    pub fn count(&self) -> usize {
        self.tensors.count()
    }

    /// Checks that `tensors` has exactly the shapes `config` implies.
    pub fn check_shapes(&self) -> Result<()> {
        let reference = ModelParams::init(self.config, 0)?;
        if reference.tensors.names() != self.tensors.names() {
            return Err(Error::Checkpoint(
                "parameter names do not match the model configuration".into(),
            ));
        }
        let mut bad = Vec::new();
        let _ = reference.tensors.zip(&self.tensors, |a, b| {
            if a.shape() != b.shape() {
                bad.push(format!("{:?} vs {:?}", b.shape(), a.shape()));
            }
        });
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Checkpoint(format!(
                "parameter shapes do not match the model configuration: {}",
                bad.join(", ")
            )))
        }
    }
}
