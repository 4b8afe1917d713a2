//! The shared embedding backbone: a seeded MLP over feature vectors.
//!
//! Every learner embeds inputs through the same architecture; heads differ
//! per method and live next to the backbone weights in the same [`ParamSet`]
//! under their own name prefix.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::{bind, BoundParams, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    /// No nonlinearity; the whole backbone collapses to a linear map.
    /// Exists so linearity of the forward pass can be tested directly.
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub embed_dim: usize,
    pub activation: Activation,
}

impl BackboneConfig {
    /// Desk-scale default: 16 -> [64, 64] -> 32 with ReLU.
    pub fn desk(input_dim: usize) -> Self {
        BackboneConfig {
            input_dim,
            hidden_dims: vec![64, 64],
            embed_dim: 32,
            activation: Activation::Relu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.embed_dim < 2 || self.hidden_dims.is_empty() {
            return Err(Error::InvalidInput(format!(
                "backbone config requires input_dim > 0, at least one hidden layer and embed_dim >= 2, got {self:?}"
            )));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::InvalidInput("backbone hidden dims must be positive".into()));
        }
        Ok(())
    }

    /// (fan_in, fan_out) of each linear layer, input to embedding.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut prev = self.input_dim;
        for &h in &self.hidden_dims {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.embed_dim));
        dims
    }

    pub fn n_layers(&self) -> usize {
        self.hidden_dims.len() + 1
    }
}

fn layer_weight_name(layer: usize) -> String {
    format!("backbone.{layer}.w")
}

fn layer_bias_name(layer: usize) -> String {
    format!("backbone.{layer}.b")
}

/// Kaiming-style uniform initialization, bound sqrt(6 / fan_in), zero biases.
pub fn init_backbone<T: Scalar>(cfg: &BackboneConfig, seed: u64) -> Result<ParamSet<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    for (layer, (fan_in, fan_out)) in cfg.layer_dims().into_iter().enumerate() {
        let w = init_linear(&mut rng, fan_in, fan_out);
        params.insert(layer_weight_name(layer), w);
        params.insert(layer_bias_name(layer), Tensor::zeros(vec![fan_out]));
    }
    Ok(params)
}

/// One Kaiming-uniform weight matrix `[fan_in, fan_out]`.
pub fn init_linear<T: Scalar>(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    let values = (0..fan_in * fan_out)
        .map(|_| T::of(rng.random_range(-bound..bound)))
        .collect();
    Tensor::new(vec![fan_in, fan_out], values).expect("sized above")
}

/// Forward pass of the backbone on a `[batch, input_dim]` leaf; records the
/// computation on the tape so `backward` can run.
pub fn forward_embed<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &BoundParams,
    cfg: &BackboneConfig,
    x: Var,
) -> Result<Var> {
    let got = tape.shape(x).to_vec();
    if got.len() != 2 || got[1] != cfg.input_dim {
        return Err(Error::dimension(
            "forward_embed input x",
            format!("[batch, {}]", cfg.input_dim),
            format!("{got:?}"),
        ));
    }
    let n_layers = cfg.n_layers();
    let mut h = x;
    for layer in 0..n_layers {
        let w = bound.var(&layer_weight_name(layer))?;
        let b = bound.var(&layer_bias_name(layer))?;
        let z = tape.matmul(h, w)?;
        let z = tape.add_row_vec(z, b)?;
        h = if layer + 1 < n_layers {
            match cfg.activation {
                Activation::Relu => tape.relu(z),
                Activation::Identity => z,
            }
        } else {
            // Linear embedding layer.
            z
        };
    }
    Ok(h)
}

/// Convenience: embed a raw matrix with no gradient bookkeeping kept around.
pub fn embed_values<T: Scalar>(
    params: &ParamSet<T>,
    cfg: &BackboneConfig,
    x: &[T],
    batch: usize,
) -> Result<Vec<T>> {
    if x.len() != batch * cfg.input_dim {
        return Err(Error::dimension(
            "forward_embed input x",
            format!("{} values for [{batch}, {}]", batch * cfg.input_dim, cfg.input_dim),
            x.len(),
        ));
    }
    let mut tape = Tape::new();
    let bound = bind(&mut tape, params);
    let x = tape.leaf_matrix(batch, cfg.input_dim, x.to_vec())?;
    let e = forward_embed(&mut tape, &bound, cfg, x)?;
    Ok(tape.value(e).to_vec())
}
