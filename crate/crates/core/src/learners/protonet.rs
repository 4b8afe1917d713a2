//! Prototypical classification: class means in embedding space, queries
//! scored by negative squared Euclidean distance to each prototype.

use crate::backbone::{forward_embed, BackboneConfig};
use crate::episodes::Episode;
use crate::error::Result;
use crate::learners::{episode_vars, prototype_matrix};
use crate::params::BoundParams;
use crate::scalar::Scalar;
use crate::tensor::{Tape, Var};

/// `logit[q, c] = -||embed(q) - prototype_c||^2`, differentiable end to end.
pub fn protonet_logits<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &BoundParams,
    backbone: &BackboneConfig,
    ep: &Episode<T>,
) -> Result<Var> {
    let (sx, qx) = episode_vars(tape, ep)?;
    let se = forward_embed(tape, bound, backbone, sx)?;
    let qe = forward_embed(tape, bound, backbone, qx)?;
    let m = prototype_matrix(tape, ep)?;
    let protos = tape.matmul(m, se)?;
    neg_sq_distances(tape, qe, protos)
}

/// `-||a_i - b_j||^2` expanded as `2 a.b - ||a||^2 - ||b||^2`.
pub(crate) fn neg_sq_distances<T: Scalar>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
    let cross = tape.matmul_nt(a, b)?;
    let two_cross = tape.scale(cross, T::of(2.0));
    let a_sq = tape.mul(a, a)?;
    let a_norms = tape.sum_axis1(a_sq)?;
    let neg_a = tape.scale(a_norms, -T::one());
    let b_sq = tape.mul(b, b)?;
    let b_norms = tape.sum_axis1(b_sq)?;
    let neg_b = tape.scale(b_norms, -T::one());
    let partial = tape.add_col_vec(two_cross, neg_a)?;
    tape.add_row_vec(partial, neg_b)
}
