//! Relation scoring: a learned two-layer module scores the concatenation of
//! a query embedding with each class prototype; trained end to end with
//! cross-entropy over the per-class scores.

use crate::backbone::forward_embed;
use crate::episodes::Episode;
use crate::error::Result;
use crate::learners::{episode_vars, linear_logits, prototype_matrix, LearnerConfig};
use crate::params::BoundParams;
use crate::scalar::Scalar;
use crate::tensor::{Tape, Var};

/// `score[q, c] = relation_mlp(concat(embed(q), prototype_c))`.
pub fn relation_logits<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &BoundParams,
    config: &LearnerConfig,
    ep: &Episode<T>,
) -> Result<Var> {
    let (sx, qx) = episode_vars(tape, ep)?;
    let se = forward_embed(tape, bound, &config.backbone, sx)?;
    let qe = forward_embed(tape, bound, &config.backbone, qx)?;
    let m = prototype_matrix(tape, ep)?;
    let protos = tape.matmul(m, se)?;

    let pairs = tape.pair_concat(qe, protos)?;
    let w0 = bound.var("relation.0.w")?;
    let b0 = bound.var("relation.0.b")?;
    let h = linear_logits(tape, pairs, w0, b0)?;
    let h = tape.relu(h);
    let w1 = bound.var("relation.1.w")?;
    let b1 = bound.var("relation.1.b")?;
    let scores = linear_logits(tape, h, w1, b1)?;
    tape.reshape(scores, vec![ep.n_query(), ep.n_way()])
}
