//! Matching classification: cosine attention from each query to every
//! support embedding, class score = total attention mass on that class.

use crate::backbone::{forward_embed, BackboneConfig};
use crate::episodes::Episode;
use crate::error::Result;
use crate::learners::{episode_vars, support_onehot};
use crate::params::BoundParams;
use crate::scalar::Scalar;
use crate::tensor::{Tape, Var};

/// `score[q, c] = sum_{s in c} softmax_s(cos(embed(q), embed(s)))`.
/// Scores are probabilities over classes (rows sum to one).
pub fn matching_logits<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &BoundParams,
    backbone: &BackboneConfig,
    ep: &Episode<T>,
) -> Result<Var> {
    let (sx, qx) = episode_vars(tape, ep)?;
    let se = forward_embed(tape, bound, backbone, sx)?;
    let qe = forward_embed(tape, bound, backbone, qx)?;
    let sn = tape.normalize_rows(se)?;
    let qn = tape.normalize_rows(qe)?;
    let sims = tape.matmul_nt(qn, sn)?;
    let attention = tape.softmax_rows(sims)?;
    let onehot = support_onehot(tape, ep)?;
    tape.matmul(attention, onehot)
}
