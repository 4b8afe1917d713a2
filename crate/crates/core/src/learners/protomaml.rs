//! Prototype-initialized first-order MAML: each episode gets a fresh linear
//! head whose weights are built from the support prototypes (columns `2 p_c`,
//! biases `-||p_c||^2`), so before any inner step the head ranks classes
//! exactly like prototypical classification. The inner loop then adapts head
//! and backbone jointly. The outer update is first-order in the inner
//! trajectory but keeps the head initialization differentiable: the query
//! gradient of the adapted head is pulled back through the prototypes into
//! the backbone.

use crate::backbone::forward_embed;
use crate::episodes::Episode;
use crate::error::Result;
use crate::learners::maml::maml_adapt;
use crate::learners::{prototype_matrix, LearnerState};
use crate::params::{bind, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::{argmax_rows, Tape, Tensor};

/// Head initialization from support prototypes: returns
/// (`w [embed, n_way]` with column `c` equal to `2 p_c`, `b [n_way]` with
/// `b_c = -||p_c||^2`).
pub fn prototype_head<T: Scalar>(
    state: &LearnerState<T>,
    ep: &Episode<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let mut tape = Tape::new();
    let bound = bind(&mut tape, &state.params);
    let sx = tape.leaf_matrix(ep.n_support(), ep.dim, ep.support_x.clone())?;
    let se = forward_embed(&mut tape, &bound, &state.config.backbone, sx)?;
    let m = prototype_matrix(&mut tape, ep)?;
    let protos = tape.matmul(m, se)?;
    let p = tape.value(protos);
    let n_way = ep.n_way();
    let embed = state.config.backbone.embed_dim;

    let two = T::of(2.0);
    let mut w = vec![T::zero(); embed * n_way];
    let mut b = vec![T::zero(); n_way];
    for c in 0..n_way {
        let mut norm_sq = T::zero();
        for d in 0..embed {
            let v = p[c * embed + d];
            w[d * n_way + c] = two * v;
            norm_sq = norm_sq + v * v;
        }
        b[c] = -norm_sq;
    }
    Ok((Tensor::new(vec![embed, n_way], w)?, Tensor::new(vec![n_way], b)?))
}

/// Build the episodic parameter set (backbone clone + prototype head) and run
/// the first-order inner loop on the support set.
pub fn protomaml_adapt<T: Scalar>(state: &LearnerState<T>, ep: &Episode<T>) -> Result<ParamSet<T>> {
    let (w, b) = prototype_head(state, ep)?;
    let mut episodic = state.params.clone();
    episodic.insert("head.w", w);
    episodic.insert("head.b", b);
    maml_adapt(&episodic, &state.config, &ep.support_x, &ep.support_y)
}

pub fn protomaml_predict<T: Scalar>(state: &LearnerState<T>, ep: &Episode<T>) -> Result<Vec<usize>> {
    let adapted = protomaml_adapt(state, ep)?;
    let mut tape = Tape::new();
    let bound = bind(&mut tape, &adapted);
    let qx = tape.leaf_matrix(ep.n_query(), ep.dim, ep.query_x.clone())?;
    let e = forward_embed(&mut tape, &bound, &state.config.backbone, qx)?;
    let logits = tape.matmul(e, bound.var("head.w")?)?;
    let logits = tape.add_row_vec(logits, bound.var("head.b")?)?;
    Ok(argmax_rows(tape.value(logits), ep.n_query(), ep.n_way()))
}

/// One first-order meta-gradient: the query-loss gradient at the adapted
/// parameters transfers to the backbone initialization (as in MAML), and the
/// adapted head's gradient is additionally pulled back through the prototype
/// initialization (the inner-loop increment is a constant of the episode).
pub fn protomaml_meta_step<T: Scalar>(
    state: &mut LearnerState<T>,
    ep: &Episode<T>,
    inv: T,
) -> Result<T> {
    let adapted = protomaml_adapt(state, ep)?;
    let n_way = ep.n_way();
    let embed = state.config.backbone.embed_dim;

    // Pass 1: query loss and gradients at the adapted parameters.
    let mut tape = Tape::new();
    let bound = bind(&mut tape, &adapted);
    let qx = tape.leaf_matrix(ep.n_query(), ep.dim, ep.query_x.clone())?;
    let e = forward_embed(&mut tape, &bound, &state.config.backbone, qx)?;
    let logits = tape.matmul(e, bound.var("head.w")?)?;
    let logits = tape.add_row_vec(logits, bound.var("head.b")?)?;
    let loss = tape.cross_entropy_mean(logits, &ep.query_y)?;
    let scaled = tape.scale(loss, inv);
    tape.backward(scaled)?;
    let loss_value = tape.value(loss)[0];

    for (name, t) in state.params.iter_mut() {
        t.accumulate_grad(tape.grad(bound.var(name)?))?;
    }
    let head_w_grad = tape.grad(bound.var("head.w")?).to_vec();
    let head_b_grad = tape.grad(bound.var("head.b")?).to_vec();

    // Pass 2: pull the head gradient back through the prototype
    // construction. Pseudo-loss <dL/dW0, W0(theta)> + <dL/db0, b0(theta)>
    // has exactly the wanted gradient with respect to the backbone.
    let mut tape = Tape::new();
    let bound = bind(&mut tape, &state.params);
    let sx = tape.leaf_matrix(ep.n_support(), ep.dim, ep.support_x.clone())?;
    let se = forward_embed(&mut tape, &bound, &state.config.backbone, sx)?;
    let m = prototype_matrix(&mut tape, ep)?;
    let protos = tape.matmul(m, se)?;

    // <G_w, 2 P^T> = sum_{c,d} 2 G_w[d,c] P[c,d]
    let mut gw_t = vec![T::zero(); n_way * embed];
    for d in 0..embed {
        for c in 0..n_way {
            gw_t[c * embed + d] = head_w_grad[d * n_way + c];
        }
    }
    let gw = tape.leaf(vec![n_way, embed], gw_t)?;
    let w_inner = tape.mul(protos, gw)?;
    let w_term = tape.sum_all(w_inner);
    let w_term = tape.scale(w_term, T::of(2.0));

    // <G_b, -||p_c||^2>
    let p_sq = tape.mul(protos, protos)?;
    let p_norms = tape.sum_axis1(p_sq)?;
    let gb = tape.leaf(vec![n_way], head_b_grad)?;
    let b_inner = tape.mul(p_norms, gb)?;
    let b_term = tape.sum_all(b_inner);
    let b_term = tape.scale(b_term, -T::one());

    let pseudo = tape.add(w_term, b_term)?;
    tape.backward(pseudo)?;
    for (name, t) in state.params.iter_mut() {
        t.accumulate_grad(tape.grad(bound.var(name)?))?;
    }
    Ok(loss_value)
}
