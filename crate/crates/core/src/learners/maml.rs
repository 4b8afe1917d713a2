//! First-order model-agnostic meta-learning: a shared initialization adapted
//! to each task by a few full-batch gradient steps on the support set. The
//! outer update applies the query-loss gradient taken *at the adapted
//! parameters* to the initialization (no differentiation through the inner
//! trajectory).

use crate::backbone::forward_embed;
use crate::episodes::Episode;
use crate::error::{Error, Result};
use crate::learners::{linear_logits, LearnerConfig, LearnerState};
use crate::optim::Optimizer;
use crate::params::{bind, harvest, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::{argmax_rows, Tape};

/// Cross-entropy loss of `params` (backbone + linear head) on a labeled
/// batch, with gradients accumulated into `params`. Returns the loss.
fn head_loss_and_grads<T: Scalar>(
    params: &mut ParamSet<T>,
    cfg: &LearnerConfig,
    x: &[T],
    y: &[usize],
    rows: usize,
) -> Result<T> {
    let mut tape = Tape::new();
    let bound = bind(&mut tape, params);
    let xv = tape.leaf_matrix(rows, cfg.backbone.input_dim, x.to_vec())?;
    let e = forward_embed(&mut tape, &bound, &cfg.backbone, xv)?;
    let logits = linear_logits(&mut tape, e, bound.var("head.w")?, bound.var("head.b")?)?;
    let loss = tape.cross_entropy_mean(logits, y)?;
    tape.backward(loss)?;
    harvest(&tape, &bound, params)?;
    Ok(tape.value(loss)[0])
}

/// Loss only, no gradient bookkeeping.
pub fn head_loss<T: Scalar>(
    params: &ParamSet<T>,
    cfg: &LearnerConfig,
    x: &[T],
    y: &[usize],
    rows: usize,
) -> Result<T> {
    let mut tape = Tape::new();
    let bound = bind(&mut tape, params);
    let xv = tape.leaf_matrix(rows, cfg.backbone.input_dim, x.to_vec())?;
    let e = forward_embed(&mut tape, &bound, &cfg.backbone, xv)?;
    let logits = linear_logits(&mut tape, e, bound.var("head.w")?, bound.var("head.b")?)?;
    let loss = tape.cross_entropy_mean(logits, y)?;
    Ok(tape.value(loss)[0])
}

/// Inner loop: `inner_steps` of full-batch gradient descent on the support
/// cross-entropy, starting from (a clone of) `params`. The initialization is
/// left untouched.
pub fn maml_adapt<T: Scalar>(
    params: &ParamSet<T>,
    cfg: &LearnerConfig,
    support_x: &[T],
    support_y: &[usize],
) -> Result<ParamSet<T>> {
    let rows = support_y.len();
    if rows == 0 {
        return Err(Error::Contract("maml_adapt on empty support".into()));
    }
    let mut adapted = params.clone();
    adapted.clear_grads();
    let mut sgd = Optimizer::sgd();
    for _ in 0..cfg.inner_steps {
        head_loss_and_grads(&mut adapted, cfg, support_x, support_y, rows)?;
        sgd.step(&mut adapted, T::of(cfg.inner_lr))?;
    }
    Ok(adapted)
}

pub fn maml_predict<T: Scalar>(state: &LearnerState<T>, ep: &Episode<T>) -> Result<Vec<usize>> {
    let head_ways = state.params.get("head.w")?.shape()[1];
    if head_ways != ep.n_way() {
        return Err(Error::Contract(format!(
            "maml head is {head_ways}-way but the episode is {}-way",
            ep.n_way()
        )));
    }
    let adapted = maml_adapt(&state.params, &state.config, &ep.support_x, &ep.support_y)?;
    let mut tape = Tape::new();
    let bound = bind(&mut tape, &adapted);
    let qx = tape.leaf_matrix(ep.n_query(), ep.dim, ep.query_x.clone())?;
    let e = forward_embed(&mut tape, &bound, &state.config.backbone, qx)?;
    let logits = linear_logits(&mut tape, e, bound.var("head.w")?, bound.var("head.b")?)?;
    Ok(argmax_rows(tape.value(logits), ep.n_query(), ep.n_way()))
}

/// One first-order meta-gradient: adapt on the support set, take the query
/// loss gradient at the adapted parameters (scaled by `inv`) and accumulate
/// it into the initialization's gradient buffers. Returns the query loss.
pub fn maml_meta_step<T: Scalar>(
    state: &mut LearnerState<T>,
    ep: &Episode<T>,
    inv: T,
) -> Result<T> {
    let head_ways = state.params.get("head.w")?.shape()[1];
    if head_ways != ep.n_way() {
        return Err(Error::Contract(format!(
            "maml head is {head_ways}-way but the training episode is {}-way",
            ep.n_way()
        )));
    }
    let mut adapted = maml_adapt(&state.params, &state.config, &ep.support_x, &ep.support_y)?;

    let mut tape = Tape::new();
    let bound = bind(&mut tape, &adapted);
    let qx = tape.leaf_matrix(ep.n_query(), ep.dim, ep.query_x.clone())?;
    let e = forward_embed(&mut tape, &bound, &state.config.backbone, qx)?;
    let logits = linear_logits(&mut tape, e, bound.var("head.w")?, bound.var("head.b")?)?;
    let loss = tape.cross_entropy_mean(logits, &ep.query_y)?;
    let scaled = tape.scale(loss, inv);
    tape.backward(scaled)?;
    harvest(&tape, &bound, &mut adapted)?;

    // First-order transfer: gradients at the adapted parameters apply
    // directly to the initialization.
    for (name, tensor) in adapted.iter() {
        if let Some(grad) = tensor.grad() {
            state.params.get_mut(name)?.accumulate_grad(grad)?;
        }
    }
    Ok(tape.value(loss)[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::BackboneConfig;
    use crate::data::ClassId;
    use crate::learners::LearnerKind;

    fn state(inner_steps: usize) -> LearnerState<f64> {
        let backbone = BackboneConfig {
            input_dim: 2,
            hidden_dims: vec![8],
            embed_dim: 4,
            activation: crate::backbone::Activation::Relu,
        };
        let mut cfg = LearnerConfig::new(LearnerKind::Maml, backbone);
        cfg.inner_steps = inner_steps.max(1);
        cfg.inner_lr = 0.05;
        let mut st = LearnerState::new(cfg, 2, 2, 3).unwrap();
        st.config.inner_steps = inner_steps;
        st
    }

    /// Two linearly separable blobs.
    fn separable_episode() -> Episode<f64> {
        let support: Vec<(f64, f64, usize)> = vec![
            (-2.0, -1.8, 0),
            (-1.6, -2.2, 0),
            (-2.4, -2.0, 0),
            (2.0, 1.8, 1),
            (1.6, 2.2, 1),
            (2.4, 2.0, 1),
        ];
        let query: Vec<(f64, f64, usize)> = vec![(-1.9, -2.1, 0), (2.1, 1.9, 1)];
        Episode {
            dim: 2,
            support_x: support.iter().flat_map(|&(a, b, _)| [a, b]).collect(),
            support_y: support.iter().map(|s| s.2).collect(),
            query_x: query.iter().flat_map(|&(a, b, _)| [a, b]).collect(),
            query_y: query.iter().map(|s| s.2).collect(),
            class_map: vec![0 as ClassId, 1],
            support_src: support.iter().enumerate().map(|(i, s)| (s.2 as ClassId, i)).collect(),
            query_src: query.iter().enumerate().map(|(i, s)| (s.2 as ClassId, i)).collect(),
        }
    }

    #[test]
    fn zero_inner_steps_returns_initial_predictions() {
        let st = state(0);
        let ep = separable_episode();
        let adapted = maml_adapt(&st.params, &st.config, &ep.support_x, &ep.support_y).unwrap();
        assert_eq!(adapted, st.params);
        let preds = maml_predict(&st, &ep).unwrap();

        // Base-model predictions without any adaptation.
        let mut tape = Tape::new();
        let bound = bind(&mut tape, &st.params);
        let qx = tape.leaf_matrix(ep.n_query(), 2, ep.query_x.clone()).unwrap();
        let e = forward_embed(&mut tape, &bound, &st.config.backbone, qx).unwrap();
        let logits =
            linear_logits(&mut tape, e, bound.var("head.w").unwrap(), bound.var("head.b").unwrap())
                .unwrap();
        assert_eq!(preds, argmax_rows(tape.value(logits), 2, 2));
    }

    #[test]
    fn support_loss_strictly_decreases_on_separable_toy() {
        let mut st = state(1);
        let ep = separable_episode();
        let mut current = st.params.clone();
        let mut prev = head_loss(&current, &st.config, &ep.support_x, &ep.support_y, 6).unwrap();
        st.config.inner_steps = 1;
        for _ in 0..8 {
            current = maml_adapt(&current, &st.config, &ep.support_x, &ep.support_y).unwrap();
            let loss = head_loss(&current, &st.config, &ep.support_x, &ep.support_y, 6).unwrap();
            assert!(loss < prev, "loss {loss} did not decrease from {prev}");
            prev = loss;
        }
    }

    #[test]
    fn adaptation_does_not_mutate_state() {
        let st = state(5);
        let ep = separable_episode();
        let before = st.params.clone();
        let _ = maml_adapt(&st.params, &st.config, &ep.support_x, &ep.support_y).unwrap();
        let _ = maml_predict(&st, &ep).unwrap();
        assert_eq!(st.params, before);
    }

    #[test]
    fn meta_step_accumulates_gradients_for_all_params() {
        let mut st = state(2);
        let ep = separable_episode();
        let loss = maml_meta_step(&mut st, &ep, 1.0).unwrap();
        assert!(loss.is_finite());
        for (name, t) in st.params.iter() {
            assert!(t.grad().is_some(), "no meta gradient for {name}");
        }
    }
}
