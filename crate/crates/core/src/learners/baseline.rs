//! Transfer-learning baselines: pretrain backbone + global classification
//! head on mini-batches over all training classes; at meta-test time the head
//! is discarded and a fresh episodic head is fitted on the support set with
//! the backbone frozen. The plain variant uses a linear head, the `++`
//! variant scores by scaled cosine similarity.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backbone::{embed_values, forward_embed, init_linear};
use crate::episodes::Episode;
use crate::error::{Error, Result};
use crate::learners::{linear_logits, LearnerKind, LearnerState};
use crate::optim::Optimizer;
use crate::params::{bind, harvest, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::{argmax_rows, Tape, Tensor, Var};

/// Scaled cosine similarity of embedding rows against class rows of `w`.
fn cosine_scores<T: Scalar>(tape: &mut Tape<T>, e: Var, w: Var, scale: f64) -> Result<Var> {
    let en = tape.normalize_rows(e)?;
    let wn = tape.normalize_rows(w)?;
    let sims = tape.matmul_nt(en, wn)?;
    Ok(tape.scale(sims, T::of(scale)))
}

/// Gradients of one pretraining mini-batch (global labels), accumulated into
/// the parameter buffers. Returns the batch loss.
pub fn pretrain_accumulate<T: Scalar>(
    state: &mut LearnerState<T>,
    x: &[T],
    y: &[usize],
) -> Result<T> {
    let n_classes = state
        .pretrain_classes()
        .ok_or_else(|| Error::Contract(format!("{} has no pretraining head", state.config.kind)))?;
    if let Some(&bad) = y.iter().find(|&&label| label >= n_classes) {
        return Err(Error::InvalidInput(format!(
            "pretraining label {bad} out of range for {n_classes} classes"
        )));
    }
    let rows = y.len();
    let mut tape = Tape::new();
    let bound = bind(&mut tape, &state.params);
    let xv = tape.leaf_matrix(rows, state.config.backbone.input_dim, x.to_vec())?;
    let e = forward_embed(&mut tape, &bound, &state.config.backbone, xv)?;
    let logits = match state.config.kind {
        LearnerKind::BaselinePp => {
            cosine_scores(&mut tape, e, bound.var("head.w")?, state.config.cosine_scale)?
        }
        _ => linear_logits(&mut tape, e, bound.var("head.w")?, bound.var("head.b")?)?,
    };
    let loss = tape.cross_entropy_mean(logits, y)?;
    tape.backward(loss)?;
    harvest(&tape, &bound, &mut state.params)?;
    Ok(tape.value(loss)[0])
}

/// Accumulate and apply one optimizer step on a pretraining mini-batch.
pub fn baseline_pretrain_step<T: Scalar>(
    state: &mut LearnerState<T>,
    opt: &mut Optimizer<T>,
    x: &[T],
    y: &[usize],
    lr: T,
) -> Result<T> {
    let loss = pretrain_accumulate(state, x, y)?;
    opt.step(&mut state.params, lr)?;
    Ok(loss)
}

fn fresh_head<T: Scalar>(kind: LearnerKind, embed: usize, n_way: usize, seed: u64) -> ParamSet<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut head = ParamSet::new();
    match kind {
        LearnerKind::BaselinePp => {
            // Class rows, compared by cosine; fan-in is the embedding width.
            let w: Tensor<T> = init_linear(&mut rng, embed, n_way);
            let mut rows = vec![T::zero(); n_way * embed];
            for d in 0..embed {
                for c in 0..n_way {
                    rows[c * embed + d] = w.values()[d * n_way + c];
                }
            }
            head.insert("w", Tensor::new(vec![n_way, embed], rows).expect("sized"));
        }
        _ => {
            head.insert("w", init_linear::<T>(&mut rng, embed, n_way));
            head.insert("b", Tensor::zeros(vec![n_way]));
        }
    }
    head
}

/// Freeze the backbone, fit a fresh episodic head on the support set by
/// full-batch gradient descent, and predict the query labels.
pub fn baseline_finetune<T: Scalar>(
    state: &LearnerState<T>,
    ep: &Episode<T>,
    seed: u64,
) -> Result<Vec<usize>> {
    let cfg = &state.config;
    let embed = cfg.backbone.embed_dim;
    let se = embed_values(&state.params, &cfg.backbone, &ep.support_x, ep.n_support())?;
    let qe = embed_values(&state.params, &cfg.backbone, &ep.query_x, ep.n_query())?;

    let mut head = fresh_head::<T>(cfg.kind, embed, ep.n_way(), seed);
    let mut sgd = Optimizer::sgd();
    let head_logits = |tape: &mut Tape<T>, head_bound: &crate::params::BoundParams, e: Var| -> Result<Var> {
        match cfg.kind {
            LearnerKind::BaselinePp => cosine_scores(tape, e, head_bound.var("w")?, cfg.cosine_scale),
            _ => linear_logits(tape, e, head_bound.var("w")?, head_bound.var("b")?),
        }
    };

    for _ in 0..cfg.finetune_steps {
        let mut tape = Tape::new();
        let head_bound = bind(&mut tape, &head);
        let sev = tape.leaf_matrix(ep.n_support(), embed, se.clone())?;
        let logits = head_logits(&mut tape, &head_bound, sev)?;
        let loss = tape.cross_entropy_mean(logits, &ep.support_y)?;
        tape.backward(loss)?;
        harvest(&tape, &head_bound, &mut head)?;
        sgd.step(&mut head, T::of(cfg.finetune_lr))?;
    }

    let mut tape = Tape::new();
    let head_bound = bind(&mut tape, &head);
    let qev = tape.leaf_matrix(ep.n_query(), embed, qe)?;
    let logits = head_logits(&mut tape, &head_bound, qev)?;
    Ok(argmax_rows(tape.value(logits), ep.n_query(), ep.n_way()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::{Activation, BackboneConfig};
    use crate::data::ClassId;
    use crate::learners::LearnerConfig;

    fn make_state(kind: LearnerKind, n_classes: usize, seed: u64) -> LearnerState<f64> {
        let backbone = BackboneConfig {
            input_dim: 2,
            hidden_dims: vec![8],
            embed_dim: 4,
            activation: Activation::Relu,
        };
        let cfg = LearnerConfig::new(kind, backbone);
        LearnerState::new(cfg, 2, n_classes, seed).unwrap()
    }

    fn blob_batch(n_per_class: usize) -> (Vec<f64>, Vec<usize>) {
        let mut x = Vec::new();
        let mut y = Vec::new();
        let centers = [(-2.0, -2.0), (2.0, 2.0), (-2.0, 2.0)];
        for (c, &(cx, cy)) in centers.iter().enumerate() {
            for i in 0..n_per_class {
                let jitter = i as f64 * 0.07;
                x.extend([cx + jitter, cy - jitter]);
                y.push(c);
            }
        }
        (x, y)
    }

    #[test]
    fn pretrain_loss_decreases_with_small_lr() {
        let mut state = make_state(LearnerKind::Baseline, 3, 1);
        let (x, y) = blob_batch(8);
        let mut opt = Optimizer::adam();
        let first = baseline_pretrain_step(&mut state, &mut opt, &x, &y, 1e-3).unwrap();
        let mut last = first;
        for _ in 0..20 {
            last = baseline_pretrain_step(&mut state, &mut opt, &x, &y, 1e-3).unwrap();
        }
        assert!(last < first, "loss {last} did not drop below {first}");
    }

    #[test]
    fn zero_lr_step_leaves_state_unchanged() {
        let mut state = make_state(LearnerKind::Baseline, 3, 1);
        let before = state.params.clone();
        let (x, y) = blob_batch(4);
        let mut opt = Optimizer::sgd();
        baseline_pretrain_step(&mut state, &mut opt, &x, &y, 0.0).unwrap();
        assert_eq!(state.params, before);
    }

    #[test]
    fn label_out_of_range_is_input_error() {
        let mut state = make_state(LearnerKind::Baseline, 3, 1);
        let err = pretrain_accumulate(&mut state, &[0.0, 0.0], &[3]).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)), "{err:?}");
    }

    #[test]
    fn cosine_head_scores_are_scale_invariant() {
        let state = make_state(LearnerKind::BaselinePp, 3, 2);
        let score_of = |embedding: &[f64]| -> Vec<f64> {
            let mut tape = Tape::new();
            let bound = bind(&mut tape, &state.params);
            let e = tape.leaf_matrix(1, 4, embedding.to_vec()).unwrap();
            let s = cosine_scores(&mut tape, e, bound.var("head.w").unwrap(), 10.0).unwrap();
            tape.value(s).to_vec()
        };
        let e = [0.3, -1.0, 0.5, 2.0];
        let scaled: Vec<f64> = e.iter().map(|v| v * 37.5).collect();
        let a = score_of(&e);
        let b = score_of(&scaled);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-9, "{a:?} vs {b:?}");
        }
    }

    fn toy_episode(sep: f64) -> Episode<f64> {
        let mut support_x = Vec::new();
        let mut support_y = Vec::new();
        let mut query_x = Vec::new();
        let mut query_y = Vec::new();
        for c in 0..2usize {
            let off = if c == 0 { -sep } else { sep };
            for i in 0..5 {
                support_x.extend([off + i as f64 * 0.05, off - i as f64 * 0.05]);
                support_y.push(c);
            }
            for i in 0..10 {
                query_x.extend([off + 0.02 * i as f64, off + 0.03 * i as f64]);
                query_y.push(c);
            }
        }
        Episode {
            dim: 2,
            support_x,
            support_y,
            query_x,
            query_y,
            class_map: vec![0 as ClassId, 1],
            support_src: vec![(0, 0); 10],
            query_src: vec![(0, 0); 20],
        }
    }

    /// Plain logistic-regression oracle on frozen embeddings, written
    /// independently of the tape machinery.
    fn logistic_oracle_accuracy(se: &[f64], sy: &[usize], qe: &[f64], qy: &[usize], d: usize) -> f64 {
        let mut w = vec![0.0f64; d];
        let mut b = 0.0f64;
        let n = sy.len() as f64;
        for _ in 0..500 {
            let mut gw = vec![0.0f64; d];
            let mut gb = 0.0;
            for (i, &yi) in sy.iter().enumerate() {
                let x = &se[i * d..(i + 1) * d];
                let z: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + b;
                let p = 1.0 / (1.0 + (-z).exp());
                let err = p - yi as f64;
                for j in 0..d {
                    gw[j] += err * x[j] / n;
                }
                gb += err / n;
            }
            for j in 0..d {
                w[j] -= 0.5 * gw[j];
            }
            b -= 0.5 * gb;
        }
        let mut correct = 0usize;
        for (i, &yi) in qy.iter().enumerate() {
            let x = &qe[i * d..(i + 1) * d];
            let z: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + b;
            if usize::from(z > 0.0) == yi {
                correct += 1;
            }
        }
        correct as f64 / qy.len() as f64
    }

    #[test]
    fn finetune_separates_separable_embeddings() {
        let state = make_state(LearnerKind::Baseline, 3, 5);
        let ep = toy_episode(3.0);

        let se = embed_values(&state.params, &state.config.backbone, &ep.support_x, 10).unwrap();
        let qe = embed_values(&state.params, &state.config.backbone, &ep.query_x, 20).unwrap();
        let oracle = logistic_oracle_accuracy(&se, &ep.support_y, &qe, &ep.query_y, 4);
        assert!(oracle > 0.95, "oracle ceiling {oracle}");

        let preds = baseline_finetune(&state, &ep, 11).unwrap();
        let acc = preds.iter().zip(&ep.query_y).filter(|(a, b)| a == b).count() as f64 / 20.0;
        assert!(acc > 0.95, "finetune accuracy {acc}");
    }

    #[test]
    fn indistinguishable_classes_stay_at_chance() {
        let state = make_state(LearnerKind::Baseline, 3, 5);
        let mut ep = toy_episode(0.0);
        // All support points identical regardless of class.
        for v in ep.support_x.iter_mut() {
            *v = 0.5;
        }
        for v in ep.query_x.iter_mut() {
            *v = 0.5;
        }
        let preds = baseline_finetune(&state, &ep, 3).unwrap();
        let acc = preds.iter().zip(&ep.query_y).filter(|(a, b)| a == b).count() as f64
            / ep.query_y.len() as f64;
        assert!((acc - 0.5).abs() < 0.2, "accuracy {acc} should be near chance");
    }

    #[test]
    fn finetune_is_deterministic_in_seed() {
        let state = make_state(LearnerKind::BaselinePp, 3, 4);
        let ep = toy_episode(1.0);
        let a = baseline_finetune(&state, &ep, 9).unwrap();
        let b = baseline_finetune(&state, &ep, 9).unwrap();
        assert_eq!(a, b);
    }
}
