//! Nearest-prototype classification on centered, L2-normalized embeddings
//! (CL2N). The centering mean is the training pool's mean embedding, stored
//! in the learner's aux state after pretraining.

use crate::backbone::embed_values;
use crate::data::ClassPool;
use crate::episodes::Episode;
use crate::error::{Error, Result};
use crate::learners::{Aux, LearnerState};
use crate::params::ParamSet;
use crate::scalar::Scalar;
use crate::tensor::NORM_EPS;

/// Mean embedding over every sample of the pool.
pub fn feature_mean<T: Scalar>(
    params: &ParamSet<T>,
    cfg: &crate::backbone::BackboneConfig,
    pool: &ClassPool<T>,
) -> Result<Vec<T>> {
    let mut mean = vec![T::zero(); cfg.embed_dim];
    let mut count = 0usize;
    for id in pool.class_ids() {
        let n = pool.class_len(id).expect("id from pool");
        let mut x = Vec::with_capacity(n * pool.dim());
        for i in 0..n {
            x.extend_from_slice(pool.sample(id, i).expect("in range"));
        }
        let e = embed_values(params, cfg, &x, n)?;
        for row in e.chunks_exact(cfg.embed_dim) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m = *m + *v;
            }
        }
        count += n;
    }
    if count == 0 {
        return Err(Error::InvalidInput("feature mean of an empty pool".into()));
    }
    let inv = T::of(1.0 / count as f64);
    for m in &mut mean {
        *m = *m * inv;
    }
    Ok(mean)
}

/// Store the training-pool feature mean in the learner's aux state.
pub fn update_feature_mean<T: Scalar>(state: &mut LearnerState<T>, pool: &ClassPool<T>) -> Result<()> {
    let mean = feature_mean(&state.params, &state.config.backbone, pool)?;
    match &mut state.aux {
        Aux::SimpleShot { feature_mean, .. } => {
            *feature_mean = Some(mean);
            Ok(())
        }
        _ => Err(Error::Contract(format!(
            "{} does not carry a feature mean",
            state.config.kind
        ))),
    }
}

fn center_and_normalize<T: Scalar>(rows: &mut [T], dim: usize, mean: &[T]) {
    let eps = T::of(NORM_EPS);
    for row in rows.chunks_exact_mut(dim) {
        for (v, m) in row.iter_mut().zip(mean) {
            *v = *v - *m;
        }
        let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt().max(eps);
        for v in row {
            *v = *v / norm;
        }
    }
}

/// CL2N nearest-prototype prediction over the episode's query set.
pub fn simpleshot_classify<T: Scalar>(state: &LearnerState<T>, ep: &Episode<T>) -> Result<Vec<usize>> {
    let mean = match &state.aux {
        Aux::SimpleShot { feature_mean: Some(m), .. } => m,
        Aux::SimpleShot { feature_mean: None, .. } => {
            return Err(Error::Contract(
                "simpleshot has no stored feature mean; pretrain (or set) it first".into(),
            ))
        }
        _ => return Err(Error::Contract("not a simpleshot learner".into())),
    };
    let cfg = &state.config.backbone;
    let d = cfg.embed_dim;

    let mut se = embed_values(&state.params, cfg, &ep.support_x, ep.n_support())?;
    let mut qe = embed_values(&state.params, cfg, &ep.query_x, ep.n_query())?;
    center_and_normalize(&mut se, d, mean);
    center_and_normalize(&mut qe, d, mean);

    // Prototypes in the transformed space.
    let n_way = ep.n_way();
    let counts = ep.support_counts();
    let mut protos = vec![T::zero(); n_way * d];
    for (s, &c) in ep.support_y.iter().enumerate() {
        for j in 0..d {
            protos[c * d + j] = protos[c * d + j] + se[s * d + j];
        }
    }
    for (c, &n) in counts.iter().enumerate() {
        let inv = T::of(1.0 / n as f64);
        for j in 0..d {
            protos[c * d + j] = protos[c * d + j] * inv;
        }
    }

    let preds = qe
        .chunks_exact(d)
        .map(|q| {
            let mut best = 0usize;
            let mut best_d = T::infinity();
            for c in 0..n_way {
                let p = &protos[c * d..(c + 1) * d];
                let dist: T = q.iter().zip(p).map(|(&a, &b)| (a - b) * (a - b)).sum();
                if dist < best_d {
                    best_d = dist;
                    best = c;
                }
            }
            best
        })
        .collect();
    Ok(preds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::{Activation, BackboneConfig};
    use crate::data::ClassId;
    use crate::learners::{LearnerConfig, LearnerKind};

    fn identity_state(mean: Option<Vec<f64>>) -> LearnerState<f64> {
        let backbone = BackboneConfig {
            input_dim: 2,
            hidden_dims: vec![2],
            embed_dim: 2,
            activation: Activation::Identity,
        };
        let cfg = LearnerConfig::new(LearnerKind::SimpleShot, backbone);
        let mut state = LearnerState::new(cfg, 2, 2, 0).unwrap();
        for layer in 0..2 {
            let w = state.params.get_mut(&format!("backbone.{layer}.w")).unwrap();
            let vals = w.values_mut();
            for i in 0..2 {
                for j in 0..2 {
                    vals[i * 2 + j] = if i == j { 1.0 } else { 0.0 };
                }
            }
        }
        state.aux = Aux::SimpleShot { n_classes: 2, feature_mean: mean };
        state
    }

    fn episode(support: &[(f64, f64, usize)], query: &[(f64, f64, usize)]) -> Episode<f64> {
        let n_way = 1 + support.iter().map(|s| s.2).max().unwrap();
        Episode {
            dim: 2,
            support_x: support.iter().flat_map(|&(a, b, _)| [a, b]).collect(),
            support_y: support.iter().map(|s| s.2).collect(),
            query_x: query.iter().flat_map(|&(a, b, _)| [a, b]).collect(),
            query_y: query.iter().map(|s| s.2).collect(),
            class_map: (0..n_way as ClassId).collect(),
            support_src: support.iter().map(|s| (s.2 as ClassId, 0)).collect(),
            query_src: query.iter().map(|s| (s.2 as ClassId, 0)).collect(),
        }
    }

    #[test]
    fn missing_mean_is_contract_error() {
        let state = identity_state(None);
        let ep = episode(&[(1.0, 0.0, 0), (0.0, 1.0, 1)], &[(1.0, 0.1, 0)]);
        let err = simpleshot_classify(&state, &ep).unwrap_err();
        assert!(matches!(err, Error::Contract(_)), "{err:?}");
    }

    #[test]
    fn zero_mean_unit_features_reduce_to_nearest_prototype() {
        let state = identity_state(Some(vec![0.0, 0.0]));
        // Unit-norm support vectors: normalization is a no-op.
        let ep = episode(&[(1.0, 0.0, 0), (0.0, 1.0, 1)], &[(0.6, 0.8, 1), (0.9, -0.43, 0)]);
        let preds = simpleshot_classify(&state, &ep).unwrap();
        assert_eq!(preds, vec![1, 0]);
    }

    #[test]
    fn translation_of_all_embeddings_is_removed_by_centering() {
        let support = [(0.4, -1.0, 0usize), (2.0, 0.7, 1), (0.1, -0.5, 0), (1.5, 1.1, 1)];
        let query = [(0.3, -0.8, 0usize), (1.8, 1.0, 1), (-0.2, -0.1, 0)];
        let shift = (13.5, -7.25);

        let state = identity_state(Some(vec![0.9, 0.1]));
        let base = episode(&support, &query);
        let preds_a = simpleshot_classify(&state, &base).unwrap();

        let shifted_support: Vec<(f64, f64, usize)> =
            support.iter().map(|&(a, b, c)| (a + shift.0, b + shift.1, c)).collect();
        let shifted_query: Vec<(f64, f64, usize)> =
            query.iter().map(|&(a, b, c)| (a + shift.0, b + shift.1, c)).collect();
        let state_shifted = identity_state(Some(vec![0.9 + shift.0, 0.1 + shift.1]));
        let shifted = episode(&shifted_support, &shifted_query);
        let preds_b = simpleshot_classify(&state_shifted, &shifted).unwrap();
        assert_eq!(preds_a, preds_b);
    }

    #[test]
    fn matches_independent_center_normalize_oracle() {
        // Oracle computed with plain floats, no learner code.
        let mean = [0.5, -0.25];
        let support = [(1.0, 0.5, 0usize), (0.2, -1.0, 0), (-1.5, 0.75, 1), (-0.5, 1.25, 1)];
        let query = [(0.7, 0.1, 0usize), (-1.2, 0.9, 1), (0.0, 0.0, 0)];

        let cl2n = |x: (f64, f64)| {
            let c = (x.0 - mean[0], x.1 - mean[1]);
            let n = c.0.hypot(c.1).max(1e-12);
            (c.0 / n, c.1 / n)
        };
        let mut protos = [(0.0f64, 0.0f64); 2];
        let mut counts = [0usize; 2];
        for &(a, b, c) in &support {
            let t = cl2n((a, b));
            protos[c].0 += t.0;
            protos[c].1 += t.1;
            counts[c] += 1;
        }
        for c in 0..2 {
            protos[c].0 /= counts[c] as f64;
            protos[c].1 /= counts[c] as f64;
        }
        let oracle: Vec<usize> = query
            .iter()
            .map(|&(a, b, _)| {
                let t = cl2n((a, b));
                let d0 = (t.0 - protos[0].0).powi(2) + (t.1 - protos[0].1).powi(2);
                let d1 = (t.0 - protos[1].0).powi(2) + (t.1 - protos[1].1).powi(2);
                usize::from(d1 < d0)
            })
            .collect();

        let state = identity_state(Some(mean.to_vec()));
        let ep = episode(&support, &query);
        let got = simpleshot_classify(&state, &ep).unwrap();
        assert_eq!(got, oracle);
    }
}
