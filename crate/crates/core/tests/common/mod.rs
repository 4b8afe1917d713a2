//! Shared finite-difference checking harness used by the gradient suite and
//! the acceptance suite.
#![allow(dead_code)]
#![allow(clippy::needless_range_loop)]

use fsl_core::tensor::{Tape, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
pub const N_SEEDS: u64 = 20;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Random values bounded away from zero so ReLU kinks and tiny norms stay
/// clear of the FD step.
pub fn random_values(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(0.1..1.5);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect()
}

/// Check d(loss)/d(inputs[k]) for a scalar loss built from leaf inputs.
pub fn check_gradients(
    name: &str,
    shapes: &[Vec<usize>],
    seed: u64,
    build: &dyn Fn(&mut Tape<f64>, &[Var]) -> Var,
) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<Vec<f64>> = shapes
        .iter()
        .map(|s| random_values(&mut rng, s.iter().product()))
        .collect();

    let forward = |values: &[Vec<f64>]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = shapes
            .iter()
            .zip(values)
            .map(|(s, v)| tape.leaf(s.clone(), v.clone()).unwrap())
            .collect();
        let loss = build(&mut tape, &vars);
        assert_eq!(tape.value(loss).len(), 1, "{name}: loss must be scalar");
        tape.value(loss)[0]
    };

    // Analytic gradients.
    let mut tape = Tape::new();
    let vars: Vec<Var> = shapes
        .iter()
        .zip(&inputs)
        .map(|(s, v)| tape.leaf(s.clone(), v.clone()).unwrap())
        .collect();
    let loss = build(&mut tape, &vars);
    tape.backward(loss).unwrap();
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| tape.grad(v).to_vec()).collect();

    for (k, input) in inputs.iter().enumerate() {
        for i in 0..input.len() {
            let mut up = inputs.clone();
            up[k][i] += FD_STEP;
            let mut down = inputs.clone();
            down[k][i] -= FD_STEP;
            let fd = (forward(&up) - forward(&down)) / (2.0 * FD_STEP);
            let got = analytic[k][i];
            assert!(
                rel_err(fd, got) < REL_TOL || (fd.abs() < 1e-9 && got.abs() < 1e-9),
                "{name} seed {seed}: input {k}[{i}] fd {fd} vs analytic {got}"
            );
        }
    }
}

/// Weight the (possibly non-scalar) op output by a fixed random matrix so the
/// loss is a scalar with non-trivial gradients everywhere.
pub fn weighted_sum(tape: &mut Tape<f64>, out: Var, seed: u64) -> Var {
    let shape = tape.shape(out).to_vec();
    let n: usize = shape.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xDEAD_BEEF);
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.0)).collect();
    let wv = tape.leaf(shape, w).unwrap();
    let prod = tape.mul(out, wv).unwrap();
    tape.sum_all(prod)
}


/// Finite-difference check of every differentiable op for one seed.
pub fn check_ops_for_seed(seed: u64) {
        check_gradients("add", &[vec![3, 4], vec![3, 4]], seed, &|t, v| {
            let y = t.add(v[0], v[1]).unwrap();
            weighted_sum(t, y, seed)
        });
        check_gradients("sub", &[vec![3, 4], vec![3, 4]], seed, &|t, v| {
            let y = t.sub(v[0], v[1]).unwrap();
            weighted_sum(t, y, seed)
        });
        check_gradients("mul", &[vec![3, 4], vec![3, 4]], seed, &|t, v| {
            let y = t.mul(v[0], v[1]).unwrap();
            weighted_sum(t, y, seed)
        });
        check_gradients("mul_self_aliased", &[vec![2, 3]], seed, &|t, v| {
            let y = t.mul(v[0], v[0]).unwrap();
            weighted_sum(t, y, seed)
        });
        check_gradients("add_row_vec", &[vec![3, 4], vec![4]], seed, &|t, v| {
            let y = t.add_row_vec(v[0], v[1]).unwrap();
            weighted_sum(t, y, seed)
        });
        check_gradients("add_col_vec", &[vec![3, 4], vec![3]], seed, &|t, v| {
            let y = t.add_col_vec(v[0], v[1]).unwrap();
            weighted_sum(t, y, seed)
        });
        check_gradients("scale", &[vec![3, 4]], seed, &|t, v| {
            let y = t.scale(v[0], -1.7);
            weighted_sum(t, y, seed)
        });
        check_gradients("relu", &[vec![3, 4]], seed, &|t, v| {
            let y = t.relu(v[0]);
            weighted_sum(t, y, seed)
        });
        check_gradients("matmul", &[vec![3, 4], vec![4, 2]], seed, &|t, v| {
            let y = t.matmul(v[0], v[1]).unwrap();
            weighted_sum(t, y, seed)
        });
        check_gradients("matmul_nt", &[vec![3, 4], vec![5, 4]], seed, &|t, v| {
            let y = t.matmul_nt(v[0], v[1]).unwrap();
            weighted_sum(t, y, seed)
        });
        check_gradients("pair_concat", &[vec![2, 3], vec![4, 3]], seed, &|t, v| {
            let y = t.pair_concat(v[0], v[1]).unwrap();
            weighted_sum(t, y, seed)
        });
        check_gradients("reshape", &[vec![3, 4]], seed, &|t, v| {
            let y = t.reshape(v[0], vec![2, 6]).unwrap();
            weighted_sum(t, y, seed)
        });
        check_gradients("sum_all", &[vec![3, 4]], seed, &|t, v| t.sum_all(v[0]));
        check_gradients("mean_all", &[vec![3, 4]], seed, &|t, v| t.mean_all(v[0]));
        check_gradients("sum_axis1", &[vec![3, 4]], seed, &|t, v| {
            let y = t.sum_axis1(v[0]).unwrap();
            weighted_sum(t, y, seed)
        });
        check_gradients("softmax_rows", &[vec![3, 5]], seed, &|t, v| {
            let y = t.softmax_rows(v[0]).unwrap();
            weighted_sum(t, y, seed)
        });
        check_gradients("normalize_rows", &[vec![3, 5]], seed, &|t, v| {
            let y = t.normalize_rows(v[0]).unwrap();
            weighted_sum(t, y, seed)
        });
        let labels: Vec<usize> = (0..4).map(|i| (seed as usize + i) % 3).collect();
        let labels2 = labels.clone();
        check_gradients("cross_entropy_mean", &[vec![4, 3]], seed, &move |t, v| {
            t.cross_entropy_mean(v[0], &labels).unwrap()
        });
        // nll_mean_rows expects positive entries; random_values keeps
        // magnitudes in (0.1, 1.5), so square to force positivity.
        check_gradients("nll_mean_rows", &[vec![4, 3]], seed, &move |t, v| {
            let p = t.mul(v[0], v[0]).unwrap();
            t.nll_mean_rows(p, &labels2).unwrap()
        });
}
