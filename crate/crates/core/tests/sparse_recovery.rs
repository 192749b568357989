use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rhm_core::sparse_sr::{solver, SensingMatrix, SolverConfig};

const ROWS: usize = 27;
const COLS: usize = 100;

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Column-major Gaussian sensing matrix and a 3-sparse code with
/// magnitudes in [0.5, 1.5] and random signs.
fn trial(seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a: Vec<f64> = (0..ROWS * COLS).map(|_| gaussian(&mut rng) / (ROWS as f64).sqrt()).collect();
    let mut alpha = vec![0.0; COLS];
    let mut placed = 0;
    while placed < 3 {
        let j = rng.random_range(0..COLS);
        if alpha[j] == 0.0 {
            let s = if rng.random::<bool>() { 1.0 } else { -1.0 };
            alpha[j] = s * rng.random_range(0.5..1.5);
            placed += 1;
        }
    }
    (a, alpha)
}

fn measure(a: &[f64], alpha: &[f64]) -> Vec<f64> {
    let mut x = vec![0.0; ROWS];
    for (j, &w) in alpha.iter().enumerate() {
        for i in 0..ROWS {
            x[i] += w * a[j * ROWS + i];
        }
    }
    x
}

fn nmse(est: &[f64], truth: &[f64]) -> f64 {
    let e: f64 = est.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum();
    e / truth.iter().map(|v| v * v).sum::<f64>()
}

/// Least-squares fit over every 3-column support; the best support's
/// coefficients. Uses the full Gram matrix so each support is a 3x3 solve.
fn exhaustive_support(a: &[f64], x: &[f64]) -> Vec<f64> {
    let full = DMatrix::from_column_slice(ROWS, COLS, a);
    let xv = DVector::from_column_slice(x);
    let gram = full.transpose() * &full;
    let corr = full.transpose() * &xv;
    let energy = xv.norm_squared();
    let mut best = (f64::INFINITY, vec![0.0; COLS]);
    for i in 0..COLS {
        for j in i + 1..COLS {
            for k in j + 1..COLS {
                let idx = [i, j, k];
                let g = Matrix3::from_fn(|r, c| gram[(idx[r], idx[c])]);
                let rhs = Vector3::from_fn(|r, _| corr[idx[r]]);
                let Some(coef) = g.lu().solve(&rhs) else { continue };
                let r = energy - rhs.dot(&coef);
                if r < best.0 {
                    let mut alpha = vec![0.0; COLS];
                    for (t, &col) in idx.iter().enumerate() {
                        alpha[col] = coef[t];
                    }
                    best = (r, alpha);
                }
            }
        }
    }
    best.1
}

#[test]
fn three_sparse_codes_are_recovered() {
    let cfg = SolverConfig::default();
    let mut ok = 0;
    for seed in 0..100 {
        let (a, alpha) = trial(seed);
        let m = SensingMatrix::from_columns(ROWS, COLS, a.clone()).unwrap();
        let code = solver::solve(&m, &measure(&a, &alpha), &cfg).unwrap();
        if nmse(&code.alpha, &alpha) < 1e-3 {
            ok += 1;
        }
    }
    assert!(ok >= 95, "recovered {ok} of 100");
}

#[test]
fn ground_truth_is_the_unique_best_support() {
    // the planted code is what exhaustive search finds, so recovery is
    // judged against the identifiable answer
    for seed in [0, 17, 42] {
        let (a, alpha) = trial(seed);
        let best = exhaustive_support(&a, &measure(&a, &alpha));
        assert!(nmse(&best, &alpha) < 1e-12, "seed {seed}");
    }
}

#[test]
fn objective_never_increases_within_a_stage() {
    let cfg = SolverConfig::default();
    for seed in 0..10 {
        let (a, alpha) = trial(seed);
        let m = SensingMatrix::from_columns(ROWS, COLS, a.clone()).unwrap();
        let (_, stages) = solver::solve_traced(&m, &measure(&a, &alpha), &cfg).unwrap();
        assert!(!stages.is_empty());
        for s in &stages {
            for w in s.objective.windows(2) {
                assert!(w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0), "seed {seed}: {} -> {}", w[0], w[1]);
            }
        }
        for w in stages.windows(2) {
            assert!(w[1].weight < w[0].weight);
        }
    }
}
