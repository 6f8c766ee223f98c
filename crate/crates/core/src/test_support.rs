//! Random instances shared by unit tests.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::regression::solve_dual;
use crate::types::{scale_columns, CohortDataset, CorrelationMatrix, KernelSpec, ModelState};

/// `n` random PSD `p×p` matrices with random scores.
pub fn random_cohort(seed: u64, p: usize, n: usize) -> CohortDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let matrices = (0..n)
        .map(|_| {
            let w = DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0));
            CorrelationMatrix::new(&w * w.transpose() / p as f64).unwrap()
        })
        .collect();
    let scores = (0..n).map(|_| rng.random_range(0.0..5.0)).collect();
    CohortDataset { matrices, scores, score_name: "y".into() }
}

/// Random state with nonzero duals and a dual consistent with its anchors.
pub fn random_state(seed: u64, p: usize, r: usize, n: usize, cohort: &CohortDataset, spec: &KernelSpec, ridge: f64) -> ModelState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let basis_x = DMatrix::from_fn(p, r, |_, _| rng.random_range(-1.0..1.0));
    let loadings = DMatrix::from_fn(r, n, |_, _| rng.random_range(0.1..1.5));
    let v_mats = (0..n)
        .map(|i| {
            scale_columns(&basis_x, &loadings.column(i).into_owned())
                + DMatrix::from_fn(p, r, |_, _| rng.random_range(-0.2..0.2))
        })
        .collect();
    let duals = (0..n).map(|_| DMatrix::from_fn(p, r, |_, _| rng.random_range(-0.3..0.3))).collect();
    let anchors = loadings.map(|v| (v + rng.random_range(-0.05..0.05)).max(0.0));
    let y = DVector::from_column_slice(&cohort.scores[..n]);
    let dual = solve_dual(&anchors, &y, spec, ridge).unwrap();
    ModelState { basis_x, loadings, v_mats, duals, alpha: dual.alpha, anchors }
}
