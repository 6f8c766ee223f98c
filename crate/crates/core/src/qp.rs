//! Small dense convex QP with nonnegativity constraints:
//! `min ½ qᵀAq + bᵀq  s.t.  q ≥ 0`, `A` symmetric positive definite.
//!
//! Primal active-set method started from the clipped unconstrained solution.
//! Dimensions here are at most a few dozen, so each iteration refactors the
//! free block from scratch. If the iteration budget runs out (degenerate
//! cycling), all active sets are enumerated for `n ≤ 16`.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{CmoError, Result};

/// KKT tolerance on the multipliers of active bounds.
const MULTIPLIER_TOL: f64 = 1e-12;

fn solve_free(a: &DMatrix<f64>, b: &DVector<f64>, free: &[usize]) -> Option<DVector<f64>> {
    let n = b.len();
    let mut out = DVector::zeros(n);
    if free.is_empty() {
        return Some(out);
    }
    let k = free.len();
    let sub = DMatrix::from_fn(k, k, |i, j| a[(free[i], free[j])]);
    let rhs = DVector::from_fn(k, |i, _| -b[free[i]]);
    let sol = Cholesky::new(sub)?.solve(&rhs);
    for (i, &f) in free.iter().enumerate() {
        out[f] = sol[i];
    }
    Some(out)
}

pub fn objective(a: &DMatrix<f64>, b: &DVector<f64>, q: &DVector<f64>) -> f64 {
    0.5 * q.dot(&(a * q)) + b.dot(q)
}

/// Largest violation of the KKT conditions at `q`, scaled by `1 + ‖b‖∞`.
pub fn kkt_residual(a: &DMatrix<f64>, b: &DVector<f64>, q: &DVector<f64>) -> f64 {
    let grad = a * q + b;
    let mut worst: f64 = 0.0;
    for i in 0..q.len() {
        let v = if q[i] > 0.0 { grad[i].abs() } else { (-grad[i]).max(0.0) };
        worst = worst.max(v);
        worst = worst.max((-q[i]).max(0.0));
    }
    worst
}

fn enumerate(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let n = b.len();
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0u32..(1 << n) {
        let free: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let Some(q) = solve_free(a, b, &free) else { continue };
        if q.iter().any(|&v| v < 0.0) {
            continue;
        }
        let f = objective(a, b, &q);
        if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
            best = Some((f, q));
        }
    }
    best.map(|(_, q)| q)
}

pub fn solve_nonneg(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let n = b.len();
    if a.shape() != (n, n) {
        return Err(CmoError::Dimension(format!("QP matrix {:?} against vector {n}", a.shape())));
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(CmoError::NonFinite("QP data".into()));
    }
    let all: Vec<usize> = (0..n).collect();
    let unconstrained =
        solve_free(a, b, &all).ok_or_else(|| CmoError::LinearSolve("QP matrix is not positive definite".into()))?;
    let mut q = unconstrained.map(|v| v.max(0.0));
    let mut active: Vec<bool> = q.iter().map(|&v| v == 0.0).collect();

    let max_iters = 10 * n * n + 100;
    for _ in 0..max_iters {
        let free: Vec<usize> = (0..n).filter(|&i| !active[i]).collect();
        let target =
            solve_free(a, b, &free).ok_or_else(|| CmoError::LinearSolve("free block not positive definite".into()))?;
        let blocking = free.iter().copied().filter(|&i| target[i] < 0.0).collect::<Vec<_>>();
        if blocking.is_empty() {
            q = target;
            let grad = a * &q + b;
            let release = (0..n)
                .filter(|&i| active[i] && grad[i] < -MULTIPLIER_TOL * (1.0 + b.amax()))
                .min_by(|&i, &j| grad[i].total_cmp(&grad[j]));
            match release {
                Some(i) => active[i] = false,
                None => return Ok(q),
            }
        } else {
            let (mut step, mut hit) = (1.0f64, blocking[0]);
            for &i in &blocking {
                let s = q[i] / (q[i] - target[i]);
                if s < step {
                    step = s;
                    hit = i;
                }
            }
            q = &q + (&target - &q) * step;
            q[hit] = 0.0;
            active[hit] = true;
            for i in 0..n {
                if q[i] <= 0.0 {
                    q[i] = 0.0;
                    active[i] = true;
                }
            }
        }
    }
    if n <= 16 {
        if let Some(q) = enumerate(a, b) {
            return Ok(q);
        }
    }
    Err(CmoError::LinearSolve("active-set iteration did not converge".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
        let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &m * m.transpose() + DMatrix::identity(n, n) * 0.1
    }

    #[test]
    fn matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let n = rng.random_range(1..7);
            let a = random_pd(&mut rng, n);
            let b = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
            let q = solve_nonneg(&a, &b).unwrap();
            let e = enumerate(&a, &b).unwrap();
            assert!(q.iter().all(|&v| v >= 0.0));
            assert!(kkt_residual(&a, &b, &q) < 1e-10);
            assert!((objective(&a, &b, &q) - objective(&a, &b, &e)).abs() < 1e-12);
        }
    }

    #[test]
    fn origin_when_linear_term_nonnegative() {
        let a = DMatrix::identity(3, 3);
        let b = DVector::from_vec(vec![0.0, 1.0, 2.0]);
        assert_eq!(solve_nonneg(&a, &b).unwrap(), DVector::zeros(3));
    }
}
