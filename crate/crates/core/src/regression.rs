//! Kernel ridge regression in the dual. The primal weight vector is never
//! formed; it is `Σ_j α_j φ(anchor_j)`.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{CmoError, Result};
use crate::kernel::{gram, kernel_row};
use crate::types::KernelSpec;

/// Solution of `(K + ridge·I) α = y` for frozen anchors.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionDual {
    pub alpha: DVector<f64>,
    /// R×N loadings at solve time.
    pub anchors: DMatrix<f64>,
    pub spec: KernelSpec,
    pub ridge: f64,
}

/// Solves `(K + ridge·I) α = y` by Cholesky, falling back to LU when the
/// system is indefinite (fractional polynomial-only kernels).
pub fn solve_with_gram(k: &DMatrix<f64>, y: &DVector<f64>, ridge: f64) -> Result<DVector<f64>> {
    if !(ridge > 0.0) {
        return Err(CmoError::InvalidParameter(format!("ridge must be > 0, got {ridge}")));
    }
    if k.nrows() != y.len() || k.ncols() != y.len() {
        return Err(CmoError::Dimension(format!("gram is {:?}, targets {}", k.shape(), y.len())));
    }
    if k.iter().any(|v| !v.is_finite()) {
        return Err(CmoError::NonFinite("gram matrix entry".into()));
    }
    let n = y.len();
    let system = k + DMatrix::identity(n, n) * ridge;
    if let Some(chol) = Cholesky::new(system.clone()) {
        return Ok(chol.solve(y));
    }
    let alpha = system.lu().solve(y).ok_or_else(|| CmoError::LinearSolve("gram + ridge is singular".into()))?;
    if alpha.iter().any(|v| !v.is_finite()) {
        return Err(CmoError::LinearSolve("gram + ridge is singular".into()));
    }
    Ok(alpha)
}

pub fn solve_dual(anchors: &DMatrix<f64>, y: &DVector<f64>, spec: &KernelSpec, ridge: f64) -> Result<RegressionDual> {
    if anchors.ncols() != y.len() {
        return Err(CmoError::Dimension(format!("{} anchors but {} targets", anchors.ncols(), y.len())));
    }
    let k = gram(anchors, spec)?;
    let alpha = solve_with_gram(&k.data, y, ridge)?;
    Ok(RegressionDual { alpha, anchors: anchors.clone(), spec: *spec, ridge })
}

/// `Σ_j κ(c, anchor_j) α_j`.
pub fn predict(c: &[f64], dual: &RegressionDual) -> Result<f64> {
    if c.len() != dual.anchors.nrows() {
        return Err(CmoError::Dimension(format!("loading of length {} against rank {}", c.len(), dual.anchors.nrows())));
    }
    if c.iter().any(|v| !v.is_finite()) {
        return Err(CmoError::NonFinite("loading".into()));
    }
    if c.iter().any(|&v| v < 0.0) {
        return Err(CmoError::InvalidParameter("loading must be nonnegative".into()));
    }
    Ok(kernel_row(c, &dual.anchors, &dual.spec).dot(&dual.alpha))
}

/// `(y − predict(c))²`.
pub fn regression_residual(c: &[f64], y: f64, dual: &RegressionDual) -> Result<f64> {
    let r = y - predict(c, dual)?;
    Ok(r * r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_anchors(rng: &mut ChaCha8Rng, r: usize, n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, n, |_, _| rng.random_range(0.0..2.0))
    }

    #[test]
    fn diagonal_system() {
        let alpha = solve_with_gram(&DMatrix::identity(2, 2), &DVector::from_vec(vec![2.0, 4.0]), 1.0).unwrap();
        assert_relative_eq!(alpha[0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(alpha[1], 2.0, epsilon = 1e-15);
    }

    #[test]
    fn scalar_solve() {
        let spec = KernelSpec::ados();
        let anchors = DMatrix::from_column_slice(2, 1, &[0.5, 1.0]);
        let dual = solve_dual(&anchors, &DVector::from_vec(vec![3.0]), &spec, 0.5).unwrap();
        let k11 = crate::kernel::kernel_eval(&[0.5, 1.0], &[0.5, 1.0], &spec).unwrap();
        assert_relative_eq!(dual.alpha[0], 3.0 / (k11 + 0.5), epsilon = 1e-15);
    }

    #[test]
    fn matches_dense_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let spec = KernelSpec::srs();
        for _ in 0..20 {
            let anchors = random_anchors(&mut rng, 3, 6);
            let y = DVector::from_fn(6, |_, _| rng.random_range(-5.0..5.0));
            let dual = solve_dual(&anchors, &y, &spec, 0.7).unwrap();
            let k = gram(&anchors, &spec).unwrap().data;
            let inv = (k.clone() + DMatrix::identity(6, 6) * 0.7).try_inverse().unwrap();
            let oracle = inv * &y;
            assert!((&dual.alpha - &oracle).amax() < 1e-10);
            let resid = (k + DMatrix::identity(6, 6) * 0.7) * &dual.alpha - &y;
            assert!(resid.amax() < 1e-8);
        }
    }

    #[test]
    fn predictions() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let spec = KernelSpec::ados();
        let anchors = random_anchors(&mut rng, 2, 4);
        let zero = RegressionDual { alpha: DVector::zeros(4), anchors: anchors.clone(), spec, ridge: 1.0 };
        assert_eq!(predict(&[0.3, 0.2], &zero).unwrap(), 0.0);
        assert_relative_eq!(regression_residual(&[0.3, 0.2], 3.0, &zero).unwrap(), 9.0);

        let a = anchors.columns(0, 1).into_owned();
        let single = RegressionDual { alpha: DVector::from_vec(vec![1.0]), anchors: a, spec, ridge: 1.0 };
        let c = [0.9, 0.1];
        let expected = crate::kernel::kernel_eval(&c, anchors.column(0).as_slice(), &spec).unwrap();
        assert_relative_eq!(predict(&c, &single).unwrap(), expected, epsilon = 1e-15);
        let exact = predict(&c, &single).unwrap();
        assert_eq!(regression_residual(&c, exact, &single).unwrap(), 0.0);
    }

    #[test]
    fn interpolation_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let spec = KernelSpec::ados();
        let anchors = random_anchors(&mut rng, 3, 8);
        let y = DVector::from_fn(8, |_, _| rng.random_range(0.0..10.0));
        let dual = solve_dual(&anchors, &y, &spec, 1e-8).unwrap();
        for j in 0..8 {
            let yhat = predict(anchors.column(j).as_slice(), &dual).unwrap();
            assert!((yhat - y[j]).abs() < 1e-3, "{yhat} vs {}", y[j]);
        }
    }

    #[test]
    fn residual_matches_straight_line() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let spec = KernelSpec::praxis();
        let anchors = random_anchors(&mut rng, 2, 5);
        let alpha = DVector::from_fn(5, |_, _| rng.random_range(-1.0..1.0));
        let dual = RegressionDual { alpha: alpha.clone(), anchors: anchors.clone(), spec, ridge: 1.0 };
        let c = [0.4, 1.3];
        let mut yhat = 0.0;
        for j in 0..5 {
            let (a0, a1) = (anchors[(0, j)], anchors[(1, j)]);
            let d2 = (c[0] - a0).powi(2) + (c[1] - a1).powi(2);
            let k = (-d2).exp() + 0.5 / 1.5 * (c[0] * a0 + c[1] * a1 + 1.0).powf(1.5);
            yhat += k * alpha[j];
        }
        assert_relative_eq!(regression_residual(&c, 2.0, &dual).unwrap(), (2.0 - yhat).powi(2), max_relative = 1e-12);
    }

    #[test]
    fn linear_in_alpha_and_shrinks_with_ridge() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let spec = KernelSpec::ados();
        let anchors = random_anchors(&mut rng, 3, 6);
        let y = DVector::from_fn(6, |_, _| rng.random_range(0.0..10.0));
        let dual = solve_dual(&anchors, &y, &spec, 1.0).unwrap();
        let mut scaled = dual.clone();
        scaled.alpha *= 2.5;
        let c = [0.2, 0.4, 0.6];
        assert_relative_eq!(predict(&c, &scaled).unwrap(), 2.5 * predict(&c, &dual).unwrap(), max_relative = 1e-14);

        let norms: Vec<f64> = [1.0, 10.0, 100.0, 1000.0]
            .iter()
            .map(|&r| solve_dual(&anchors, &y, &spec, r).unwrap().alpha.norm())
            .collect();
        assert!(norms.windows(2).all(|w| w[1] < w[0]), "{norms:?}");
    }

    #[test]
    fn indefinite_system_uses_lu() {
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let y = DVector::from_vec(vec![1.0, -1.0]);
        let alpha = solve_with_gram(&k, &y, 0.5).unwrap();
        let resid = (k + DMatrix::identity(2, 2) * 0.5) * alpha - y;
        assert!(resid.amax() < 1e-14);
    }

    #[test]
    fn rejects_zero_ridge() {
        assert!(solve_with_gram(&DMatrix::identity(2, 2), &DVector::zeros(2), 0.0).is_err());
    }
}
