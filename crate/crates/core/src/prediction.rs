//! Loading and score for a patient outside the training set. The basis is
//! frozen and the loading solves
//!
//! ```text
//! min ½ cᵀH̄c + f̄ᵀc  s.t. c ≥ 0,
//! H̄ = 2(XᵀX)∘(XᵀX) + 2γ2 I,   f̄ = −2 diag(XᵀΓX)
//! ```

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{CmoError, Result};
use crate::par::map_indices;
use crate::qp::solve_nonneg;
use crate::regression::predict;
use crate::solver::FittedModel;
use crate::types::CorrelationMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct UnseenQP {
    pub h_bar: DMatrix<f64>,
    pub f_bar: DVector<f64>,
}

impl UnseenQP {
    pub fn objective(&self, c: &DVector<f64>) -> f64 {
        0.5 * c.dot(&(&self.h_bar * c)) + self.f_bar.dot(c)
    }

    /// Largest violation of the KKT conditions at `c`.
    pub fn kkt_residual(&self, c: &DVector<f64>) -> f64 {
        crate::qp::kkt_residual(&self.h_bar, &self.f_bar, c)
    }
}

/// Assembles the QP from a basis and ridge weight. With `gamma2 = 0` the
/// Gram matrix `XᵀX` must be positive definite.
pub fn build_qp_from_basis(gamma_new: &CorrelationMatrix, x: &DMatrix<f64>, gamma2: f64) -> Result<UnseenQP> {
    if gamma_new.p() != x.nrows() {
        return Err(CmoError::Dimension(format!("matrix is {}×{0} but basis has {} rows", gamma_new.p(), x.nrows())));
    }
    if !(gamma2 >= 0.0) {
        return Err(CmoError::InvalidParameter(format!("gamma2 must be ≥ 0, got {gamma2}")));
    }
    let r = x.ncols();
    let xtx = x.transpose() * x;
    if gamma2 == 0.0 && Cholesky::new(xtx.clone()).is_none() {
        return Err(CmoError::InvalidParameter("gamma2 = 0 requires XᵀX positive definite".into()));
    }
    let h_bar = xtx.component_mul(&xtx) * 2.0 + DMatrix::identity(r, r) * (2.0 * gamma2);
    let proj = x.transpose() * gamma_new.data() * x;
    let f_bar = proj.diagonal() * -2.0;
    Ok(UnseenQP { h_bar, f_bar })
}

pub fn build_qp(gamma_new: &CorrelationMatrix, model: &FittedModel) -> Result<UnseenQP> {
    build_qp_from_basis(gamma_new, &model.basis_x, model.hyperparams.gamma2)
}

/// Unique nonnegative minimizer of the QP.
pub fn solve_unseen_loading(qp: &UnseenQP) -> Result<DVector<f64>> {
    solve_nonneg(&qp.h_bar, &qp.f_bar)
}

/// `(c̄, ŷ)` for one new matrix.
pub fn predict_unseen(gamma_new: &CorrelationMatrix, model: &FittedModel) -> Result<(DVector<f64>, f64)> {
    let c = solve_unseen_loading(&build_qp(gamma_new, model)?)?;
    let y = predict(c.as_slice(), &model.dual)?;
    Ok((c, y))
}

/// `predict_unseen` over several matrices, in input order.
pub fn predict_many(matrices: &[CorrelationMatrix], model: &FittedModel) -> Result<Vec<(DVector<f64>, f64)>> {
    map_indices(matrices.len(), |i| predict_unseen(&matrices[i], model)).into_iter().collect()
}
