//! Objective evaluation and the basis, constraint-copy and multiplier updates
//! of the augmented Lagrangian
//!
//! ```text
//! Σ_n ‖Γ_n − V_n Xᵀ‖²_F + λ Σ_n (y_n − Σ_j κ(c_n, ĉ_j) α_j)²
//!   + Σ_n [ tr(Λ_nᵀ (V_n − X diag(c_n))) + ½‖V_n − X diag(c_n)‖²_F ]
//!   + γ1 ‖X‖_1 + γ2 Σ_n ‖c_n‖² + γ3 αᵀKα
//! ```

use nalgebra::{Cholesky, DMatrix};

use crate::error::{CmoError, Result};
use crate::kernel::{gram, kernel_row};
use crate::par::map_indices;
use crate::types::{scale_columns, CohortDataset, Hyperparams, KernelSpec, ModelState};

/// Steps below this abort the backtracking search.
pub const MIN_PROX_STEP: f64 = 1e-12;

/// Components of the joint objective. `total_j` excludes the constraint
/// residual, which is reported separately.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ObjectiveBreakdown {
    pub fit_term: f64,
    pub regression_term: f64,
    pub l1_x: f64,
    pub l2_c: f64,
    pub l2_w: f64,
    pub constraint_residual: f64,
    pub total_j: f64,
}

fn sum_in_order(parts: impl IntoIterator<Item = f64>) -> f64 {
    parts.into_iter().fold(0.0, |a, b| a + b)
}

/// Regression residual `y_n − Σ_j κ(c, ĉ_j) α_j` against frozen anchors.
pub(crate) fn score_residual(c: &[f64], y: f64, state: &ModelState, spec: &KernelSpec) -> f64 {
    y - kernel_row(c, &state.anchors, spec).dot(&state.alpha)
}

/// `Σ_n ‖V_n − X diag(c_n)‖_F`.
pub fn constraint_residual(state: &ModelState) -> f64 {
    let parts = map_indices(state.n(), |n| (&state.v_mats[n] - state.scaled_basis(&state.loading(n))).norm());
    sum_in_order(parts)
}

pub fn objective(state: &ModelState, cohort: &CohortDataset, hp: &Hyperparams, spec: &KernelSpec) -> Result<ObjectiveBreakdown> {
    state.check_dims(cohort)?;
    let x = &state.basis_x;
    let per_patient = map_indices(state.n(), |n| {
        let c = state.loading(n);
        let xd = scale_columns(x, &c);
        let fit = (cohort.matrices[n].data() - &xd * x.transpose()).norm_squared();
        let res = score_residual(c.as_slice(), cohort.scores[n], state, spec);
        let cons = (&state.v_mats[n] - &xd).norm();
        (fit, res * res, c.norm_squared(), cons)
    });
    let fit_term = sum_in_order(per_patient.iter().map(|t| t.0));
    let regression_term = hp.lambda * sum_in_order(per_patient.iter().map(|t| t.1));
    let l2_c = hp.gamma2 * sum_in_order(per_patient.iter().map(|t| t.2));
    let constraint_residual = sum_in_order(per_patient.iter().map(|t| t.3));
    let l1_x = hp.gamma1 * x.iter().map(|v| v.abs()).sum::<f64>();
    let l2_w = if state.alpha.iter().all(|&a| a == 0.0) {
        0.0
    } else {
        let k = gram(&state.anchors, spec)?;
        hp.gamma3 * state.alpha.dot(&(&k.data * &state.alpha))
    };
    let total_j = fit_term + regression_term + l1_x + l2_c + l2_w;
    if !total_j.is_finite() {
        return Err(CmoError::NonFinite("objective".into()));
    }
    Ok(ObjectiveBreakdown { fit_term, regression_term, l1_x, l2_c, l2_w, constraint_residual, total_j })
}

/// Entrywise `sgn(m)·max(|m| − t, 0)`.
pub fn soft_threshold(m: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    m.map(|v| v.signum() * (v.abs() - t).max(0.0))
}

/// Smooth part of the augmented objective that depends on `X`, for basis `x`.
pub fn x_smooth_objective(x: &DMatrix<f64>, state: &ModelState, cohort: &CohortDataset) -> f64 {
    let parts = map_indices(state.n(), |n| {
        let v = &state.v_mats[n];
        let xd = scale_columns(x, &state.loading(n));
        let fit = (cohort.matrices[n].data() - v * x.transpose()).norm_squared();
        let diff = v - xd;
        fit + state.duals[n].dot(&diff) + 0.5 * diff.norm_squared()
    });
    sum_in_order(parts)
}

fn l1(x: &DMatrix<f64>) -> f64 {
    x.iter().map(|v| v.abs()).sum()
}

/// Augmented objective restricted to `X`, including the ℓ1 penalty.
pub fn x_block_objective(x: &DMatrix<f64>, state: &ModelState, cohort: &CohortDataset, hp: &Hyperparams) -> f64 {
    x_smooth_objective(x, state, cohort) + hp.gamma1 * l1(x)
}

fn grad_x_at(x: &DMatrix<f64>, state: &ModelState, cohort: &CohortDataset) -> DMatrix<f64> {
    let parts = map_indices(state.n(), |n| {
        let v = &state.v_mats[n];
        let c = state.loading(n);
        let c_sq = c.map(|v| v * v);
        (x * v.transpose() - cohort.matrices[n].data()) * v * 2.0 - scale_columns(v, &c) + scale_columns(x, &c_sq)
            - scale_columns(&state.duals[n], &c)
    });
    parts.into_iter().fold(DMatrix::zeros(x.nrows(), x.ncols()), |acc, g| acc + g)
}

/// `∂J/∂X = Σ_n 2(X V_nᵀ − Γ_n)V_n − V_n diag(c_n) + X diag(c_n)² − Λ_n diag(c_n)`
pub fn grad_x(state: &ModelState, cohort: &CohortDataset) -> Result<DMatrix<f64>> {
    state.check_dims(cohort)?;
    Ok(grad_x_at(&state.basis_x, state, cohort))
}

/// Result of the proximal basis update.
#[derive(Debug, Clone, PartialEq)]
pub struct XUpdate {
    pub basis: DMatrix<f64>,
    /// Step accepted by the last backtracking search.
    pub step: f64,
}

/// Proximal-gradient update of `X` starting from `hp.prox_step`.
pub fn update_x(state: &ModelState, cohort: &CohortDataset, hp: &Hyperparams) -> Result<DMatrix<f64>> {
    Ok(update_x_with_step(state, cohort, hp, hp.prox_step)?.basis)
}

/// `hp.prox_iters` iterations of `X ← soft(X − t∇f(X), tγ1)`, each with a
/// halving backtracking search on the quadratic upper bound of the smooth
/// part, accepted up to roundoff. A candidate that would raise the
/// X-restricted objective is discarded. The first search starts at `step`,
/// later ones at twice the last accepted step.
pub fn update_x_with_step(state: &ModelState, cohort: &CohortDataset, hp: &Hyperparams, step: f64) -> Result<XUpdate> {
    state.check_dims(cohort)?;
    let mut x = state.basis_x.clone();
    let mut t = step;
    for iter in 0..hp.prox_iters {
        if iter > 0 {
            t *= 2.0;
        }
        let f0 = x_smooth_objective(&x, state, cohort);
        let g = grad_x_at(&x, state, cohort);
        let slack = 1e-13 * (1.0 + f0.abs());
        loop {
            let z = soft_threshold(&(&x - &g * t), t * hp.gamma1);
            let d = &z - &x;
            let bound = f0 + g.dot(&d) + d.norm_squared() / (2.0 * t);
            let fz = x_smooth_objective(&z, state, cohort);
            if fz <= bound + slack {
                if fz + hp.gamma1 * l1(&z) <= f0 + hp.gamma1 * l1(&x) {
                    x = z;
                }
                break;
            }
            t *= 0.5;
            if t < MIN_PROX_STEP {
                return Err(CmoError::StepUnderflow { step: t });
            }
        }
    }
    Ok(XUpdate { basis: x, step: t })
}

/// Closed-form `V_n = (X diag(c_n) + 2Γ_n X − Λ_n)(I_R + 2XᵀX)⁻¹`, the
/// stationary point of the augmented objective in `V_n`.
pub fn update_v(state: &ModelState, cohort: &CohortDataset) -> Result<Vec<DMatrix<f64>>> {
    state.check_dims(cohort)?;
    let x = &state.basis_x;
    let r = state.r();
    let m = DMatrix::identity(r, r) + x.transpose() * x * 2.0;
    let chol = Cholesky::new(m).ok_or_else(|| CmoError::LinearSolve("I + 2XᵀX not positive definite".into()))?;
    let out = map_indices(state.n(), |n| {
        let rhs = state.scaled_basis(&state.loading(n)) + cohort.matrices[n].data() * x * 2.0 - &state.duals[n];
        // V M = B with M symmetric  ⇔  M Vᵀ = Bᵀ
        chol.solve(&rhs.transpose()).transpose()
    });
    Ok(out)
}

/// `Λ_n ← Λ_n + η (V_n − X diag(c_n))`.
pub fn update_duals(state: &ModelState, eta: f64) -> Vec<DMatrix<f64>> {
    map_indices(state.n(), |n| {
        &state.duals[n] + (&state.v_mats[n] - state.scaled_basis(&state.loading(n))) * eta
    })
}
