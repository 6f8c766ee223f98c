//! Mixed exponential + polynomial kernel
//!
//! `κ(c, ĉ) = exp(−‖c − ĉ‖²/σ²) + (ρ/l)(ĉᵀc + 1)^l`
//!
//! with first and second derivatives in the first argument. Inputs are
//! nonnegative, so `ĉᵀc + 1 ≥ 1` and fractional degrees are well defined.

use nalgebra::{DMatrix, DVector};

use crate::error::{CmoError, Result};
use crate::types::KernelSpec;

/// Gram matrix `K[i][j] = κ(anchor_i, anchor_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    pub data: DMatrix<f64>,
    pub spec: KernelSpec,
}

fn check_pair(c: &[f64], c_hat: &[f64]) -> Result<()> {
    if c.len() != c_hat.len() {
        return Err(CmoError::Dimension(format!("kernel arguments of length {} and {}", c.len(), c_hat.len())));
    }
    if c.iter().chain(c_hat).any(|v| !v.is_finite()) {
        return Err(CmoError::NonFinite("kernel argument".into()));
    }
    if c.iter().chain(c_hat).any(|&v| v < 0.0) {
        return Err(CmoError::InvalidParameter("kernel arguments must be nonnegative".into()));
    }
    Ok(())
}

// Both reductions are symmetric in their arguments bit for bit.
#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn eval_unchecked(c: &[f64], c_hat: &[f64], spec: &KernelSpec) -> f64 {
    let mut k = 0.0;
    if spec.terms.has_exponential() {
        k += (-sq_dist(c, c_hat) / spec.sigma_sq).exp();
    }
    if spec.terms.has_polynomial() {
        k += spec.rho / spec.ell * (dot(c_hat, c) + 1.0).powf(spec.ell);
    }
    k
}

/// Accumulates `scale · ∇κ(c, ĉ)` into `out`.
#[inline]
pub(crate) fn grad_accumulate(c: &[f64], c_hat: &[f64], spec: &KernelSpec, scale: f64, out: &mut [f64]) {
    if spec.terms.has_exponential() {
        let e = (-sq_dist(c, c_hat) / spec.sigma_sq).exp();
        let f = -2.0 / spec.sigma_sq * e * scale;
        for ((o, x), y) in out.iter_mut().zip(c).zip(c_hat) {
            *o += f * (x - y);
        }
    }
    if spec.terms.has_polynomial() {
        let f = spec.rho * (dot(c_hat, c) + 1.0).powf(spec.ell - 1.0) * scale;
        for (o, y) in out.iter_mut().zip(c_hat) {
            *o += f * y;
        }
    }
}

/// Accumulates `scale · ∇²κ(c, ĉ)` into `out`.
pub(crate) fn hess_accumulate(c: &[f64], c_hat: &[f64], spec: &KernelSpec, scale: f64, out: &mut DMatrix<f64>) {
    let r = c.len();
    if spec.terms.has_exponential() {
        let e = (-sq_dist(c, c_hat) / spec.sigma_sq).exp();
        let two_over = 2.0 / spec.sigma_sq;
        let f = two_over * e * scale;
        for i in 0..r {
            let di = c[i] - c_hat[i];
            for j in 0..=i {
                let dj = c[j] - c_hat[j];
                let delta = if i == j { 1.0 } else { 0.0 };
                let v = f * (two_over * di * dj - delta);
                out[(i, j)] += v;
                if i != j {
                    out[(j, i)] += v;
                }
            }
        }
    }
    if spec.terms.has_polynomial() {
        let f = spec.rho * (spec.ell - 1.0) * (dot(c_hat, c) + 1.0).powf(spec.ell - 2.0) * scale;
        for i in 0..r {
            for j in 0..=i {
                let v = f * c_hat[i] * c_hat[j];
                out[(i, j)] += v;
                if i != j {
                    out[(j, i)] += v;
                }
            }
        }
    }
}

pub fn kernel_eval(c: &[f64], c_hat: &[f64], spec: &KernelSpec) -> Result<f64> {
    check_pair(c, c_hat)?;
    Ok(eval_unchecked(c, c_hat, spec))
}

/// `∇_c κ(c, ĉ) = −(2/σ²) e^{−‖c−ĉ‖²/σ²} (c − ĉ) + ρ (ĉᵀc + 1)^{l−1} ĉ`
pub fn kernel_grad(c: &[f64], c_hat: &[f64], spec: &KernelSpec) -> Result<DVector<f64>> {
    check_pair(c, c_hat)?;
    let mut g = vec![0.0; c.len()];
    grad_accumulate(c, c_hat, spec, 1.0, &mut g);
    Ok(DVector::from_vec(g))
}

/// `∇²_c κ(c, ĉ) = (2/σ²) e^{−‖c−ĉ‖²/σ²} [(2/σ²)(c−ĉ)(c−ĉ)ᵀ − I] + ρ(l−1)(ĉᵀc + 1)^{l−2} ĉĉᵀ`
pub fn kernel_hess(c: &[f64], c_hat: &[f64], spec: &KernelSpec) -> Result<DMatrix<f64>> {
    check_pair(c, c_hat)?;
    let mut h = DMatrix::zeros(c.len(), c.len());
    hess_accumulate(c, c_hat, spec, 1.0, &mut h);
    Ok(h)
}

/// Gram matrix over the columns of `anchors` (R×N).
pub fn gram(anchors: &DMatrix<f64>, spec: &KernelSpec) -> Result<GramMatrix> {
    let n = anchors.ncols();
    for j in 0..n {
        let col = anchors.column(j);
        check_pair(col.as_slice(), col.as_slice())?;
    }
    let mut data = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let k = eval_unchecked(anchors.column(i).as_slice(), anchors.column(j).as_slice(), spec);
            data[(i, j)] = k;
            data[(j, i)] = k;
        }
    }
    Ok(GramMatrix { data, spec: *spec })
}

/// Kernel values `κ(c, anchor_j)` for every anchor column.
pub(crate) fn kernel_row(c: &[f64], anchors: &DMatrix<f64>, spec: &KernelSpec) -> DVector<f64> {
    DVector::from_iterator(
        anchors.ncols(),
        (0..anchors.ncols()).map(|j| eval_unchecked(c, anchors.column(j).as_slice(), spec)),
    )
}
