//! Cohort ingestion: validation, first-eigenvector residualization and
//! knee-point rank selection.

use nalgebra::DMatrix;

use crate::error::{CmoError, Result};
use crate::types::{CohortDataset, CorrelationMatrix, PSD_TOL};

/// Validates raw matrices and scores into a [`CohortDataset`].
///
/// Every matrix must be square, finite, symmetric and PSD up to
/// [`PSD_TOL`] (scaled by the largest entry when that exceeds one).
pub fn validate_cohort(raw: Vec<DMatrix<f64>>, scores: Vec<f64>, score_name: &str) -> Result<CohortDataset> {
    if raw.is_empty() {
        return Err(CmoError::Dimension("cohort is empty".into()));
    }
    if raw.len() != scores.len() {
        return Err(CmoError::Dimension(format!(
            "{} matrices but {} scores",
            raw.len(),
            scores.len()
        )));
    }
    if raw.len() < 2 {
        return Err(CmoError::Dimension("cohort needs at least two patients".into()));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(CmoError::NonFinite(format!("score {i}")));
    }
    let p = raw[0].nrows();
    let mut matrices = Vec::with_capacity(raw.len());
    for (index, m) in raw.into_iter().enumerate() {
        if m.nrows() != p || m.ncols() != p {
            return Err(CmoError::Dimension(format!(
                "matrix {index} is {}x{}, expected {p}x{p}",
                m.nrows(),
                m.ncols()
            )));
        }
        let cm = CorrelationMatrix::checked(m, index)?;
        let min_eigenvalue = cm
            .data()
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if min_eigenvalue < -PSD_TOL * cm.data().amax().max(1.0) {
            return Err(CmoError::NotPsd { index, min_eigenvalue });
        }
        matrices.push(cm);
    }
    Ok(CohortDataset { matrices, scores, score_name: score_name.to_string() })
}

/// Removes the rank-one contribution `λ₁ v₁ v₁ᵀ` of the algebraically
/// largest eigenpair.
pub fn residualize_first_eigenvector(g: &CorrelationMatrix) -> Result<CorrelationMatrix> {
    if g.data().iter().any(|v| !v.is_finite()) {
        return Err(CmoError::NonFinite("cannot eigendecompose non-finite matrix".into()));
    }
    let eig = g.data().clone().symmetric_eigen();
    let top = eig.eigenvalues.imax();
    let v = eig.eigenvectors.column(top);
    let out = g.data() - v * v.transpose() * eig.eigenvalues[top];
    let sym = (&out + out.transpose()) * 0.5;
    Ok(CorrelationMatrix::from_symmetric(sym))
}

/// Residualizes every matrix of a cohort.
pub fn residualize_cohort(cohort: &CohortDataset) -> Result<CohortDataset> {
    let matrices = cohort
        .matrices
        .iter()
        .map(residualize_first_eigenvector)
        .collect::<Result<Vec<_>>>()?;
    Ok(CohortDataset { matrices, scores: cohort.scores.clone(), score_name: cohort.score_name.clone() })
}

/// Mean of the per-patient descending eigenvalue curves.
pub fn mean_spectrum(cohort: &CohortDataset) -> Vec<f64> {
    let p = cohort.p();
    let mut mean = vec![0.0; p];
    for m in &cohort.matrices {
        for (acc, ev) in mean.iter_mut().zip(m.eigenvalues_desc()) {
            *acc += ev;
        }
    }
    let n = cohort.n() as f64;
    mean.iter_mut().for_each(|v| *v /= n);
    mean
}

/// Knee of a descending spectrum: the rank `r ∈ [2, P−1]` maximizing
/// `(λ_r − λ_{r+1}) − (λ_{r+1} − λ_{r+2})`, i.e. the last component before
/// the sharpest bend. Eigenvalues past the end are taken as zero.
///
/// Fails when `P < 3` or when no rank has positive curvature.
pub fn knee_rank(spectrum_desc: &[f64]) -> Result<usize> {
    let p = spectrum_desc.len();
    if p < 3 {
        return Err(CmoError::InvalidParameter(format!("knee detection needs P >= 3, got {p}")));
    }
    let at = |k: usize| if k <= p { spectrum_desc[k - 1] } else { 0.0 };
    let scale = spectrum_desc.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let mut best: Option<(usize, f64)> = None;
    for r in 2..p {
        let curvature = at(r) - 2.0 * at(r + 1) + at(r + 2);
        if best.is_none_or(|(_, b)| curvature > b) {
            best = Some((r, curvature));
        }
    }
    match best {
        Some((r, curvature)) if curvature > 1e-12 * scale => Ok(r),
        _ => Err(CmoError::NoKnee),
    }
}

/// Knee-point rank of the cohort's mean eigenspectrum.
pub fn select_rank(cohort: &CohortDataset) -> Result<usize> {
    knee_rank(&mean_spectrum(cohort))
}

/// Uses `fixed` when given, otherwise the knee point.
pub fn resolve_rank(cohort: &CohortDataset, fixed: Option<usize>) -> Result<usize> {
    match fixed {
        Some(r) if r >= 1 && r <= cohort.p() => Ok(r),
        Some(r) => Err(CmoError::InvalidParameter(format!("rank {r} outside [1, {}]", cohort.p()))),
        None => select_rank(cohort),
    }
}
