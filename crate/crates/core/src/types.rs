//! Shared data model: input matrices, cohorts, kernel and solver settings,
//! and the mutable optimizer state.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CmoError, Result};

/// Relative symmetry tolerance applied to every input matrix.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Smallest eigenvalue accepted for a raw input matrix.
pub const PSD_TOL: f64 = 1e-8;

/// A symmetric P×P matrix. Raw inputs are also PSD up to [`PSD_TOL`].
///
/// The per-patient factor `Q_n` with `Γ_n ≈ Q_n Q_nᵀ` is never materialized;
/// the solver works with `X diag(c_n) Xᵀ` directly.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    data: DMatrix<f64>,
}

impl CorrelationMatrix {
    /// Checks shape, finiteness and symmetry, then stores the exactly
    /// symmetrized matrix `(A + Aᵀ)/2`.
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        Self::checked(data, 0)
    }

    pub(crate) fn checked(data: DMatrix<f64>, index: usize) -> Result<Self> {
        if data.nrows() != data.ncols() {
            return Err(CmoError::Dimension(format!(
                "matrix {index} is {}x{}, expected square",
                data.nrows(),
                data.ncols()
            )));
        }
        if data.nrows() == 0 {
            return Err(CmoError::Dimension(format!("matrix {index} is empty")));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            let p = data.nrows();
            return Err(CmoError::NonFinite(format!(
                "matrix {index} entry ({}, {})",
                pos % p,
                pos / p
            )));
        }
        let scale = data.amax().max(1.0);
        let deviation = (&data - data.transpose()).amax();
        if deviation > SYMMETRY_TOL * scale {
            return Err(CmoError::Asymmetric { index, deviation });
        }
        let data = (&data + data.transpose()) * 0.5;
        Ok(Self { data })
    }

    /// Wraps a matrix already known to be exactly symmetric.
    pub(crate) fn from_symmetric(data: DMatrix<f64>) -> Self {
        debug_assert_eq!(data.nrows(), data.ncols());
        Self { data }
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.data
    }

    pub fn p(&self) -> usize {
        self.data.nrows()
    }

    /// Eigenvalues sorted in descending order.
    pub fn eigenvalues_desc(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self.data.clone().symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        ev
    }
}

/// N input matrices with their scalar severity scores.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortDataset {
    pub matrices: Vec<CorrelationMatrix>,
    pub scores: Vec<f64>,
    pub score_name: String,
}

impl CohortDataset {
    pub fn p(&self) -> usize {
        self.matrices[0].p()
    }

    pub fn n(&self) -> usize {
        self.matrices.len()
    }

    pub fn scores_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.scores)
    }

    /// Sub-cohort with the given patient indices, in the given order.
    pub fn subset(&self, indices: &[usize]) -> CohortDataset {
        CohortDataset {
            matrices: indices.iter().map(|&i| self.matrices[i].clone()).collect(),
            scores: indices.iter().map(|&i| self.scores[i]).collect(),
            score_name: self.score_name.clone(),
        }
    }

    pub fn score_range(&self) -> f64 {
        let lo = self.scores.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        hi - lo
    }
}

/// Which summands of the mixed kernel are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelTerms {
    #[default]
    Mixed,
    ExponentialOnly,
    PolynomialOnly,
}

impl KernelTerms {
    pub fn has_exponential(self) -> bool {
        matches!(self, KernelTerms::Mixed | KernelTerms::ExponentialOnly)
    }

    pub fn has_polynomial(self) -> bool {
        matches!(self, KernelTerms::Mixed | KernelTerms::PolynomialOnly)
    }

    pub fn code(self) -> u32 {
        match self {
            KernelTerms::Mixed => 0,
            KernelTerms::ExponentialOnly => 1,
            KernelTerms::PolynomialOnly => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(KernelTerms::Mixed),
            1 => Some(KernelTerms::ExponentialOnly),
            2 => Some(KernelTerms::PolynomialOnly),
            _ => None,
        }
    }
}

/// Parameters of `κ(c, ĉ) = exp(−‖c − ĉ‖²/σ²) + (ρ/l)(ĉᵀc + 1)^l`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelSpec {
    pub sigma_sq: f64,
    pub rho: f64,
    pub ell: f64,
    pub terms: KernelTerms,
}

impl KernelSpec {
    pub fn new(sigma_sq: f64, rho: f64, ell: f64) -> Result<Self> {
        let spec = Self { sigma_sq, rho, ell, terms: KernelTerms::Mixed };
        spec.validate()?;
        Ok(spec)
    }

    /// Setting used for the ADOS score: σ² = 1, ρ = 0.8, l = 2.5.
    pub fn ados() -> Self {
        Self { sigma_sq: 1.0, rho: 0.8, ell: 2.5, terms: KernelTerms::Mixed }
    }

    /// Setting used for the SRS score: σ² = 1, ρ = 2, l = 1.5.
    pub fn srs() -> Self {
        Self { sigma_sq: 1.0, rho: 2.0, ell: 1.5, terms: KernelTerms::Mixed }
    }

    /// Setting used for the Praxis score: σ² = 1, ρ = 0.5, l = 1.5.
    pub fn praxis() -> Self {
        Self { sigma_sq: 1.0, rho: 0.5, ell: 1.5, terms: KernelTerms::Mixed }
    }

    pub fn with_terms(mut self, terms: KernelTerms) -> Self {
        self.terms = terms;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_sq > 0.0 && self.sigma_sq.is_finite()) {
            return Err(CmoError::InvalidParameter(format!("sigma_sq must be > 0, got {}", self.sigma_sq)));
        }
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return Err(CmoError::InvalidParameter(format!("rho must be >= 0, got {}", self.rho)));
        }
        if !(self.ell > 1.0 && self.ell.is_finite()) {
            return Err(CmoError::InvalidParameter(format!("ell must be > 1, got {}", self.ell)));
        }
        Ok(())
    }
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self::ados()
    }
}

/// Trust-region loop constants for the per-patient loading update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrustRegionConfig {
    pub delta0: f64,
    pub delta_max: f64,
    pub eta_accept: f64,
    pub shrink: f64,
    pub expand: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
}

impl Default for TrustRegionConfig {
    fn default() -> Self {
        Self {
            delta0: 1.0,
            delta_max: 100.0,
            eta_accept: 0.1,
            shrink: 0.25,
            expand: 2.0,
            max_iters: 50,
            grad_tol: 1e-6,
        }
    }
}

impl TrustRegionConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.eta_accept > 0.0
            && self.eta_accept < 0.25
            && self.shrink > 0.0
            && self.shrink < 1.0
            && self.expand > 1.0
            && self.delta0 > 0.0
            && self.delta0 <= self.delta_max
            && self.grad_tol > 0.0
            && self.max_iters > 0;
        if ok {
            Ok(())
        } else {
            Err(CmoError::InvalidParameter(format!("invalid trust-region config {self:?}")))
        }
    }
}

/// Solver configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    /// Weight of the regression term against the factorization term.
    pub lambda: f64,
    /// ℓ1 weight on the basis.
    pub gamma1: f64,
    /// ℓ2 weight on each loading vector.
    pub gamma2: f64,
    /// ℓ2 weight on the regression weights.
    pub gamma3: f64,
    pub rank_r: usize,
    /// Initial proximal step for the basis update.
    pub prox_step: f64,
    /// Proximal-gradient iterations per outer pass.
    pub prox_iters: usize,
    /// Dual ascent step η.
    pub dual_step: f64,
    /// Halve η whenever the constraint residual grows between passes.
    pub halve_dual_step: bool,
    pub tr: TrustRegionConfig,
    /// Relative change of the total objective that ends the outer loop.
    pub outer_tol: f64,
    /// Constraint residual Σ‖V_n − X diag(c_n)‖_F required for convergence.
    pub residual_tol: f64,
    pub max_outer_iters: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            gamma1: 10.0,
            gamma2: 0.7,
            gamma3: 1.0,
            rank_r: 8,
            prox_step: 1e-3,
            prox_iters: 1,
            dual_step: 1.0,
            halve_dual_step: false,
            tr: TrustRegionConfig::default(),
            outer_tol: 1e-5,
            residual_tol: 1e-4,
            max_outer_iters: 200,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self, p: usize) -> Result<()> {
        for (name, v) in [
            ("lambda", self.lambda),
            ("gamma1", self.gamma1),
            ("gamma2", self.gamma2),
            ("gamma3", self.gamma3),
            ("prox_step", self.prox_step),
            ("dual_step", self.dual_step),
            ("outer_tol", self.outer_tol),
            ("residual_tol", self.residual_tol),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CmoError::InvalidParameter(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.rank_r == 0 || self.rank_r > p {
            return Err(CmoError::InvalidParameter(format!(
                "rank_r must lie in [1, {p}], got {}",
                self.rank_r
            )));
        }
        if self.prox_iters == 0 || self.max_outer_iters == 0 {
            return Err(CmoError::InvalidParameter("iteration counts must be positive".into()));
        }
        self.tr.validate()
    }

    /// Ridge added to the Gram matrix, γ3/λ.
    pub fn ridge(&self) -> f64 {
        self.gamma3 / self.lambda
    }
}

/// All optimizer state. Owned by a single solver driver.
///
/// The regression weights `w` live implicitly in `(alpha, anchors)`:
/// `w = Σ_j α_j φ(anchor_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    /// P×R shared basis.
    pub basis_x: DMatrix<f64>,
    /// R×N nonnegative loadings, one column per patient.
    pub loadings: DMatrix<f64>,
    /// Constraint copies `V_n ≈ X diag(c_n)`.
    pub v_mats: Vec<DMatrix<f64>>,
    /// Multipliers `Λ_n`.
    pub duals: Vec<DMatrix<f64>>,
    pub alpha: DVector<f64>,
    /// Loadings frozen at the last dual solve.
    pub anchors: DMatrix<f64>,
}

impl ModelState {
    pub fn p(&self) -> usize {
        self.basis_x.nrows()
    }

    pub fn r(&self) -> usize {
        self.basis_x.ncols()
    }

    pub fn n(&self) -> usize {
        self.loadings.ncols()
    }

    pub fn loading(&self, n: usize) -> DVector<f64> {
        self.loadings.column(n).into_owned()
    }

    /// `X diag(c)`.
    pub fn scaled_basis(&self, c: &DVector<f64>) -> DMatrix<f64> {
        scale_columns(&self.basis_x, c)
    }

    pub fn loadings_nonnegative(&self) -> bool {
        self.loadings.iter().all(|&v| v >= 0.0)
    }

    pub fn check_dims(&self, cohort: &CohortDataset) -> Result<()> {
        let (p, r, n) = (self.p(), self.r(), self.n());
        if cohort.p() != p || cohort.n() != n {
            return Err(CmoError::Dimension(format!(
                "state is P={p}, N={n} but cohort is P={}, N={}",
                cohort.p(),
                cohort.n()
            )));
        }
        let mats_ok = self.v_mats.len() == n
            && self.duals.len() == n
            && self.v_mats.iter().chain(&self.duals).all(|m| m.shape() == (p, r));
        if !mats_ok || self.loadings.nrows() != r || self.anchors.shape() != (r, n) || self.alpha.len() != n {
            return Err(CmoError::Dimension("inconsistent model state shapes".into()));
        }
        Ok(())
    }
}

/// `M diag(c)`: scales column r of `m` by `c[r]`.
pub fn scale_columns(m: &DMatrix<f64>, c: &DVector<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for (r, mut col) in out.column_iter_mut().enumerate() {
        col *= c[r];
    }
    out
}
