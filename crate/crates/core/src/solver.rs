//! Alternating minimization driver.
//!
//! One outer pass runs, in order: a proximal step on `X`, a dual solve of the
//! regression (refreshing the anchors), the trust-region loading updates for
//! every patient, the closed-form `V_n` update and the multiplier ascent.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CmoError, Result};
use crate::factorization::{
    constraint_residual, objective, update_duals, update_v, update_x_with_step, x_block_objective, ObjectiveBreakdown,
};
use crate::par::map_indices;
use crate::regression::{solve_dual, RegressionDual};
use crate::trust_region::update_loading_traced;
use crate::types::{scale_columns, CohortDataset, Hyperparams, KernelSpec, ModelState};

/// One outer iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub breakdown: ObjectiveBreakdown,
    pub constraint_residual: f64,
    pub dual_step: f64,
    /// Seconds since the start of the fit.
    pub wall_time: f64,
    /// X-restricted augmented objective before and after the basis step.
    pub x_block: (f64, f64),
    /// Sum over patients of the loading objective before and after the
    /// trust-region updates.
    pub c_block: (f64, f64),
    pub loadings_nonnegative: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FitTrace {
    /// Objective of the initial state.
    pub initial: ObjectiveBreakdown,
    pub records: Vec<IterationRecord>,
    pub converged: bool,
}

impl FitTrace {
    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }
}

/// Condensed outcome stored with a fitted model.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FitSummary {
    pub iterations: usize,
    pub converged: bool,
    pub final_breakdown: ObjectiveBreakdown,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    pub basis_x: DMatrix<f64>,
    pub dual: RegressionDual,
    pub hyperparams: Hyperparams,
    pub spec: KernelSpec,
    pub summary: FitSummary,
    /// R×N learned training loadings.
    pub training_loadings: DMatrix<f64>,
}

impl FittedModel {
    pub fn p(&self) -> usize {
        self.basis_x.nrows()
    }

    pub fn r(&self) -> usize {
        self.basis_x.ncols()
    }
}

/// Callback receiving each finished outer iteration.
pub type Progress<'a> = &'a mut dyn FnMut(usize, &ObjectiveBreakdown);

fn cohort_mean(cohort: &CohortDataset) -> DMatrix<f64> {
    let p = cohort.p();
    let mut sum = DMatrix::zeros(p, p);
    for m in &cohort.matrices {
        sum += m.data();
    }
    sum / cohort.n() as f64
}

/// Spectral initial basis: the top-`r` eigenvectors of the cohort mean,
/// scaled by the square roots of their eigenvalue magnitudes. Signs are
/// normalized so the largest-magnitude entry is positive, then flipped by the
/// seed.
pub fn initial_basis(cohort: &CohortDataset, r: usize, seed: u64) -> Result<DMatrix<f64>> {
    let p = cohort.p();
    if r == 0 || r > p {
        return Err(CmoError::InvalidParameter(format!("rank {r} outside [1, {p}]")));
    }
    let mean = cohort_mean(cohort);
    if mean.iter().any(|v| !v.is_finite()) {
        return Err(CmoError::NonFinite("cohort mean".into()));
    }
    let eig = SymmetricEigen::new(mean);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let top = eig.eigenvalues.amax();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = DMatrix::zeros(p, r);
    for (k, &idx) in order.iter().take(r).enumerate() {
        let lam = eig.eigenvalues[idx].abs();
        let scale = if lam <= 1e-12 * top || lam == 0.0 { 1.0 } else { lam.sqrt() };
        let col = eig.eigenvectors.column(idx);
        let pivot = col.iamax();
        let mut sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        if rng.random_bool(0.5) {
            sign = -sign;
        }
        x.set_column(k, &(col * (sign * scale)));
    }
    Ok(x)
}

/// `max(diag(X⁺ Γ X⁺ᵀ), 0)` for every patient, as an R×N matrix.
pub fn initial_loadings(cohort: &CohortDataset, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let pinv = x
        .clone()
        .pseudo_inverse(1e-12 * x.amax().max(f64::MIN_POSITIVE))
        .map_err(|e| CmoError::LinearSolve(e.to_string()))?;
    let cols = map_indices(cohort.n(), |n| {
        let proj = &pinv * cohort.matrices[n].data() * pinv.transpose();
        proj.diagonal().map(|v| v.max(0.0))
    });
    Ok(DMatrix::from_columns(&cols))
}

fn init_state(cohort: &CohortDataset, hp: &Hyperparams, spec: &KernelSpec, seed: u64, coupled: bool) -> Result<ModelState> {
    let x = initial_basis(cohort, hp.rank_r, seed)?;
    let loadings = initial_loadings(cohort, &x)?;
    let n = cohort.n();
    let v_mats = (0..n).map(|i| scale_columns(&x, &loadings.column(i).into_owned())).collect();
    let duals = vec![DMatrix::zeros(cohort.p(), hp.rank_r); n];
    let alpha = if coupled {
        solve_dual(&loadings, &cohort.scores_vector(), spec, hp.ridge())?.alpha
    } else {
        DVector::zeros(n)
    };
    Ok(ModelState { basis_x: x, anchors: loadings.clone(), loadings, v_mats, duals, alpha })
}

/// Initial optimizer state.
pub fn initialize(cohort: &CohortDataset, hp: &Hyperparams, spec: &KernelSpec, seed: u64) -> Result<ModelState> {
    hp.validate(cohort.p())?;
    spec.validate()?;
    init_state(cohort, hp, spec, seed, true)
}

fn diverged(iteration: usize) -> impl Fn(CmoError) -> CmoError {
    move |e| match e {
        CmoError::NonFinite(_) => CmoError::Diverged { iteration },
        other => other,
    }
}

/// Runs the alternating minimization to convergence.
///
/// With `coupled = false` the regression term is dropped (λ = 0, α = 0) and
/// only the factorization is fitted.
pub(crate) fn run(
    cohort: &CohortDataset,
    hp: &Hyperparams,
    spec: &KernelSpec,
    seed: u64,
    coupled: bool,
    mut progress: Option<Progress<'_>>,
) -> Result<(ModelState, FitTrace)> {
    hp.validate(cohort.p())?;
    spec.validate()?;
    let start = Instant::now();
    let mut work_hp = *hp;
    if !coupled {
        work_hp.lambda = 0.0;
    }
    let hp = &work_hp;
    let y = cohort.scores_vector();
    let mut state = init_state(cohort, hp, spec, seed, coupled)?;
    let mut trace = FitTrace { initial: objective(&state, cohort, hp, spec).map_err(diverged(0))?, ..FitTrace::default() };

    let mut step = hp.prox_step;
    let mut eta = hp.dual_step;
    let mut prev_total = trace.initial.total_j;
    let mut prev_residual = f64::INFINITY;
    for iteration in 1..=hp.max_outer_iters {
        let x_before = x_block_objective(&state.basis_x, &state, cohort, hp);
        let xu = update_x_with_step(&state, cohort, hp, step)?;
        let x_after = x_block_objective(&xu.basis, &state, cohort, hp);
        state.basis_x = xu.basis;
        step = 2.0 * xu.step;

        if coupled {
            let dual = solve_dual(&state.loadings, &y, spec, hp.ridge()).map_err(diverged(iteration))?;
            state.alpha = dual.alpha;
            state.anchors = dual.anchors;
        }

        let updates = map_indices(cohort.n(), |n| update_loading_traced(n, &state, cohort, hp, spec));
        let mut c_before = 0.0;
        let mut c_after = 0.0;
        for (n, u) in updates.into_iter().enumerate() {
            let u = u?;
            c_before += u.objective_trace[0];
            c_after += u.objective_trace[u.objective_trace.len() - 1];
            state.loadings.set_column(n, &u.loading);
        }
        let loadings_nonnegative = state.loadings_nonnegative();

        state.v_mats = update_v(&state, cohort)?;
        let residual_before_ascent = constraint_residual(&state);
        if hp.halve_dual_step && residual_before_ascent > prev_residual {
            eta *= 0.5;
        }
        prev_residual = residual_before_ascent;
        state.duals = update_duals(&state, eta);

        let breakdown = objective(&state, cohort, hp, spec).map_err(diverged(iteration))?;
        if state.duals.iter().any(|d| d.iter().any(|v| !v.is_finite())) {
            return Err(CmoError::Diverged { iteration });
        }
        let residual = breakdown.constraint_residual;
        trace.records.push(IterationRecord {
            iteration,
            breakdown,
            constraint_residual: residual,
            dual_step: eta,
            wall_time: start.elapsed().as_secs_f64(),
            x_block: (x_before, x_after),
            c_block: (c_before, c_after),
            loadings_nonnegative,
        });
        if let Some(cb) = progress.as_mut() {
            cb(iteration, &breakdown);
        }
        let rel_change = (prev_total - breakdown.total_j).abs() / prev_total.abs().max(f64::MIN_POSITIVE);
        prev_total = breakdown.total_j;
        if rel_change < hp.outer_tol && residual < hp.residual_tol {
            trace.converged = true;
            break;
        }
    }
    Ok((state, trace))
}

fn summarize(trace: &FitTrace) -> FitSummary {
    FitSummary {
        iterations: trace.records.len(),
        converged: trace.converged,
        final_breakdown: trace.last().map_or(trace.initial, |r| r.breakdown),
    }
}

/// Fits the coupled model. The returned dual is re-solved on the final
/// loadings.
pub fn fit(cohort: &CohortDataset, hp: &Hyperparams, spec: &KernelSpec, seed: u64) -> Result<(FittedModel, FitTrace)> {
    fit_with_progress(cohort, hp, spec, seed, None)
}

pub fn fit_with_progress(
    cohort: &CohortDataset,
    hp: &Hyperparams,
    spec: &KernelSpec,
    seed: u64,
    progress: Option<Progress<'_>>,
) -> Result<(FittedModel, FitTrace)> {
    let (state, trace) = run(cohort, hp, spec, seed, true, progress)?;
    let dual = solve_dual(&state.loadings, &cohort.scores_vector(), spec, hp.ridge())?;
    let model = FittedModel {
        basis_x: state.basis_x,
        dual,
        hyperparams: *hp,
        spec: *spec,
        summary: summarize(&trace),
        training_loadings: state.loadings,
    };
    Ok((model, trace))
}

/// Factorization-only fit (λ = 0). Returns the final state with `alpha = 0`.
pub fn fit_factorization(
    cohort: &CohortDataset,
    hp: &Hyperparams,
    spec: &KernelSpec,
    seed: u64,
) -> Result<(ModelState, FitTrace)> {
    run(cohort, hp, spec, seed, false, None)
}

/// Decoupled pipeline: factorization only, then kernel ridge regression on
/// the frozen loadings with ridge `γ3/λ`.
pub fn fit_decoupled(
    cohort: &CohortDataset,
    hp: &Hyperparams,
    spec: &KernelSpec,
    seed: u64,
) -> Result<(FittedModel, FitTrace)> {
    let (state, trace) = fit_factorization(cohort, hp, spec, seed)?;
    let dual = solve_dual(&state.loadings, &cohort.scores_vector(), spec, hp.ridge())?;
    let model = FittedModel {
        basis_x: state.basis_x,
        dual,
        hyperparams: *hp,
        spec: *spec,
        summary: summarize(&trace),
        training_loadings: state.loadings,
    };
    Ok((model, trace))
}
