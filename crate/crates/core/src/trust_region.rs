//! Per-patient loading update: a bound-constrained trust-region method on
//!
//! ```text
//! F(c) = λ (y_n − Σ_j α_j κ(c, ĉ_j))² + γ2 ‖c‖²
//!        + tr(Λ_nᵀ (V_n − X diag(c))) + ½ ‖V_n − X diag(c)‖²_F,   c ≥ 0
//! ```
//!
//! with analytic gradient and Hessian. Each step minimizes the quadratic
//! model over `{‖p‖ ≤ δ} ∩ {c + p ≥ 0}`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{CmoError, Result};
use crate::kernel::{eval_unchecked, grad_accumulate, hess_accumulate};
use crate::qp::solve_nonneg;
use crate::types::{CohortDataset, Hyperparams, KernelSpec, ModelState, TrustRegionConfig};

/// Quadratic model data for one trust-region step.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadingSubproblem {
    pub g: DVector<f64>,
    pub h: DMatrix<f64>,
    pub c_current: DVector<f64>,
    pub delta: f64,
}

impl LoadingSubproblem {
    /// `gᵀp + ½ pᵀHp`.
    pub fn model(&self, p: &DVector<f64>) -> f64 {
        self.g.dot(p) + 0.5 * p.dot(&(&self.h * p))
    }

    pub fn is_feasible(&self, p: &DVector<f64>) -> bool {
        p.norm() <= self.delta * (1.0 + 1e-12) && p.iter().zip(self.c_current.iter()).all(|(pi, ci)| ci + pi >= 0.0)
    }
}

/// `c − max(c − g, 0)`: the gradient with components that would push an
/// entry below zero truncated at the distance to the bound.
pub fn projected_gradient(c: &DVector<f64>, g: &DVector<f64>) -> DVector<f64> {
    c.zip_map(g, |ci, gi| ci - (ci - gi).max(0.0))
}

/// Augmented objective for one patient with all other variables frozen.
pub struct LoadingObjective<'a> {
    xtx_diag: DVector<f64>,
    linear: DVector<f64>,
    constant: f64,
    y: f64,
    lambda: f64,
    gamma2: f64,
    anchors: &'a DMatrix<f64>,
    alpha: &'a DVector<f64>,
    spec: KernelSpec,
}

impl<'a> LoadingObjective<'a> {
    pub fn new(
        patient: usize,
        state: &'a ModelState,
        cohort: &CohortDataset,
        hp: &Hyperparams,
        spec: &KernelSpec,
    ) -> Result<Self> {
        state.check_dims(cohort)?;
        if patient >= state.n() {
            return Err(CmoError::Dimension(format!("patient {patient} out of {}", state.n())));
        }
        let x = &state.basis_x;
        let v = &state.v_mats[patient];
        let l = &state.duals[patient];
        let r = state.r();
        let xtx_diag = DVector::from_fn(r, |k, _| x.column(k).norm_squared());
        let linear = DVector::from_fn(r, |k, _| l.column(k).dot(&x.column(k)) + v.column(k).dot(&x.column(k)));
        let constant = l.dot(v) + 0.5 * v.norm_squared();
        Ok(Self {
            xtx_diag,
            linear,
            constant,
            y: cohort.scores[patient],
            lambda: hp.lambda,
            gamma2: hp.gamma2,
            anchors: &state.anchors,
            alpha: &state.alpha,
            spec: *spec,
        })
    }

    fn coupled(&self) -> bool {
        self.lambda != 0.0
    }

    fn residual(&self, c: &[f64]) -> f64 {
        let mut pred = 0.0;
        for j in 0..self.anchors.ncols() {
            pred += self.alpha[j] * eval_unchecked(c, self.anchors.column(j).as_slice(), &self.spec);
        }
        self.y - pred
    }

    /// `Σ_j α_j ∇κ(c, ĉ_j)`.
    fn weighted_kernel_grad(&self, c: &[f64]) -> DVector<f64> {
        let mut s = vec![0.0; c.len()];
        for j in 0..self.anchors.ncols() {
            grad_accumulate(c, self.anchors.column(j).as_slice(), &self.spec, self.alpha[j], &mut s);
        }
        DVector::from_vec(s)
    }

    pub fn value(&self, c: &DVector<f64>) -> f64 {
        let quad: f64 = (0..c.len())
            .map(|k| 0.5 * c[k] * c[k] * self.xtx_diag[k] - c[k] * self.linear[k] + self.gamma2 * c[k] * c[k])
            .sum();
        let reg = if self.coupled() {
            let r = self.residual(c.as_slice());
            self.lambda * r * r
        } else {
            0.0
        };
        self.constant + quad + reg
    }

    pub fn gradient(&self, c: &DVector<f64>) -> DVector<f64> {
        let mut g = c.component_mul(&self.xtx_diag) - &self.linear + c * (2.0 * self.gamma2);
        if self.coupled() {
            let r = self.residual(c.as_slice());
            g -= self.weighted_kernel_grad(c.as_slice()) * (2.0 * self.lambda * r);
        }
        g
    }

    pub fn hessian(&self, c: &DVector<f64>) -> DMatrix<f64> {
        let rank = c.len();
        let mut h = DMatrix::from_diagonal(&self.xtx_diag.add_scalar(2.0 * self.gamma2));
        if self.coupled() {
            let cs = c.as_slice();
            let r = self.residual(cs);
            let s = self.weighted_kernel_grad(cs);
            let mut curv = DMatrix::zeros(rank, rank);
            for j in 0..self.anchors.ncols() {
                hess_accumulate(cs, self.anchors.column(j).as_slice(), &self.spec, self.alpha[j], &mut curv);
            }
            for i in 0..rank {
                for k in 0..=i {
                    let v = 2.0 * self.lambda * (s[i] * s[k] - r * curv[(i, k)]);
                    h[(i, k)] += v;
                    if i != k {
                        h[(k, i)] += v;
                    }
                }
            }
        }
        h
    }
}

fn check_loading(c: &DVector<f64>, r: usize) -> Result<()> {
    if c.len() != r {
        return Err(CmoError::Dimension(format!("loading of length {} against rank {r}", c.len())));
    }
    if c.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(CmoError::InvalidParameter("loading must be finite and nonnegative".into()));
    }
    Ok(())
}

/// Gradient of the loading objective of `patient` at `c`.
pub fn grad_c(
    c: &DVector<f64>,
    patient: usize,
    state: &ModelState,
    cohort: &CohortDataset,
    hp: &Hyperparams,
    spec: &KernelSpec,
) -> Result<DVector<f64>> {
    check_loading(c, state.r())?;
    Ok(LoadingObjective::new(patient, state, cohort, hp, spec)?.gradient(c))
}

/// Hessian of the loading objective of `patient` at `c`.
pub fn hess_c(
    c: &DVector<f64>,
    patient: usize,
    state: &ModelState,
    cohort: &CohortDataset,
    hp: &Hyperparams,
    spec: &KernelSpec,
) -> Result<DMatrix<f64>> {
    check_loading(c, state.r())?;
    Ok(LoadingObjective::new(patient, state, cohort, hp, spec)?.hessian(c))
}

/// Value of the loading objective of `patient` at `c`.
pub fn loading_objective(
    c: &DVector<f64>,
    patient: usize,
    state: &ModelState,
    cohort: &CohortDataset,
    hp: &Hyperparams,
    spec: &KernelSpec,
) -> Result<f64> {
    check_loading(c, state.r())?;
    Ok(LoadingObjective::new(patient, state, cohort, hp, spec)?.value(c))
}

/// Minimizer of `m(p) + (μ/2)‖p‖²` over `p ≥ −c`, or `None` when `H + μI`
/// is not positive definite.
fn shifted_box_step(sp: &LoadingSubproblem, mu: f64) -> Option<DVector<f64>> {
    let r = sp.g.len();
    let a = &sp.h + DMatrix::identity(r, r) * mu;
    let lower = -&sp.c_current;
    // p = lower + q, q ≥ 0
    let b = &sp.g + &a * &lower;
    let q = solve_nonneg(&a, &b).ok()?;
    Some(lower + q)
}

/// Euclidean projection onto `{‖p‖ ≤ δ} ∩ {p ≥ −c}`. Components follow
/// `max(−c_i, s·z_i)` with the scale `s ∈ (0, 1]` found by bisection.
fn project_feasible(z: &DVector<f64>, c: &DVector<f64>, delta: f64) -> DVector<f64> {
    let at = |s: f64| z.zip_map(c, |zi, ci| (s * zi).max(-ci));
    let full = at(1.0);
    if full.norm() <= delta {
        return full;
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if at(mid).norm() <= delta {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-16 {
            break;
        }
    }
    at(lo)
}

fn projected_gradient_descent(sp: &LoadingSubproblem, start: DVector<f64>, lipschitz: f64) -> DVector<f64> {
    let step = 1.0 / lipschitz.max(1e-12);
    let mut p = project_feasible(&start, &sp.c_current, sp.delta);
    for _ in 0..5000 {
        let grad = &sp.g + &sp.h * &p;
        let next = project_feasible(&(&p - grad * step), &sp.c_current, sp.delta);
        let moved = (&next - &p).norm();
        p = next;
        if moved <= 1e-15 * (1.0 + sp.delta) {
            break;
        }
    }
    p
}

/// Step `p` for one trust-region iteration.
///
/// When `H + μI` is positive definite for some `μ ≥ 0` giving `‖p(μ)‖ = δ`
/// (or `μ = 0` with `‖p(0)‖ ≤ δ`), the returned step is the global
/// minimizer of the model over the feasible set. Otherwise (the hard case)
/// the best of several projected-gradient runs and the projected Cauchy
/// step is returned. Either way the step is feasible and achieves at least
/// half the Cauchy decrease.
pub fn solve_subproblem(sp: &LoadingSubproblem) -> DVector<f64> {
    let r = sp.g.len();
    let zero = DVector::zeros(r);
    if !(sp.delta > 0.0) || r == 0 {
        return zero;
    }
    let eig = SymmetricEigen::new(sp.h.clone());
    let min_eig = eig.eigenvalues.min();
    let spectral = eig.eigenvalues.amax();
    let scale = 1.0 + spectral;
    let mu_floor = (-min_eig).max(0.0);
    let clip = |p: DVector<f64>| {
        let n = p.norm();
        if n > sp.delta {
            p * (sp.delta / n)
        } else {
            p
        }
    };

    let mut best = zero.clone();
    let mut best_val = 0.0;
    let consider = |p: DVector<f64>, best: &mut DVector<f64>, best_val: &mut f64| {
        if sp.is_feasible(&p) {
            let v = sp.model(&p);
            if v < *best_val {
                *best_val = v;
                *best = p;
            }
        }
    };

    if min_eig > 1e-12 * scale {
        if let Some(p0) = shifted_box_step(sp, 0.0) {
            if p0.norm() <= sp.delta {
                return p0;
            }
        }
    }

    let mut lo = mu_floor + 1e-10 * scale;
    let near = shifted_box_step(sp, lo);
    let boundary_reachable = near.as_ref().is_some_and(|p| p.norm() > sp.delta);
    if boundary_reachable {
        let mut hi = lo + scale.max(sp.g.norm() / sp.delta);
        let mut p_hi = shifted_box_step(sp, hi);
        while p_hi.as_ref().is_some_and(|p| p.norm() > sp.delta) {
            hi *= 2.0;
            p_hi = shifted_box_step(sp, hi);
        }
        if let Some(mut p_hi) = p_hi {
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                match shifted_box_step(sp, mid) {
                    Some(p) if p.norm() > sp.delta => lo = mid,
                    Some(p) => {
                        hi = mid;
                        p_hi = p;
                    }
                    None => lo = mid,
                }
                if (sp.delta - p_hi.norm()) <= 1e-13 * sp.delta || hi - lo <= 1e-15 * hi {
                    break;
                }
            }
            return clip(p_hi);
        }
    }

    // Hard case: the ball does not bind even at the smallest admissible shift.
    if let Some(p) = near {
        consider(clip(p), &mut best, &mut best_val);
    }
    let gp = projected_gradient(&sp.c_current, &sp.g);
    let gp_norm = gp.norm();
    if gp_norm > 0.0 {
        let tau = (sp.delta / gp_norm).min(1.0 / (1.0 + spectral));
        consider(&gp * -tau, &mut best, &mut best_val);
    }
    let mut starts = vec![zero.clone(), &sp.g * -(sp.delta / sp.g.norm().max(f64::MIN_POSITIVE))];
    for k in 0..r {
        if eig.eigenvalues[k] < 0.0 {
            let v = eig.eigenvectors.column(k).into_owned() * sp.delta;
            starts.push(v.clone());
            starts.push(-v);
        }
    }
    for s in starts {
        let p = projected_gradient_descent(sp, s, spectral);
        consider(p, &mut best, &mut best_val);
    }
    best
}

/// Outcome of one per-patient trust-region solve.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadingUpdate {
    pub loading: DVector<f64>,
    /// Objective at the start and after each accepted step.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
}

/// Runs the trust-region loop for one loading vector.
pub fn update_loading_traced(
    patient: usize,
    state: &ModelState,
    cohort: &CohortDataset,
    hp: &Hyperparams,
    spec: &KernelSpec,
) -> Result<LoadingUpdate> {
    let objective = LoadingObjective::new(patient, state, cohort, hp, spec)?;
    let TrustRegionConfig { delta0, delta_max, eta_accept, shrink, expand, max_iters, grad_tol } = hp.tr;
    let mut c = state.loading(patient);
    check_loading(&c, state.r())?;
    let mut f = objective.value(&c);
    let mut trace = vec![f];
    let mut delta = delta0;
    let mut iterations = 0;
    for _ in 0..max_iters {
        iterations += 1;
        let g = objective.gradient(&c);
        if projected_gradient(&c, &g).norm() <= grad_tol {
            break;
        }
        let h = objective.hessian(&c);
        let sp = LoadingSubproblem { g, h, c_current: c.clone(), delta };
        let p = solve_subproblem(&sp);
        let predicted = -sp.model(&p);
        if !(predicted > 1e-15 * (1.0 + f.abs())) {
            break;
        }
        let candidate = (&c + &p).map(|v| v.max(0.0));
        let f_new = objective.value(&candidate);
        let ratio = (f - f_new) / predicted;
        if ratio >= eta_accept && f_new < f {
            c = candidate;
            f = f_new;
            trace.push(f);
        }
        let step_norm = p.norm();
        if ratio < 0.25 {
            delta = shrink * step_norm.min(delta);
        } else if ratio > 0.75 && step_norm >= 0.99 * delta {
            delta = (expand * delta).min(delta_max);
        }
        if delta < 1e-14 {
            break;
        }
    }
    Ok(LoadingUpdate { loading: c, objective_trace: trace, iterations })
}

/// New loading vector for `patient`.
pub fn update_loading(
    patient: usize,
    state: &ModelState,
    cohort: &CohortDataset,
    hp: &Hyperparams,
    spec: &KernelSpec,
) -> Result<DVector<f64>> {
    Ok(update_loading_traced(patient, state, cohort, hp, spec)?.loading)
}
