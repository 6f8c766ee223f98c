//! Cross-validation harness, error metrics, grid sweep and the decoupled
//! baseline.

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CmoError, Result};
use crate::par::map_indices;
use crate::prediction::predict_unseen;
use crate::regression::predict;
use crate::solver::{fit, fit_decoupled, FittedModel};
use crate::types::{CohortDataset, Hyperparams, KernelSpec};

pub const DEFAULT_MI_BINS: usize = 8;

/// Median absolute error. Even lengths average the two central values.
pub fn mae(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    if y_true.len() != y_pred.len() {
        return Err(CmoError::Dimension(format!("{} targets against {} predictions", y_true.len(), y_pred.len())));
    }
    if y_true.is_empty() {
        return Err(CmoError::InvalidParameter("MAE of an empty sample".into()));
    }
    let mut err: Vec<f64> = y_true.iter().zip(y_pred).map(|(a, b)| (a - b).abs()).collect();
    if err.iter().any(|v| !v.is_finite()) {
        return Err(CmoError::NonFinite("prediction error".into()));
    }
    err.sort_by(f64::total_cmp);
    let n = err.len();
    Ok(if n % 2 == 1 { err[n / 2] } else { 0.5 * (err[n / 2 - 1] + err[n / 2]) })
}

fn bin_index(v: f64, lo: f64, width: f64, bins: usize) -> usize {
    (((v - lo) / width) as usize).min(bins - 1)
}

/// Histogram mutual information in bits with `bins` equal-width bins over
/// each variable's observed range. A constant input gives 0.
pub fn mutual_information(a: &[f64], b: &[f64], bins: usize) -> Result<f64> {
    if a.len() != b.len() {
        return Err(CmoError::Dimension(format!("samples of length {} and {}", a.len(), b.len())));
    }
    if a.len() < 2 || bins < 2 {
        return Err(CmoError::InvalidParameter(format!("need ≥ 2 samples and ≥ 2 bins, got {} and {bins}", a.len())));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(CmoError::NonFinite("mutual information sample".into()));
    }
    let range = |v: &[f64]| v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    let (alo, ahi) = range(a);
    let (blo, bhi) = range(b);
    if ahi == alo || bhi == blo {
        return Ok(0.0);
    }
    let (aw, bw) = ((ahi - alo) / bins as f64, (bhi - blo) / bins as f64);
    let mut joint = vec![0usize; bins * bins];
    let mut pa = vec![0usize; bins];
    let mut pb = vec![0usize; bins];
    for (&x, &y) in a.iter().zip(b) {
        let (i, j) = (bin_index(x, alo, aw, bins), bin_index(y, blo, bw, bins));
        joint[i * bins + j] += 1;
        pa[i] += 1;
        pb[j] += 1;
    }
    let n = a.len() as f64;
    let mut mi = 0.0;
    for i in 0..bins {
        for j in 0..bins {
            let c = joint[i * bins + j];
            if c > 0 {
                let pij = c as f64 / n;
                mi += pij * (pij / (pa[i] as f64 / n * (pb[j] as f64 / n))).log2();
            }
        }
    }
    Ok(mi.max(0.0))
}

/// Fold index of every sample: a seeded shuffle dealt round-robin, so fold
/// sizes differ by at most one.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 || n < folds {
        return Err(CmoError::InvalidParameter(format!("{folds} folds for {n} samples")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold_of = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % folds;
    }
    Ok(fold_of)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Coupled,
    Decoupled,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Coupled => "coupled",
            Method::Decoupled => "decoupled",
        }
    }
}

/// Settings echoed into every report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub method: Method,
    pub hyperparams: Hyperparams,
    pub spec: KernelSpec,
    pub folds: usize,
    pub seed: u64,
    pub mi_bins: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub index: usize,
    pub fold: usize,
    pub y_true: f64,
    pub y_pred: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub mae_train: f64,
    pub mae_test: f64,
    pub mi_train: f64,
    pub mi_test: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Aggregate {
    pub mae_train: f64,
    pub mae_test: f64,
    pub mi_train: f64,
    pub mi_test: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub fold_of: Vec<usize>,
    pub folds: Vec<FoldReport>,
    /// Held-out prediction of every sample, in sample order.
    pub test_predictions: Vec<Prediction>,
    /// In-sample predictions from every fold, fold by fold.
    pub train_predictions: Vec<Prediction>,
    /// Metrics over the pooled predictions.
    pub aggregate: Aggregate,
}

fn metrics(preds: &[Prediction], bins: usize) -> Result<(f64, f64)> {
    let t: Vec<f64> = preds.iter().map(|p| p.y_true).collect();
    let y: Vec<f64> = preds.iter().map(|p| p.y_pred).collect();
    let mi = if t.len() >= 2 { mutual_information(&t, &y, bins)? } else { 0.0 };
    Ok((mae(&t, &y)?, mi))
}

struct FoldOutcome {
    train: Vec<Prediction>,
    test: Vec<Prediction>,
    model: FittedModel,
}

fn run_fold(cohort: &CohortDataset, fold_of: &[usize], fold: usize, cfg: &EvalConfig) -> Result<FoldOutcome> {
    let train_idx: Vec<usize> = (0..cohort.n()).filter(|&i| fold_of[i] != fold).collect();
    let test_idx: Vec<usize> = (0..cohort.n()).filter(|&i| fold_of[i] == fold).collect();
    let train_set = cohort.subset(&train_idx);
    let (model, _) = match cfg.method {
        Method::Coupled => fit(&train_set, &cfg.hyperparams, &cfg.spec, cfg.seed)?,
        Method::Decoupled => fit_decoupled(&train_set, &cfg.hyperparams, &cfg.spec, cfg.seed)?,
    };
    let mut train = Vec::with_capacity(train_idx.len());
    for (k, &i) in train_idx.iter().enumerate() {
        let y_pred = predict(model.training_loadings.column(k).as_slice(), &model.dual)?;
        train.push(Prediction { index: i, fold, y_true: cohort.scores[i], y_pred });
    }
    let mut test = Vec::with_capacity(test_idx.len());
    for &i in &test_idx {
        let (_, y_pred) = predict_unseen(&cohort.matrices[i], &model)?;
        test.push(Prediction { index: i, fold, y_true: cohort.scores[i], y_pred });
    }
    Ok(FoldOutcome { train, test, model })
}

/// K-fold evaluation of either method with shared fold assignment.
pub fn evaluate(cohort: &CohortDataset, cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.hyperparams.validate(cohort.p())?;
    cfg.spec.validate()?;
    if cfg.mi_bins < 2 {
        return Err(CmoError::InvalidParameter(format!("mi_bins must be ≥ 2, got {}", cfg.mi_bins)));
    }
    let fold_of = fold_assignment(cohort.n(), cfg.folds, cfg.seed)?;
    let outcomes = map_indices(cfg.folds, |fold| {
        run_fold(cohort, &fold_of, fold, cfg).map_err(|e| CmoError::Fold { fold, source: Box::new(e) })
    });
    let mut folds = Vec::with_capacity(cfg.folds);
    let mut test_predictions = Vec::with_capacity(cohort.n());
    let mut train_predictions = Vec::new();
    for (fold, outcome) in outcomes.into_iter().enumerate() {
        let o = outcome?;
        let (mae_train, mi_train) = metrics(&o.train, cfg.mi_bins)?;
        let (mae_test, mi_test) = metrics(&o.test, cfg.mi_bins)?;
        folds.push(FoldReport {
            fold,
            mae_train,
            mae_test,
            mi_train,
            mi_test,
            iterations: o.model.summary.iterations,
            converged: o.model.summary.converged,
        });
        test_predictions.extend(o.test);
        train_predictions.extend(o.train);
    }
    test_predictions.sort_by_key(|p| p.index);
    let (mae_train, mi_train) = metrics(&train_predictions, cfg.mi_bins)?;
    let (mae_test, mi_test) = metrics(&test_predictions, cfg.mi_bins)?;
    Ok(EvalReport {
        config: *cfg,
        fold_of,
        folds,
        test_predictions,
        train_predictions,
        aggregate: Aggregate { mae_train, mae_test, mi_train, mi_test },
    })
}

fn eval_config(method: Method, hp: &Hyperparams, spec: &KernelSpec, folds: usize, seed: u64) -> EvalConfig {
    EvalConfig { method, hyperparams: *hp, spec: *spec, folds, seed, mi_bins: DEFAULT_MI_BINS }
}

/// Coupled model: fit on each training split, predict the held-out split
/// through the unseen-patient QP.
pub fn cross_validate(cohort: &CohortDataset, hp: &Hyperparams, spec: &KernelSpec, folds: usize, seed: u64) -> Result<EvalReport> {
    evaluate(cohort, &eval_config(Method::Coupled, hp, spec, folds, seed))
}

/// Factorization without the regression term, followed by kernel ridge
/// regression on the frozen loadings. Shares folds with `cross_validate`
/// under the same seed.
pub fn decoupled_baseline(cohort: &CohortDataset, hp: &Hyperparams, spec: &KernelSpec, folds: usize, seed: u64) -> Result<EvalReport> {
    evaluate(cohort, &eval_config(Method::Decoupled, hp, spec, folds, seed))
}

/// Axes of a hyperparameter grid. The base hyperparameters supply every
/// field not swept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepGrid {
    pub lambda: Vec<f64>,
    pub gamma1: Vec<f64>,
    pub gamma2: Vec<f64>,
    pub gamma3: Vec<f64>,
    pub kernels: Vec<KernelSpec>,
}

impl Default for SweepGrid {
    /// The single default operating point.
    fn default() -> Self {
        let hp = Hyperparams::default();
        Self {
            lambda: vec![hp.lambda],
            gamma1: vec![hp.gamma1],
            gamma2: vec![hp.gamma2],
            gamma3: vec![hp.gamma3],
            kernels: vec![KernelSpec::default()],
        }
    }
}

impl SweepGrid {
    /// Every combination, in nested order λ, γ1, γ2, γ3, kernel.
    pub fn points(&self, base: &Hyperparams) -> Vec<(Hyperparams, KernelSpec)> {
        let mut out = Vec::new();
        for &lambda in &self.lambda {
            for &gamma1 in &self.gamma1 {
                for &gamma2 in &self.gamma2 {
                    for &gamma3 in &self.gamma3 {
                        for spec in &self.kernels {
                            out.push((Hyperparams { lambda, gamma1, gamma2, gamma3, ..*base }, *spec));
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepEntry {
    pub hyperparams: Hyperparams,
    pub spec: KernelSpec,
    pub outcome: std::result::Result<EvalReport, CmoError>,
}

impl SweepEntry {
    pub fn mae_test(&self) -> Option<f64> {
        self.outcome.as_ref().ok().map(|r| r.aggregate.mae_test)
    }

    fn key(&self) -> [f64; 8] {
        let (h, s) = (&self.hyperparams, &self.spec);
        [h.lambda, h.gamma1, h.gamma2, h.gamma3, s.sigma_sq, s.rho, s.ell, s.terms.code() as f64]
    }
}

fn lexicographic(a: &[f64; 8], b: &[f64; 8]) -> Ordering {
    a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| *o != Ordering::Equal).unwrap_or(Ordering::Equal)
}

/// Cross-validates every grid point and ranks by pooled test MAE; ties and
/// failures are ordered by configuration. Failed points are kept with their
/// error and ranked last.
pub fn grid_sweep(
    cohort: &CohortDataset,
    grid: &SweepGrid,
    base: &Hyperparams,
    folds: usize,
    seed: u64,
) -> Result<Vec<SweepEntry>> {
    let points = grid.points(base);
    if points.is_empty() {
        return Err(CmoError::InvalidParameter("empty sweep grid".into()));
    }
    let mut entries: Vec<SweepEntry> = map_indices(points.len(), |i| {
        let (hp, spec) = points[i];
        SweepEntry { hyperparams: hp, spec, outcome: cross_validate(cohort, &hp, &spec, folds, seed) }
    });
    entries.sort_by(|a, b| match (a.mae_test(), b.mae_test()) {
        (Some(x), Some(y)) => x.total_cmp(&y).then_with(|| lexicographic(&a.key(), &b.key())),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => lexicographic(&a.key(), &b.key()),
    });
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthConfig};
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn mae_examples() {
        assert_eq!(mae(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(mae(&[0.0, 0.0, 0.0], &[1.0, -3.0, 5.0]).unwrap(), 3.0);
        assert_eq!(mae(&[0.0; 4], &[1.0, 2.0, -3.0, 10.0]).unwrap(), 2.5);
        assert!(mae(&[], &[]).is_err());
        assert!(mae(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn mi_examples() {
        let y: Vec<f64> = (1..=10).map(f64::from).collect();
        assert!((mutual_information(&y, &y, 10).unwrap() - 10f64.log2()).abs() < 1e-12);
        assert_eq!(mutual_information(&y, &[2.0; 10], 8).unwrap(), 0.0);
        assert!(mutual_information(&y, &y, 1).is_err());
    }

    #[test]
    fn mi_of_independent_samples_is_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let a: Vec<f64> = (0..1000).map(|_| rng.random::<f64>()).collect();
        let mut b = a.clone();
        b.shuffle(&mut rng);
        assert!(mutual_information(&a, &b, 8).unwrap() < 0.15);
    }

    #[test]
    fn mi_of_self_is_binned_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let a: Vec<f64> = (0..500).map(|_| rng.random_range(-3.0..3.0)).collect();
        let lo = a.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut counts = [0usize; 8];
        for &v in &a {
            counts[(((v - lo) / ((hi - lo) / 8.0)) as usize).min(7)] += 1;
        }
        let h: f64 = counts.iter().filter(|&&c| c > 0).map(|&c| {
            let p = c as f64 / 500.0;
            -p * p.log2()
        }).sum();
        assert!((mutual_information(&a, &a, 8).unwrap() - h).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn mi_symmetric_and_nonnegative(
            pairs in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 2..60),
            bins in 2usize..12,
        ) {
            let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let ab = mutual_information(&a, &b, bins).unwrap();
            let ba = mutual_information(&b, &a, bins).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - ba).abs() <= 1e-12 * (1.0 + ab));
        }
    }

    #[test]
    fn folds_partition_samples() {
        for (n, k) in [(10, 10), (23, 5), (40, 10)] {
            let f = fold_assignment(n, k, 3).unwrap();
            let mut sizes = vec![0; k];
            for &i in &f {
                sizes[i] += 1;
            }
            assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            assert_eq!(sizes.iter().sum::<usize>(), n);
        }
        assert_eq!(fold_assignment(10, 3, 4).unwrap(), fold_assignment(10, 3, 4).unwrap());
        assert!(fold_assignment(3, 4, 0).is_err());
    }

    fn small_problem(seed: u64) -> (CohortDataset, Hyperparams) {
        let cfg = SynthConfig { p: 8, r: 2, n: 10, noise_sigma: 0.0, seed, ..SynthConfig::default() };
        let hp = Hyperparams { rank_r: 2, gamma1: 0.01, gamma2: 0.01, max_outer_iters: 20, ..Hyperparams::default() };
        (generate(&cfg).unwrap().0, hp)
    }

    #[test]
    fn leave_one_out_covers_every_sample() {
        let (cohort, hp) = small_problem(1);
        let report = cross_validate(&cohort, &hp, &KernelSpec::ados(), cohort.n(), 0).unwrap();
        assert_eq!(report.test_predictions.len(), cohort.n());
        for (i, p) in report.test_predictions.iter().enumerate() {
            assert_eq!(p.index, i);
            assert_eq!(p.y_true, cohort.scores[i]);
        }
        let mut folds: Vec<usize> = report.fold_of.clone();
        folds.sort();
        assert_eq!(folds, (0..cohort.n()).collect::<Vec<_>>());
    }

    #[test]
    fn reports_are_deterministic_and_paired() {
        let (cohort, hp) = small_problem(2);
        let a = cross_validate(&cohort, &hp, &KernelSpec::ados(), 5, 7).unwrap();
        let b = cross_validate(&cohort, &hp, &KernelSpec::ados(), 5, 7).unwrap();
        assert_eq!(a, b);
        let d = decoupled_baseline(&cohort, &hp, &KernelSpec::ados(), 5, 7).unwrap();
        assert_eq!(a.fold_of, d.fold_of);
    }

    #[test]
    fn decoupled_loadings_match_factorization() {
        let (cohort, hp) = small_problem(3);
        let (model, _) = fit_decoupled(&cohort, &hp, &KernelSpec::ados(), 0).unwrap();
        let (state, _) = crate::solver::fit_factorization(&cohort, &hp, &KernelSpec::ados(), 0).unwrap();
        assert_eq!(model.training_loadings, state.loadings);
        let k = crate::kernel::gram(&model.dual.anchors, &model.dual.spec).unwrap().data;
        let n = cohort.n();
        let resid = (k + nalgebra::DMatrix::identity(n, n) * hp.ridge()) * &model.dual.alpha - cohort.scores_vector();
        assert!(resid.amax() < 1e-8);
    }

    #[test]
    fn single_point_grid_matches_cross_validate() {
        let (cohort, hp) = small_problem(4);
        let grid = SweepGrid {
            lambda: vec![hp.lambda],
            gamma1: vec![hp.gamma1],
            gamma2: vec![hp.gamma2],
            gamma3: vec![hp.gamma3],
            kernels: vec![KernelSpec::ados()],
        };
        let entries = grid_sweep(&cohort, &grid, &hp, 5, 1).unwrap();
        assert_eq!(entries.len(), 1);
        let direct = cross_validate(&cohort, &hp, &KernelSpec::ados(), 5, 1).unwrap();
        assert_eq!(entries[0].outcome.as_ref().unwrap(), &direct);
    }

    #[test]
    fn operating_point_is_a_valid_grid_point() {
        let (cohort, _) = small_problem(5);
        let base = Hyperparams { rank_r: 2, max_outer_iters: 5, ..Hyperparams::default() };
        let grid = SweepGrid {
            lambda: vec![1.0],
            gamma1: vec![10.0, 0.01],
            gamma2: vec![0.7],
            gamma3: vec![1.0],
            kernels: vec![KernelSpec::ados()],
        };
        let entries = grid_sweep(&cohort, &grid, &base, 5, 0).unwrap();
        assert_eq!(entries.len(), 2);
        let op = entries.iter().find(|e| e.hyperparams.gamma1 == 10.0).unwrap();
        assert!(op.outcome.is_ok());
        assert!(entries[0].mae_test().unwrap() <= entries[1].mae_test().unwrap());
    }

    #[test]
    fn failed_points_rank_last() {
        let (cohort, hp) = small_problem(6);
        let grid = SweepGrid {
            lambda: vec![1.0],
            gamma1: vec![0.01],
            gamma2: vec![0.01],
            gamma3: vec![-1.0, 1.0],
            kernels: vec![KernelSpec::ados()],
        };
        let entries = grid_sweep(&cohort, &grid, &hp, 5, 0).unwrap();
        assert!(entries[0].outcome.is_ok());
        assert!(entries[1].outcome.is_err());
    }
}
