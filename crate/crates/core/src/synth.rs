//! Synthetic cohorts with known basis, loadings and score model.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{CmoError, Result};
use crate::kernel::kernel_row;
use crate::regression::{predict, solve_dual};
use crate::types::{scale_columns, CohortDataset, CorrelationMatrix, KernelSpec};

/// How clean scores are formed from the loadings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreModel {
    /// `y = Σ_j α_j κ(c, a_j)` with standard normal `α`.
    #[default]
    Signed,
    /// `y = Σ_j |α_j| (κ(c, a_j) − κ(0, a_j))`: nonnegative weights and a
    /// score of zero at zero loading.
    Severity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub p: usize,
    pub r: usize,
    pub n: usize,
    /// Fraction of basis entries set to zero.
    pub sparsity_x: f64,
    /// Loadings are uniform on `[loading_floor, loading_scale)`.
    pub loading_scale: f64,
    pub loading_floor: f64,
    /// Weight σ of the PSD noise `σ·WWᵀ/P`.
    pub noise_sigma: f64,
    pub spec: KernelSpec,
    pub score_noise_sigma: f64,
    pub score_model: ScoreModel,
    /// Number of anchors in the score model.
    pub n_anchors: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            p: 30,
            r: 4,
            n: 40,
            sparsity_x: 0.5,
            loading_scale: 1.0,
            loading_floor: 0.25,
            noise_sigma: 0.01,
            spec: KernelSpec::ados(),
            score_noise_sigma: 0.0,
            score_model: ScoreModel::Signed,
            n_anchors: 8,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.r == 0 || self.r > self.p || self.n < 2 || self.n_anchors == 0 {
            return Err(CmoError::InvalidParameter(format!(
                "invalid synthetic dimensions p={}, r={}, n={}, anchors={}",
                self.p, self.r, self.n, self.n_anchors
            )));
        }
        if !(0.0..1.0).contains(&self.sparsity_x) {
            return Err(CmoError::InvalidParameter(format!("sparsity_x must lie in [0, 1), got {}", self.sparsity_x)));
        }
        if !(self.loading_floor >= 0.0 && self.loading_floor < self.loading_scale) {
            return Err(CmoError::InvalidParameter(format!(
                "loadings need 0 <= floor < scale, got [{}, {})",
                self.loading_floor, self.loading_scale
            )));
        }
        if !(self.loading_scale > 0.0) || !(self.noise_sigma >= 0.0) || !(self.score_noise_sigma >= 0.0) {
            return Err(CmoError::InvalidParameter("scales must be positive and noise levels nonnegative".into()));
        }
        self.spec.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// P×R unit-norm columns.
    pub true_x: DMatrix<f64>,
    /// R×N.
    pub true_loadings: DMatrix<f64>,
    pub true_alpha: DVector<f64>,
    /// R×A anchors of the score model.
    pub anchors: DMatrix<f64>,
    pub clean_scores: Vec<f64>,
    pub noisy_scores: Vec<f64>,
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Sparse basis with unit-norm columns; every column keeps at least one
/// nonzero entry.
pub fn sparse_basis(rng: &mut ChaCha8Rng, p: usize, r: usize, sparsity: f64) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(p, r);
    for k in 0..r {
        loop {
            let mut col = DVector::from_fn(p, |_, _| if rng.random::<f64>() < sparsity { 0.0 } else { gaussian(rng) });
            let norm = col.norm();
            if norm > 0.0 {
                col /= norm;
                x.set_column(k, &col);
                break;
            }
        }
    }
    x
}

/// `σ·WWᵀ/P` with `W` standard Gaussian.
pub fn psd_noise(rng: &mut ChaCha8Rng, p: usize, sigma: f64) -> DMatrix<f64> {
    if sigma == 0.0 {
        return DMatrix::zeros(p, p);
    }
    let w = DMatrix::from_fn(p, p, |_, _| gaussian(rng));
    &w * w.transpose() * (sigma / p as f64)
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Samples a cohort `Γ_n = X diag(c_n) Xᵀ + E_n` with scores
/// `y_n = Σ_j α_j κ(c_n, a_j) + ε_n` (see [`ScoreModel`]).
pub fn generate(cfg: &SynthConfig) -> Result<(CohortDataset, GroundTruth)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (p, r, n) = (cfg.p, cfg.r, cfg.n);
    let true_x = sparse_basis(&mut rng, p, r, cfg.sparsity_x);
    let true_loadings = DMatrix::from_fn(r, n, |_, _| rng.random_range(cfg.loading_floor..cfg.loading_scale));
    let anchors = DMatrix::from_fn(r, cfg.n_anchors, |_, _| rng.random_range(cfg.loading_floor..cfg.loading_scale));
    let mut true_alpha = DVector::from_fn(cfg.n_anchors, |_, _| gaussian(&mut rng));
    let mut offset = 0.0;
    if cfg.score_model == ScoreModel::Severity {
        true_alpha.apply(|a| *a = a.abs());
        offset = kernel_row(&vec![0.0; r], &anchors, &cfg.spec).dot(&true_alpha);
    }
    let mut matrices = Vec::with_capacity(n);
    let mut clean_scores = Vec::with_capacity(n);
    let mut noisy_scores = Vec::with_capacity(n);
    for i in 0..n {
        let c = true_loadings.column(i).into_owned();
        let gamma = symmetrize(scale_columns(&true_x, &c) * true_x.transpose() + psd_noise(&mut rng, p, cfg.noise_sigma));
        matrices.push(CorrelationMatrix::from_symmetric(gamma));
        let y = kernel_row(c.as_slice(), &anchors, &cfg.spec).dot(&true_alpha) - offset;
        clean_scores.push(y);
        noisy_scores.push(y + cfg.score_noise_sigma * gaussian(&mut rng));
    }
    let cohort = CohortDataset { matrices, scores: noisy_scores.clone(), score_name: "synthetic".into() };
    Ok((cohort, GroundTruth { true_x, true_loadings, true_alpha, anchors, clean_scores, noisy_scores }))
}

/// Cohort where the score depends only on a weak component: the first
/// `r - 1` loadings are uniform on `nuisance` and carry most of the energy,
/// the last is uniform on `[0, score_loading)` and drives
/// `y = amplitude · sin²(frequency · c_last / score_loading)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContrastConfig {
    pub p: usize,
    pub r: usize,
    pub n: usize,
    pub sparsity_x: f64,
    pub nuisance: (f64, f64),
    pub score_loading: f64,
    pub amplitude: f64,
    pub frequency: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for ContrastConfig {
    fn default() -> Self {
        Self {
            p: 20,
            r: 4,
            n: 40,
            sparsity_x: 0.5,
            nuisance: (1.0, 2.0),
            score_loading: 0.5,
            amplitude: 10.0,
            frequency: 3.0,
            noise_sigma: 0.01,
            seed: 0,
        }
    }
}

pub fn generate_contrast(cfg: &ContrastConfig) -> Result<(CohortDataset, DMatrix<f64>, DMatrix<f64>)> {
    let (lo, hi) = cfg.nuisance;
    if cfg.p == 0 || cfg.r < 2 || cfg.r > cfg.p || cfg.n < 2 || !(0.0..1.0).contains(&cfg.sparsity_x) {
        return Err(CmoError::InvalidParameter(format!("invalid contrast dimensions {cfg:?}")));
    }
    if !(lo >= 0.0 && lo < hi) || !(cfg.score_loading > 0.0) || !(cfg.noise_sigma >= 0.0) {
        return Err(CmoError::InvalidParameter(format!("invalid contrast ranges {cfg:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (p, r) = (cfg.p, cfg.r);
    let x = sparse_basis(&mut rng, p, r, cfg.sparsity_x);
    let mut loadings = DMatrix::zeros(r, cfg.n);
    let mut matrices = Vec::with_capacity(cfg.n);
    let mut scores = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let c = DVector::from_fn(r, |k, _| if k + 1 == r { rng.random_range(0.0..cfg.score_loading) } else { rng.random_range(lo..hi) });
        let gamma = symmetrize(scale_columns(&x, &c) * x.transpose() + psd_noise(&mut rng, p, cfg.noise_sigma));
        matrices.push(CorrelationMatrix::from_symmetric(gamma));
        scores.push(cfg.amplitude * (cfg.frequency * c[r - 1] / cfg.score_loading).sin().powi(2));
        loadings.set_column(i, &c);
    }
    Ok((CohortDataset { matrices, scores, score_name: "contrast".into() }, x, loadings))
}

/// Options of the kernel recovery experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryOptions {
    /// Held-out predictions come from this many folds.
    pub folds: usize,
    pub ridge: f64,
    /// Number of score quantile bins.
    pub bins: usize,
}

impl Default for RecoveryOptions {
    fn default() -> Self {
        Self { folds: 5, ridge: 1e-3, bins: 4 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantRecovery {
    pub spec: KernelSpec,
    /// `(true, predicted)` held-out pairs in sample order.
    pub pairs: Vec<(f64, f64)>,
    /// Mean absolute error per score quantile bin, lowest scores first.
    pub binned_error: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryCurves {
    /// Quantile bin of every sample.
    pub bin_of: Vec<usize>,
    pub variants: Vec<VariantRecovery>,
}

/// Bin index of each value when the sorted values are cut into `bins`
/// near-equal groups. Ties are broken by sample index.
pub fn quantile_bins(values: &[f64], bins: usize) -> Vec<usize> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut out = vec![0; n];
    for (rank, &i) in order.iter().enumerate() {
        out[i] = rank * bins / n;
    }
    out
}

/// Fits kernel ridge regression with each kernel variant on the true
/// loadings and clean scores of a synthetic cohort and reports held-out
/// errors binned by score quantile.
pub fn kernel_recovery_experiment(cfg: &SynthConfig, variants: &[KernelSpec]) -> Result<RecoveryCurves> {
    kernel_recovery_experiment_with(cfg, variants, &RecoveryOptions::default())
}

pub fn kernel_recovery_experiment_with(
    cfg: &SynthConfig,
    variants: &[KernelSpec],
    opts: &RecoveryOptions,
) -> Result<RecoveryCurves> {
    let (_, truth) = generate(cfg)?;
    recovery_from_samples(&truth.true_loadings, &truth.clean_scores, variants, opts, cfg.seed)
}

/// Held-out kernel ridge regression errors of each variant on given
/// loadings (R×N) and scores.
pub fn recovery_from_samples(
    loadings: &DMatrix<f64>,
    scores: &[f64],
    variants: &[KernelSpec],
    opts: &RecoveryOptions,
    seed: u64,
) -> Result<RecoveryCurves> {
    let n = scores.len();
    if loadings.ncols() != n {
        return Err(CmoError::Dimension(format!("{} loadings for {n} scores", loadings.ncols())));
    }
    if opts.folds < 2 || opts.folds > n || opts.bins == 0 || opts.bins > n {
        return Err(CmoError::InvalidParameter(format!("invalid recovery options {opts:?}")));
    }
    for v in variants {
        v.validate()?;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed));
    let fold_of: Vec<usize> = {
        let mut f = vec![0; n];
        for (pos, &i) in order.iter().enumerate() {
            f[i] = pos % opts.folds;
        }
        f
    };
    let bin_of = quantile_bins(scores, opts.bins);
    let mut out = Vec::with_capacity(variants.len());
    for spec in variants {
        let mut pred = vec![0.0; n];
        for fold in 0..opts.folds {
            let train: Vec<usize> = (0..n).filter(|&i| fold_of[i] != fold).collect();
            let anchors = loadings.select_columns(&train);
            let y = DVector::from_iterator(train.len(), train.iter().map(|&i| scores[i]));
            let dual = solve_dual(&anchors, &y, spec, opts.ridge)?;
            for i in (0..n).filter(|&i| fold_of[i] == fold) {
                pred[i] = predict(loadings.column(i).as_slice(), &dual)?;
            }
        }
        let mut sums = vec![0.0; opts.bins];
        let mut counts = vec![0usize; opts.bins];
        for i in 0..n {
            sums[bin_of[i]] += (scores[i] - pred[i]).abs();
            counts[bin_of[i]] += 1;
        }
        let binned_error = sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect();
        let pairs = scores.iter().copied().zip(pred).collect();
        out.push(VariantRecovery { spec: *spec, pairs, binned_error });
    }
    Ok(RecoveryCurves { bin_of, variants: out })
}
