//! On-disk formats: cohort directories, model files, run configuration and
//! delimited reports.
//!
//! A cohort directory holds a TOML `manifest` and one matrix file per
//! patient. Matrix files are either comma-separated text (one row per line)
//! or binary: the 8-byte magic `CMOMAT01`, `P` as little-endian `u32`, then
//! `P·P` little-endian `f64` values row-major.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cohort::{residualize_cohort, residualize_first_eigenvector, validate_cohort};
use crate::error::{CmoError, Result};
use crate::evaluation::{EvalReport, Method, SweepEntry, SweepGrid, DEFAULT_MI_BINS};
use crate::factorization::ObjectiveBreakdown;
use crate::regression::RegressionDual;
use crate::solver::{FitSummary, FitTrace, FittedModel};
use crate::synth::{GroundTruth, ScoreModel, SynthConfig};
use crate::types::{CohortDataset, CorrelationMatrix, Hyperparams, KernelSpec, KernelTerms, TrustRegionConfig};

pub const MATRIX_MAGIC: &[u8; 8] = b"CMOMAT01";
pub const MODEL_MAGIC: &[u8; 8] = b"CMOMODEL";
pub const MODEL_VERSION: u32 = 1;
pub const MANIFEST_NAME: &str = "manifest";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixFormat {
    #[default]
    Text,
    Binary,
}

impl MatrixFormat {
    fn extension(self) -> &'static str {
        match self {
            MatrixFormat::Text => "csv",
            MatrixFormat::Binary => "bin",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub p: usize,
    pub n: usize,
    pub score_name: String,
    pub format: MatrixFormat,
    pub files: Vec<String>,
    /// May be empty for matrices without known scores.
    #[serde(default)]
    pub scores: Vec<f64>,
}

fn parse_err(context: impl Into<String>, message: impl Into<String>) -> CmoError {
    CmoError::Parse { context: context.into(), message: message.into() }
}

fn io_err(path: &Path, e: std::io::Error) -> CmoError {
    CmoError::Io(format!("{}: {e}", path.display()))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| io_err(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

pub fn matrix_to_text(m: &DMatrix<f64>) -> String {
    let mut s = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{}", m[(i, j)])).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

/// Parses comma-separated rows. `context` names the record in errors.
pub fn matrix_from_text(text: &str, context: &str) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| parse_err(format!("{context}, line {}", line_no + 1), e.to_string()))?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(parse_err(
                    format!("{context}, line {}", line_no + 1),
                    format!("expected {} values, found {}", first.len(), row.len()),
                ));
            }
        }
        rows.push(row);
    }
    let p = rows.len();
    if p == 0 {
        return Err(parse_err(context, "empty matrix"));
    }
    if rows[0].len() != p {
        return Err(parse_err(context, format!("{p} rows of {} values; matrix must be square", rows[0].len())));
    }
    Ok(DMatrix::from_fn(p, p, |i, j| rows[i][j]))
}

pub fn matrix_to_binary(m: &DMatrix<f64>) -> Vec<u8> {
    let p = m.nrows();
    let mut out = Vec::with_capacity(12 + 8 * p * p);
    out.extend_from_slice(MATRIX_MAGIC);
    out.extend_from_slice(&(p as u32).to_le_bytes());
    for i in 0..p {
        for j in 0..p {
            out.extend_from_slice(&m[(i, j)].to_le_bytes());
        }
    }
    out
}

pub fn matrix_from_binary(bytes: &[u8], context: &str) -> Result<DMatrix<f64>> {
    if bytes.len() < 12 || &bytes[..8] != MATRIX_MAGIC {
        return Err(parse_err(context, "missing CMOMAT01 header"));
    }
    let p = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let expected = 12 + 8 * p * p;
    if bytes.len() != expected {
        return Err(parse_err(context, format!("expected {expected} bytes for P = {p}, found {}", bytes.len())));
    }
    let vals: Vec<f64> =
        bytes[12..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Ok(DMatrix::from_row_slice(p, p, &vals))
}

pub fn read_matrix(path: &Path, format: MatrixFormat, context: &str) -> Result<DMatrix<f64>> {
    match format {
        MatrixFormat::Text => {
            let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
            matrix_from_text(&text, context)
        }
        MatrixFormat::Binary => matrix_from_binary(&read_bytes(path)?, context),
    }
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>, format: MatrixFormat) -> Result<()> {
    match format {
        MatrixFormat::Text => write_bytes(path, matrix_to_text(m).as_bytes()),
        MatrixFormat::Binary => write_bytes(path, &matrix_to_binary(m)),
    }
}

/// Writes `cohort` into `dir` (created if missing), with `echo` as a comment
/// block at the top of the manifest.
pub fn save_cohort(dir: &Path, cohort: &CohortDataset, format: MatrixFormat, echo: &str) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let width = cohort.n().to_string().len();
    let mut files = Vec::with_capacity(cohort.n());
    for (i, m) in cohort.matrices.iter().enumerate() {
        let name = format!("patient_{i:0width$}.{}", format.extension());
        write_matrix(&dir.join(&name), m.data(), format)?;
        files.push(name);
    }
    let manifest = Manifest {
        p: cohort.p(),
        n: cohort.n(),
        score_name: cohort.score_name.clone(),
        format,
        files,
        scores: cohort.scores.clone(),
    };
    let text = toml::to_string(&manifest).map_err(|e| CmoError::Io(e.to_string()))?;
    write_bytes(&dir.join(MANIFEST_NAME), (comment_block(echo) + &text).as_bytes())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_NAME);
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let manifest: Manifest = toml::from_str(&text).map_err(|e| parse_err(path.display().to_string(), e.to_string()))?;
    if manifest.files.len() != manifest.n {
        return Err(parse_err(
            path.display().to_string(),
            format!("n = {} but {} files listed", manifest.n, manifest.files.len()),
        ));
    }
    if !manifest.scores.is_empty() && manifest.scores.len() != manifest.n {
        return Err(parse_err(
            path.display().to_string(),
            format!("n = {} but {} scores listed", manifest.n, manifest.scores.len()),
        ));
    }
    Ok(manifest)
}

/// Matrices of a cohort directory in manifest order, each checked against the
/// declared P.
pub fn read_matrices(dir: &Path, manifest: &Manifest) -> Result<Vec<DMatrix<f64>>> {
    manifest
        .files
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let context = format!("record {i} ({f})");
            let m = read_matrix(&dir.join(f), manifest.format, &context)?;
            if m.nrows() != manifest.p {
                return Err(CmoError::Dimension(format!("{context} is {0}×{0}, manifest says P = {1}", m.nrows(), manifest.p)));
            }
            Ok(m)
        })
        .collect()
}

/// Loads and validates a cohort, optionally removing each matrix's top
/// eigenpair.
pub fn load_cohort(dir: &Path, residualize: bool) -> Result<CohortDataset> {
    let manifest = read_manifest(dir)?;
    if manifest.scores.len() != manifest.n {
        return Err(parse_err(dir.join(MANIFEST_NAME).display().to_string(), "scores missing"));
    }
    let raw = read_matrices(dir, &manifest)?;
    let cohort = validate_cohort(raw, manifest.scores, &manifest.score_name)?;
    if residualize {
        residualize_cohort(&cohort)
    } else {
        Ok(cohort)
    }
}

/// Matrices for prediction, with their file names and any recorded scores.
pub fn load_unlabeled(dir: &Path, residualize: bool) -> Result<(Vec<String>, Vec<CorrelationMatrix>, Vec<f64>)> {
    let manifest = read_manifest(dir)?;
    let raw = read_matrices(dir, &manifest)?;
    let mut mats = Vec::with_capacity(raw.len());
    for (i, m) in raw.into_iter().enumerate() {
        let c = CorrelationMatrix::new(m).map_err(|e| match e {
            CmoError::Asymmetric { deviation, .. } => CmoError::Asymmetric { index: i, deviation },
            other => other,
        })?;
        mats.push(if residualize { residualize_first_eigenvector(&c)? } else { c });
    }
    Ok((manifest.files, mats, manifest.scores))
}

struct ByteWriter(Vec<u8>);

impl ByteWriter {
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn matrix(&mut self, m: &DMatrix<f64>) {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                self.f64(m[(i, j)]);
            }
        }
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    context: &'a str,
}

impl ByteReader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(parse_err(self.context, format!("truncated while reading {what} at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")) as usize)
    }
    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
    fn matrix(&mut self, rows: usize, cols: usize, what: &str) -> Result<DMatrix<f64>> {
        let mut vals = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            vals.push(self.f64(what)?);
        }
        Ok(DMatrix::from_row_slice(rows, cols, &vals))
    }
}

/// Serializes a fitted model: magic, version, P, R, N, basis, anchors,
/// alpha, kernel spec, hyperparameters, then ridge, summary and training
/// loadings.
pub fn model_to_bytes(model: &FittedModel) -> Vec<u8> {
    let (p, r, n) = (model.p(), model.r(), model.dual.alpha.len());
    let mut w = ByteWriter(Vec::new());
    w.0.extend_from_slice(MODEL_MAGIC);
    w.u32(MODEL_VERSION as usize);
    w.u32(p);
    w.u32(r);
    w.u32(n);
    w.matrix(&model.basis_x);
    w.matrix(&model.dual.anchors);
    for &a in model.dual.alpha.iter() {
        w.f64(a);
    }
    let s = &model.spec;
    w.f64(s.sigma_sq);
    w.f64(s.rho);
    w.f64(s.ell);
    w.u32(s.terms.code() as usize);
    let h = &model.hyperparams;
    for v in [h.lambda, h.gamma1, h.gamma2, h.gamma3] {
        w.f64(v);
    }
    w.u32(h.rank_r);
    w.f64(h.prox_step);
    w.u32(h.prox_iters);
    w.f64(h.dual_step);
    w.u32(h.halve_dual_step as usize);
    for v in [h.tr.delta0, h.tr.delta_max, h.tr.eta_accept, h.tr.shrink, h.tr.expand] {
        w.f64(v);
    }
    w.u32(h.tr.max_iters);
    w.f64(h.tr.grad_tol);
    w.f64(h.outer_tol);
    w.f64(h.residual_tol);
    w.u32(h.max_outer_iters);
    w.f64(model.dual.ridge);
    w.u32(model.summary.iterations);
    w.u32(model.summary.converged as usize);
    let b = &model.summary.final_breakdown;
    for v in [b.fit_term, b.regression_term, b.l1_x, b.l2_c, b.l2_w, b.constraint_residual, b.total_j] {
        w.f64(v);
    }
    w.matrix(&model.training_loadings);
    w.0
}

pub fn model_from_bytes(bytes: &[u8], context: &str) -> Result<FittedModel> {
    let mut r = ByteReader { bytes, pos: 0, context };
    if r.take(8, "magic")? != MODEL_MAGIC {
        return Err(parse_err(context, "missing CMOMODEL header"));
    }
    let version = r.u32("version")?;
    if version != MODEL_VERSION as usize {
        return Err(parse_err(context, format!("unsupported model version {version}")));
    }
    let (p, rank, n) = (r.u32("P")?, r.u32("R")?, r.u32("N")?);
    let basis_x = r.matrix(p, rank, "basis")?;
    let anchors = r.matrix(rank, n, "anchors")?;
    let alpha = DVector::from_vec((0..n).map(|_| r.f64("alpha")).collect::<Result<Vec<_>>>()?);
    let (sigma_sq, rho, ell) = (r.f64("kernel")?, r.f64("kernel")?, r.f64("kernel")?);
    let code = r.u32("kernel terms")?;
    let terms = KernelTerms::from_code(code as u32).ok_or_else(|| parse_err(context, format!("unknown kernel terms {code}")))?;
    let spec = KernelSpec { sigma_sq, rho, ell, terms };
    let mut f = |what: &str| r.f64(what);
    let (lambda, gamma1, gamma2, gamma3) = (f("lambda")?, f("gamma1")?, f("gamma2")?, f("gamma3")?);
    let rank_r = r.u32("rank_r")?;
    let prox_step = r.f64("prox_step")?;
    let prox_iters = r.u32("prox_iters")?;
    let dual_step = r.f64("dual_step")?;
    let halve_dual_step = r.u32("halve_dual_step")? != 0;
    let mut f = |what: &str| r.f64(what);
    let (delta0, delta_max, eta_accept, shrink, expand) = (f("tr")?, f("tr")?, f("tr")?, f("tr")?, f("tr")?);
    let max_iters = r.u32("tr")?;
    let grad_tol = r.f64("tr")?;
    let outer_tol = r.f64("outer_tol")?;
    let residual_tol = r.f64("residual_tol")?;
    let max_outer_iters = r.u32("max_outer_iters")?;
    let ridge = r.f64("ridge")?;
    let iterations = r.u32("summary")?;
    let converged = r.u32("summary")? != 0;
    let mut b = [0.0; 7];
    for v in &mut b {
        *v = r.f64("summary")?;
    }
    let training_loadings = r.matrix(rank, n, "training loadings")?;
    if r.pos != bytes.len() {
        return Err(parse_err(context, format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let hyperparams = Hyperparams {
        lambda,
        gamma1,
        gamma2,
        gamma3,
        rank_r,
        prox_step,
        prox_iters,
        dual_step,
        halve_dual_step,
        tr: TrustRegionConfig { delta0, delta_max, eta_accept, shrink, expand, max_iters, grad_tol },
        outer_tol,
        residual_tol,
        max_outer_iters,
    };
    let final_breakdown = ObjectiveBreakdown {
        fit_term: b[0],
        regression_term: b[1],
        l1_x: b[2],
        l2_c: b[3],
        l2_w: b[4],
        constraint_residual: b[5],
        total_j: b[6],
    };
    Ok(FittedModel {
        basis_x,
        dual: RegressionDual { alpha, anchors, spec, ridge },
        hyperparams,
        spec,
        summary: FitSummary { iterations, converged, final_breakdown },
        training_loadings,
    })
}

pub fn save_model(path: &Path, model: &FittedModel) -> Result<()> {
    write_bytes(path, &model_to_bytes(model))
}

pub fn load_model(path: &Path) -> Result<FittedModel> {
    model_from_bytes(&read_bytes(path)?, &path.display().to_string())
}

/// Cross-validation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvSettings {
    pub folds: usize,
    pub mi_bins: usize,
}

impl Default for CvSettings {
    fn default() -> Self {
        Self { folds: 10, mi_bins: DEFAULT_MI_BINS }
    }
}

/// Synthetic cohort shape. The kernel and seed come from the enclosing run
/// configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSettings {
    pub p: usize,
    pub r: usize,
    pub n: usize,
    pub sparsity_x: f64,
    pub loading_scale: f64,
    pub loading_floor: f64,
    pub noise_sigma: f64,
    pub score_noise_sigma: f64,
    pub score_model: ScoreModel,
    pub n_anchors: usize,
}

impl Default for SynthSettings {
    fn default() -> Self {
        let d = SynthConfig::default();
        Self {
            p: d.p,
            r: d.r,
            n: d.n,
            sparsity_x: d.sparsity_x,
            loading_scale: d.loading_scale,
            loading_floor: d.loading_floor,
            noise_sigma: d.noise_sigma,
            score_noise_sigma: d.score_noise_sigma,
            score_model: d.score_model,
            n_anchors: d.n_anchors,
        }
    }
}

/// Run configuration shared by all commands. Every leaf key can be
/// overridden from the command line under the same name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub model: Option<PathBuf>,
    /// Remove each input matrix's top eigenpair at load time.
    pub residualize: bool,
    /// Choose the rank from the eigenspectrum knee instead of `rank_r`.
    pub auto_rank: bool,
    pub matrix_format: MatrixFormat,
    /// Used by `fit` and `cv`; sweeps always run the coupled solver.
    pub method: Method,
    pub hyperparams: Hyperparams,
    pub kernel: KernelSpec,
    pub synth: SynthSettings,
    pub cv: CvSettings,
    pub sweep: SweepGrid,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: 0,
            input: None,
            output: None,
            model: None,
            residualize: true,
            auto_rank: false,
            matrix_format: MatrixFormat::Text,
            method: Method::Coupled,
            hyperparams: Hyperparams::default(),
            kernel: KernelSpec::default(),
            synth: SynthSettings::default(),
            cv: CvSettings::default(),
            sweep: SweepGrid::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, context: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| parse_err(context, e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        Self::from_toml(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configuration serializes")
    }

    pub fn synth_config(&self) -> SynthConfig {
        let s = &self.synth;
        SynthConfig {
            p: s.p,
            r: s.r,
            n: s.n,
            sparsity_x: s.sparsity_x,
            loading_scale: s.loading_scale,
            loading_floor: s.loading_floor,
            noise_sigma: s.noise_sigma,
            spec: self.kernel,
            score_noise_sigma: s.score_noise_sigma,
            score_model: s.score_model,
            n_anchors: s.n_anchors,
            seed: self.seed,
        }
    }
}

/// `# `-prefixed copy of `text`, one comment per line.
pub fn comment_block(text: &str) -> String {
    text.lines().map(|l| format!("# {l}\n")).collect()
}

fn csv_file(path: &Path, echo: &str, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    file.write_all(comment_block(echo).as_bytes()).map_err(|e| io_err(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let csv_err = |e: csv::Error| CmoError::Io(format!("{}: {e}", path.display()));
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn num(v: f64) -> String {
    format!("{v}")
}

/// Per-iteration trace. Wall-clock times are left out so the file is
/// reproducible.
pub fn write_trace_csv(path: &Path, trace: &FitTrace, echo: &str) -> Result<()> {
    let header = [
        "iteration", "fit_term", "regression_term", "l1_x", "l2_c", "l2_w", "total_j", "constraint_residual",
        "dual_step", "x_block_before", "x_block_after", "c_block_before", "c_block_after",
    ];
    let mut rows = Vec::with_capacity(trace.records.len() + 1);
    let row = |it: usize, b: &ObjectiveBreakdown, rest: [f64; 5]| {
        let mut v = vec![it.to_string()];
        v.extend([b.fit_term, b.regression_term, b.l1_x, b.l2_c, b.l2_w, b.total_j, b.constraint_residual].map(num));
        v.extend(rest.map(num));
        v
    };
    rows.push(row(0, &trace.initial, [f64::NAN; 5]));
    for r in &trace.records {
        rows.push(row(r.iteration, &r.breakdown, [r.dual_step, r.x_block.0, r.x_block.1, r.c_block.0, r.c_block.1]));
    }
    csv_file(path, echo, &header, rows)
}

pub fn write_summary_csv(path: &Path, model: &FittedModel, echo: &str) -> Result<()> {
    let b = &model.summary.final_breakdown;
    let header = [
        "iterations", "converged", "fit_term", "regression_term", "l1_x", "l2_c", "l2_w", "constraint_residual", "total_j",
    ];
    let mut row = vec![model.summary.iterations.to_string(), model.summary.converged.to_string()];
    row.extend([b.fit_term, b.regression_term, b.l1_x, b.l2_c, b.l2_w, b.constraint_residual, b.total_j].map(num));
    csv_file(path, echo, &header, vec![row])
}

/// Held-out predicted-vs-true pairs, one row per sample.
pub fn write_predictions_csv(path: &Path, report: &EvalReport, echo: &str) -> Result<()> {
    let rows = report
        .test_predictions
        .iter()
        .map(|p| vec![p.index.to_string(), p.fold.to_string(), num(p.y_true), num(p.y_pred)])
        .collect();
    csv_file(path, echo, &["index", "fold", "y_true", "y_pred"], rows)
}

/// Per-fold metrics followed by a `pooled` row.
pub fn write_report_csv(path: &Path, report: &EvalReport, echo: &str) -> Result<()> {
    let mut rows: Vec<Vec<String>> = report
        .folds
        .iter()
        .map(|f| {
            vec![
                f.fold.to_string(),
                num(f.mae_train),
                num(f.mae_test),
                num(f.mi_train),
                num(f.mi_test),
                f.iterations.to_string(),
                f.converged.to_string(),
            ]
        })
        .collect();
    let a = &report.aggregate;
    rows.push(vec![
        "pooled".into(),
        num(a.mae_train),
        num(a.mae_test),
        num(a.mi_train),
        num(a.mi_test),
        String::new(),
        String::new(),
    ]);
    csv_file(path, echo, &["fold", "mae_train", "mae_test", "mi_train", "mi_test", "iterations", "converged"], rows)
}

pub fn write_sweep_csv(path: &Path, entries: &[SweepEntry], echo: &str) -> Result<()> {
    let header = [
        "rank", "lambda", "gamma1", "gamma2", "gamma3", "sigma_sq", "rho", "ell", "terms", "mae_test", "mi_test", "error",
    ];
    let rows = entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let h = &e.hyperparams;
            let s = &e.spec;
            let mut row = vec![(i + 1).to_string()];
            row.extend([h.lambda, h.gamma1, h.gamma2, h.gamma3, s.sigma_sq, s.rho, s.ell].map(num));
            row.push(format!("{:?}", s.terms).to_lowercase());
            match &e.outcome {
                Ok(r) => row.extend([num(r.aggregate.mae_test), num(r.aggregate.mi_test), String::new()]),
                Err(err) => row.extend([String::new(), String::new(), err.to_string()]),
            }
            row
        })
        .collect();
    csv_file(path, echo, &header, rows)
}

/// Loading and score per predicted matrix.
pub fn write_unseen_csv(
    path: &Path,
    names: &[String],
    results: &[(DVector<f64>, f64)],
    scores: &[f64],
    echo: &str,
) -> Result<()> {
    let r = results.first().map_or(0, |(c, _)| c.len());
    let mut header: Vec<String> = vec!["file".into(), "y_pred".into(), "y_true".into()];
    header.extend((0..r).map(|k| format!("c{k}")));
    let rows = names
        .iter()
        .zip(results)
        .enumerate()
        .map(|(i, (name, (c, y)))| {
            let mut row = vec![name.clone(), num(*y), scores.get(i).map_or(String::new(), |v| num(*v))];
            row.extend(c.iter().map(|v| num(*v)));
            row
        })
        .collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    csv_file(path, echo, &header, rows)
}

/// Ground truth of a synthetic cohort as text matrices, each headed by the
/// `echo` comment block.
pub fn save_ground_truth(dir: &Path, truth: &GroundTruth, echo: &str) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let col = |v: &[f64]| DMatrix::from_column_slice(v.len(), 1, v);
    let header = comment_block(echo);
    let text = |name: &str, m: &DMatrix<f64>| write_bytes(&dir.join(name), (header.clone() + &matrix_to_text(m)).as_bytes());
    text("true_x.csv", &truth.true_x)?;
    text("true_loadings.csv", &truth.true_loadings)?;
    text("true_alpha.csv", &col(truth.true_alpha.as_slice()))?;
    text("anchors.csv", &truth.anchors)?;
    text("clean_scores.csv", &col(&truth.clean_scores))?;
    text("noisy_scores.csv", &col(&truth.noisy_scores))
}
