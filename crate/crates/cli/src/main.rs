use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Command};
use cmo::cohort::select_rank;
use cmo::evaluation::{evaluate, grid_sweep, EvalConfig, Method};
use cmo::io::{self, RunConfig};
use cmo::prediction::predict_many;
use cmo::solver::{fit_decoupled, fit_with_progress};
use cmo::synth::generate;
use cmo::{CmoError, CohortDataset};

/// Command-line flag and the config key it overrides.
const OVERRIDES: &[(&str, &str)] = &[
    ("input", "input"),
    ("output", "output"),
    ("model", "model"),
    ("residualize", "residualize"),
    ("auto_rank", "auto_rank"),
    ("matrix_format", "matrix_format"),
    ("method", "method"),
    ("lambda", "hyperparams.lambda"),
    ("gamma1", "hyperparams.gamma1"),
    ("gamma2", "hyperparams.gamma2"),
    ("gamma3", "hyperparams.gamma3"),
    ("rank_r", "hyperparams.rank_r"),
    ("prox_step", "hyperparams.prox_step"),
    ("prox_iters", "hyperparams.prox_iters"),
    ("dual_step", "hyperparams.dual_step"),
    ("halve_dual_step", "hyperparams.halve_dual_step"),
    ("outer_tol", "hyperparams.outer_tol"),
    ("residual_tol", "hyperparams.residual_tol"),
    ("max_outer_iters", "hyperparams.max_outer_iters"),
    ("delta0", "hyperparams.tr.delta0"),
    ("delta_max", "hyperparams.tr.delta_max"),
    ("eta_accept", "hyperparams.tr.eta_accept"),
    ("shrink", "hyperparams.tr.shrink"),
    ("expand", "hyperparams.tr.expand"),
    ("max_iters", "hyperparams.tr.max_iters"),
    ("grad_tol", "hyperparams.tr.grad_tol"),
    ("sigma_sq", "kernel.sigma_sq"),
    ("rho", "kernel.rho"),
    ("ell", "kernel.ell"),
    ("terms", "kernel.terms"),
    ("p", "synth.p"),
    ("r", "synth.r"),
    ("n", "synth.n"),
    ("sparsity_x", "synth.sparsity_x"),
    ("loading_scale", "synth.loading_scale"),
    ("loading_floor", "synth.loading_floor"),
    ("noise_sigma", "synth.noise_sigma"),
    ("score_noise_sigma", "synth.score_noise_sigma"),
    ("score_model", "synth.score_model"),
    ("n_anchors", "synth.n_anchors"),
    ("folds", "cv.folds"),
    ("mi_bins", "cv.mi_bins"),
];

fn cli() -> Command {
    let mut cmd = Command::new("cmo")
        .about("Coupled low-rank factorization and kernel regression for cohorts of PSD matrices")
        .version(clap::crate_version!())
        .subcommand_required(true)
        .arg(Arg::new("config").long("config").global(true).value_name("PATH").help("TOML run configuration"))
        .arg(Arg::new("seed").long("seed").global(true).value_name("N"))
        .arg(Arg::new("threads").long("threads").global(true).value_name("N").help("Worker threads, 0 = all cores"))
        .arg(
            Arg::new("set")
                .long("set")
                .global(true)
                .action(ArgAction::Append)
                .value_name("KEY=VALUE")
                .help("Override any config key by dotted path, e.g. sweep.lambda=[0.1,1]"),
        )
        .subcommand(Command::new("synth").about("Write a synthetic cohort and its ground truth"))
        .subcommand(Command::new("fit").about("Fit a model and write it with its trace"))
        .subcommand(Command::new("predict").about("Predict loadings and scores for new matrices"))
        .subcommand(Command::new("cv").about("Cross-validate and write per-sample predictions"))
        .subcommand(Command::new("sweep").about("Rank a hyperparameter grid by held-out error"));
    for (flag, key) in OVERRIDES {
        cmd = cmd.arg(
            Arg::new(*flag).long(*flag).global(true).allow_hyphen_values(true).value_name("VALUE").help(format!("Overrides `{key}`")),
        );
    }
    cmd
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(table: &mut toml::Table, path: &str, value: toml::Value) -> Result<(), CmoError> {
    let mut parts: Vec<&str> = path.split('.').collect();
    let leaf = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| CmoError::InvalidParameter(format!("empty key `{path}`")))?;
    let mut node = table;
    for part in parts {
        let entry = node.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| CmoError::InvalidParameter(format!("`{part}` in `{path}` is not a section")))?;
    }
    node.insert(leaf.to_string(), value);
    Ok(())
}

fn build_config(m: &ArgMatches) -> Result<RunConfig, CmoError> {
    let mut table = match m.get_one::<String>("config") {
        Some(path) => {
            let path = Path::new(path);
            let text = fs::read_to_string(path).map_err(|e| CmoError::Io(format!("{}: {e}", path.display())))?;
            toml::from_str::<toml::Table>(&text)
                .map_err(|e| CmoError::Parse { context: path.display().to_string(), message: e.to_string() })?
        }
        None => toml::Table::new(),
    };
    for key in ["seed", "threads"] {
        if let Some(raw) = m.get_one::<String>(key) {
            set_path(&mut table, key, parse_value(raw))?;
        }
    }
    for (flag, key) in OVERRIDES {
        if let Some(raw) = m.get_one::<String>(flag) {
            set_path(&mut table, key, parse_value(raw))?;
        }
    }
    for item in m.get_many::<String>("set").into_iter().flatten() {
        let (key, raw) =
            item.split_once('=').ok_or_else(|| CmoError::InvalidParameter(format!("--set expects KEY=VALUE, got `{item}`")))?;
        set_path(&mut table, key.trim(), parse_value(raw.trim()))?;
    }
    let text = toml::to_string(&table).map_err(|e| CmoError::InvalidParameter(e.to_string()))?;
    RunConfig::from_toml(&text, "command line")
}

fn required(path: &Option<PathBuf>, key: &str) -> Result<PathBuf, CmoError> {
    path.clone().ok_or_else(|| CmoError::InvalidParameter(format!("`{key}` is required for this command")))
}

fn existing(path: PathBuf, key: &str) -> Result<PathBuf, CmoError> {
    if path.exists() {
        Ok(path)
    } else {
        Err(CmoError::Io(format!("{key} `{}` does not exist", path.display())))
    }
}

struct Paths {
    input: Option<PathBuf>,
    output: PathBuf,
    model: Option<PathBuf>,
}

/// Resolves and checks every path the command touches before any work.
fn preflight(command: &str, cfg: &RunConfig) -> Result<Paths, CmoError> {
    let output = required(&cfg.output, "output")?;
    let input = match command {
        "synth" => None,
        _ => Some(existing(required(&cfg.input, "input")?, "input")?),
    };
    let model = match command {
        "fit" => Some(cfg.model.clone().unwrap_or_else(|| output.join("model.bin"))),
        "predict" => Some(existing(required(&cfg.model, "model")?, "model")?),
        _ => None,
    };
    fs::create_dir_all(&output).map_err(|e| CmoError::Io(format!("{}: {e}", output.display())))?;
    if let Some(parent) = model.as_ref().and_then(|m| m.parent()).filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CmoError::Io(format!("{}: {e}", parent.display())))?;
    }
    Ok(Paths { input, output, model })
}

fn load(cfg: &RunConfig, paths: &Paths) -> Result<(CohortDataset, cmo::Hyperparams), CmoError> {
    let cohort = io::load_cohort(paths.input.as_deref().expect("checked in preflight"), cfg.residualize)?;
    let mut hp = cfg.hyperparams;
    if cfg.auto_rank {
        hp.rank_r = select_rank(&cohort)?;
    }
    Ok((cohort, hp))
}

fn run(command: &str, cfg: &RunConfig) -> Result<(), CmoError> {
    let paths = preflight(command, cfg)?;
    cmo::par::set_threads(cfg.threads);
    let echo = cfg.to_toml();
    fs::write(paths.output.join("config.toml"), &echo)?;
    let out = &paths.output;
    match command {
        "synth" => {
            let (cohort, truth) = generate(&cfg.synth_config())?;
            io::save_cohort(out, &cohort, cfg.matrix_format, &echo)?;
            io::save_ground_truth(&out.join("ground_truth"), &truth, &echo)?;
            println!("wrote {} matrices of size {} to {}", cohort.n(), cohort.p(), out.display());
        }
        "fit" => {
            let (cohort, hp) = load(cfg, &paths)?;
            let (model, trace) = match cfg.method {
                Method::Coupled => {
                    let mut progress = |it: usize, b: &cmo::factorization::ObjectiveBreakdown| {
                        if it.is_multiple_of(10) {
                            eprintln!("iteration {it}: total_j {:.6e}, residual {:.3e}", b.total_j, b.constraint_residual);
                        }
                    };
                    fit_with_progress(&cohort, &hp, &cfg.kernel, cfg.seed, Some(&mut progress))?
                }
                Method::Decoupled => fit_decoupled(&cohort, &hp, &cfg.kernel, cfg.seed)?,
            };
            io::save_model(paths.model.as_deref().expect("set in preflight"), &model)?;
            io::write_trace_csv(&out.join("trace.csv"), &trace, &echo)?;
            io::write_summary_csv(&out.join("summary.csv"), &model, &echo)?;
            let s = &model.summary;
            println!(
                "{} iterations, converged {}, total_j {:e}, residual {:e}",
                s.iterations, s.converged, s.final_breakdown.total_j, s.final_breakdown.constraint_residual
            );
        }
        "predict" => {
            let model = io::load_model(paths.model.as_deref().expect("checked in preflight"))?;
            let (names, matrices, scores) = io::load_unlabeled(paths.input.as_deref().expect("checked"), cfg.residualize)?;
            let results = predict_many(&matrices, &model)?;
            io::write_unseen_csv(&out.join("predictions.csv"), &names, &results, &scores, &echo)?;
            println!("predicted {} matrices", results.len());
        }
        "cv" => {
            let (cohort, hp) = load(cfg, &paths)?;
            let eval = EvalConfig {
                method: cfg.method,
                hyperparams: hp,
                spec: cfg.kernel,
                folds: cfg.cv.folds,
                seed: cfg.seed,
                mi_bins: cfg.cv.mi_bins,
            };
            let report = evaluate(&cohort, &eval)?;
            io::write_report_csv(&out.join("report.csv"), &report, &echo)?;
            io::write_predictions_csv(&out.join("predictions.csv"), &report, &echo)?;
            let a = &report.aggregate;
            println!("test MAE {:.6}, test MI {:.6}, train MAE {:.6}, train MI {:.6}", a.mae_test, a.mi_test, a.mae_train, a.mi_train);
        }
        "sweep" => {
            let (cohort, hp) = load(cfg, &paths)?;
            let entries = grid_sweep(&cohort, &cfg.sweep, &hp, cfg.cv.folds, cfg.seed)?;
            io::write_sweep_csv(&out.join("sweep.csv"), &entries, &echo)?;
            if let Some(best) = entries.first() {
                let h = &best.hyperparams;
                println!(
                    "best: lambda {} gamma1 {} gamma2 {} gamma3 {} kernel {:?}, test MAE {:?}",
                    h.lambda, h.gamma1, h.gamma2, h.gamma3, best.spec, best.mae_test()
                );
            }
        }
        other => unreachable!("unknown command {other}"),
    }
    Ok(())
}

fn kind(e: &CmoError) -> (&'static str, u8) {
    match e {
        CmoError::Dimension(_) => ("dimension", 10),
        CmoError::Asymmetric { .. } => ("asymmetric", 11),
        CmoError::NotPsd { .. } => ("not_psd", 12),
        CmoError::NonFinite(_) => ("non_finite", 13),
        CmoError::InvalidParameter(_) => ("invalid_parameter", 14),
        CmoError::NoKnee => ("no_knee", 15),
        CmoError::LinearSolve(_) => ("linear_solve", 16),
        CmoError::StepUnderflow { .. } => ("step_underflow", 17),
        CmoError::Diverged { .. } => ("diverged", 18),
        CmoError::Fold { source, .. } => kind(source),
        CmoError::Parse { .. } => ("parse", 20),
        CmoError::Io(_) => ("io", 21),
    }
}

fn error_record(e: &CmoError) -> (serde_json::Value, u8) {
    let (name, code) = kind(e);
    let mut record = serde_json::json!({ "error": name, "exit_code": code, "message": e.to_string() });
    if let CmoError::Fold { fold, .. } = e {
        record["fold"] = serde_json::json!(fold);
    }
    (record, code)
}

fn main() -> ExitCode {
    let matches = cli().get_matches();
    let (command, _) = matches.subcommand().expect("subcommand required");
    let result = build_config(&matches).and_then(|cfg| run(command, &cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (record, code) = error_record(&e);
            eprintln!("{record}");
            ExitCode::from(code)
        }
    }
}
