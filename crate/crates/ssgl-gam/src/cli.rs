//! Command-line surface. Every subcommand writes a manifest beside its
//! primary output recording the fully resolved invocation, so a run can
//! be replayed bit-exactly from the manifest alone.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::basis::BasisSpec;
use crate::cv::{cv_fit, parse_grid, CvOptions, HyperTemplate};
use crate::em::{fit, EmConfig, PredictScale, SbGamFit};
use crate::error::{Error, Result};
use crate::family::Family;
use crate::io::{fmt_f64, read_table, read_x_csv, read_xy_csv, write_csv, write_string, write_xy_csv};
use crate::linalg::Mat;
use crate::metrics::{auc, mcc, mse_f, mspe, SelectionCounts};
use crate::prostate::{load_dataset, run_prostate, SplitProtocol};
use crate::sim::{gen, gen_test, Scenario};
use crate::solver::SolverConfig;
use crate::ssgl::SsglHyper;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    /// Fully resolved argument vector (defaults filled in); re-running
    /// `ssgl-gam <argv...>` reproduces the outputs bit-exactly.
    pub argv: Vec<String>,
    pub seeds: Vec<u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub version: String,
    pub duration_seconds: f64,
}

fn write_manifest(m: &RunManifest, primary_out: &Path) -> Result<()> {
    let path = manifest_path(primary_out);
    let body = serde_json::to_string_pretty(m)
        .map_err(|e| Error::numerical(format!("manifest serialization: {e}")))?;
    write_string(&path, &body)
}

pub fn manifest_path(primary_out: &Path) -> PathBuf {
    let mut os = primary_out.as_os_str().to_owned();
    os.push(".manifest.json");
    PathBuf::from(os)
}

#[derive(Parser, Debug)]
#[command(name = "ssgl-gam", version = VERSION, about = "Sparse additive GLMs with spike-and-slab group lasso selection")]
struct Cli {
    /// Worker threads (default: SSGL_GAM_JOBS env var, then all cores)
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug, Clone)]
struct FamilyArgs {
    /// gaussian | binomial | poisson | negbinomial | gamma
    #[arg(long, default_value = "gaussian")]
    family: String,

    /// Negative binomial size parameter
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,

    /// Gamma shape parameter
    #[arg(long, default_value_t = 1.0)]
    shape: f64,

    /// Gaussian dispersion
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
}

impl FamilyArgs {
    fn resolve(&self) -> Result<Family> {
        match self.family.as_str() {
            "gaussian" => {
                if self.tau <= 0.0 {
                    return Err(Error::argument("--tau must be positive"));
                }
                Ok(Family::Gaussian { tau: self.tau })
            }
            "binomial" => Ok(Family::Binomial),
            "poisson" => Ok(Family::Poisson),
            "negbinomial" => Family::neg_binomial(self.alpha),
            "gamma" => Family::gamma(self.shape),
            other => Err(Error::argument(format!(
                "unknown family '{other}' (expected gaussian, binomial, poisson, negbinomial, or gamma)"
            ))),
        }
    }

    fn argv(&self) -> Vec<String> {
        vec![
            "--family".into(),
            self.family.clone(),
            "--alpha".into(),
            fmt_f64(self.alpha),
            "--shape".into(),
            fmt_f64(self.shape),
            "--tau".into(),
            fmt_f64(self.tau),
        ]
    }
}

#[derive(Args, Debug, Clone)]
struct HyperArgs {
    /// Spike penalty scale
    #[arg(long, default_value_t = 10.0)]
    lambda0: f64,

    /// Slab penalty scale
    #[arg(long, default_value_t = 1.0)]
    lambda1: f64,

    /// Beta prior shape a for the mixing weight
    #[arg(long, default_value_t = 1.0)]
    a: f64,

    /// Beta prior shape b (default: number of covariates)
    #[arg(long)]
    b: Option<f64>,

    /// Basis functions per covariate
    #[arg(long, default_value_t = 6)]
    df: usize,
}

impl HyperArgs {
    fn template(&self) -> HyperTemplate {
        HyperTemplate {
            lambda1: self.lambda1,
            a: self.a,
            b: self.b,
        }
    }

    fn argv(&self, p: usize) -> Vec<String> {
        vec![
            "--lambda0".into(),
            fmt_f64(self.lambda0),
            "--lambda1".into(),
            fmt_f64(self.lambda1),
            "--a".into(),
            fmt_f64(self.a),
            "--b".into(),
            fmt_f64(self.b.unwrap_or(p as f64)),
            "--df".into(),
            self.df.to_string(),
        ]
    }
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate synthetic data from a named scenario
    Simulate {
        /// logistic-s5 | poisson-s5 | negbinomial-b1
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        p: Option<usize>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit at a fixed lambda0 and write the model file
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        family: FamilyArgs,
        #[command(flatten)]
        hyper: HyperArgs,
        /// Model output path (JSON)
        #[arg(long)]
        model: PathBuf,
        /// Optional EM trace CSV
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Optional selected-covariate listing
        #[arg(long)]
        selected: Option<PathBuf>,
    },
    /// Predict from a saved model
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// link | response
        #[arg(long, default_value = "response")]
        scale: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-validate lambda0 and refit at the winner
    Cv {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        family: FamilyArgs,
        #[command(flatten)]
        hyper: HyperArgs,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// lo:hi:n equispaced grid
        #[arg(long = "lambda0-grid", default_value = "1:100:20")]
        lambda0_grid: String,
        /// CV curve output CSV
        #[arg(long)]
        out: PathBuf,
        /// Optional refit model output
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Score predictions against observed responses
    Eval {
        /// CSV with a y column
        #[arg(long)]
        data: PathBuf,
        /// CSV of predictions on the response scale (first column used)
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Multi-seed simulation study: fit, evaluate, summarize
    Replicate {
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value_t = 20)]
        reps: usize,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        p: Option<usize>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long = "lambda0-grid", default_value = "1:100:10")]
        lambda0_grid: String,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[command(flatten)]
        hyper: HyperArgs,
        /// Also run the fixed-weight group-lasso baseline
        #[arg(long, default_value_t = false)]
        baseline: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract fitted component functions on a grid
    Curves {
        #[arg(long)]
        model: PathBuf,
        /// 1-based covariate indices, comma-separated (default: all selected)
        #[arg(long)]
        indices: Option<String>,
        #[arg(long = "grid-size", default_value_t = 100)]
        grid_size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Prostate gene-expression study (skips cleanly without the data)
    Prostate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value_t = 50)]
        repeats: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long = "lambda0-grid", default_value = "1:100:10")]
        lambda0_grid: String,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[command(flatten)]
        hyper: HyperArgs,
        /// Report output (JSON)
        #[arg(long)]
        out: PathBuf,
    },
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            // help/version requests are successes; bad flags are usage errors
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Some(jobs) = cli.jobs.or_else(|| {
        std::env::var("SSGL_GAM_JOBS")
            .ok()
            .and_then(|v| v.parse().ok())
    }) {
        // ignore failure: the global pool can only be set once per process
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global();
    }
    match dispatch(cli.cmd) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<()> {
    let start = Instant::now();
    match cmd {
        Cmd::Simulate {
            scenario,
            n,
            p,
            seed,
            out,
        } => cmd_simulate(&scenario, n, p, seed, &out, start),
        Cmd::Fit {
            data,
            family,
            hyper,
            model,
            trace,
            selected,
        } => cmd_fit(&data, &family, &hyper, &model, trace.as_deref(), selected.as_deref(), start),
        Cmd::Predict {
            model,
            data,
            scale,
            out,
        } => cmd_predict(&model, &data, &scale, &out, start),
        Cmd::Cv {
            data,
            family,
            hyper,
            folds,
            seed,
            lambda0_grid,
            out,
            model,
        } => cmd_cv(&data, &family, &hyper, folds, seed, &lambda0_grid, &out, model.as_deref(), start),
        Cmd::Eval { data, pred, out } => cmd_eval(&data, &pred, &out, start),
        Cmd::Replicate {
            scenario,
            reps,
            n,
            p,
            seed,
            lambda0_grid,
            folds,
            hyper,
            baseline,
            out,
        } => cmd_replicate(&scenario, reps, n, p, seed, &lambda0_grid, folds, &hyper, baseline, &out, start),
        Cmd::Curves {
            model,
            indices,
            grid_size,
            out,
        } => cmd_curves(&model, indices.as_deref(), grid_size, &out, start),
        Cmd::Prostate {
            data,
            labels,
            repeats,
            seed,
            lambda0_grid,
            folds,
            hyper,
            out,
        } => cmd_prostate(&data, &labels, repeats, seed, &lambda0_grid, folds, &hyper, &out, start),
    }
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn cmd_simulate(
    scenario: &str,
    n: Option<usize>,
    p: Option<usize>,
    seed: u64,
    out: &Path,
    start: Instant,
) -> Result<()> {
    let sc = Scenario::parse(scenario)?;
    let (dn, dp) = sc.default_dims();
    let n = n.unwrap_or(dn);
    let p = p.unwrap_or(dp);
    let data = gen(sc, n, p, seed)?;
    write_xy_csv(out, &data.y, &data.x)?;
    let manifest = RunManifest {
        subcommand: "simulate".into(),
        argv: vec![
            "simulate".into(),
            "--scenario".into(),
            sc.name().into(),
            "--n".into(),
            n.to_string(),
            "--p".into(),
            p.to_string(),
            "--seed".into(),
            seed.to_string(),
            "--out".into(),
            path_str(out),
        ],
        seeds: vec![seed],
        inputs: vec![],
        outputs: vec![path_str(out)],
        version: VERSION.into(),
        duration_seconds: start.elapsed().as_secs_f64(),
    };
    write_manifest(&manifest, out)?;
    println!("wrote {} ({n} rows, {p} covariates)", out.display());
    Ok(())
}

fn build_fit_inputs(
    data: &Path,
    family_args: &FamilyArgs,
    df: usize,
) -> Result<(Family, Vec<f64>, Mat, BasisSpec)> {
    let family = family_args.resolve()?;
    let (y, x) = read_xy_csv(data)?;
    let spec = BasisSpec::with_df(df, 3)?;
    Ok((family, y, x, spec))
}

fn cmd_fit(
    data: &Path,
    family_args: &FamilyArgs,
    hyper_args: &HyperArgs,
    model_out: &Path,
    trace_out: Option<&Path>,
    selected_out: Option<&Path>,
    start: Instant,
) -> Result<()> {
    let (family, y, x, spec) = build_fit_inputs(data, family_args, hyper_args.df)?;
    let p = x.ncols();
    let h = SsglHyper::new(
        hyper_args.lambda0,
        hyper_args.lambda1,
        hyper_args.a,
        hyper_args.b.unwrap_or(p as f64),
        spec.df,
    )?;
    let (x_scaled, ranges) = crate::basis::rescale(&x)?;
    let mut design = crate::basis::build_design(&x_scaled, &spec)?;
    design.meta.ranges = ranges;
    let fitted = fit(
        &family,
        &y,
        &design,
        &h,
        &EmConfig::default(),
        &SolverConfig::default(),
        None,
    )?;
    write_string(model_out, &fitted.to_json()?)?;
    if let Some(tp) = trace_out {
        let rows: Vec<Vec<f64>> = fitted
            .trace
            .iter()
            .map(|t| {
                vec![
                    t.iter as f64,
                    t.log_posterior,
                    t.kappa,
                    t.n_selected as f64,
                    t.step_halvings as f64,
                ]
            })
            .collect();
        write_csv(
            tp,
            &["iter", "log_posterior", "kappa", "n_selected", "step_halvings"],
            &rows,
        )?;
    }
    if let Some(sp) = selected_out {
        let body: String = fitted
            .selected
            .iter()
            .map(|j| format!("x{}\n", j + 1))
            .collect();
        write_string(sp, &body)?;
    }
    let mut argv = vec!["fit".into(), "--data".into(), path_str(data)];
    argv.extend(family_args.argv());
    argv.extend(hyper_args.argv(p));
    argv.extend(["--model".into(), path_str(model_out)]);
    let mut outputs = vec![path_str(model_out)];
    if let Some(tp) = trace_out {
        argv.extend(["--trace".into(), path_str(tp)]);
        outputs.push(path_str(tp));
    }
    if let Some(sp) = selected_out {
        argv.extend(["--selected".into(), path_str(sp)]);
        outputs.push(path_str(sp));
    }
    let manifest = RunManifest {
        subcommand: "fit".into(),
        argv,
        seeds: vec![],
        inputs: vec![path_str(data)],
        outputs,
        version: VERSION.into(),
        duration_seconds: start.elapsed().as_secs_f64(),
    };
    write_manifest(&manifest, model_out)?;
    println!(
        "fit: {} EM iterations, kappa={}, {} selected of {p}: [{}]",
        fitted.trace.len(),
        fmt_f64(fitted.kappa),
        fitted.selected.len(),
        fitted
            .selected
            .iter()
            .map(|j| format!("x{}", j + 1))
            .collect::<Vec<_>>()
            .join(", ")
    );
    Ok(())
}

fn cmd_predict(model: &Path, data: &Path, scale: &str, out: &Path, start: Instant) -> Result<()> {
    let scale_v = match scale {
        "link" => PredictScale::Link,
        "response" => PredictScale::Response,
        other => {
            return Err(Error::argument(format!(
                "unknown scale '{other}' (expected link or response)"
            )))
        }
    };
    let fitted = SbGamFit::from_json(&crate::io::read_string(model)?)?;
    let x = read_x_csv(data)?;
    let preds = fitted.predict(&x, scale_v)?;
    let rows: Vec<Vec<f64>> = preds.values.iter().map(|&v| vec![v]).collect();
    write_csv(out, &["pred"], &rows)?;
    let manifest = RunManifest {
        subcommand: "predict".into(),
        argv: vec![
            "predict".into(),
            "--model".into(),
            path_str(model),
            "--data".into(),
            path_str(data),
            "--scale".into(),
            scale.into(),
            "--out".into(),
            path_str(out),
        ],
        seeds: vec![],
        inputs: vec![path_str(model), path_str(data)],
        outputs: vec![path_str(out)],
        version: VERSION.into(),
        duration_seconds: start.elapsed().as_secs_f64(),
    };
    write_manifest(&manifest, out)?;
    if preds.clamped > 0 {
        eprintln!(
            "note: {} of {} new covariate values fell outside the training range and were clamped",
            preds.clamped,
            x.nrows() * x.ncols()
        );
    }
    println!("wrote {} predictions to {}", preds.values.len(), out.display());
    Ok(())
}

fn cv_options(
    spec: BasisSpec,
    hyper: &HyperArgs,
    grid: Vec<f64>,
    folds: usize,
    seed: u64,
    baseline: bool,
) -> CvOptions {
    CvOptions {
        spec,
        hyper: hyper.template(),
        grid,
        folds,
        seed,
        em: EmConfig::default(),
        solver: SolverConfig::default(),
        group_lasso_baseline: baseline,
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_cv(
    data: &Path,
    family_args: &FamilyArgs,
    hyper_args: &HyperArgs,
    folds: usize,
    seed: u64,
    grid_str: &str,
    out: &Path,
    model_out: Option<&Path>,
    start: Instant,
) -> Result<()> {
    let (family, y, x, spec) = build_fit_inputs(data, family_args, hyper_args.df)?;
    let p = x.ncols();
    let grid = parse_grid(grid_str)?;
    let opts = cv_options(spec, hyper_args, grid, folds, seed, false);
    let (cv, fitted) = cv_fit(&family, &y, &x, &opts)?;
    let rows: Vec<Vec<f64>> = cv
        .grid
        .iter()
        .zip(cv.mean_error.iter().zip(&cv.std_error))
        .map(|(&g, (&m, &s))| vec![g, m, s])
        .collect();
    write_csv(out, &["lambda0", "mean_error", "std_error"], &rows)?;
    let mut outputs = vec![path_str(out)];
    if let Some(mp) = model_out {
        write_string(mp, &fitted.to_json()?)?;
        outputs.push(path_str(mp));
    }
    let mut argv = vec!["cv".into(), "--data".into(), path_str(data)];
    argv.extend(family_args.argv());
    argv.extend(hyper_args.argv(p));
    argv.extend([
        "--folds".into(),
        folds.to_string(),
        "--seed".into(),
        seed.to_string(),
        "--lambda0-grid".into(),
        grid_str.into(),
        "--out".into(),
        path_str(out),
    ]);
    if let Some(mp) = model_out {
        argv.extend(["--model".into(), path_str(mp)]);
    }
    let manifest = RunManifest {
        subcommand: "cv".into(),
        argv,
        seeds: vec![seed],
        inputs: vec![path_str(data)],
        outputs,
        version: VERSION.into(),
        duration_seconds: start.elapsed().as_secs_f64(),
    };
    write_manifest(&manifest, out)?;
    if !cv.failed_cells.is_empty() {
        eprintln!(
            "note: {} (fold, lambda0) cells failed and used the null-model error",
            cv.failed_cells.len()
        );
    }
    println!("chosen lambda0: {}", fmt_f64(cv.chosen_lambda0));
    println!(
        "selected {} of {p} covariates: [{}]",
        fitted.selected.len(),
        fitted
            .selected
            .iter()
            .map(|j| format!("x{}", j + 1))
            .collect::<Vec<_>>()
            .join(", ")
    );
    Ok(())
}

fn cmd_eval(data: &Path, pred: &Path, out: &Path, start: Instant) -> Result<()> {
    let (y, _) = read_xy_csv(data)?;
    let pt = read_table(pred)?;
    let preds: Vec<f64> = pt.rows.iter().map(|r| r[0]).collect();
    if preds.len() != y.len() {
        return Err(Error::data(format!(
            "{} has {} predictions but {} has {} responses",
            pred.display(),
            preds.len(),
            data.display(),
            y.len()
        )));
    }
    let mspe_v = mspe(&y, &preds)?;
    let binary = y.iter().all(|&v| v == 0.0 || v == 1.0);
    let auc_v = if binary {
        auc(&y, &preds).unwrap_or(f64::NAN)
    } else {
        f64::NAN
    };
    write_csv(out, &["mspe", "auc"], &[vec![mspe_v, auc_v]])?;
    let manifest = RunManifest {
        subcommand: "eval".into(),
        argv: vec![
            "eval".into(),
            "--data".into(),
            path_str(data),
            "--pred".into(),
            path_str(pred),
            "--out".into(),
            path_str(out),
        ],
        seeds: vec![],
        inputs: vec![path_str(data), path_str(pred)],
        outputs: vec![path_str(out)],
        version: VERSION.into(),
        duration_seconds: start.elapsed().as_secs_f64(),
    };
    write_manifest(&manifest, out)?;
    println!("mspe: {}", fmt_f64(mspe_v));
    if binary {
        println!("auc: {}", fmt_f64(auc_v));
    }
    Ok(())
}

fn median(v: &[f64]) -> f64 {
    let mut s: Vec<f64> = v.iter().copied().filter(|x| x.is_finite()).collect();
    if s.is_empty() {
        return f64::NAN;
    }
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = s.len();
    if m % 2 == 1 {
        s[m / 2]
    } else {
        0.5 * (s[m / 2 - 1] + s[m / 2])
    }
}

/// One replicate of a simulation study: generate train/test data, tune
/// lambda0 by CV, evaluate on the fresh test draw.
pub struct ReplicateOutcome {
    pub seed: u64,
    pub mse: f64,
    pub mcc: f64,
    /// AUC for binary scenarios, MSPE for count scenarios.
    pub auc_or_mspe: f64,
    pub chosen_lambda0: f64,
    pub selected: Vec<usize>,
    pub runtime_seconds: f64,
    pub baseline_mspe: Option<f64>,
    pub failed: bool,
}

pub fn run_replicate(
    sc: Scenario,
    n: usize,
    p: usize,
    seed: u64,
    opts: &CvOptions,
    with_baseline: bool,
) -> ReplicateOutcome {
    let rep_start = Instant::now();
    let failed_outcome = |seed| ReplicateOutcome {
        seed,
        mse: f64::NAN,
        mcc: f64::NAN,
        auc_or_mspe: f64::NAN,
        chosen_lambda0: f64::NAN,
        selected: vec![],
        runtime_seconds: 0.0,
        baseline_mspe: None,
        failed: true,
    };
    let family = sc.family();
    let (train, test) = match (gen(sc, n, p, seed), gen_test(sc, 100, p, seed)) {
        (Ok(a), Ok(b)) => (a, b),
        _ => return failed_outcome(seed),
    };
    let mut opts = opts.clone();
    opts.seed = seed;
    let (cv, fitted) = match cv_fit(&family, &train.y, &train.x, &opts) {
        Ok(r) => r,
        Err(_) => return failed_outcome(seed),
    };
    let (eta_hat, preds) = match (
        fitted.predict(&test.x, PredictScale::Link),
        fitted.predict(&test.x, PredictScale::Response),
    ) {
        (Ok(a), Ok(b)) => (a, b),
        _ => return failed_outcome(seed),
    };
    let mse = mse_f(&eta_hat.values, &test.eta_true).unwrap_or(f64::NAN);
    let counts = SelectionCounts::from_sets(&fitted.selected, &sc.true_support(), p);
    let mcc_v = mcc(&counts);
    let auc_or_mspe = match sc {
        Scenario::LogisticS5 => auc(&test.y, &preds.values).unwrap_or(f64::NAN),
        _ => mspe(&test.y, &preds.values).unwrap_or(f64::NAN),
    };
    let baseline_mspe = if with_baseline {
        let mut bopts = opts.clone();
        bopts.group_lasso_baseline = true;
        match cv_fit(&family, &train.y, &train.x, &bopts) {
            Ok((_, bfit)) => bfit
                .predict(&test.x, PredictScale::Response)
                .ok()
                .and_then(|bp| mspe(&test.y, &bp.values).ok()),
            Err(_) => None,
        }
    } else {
        None
    };
    ReplicateOutcome {
        seed,
        mse,
        mcc: mcc_v,
        auc_or_mspe,
        chosen_lambda0: cv.chosen_lambda0,
        selected: fitted.selected,
        runtime_seconds: rep_start.elapsed().as_secs_f64(),
        baseline_mspe,
        failed: false,
    }
}

/// Run `reps` replicates with per-replicate seeds `seed..seed+reps`,
/// in parallel, in deterministic output order.
pub fn run_replicates(
    sc: Scenario,
    reps: usize,
    n: usize,
    p: usize,
    seed: u64,
    opts: &CvOptions,
    with_baseline: bool,
) -> Vec<ReplicateOutcome> {
    use rayon::prelude::*;
    (0..reps)
        .into_par_iter()
        .map(|r| run_replicate(sc, n, p, seed + r as u64, opts, with_baseline))
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn cmd_replicate(
    scenario: &str,
    reps: usize,
    n: Option<usize>,
    p: Option<usize>,
    seed: u64,
    grid_str: &str,
    folds: usize,
    hyper_args: &HyperArgs,
    baseline: bool,
    out: &Path,
    start: Instant,
) -> Result<()> {
    if reps == 0 {
        return Err(Error::argument("--reps must be at least 1"));
    }
    let sc = Scenario::parse(scenario)?;
    let (dn, dp) = sc.default_dims();
    let n = n.unwrap_or(dn);
    let p = p.unwrap_or(dp);
    let grid = parse_grid(grid_str)?;
    let spec = BasisSpec::with_df(hyper_args.df, 3)?;
    let opts = cv_options(spec, hyper_args, grid, folds, seed, false);
    let outcomes = run_replicates(sc, reps, n, p, seed, &opts, baseline);

    let mut headers = vec![
        "rep",
        "seed",
        "mse",
        "mcc",
        "auc_or_mspe",
        "chosen_lambda0",
        "n_selected",
        "runtime_s",
        "failed",
    ];
    if baseline {
        headers.push("baseline_mspe");
    }
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(reps + 1);
    for (r, o) in outcomes.iter().enumerate() {
        let mut row = vec![
            r as f64,
            o.seed as f64,
            o.mse,
            o.mcc,
            o.auc_or_mspe,
            o.chosen_lambda0,
            o.selected.len() as f64,
            o.runtime_seconds,
            f64::from(u8::from(o.failed)),
        ];
        if baseline {
            row.push(o.baseline_mspe.unwrap_or(f64::NAN));
        }
        rows.push(row);
    }
    // -1 in the rep column marks the column-median summary row
    let mut summary = vec![
        -1.0,
        -1.0,
        median(&outcomes.iter().map(|o| o.mse).collect::<Vec<_>>()),
        median(&outcomes.iter().map(|o| o.mcc).collect::<Vec<_>>()),
        median(&outcomes.iter().map(|o| o.auc_or_mspe).collect::<Vec<_>>()),
        median(&outcomes.iter().map(|o| o.chosen_lambda0).collect::<Vec<_>>()),
        median(&outcomes.iter().map(|o| o.selected.len() as f64).collect::<Vec<_>>()),
        median(&outcomes.iter().map(|o| o.runtime_seconds).collect::<Vec<_>>()),
        outcomes.iter().filter(|o| o.failed).count() as f64,
    ];
    if baseline {
        summary.push(median(
            &outcomes
                .iter()
                .map(|o| o.baseline_mspe.unwrap_or(f64::NAN))
                .collect::<Vec<_>>(),
        ));
    }
    rows.push(summary);
    write_csv(out, &headers, &rows)?;

    let mut argv = vec![
        "replicate".into(),
        "--scenario".into(),
        sc.name().into(),
        "--reps".into(),
        reps.to_string(),
        "--n".into(),
        n.to_string(),
        "--p".into(),
        p.to_string(),
        "--seed".into(),
        seed.to_string(),
        "--lambda0-grid".into(),
        grid_str.into(),
        "--folds".into(),
        folds.to_string(),
    ];
    argv.extend(hyper_args.argv(p));
    if baseline {
        argv.push("--baseline".into());
    }
    argv.extend(["--out".into(), path_str(out)]);
    let manifest = RunManifest {
        subcommand: "replicate".into(),
        argv,
        seeds: (0..reps).map(|r| seed + r as u64).collect(),
        inputs: vec![],
        outputs: vec![path_str(out)],
        version: VERSION.into(),
        duration_seconds: start.elapsed().as_secs_f64(),
    };
    write_manifest(&manifest, out)?;
    println!(
        "{reps} replicates of {}: median mcc {}, median {} {}",
        sc.name(),
        fmt_f64(median(&outcomes.iter().map(|o| o.mcc).collect::<Vec<_>>())),
        if matches!(sc, Scenario::LogisticS5) { "auc" } else { "mspe" },
        fmt_f64(median(&outcomes.iter().map(|o| o.auc_or_mspe).collect::<Vec<_>>())),
    );
    Ok(())
}

fn cmd_curves(
    model: &Path,
    indices: Option<&str>,
    grid_size: usize,
    out: &Path,
    start: Instant,
) -> Result<()> {
    if grid_size < 2 {
        return Err(Error::argument("--grid-size must be at least 2"));
    }
    let fitted = SbGamFit::from_json(&crate::io::read_string(model)?)?;
    let p = fitted.beta.len();
    let chosen: Vec<usize> = match indices {
        Some(s) => s
            .split(',')
            .map(|tok| {
                let one_based: usize = tok
                    .trim()
                    .parse()
                    .map_err(|_| Error::argument(format!("bad covariate index '{tok}'")))?;
                if one_based == 0 || one_based > p {
                    return Err(Error::argument(format!(
                        "covariate index {one_based} out of range 1..{p}"
                    )));
                }
                Ok(one_based - 1)
            })
            .collect::<Result<_>>()?,
        None => fitted.selected.clone(),
    };
    let mut rows = Vec::with_capacity(chosen.len() * grid_size);
    for &j in &chosen {
        for (x, f) in fitted.extract_function(j, grid_size)? {
            rows.push(vec![(j + 1) as f64, x, f]);
        }
    }
    write_csv(out, &["j", "x", "f"], &rows)?;
    let mut argv = vec!["curves".into(), "--model".into(), path_str(model)];
    if let Some(s) = indices {
        argv.extend(["--indices".into(), s.into()]);
    }
    argv.extend([
        "--grid-size".into(),
        grid_size.to_string(),
        "--out".into(),
        path_str(out),
    ]);
    let manifest = RunManifest {
        subcommand: "curves".into(),
        argv,
        seeds: vec![],
        inputs: vec![path_str(model)],
        outputs: vec![path_str(out)],
        version: VERSION.into(),
        duration_seconds: start.elapsed().as_secs_f64(),
    };
    write_manifest(&manifest, out)?;
    println!(
        "wrote {} curve points for {} function(s) to {}",
        rows.len(),
        chosen.len(),
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_prostate(
    data: &Path,
    labels: &Path,
    repeats: usize,
    seed: u64,
    grid_str: &str,
    folds: usize,
    hyper_args: &HyperArgs,
    out: &Path,
    start: Instant,
) -> Result<()> {
    let Some((x, y)) = load_dataset(data, labels)? else {
        println!(
            "prostate dataset not found at {} / {}; skipping",
            data.display(),
            labels.display()
        );
        return Ok(());
    };
    let grid = parse_grid(grid_str)?;
    let spec = BasisSpec::with_df(hyper_args.df, 3)?;
    let opts = cv_options(spec, hyper_args, grid, folds, seed, false);
    let protocol = SplitProtocol {
        repeats,
        seed,
        ..SplitProtocol::default()
    };
    let (report, _fit) = run_prostate(&x, &y, &protocol, &opts)?;
    let body = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::numerical(format!("report serialization: {e}")))?;
    write_string(out, &body)?;
    let mut argv = vec![
        "prostate".into(),
        "--data".into(),
        path_str(data),
        "--labels".into(),
        path_str(labels),
        "--repeats".into(),
        repeats.to_string(),
        "--seed".into(),
        seed.to_string(),
        "--lambda0-grid".into(),
        grid_str.into(),
        "--folds".into(),
        folds.to_string(),
    ];
    argv.extend(hyper_args.argv(x.ncols()));
    argv.extend(["--out".into(), path_str(out)]);
    let manifest = RunManifest {
        subcommand: "prostate".into(),
        argv,
        seeds: vec![seed],
        inputs: vec![path_str(data), path_str(labels)],
        outputs: vec![path_str(out)],
        version: VERSION.into(),
        duration_seconds: start.elapsed().as_secs_f64(),
    };
    write_manifest(&manifest, out)?;
    println!(
        "full-data fit selected {} genes (study reference: 21); mean AUC over {repeats} repeats: {}",
        report.full_selected.len(),
        fmt_f64(report.mean_auc)
    );
    Ok(())
}
