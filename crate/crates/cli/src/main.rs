use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{CommandFactory, Parser, Subcommand};
use gaussdesign::covmap::{self, discretize, quantile_thresholds};
use gaussdesign::elliptope::{sample, validate, CorrelationFactor};
use gaussdesign::estimators::{ht_continuous, ht_contrast, rescale_treatment, ExperimentRecord, WeightFn};
use gaussdesign::hermite::{continuous_cov_maps, DEFAULT_NODES, DEFAULT_TRUNCATION};
use gaussdesign::inference::{
    normal_ci, randomization_ci_continuous, randomization_ci_discrete, ArmVarianceEstimator, AronowSamiiEstimator,
    ContinuousModel, IntervalMethod, IntervalReport, Regressor, JOINT_PROB_GUARD,
};
use gaussdesign::optimizer::{pgd_gauss, DesignProblem, Norm, StepPolicy};
use gaussdesign::simbench::{run_scenario, DesignName, Generator, SimConfig};
use gaussdesign::Error;
use nalgebra::DMatrix;

mod config;
mod io;

use io::num;

/// Design, sample, estimate and benchmark Gaussianized experiments.
#[derive(Parser)]
#[command(name = "gaussdesign", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct Shared {
    /// Random seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for output files.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// `key = value` file supplying defaults for any flag of the subcommand.
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Which estimand a command targets.
#[derive(clap::Args, Clone)]
struct EstimandArgs {
    /// Number of discrete arms K.
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..=64))]
    arms: Option<u64>,
    /// Single arm k (1-based) for the arm-mean estimand.
    #[arg(long)]
    arm: Option<usize>,
    /// Comma-separated contrast weights, one per arm (default: 1/K each).
    #[arg(long)]
    weights: Option<String>,
    /// Continuous treatment weight: first-derivative, second-derivative or interval.
    #[arg(long)]
    weight: Option<String>,
    /// Treatment mean for derivative weights.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    mu: f64,
    /// Treatment scale for derivative weights.
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Lower end of the interval weight.
    #[arg(long, allow_negative_numbers = true)]
    lower: Option<f64>,
    /// Upper end of the interval weight.
    #[arg(long, allow_negative_numbers = true)]
    upper: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize a Gaussian design for covariate balance.
    Optimize {
        /// Covariate CSV (one row per unit; header optional).
        #[arg(long)]
        covariates: PathBuf,
        /// Optimize for a continuous treatment (requires --weight).
        #[arg(long)]
        continuous: bool,
        #[command(flatten)]
        estimand: EstimandArgs,
        /// Comma-separated polynomial coefficients c0,c1,... of the baseline response Y0(t).
        #[arg(long, default_value = "0,1", allow_hyphen_values = true)]
        baseline: String,
        /// Balance norm: nuc or op.
        #[arg(long, default_value = "nuc")]
        norm: String,
        /// Gradient iterations.
        #[arg(long, default_value_t = 200)]
        iters: usize,
        /// Fixed step size; backtracking line search when omitted.
        #[arg(long)]
        eta: Option<f64>,
        /// Scale covariate rows to unit norm.
        #[arg(long)]
        normalize_rows: bool,
        #[command(flatten)]
        shared: Shared,
    },
    /// Draw treatments from a design factor.
    Sample {
        /// Factor CSV V (Σ = VVᵀ, unit-norm rows, no header).
        #[arg(long)]
        factor: PathBuf,
        /// Number of draws.
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        draws: u64,
        /// Discretize into K equiprobable arms.
        #[arg(long, value_parser = clap::value_parser!(u64).range(2..=64))]
        discretize: Option<u64>,
        /// Map latent treatments onto [A, B].
        #[arg(long, num_args = 2, value_names = ["A", "B"], allow_negative_numbers = true)]
        rescale: Option<Vec<f64>>,
        #[command(flatten)]
        shared: Shared,
    },
    /// Horvitz–Thompson estimate from observed records.
    Estimate {
        /// Records CSV with header unit,T,D,Y,x1..xd.
        #[arg(long)]
        records: PathBuf,
        #[command(flatten)]
        estimand: EstimandArgs,
        #[command(flatten)]
        shared: Shared,
    },
    /// Confidence interval from observed records and the design factor.
    Ci {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        factor: PathBuf,
        #[command(flatten)]
        estimand: EstimandArgs,
        /// normal or randomization.
        #[arg(long, default_value = "randomization")]
        method: String,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Randomization draws.
        #[arg(long, default_value_t = 1000)]
        draws: usize,
        /// Regressors of the continuous imputation model, e.g. "1,x1,x2,t,t^2*x1".
        #[arg(long)]
        regressors: Option<String>,
        #[command(flatten)]
        shared: Shared,
    },
    /// Run a simulation benchmark and write the report CSV.
    Simulate {
        /// Scenario generator name.
        #[arg(long)]
        generator: String,
        /// Comma-separated designs among BG, OG, CR, RR.
        #[arg(long, default_value = "BG,OG")]
        designs: String,
        /// Comma-separated estimand names (default: all).
        #[arg(long, default_value = "")]
        estimands: String,
        #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(100..))]
        replicates: u64,
        /// Gradient iterations for OG.
        #[arg(long, default_value_t = 200)]
        iters: usize,
        /// Outer replicates for interval coverage (0 skips coverage).
        #[arg(long, default_value_t = 0)]
        coverage_replicates: usize,
        #[arg(long, default_value_t = 500)]
        ci_draws: usize,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Rerandomization acceptance probability.
        #[arg(long, default_value_t = 0.01)]
        p_a: f64,
        /// Units in continuous scenarios.
        #[arg(long, default_value_t = 26)]
        n: usize,
        /// Effect strength of the nonlinear continuous scenarios.
        #[arg(long, default_value_t = 1.0)]
        strength: f64,
        #[command(flatten)]
        shared: Shared,
    },
    /// Tabulate an arm covariance map and its derivative on [-1, 1].
    CovmapTable {
        #[arg(long, value_parser = clap::value_parser!(u64).range(2..=64))]
        arms: u64,
        #[arg(long)]
        arm: usize,
        /// Second arm for the cross-arm map.
        #[arg(long)]
        cross: Option<usize>,
        #[arg(long, default_value_t = 101, value_parser = clap::value_parser!(u64).range(2..))]
        grid: u64,
        #[command(flatten)]
        shared: Shared,
    },
}

/// Failure with its exit code: 2 for usage and input errors, 3 for
/// computational failures.
struct Failure {
    code: u8,
    message: String,
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

fn compute(message: impl Into<String>) -> Failure {
    Failure {
        code: 3,
        message: message.into(),
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Domain(_) | Error::Range(_) | Error::Shape(_) | Error::Config(_) => usage(e.to_string()),
            _ => compute(e.to_string()),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let mut args: Vec<String> = std::env::args().collect();
    if let Err(f) = apply_config(&mut args) {
        eprintln!("error: {}", f.message);
        return ExitCode::from(f.code);
    }
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Optimize {
            covariates,
            continuous,
            estimand,
            baseline,
            norm,
            iters,
            eta,
            normalize_rows,
            shared,
        } => cmd_optimize(
            &covariates,
            continuous,
            &estimand,
            &baseline,
            &norm,
            iters,
            eta,
            normalize_rows,
            &shared,
        ),
        Command::Sample {
            factor,
            draws,
            discretize,
            rescale,
            shared,
        } => cmd_sample(
            &factor,
            draws as usize,
            discretize.map(|k| k as usize),
            rescale,
            &shared,
        ),
        Command::Estimate {
            records,
            estimand,
            shared,
        } => cmd_estimate(&records, &estimand, &shared),
        Command::Ci {
            records,
            factor,
            estimand,
            method,
            alpha,
            draws,
            regressors,
            shared,
        } => cmd_ci(
            &records,
            &factor,
            &estimand,
            &method,
            alpha,
            draws,
            regressors.as_deref(),
            &shared,
        ),
        Command::Simulate {
            generator,
            designs,
            estimands,
            replicates,
            iters,
            coverage_replicates,
            ci_draws,
            alpha,
            p_a,
            n,
            strength,
            shared,
        } => {
            let parsed = Generator::parse(&generator, strength)
                .map_err(Failure::from)
                .and_then(|g| {
                    let mut c = SimConfig::new(g);
                    c.designs = split_list(&designs)
                        .iter()
                        .map(|d| DesignName::from_str(d))
                        .collect::<Result<_, _>>()?;
                    c.estimands = split_list(&estimands);
                    c.replicates = replicates as usize;
                    c.seed = shared.seed;
                    c.iterations = iters;
                    c.coverage_replicates = coverage_replicates;
                    c.ci_draws = ci_draws;
                    c.alpha = alpha;
                    c.p_a = p_a;
                    c.n = n;
                    Ok(c)
                });
            parsed.and_then(|c| cmd_simulate(&c, &shared))
        }
        Command::CovmapTable {
            arms,
            arm,
            cross,
            grid,
            shared,
        } => cmd_covmap_table(arms as usize, arm, cross, grid as usize, &shared),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

/// Splices a `--config` file into the argument list.
fn apply_config(args: &mut Vec<String>) -> CmdResult {
    let mut path = None;
    for (i, a) in args.iter().enumerate() {
        if a == "--config" {
            path = Some(args.get(i + 1).cloned().ok_or_else(|| usage("--config needs a path"))?);
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        }
    }
    let Some(path) = path else { return Ok(()) };
    let Some(name) = args.get(1).cloned() else {
        return Ok(());
    };
    let command = Cli::command();
    let Some(sub) = command.find_subcommand(&name) else {
        return Ok(());
    };
    let text = std::fs::read_to_string(&path).map_err(|e| usage(format!("cannot read config {path}: {e}")))?;
    let entries = config::parse(&text).map_err(usage)?;
    config::splice(args, sub, &entries).map_err(usage)
}

fn split_list(s: &str) -> Vec<String> {
    s.split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(String::from)
        .collect()
}

fn parse_floats(s: &str, what: &str) -> Result<Vec<f64>, Failure> {
    split_list(s)
        .iter()
        .map(|v| {
            v.parse::<f64>()
                .map_err(|e| usage(format!("bad {what} value '{v}': {e}")))
        })
        .collect()
}

fn out_path(shared: &Shared, name: &str) -> Result<PathBuf, Failure> {
    std::fs::create_dir_all(&shared.out_dir)
        .map_err(|e| usage(format!("cannot create {}: {e}", shared.out_dir.display())))?;
    Ok(shared.out_dir.join(name))
}

fn read_factor(path: &Path) -> Result<CorrelationFactor, Failure> {
    let v = io::read_matrix(path).map_err(usage)?;
    let report = validate(&(&v * v.transpose()))?;
    if !report.passes {
        return Err(usage(format!(
            "{} is not a valid factor: max diagonal deviation {:.3e}, min eigenvalue {:.3e}",
            path.display(),
            report.max_diag_deviation,
            report.min_eigenvalue
        )));
    }
    Ok(CorrelationFactor::from_rows(v)?)
}

/// Discrete contrast weights from --arms/--arm/--weights.
fn arm_weights(e: &EstimandArgs) -> Result<(usize, Vec<f64>), Failure> {
    let arms = e
        .arms
        .ok_or_else(|| usage("--arms is required for discrete estimands"))? as usize;
    let w = match (&e.arm, &e.weights) {
        (Some(_), Some(_)) => return Err(usage("give either --arm or --weights, not both")),
        (Some(k), None) => {
            if *k == 0 || *k > arms {
                return Err(usage(format!("--arm must be in 1..={arms}, got {k}")));
            }
            let mut w = vec![0.0; arms];
            w[k - 1] = 1.0;
            w
        }
        (None, Some(s)) => {
            let w = parse_floats(s, "weight")?;
            if w.len() != arms {
                return Err(usage(format!("{} weights given for {arms} arms", w.len())));
            }
            w
        }
        (None, None) => vec![1.0 / arms as f64; arms],
    };
    Ok((arms, w))
}

fn weight_fn(e: &EstimandArgs) -> Result<WeightFn, Failure> {
    let kind = e
        .weight
        .as_deref()
        .ok_or_else(|| usage("--weight is required for continuous estimands"))?;
    let w = match kind {
        "first-derivative" => WeightFn::FirstDerivative {
            mu: e.mu,
            sigma: e.sigma,
        },
        "second-derivative" => WeightFn::SecondDerivative {
            mu: e.mu,
            sigma: e.sigma,
        },
        "interval" => match (e.lower, e.upper) {
            (Some(r), Some(l)) => WeightFn::Interval { r, l },
            _ => return Err(usage("interval weight needs --lower and --upper")),
        },
        other => {
            return Err(usage(format!(
                "unknown weight '{other}'; valid weights are first-derivative, second-derivative, interval"
            )))
        }
    };
    w.validate()?;
    Ok(w)
}

fn warn_row_norms(x: &DMatrix<f64>) {
    let worst = x.row_iter().map(|r| (r.norm() - 1.0).abs()).fold(0.0, f64::max);
    if worst > 0.1 {
        eprintln!(
            "warning: covariate rows are not unit norm (max deviation {worst:.3}); pass --normalize-rows to rescale them"
        );
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_optimize(
    covariates: &Path,
    continuous: bool,
    estimand: &EstimandArgs,
    baseline: &str,
    norm: &str,
    iters: usize,
    eta: Option<f64>,
    normalize_rows: bool,
    shared: &Shared,
) -> CmdResult {
    let norm = Norm::from_str(norm)?;
    let mut x = io::read_matrix(covariates).map_err(usage)?;
    if normalize_rows {
        for i in 0..x.nrows() {
            let norm = x.row(i).norm();
            if norm == 0.0 {
                return Err(usage(format!(
                    "covariate row {} is zero and cannot be normalized",
                    i + 1
                )));
            }
            x.row_mut(i).unscale_mut(norm);
        }
    } else {
        warn_row_norms(&x);
    }
    let problem = if continuous {
        let weight = weight_fn(estimand)?;
        let coeffs = parse_floats(baseline, "baseline")?;
        let (loc, scale) = weight.location_scale();
        let y0 = move |z: f64| {
            let t = loc + scale * z;
            coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c)
        };
        let w = weight.clone();
        let maps = continuous_cov_maps(y0, move |z| w.eval(loc + scale * z), DEFAULT_TRUNCATION, DEFAULT_NODES)?;
        DesignProblem::continuous(x, &maps, norm)?
    } else {
        let (arms, w) = arm_weights(estimand)?;
        DesignProblem::discrete(x, &w, arms, norm)?
    };
    let problem = if normalize_rows {
        problem.with_row_normalized()?
    } else {
        problem
    };
    let policy = match eta {
        Some(e) if e > 0.0 && e.is_finite() => StepPolicy::Fixed(e),
        Some(e) => return Err(usage(format!("--eta must be positive, got {e}"))),
        None => StepPolicy::backtracking(),
    };
    let init = CorrelationFactor::identity(problem.n());
    let (factor, trace) = pgd_gauss(&problem, &init, iters, policy)?;

    let factor_path = out_path(shared, "factor.csv")?;
    io::write_matrix(&factor_path, factor.matrix()).map_err(usage)?;
    let sigma_path = out_path(shared, "sigma.csv")?;
    io::write_matrix(&sigma_path, &factor.gram()).map_err(usage)?;
    let trace_path = out_path(shared, "trace.csv")?;
    let mut w = io::writer(&trace_path).map_err(usage)?;
    let write_err = |e: csv::Error| usage(e.to_string());
    w.write_record(["iteration", "objective", "eta", "grad_norm", "halvings"])
        .map_err(write_err)?;
    for r in &trace.records {
        w.write_record([
            r.iteration.to_string(),
            num(r.objective),
            num(r.eta),
            num(r.grad_norm),
            r.halvings.to_string(),
        ])
        .map_err(write_err)?;
    }
    w.flush().map_err(|e| usage(e.to_string()))?;
    println!(
        "objective {} -> {} after {} iterations",
        num(trace.initial_objective),
        num(trace.final_objective()),
        trace.records.len()
    );
    if !trace.subgradient_iterations.is_empty() {
        eprintln!(
            "warning: {} iterations used a subgradient",
            trace.subgradient_iterations.len()
        );
    }
    println!(
        "wrote {}, {}, {}",
        factor_path.display(),
        sigma_path.display(),
        trace_path.display()
    );
    Ok(())
}

fn cmd_sample(
    factor: &Path,
    draws: usize,
    arms: Option<usize>,
    rescale: Option<Vec<f64>>,
    shared: &Shared,
) -> CmdResult {
    let factor = read_factor(factor)?;
    if let Some(r) = &rescale {
        if !(r[0] < r[1]) {
            return Err(usage(format!("--rescale needs A < B, got {} {}", r[0], r[1])));
        }
    }
    let q = arms.map(quantile_thresholds).transpose()?;
    let t = sample(&factor, draws, shared.seed)?;
    let path = out_path(shared, "draws.csv")?;
    let mut w = io::writer(&path).map_err(usage)?;
    let write_err = |e: csv::Error| usage(e.to_string());
    let mut header = vec!["unit", "rep", "T"];
    if q.is_some() {
        header.push("D");
    }
    if rescale.is_some() {
        header.push("T_rescaled");
    }
    w.write_record(&header).map_err(write_err)?;
    for rep in 0..draws {
        for unit in 0..factor.n() {
            let ti = t.draws[(rep, unit)];
            let mut row = vec![(unit + 1).to_string(), (rep + 1).to_string(), num(ti)];
            if let Some(q) = &q {
                row.push(discretize(ti, q)?.to_string());
            }
            if let Some(r) = &rescale {
                row.push(num(rescale_treatment(ti, r[0], r[1])));
            }
            w.write_record(&row).map_err(write_err)?;
        }
    }
    w.flush().map_err(|e| usage(e.to_string()))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_estimate(records: &Path, estimand: &EstimandArgs, shared: &Shared) -> CmdResult {
    let recs = io::read_records(records).map_err(usage)?;
    let (label, value) = if let Some(kind) = &estimand.weight {
        let w = weight_fn(estimand)?;
        (kind.clone(), ht_continuous(&recs, &w)?)
    } else {
        let (arms, w) = arm_weights(estimand)?;
        let label = match estimand.arm {
            Some(k) => format!("arm{k}"),
            None => format!(
                "contrast({})",
                w.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";")
            ),
        };
        (label, ht_contrast(&recs, &w, arms)?)
    };
    let path = out_path(shared, "estimate.csv")?;
    let mut out = io::writer(&path).map_err(usage)?;
    out.write_record(["estimand", "estimate"])
        .map_err(|e| usage(e.to_string()))?;
    out.write_record([label.as_str(), num(value).as_str()])
        .map_err(|e| usage(e.to_string()))?;
    out.flush().map_err(|e| usage(e.to_string()))?;
    println!("{label}: {}", num(value));
    Ok(())
}

/// Parses regressor tokens: `1`, `xj`, `t`, `t^p`, `t*xj`, `t^p*xj`
/// (covariates 1-based).
fn parse_regressors(spec: &str, d: usize) -> Result<Vec<Regressor>, Failure> {
    let covariate = |tok: &str| -> Result<usize, Failure> {
        let j: usize = tok
            .strip_prefix('x')
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| usage(format!("bad regressor term '{tok}'")))?;
        if j == 0 || j > d {
            return Err(usage(format!(
                "regressor {tok} refers to a missing covariate (d = {d})"
            )));
        }
        Ok(j - 1)
    };
    let power = |tok: &str| -> Result<i32, Failure> {
        match tok {
            "t" => Ok(1),
            _ => tok
                .strip_prefix("t^")
                .and_then(|p| p.parse().ok())
                .filter(|p| *p >= 1)
                .ok_or_else(|| usage(format!("bad regressor term '{tok}'"))),
        }
    };
    split_list(spec)
        .iter()
        .map(|tok| {
            if tok == "1" {
                Ok(Regressor::Intercept)
            } else if let Some((a, b)) = tok.split_once('*') {
                Ok(Regressor::TreatmentPowerCovariate(power(a)?, covariate(b)?))
            } else if tok.starts_with('t') {
                Ok(Regressor::TreatmentPower(power(tok)?))
            } else {
                Ok(Regressor::Covariate(covariate(tok)?))
            }
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn cmd_ci(
    records: &Path,
    factor: &Path,
    estimand: &EstimandArgs,
    method: &str,
    alpha: f64,
    draws: usize,
    regressors: Option<&str>,
    shared: &Shared,
) -> CmdResult {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(usage(format!("--alpha must be in (0, 1), got {alpha}")));
    }
    let recs = io::read_records(records).map_err(usage)?;
    let factor = read_factor(factor)?;
    if factor.n() != recs.len() {
        return Err(usage(format!(
            "factor has {} rows for {} records",
            factor.n(),
            recs.len()
        )));
    }
    let method = match method {
        "normal" => IntervalMethod::Normal,
        "randomization" => IntervalMethod::Randomization,
        other => {
            return Err(usage(format!(
                "unknown method '{other}'; valid methods are normal, randomization"
            )))
        }
    };
    let report = if estimand.weight.is_some() {
        let weight = weight_fn(estimand)?;
        if method == IntervalMethod::Normal {
            return Err(usage("continuous estimands support --method randomization only"));
        }
        let d = recs[0].x.len();
        let default_spec = std::iter::once("1".to_string())
            .chain((1..=d).map(|j| format!("x{j}")))
            .chain(std::iter::once("t".to_string()))
            .collect::<Vec<_>>()
            .join(",");
        let regressors = parse_regressors(regressors.unwrap_or(&default_spec), d)?;
        let (location, scale) = weight.location_scale();
        let model = ContinuousModel {
            regressors,
            location,
            scale,
        };
        randomization_ci_continuous(&recs, &factor, &model, &weight, draws, alpha, shared.seed)?
    } else {
        let (arms, w) = arm_weights(estimand)?;
        match method {
            IntervalMethod::Randomization => {
                randomization_ci_discrete(&recs, &factor, arms, &w, draws, alpha, shared.seed)?
            }
            IntervalMethod::Normal => normal_interval(&recs, &factor, arms, &w, estimand.arm, alpha)?,
        }
    };
    let path = out_path(shared, "ci.csv")?;
    let mut out = io::writer(&path).map_err(usage)?;
    let write_err = |e: csv::Error| usage(e.to_string());
    out.write_record(["estimate", "lower", "upper", "alpha", "method", "replicates"])
        .map_err(write_err)?;
    out.write_record([
        num(report.point),
        num(report.lower),
        num(report.upper),
        num(report.alpha),
        match report.method {
            IntervalMethod::Normal => "normal".to_string(),
            IntervalMethod::Randomization => "randomization".to_string(),
        },
        report.replicates.to_string(),
    ])
    .map_err(write_err)?;
    out.flush().map_err(|e| usage(e.to_string()))?;
    println!("[{}, {}]", num(report.lower), num(report.upper));
    Ok(())
}

fn normal_interval(
    recs: &[ExperimentRecord],
    factor: &CorrelationFactor,
    arms: usize,
    w: &[f64],
    arm: Option<usize>,
    alpha: f64,
) -> Result<IntervalReport, Failure> {
    let d = gaussdesign::estimators::record_arms(recs, arms)?;
    let y: Vec<f64> = recs.iter().map(|r| r.y).collect();
    let sigma = factor.gram();
    let var = match arm {
        Some(k) => ArmVarianceEstimator::new(&sigma, k, arms)?.estimate(&d, &y),
        None => AronowSamiiEstimator::new(&sigma, w, arms)?.estimate(&d, &y),
    };
    let v = var.point.filter(|_| var.well_defined).ok_or_else(|| {
        compute(format!(
            "variance estimator not well defined: minimum joint probability {:.3e} is below the guard {JOINT_PROB_GUARD:e}",
            var.min_joint_prob
        ))
    })?;
    let tau = ht_contrast(recs, w, arms)?;
    Ok(normal_ci(tau, v.max(0.0), recs.len(), alpha)?)
}

fn cmd_simulate(config: &SimConfig, shared: &Shared) -> CmdResult {
    let report = run_scenario(config)?;
    let path = out_path(shared, "report.csv")?;
    let mut w = io::writer(&path).map_err(usage)?;
    let write_err = |e: csv::Error| usage(e.to_string());
    w.write_record([
        "scenario",
        "design",
        "estimand",
        "mse",
        "balance_objective_nuc",
        "coverage",
        "mean_ci_width",
        "replicates",
    ])
    .map_err(write_err)?;
    for r in &report.rows {
        w.write_record([
            r.scenario.clone(),
            r.design.clone(),
            r.estimand.clone(),
            num(r.mse),
            num(r.balance_objective_nuc),
            num(r.coverage),
            num(r.mean_ci_width),
            r.replicates.to_string(),
        ])
        .map_err(write_err)?;
    }
    w.flush().map_err(|e| usage(e.to_string()))?;
    if config.designs.contains(&DesignName::Rr) {
        eprintln!("note: rerandomization thresholds treat the pairwise arm comparisons as independent");
    }
    println!("wrote {} ({} rows)", path.display(), report.rows.len());
    Ok(())
}

fn cmd_covmap_table(arms: usize, arm: usize, cross: Option<usize>, grid: usize, shared: &Shared) -> CmdResult {
    let map = match cross {
        Some(l) if l != arm => covmap::f_cross(arms, arm, l)?,
        _ => covmap::f_arm(arms, arm)?,
    };
    let path = out_path(shared, "covmap.csv")?;
    let mut w = io::writer(&path).map_err(usage)?;
    let write_err = |e: csv::Error| usage(e.to_string());
    w.write_record(["rho", "f", "fprime"]).map_err(write_err)?;
    for i in 0..grid {
        let rho = if i + 1 == grid {
            1.0
        } else {
            -1.0 + 2.0 * i as f64 / (grid - 1) as f64
        };
        w.write_record([num(rho), num(map.eval(rho)), num(map.deriv(rho))])
            .map_err(write_err)?;
    }
    w.flush().map_err(|e| usage(e.to_string()))?;
    println!("wrote {} ({grid} rows)", path.display());
    Ok(())
}
