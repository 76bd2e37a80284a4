use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{CheckEicArgs, Cli, CommonArgs, Command, EstimateArgs, EstimatorArg, Format, QuantileArgs, SimulateArgs};
use crate::data::load_csv;
use crate::eic::{pathwise_derivative_oracle_with, random_score, DiscreteDistribution, EicMutation};
use crate::error::{Error, Result};
use crate::estimator::{tmle_estimate, EstimatorKind};
use crate::inference::{simultaneous_quantile, InferenceOptions};
use crate::learners::{LearnerSpec, Selector};
use crate::nuisance::{NuisanceConfig, NuisanceMode, PropensitySource};
use crate::plugin::{plugin_estimate, PluginDesign};
use crate::simlab::{metrics_table, run_campaign, write_metrics_csv, write_raw_csv, CampaignConfig, DgpSpec};
use crate::targeting::TargetingOptions;

pub(super) fn dispatch(cli: &Cli) -> Result<i32> {
    let common = &cli.common;
    if let Some(alpha) = common.alpha {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidArgument(format!("--alpha must be in (0, 1), got {alpha}")));
        }
    }
    if matches!(common.folds, Some(f) if f < 2) {
        return Err(Error::InvalidArgument("--folds must be >= 2".into()));
    }
    match &cli.command {
        Command::Estimate(args) => estimate(common, args),
        Command::Simulate(args) => simulate(common, args),
        Command::Quantile(args) => quantile(common, args),
        Command::CheckEic(args) => check_eic(common, args),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn emit(common: &CommonArgs, text: &str) -> Result<()> {
    match &common.out {
        Some(path) => std::fs::write(path, text).map_err(io_err(path)),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .map_err(io_err(Path::new("<stdout>")))
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

/// Parses `name` or `name:param`, e.g. `knn:25`, `logistic-l2:0.1`.
pub fn parse_learner(text: &str) -> Result<LearnerSpec> {
    let (name, param) = match text.split_once(':') {
        Some((n, p)) => (n.trim(), Some(p.trim())),
        None => (text.trim(), None),
    };
    let bad = || Error::InvalidArgument(format!("cannot parse learner `{text}`"));
    let num = |p: Option<&str>| -> Result<f64> { p.ok_or_else(bad)?.parse().map_err(|_| bad()) };
    let spec = match (name, param) {
        ("mean", None) => LearnerSpec::Mean,
        ("logistic-main", None) => LearnerSpec::LogisticMain,
        ("logistic-main-interactions", None) => LearnerSpec::LogisticMainInteractions,
        ("logistic-l1", p) => LearnerSpec::LogisticL1 { lambda: num(p)? },
        ("logistic-l2", p) => LearnerSpec::LogisticL2 { lambda: num(p)? },
        ("knn", p) => LearnerSpec::Knn {
            k: p.ok_or_else(bad)?.parse().map_err(|_| bad())?,
        },
        ("polynomial-logistic", p) => LearnerSpec::PolynomialLogistic {
            degree: p.ok_or_else(bad)?.parse().map_err(|_| bad())?,
        },
        _ => return Err(bad()),
    };
    spec.validate()?;
    Ok(spec)
}

fn parse_library(items: &[String]) -> Result<Vec<LearnerSpec>> {
    if items.is_empty() {
        return Err(Error::InvalidArgument("learner library is empty".into()));
    }
    items.iter().map(|s| parse_learner(s)).collect()
}

fn csv_header(path: &Path) -> Result<Vec<String>> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    Ok(reader.headers()?.iter().map(str::to_string).collect())
}

fn propensity_source(known: Option<&str>, g_library: &[String], p: usize) -> Result<PropensitySource> {
    let Some(text) = known else {
        return Ok(PropensitySource::Learned(parse_library(g_library)?));
    };
    if let Ok(c) = text.trim().parse::<f64>() {
        if !(c > 0.0 && c < 1.0) {
            return Err(Error::InvalidArgument(format!("--known-g constant must be in (0, 1), got {c}")));
        }
        return Ok(PropensitySource::Constant(c));
    }
    let spec = DgpSpec::from_name(text.trim()).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "--known-g `{text}` is neither a number nor one of controlled-noise, wellspec, case1, case1-as-printed, case2, case3"
        ))
    })?;
    if p != 4 {
        return Err(Error::InvalidArgument(format!(
            "--known-g {text} needs exactly 4 covariate columns, got {p}"
        )));
    }
    Ok(PropensitySource::Known(spec.known_propensity()))
}

fn estimate(common: &CommonArgs, args: &EstimateArgs) -> Result<i32> {
    if !(args.g_trunc >= 0.0 && args.g_trunc < 0.5) {
        return Err(Error::InvalidArgument(format!("--g-trunc must be in [0, 0.5), got {}", args.g_trunc)));
    }
    let w_cols = if args.w.is_empty() {
        csv_header(&args.csv)?
            .into_iter()
            .filter(|h| *h != args.y && *h != args.a)
            .collect()
    } else {
        args.w.clone()
    };
    let bounds = args.bounds.as_ref().map(|b| (b[0], b[1]));
    let data = load_csv(&args.csv, &args.y, &args.a, &w_cols, bounds)?;
    info!("loaded {} rows, {} covariates", data.n(), data.p());

    let seed = common.seed.unwrap_or(0);
    let inference = InferenceOptions {
        alpha: common.alpha.unwrap_or(0.05),
        include_sqrt: args.sqrt_vte,
        quantile_draws: args.draws,
        seed,
    };
    let report = match args.estimator {
        EstimatorArg::LrPlugin => plugin_estimate(&data, PluginDesign::default(), &inference)?.1,
        EstimatorArg::Tmle | EstimatorArg::CvTmle => {
            let folds = common.folds.unwrap_or(10);
            let cfg = NuisanceConfig {
                q_library: parse_library(&args.q_library)?,
                propensity: propensity_source(args.known_g.as_deref(), &args.g_library, data.p())?,
                mode: NuisanceMode::CrossFitted,
                folds,
                ensemble_folds: folds,
                selector: Selector::Convex,
                g_trunc: args.g_trunc,
                seed,
            };
            let kind = if args.estimator == EstimatorArg::Tmle {
                EstimatorKind::Tmle
            } else {
                EstimatorKind::CvTmle
            };
            let out = tmle_estimate(&data, kind, &cfg, None, &TargetingOptions::default(), &inference)?;
            info!(
                "targeting stopped after {} iterations ({:?})",
                out.targeted.iterations, out.targeted.stopped_reason
            );
            out.report
        }
    };
    let text = match common.format {
        Format::Json => to_json(&report),
        Format::Table => report.to_table(),
    };
    emit(common, &text)?;
    Ok(0)
}

fn simulate(common: &CommonArgs, args: &SimulateArgs) -> Result<i32> {
    let mut cfg = CampaignConfig::load(&args.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(alpha) = common.alpha {
        cfg.alpha = alpha;
    }
    if let Some(folds) = common.folds {
        for e in &mut cfg.estimators {
            e.folds = folds;
        }
    }
    if let Some(p) = args.parallelism {
        cfg.parallelism = p;
    }
    let out = run_campaign(&cfg)?;

    let dir = common.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let metrics_path = dir.join("metrics.csv");
    let raw_path = dir.join("raw.csv");
    let file = File::create(&metrics_path).map_err(io_err(&metrics_path))?;
    write_metrics_csv(&out.metrics, BufWriter::new(file))?;
    let file = File::create(&raw_path).map_err(io_err(&raw_path))?;
    write_raw_csv(&out.records, &out.truth, BufWriter::new(file))?;

    #[derive(Serialize)]
    struct Summary<'a> {
        truth: &'a crate::simlab::TrueParams,
        metrics: &'a [crate::simlab::ReplicateMetrics],
    }
    let text = match common.format {
        Format::Json => to_json(&Summary {
            truth: &out.truth,
            metrics: &out.metrics,
        }),
        Format::Table => metrics_table(&out.truth, &out.metrics),
    };
    std::io::stdout()
        .lock()
        .write_all(text.as_bytes())
        .map_err(io_err(Path::new("<stdout>")))?;
    Ok(0)
}

fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = rec?
            .iter()
            .map(|v| {
                v.parse::<f64>().map_err(|_| Error::NonNumeric {
                    column: "corr".into(),
                    row: i,
                    value: v.to_string(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    let d = rows.len();
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(Error::DimensionMismatch("correlation file must hold a square matrix".into()));
    }
    Ok(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
}

fn quantile(common: &CommonArgs, args: &QuantileArgs) -> Result<i32> {
    let corr = match (args.rho, &args.corr_file) {
        (Some(rho), _) => {
            if !(-1.0..=1.0).contains(&rho) {
                return Err(Error::InvalidArgument(format!("--rho must be in [-1, 1], got {rho}")));
            }
            DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0])
        }
        (None, Some(path)) => read_matrix(path)?,
        (None, None) => unreachable!("clap requires one of --rho, --corr-file"),
    };
    let alpha = common.alpha.unwrap_or(0.05);
    let seed = common.seed.unwrap_or(0);
    let q = simultaneous_quantile(&corr, alpha, args.draws, seed)?;

    #[derive(Serialize)]
    struct QuantileReport {
        q: f64,
        alpha: f64,
        draws: usize,
        seed: u64,
        dim: usize,
    }
    let text = match common.format {
        Format::Json => to_json(&QuantileReport {
            q,
            alpha,
            draws: args.draws,
            seed,
            dim: corr.nrows(),
        }),
        Format::Table => format!("q = {q:.6} (alpha = {alpha}, draws = {}, seed = {seed})\n", args.draws),
    };
    emit(common, &text)?;
    Ok(0)
}

#[derive(Debug, Serialize)]
struct EicFailure {
    case: u64,
    strata: usize,
    probs: Vec<f64>,
    score: Vec<f64>,
    numeric: (f64, f64),
    inner: (f64, f64),
}

#[derive(Debug, Serialize)]
struct EicCheckReport {
    cases: u64,
    passed: u64,
    max_abs_diff: f64,
    tol: f64,
    eps: f64,
    seed: u64,
    failures: Vec<EicFailure>,
}

fn check_eic(common: &CommonArgs, args: &CheckEicArgs) -> Result<i32> {
    if !(args.eps > 0.0 && args.tol > 0.0) {
        return Err(Error::InvalidArgument("--eps and --tol must be positive".into()));
    }
    let seed = common.seed.unwrap_or(0);
    let mutation = if args.inject_d2_sign_flip {
        EicMutation::FlipD2
    } else {
        EicMutation::None
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = EicCheckReport {
        cases: args.cases,
        passed: 0,
        max_abs_diff: 0.0,
        tol: args.tol,
        eps: args.eps,
        seed,
        failures: Vec::new(),
    };
    for case in 0..args.cases {
        let k = rng.random_range(1..=4);
        let p = DiscreteDistribution::random(k, &mut rng);
        let score = random_score(&p, &mut rng);
        let r = pathwise_derivative_oracle_with(&p, &score, args.eps, mutation)?;
        let diff = r.max_abs_diff();
        report.max_abs_diff = report.max_abs_diff.max(diff);
        if diff <= args.tol {
            report.passed += 1;
        } else {
            report.failures.push(EicFailure {
                case,
                strata: k,
                probs: p.probs().to_vec(),
                score,
                numeric: r.numeric,
                inner: r.inner,
            });
        }
    }
    let text = match common.format {
        Format::Json => to_json(&report),
        Format::Table => {
            let mut s = format!(
                "check-eic: {}/{} passed, max |derivative - E[D*S]| = {:.3e} (tol {:e})\n",
                report.passed, report.cases, report.max_abs_diff, report.tol
            );
            for f in &report.failures {
                let _ = writeln!(
                    s,
                    "FAIL case {} ({} strata): numeric ({:.6e}, {:.6e}) vs inner ({:.6e}, {:.6e})",
                    f.case, f.strata, f.numeric.0, f.numeric.1, f.inner.0, f.inner.1
                );
            }
            s
        }
    };
    emit(common, &text)?;
    Ok(if report.failures.is_empty() { 0 } else { 1 })
}
