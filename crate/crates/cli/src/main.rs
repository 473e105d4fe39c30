//! `censreg`: generate synthetic censored data, estimate censoring survival
//! curves, build IPCW weights, fit weighted learners, evaluate models and
//! run the benchmark sweep.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use censored_regression::censoring::{CensoringEstimator, CensoringVariant};
use censored_regression::data::{CensoredDataset, RestrictionDomain, TruthColumns};
use censored_regression::error::{Error, Result};
use censored_regression::experiment::{
    calibrate_grid, mix_seed, run, summarize, write_summary_csv, ExperimentConfig,
};
use censored_regression::kernel::{default_bandwidth, KernelFamily, KernelSpec};
use censored_regression::learners::{fit, FittedModel, LearnerSpec};
use censored_regression::metrics::{concordance_detail, evaluate_model, EvaluationReport};
use censored_regression::synthetic::{
    calibrate_lambda, generate, to_dataset, Calibration, CoxModel,
};
use censored_regression::weights::{compute_weights, Bandwidth, LossVariant, WeightParams};

#[derive(Parser)]
#[command(
    name = "censreg",
    version,
    about = "Regression under random right censorship"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic Cox-model dataset as CSV.
    Generate(GenerateArgs),
    /// Estimate the censoring survival curve S_C(t | x) on a time grid.
    EstimateSurvival(EstimateArgs),
    /// Compute per-observation IPCW weights.
    Weights(WeightsArgs),
    /// Fit a weighted learner and save it as model.json.
    Fit(FitArgs),
    /// Evaluate a saved model on a test CSV.
    Evaluate(EvaluateArgs),
    /// Run a benchmark sweep described by a TOML config.
    Benchmark(BenchmarkArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Feature dimension.
    #[arg(long, default_value_t = 4)]
    d: usize,
    /// Number of observations.
    #[arg(long)]
    n: usize,
    /// Target observed-event rate p (the mean of the event indicator), in (0, 1).
    #[arg(long, conflicts_with = "lambda")]
    target_p: Option<f64>,
    /// Censoring scale; skips calibration when given.
    #[arg(long)]
    lambda: Option<f64>,
    /// Monte-Carlo draws for the calibration.
    #[arg(long, default_value_t = 200_000)]
    mc_n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Append the true duration and censoring time columns.
    #[arg(long)]
    with_truth: bool,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    input: PathBuf,
    /// Estimator: kernel | knn | km.
    #[arg(long, default_value = "kernel")]
    variant: String,
    /// Bandwidth: `auto` or a positive number.
    #[arg(long, default_value = "auto")]
    bandwidth: String,
    /// Kernel family for the kernel variant.
    #[arg(long, default_value = "epanechnikov_product")]
    kernel: String,
    #[arg(long, default_value_t = 5)]
    neighbors: usize,
    /// Time grid as start:end:steps.
    #[arg(long)]
    grid: String,
    /// Covariate point, comma separated; required for kernel and knn.
    #[arg(long)]
    at_x: Option<String>,
    /// Remove the jump at the largest censored time.
    #[arg(long)]
    drop_last_jump: bool,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct WeightsArgs {
    #[arg(long)]
    input: PathBuf,
    /// Loss variant tag (ipcw, ipcw_loo, ipcw_knn, ipcw_stute, naive, observed).
    #[arg(long)]
    variant: String,
    #[arg(long)]
    normalize: bool,
    #[arg(long, default_value = "auto")]
    bandwidth: String,
    #[arg(long, default_value = "epanechnikov_product")]
    kernel: String,
    #[arg(long, default_value_t = 5)]
    neighbors: usize,
    /// Restrict weights to observations with time <= tau.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    input: PathBuf,
    /// Loss variant tag.
    #[arg(long)]
    loss: String,
    /// Learner family: linear | ridge | kernel_ridge | tree_forest.
    #[arg(long)]
    learner: String,
    #[arg(long, default_value_t = 1e-3)]
    ridge_lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    rbf_gamma: f64,
    #[arg(long, default_value_t = 100)]
    n_trees: usize,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long, default_value_t = 1e-6)]
    min_leaf_weight: f64,
    #[arg(long, default_value_t = 0)]
    bootstrap_seed: u64,
    #[arg(long, default_value = "auto")]
    bandwidth: String,
    #[arg(long, default_value = "epanechnikov_product")]
    kernel: String,
    #[arg(long, default_value_t = 5)]
    neighbors: usize,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    model_out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// Comma list among: l2, concordance.
    #[arg(long, default_value = "l2,concordance")]
    metrics: String,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Worker threads for the sweep.
    #[arg(long)]
    jobs: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::EstimateSurvival(args) => cmd_estimate(args),
        Command::Weights(args) => cmd_weights(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Benchmark(args) => cmd_benchmark(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn parse_bandwidth(text: &str) -> Result<Bandwidth> {
    if text == "auto" {
        return Ok(Bandwidth::Auto);
    }
    let h: f64 = text.parse().map_err(|_| {
        Error::InvalidParameter(format!(
            "bandwidth must be 'auto' or a number, got '{text}'"
        ))
    })?;
    Ok(Bandwidth::Fixed(h))
}

fn parse_point(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidParameter(format!("cannot parse coordinate '{v}'")))
        })
        .collect()
}

fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 3 {
        return Err(Error::InvalidParameter(format!(
            "grid must be start:end:steps, got '{text}'"
        )));
    }
    let start: f64 = parts[0]
        .parse()
        .map_err(|_| Error::InvalidParameter(format!("bad grid start '{}'", parts[0])))?;
    let end: f64 = parts[1]
        .parse()
        .map_err(|_| Error::InvalidParameter(format!("bad grid end '{}'", parts[1])))?;
    let steps: usize = parts[2]
        .parse()
        .map_err(|_| Error::InvalidParameter(format!("bad grid steps '{}'", parts[2])))?;
    if steps < 2 || end <= start {
        return Err(Error::InvalidParameter(
            "grid needs end > start and at least 2 steps".to_string(),
        ));
    }
    Ok((0..steps)
        .map(|i| start + (end - start) * i as f64 / (steps as f64 - 1.0))
        .collect())
}

fn read_dataset(path: &Path) -> Result<(CensoredDataset, Option<TruthColumns>)> {
    CensoredDataset::read_csv_path(path)
}

fn cmd_generate(args: GenerateArgs) -> Result<()> {
    let template = CoxModel::new(args.d, 1.0)?;
    let (lambda, note) = match (args.lambda, args.target_p) {
        (Some(l), _) => (l, None),
        (None, Some(p)) => {
            let seed = mix_seed(&[args.seed, 0xCA11]);
            let cal = calibrate_lambda(&template, p, args.mc_n, seed)?;
            (cal.lambda, Some(cal))
        }
        (None, None) => {
            return Err(Error::InvalidParameter(
                "pass either --target-p or --lambda".to_string(),
            ))
        }
    };
    let model = template.with_lambda(lambda);
    let samples = generate(&model, args.n, args.seed);
    let (dataset, truth) = to_dataset(&samples)?;
    dataset.write_csv_path(&args.output, args.with_truth.then_some(&truth))?;
    let observed = samples.iter().filter(|s| s.delta).count();
    if let Some(cal) = note {
        let edge = if cal.at_bracket_edge {
            " (bracket edge; target not reachable)"
        } else {
            ""
        };
        println!(
            "calibrated lambda = {} with event rate {:.4}{edge}",
            cal.lambda, cal.achieved_p
        );
    }
    println!(
        "wrote {} observations ({} observed, {} censored) to {}",
        args.n,
        observed,
        args.n - observed,
        args.output.display()
    );
    Ok(())
}

fn cmd_estimate(args: EstimateArgs) -> Result<()> {
    let (data, _) = read_dataset(&args.input)?;
    let variant = match args.variant.as_str() {
        "kernel" => {
            let h = match parse_bandwidth(&args.bandwidth)? {
                Bandwidth::Auto => default_bandwidth(&data)?,
                Bandwidth::Fixed(h) => h,
            };
            CensoringVariant::KernelBeran {
                kernel: KernelSpec::new(KernelFamily::parse(&args.kernel)?),
                bandwidth: h,
            }
        }
        "knn" => CensoringVariant::Knn {
            neighbors: args.neighbors,
        },
        "km" => CensoringVariant::UnconditionalKm,
        other => {
            return Err(Error::InvalidParameter(format!(
                "variant must be kernel, knn or km, got '{other}'"
            )))
        }
    };
    let needs_x = !matches!(variant, CensoringVariant::UnconditionalKm);
    let x = match (&args.at_x, needs_x) {
        (Some(text), _) => parse_point(text)?,
        (None, false) => vec![0.0; data.dim()],
        (None, true) => {
            return Err(Error::InvalidParameter(
                "--at-x is required for the kernel and knn variants".to_string(),
            ))
        }
    };
    if x.len() != data.dim() {
        return Err(Error::DimensionMismatch(format!(
            "--at-x has {} coordinates, data has dimension {}",
            x.len(),
            data.dim()
        )));
    }
    let est = CensoringEstimator::fit(&data, variant, args.drop_last_jump)?;
    let grid = parse_grid(&args.grid)?;
    let mut wtr = csv::Writer::from_path(&args.output)?;
    wtr.write_record(["t", "s_hat"])?;
    for t in &grid {
        let s = est.query(*t, &x, false)?;
        wtr.write_record(&[t.to_string(), s.to_string()])?;
    }
    wtr.flush()?;
    println!(
        "wrote {} grid points to {}",
        grid.len(),
        args.output.display()
    );
    Ok(())
}

fn weight_params(kernel: &str, bandwidth: &str, neighbors: usize) -> Result<WeightParams> {
    Ok(WeightParams {
        kernel: KernelSpec::new(KernelFamily::parse(kernel)?),
        bandwidth: parse_bandwidth(bandwidth)?,
        neighbors,
        oracle_censoring: None,
        y_true: None,
    })
}

fn parse_csv_variant(tag: &str) -> Result<LossVariant> {
    let variant = LossVariant::parse(tag)?;
    if variant.needs_truth() {
        return Err(Error::InvalidParameter(format!(
            "variant '{tag}' needs the synthetic model; it is not available for CSV data"
        )));
    }
    Ok(variant)
}

fn cmd_weights(args: WeightsArgs) -> Result<()> {
    let (data, _) = read_dataset(&args.input)?;
    let variant = parse_csv_variant(&args.variant)?;
    let params = weight_params(&args.kernel, &args.bandwidth, args.neighbors)?;
    let domain = match args.tau {
        Some(tau) => Some(RestrictionDomain::new(tau, None)?),
        None => None,
    };
    let w = compute_weights(&data, variant, &params, domain.as_ref(), args.normalize)?;
    let mut wtr = csv::Writer::from_path(&args.output)?;
    wtr.write_record(["index", "weight"])?;
    for (i, wi) in w.weights().iter().enumerate() {
        wtr.write_record(&[i.to_string(), wi.to_string()])?;
    }
    wtr.flush()?;
    let diag = w.diagnostics();
    println!(
        "wrote {} weights (sum {}) to {}; zero-weight events: {}, out-of-support queries: {}",
        w.len(),
        w.sum(),
        args.output.display(),
        diag.zero_weight_events,
        diag.out_of_support_queries
    );
    Ok(())
}

fn cmd_fit(args: FitArgs) -> Result<()> {
    let (data, _) = read_dataset(&args.input)?;
    let variant = parse_csv_variant(&args.loss)?;
    let params = weight_params(&args.kernel, &args.bandwidth, args.neighbors)?;
    let domain = match args.tau {
        Some(tau) => Some(RestrictionDomain::new(tau, None)?),
        None => None,
    };
    let spec = match args.learner.as_str() {
        "linear" => LearnerSpec::Linear,
        "ridge" => LearnerSpec::Ridge {
            lambda: args.ridge_lambda,
        },
        "kernel_ridge" => LearnerSpec::KernelRidge {
            lambda: args.ridge_lambda,
            gamma: args.rbf_gamma,
        },
        "tree_forest" => LearnerSpec::TreeForest {
            n_trees: args.n_trees,
            max_depth: args.max_depth,
            min_leaf_weight: args.min_leaf_weight,
            bootstrap_seed: args.bootstrap_seed,
        },
        other => {
            return Err(Error::InvalidParameter(format!(
                "learner must be linear, ridge, kernel_ridge or tree_forest, got '{other}'"
            )))
        }
    };
    let w = compute_weights(&data, variant, &params, domain.as_ref(), false)?;
    let model = fit(&data, &w, &spec)?;
    fs::write(&args.model_out, model.to_json()?)?;
    println!(
        "fitted {} on {} observations with the {} loss; model saved to {}",
        spec.name(),
        data.n(),
        variant.name(),
        args.model_out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct EvaluateOutput {
    l2_error: Option<f64>,
    rmse: Option<f64>,
    concordance: Option<f64>,
    comparable_pairs: Option<u64>,
    concordance_per_event: Option<f64>,
    n_test: usize,
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let model = FittedModel::from_json(&fs::read_to_string(&args.model)?)?;
    let (test, truth) = read_dataset(&args.test)?;
    let wanted: Vec<&str> = args.metrics.split(',').map(str::trim).collect();
    for m in &wanted {
        if !matches!(*m, "l2" | "concordance") {
            return Err(Error::InvalidParameter(format!("unknown metric '{m}'")));
        }
    }
    let mut out = EvaluateOutput {
        l2_error: None,
        rmse: None,
        concordance: None,
        comparable_pairs: None,
        concordance_per_event: None,
        n_test: test.n(),
    };
    if wanted.contains(&"l2") {
        let truths: Vec<f64> = match &truth {
            Some(t) => t.y_true.clone(),
            None => {
                if test.iter().any(|o| !o.delta) {
                    return Err(Error::InvalidParameter(
                        "the L2 error needs fully observed test data: either all event = 1 \
                         or a y_true column"
                            .to_string(),
                    ));
                }
                test.times()
            }
        };
        let report: EvaluationReport = evaluate_model(&model, &test, &truths)?;
        out.l2_error = Some(report.l2_error);
        out.rmse = Some(report.rmse);
    }
    if wanted.contains(&"concordance") {
        let predictions = test
            .iter()
            .map(|o| model.predict(&o.x))
            .collect::<Result<Vec<_>>>()?;
        let c = concordance_detail(&predictions, &test)?;
        out.concordance = Some(c.index);
        out.comparable_pairs = Some(c.comparable_pairs);
        out.concordance_per_event = Some(c.per_event_normalized);
    }
    fs::write(&args.output, serde_json::to_string_pretty(&out)?)?;
    println!("wrote report to {}", args.output.display());
    Ok(())
}

/// Calibrations are cached next to the benchmark output, keyed by everything
/// that determines them.
#[derive(Serialize, Deserialize, Default)]
struct CalibrationCache {
    entries: Vec<CacheEntry>,
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    d: usize,
    target_p: f64,
    mc_n: usize,
    base_seed: u64,
    calibration: Calibration,
}

fn cmd_benchmark(args: BenchmarkArgs) -> Result<()> {
    let text = fs::read_to_string(&args.config)?;
    let config: ExperimentConfig =
        toml::from_str(&text).map_err(|e| Error::Parse(format!("bad config: {e}")))?;
    config.validate()?;

    let cache_path = args
        .output
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join("calibration_cache.json");
    let mut cache: CalibrationCache = fs::read_to_string(&cache_path)
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok())
        .unwrap_or_default();

    let mut calibrations = Vec::with_capacity(config.p_grid.len());
    let mut missing = false;
    for &p in &config.p_grid {
        let hit = cache.entries.iter().find(|e| {
            e.d == config.d
                && e.target_p == p
                && e.mc_n == config.calibration_mc_n
                && e.base_seed == config.base_seed
        });
        match hit {
            Some(e) => calibrations.push(e.calibration),
            None => {
                missing = true;
                break;
            }
        }
    }
    if missing {
        calibrations = calibrate_grid(&config)?;
        for (&p, cal) in config.p_grid.iter().zip(&calibrations) {
            cache.entries.retain(|e| {
                !(e.d == config.d
                    && e.target_p == p
                    && e.mc_n == config.calibration_mc_n
                    && e.base_seed == config.base_seed)
            });
            cache.entries.push(CacheEntry {
                d: config.d,
                target_p: p,
                mc_n: config.calibration_mc_n,
                base_seed: config.base_seed,
                calibration: *cal,
            });
        }
        fs::write(&cache_path, serde_json::to_string_pretty(&cache)?)?;
    }
    for (p, cal) in config.p_grid.iter().zip(&calibrations) {
        let edge = if cal.at_bracket_edge {
            " (bracket edge)"
        } else {
            ""
        };
        println!(
            "p = {p}: lambda = {}, achieved event rate {:.4}{edge}",
            cal.lambda, cal.achieved_p
        );
    }

    let result = run(&config, &calibrations, args.jobs)?;
    let file = fs::File::create(&args.output)?;
    result.write_csv(file)?;
    println!(
        "wrote {} rows ({} failed) to {}",
        result.rows.len(),
        result.n_failed(),
        args.output.display()
    );
    if let Some(summary_path) = args.summary {
        let summary = summarize(&result);
        write_summary_csv(&summary, fs::File::create(&summary_path)?)?;
        println!(
            "wrote {} summary rows to {}",
            summary.len(),
            summary_path.display()
        );
    }
    Ok(())
}
