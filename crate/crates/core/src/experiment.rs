//! Replicated benchmark harness: loss variants x learners x censorship
//! levels x sample sizes, with derived seeds so every cell is independently
//! reproducible and the output is byte-identical across runs and thread
//! counts.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::time::Instant;

use crate::data::CensoredDataset;
use crate::error::{Error, Result};
use crate::kernel::{KernelFamily, KernelSpec};
use crate::learners::{fit, LearnerSpec};
use crate::metrics::concordance_detail;
use crate::synthetic::{
    calibrate_lambda, generate, generate_uncensored, to_dataset, Calibration, CoxModel,
};
use crate::weights::{compute_weights, Bandwidth, LossVariant, WeightParams};

fn default_neighbors() -> usize {
    5
}

fn default_mc_n() -> usize {
    200_000
}

fn default_kernel_family() -> KernelFamily {
    KernelFamily::EpanechnikovProduct
}

/// Declarative description of a benchmark sweep.
///
/// `p_grid` entries are target observed-event rates in (0, 1); the value 1.0
/// is also accepted and means "no censoring at all" (every loss coincides
/// there). Calibration of the censoring scale happens once per grid entry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub d: usize,
    pub n_grid: Vec<usize>,
    pub p_grid: Vec<f64>,
    pub variants: Vec<LossVariant>,
    pub learners: Vec<LearnerSpec>,
    pub n_replicates: usize,
    pub test_size: usize,
    pub base_seed: u64,
    #[serde(default = "default_neighbors")]
    pub knn_neighbors: usize,
    #[serde(default = "default_mc_n")]
    pub calibration_mc_n: usize,
    #[serde(default = "default_kernel_family")]
    pub kernel_family: KernelFamily,
    /// Fixed bandwidth; absent means the 5 sigma n^(-1/(d+2)) rule.
    #[serde(default)]
    pub bandwidth: Option<f64>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::InvalidParameter("d must be at least 1".to_string()));
        }
        if self.n_grid.is_empty() || self.p_grid.is_empty() {
            return Err(Error::InvalidParameter(
                "n_grid and p_grid must be nonempty".to_string(),
            ));
        }
        if self.variants.is_empty() || self.learners.is_empty() {
            return Err(Error::InvalidParameter(
                "variants and learners must be nonempty".to_string(),
            ));
        }
        if self.n_replicates == 0 {
            return Err(Error::InvalidParameter(
                "n_replicates must be at least 1".to_string(),
            ));
        }
        if self.test_size == 0 {
            return Err(Error::InvalidParameter(
                "test_size must be at least 1".to_string(),
            ));
        }
        if self.n_grid.iter().any(|&n| n < 2) {
            return Err(Error::InvalidParameter(
                "training sizes must be at least 2".to_string(),
            ));
        }
        for p in &self.p_grid {
            if !(*p > 0.0 && *p <= 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "target event rates must lie in (0, 1], got {p}"
                )));
            }
        }
        for l in &self.learners {
            l.validate()?;
        }
        Ok(())
    }
}

/// One benchmark cell outcome. The wall time is kept out of the CSV so two
/// runs of the same configuration produce byte-identical files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub n: usize,
    pub target_p: f64,
    pub lambda: f64,
    pub achieved_p: f64,
    pub variant: LossVariant,
    pub learner: String,
    pub replicate: usize,
    pub seed: u64,
    pub l2_error: Option<f64>,
    pub rmse: Option<f64>,
    pub concordance: Option<f64>,
    pub zero_weight_events: u64,
    pub out_of_support_queries: u64,
    pub failed: bool,
    pub message: String,
    #[serde(skip)]
    pub wall_ms: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub rows: Vec<ExperimentRow>,
}

/// Seed mixing: fold each value through the SplitMix64 finalizer so cells
/// are decorrelated but fully determined by their coordinates.
pub fn mix_seed(values: &[u64]) -> u64 {
    let mut state: u64 = 0x9E37_79B9_7F4A_7C15;
    for &v in values {
        state = splitmix64(state ^ v);
    }
    state
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Calibrate the censoring scale for every entry of `p_grid`.
/// Entries equal to 1.0 skip calibration (no censoring is applied).
pub fn calibrate_grid(config: &ExperimentConfig) -> Result<Vec<Calibration>> {
    config.validate()?;
    let template = CoxModel::new(config.d, 1.0)?;
    config
        .p_grid
        .iter()
        .enumerate()
        .map(|(p_idx, &p)| {
            if p >= 1.0 {
                return Ok(Calibration {
                    lambda: 0.0,
                    achieved_p: 1.0,
                    at_bracket_edge: false,
                });
            }
            let seed = mix_seed(&[config.base_seed, 0xCA11, p_idx as u64]);
            calibrate_lambda(&template, p, config.calibration_mc_n, seed)
        })
        .collect()
}

/// Run the sweep. `jobs` bounds the worker pool (None lets rayon pick).
/// Rows come back sorted by (n, p, replicate, variant, learner) no matter
/// how the pool schedules them.
pub fn run(
    config: &ExperimentConfig,
    calibrations: &[Calibration],
    jobs: Option<usize>,
) -> Result<ExperimentResult> {
    config.validate()?;
    if calibrations.len() != config.p_grid.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} calibrations for {} censorship levels",
            calibrations.len(),
            config.p_grid.len()
        )));
    }
    let mut cells = Vec::new();
    for n_idx in 0..config.n_grid.len() {
        for p_idx in 0..config.p_grid.len() {
            for rep in 0..config.n_replicates {
                cells.push((n_idx, p_idx, rep));
            }
        }
    }

    let work = |&(n_idx, p_idx, rep): &(usize, usize, usize)| -> Vec<ExperimentRow> {
        run_cell(config, calibrations, n_idx, p_idx, rep)
    };

    let nested: Vec<Vec<ExperimentRow>> = match jobs {
        Some(threads) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| Error::InvalidParameter(format!("cannot build worker pool: {e}")))?;
            pool.install(|| cells.par_iter().map(work).collect())
        }
        None => cells.par_iter().map(work).collect(),
    };
    Ok(ExperimentResult {
        rows: nested.into_iter().flatten().collect(),
    })
}

/// Calibrate and run in one call.
pub fn run_all(config: &ExperimentConfig, jobs: Option<usize>) -> Result<ExperimentResult> {
    let calibrations = calibrate_grid(config)?;
    run(config, &calibrations, jobs)
}

fn run_cell(
    config: &ExperimentConfig,
    calibrations: &[Calibration],
    n_idx: usize,
    p_idx: usize,
    rep: usize,
) -> Vec<ExperimentRow> {
    let n = config.n_grid[n_idx];
    let target_p = config.p_grid[p_idx];
    let cal = &calibrations[p_idx];
    let uncensored_cell = target_p >= 1.0;
    let model = CoxModel::new(config.d, cal.lambda).expect("validated dimension");

    let data_seed = mix_seed(&[config.base_seed, 1, n as u64, p_idx as u64, rep as u64]);
    let test_seed = mix_seed(&[config.base_seed, 2, n as u64, p_idx as u64, rep as u64]);

    let train_samples = if uncensored_cell {
        generate_uncensored(&model, n, data_seed)
    } else {
        generate(&model, n, data_seed)
    };
    let test_samples = generate_uncensored(&model, config.test_size, test_seed);

    let mut rows = Vec::with_capacity(config.variants.len() * config.learners.len());
    let base_row = |variant: LossVariant, learner: &LearnerSpec, seed: u64| ExperimentRow {
        n,
        target_p,
        lambda: cal.lambda,
        achieved_p: cal.achieved_p,
        variant,
        learner: learner.name().to_string(),
        replicate: rep,
        seed,
        l2_error: None,
        rmse: None,
        concordance: None,
        zero_weight_events: 0,
        out_of_support_queries: 0,
        failed: false,
        message: String::new(),
        wall_ms: 0.0,
    };

    let prepared = to_dataset(&train_samples).and_then(|(train, truth)| {
        let test = CensoredDataset::from_columns(
            test_samples.iter().map(|s| s.x.clone()).collect(),
            test_samples.iter().map(|s| s.y_true).collect(),
            vec![true; test_samples.len()],
        )?;
        Ok((train, truth, test))
    });
    let (train, truth, test) = match prepared {
        Ok(v) => v,
        Err(e) => {
            for variant in &config.variants {
                for learner in &config.learners {
                    let mut row = base_row(*variant, learner, data_seed);
                    row.failed = true;
                    row.message = e.to_string();
                    rows.push(row);
                }
            }
            return rows;
        }
    };
    let oracle_censoring = if uncensored_cell {
        std::sync::Arc::new(|_t: f64, _x: &[f64]| 1.0) as crate::censoring::OracleSurvival
    } else {
        model.oracle_censoring()
    };
    let params = WeightParams {
        kernel: KernelSpec::new(config.kernel_family),
        bandwidth: config.bandwidth.map_or(Bandwidth::Auto, Bandwidth::Fixed),
        neighbors: config.knn_neighbors,
        oracle_censoring: Some(oracle_censoring),
        y_true: Some(truth.y_true.clone()),
    };

    for variant in &config.variants {
        let started = Instant::now();
        let weight_result = compute_weights(&train, *variant, &params, None, false);
        let weights_ms = started.elapsed().as_secs_f64() * 1e3;
        for (learner_idx, learner) in config.learners.iter().enumerate() {
            let learner_seed = mix_seed(&[data_seed, 3, learner_idx as u64]);
            let mut row = base_row(*variant, learner, learner_seed);
            let cell_start = Instant::now();
            let outcome = weight_result
                .as_ref()
                .map_err(|e| e.to_string())
                .and_then(|w| {
                    row.zero_weight_events = w.diagnostics().zero_weight_events;
                    row.out_of_support_queries = w.diagnostics().out_of_support_queries;
                    let spec = learner.clone().with_seed(learner_seed);
                    let model = fit(&train, w, &spec).map_err(|e| e.to_string())?;
                    let mut sq = 0.0;
                    let mut predictions = Vec::with_capacity(test.n());
                    for (obs, sample) in test.iter().zip(&test_samples) {
                        let pred = model.predict(&obs.x).map_err(|e| e.to_string())?;
                        let r = sample.y_true - pred;
                        sq += r * r;
                        predictions.push(pred);
                    }
                    let l2 = sq / test.n() as f64;
                    let concordance = concordance_detail(&predictions, &test)
                        .ok()
                        .map(|c| c.index);
                    Ok((l2, concordance))
                });
            match outcome {
                Ok((l2, concordance)) => {
                    row.l2_error = Some(l2);
                    row.rmse = Some(l2.sqrt());
                    row.concordance = concordance;
                }
                Err(message) => {
                    row.failed = true;
                    row.message = message;
                }
            }
            row.wall_ms = weights_ms + cell_start.elapsed().as_secs_f64() * 1e3;
            rows.push(row);
        }
    }
    rows
}

const RESULT_COLUMNS: [&str; 15] = [
    "n",
    "target_p",
    "lambda",
    "achieved_p",
    "variant",
    "learner",
    "replicate",
    "seed",
    "l2_error",
    "rmse",
    "concordance",
    "zero_weight_events",
    "out_of_support_queries",
    "status",
    "message",
];

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl ExperimentResult {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(RESULT_COLUMNS)?;
        for row in &self.rows {
            wtr.write_record(&[
                row.n.to_string(),
                row.target_p.to_string(),
                row.lambda.to_string(),
                row.achieved_p.to_string(),
                row.variant.name().to_string(),
                row.learner.clone(),
                row.replicate.to_string(),
                row.seed.to_string(),
                fmt_opt(row.l2_error),
                fmt_opt(row.rmse),
                fmt_opt(row.concordance),
                row.zero_weight_events.to_string(),
                row.out_of_support_queries.to_string(),
                if row.failed { "failed" } else { "ok" }.to_string(),
                row.message.clone(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn n_failed(&self) -> usize {
        self.rows.iter().filter(|r| r.failed).count()
    }
}

/// Aggregates of one (n, p, variant, learner) cell across replicates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryRow {
    pub n: usize,
    pub target_p: f64,
    pub variant: LossVariant,
    pub learner: String,
    pub replicates: usize,
    pub failed: usize,
    pub rmse_mean: Option<f64>,
    pub rmse_median: Option<f64>,
    pub rmse_q25: Option<f64>,
    pub rmse_q75: Option<f64>,
    pub concordance_mean: Option<f64>,
    pub concordance_median: Option<f64>,
}

/// Linear-interpolation quantile on sorted data (the h = (n-1)q convention).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let h = (sorted.len() as f64 - 1.0) * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        Some(sorted[lo])
    } else {
        Some(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
    }
}

fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Collapse replicates into one summary row per cell, in first-seen order
/// (which is the deterministic row order).
pub fn summarize(result: &ExperimentResult) -> Vec<SummaryRow> {
    let mut keys: Vec<(usize, f64, LossVariant, String)> = Vec::new();
    for row in &result.rows {
        let key = (row.n, row.target_p, row.variant, row.learner.clone());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(n, target_p, variant, learner)| {
            let cell: Vec<&ExperimentRow> = result
                .rows
                .iter()
                .filter(|r| {
                    r.n == n
                        && r.target_p == target_p
                        && r.variant == variant
                        && r.learner == learner
                })
                .collect();
            let failed = cell.iter().filter(|r| r.failed).count();
            let mut rmse: Vec<f64> = cell.iter().filter_map(|r| r.rmse).collect();
            rmse.sort_by(f64::total_cmp);
            let mut conc: Vec<f64> = cell.iter().filter_map(|r| r.concordance).collect();
            conc.sort_by(f64::total_cmp);
            SummaryRow {
                n,
                target_p,
                variant,
                learner,
                replicates: cell.len(),
                failed,
                rmse_mean: mean(&rmse),
                rmse_median: quantile_sorted(&rmse, 0.5),
                rmse_q25: quantile_sorted(&rmse, 0.25),
                rmse_q75: quantile_sorted(&rmse, 0.75),
                concordance_mean: mean(&conc),
                concordance_median: quantile_sorted(&conc, 0.5),
            }
        })
        .collect()
}

pub fn write_summary_csv<W: Write>(summary: &[SummaryRow], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record([
        "n",
        "target_p",
        "variant",
        "learner",
        "replicates",
        "failed",
        "rmse_mean",
        "rmse_median",
        "rmse_q25",
        "rmse_q75",
        "concordance_mean",
        "concordance_median",
    ])?;
    for row in summary {
        wtr.write_record(&[
            row.n.to_string(),
            row.target_p.to_string(),
            row.variant.name().to_string(),
            row.learner.clone(),
            row.replicates.to_string(),
            row.failed.to_string(),
            fmt_opt(row.rmse_mean),
            fmt_opt(row.rmse_median),
            fmt_opt(row.rmse_q25),
            fmt_opt(row.rmse_q75),
            fmt_opt(row.concordance_mean),
            fmt_opt(row.concordance_median),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ExperimentConfig {
        ExperimentConfig {
            d: 2,
            n_grid: vec![60],
            p_grid: vec![0.5],
            variants: vec![LossVariant::IpcwStute, LossVariant::Naive],
            learners: vec![LearnerSpec::Linear],
            n_replicates: 2,
            test_size: 80,
            base_seed: 42,
            knn_neighbors: 5,
            calibration_mc_n: 20_000,
            kernel_family: KernelFamily::EpanechnikovProduct,
            bandwidth: None,
        }
    }

    #[test]
    fn row_count_matches_grid() {
        let config = tiny_config();
        let result = run_all(&config, Some(2)).unwrap();
        assert_eq!(result.rows.len(), 2 * 2); // variants x replicates
        assert_eq!(result.n_failed(), 0);
    }

    #[test]
    fn identical_seed_identical_csv_across_thread_counts() {
        let config = tiny_config();
        let a = run_all(&config, Some(1)).unwrap().to_csv_string().unwrap();
        let b = run_all(&config, Some(4)).unwrap().to_csv_string().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn uncensored_cell_rows_are_identical_across_variants() {
        let mut config = tiny_config();
        config.p_grid = vec![1.0];
        config.variants = vec![
            LossVariant::Ipcw,
            LossVariant::IpcwLoo,
            LossVariant::IpcwKnn,
            LossVariant::IpcwStute,
            LossVariant::IpcwOracle,
            LossVariant::Naive,
            LossVariant::Observed,
            LossVariant::Oracle,
        ];
        config.n_replicates = 1;
        let result = run_all(&config, Some(2)).unwrap();
        assert_eq!(result.n_failed(), 0);
        let first = result.rows[0].l2_error.unwrap();
        for row in &result.rows {
            assert_eq!(row.l2_error.unwrap(), first, "variant {:?}", row.variant);
        }
    }

    #[test]
    fn failed_cells_recorded_without_aborting() {
        let mut config = tiny_config();
        // Kernel ridge with lambda = 0 on duplicated points is singular.
        config.learners = vec![
            LearnerSpec::Linear,
            LearnerSpec::KernelRidge {
                lambda: 0.0,
                gamma: 1e-9,
            },
        ];
        config.n_replicates = 1;
        let result = run_all(&config, Some(2)).unwrap();
        assert_eq!(result.rows.len(), 4);
        let failed: Vec<_> = result.rows.iter().filter(|r| r.failed).collect();
        assert!(!failed.is_empty());
        for row in failed {
            assert!(!row.message.is_empty());
        }
        // Linear rows still succeeded.
        assert!(result
            .rows
            .iter()
            .any(|r| r.learner == "linear" && !r.failed && r.rmse.is_some()));
    }

    #[test]
    fn summary_matches_two_pass_oracle() {
        let mut config = tiny_config();
        config.n_replicates = 7;
        let result = run_all(&config, Some(2)).unwrap();
        let summary = summarize(&result);
        for srow in &summary {
            let mut values: Vec<f64> = result
                .rows
                .iter()
                .filter(|r| {
                    r.n == srow.n
                        && r.target_p == srow.target_p
                        && r.variant == srow.variant
                        && r.learner == srow.learner
                })
                .filter_map(|r| r.rmse)
                .collect();
            values.sort_by(f64::total_cmp);
            let mean_oracle = values.iter().sum::<f64>() / values.len() as f64;
            assert!((srow.rmse_mean.unwrap() - mean_oracle).abs() < 1e-9);
            // Median oracle: average the two middle order statistics.
            let m = values.len();
            let median_oracle = if m % 2 == 1 {
                values[m / 2]
            } else {
                0.5 * (values[m / 2 - 1] + values[m / 2])
            };
            assert!((srow.rmse_median.unwrap() - median_oracle).abs() < 1e-9);
        }
    }

    #[test]
    fn summary_degenerate_cells() {
        let single = ExperimentResult {
            rows: vec![ExperimentRow {
                n: 10,
                target_p: 0.5,
                lambda: 1.0,
                achieved_p: 0.5,
                variant: LossVariant::Naive,
                learner: "linear".to_string(),
                replicate: 0,
                seed: 1,
                l2_error: Some(4.0),
                rmse: Some(2.0),
                concordance: Some(0.75),
                zero_weight_events: 0,
                out_of_support_queries: 0,
                failed: false,
                message: String::new(),
                wall_ms: 0.0,
            }],
        };
        let s = summarize(&single);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].rmse_mean, Some(2.0));
        assert_eq!(s[0].rmse_median, Some(2.0));
        assert_eq!(s[0].rmse_q25, Some(2.0));
        assert_eq!(s[0].rmse_q75, Some(2.0));

        // Constant column has zero interquartile range.
        let mut rows = Vec::new();
        for rep in 0..5 {
            let mut r = single.rows[0].clone();
            r.replicate = rep;
            rows.push(r);
        }
        let s = summarize(&ExperimentResult { rows });
        assert_eq!(s[0].rmse_q75.unwrap() - s[0].rmse_q25.unwrap(), 0.0);
    }

    #[test]
    fn seed_mixing_is_stable() {
        // Pinned values: the mixing function is part of the reproducibility
        // contract, so a change must be deliberate.
        assert_eq!(mix_seed(&[0]), mix_seed(&[0]));
        assert_ne!(mix_seed(&[0, 1]), mix_seed(&[1, 0]));
        assert_ne!(mix_seed(&[42, 1, 2]), mix_seed(&[42, 1, 3]));
    }

    #[test]
    fn config_validation() {
        let mut config = tiny_config();
        config.p_grid = vec![1.5];
        assert!(config.validate().is_err());
        let mut config = tiny_config();
        config.n_replicates = 0;
        assert!(config.validate().is_err());
        let mut config = tiny_config();
        config.learners.clear();
        assert!(config.validate().is_err());
    }
}
