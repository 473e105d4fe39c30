//! Evaluation metrics: test-set L2 prediction error, the concordance index,
//! and the risk-estimation error of linear functionals.

use serde::{Deserialize, Serialize};

use crate::data::{CensoredDataset, RestrictionDomain};
use crate::error::{Error, Result};
use crate::learners::FittedModel;
use crate::weights::{compute_weights, linear_risk_estimate, LossVariant, WeightParams};

/// Per-observation squared error on a fully observed test set.
pub fn l2_test_error(model: &FittedModel, test: &[(Vec<f64>, f64)]) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::InvalidParameter("test set is empty".to_string()));
    }
    let mut acc = 0.0;
    for (x, y) in test {
        let r = y - model.predict(x)?;
        acc += r * r;
    }
    Ok(acc / test.len() as f64)
}

/// Concordance over comparable pairs: `i` uncensored and `Y_j > Y_i`.
/// Correctly ordered predictions score 1, prediction ties score 1/2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Concordance {
    pub index: f64,
    pub comparable_pairs: u64,
    /// Sum of the pair scores (ties counted 1/2).
    pub concordant_weight: f64,
    /// The same double sum with strict ordering only, divided by the number
    /// of uncensored observations instead of the pair count.
    pub per_event_normalized: f64,
}

pub fn concordance_detail(predictions: &[f64], test: &CensoredDataset) -> Result<Concordance> {
    if predictions.len() != test.n() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions for {} observations",
            predictions.len(),
            test.n()
        )));
    }
    let mut pairs = 0u64;
    let mut weight = 0.0;
    let mut strict = 0u64;
    for (i, oi) in test.iter().enumerate() {
        if !oi.delta {
            continue;
        }
        for (j, oj) in test.iter().enumerate() {
            if oj.y_tilde > oi.y_tilde {
                pairs += 1;
                if predictions[i] < predictions[j] {
                    weight += 1.0;
                    strict += 1;
                } else if predictions[i] == predictions[j] {
                    weight += 0.5;
                }
            }
        }
    }
    if pairs == 0 {
        return Err(Error::UndefinedMetric(
            "no comparable pairs: need an uncensored observation with a later one".to_string(),
        ));
    }
    let n_events = test.n_uncensored().max(1) as f64;
    Ok(Concordance {
        index: weight / pairs as f64,
        comparable_pairs: pairs,
        concordant_weight: weight,
        per_event_normalized: strict as f64 / n_events,
    })
}

/// Fraction of comparable pairs ordered correctly by the model.
pub fn concordance_index(model: &FittedModel, test: &CensoredDataset) -> Result<f64> {
    let predictions = test
        .iter()
        .map(|o| model.predict(&o.x))
        .collect::<Result<Vec<_>>>()?;
    Ok(concordance_detail(&predictions, test)?.index)
}

/// `|estimate - true_risk|` for the linear functional `E[Y phi(X)]` using
/// normalized weights of the given variant.
pub fn risk_estimation_error(
    data: &CensoredDataset,
    variant: LossVariant,
    phi: impl Fn(&[f64]) -> f64,
    true_risk: f64,
    params: &WeightParams,
    domain: Option<&RestrictionDomain>,
) -> Result<f64> {
    let w = compute_weights(data, variant, params, domain, true)?;
    let estimate = linear_risk_estimate(data, phi, &w)?;
    Ok((estimate - true_risk).abs())
}

/// Counters surfaced next to the metric values.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalDiagnostics {
    pub zero_weight_events: u64,
    pub out_of_support_queries: u64,
    pub comparable_pairs: u64,
    /// The concordance double sum normalized per uncensored observation
    /// rather than per pair (the two readings of the formula).
    pub concordance_per_event: Option<f64>,
}

/// Metric bundle for one model on one test set. `l2_error` is per
/// observation so values compare across test sizes; `l2_total` is the plain
/// sum of squared errors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub l2_error: f64,
    pub l2_total: f64,
    pub rmse: f64,
    pub concordance: Option<f64>,
    pub n_test: usize,
    pub diagnostics: EvalDiagnostics,
}

/// Evaluate a model against ground-truth durations (for the L2 error) and
/// the censored test sample (for concordance).
pub fn evaluate_model(
    model: &FittedModel,
    test: &CensoredDataset,
    true_durations: &[f64],
) -> Result<EvaluationReport> {
    if true_durations.len() != test.n() {
        return Err(Error::DimensionMismatch(format!(
            "{} true durations for {} test observations",
            true_durations.len(),
            test.n()
        )));
    }
    let pairs: Vec<(Vec<f64>, f64)> = test
        .iter()
        .zip(true_durations)
        .map(|(o, y)| (o.x.clone(), *y))
        .collect();
    let l2_error = l2_test_error(model, &pairs)?;
    let predictions = test
        .iter()
        .map(|o| model.predict(&o.x))
        .collect::<Result<Vec<_>>>()?;
    let concordance = concordance_detail(&predictions, test).ok();
    Ok(EvaluationReport {
        l2_error,
        l2_total: l2_error * test.n() as f64,
        rmse: l2_error.sqrt(),
        concordance: concordance.as_ref().map(|c| c.index),
        n_test: test.n(),
        diagnostics: EvalDiagnostics {
            zero_weight_events: 0,
            out_of_support_queries: 0,
            comparable_pairs: concordance.as_ref().map_or(0, |c| c.comparable_pairs),
            concordance_per_event: concordance.map(|c| c.per_event_normalized),
        },
    })
}
