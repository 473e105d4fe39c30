//! IPCW weight construction and the weighted risk functionals.
//!
//! Each loss variant turns a censored sample into per-observation weights:
//! the IPCW family divides `delta_i / n` by an estimate of the censoring
//! survival `S_C(Y_i- | X_i)`, the naive/observed variants ignore censoring,
//! and the oracle variant scores against the true durations (synthetic data
//! only). The weighted risk is `sum_i w_i (Y_i - f(X_i))^2`.

use serde::{Deserialize, Serialize};

use crate::censoring::{CensoringEstimator, CensoringVariant, OracleSurvival};
use crate::data::{CensoredDataset, RestrictionDomain};
use crate::error::{Error, Result};
use crate::kernel::{default_bandwidth, KernelSpec};

/// The loss variants of the synthetic benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    /// Kernel Beran weights, full-sample estimator at own points.
    Ipcw,
    /// Kernel Beran weights, leave-one-out estimator.
    IpcwLoo,
    /// Leave-one-out k-nearest-neighbour weights.
    IpcwKnn,
    /// Unconditional (pooled) Kaplan-Meier weights.
    IpcwStute,
    /// True censoring survival function (synthetic data only).
    IpcwOracle,
    /// All observations weighted 1/n against the observed durations.
    Naive,
    /// Uncensored observations weighted 1/n, censored dropped.
    Observed,
    /// All observations weighted 1/n against the true durations
    /// (synthetic data only).
    Oracle,
}

impl LossVariant {
    pub const ALL: [LossVariant; 8] = [
        LossVariant::Ipcw,
        LossVariant::IpcwLoo,
        LossVariant::IpcwKnn,
        LossVariant::IpcwStute,
        LossVariant::IpcwOracle,
        LossVariant::Naive,
        LossVariant::Observed,
        LossVariant::Oracle,
    ];

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "ipcw" => Ok(Self::Ipcw),
            "ipcw_loo" => Ok(Self::IpcwLoo),
            "ipcw_knn" => Ok(Self::IpcwKnn),
            "ipcw_stute" => Ok(Self::IpcwStute),
            "ipcw_oracle" => Ok(Self::IpcwOracle),
            "naive" => Ok(Self::Naive),
            "observed" => Ok(Self::Observed),
            "oracle" => Ok(Self::Oracle),
            other => Err(Error::InvalidParameter(format!(
                "unknown loss variant '{other}'"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Ipcw => "ipcw",
            Self::IpcwLoo => "ipcw_loo",
            Self::IpcwKnn => "ipcw_knn",
            Self::IpcwStute => "ipcw_stute",
            Self::IpcwOracle => "ipcw_oracle",
            Self::Naive => "naive",
            Self::Observed => "observed",
            Self::Oracle => "oracle",
        }
    }

    /// Variants whose weights are `delta_i / (n S_hat)`.
    pub fn is_ipcw_family(&self) -> bool {
        matches!(
            self,
            Self::Ipcw | Self::IpcwLoo | Self::IpcwKnn | Self::IpcwStute | Self::IpcwOracle
        )
    }

    /// Variants that need ground truth only a synthetic generator can supply.
    pub fn needs_truth(&self) -> bool {
        matches!(self, Self::IpcwOracle | Self::Oracle)
    }
}

/// How to pick the kernel bandwidth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    /// The rule 5 sigma n^(-1/(d+2)).
    Auto,
    Fixed(f64),
}

impl Bandwidth {
    fn resolve(&self, data: &CensoredDataset) -> Result<f64> {
        match self {
            Bandwidth::Auto => default_bandwidth(data),
            Bandwidth::Fixed(h) => Ok(*h),
        }
    }
}

/// Estimator parameters consumed by the IPCW-family variants.
#[derive(Clone)]
pub struct WeightParams {
    pub kernel: KernelSpec,
    pub bandwidth: Bandwidth,
    pub neighbors: usize,
    /// Analytic S_C(t | x); required by `ipcw_oracle`.
    pub oracle_censoring: Option<OracleSurvival>,
    /// True durations; required by `oracle`.
    pub y_true: Option<Vec<f64>>,
}

impl Default for WeightParams {
    fn default() -> Self {
        Self {
            kernel: KernelSpec::default(),
            bandwidth: Bandwidth::Auto,
            neighbors: 5,
            oracle_censoring: None,
            y_true: None,
        }
    }
}

/// Counters describing degenerate events met while building the weights.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightDiagnostics {
    /// Uncensored observations whose estimated S_C(Y_i- | X_i) was 0 even
    /// after the last jump was dropped; their weight is forced to 0.
    pub zero_weight_events: u64,
    /// Censoring-estimator queries answered by the pooled fallback because
    /// every kernel mass vanished at the query point.
    pub out_of_support_queries: u64,
}

/// Per-observation weights, plus the targets the risk should score against.
#[derive(Debug, Clone)]
pub struct WeightVector {
    weights: Vec<f64>,
    normalized: bool,
    variant: LossVariant,
    oracle_targets: Option<Vec<f64>>,
    diagnostics: WeightDiagnostics,
}

impl WeightVector {
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn variant(&self) -> LossVariant {
        self.variant
    }

    pub fn diagnostics(&self) -> WeightDiagnostics {
        self.diagnostics
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// The duration each observation is scored against: the true duration
    /// for the oracle loss, the observed one otherwise.
    pub fn target(&self, data: &CensoredDataset, i: usize) -> f64 {
        match &self.oracle_targets {
            Some(t) => t[i],
            None => data.obs(i).y_tilde,
        }
    }

    /// Build a weight vector directly; used by tests and callers that
    /// already have weights from elsewhere.
    pub fn from_raw(weights: Vec<f64>, variant: LossVariant) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidParameter(
                "weights must be finite and nonnegative".to_string(),
            ));
        }
        Ok(Self {
            weights,
            normalized: false,
            variant,
            oracle_targets: None,
            diagnostics: WeightDiagnostics::default(),
        })
    }
}

/// Compute the weight vector for a loss variant.
///
/// IPCW-family weights are `delta_i 1{(Y_i, X_i) in K} / (n S_hat(Y_i- | X_i))`.
/// The conditional estimators (kernel and k-NN) are fitted with their last
/// jump dropped so the denominators stay positive; the pooled Stute variant
/// keeps all jumps, whose left limits at uncensored points are positive
/// anyway. `naive` is `1/n`, `observed` is `delta_i / n`, and `oracle` is
/// `1/n` scored against the true durations. With `normalize` the weights are
/// divided by their sum.
pub fn compute_weights(
    data: &CensoredDataset,
    variant: LossVariant,
    params: &WeightParams,
    domain: Option<&RestrictionDomain>,
    normalize: bool,
) -> Result<WeightVector> {
    let n = data.n();
    let n_f = n as f64;
    let mut diagnostics = WeightDiagnostics::default();
    let mut oracle_targets = None;

    let mut weights = match variant {
        LossVariant::Naive => vec![1.0 / n_f; n],
        LossVariant::Observed => data
            .iter()
            .map(|o| if o.delta { 1.0 / n_f } else { 0.0 })
            .collect(),
        LossVariant::Oracle => {
            let y_true = params.y_true.as_ref().ok_or_else(|| {
                Error::InvalidParameter(
                    "oracle loss needs true durations; they only come from the synthetic generator"
                        .to_string(),
                )
            })?;
            if y_true.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "{} true durations for {n} observations",
                    y_true.len()
                )));
            }
            oracle_targets = Some(y_true.clone());
            vec![1.0 / n_f; n]
        }
        _ => {
            let (survival, out_of_support) = ipcw_survival_at_own_points(data, variant, params)?;
            diagnostics.out_of_support_queries = out_of_support;
            let mut w = vec![0.0; n];
            for (i, obs) in data.iter().enumerate() {
                if !obs.delta {
                    continue;
                }
                if let Some(dom) = domain {
                    if !dom.contains(obs.y_tilde, &obs.x) {
                        continue;
                    }
                }
                if survival[i] > 0.0 {
                    w[i] = 1.0 / (n_f * survival[i]);
                } else {
                    diagnostics.zero_weight_events += 1;
                }
            }
            w
        }
    };

    if normalize {
        let total: f64 = weights.iter().sum();
        if total > 0.0 {
            for w in &mut weights {
                *w /= total;
            }
        }
    }

    Ok(WeightVector {
        weights,
        normalized: normalize,
        variant,
        oracle_targets,
        diagnostics,
    })
}

/// S_hat(Y_i- | X_i) for each observation under the variant's estimator,
/// plus the out-of-support counter.
fn ipcw_survival_at_own_points(
    data: &CensoredDataset,
    variant: LossVariant,
    params: &WeightParams,
) -> Result<(Vec<f64>, u64)> {
    match variant {
        LossVariant::Ipcw => {
            let h = params.bandwidth.resolve(data)?;
            let est = CensoringEstimator::fit(
                data,
                CensoringVariant::KernelBeran {
                    kernel: params.kernel,
                    bandwidth: h,
                },
                true,
            )?;
            let v = est.survival_at_own_points()?;
            Ok((v, est.diagnostics().out_of_support_queries()))
        }
        LossVariant::IpcwLoo => {
            let h = params.bandwidth.resolve(data)?;
            let est = CensoringEstimator::fit(
                data,
                CensoringVariant::KernelBeran {
                    kernel: params.kernel,
                    bandwidth: h,
                },
                true,
            )?;
            let v = est.loo_survival_at_own_points()?;
            Ok((v, est.diagnostics().out_of_support_queries()))
        }
        LossVariant::IpcwKnn => {
            let est = CensoringEstimator::fit(
                data,
                CensoringVariant::Knn {
                    neighbors: params.neighbors,
                },
                true,
            )?;
            let v = est.loo_survival_at_own_points()?;
            Ok((v, 0))
        }
        LossVariant::IpcwStute => {
            // The pooled Kaplan-Meier keeps all jumps: its left limit at an
            // uncensored point is strictly positive because that observation
            // itself sits in every earlier at-risk set. The drop-last-jump
            // guard is only needed where self-exclusion can empty the risk
            // set, i.e. the leave-one-out variants.
            let est = CensoringEstimator::fit(data, CensoringVariant::UnconditionalKm, false)?;
            let v = data
                .iter()
                .map(|o| est.query(o.y_tilde, &o.x, true))
                .collect::<Result<Vec<_>>>()?;
            Ok((v, 0))
        }
        LossVariant::IpcwOracle => {
            let survival = params.oracle_censoring.as_ref().ok_or_else(|| {
                Error::InvalidParameter(
                    "ipcw_oracle needs the analytic censoring survival function".to_string(),
                )
            })?;
            let v = data
                .iter()
                .map(|o| survival(o.y_tilde, &o.x).clamp(0.0, 1.0))
                .collect();
            Ok((v, 0))
        }
        _ => unreachable!("not an IPCW-family variant"),
    }
}

/// Weighted squared-error risk `sum_i w_i (target_i - f_i)^2`.
pub fn weighted_risk(data: &CensoredDataset, predictions: &[f64], w: &WeightVector) -> Result<f64> {
    if predictions.len() != data.n() || w.len() != data.n() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions and {} weights for {} observations",
            predictions.len(),
            w.len(),
            data.n()
        )));
    }
    let mut risk = 0.0;
    for (i, f_i) in predictions.iter().enumerate() {
        let wi = w.weights[i];
        if wi > 0.0 {
            let r = w.target(data, i) - f_i;
            risk += wi * r * r;
        }
    }
    Ok(risk)
}

/// Plug-in estimate of the linear functional E[Y phi(X)]:
/// `sum_i w_i target_i phi(X_i)`.
pub fn linear_risk_estimate(
    data: &CensoredDataset,
    phi: impl Fn(&[f64]) -> f64,
    w: &WeightVector,
) -> Result<f64> {
    if w.len() != data.n() {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {} observations",
            w.len(),
            data.n()
        )));
    }
    let mut acc = 0.0;
    for (i, obs) in data.iter().enumerate() {
        let wi = w.weights[i];
        if wi > 0.0 {
            acc += wi * w.target(data, i) * phi(&obs.x);
        }
    }
    Ok(acc)
}
