//! Synthetic Cox-model data: uniform covariates, exponential durations and
//! censoring times with informative overlap, and Monte-Carlo calibration of
//! the censoring scale to a target observed-event rate.
//!
//! Sampling is inverse-CDF from a ChaCha8 stream seeded per call, so a seed
//! pins the generated sample bit-exactly on every platform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::censoring::OracleSurvival;
use crate::data::{CensoredDataset, TruthColumns};
use crate::error::{Error, Result};

/// Proportional-hazards model with exponential conditional laws:
/// `Y | X ~ Exp(exp(beta . x))` and `C | X ~ Exp(exp(lambda_scale * beta_c . x))`
/// over `X ~ U([0,1]^d)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxModel {
    pub d: usize,
    pub beta: Vec<f64>,
    /// Censoring pattern; multiplied by `lambda_scale` in the hazard.
    pub beta_c: Vec<f64>,
    pub lambda_scale: f64,
}

impl CoxModel {
    /// The benchmark pattern: `beta` is ceil(d/2) ones then zeros and
    /// `beta_c` alternates 1, 0, 1, 0, ... so the censoring is informative
    /// but not identical to the duration model.
    pub fn new(d: usize, lambda_scale: f64) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidParameter(
                "dimension must be at least 1".to_string(),
            ));
        }
        if !lambda_scale.is_finite() || lambda_scale < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "lambda scale must be finite and nonnegative, got {lambda_scale}"
            )));
        }
        let ones = d.div_ceil(2);
        let beta = (0..d).map(|j| if j < ones { 1.0 } else { 0.0 }).collect();
        let beta_c = (0..d).map(|j| if j % 2 == 0 { 1.0 } else { 0.0 }).collect();
        Ok(Self {
            d,
            beta,
            beta_c,
            lambda_scale,
        })
    }

    /// Arbitrary coefficient vectors; used by tests and oracles.
    pub fn custom(beta: Vec<f64>, beta_c: Vec<f64>, lambda_scale: f64) -> Result<Self> {
        if beta.is_empty() || beta.len() != beta_c.len() {
            return Err(Error::DimensionMismatch(
                "beta and beta_c must be nonempty and of equal length".to_string(),
            ));
        }
        Ok(Self {
            d: beta.len(),
            beta,
            beta_c,
            lambda_scale,
        })
    }

    pub fn with_lambda(&self, lambda_scale: f64) -> Self {
        Self {
            lambda_scale,
            ..self.clone()
        }
    }

    pub fn rate_y(&self, x: &[f64]) -> f64 {
        dot(&self.beta, x).exp()
    }

    pub fn rate_c(&self, x: &[f64]) -> f64 {
        (self.lambda_scale * dot(&self.beta_c, x)).exp()
    }

    /// S_Y(t | x) = exp(-e^{beta . x} t).
    pub fn survival_y(&self, t: f64, x: &[f64]) -> f64 {
        (-self.rate_y(x) * t).exp()
    }

    /// S_C(t | x) = exp(-e^{lambda beta_c . x} t).
    pub fn survival_c(&self, t: f64, x: &[f64]) -> f64 {
        (-self.rate_c(x) * t).exp()
    }

    /// The regression function f*(x) = E[Y | X = x] = e^{-beta . x}.
    pub fn regression_function(&self, x: &[f64]) -> f64 {
        1.0 / self.rate_y(x)
    }

    /// The analytic censoring survival as a shareable closure.
    pub fn oracle_censoring(&self) -> OracleSurvival {
        let model = self.clone();
        Arc::new(move |t: f64, x: &[f64]| model.survival_c(t, x))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One generated record, keeping the latent truth next to the observed pair.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedSample {
    pub x: Vec<f64>,
    pub y_true: f64,
    pub c: f64,
    pub y_tilde: f64,
    pub delta: bool,
}

/// Draw `n` samples. Per sample the stream yields the d covariates, then the
/// duration uniform, then the censoring uniform; exponentials come from
/// `-ln(U) / rate` with `U` uniform on (0, 1].
pub fn generate(model: &CoxModel, n: usize, seed: u64) -> Vec<GeneratedSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| draw_sample(model, &mut rng, false))
        .collect()
}

/// Draw `n` samples without any censoring: `delta` is always true and the
/// observed duration is the true one. Used for test sets and p = 1 cells.
pub fn generate_uncensored(model: &CoxModel, n: usize, seed: u64) -> Vec<GeneratedSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| draw_sample(model, &mut rng, true)).collect()
}

fn draw_sample(model: &CoxModel, rng: &mut ChaCha8Rng, uncensored: bool) -> GeneratedSample {
    let x: Vec<f64> = (0..model.d).map(|_| rng.random::<f64>()).collect();
    let u_y = 1.0 - rng.random::<f64>();
    let u_c = 1.0 - rng.random::<f64>();
    let y_true = -u_y.ln() / model.rate_y(&x);
    let c = if uncensored {
        f64::INFINITY
    } else {
        -u_c.ln() / model.rate_c(&x)
    };
    let y_tilde = y_true.min(c);
    let delta = y_true <= c;
    debug_assert!(y_tilde == y_true.min(c) && delta == (y_true <= c));
    GeneratedSample {
        x,
        y_true,
        c,
        y_tilde,
        delta,
    }
}

/// Split samples into the censored dataset and its ground-truth columns.
pub fn to_dataset(samples: &[GeneratedSample]) -> Result<(CensoredDataset, TruthColumns)> {
    let dataset = CensoredDataset::from_columns(
        samples.iter().map(|s| s.x.clone()).collect(),
        samples.iter().map(|s| s.y_tilde).collect(),
        samples.iter().map(|s| s.delta).collect(),
    )?;
    let truth = TruthColumns {
        y_true: samples.iter().map(|s| s.y_true).collect(),
        c: samples.iter().map(|s| s.c).collect(),
    };
    Ok((dataset, truth))
}

/// Outcome of the censoring-scale calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub lambda: f64,
    pub achieved_p: f64,
    /// The target was outside what the bracket can reach; `lambda` is the
    /// nearest bracket edge and `achieved_p` the rate it attains.
    pub at_bracket_edge: bool,
}

const LOG_LAMBDA_BRACKET: (f64, f64) = (-10.0, 10.0);
const CALIBRATION_TOLERANCE: f64 = 0.005;
const CALIBRATION_MAX_ITERS: usize = 60;

/// Find `lambda` such that the Monte-Carlo estimate of `E[delta]` is within
/// 0.005 of `target_p`, by bisection on `log lambda` over [-10, 10]. The
/// event rate is monotone decreasing in lambda, so the same `mc_n` draws are
/// reused across evaluations.
pub fn calibrate_lambda(
    template: &CoxModel,
    target_p: f64,
    mc_n: usize,
    seed: u64,
) -> Result<Calibration> {
    if !(0.0 < target_p && target_p < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "target event rate must lie in (0, 1), got {target_p}"
        )));
    }
    if mc_n == 0 {
        return Err(Error::InvalidParameter("mc_n must be positive".to_string()));
    }

    // Common random numbers: the indicator delta(lambda) is monotone in
    // lambda for every draw, so p_hat is an exactly monotone step function.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<(f64, f64, f64)> = (0..mc_n)
        .map(|_| {
            let x: Vec<f64> = (0..template.d).map(|_| rng.random::<f64>()).collect();
            let u_y = 1.0 - rng.random::<f64>();
            let u_c = 1.0 - rng.random::<f64>();
            let t_y = -u_y.ln() / template.rate_y(&x);
            let t_c0 = -u_c.ln(); // censoring time at unit rate
            let s_c = dot(&template.beta_c, &x);
            (t_y, t_c0, s_c)
        })
        .collect();
    let p_hat = |lambda: f64| -> f64 {
        let hits = draws
            .iter()
            .filter(|(t_y, t_c0, s_c)| *t_y <= t_c0 * (-lambda * s_c).exp())
            .count();
        hits as f64 / mc_n as f64
    };

    let (mut lo, mut hi) = LOG_LAMBDA_BRACKET;
    let p_at_lo = p_hat(lo.exp());
    let p_at_hi = p_hat(hi.exp());
    if target_p >= p_at_lo {
        // Censoring cannot vanish inside the bracket: the rate never drops
        // below one, so high event rates saturate at the lower edge.
        return Ok(Calibration {
            lambda: lo.exp(),
            achieved_p: p_at_lo,
            at_bracket_edge: true,
        });
    }
    if target_p <= p_at_hi {
        return Err(Error::Calibration(format!(
            "target event rate {target_p} is below {p_at_hi:.4}, the lowest rate reachable \
             within the lambda bracket"
        )));
    }

    for _ in 0..CALIBRATION_MAX_ITERS {
        let mid = 0.5 * (lo + hi);
        let p_mid = p_hat(mid.exp());
        if (p_mid - target_p).abs() <= CALIBRATION_TOLERANCE {
            return Ok(Calibration {
                lambda: mid.exp(),
                achieved_p: p_mid,
                at_bracket_edge: false,
            });
        }
        if p_mid > target_p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::Calibration(format!(
        "bisection did not reach the target rate {target_p} within {CALIBRATION_MAX_ITERS} \
         iterations"
    )))
}
