//! Weighted empirical-risk minimizers: linear and ridge regression by
//! weighted normal equations, kernel ridge regression by its dual
//! closed form, and a bagged regression-tree ensemble.
//!
//! Ridge-family learners and the forest normalize the weights to unit sum
//! internally, so the fitted model is invariant to rescaling all weights by
//! a positive constant and the penalty is calibrated against an average
//! loss.

mod linalg;
mod tree;

use serde::{Deserialize, Serialize};

use crate::data::CensoredDataset;
use crate::error::{Error, Result};
use crate::weights::WeightVector;
use linalg::SquareMatrix;
use tree::{fit_forest, fit_tree, TreeSettings};
pub use tree::{Node, Tree};

fn default_n_trees() -> usize {
    100
}

fn default_min_leaf_weight() -> f64 {
    1e-6
}

/// A learner family with its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum LearnerSpec {
    Linear,
    Ridge {
        lambda: f64,
    },
    KernelRidge {
        lambda: f64,
        gamma: f64,
    },
    TreeForest {
        #[serde(default = "default_n_trees")]
        n_trees: usize,
        #[serde(default)]
        max_depth: Option<usize>,
        #[serde(default = "default_min_leaf_weight")]
        min_leaf_weight: f64,
        #[serde(default)]
        bootstrap_seed: u64,
    },
}

impl LearnerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Linear => "linear",
            Self::Ridge { .. } => "ridge",
            Self::KernelRidge { .. } => "kernel_ridge",
            Self::TreeForest { .. } => "tree_forest",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Linear => Ok(()),
            Self::Ridge { lambda } => {
                if !lambda.is_finite() || *lambda < 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "ridge lambda must be nonnegative, got {lambda}"
                    )));
                }
                Ok(())
            }
            Self::KernelRidge { lambda, gamma } => {
                if !lambda.is_finite() || *lambda < 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "kernel ridge lambda must be nonnegative, got {lambda}"
                    )));
                }
                if !gamma.is_finite() || *gamma <= 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "rbf gamma must be positive, got {gamma}"
                    )));
                }
                Ok(())
            }
            Self::TreeForest {
                n_trees,
                min_leaf_weight,
                ..
            } => {
                if *n_trees == 0 {
                    return Err(Error::InvalidParameter(
                        "forest needs n_trees >= 1".to_string(),
                    ));
                }
                if !min_leaf_weight.is_finite() || *min_leaf_weight <= 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "min_leaf_weight must be positive, got {min_leaf_weight}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Replace the forest's bootstrap seed; no-op for deterministic families.
    pub fn with_seed(self, seed: u64) -> Self {
        match self {
            Self::TreeForest {
                n_trees,
                max_depth,
                min_leaf_weight,
                ..
            } => Self::TreeForest {
                n_trees,
                max_depth,
                min_leaf_weight,
                bootstrap_seed: seed,
            },
            other => other,
        }
    }
}

/// A fitted predictor. Deterministic and immutable; serializable as the
/// versioned `model.json` schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FittedModel {
    Linear {
        coefficients: Vec<f64>,
        intercept: f64,
    },
    KernelRidge {
        gamma: f64,
        dual_coefficients: Vec<f64>,
        train_x: Vec<Vec<f64>>,
    },
    TreeForest {
        d: usize,
        trees: Vec<Tree>,
    },
}

/// On-disk wrapper for `model.json`.
#[derive(Debug, Serialize, Deserialize)]
pub struct ModelFile {
    pub version: u32,
    pub model: FittedModel,
}

pub const MODEL_SCHEMA_VERSION: u32 = 1;

impl FittedModel {
    pub fn dim(&self) -> usize {
        match self {
            Self::Linear { coefficients, .. } => coefficients.len(),
            Self::KernelRidge { train_x, .. } => train_x.first().map_or(0, |x| x.len()),
            Self::TreeForest { d, .. } => *d,
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "input has dimension {}, model was trained with {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(match self {
            Self::Linear {
                coefficients,
                intercept,
            } => intercept + coefficients.iter().zip(x).map(|(c, v)| c * v).sum::<f64>(),
            Self::KernelRidge {
                gamma,
                dual_coefficients,
                train_x,
            } => dual_coefficients
                .iter()
                .zip(train_x)
                .map(|(a, xi)| a * rbf(*gamma, xi, x))
                .sum(),
            Self::TreeForest { trees, .. } => {
                trees.iter().map(|t| t.predict(x)).sum::<f64>() / trees.len() as f64
            }
        })
    }

    pub fn predict_batch<'a, I: IntoIterator<Item = &'a [f64]>>(&self, xs: I) -> Result<Vec<f64>> {
        xs.into_iter().map(|x| self.predict(x)).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelFile {
            version: MODEL_SCHEMA_VERSION,
            model: self.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.version != MODEL_SCHEMA_VERSION {
            return Err(Error::Parse(format!(
                "unsupported model schema version {}",
                file.version
            )));
        }
        Ok(file.model)
    }
}

fn rbf(gamma: f64, a: &[f64], b: &[f64]) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d2).exp()
}

/// Minimize `sum_i w_i (target_i - f(X_i))^2` over the requested family.
pub fn fit(data: &CensoredDataset, w: &WeightVector, spec: &LearnerSpec) -> Result<FittedModel> {
    spec.validate()?;
    if w.len() != data.n() {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {} observations",
            w.len(),
            data.n()
        )));
    }
    if !w.weights().iter().any(|&wi| wi > 0.0) {
        return Err(Error::InvalidParameter(
            "all weights are zero; nothing to fit".to_string(),
        ));
    }
    let targets: Vec<f64> = (0..data.n()).map(|i| w.target(data, i)).collect();
    match spec {
        LearnerSpec::Linear => fit_linear(data, &targets, w.weights(), 0.0),
        LearnerSpec::Ridge { lambda } => {
            let normalized = normalize(w.weights());
            fit_linear(data, &targets, &normalized, *lambda)
        }
        LearnerSpec::KernelRidge { lambda, gamma } => {
            let normalized = normalize(w.weights());
            fit_kernel_ridge(data, &targets, &normalized, *lambda, *gamma)
        }
        LearnerSpec::TreeForest {
            n_trees,
            max_depth,
            min_leaf_weight,
            bootstrap_seed,
        } => {
            let normalized = normalize(w.weights());
            let xs: Vec<Vec<f64>> = data.iter().map(|o| o.x.clone()).collect();
            let settings = TreeSettings {
                max_depth: *max_depth,
                min_leaf_weight: *min_leaf_weight,
            };
            let trees = if *n_trees == 1 {
                let all: Vec<usize> = (0..data.n()).collect();
                vec![fit_tree(&xs, &targets, &normalized, &all, &settings)]
            } else {
                fit_forest(
                    &xs,
                    &targets,
                    &normalized,
                    *n_trees,
                    &settings,
                    *bootstrap_seed,
                )
            };
            Ok(FittedModel::TreeForest {
                d: data.dim(),
                trees,
            })
        }
    }
}

fn normalize(weights: &[f64]) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    weights.iter().map(|w| w / total).collect()
}

/// Weighted least squares on the design augmented with a constant column,
/// solved by QR on the sqrt-weighted rows (the same minimizer as the normal
/// equations, stable when a few IPCW weights dominate). Under ridge, rows
/// sqrt(lambda) e_j are appended for the feature columns only, so the
/// intercept is never penalized.
fn fit_linear(
    data: &CensoredDataset,
    targets: &[f64],
    weights: &[f64],
    lambda: f64,
) -> Result<FittedModel> {
    let d = data.dim();
    let p = d + 1; // intercept first
    let active: Vec<usize> = (0..data.n()).filter(|&i| weights[i] > 0.0).collect();
    let extra = if lambda > 0.0 { d } else { 0 };
    let m = active.len() + extra;
    let mut a = vec![0.0; m * p];
    let mut y = vec![0.0; m];
    for (r, &i) in active.iter().enumerate() {
        let s = weights[i].sqrt();
        let obs = data.obs(i);
        a[r * p] = s;
        for (j, v) in obs.x.iter().enumerate() {
            a[r * p + 1 + j] = s * v;
        }
        y[r] = s * targets[i];
    }
    let sqrt_lambda = lambda.sqrt();
    for j in 0..extra {
        a[(active.len() + j) * p + 1 + j] = sqrt_lambda;
    }
    let beta = linalg::least_squares(a, y, p)?;
    Ok(FittedModel::Linear {
        intercept: beta[0],
        coefficients: beta[1..].to_vec(),
    })
}

/// Dual weighted kernel ridge: with S = diag(sqrt(w)), solve
/// (S K S + lambda I) z = S y and take alpha = S z, so that
/// (W K + lambda I) alpha = W y exactly.
fn fit_kernel_ridge(
    data: &CensoredDataset,
    targets: &[f64],
    weights: &[f64],
    lambda: f64,
    gamma: f64,
) -> Result<FittedModel> {
    let n = data.n();
    let sqrt_w: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    let mut system = SquareMatrix::zeros(n);
    for i in 0..n {
        for j in i..n {
            let k = rbf(gamma, &data.obs(i).x, &data.obs(j).x);
            let v = sqrt_w[i] * k * sqrt_w[j];
            system.set(i, j, v);
            system.set(j, i, v);
        }
        system.add(i, i, lambda);
    }
    let rhs: Vec<f64> = (0..n).map(|i| sqrt_w[i] * targets[i]).collect();
    let z = linalg::solve_symmetric(&system, &rhs)?;
    let alphas: Vec<f64> = z.iter().zip(&sqrt_w).map(|(zi, s)| zi * s).collect();
    Ok(FittedModel::KernelRidge {
        gamma,
        dual_coefficients: alphas,
        train_x: data.iter().map(|o| o.x.clone()).collect(),
    })
}
