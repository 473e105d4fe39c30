//! Kernel functions `K` and their bandwidth-scaled forms `K_h(x) = K(x/h)/h^d`.
//!
//! All families are products of a symmetric univariate profile integrating to
//! one, so they are nonnegative, symmetric and integrate to one in every
//! dimension. Compact support lets the weight computations prune far points.

use serde::{Deserialize, Serialize};

use crate::data::CensoredDataset;
use crate::error::{Error, Result};

/// Mass of the standard normal on [-4, 4]; renormalizes the truncated
/// Gaussian profile so it still integrates to one.
const NORMAL_MASS_WITHIN_4: f64 = 0.999_936_657_516_333_8;

const SQRT_TWO_PI: f64 = 2.506_628_274_631_000_7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    EpanechnikovProduct,
    UniformBox,
    TriangularPyramid,
    TruncatedGaussian,
}

impl KernelFamily {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "epanechnikov_product" | "epanechnikov" => Ok(Self::EpanechnikovProduct),
            "uniform_box" | "uniform" => Ok(Self::UniformBox),
            "triangular_pyramid" | "triangular" => Ok(Self::TriangularPyramid),
            "truncated_gaussian" | "gaussian" => Ok(Self::TruncatedGaussian),
            other => Err(Error::InvalidParameter(format!(
                "unknown kernel family '{other}'"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::EpanechnikovProduct => "epanechnikov_product",
            Self::UniformBox => "uniform_box",
            Self::TriangularPyramid => "triangular_pyramid",
            Self::TruncatedGaussian => "truncated_gaussian",
        }
    }
}

/// A validated kernel: family plus the radius of its univariate support.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    family: KernelFamily,
    support_radius: f64,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self::new(KernelFamily::EpanechnikovProduct)
    }
}

impl KernelSpec {
    pub fn new(family: KernelFamily) -> Self {
        let support_radius = match family {
            KernelFamily::TruncatedGaussian => 4.0,
            _ => 1.0,
        };
        let spec = Self {
            family,
            support_radius,
        };
        debug_assert!(spec.profile_integral_error() < 1e-6);
        spec
    }

    /// Numerically validate that the univariate profile integrates to one
    /// on a grid, to 1e-6. Cheap; run once when a kernel is configured.
    pub fn validate(&self) -> Result<()> {
        let err = self.profile_integral_error();
        if err >= 1e-6 {
            return Err(Error::Numerical(format!(
                "kernel profile integrates to 1 with error {err:.2e}, exceeding 1e-6"
            )));
        }
        Ok(())
    }

    fn profile_integral_error(&self) -> f64 {
        // Simpson's rule over the support.
        let steps = 4096;
        let (a, b) = (-self.support_radius, self.support_radius);
        let h = (b - a) / steps as f64;
        let mut acc = self.profile(a) + self.profile(b);
        for i in 1..steps {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * self.profile(a + i as f64 * h);
        }
        (acc * h / 3.0 - 1.0).abs()
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn support_radius(&self) -> f64 {
        self.support_radius
    }

    /// Univariate profile; the d-dimensional kernel is the product over
    /// coordinates.
    fn profile(&self, u: f64) -> f64 {
        let r = self.support_radius;
        if u.abs() > r {
            return 0.0;
        }
        match self.family {
            KernelFamily::EpanechnikovProduct => 0.75 * (1.0 - u * u),
            KernelFamily::UniformBox => 0.5,
            KernelFamily::TriangularPyramid => 1.0 - u.abs(),
            KernelFamily::TruncatedGaussian => {
                (-0.5 * u * u).exp() / (SQRT_TWO_PI * NORMAL_MASS_WITHIN_4)
            }
        }
    }

    /// K(u) for a d-dimensional argument.
    pub fn value(&self, u: &[f64]) -> f64 {
        u.iter().map(|&ui| self.profile(ui)).product()
    }

    /// K_h(x_diff) = K(x_diff / h) / h^d.
    pub fn scaled_value(&self, x_diff: &[f64], h: f64) -> Result<f64> {
        if h <= 0.0 || !h.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "bandwidth must be a positive finite number, got {h}"
            )));
        }
        Ok(self.scaled_value_unchecked(x_diff, h))
    }

    pub(crate) fn scaled_value_unchecked(&self, x_diff: &[f64], h: f64) -> f64 {
        let mut prod = 1.0;
        for &di in x_diff {
            prod *= self.profile(di / h);
            if prod == 0.0 {
                return 0.0;
            }
        }
        prod / h.powi(x_diff.len() as i32)
    }

    /// Finite sup-norm of the d-dimensional kernel, attained at the origin.
    pub fn sup_norm(&self, d: usize) -> f64 {
        let peak = self.profile(0.0);
        (0..d).fold(1.0, |acc, _| acc * peak)
    }
}

/// Bandwidth rule `constant * sigma * n^exponent` where `sigma` is the mean
/// per-coordinate sample standard deviation of the features.
pub fn bandwidth_rule(data: &CensoredDataset, constant: f64, exponent: f64) -> Result<f64> {
    let n = data.n();
    if n < 2 {
        return Err(Error::InvalidParameter(
            "bandwidth rule needs at least two observations".to_string(),
        ));
    }
    let sigma = mean_feature_std(data);
    if sigma <= 0.0 {
        return Err(Error::InvalidParameter(
            "bandwidth rule needs nonzero feature variance".to_string(),
        ));
    }
    Ok(constant * sigma * (n as f64).powf(exponent))
}

/// Default rule `h = 5 sigma n^(-1/(d+2))`.
pub fn default_bandwidth(data: &CensoredDataset) -> Result<f64> {
    bandwidth_rule(data, 5.0, -1.0 / (data.dim() as f64 + 2.0))
}

fn mean_feature_std(data: &CensoredDataset) -> f64 {
    let n = data.n() as f64;
    let d = data.dim();
    let mut means = vec![0.0; d];
    for obs in data.iter() {
        for (m, v) in means.iter_mut().zip(&obs.x) {
            *m += v;
        }
    }
    for m in &mut means {
        *m /= n;
    }
    let mut acc = 0.0;
    for (j, mean) in means.iter().enumerate() {
        let ss: f64 = data.iter().map(|o| (o.x[j] - mean).powi(2)).sum();
        acc += (ss / (n - 1.0)).sqrt();
    }
    acc / d as f64
}
