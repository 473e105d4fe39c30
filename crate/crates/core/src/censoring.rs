//! Estimators of the conditional censoring survival function S_C(t | x).
//!
//! The kernel Beran estimator evaluates the conditional Nelson-Aalen /
//! Kaplan-Meier product over censored jump times with kernel masses in place
//! of counts; the k-NN variant runs the same product-limit with uniform
//! weights over the nearest neighbours of the query point; the unconditional
//! variant is the classical Kaplan-Meier of the censoring times pooling all
//! data. An oracle variant wraps a user-supplied analytic survival function.
//!
//! All jumps are exact finite products over the sorted observed times; ties
//! are processed deterministically with uncensored events ordered before
//! censored events at equal times, so censored jumps see the full at-risk
//! mass {Y_i >= s}.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::data::{CensoredDataset, StepSurvivalFunction};
use crate::error::{Error, Result};
use crate::kernel::KernelSpec;

/// Analytic conditional survival function `(t, x) -> S_C(t | x)`.
pub type OracleSurvival = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

/// Which estimator of S_C to fit, with its parameters.
#[derive(Clone)]
pub enum CensoringVariant {
    KernelBeran { kernel: KernelSpec, bandwidth: f64 },
    Knn { neighbors: usize },
    UnconditionalKm,
    Oracle(OracleSurvival),
}

impl std::fmt::Debug for CensoringVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::KernelBeran { kernel, bandwidth } => f
                .debug_struct("KernelBeran")
                .field("kernel", kernel)
                .field("bandwidth", bandwidth)
                .finish(),
            Self::Knn { neighbors } => f.debug_struct("Knn").field("neighbors", neighbors).finish(),
            Self::UnconditionalKm => write!(f, "UnconditionalKm"),
            Self::Oracle(_) => write!(f, "Oracle(..)"),
        }
    }
}

/// Counters for degenerate events observed while querying.
#[derive(Debug, Default)]
pub struct EstimatorDiagnostics {
    out_of_support: AtomicU64,
}

impl EstimatorDiagnostics {
    /// Queries at an `x` where every kernel mass vanished, answered by the
    /// unconditional Kaplan-Meier fallback.
    pub fn out_of_support_queries(&self) -> u64 {
        self.out_of_support.load(Ordering::Relaxed)
    }
}

/// The raw Nadaraya-Watson numerators of the conditional subsurvival
/// functions and the covariate density estimate.
pub struct ConditionalSubsurvival {
    data: Arc<CensoredDataset>,
    kernel: KernelSpec,
    h: f64,
}

impl ConditionalSubsurvival {
    /// H0_hat(u, x) = (1/n) sum 1{Y_i > u, delta_i = 0} K_h(x - X_i).
    pub fn h0_hat(&self, u: f64, x: &[f64]) -> f64 {
        self.sum_over(x, |o| o.y_tilde > u && !o.delta)
    }

    /// H_hat(u, x) = (1/n) sum 1{Y_i > u} K_h(x - X_i).
    pub fn h_hat(&self, u: f64, x: &[f64]) -> f64 {
        self.sum_over(x, |o| o.y_tilde > u)
    }

    /// g_hat(x) = (1/n) sum K_h(x - X_i).
    pub fn g_hat(&self, x: &[f64]) -> f64 {
        self.sum_over(x, |_| true)
    }

    fn sum_over(&self, x: &[f64], keep: impl Fn(&crate::data::CensoredObservation) -> bool) -> f64 {
        let mut diff = vec![0.0; x.len()];
        let mut acc = 0.0;
        for obs in self.data.iter() {
            if keep(obs) {
                for (d, (a, b)) in diff.iter_mut().zip(x.iter().zip(&obs.x)) {
                    *d = a - b;
                }
                acc += self.kernel.scaled_value_unchecked(&diff, self.h);
            }
        }
        acc / self.data.n() as f64
    }
}

/// Fit the kernel subsurvival estimates backing the Beran estimator.
pub fn fit_conditional_subsurvival(
    data: &CensoredDataset,
    kernel: KernelSpec,
    h: f64,
) -> Result<ConditionalSubsurvival> {
    if h <= 0.0 || !h.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "bandwidth must be positive and finite, got {h}"
        )));
    }
    Ok(ConditionalSubsurvival {
        data: Arc::new(data.clone()),
        kernel,
        h,
    })
}

enum Inner {
    KernelBeran {
        data: Arc<CensoredDataset>,
        kernel: KernelSpec,
        h: f64,
        /// Indices sorted by (time asc, uncensored first, index asc).
        order: Vec<usize>,
        /// Pooled Kaplan-Meier of C, used when x is outside every kernel's
        /// support (g_hat(x) = 0).
        fallback: StepSurvivalFunction,
        /// Two largest censored times in the full sample, for the
        /// drop-last-jump rule under leave-one-out.
        top_censored: [Option<f64>; 2],
    },
    Knn {
        data: Arc<CensoredDataset>,
        neighbors: usize,
    },
    UnconditionalKm {
        d: usize,
        curve: StepSurvivalFunction,
    },
    Oracle {
        survival: OracleSurvival,
        d: usize,
    },
}

/// A fitted, immutable estimator answering `S_C(t | x)` queries.
pub struct CensoringEstimator {
    inner: Inner,
    drop_last_jump: bool,
    diagnostics: EstimatorDiagnostics,
}

impl CensoringEstimator {
    /// Fit an estimator. `drop_last_jump` removes the jump at the largest
    /// censored time so that weights 1/S_C stay finite; it should be true
    /// whenever the estimator feeds weights and false for pure curve
    /// estimation.
    pub fn fit(
        data: &CensoredDataset,
        variant: CensoringVariant,
        drop_last_jump: bool,
    ) -> Result<Self> {
        let inner = match variant {
            CensoringVariant::KernelBeran { kernel, bandwidth } => {
                if bandwidth <= 0.0 || !bandwidth.is_finite() {
                    return Err(Error::InvalidParameter(format!(
                        "bandwidth must be positive and finite, got {bandwidth}"
                    )));
                }
                let data = Arc::new(data.clone());
                let order = sorted_order(&data);
                let ones = vec![1.0; data.n()];
                let threshold = drop_last_jump
                    .then(|| max_censored_time(&data, None))
                    .flatten();
                let fallback = product_limit_curve(&data, &order, &ones, threshold, None);
                let top_censored = top_two_censored_times(&data);
                Inner::KernelBeran {
                    data,
                    kernel,
                    h: bandwidth,
                    order,
                    fallback,
                    top_censored,
                }
            }
            CensoringVariant::Knn { neighbors } => {
                if neighbors == 0 || neighbors > data.n() {
                    return Err(Error::InvalidParameter(format!(
                        "neighbor count must lie in 1..={}, got {neighbors}",
                        data.n()
                    )));
                }
                Inner::Knn {
                    data: Arc::new(data.clone()),
                    neighbors,
                }
            }
            CensoringVariant::UnconditionalKm => {
                let order = sorted_order(data);
                let ones = vec![1.0; data.n()];
                let threshold = drop_last_jump
                    .then(|| max_censored_time(data, None))
                    .flatten();
                let curve = product_limit_curve(data, &order, &ones, threshold, None);
                Inner::UnconditionalKm {
                    d: data.dim(),
                    curve,
                }
            }
            CensoringVariant::Oracle(survival) => Inner::Oracle {
                survival,
                d: data.dim(),
            },
        };
        Ok(Self {
            inner,
            drop_last_jump,
            diagnostics: EstimatorDiagnostics::default(),
        })
    }

    pub fn diagnostics(&self) -> &EstimatorDiagnostics {
        &self.diagnostics
    }

    pub fn dim(&self) -> usize {
        match &self.inner {
            Inner::KernelBeran { data, .. } | Inner::Knn { data, .. } => data.dim(),
            Inner::UnconditionalKm { d, .. } | Inner::Oracle { d, .. } => *d,
        }
    }

    /// S_C(t | x), or S_C(t- | x) when `left_limit` is set.
    pub fn query(&self, t: f64, x: &[f64], left_limit: bool) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "query point has dimension {}, estimator was fitted with {}",
                x.len(),
                self.dim()
            )));
        }
        if !t.is_finite() || t < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "query time must be finite and nonnegative, got {t}"
            )));
        }
        Ok(match &self.inner {
            Inner::KernelBeran {
                data,
                kernel,
                h,
                order,
                fallback,
                ..
            } => {
                let weights = kernel_masses(data, kernel, *h, x, None);
                if weights.iter().all(|&w| w == 0.0) {
                    self.diagnostics
                        .out_of_support
                        .fetch_add(1, Ordering::Relaxed);
                    step_query(fallback, t, left_limit)
                } else {
                    let threshold = self
                        .drop_last_jump
                        .then(|| max_censored_time(data, None))
                        .flatten();
                    product_limit_at(data, order, &weights, threshold, None, t, left_limit)
                }
            }
            Inner::Knn { data, neighbors } => {
                self.knn_value(data, *neighbors, t, x, left_limit, None)
            }
            Inner::UnconditionalKm { curve, .. } => step_query(curve, t, left_limit),
            Inner::Oracle { survival, .. } => survival(t, x).clamp(0.0, 1.0),
        })
    }

    fn knn_value(
        &self,
        data: &CensoredDataset,
        neighbors: usize,
        t: f64,
        x: &[f64],
        left_limit: bool,
        exclude: Option<usize>,
    ) -> f64 {
        let idx = nearest_neighbors(data, x, neighbors, exclude);
        // Product-limit on the neighbour subsample with uniform weights; the
        // drop-last-jump rule is local to that subsample.
        let sub: Vec<&crate::data::CensoredObservation> =
            idx.iter().map(|&i| data.obs(i)).collect();
        let mut order: Vec<usize> = (0..sub.len()).collect();
        order.sort_by(|&a, &b| {
            sub[a]
                .y_tilde
                .total_cmp(&sub[b].y_tilde)
                .then(sub[b].delta.cmp(&sub[a].delta))
                .then(idx[a].cmp(&idx[b]))
        });
        let threshold = self
            .drop_last_jump
            .then(|| {
                sub.iter()
                    .filter(|o| !o.delta)
                    .map(|o| o.y_tilde)
                    .fold(None, |acc: Option<f64>, v| {
                        Some(acc.map_or(v, |a: f64| a.max(v)))
                    })
            })
            .flatten();
        let mut survival = 1.0;
        let mut at_risk = sub.len() as f64;
        let mut g = 0;
        while g < order.len() {
            let s = sub[order[g]].y_tilde;
            if left_limit && s >= t || !left_limit && s > t {
                break;
            }
            let mut group_size = 0.0;
            let mut censored = 0.0;
            let mut j = g;
            while j < order.len() && sub[order[j]].y_tilde == s {
                group_size += 1.0;
                if !sub[order[j]].delta {
                    censored += 1.0;
                }
                j += 1;
            }
            let keep = threshold.is_none_or(|cap| s < cap);
            if censored > 0.0 && at_risk > 0.0 && keep {
                survival *= 1.0 - censored / at_risk;
            }
            at_risk -= group_size;
            g = j;
        }
        survival.max(0.0)
    }

    /// S_C(Y_i- | X_i) for every observation, full-sample estimator.
    pub fn survival_at_own_points(&self) -> Result<Vec<f64>> {
        let data = self.training_data()?;
        (0..data.n())
            .map(|i| {
                let obs = data.obs(i);
                self.query(obs.y_tilde, &obs.x, true)
            })
            .collect()
    }

    /// Leave-one-out values S_C^(i)(Y_i- | X_i): for each observation, the
    /// estimator refitted without it, evaluated at its own point.
    ///
    /// Shares the sorted structure of the full sample instead of refitting n
    /// times; results equal the refit-from-scratch definition exactly because
    /// the walk skips the excluded index in the same order a refit would use.
    pub fn loo_survival_at_own_points(&self) -> Result<Vec<f64>> {
        let data = self.training_data()?;
        let n = data.n();
        if n < 2 {
            return Err(Error::InvalidParameter(
                "leave-one-out needs at least two observations".to_string(),
            ));
        }
        match &self.inner {
            Inner::KernelBeran {
                data,
                kernel,
                h,
                order,
                top_censored,
                ..
            } => {
                let mut out = Vec::with_capacity(n);
                for i in 0..n {
                    let obs = data.obs(i);
                    let weights = kernel_masses(data, kernel, *h, &obs.x, Some(i));
                    let threshold = if self.drop_last_jump {
                        loo_threshold(*top_censored, obs)
                    } else {
                        None
                    };
                    if weights.iter().all(|&w| w == 0.0) {
                        // No kernel mass left after removing i: fall back to
                        // the pooled Kaplan-Meier without observation i.
                        self.diagnostics
                            .out_of_support
                            .fetch_add(1, Ordering::Relaxed);
                        let ones = vec![1.0; n];
                        out.push(product_limit_at(
                            data,
                            order,
                            &ones,
                            threshold,
                            Some(i),
                            obs.y_tilde,
                            true,
                        ));
                    } else {
                        out.push(product_limit_at(
                            data,
                            order,
                            &weights,
                            threshold,
                            Some(i),
                            obs.y_tilde,
                            true,
                        ));
                    }
                }
                Ok(out)
            }
            Inner::Knn { data, neighbors } => {
                if *neighbors > n - 1 {
                    return Err(Error::InvalidParameter(format!(
                        "leave-one-out k-NN needs neighbors <= n-1 = {}, got {neighbors}",
                        n - 1
                    )));
                }
                Ok((0..n)
                    .map(|i| {
                        let obs = data.obs(i);
                        self.knn_value(data, *neighbors, obs.y_tilde, &obs.x, true, Some(i))
                    })
                    .collect())
            }
            Inner::UnconditionalKm { .. } => {
                // Cheap enough to refit per observation.
                (0..n)
                    .map(|i| {
                        let obs = data.obs(i);
                        let reduced = data.without(i)?;
                        let refit = CensoringEstimator::fit(
                            &reduced,
                            CensoringVariant::UnconditionalKm,
                            self.drop_last_jump,
                        )?;
                        refit.query(obs.y_tilde, &obs.x, true)
                    })
                    .collect()
            }
            Inner::Oracle { survival, .. } => Ok(data
                .iter()
                .map(|obs| survival(obs.y_tilde, &obs.x).clamp(0.0, 1.0))
                .collect()),
        }
    }

    /// The whole survival curve at a fixed covariate value, as a step
    /// function over the censored jump times.
    pub fn survival_curve(&self, x: &[f64]) -> Result<StepSurvivalFunction> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "query point has dimension {}, estimator was fitted with {}",
                x.len(),
                self.dim()
            )));
        }
        match &self.inner {
            Inner::KernelBeran {
                data,
                kernel,
                h,
                order,
                fallback,
                ..
            } => {
                let weights = kernel_masses(data, kernel, *h, x, None);
                if weights.iter().all(|&w| w == 0.0) {
                    self.diagnostics
                        .out_of_support
                        .fetch_add(1, Ordering::Relaxed);
                    return Ok(fallback.clone());
                }
                let threshold = self
                    .drop_last_jump
                    .then(|| max_censored_time(data, None))
                    .flatten();
                Ok(product_limit_curve(data, order, &weights, threshold, None))
            }
            Inner::UnconditionalKm { curve, .. } => Ok(curve.clone()),
            _ => {
                // Sample the query interface over the observed times.
                let data = self.training_data()?;
                let mut times: Vec<f64> = data.iter().map(|o| o.y_tilde).collect();
                times.sort_by(f64::total_cmp);
                times.dedup();
                let mut jumps = Vec::new();
                let mut prev = 1.0;
                for t in times {
                    let v = self.query(t, x, false)?;
                    if v < prev {
                        jumps.push((t, v));
                        prev = v;
                    }
                }
                let (t, v): (Vec<f64>, Vec<f64>) = jumps.into_iter().unzip();
                StepSurvivalFunction::new(t, v)
            }
        }
    }

    fn training_data(&self) -> Result<&CensoredDataset> {
        match &self.inner {
            Inner::KernelBeran { data, .. } | Inner::Knn { data, .. } => Ok(data),
            _ => Err(Error::InvalidParameter(
                "estimator variant does not retain its training sample".to_string(),
            )),
        }
    }
}

fn step_query(curve: &StepSurvivalFunction, t: f64, left_limit: bool) -> f64 {
    if left_limit {
        curve.left_limit(t)
    } else {
        curve.evaluate(t)
    }
}

/// Sort by time ascending, uncensored before censored at ties, then by index.
fn sorted_order(data: &CensoredDataset) -> Vec<usize> {
    let mut order: Vec<usize> = (0..data.n()).collect();
    order.sort_by(|&a, &b| {
        let (oa, ob) = (data.obs(a), data.obs(b));
        oa.y_tilde
            .total_cmp(&ob.y_tilde)
            .then(ob.delta.cmp(&oa.delta))
            .then(a.cmp(&b))
    });
    order
}

fn kernel_masses(
    data: &CensoredDataset,
    kernel: &KernelSpec,
    h: f64,
    x: &[f64],
    exclude: Option<usize>,
) -> Vec<f64> {
    let mut diff = vec![0.0; x.len()];
    let mut out = vec![0.0; data.n()];
    for (i, obs) in data.iter().enumerate() {
        if Some(i) == exclude {
            continue;
        }
        for (d, (a, b)) in diff.iter_mut().zip(x.iter().zip(&obs.x)) {
            *d = a - b;
        }
        out[i] = kernel.scaled_value_unchecked(&diff, h);
    }
    out
}

fn max_censored_time(data: &CensoredDataset, exclude: Option<usize>) -> Option<f64> {
    data.iter()
        .enumerate()
        .filter(|(i, o)| Some(*i) != exclude && !o.delta)
        .map(|(_, o)| o.y_tilde)
        .fold(None, |acc, v| Some(acc.map_or(v, |a: f64| a.max(v))))
}

fn top_two_censored_times(data: &CensoredDataset) -> [Option<f64>; 2] {
    let mut top = [None, None];
    for obs in data.iter().filter(|o| !o.delta) {
        let t = obs.y_tilde;
        match top[0] {
            None => top[0] = Some(t),
            Some(a) if t > a => {
                top[1] = top[0];
                top[0] = Some(t);
            }
            Some(_) => match top[1] {
                None => top[1] = Some(t),
                Some(b) if t > b => top[1] = Some(t),
                Some(_) => {}
            },
        }
    }
    top
}

/// Largest censored time once observation `obs` is removed. Ties at the
/// maximum keep the threshold: only a strictly unique maximum moves it.
fn loo_threshold(top: [Option<f64>; 2], obs: &crate::data::CensoredObservation) -> Option<f64> {
    match top {
        [Some(first), second] if !obs.delta && obs.y_tilde == first => second,
        [first, _] => first,
    }
}

/// Product-limit survival at a single time, weighted by `weights` and walked
/// in `order` (the full-sample sorted order). `exclude` removes one index
/// from both the jumps and the at-risk mass, reproducing a refit exactly.
/// Censored jumps at times `>= threshold` are skipped.
fn product_limit_at(
    data: &CensoredDataset,
    order: &[usize],
    weights: &[f64],
    threshold: Option<f64>,
    exclude: Option<usize>,
    t: f64,
    left_limit: bool,
) -> f64 {
    let mut at_risk = 0.0;
    for &i in order {
        if Some(i) != exclude {
            at_risk += weights[i];
        }
    }
    let mut survival = 1.0;
    let mut g = 0;
    while g < order.len() {
        let s = data.obs(order[g]).y_tilde;
        if left_limit && s >= t || !left_limit && s > t {
            break;
        }
        let mut group_mass = 0.0;
        let mut censored_mass = 0.0;
        let mut j = g;
        while j < order.len() && data.obs(order[j]).y_tilde == s {
            let idx = order[j];
            if Some(idx) != exclude {
                group_mass += weights[idx];
                if !data.obs(idx).delta {
                    censored_mass += weights[idx];
                }
            }
            j += 1;
        }
        let keep = threshold.is_none_or(|cap| s < cap);
        // Zero at-risk mass at a jump contributes factor 1 (skipped).
        if censored_mass > 0.0 && at_risk > 0.0 && keep {
            survival *= 1.0 - censored_mass / at_risk;
        }
        at_risk -= group_mass;
        g = j;
    }
    survival.max(0.0)
}

/// Full product-limit curve over the censored jump times.
fn product_limit_curve(
    data: &CensoredDataset,
    order: &[usize],
    weights: &[f64],
    threshold: Option<f64>,
    exclude: Option<usize>,
) -> StepSurvivalFunction {
    let mut at_risk = 0.0;
    for &i in order {
        if Some(i) != exclude {
            at_risk += weights[i];
        }
    }
    let mut jumps = Vec::new();
    let mut survival = 1.0;
    let mut g = 0;
    while g < order.len() {
        let s = data.obs(order[g]).y_tilde;
        let mut group_mass = 0.0;
        let mut censored_mass = 0.0;
        let mut j = g;
        while j < order.len() && data.obs(order[j]).y_tilde == s {
            let idx = order[j];
            if Some(idx) != exclude {
                group_mass += weights[idx];
                if !data.obs(idx).delta {
                    censored_mass += weights[idx];
                }
            }
            j += 1;
        }
        let keep = threshold.is_none_or(|cap| s < cap);
        if censored_mass > 0.0 && at_risk > 0.0 && keep {
            survival *= 1.0 - censored_mass / at_risk;
            jumps.push((s, survival.max(0.0)));
        }
        at_risk -= group_mass;
        g = j;
    }
    let (t, v): (Vec<f64>, Vec<f64>) = jumps.into_iter().unzip();
    StepSurvivalFunction::new(t, v).expect("product-limit curve is monotone by construction")
}

fn nearest_neighbors(
    data: &CensoredDataset,
    x: &[f64],
    k: usize,
    exclude: Option<usize>,
) -> Vec<usize> {
    let mut dist: Vec<(f64, usize)> = data
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != exclude)
        .map(|(i, obs)| {
            let d2: f64 = obs.x.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
            (d2, i)
        })
        .collect();
    // Ties in distance break by original index order.
    dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    dist.truncate(k);
    dist.into_iter().map(|(_, i)| i).collect()
}
