//! Core data types: censored observations, datasets, step survival functions
//! and the restriction domain used to keep weights bounded.
//!
//! All types are immutable after construction and safe to share across threads.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// One training triplet `(x, min{y, c}, delta)` from a right-censored sample.
///
/// `delta = true` means the duration was observed (uncensored).
#[derive(Debug, Clone, PartialEq)]
pub struct CensoredObservation {
    pub x: Vec<f64>,
    pub y_tilde: f64,
    pub delta: bool,
}

impl CensoredObservation {
    pub fn new(x: Vec<f64>, y_tilde: f64, delta: bool) -> Result<Self> {
        if !y_tilde.is_finite() || y_tilde < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "observed duration must be a finite nonnegative number, got {y_tilde}"
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "feature vector contains a non-finite entry".to_string(),
            ));
        }
        Ok(Self { x, y_tilde, delta })
    }
}

/// An ordered right-censored sample with a fixed feature dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct CensoredDataset {
    observations: Vec<CensoredObservation>,
    d: usize,
}

impl CensoredDataset {
    pub fn new(observations: Vec<CensoredObservation>) -> Result<Self> {
        let d = match observations.first() {
            Some(obs) => obs.x.len(),
            None => {
                return Err(Error::InvalidParameter(
                    "dataset must contain at least one observation".to_string(),
                ))
            }
        };
        for (i, obs) in observations.iter().enumerate() {
            if obs.x.len() != d {
                return Err(Error::DimensionMismatch(format!(
                    "observation {i} has dimension {}, expected {d}",
                    obs.x.len()
                )));
            }
        }
        Ok(Self { observations, d })
    }

    /// Build a dataset from parallel columns. `xs` is row-major, one feature
    /// vector per observation.
    pub fn from_columns(xs: Vec<Vec<f64>>, times: Vec<f64>, events: Vec<bool>) -> Result<Self> {
        if xs.len() != times.len() || xs.len() != events.len() {
            return Err(Error::DimensionMismatch(format!(
                "column lengths differ: {} features, {} times, {} events",
                xs.len(),
                times.len(),
                events.len()
            )));
        }
        let observations = xs
            .into_iter()
            .zip(times)
            .zip(events)
            .map(|((x, t), e)| CensoredObservation::new(x, t, e))
            .collect::<Result<Vec<_>>>()?;
        Self::new(observations)
    }

    pub fn n(&self) -> usize {
        self.observations.len()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn observations(&self) -> &[CensoredObservation] {
        &self.observations
    }

    pub fn obs(&self, i: usize) -> &CensoredObservation {
        &self.observations[i]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, CensoredObservation> {
        self.observations.iter()
    }

    pub fn times(&self) -> Vec<f64> {
        self.observations.iter().map(|o| o.y_tilde).collect()
    }

    pub fn events(&self) -> Vec<bool> {
        self.observations.iter().map(|o| o.delta).collect()
    }

    pub fn n_uncensored(&self) -> usize {
        self.observations.iter().filter(|o| o.delta).count()
    }

    /// Dataset with observation `leave_out` removed. Used by the slow
    /// leave-one-out reference path.
    pub fn without(&self, leave_out: usize) -> Result<Self> {
        if self.n() < 2 {
            return Err(Error::InvalidParameter(
                "cannot remove an observation from a singleton dataset".to_string(),
            ));
        }
        let observations = self
            .observations
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != leave_out)
            .map(|(_, o)| o.clone())
            .collect();
        Self::new(observations)
    }

    /// Empirical `q`-quantile of the observed durations (lower interpolation).
    pub fn time_quantile(&self, q: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::InvalidParameter(format!(
                "quantile level must lie in [0,1], got {q}"
            )));
        }
        let mut times = self.times();
        times.sort_by(f64::total_cmp);
        let idx = ((times.len() as f64 - 1.0) * q).floor() as usize;
        Ok(times[idx])
    }

    /// Read a dataset from CSV with header `x1,...,xd,time,event`.
    ///
    /// When the optional `y_true` and `c` columns are present (written by
    /// `generate --with-truth`) the true durations are returned alongside.
    pub fn read_csv<R: Read>(reader: R) -> Result<(Self, Option<TruthColumns>)> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        let cols: Vec<&str> = headers.iter().collect();

        let d = cols.iter().take_while(|c| c.starts_with('x')).count();
        if d == 0 {
            return Err(Error::Parse(
                "expected at least one feature column named x1, x2, ...".to_string(),
            ));
        }
        for (i, c) in cols.iter().take(d).enumerate() {
            let expected = format!("x{}", i + 1);
            if **c != expected {
                return Err(Error::Parse(format!(
                    "feature column {} is named '{c}', expected '{expected}'",
                    i + 1
                )));
            }
        }
        if cols.get(d) != Some(&"time") || cols.get(d + 1) != Some(&"event") {
            return Err(Error::Parse(
                "expected 'time' and 'event' columns after the features".to_string(),
            ));
        }
        let has_truth = cols.get(d + 2) == Some(&"y_true") && cols.get(d + 3) == Some(&"c");

        let parse = |field: &str, what: &str, row: usize| -> Result<f64> {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::Parse(format!("row {row}: cannot parse {what} value '{field}'"))
            })?;
            if !v.is_finite() {
                return Err(Error::Parse(format!(
                    "row {row}: non-finite {what} value '{field}'"
                )));
            }
            Ok(v)
        };

        let mut observations = Vec::new();
        let mut y_true = Vec::new();
        let mut c_true = Vec::new();
        for (row_idx, record) in rdr.records().enumerate() {
            let record = record?;
            let row = row_idx + 2; // 1-based, after the header
            let mut x = Vec::with_capacity(d);
            for j in 0..d {
                x.push(parse(&record[j], "feature", row)?);
            }
            let time = parse(&record[d], "time", row)?;
            let event = match record[d + 1].trim() {
                "0" => false,
                "1" => true,
                other => {
                    return Err(Error::Parse(format!(
                        "row {row}: event must be 0 or 1, got '{other}'"
                    )))
                }
            };
            observations.push(CensoredObservation::new(x, time, event)?);
            if has_truth {
                y_true.push(parse(&record[d + 2], "y_true", row)?);
                c_true.push(parse(&record[d + 3], "c", row)?);
            }
        }
        let dataset = Self::new(observations)?;
        let truth = has_truth.then_some(TruthColumns { y_true, c: c_true });
        Ok((dataset, truth))
    }

    pub fn read_csv_path(path: &Path) -> Result<(Self, Option<TruthColumns>)> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    /// Write the dataset as CSV. Floats use the shortest representation that
    /// round-trips, so reading the file back reproduces them bit-exactly.
    pub fn write_csv<W: Write>(&self, writer: W, truth: Option<&TruthColumns>) -> Result<()> {
        if let Some(t) = truth {
            if t.y_true.len() != self.n() || t.c.len() != self.n() {
                return Err(Error::DimensionMismatch(
                    "truth columns must match the dataset length".to_string(),
                ));
            }
        }
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (1..=self.d).map(|j| format!("x{j}")).collect();
        header.push("time".to_string());
        header.push("event".to_string());
        if truth.is_some() {
            header.push("y_true".to_string());
            header.push("c".to_string());
        }
        wtr.write_record(&header)?;
        for (i, obs) in self.observations.iter().enumerate() {
            let mut record: Vec<String> = obs.x.iter().map(|v| v.to_string()).collect();
            record.push(obs.y_tilde.to_string());
            record.push(if obs.delta { "1" } else { "0" }.to_string());
            if let Some(t) = truth {
                record.push(t.y_true[i].to_string());
                record.push(t.c[i].to_string());
            }
            wtr.write_record(&record)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write_csv_path(&self, path: &Path, truth: Option<&TruthColumns>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?, truth)
    }
}

/// Optional per-observation ground truth carried by synthetic CSV files.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthColumns {
    pub y_true: Vec<f64>,
    pub c: Vec<f64>,
}

/// Right-continuous piecewise-constant survival curve. The value is 1 before
/// the first jump and `values[k]` on `[jump_times[k], jump_times[k+1])`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSurvivalFunction {
    jump_times: Vec<f64>,
    values: Vec<f64>,
}

impl StepSurvivalFunction {
    pub fn new(jump_times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if jump_times.len() != values.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} jump times but {} values",
                jump_times.len(),
                values.len()
            )));
        }
        for (t, v) in jump_times.iter().zip(&values) {
            if !t.is_finite() || *t < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "jump times must be finite and nonnegative, got {t}"
                )));
            }
            if !v.is_finite() || !(0.0..=1.0).contains(v) {
                return Err(Error::InvalidParameter(format!(
                    "survival values must lie in [0,1], got {v}"
                )));
            }
        }
        if jump_times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter(
                "jump times must be strictly increasing".to_string(),
            ));
        }
        let mut prev = 1.0;
        for v in &values {
            if *v > prev + 1e-15 {
                return Err(Error::InvalidParameter(
                    "survival values must be nonincreasing".to_string(),
                ));
            }
            prev = *v;
        }
        Ok(Self { jump_times, values })
    }

    /// The identically-1 survival function (no jumps).
    pub fn constant_one() -> Self {
        Self {
            jump_times: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn jumps(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.jump_times
            .iter()
            .copied()
            .zip(self.values.iter().copied())
    }

    /// S(t): value of the rightmost jump at or before `t`, or 1 if none.
    pub fn evaluate(&self, t: f64) -> f64 {
        let k = self.jump_times.partition_point(|&s| s <= t);
        if k == 0 {
            1.0
        } else {
            self.values[k - 1]
        }
    }

    /// S(t-): value of the rightmost jump strictly before `t`, or 1 if none.
    pub fn left_limit(&self, t: f64) -> f64 {
        let k = self.jump_times.partition_point(|&s| s < t);
        if k == 0 {
            1.0
        } else {
            self.values[k - 1]
        }
    }
}

/// Axis-aligned region of `(time, feature)` space on which IPCW weights are
/// allowed to be nonzero: `y <= tau` and, when a box is set, `x` inside it.
#[derive(Debug, Clone, PartialEq)]
pub struct RestrictionDomain {
    pub tau: f64,
    pub feature_box: Option<Vec<(f64, f64)>>,
}

impl RestrictionDomain {
    pub fn new(tau: f64, feature_box: Option<Vec<(f64, f64)>>) -> Result<Self> {
        if !tau.is_finite() || tau < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "time cap must be finite and nonnegative, got {tau}"
            )));
        }
        if let Some(bounds) = &feature_box {
            for (lo, hi) in bounds {
                if !lo.is_finite() || !hi.is_finite() || lo > hi {
                    return Err(Error::InvalidParameter(format!(
                        "feature box interval [{lo}, {hi}] is invalid"
                    )));
                }
            }
        }
        Ok(Self { tau, feature_box })
    }

    /// Default domain: time capped at the empirical `q`-quantile of the
    /// observed durations (q = 0.9 by convention), no feature restriction.
    pub fn from_time_quantile(data: &CensoredDataset, q: f64) -> Result<Self> {
        Self::new(data.time_quantile(q)?, None)
    }

    pub fn contains(&self, y: f64, x: &[f64]) -> bool {
        if y > self.tau {
            return false;
        }
        match &self.feature_box {
            None => true,
            Some(bounds) => {
                bounds.len() == x.len()
                    && x.iter()
                        .zip(bounds)
                        .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
            }
        }
    }
}
