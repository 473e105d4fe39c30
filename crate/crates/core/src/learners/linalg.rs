//! Small dense solvers for the closed-form learners: Householder QR for
//! least-squares problems (stable under the extreme weights IPCW can
//! produce) and Cholesky with a pivoted elimination fallback for symmetric
//! systems.

use crate::error::{Error, Result};

/// Minimize ||A b - y||_2 for a row-major m x p matrix with m >= p, by
/// Householder QR. Errors when A is numerically rank deficient.
pub fn least_squares(mut a: Vec<f64>, mut y: Vec<f64>, p: usize) -> Result<Vec<f64>> {
    let m = y.len();
    assert_eq!(a.len(), m * p);
    if m < p {
        return Err(Error::InvalidParameter(format!(
            "least squares needs at least {p} rows, got {m}"
        )));
    }
    let scale = a
        .iter()
        .fold(0.0f64, |s, v| s.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    for k in 0..p {
        // Householder reflection zeroing column k below the diagonal.
        let mut norm = 0.0;
        for i in k..m {
            norm += a[i * p + k] * a[i * p + k];
        }
        let norm = norm.sqrt();
        if norm <= 1e-12 * scale {
            return Err(Error::Numerical(
                "design matrix is singular; add a ridge penalty or remove collinear features"
                    .to_string(),
            ));
        }
        let alpha = if a[k * p + k] >= 0.0 { -norm } else { norm };
        let mut v = vec![0.0; m - k];
        v[0] = a[k * p + k] - alpha;
        for i in k + 1..m {
            v[i - k] = a[i * p + k];
        }
        let v_norm2: f64 = v.iter().map(|x| x * x).sum();
        if v_norm2 > 0.0 {
            for j in k..p {
                let mut dot = 0.0;
                for i in k..m {
                    dot += v[i - k] * a[i * p + j];
                }
                let f = 2.0 * dot / v_norm2;
                for i in k..m {
                    a[i * p + j] -= f * v[i - k];
                }
            }
            let mut dot = 0.0;
            for i in k..m {
                dot += v[i - k] * y[i];
            }
            let f = 2.0 * dot / v_norm2;
            for i in k..m {
                y[i] -= f * v[i - k];
            }
        }
        a[k * p + k] = alpha;
    }
    // Back substitution on R.
    let mut x = vec![0.0; p];
    for i in (0..p).rev() {
        let mut s = y[i];
        for j in i + 1..p {
            s -= a[i * p + j] * x[j];
        }
        let r = a[i * p + i];
        if r.abs() <= 1e-12 * scale {
            return Err(Error::Numerical(
                "design matrix is singular; add a ridge penalty or remove collinear features"
                    .to_string(),
            ));
        }
        x[i] = s / r;
    }
    Ok(x)
}

/// Row-major square matrix.
pub struct SquareMatrix {
    pub n: usize,
    pub a: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            a: vec![0.0; n * n],
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.a[i * self.n + j] = v;
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        self.a[i * self.n + j] += v;
    }
}

/// Solve `A x = b` for symmetric positive semi-definite `A`: Cholesky first,
/// pivoted elimination if the factorization stalls.
pub fn solve_symmetric(a: &SquareMatrix, b: &[f64]) -> Result<Vec<f64>> {
    match cholesky_solve(a, b) {
        Some(x) => Ok(x),
        None => gaussian_solve(a, b),
    }
}

fn cholesky_solve(m: &SquareMatrix, b: &[f64]) -> Option<Vec<f64>> {
    let n = m.n;
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = m.get(i, j);
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    // Forward then back substitution.
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] -= l[i * n + k] * y[k];
        }
        y[i] /= l[i * n + i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            y[i] -= l[k * n + i] * y[k];
        }
        y[i] /= l[i * n + i];
    }
    Some(y)
}

fn gaussian_solve(m: &SquareMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = m.n;
    let mut a = m.a.clone();
    let mut x = b.to_vec();
    let scale = a.iter().fold(0.0f64, |s, v| s.max(v.abs())).max(1.0);
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .unwrap();
        let pivot = a[pivot_row * n + col];
        if pivot.abs() <= 1e-12 * scale {
            return Err(Error::Numerical(
                "design matrix is singular; add a ridge penalty or remove collinear features"
                    .to_string(),
            ));
        }
        if pivot_row != col {
            for j in 0..n {
                a.swap(col * n + j, pivot_row * n + j);
            }
            x.swap(col, pivot_row);
        }
        for row in col + 1..n {
            let factor = a[row * n + col] / a[col * n + col];
            if factor != 0.0 {
                for j in col..n {
                    a[row * n + j] -= factor * a[col * n + j];
                }
                x[row] -= factor * x[col];
            }
        }
    }
    for i in (0..n).rev() {
        for j in i + 1..n {
            x[i] -= a[i * n + j] * x[j];
        }
        x[i] /= a[i * n + i];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_spd_system() {
        let mut a = SquareMatrix::zeros(2);
        a.set(0, 0, 4.0);
        a.set(0, 1, 1.0);
        a.set(1, 0, 1.0);
        a.set(1, 1, 3.0);
        let x = solve_symmetric(&a, &[1.0, 2.0]).unwrap();
        // Exact solution (1/11, 7/11).
        assert!((x[0] - 1.0 / 11.0).abs() < 1e-12);
        assert!((x[1] - 7.0 / 11.0).abs() < 1e-12);
    }

    #[test]
    fn falls_back_for_indefinite_system() {
        let mut a = SquareMatrix::zeros(2);
        a.set(0, 0, 0.0);
        a.set(0, 1, 1.0);
        a.set(1, 0, 1.0);
        a.set(1, 1, 0.0);
        let x = solve_symmetric(&a, &[2.0, 3.0]).unwrap();
        assert!((x[0] - 3.0).abs() < 1e-12);
        assert!((x[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn singular_system_is_an_error() {
        let mut a = SquareMatrix::zeros(2);
        a.set(0, 0, 1.0);
        a.set(0, 1, 2.0);
        a.set(1, 0, 2.0);
        a.set(1, 1, 4.0);
        assert!(solve_symmetric(&a, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn least_squares_recovers_exact_solution() {
        // Overdetermined consistent system.
        let a = vec![
            1.0, 0.0, //
            0.0, 1.0, //
            1.0, 1.0, //
            2.0, -1.0,
        ];
        let coef = [3.0, -2.0];
        let y: Vec<f64> = (0..4)
            .map(|i| a[i * 2] * coef[0] + a[i * 2 + 1] * coef[1])
            .collect();
        let x = least_squares(a, y, 2).unwrap();
        assert!((x[0] - 3.0).abs() < 1e-12);
        assert!((x[1] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn least_squares_handles_extreme_row_scales() {
        // One row a million times heavier must not break the solve.
        let w = 1e6_f64;
        let a = vec![
            w, 0.0, //
            1.0, 0.5, //
            1.0, 1.0, //
            1.0, 2.0,
        ];
        let y = vec![w * 1.0, 1.2, 1.4, 1.9];
        let x = least_squares(a, y, 2).unwrap();
        assert!(x.iter().all(|v| v.is_finite()));
        // The heavy row is interpolated almost exactly.
        assert!((x[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn least_squares_rejects_rank_deficiency() {
        let a = vec![
            1.0, 2.0, //
            2.0, 4.0, //
            3.0, 6.0,
        ];
        assert!(least_squares(a, vec![1.0, 2.0, 3.0], 2).is_err());
    }
}
