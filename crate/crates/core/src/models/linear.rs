//! Ordinary least squares on standardized inputs.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::standardize::Standardizer;
use crate::error::{Error, Result};

/// Ridge penalty used when the design matrix is rank deficient.
pub const RIDGE_FALLBACK: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub standardizer: Standardizer,
    pub intercept: f64,
    /// Coefficients on standardized columns; zero for constant columns.
    pub coefficients: Vec<f64>,
    /// Whether the ridge fallback was needed.
    pub ridge: bool,
}

impl LinearModel {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let z = self.standardizer.transform_row(row);
        self.intercept + z.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Intercept and slopes expressed on the original feature scale.
    pub fn raw_coefficients(&self) -> (f64, Vec<f64>) {
        let s = &self.standardizer;
        let slopes: Vec<f64> = self
            .coefficients
            .iter()
            .enumerate()
            .map(|(j, c)| if s.constant[j] { 0.0 } else { c / s.scale[j] })
            .collect();
        let intercept = self.intercept
            - slopes
                .iter()
                .zip(&s.mean)
                .map(|(b, m)| b * m)
                .sum::<f64>();
        (intercept, slopes)
    }
}

/// Least-squares fit with an intercept, solved by Householder QR.
pub fn ols_fit(x: &[Vec<f64>], y: &[f64]) -> Result<LinearModel> {
    let n = x.len();
    if n != y.len() {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: y.len(),
        });
    }
    let n_cols = x.first().map_or(0, Vec::len);
    if n <= n_cols {
        return Err(Error::InvalidParameter(format!(
            "OLS needs more rows than columns ({n} <= {n_cols})"
        )));
    }
    let standardizer = Standardizer::fit(x);
    let active: Vec<usize> = (0..n_cols).filter(|&j| !standardizer.constant[j]).collect();
    if active.len() < n_cols {
        log::warn!(
            "OLS: {} constant column(s) dropped from the fit",
            n_cols - active.len()
        );
    }
    let p = active.len() + 1;
    let design = DMatrix::from_fn(n, p, |i, c| {
        if c == 0 {
            1.0
        } else {
            let j = active[c - 1];
            (x[i][j] - standardizer.mean[j]) / standardizer.scale[j]
        }
    });
    let target = DVector::from_column_slice(y);

    let qr = design.clone().qr();
    let r = qr.r();
    let diag_max = (0..p).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    let deficient = (0..p).any(|i| r[(i, i)].abs() <= 1e-10 * diag_max.max(1.0));
    let beta = if deficient {
        log::warn!("OLS: design matrix is rank deficient, using ridge fallback {RIDGE_FALLBACK}");
        let mut gram = design.transpose() * &design;
        for i in 1..p {
            gram[(i, i)] += RIDGE_FALLBACK;
        }
        let rhs = design.transpose() * &target;
        gram.clone()
            .cholesky()
            .map(|c| c.solve(&rhs))
            .or_else(|| gram.lu().solve(&rhs))
            .ok_or_else(|| Error::InvalidParameter("OLS system is singular".into()))?
    } else {
        let mut qty = target.clone();
        qr.q_tr_mul(&mut qty);
        let rhs = qty.rows(0, p).into_owned();
        r.solve_upper_triangular(&rhs)
            .ok_or_else(|| Error::InvalidParameter("OLS triangular solve failed".into()))?
    };

    let mut coefficients = vec![0.0; n_cols];
    for (c, &j) in active.iter().enumerate() {
        coefficients[j] = beta[c + 1];
    }
    Ok(LinearModel {
        standardizer,
        intercept: beta[0],
        coefficients,
        ridge: deficient,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exact_line() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 * 0.5]).collect();
        let y: Vec<f64> = x.iter().map(|r| 2.0 * r[0] + 1.0).collect();
        let m = ols_fit(&x, &y).unwrap();
        let (b0, b) = m.raw_coefficients();
        assert!((b0 - 1.0).abs() < 1e-8);
        assert!((b[0] - 2.0).abs() < 1e-8);
        assert!((m.predict_row(&x[3]) - y[3]).abs() < 1e-8);
    }

    #[test]
    fn constant_target_gives_zero_slopes() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let y = vec![4.5; 10];
        let m = ols_fit(&x, &y).unwrap();
        let (b0, b) = m.raw_coefficients();
        assert!((b0 - 4.5).abs() < 1e-10);
        assert!(b.iter().all(|s| s.abs() < 1e-10));
    }

    #[test]
    fn constant_column_is_skipped() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 7.0]).collect();
        let y: Vec<f64> = (0..10).map(|i| 3.0 * i as f64).collect();
        let m = ols_fit(&x, &y).unwrap();
        assert_eq!(m.coefficients[1], 0.0);
        assert!(!m.ridge);
    }

    #[test]
    fn collinear_columns_use_ridge() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        let y: Vec<f64> = (0..10).map(|i| 3.0 * i as f64 + 1.0).collect();
        let m = ols_fit(&x, &y).unwrap();
        assert!(m.ridge);
        for (row, t) in x.iter().zip(&y) {
            assert!((m.predict_row(row) - t).abs() < 1e-4);
        }
    }

    #[test]
    fn too_few_rows() {
        let x = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        assert!(ols_fit(&x, &[1.0, 2.0]).is_err());
    }
}
