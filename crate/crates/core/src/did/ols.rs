// SPDX-License-Identifier: MIT OR Apache-2.0

//! Ordinary least squares through a Householder QR factorization.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Ratio of smallest to largest singular value (after scaling every column to
/// unit norm) below which the design is treated as rank deficient.
pub const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub coefficients: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Classical homoskedastic standard errors. `NaN` when `df == 0`.
    pub stderrs: Vec<f64>,
    /// Residual variance estimate `RSS / df`.
    pub sigma2: f64,
    /// Residual degrees of freedom `n - p`.
    pub df: usize,
}

pub fn solve_ols(design: &DMatrix<f64>, response: &DVector<f64>) -> Result<OlsFit> {
    let names: Vec<String> = (0..design.ncols()).map(|j| format!("x{j}")).collect();
    solve_ols_named(design, response, &names)
}

/// Same as [`solve_ols`], naming columns in the singular-design error.
pub fn solve_ols_named(design: &DMatrix<f64>, response: &DVector<f64>, column_names: &[String]) -> Result<OlsFit> {
    let (n, p) = design.shape();
    if p == 0 {
        return Err(Error::Argument("design has no columns".into()));
    }
    if response.len() != n {
        return Err(Error::Argument(format!(
            "design has {n} rows but response has {} entries",
            response.len()
        )));
    }
    if n < p {
        return Err(Error::Argument(format!(
            "{n} observations cannot identify {p} coefficients"
        )));
    }
    if column_names.len() != p {
        return Err(Error::Argument("one name per design column required".into()));
    }
    if design.iter().chain(response.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("design or response has non-finite entries".into()));
    }

    check_rank(design, column_names)?;

    let qr = design.clone().qr();
    let q = qr.q();
    let r = qr.r();
    let qty = q.transpose() * response;
    let coefficients = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
    let residuals = response - design * &coefficients;

    let df = n - p;
    let rss = residuals.norm_squared();
    let sigma2 = if df > 0 { rss / df as f64 } else { f64::NAN };
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or_else(|| Error::Numerical("triangular inverse failed".into()))?;
    // diag((X'X)^-1) = squared row norms of R^-1
    let stderrs = r_inv
        .row_iter()
        .map(|row| (sigma2 * row.norm_squared()).sqrt())
        .collect();

    Ok(OlsFit {
        coefficients: coefficients.iter().copied().collect(),
        residuals: residuals.iter().copied().collect(),
        stderrs,
        sigma2,
        df,
    })
}

fn check_rank(design: &DMatrix<f64>, names: &[String]) -> Result<()> {
    let p = design.ncols();
    let mut scaled = design.clone();
    let mut zero_cols = Vec::new();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        let norm = col.norm();
        if norm == 0.0 {
            zero_cols.push(j);
        } else {
            col /= norm;
        }
    }
    if !zero_cols.is_empty() {
        return Err(Error::SingularDesign {
            columns: zero_cols.into_iter().map(|j| names[j].clone()).collect(),
        });
    }
    let sv = scaled.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    if min / max >= RANK_TOLERANCE {
        return Ok(());
    }
    // Columns whose scaled QR pivot collapses depend on the columns before them.
    let r = scaled.qr().r();
    let diag: Vec<f64> = (0..p).map(|j| r[(j, j)].abs()).collect();
    let mut offending: Vec<usize> = (0..p).filter(|&j| diag[j] < 1e-8).collect();
    if offending.is_empty() {
        let worst = (0..p).min_by(|&a, &b| diag[a].total_cmp(&diag[b])).expect("p > 0");
        offending.push(worst);
    }
    Err(Error::SingularDesign {
        columns: offending.into_iter().map(|j| names[j].clone()).collect(),
    })
}
