//! Serial correlation structures of univariate AR components: the bijection
//! between partial autocorrelations in (-1,1) and positive-definite Toeplitz
//! correlation matrices (Durbin-Levinson in both directions), plus positive
//! definiteness checks.

use crate::error::{Error, Result};
use nalgebra::DMatrix;

/// Symmetric Toeplitz correlation matrix stored as its autocorrelations
/// `(ϱ_1, ..., ϱ_k)`; the implied matrix has dimension `k + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct ToeplitzCorr {
    acf: Vec<f64>,
}

impl ToeplitzCorr {
    pub fn from_acf(acf: Vec<f64>) -> Result<Self> {
        // validity is equivalent to all partial autocorrelations being in (-1,1)
        acf_to_pacf(&acf)?;
        Ok(ToeplitzCorr { acf })
    }

    pub fn from_pacf(pacf: &[f64]) -> Result<Self> {
        Ok(ToeplitzCorr { acf: pacf_to_acf(pacf)? })
    }

    pub fn identity(k: usize) -> Self {
        ToeplitzCorr { acf: vec![0.0; k] }
    }

    /// Autocorrelation at lag `m >= 0`.
    pub fn acf(&self, m: usize) -> f64 {
        if m == 0 {
            1.0
        } else {
            self.acf[m - 1]
        }
    }

    pub fn lags(&self) -> &[f64] {
        &self.acf
    }

    pub fn dim(&self) -> usize {
        self.acf.len() + 1
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::from_fn(n, n, |i, j| self.acf(i.abs_diff(j)))
    }
}

/// Maps partial autocorrelations `α_1..α_k` (each in (-1,1)) to the
/// autocorrelations `ϱ_1..ϱ_k` of the corresponding AR correlation matrix.
pub fn pacf_to_acf(pacf: &[f64]) -> Result<Vec<f64>> {
    for (l, &a) in pacf.iter().enumerate() {
        if !(a > -1.0 && a < 1.0) {
            return Err(Error::ParamDomain(format!(
                "partial autocorrelation at lag {} is {} (must be in (-1,1))",
                l + 1,
                a
            )));
        }
    }
    let k = pacf.len();
    let mut acf = Vec::with_capacity(k);
    let mut phi: Vec<f64> = Vec::with_capacity(k);
    for m in 1..=k {
        let alpha = pacf[m - 1];
        if m == 1 {
            acf.push(alpha);
            phi.push(alpha);
            continue;
        }
        // innovation variance ratio after m-1 lags
        let v: f64 = 1.0 - phi.iter().zip(&acf).map(|(p, r)| p * r).sum::<f64>();
        let pred: f64 = (0..m - 1).map(|i| phi[i] * acf[m - 2 - i]).sum();
        acf.push(pred + alpha * v);
        let old = phi.clone();
        for i in 0..m - 1 {
            phi[i] = old[i] - alpha * old[m - 2 - i];
        }
        phi.push(alpha);
    }
    Ok(acf)
}

/// Inverse map: autocorrelations to partial autocorrelations. Errors when the
/// implied Toeplitz matrix is not positive definite.
pub fn acf_to_pacf(acf: &[f64]) -> Result<Vec<f64>> {
    let k = acf.len();
    let mut pacf = Vec::with_capacity(k);
    let mut phi: Vec<f64> = Vec::with_capacity(k);
    for m in 1..=k {
        let alpha = if m == 1 {
            acf[0]
        } else {
            let v: f64 = 1.0 - phi.iter().zip(acf).map(|(p, r)| p * r).sum::<f64>();
            if v <= 0.0 {
                return Err(Error::NotPositiveDefinite(format!(
                    "autocorrelation sequence is invalid at lag {m}"
                )));
            }
            let pred: f64 = (0..m - 1).map(|i| phi[i] * acf[m - 2 - i]).sum();
            (acf[m - 1] - pred) / v
        };
        if !(alpha > -1.0 && alpha < 1.0) {
            return Err(Error::NotPositiveDefinite(format!(
                "autocorrelation sequence is invalid at lag {m} (pacf {alpha})"
            )));
        }
        pacf.push(alpha);
        let old = phi.clone();
        for i in 0..m - 1 {
            phi[i] = old[i] - alpha * old[m - 2 - i];
        }
        phi.push(alpha);
    }
    Ok(pacf)
}

/// AR prediction coefficients `(φ_1..φ_k)` solving the Yule-Walker system of
/// the given autocorrelations.
pub fn yule_walker(acf: &[f64]) -> Result<Vec<f64>> {
    let pacf = acf_to_pacf(acf)?;
    // rebuild phi by Durbin-Levinson
    let mut phi: Vec<f64> = Vec::with_capacity(acf.len());
    for (m, &alpha) in pacf.iter().enumerate() {
        let old = phi.clone();
        for i in 0..m {
            phi[i] = old[i] - alpha * old[m - 1 - i];
        }
        phi.push(alpha);
    }
    Ok(phi)
}

/// Tests positive definiteness of a symmetric matrix by attempting a
/// symmetric LDLᵀ factorization with pivot threshold `tol`; eigenvalues are
/// only computed on the failure path for a sharper diagnostic.
pub fn is_positive_definite(m: &DMatrix<f64>, tol: f64) -> Result<bool> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(Error::Shape(format!("matrix is {}x{}, expected square", n, m.ncols())));
    }
    let scale = m.amax().max(1.0);
    for i in 0..n {
        for j in (i + 1)..n {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-8 * scale {
                return Err(Error::Shape(format!("matrix asymmetric at ({i},{j})")));
            }
        }
    }
    Ok(ldlt_min_pivot(m) > tol)
}

/// Smallest pivot of the LDLᵀ factorization; negative or tiny on non-PD input.
pub(crate) fn ldlt_min_pivot(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut a = m.clone();
    let mut min_pivot = f64::INFINITY;
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= a[(j, k)] * a[(j, k)] * a[(k, k)];
        }
        a[(j, j)] = d;
        min_pivot = min_pivot.min(d);
        if d <= 0.0 {
            return min_pivot;
        }
        for i in (j + 1)..n {
            let mut v = a[(i, j)];
            for k in 0..j {
                v -= a[(i, k)] * a[(j, k)] * a[(k, k)];
            }
            a[(i, j)] = v / d;
        }
    }
    min_pivot
}
