//! Small numeric helpers used throughout the crate.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

pub const LN_2PI: f64 = 1.8378770664093453;

/// log(Σ exp(x_i)) with max shift; -inf for an empty or all -inf input.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = xs.iter().map(|x| (x - m).exp()).sum();
    m + s.ln()
}

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile.
pub fn norm_quantile(p: f64) -> f64 {
    -std::f64::consts::SQRT_2 * statrs::function::erf::erfc_inv(2.0 * p)
}

/// Log of the standard normal density.
pub fn norm_logpdf(x: f64) -> f64 {
    -0.5 * x * x - 0.5 * LN_2PI
}

/// Zero-mean Gaussian log-density machinery built on a Cholesky factor.
#[derive(Clone, Debug)]
pub struct MvnChol {
    chol: Cholesky<f64, Dyn>,
    log_det: f64,
    dim: usize,
}

impl MvnChol {
    /// Factorizes a covariance matrix; `None` if it is not positive definite.
    pub fn new(cov: &DMatrix<f64>) -> Option<Self> {
        let dim = cov.nrows();
        let chol = Cholesky::new(cov.clone())?;
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Some(MvnChol { chol, log_det, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// Log-density of `y` under N(0, Σ).
    pub fn logpdf(&self, y: &DVector<f64>) -> f64 {
        let mut z = y.clone();
        self.chol.l_dirty().solve_lower_triangular_mut(&mut z);
        -0.5 * (self.dim as f64 * LN_2PI + self.log_det + z.norm_squared())
    }

    /// Solves Σ x = b.
    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    /// Lower Cholesky factor L with Σ = L Lᵀ.
    pub fn lower(&self) -> DMatrix<f64> {
        self.chol.l()
    }
}

/// Smallest eigenvalue of a symmetric matrix (diagnostic path).
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Sample mean.
pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance (denominator n-1).
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// p-th empirical quantile by linear interpolation of order statistics.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = p * (n as f64 - 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logsumexp_matches_direct() {
        let xs: [f64; 3] = [0.3, -1.2, 2.0];
        let direct: f64 = xs.iter().map(|x| x.exp()).sum::<f64>().ln();
        assert!((logsumexp(&xs) - direct).abs() < 1e-14);
        assert_eq!(logsumexp(&[]), f64::NEG_INFINITY);
    }

    #[test]
    fn logsumexp_handles_large_magnitudes() {
        let xs = [-1000.0, -1000.0];
        assert!((logsumexp(&xs) - (-1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn norm_cdf_quantile_round_trip() {
        for &x in &[-6.0, -2.5, -0.3, 0.0, 0.7, 3.9, 6.0] {
            let p = norm_cdf(x);
            // conditioning of the round trip degrades like 1/φ(x) in the tails
            let tol = 1e-9 + 1e-14 / norm_logpdf(x).exp();
            assert!((norm_quantile(p) - x).abs() < tol, "x={x}");
        }
        assert!((norm_cdf(0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn mvn_logpdf_identity_dim() {
        let cov = DMatrix::identity(3, 3);
        let mvn = MvnChol::new(&cov).unwrap();
        let y = DVector::zeros(3);
        assert!((mvn.logpdf(&y) + 1.5 * LN_2PI).abs() < 1e-12);
    }

    #[test]
    fn mvn_logpdf_matches_explicit_inverse() {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.0]);
        let mvn = MvnChol::new(&cov).unwrap();
        let y = DVector::from_column_slice(&[0.4, -1.1]);
        let inv = cov.clone().try_inverse().unwrap();
        let det: f64 = cov.determinant();
        let q = (y.transpose() * inv * &y)[(0, 0)];
        let direct = -0.5 * (2.0 * LN_2PI + det.ln() + q);
        assert!((mvn.logpdf(&y) - direct).abs() < 1e-12);
    }
}
