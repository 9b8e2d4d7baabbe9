//! Margin-closed VAR correlation assembly: builds the within-regime block
//! Toeplitz correlation matrix of `(k+1)` stacked observations from the
//! univariate Toeplitz matrices and the contemporaneous correlation matrix,
//! so that every sub-process keeps its own serial structure.
//!
//! Cross-correlations between two univariate components are pinned down by
//! requiring both components' AR residual functionals (forward in time for
//! one, time-reversed for the other) to be orthogonal to the opposite
//! component at the centre of a `2k+1` window; this yields a linear system
//! whose solution scales with the contemporaneous correlation.

use crate::error::{Error, Result};
use crate::serialcorr::{acf_to_pacf, ldlt_min_pivot, pacf_to_acf, ToeplitzCorr};
use nalgebra::DMatrix;

/// Contemporaneous cross-sectional correlation matrix (d x d).
#[derive(Clone, Debug, PartialEq)]
pub struct ContempCorr {
    m: DMatrix<f64>,
}

impl ContempCorr {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        let d = m.nrows();
        if d != m.ncols() {
            return Err(Error::Shape("contemporaneous matrix must be square".into()));
        }
        for i in 0..d {
            if (m[(i, i)] - 1.0).abs() > 1e-10 {
                return Err(Error::ParamDomain(format!("diagonal entry ({i},{i}) must be 1")));
            }
            for j in (i + 1)..d {
                if (m[(i, j)] - m[(j, i)]).abs() > 1e-10 {
                    return Err(Error::Shape(format!("asymmetric at ({i},{j})")));
                }
            }
        }
        if ldlt_min_pivot(&m) <= 0.0 {
            return Err(Error::NotPositiveDefinite("contemporaneous correlation matrix".into()));
        }
        Ok(ContempCorr { m })
    }

    pub fn identity(d: usize) -> Self {
        ContempCorr { m: DMatrix::identity(d, d) }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.m[(i, j)]
    }
}

/// Block Toeplitz correlation matrix of `blocks` stacked d-vectors, newest
/// first: row block `l` corresponds to the observation at time `t - l`.
#[derive(Clone, Debug, PartialEq)]
pub struct RegimeCorr {
    matrix: DMatrix<f64>,
    dim: usize,
    blocks: usize,
}

impl RegimeCorr {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Number of variables d.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of stacked time points (window length).
    pub fn blocks(&self) -> usize {
        self.blocks
    }

    /// The top-left `w x w` block sub-matrix (window of `w` newest points).
    pub fn leading(&self, w: usize) -> DMatrix<f64> {
        assert!(w <= self.blocks);
        self.matrix.view((0, 0), (w * self.dim, w * self.dim)).into_owned()
    }

    /// Cross-lag correlation `corr(Y_{i,t}, Y_{j,t-m})` for `0 <= m < blocks`.
    pub fn cross_lag(&self, i: usize, j: usize, m: usize) -> f64 {
        self.matrix[(i, m * self.dim + j)]
    }

    /// Rows/columns `(i, i+d, ...)` as the univariate Toeplitz matrix of
    /// variable `i`.
    pub fn univariate(&self, i: usize) -> DMatrix<f64> {
        let n = self.blocks;
        DMatrix::from_fn(n, n, |r, c| self.matrix[(r * self.dim + i, c * self.dim + i)])
    }
}

/// Coefficients of the linear projection of the centre of a `2k+1` window on
/// the `k` newer points, from the Toeplitz autocorrelation system.
pub fn psi_coefficients(acf: &ToeplitzCorr) -> Result<Vec<f64>> {
    let k = acf.lags().len();
    if k == 0 {
        return Ok(Vec::new());
    }
    let t = DMatrix::from_fn(k, k, |i, j| acf.acf(i.abs_diff(j)));
    // right-hand side (ϱ_k, ϱ_{k-1}, ..., ϱ_1)
    let rhs = nalgebra::DVector::from_fn(k, |m, _| acf.acf(k - m));
    t.lu()
        .solve(&rhs)
        .map(|v| v.iter().cloned().collect())
        .ok_or_else(|| Error::NotPositiveDefinite("singular Toeplitz system".into()))
}

/// Banded residual matrix: row r carries `-1` followed by `ψ_k ... ψ_1`,
/// shifted right by one per row; dimensions `k x (2k+1)`.
pub fn h_matrix(psi: &[f64]) -> DMatrix<f64> {
    let k = psi.len();
    let mut h = DMatrix::zeros(k, 2 * k + 1);
    for r in 0..k {
        h[(r, r)] = -1.0;
        for s in 1..=k {
            h[(r, r + s)] = psi[k - s];
        }
    }
    h
}

/// Cross-lag correlations `(ϱ_{ij,-k}, ..., ϱ_{ij,-1}, ϱ_{ij,1}, ..., ϱ_{ij,k})`
/// for the ordered pair `(i, j)` with contemporaneous correlation `rho0`.
pub fn cross_lag_correlations(
    h_i: &DMatrix<f64>,
    h_j: &DMatrix<f64>,
    rho0: f64,
    pair: (usize, usize),
) -> Result<Vec<f64>> {
    let k = h_i.nrows();
    if k == 0 {
        return Ok(Vec::new());
    }
    let n = 2 * k + 1;
    debug_assert_eq!(h_i.ncols(), n);
    // H_j with columns reversed (time reversal of the window)
    let mut a = DMatrix::zeros(2 * k, 2 * k);
    let mut b = nalgebra::DVector::zeros(2 * k);
    for r in 0..k {
        let mut ci = 0;
        for c in 0..n {
            if c == k {
                b[r] = h_i[(r, c)];
                b[k + r] = h_j[(r, c)];
                continue;
            }
            a[(r, ci)] = h_i[(r, c)];
            a[(k + r, ci)] = h_j[(r, n - 1 - c)];
            ci += 1;
        }
    }
    let x = a
        .lu()
        .solve(&b)
        .ok_or(Error::DegeneratePair { i: pair.0, j: pair.1 })?;
    Ok(x.iter().map(|v| -rho0 * v).collect())
}

/// Per-pair cross-lag lookup, `lag(m) = corr(Y_{i,t}, Y_{j,t-m})`.
#[derive(Clone, Debug)]
pub struct CrossLags {
    k: usize,
    rho0: f64,
    neg: Vec<f64>, // ϱ_{-1}, ϱ_{-2}, ..., ϱ_{-k}
    pos: Vec<f64>, // ϱ_{1}, ϱ_{2}, ..., ϱ_{k}
}

impl CrossLags {
    pub fn from_solution(rho0: f64, sol: &[f64]) -> Self {
        let k = sol.len() / 2;
        let mut neg = vec![0.0; k];
        let mut pos = vec![0.0; k];
        for m in 1..=k {
            neg[m - 1] = sol[k - m];
            pos[m - 1] = sol[k - 1 + m];
        }
        CrossLags { k, rho0, neg, pos }
    }

    pub fn lag(&self, m: i64) -> f64 {
        if m == 0 {
            self.rho0
        } else if m > 0 {
            self.pos[(m - 1) as usize]
        } else {
            self.neg[(-m - 1) as usize]
        }
    }

    pub fn max_lag(&self) -> usize {
        self.k
    }
}

/// Builds the within-regime correlation matrix of `k+1` stacked observations,
/// where `k` is the common length of the univariate autocorrelation inputs.
pub fn build_regime_corr(univ: &[ToeplitzCorr], contemp: &ContempCorr) -> Result<RegimeCorr> {
    let k = univ.first().map(|t| t.lags().len()).unwrap_or(0);
    build_regime_corr_window(univ, contemp, k + 1)
}

/// Same construction for an arbitrary window length `w >= 1`. Windows longer
/// than `k+1` extend the structure by the AR recursions implied by zero
/// partial autocorrelations beyond each component's order.
pub fn build_regime_corr_window(
    univ: &[ToeplitzCorr],
    contemp: &ContempCorr,
    w: usize,
) -> Result<RegimeCorr> {
    let m = assemble_window(univ, contemp, w)?;
    if ldlt_min_pivot(&m) <= 0.0 {
        return Err(Error::NotPositiveDefinite(
            "assembled within-regime correlation matrix; parameters are infeasible".into(),
        ));
    }
    Ok(RegimeCorr { matrix: m, dim: contemp.dim(), blocks: w })
}

/// Minimum LDLᵀ pivot of the raw within-regime assembly; used to quantify
/// how infeasible a parameter set is. `-1.0` when the assembly itself fails.
pub fn assembly_min_pivot(univ: &[ToeplitzCorr], contemp: &ContempCorr, w: usize) -> f64 {
    match assemble_window(univ, contemp, w) {
        Ok(m) => ldlt_min_pivot(&m),
        Err(_) => -1.0,
    }
}

fn assemble_window(
    univ: &[ToeplitzCorr],
    contemp: &ContempCorr,
    w: usize,
) -> Result<DMatrix<f64>> {
    let d = contemp.dim();
    if univ.len() != d {
        return Err(Error::Shape(format!(
            "{} univariate structures for a {d}-dimensional contemporaneous matrix",
            univ.len()
        )));
    }
    if w == 0 {
        return Err(Error::ParamDomain("window length must be at least 1".into()));
    }
    let k = univ.iter().map(|t| t.lags().len()).max().unwrap_or(0);
    for (i, t) in univ.iter().enumerate() {
        if t.lags().len() != k {
            return Err(Error::Shape(format!(
                "univariate structure {i} has {} lags, expected {k}",
                t.lags().len()
            )));
        }
    }
    // build at the largest lag needed, then cut down
    let k_build = k.max(w - 1);
    let extended: Vec<ToeplitzCorr> = univ
        .iter()
        .map(|t| {
            if k_build == k {
                Ok(t.clone())
            } else {
                let mut pacf = acf_to_pacf(t.lags())?;
                pacf.resize(k_build, 0.0);
                ToeplitzCorr::from_acf(pacf_to_acf(&pacf)?)
            }
        })
        .collect::<Result<_>>()?;

    let mut cross: Vec<Vec<Option<CrossLags>>> = vec![vec![None; d]; d];
    if k_build > 0 {
        let hs: Vec<DMatrix<f64>> = extended
            .iter()
            .map(|t| psi_coefficients(t).map(|p| h_matrix(&p)))
            .collect::<Result<_>>()?;
        for i in 0..d {
            for j in 0..d {
                if i == j {
                    continue;
                }
                let sol =
                    cross_lag_correlations(&hs[i], &hs[j], contemp.entry(i, j), (i, j))?;
                cross[i][j] = Some(CrossLags::from_solution(contemp.entry(i, j), &sol));
            }
        }
    }

    let n = w * d;
    let mut m = DMatrix::zeros(n, n);
    for l1 in 0..w {
        for l2 in 0..w {
            for i in 0..d {
                for j in 0..d {
                    let lag = l2 as i64 - l1 as i64; // corr(Y_{i,t-l1}, Y_{j,t-l2})
                    let v = if i == j {
                        extended[i].acf(lag.unsigned_abs() as usize)
                    } else if lag == 0 {
                        contemp.entry(i, j)
                    } else {
                        cross[i][j].as_ref().expect("cross lags built").lag(lag)
                    };
                    m[(l1 * d + i, l2 * d + j)] = v;
                }
            }
        }
    }
    Ok(m)
}

/// Sub-process correlation matrix over the variable subset `I`; equals the
/// direct build from the subsetted inputs (closure under margins).
pub fn extract_subprocess_corr(r: &RegimeCorr, subset: &[usize]) -> Result<RegimeCorr> {
    let d = r.dim();
    if subset.is_empty() {
        return Err(Error::ParamDomain("subset must be nonempty".into()));
    }
    for &i in subset {
        if i >= d {
            return Err(Error::ParamDomain(format!("variable index {i} out of range (d={d})")));
        }
    }
    let mut seen = vec![false; d];
    for &i in subset {
        if seen[i] {
            return Err(Error::ParamDomain(format!("duplicate variable index {i}")));
        }
        seen[i] = true;
    }
    let ds = subset.len();
    let w = r.blocks();
    let m = DMatrix::from_fn(w * ds, w * ds, |a, b| {
        let (l1, i) = (a / ds, subset[a % ds]);
        let (l2, j) = (b / ds, subset[b % ds]);
        r.matrix()[(l1 * d + i, l2 * d + j)]
    });
    Ok(RegimeCorr { matrix: m, dim: ds, blocks: w })
}
