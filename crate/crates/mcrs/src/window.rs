//! Correlation matrices of observation windows whose labels may span regime
//! switches, conditional Gaussian representations, and window densities.
//!
//! A window of `w` consecutive observations with regime labels partitioned
//! into runs gets a block-banded correlation matrix: diagonal blocks are the
//! leading blocks of the per-regime matrices, each adjacent off block couples
//! only the oldest observation of the newer run to the older run through the
//! diagonal switch matrix `P`, and all farther blocks vanish.

use crate::error::{Error, Result};
use crate::mcvar::RegimeCorr;
use crate::model::RegimeModel;
use crate::util::MvnChol;
use nalgebra::{DMatrix, DVector};

/// Diagonal switch correlation matrix `P = diag(ρ_1, ..., ρ_d)` linking the
/// last observation before a regime change to the first one after it.
#[derive(Clone, Debug, PartialEq)]
pub struct SwitchCorr {
    rho: Vec<f64>,
}

impl SwitchCorr {
    pub fn new(rho: Vec<f64>) -> Result<Self> {
        for (i, &r) in rho.iter().enumerate() {
            if !(r > -1.0 && r < 1.0) {
                return Err(Error::ParamDomain(format!(
                    "switch correlation {i} is {r}, must be in (-1,1)"
                )));
            }
        }
        Ok(SwitchCorr { rho })
    }

    pub fn zero(d: usize) -> Self {
        SwitchCorr { rho: vec![0.0; d] }
    }

    pub fn dim(&self) -> usize {
        self.rho.len()
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }
}

/// A maximal constant-regime run inside a window.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Run {
    pub regime: usize,
    pub len: usize,
}

/// Regime labels of a window, stored newest first, with the derived run
/// partition (newest run first). Regime ids are 1-based throughout.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegimeWindow {
    labels: Vec<usize>,
    runs: Vec<Run>,
}

impl RegimeWindow {
    /// `labels[0]` is the newest time point.
    pub fn from_newest_first(labels: Vec<usize>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::ParamDomain("window must contain at least one label".into()));
        }
        if labels.contains(&0) {
            return Err(Error::ParamDomain("regime labels are 1-based".into()));
        }
        let mut runs: Vec<Run> = Vec::new();
        for &g in &labels {
            match runs.last_mut() {
                Some(r) if r.regime == g => r.len += 1,
                _ => runs.push(Run { regime: g, len: 1 }),
            }
        }
        Ok(RegimeWindow { labels, runs })
    }

    /// Labels given oldest first.
    pub fn from_time_order(labels: &[usize]) -> Result<Self> {
        Self::from_newest_first(labels.iter().rev().cloned().collect())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Newest-first labels.
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Runs, newest first.
    pub fn runs(&self) -> &[Run] {
        &self.runs
    }

    /// Number of regime switches inside the window.
    pub fn switch_count(&self) -> usize {
        self.runs.len() - 1
    }

    /// The window without its newest observation; `None` for length one.
    pub fn older(&self) -> Option<RegimeWindow> {
        if self.labels.len() == 1 {
            return None;
        }
        Some(RegimeWindow::from_newest_first(self.labels[1..].to_vec()).expect("valid"))
    }
}

/// Correlation matrix of a labeled window, newest-first block layout.
#[derive(Clone, Debug)]
pub struct WindowCorr {
    pub(crate) matrix: DMatrix<f64>,
    pub(crate) dim: usize,
    pub(crate) labels: Vec<usize>,
}

impl WindowCorr {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn window_len(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}

/// Assembles the window correlation matrix. `regime_corrs[g-1]` must cover at
/// least the longest run in the window.
pub fn build_window_corr(
    window: &RegimeWindow,
    regime_corrs: &[RegimeCorr],
    switch: &SwitchCorr,
) -> Result<WindowCorr> {
    let d = switch.dim();
    for r in window.runs() {
        let rc = regime_corrs.get(r.regime - 1).ok_or_else(|| {
            Error::ParamDomain(format!("no correlation matrix for regime {}", r.regime))
        })?;
        if rc.dim() != d {
            return Err(Error::Shape("regime matrix dimension mismatch".into()));
        }
        if rc.blocks() < r.len {
            return Err(Error::Shape(format!(
                "regime {} matrix covers {} blocks, run needs {}",
                r.regime,
                rc.blocks(),
                r.len
            )));
        }
    }
    let w = window.len();
    let n = w * d;
    let mut m = DMatrix::zeros(n, n);

    // diagonal blocks: leading sub-blocks of each run's regime matrix
    let mut offsets = Vec::with_capacity(window.runs().len());
    let mut off = 0usize;
    for r in window.runs() {
        offsets.push(off);
        let rc = &regime_corrs[r.regime - 1];
        let blk = rc.leading(r.len);
        m.view_mut((off * d, off * d), (r.len * d, r.len * d)).copy_from(&blk);
        off += r.len;
    }

    // adjacent off blocks: only the oldest point of the newer run is coupled,
    // cov(Y_first-of-new, older run) = P * (first d rows of the older regime matrix)
    for s in 0..window.runs().len().saturating_sub(1) {
        let newer = window.runs()[s];
        let older = window.runs()[s + 1];
        let rc_old = &regime_corrs[older.regime - 1];
        let top = rc_old.matrix().view((0, 0), (d, older.len * d));
        let r0 = (offsets[s] + newer.len - 1) * d;
        let c0 = offsets[s + 1] * d;
        for i in 0..d {
            for c in 0..older.len * d {
                let v = switch.rho()[i] * top[(i, c)];
                m[(r0 + i, c0 + c)] = v;
                m[(c0 + c, r0 + i)] = v;
            }
        }
    }

    if crate::serialcorr::ldlt_min_pivot(&m) <= 0.0 {
        return Err(Error::InfeasibleWindow { pattern: window.labels().to_vec() });
    }
    Ok(WindowCorr { matrix: m, dim: d, labels: window.labels().to_vec() })
}

/// Linear stochastic representation of the newest observation given the rest
/// of the window: per-lag coefficient matrices and innovation covariance.
#[derive(Clone, Debug)]
pub struct StochasticRep {
    /// `coeffs[l]` multiplies the observation `l+1` steps back.
    pub coeffs: Vec<DMatrix<f64>>,
    pub innovation_cov: DMatrix<f64>,
}

/// Conditional Gaussian representation of the newest block given the older
/// blocks of `w`.
pub fn conditional_rep(w: &WindowCorr) -> Result<StochasticRep> {
    let d = w.dim();
    let n = w.matrix().nrows();
    let rest = n - d;
    if rest == 0 {
        return Ok(StochasticRep { coeffs: Vec::new(), innovation_cov: w.matrix().clone() });
    }
    let s11 = w.matrix().view((0, 0), (d, d)).into_owned();
    let s12 = w.matrix().view((0, d), (d, rest)).into_owned();
    let s22 = w.matrix().view((d, d), (rest, rest)).into_owned();
    let chol = MvnChol::new(&s22).ok_or(Error::NotPositiveDefinite(
        "conditioning block of window correlation matrix".into(),
    ))?;
    let b = chol.solve(&s12.transpose()).transpose();
    let mut innovation = s11 - &b * s12.transpose();
    // symmetrize away factorization round-off
    for i in 0..d {
        for j in 0..i {
            let v = 0.5 * (innovation[(i, j)] + innovation[(j, i)]);
            innovation[(i, j)] = v;
            innovation[(j, i)] = v;
        }
    }
    let lags = rest / d;
    let coeffs = (0..lags).map(|l| b.view((0, l * d), (d, d)).into_owned()).collect();
    Ok(StochasticRep { coeffs, innovation_cov: innovation })
}

/// Exact zero-mean Gaussian log-density of a stacked window observation.
pub fn window_logdensity(y: &DVector<f64>, w: &WindowCorr) -> Result<f64> {
    if y.len() != w.matrix().nrows() {
        return Err(Error::Shape(format!(
            "observation length {} does not match window dimension {}",
            y.len(),
            w.matrix().nrows()
        )));
    }
    let mvn = MvnChol::new(w.matrix())
        .ok_or(Error::InfeasibleWindow { pattern: w.labels().to_vec() })?;
    Ok(mvn.logpdf(y))
}

/// Joint log-density of raw observations under the model, with the
/// probability-integral-transform Jacobian of every window point.
#[derive(Clone, Copy, Debug)]
pub struct ObsWindowDensity {
    pub log_density: f64,
    /// Number of transform evaluations that hit the CDF clamp.
    pub clamped: usize,
}

/// `x` rows are time-ordered (oldest first) and must match the window length.
pub fn obs_window_logdensity(
    x: &DMatrix<f64>,
    window: &RegimeWindow,
    model: &RegimeModel,
) -> Result<ObsWindowDensity> {
    let w = window.len();
    let d = model.dim();
    if x.nrows() != w || x.ncols() != d {
        return Err(Error::Shape(format!(
            "expected {w}x{d} observation window, got {}x{}",
            x.nrows(),
            x.ncols()
        )));
    }
    let corr = model.window_corr(window)?;
    let mut y = DVector::zeros(w * d);
    let mut jac = 0.0;
    let mut clamped = 0;
    for l in 0..w {
        let g = window.labels()[l];
        let row = w - 1 - l; // newest-first stacking of time-ordered rows
        for i in 0..d {
            let margin = model.margin(g, i);
            let gs = margin.pit_to_normal(x[(row, i)]);
            if gs.clamped {
                clamped += 1;
            }
            y[l * d + i] = gs.value;
            jac += margin.pit_derivative(x[(row, i)]).ln();
        }
    }
    Ok(ObsWindowDensity { log_density: window_logdensity(&y, &corr)? + jac, clamped })
}
