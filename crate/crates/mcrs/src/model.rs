//! The full parameter set of the margin-closed regime-switching model and
//! derived correlation caches shared by likelihood evaluation, inference and
//! simulation.

use crate::error::{Error, Result};
use crate::fbinfer::ChainParams;
use crate::margins::Margin;
use crate::mcvar::{build_regime_corr_window, ContempCorr, RegimeCorr};
use crate::serialcorr::ToeplitzCorr;
use crate::util::MvnChol;
use crate::window::{build_window_corr, RegimeWindow, StochasticRep, SwitchCorr, WindowCorr};
use nalgebra::{DMatrix, DVector};
use std::collections::HashMap;

/// Parameters of the regime-switching model.
///
/// Regime ids are 1-based (matching label sequences), variables 0-based.
/// The per-variable Markov orders are the lengths of the partial
/// autocorrelation vectors; the overall Markov order of the process is
/// `max_g max_i k_{i,g} + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct RegimeModel {
    margins: Vec<Vec<Margin>>,  // [g-1][i]
    pacf: Vec<Vec<Vec<f64>>>,   // [g-1][i][lag]
    contemp: Vec<ContempCorr>,  // [g-1]
    switch_corr: SwitchCorr,
    chain: ChainParams,
}

impl RegimeModel {
    pub fn new(
        margins: Vec<Vec<Margin>>,
        pacf: Vec<Vec<Vec<f64>>>,
        contemp: Vec<ContempCorr>,
        switch_corr: SwitchCorr,
        chain: ChainParams,
    ) -> Result<Self> {
        let g = margins.len();
        if g == 0 {
            return Err(Error::ParamDomain("need at least one regime".into()));
        }
        if pacf.len() != g || contemp.len() != g || chain.num_regimes() != g {
            return Err(Error::Shape("regime counts disagree across parameter groups".into()));
        }
        let d = margins[0].len();
        if d == 0 {
            return Err(Error::ParamDomain("need at least one variable".into()));
        }
        for gi in 0..g {
            if margins[gi].len() != d || pacf[gi].len() != d || contemp[gi].dim() != d {
                return Err(Error::Shape(format!("dimension mismatch in regime {}", gi + 1)));
            }
            for m in &margins[gi] {
                m.validate()?;
            }
            for a in &pacf[gi] {
                for &v in a {
                    if !(v > -1.0 && v < 1.0) {
                        return Err(Error::ParamDomain(format!(
                            "partial autocorrelation {v} outside (-1,1)"
                        )));
                    }
                }
            }
        }
        if switch_corr.dim() != d {
            return Err(Error::Shape("switch correlation dimension mismatch".into()));
        }
        Ok(RegimeModel { margins, pacf, contemp, switch_corr, chain })
    }

    pub fn num_regimes(&self) -> usize {
        self.margins.len()
    }

    pub fn dim(&self) -> usize {
        self.margins[0].len()
    }

    /// Per-variable Markov order `k_{i,g}` (regime 1-based, variable 0-based).
    pub fn order(&self, g: usize, i: usize) -> usize {
        self.pacf[g - 1][i].len()
    }

    /// `k_g = max_i k_{i,g}`.
    pub fn regime_order(&self, g: usize) -> usize {
        (0..self.dim()).map(|i| self.order(g, i)).max().unwrap_or(0)
    }

    /// Markov order of the whole process: `max_g k_g + 1`.
    pub fn markov_order(&self) -> usize {
        (1..=self.num_regimes()).map(|g| self.regime_order(g)).max().unwrap_or(0) + 1
    }

    pub fn margin(&self, g: usize, i: usize) -> &Margin {
        &self.margins[g - 1][i]
    }

    pub fn margins(&self) -> &[Vec<Margin>] {
        &self.margins
    }

    pub fn pacf(&self, g: usize, i: usize) -> &[f64] {
        &self.pacf[g - 1][i]
    }

    pub fn contemp(&self, g: usize) -> &ContempCorr {
        &self.contemp[g - 1]
    }

    pub fn switch_corr(&self) -> &SwitchCorr {
        &self.switch_corr
    }

    pub fn chain(&self) -> &ChainParams {
        &self.chain
    }

    pub fn set_chain(&mut self, chain: ChainParams) -> Result<()> {
        if chain.num_regimes() != self.num_regimes() {
            return Err(Error::Shape("chain regime count mismatch".into()));
        }
        self.chain = chain;
        Ok(())
    }

    pub fn set_margin(&mut self, g: usize, i: usize, m: Margin) -> Result<()> {
        m.validate()?;
        self.margins[g - 1][i] = m;
        Ok(())
    }

    pub fn set_pacf(&mut self, g: usize, i: usize, pacf: Vec<f64>) -> Result<()> {
        for &v in &pacf {
            if !(v > -1.0 && v < 1.0) {
                return Err(Error::ParamDomain("partial autocorrelation outside (-1,1)".into()));
            }
        }
        self.pacf[g - 1][i] = pacf;
        Ok(())
    }

    pub fn set_contemp(&mut self, g: usize, c: ContempCorr) -> Result<()> {
        if c.dim() != self.dim() {
            return Err(Error::Shape("contemporaneous dimension mismatch".into()));
        }
        self.contemp[g - 1] = c;
        Ok(())
    }

    pub fn set_switch_corr(&mut self, s: SwitchCorr) -> Result<()> {
        if s.dim() != self.dim() {
            return Err(Error::Shape("switch correlation dimension mismatch".into()));
        }
        self.switch_corr = s;
        Ok(())
    }

    /// Univariate Toeplitz correlation structure of variable `i` in regime
    /// `g`, padded with zero partial autocorrelations to `lags`.
    pub fn univariate_corr(&self, g: usize, i: usize, lags: usize) -> Result<ToeplitzCorr> {
        let mut pacf = self.pacf[g - 1][i].clone();
        pacf.resize(lags, 0.0);
        ToeplitzCorr::from_pacf(&pacf)
    }

    /// Within-regime correlation matrix of `window_len` stacked observations.
    pub fn regime_corr(&self, g: usize, window_len: usize) -> Result<RegimeCorr> {
        let k = self.markov_order();
        let univ: Vec<ToeplitzCorr> = (0..self.dim())
            .map(|i| self.univariate_corr(g, i, k))
            .collect::<Result<_>>()?;
        build_regime_corr_window(&univ, &self.contemp[g - 1], window_len)
    }

    /// Correlation matrix for an arbitrary labeled window.
    pub fn window_corr(&self, window: &RegimeWindow) -> Result<WindowCorr> {
        let longest: HashMap<usize, usize> =
            window.runs().iter().fold(HashMap::new(), |mut acc, r| {
                let e = acc.entry(r.regime).or_insert(0);
                *e = (*e).max(r.len);
                acc
            });
        let mut corrs: Vec<RegimeCorr> = Vec::with_capacity(self.num_regimes());
        for g in 1..=self.num_regimes() {
            let need = longest.get(&g).cloned().unwrap_or(1);
            corrs.push(self.regime_corr(g, need.max(1))?);
        }
        build_window_corr(window, &corrs, &self.switch_corr)
    }

    /// Builds the dense per-pattern window cache; this is also the model
    /// feasibility check (every label pattern of the Markov window must give
    /// a positive definite matrix).
    pub fn window_cache(&self) -> Result<WindowCache> {
        WindowCache::new(self)
    }

    /// Cheap feasibility probe: largest violation over all Markov-window
    /// label patterns, zero when fully feasible. Used as an optimizer
    /// penalty.
    pub fn feasibility_violation(&self) -> f64 {
        let k = self.markov_order();
        let g_count = self.num_regimes();
        let d = self.dim();
        let mut regime_corrs = Vec::with_capacity(g_count);
        for g in 1..=g_count {
            match self.regime_corr(g, k + 1) {
                Ok(rc) => regime_corrs.push(rc),
                Err(_) => {
                    // quantify by the most negative LDLT pivot of the raw assembly
                    let univ: Vec<ToeplitzCorr> = match (0..d)
                        .map(|i| self.univariate_corr(g, i, k))
                        .collect::<Result<Vec<_>>>()
                    {
                        Ok(u) => u,
                        Err(_) => return 1.0,
                    };
                    let viol = crate::mcvar::assembly_min_pivot(&univ, &self.contemp[g - 1], k + 1);
                    return (1e-9 - viol).max(1e-9);
                }
            }
        }
        let mut worst: f64 = 0.0;
        for pat in all_patterns(g_count, k + 1) {
            let window = RegimeWindow::from_newest_first(pat).expect("valid pattern");
            match build_window_corr(&window, &regime_corrs, &self.switch_corr) {
                Ok(_) => {}
                Err(_) => {
                    let m = assemble_unchecked(&window, &regime_corrs, &self.switch_corr);
                    let piv = crate::serialcorr::ldlt_min_pivot(&m);
                    worst = worst.max((1e-9 - piv).max(1e-9));
                }
            }
        }
        worst
    }
}

fn assemble_unchecked(
    window: &RegimeWindow,
    corrs: &[RegimeCorr],
    switch: &SwitchCorr,
) -> DMatrix<f64> {
    // mirrors build_window_corr without the PD gate
    let d = switch.dim();
    let w = window.len();
    let mut m = DMatrix::zeros(w * d, w * d);
    let mut off = 0usize;
    let mut offsets = Vec::new();
    for r in window.runs() {
        offsets.push(off);
        let blk = corrs[r.regime - 1].leading(r.len);
        m.view_mut((off * d, off * d), (r.len * d, r.len * d)).copy_from(&blk);
        off += r.len;
    }
    for s in 0..window.runs().len().saturating_sub(1) {
        let newer = window.runs()[s];
        let older = window.runs()[s + 1];
        let top = corrs[older.regime - 1].matrix().view((0, 0), (d, older.len * d));
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
    m
}

/// All newest-first label patterns of the given length over `1..=g`.
pub(crate) fn all_patterns(g: usize, len: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::with_capacity(g.pow(len as u32));
    let mut cur = vec![1usize; len];
    loop {
        out.push(cur.clone());
        let mut pos = 0;
        loop {
            if pos == len {
                return out;
            }
            cur[pos] += 1;
            if cur[pos] <= g {
                break;
            }
            cur[pos] = 1;
            pos += 1;
        }
    }
}

/// Dense per-pattern cache of window correlation factorizations for all
/// label patterns up to the Markov window length. Immutable after build;
/// safe for concurrent reads.
pub struct WindowCache {
    k: usize,
    mvns: HashMap<Vec<usize>, MvnChol>,
    corrs: HashMap<Vec<usize>, WindowCorr>,
}

impl WindowCache {
    pub fn new(model: &RegimeModel) -> Result<Self> {
        let k = model.markov_order();
        let g = model.num_regimes();
        let mut regime_corrs = Vec::with_capacity(g);
        for gi in 1..=g {
            regime_corrs.push(model.regime_corr(gi, k + 1)?);
        }
        let mut mvns = HashMap::new();
        let mut corrs = HashMap::new();
        for len in 1..=(k + 1) {
            for pat in all_patterns(g, len) {
                let window = RegimeWindow::from_newest_first(pat.clone())?;
                let wc = build_window_corr(&window, &regime_corrs, &model.switch_corr)?;
                let mvn = MvnChol::new(wc.matrix())
                    .ok_or(Error::InfeasibleWindow { pattern: pat.clone() })?;
                mvns.insert(pat.clone(), mvn);
                corrs.insert(pat, wc);
            }
        }
        Ok(WindowCache { k, mvns, corrs })
    }

    pub fn markov_order(&self) -> usize {
        self.k
    }

    pub fn logdensity(&self, pattern: &[usize], y: &DVector<f64>) -> f64 {
        self.mvns.get(pattern).expect("pattern cached").logpdf(y)
    }

    pub fn corr(&self, pattern: &[usize]) -> &WindowCorr {
        self.corrs.get(pattern).expect("pattern cached")
    }

    pub fn conditional(&self, pattern: &[usize]) -> Result<StochasticRep> {
        crate::window::conditional_rep(self.corr(pattern))
    }
}

/// Probability-integral-transform tables of a series under every regime's
/// margins: `z[g-1][(t, i)]` is the normal score of `x[(t, i)]` under margin
/// `(i, g)`, and `logj` the log transform derivative.
pub struct PitTables {
    pub z: Vec<DMatrix<f64>>,
    pub logj: Vec<DMatrix<f64>>,
    pub clamps: usize,
}

impl PitTables {
    pub fn new(model: &RegimeModel, x: &DMatrix<f64>) -> Result<Self> {
        let (t_len, d) = (x.nrows(), x.ncols());
        if d != model.dim() {
            return Err(Error::Shape(format!(
                "series has {d} variables, model expects {}",
                model.dim()
            )));
        }
        let mut z = Vec::with_capacity(model.num_regimes());
        let mut logj = Vec::with_capacity(model.num_regimes());
        let mut clamps = 0usize;
        for g in 1..=model.num_regimes() {
            let mut zg = DMatrix::zeros(t_len, d);
            let mut jg = DMatrix::zeros(t_len, d);
            for i in 0..d {
                let m = model.margin(g, i);
                for t in 0..t_len {
                    let gs = m.pit_to_normal(x[(t, i)]);
                    if gs.clamped {
                        clamps += 1;
                    }
                    zg[(t, i)] = gs.value;
                    jg[(t, i)] = m.pit_derivative(x[(t, i)]).ln();
                }
            }
            z.push(zg);
            logj.push(jg);
        }
        Ok(PitTables { z, logj, clamps })
    }
}

/// Shared evaluation context: a series, its transform tables and the window
/// cache of a model. The transform tables depend only on the margins, so
/// optimizers over correlation parameters can share them across candidates.
pub(crate) struct SeriesEval<'a> {
    pub x: &'a DMatrix<f64>,
    pub cache: WindowCache,
    pub pit: std::sync::Arc<PitTables>,
    pub d: usize,
}

impl<'a> SeriesEval<'a> {
    pub fn new(model: &RegimeModel, x: &'a DMatrix<f64>) -> Result<Self> {
        Ok(SeriesEval {
            x,
            cache: model.window_cache()?,
            pit: std::sync::Arc::new(PitTables::new(model, x)?),
            d: model.dim(),
        })
    }

    /// Reuses precomputed transform tables (margins must match the model's).
    pub fn with_pit(
        model: &RegimeModel,
        x: &'a DMatrix<f64>,
        pit: std::sync::Arc<PitTables>,
    ) -> Result<Self> {
        Ok(SeriesEval { x, cache: model.window_cache()?, pit, d: model.dim() })
    }

    /// Stacked normal scores for the window ending at time `t` (0-based) with
    /// newest-first labels `pattern`.
    fn stacked(&self, t: usize, pattern: &[usize]) -> DVector<f64> {
        let d = self.d;
        let mut y = DVector::zeros(pattern.len() * d);
        for (l, &g) in pattern.iter().enumerate() {
            let row = t - l;
            for i in 0..d {
                y[l * d + i] = self.pit.z[g - 1][(row, i)];
            }
        }
        y
    }

    fn jacobian_at(&self, t: usize, g: usize) -> f64 {
        (0..self.d).map(|i| self.pit.logj[g - 1][(t, i)]).sum()
    }

    /// Joint log-density of the window ending at `t` (all Jacobian terms).
    pub fn joint_logdensity(&self, t: usize, pattern: &[usize]) -> f64 {
        let y = self.stacked(t, pattern);
        let mut v = self.cache.logdensity(pattern, &y);
        for (l, &g) in pattern.iter().enumerate() {
            v += self.jacobian_at(t - l, g);
        }
        v
    }

    /// Conditional log-density of the observation at `t` given the previous
    /// `pattern.len() - 1` observations (only the newest Jacobian term).
    pub fn cond_logdensity(&self, t: usize, pattern: &[usize]) -> f64 {
        let y = self.stacked(t, pattern);
        let full = self.cache.logdensity(pattern, &y);
        let jac = self.jacobian_at(t, pattern[0]);
        if pattern.len() == 1 {
            return full + jac;
        }
        let older = &pattern[1..];
        let y_old = y.rows(self.d, y.len() - self.d).into_owned();
        full - self.cache.logdensity(older, &y_old) + jac
    }
}
