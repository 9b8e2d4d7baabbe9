//! Multi-stage parameter estimation: with an external regime sequence, with
//! the sequence marginalized out, or iterating between regime dating and
//! complete-likelihood fitting. Also chain-parameter estimation, parameter
//! counts, AIC and order/regime-count scans.
//!
//! Every stage maximizes its own objective with earlier-stage estimates
//! frozen: margins first (ignoring serial dependence), then per-variable
//! serial structures, then contemporaneous correlations, then the switch
//! correlations. Stages never return an iterate worse than their
//! initializer. Infeasible candidates (non-positive-definite assemblies) are
//! penalized with a large finite value so the search space stays open.

use crate::error::{Error, Result};
use crate::fbinfer::{self, ChainParams, UpdateConfig};
use crate::likelihood::{
    partition_segments, segment_loglik_univariate, RegimeSequence, SegmentPartition,
};
use crate::margins::{fit_margin, fit_margin_weighted, Margin};
use crate::mcvar::ContempCorr;
use crate::model::{PitTables, RegimeModel, SeriesEval};
use crate::optim::{self, OptimOptions};
use crate::window::SwitchCorr;
use nalgebra::DMatrix;
use rayon::prelude::*;
use std::sync::Arc;

const PENALTY_BASE: f64 = 1e7;
const PENALTY_SCALE: f64 = 1e6;

/// How transition probabilities are estimated from a known sequence.
/// `AllTransitions` is the Markov-chain likelihood maximizer;
/// `SwitchesOnly` normalizes switch counts by segment counts instead.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChainCounting {
    AllTransitions,
    SwitchesOnly,
}

#[derive(Clone, Copy, Debug)]
pub struct FitOptions {
    pub optim: OptimOptions,
    pub chain_counting: ChainCounting,
    /// When false the switch correlations are pinned at zero and do not
    /// count as free parameters.
    pub estimate_switch: bool,
    pub max_em_iters: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            optim: OptimOptions { rel_tol: 1e-6, max_iters: 500, fd_step: 1e-6 },
            chain_counting: ChainCounting::AllTransitions,
            estimate_switch: true,
            max_em_iters: 200,
        }
    }
}

/// Objective trace of one estimation stage.
#[derive(Clone, Debug)]
pub struct StageReport {
    pub name: String,
    pub initial_loglik: f64,
    pub final_loglik: f64,
    pub iters: usize,
    pub converged: bool,
}

/// Fit outcome: the model, per-stage objective values, information criteria.
#[derive(Clone, Debug)]
pub struct FitReport {
    pub model: RegimeModel,
    pub stages: Vec<StageReport>,
    /// Final objective: complete-data log-likelihood when a regime sequence
    /// was supplied, marginal log-likelihood otherwise.
    pub loglik: f64,
    pub param_count: usize,
    pub aic: f64,
    /// Outer iterations (1 for single-pass fits).
    pub iterations: usize,
    pub converged: bool,
    /// Probability-integral-transform evaluations that hit the CDF clamp
    /// under the fitted margins.
    pub clamps: usize,
    pub warnings: Vec<String>,
}

/// Dependence-parameter count of the correlation parameterization:
/// `G(kd + d(d+1)/2) + G(G-1)`.
pub fn param_count(d: usize, g: usize, k: usize) -> usize {
    g * (k * d + d * (d + 1) / 2) + g * (g - 1)
}

/// The corresponding count for a Markov-switching VAR with full coefficient
/// matrices: `G(kd^2 + d(d+1)/2) + G(G-1)`.
pub fn msvar_param_count(d: usize, g: usize, k: usize) -> usize {
    g * (k * d * d + d * (d + 1) / 2) + g * (g - 1)
}

/// Breakdown of the free parameters actually fitted in a model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamBreakdown {
    pub margin: usize,
    pub serial: usize,
    pub contemporaneous: usize,
    pub switch: usize,
    pub chain: usize,
}

impl ParamBreakdown {
    pub fn total(&self) -> usize {
        self.margin + self.serial + self.contemporaneous + self.switch + self.chain
    }

    /// Dependence parameters only (serial + contemporaneous + chain).
    pub fn dependence(&self) -> usize {
        self.serial + self.contemporaneous + self.switch + self.chain
    }
}

/// Enumerates the free parameters of a model; `switch_free` marks whether
/// the switch correlations were estimated or pinned at zero.
pub fn model_param_breakdown(model: &RegimeModel, switch_free: bool) -> ParamBreakdown {
    let g = model.num_regimes();
    let d = model.dim();
    let margin: usize = (1..=g)
        .map(|gi| {
            (0..d)
                .map(|i| match model.margin(gi, i) {
                    Margin::SkewT(_) => 4,
                    Margin::Gaussian { .. } => 2,
                })
                .sum::<usize>()
        })
        .sum();
    let serial: usize = (1..=g).map(|gi| (0..d).map(|i| model.order(gi, i)).sum::<usize>()).sum();
    let contemporaneous = g * d * (d - 1) / 2;
    let switch = if switch_free { d } else { 0 };
    let chain = (g - 1) + g * (g - 1);
    ParamBreakdown { margin, serial, contemporaneous, switch, chain }
}

/// Maximum-likelihood chain parameters from a known regime sequence.
/// Returns warnings for regimes that are never visited (their transition
/// rows are set uniform).
pub fn estimate_chain(
    v: &RegimeSequence,
    num_regimes: usize,
    counting: ChainCounting,
) -> Result<(ChainParams, Vec<String>)> {
    if v.len() < 2 {
        return Err(Error::InsufficientData("chain estimation needs T >= 2".into()));
    }
    let g = num_regimes;
    if let Some(&bad) = v.as_slice().iter().find(|&&l| l > g) {
        return Err(Error::ParamDomain(format!(
            "regime label {bad} exceeds the regime count {g}"
        )));
    }
    let mut init = vec![0.0; g];
    init[v.label(0) - 1] = 1.0;
    let mut counts = DMatrix::<f64>::zeros(g, g);
    match counting {
        ChainCounting::AllTransitions => {
            for t in 1..v.len() {
                counts[(v.label(t - 1) - 1, v.label(t) - 1)] += 1.0;
            }
        }
        ChainCounting::SwitchesOnly => {
            let p = partition_segments(v);
            for s in 0..p.switch_count() {
                counts[(p.regime(s) - 1, p.regime(s + 1) - 1)] += 1.0;
            }
            // segment counts in the denominator
            let mut seg = vec![0.0; g];
            for s in 0..p.num_segments() {
                seg[p.regime(s) - 1] += 1.0;
            }
            let mut trans = DMatrix::zeros(g, g);
            let mut warnings = Vec::new();
            for r in 0..g {
                if seg[r] > 0.0 {
                    let mut off = 0.0;
                    for c in 0..g {
                        trans[(r, c)] = counts[(r, c)] / seg[r];
                        off += trans[(r, c)];
                    }
                    // remaining mass stays on the diagonal
                    trans[(r, r)] += (1.0 - off).max(0.0);
                } else {
                    for c in 0..g {
                        trans[(r, c)] = 1.0 / g as f64;
                    }
                    warnings.push(format!("regime {} never visited; uniform row", r + 1));
                }
            }
            return Ok((ChainParams::new(init, trans)?, warnings));
        }
    }
    let mut trans = DMatrix::zeros(g, g);
    let mut warnings = Vec::new();
    for r in 0..g {
        let total: f64 = (0..g).map(|c| counts[(r, c)]).sum();
        if total > 0.0 {
            for c in 0..g {
                trans[(r, c)] = counts[(r, c)] / total;
            }
        } else {
            for c in 0..g {
                trans[(r, c)] = 1.0 / g as f64;
            }
            warnings.push(format!("regime {} never visited; uniform row", r + 1));
        }
    }
    Ok((ChainParams::new(init, trans)?, warnings))
}

// ---------------------------------------------------------------------------
// correlation-matrix coordinates

fn tanh_clamp(z: f64) -> f64 {
    z.tanh().clamp(-1.0 + 1e-12, 1.0 - 1e-12)
}

/// Spherical coordinates of a correlation matrix: `d(d-1)/2` unconstrained
/// reals; every value maps to a valid (PD) correlation matrix.
pub(crate) fn angles_to_corr(z: &[f64], d: usize) -> DMatrix<f64> {
    let mut b = DMatrix::zeros(d, d);
    b[(0, 0)] = 1.0;
    let mut pos = 0;
    for i in 1..d {
        let mut sin_prod = 1.0;
        for j in 0..i {
            let c = tanh_clamp(z[pos]);
            pos += 1;
            b[(i, j)] = c * sin_prod;
            sin_prod *= (1.0 - c * c).sqrt();
        }
        b[(i, i)] = sin_prod;
    }
    &b * b.transpose()
}

pub(crate) fn corr_to_angles(corr: &DMatrix<f64>) -> Result<Vec<f64>> {
    let d = corr.nrows();
    let chol = crate::util::MvnChol::new(corr)
        .ok_or_else(|| Error::NotPositiveDefinite("correlation matrix".into()))?;
    let l = chol.lower();
    let mut z = Vec::with_capacity(d * (d - 1) / 2);
    for i in 1..d {
        let mut sin_prod = 1.0;
        for j in 0..i {
            let c = (l[(i, j)] / sin_prod).clamp(-1.0 + 1e-9, 1.0 - 1e-9);
            z.push(c.atanh());
            sin_prod *= (1.0 - c * c).sqrt().max(1e-12);
        }
    }
    Ok(z)
}

fn shrink_to_pd(mut c: DMatrix<f64>) -> DMatrix<f64> {
    let d = c.nrows();
    for _ in 0..60 {
        if crate::serialcorr::ldlt_min_pivot(&c) > 1e-8 {
            return c;
        }
        for i in 0..d {
            for j in 0..d {
                c[(i, j)] = if i == j { 1.0 } else { 0.9 * c[(i, j)] };
            }
        }
    }
    DMatrix::identity(d, d)
}

fn stage_from(name: &str, init: f64, r: &optim::OptimResult) -> StageReport {
    StageReport {
        name: name.to_string(),
        initial_loglik: -init,
        final_loglik: -r.value,
        iters: r.iters,
        converged: r.converged,
    }
}

fn segments_of_regime(p: &SegmentPartition, g: usize) -> Vec<usize> {
    (0..p.num_segments()).filter(|&s| p.regime(s) == g).collect()
}

// ---------------------------------------------------------------------------
// estimation with an external regime sequence

/// Four-stage fit given a regime sequence: margins per (variable, regime),
/// then per-variable serial structures, then contemporaneous correlations,
/// then switch correlations; the chain is estimated by transition counting.
pub fn fit_with_regimes(
    x: &DMatrix<f64>,
    v: &RegimeSequence,
    orders: &[Vec<usize>],
    opts: &FitOptions,
) -> Result<FitReport> {
    fit_with_regimes_impl(x, v, orders, opts, None)
}

/// Uniform per-(variable, regime) orders.
pub fn uniform_orders(num_regimes: usize, dim: usize, order: usize) -> Vec<Vec<usize>> {
    vec![vec![order; dim]; num_regimes]
}

pub(crate) fn fit_with_regimes_impl(
    x: &DMatrix<f64>,
    v: &RegimeSequence,
    orders: &[Vec<usize>],
    opts: &FitOptions,
    fallback: Option<&RegimeModel>,
) -> Result<FitReport> {
    let g_count = orders.len();
    let d = x.ncols();
    let t_len = x.nrows();
    if v.len() != t_len {
        return Err(Error::Shape("regime sequence length mismatch".into()));
    }
    if orders.iter().any(|r| r.len() != d) {
        return Err(Error::Shape("orders must be shaped [regimes][variables]".into()));
    }
    let k = orders.iter().flat_map(|r| r.iter()).max().cloned().unwrap_or(0) + 1;
    if t_len <= k {
        return Err(Error::InsufficientData(format!("need T > k = {k}, got T = {t_len}")));
    }
    let mut warnings = Vec::new();
    let mut stages = Vec::new();

    let (chain, mut chain_warn) = estimate_chain(v, g_count, opts.chain_counting)?;
    warnings.append(&mut chain_warn);
    let partition = partition_segments(v);

    // Step 1: margins per (variable, regime), serial dependence ignored
    let mut margins: Vec<Vec<Margin>> = vec![Vec::with_capacity(d); g_count];
    let mut s1_init = 0.0;
    let mut s1_final = 0.0;
    let mut s1_iters = 0;
    for g in 1..=g_count {
        let rows: Vec<usize> = (0..t_len).filter(|&t| v.label(t) == g).collect();
        for i in 0..d {
            let samples: Vec<f64> = rows.iter().map(|&t| x[(t, i)]).collect();
            if samples.len() < 5 {
                match fallback {
                    Some(m) => {
                        warnings.push(format!(
                            "regime {g} variable {i}: {} points, keeping previous margin",
                            samples.len()
                        ));
                        margins[g - 1].push(*m.margin(g, i));
                        continue;
                    }
                    None => {
                        return Err(Error::InsufficientData(format!(
                            "regime {g} has only {} observations for variable {i}",
                            samples.len()
                        )))
                    }
                }
            }
            let fit = fit_margin(&samples)?;
            s1_init += fit.init_loglik;
            s1_final += fit.loglik;
            s1_iters += fit.iters;
            margins[g - 1].push(Margin::SkewT(fit.params));
        }
    }
    stages.push(StageReport {
        name: "margins".into(),
        initial_loglik: s1_init,
        final_loglik: s1_final,
        iters: s1_iters,
        converged: true,
    });

    // Step 2: per-variable Toeplitz structures from univariate segment
    // likelihoods
    let mut pacf: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); d]; g_count];
    let mut s2_init = 0.0;
    let mut s2_final = 0.0;
    let mut s2_iters = 0;
    let mut s2_conv = true;
    for g in 1..=g_count {
        let segs = segments_of_regime(&partition, g);
        for i in 0..d {
            let k_ig = orders[g - 1][i];
            if k_ig == 0 {
                pacf[g - 1][i] = Vec::new();
                continue;
            }
            if segs.is_empty() {
                pacf[g - 1][i] = match fallback {
                    Some(m) => m.pacf(g, i).to_vec(),
                    None => vec![0.0; k_ig],
                };
                continue;
            }
            let xi: Vec<f64> = (0..t_len).map(|t| x[(t, i)]).collect();
            let margin = margins[g - 1][i];
            let segs_ref = &segs;
            let partition_ref = &partition;
            let xi_ref = &xi;
            let mut objective = move |z: &[f64]| -> f64 {
                let pv: Vec<f64> = z.iter().map(|&a| tanh_clamp(a)).collect();
                let mut padded = pv.clone();
                padded.resize(k, 0.0);
                let corr = match crate::serialcorr::ToeplitzCorr::from_pacf(&padded) {
                    Ok(c) => c,
                    Err(_) => return f64::INFINITY,
                };
                let mut ll = 0.0;
                for &s in segs_ref {
                    match segment_loglik_univariate(xi_ref, partition_ref, s, &margin, &corr) {
                        Ok(v) => ll += v,
                        Err(_) => return f64::INFINITY,
                    }
                }
                -ll
            };
            let z0 = vec![0.0; k_ig];
            let init_val = objective(&z0);
            let r = optim::minimize(&mut objective, &z0, opts.optim);
            s2_init += -init_val;
            s2_final += -r.value;
            s2_iters += r.iters;
            s2_conv &= r.converged;
            pacf[g - 1][i] = r.x.iter().map(|&a| tanh_clamp(a)).collect();
        }
    }
    stages.push(StageReport {
        name: "serial".into(),
        initial_loglik: s2_init,
        final_loglik: s2_final,
        iters: s2_iters,
        converged: s2_conv,
    });

    // working model with identity contemporaneous structure
    let mut model = RegimeModel::new(
        margins,
        pacf,
        vec![ContempCorr::identity(d); g_count],
        SwitchCorr::zero(d),
        chain,
    )?;
    let pit = Arc::new(PitTables::new(&model, x)?);

    // Step 3: contemporaneous correlations per regime from multivariate
    // segment likelihoods (switch correlations still zero)
    let mut s3_init = 0.0;
    let mut s3_final = 0.0;
    let mut s3_iters = 0;
    let mut s3_conv = true;
    if d > 1 {
        for g in 1..=g_count {
            let segs = segments_of_regime(&partition, g);
            if segs.is_empty() {
                if let Some(m) = fallback {
                    model.set_contemp(g, m.contemp(g).clone())?;
                }
                continue;
            }
            // initializer: weighted sample correlation of the normal scores
            let z0 = init_angles_from_scores(&pit, &partition, &segs, g, d)?;
            let base = model.clone();
            let mut objective = |z: &[f64]| -> f64 {
                let mut cand = base.clone();
                let corr = angles_to_corr(z, d);
                let cc = match ContempCorr::new(corr) {
                    Ok(c) => c,
                    Err(_) => return f64::INFINITY,
                };
                if cand.set_contemp(g, cc).is_err() {
                    return f64::INFINITY;
                }
                segment_objective(&cand, x, &pit, &partition, &segs)
            };
            let init_val = objective(&z0);
            let r = optim::minimize(&mut objective, &z0, opts.optim);
            s3_init += -init_val;
            s3_final += -r.value;
            s3_iters += r.iters;
            s3_conv &= r.converged;
            model.set_contemp(g, ContempCorr::new(angles_to_corr(&r.x, d))?)?;
        }
    }
    stages.push(StageReport {
        name: "contemporaneous".into(),
        initial_loglik: s3_init,
        final_loglik: s3_final,
        iters: s3_iters,
        converged: s3_conv,
    });

    // Step 4: switch correlations from the complete likelihood
    if opts.estimate_switch && partition.switch_count() > 0 {
        let base = model.clone();
        let v_ref = v;
        let mut objective = |z: &[f64]| -> f64 {
            let mut cand = base.clone();
            let rho: Vec<f64> = z.iter().map(|&a| tanh_clamp(a)).collect();
            let sw = match SwitchCorr::new(rho) {
                Ok(s) => s,
                Err(_) => return f64::INFINITY,
            };
            if cand.set_switch_corr(sw).is_err() {
                return f64::INFINITY;
            }
            complete_objective(&cand, x, &pit, v_ref)
        };
        let z0 = vec![0.0; d];
        let init_val = objective(&z0);
        let r = optim::minimize(&mut objective, &z0, opts.optim);
        stages.push(stage_from("switch", init_val, &r));
        model.set_switch_corr(SwitchCorr::new(
            r.x.iter().map(|&a| tanh_clamp(a)).collect(),
        )?)?;
    } else {
        stages.push(StageReport {
            name: "switch".into(),
            initial_loglik: 0.0,
            final_loglik: 0.0,
            iters: 0,
            converged: true,
        });
    }

    let loglik = crate::likelihood::complete_loglik(x, v, &model)?;
    let clamps = PitTables::new(&model, x)?.clamps;
    let breakdown = model_param_breakdown(&model, opts.estimate_switch);
    let n_params = breakdown.total();
    Ok(FitReport {
        model,
        stages,
        loglik,
        param_count: n_params,
        aic: 2.0 * n_params as f64 - 2.0 * loglik,
        iterations: 1,
        converged: true,
        clamps,
        warnings,
    })
}

fn init_angles_from_scores(
    pit: &PitTables,
    partition: &SegmentPartition,
    segs: &[usize],
    g: usize,
    d: usize,
) -> Result<Vec<f64>> {
    let z = &pit.z[g - 1];
    let mut acc = DMatrix::zeros(d, d);
    let mut n = 0usize;
    for &s in segs {
        for t in partition.start(s)..partition.end(s) {
            for i in 0..d {
                for j in 0..d {
                    acc[(i, j)] += z[(t, i)] * z[(t, j)];
                }
            }
            n += 1;
        }
    }
    if n == 0 {
        return Ok(vec![0.0; d * (d - 1) / 2]);
    }
    acc /= n as f64;
    let dinv: Vec<f64> = (0..d).map(|i| 1.0 / acc[(i, i)].sqrt().max(1e-12)).collect();
    let corr = DMatrix::from_fn(d, d, |i, j| {
        if i == j {
            1.0
        } else {
            (acc[(i, j)] * dinv[i] * dinv[j]).clamp(-0.999, 0.999)
        }
    });
    corr_to_angles(&shrink_to_pd(corr))
}

fn segment_objective(
    cand: &RegimeModel,
    x: &DMatrix<f64>,
    pit: &Arc<PitTables>,
    partition: &SegmentPartition,
    segs: &[usize],
) -> f64 {
    let eval = match SeriesEval::with_pit(cand, x, pit.clone()) {
        Ok(e) => e,
        Err(_) => return PENALTY_BASE + PENALTY_SCALE * cand.feasibility_violation(),
    };
    let k = cand.markov_order();
    let mut ll = 0.0;
    for &s in segs {
        ll += crate::likelihood::segment_loglik_multivariate_eval(&eval, partition, s, k);
    }
    if ll.is_finite() {
        -ll
    } else {
        f64::INFINITY
    }
}

fn complete_objective(
    cand: &RegimeModel,
    x: &DMatrix<f64>,
    pit: &Arc<PitTables>,
    v: &RegimeSequence,
) -> f64 {
    let eval = match SeriesEval::with_pit(cand, x, pit.clone()) {
        Ok(e) => e,
        Err(_) => return PENALTY_BASE + PENALTY_SCALE * cand.feasibility_violation(),
    };
    let ll = crate::likelihood::complete_loglik_eval(&eval, v, cand.markov_order());
    if ll.is_finite() {
        -ll
    } else {
        f64::INFINITY
    }
}

fn marginal_objective(cand: &RegimeModel, x: &DMatrix<f64>, pit: &Arc<PitTables>) -> f64 {
    let eval = match SeriesEval::with_pit(cand, x, pit.clone()) {
        Ok(e) => e,
        Err(_) => return PENALTY_BASE + PENALTY_SCALE * cand.feasibility_violation(),
    };
    let emis = fbinfer::emission_tables(&eval, cand.num_regimes());
    let ll = fbinfer::marginal_from_emissions(cand, &emis, x.nrows());
    if ll.is_finite() {
        -ll
    } else {
        f64::INFINITY
    }
}

// ---------------------------------------------------------------------------
// independence hidden Markov model (EM), the common first stage of the
// latent-sequence methods

pub(crate) struct IndepHmm {
    pub margins: Vec<Vec<Margin>>,
    pub chain: ChainParams,
    pub loglik: f64,
    pub iters: usize,
    pub converged: bool,
    pub posteriors: DMatrix<f64>, // T x G smoothed regime probabilities
}

// the location parameter is weakly identified for heavy one-sided fits, so
// regimes are compared through the median of the first variable's margin
fn margin_median(m: &Margin) -> f64 {
    m.quantile(0.5).unwrap_or(f64::INFINITY)
}

/// Fits a hidden Markov model with independent skew-t emissions by EM.
/// Deterministic: regimes are initialized by slicing the sample on the first
/// variable and finally ordered by the first variable's median, ascending.
pub(crate) fn fit_independence_hmm(
    x: &DMatrix<f64>,
    g_count: usize,
    max_iters: usize,
) -> Result<IndepHmm> {
    let t_len = x.nrows();
    let d = x.ncols();
    if t_len < 5 * g_count {
        return Err(Error::InsufficientData("series too short for the regime count".into()));
    }
    // initialize margins from quantile slices of variable 0
    let mut order: Vec<usize> = (0..t_len).collect();
    order.sort_by(|&a, &b| x[(a, 0)].partial_cmp(&x[(b, 0)]).unwrap());
    let mut margins: Vec<Vec<Margin>> = Vec::with_capacity(g_count);
    for g in 0..g_count {
        let lo = g * t_len / g_count;
        let hi = ((g + 1) * t_len / g_count).max(lo + 1);
        let rows = &order[lo..hi.min(t_len)];
        let mut per_var = Vec::with_capacity(d);
        for i in 0..d {
            let samples: Vec<f64> = rows.iter().map(|&t| x[(t, i)]).collect();
            per_var.push(Margin::SkewT(fit_margin(&samples)?.params));
        }
        margins.push(per_var);
    }
    let mut chain = {
        let stay = 0.9;
        let off = if g_count > 1 { (1.0 - stay) / (g_count - 1) as f64 } else { 0.0 };
        let trans = DMatrix::from_fn(g_count, g_count, |i, j| {
            if i == j {
                if g_count == 1 {
                    1.0
                } else {
                    stay
                }
            } else {
                off
            }
        });
        ChainParams::new(vec![1.0 / g_count as f64; g_count], trans)?
    };

    let log_emis = |margins: &[Vec<Margin>]| -> DMatrix<f64> {
        DMatrix::from_fn(t_len, g_count, |t, g| {
            (0..d).map(|i| margins[g][i].logpdf(x[(t, i)])).sum()
        })
    };

    let mut ll_prev = f64::NEG_INFINITY;
    let mut iters = 0;
    let mut converged = false;
    let mut gamma = DMatrix::zeros(t_len, g_count);
    for it in 0..max_iters {
        iters = it + 1;
        let emis = log_emis(&margins);
        // log-space forward/backward
        let mut la = DMatrix::from_element(t_len, g_count, f64::NEG_INFINITY);
        for g in 0..g_count {
            la[(0, g)] = chain.init()[g].ln() + emis[(0, g)];
        }
        for t in 1..t_len {
            for g in 0..g_count {
                let terms: Vec<f64> = (0..g_count)
                    .map(|h| la[(t - 1, h)] + chain.trans()[(h, g)].ln())
                    .collect();
                la[(t, g)] = crate::util::logsumexp(&terms) + emis[(t, g)];
            }
        }
        let ll = crate::util::logsumexp(&(0..g_count).map(|g| la[(t_len - 1, g)]).collect::<Vec<_>>());
        let mut lb = DMatrix::from_element(t_len, g_count, 0.0);
        for t in (0..t_len - 1).rev() {
            for g in 0..g_count {
                let terms: Vec<f64> = (0..g_count)
                    .map(|h| chain.trans()[(g, h)].ln() + emis[(t + 1, h)] + lb[(t + 1, h)])
                    .collect();
                lb[(t, g)] = crate::util::logsumexp(&terms);
            }
        }
        for t in 0..t_len {
            for g in 0..g_count {
                gamma[(t, g)] = (la[(t, g)] + lb[(t, g)] - ll).exp();
            }
        }
        // M-step: chain
        let mut init = (0..g_count).map(|g| gamma[(0, g)].max(1e-12)).collect::<Vec<_>>();
        let si: f64 = init.iter().sum();
        for p in init.iter_mut() {
            *p /= si;
        }
        let mut trans = DMatrix::zeros(g_count, g_count);
        for gfrom in 0..g_count {
            let mut row = vec![0.0; g_count];
            for t in 0..t_len - 1 {
                for gto in 0..g_count {
                    let lx = la[(t, gfrom)]
                        + chain.trans()[(gfrom, gto)].ln()
                        + emis[(t + 1, gto)]
                        + lb[(t + 1, gto)]
                        - ll;
                    row[gto] += lx.exp();
                }
            }
            let total: f64 = row.iter().sum();
            for gto in 0..g_count {
                trans[(gfrom, gto)] =
                    if total > 0.0 { row[gto] / total } else { 1.0 / g_count as f64 };
            }
        }
        chain = ChainParams::new(init, trans)?;
        // M-step: margins by weighted fits
        for g in 0..g_count {
            let w: Vec<f64> = (0..t_len).map(|t| gamma[(t, g)]).collect();
            if w.iter().sum::<f64>() < 5.0 {
                continue; // keep previous margins for a starved regime
            }
            for i in 0..d {
                let xs: Vec<f64> = (0..t_len).map(|t| x[(t, i)]).collect();
                if let Ok(fit) = fit_margin_weighted(&xs, Some(&w)) {
                    margins[g][i] = Margin::SkewT(fit.params);
                }
            }
        }
        if (ll - ll_prev).abs() <= 1e-7 * ll.abs().max(1.0) {
            ll_prev = ll;
            converged = true;
            break;
        }
        ll_prev = ll;
    }

    // identify labels: order by variable 0 median, ascending
    let mut perm: Vec<usize> = (0..g_count).collect();
    perm.sort_by(|&a, &b| {
        margin_median(&margins[a][0])
            .partial_cmp(&margin_median(&margins[b][0]))
            .unwrap()
    });
    let margins_sorted: Vec<Vec<Margin>> = perm.iter().map(|&g| margins[g].clone()).collect();
    let init_sorted: Vec<f64> = perm.iter().map(|&g| chain.init()[g]).collect();
    let trans_sorted =
        DMatrix::from_fn(g_count, g_count, |i, j| chain.trans()[(perm[i], perm[j])]);
    let gamma_sorted = DMatrix::from_fn(t_len, g_count, |t, g| gamma[(t, perm[g])]);
    Ok(IndepHmm {
        margins: margins_sorted,
        chain: ChainParams::new(init_sorted, trans_sorted)?,
        loglik: ll_prev,
        iters,
        converged,
        posteriors: gamma_sorted,
    })
}

// ---------------------------------------------------------------------------
// estimation without an external regime sequence

/// Multi-stage fit with the regime sequence marginalized out: margins and
/// chain from an independence hidden Markov model, then serial structures,
/// contemporaneous correlations and switch correlations, each maximizing
/// the marginal likelihood with earlier groups frozen.
pub fn fit_multistage(
    x: &DMatrix<f64>,
    g_count: usize,
    orders: &[Vec<usize>],
    opts: &FitOptions,
) -> Result<FitReport> {
    let d = x.ncols();
    let t_len = x.nrows();
    if orders.len() != g_count || orders.iter().any(|r| r.len() != d) {
        return Err(Error::Shape("orders must be shaped [regimes][variables]".into()));
    }
    let k = orders.iter().flat_map(|r| r.iter()).max().cloned().unwrap_or(0) + 1;
    if t_len <= k {
        return Err(Error::InsufficientData(format!("need T > k = {k}")));
    }
    let mut warnings = Vec::new();
    let mut stages = Vec::new();

    // Step 1: independence HMM for margins and chain
    let hmm = fit_independence_hmm(x, g_count, opts.max_em_iters)?;
    stages.push(StageReport {
        name: "margins+chain (independence hmm)".into(),
        initial_loglik: f64::NAN,
        final_loglik: hmm.loglik,
        iters: hmm.iters,
        converged: hmm.converged,
    });
    if !hmm.converged {
        warnings.push("independence HMM hit the iteration cap".into());
    }

    let mut model = RegimeModel::new(
        hmm.margins.clone(),
        orders.iter().map(|r| r.iter().map(|&o| vec![0.0; o]).collect()).collect(),
        vec![ContempCorr::identity(d); g_count],
        SwitchCorr::zero(d),
        hmm.chain.clone(),
    )?;
    let pit = Arc::new(PitTables::new(&model, x)?);

    // Step 2: serial structures (marginal likelihood, contemporaneous and
    // switch correlations ignored)
    let layout: Vec<(usize, usize, usize)> = (1..=g_count)
        .flat_map(|g| (0..d).map(move |i| (g, i, orders[g - 1][i])))
        .filter(|&(_, _, o)| o > 0)
        .collect();
    let n_serial: usize = layout.iter().map(|&(_, _, o)| o).sum();
    if n_serial > 0 {
        let base = model.clone();
        let layout_ref = &layout;
        let mut objective = |z: &[f64]| -> f64 {
            let mut cand = base.clone();
            let mut pos = 0;
            for &(g, i, o) in layout_ref {
                let pv: Vec<f64> = z[pos..pos + o].iter().map(|&a| tanh_clamp(a)).collect();
                pos += o;
                if cand.set_pacf(g, i, pv).is_err() {
                    return f64::INFINITY;
                }
            }
            marginal_objective(&cand, x, &pit)
        };
        let z0 = vec![0.0; n_serial];
        let init_val = objective(&z0);
        let r = optim::minimize(&mut objective, &z0, opts.optim);
        stages.push(stage_from("serial (marginal)", init_val, &r));
        let mut pos = 0;
        for &(g, i, o) in &layout {
            let pv: Vec<f64> = r.x[pos..pos + o].iter().map(|&a| tanh_clamp(a)).collect();
            pos += o;
            model.set_pacf(g, i, pv)?;
        }
    }

    // Step 3: contemporaneous correlations (marginal likelihood)
    if d > 1 {
        let n_angles = d * (d - 1) / 2;
        let base = model.clone();
        let mut z0 = Vec::with_capacity(g_count * n_angles);
        for g in 1..=g_count {
            z0.extend(init_angles_from_posterior(&pit, &hmm.posteriors, g, d));
        }
        let mut objective = |z: &[f64]| -> f64 {
            let mut cand = base.clone();
            for g in 1..=g_count {
                let corr = angles_to_corr(&z[(g - 1) * n_angles..g * n_angles], d);
                let cc = match ContempCorr::new(corr) {
                    Ok(c) => c,
                    Err(_) => return f64::INFINITY,
                };
                if cand.set_contemp(g, cc).is_err() {
                    return f64::INFINITY;
                }
            }
            marginal_objective(&cand, x, &pit)
        };
        let init_val = objective(&z0);
        let r = optim::minimize(&mut objective, &z0, opts.optim);
        stages.push(stage_from("contemporaneous (marginal)", init_val, &r));
        for g in 1..=g_count {
            model.set_contemp(
                g,
                ContempCorr::new(angles_to_corr(&r.x[(g - 1) * n_angles..g * n_angles], d))?,
            )?;
        }
    }

    // Step 4: switch correlations (marginal likelihood)
    if opts.estimate_switch && g_count > 1 {
        let base = model.clone();
        let mut objective = |z: &[f64]| -> f64 {
            let mut cand = base.clone();
            let rho: Vec<f64> = z.iter().map(|&a| tanh_clamp(a)).collect();
            match SwitchCorr::new(rho) {
                Ok(s) => {
                    if cand.set_switch_corr(s).is_err() {
                        return f64::INFINITY;
                    }
                }
                Err(_) => return f64::INFINITY,
            }
            marginal_objective(&cand, x, &pit)
        };
        let z0 = vec![0.0; d];
        let init_val = objective(&z0);
        let r = optim::minimize(&mut objective, &z0, opts.optim);
        stages.push(stage_from("switch (marginal)", init_val, &r));
        model.set_switch_corr(SwitchCorr::new(
            r.x.iter().map(|&a| tanh_clamp(a)).collect(),
        )?)?;
    }

    let loglik = fbinfer::marginal_loglik(x, &model)?;
    let clamps = PitTables::new(&model, x)?.clamps;
    let n_params =
        model_param_breakdown(&model, opts.estimate_switch && g_count > 1).total();
    Ok(FitReport {
        model,
        stages,
        loglik,
        param_count: n_params,
        aic: 2.0 * n_params as f64 - 2.0 * loglik,
        iterations: 1,
        converged: true,
        clamps,
        warnings,
    })
}

fn init_angles_from_posterior(
    pit: &PitTables,
    gamma: &DMatrix<f64>,
    g: usize,
    d: usize,
) -> Vec<f64> {
    let z = &pit.z[g - 1];
    let t_len = z.nrows();
    let mut acc = DMatrix::zeros(d, d);
    let mut wsum = 0.0;
    for t in 0..t_len {
        let w = gamma[(t, g - 1)];
        for i in 0..d {
            for j in 0..d {
                acc[(i, j)] += w * z[(t, i)] * z[(t, j)];
            }
        }
        wsum += w;
    }
    if wsum <= 1e-9 {
        return vec![0.0; d * (d - 1) / 2];
    }
    acc /= wsum;
    let dinv: Vec<f64> = (0..d).map(|i| 1.0 / acc[(i, i)].sqrt().max(1e-12)).collect();
    let corr = DMatrix::from_fn(d, d, |i, j| {
        if i == j {
            1.0
        } else {
            (acc[(i, j)] * dinv[i] * dinv[j]).clamp(-0.999, 0.999)
        }
    });
    corr_to_angles(&shrink_to_pd(corr)).unwrap_or_else(|_| vec![0.0; d * (d - 1) / 2])
}

/// Iterative estimation: initialize from the independence HMM with identity
/// correlations, then alternate regime dating and complete-likelihood
/// fitting until the dated sequence stabilizes.
pub fn fit_iterative(
    x: &DMatrix<f64>,
    g_count: usize,
    orders: &[Vec<usize>],
    cfg: &UpdateConfig,
    max_iter: usize,
    opts: &FitOptions,
) -> Result<(FitReport, RegimeSequence)> {
    let d = x.ncols();
    let hmm = fit_independence_hmm(x, g_count, opts.max_em_iters)?;
    let mut model = RegimeModel::new(
        hmm.margins.clone(),
        orders.iter().map(|r| r.iter().map(|&o| vec![0.0; o]).collect()).collect(),
        vec![ContempCorr::identity(d); g_count],
        SwitchCorr::zero(d),
        hmm.chain.clone(),
    )?;
    let mut v = fbinfer::date_regimes(&fbinfer::run_prob(x, &model, cfg.tau)?, cfg);
    let mut report: Option<FitReport> = None;
    let mut prev: Option<RegimeSequence> = None;
    let mut best: Option<(f64, FitReport, RegimeSequence)> = None;
    let mut iterations = 0;
    let mut converged = false;
    let mut oscillated = false;
    for _ in 0..max_iter {
        iterations += 1;
        let rep = fit_with_regimes_impl(x, &v, orders, opts, Some(&model))?;
        model = rep.model.clone();
        if best.as_ref().map(|(l, _, _)| rep.loglik > *l).unwrap_or(true) {
            best = Some((rep.loglik, rep.clone(), v.clone()));
        }
        report = Some(rep);
        let v_new = fbinfer::date_regimes(&fbinfer::run_prob(x, &model, cfg.tau)?, cfg);
        if v_new == v {
            converged = true;
            break;
        }
        if prev.as_ref() == Some(&v_new) {
            oscillated = true;
            break;
        }
        prev = Some(std::mem::replace(&mut v, v_new));
    }
    let (mut final_report, final_v) = if oscillated {
        let (_, rep, vv) = best.expect("at least one iterate");
        (rep, vv)
    } else {
        (report.expect("at least one iterate"), v)
    };
    final_report.iterations = iterations;
    final_report.converged = converged;
    if oscillated {
        final_report.warnings.push("regime dating oscillated; best iterate returned".into());
    }
    Ok((final_report, final_v))
}

// ---------------------------------------------------------------------------
// AIC scans

#[derive(Clone, Debug)]
pub struct ScanRow {
    pub num_regimes: usize,
    pub order: usize,
    pub status: String,
    pub loglik: Option<f64>,
    pub param_count: Option<usize>,
    pub aic: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct ScanTable {
    pub rows: Vec<ScanRow>,
}

/// Grid of fits over regime counts and uniform Markov orders; one AIC per
/// cell (complete likelihood when `v` is given, marginal otherwise). Order 0
/// pins the switch correlations at zero. Failed cells carry their error in
/// `status` and the scan continues.
pub fn aic_scan(
    x: &DMatrix<f64>,
    g_range: &[usize],
    order_range: &[usize],
    v: Option<&RegimeSequence>,
    opts: &FitOptions,
) -> ScanTable {
    let cells: Vec<(usize, usize)> = g_range
        .iter()
        .flat_map(|&g| order_range.iter().map(move |&o| (g, o)))
        .collect();
    let rows: Vec<ScanRow> = cells
        .par_iter()
        .map(|&(g, order)| {
            let mut cell_opts = *opts;
            if order == 0 || g == 1 {
                cell_opts.estimate_switch = false;
            }
            let orders = uniform_orders(g, x.ncols(), order);
            let outcome = match v {
                Some(seq) => fit_with_regimes(x, seq, &orders, &cell_opts),
                None => fit_multistage(x, g, &orders, &cell_opts),
            };
            match outcome {
                Ok(rep) => ScanRow {
                    num_regimes: g,
                    order,
                    status: "ok".into(),
                    loglik: Some(rep.loglik),
                    param_count: Some(rep.param_count),
                    aic: Some(rep.aic),
                },
                Err(e) => ScanRow {
                    num_regimes: g,
                    order,
                    status: format!("failed: {e}"),
                    loglik: None,
                    param_count: None,
                    aic: None,
                },
            }
        })
        .collect();
    ScanTable { rows }
}
