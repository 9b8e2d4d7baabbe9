//! Forward-backward inference over regime tuples, marginal likelihood,
//! smoothed run probabilities and regime dating.
//!
//! Because the observed process is Markov of order `k` given the labels, the
//! usual hidden Markov recursions generalize to tables over tuples of the
//! last `k+1` regimes (growing tuples for the first `k` time points). Tuples
//! are encoded as base-G integers, digit `j` being the regime at the j-th
//! oldest covered time; all recursions run in log space.

use crate::error::{Error, Result};
use crate::likelihood::RegimeSequence;
use crate::model::{RegimeModel, SeriesEval};
use crate::util::logsumexp;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Hidden Markov chain parameters: initial distribution and transition
/// matrix (rows sum to one).
#[derive(Clone, Debug, PartialEq)]
pub struct ChainParams {
    init: Vec<f64>,
    trans: DMatrix<f64>,
}

impl ChainParams {
    pub fn new(init: Vec<f64>, trans: DMatrix<f64>) -> Result<Self> {
        let g = init.len();
        if g == 0 {
            return Err(Error::ParamDomain("chain needs at least one regime".into()));
        }
        if trans.nrows() != g || trans.ncols() != g {
            return Err(Error::Shape(format!(
                "transition matrix is {}x{}, expected {g}x{g}",
                trans.nrows(),
                trans.ncols()
            )));
        }
        if init.iter().any(|&p| !(0.0..=1.0 + 1e-12).contains(&p)) {
            return Err(Error::ParamDomain("initial probabilities must be in [0,1]".into()));
        }
        if (init.iter().sum::<f64>() - 1.0).abs() > 1e-8 {
            return Err(Error::ParamDomain("initial probabilities must sum to 1".into()));
        }
        for r in 0..g {
            let row = trans.row(r);
            if row.iter().any(|&p| !(0.0..=1.0 + 1e-12).contains(&p)) {
                return Err(Error::ParamDomain(format!("transition row {r} outside [0,1]")));
            }
            if (row.iter().sum::<f64>() - 1.0).abs() > 1e-8 {
                return Err(Error::ParamDomain(format!("transition row {r} must sum to 1")));
            }
        }
        Ok(ChainParams { init, trans })
    }

    pub fn uniform(g: usize) -> Self {
        ChainParams {
            init: vec![1.0 / g as f64; g],
            trans: DMatrix::from_element(g, g, 1.0 / g as f64),
        }
    }

    pub fn num_regimes(&self) -> usize {
        self.init.len()
    }

    /// Initial probability of regime `g` (1-based).
    pub fn init_prob(&self, g: usize) -> f64 {
        self.init[g - 1]
    }

    /// Transition probability from regime `from` to `to` (1-based).
    pub fn trans_prob(&self, from: usize, to: usize) -> f64 {
        self.trans[(from - 1, to - 1)]
    }

    pub fn init(&self) -> &[f64] {
        &self.init
    }

    pub fn trans(&self) -> &DMatrix<f64> {
        &self.trans
    }

    /// Stationary distribution (power iteration; the chains used here are
    /// small and ergodic enough for this to converge quickly).
    pub fn stationary(&self) -> Vec<f64> {
        let g = self.num_regimes();
        let mut pi = vec![1.0 / g as f64; g];
        for _ in 0..10_000 {
            let mut next = vec![0.0; g];
            for i in 0..g {
                for j in 0..g {
                    next[j] += pi[i] * self.trans[(i, j)];
                }
            }
            let diff: f64 = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
            pi = next;
            if diff < 1e-14 {
                break;
            }
        }
        pi
    }

    /// Log probability of a full label path under the chain.
    pub fn path_logprob(&self, v: &RegimeSequence) -> f64 {
        let mut lp = self.init_prob(v.label(0)).ln();
        for t in 1..v.len() {
            lp += self.trans_prob(v.label(t - 1), v.label(t)).ln();
        }
        lp
    }
}

/// Log-space forward or backward tables over regime tuples.
///
/// `tables[t]` has `G^min(t+1, k+1)` entries covering times
/// `max(0, t-k) ..= t` (0-based); digit `j` (base-G, little-endian) is the
/// regime at the j-th oldest covered time.
pub struct LogTables {
    pub tables: Vec<Vec<f64>>,
    pub k: usize,
    pub num_regimes: usize,
}

impl LogTables {
    fn width(&self, t: usize) -> usize {
        (t + 1).min(self.k + 1)
    }
}

// digits are little-endian oldest-first; filling the output back to front
// yields newest-first labels as the window machinery expects
fn decode_pattern(mut idx: usize, g: usize, width: usize) -> Vec<usize> {
    let mut pat = vec![0usize; width];
    for slot in pat.iter_mut().rev() {
        *slot = idx % g + 1;
        idx /= g;
    }
    pat
}

/// Per-time emission tables: entry `idx` of table `t` is the conditional
/// log-density of `x_t` given its window under the label tuple `idx`.
pub(crate) fn emission_tables(eval: &SeriesEval, g: usize) -> Vec<Vec<f64>> {
    let k = eval.cache.markov_order();
    let t_len = eval.x.nrows();
    (0..t_len)
        .map(|t| {
            let w = (t + 1).min(k + 1);
            (0..g.pow(w as u32))
                .map(|idx| eval.cond_logdensity(t, &decode_pattern(idx, g, w)))
                .collect()
        })
        .collect()
}

/// Forward tables: `α_t(ω) = f(x_1..x_t, labels ω; θ)` in log space.
pub fn forward(x: &DMatrix<f64>, model: &RegimeModel) -> Result<LogTables> {
    let eval = SeriesEval::new(model, x)?;
    let emis = emission_tables(&eval, model.num_regimes());
    Ok(forward_tables(model, &emis, x.nrows()))
}

pub(crate) fn forward_tables(
    model: &RegimeModel,
    emis: &[Vec<f64>],
    t_len: usize,
) -> LogTables {
    let g = model.num_regimes();
    let k = model.markov_order();
    let chain = model.chain();
    let mut tables: Vec<Vec<f64>> = Vec::with_capacity(t_len);

    // t = 0: one regime digit
    let mut first = vec![0.0; g];
    for gi in 1..=g {
        first[gi - 1] = chain.init_prob(gi).ln() + emis[0][gi - 1];
    }
    tables.push(first);

    for t in 1..t_len {
        let w = (t + 1).min(k + 1);
        let size = g.pow(w as u32);
        let mut cur = vec![f64::NEG_INFINITY; size];
        let grow = t <= k;
        let pow_top = size / g; // G^{w-1}
        for (idx, slot) in cur.iter_mut().enumerate() {
            // digit w-1 is the regime at t, digit w-2 at t-1
            let newest = idx / pow_top + 1;
            let second = (idx / (pow_top / g)) % g + 1;
            let ltrans = chain.trans_prob(second, newest).ln();
            if grow {
                // previous table has one digit fewer (drop the newest digit)
                let prev_idx = idx % pow_top;
                *slot = emis[t][idx] + ltrans + tables[t - 1][prev_idx];
            } else {
                // marginalize the regime that fell out of the window
                let base = (idx % pow_top) * g;
                let mut terms = Vec::with_capacity(g);
                for old in 0..g {
                    terms.push(tables[t - 1][base + old]);
                }
                *slot = emis[t][idx] + ltrans + logsumexp(&terms);
            }
        }
        tables.push(cur);
    }
    LogTables { tables, k, num_regimes: g }
}

/// Backward tables: `β_t(ω) = f(x_{t+1}..x_T | window, labels ω; θ)` in log
/// space; the table at the final time is identically zero.
pub fn backward(x: &DMatrix<f64>, model: &RegimeModel) -> Result<LogTables> {
    let eval = SeriesEval::new(model, x)?;
    let emis = emission_tables(&eval, model.num_regimes());
    Ok(backward_tables(model, &emis, x.nrows()))
}

pub(crate) fn backward_tables(
    model: &RegimeModel,
    emis: &[Vec<f64>],
    t_len: usize,
) -> LogTables {
    let g = model.num_regimes();
    let k = model.markov_order();
    let chain = model.chain();
    let mut tables: Vec<Vec<f64>> = vec![Vec::new(); t_len];
    let width = |t: usize| (t + 1).min(k + 1);
    tables[t_len - 1] = vec![0.0; g.pow(width(t_len - 1) as u32)];

    for t in (0..t_len - 1).rev() {
        let w = width(t);
        let w_next = width(t + 1);
        let size = g.pow(w as u32);
        let mut cur = vec![f64::NEG_INFINITY; size];
        let next_grow = w_next > w; // next table appends a digit
        let pow_top_next = g.pow((w_next - 1) as u32);
        for (idx, slot) in cur.iter_mut().enumerate() {
            let newest = idx / (size / g) + 1; // regime at time t
            let mut terms = Vec::with_capacity(g);
            for gn in 1..=g {
                let next_idx = if next_grow {
                    idx + (gn - 1) * pow_top_next
                } else {
                    idx / g + (gn - 1) * pow_top_next
                };
                terms.push(
                    tables[t + 1][next_idx]
                        + chain.trans_prob(newest, gn).ln()
                        + emis[t + 1][next_idx],
                );
            }
            *slot = logsumexp(&terms);
        }
        tables[t] = cur;
    }
    LogTables { tables, k, num_regimes: g }
}

/// Log-likelihood of the observations with the regime sequence marginalized
/// out.
pub fn marginal_loglik(x: &DMatrix<f64>, model: &RegimeModel) -> Result<f64> {
    let eval = SeriesEval::new(model, x)?;
    let emis = emission_tables(&eval, model.num_regimes());
    Ok(marginal_from_emissions(model, &emis, x.nrows()))
}

pub(crate) fn marginal_from_emissions(
    model: &RegimeModel,
    emis: &[Vec<f64>],
    t_len: usize,
) -> f64 {
    let fwd = forward_tables(model, emis, t_len);
    logsumexp(fwd.tables.last().expect("nonempty series"))
}

/// Smoothed run probabilities `p_{t,τ}(g)`: posterior probability that the
/// regime equals `g` for `τ+1` consecutive time points starting at `t`
/// (runs reaching past the end of the series are truncated at `T`).
#[derive(Clone, Debug)]
pub struct RunProbSeries {
    /// `T x G` matrix of probabilities.
    pub probs: DMatrix<f64>,
    pub tau: usize,
}

pub fn run_prob(x: &DMatrix<f64>, model: &RegimeModel, tau: usize) -> Result<RunProbSeries> {
    let eval = SeriesEval::new(model, x)?;
    let k = eval.cache.markov_order();
    if tau > k {
        return Err(Error::ParamDomain(format!(
            "smoothing span tau={tau} exceeds the Markov order k={k}"
        )));
    }
    let emis = emission_tables(&eval, model.num_regimes());
    let fwd = forward_tables(model, &emis, x.nrows());
    let bwd = backward_tables(model, &emis, x.nrows());
    let g = model.num_regimes();
    let t_len = x.nrows();
    let loglik = logsumexp(&(0..g).map(|i| fwd.tables[0][i] + bwd.tables[0][i]).collect::<Vec<_>>());

    let mut probs = DMatrix::zeros(t_len, g);
    for t0 in 0..t_len {
        let tend = (t0 + tau).min(t_len - 1);
        let w = fwd.width(tend);
        let oldest_time = tend + 1 - w;
        // digits for times t0..=tend must all be the target regime
        let lo_digit = t0 - oldest_time;
        for target in 1..=g {
            let mut terms = Vec::new();
            for idx in 0..fwd.tables[tend].len() {
                let mut ok = true;
                let mut rem = idx;
                for digit in 0..w {
                    let lab = rem % g + 1;
                    rem /= g;
                    if digit >= lo_digit && lab != target {
                        ok = false;
                        break;
                    }
                }
                if ok {
                    terms.push(fwd.tables[tend][idx] + bwd.tables[tend][idx]);
                }
            }
            probs[(t0, target - 1)] = (logsumexp(&terms) - loglik).exp().clamp(0.0, 1.0);
        }
    }
    Ok(RunProbSeries { probs, tau })
}

/// Dating configuration: smoothing span, confirmation run length, threshold.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct UpdateConfig {
    pub tau: usize,
    pub nu: usize,
    pub xi: f64,
}

impl UpdateConfig {
    pub fn new(tau: usize, nu: usize, xi: f64) -> Result<Self> {
        if nu == 0 {
            return Err(Error::ParamDomain("confirmation length nu must be >= 1".into()));
        }
        if !(xi > 0.0 && xi < 1.0) {
            return Err(Error::ParamDomain(format!("threshold xi={xi} must be in (0,1)")));
        }
        Ok(UpdateConfig { tau, nu, xi })
    }
}

/// Dates the regime sequence from run probabilities: the initial regime is
/// the argmax at the first time point; a switch to `g'` is placed at the
/// earliest `t` where `p` stays above the threshold for `nu + 1` consecutive
/// points. When several regimes qualify at the same time the one with the
/// larger confirmed minimum wins, ties to the lower index.
pub fn date_regimes(probs: &RunProbSeries, cfg: &UpdateConfig) -> RegimeSequence {
    let t_len = probs.probs.nrows();
    let g = probs.probs.ncols();
    let mut current = (0..g)
        .max_by(|&a, &b| {
            probs.probs[(0, a)].partial_cmp(&probs.probs[(0, b)]).unwrap_or(std::cmp::Ordering::Equal)
        })
        .unwrap_or(0)
        + 1;
    let mut labels = vec![current; t_len];
    let mut t = 1;
    while t < t_len {
        if t + cfg.nu < t_len {
            let mut best: Option<(usize, f64)> = None;
            for cand in 1..=g {
                if cand == current {
                    continue;
                }
                let m = (0..=cfg.nu)
                    .map(|i| probs.probs[(t + i, cand - 1)])
                    .fold(f64::INFINITY, f64::min);
                if m > cfg.xi {
                    let better = match best {
                        None => true,
                        Some((bg, bm)) => m > bm || (m == bm && cand < bg),
                    };
                    if better {
                        best = Some((cand, m));
                    }
                }
            }
            if let Some((cand, _)) = best {
                current = cand;
                for slot in labels.iter_mut().skip(t) {
                    *slot = current;
                }
            }
        }
        t += 1;
    }
    RegimeSequence::new(labels, g).expect("valid labels")
}
