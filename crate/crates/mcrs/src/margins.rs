//! Univariate margins: a four-parameter skew-t family (location, scale, left
//! tailweight, right tailweight), maximum-likelihood fitting, and probability
//! integral transforms to and from the standard Gaussian scale.
//!
//! The standardized density with tailweights `a` (left) and `b` (right) is
//! proportional to `(1 + u)^(a+1/2) (1 - u)^(b+1/2)` where
//! `u = t / sqrt(a + b + t^2)`; the map `t -> (1+u)/2` carries it to a
//! Beta(a, b) variable, which gives the CDF in terms of the regularized
//! incomplete beta function. Larger tailweights mean lighter tails; `a = b`
//! is symmetric about the location.

use crate::error::{Error, Result};
use crate::optim::{self, OptimOptions};
use crate::util::{self, norm_logpdf, norm_quantile};
use serde::{Deserialize, Serialize};
use statrs::function::beta::{beta_reg, ln_beta};

/// CDF values are clamped into `[CDF_CLAMP, 1 - CDF_CLAMP]` before the normal
/// quantile is applied, so transforms stay finite in the extreme tails.
pub const CDF_CLAMP: f64 = 1e-15;

/// Skew-t parameter vector for one variable in one regime.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkewTParams {
    pub location: f64,
    pub scale: f64,
    pub left_tailweight: f64,
    pub right_tailweight: f64,
}

impl SkewTParams {
    pub fn new(location: f64, scale: f64, left: f64, right: f64) -> Result<Self> {
        let p = SkewTParams { location, scale, left_tailweight: left, right_tailweight: right };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::ParamDomain(format!("scale must be positive, got {}", self.scale)));
        }
        if !(self.left_tailweight > 0.0 && self.left_tailweight.is_finite())
            || !(self.right_tailweight > 0.0 && self.right_tailweight.is_finite())
        {
            return Err(Error::ParamDomain(format!(
                "tailweights must be positive, got ({}, {})",
                self.left_tailweight, self.right_tailweight
            )));
        }
        if !self.location.is_finite() {
            return Err(Error::ParamDomain("location must be finite".into()));
        }
        Ok(())
    }
}

/// A margin distribution. The Gaussian variant exists for reductions where
/// the transform to the normal scale must be exact (e.g. `N(0,1)` margins
/// make the copula density coincide with the latent Gaussian density).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family")]
pub enum Margin {
    #[serde(rename = "skew_t")]
    SkewT(SkewTParams),
    #[serde(rename = "gaussian")]
    Gaussian { mean: f64, sd: f64 },
}

impl Margin {
    pub fn standard_gaussian() -> Self {
        Margin::Gaussian { mean: 0.0, sd: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Margin::SkewT(p) => p.validate(),
            Margin::Gaussian { sd, mean } => {
                if *sd > 0.0 && sd.is_finite() && mean.is_finite() {
                    Ok(())
                } else {
                    Err(Error::ParamDomain("gaussian margin needs finite mean, sd > 0".into()))
                }
            }
        }
    }

    pub fn logpdf(&self, x: f64) -> f64 {
        match self {
            Margin::SkewT(p) => skewt_logpdf(x, p),
            Margin::Gaussian { mean, sd } => norm_logpdf((x - mean) / sd) - sd.ln(),
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            Margin::SkewT(p) => skewt_cdf(x, p),
            Margin::Gaussian { mean, sd } => util::norm_cdf((x - mean) / sd),
        }
    }

    pub fn quantile(&self, p: f64) -> Result<f64> {
        match self {
            Margin::SkewT(pa) => skewt_quantile(p, pa),
            Margin::Gaussian { mean, sd } => {
                if !(p > 0.0 && p < 1.0) {
                    return Err(Error::ParamDomain(format!("quantile needs p in (0,1), got {p}")));
                }
                Ok(mean + sd * norm_quantile(p))
            }
        }
    }

    /// Transform to the standard normal scale, `Φ^{-1}(F(x))`.
    pub fn pit_to_normal(&self, x: f64) -> GaussScore {
        match self {
            // exact: avoids Φ^{-1}∘Φ round-off so identity reductions are exact
            Margin::Gaussian { mean, sd } => GaussScore { value: (x - mean) / sd, clamped: false },
            Margin::SkewT(p) => pit_to_normal(x, p),
        }
    }

    /// Derivative of `pit_to_normal` with respect to `x`.
    pub fn pit_derivative(&self, x: f64) -> f64 {
        match self {
            Margin::Gaussian { sd, .. } => 1.0 / sd,
            Margin::SkewT(p) => pit_derivative(x, p),
        }
    }

    /// Inverse transform from the standard normal scale, `F^{-1}(Φ(y))`.
    pub fn from_normal(&self, y: f64) -> Result<f64> {
        match self {
            Margin::Gaussian { mean, sd } => Ok(mean + sd * y),
            Margin::SkewT(p) => {
                let u = util::norm_cdf(y).clamp(CDF_CLAMP, 1.0 - CDF_CLAMP);
                skewt_quantile(u, p)
            }
        }
    }
}

/// Observation carried to the standard normal scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussScore {
    pub value: f64,
    /// True when the CDF had to be clamped away from 0 or 1.
    pub clamped: bool,
}

// Stable log(1 + u) and log(1 - u) for u = t / sqrt(a + b + t^2).
// For t of the "wrong" sign the direct form cancels; rewrite through
// 1 -+ u = (a + b) / (r (r +- t)) with r = sqrt(a + b + t^2).
fn log_one_plus_u(t: f64, apb: f64) -> f64 {
    let r = (apb + t * t).sqrt();
    if t >= 0.0 {
        (1.0 + t / r).ln()
    } else {
        apb.ln() - r.ln() - (r - t).ln()
    }
}

fn log_one_minus_u(t: f64, apb: f64) -> f64 {
    let r = (apb + t * t).sqrt();
    if t <= 0.0 {
        (1.0 - t / r).ln()
    } else {
        apb.ln() - r.ln() - (r + t).ln()
    }
}

fn log_norm_const(a: f64, b: f64) -> f64 {
    (a + b - 1.0) * std::f64::consts::LN_2 + ln_beta(a, b) + 0.5 * (a + b).ln()
}

/// Log-density of the skew-t distribution.
pub fn skewt_logpdf(x: f64, p: &SkewTParams) -> f64 {
    let (a, b) = (p.left_tailweight, p.right_tailweight);
    let t = (x - p.location) / p.scale;
    let apb = a + b;
    (a + 0.5) * log_one_plus_u(t, apb) + (b + 0.5) * log_one_minus_u(t, apb)
        - log_norm_const(a, b)
        - p.scale.ln()
}

/// CDF of the skew-t distribution via the incomplete-beta representation.
pub fn skewt_cdf(x: f64, p: &SkewTParams) -> f64 {
    let (a, b) = (p.left_tailweight, p.right_tailweight);
    let t = (x - p.location) / p.scale;
    let apb = a + b;
    let r = (apb + t * t).sqrt();
    // (1 + u) / 2 without cancellation on either side
    let z = if t >= 0.0 {
        1.0 - 0.5 * apb / (r * (r + t))
    } else {
        0.5 * apb / (r * (r - t))
    };
    beta_reg(a, b, z.clamp(0.0, 1.0))
}

/// Quantile of the skew-t distribution by safeguarded Newton iteration.
pub fn skewt_quantile(prob: f64, p: &SkewTParams) -> Result<f64> {
    p.validate()?;
    if !(prob > 0.0 && prob < 1.0) {
        return Err(Error::ParamDomain(format!("quantile needs p in (0,1), got {prob}")));
    }
    // bracket in standardized coordinates
    let std = SkewTParams { location: 0.0, scale: 1.0, ..*p };
    let mut lo = -1.0;
    let mut hi = 1.0;
    while skewt_cdf(lo, &std) > prob {
        lo *= 2.0;
        if lo < -1e300 {
            break;
        }
    }
    while skewt_cdf(hi, &std) < prob {
        hi *= 2.0;
        if hi > 1e300 {
            break;
        }
    }
    let mut t = 0.5 * (lo + hi);
    for _ in 0..200 {
        let f = skewt_cdf(t, &std) - prob;
        if f > 0.0 {
            hi = t;
        } else {
            lo = t;
        }
        let df = skewt_logpdf(t, &std).exp();
        let step = if df > 0.0 { f / df } else { f64::NAN };
        let mut tn = t - step;
        if !tn.is_finite() || tn <= lo || tn >= hi {
            tn = 0.5 * (lo + hi); // bisect when Newton leaves the bracket
        }
        if (tn - t).abs() <= 1e-12 * t.abs().max(1.0) {
            t = tn;
            break;
        }
        t = tn;
    }
    Ok(p.location + p.scale * t)
}

/// `Φ^{-1}(F(x))`, clamped per [`CDF_CLAMP`] so the result is always finite.
pub fn pit_to_normal(x: f64, p: &SkewTParams) -> GaussScore {
    let u = skewt_cdf(x, p);
    let clamped = !(CDF_CLAMP..=1.0 - CDF_CLAMP).contains(&u);
    let u = u.clamp(CDF_CLAMP, 1.0 - CDF_CLAMP);
    GaussScore { value: norm_quantile(u), clamped }
}

/// Derivative of the transform: `f(x) / φ(Φ^{-1}(F(x)))`, always positive.
pub fn pit_derivative(x: f64, p: &SkewTParams) -> f64 {
    let gs = pit_to_normal(x, p);
    (skewt_logpdf(x, p) - norm_logpdf(gs.value)).exp()
}

/// Outcome of a maximum-likelihood margin fit.
#[derive(Clone, Debug)]
pub struct MarginFit {
    pub params: SkewTParams,
    pub loglik: f64,
    pub init_loglik: f64,
    pub iters: usize,
}

/// Fits the skew-t margin to i.i.d. samples by maximum likelihood.
pub fn fit_margin(samples: &[f64]) -> Result<MarginFit> {
    fit_margin_weighted(samples, None)
}

/// Weighted variant used by EM-style fitting; `weights` must be nonnegative.
pub fn fit_margin_weighted(samples: &[f64], weights: Option<&[f64]>) -> Result<MarginFit> {
    if samples.len() < 5 {
        return Err(Error::InsufficientData(format!(
            "margin fit needs at least 5 samples, got {}",
            samples.len()
        )));
    }
    if let Some(w) = weights {
        if w.len() != samples.len() {
            return Err(Error::Shape("weights length mismatch".into()));
        }
        if w.iter().any(|&wi| !(wi >= 0.0) || !wi.is_finite()) {
            return Err(Error::ParamDomain("fit weights must be finite and nonnegative".into()));
        }
        if w.iter().sum::<f64>() <= 0.0 {
            return Err(Error::InsufficientData("all fit weights are zero".into()));
        }
    }
    let mut sorted: Vec<f64> = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let iqr = util::quantile(&sorted, 0.75) - util::quantile(&sorted, 0.25);
    let var = util::variance(samples);
    let floor = (100.0 * f64::EPSILON * util::mean(samples).abs().max(1.0)).powi(2);
    if var.is_nan() || var <= floor {
        return Err(Error::InsufficientVariation(
            "samples have (numerically) zero variance; margin parameters are unidentifiable"
                .into(),
        ));
    }
    // Quantile-based initializer; tailweights start moderate. Fitted
    // tailweights are restricted to (1/2, 64]: below 1/2 the likelihood is
    // unbounded (a vanishing scale puts a spike on one observation while the
    // polynomial tails still cover the rest), and letting one tailweight
    // grow without bound alongside a vanishing scale walks a ridge towards a
    // limiting one-sided shape on which location and scale lose meaning.
    // The capped family still reaches effectively Gaussian tails.
    let loc0 = util::quantile(&sorted, 0.5);
    let scale0 = if iqr > 0.0 { iqr / 1.349 } else { var.sqrt() };
    let x0 = [loc0, scale0.ln(), 2.5f64.ln(), 2.5f64.ln()];
    let tailweight = |z: f64| 0.5 + z.exp().clamp(1e-12, 63.5);

    let nobs = samples.len() as f64;
    let mut objective = |v: &[f64]| {
        let p = SkewTParams {
            location: v[0],
            scale: v[1].exp(),
            left_tailweight: tailweight(v[2]),
            right_tailweight: tailweight(v[3]),
        };
        if !p.scale.is_finite() || p.scale <= 0.0 {
            return f64::INFINITY;
        }
        let s: f64 = match weights {
            None => samples.iter().map(|&x| skewt_logpdf(x, &p)).sum(),
            Some(w) => samples.iter().zip(w).map(|(&x, &wi)| wi * skewt_logpdf(x, &p)).sum(),
        };
        if s.is_finite() {
            -s / nobs
        } else {
            f64::INFINITY
        }
    };
    let init_value = objective(&x0);
    let r = optim::minimize(
        &mut objective,
        &x0,
        OptimOptions { rel_tol: 1e-8, max_iters: 500, fd_step: 1e-6 },
    );
    let params = SkewTParams {
        location: r.x[0],
        scale: r.x[1].exp(),
        left_tailweight: tailweight(r.x[2]),
        right_tailweight: tailweight(r.x[3]),
    };
    params.validate()?;
    if !r.converged && r.value > init_value {
        return Err(Error::NonConvergence { iters: r.iters, best_value: -r.value * nobs });
    }
    Ok(MarginFit {
        params,
        loglik: -r.value * nobs,
        init_loglik: -init_value * nobs,
        iters: r.iters,
    })
}
