//! Complete-data log-likelihood given a regime sequence, and per-segment
//! multivariate/univariate log-likelihoods.
//!
//! The process is Markov of order `k`, so the joint density factorizes into
//! a head term over the first `k+1` observations and one conditional term
//! per later time, each conditioning on exactly `k` past observations with
//! the window correlation matrix selected by the labels.

use crate::error::{Error, Result};
use crate::margins::Margin;
use crate::model::{RegimeModel, SeriesEval};
use crate::serialcorr::ToeplitzCorr;
use crate::util::MvnChol;
use nalgebra::{DMatrix, DVector};

/// Latent regime labels `v_1..v_T`, 1-based ids in `{1..G}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegimeSequence {
    labels: Vec<usize>,
}

impl RegimeSequence {
    pub fn new(labels: Vec<usize>, num_regimes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::ParamDomain("regime sequence must be nonempty".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&g| g == 0 || g > num_regimes) {
            return Err(Error::ParamDomain(format!(
                "regime label {bad} outside 1..={num_regimes}"
            )));
        }
        Ok(RegimeSequence { labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Label at 0-based time `t`.
    pub fn label(&self, t: usize) -> usize {
        self.labels[t]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.labels
    }

    /// Fraction of positions where two sequences agree.
    pub fn agreement(&self, other: &RegimeSequence) -> f64 {
        let n = self.len().min(other.len());
        let same = (0..n).filter(|&t| self.labels[t] == other.labels[t]).count();
        same as f64 / n as f64
    }
}

/// Maximal constant-regime segments of a sequence: segment `s` covers the
/// 0-based times `start(s) .. end(s)` (exclusive) in regime `regime(s)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentPartition {
    starts: Vec<usize>,
    regimes: Vec<usize>,
    len: usize,
}

impl SegmentPartition {
    pub fn num_segments(&self) -> usize {
        self.regimes.len()
    }

    /// Number of switches S.
    pub fn switch_count(&self) -> usize {
        self.regimes.len() - 1
    }

    pub fn start(&self, s: usize) -> usize {
        self.starts[s]
    }

    pub fn end(&self, s: usize) -> usize {
        self.starts.get(s + 1).cloned().unwrap_or(self.len)
    }

    pub fn regime(&self, s: usize) -> usize {
        self.regimes[s]
    }

    pub fn seq_len(&self) -> usize {
        self.len
    }

    /// Inverse of [`partition_segments`].
    pub fn reconstruct(&self) -> RegimeSequence {
        let mut labels = vec![0usize; self.len];
        for s in 0..self.num_segments() {
            labels[self.start(s)..self.end(s)].fill(self.regime(s));
        }
        RegimeSequence { labels }
    }
}

/// Run-length encodes a regime sequence into its segment partition.
pub fn partition_segments(v: &RegimeSequence) -> SegmentPartition {
    let mut starts = vec![0usize];
    let mut regimes = vec![v.label(0)];
    for t in 1..v.len() {
        if v.label(t) != v.label(t - 1) {
            starts.push(t);
            regimes.push(v.label(t));
        }
    }
    SegmentPartition { starts, regimes, len: v.len() }
}

fn window_pattern(v: &RegimeSequence, t: usize, w: usize) -> Vec<usize> {
    (0..w).map(|l| v.label(t - l)).collect()
}

/// Exact log joint density of the series given the regime sequence: head
/// term over the first `min(T, k+1)` observations plus one conditional term
/// per later time point.
pub fn complete_loglik(
    x: &DMatrix<f64>,
    v: &RegimeSequence,
    model: &RegimeModel,
) -> Result<f64> {
    let t_len = x.nrows();
    if v.len() != t_len {
        return Err(Error::Shape(format!(
            "series length {} vs regime sequence length {}",
            t_len,
            v.len()
        )));
    }
    if let Some(&bad) = v.as_slice().iter().find(|&&l| l > model.num_regimes()) {
        return Err(Error::ParamDomain(format!(
            "regime label {bad} exceeds the model's {} regimes",
            model.num_regimes()
        )));
    }
    let eval = SeriesEval::new(model, x)?;
    Ok(complete_loglik_eval(&eval, v, model.markov_order()))
}

pub(crate) fn complete_loglik_eval(eval: &SeriesEval, v: &RegimeSequence, k: usize) -> f64 {
    let t_len = v.len();
    let head = t_len.min(k + 1);
    let mut ll = eval.joint_logdensity(head - 1, &window_pattern(v, head - 1, head));
    for t in head..t_len {
        ll += eval.cond_logdensity(t, &window_pattern(v, t, k + 1));
    }
    ll
}

/// Log-likelihood of the `s`-th segment of the partition under the model:
/// short segments (length <= k+1) as one joint density, long segments as a
/// head of `k+1` observations plus within-regime conditional terms.
pub fn segment_loglik_multivariate(
    x: &DMatrix<f64>,
    partition: &SegmentPartition,
    s: usize,
    model: &RegimeModel,
) -> Result<f64> {
    if s >= partition.num_segments() {
        return Err(Error::ParamDomain(format!("segment index {s} out of range")));
    }
    if x.nrows() != partition.seq_len() {
        return Err(Error::Shape("series length does not match partition".into()));
    }
    if partition.regime(s) > model.num_regimes() {
        return Err(Error::ParamDomain(format!(
            "segment regime {} exceeds the model's {} regimes",
            partition.regime(s),
            model.num_regimes()
        )));
    }
    let eval = SeriesEval::new(model, x)?;
    Ok(segment_loglik_multivariate_eval(&eval, partition, s, model.markov_order()))
}

pub(crate) fn segment_loglik_multivariate_eval(
    eval: &SeriesEval,
    partition: &SegmentPartition,
    s: usize,
    k: usize,
) -> f64 {
    let (start, end, g) = (partition.start(s), partition.end(s), partition.regime(s));
    let e = end - start;
    let head = e.min(k + 1);
    let head_pattern = vec![g; head];
    let mut ll = eval.joint_logdensity(start + head - 1, &head_pattern);
    let cond_pattern = vec![g; k + 1];
    for t in (start + head)..end {
        ll += eval.cond_logdensity(t, &cond_pattern);
    }
    ll
}

/// Univariate analogue for component series `x_i` (time-ordered): uses the
/// margin and Toeplitz correlation structure of variable `i` in the
/// segment's regime. The head covers `min(len, k+1)` points where `k+1` is
/// the Toeplitz dimension.
pub fn segment_loglik_univariate(
    x_i: &[f64],
    partition: &SegmentPartition,
    s: usize,
    margin: &Margin,
    corr: &ToeplitzCorr,
) -> Result<f64> {
    if s >= partition.num_segments() {
        return Err(Error::ParamDomain(format!("segment index {s} out of range")));
    }
    if x_i.len() != partition.seq_len() {
        return Err(Error::Shape("series length does not match partition".into()));
    }
    let (start, end) = (partition.start(s), partition.end(s));
    let k = corr.dim() - 1;
    let e = end - start;
    let head = e.min(k + 1);

    let z: Vec<f64> = x_i[start..end].iter().map(|&x| margin.pit_to_normal(x).value).collect();
    let jac: f64 = x_i[start..end].iter().map(|&x| margin.pit_derivative(x).ln()).sum();

    let full = MvnChol::new(&corr.to_matrix())
        .ok_or_else(|| Error::NotPositiveDefinite("univariate Toeplitz matrix".into()))?;
    let mut mvns: Vec<MvnChol> = Vec::with_capacity(k + 1);
    for w in 1..=k {
        let m = DMatrix::from_fn(w, w, |a, b| corr.acf(a.abs_diff(b)));
        mvns.push(MvnChol::new(&m).ok_or_else(|| {
            Error::NotPositiveDefinite("univariate Toeplitz matrix".into())
        })?);
    }
    mvns.push(full);
    let logdens = |zs: &[f64]| -> f64 {
        // newest-first stacking to match window conventions
        let y = DVector::from_fn(zs.len(), |j, _| zs[zs.len() - 1 - j]);
        mvns[zs.len() - 1].logpdf(&y)
    };

    let mut ll = logdens(&z[..head]) + jac;
    for t in head..e {
        ll += logdens(&z[t - k..=t]) - logdens(&z[t - k..t]);
    }
    Ok(ll)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbinfer::ChainParams;
    use crate::margins::Margin;
    use crate::mcvar::ContempCorr;
    use crate::model::tests::example_model;
    use crate::util::LN_2PI;
    use crate::window::SwitchCorr;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn gaussian_ar1_model(alpha: f64) -> RegimeModel {
        RegimeModel::new(
            vec![vec![Margin::standard_gaussian()]],
            vec![vec![vec![alpha]]],
            vec![ContempCorr::identity(1)],
            SwitchCorr::zero(1),
            ChainParams::new(vec![1.0], DMatrix::from_element(1, 1, 1.0)).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn partition_round_trip() {
        let v = RegimeSequence::new(vec![1, 1, 2, 2, 2], 2).unwrap();
        let p = partition_segments(&v);
        assert_eq!(p.switch_count(), 1);
        assert_eq!(p.start(1), 2);
        assert_eq!(p.regime(0), 1);
        assert_eq!(p.regime(1), 2);
        assert_eq!(p.reconstruct(), v);

        let c = RegimeSequence::new(vec![3; 7], 3).unwrap();
        let pc = partition_segments(&c);
        assert_eq!(pc.switch_count(), 0);
        assert_eq!(pc.reconstruct(), c);
    }

    #[test]
    fn partition_round_trip_random() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        for _ in 0..50 {
            let len = rng.random_range(1..40usize);
            let labels: Vec<usize> = (0..len).map(|_| rng.random_range(1..=3usize)).collect();
            let v = RegimeSequence::new(labels, 3).unwrap();
            assert_eq!(partition_segments(&v).reconstruct(), v);
        }
    }

    #[test]
    fn ar1_closed_form() {
        let alpha = 0.65;
        let model = gaussian_ar1_model(alpha);
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let t_len = 60;
        let mut xs = Vec::with_capacity(t_len);
        let mut prev = 0.0;
        for t in 0..t_len {
            let u: f64 = rng.random_range(1e-12..1.0);
            let e = crate::util::norm_quantile(u);
            let x = if t == 0 { e } else { alpha * prev + (1.0 - alpha * alpha).sqrt() * e };
            xs.push(x);
            prev = x;
        }
        let x = DMatrix::from_fn(t_len, 1, |t, _| xs[t]);
        let v = RegimeSequence::new(vec![1; t_len], 1).unwrap();
        let got = complete_loglik(&x, &v, &model).unwrap();

        // textbook stationary AR(1) likelihood with unit marginal variance
        let innov = 1.0 - alpha * alpha;
        let mut want = -0.5 * (LN_2PI + xs[0] * xs[0]);
        for t in 1..t_len {
            let r = xs[t] - alpha * xs[t - 1];
            want += -0.5 * (LN_2PI + innov.ln() + r * r / innov);
        }
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
    }

    #[test]
    fn single_window_series_is_one_joint_term() {
        let model = example_model(); // k = 3
        let t_len = 4;
        let x = DMatrix::from_fn(t_len, 2, |t, i| 0.1 * (t as f64) - 0.2 * (i as f64));
        let v = RegimeSequence::new(vec![1, 1, 1, 2], 2).unwrap();
        let ll = complete_loglik(&x, &v, &model).unwrap();
        let w = crate::window::RegimeWindow::from_time_order(v.as_slice()).unwrap();
        let joint = crate::window::obs_window_logdensity(&x, &w, &model).unwrap();
        assert!((ll - joint.log_density).abs() < 1e-12);
    }

    #[test]
    fn telescoping_chain_rule() {
        // joint of a long window equals head + sum of conditionals
        let model = example_model();
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let t_len = 50;
        let x = DMatrix::from_fn(t_len, 2, |_, _| rng.random_range(-1.5..1.5));
        let labels: Vec<usize> =
            (0..t_len).map(|t| if t % 17 < 9 { 1 } else { 2 }).collect();
        let v = RegimeSequence::new(labels, 2).unwrap();
        let ll = complete_loglik(&x, &v, &model).unwrap();

        // independent accumulation through window densities only
        let k = model.markov_order();
        let mut acc = 0.0;
        for t in 0..t_len {
            let w = (t + 1).min(k + 1);
            let win = crate::window::RegimeWindow::from_time_order(
                &v.as_slice()[t + 1 - w..=t],
            )
            .unwrap();
            let xs = x.view((t + 1 - w, 0), (w, 2)).into_owned();
            let joint = crate::window::obs_window_logdensity(&xs, &win, &model)
                .unwrap()
                .log_density;
            if w == 1 {
                acc += joint;
            } else {
                let win_old = crate::window::RegimeWindow::from_time_order(
                    &v.as_slice()[t + 1 - w..t],
                )
                .unwrap();
                let xs_old = x.view((t + 1 - w, 0), (w - 1, 2)).into_owned();
                let old = crate::window::obs_window_logdensity(&xs_old, &win_old, &model)
                    .unwrap()
                    .log_density;
                acc += joint - old;
            }
        }
        assert!((ll - acc).abs() < 1e-8, "{ll} vs {acc}");
    }

    #[test]
    fn independence_decomposition_with_zero_switch() {
        let mut model = example_model();
        model.set_switch_corr(SwitchCorr::zero(2)).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let t_len = 40;
        let x = DMatrix::from_fn(t_len, 2, |_, _| rng.random_range(-1.5..1.5));
        let labels: Vec<usize> = (0..t_len).map(|t| if (t / 7) % 2 == 0 { 1 } else { 2 }).collect();
        let v = RegimeSequence::new(labels, 2).unwrap();
        let p = partition_segments(&v);
        let total = complete_loglik(&x, &v, &model).unwrap();
        let sum: f64 = (0..p.num_segments())
            .map(|s| segment_loglik_multivariate(&x, &p, s, &model).unwrap())
            .sum();
        assert!((total - sum).abs() < 1e-10, "{total} vs {sum}");
    }

    #[test]
    fn long_segment_branch_consistency() {
        // a segment of length k+2 split as head + one conditional equals the
        // joint density over the whole segment
        let model = example_model();
        let k = model.markov_order();
        let t_len = k + 2;
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        let x = DMatrix::from_fn(t_len, 2, |_, _| rng.random_range(-1.0..1.0));
        let v = RegimeSequence::new(vec![1; t_len], 2).unwrap();
        let p = partition_segments(&v);
        let long_branch = segment_loglik_multivariate(&x, &p, 0, &model).unwrap();
        let w = crate::window::RegimeWindow::from_time_order(v.as_slice()).unwrap();
        let joint = crate::window::obs_window_logdensity(&x, &w, &model).unwrap().log_density;
        assert!((long_branch - joint).abs() < 1e-10);
    }

    #[test]
    fn univariate_matches_multivariate_d1() {
        let alpha = 0.4;
        let model = gaussian_ar1_model(alpha);
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        let t_len = 30;
        let xs: Vec<f64> = (0..t_len).map(|_| rng.random_range(-2.0..2.0)).collect();
        let x = DMatrix::from_fn(t_len, 1, |t, _| xs[t]);
        let v = RegimeSequence::new(vec![1; t_len], 1).unwrap();
        let p = partition_segments(&v);
        let multi = segment_loglik_multivariate(&x, &p, 0, &model).unwrap();
        let uni = segment_loglik_univariate(
            &xs,
            &p,
            0,
            &Margin::standard_gaussian(),
            &model.univariate_corr(1, 0, model.markov_order()).unwrap(),
        )
        .unwrap();
        assert!((multi - uni).abs() < 1e-12);
    }

    #[test]
    fn univariate_iid_reduction() {
        // zero pacf and standard normal margin: segment density is iid normal
        let xs = [0.3, -0.7, 1.1, 0.2, -0.5];
        let v = RegimeSequence::new(vec![1; 5], 1).unwrap();
        let p = partition_segments(&v);
        let corr = ToeplitzCorr::identity(2);
        let ll = segment_loglik_univariate(&xs, &p, 0, &Margin::standard_gaussian(), &corr)
            .unwrap();
        let want: f64 = xs.iter().map(|&x| -0.5 * (LN_2PI + x * x)).sum();
        assert!((ll - want).abs() < 1e-12);
    }

    #[test]
    fn short_segment_is_contemporaneous_density() {
        let model = example_model();
        let x = DMatrix::from_row_slice(2, 2, &[0.4, -0.1, 0.9, 0.6]);
        let v = RegimeSequence::new(vec![1, 2], 2).unwrap();
        let p = partition_segments(&v);
        let s0 = segment_loglik_multivariate(&x, &p, 0, &model).unwrap();
        // one observation in regime 1: bivariate Gaussian with contemp corr
        let w = crate::window::RegimeWindow::from_newest_first(vec![1]).unwrap();
        let x0 = x.view((0, 0), (1, 2)).into_owned();
        let want = crate::window::obs_window_logdensity(&x0, &w, &model).unwrap().log_density;
        assert!((s0 - want).abs() < 1e-12);
    }
}
