//! Browser demo bindings: simulate a two-regime bivariate model, infer run
//! probabilities and dated regimes for the simulated path, and explore
//! window correlation matrices across regime switches.
//!
//! Parameters cross the boundary as JSON strings; numeric arrays come back
//! as `Float64Array`-compatible vectors.

use mcrs::estimate;
use mcrs::fbinfer::{self, ChainParams, UpdateConfig};
use mcrs::margins::{Margin, SkewTParams};
use mcrs::mcvar::ContempCorr;
use mcrs::model::RegimeModel;
use mcrs::simulate;
use mcrs::window::{RegimeWindow, SwitchCorr};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

/// Adjustable parameters of the demo model: two regimes, two variables,
/// first-order serial dependence.
#[derive(Deserialize)]
struct DemoParams {
    /// Location shift of variable 1 in regime 2.
    location_shift: f64,
    /// Lag-1 partial autocorrelations per regime (applied to both variables).
    alpha1: f64,
    alpha2: f64,
    /// Contemporaneous correlations per regime.
    contemp1: f64,
    contemp2: f64,
    /// Switch correlation applied to both variables.
    switch_rho: f64,
    /// Diagonal of the transition matrix.
    stay1: f64,
    stay2: f64,
}

fn build_model(p: &DemoParams) -> Result<RegimeModel, String> {
    let st = |loc: f64, scale: f64| -> Result<Margin, String> {
        Ok(Margin::SkewT(
            SkewTParams::new(loc, scale, 4.0, 8.0).map_err(|e| e.to_string())?,
        ))
    };
    let margins = vec![
        vec![st(0.0, 1.0)?, st(0.5, 1.5)?],
        vec![st(p.location_shift, 1.0)?, st(0.5, 1.5)?],
    ];
    let pacf = vec![
        vec![vec![p.alpha1], vec![p.alpha1]],
        vec![vec![p.alpha2], vec![p.alpha2]],
    ];
    let contemp = |r: f64| {
        ContempCorr::new(DMatrix::from_row_slice(2, 2, &[1.0, r, r, 1.0]))
            .map_err(|e| e.to_string())
    };
    let chain = ChainParams::new(
        vec![0.5, 0.5],
        DMatrix::from_row_slice(
            2,
            2,
            &[p.stay1, 1.0 - p.stay1, 1.0 - p.stay2, p.stay2],
        ),
    )
    .map_err(|e| e.to_string())?;
    RegimeModel::new(
        margins,
        pacf,
        vec![contemp(p.contemp1)?, contemp(p.contemp2)?],
        SwitchCorr::new(vec![p.switch_rho, p.switch_rho]).map_err(|e| e.to_string())?,
        chain,
    )
    .map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct SimulationOut {
    x1: Vec<f64>,
    x2: Vec<f64>,
    regimes: Vec<usize>,
    /// Smoothed probability of regime 1 at each time.
    prob_regime1: Vec<f64>,
    dated: Vec<usize>,
    agreement: f64,
    marginal_loglik: f64,
}

/// Simulates a path from the demo model, then runs smoothing and regime
/// dating on it with the same model. Returns a JSON document.
#[wasm_bindgen]
pub fn simulate_and_infer(
    params_json: &str,
    length: usize,
    seed: u64,
    tau: usize,
    nu: usize,
    xi: f64,
) -> Result<String, JsValue> {
    let params: DemoParams =
        serde_json::from_str(params_json).map_err(|e| JsValue::from_str(&e.to_string()))?;
    let model = build_model(&params).map_err(|e| JsValue::from_str(&e))?;
    let sim = simulate::sample_series(&model, length.max(8), seed)
        .map_err(|e| JsValue::from_str(&e.to_string()))?;
    let tau = tau.min(model.markov_order());
    let probs = fbinfer::run_prob(&sim.observations, &model, tau)
        .map_err(|e| JsValue::from_str(&e.to_string()))?;
    let cfg = UpdateConfig::new(tau, nu.max(1), xi.clamp(0.05, 0.95))
        .map_err(|e| JsValue::from_str(&e.to_string()))?;
    let dated = fbinfer::date_regimes(&probs, &cfg);
    let ll = fbinfer::marginal_loglik(&sim.observations, &model)
        .map_err(|e| JsValue::from_str(&e.to_string()))?;
    let t_len = sim.observations.nrows();
    let out = SimulationOut {
        x1: (0..t_len).map(|t| sim.observations[(t, 0)]).collect(),
        x2: (0..t_len).map(|t| sim.observations[(t, 1)]).collect(),
        regimes: sim.regimes.as_slice().to_vec(),
        prob_regime1: (0..t_len).map(|t| probs.probs[(t, 0)]).collect(),
        dated: dated.as_slice().to_vec(),
        agreement: dated.agreement(&sim.regimes),
        marginal_loglik: ll,
    };
    serde_json::to_string(&out).map_err(|e| JsValue::from_str(&e.to_string()))
}

#[derive(Serialize)]
struct WindowOut {
    dim: usize,
    values: Vec<f64>,
    labels: Vec<usize>,
    feasible: bool,
}

/// Window correlation matrix for a label pattern such as "2,1,1,1"
/// (newest first). Returns a JSON document with the row-major matrix.
#[wasm_bindgen]
pub fn window_correlation(params_json: &str, pattern: &str) -> Result<String, JsValue> {
    let params: DemoParams =
        serde_json::from_str(params_json).map_err(|e| JsValue::from_str(&e.to_string()))?;
    let model = build_model(&params).map_err(|e| JsValue::from_str(&e))?;
    let labels: Vec<usize> = pattern
        .split(',')
        .map(|c| c.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| JsValue::from_str("pattern must be comma-separated regime ids"))?;
    if labels.is_empty() || labels.len() > 8 || labels.iter().any(|&g| g == 0 || g > 2) {
        return Err(JsValue::from_str("pattern needs 1..=8 labels from {1,2}"));
    }
    let window = RegimeWindow::from_newest_first(labels.clone())
        .map_err(|e| JsValue::from_str(&e.to_string()))?;
    let out = match model.window_corr(&window) {
        Ok(w) => WindowOut {
            dim: w.matrix().nrows(),
            values: w.matrix().iter().cloned().collect(), // column-major, symmetric
            labels,
            feasible: true,
        },
        Err(_) => WindowOut { dim: 0, values: Vec::new(), labels, feasible: false },
    };
    serde_json::to_string(&out).map_err(|e| JsValue::from_str(&e.to_string()))
}

/// Skew-t density curve on a grid, for the margin explorer.
#[wasm_bindgen]
pub fn margin_density(
    location: f64,
    scale: f64,
    left_tailweight: f64,
    right_tailweight: f64,
    x_min: f64,
    x_max: f64,
    points: usize,
) -> Result<Vec<f64>, JsValue> {
    let p = SkewTParams::new(location, scale, left_tailweight, right_tailweight)
        .map_err(|e| JsValue::from_str(&e.to_string()))?;
    let n = points.clamp(2, 4096);
    Ok((0..n)
        .map(|i| {
            let x = x_min + (x_max - x_min) * i as f64 / (n - 1) as f64;
            mcrs::margins::skewt_logpdf(x, &p).exp()
        })
        .collect())
}

/// Dependence-parameter count of the correlation structure, for display.
#[wasm_bindgen]
pub fn dependence_param_count(d: usize, g: usize, k: usize) -> usize {
    estimate::param_count(d, g, k)
}
