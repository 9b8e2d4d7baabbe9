//! Cross-module properties of the window construction and likelihood.

use mcrs::fbinfer::ChainParams;
use mcrs::likelihood::{complete_loglik, RegimeSequence};
use mcrs::margins::Margin;
use mcrs::mcvar::ContempCorr;
use mcrs::model::RegimeModel;
use mcrs::window::{RegimeWindow, SwitchCorr};
use nalgebra::DMatrix;

fn bivariate_reference_model() -> RegimeModel {
    RegimeModel::new(
        vec![
            vec![Margin::standard_gaussian(), Margin::standard_gaussian()],
            vec![Margin::standard_gaussian(), Margin::standard_gaussian()],
        ],
        vec![
            vec![vec![0.8, 0.0], vec![0.6, 0.5]],
            vec![vec![0.7, 0.0], vec![0.4, 0.8]],
        ],
        vec![
            ContempCorr::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.7, 0.7, 1.0])).unwrap(),
            ContempCorr::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 1.0])).unwrap(),
        ],
        SwitchCorr::new(vec![0.25, 0.35]).unwrap(),
        ChainParams::new(
            vec![0.5, 0.5],
            DMatrix::from_row_slice(2, 2, &[0.95, 0.05, 0.02, 0.98]),
        )
        .unwrap(),
    )
    .unwrap()
}

#[test]
fn switch_covariance_propagates_into_previous_run() {
    // with a switch at the newest point, cov(new, older-by-l-plus-one)
    // equals P cov(previous, older-by-l-plus-one) within the previous run
    let model = bivariate_reference_model();
    let w = model
        .window_corr(&RegimeWindow::from_newest_first(vec![2, 1, 1, 1]).unwrap())
        .unwrap();
    let m = w.matrix();
    let rho = [0.25, 0.35];
    for l in 1..=2usize {
        // block (0, l+1) vs P * block (1, l+1)
        for i in 0..2 {
            for j in 0..2 {
                let lhs = m[(i, (l + 1) * 2 + j)];
                let rhs = rho[i] * m[(2 + i, (l + 1) * 2 + j)];
                assert!((lhs - rhs).abs() < 1e-12, "l={l} ({i},{j}): {lhs} vs {rhs}");
            }
        }
    }
}

#[test]
fn subset_window_equals_submatrix_across_switch() {
    let model = bivariate_reference_model();
    let window = RegimeWindow::from_newest_first(vec![2, 2, 1, 1]).unwrap();
    let full = model.window_corr(&window).unwrap();

    // univariate sub-model of variable 0
    let sub = RegimeModel::new(
        vec![vec![Margin::standard_gaussian()], vec![Margin::standard_gaussian()]],
        vec![vec![vec![0.8, 0.0]], vec![vec![0.7, 0.0]]],
        vec![ContempCorr::identity(1), ContempCorr::identity(1)],
        SwitchCorr::new(vec![0.25]).unwrap(),
        model.chain().clone(),
    )
    .unwrap();
    let sub_w = sub.window_corr(&window).unwrap();
    for l1 in 0..4 {
        for l2 in 0..4 {
            let a = full.matrix()[(l1 * 2, l2 * 2)];
            let b = sub_w.matrix()[(l1, l2)];
            assert!((a - b).abs() < 1e-10, "({l1},{l2}): {a} vs {b}");
        }
    }
}

#[test]
fn tiny_joint_density_integrates_to_one() {
    // T = 2, d = 1, two regimes with a switch between the two observations:
    // the exponentiated complete likelihood is a bivariate density
    let model = RegimeModel::new(
        vec![vec![Margin::standard_gaussian()], vec![Margin::Gaussian { mean: 0.4, sd: 1.3 }]],
        vec![vec![vec![0.5]], vec![vec![-0.3]]],
        vec![ContempCorr::identity(1), ContempCorr::identity(1)],
        SwitchCorr::new(vec![0.45]).unwrap(),
        ChainParams::new(
            vec![0.5, 0.5],
            DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.1, 0.9]),
        )
        .unwrap(),
    )
    .unwrap();
    let v = RegimeSequence::new(vec![1, 2], 2).unwrap();

    // composite Simpson on [-12, 12]^2
    let n = 240usize; // intervals per axis, even
    let (lo, hi) = (-12.0, 12.0);
    let h = (hi - lo) / n as f64;
    let weight = |i: usize| -> f64 {
        if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        }
    };
    let mut total = 0.0;
    for i in 0..=n {
        let x1 = lo + i as f64 * h;
        for j in 0..=n {
            let x2 = lo + j as f64 * h;
            let x = DMatrix::from_column_slice(2, 1, &[x1, x2]);
            let ll = complete_loglik(&x, &v, &model).unwrap();
            total += weight(i) * weight(j) * ll.exp();
        }
    }
    total *= (h / 3.0) * (h / 3.0);
    assert!((total - 1.0).abs() < 1e-4, "integral {total}");
}

#[test]
fn longer_windows_extend_consistently() {
    // the leading blocks of a longer within-regime window reproduce the
    // shorter one exactly
    let model = bivariate_reference_model();
    let short = model.regime_corr(1, 4).unwrap();
    let long = model.regime_corr(1, 7).unwrap();
    assert!((long.leading(4) - short.matrix()).amax() < 1e-12);
}
