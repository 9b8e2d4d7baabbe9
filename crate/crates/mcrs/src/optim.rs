//! Deterministic local minimizers: BFGS with central-difference gradients and
//! a Nelder-Mead fallback. Objectives may return `f64::INFINITY` to encode
//! hard infeasibility; line searches simply back off.

/// Options shared by the minimizers.
#[derive(Clone, Copy, Debug)]
pub struct OptimOptions {
    /// Relative improvement below which iteration stops.
    pub rel_tol: f64,
    pub max_iters: usize,
    /// Central-difference step scale.
    pub fd_step: f64,
}

impl Default for OptimOptions {
    fn default() -> Self {
        OptimOptions { rel_tol: 1e-6, max_iters: 500, fd_step: 1e-6 }
    }
}

#[derive(Clone, Debug)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iters: usize,
    pub converged: bool,
}

fn gradient(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], fd: f64) -> Vec<f64> {
    let n = x.len();
    let mut g = vec![0.0; n];
    let mut xp = x.to_vec();
    for i in 0..n {
        let h = fd * x[i].abs().max(1.0);
        xp[i] = x[i] + h;
        let fp = f(&xp);
        xp[i] = x[i] - h;
        let fm = f(&xp);
        xp[i] = x[i];
        g[i] = if fp.is_finite() && fm.is_finite() {
            (fp - fm) / (2.0 * h)
        } else if fp.is_finite() {
            // one-sided at an infeasibility edge
            (fp - f(x)) / h
        } else if fm.is_finite() {
            (f(x) - fm) / h
        } else {
            0.0
        };
    }
    g
}

/// BFGS with backtracking Armijo line search.
pub fn minimize_bfgs(
    f: &mut dyn FnMut(&[f64]) -> f64,
    x0: &[f64],
    opts: OptimOptions,
) -> OptimResult {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut fx = f(&x);
    if n == 0 {
        return OptimResult { x, value: fx, iters: 0, converged: true };
    }
    if !fx.is_finite() {
        return OptimResult { x, value: fx, iters: 0, converged: false };
    }
    let mut g = gradient(f, &x, opts.fd_step);
    // inverse Hessian approximation, identity start
    let mut h = vec![vec![0.0; n]; n];
    for (i, row) in h.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let mut converged = false;
    let mut iters = 0;
    for it in 0..opts.max_iters {
        iters = it + 1;
        // direction = -H g
        let mut dir = vec![0.0; n];
        for i in 0..n {
            dir[i] = -h[i].iter().zip(&g).map(|(a, b)| a * b).sum::<f64>();
        }
        let slope: f64 = dir.iter().zip(&g).map(|(a, b)| a * b).sum();
        if slope >= 0.0 {
            // reset to steepest descent
            for i in 0..n {
                for j in 0..n {
                    h[i][j] = if i == j { 1.0 } else { 0.0 };
                }
                dir[i] = -g[i];
            }
        }
        let slope: f64 = dir.iter().zip(&g).map(|(a, b)| a * b).sum();
        if slope.abs() < 1e-300 {
            converged = true;
            break;
        }

        // backtracking line search
        let mut step = 1.0;
        let mut xn = x.clone();
        let mut fn_ = f64::INFINITY;
        let mut ok = false;
        for _ in 0..60 {
            for i in 0..n {
                xn[i] = x[i] + step * dir[i];
            }
            fn_ = f(&xn);
            if fn_.is_finite() && fn_ <= fx + 1e-4 * step * slope {
                ok = true;
                break;
            }
            step *= 0.5;
        }
        if !ok {
            // no admissible descent along this direction
            converged = true;
            break;
        }

        let gn = gradient(f, &xn, opts.fd_step);
        let s: Vec<f64> = (0..n).map(|i| xn[i] - x[i]).collect();
        let y: Vec<f64> = (0..n).map(|i| gn[i] - g[i]).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        if sy > 1e-12 {
            // BFGS inverse update: H <- (I - s yᵀ/sy) H (I - y sᵀ/sy) + s sᵀ/sy
            let hy: Vec<f64> = (0..n)
                .map(|i| h[i].iter().zip(&y).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
            for i in 0..n {
                for j in 0..n {
                    h[i][j] += (sy + yhy) * s[i] * s[j] / (sy * sy)
                        - (hy[i] * s[j] + s[i] * hy[j]) / sy;
                }
            }
        }

        let improvement = (fx - fn_).abs();
        let stop = improvement <= opts.rel_tol * (fx.abs().max(1.0));
        x = xn;
        fx = fn_;
        g = gn;
        if stop {
            converged = true;
            break;
        }
    }
    OptimResult { x, value: fx, iters, converged }
}

/// Nelder-Mead simplex; robust fallback when gradients are unreliable.
pub fn minimize_nelder_mead(
    f: &mut dyn FnMut(&[f64]) -> f64,
    x0: &[f64],
    opts: OptimOptions,
) -> OptimResult {
    let n = x0.len();
    if n == 0 {
        let v = f(x0);
        return OptimResult { x: x0.to_vec(), value: v, iters: 0, converged: true };
    }
    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut p = x0.to_vec();
        let step = 0.1 * p[i].abs().max(0.25);
        p[i] += step;
        simplex.push(p);
    }
    let mut values: Vec<f64> = simplex.iter().map(|p| f(p)).collect();
    let mut iters = 0;
    let mut converged = false;
    for it in 0..opts.max_iters * 4 {
        iters = it + 1;
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(std::cmp::Ordering::Equal));
        let best = order[0];
        let worst = order[n];
        let second_worst = order[n - 1];
        let spread = (values[worst] - values[best]).abs();
        if spread <= opts.rel_tol * values[best].abs().max(1.0) && values[worst].is_finite() {
            converged = true;
            break;
        }
        // centroid excluding worst
        let mut cen = vec![0.0; n];
        for (idx, p) in simplex.iter().enumerate() {
            if idx != worst {
                for i in 0..n {
                    cen[i] += p[i] / n as f64;
                }
            }
        }
        let refl: Vec<f64> = (0..n).map(|i| cen[i] + (cen[i] - simplex[worst][i])).collect();
        let f_refl = f(&refl);
        if f_refl < values[best] {
            let exp: Vec<f64> = (0..n).map(|i| cen[i] + 2.0 * (cen[i] - simplex[worst][i])).collect();
            let f_exp = f(&exp);
            if f_exp < f_refl {
                simplex[worst] = exp;
                values[worst] = f_exp;
            } else {
                simplex[worst] = refl;
                values[worst] = f_refl;
            }
        } else if f_refl < values[second_worst] {
            simplex[worst] = refl;
            values[worst] = f_refl;
        } else {
            let con: Vec<f64> = (0..n).map(|i| cen[i] + 0.5 * (simplex[worst][i] - cen[i])).collect();
            let f_con = f(&con);
            if f_con < values[worst] {
                simplex[worst] = con;
                values[worst] = f_con;
            } else {
                // shrink toward best
                let bestp = simplex[best].clone();
                for (idx, p) in simplex.iter_mut().enumerate() {
                    if idx != best {
                        for i in 0..n {
                            p[i] = bestp[i] + 0.5 * (p[i] - bestp[i]);
                        }
                    }
                }
                for idx in 0..=n {
                    if idx != best {
                        values[idx] = f(&simplex[idx]);
                    }
                }
            }
        }
    }
    let mut bi = 0;
    for i in 1..=n {
        if values[i] < values[bi] {
            bi = i;
        }
    }
    OptimResult { x: simplex[bi].clone(), value: values[bi], iters, converged }
}

/// BFGS first; if it stalls without converging, polish with Nelder-Mead.
pub fn minimize(f: &mut dyn FnMut(&[f64]) -> f64, x0: &[f64], opts: OptimOptions) -> OptimResult {
    let r = minimize_bfgs(f, x0, opts);
    if r.converged {
        return r;
    }
    let nm = minimize_nelder_mead(f, &r.x, opts);
    if nm.value <= r.value {
        nm
    } else {
        r
    }
}
