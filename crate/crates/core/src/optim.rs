//! Small optimizers: projected limited-memory BFGS for box constraints,
//! Nelder-Mead, and the cyclic Jacobi eigen-decomposition.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iter: usize,
    /// Stop once the projected-gradient max-norm is below `tol * max(1, |f|)`.
    pub tol: f64,
    pub armijo: f64,
    pub max_backtracks: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iter: 2000,
            tol: 1e-6,
            armijo: 1e-4,
            max_backtracks: 40,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LbfgsOutcome {
    #[serde(skip)]
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    /// Projected-gradient max-norm at the returned point.
    pub stationarity: f64,
    pub converged: bool,
    /// Objective after every accepted iteration.
    pub history: Vec<f64>,
}

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lo[i], hi[i]);
    }
}

/// Max-norm of the projected gradient: components pushing out of the box
/// at an active bound are dropped.
fn projected_gradient_norm(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64], metric: &[f64]) -> f64 {
    (0..x.len())
        .map(|i| {
            let gi = g[i] / metric[i];
            if (x[i] <= lo[i] && gi > 0.0) || (x[i] >= hi[i] && gi < 0.0) {
                0.0
            } else {
                gi.abs()
            }
        })
        .fold(0.0, f64::max)
}

/// Minimizes `f` over the box `[lo, hi]`. `fg` returns the value and the
/// gradient. Stationarity is measured on `g_i / metric_i`, which lets a
/// caller with quadrature weights test the function-space gradient. Variables sitting on a bound with the gradient pointing out
/// of the box are frozen for the quasi-Newton direction; the step is then
/// projected back onto the box and accepted by an Armijo test along the
/// projected path.
pub fn projected_lbfgs<F, E>(
    mut fg: F,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    metric: &[f64],
    opts: &LbfgsOptions,
) -> Result<LbfgsOutcome, E>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>), E>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, lo, hi);
    let (mut f, mut g) = fg(&x)?;
    let mut evaluations = 1;
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut free = vec![true; n];

    loop {
        let stationarity = projected_gradient_norm(&x, &g, lo, hi, metric);
        if stationarity < opts.tol * f.abs().max(1.0) {
            return Ok(LbfgsOutcome {
                x,
                f,
                iterations,
                evaluations,
                stationarity,
                converged: true,
                history,
            });
        }
        if iterations >= opts.max_iter {
            return Ok(LbfgsOutcome {
                x,
                f,
                iterations,
                evaluations,
                stationarity,
                converged: false,
                history,
            });
        }
        for i in 0..n {
            free[i] = !((x[i] <= lo[i] && g[i] > 0.0) || (x[i] >= hi[i] && g[i] < 0.0));
        }

        let mut accepted = None;
        for attempt in 0..2 {
            if attempt == 1 {
                if pairs.is_empty() {
                    break;
                }
                pairs.clear();
            }
            let mut d = two_loop(&g, &pairs, &free);
            let mut slope: f64 = (0..n).map(|i| g[i] * d[i]).sum();
            if !(slope < 0.0) {
                if pairs.is_empty() {
                    break;
                }
                pairs.clear();
                d = two_loop(&g, &pairs, &free);
                slope = (0..n).map(|i| g[i] * d[i]).sum();
                if !(slope < 0.0) {
                    break;
                }
            }
            let mut alpha = 1.0;
            for _ in 0..opts.max_backtracks {
                let mut xn: Vec<f64> = (0..n).map(|i| x[i] + alpha * d[i]).collect();
                project(&mut xn, lo, hi);
                let decrease: f64 = (0..n).map(|i| g[i] * (xn[i] - x[i])).sum();
                if decrease < 0.0 {
                    let (fnew, gnew) = fg(&xn)?;
                    evaluations += 1;
                    if fnew <= f + opts.armijo * decrease {
                        accepted = Some((xn, fnew, gnew));
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if accepted.is_some() {
                break;
            }
        }

        let Some((xn, fnew, gnew)) = accepted else {
            let stationarity = projected_gradient_norm(&x, &g, lo, hi, metric);
            return Ok(LbfgsOutcome {
                x,
                f,
                iterations,
                evaluations,
                stationarity,
                converged: false,
                history,
            });
        };
        let s: Vec<f64> = (0..n).map(|i| xn[i] - x[i]).collect();
        let y: Vec<f64> = (0..n).map(|i| gnew[i] - g[i]).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let ss: f64 = s.iter().map(|a| a * a).sum();
        let yy: f64 = y.iter().map(|a| a * a).sum();
        if sy > 1e-12 * (ss * yy).sqrt() {
            pairs.push_back((s, y, 1.0 / sy));
            if pairs.len() > opts.memory {
                pairs.pop_front();
            }
        }
        x = xn;
        f = fnew;
        g = gnew;
        iterations += 1;
        history.push(f);
    }
}

/// `-H g` on the free variables. Without curvature pairs the direction is
/// the steepest-descent one scaled to unit max-norm.
fn two_loop(g: &[f64], pairs: &VecDeque<(Vec<f64>, Vec<f64>, f64)>, free: &[bool]) -> Vec<f64> {
    let n = g.len();
    let dot = |a: &[f64], b: &[f64]| -> f64 { (0..n).filter(|&i| free[i]).map(|i| a[i] * b[i]).sum() };
    let mut q: Vec<f64> = (0..n).map(|i| if free[i] { g[i] } else { 0.0 }).collect();
    if pairs.is_empty() {
        let m = q.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if m > 0.0 {
            q.iter_mut().for_each(|v| *v = -*v / m);
        }
        return q;
    }
    let mut alphas = vec![0.0; pairs.len()];
    for (k, (s, y, _)) in pairs.iter().enumerate().rev() {
        let sy = dot(s, y);
        if sy <= 0.0 {
            continue;
        }
        let a = dot(s, &q) / sy;
        alphas[k] = a;
        for i in 0..n {
            if free[i] {
                q[i] -= a * y[i];
            }
        }
    }
    let (s, y, _) = pairs.back().unwrap();
    let sy = dot(s, y);
    let yy = dot(y, y);
    let gamma = if sy > 0.0 && yy > 0.0 { sy / yy } else { 1.0 };
    q.iter_mut().for_each(|v| *v *= gamma);
    for (k, (s, y, _)) in pairs.iter().enumerate() {
        let sy = dot(s, y);
        if sy <= 0.0 {
            continue;
        }
        let b = dot(y, &q) / sy;
        for i in 0..n {
            if free[i] {
                q[i] += (alphas[k] - b) * s[i];
            }
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NelderMeadOptions {
    pub initial_step: f64,
    pub max_evaluations: usize,
    /// Stop when the simplex spread in `f` and in `x` both fall below these.
    pub f_tol: f64,
    pub x_tol: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            initial_step: 0.05,
            max_evaluations: 2000,
            f_tol: 1e-10,
            x_tol: 1e-7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NelderMeadOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub evaluations: usize,
    pub converged: bool,
}

/// Standard Nelder-Mead (reflection 1, expansion 2, contraction 1/2,
/// shrink 1/2). Infeasible points should be mapped to `+inf` by `f`.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], opts: &NelderMeadOptions) -> NelderMeadOutcome
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let f0 = f(x0);
    simplex.push((x0.to_vec(), f0));
    let mut evaluations = 1;
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += opts.initial_step;
        let mut fx = f(&x);
        evaluations += 1;
        if !fx.is_finite() {
            x[i] = x0[i] - opts.initial_step;
            fx = f(&x);
            evaluations += 1;
        }
        simplex.push((x, fx));
    }
    let order = |s: &mut Vec<(Vec<f64>, f64)>| s.sort_by(|a, b| a.1.total_cmp(&b.1));
    let mut converged = false;
    while evaluations < opts.max_evaluations {
        order(&mut simplex);
        let best = simplex[0].1;
        let worst = simplex[n].1;
        let spread_x = simplex[1..]
            .iter()
            .flat_map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if (worst - best).abs() <= opts.f_tol * best.abs().max(1.0) && spread_x <= opts.x_tol {
            converged = true;
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|i| simplex[..n].iter().map(|(x, _)| x[i]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> { (0..n).map(|i| centroid[i] + t * (simplex[n].0[i] - centroid[i])).collect() };
        let xr = along(-1.0);
        let fr = f(&xr);
        evaluations += 1;
        if fr < simplex[0].1 {
            let xe = along(-2.0);
            let fe = f(&xe);
            evaluations += 1;
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < simplex[n].1 {
            let xc = along(-0.5);
            let fc = f(&xc);
            (xc, fc)
        } else {
            let xc = along(0.5);
            let fc = f(&xc);
            (xc, fc)
        };
        evaluations += 1;
        if fc < simplex[n].1.min(fr) {
            simplex[n] = (xc, fc);
            continue;
        }
        let x_best = simplex[0].0.clone();
        for vertex in simplex.iter_mut().skip(1) {
            let x: Vec<f64> = (0..n).map(|i| x_best[i] + 0.5 * (vertex.0[i] - x_best[i])).collect();
            let fx = f(&x);
            *vertex = (x, fx);
        }
        evaluations += n;
    }
    order(&mut simplex);
    let (x, fx) = simplex.swap_remove(0);
    NelderMeadOutcome {
        x,
        f: fx,
        evaluations,
        converged,
    }
}

/// Eigenvalues (ascending) and column eigenvectors of a symmetric matrix.
pub fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j] * m[i][j])
            .sum();
        let diag: f64 = (0..n).map(|i| m[i][i] * m[i][i]).sum();
        if off <= 1e-30 * diag.max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q] == 0.0 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| m[i][i].total_cmp(&m[j][j]));
    let values = idx.iter().map(|&i| m[i][i]).collect();
    let vectors = (0..n).map(|r| idx.iter().map(|&c| v[r][c]).collect()).collect();
    (values, vectors)
}
