//! Limited-memory BFGS minimizer with a strong-Wolfe line search.
//!
//! The objective closure returns the value and gradient together. An optional
//! box clamp on a prefix of the coordinates keeps weights bounded when a
//! moment constraint sits on the boundary of its feasible range; convergence
//! is then judged on the projected gradient.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct LbfgsOptions {
    /// Number of curvature pairs kept.
    pub memory: usize,
    /// Convergence threshold on the infinity norm of the projected gradient.
    pub tol_grad: f64,
    pub max_iters: usize,
    pub c1: f64,
    pub c2: f64,
    pub max_line_search: usize,
    /// Clamp coordinates `0..n` to `[-cap, cap]`.
    pub clamp: Option<(usize, f64)>,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions {
            memory: 10,
            tol_grad: 1e-6,
            max_iters: 1000,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 40,
            clamp: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterRecord {
    pub iter: usize,
    pub value: f64,
    pub grad_norm: f64,
    pub step: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Converged,
    IterBudget,
    LineSearchFailed,
}

#[derive(Debug, Clone)]
pub struct LbfgsOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad: Vec<f64>,
    /// Projected gradient infinity norm at `x`.
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub stop: StopReason,
    pub records: Vec<IterRecord>,
    /// Coordinates that hit the clamp at least once.
    pub clamped: Vec<usize>,
}

fn inf_norm(xs: &[f64]) -> f64 {
    xs.iter().fold(0.0, |m, &x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn apply_clamp(x: &mut [f64], clamp: Option<(usize, f64)>, hit: &mut Vec<usize>) -> bool {
    let Some((n, cap)) = clamp else { return false };
    let mut changed = false;
    for (i, xi) in x.iter_mut().take(n).enumerate() {
        if *xi > cap {
            *xi = cap;
            changed = true;
            if !hit.contains(&i) {
                hit.push(i);
            }
        } else if *xi < -cap {
            *xi = -cap;
            changed = true;
            if !hit.contains(&i) {
                hit.push(i);
            }
        }
    }
    changed
}

fn is_blocked(x: &[f64], g: &[f64], clamp: Option<(usize, f64)>, i: usize) -> bool {
    let Some((n, cap)) = clamp else { return false };
    i < n && ((x[i] >= cap && g[i] < 0.0) || (x[i] <= -cap && g[i] > 0.0))
}

/// Gradient with the components pinned at an active bound zeroed out.
fn free_gradient(x: &[f64], g: &[f64], clamp: Option<(usize, f64)>) -> Vec<f64> {
    (0..x.len()).map(|i| if is_blocked(x, g, clamp, i) { 0.0 } else { g[i] }).collect()
}

fn projected_inf_norm(x: &[f64], g: &[f64], clamp: Option<(usize, f64)>) -> f64 {
    let mut m = 0.0f64;
    for i in 0..x.len() {
        if !is_blocked(x, g, clamp, i) {
            m = m.max(g[i].abs());
        }
    }
    m
}

/// Minimizes `f`, reporting per-iteration progress in the outcome records.
/// Errors only when the objective is non-finite at the starting point.
pub fn minimize<F>(mut f: F, x0: Vec<f64>, opts: &LbfgsOptions) -> Result<LbfgsOutcome>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let n = x0.len();
    let mut clamped_hits = Vec::new();
    let mut x = x0;
    apply_clamp(&mut x, opts.clamp, &mut clamped_hits);
    let (mut fx, mut gx) = f(&x);
    if !fx.is_finite() {
        return Err(Error::NonFinite { context: "objective at start", iter: 0, param_norm: inf_norm(&x) });
    }

    let mut history: Vec<(Vec<f64>, Vec<f64>, f64)> = Vec::new(); // (s, y, 1/(y.s))
    let mut records = Vec::new();
    let mut stop = StopReason::IterBudget;
    let mut iterations = 0;

    for iter in 1..=opts.max_iters {
        let gf = free_gradient(&x, &gx, opts.clamp);
        if inf_norm(&gf) <= opts.tol_grad {
            stop = StopReason::Converged;
            break;
        }

        // two-loop recursion, seeded with the free gradient
        let mut d: Vec<f64> = gf.iter().map(|g| -g).collect();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &d);
            for i in 0..n {
                d[i] -= a * y[i];
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = history.last() {
            let gamma = dot(s, y) / dot(y, y);
            for di in d.iter_mut() {
                *di *= gamma;
            }
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
            let b = rho * dot(y, &d);
            for i in 0..n {
                d[i] += (a - b) * s[i];
            }
        }
        // stale pairs must not push a pinned coordinate through its bound
        for i in 0..n {
            if is_blocked(&x, &gx, opts.clamp, i) {
                d[i] = 0.0;
            }
        }

        let mut dg = dot(&d, &gx);
        if dg >= 0.0 {
            history.clear();
            d = gf.iter().map(|g| -g).collect();
            dg = dot(&d, &gx);
            if dg >= 0.0 {
                // zero free gradient, caught by the tolerance check next pass
                stop = StopReason::Converged;
                break;
            }
        }

        let alpha0 = if history.is_empty() { (1.0 / inf_norm(&gf).max(1.0)).min(1.0) } else { 1.0 };
        let ls = wolfe_search(&mut f, &x, fx, &d, dg, alpha0, opts);
        let (alpha, mut x_new, mut f_new, mut g_new) = match ls {
            Some(t) => t,
            None => {
                if history.is_empty() {
                    stop = StopReason::LineSearchFailed;
                    break;
                }
                // retry once along steepest descent
                history.clear();
                let d: Vec<f64> = gf.iter().map(|g| -g).collect();
                let dg = dot(&d, &gx);
                match wolfe_search(&mut f, &x, fx, &d, dg, (1.0 / inf_norm(&gf).max(1.0)).min(1.0), opts) {
                    Some(t) => t,
                    None => {
                        stop = StopReason::LineSearchFailed;
                        break;
                    }
                }
            }
        };

        if apply_clamp(&mut x_new, opts.clamp, &mut clamped_hits) {
            let (fc, gc) = f(&x_new);
            f_new = fc;
            g_new = gc;
            history.clear();
        } else {
            let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = g_new.iter().zip(&gx).map(|(a, b)| a - b).collect();
            let sy = dot(&s, &y);
            if sy > 1e-10 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
                if history.len() == opts.memory {
                    history.remove(0);
                }
                history.push((s, y, 1.0 / sy));
            }
        }

        x = x_new;
        fx = f_new;
        gx = g_new;
        iterations = iter;
        records.push(IterRecord {
            iter,
            value: fx,
            grad_norm: projected_inf_norm(&x, &gx, opts.clamp),
            step: alpha,
        });
        if !fx.is_finite() {
            return Err(Error::NonFinite { context: "objective", iter, param_norm: inf_norm(&x) });
        }
    }

    if stop == StopReason::IterBudget && projected_inf_norm(&x, &gx, opts.clamp) <= opts.tol_grad {
        stop = StopReason::Converged;
    }
    let grad_norm = projected_inf_norm(&x, &gx, opts.clamp);
    Ok(LbfgsOutcome {
        value: fx,
        grad_norm,
        iterations,
        converged: stop == StopReason::Converged,
        stop,
        records,
        clamped: clamped_hits,
        x,
        grad: gx,
    })
}

/// Strong-Wolfe line search: bracket then zoom with quadratic interpolation.
/// Returns (step, x, f, g) or None on failure.
#[allow(clippy::too_many_arguments)]
fn wolfe_search<F>(
    f: &mut F,
    x: &[f64],
    f0: f64,
    d: &[f64],
    dg0: f64,
    alpha0: f64,
    opts: &LbfgsOptions,
) -> Option<(f64, Vec<f64>, f64, Vec<f64>)>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let n = x.len();
    let eval = |f: &mut F, alpha: f64| -> (Vec<f64>, f64, Vec<f64>, f64) {
        let xa: Vec<f64> = (0..n).map(|i| x[i] + alpha * d[i]).collect();
        let (fa, ga) = f(&xa);
        let da = dot(&ga, d);
        (xa, fa, ga, da)
    };

    let mut alpha_prev = 0.0f64;
    let mut f_prev = f0;
    let mut d_prev = dg0;
    let mut alpha = alpha0.max(1e-16);
    let mut bracket: Option<(f64, f64, f64, f64, f64, f64)> = None; // lo, f_lo, d_lo, hi, f_hi, d_hi

    for i in 0..opts.max_line_search {
        let (xa, fa, ga, da) = eval(f, alpha);
        if !fa.is_finite() || fa > f0 + opts.c1 * alpha * dg0 || (i > 0 && fa >= f_prev) {
            bracket = Some((alpha_prev, f_prev, d_prev, alpha, fa, da));
            break;
        }
        if da.abs() <= -opts.c2 * dg0 {
            return Some((alpha, xa, fa, ga));
        }
        if da >= 0.0 {
            bracket = Some((alpha, fa, da, alpha_prev, f_prev, d_prev));
            break;
        }
        alpha_prev = alpha;
        f_prev = fa;
        d_prev = da;
        alpha = (alpha * 2.0).min(1e6);
    }

    let (mut lo, mut f_lo, mut d_lo, mut hi, mut f_hi, _d_hi) = bracket?;
    for _ in 0..opts.max_line_search {
        // quadratic interpolation from the low end, safeguarded toward bisection
        let span = hi - lo;
        let denom = 2.0 * (f_hi - f_lo - d_lo * span);
        let mut trial = if denom.abs() > 1e-300 && f_hi.is_finite() {
            lo - d_lo * span * span / denom
        } else {
            lo + 0.5 * span
        };
        let (a, b) = if lo < hi { (lo, hi) } else { (hi, lo) };
        let margin = 0.1 * (b - a);
        if !(trial.is_finite() && trial > a + margin && trial < b - margin) {
            trial = lo + 0.5 * span;
        }
        if (b - a).abs() < 1e-16 * b.abs().max(1.0) {
            break;
        }
        let (xa, fa, ga, da) = eval(f, trial);
        if !fa.is_finite() || fa > f0 + opts.c1 * trial * dg0 || fa >= f_lo {
            hi = trial;
            f_hi = fa;
        } else {
            if da.abs() <= -opts.c2 * dg0 {
                return Some((trial, xa, fa, ga));
            }
            if da * span >= 0.0 {
                hi = lo;
                f_hi = f_lo;
            }
            lo = trial;
            f_lo = fa;
            d_lo = da;
        }
    }
    // fall back to the best sufficient-decrease point found
    if f_lo < f0 + opts.c1 * lo * dg0 && lo > 0.0 {
        let (xa, fa, ga, _) = eval(f, lo);
        return Some((lo, xa, fa, ga));
    }
    None
}
