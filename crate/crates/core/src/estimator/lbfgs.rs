//! Limited-memory BFGS minimizer with a backtracking Armijo line search.

use std::collections::VecDeque;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsOptions {
    pub max_iter: usize,
    /// Stop when the gradient max-norm falls below this.
    pub grad_tol: f64,
    /// Stop when `|f_k - f_{k+1}| / max(|f_k|, 1)` falls below this.
    pub rel_tol: f64,
    pub memory: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self { max_iter: 500, grad_tol: 1e-5, rel_tol: 1e-9, memory: 10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Gradient,
    RelativeChange,
    MaxIterations,
    LineSearchFailed,
}

#[derive(Debug, Clone)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
    pub termination: Termination,
    /// Objective after each accepted step, starting with the initial value.
    pub trace: Vec<f64>,
}

impl LbfgsResult {
    pub fn converged(&self) -> bool {
        matches!(self.termination, Termination::Gradient | Termination::RelativeChange)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_norm(g: &[f64]) -> f64 {
    g.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Minimizes `f`, which returns the value and gradient. Non-finite values are
/// treated as infeasible and shrink the step. Returns `None` if `f(x0)` is not finite.
pub fn minimize<F>(f: F, x0: &[f64], opts: &LbfgsOptions) -> Option<LbfgsResult>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let (mut fx, mut g) = f(x0);
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mut x = x0.to_vec();
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut trace = vec![fx];
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;
    let mut fresh = false;
    while iterations < opts.max_iter {
        if max_norm(&g) < opts.grad_tol {
            termination = Termination::Gradient;
            break;
        }
        // two-loop recursion
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * dot(s, &d);
            d.iter_mut().zip(y).for_each(|(di, yi)| *di -= a * yi);
            alphas.push(a);
        }
        let gamma = hist.back().map_or_else(
            || 1.0 / max_norm(&g).max(1.0),
            |(s, y, _)| dot(s, y) / dot(y, y),
        );
        d.iter_mut().for_each(|v| *v *= gamma);
        for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &d);
            d.iter_mut().zip(s).for_each(|(di, si)| *di += (a - b) * si);
        }
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            hist.clear();
            d = g.iter().map(|v| -v / max_norm(&g).max(1.0)).collect();
            slope = dot(&g, &d);
        }
        // backtracking Armijo
        let mut step = 1.0;
        let mut accepted = None;
        while step > 1e-20 {
            let xn: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + step * di).collect();
            let (fn_, gn) = f(&xn);
            if fn_.is_finite() && gn.iter().all(|v| v.is_finite()) && fn_ <= fx + 1e-4 * step * slope {
                accepted = Some((xn, fn_, gn));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted else {
            if fresh || hist.is_empty() {
                termination = Termination::LineSearchFailed;
                break;
            }
            // retry once along steepest descent
            hist.clear();
            fresh = true;
            continue;
        };
        fresh = false;
        iterations += 1;
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            if hist.len() == opts.memory {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }
        let rel = (fx - fn_).abs() / fx.abs().max(1.0);
        x = xn;
        fx = fn_;
        g = gn;
        trace.push(fx);
        if max_norm(&g) < opts.grad_tol {
            termination = Termination::Gradient;
            break;
        }
        if rel < opts.rel_tol {
            termination = Termination::RelativeChange;
            break;
        }
    }
    Some(LbfgsResult { x, f: fx, gradient: g, iterations, termination, trace })
}
