//! Limited-memory BFGS with Armijo backtracking.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iters: usize,
    /// Stop when the largest gradient entry is at most this.
    pub grad_tol: f64,
    pub armijo_c1: f64,
    pub backtrack: f64,
    pub max_backtracks: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions {
            memory: 8,
            max_iters: 200,
            grad_tol: 1e-8,
            armijo_c1: 1e-4,
            backtrack: 0.5,
            max_backtracks: 40,
        }
    }
}

impl LbfgsOptions {
    pub fn validate(&self) -> Result<()> {
        if self.memory == 0 {
            return Err(Error::config("lbfgs.memory must be positive"));
        }
        if !(self.grad_tol > 0.0) {
            return Err(Error::config("lbfgs.grad_tol must be positive"));
        }
        if !(self.armijo_c1 > 0.0 && self.armijo_c1 < 1.0) {
            return Err(Error::config("lbfgs.armijo_c1 must lie in (0, 1)"));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(Error::config("lbfgs.backtrack must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm_inf: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective value at the start and after each accepted step.
    pub history: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Minimizes `objective`, which returns `(value, gradient)`.
pub fn lbfgs_minimize(
    mut objective: impl FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    x0: &[f64],
    opts: &LbfgsOptions,
) -> Result<LbfgsResult> {
    opts.validate()?;
    let mut x = x0.to_vec();
    let (mut fx, mut g) = objective(&x)?;
    Error::check_dim("objective gradient", x.len(), g.len())?;
    if !fx.is_finite() {
        return Err(Error::numerical("objective is not finite at the starting point"));
    }
    let mut history = vec![fx];
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut iterations = 0;
    while iterations < opts.max_iters {
        if norm_inf(&g) <= opts.grad_tol {
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
            || 1.0 / norm_inf(&g).max(1.0),
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
            d = g.iter().map(|v| -v / norm_inf(&g).max(1.0)).collect();
            slope = dot(&g, &d);
        }

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_backtracks {
            let xn: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + t * di).collect();
            let (fnew, gnew) = objective(&xn)?;
            if fnew.is_finite() && fnew <= fx + opts.armijo_c1 * t * slope {
                accepted = Some((xn, fnew, gnew));
                break;
            }
            t *= opts.backtrack;
        }
        iterations += 1;
        let Some((xn, fnew, gnew)) = accepted else {
            return Ok(LbfgsResult {
                grad_norm_inf: norm_inf(&g),
                x,
                value: fx,
                iterations,
                converged: false,
                history,
            });
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gnew.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-16 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() && sy > 0.0 {
            if hist.len() == opts.memory {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }
        history.push(fnew);
        let stalled = fnew == fx && xn == x;
        x = xn;
        fx = fnew;
        g = gnew;
        if stalled {
            break;
        }
    }
    let gn = norm_inf(&g);
    Ok(LbfgsResult {
        x,
        value: fx,
        grad_norm_inf: gn,
        iterations,
        converged: gn <= opts.grad_tol,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn quadratic_bowl() {
        let a = [1.0, -2.0, 3.0, 0.5, -0.25];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let x0: Vec<f64> = (0..5).map(|_| rng.random_range(-5.0..5.0)).collect();
        let obj = |x: &[f64]| {
            let r: Vec<f64> = x.iter().zip(&a).map(|(x, a)| x - a).collect();
            Ok((0.5 * dot(&r, &r), r))
        };
        let res = lbfgs_minimize(obj, &x0, &LbfgsOptions::default()).unwrap();
        assert!(res.converged);
        assert!(res.iterations <= 10, "{}", res.iterations);
        for (x, a) in res.x.iter().zip(&a) {
            assert!((x - a).abs() < 1e-8);
        }
    }

    #[test]
    fn rosenbrock() {
        let obj = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
            Ok((f, g))
        };
        let opts = LbfgsOptions { max_iters: 500, grad_tol: 1e-10, ..Default::default() };
        let res = lbfgs_minimize(obj, &[-1.2, 1.0], &opts).unwrap();
        assert!(res.converged, "{res:?}");
        assert!((res.x[0] - 1.0).abs() < 1e-5 && (res.x[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn already_optimal() {
        let obj = |x: &[f64]| Ok((x[0] * x[0], vec![2.0 * x[0]]));
        let res = lbfgs_minimize(obj, &[0.0], &LbfgsOptions::default()).unwrap();
        assert!(res.converged);
        assert!(res.iterations <= 1);
        assert_eq!(res.x, vec![0.0]);
    }

    #[test]
    fn accepted_values_never_increase() {
        let res = lbfgs_minimize(
            |x: &[f64]| {
                let f = x[0].powi(4) + (x[1] - 1.0).powi(2) + x[0] * x[1];
                Ok((f, vec![4.0 * x[0].powi(3) + x[1], 2.0 * (x[1] - 1.0) + x[0]]))
            },
            &[2.0, -3.0],
            &LbfgsOptions::default(),
        )
        .unwrap();
        assert!(res.converged);
        assert!(res.history.windows(2).all(|w| w[1] <= w[0]));
    }
}
