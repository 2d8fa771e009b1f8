//! Box-constrained Levenberg-Marquardt for small nonlinear least-squares problems.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub max_iter: usize,
    /// Stop when the projected gradient norm |J^T r| falls below this. The
    /// default is small because price residuals are O(1e-2) and wing knots
    /// have tiny sensitivities.
    pub grad_tol: f64,
    /// Stop when an attempted step is shorter than this.
    pub step_tol: f64,
    /// Stop when the linearized model predicts a relative objective decrease
    /// below this for the attempted step.
    pub ftol: f64,
    /// Consecutive rejected steps before giving up.
    pub max_rejections: usize,
    /// Forward-difference step relative to max(|x|, 0.1).
    pub fd_rel_step: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            max_iter: 100,
            grad_tol: 1e-18,
            step_tol: 1e-10,
            ftol: 1e-10,
            max_rejections: 10,
            fd_rel_step: 1e-7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Gradient,
    Step,
    Reduction,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmSolution {
    pub x: Vec<f64>,
    pub residuals: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub stop: StopReason,
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// Forward-difference Jacobian; columns are evaluated in parallel but each one
/// depends only on its own perturbation, so the result matches a serial run.
fn jacobian<F>(f: &F, x: &[f64], r: &[f64], lower: &[f64], upper: &[f64], rel: f64) -> DMatrix<f64>
where
    F: Fn(&[f64]) -> Vec<f64> + Sync,
{
    let cols: Vec<Vec<f64>> = (0..x.len())
        .into_par_iter()
        .map(|j| {
            let mut h = rel * x[j].abs().max(0.1);
            if x[j] + h > upper[j] {
                h = -h;
            }
            let mut xp = x.to_vec();
            xp[j] = (x[j] + h).max(lower[j]);
            let h = xp[j] - x[j];
            let rp = f(&xp);
            rp.iter().zip(r).map(|(a, b)| (a - b) / h).collect()
        })
        .collect();
    DMatrix::from_fn(r.len(), x.len(), |i, j| cols[j][i])
}

/// Minimises |f(x)|^2 over lower <= x <= upper.
///
/// Gauss-Newton steps on the variables not pinned at an active bound, with
/// Marquardt damping raised after each rejected step and relaxed after each
/// accepted one.
pub fn minimize<F>(f: F, x0: &[f64], lower: &[f64], upper: &[f64], cfg: &OptimizerConfig) -> Result<LmSolution>
where
    F: Fn(&[f64]) -> Vec<f64> + Sync,
{
    let n = x0.len();
    let mut x: Vec<f64> = x0.iter().zip(lower.iter().zip(upper)).map(|(v, (l, u))| v.clamp(*l, *u)).collect();
    let mut r = f(&x);
    let mut obj = sum_sq(&r);
    let mut mu = 0.0;
    let mut rejections = 0;
    let mut iterations = 0;

    loop {
        if iterations >= cfg.max_iter {
            return Ok(LmSolution {
                x,
                residuals: r,
                objective: obj,
                iterations,
                stop: StopReason::MaxIterations,
            });
        }
        iterations += 1;
        let jac = jacobian(&f, &x, &r, lower, upper, cfg.fd_rel_step);
        let rv = DVector::from_column_slice(&r);
        let grad = jac.transpose() * &rv;
        let free: Vec<usize> = (0..n)
            .filter(|&j| !((x[j] <= lower[j] && grad[j] > 0.0) || (x[j] >= upper[j] && grad[j] < 0.0)))
            .collect();
        let pg: f64 = free.iter().map(|&j| grad[j] * grad[j]).sum::<f64>().sqrt();
        if pg < cfg.grad_tol || free.is_empty() {
            return Ok(LmSolution {
                x,
                residuals: r,
                objective: obj,
                iterations,
                stop: StopReason::Gradient,
            });
        }
        let jtj = jac.transpose() * &jac;
        let m = free.len();
        let diag_max = free.iter().map(|&j| jtj[(j, j)]).fold(0.0, f64::max);
        let diag_max = diag_max.max(f64::MIN_POSITIVE);
        // Damping scale floor: keeps steps in nearly insensitive directions
        // bounded once damping is active.
        let scale_floor = 1e-6 * diag_max;
        let floor = 1e-12 * diag_max;

        loop {
            let mut a = DMatrix::from_fn(m, m, |p, q| jtj[(free[p], free[q])]);
            for p in 0..m {
                let d = a[(p, p)].max(scale_floor);
                a[(p, p)] += mu * d + floor;
            }
            let b = DVector::from_fn(m, |p, _| -grad[free[p]]);
            let delta = match a.cholesky() {
                Some(ch) => ch.solve(&b),
                None => {
                    mu = if mu == 0.0 { 1e-6 } else { mu * 10.0 };
                    continue;
                }
            };
            let mut x_new = x.clone();
            for (p, &j) in free.iter().enumerate() {
                x_new[j] = (x[j] + delta[p]).clamp(lower[j], upper[j]);
            }
            let step = x_new.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            if step < cfg.step_tol {
                return Ok(LmSolution {
                    x,
                    residuals: r,
                    objective: obj,
                    iterations,
                    stop: StopReason::Step,
                });
            }
            let dx = DVector::from_fn(n, |j, _| x_new[j] - x[j]);
            let predicted = obj - (&jac * dx + &rv).norm_squared();
            // Clipping at the bounds can make the projected step ascend even
            // in the linear model; such steps count as rejected.
            if predicted > 0.0 && predicted <= cfg.ftol * obj {
                return Ok(LmSolution {
                    x,
                    residuals: r,
                    objective: obj,
                    iterations,
                    stop: StopReason::Reduction,
                });
            }
            let (r_new, obj_new) = if predicted > 0.0 {
                let r_new = f(&x_new);
                let obj_new = sum_sq(&r_new);
                (r_new, obj_new)
            } else {
                (Vec::new(), f64::INFINITY)
            };
            if obj_new < obj {
                x = x_new;
                r = r_new;
                obj = obj_new;
                mu = if mu < 1e-9 { 0.0 } else { mu / 10.0 };
                rejections = 0;
                break;
            }
            rejections += 1;
            if rejections >= cfg.max_rejections {
                return Err(Error::Stagnation {
                    best_sigma: x,
                    best_objective: obj,
                    iterations,
                });
            }
            mu = if mu == 0.0 { 1e-4 } else { mu * 10.0 };
        }
    }
}
