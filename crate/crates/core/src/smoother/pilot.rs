//! Pilot estimation: cross-validated pilot bandwidth, high-order pilot fits and
//! pseudo-Nadaraya-Watson noise variance estimates.

use serde::{Deserialize, Serialize};

use super::fit::{local_fit, window};
use super::kernel::Kernel;
use super::SliceData;
use crate::error::{Error, Result};

/// Leverages this close to 1 mean the leave-one-out fit loses rank.
const LEVERAGE_LIMIT: f64 = 1.0 - 1e-8;

/// Geometric grid of `count` bandwidths spanning [lo, hi].
pub fn candidate_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => vec![],
        1 => vec![hi],
        _ => {
            let ratio = (hi / lo).ln() / (count - 1) as f64;
            let mut g: Vec<f64> = (0..count).map(|i| lo * (ratio * i as f64).exp()).collect();
            g[count - 1] = hi;
            g
        }
    }
}

/// Leave-one-out prediction errors sigma_i - f_{h,-i}(K_i) for every quote,
/// from the closed-form deletion identity r_i / (1 - H_ii) of a fit centred at
/// K_i.
pub fn loo_residuals(data: &SliceData, p: usize, h: f64, kernel: Kernel) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(data.len());
    for (i, &k) in data.strikes.iter().enumerate() {
        let fit = local_fit(data, k, p, h, kernel)?;
        let pos = fit
            .indices
            .iter()
            .position(|&j| j == i)
            .expect("the centre point always has positive kernel weight");
        let lev = fit.leverage[pos];
        if fit.indices.len() < p + 2 || !(lev < LEVERAGE_LIMIT) {
            return Err(Error::Rank {
                center: k,
                order: p,
                bandwidth: h,
                effective: fit.indices.len() - 1,
            });
        }
        out.push((data.ivs[i] - fit.value()) / (1.0 - lev));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSelection {
    pub bandwidth: f64,
    pub score: f64,
    /// CV score per candidate; `None` where some leave-out fit failed.
    pub scores: Vec<Option<f64>>,
}

/// Leave-one-out cross-validation of the pilot bandwidth over `grid`.
/// Near-ties go to the larger bandwidth.
pub fn pilot_bandwidth_cv(data: &SliceData, p_bar: usize, grid: &[f64], kernel: Kernel) -> Result<CvSelection> {
    if grid.is_empty() || grid.iter().any(|&h| !(h > 0.0)) {
        return Err(Error::Validation("pilot bandwidth grid must be non-empty and positive".into()));
    }
    if data.len() < p_bar + 2 {
        return Err(Error::Validation(format!(
            "pilot order {p_bar} needs at least {} quotes, got {}",
            p_bar + 2,
            data.len()
        )));
    }
    let mut scores = Vec::with_capacity(grid.len());
    let mut failures = Vec::new();
    for &h in grid {
        match loo_residuals(data, p_bar, h, kernel) {
            Ok(r) => scores.push(Some(r.iter().map(|e| e * e).sum::<f64>() / r.len() as f64)),
            Err(e) => {
                failures.push(format!("h={h:.6}: {e}"));
                scores.push(None);
            }
        }
    }
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&a, &b| grid[b].total_cmp(&grid[a]));
    let mut best: Option<(usize, f64)> = None;
    for i in order {
        if let Some(s) = scores[i] {
            let better = match best {
                None => true,
                Some((_, b)) => s < b - (1e-16 + 1e-10 * b),
            };
            if better {
                best = Some((i, s));
            }
        }
    }
    match best {
        Some((i, score)) => Ok(CvSelection {
            bandwidth: grid[i],
            score,
            scores,
        }),
        None => Err(Error::Selection(format!(
            "every pilot bandwidth failed: {}",
            failures.join("; ")
        ))),
    }
}

/// Order-`p_bar` pilot fits at every quoted strike.
#[derive(Debug, Clone)]
pub struct PilotEstimate {
    pub p_bar: usize,
    pub h_bar: f64,
    /// Pilot coefficients at each quoted strike.
    pub alpha: Vec<Vec<f64>>,
    /// sigma_i - f_pilot(K_i).
    pub residuals: Vec<f64>,
}

impl PilotEstimate {
    pub fn fit(data: &SliceData, p_bar: usize, h_bar: f64, kernel: Kernel) -> Result<Self> {
        let mut alpha = Vec::with_capacity(data.len());
        let mut residuals = Vec::with_capacity(data.len());
        for (&k, &iv) in data.strikes.iter().zip(&data.ivs) {
            let fit = local_fit(data, k, p_bar, h_bar, kernel)?;
            residuals.push(iv - fit.value());
            alpha.push(fit.alpha);
        }
        Ok(PilotEstimate {
            p_bar,
            h_bar,
            alpha,
            residuals,
        })
    }

    /// j! * alpha_j at quoted strike `i`.
    pub fn derivative(&self, i: usize, j: usize) -> f64 {
        derivative(&self.alpha[i], j)
    }
}

/// j! * alpha_j, zero beyond the fitted order.
pub fn derivative(alpha: &[f64], j: usize) -> f64 {
    let fact: f64 = (1..=j).map(|x| x as f64).product();
    alpha.get(j).map_or(0.0, |a| fact * a)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMode {
    Homoscedastic,
    #[default]
    Heteroscedastic,
}

#[derive(Debug, Clone, PartialEq)]
pub enum VarianceEstimate {
    /// Single value evaluated at the evaluation strike.
    Homoscedastic(f64),
    /// One value per quoted strike.
    Heteroscedastic(Vec<f64>),
}

impl VarianceEstimate {
    pub fn at(&self, i: usize) -> f64 {
        match self {
            VarianceEstimate::Homoscedastic(t) => *t,
            VarianceEstimate::Heteroscedastic(v) => v[i],
        }
    }
}

/// Kernel-weighted mean of squared residuals around `x`.
pub fn pseudo_nw_variance(data: &SliceData, residuals: &[f64], x: f64, h: f64, kernel: Kernel) -> Result<f64> {
    let (idx, w) = window(data, x, h, kernel);
    let mass: f64 = w.iter().sum();
    if !(mass > 0.0) {
        return Err(Error::ZeroMass { center: x, bandwidth: h });
    }
    let num: f64 = idx.iter().zip(&w).map(|(&i, wi)| wi * residuals[i] * residuals[i]).sum();
    Ok((num / mass).max(0.0))
}

pub fn estimate_variance(
    data: &SliceData,
    pilot: &PilotEstimate,
    h: f64,
    mode: VarianceMode,
    k: f64,
    kernel: Kernel,
) -> Result<VarianceEstimate> {
    match mode {
        VarianceMode::Homoscedastic => Ok(VarianceEstimate::Homoscedastic(pseudo_nw_variance(
            data,
            &pilot.residuals,
            k,
            h,
            kernel,
        )?)),
        VarianceMode::Heteroscedastic => data
            .strikes
            .iter()
            .map(|&x| pseudo_nw_variance(data, &pilot.residuals, x, h, kernel))
            .collect::<Result<Vec<_>>>()
            .map(VarianceEstimate::Heteroscedastic),
    }
}
