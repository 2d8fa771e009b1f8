//! Calibrated local volatility and the normalized call-price grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interp::{linear_flat, MonotoneCubic};

/// Local volatility on one maturity interval (t_lo, t_hi], piecewise linear in
/// normalized strike with flat extrapolation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LvInterval {
    pub t_lo: f64,
    pub t_hi: f64,
    pub knots: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl LvInterval {
    pub fn at(&self, k: f64) -> f64 {
        linear_flat(&self.knots, &self.sigma, k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LvSurface {
    pub intervals: Vec<LvInterval>,
    pub floor: f64,
}

impl LvSurface {
    pub fn new(intervals: Vec<LvInterval>, floor: f64) -> Result<Self> {
        if intervals.is_empty() {
            return Err(Error::Validation("local volatility surface has no intervals".into()));
        }
        for (i, iv) in intervals.iter().enumerate() {
            if iv.knots.is_empty() || iv.knots.len() != iv.sigma.len() || !(iv.t_hi > iv.t_lo) {
                return Err(Error::Validation(format!("malformed local volatility interval {i}")));
            }
            if iv.sigma.iter().any(|&s| !s.is_finite() || s < floor) {
                return Err(Error::Validation(format!("interval {i} has a volatility below the floor {floor}")));
            }
            if i > 0 && intervals[i - 1].t_hi != iv.t_lo {
                return Err(Error::Validation(format!("interval {i} does not start where interval {} ends", i - 1)));
            }
        }
        Ok(LvSurface { intervals, floor })
    }

    /// Constant volatility on the given maturity grid.
    pub fn flat(sigma: f64, maturities: &[f64], floor: f64) -> Result<Self> {
        let mut t_lo = 0.0;
        let intervals = maturities
            .iter()
            .map(|&t| {
                let iv = LvInterval {
                    t_lo,
                    t_hi: t,
                    knots: vec![1.0],
                    sigma: vec![sigma],
                };
                t_lo = t;
                iv
            })
            .collect();
        LvSurface::new(intervals, floor)
    }

    pub fn horizon(&self) -> f64 {
        self.intervals[self.intervals.len() - 1].t_hi
    }

    /// Interval containing t, with t = 0 mapped to the first one; beyond the
    /// horizon the last interval is used.
    pub fn interval_index(&self, t: f64) -> usize {
        self.intervals
            .iter()
            .position(|iv| t <= iv.t_hi)
            .unwrap_or(self.intervals.len() - 1)
    }

    /// Piecewise constant in time, piecewise linear in k.
    pub fn sigma(&self, t: f64, k: f64) -> f64 {
        self.intervals[self.interval_index(t)].at(k)
    }

    /// Linear in time between interval midpoints (flat outside), linear in k.
    pub fn sigma_bilinear(&self, t: f64, k: f64) -> f64 {
        let n = self.intervals.len();
        let mid = |i: usize| 0.5 * (self.intervals[i].t_lo + self.intervals[i].t_hi);
        if n == 1 || t <= mid(0) {
            return self.intervals[0].at(k);
        }
        if t >= mid(n - 1) {
            return self.intervals[n - 1].at(k);
        }
        let mut i = 0;
        while mid(i + 1) < t {
            i += 1;
        }
        let w = (t - mid(i)) / (mid(i + 1) - mid(i));
        (1.0 - w) * self.intervals[i].at(k) + w * self.intervals[i + 1].at(k)
    }

    pub fn min_sigma(&self) -> f64 {
        self.intervals
            .iter()
            .flat_map(|iv| iv.sigma.iter().copied())
            .fold(f64::INFINITY, f64::min)
    }
}

/// Normalized undiscounted call prices C~(t, k) at each grid maturity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceGrid {
    pub k: Vec<f64>,
    pub t: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

/// Worst violations found by [`PriceGrid::arbitrage_report`]; negative values
/// are violations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArbitrageReport {
    pub min_second_difference: f64,
    pub min_calendar_difference: f64,
    pub min_lower_bound_slack: f64,
    pub min_upper_bound_slack: f64,
}

impl ArbitrageReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.min_second_difference >= -tol
            && self.min_calendar_difference >= -tol
            && self.min_lower_bound_slack >= -tol
            && self.min_upper_bound_slack >= -tol
    }
}

impl PriceGrid {
    pub fn slice(&self, i: usize) -> &[f64] {
        &self.values[i]
    }

    /// Monotone cubic interpolation of slice `i` at normalized strike `k`.
    pub fn interpolate(&self, i: usize, k: f64) -> f64 {
        MonotoneCubic::new(&self.k, &self.values[i]).eval(k)
    }

    pub fn arbitrage_report(&self) -> ArbitrageReport {
        let mut rep = ArbitrageReport {
            min_second_difference: f64::INFINITY,
            min_calendar_difference: f64::INFINITY,
            min_lower_bound_slack: f64::INFINITY,
            min_upper_bound_slack: f64::INFINITY,
        };
        for (ti, c) in self.values.iter().enumerate() {
            for w in c.windows(3) {
                rep.min_second_difference = rep.min_second_difference.min(w[0] - 2.0 * w[1] + w[2]);
            }
            for (&k, &v) in self.k.iter().zip(c) {
                rep.min_lower_bound_slack = rep.min_lower_bound_slack.min(v - (1.0 - k).max(0.0));
                rep.min_upper_bound_slack = rep.min_upper_bound_slack.min(1.0 - v);
            }
            if ti > 0 {
                for (a, b) in self.values[ti - 1].iter().zip(c) {
                    rep.min_calendar_difference = rep.min_calendar_difference.min(b - a);
                }
            }
        }
        rep
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_intervals() -> LvSurface {
        LvSurface::new(
            vec![
                LvInterval {
                    t_lo: 0.0,
                    t_hi: 1.0,
                    knots: vec![0.5, 1.5],
                    sigma: vec![0.3, 0.1],
                },
                LvInterval {
                    t_lo: 1.0,
                    t_hi: 2.0,
                    knots: vec![0.5, 1.5],
                    sigma: vec![0.5, 0.5],
                },
            ],
            1e-4,
        )
        .unwrap()
    }

    #[test]
    fn piecewise_lookup() {
        let s = two_intervals();
        assert!((s.sigma(0.0, 1.0) - 0.2).abs() < 1e-15);
        assert!((s.sigma(1.0, 0.0) - 0.3).abs() < 1e-15);
        assert!((s.sigma(1.5, 1.0) - 0.5).abs() < 1e-15);
        assert!((s.sigma(0.5, 9.0) - 0.1).abs() < 1e-15);
        // Halfway between the interval midpoints 0.5 and 1.5.
        assert!((s.sigma_bilinear(1.0, 1.0) - 0.35).abs() < 1e-15);
        assert!((s.sigma_bilinear(0.2, 1.0) - 0.2).abs() < 1e-15);
        assert_eq!(s.horizon(), 2.0);
    }

    #[test]
    fn rejects_values_below_floor_and_gaps() {
        let mut s = two_intervals();
        s.intervals[0].sigma[0] = 0.0;
        assert!(LvSurface::new(s.intervals.clone(), 1e-4).is_err());
        assert!(LvSurface::new(s.intervals, 0.0).is_ok());
        let mut s = two_intervals();
        s.intervals[1].t_lo = 1.1;
        assert!(LvSurface::new(s.intervals, 1e-4).is_err());
    }

    #[test]
    fn payoff_grid_passes_arbitrage_checks() {
        let k: Vec<f64> = (0..11).map(|i| i as f64 * 0.2).collect();
        let payoff: Vec<f64> = k.iter().map(|&x| (1.0 - x).max(0.0)).collect();
        let grid = PriceGrid {
            k,
            t: vec![0.0, 1.0],
            values: vec![payoff.clone(), payoff],
        };
        assert!(grid.arbitrage_report().passes(1e-12));
    }
}
