//! Sticky-strike delta and gamma profiles by recalibrating across spot levels.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dupire::{write_csv, ArbitrageReport, CalibConfig};
use crate::error::{Error, Result};
use crate::market::MarketSurface;
use crate::pipeline::{calibrate_with, smooth_surface, Pipeline, PipelineConfig};
use crate::pricing::{price_asian_mc, AsianSpec, McConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Instrument {
    European { strike: f64, maturity: f64 },
    Asian(AsianSpec),
}

impl Instrument {
    pub fn maturity(&self) -> f64 {
        match self {
            Instrument::European { maturity, .. } => *maturity,
            Instrument::Asian(a) => a.maturity,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreeksProfile {
    pub spots: Vec<f64>,
    pub value: Vec<f64>,
    pub delta: Vec<f64>,
    pub gamma: Vec<f64>,
}

/// `lo, lo + step, ...` up to `hi` inclusive (within a rounding tolerance).
pub fn spot_grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| lo + step * i as f64).collect()
}

fn uniform_spacing(spots: &[f64]) -> Result<f64> {
    if spots.len() < 3 {
        return Err(Error::Validation(format!("spot grid needs at least 3 points, got {}", spots.len())));
    }
    let h = (spots[spots.len() - 1] - spots[0]) / (spots.len() - 1) as f64;
    let uniform = spots
        .windows(2)
        .all(|w| ((w[1] - w[0]) - h).abs() <= 1e-9 * h.abs().max(1.0));
    if !(h > 0.0) || !uniform {
        return Err(Error::Validation("spot grid must be increasing and uniformly spaced".into()));
    }
    Ok(h)
}

/// Fixes the grid edge and node count at the value required for the
/// smallest spot, so every spot level is priced on the same k grid.
fn common_grid(market: &MarketSurface, spots: &[f64], config: &CalibConfig) -> CalibConfig {
    let s_min = spots.iter().copied().fold(f64::INFINITY, f64::min);
    let env = crate::market::MarketEnv {
        spot: s_min,
        ..market.env
    };
    let max_k = market
        .slices
        .iter()
        .map(|s| s.quotes[s.quotes.len() - 1].strike / env.forward(s.maturity))
        .fold(f64::NEG_INFINITY, f64::max);
    let (hi, nodes) = config.grid.resolve(max_k);
    let mut cfg = config.clone();
    cfg.grid.k_hi = Some(hi);
    cfg.grid.nodes = nodes;
    cfg
}

/// Value at one spot level together with the no-arbitrage diagnostics of the
/// model it was priced on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub spot: f64,
    pub value: f64,
    pub arbitrage: ArbitrageReport,
    pub min_sigma: f64,
}

/// Instrument value at every spot under the sticky-strike convention: the
/// quotes keep their implied volatilities at fixed strikes while the spot
/// moves, and the chosen pipeline is recalibrated at each level. Stage-1
/// smoothing works in strike space, so it runs once. Asian prices use the same
/// seed at every spot (common random numbers).
pub fn profile_points(
    market: &MarketSurface,
    instrument: &Instrument,
    spots: &[f64],
    pipeline: Pipeline,
    config: &PipelineConfig,
    mc: &McConfig,
) -> Result<Vec<ProfilePoint>> {
    uniform_spacing(spots)?;
    let smoothed = match pipeline {
        Pipeline::Direct => None,
        Pipeline::Smoothed => Some(smooth_surface(market, &config.smoother)?),
    };
    let calib = common_grid(market, spots, &config.calibration);
    spots
        .par_iter()
        .map(|&spot| {
            let wrap = |e: Error| Error::Profile {
                spot,
                source: Box::new(e),
            };
            let bumped = market.with_spot(spot).map_err(wrap)?;
            let model = calibrate_with(&bumped, smoothed.as_deref(), &calib).map_err(wrap)?;
            let value = match instrument {
                Instrument::European { strike, maturity } => model.price_european(*strike, *maturity),
                Instrument::Asian(spec) => price_asian_mc(&model.lv, spec, &model.env, mc).map(|r| r.price),
            }
            .map_err(wrap)?;
            Ok(ProfilePoint {
                spot,
                value,
                arbitrage: model.prices.arbitrage_report(),
                min_sigma: model.lv.min_sigma(),
            })
        })
        .collect()
}

/// Values only; see [`profile_points`].
pub fn value_profile(
    market: &MarketSurface,
    instrument: &Instrument,
    spots: &[f64],
    pipeline: Pipeline,
    config: &PipelineConfig,
    mc: &McConfig,
) -> Result<Vec<f64>> {
    let points = profile_points(market, instrument, spots, pipeline, config, mc)?;
    Ok(points.into_iter().map(|p| p.value).collect())
}

/// Central differences inside, second-order one-sided stencils at the ends
/// (first-order gamma at the ends of a 3-point grid).
pub fn delta_gamma(values: &[f64], h: f64) -> (Vec<f64>, Vec<f64>) {
    let n = values.len();
    assert!(n >= 3, "need at least 3 values");
    let v = values;
    let mut delta = vec![0.0; n];
    let mut gamma = vec![0.0; n];
    for i in 1..n - 1 {
        delta[i] = (v[i + 1] - v[i - 1]) / (2.0 * h);
        gamma[i] = (v[i + 1] - 2.0 * v[i] + v[i - 1]) / (h * h);
    }
    delta[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h);
    delta[n - 1] = (3.0 * v[n - 1] - 4.0 * v[n - 2] + v[n - 3]) / (2.0 * h);
    if n >= 4 {
        gamma[0] = (2.0 * v[0] - 5.0 * v[1] + 4.0 * v[2] - v[3]) / (h * h);
        gamma[n - 1] = (2.0 * v[n - 1] - 5.0 * v[n - 2] + 4.0 * v[n - 3] - v[n - 4]) / (h * h);
    } else {
        gamma[0] = gamma[1];
        gamma[n - 1] = gamma[1];
    }
    (delta, gamma)
}

pub fn profile_from_values(spots: &[f64], value: Vec<f64>) -> Result<GreeksProfile> {
    let h = uniform_spacing(spots)?;
    if value.len() != spots.len() {
        return Err(Error::Validation("one value per spot is required".into()));
    }
    let (delta, gamma) = delta_gamma(&value, h);
    Ok(GreeksProfile {
        spots: spots.to_vec(),
        value,
        delta,
        gamma,
    })
}

pub fn greeks_profile(
    market: &MarketSurface,
    instrument: &Instrument,
    spots: &[f64],
    pipeline: Pipeline,
    config: &PipelineConfig,
    mc: &McConfig,
) -> Result<GreeksProfile> {
    let value = value_profile(market, instrument, spots, pipeline, config, mc)?;
    profile_from_values(spots, value)
}

pub fn total_variation(xs: &[f64]) -> f64 {
    xs.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityMetric {
    pub tv_ratio_delta: f64,
    pub tv_ratio_gamma: f64,
}

/// Total variation of each Greek in `a` divided by that in `b`.
pub fn stability_metric(a: &GreeksProfile, b: &GreeksProfile) -> Result<StabilityMetric> {
    if a.spots != b.spots {
        return Err(Error::Validation("profiles are on different spot grids".into()));
    }
    Ok(StabilityMetric {
        tv_ratio_delta: total_variation(&a.delta) / total_variation(&b.delta),
        tv_ratio_gamma: total_variation(&a.gamma) / total_variation(&b.gamma),
    })
}

impl GreeksProfile {
    /// CSV `spot,value,delta,gamma`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let rows = (0..self.spots.len()).map(|i| vec![self.spots[i], self.value[i], self.delta[i], self.gamma[i]]);
        write_csv(path.as_ref(), &["spot", "value", "delta", "gamma"], rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::black_scholes::{call_delta_gamma, call_price, BsInputs};

    #[test]
    fn quadratic_values_are_differenced_exactly() {
        let spots = spot_grid(0.5, 1.5, 0.1);
        let v: Vec<f64> = spots.iter().map(|s| s * s).collect();
        let p = profile_from_values(&spots, v).unwrap();
        for (s, (d, g)) in spots.iter().zip(p.delta.iter().zip(&p.gamma)) {
            assert!((d - 2.0 * s).abs() < 1e-10);
            assert!((g - 2.0).abs() < 1e-9);
        }
        let (d, g) = delta_gamma(&[3.0; 5], 0.1);
        assert!(d.iter().chain(&g).all(|&x| x == 0.0));
    }

    #[test]
    fn black_scholes_gamma_is_recovered() {
        let h = 0.01;
        let spots = spot_grid(0.8, 1.2, h);
        let v: Vec<f64> = spots
            .iter()
            .map(|&s| call_price(&BsInputs::new(s, 1.0, 1.0, 0.0, 0.0, 0.2)))
            .collect();
        let (delta, gamma) = delta_gamma(&v, h);
        for i in 1..spots.len() - 1 {
            let (d, g) = call_delta_gamma(&BsInputs::new(spots[i], 1.0, 1.0, 0.0, 0.0, 0.2));
            assert!((gamma[i] - g).abs() < 1e-3);
            assert!((delta[i] - d).abs() < 1e-3);
        }
    }

    #[test]
    fn stability_ratios() {
        let spots = spot_grid(0.5, 1.5, 0.1);
        let v: Vec<f64> = spots.iter().map(|s| s.powi(3)).collect();
        let a = profile_from_values(&spots, v).unwrap();
        let r = stability_metric(&a, &a).unwrap();
        assert_eq!((r.tv_ratio_delta, r.tv_ratio_gamma), (1.0, 1.0));
        let mut b = a.clone();
        for (i, g) in b.gamma.iter_mut().enumerate() {
            *g += if i % 2 == 0 { 0.05 } else { -0.05 };
        }
        assert!(stability_metric(&a, &b).unwrap().tv_ratio_gamma < 1.0);
        let mut c = a.clone();
        c.spots[0] = 0.4;
        assert!(stability_metric(&a, &c).is_err());
    }

    #[test]
    fn grids_need_three_uniform_points() {
        assert!(profile_from_values(&[1.0], vec![1.0]).is_err());
        assert!(profile_from_values(&[1.0, 1.1, 1.3], vec![1.0; 3]).is_err());
        assert_eq!(spot_grid(0.5, 1.5, 0.02).len(), 51);
        assert_eq!(spot_grid(0.8, 1.2, 0.02).len(), 21);
    }
}
