//! Pricing under a calibrated local-volatility surface and fit diagnostics.
//!
//! European calls come from the calibrated price grid. Arithmetic Asian calls
//! are priced by log-Euler Monte Carlo on the same surface.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::black_scholes::{call_price, implied_vol, BsInputs};
use crate::dupire::{CalibratedModel, LvSurface};
use crate::error::{Error, Result};
use crate::market::{MarketEnv, MarketSurface};

pub fn price_european(model: &CalibratedModel, strike: f64, maturity: f64) -> Result<f64> {
    model.price_european(strike, maturity)
}

/// Black-Scholes implied volatility of the model price.
pub fn model_iv(model: &CalibratedModel, strike: f64, maturity: f64) -> Result<f64> {
    let price = model.price_european(strike, maturity)?;
    let env = &model.env;
    implied_vol(price, env.spot, strike, maturity, env.rate, env.dividend)
}

/// Default moneyness bucket edges: below 0.95, 0.95 to 1.05, above 1.05.
pub const DEFAULT_BUCKET_EDGES: [f64; 2] = [0.95, 1.05];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketError {
    /// Moneyness K / F(0, T) range, lower inclusive.
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub count: usize,
    /// Mean of |model IV - reference IV| / reference IV in percent; absent
    /// for an empty bucket.
    pub mean_abs_rel_error_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub buckets: Vec<BucketError>,
    /// Fraction of quotes with both bid and ask whose model price lies outside
    /// the bid/ask price band; absent when no quote carries a spread.
    pub fail_ratio: Option<f64>,
    pub spread_quotes: usize,
    pub max_abs_iv_error: f64,
    pub rms_iv_error: f64,
}

impl FitReport {
    pub fn bucket_errors(&self) -> Vec<Option<f64>> {
        self.buckets.iter().map(|b| b.mean_abs_rel_error_pct).collect()
    }
}

/// Compares model IVs with the mid IVs of `reference` at every quote.
/// `edges` must be increasing and split moneyness K/F into buckets.
pub fn calibration_error(model: &CalibratedModel, reference: &MarketSurface, edges: &[f64]) -> Result<FitReport> {
    if edges.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Validation("bucket edges must be strictly increasing".into()));
    }
    let env = &model.env;
    let nb = edges.len() + 1;
    let mut sums = vec![0.0; nb];
    let mut counts = vec![0usize; nb];
    let mut spread_quotes = 0;
    let mut failures = 0;
    let mut max_abs: f64 = 0.0;
    let mut sq = 0.0;
    let mut n = 0usize;
    for slice in &reference.slices {
        let t = slice.maturity;
        let f = env.forward(t);
        for q in &slice.quotes {
            let price = model.price_european(q.strike, t)?;
            let iv = implied_vol(price, env.spot, q.strike, t, env.rate, env.dividend)?;
            let err = iv - q.iv_mid;
            let b = edges.partition_point(|&e| e <= q.strike / f);
            sums[b] += err.abs() / q.iv_mid;
            counts[b] += 1;
            max_abs = max_abs.max(err.abs());
            sq += err * err;
            n += 1;
            if let (Some(bid), Some(ask)) = (q.iv_bid, q.iv_ask) {
                let quote = |v: f64| call_price(&BsInputs::new(env.spot, q.strike, t, env.rate, env.dividend, v));
                spread_quotes += 1;
                if price < quote(bid) || price > quote(ask) {
                    failures += 1;
                }
            }
        }
    }
    let buckets = (0..nb)
        .map(|b| BucketError {
            lower: if b == 0 { None } else { Some(edges[b - 1]) },
            upper: edges.get(b).copied(),
            count: counts[b],
            mean_abs_rel_error_pct: (counts[b] > 0).then(|| 100.0 * sums[b] / counts[b] as f64),
        })
        .collect();
    Ok(FitReport {
        buckets,
        fail_ratio: (spread_quotes > 0).then(|| failures as f64 / spread_quotes as f64),
        spread_quotes,
        max_abs_iv_error: max_abs,
        rms_iv_error: if n > 0 { (sq / n as f64).sqrt() } else { 0.0 },
    })
}

/// Arithmetic-average call with monitoring at i T / M, i = 1..M.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsianSpec {
    pub strike: f64,
    pub maturity: f64,
    pub monitoring: usize,
}

impl AsianSpec {
    pub fn validate(&self) -> Result<()> {
        if self.monitoring == 0 || !(self.maturity > 0.0) || !(self.strike >= 0.0) {
            return Err(Error::Validation(format!("invalid Asian spec {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McConfig {
    pub paths: usize,
    pub steps_per_year: usize,
    pub seed: u64,
    pub antithetic: bool,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            paths: 131_072,
            steps_per_year: 252,
            seed: 11,
            antithetic: true,
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.paths < 2 || (self.antithetic && self.paths % 2 != 0) {
            return Err(Error::Validation(format!(
                "need at least 2 paths, and an even count with antithetic sampling (got {})",
                self.paths
            )));
        }
        if self.steps_per_year == 0 {
            return Err(Error::Validation("steps_per_year must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McResult {
    pub price: f64,
    pub std_error: f64,
}

/// Monte Carlo price of an arithmetic Asian call.
///
/// The step count is the smallest multiple of M at or above T x steps_per_year
/// so monitoring dates sit on the grid. Path `j` (or antithetic pair `j`) draws
/// from stream `j` of a ChaCha8 generator seeded with `mc.seed`, so the result
/// does not depend on the number of workers and equal seeds give common random
/// numbers across calls.
pub fn price_asian_mc(lv: &LvSurface, spec: &AsianSpec, env: &MarketEnv, mc: &McConfig) -> Result<McResult> {
    spec.validate()?;
    mc.validate()?;
    env.validate()?;
    if spec.maturity > lv.horizon() * (1.0 + 1e-12) {
        return Err(Error::Domain(format!(
            "monitoring up to {} exceeds the calibrated horizon {}",
            spec.maturity,
            lv.horizon()
        )));
    }
    let m = spec.monitoring;
    let min_steps = (spec.maturity * mc.steps_per_year as f64).ceil().max(1.0) as usize;
    let n = min_steps.div_ceil(m) * m;
    let per_obs = n / m;
    let dt = spec.maturity / n as f64;
    let sqrt_dt = dt.sqrt();
    let drift = (env.rate - env.dividend) * dt;
    let times: Vec<f64> = (0..n).map(|j| j as f64 * dt).collect();
    let fwd: Vec<f64> = times.iter().map(|&t| env.forward(t)).collect();

    let path_payoff = |z: &[f64], sign: f64| -> f64 {
        let mut s = env.spot;
        let mut total = 0.0;
        for j in 0..n {
            let sigma = lv.sigma_bilinear(times[j], s / fwd[j]);
            s *= (drift - 0.5 * sigma * sigma * dt + sigma * sqrt_dt * sign * z[j]).exp();
            if (j + 1) % per_obs == 0 {
                total += s;
            }
        }
        (total / m as f64 - spec.strike).max(0.0)
    };

    let units = if mc.antithetic { mc.paths / 2 } else { mc.paths };
    let samples: Vec<f64> = (0..units)
        .into_par_iter()
        .map_init(
            || vec![0.0; n],
            |z, j| {
                let mut rng = ChaCha8Rng::seed_from_u64(mc.seed);
                rng.set_stream(j as u64);
                for v in z.iter_mut() {
                    *v = StandardNormal.sample(&mut rng);
                }
                if mc.antithetic {
                    0.5 * (path_payoff(z, 1.0) + path_payoff(z, -1.0))
                } else {
                    path_payoff(z, 1.0)
                }
            },
        )
        .collect();
    let disc = env.discount(spec.maturity);
    let mean = samples.iter().sum::<f64>() / units as f64;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (units - 1).max(1) as f64;
    Ok(McResult {
        price: disc * mean,
        std_error: disc * (var / units as f64).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env() -> MarketEnv {
        MarketEnv::new(1.0, 0.0, 0.0).unwrap()
    }

    fn small(paths: usize, seed: u64) -> McConfig {
        McConfig {
            paths,
            steps_per_year: 12,
            seed,
            antithetic: true,
        }
    }

    #[test]
    fn zero_volatility_is_deterministic() {
        let lv = LvSurface::flat(0.0, &[1.0], 0.0).unwrap();
        let env = MarketEnv::new(1.0, 0.05, 0.01).unwrap();
        let spec = AsianSpec {
            strike: 0.9,
            maturity: 1.0,
            monitoring: 4,
        };
        let r = price_asian_mc(&lv, &spec, &env, &small(8, 3)).unwrap();
        let mean_fwd: f64 = (1..=4).map(|i| env.forward(i as f64 * 0.25)).sum::<f64>() / 4.0;
        let expected = env.discount(1.0) * (mean_fwd - 0.9);
        assert!((r.price - expected).abs() < 1e-12, "{} vs {expected}", r.price);
        assert!(r.std_error < 1e-14);
    }

    #[test]
    fn single_monitoring_date_matches_european() {
        let lv = LvSurface::flat(0.2, &[1.0], 1e-4).unwrap();
        let spec = AsianSpec {
            strike: 1.0,
            maturity: 1.0,
            monitoring: 1,
        };
        let r = price_asian_mc(&lv, &spec, &env(), &small(40_000, 5)).unwrap();
        let bs = call_price(&BsInputs::new(1.0, 1.0, 1.0, 0.0, 0.0, 0.2));
        assert!((r.price - bs).abs() < 3.0 * r.std_error, "{} +- {} vs {bs}", r.price, r.std_error);
    }

    #[test]
    fn std_error_scales_with_inverse_root_paths() {
        let lv = LvSurface::flat(0.2, &[1.0], 1e-4).unwrap();
        let spec = AsianSpec {
            strike: 1.0,
            maturity: 1.0,
            monitoring: 12,
        };
        let a = price_asian_mc(&lv, &spec, &env(), &small(10_000, 1)).unwrap();
        let b = price_asian_mc(&lv, &spec, &env(), &small(40_000, 1)).unwrap();
        let ratio = a.std_error / b.std_error;
        assert!((ratio / 2.0 - 1.0).abs() < 0.2, "ratio {ratio}");
    }

    #[test]
    fn same_seed_is_bit_identical_and_monotone_in_strike() {
        let lv = LvSurface::flat(0.3, &[0.5, 1.0], 1e-4).unwrap();
        let mk = |strike| AsianSpec {
            strike,
            maturity: 1.0,
            monitoring: 12,
        };
        let a = price_asian_mc(&lv, &mk(1.0), &env(), &small(2_000, 9)).unwrap();
        let b = price_asian_mc(&lv, &mk(1.0), &env(), &small(2_000, 9)).unwrap();
        assert_eq!(a, b);
        let c = price_asian_mc(&lv, &mk(1.05), &env(), &small(2_000, 9)).unwrap();
        assert!(c.price <= a.price);
    }

    #[test]
    fn rejects_bad_configs_and_horizon() {
        let lv = LvSurface::flat(0.2, &[1.0], 1e-4).unwrap();
        let spec = AsianSpec {
            strike: 1.0,
            maturity: 1.5,
            monitoring: 12,
        };
        assert!(matches!(price_asian_mc(&lv, &spec, &env(), &small(100, 1)), Err(Error::Domain(_))));
        let spec = AsianSpec { maturity: 1.0, ..spec };
        assert!(price_asian_mc(&lv, &spec, &env(), &small(101, 1)).is_err());
        assert!(price_asian_mc(&lv, &AsianSpec { monitoring: 0, ..spec }, &env(), &small(100, 1)).is_err());
    }
}
