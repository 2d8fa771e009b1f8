//! Synthetic quote generators: raw-SVI smiles with additive Gaussian IV noise
//! and a W-shaped short-dated smile.
//!
//! Noise is drawn from `ChaCha8Rng::seed_from_u64(seed)` through
//! `rand_distr::Normal`, so a seed fixes the stream on every platform.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{MarketEnv, Quote, QuoteSlice};

/// Raw-SVI parameters: w(k) = a + b (rho (k - m) + sqrt((k - m)^2 + sigma^2)).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SviParams {
    pub a: f64,
    pub b: f64,
    pub rho: f64,
    pub m: f64,
    pub sigma: f64,
}

impl Default for SviParams {
    /// The one-year smile used by the SVI experiments.
    fn default() -> Self {
        SviParams {
            a: 0.030358,
            b: 0.0503815,
            rho: -0.1,
            m: 0.3,
            sigma: 0.048922,
        }
    }
}

impl SviParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.b >= 0.0
            && self.rho.abs() < 1.0
            && self.sigma > 0.0
            && self.a + self.b * self.sigma * (1.0 - self.rho * self.rho).sqrt() >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Validation(format!("invalid SVI parameters {self:?}")))
        }
    }

    pub fn total_variance(&self, k: f64) -> f64 {
        let x = k - self.m;
        self.a + self.b * (self.rho * x + (x * x + self.sigma * self.sigma).sqrt())
    }
}

pub fn svi_iv(params: &SviParams, k: f64, maturity: f64) -> Result<f64> {
    if !(maturity > 0.0) {
        return Err(Error::Domain(format!("maturity must be > 0, got {maturity}")));
    }
    let w = params.total_variance(k);
    if !(w > 0.0) {
        return Err(Error::Domain(format!("non-positive SVI total variance {w} at k={k}")));
    }
    Ok((w / maturity).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub mean: f64,
    pub stddev: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn gaussian(stddev: f64, seed: u64) -> Self {
        NoiseSpec {
            mean: 0.0,
            stddev,
            seed,
        }
    }

    /// `n` i.i.d. draws from the seeded stream.
    pub fn draws(&self, n: usize) -> Result<Vec<f64>> {
        let dist = Normal::new(self.mean, self.stddev)
            .map_err(|e| Error::Validation(format!("noise spec {self:?}: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        Ok((0..n).map(|_| dist.sample(&mut rng)).collect())
    }
}

/// Uniform grid of `count` points on `[lo, hi]`.
pub fn uniform_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => vec![],
        1 => vec![lo],
        _ => (0..count)
            .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
            .collect(),
    }
}

/// Quotes sampled from an SVI smile at log-moneyness ln(K / F(0,T)), with
/// optional additive IV noise. Volumes are 1 and bid/ask are absent.
pub fn make_svi_slice(
    params: &SviParams,
    strikes: &[f64],
    maturity: f64,
    env: &MarketEnv,
    noise: Option<&NoiseSpec>,
) -> Result<QuoteSlice> {
    params.validate()?;
    if strikes.iter().any(|&k| !(k > 0.0)) || strikes.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Validation("strikes must be positive and increasing".into()));
    }
    let fwd = env.forward(maturity);
    let eps = match noise {
        Some(n) => n.draws(strikes.len())?,
        None => vec![0.0; strikes.len()],
    };
    let mut quotes = Vec::with_capacity(strikes.len());
    for (&k, e) in strikes.iter().zip(eps) {
        let iv = svi_iv(params, (k / fwd).ln(), maturity)? + e;
        if !(iv > 0.0) {
            return Err(Error::Generation(format!(
                "noisy IV {iv} at strike {k} is not positive"
            )));
        }
        quotes.push(Quote::new(k, maturity, iv));
    }
    QuoteSlice::new(maturity, quotes)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WBump {
    /// Bump centre as a strike.
    pub center: f64,
    pub height: f64,
    pub width: f64,
}

/// Short-dated W-shaped smile: two Gaussian bumps on a quadratic smile in
/// log-moneyness, with synthetic bid/ask and an ATM-peaked volume profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WShapeConfig {
    pub maturity: f64,
    pub env: MarketEnv,
    pub strike_lo: f64,
    pub strike_hi: f64,
    pub strike_count: usize,
    pub atm_vol: f64,
    pub skew: f64,
    pub curvature: f64,
    pub bumps: [WBump; 2],
    /// Multiplies the whole noise-free curve.
    pub vol_scale: f64,
    pub spread_half: f64,
    pub noise: Option<NoiseSpec>,
    pub volume_peak: f64,
    pub volume_width: f64,
    pub volume_floor: f64,
}

impl Default for WShapeConfig {
    fn default() -> Self {
        WShapeConfig {
            maturity: 4.0 / 365.0,
            env: MarketEnv {
                spot: 1.0,
                rate: 0.0,
                dividend: 0.0,
            },
            strike_lo: 0.90,
            strike_hi: 1.10,
            strike_count: 41,
            atm_vol: 0.45,
            skew: -0.1,
            curvature: 1.0,
            bumps: [
                WBump {
                    center: 0.955,
                    height: 0.12,
                    width: 0.03,
                },
                WBump {
                    center: 1.045,
                    height: 0.11,
                    width: 0.03,
                },
            ],
            vol_scale: 1.0,
            spread_half: 0.01,
            noise: None,
            volume_peak: 2000.0,
            volume_width: 0.04,
            volume_floor: 20.0,
        }
    }
}

impl WShapeConfig {
    pub fn strikes(&self) -> Vec<f64> {
        uniform_grid(self.strike_lo, self.strike_hi, self.strike_count)
    }

    /// Noise-free IV at strike `k`.
    pub fn clean_iv(&self, k: f64) -> f64 {
        let x = (k / self.env.forward(self.maturity)).ln();
        let smile = self.atm_vol + self.skew * x + self.curvature * x * x;
        let bumps: f64 = self
            .bumps
            .iter()
            .map(|b| b.height * (-0.5 * ((k - b.center) / b.width).powi(2)).exp())
            .sum();
        self.vol_scale * (smile + bumps)
    }
}

/// Interior local maxima and minima of a sampled curve, by index.
pub fn local_extrema(values: &[f64]) -> (Vec<usize>, Vec<usize>) {
    let mut maxima = Vec::new();
    let mut minima = Vec::new();
    for i in 1..values.len().saturating_sub(1) {
        let (l, c, r) = (values[i - 1], values[i], values[i + 1]);
        if c > l && c > r {
            maxima.push(i);
        } else if c < l && c < r {
            minima.push(i);
        }
    }
    (maxima, minima)
}

/// True when the curve has exactly two interior maxima and exactly one
/// interior minimum, lying between them.
pub fn is_w_shape(values: &[f64]) -> bool {
    let (maxima, minima) = local_extrema(values);
    maxima.len() == 2 && minima.len() == 1 && maxima[0] < minima[0] && minima[0] < maxima[1]
}

/// Generates the W-shaped slice. The shape is verified on the noise-free
/// curve; optional noise is then added to the mid and bid/ask are placed at
/// mid -/+ `spread_half`.
pub fn make_w_slice(config: &WShapeConfig) -> Result<QuoteSlice> {
    config.env.validate()?;
    if config.strike_count < 3 || !(config.strike_hi > config.strike_lo) || config.strike_lo <= 0.0 {
        return Err(Error::Validation("W-shape strike grid is invalid".into()));
    }
    if config.spread_half < 0.0 {
        return Err(Error::Validation("spread_half must be >= 0".into()));
    }
    let strikes = config.strikes();
    let clean: Vec<f64> = strikes.iter().map(|&k| config.clean_iv(k)).collect();
    if !is_w_shape(&clean) {
        let (maxima, minima) = local_extrema(&clean);
        return Err(Error::Generation(format!(
            "configured smile is not W-shaped: maxima at strikes {:?}, minima at strikes {:?}",
            maxima.iter().map(|&i| strikes[i]).collect::<Vec<_>>(),
            minima.iter().map(|&i| strikes[i]).collect::<Vec<_>>()
        )));
    }
    let eps = match &config.noise {
        Some(n) => n.draws(strikes.len())?,
        None => vec![0.0; strikes.len()],
    };
    let fwd = config.env.forward(config.maturity);
    let mut quotes = Vec::with_capacity(strikes.len());
    for ((&k, &iv), e) in strikes.iter().zip(&clean).zip(eps) {
        let mid = iv + e;
        if !(mid > config.spread_half) {
            return Err(Error::Generation(format!(
                "mid IV {mid} at strike {k} does not exceed the half spread"
            )));
        }
        let z = (k / fwd).ln() / config.volume_width;
        let volume = (config.volume_floor + config.volume_peak * (-0.5 * z * z).exp()).round();
        quotes.push(Quote {
            strike: k,
            maturity: config.maturity,
            iv_mid: mid,
            iv_bid: Some(mid - config.spread_half),
            iv_ask: Some(mid + config.spread_half),
            volume,
        });
    }
    QuoteSlice::new(config.maturity, quotes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::black_scholes::{call_price, BsInputs};

    fn env() -> MarketEnv {
        MarketEnv::new(1.0, 0.0, 0.0).unwrap()
    }

    #[test]
    fn svi_minimum_variance_point() {
        let p = SviParams::default();
        let v = svi_iv(&p, 0.3, 1.0).unwrap();
        let expected = (0.030358f64 + 0.0503815 * 0.048922).sqrt();
        assert!((v - expected).abs() < 1e-15);
        assert!((v - 0.18117).abs() < 1e-5);
    }

    #[test]
    fn flat_when_slope_vanishes() {
        let p = SviParams {
            b: 0.0,
            ..SviParams::default()
        };
        for k in [-1.0, 0.0, 0.7] {
            assert!((svi_iv(&p, k, 2.0).unwrap() - (p.a / 2.0).sqrt()).abs() < 1e-15);
        }
    }

    #[test]
    fn symmetric_about_m_when_uncorrelated() {
        let p = SviParams {
            rho: 0.0,
            ..SviParams::default()
        };
        for x in [0.05, 0.3, 1.2] {
            let l = svi_iv(&p, p.m - x, 1.0).unwrap();
            let r = svi_iv(&p, p.m + x, 1.0).unwrap();
            assert_eq!(l, r);
        }
    }

    #[test]
    fn ideal_slice_reproduces_formula() {
        let p = SviParams::default();
        let strikes = uniform_grid(0.5, 1.5, 101);
        let s = make_svi_slice(&p, &strikes, 1.0, &env(), None).unwrap();
        for q in &s.quotes {
            assert_eq!(q.iv_mid, svi_iv(&p, q.strike.ln(), 1.0).unwrap());
            assert_eq!(q.volume, 1.0);
            assert!(q.iv_bid.is_none() && q.iv_ask.is_none());
        }
    }

    #[test]
    fn seeded_noise_is_deterministic_and_calibrated() {
        let p = SviParams::default();
        let strikes = uniform_grid(0.5, 1.5, 101);
        let noise = NoiseSpec::gaussian(0.001, 11);
        let a = make_svi_slice(&p, &strikes, 1.0, &env(), Some(&noise)).unwrap();
        let b = make_svi_slice(&p, &strikes, 1.0, &env(), Some(&noise)).unwrap();
        assert_eq!(a, b);
        let ideal = make_svi_slice(&p, &strikes, 1.0, &env(), None).unwrap();
        let d: Vec<f64> = a.ivs().iter().zip(ideal.ivs()).map(|(x, y)| x - y).collect();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let sd = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (d.len() - 1) as f64).sqrt();
        assert!((0.0007..=0.0013).contains(&sd), "sample sd {sd}");
    }

    #[test]
    fn ideal_svi_prices_are_convex() {
        let strikes = uniform_grid(0.5, 1.5, 101);
        let s = make_svi_slice(&SviParams::default(), &strikes, 1.0, &env(), None).unwrap();
        let prices: Vec<f64> = s
            .quotes
            .iter()
            .map(|q| call_price(&BsInputs::new(1.0, q.strike, 1.0, 0.0, 0.0, q.iv_mid)))
            .collect();
        for w in prices.windows(3) {
            assert!(w[0] - 2.0 * w[1] + w[2] >= -1e-10);
        }
    }

    #[test]
    fn default_w_slice_has_w_shape() {
        let cfg = WShapeConfig::default();
        let s = make_w_slice(&cfg).unwrap();
        assert!(is_w_shape(&s.ivs()));
        for q in &s.quotes {
            assert!((q.iv_ask.unwrap() - q.iv_mid - cfg.spread_half).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_spread_collapses_bid_ask() {
        let cfg = WShapeConfig {
            spread_half: 0.0,
            ..WShapeConfig::default()
        };
        for q in make_w_slice(&cfg).unwrap().quotes {
            assert_eq!(q.iv_bid, Some(q.iv_mid));
            assert_eq!(q.iv_ask, Some(q.iv_mid));
        }
    }

    #[test]
    fn scaling_preserves_extrema_count() {
        let base = WShapeConfig::default();
        let scaled = WShapeConfig {
            vol_scale: 1.1,
            ..base.clone()
        };
        let a = local_extrema(&make_w_slice(&base).unwrap().ivs());
        let b = local_extrema(&make_w_slice(&scaled).unwrap().ivs());
        assert_eq!(a, b);
    }

    #[test]
    fn flat_config_is_rejected() {
        let mut cfg = WShapeConfig::default();
        cfg.bumps[0].height = 0.0;
        cfg.bumps[1].height = 0.0;
        assert!(matches!(make_w_slice(&cfg), Err(Error::Generation(_))));
    }
}
