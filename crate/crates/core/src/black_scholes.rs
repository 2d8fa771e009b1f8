//! Black-Scholes call pricing, vega and implied volatility inversion.

use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Lower and upper ends of the implied-volatility search bracket.
pub const IV_BRACKET: (f64, f64) = (1e-6, 5.0);
const IV_MAX_ITER: usize = 200;
const IV_PRICE_TOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BsInputs {
    pub spot: f64,
    pub strike: f64,
    pub maturity: f64,
    pub rate: f64,
    pub dividend: f64,
    pub vol: f64,
}

impl BsInputs {
    pub fn new(spot: f64, strike: f64, maturity: f64, rate: f64, dividend: f64, vol: f64) -> Self {
        BsInputs {
            spot,
            strike,
            maturity,
            rate,
            dividend,
            vol,
        }
    }

    fn check(&self) {
        debug_assert!(self.spot > 0.0 && self.strike > 0.0 && self.maturity > 0.0);
        debug_assert!(self.vol >= 0.0, "negative vol {}", self.vol);
    }

    fn with_vol(self, vol: f64) -> Self {
        BsInputs { vol, ..self }
    }
}

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Discounted spot and discounted strike.
fn discounted(i: &BsInputs) -> (f64, f64) {
    (
        i.spot * (-i.dividend * i.maturity).exp(),
        i.strike * (-i.rate * i.maturity).exp(),
    )
}

/// No-arbitrage band (intrinsic, spot e^{-dT}) for a European call.
pub fn call_bounds(spot: f64, strike: f64, maturity: f64, rate: f64, dividend: f64) -> (f64, f64) {
    let (s, k) = discounted(&BsInputs::new(spot, strike, maturity, rate, dividend, 0.0));
    ((s - k).max(0.0), s)
}

pub fn call_price(i: &BsInputs) -> f64 {
    i.check();
    let (s, k) = discounted(i);
    let sd = i.vol * i.maturity.sqrt();
    if sd <= 0.0 {
        return (s - k).max(0.0);
    }
    let d1 = (s / k).ln() / sd + 0.5 * sd;
    let d2 = d1 - sd;
    // Out-of-the-money side first keeps the small time value accurate.
    if s < k {
        (s * norm_cdf(d1) - k * norm_cdf(d2)).max(0.0)
    } else {
        let put = k * norm_cdf(-d2) - s * norm_cdf(-d1);
        (s - k) + put.max(0.0)
    }
}

pub fn vega(i: &BsInputs) -> f64 {
    i.check();
    let (s, k) = discounted(i);
    let sqrt_t = i.maturity.sqrt();
    let sd = i.vol * sqrt_t;
    if sd <= 0.0 {
        return 0.0;
    }
    let d1 = (s / k).ln() / sd + 0.5 * sd;
    s * norm_pdf(d1) * sqrt_t
}

/// Black-Scholes delta and gamma of a call with respect to spot.
pub fn call_delta_gamma(i: &BsInputs) -> (f64, f64) {
    i.check();
    let sd = i.vol * i.maturity.sqrt();
    let qdisc = (-i.dividend * i.maturity).exp();
    let (s, k) = discounted(i);
    let d1 = (s / k).ln() / sd + 0.5 * sd;
    (qdisc * norm_cdf(d1), qdisc * norm_pdf(d1) / (i.spot * sd))
}

/// Implied volatility of a call price by safeguarded Newton iteration with a
/// bisection fallback on [`IV_BRACKET`].
pub fn implied_vol(price: f64, spot: f64, strike: f64, maturity: f64, rate: f64, dividend: f64) -> Result<f64> {
    if !(spot > 0.0 && strike > 0.0 && maturity > 0.0) {
        return Err(Error::Domain(format!(
            "invalid inputs spot={spot} strike={strike} maturity={maturity}"
        )));
    }
    let (lower, upper) = call_bounds(spot, strike, maturity, rate, dividend);
    if !(price > lower && price < upper) {
        return Err(Error::Domain(format!(
            "call price {price} outside the open no-arbitrage band ({lower}, {upper}) at K={strike}, T={maturity}"
        )));
    }
    let base = BsInputs::new(spot, strike, maturity, rate, dividend, 0.0);
    let (mut lo, mut hi) = IV_BRACKET;
    let f = |v: f64| call_price(&base.with_vol(v)) - price;
    if f(hi) < 0.0 {
        return Err(Error::Domain(format!(
            "call price {price} implies a volatility above {hi} at K={strike}, T={maturity}"
        )));
    }
    if f(lo) > 0.0 {
        return Err(Error::Domain(format!(
            "call price {price} implies a volatility below {lo} at K={strike}, T={maturity}"
        )));
    }

    // Brenner-Subrahmanyam on the time value, clipped into the bracket.
    let (s_disc, _) = discounted(&base);
    let guess = (2.0 * std::f64::consts::PI / maturity).sqrt() * (price - lower).max(price * 1e-3) / s_disc;
    let mut vol = guess.clamp(0.01, 3.0);

    for _ in 0..IV_MAX_ITER {
        let diff = f(vol);
        if diff.abs() <= IV_PRICE_TOL * price.max(1e-300) || diff == 0.0 {
            return Ok(vol);
        }
        if diff > 0.0 {
            hi = vol;
        } else {
            lo = vol;
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            return Ok(0.5 * (lo + hi));
        }
        let v = vega(&base.with_vol(vol));
        let newton = vol - diff / v;
        vol = if v > 0.0 && newton > lo && newton < hi && newton.is_finite() {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Err(Error::Convergence {
        iterations: IV_MAX_ITER,
        message: format!("implied vol for price {price} at K={strike}, T={maturity}"),
    })
}
