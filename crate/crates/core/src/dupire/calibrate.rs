//! Forward march over maturities, fitting one local-volatility curve per
//! interval so that the implicit step reproduces the target call prices.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::fd::{fd_step, fd_step_nodes, sigma_on_nodes};
use super::grid::{FdGrid, GridSpec};
use super::optimize::{minimize, OptimizerConfig, StopReason};
use super::surface::{LvInterval, LvSurface, PriceGrid};
use crate::black_scholes::{call_price, BsInputs};
use crate::error::{Error, Result};
use crate::interp::{linear_flat, MonotoneCubic};
use crate::market::{MarketEnv, MarketSurface};
use crate::smoother::SmoothedSlice;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibConfig {
    pub grid: GridSpec,
    pub lv_knots: usize,
    /// Fraction of the quoted span added on each side when placing knots.
    pub knot_extension: f64,
    pub sigma_floor: f64,
    pub sigma_cap: f64,
    pub optimizer: OptimizerConfig,
    /// Weight of the squared-curvature penalty; 0 disables it.
    pub lambda: f64,
}

impl Default for CalibConfig {
    fn default() -> Self {
        CalibConfig {
            grid: GridSpec::default(),
            lv_knots: 25,
            knot_extension: 0.1,
            sigma_floor: 1e-4,
            sigma_cap: 5.0,
            optimizer: OptimizerConfig::default(),
            lambda: 0.0,
        }
    }
}

impl CalibConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.lv_knots < 2 {
            return Err(Error::Validation("lv_knots must be at least 2".into()));
        }
        if !(self.knot_extension >= 0.0) {
            return Err(Error::Validation("knot_extension must be >= 0".into()));
        }
        if !(self.sigma_floor >= 0.0 && self.sigma_cap > self.sigma_floor) {
            return Err(Error::Validation("need 0 <= sigma_floor < sigma_cap".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Validation(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.optimizer.max_iter == 0 || self.optimizer.max_rejections == 0 {
            return Err(Error::Validation("optimizer iteration limits must be positive".into()));
        }
        Ok(())
    }
}

/// Normalized target prices C~ = C e^{rT} / F at normalized strikes k = K / F.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceTargets {
    pub maturity: f64,
    pub k: Vec<f64>,
    pub c: Vec<f64>,
    /// ATM implied volatility used as the first-interval initial guess.
    pub atm_iv: f64,
}

/// Normalized undiscounted call price for an implied volatility.
pub fn normalized_call(env: &MarketEnv, strike: f64, maturity: f64, iv: f64) -> f64 {
    let price = call_price(&BsInputs::new(env.spot, strike, maturity, env.rate, env.dividend, iv));
    price / (env.discount(maturity) * env.forward(maturity))
}

fn targets_from(env: &MarketEnv, maturity: f64, strikes: &[f64], ivs: &[f64]) -> SliceTargets {
    let f = env.forward(maturity);
    let k: Vec<f64> = strikes.iter().map(|&s| s / f).collect();
    let c = strikes.iter().zip(ivs).map(|(&s, &iv)| normalized_call(env, s, maturity, iv)).collect();
    let atm = (0..k.len())
        .min_by(|&a, &b| (k[a] - 1.0).abs().total_cmp(&(k[b] - 1.0).abs()))
        .unwrap_or(0);
    SliceTargets {
        maturity,
        k,
        c,
        atm_iv: ivs[atm],
    }
}

/// Targets from the mid implied volatilities of every slice.
pub fn market_targets(market: &MarketSurface) -> Vec<SliceTargets> {
    market
        .slices
        .iter()
        .map(|s| targets_from(&market.env, s.maturity, &s.strikes(), &s.ivs()))
        .collect()
}

/// Targets from smoothed slices, which must align with the market maturities.
pub fn smoothed_to_prices(smoothed: &[SmoothedSlice], market: &MarketSurface) -> Result<Vec<SliceTargets>> {
    if smoothed.len() != market.slices.len() {
        return Err(Error::Validation(format!(
            "{} smoothed slices for {} market maturities",
            smoothed.len(),
            market.slices.len()
        )));
    }
    smoothed
        .iter()
        .zip(&market.slices)
        .map(|(s, m)| {
            if s.maturity != m.maturity {
                return Err(Error::Validation(format!(
                    "smoothed maturity {} does not match market maturity {}",
                    s.maturity, m.maturity
                )));
            }
            Ok(targets_from(&market.env, s.maturity, &s.strikes(), &s.ivs()))
        })
        .collect()
}

/// `count` uniform knots over [min_k, max_k] widened by `extension` of the
/// span on each side, kept inside the grid.
pub fn lv_knots(min_k: f64, max_k: f64, count: usize, extension: f64, grid: &FdGrid) -> Vec<f64> {
    let span = max_k - min_k;
    let lo = (min_k - extension * span).max(grid.k_lo() + grid.dk);
    let hi = (max_k + extension * span).min(grid.k_hi() - grid.dk);
    (0..count)
        .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceReport {
    pub maturity: f64,
    pub rms_price_error: f64,
    pub max_price_error: f64,
    pub objective: f64,
    pub iterations: usize,
    pub stop: StopReason,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SliceFit {
    pub knots: Vec<f64>,
    pub sigma: Vec<f64>,
    pub c_next: Vec<f64>,
    pub report: SliceReport,
}

/// Model values at the target strikes.
fn model_at(grid: &FdGrid, c: &[f64], k: &[f64]) -> Vec<f64> {
    let cubic = MonotoneCubic::new(&grid.k, c);
    k.iter().map(|&x| cubic.eval(x)).collect()
}

/// Second derivative in k at the nodes, linearly interpolated at `k`.
fn curvature_at(grid: &FdGrid, c: &[f64], k: &[f64]) -> Vec<f64> {
    let inv = 1.0 / (grid.dk * grid.dk);
    let n = c.len();
    let mut d2 = vec![0.0; n];
    for i in 1..n - 1 {
        d2[i] = (c[i - 1] - 2.0 * c[i] + c[i + 1]) * inv;
    }
    d2[0] = d2[1];
    d2[n - 1] = d2[n - 2];
    k.iter().map(|&x| linear_flat(&grid.k, &d2, x)).collect()
}

/// Fits the local volatility on one interval of length `dt` starting from
/// `c_prev`, with initial guess `sigma0` on `knots`.
pub fn calibrate_slice(
    c_prev: &[f64],
    targets: &SliceTargets,
    dt: f64,
    grid: &FdGrid,
    knots: &[f64],
    sigma0: &[f64],
    config: &CalibConfig,
) -> Result<SliceFit> {
    if !(dt > 0.0) {
        return Err(Error::Validation(format!("interval length must be positive, got {dt}")));
    }
    if let Some(&k) = targets.k.iter().find(|&&k| !(k > grid.k_lo() && k < grid.k_hi())) {
        return Err(Error::Domain(format!("target strike {k} is not interior to the grid")));
    }
    let n_t = targets.k.len();
    let sqrt_lambda = config.lambda.sqrt();
    let residuals = |sigma: &[f64]| -> Vec<f64> {
        let c = fd_step(c_prev, knots, sigma, dt, grid);
        let mut r: Vec<f64> = model_at(grid, &c, &targets.k)
            .iter()
            .zip(&targets.c)
            .map(|(m, t)| m - t)
            .collect();
        if config.lambda > 0.0 {
            r.extend(curvature_at(grid, &c, &targets.k).iter().map(|v| sqrt_lambda * v));
        }
        r
    };
    let lower = vec![config.sigma_floor; knots.len()];
    let upper = vec![config.sigma_cap; knots.len()];
    let sol = minimize(residuals, sigma0, &lower, &upper, &config.optimizer)?;
    let c_next = fd_step(c_prev, knots, &sol.x, dt, grid);
    let fit = &sol.residuals[..n_t];
    let report = SliceReport {
        maturity: targets.maturity,
        rms_price_error: (fit.iter().map(|r| r * r).sum::<f64>() / n_t as f64).sqrt(),
        max_price_error: fit.iter().fold(0.0, |m, r| m.max(r.abs())),
        objective: sol.objective,
        iterations: sol.iterations,
        stop: sol.stop,
    };
    Ok(SliceFit {
        knots: knots.to_vec(),
        sigma: sol.x,
        c_next,
        report,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub slices: Vec<SliceReport>,
}

/// Calibrated surface together with the grid and prices it was fitted on.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibratedModel {
    pub env: MarketEnv,
    pub grid: FdGrid,
    pub lv: LvSurface,
    pub prices: PriceGrid,
    pub report: CalibrationReport,
}

/// Runs the forward march over all target slices.
pub fn calibrate_targets(env: &MarketEnv, targets: &[SliceTargets], config: &CalibConfig) -> Result<CalibratedModel> {
    config.validate()?;
    if targets.is_empty() {
        return Err(Error::Validation("no maturities to calibrate".into()));
    }
    let maturities: Vec<f64> = targets.iter().map(|t| t.maturity).collect();
    let min_k = targets.iter().flat_map(|t| t.k.iter().copied()).fold(f64::INFINITY, f64::min);
    let max_k = targets.iter().flat_map(|t| t.k.iter().copied()).fold(f64::NEG_INFINITY, f64::max);
    let grid = config.grid.build(min_k, max_k, &maturities)?;

    let mut c = grid.payoff();
    let mut values = vec![c.clone()];
    let mut intervals = Vec::with_capacity(targets.len());
    let mut reports = Vec::with_capacity(targets.len());
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    for (i, tg) in targets.iter().enumerate() {
        let wrap = |e: Error| Error::Maturity {
            index: i,
            maturity: tg.maturity,
            source: Box::new(e),
        };
        let (lo, hi) = tg.k.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &k| (a.min(k), b.max(k)));
        let knots = lv_knots(lo, hi, config.lv_knots, config.knot_extension, &grid);
        let sigma0: Vec<f64> = match &prev {
            None => vec![tg.atm_iv.clamp(config.sigma_floor, config.sigma_cap); knots.len()],
            Some((pk, ps)) => knots.iter().map(|&k| linear_flat(pk, ps, k)).collect(),
        };
        let dt = grid.t[i + 1] - grid.t[i];
        let fit = calibrate_slice(&c, tg, dt, &grid, &knots, &sigma0, config).map_err(wrap)?;
        c = fit.c_next;
        values.push(c.clone());
        intervals.push(LvInterval {
            t_lo: grid.t[i],
            t_hi: grid.t[i + 1],
            knots: fit.knots.clone(),
            sigma: fit.sigma.clone(),
        });
        reports.push(fit.report);
        prev = Some((fit.knots, fit.sigma));
    }
    let lv = LvSurface::new(intervals, config.sigma_floor)?;
    let prices = PriceGrid {
        k: grid.k.clone(),
        t: grid.t.clone(),
        values,
    };
    Ok(CalibratedModel {
        env: *env,
        grid,
        lv,
        prices,
        report: CalibrationReport { slices: reports },
    })
}

/// Calibrates to the mid implied volatilities of `market`.
pub fn calibrate_surface(market: &MarketSurface, config: &CalibConfig) -> Result<CalibratedModel> {
    market.validate()?;
    calibrate_targets(&market.env, &market_targets(market), config)
}

/// Curvature-penalized baseline: as [`calibrate_surface`] with weight `lambda`.
pub fn calibrate_regularized(market: &MarketSurface, lambda: f64, config: &CalibConfig) -> Result<CalibratedModel> {
    let config = CalibConfig {
        lambda,
        ..config.clone()
    };
    calibrate_surface(market, &config)
}

impl CalibratedModel {
    pub fn horizon(&self) -> f64 {
        self.lv.horizon()
    }

    /// Normalized undiscounted price at (k, t), re-stepping from the
    /// preceding grid maturity when t falls between them.
    pub fn normalized_price(&self, k: f64, t: f64) -> Result<f64> {
        if !(t > 0.0 && t <= self.horizon()) {
            return Err(Error::Domain(format!("maturity {t} outside the calibrated range (0, {}]", self.horizon())));
        }
        if !(k > self.grid.k_lo() && k <= self.grid.k_hi()) {
            return Err(Error::Domain(format!(
                "normalized strike {k} outside the grid ({}, {}]",
                self.grid.k_lo(),
                self.grid.k_hi()
            )));
        }
        let t_nodes = &self.prices.t;
        if let Some(i) = t_nodes.iter().position(|&x| x == t) {
            return Ok(self.prices.interpolate(i, k));
        }
        let idx = self.lv.interval_index(t);
        let dt = t - t_nodes[idx];
        let iv = &self.lv.intervals[idx];
        let nodes = sigma_on_nodes(&self.grid, &iv.knots, &iv.sigma);
        let c = fd_step_nodes(self.prices.slice(idx), &nodes, dt, &self.grid, self.grid.substeps(dt));
        Ok(MonotoneCubic::new(&self.grid.k, &c).eval(k))
    }

    /// Discounted call price in currency units.
    pub fn price_european(&self, strike: f64, maturity: f64) -> Result<f64> {
        if !(strike > 0.0) {
            return Err(Error::Domain(format!("strike must be positive, got {strike}")));
        }
        let f = self.env.forward(maturity);
        let c = self.normalized_price(strike / f, maturity)?;
        Ok(self.env.discount(maturity) * f * c)
    }

    /// Second differences of each calibrated price slice divided by dk^2,
    /// as rows (t, k, d2c) over the interior nodes.
    pub fn second_differences(&self) -> Vec<(f64, f64, f64)> {
        let inv = 1.0 / (self.grid.dk * self.grid.dk);
        let mut rows = Vec::new();
        for (ti, c) in self.prices.values.iter().enumerate().skip(1) {
            for i in 1..c.len() - 1 {
                rows.push((self.prices.t[ti], self.grid.k[i], (c[i - 1] - 2.0 * c[i] + c[i + 1]) * inv));
            }
        }
        rows
    }

    /// CSV `t_lo,t_hi,k_knot,sigma`.
    pub fn write_lv_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let rows = self.lv.intervals.iter().flat_map(|iv| {
            iv.knots
                .iter()
                .zip(&iv.sigma)
                .map(move |(k, s)| vec![iv.t_lo, iv.t_hi, *k, *s])
        });
        write_csv(path.as_ref(), &["t_lo", "t_hi", "k_knot", "sigma"], rows)
    }

    /// CSV `t,k,c_norm`.
    pub fn write_price_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let rows = self.prices.t.iter().zip(&self.prices.values).flat_map(|(&t, c)| {
            self.prices.k.iter().zip(c).map(move |(&k, &v)| vec![t, k, v])
        });
        write_csv(path.as_ref(), &["t", "k", "c_norm"], rows)
    }

    /// CSV `t,k,d2c`.
    pub fn write_second_difference_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let rows = self.second_differences().into_iter().map(|(t, k, d)| vec![t, k, d]);
        write_csv(path.as_ref(), &["t", "k", "d2c"], rows)
    }
}

/// Writes numeric rows with 17 significant digits.
pub fn write_csv(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<f64>>) -> Result<()> {
    let to_err = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::other(format!("{other:?}"))),
    };
    let mut w = csv::Writer::from_path(path).map_err(to_err)?;
    w.write_record(header).map_err(to_err)?;
    for row in rows {
        w.write_record(row.iter().map(|v| format!("{v:.16e}"))).map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_market_targets(sigma: f64) -> (MarketEnv, SliceTargets) {
        let env = MarketEnv::new(1.0, 0.0, 0.0).unwrap();
        let strikes: Vec<f64> = (0..41).map(|i| 0.5 + 0.025 * i as f64).collect();
        let ivs = vec![sigma; strikes.len()];
        (env, targets_from(&env, 1.0, &strikes, &ivs))
    }

    #[test]
    fn normalized_target_examples() {
        let env = MarketEnv::new(1.0, 0.0, 0.0).unwrap();
        assert!((normalized_call(&env, 1.0, 1.0, 0.2) - 0.079_655_674_554_057_7).abs() < 1e-12);
        assert!((normalized_call(&env, 0.8, 1.0, 0.0) - 0.2).abs() < 1e-15);
        // Normalization removes the forward and discount factors.
        let env2 = MarketEnv::new(2.0, 0.03, 0.01).unwrap();
        let f = env2.forward(1.0);
        let a = normalized_call(&env2, 0.9 * f, 1.0, 0.25);
        let b = normalized_call(&env, 0.9, 1.0, 0.25);
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn inverse_crime_recovers_the_generating_volatility() {
        let (_, tg) = flat_market_targets(0.2);
        let cfg = CalibConfig::default();
        let grid = cfg.grid.build(0.5, 1.5, &[1.0]).unwrap();
        let knots = lv_knots(0.5, 1.5, cfg.lv_knots, cfg.knot_extension, &grid);
        let truth: Vec<f64> = knots.iter().map(|&k| 0.2 + 0.15 * (k - 1.0).powi(2) - 0.05 * (k - 1.0)).collect();
        let c = fd_step(&grid.payoff(), &knots, &truth, 1.0, &grid);
        let cubic = MonotoneCubic::new(&grid.k, &c);
        let k: Vec<f64> = (0..60).map(|i| 0.45 + 1.1 * i as f64 / 59.0).collect();
        let targets = SliceTargets {
            maturity: 1.0,
            c: k.iter().map(|&x| cubic.eval(x)).collect(),
            k,
            atm_iv: tg.atm_iv,
        };
        let fit = calibrate_slice(&grid.payoff(), &targets, 1.0, &grid, &knots, &vec![0.2; knots.len()], &cfg).unwrap();
        let err = fit.sigma.iter().zip(&truth).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err < 1e-6, "max knot error {err}");
    }

    #[test]
    fn flat_vol_round_trip() {
        let (env, tg) = flat_market_targets(0.2);
        let model = calibrate_targets(&env, &[tg], &CalibConfig::default()).unwrap();
        for iv in &model.lv.intervals {
            for (&k, &s) in iv.knots.iter().zip(&iv.sigma) {
                if (0.7..=1.3).contains(&k) {
                    assert!((s - 0.2).abs() < 5e-3, "sigma {s} at k={k}");
                }
            }
        }
        assert!(model.prices.arbitrage_report().passes(1e-10));
    }

    #[test]
    fn starting_at_the_answer_converges_immediately() {
        let cfg = CalibConfig::default();
        let grid = cfg.grid.build(0.5, 1.5, &[0.5]).unwrap();
        let knots = lv_knots(0.5, 1.5, cfg.lv_knots, cfg.knot_extension, &grid);
        let truth: Vec<f64> = knots.iter().map(|&k| 0.3 - 0.1 * (k - 1.0)).collect();
        let c = fd_step(&grid.payoff(), &knots, &truth, 0.5, &grid);
        let k: Vec<f64> = (0..21).map(|i| 0.5 + 0.05 * i as f64).collect();
        let targets = SliceTargets {
            maturity: 0.5,
            c: model_at(&grid, &c, &k),
            k,
            atm_iv: 0.3,
        };
        let fit = calibrate_slice(&grid.payoff(), &targets, 0.5, &grid, &knots, &truth, &cfg).unwrap();
        assert!(fit.report.iterations <= 2);
        assert!(fit.report.objective < 1e-20);
    }

    #[test]
    fn zero_lambda_matches_unregularized_bit_for_bit() {
        let (env, tg) = flat_market_targets(0.25);
        let cfg = CalibConfig::default();
        let a = calibrate_targets(&env, std::slice::from_ref(&tg), &cfg).unwrap();
        let market = MarketSurface::new(
            env,
            vec![crate::market::QuoteSlice::new(
                1.0,
                (0..41).map(|i| crate::market::Quote::new(0.5 + 0.025 * i as f64, 1.0, 0.25)).collect(),
            )
            .unwrap()],
        )
        .unwrap();
        let b = calibrate_regularized(&market, 0.0, &cfg).unwrap();
        assert_eq!(a.lv, b.lv);
        assert_eq!(a.prices, b.prices);
    }

    #[test]
    fn grid_refinement_changes_flat_recovery_little() {
        let (env, tg) = flat_market_targets(0.2);
        let coarse = calibrate_targets(&env, std::slice::from_ref(&tg), &CalibConfig::default()).unwrap();
        let fine_cfg = CalibConfig {
            grid: GridSpec {
                nodes: 801,
                ..GridSpec::default()
            },
            ..CalibConfig::default()
        };
        let fine = calibrate_targets(&env, &[tg], &fine_cfg).unwrap();
        let (a, b) = (&coarse.lv.intervals[0], &fine.lv.intervals[0]);
        for ((&k, &s1), &s2) in a.knots.iter().zip(&a.sigma).zip(&b.sigma) {
            if (0.7..=1.3).contains(&k) {
                assert!((s1 - s2).abs() < 2e-3, "k={k}: {s1} vs {s2}");
            }
        }
    }

    #[test]
    fn european_prices_between_and_on_nodes() {
        let env = MarketEnv::new(1.0, 0.0, 0.0).unwrap();
        let strikes: Vec<f64> = (0..41).map(|i| 0.5 + 0.025 * i as f64).collect();
        let ivs = vec![0.2; strikes.len()];
        let tgs = vec![
            targets_from(&env, 0.5, &strikes, &ivs),
            targets_from(&env, 1.0, &strikes, &ivs),
        ];
        let model = calibrate_targets(&env, &tgs, &CalibConfig::default()).unwrap();
        for t in [0.5, 0.75, 1.0] {
            let bs = call_price(&BsInputs::new(1.0, 1.0, t, 0.0, 0.0, 0.2));
            let p = model.price_european(1.0, t).unwrap();
            assert!((p - bs).abs() < 2e-4, "T={t}: {p} vs {bs}");
        }
        assert!(model.price_european(model.grid.k_hi(), 1.0).unwrap().abs() < 1e-8);
        assert!(model.price_european(1.0, 1.5).is_err());
        assert!(model.price_european(1.0, 0.0).is_err());
    }

    #[test]
    fn empty_maturity_list_is_rejected() {
        let env = MarketEnv::new(1.0, 0.0, 0.0).unwrap();
        assert!(calibrate_targets(&env, &[], &CalibConfig::default()).is_err());
    }
}
