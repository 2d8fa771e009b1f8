//! Per-strike order/bandwidth iteration and the slice-level driver.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::acmse::{acmse, order_reports, pick_order, select_bandwidth, AcmseReport, AsymptoticInputs};
use super::density::{design_density, DesignDensity};
use super::fit::local_fit;
use super::kernel::{kernel_constants, Kernel, KernelConstants};
use super::pilot::{
    candidate_grid, derivative, estimate_variance, pilot_bandwidth_cv, pseudo_nw_variance, PilotEstimate,
    VarianceEstimate, VarianceMode,
};
use super::SliceData;
use crate::error::{Error, Result};
use crate::market::QuoteSlice;

/// Sample size entering the closed-form bandwidth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleSize {
    /// Total volume when any volume differs from one, else the quote count.
    #[default]
    Auto,
    QuoteCount,
    TotalVolume,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmootherConfig {
    pub kernel: Kernel,
    pub candidate_orders: Vec<usize>,
    pub pilot_order: usize,
    pub initial_order: usize,
    pub variance_mode: VarianceMode,
    /// Stop when |Z_{n+1} - Z_n| <= tolerance * var(IV).
    pub tolerance: f64,
    pub max_iter: usize,
    pub pilot_grid_size: usize,
    /// Bandwidth doublings tried after a rank or conditioning failure.
    pub rank_retries: usize,
    pub sample_size: SampleSize,
}

impl Default for SmootherConfig {
    fn default() -> Self {
        SmootherConfig {
            kernel: Kernel::Epanechnikov,
            candidate_orders: vec![1, 2, 3],
            pilot_order: 5,
            initial_order: 1,
            variance_mode: VarianceMode::Heteroscedastic,
            tolerance: 1e-10,
            max_iter: 20,
            pilot_grid_size: 20,
            rank_retries: 3,
            sample_size: SampleSize::Auto,
        }
    }
}

impl SmootherConfig {
    pub fn validate(&self) -> Result<()> {
        if self.candidate_orders.is_empty() || self.candidate_orders.iter().any(|&p| !(1..=5).contains(&p)) {
            return Err(Error::Validation("candidate orders must be a non-empty subset of 1..=5".into()));
        }
        if !self.candidate_orders.contains(&self.initial_order) {
            return Err(Error::Validation(format!(
                "initial order {} is not a candidate",
                self.initial_order
            )));
        }
        if self.candidate_orders.iter().any(|&p| p + 2 > self.pilot_order) {
            return Err(Error::Validation("pilot order must exceed every candidate order by 2".into()));
        }
        if !(self.tolerance >= 0.0) || self.max_iter == 0 || self.pilot_grid_size == 0 {
            return Err(Error::Validation("tolerance, max_iter and pilot grid size must be positive".into()));
        }
        Ok(())
    }
}

/// Result of the iteration at one evaluation strike.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothedPoint {
    pub strike: f64,
    pub iv: f64,
    pub p_star: usize,
    pub h_star: f64,
    pub z_star: f64,
    pub iterations: usize,
    /// Finite-sample ACMSE after initialisation and after every iteration.
    pub z_history: Vec<f64>,
    pub converged: bool,
    /// The closed-form bandwidth hit a vanishing bias term at least once.
    pub degenerate_bandwidth: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothedSlice {
    pub maturity: f64,
    pub points: Vec<SmoothedPoint>,
    pub pilot_order: usize,
    pub pilot_bandwidth: f64,
    pub sample_size: f64,
    /// True when the bandwidth sample size is the total volume.
    pub volume_weighted: bool,
}

impl SmoothedSlice {
    pub fn strikes(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.strike).collect()
    }

    pub fn ivs(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.iv).collect()
    }

    /// Replaces the mid IVs of `slice` with the smoothed values.
    pub fn apply_to(&self, slice: &QuoteSlice) -> Result<QuoteSlice> {
        if slice.strikes() != self.strikes() {
            return Err(Error::Validation("smoothed strikes do not match the slice".into()));
        }
        slice.with_ivs(&self.ivs())
    }
}

/// Slice-level quantities shared by every evaluation strike.
#[derive(Debug, Clone)]
pub struct SmoothingContext {
    pub data: SliceData,
    pub config: SmootherConfig,
    pub orders: Vec<usize>,
    pub constants: Vec<KernelConstants>,
    pub pilot: PilotEstimate,
    pub density: DesignDensity,
    pub variance: Option<VarianceEstimate>,
    pub h_min: f64,
    pub h_max: f64,
    pub sample_size: f64,
    pub volume_weighted: bool,
    pub epsilon: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl SmoothingContext {
    pub fn new(data: SliceData, config: &SmootherConfig) -> Result<Self> {
        config.validate()?;
        let n = data.len();
        if n < 5 {
            return Err(Error::Validation(format!("need at least 5 quotes to smooth, got {n}")));
        }
        // Small slices cannot carry the configured pilot; shrink it and drop the
        // orders it can no longer support.
        let p_bar = config.pilot_order.min(n - 2);
        let orders: Vec<usize> = config.candidate_orders.iter().copied().filter(|&p| p + 2 <= p_bar).collect();
        if orders.is_empty() {
            return Err(Error::Validation(format!("no candidate order is supported by {n} quotes")));
        }
        let mut constants = Vec::with_capacity(6);
        for p in 1..=5 {
            constants.push(kernel_constants(config.kernel, p)?);
        }

        let spacings: Vec<f64> = data.strikes.windows(2).map(|w| w[1] - w[0]).collect();
        let h_min = 2.0 * median(spacings);
        let h_max = data.strikes[n - 1] - data.strikes[0];

        let grid = candidate_grid(h_min, h_max, config.pilot_grid_size);
        let cv = pilot_bandwidth_cv(&data, p_bar, &grid, config.kernel)?;
        let pilot = PilotEstimate::fit(&data, p_bar, cv.bandwidth, config.kernel)?;
        let density = design_density(&data, config.kernel)?;
        let variance = match config.variance_mode {
            VarianceMode::Heteroscedastic => Some(estimate_variance(
                &data,
                &pilot,
                pilot.h_bar,
                VarianceMode::Heteroscedastic,
                0.0,
                config.kernel,
            )?),
            VarianceMode::Homoscedastic => None,
        };

        let volume_weighted = match config.sample_size {
            SampleSize::Auto => data.volumes_informative(),
            SampleSize::QuoteCount => false,
            SampleSize::TotalVolume => true,
        };
        let sample_size = if volume_weighted { density.total_volume } else { n as f64 };

        let mean = data.ivs.iter().sum::<f64>() / n as f64;
        let iv_var = data.ivs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;

        Ok(SmoothingContext {
            orders,
            constants,
            pilot,
            density,
            variance,
            h_min,
            h_max,
            sample_size,
            volume_weighted,
            epsilon: config.tolerance * iv_var,
            config: SmootherConfig {
                pilot_order: p_bar,
                ..config.clone()
            },
            data,
        })
    }

    fn kernel(&self) -> Kernel {
        self.config.kernel
    }

    fn initial_order(&self) -> usize {
        if self.orders.contains(&self.config.initial_order) {
            self.config.initial_order
        } else {
            self.orders[0]
        }
    }

    /// Finite-sample ACMSE, doubling h on rank or conditioning failures.
    fn evaluate(&self, k: f64, p: usize, h: f64, pilot: &[f64], tau: &VarianceEstimate) -> Result<AcmseReport> {
        let mut h = h;
        let mut last = None;
        for _ in 0..=self.config.rank_retries {
            match acmse(&self.data, k, p, h, pilot, tau, self.kernel()) {
                Ok(r) => return Ok(r),
                Err(e @ (Error::Rank { .. } | Error::Conditioning { .. })) => {
                    last = Some(e);
                    h *= 2.0;
                }
                Err(e) => return Err(e),
            }
        }
        Err(last.expect("at least one attempt"))
    }

    fn order_step(&self, k: f64, h: f64, pilot: &[f64], tau: &VarianceEstimate) -> Result<AcmseReport> {
        let mut h = h;
        let mut last = None;
        for _ in 0..=self.config.rank_retries {
            let reports = order_reports(&self.data, k, h, pilot, tau, self.kernel(), &self.orders);
            match pick_order(reports) {
                Ok(r) => return Ok(r),
                Err(e) => {
                    last = Some(e);
                    h *= 2.0;
                }
            }
        }
        Err(last.expect("at least one attempt"))
    }

    /// Runs the alternating order/bandwidth iteration at strike `k`.
    pub fn smooth_point(&self, k: f64) -> Result<SmoothedPoint> {
        let kernel = self.kernel();
        let pilot_alpha = match self.data.index_of(k) {
            Some(i) => self.pilot.alpha[i].clone(),
            None => local_fit(&self.data, k, self.pilot.p_bar, self.pilot.h_bar, kernel)?.alpha,
        };
        let tau_at_k = pseudo_nw_variance(&self.data, &self.pilot.residuals, k, self.pilot.h_bar, kernel)?;
        let tau = match &self.variance {
            Some(v) => v.clone(),
            None => VarianceEstimate::Homoscedastic(tau_at_k),
        };
        let g = self.density.eval(k);
        let g_prime = self.density.derivative(k);

        let h0 = self.pilot.h_bar.clamp(self.h_min, self.h_max);
        let mut current = self.evaluate(k, self.initial_order(), h0, &pilot_alpha, &tau)?;
        let mut history = vec![current.z];
        let mut converged = false;
        let mut degenerate = false;
        let mut iterations = 0;

        while iterations < self.config.max_iter {
            iterations += 1;
            let by_order = self.order_step(k, current.h, &pilot_alpha, &tau)?;
            // A parsimony tie-break may pick an order whose Z exceeds the
            // current one by rounding; the current pair then stands.
            let by_order = if by_order.z <= current.z { by_order } else { current };
            let p = by_order.p;
            let inputs = AsymptoticInputs {
                tau2: tau_at_k,
                g,
                g_prime,
                n: self.sample_size,
                f_p1: derivative(&pilot_alpha, p + 1),
                f_p2: derivative(&pilot_alpha, p + 2),
            };
            let choice = select_bandwidth(&self.constants[p - 1], &inputs, self.h_min, self.h_max)?;
            degenerate |= choice.degenerate;
            // The plug-in bandwidth is accepted only when it does not raise the
            // finite-sample criterion, which keeps the recorded sequence monotone.
            let next = match acmse(&self.data, k, p, choice.h, &pilot_alpha, &tau, kernel) {
                Ok(r) if r.z <= by_order.z => r,
                _ => by_order,
            };
            let delta = (next.z - current.z).abs();
            current = next;
            history.push(current.z);
            if delta <= self.epsilon {
                converged = true;
                break;
            }
        }

        let fit = local_fit(&self.data, k, current.p, current.h, kernel)?;
        let iv = fit.value();
        if !(iv > 0.0) {
            return Err(Error::Smoothing {
                strikes: vec![k],
                message: format!("smoothed IV {iv} is not positive"),
            });
        }
        Ok(SmoothedPoint {
            strike: k,
            iv,
            p_star: current.p,
            h_star: current.h,
            z_star: current.z,
            iterations,
            z_history: history,
            converged,
            degenerate_bandwidth: degenerate,
        })
    }

    /// Smooths every quoted strike, in parallel.
    pub fn smooth_all(&self, maturity: f64) -> Result<SmoothedSlice> {
        let results: Vec<Result<SmoothedPoint>> = self.data.strikes.par_iter().map(|&k| self.smooth_point(k)).collect();
        let mut points = Vec::with_capacity(results.len());
        let mut failed = Vec::new();
        let mut messages = Vec::new();
        for (r, &k) in results.into_iter().zip(&self.data.strikes) {
            match r {
                Ok(p) => points.push(p),
                Err(e) => {
                    failed.push(k);
                    messages.push(e.to_string());
                }
            }
        }
        if !failed.is_empty() {
            return Err(Error::Smoothing {
                strikes: failed,
                message: messages.join("; "),
            });
        }
        Ok(SmoothedSlice {
            maturity,
            points,
            pilot_order: self.pilot.p_bar,
            pilot_bandwidth: self.pilot.h_bar,
            sample_size: self.sample_size,
            volume_weighted: self.volume_weighted,
        })
    }
}

/// One-off smoothing at a single strike; builds the slice context first.
pub fn smooth_point(data: &SliceData, k: f64, config: &SmootherConfig) -> Result<SmoothedPoint> {
    SmoothingContext::new(data.clone(), config)?.smooth_point(k)
}

pub fn smooth_slice(slice: &QuoteSlice, config: &SmootherConfig) -> Result<SmoothedSlice> {
    SmoothingContext::new(SliceData::from_slice(slice)?, config)?.smooth_all(slice.maturity)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{MarketEnv, Quote};
    use crate::synthetic::{make_svi_slice, svi_iv, uniform_grid, NoiseSpec, SviParams};

    fn quadratic_slice() -> QuoteSlice {
        let quotes = uniform_grid(0.5, 1.5, 41)
            .into_iter()
            .map(|k| Quote::new(k, 1.0, 0.25 - 0.1 * (k - 1.0) + 0.2 * (k - 1.0).powi(2)))
            .collect();
        QuoteSlice::new(1.0, quotes).unwrap()
    }

    #[test]
    fn noise_free_quadratic_is_reproduced() {
        let slice = quadratic_slice();
        let out = smooth_slice(&slice, &SmootherConfig::default()).unwrap();
        for (p, q) in out.points.iter().zip(&slice.quotes) {
            assert!((p.iv - q.iv_mid).abs() < 1e-9, "K={}: {} vs {}", q.strike, p.iv, q.iv_mid);
            assert!(p.iterations <= 2, "K={} took {} iterations", q.strike, p.iterations);
        }
    }

    #[test]
    fn input_order_does_not_matter() {
        let slice = quadratic_slice();
        let data = SliceData::from_slice(&slice).unwrap();
        let mut rev_strikes = data.strikes.clone();
        let mut rev_ivs = data.ivs.clone();
        rev_strikes.reverse();
        rev_ivs.reverse();
        let shuffled = SliceData::new(rev_strikes, rev_ivs).unwrap();
        assert_eq!(shuffled, data);
    }

    #[test]
    fn noisy_svi_stays_close_to_truth_with_monotone_history() {
        let env = MarketEnv::new(1.0, 0.0, 0.0).unwrap();
        let params = SviParams::default();
        let strikes = uniform_grid(0.5, 1.5, 101);
        let noise = NoiseSpec::gaussian(0.001, 11);
        let slice = make_svi_slice(&params, &strikes, 1.0, &env, Some(&noise)).unwrap();
        let out = smooth_slice(&slice, &SmootherConfig::default()).unwrap();
        for p in &out.points {
            assert!(p.z_history.windows(2).all(|w| w[1] <= w[0]), "K={}", p.strike);
            assert!(p.iterations <= 20);
            if (0.7..=1.3).contains(&p.strike) {
                let truth = svi_iv(&params, p.strike.ln(), 1.0).unwrap();
                assert!((p.iv - truth).abs() < 0.003, "K={}: {} vs {truth}", p.strike, p.iv);
            }
            assert!(p.h_star >= 0.0);
        }
    }

    #[test]
    fn config_validation() {
        let mut c = SmootherConfig::default();
        c.candidate_orders = vec![1, 4];
        assert!(c.validate().is_err());
        let c = SmootherConfig {
            initial_order: 2,
            candidate_orders: vec![1, 3],
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }
}
