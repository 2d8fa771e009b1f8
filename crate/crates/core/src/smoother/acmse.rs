//! Conditional MSE of the local intercept: the finite-sample matrix form used to
//! pick the order and the asymptotic form used to pick the bandwidth.

use serde::{Deserialize, Serialize};

use super::fit::{horner, local_fit};
use super::kernel::{Kernel, KernelConstants};
use super::pilot::VarianceEstimate;
use super::SliceData;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcmseReport {
    pub p: usize,
    pub h: f64,
    pub bias: f64,
    pub variance: f64,
    pub z: f64,
}

/// Finite-sample conditional bias and variance of alpha_0 at (k, p, h).
///
/// The bias is e1' S_n^-1 X'W m with m_i the pilot polynomial's terms of
/// degree p+1..=p_bar evaluated at K_i; the variance is
/// e1' S_n^-1 X' Sigma X S_n^-1 e1 with Sigma = diag(w_i^2 tau2_i).
pub fn acmse(
    data: &SliceData,
    k: f64,
    p: usize,
    h: f64,
    pilot_alpha: &[f64],
    tau2: &VarianceEstimate,
    kernel: Kernel,
) -> Result<AcmseReport> {
    if pilot_alpha.len() < p + 3 {
        return Err(Error::Validation(format!(
            "pilot order {} must be at least p + 2 = {}",
            pilot_alpha.len().saturating_sub(1),
            p + 2
        )));
    }
    let fit = local_fit(data, k, p, h, kernel)?;
    let mut bias = 0.0;
    let mut variance = 0.0;
    for (&i, &l) in fit.indices.iter().zip(&fit.equivalent_kernel) {
        let d = data.strikes[i] - k;
        let tail = d.powi(p as i32 + 1) * horner(&pilot_alpha[p + 1..], d);
        bias += l * tail;
        variance += l * l * tau2.at(i);
    }
    Ok(AcmseReport {
        p,
        h,
        bias,
        variance,
        z: bias * bias + variance,
    })
}

/// Finite-sample reports at every candidate order; failures are kept.
pub fn order_reports(
    data: &SliceData,
    k: f64,
    h: f64,
    pilot_alpha: &[f64],
    tau2: &VarianceEstimate,
    kernel: Kernel,
    candidates: &[usize],
) -> Vec<(usize, Result<AcmseReport>)> {
    candidates
        .iter()
        .map(|&p| (p, acmse(data, k, p, h, pilot_alpha, tau2, kernel)))
        .collect()
}

/// Relative tolerance under which two ACMSE values are treated as tied.
const TIE_REL: f64 = 1e-12;
const TIE_ABS: f64 = 1e-15;

/// Argmin of the finite-sample ACMSE over `candidates`; ties go to the smaller order.
pub fn select_order(
    data: &SliceData,
    k: f64,
    h: f64,
    pilot_alpha: &[f64],
    tau2: &VarianceEstimate,
    kernel: Kernel,
    candidates: &[usize],
) -> Result<AcmseReport> {
    if candidates.is_empty() {
        return Err(Error::Validation("empty candidate order set".into()));
    }
    pick_order(order_reports(data, k, h, pilot_alpha, tau2, kernel, candidates))
}

pub(crate) fn pick_order(reports: Vec<(usize, Result<AcmseReport>)>) -> Result<AcmseReport> {
    let mut sorted = reports;
    sorted.sort_by_key(|(p, _)| *p);
    let mut best: Option<AcmseReport> = None;
    let mut failures = Vec::new();
    for (p, r) in sorted {
        match r {
            Ok(rep) => {
                let take = match &best {
                    None => true,
                    Some(b) => rep.z < b.z - (TIE_ABS + TIE_REL * b.z),
                };
                if take {
                    best = Some(rep);
                }
            }
            Err(e) => failures.push(format!("p={p}: {e}")),
        }
    }
    best.ok_or_else(|| Error::Selection(format!("no candidate order is feasible: {}", failures.join("; "))))
}

/// Plug-in quantities at the evaluation strike feeding the asymptotic ACMSE.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticInputs {
    pub tau2: f64,
    pub g: f64,
    pub g_prime: f64,
    /// Sample size (quote count or total volume).
    pub n: f64,
    /// Pilot f^(p+1)(k).
    pub f_p1: f64,
    /// Pilot f^(p+2)(k).
    pub f_p2: f64,
}

/// Leading bias coefficient: bias = coef * h^(p+1) for odd p, coef * h^(p+2) for even p.
fn bias_coefficient(c: &KernelConstants, x: &AsymptoticInputs) -> f64 {
    if c.is_odd() {
        c.c1.sqrt() * x.f_p1.abs()
    } else {
        c.even_bias * (x.f_p2 + (c.p + 2) as f64 * x.f_p1 * x.g_prime / x.g)
    }
}

fn bias_power(c: &KernelConstants) -> i32 {
    if c.is_odd() {
        c.p as i32 + 1
    } else {
        c.p as i32 + 2
    }
}

/// Asymptotic bias^2 + variance at bandwidth h.
pub fn asymptotic_z(c: &KernelConstants, x: &AsymptoticInputs, h: f64) -> f64 {
    let b = bias_coefficient(c, x) * h.powi(bias_power(c));
    b * b + c.c2 * x.tau2 / (x.g * x.n * h)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandwidthChoice {
    pub h: f64,
    /// Closed-form optimum before clamping.
    pub unclamped: f64,
    /// The leading bias term vanished, so no interior optimum exists.
    pub degenerate: bool,
}

/// Closed-form minimiser of [`asymptotic_z`], clamped to `[h_min, h_max]`.
pub fn select_bandwidth(c: &KernelConstants, x: &AsymptoticInputs, h_min: f64, h_max: f64) -> Result<BandwidthChoice> {
    if !(x.g > 0.0) {
        return Err(Error::DegenerateDensity(format!("design density {} is not positive", x.g)));
    }
    if !(x.n > 0.0) || !(x.tau2 >= 0.0) {
        return Err(Error::Validation("sample size must be positive and variance non-negative".into()));
    }
    let coef = bias_coefficient(c, x);
    if coef == 0.0 || !coef.is_finite() {
        return Ok(BandwidthChoice {
            h: h_max,
            unclamped: f64::INFINITY,
            degenerate: true,
        });
    }
    let a = bias_power(c);
    // d/dh [coef^2 h^(2a) + V/h] = 0  =>  h^(2a+1) = V / (2a coef^2).
    let v = c.c2 * x.tau2 / (x.g * x.n);
    let unclamped = (v / (2.0 * a as f64 * coef * coef)).powf(1.0 / (2 * a + 1) as f64);
    Ok(BandwidthChoice {
        h: unclamped.clamp(h_min, h_max),
        unclamped,
        degenerate: false,
    })
}

/// Golden-section minimiser of a unimodal function on [lo, hi].
pub fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > tol * (lo.abs() + hi.abs()).max(1e-300) {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = f(x2);
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smoother::kernel::kernel_constants;
    use nalgebra::{DMatrix, DVector};

    fn ten_points() -> SliceData {
        let strikes = vec![0.80, 0.84, 0.87, 0.93, 0.97, 1.0, 1.04, 1.09, 1.12, 1.18];
        let ivs = strikes.iter().map(|&k: &f64| 0.2 + 0.3 * (k - 1.0).powi(2) + 0.4 * (k - 1.0).powi(3)).collect();
        SliceData::new(strikes, ivs).unwrap()
    }

    /// Explicit-inverse evaluation of S_n^-1 b and S_n^-1 X' Sigma X S_n^-1.
    fn oracle(d: &SliceData, k: f64, p: usize, h: f64, pilot: &[f64], tau2: &[f64]) -> (f64, f64) {
        let kern = Kernel::Epanechnikov;
        let n = d.len();
        let x = DMatrix::from_fn(n, p + 1, |i, j| (d.strikes[i] - k).powi(j as i32));
        let w: Vec<f64> = d.strikes.iter().map(|&s| kern.eval((s - k) / h) / h).collect();
        let wm = DMatrix::from_diagonal(&DVector::from_vec(w.clone()));
        let sn = x.transpose() * &wm * &x;
        let sn_inv = sn.try_inverse().unwrap();
        let moment = |j: usize| -> f64 { (0..n).map(|i| w[i] * (d.strikes[i] - k).powi(j as i32)).sum() };
        let b = DVector::from_fn(p + 1, |l, _| {
            (p + 1..pilot.len()).map(|j| pilot[j] * moment(l + j)).sum::<f64>()
        });
        let bias = (&sn_inv * b)[0];
        let sigma = DMatrix::from_diagonal(&DVector::from_fn(n, |i, _| w[i] * w[i] * tau2[i]));
        let var = (&sn_inv * x.transpose() * sigma * &x * &sn_inv)[(0, 0)];
        (bias, var)
    }

    #[test]
    fn matches_explicit_inverse_oracle() {
        let d = ten_points();
        let pilot = [0.2, 0.01, 0.3, 0.4, -1.5, 2.0];
        let tau: Vec<f64> = (0..10).map(|i| 1e-6 * (1.0 + 0.1 * i as f64)).collect();
        let est = VarianceEstimate::Heteroscedastic(tau.clone());
        for (p, h) in [(1, 0.15), (2, 0.2), (3, 0.25)] {
            let r = acmse(&d, 0.98, p, h, &pilot, &est, Kernel::Epanechnikov).unwrap();
            let (b, v) = oracle(&d, 0.98, p, h, &pilot, &tau);
            assert!(((r.bias - b) / b).abs() < 1e-9, "p={p}: {} vs {b}", r.bias);
            assert!(((r.variance - v) / v).abs() < 1e-9, "p={p}: {} vs {v}", r.variance);
            assert!(r.z >= r.variance);
        }
    }

    #[test]
    fn zero_tail_or_zero_noise() {
        let d = ten_points();
        let tau = VarianceEstimate::Homoscedastic(1e-6);
        let r = acmse(&d, 1.0, 1, 0.2, &[0.2, 0.1, 0.0, 0.0, 0.0], &tau, Kernel::Epanechnikov).unwrap();
        assert_eq!(r.bias, 0.0);
        assert_eq!(r.z, r.variance);
        let r = acmse(&d, 1.0, 1, 0.2, &[0.2, 0.1, 0.3, 1.0], &VarianceEstimate::Homoscedastic(0.0), Kernel::Epanechnikov)
            .unwrap();
        assert_eq!(r.variance, 0.0);
        assert_eq!(r.z, r.bias * r.bias);
        assert!(acmse(&d, 1.0, 2, 0.2, &[0.2, 0.1, 0.3, 1.0], &tau, Kernel::Epanechnikov).is_err());
    }

    #[test]
    fn order_ties_go_to_smaller_order() {
        let rep = |p, z| AcmseReport { p, h: 0.1, bias: 0.0, variance: z, z };
        let picked = pick_order(vec![(3, Ok(rep(3, 1e-8))), (1, Ok(rep(1, 1e-8 + 1e-16)))]).unwrap();
        assert_eq!(picked.p, 1);
        let picked = pick_order(vec![(1, Ok(rep(1, 2e-8))), (3, Ok(rep(3, 1e-8)))]).unwrap();
        assert_eq!(picked.p, 3);
        let only = pick_order(vec![(1, Ok(rep(1, 5.0)))]).unwrap();
        assert_eq!(only.p, 1);
    }

    fn inputs() -> AsymptoticInputs {
        AsymptoticInputs {
            tau2: 1e-6,
            g: 1.1,
            g_prime: 0.7,
            n: 101.0,
            f_p1: 2.5,
            f_p2: -4.0,
        }
    }

    #[test]
    fn closed_form_bandwidth_minimises_asymptotic_mse() {
        for p in 1..=3 {
            let c = kernel_constants(Kernel::Epanechnikov, p).unwrap();
            let x = inputs();
            let choice = select_bandwidth(&c, &x, 1e-6, 1e3).unwrap();
            let numeric = golden_section(|h| asymptotic_z(&c, &x, h), 1e-6, 10.0, 1e-12);
            assert!(((choice.h - numeric) / numeric).abs() < 1e-6, "p={p}");
        }
    }

    #[test]
    fn bandwidth_scales_with_noise_level() {
        let c = kernel_constants(Kernel::Epanechnikov, 1).unwrap();
        let x = inputs();
        let h1 = select_bandwidth(&c, &x, 0.0, f64::MAX).unwrap().h;
        let h4 = select_bandwidth(&c, &AsymptoticInputs { tau2: 4.0 * x.tau2, ..x }, 0.0, f64::MAX)
            .unwrap()
            .h;
        assert!((h4 / h1 - 4f64.powf(0.2)).abs() < 1e-12);
    }

    #[test]
    fn vanishing_derivative_is_degenerate() {
        let c = kernel_constants(Kernel::Epanechnikov, 1).unwrap();
        let x = AsymptoticInputs { f_p1: 0.0, ..inputs() };
        let choice = select_bandwidth(&c, &x, 0.01, 0.5).unwrap();
        assert!(choice.degenerate);
        assert_eq!(choice.h, 0.5);
    }
}
