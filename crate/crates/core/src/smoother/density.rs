//! Volume-weighted kernel density of the strike design.

use super::kernel::Kernel;
use super::SliceData;
use crate::error::{Error, Result};

/// KDE that counts each strike once per traded contract.
#[derive(Debug, Clone)]
pub struct DesignDensity {
    pub kernel: Kernel,
    pub h_g: f64,
    /// N_V, the total (coerced) volume.
    pub total_volume: f64,
    strikes: Vec<f64>,
    /// Volumes divided by N_V.
    masses: Vec<f64>,
}

impl DesignDensity {
    pub fn eval(&self, x: f64) -> f64 {
        let h = self.h_g;
        self.strikes
            .iter()
            .zip(&self.masses)
            .map(|(&k, &m)| m * self.kernel.eval((x - k) / h))
            .sum::<f64>()
            / h
    }

    pub fn derivative(&self, x: f64) -> f64 {
        let h = self.h_g;
        self.strikes
            .iter()
            .zip(&self.masses)
            .map(|(&k, &m)| m * self.kernel.derivative((x - k) / h))
            .sum::<f64>()
            / (h * h)
    }

    /// Interval outside of which the density vanishes.
    pub fn support(&self) -> (f64, f64) {
        (self.strikes[0] - self.h_g, self.strikes[self.strikes.len() - 1] + self.h_g)
    }
}

/// Weighted quantile by linear interpolation of the cumulative mass at
/// midpoints.
fn weighted_quantile(x: &[f64], w: &[f64], q: f64) -> f64 {
    let total: f64 = w.iter().sum();
    let mut cum = 0.0;
    let mut prev: Option<(f64, f64)> = None;
    for (&xi, &wi) in x.iter().zip(w) {
        let mid = (cum + 0.5 * wi) / total;
        cum += wi;
        if mid >= q {
            return match prev {
                Some((px, pm)) if mid > pm => px + (xi - px) * (q - pm) / (mid - pm),
                _ => xi,
            };
        }
        prev = Some((xi, mid));
    }
    x[x.len() - 1]
}

/// Builds the density with Silverman's rule on the volume-weighted sample,
/// moments taken in closed form from the weights. The sample size in the rule
/// is the Kish effective size (sum v)^2 / sum v^2, which keeps the estimate
/// invariant to rescaling all volumes. The bandwidth is converted
/// to the kernel's support scale and floored at 1.5 times the largest strike
/// gap so the estimate never has holes between quotes.
pub fn design_density(data: &SliceData, kernel: Kernel) -> Result<DesignDensity> {
    if data.len() < 2 {
        return Err(Error::DegenerateDensity("need at least 2 distinct strikes".into()));
    }
    let w = data.density_weights();
    let total: f64 = w.iter().sum();
    let mean = data.strikes.iter().zip(&w).map(|(k, v)| k * v).sum::<f64>() / total;
    let var = data
        .strikes
        .iter()
        .zip(&w)
        .map(|(k, v)| v * (k - mean).powi(2))
        .sum::<f64>()
        / total;
    let sd = var.sqrt();
    let span = data.strikes[data.len() - 1] - data.strikes[0];
    if !(sd > 1e-12 * span.max(1e-300)) {
        return Err(Error::DegenerateDensity(format!(
            "all volume sits at a single strike (weighted sd {sd:.3e})"
        )));
    }
    let iqr = weighted_quantile(&data.strikes, &w, 0.75) - weighted_quantile(&data.strikes, &w, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let n_eff = total * total / w.iter().map(|v| v * v).sum::<f64>();
    let silverman = 0.9 * spread * n_eff.powf(-0.2) * kernel.gaussian_equivalence();
    let max_gap = data
        .strikes
        .windows(2)
        .map(|p| p[1] - p[0])
        .fold(0.0, f64::max);
    let h_g = silverman.max(1.5 * max_gap);
    Ok(DesignDensity {
        kernel,
        h_g,
        total_volume: total,
        strikes: data.strikes.clone(),
        masses: w.iter().map(|v| v / total).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smoother::kernel::gauss_legendre;

    fn uniform(n: usize) -> SliceData {
        let strikes: Vec<f64> = (0..n).map(|i| 0.5 + i as f64 / (n - 1) as f64).collect();
        SliceData::new(strikes, vec![0.2; n]).unwrap()
    }

    fn integral(g: &DesignDensity) -> f64 {
        let (lo, hi) = g.support();
        let (x, w) = gauss_legendre(64);
        let cells = 200;
        let dx = (hi - lo) / cells as f64;
        let mut acc = 0.0;
        for c in 0..cells {
            let a = lo + c as f64 * dx;
            for (xi, wi) in x.iter().zip(&w) {
                acc += 0.5 * dx * wi * g.eval(a + 0.5 * dx * (xi + 1.0));
            }
        }
        acc
    }

    #[test]
    fn uniform_design_is_flat_inside() {
        let g = design_density(&uniform(101), Kernel::Epanechnikov).unwrap();
        let inner: Vec<f64> = (0..=60).map(|i| g.eval(0.7 + 0.6 * i as f64 / 60.0)).collect();
        let max = inner.iter().cloned().fold(f64::MIN, f64::max);
        let min = inner.iter().cloned().fold(f64::MAX, f64::min);
        assert!(max / min < 1.2, "{max} / {min}");
        assert!((integral(&g) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn doubling_volume_leaves_density_unchanged() {
        let mut d = uniform(41);
        d.volumes = (0..41).map(|i| 1.0 + (i % 7) as f64).collect();
        let g1 = design_density(&d, Kernel::Quartic).unwrap();
        let mut d2 = d.clone();
        d2.volumes.iter_mut().for_each(|v| *v *= 2.0);
        let g2 = design_density(&d2, Kernel::Quartic).unwrap();
        for x in [0.55, 0.8, 1.0, 1.31] {
            let (a, b) = (g1.eval(x), g2.eval(x));
            assert!((a - b).abs() <= 1e-12 * a.max(1.0), "{a} {b}");
        }
    }

    #[test]
    fn concentrated_volume_raises_local_density() {
        let mut d = uniform(41);
        d.volumes[20] = 5000.0;
        d.volumes[19] = 2000.0;
        d.volumes[21] = 2000.0;
        let g = design_density(&d, Kernel::Epanechnikov).unwrap();
        assert!(g.eval(1.0) > g.eval(0.6));
        assert!((integral(&g) - 1.0).abs() < 1e-3);
        let dg = g.derivative(0.9);
        let fd = (g.eval(0.9 + 1e-7) - g.eval(0.9 - 1e-7)) / 2e-7;
        assert!((dg - fd).abs() < 1e-4 * fd.abs().max(1.0));
    }

    #[test]
    fn single_strike_volume_is_degenerate() {
        let d = SliceData::new(vec![1.0], vec![0.2]).unwrap();
        assert!(matches!(design_density(&d, Kernel::Epanechnikov), Err(Error::DegenerateDensity(_))));
    }
}
