//! Symmetric compactly supported kernels and their moment constants.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    #[default]
    Epanechnikov,
    Quartic,
}

impl Kernel {
    /// Kernel density on [-1, 1], zero outside.
    #[inline]
    pub fn eval(self, u: f64) -> f64 {
        if u.abs() >= 1.0 {
            return 0.0;
        }
        let s = 1.0 - u * u;
        match self {
            Kernel::Epanechnikov => 0.75 * s,
            Kernel::Quartic => 0.9375 * s * s,
        }
    }

    #[inline]
    pub fn derivative(self, u: f64) -> f64 {
        if u.abs() >= 1.0 {
            return 0.0;
        }
        match self {
            Kernel::Epanechnikov => -1.5 * u,
            Kernel::Quartic => -3.75 * u * (1.0 - u * u),
        }
    }

    /// Ratio of this kernel's canonical bandwidth to the Gaussian one; converts
    /// Gaussian-reference rules of thumb to this kernel's support scale.
    pub fn gaussian_equivalence(self) -> f64 {
        let gaussian = (1.0 / (4.0 * std::f64::consts::PI)).powf(0.1);
        let own: f64 = match self {
            Kernel::Epanechnikov => 15.0,
            Kernel::Quartic => 35.0,
        };
        own.powf(0.2) / gaussian
    }
}

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for j in 2..=n {
                let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

pub const QUADRATURE_NODES: usize = 64;

/// Moments mu_j = int u^j K(u) du and nu_j = int u^j K(u)^2 du for j = 0..=max_order.
pub fn kernel_moments(kernel: Kernel, max_order: usize) -> (Vec<f64>, Vec<f64>) {
    let (nodes, weights) = gauss_legendre(QUADRATURE_NODES);
    let mut mu = vec![0.0; max_order + 1];
    let mut nu = vec![0.0; max_order + 1];
    for (&u, &w) in nodes.iter().zip(&weights) {
        let k = kernel.eval(u);
        let mut pow = 1.0;
        for j in 0..=max_order {
            mu[j] += w * pow * k;
            nu[j] += w * pow * k * k;
            pow *= u;
        }
    }
    (mu, nu)
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

/// Moment matrices and bandwidth constants of a kernel at polynomial order `p`.
#[derive(Debug, Clone)]
pub struct KernelConstants {
    pub kernel: Kernel,
    pub p: usize,
    /// (mu_{j+l}), 0 <= j, l <= p.
    pub s: DMatrix<f64>,
    /// (nu_{j+l}), 0 <= j, l <= p.
    pub s_star: DMatrix<f64>,
    /// (mu_{p+1}, ..., mu_{2p+1}).
    pub c_p: DVector<f64>,
    /// (mu_{p+2}, ..., mu_{2p+2}).
    pub c_tilde_p: DVector<f64>,
    /// (e1' S^-1 c_p / (p+1)!)^2; vanishes for even p with a symmetric kernel.
    pub c1: f64,
    /// e1' S^-1 S* S^-1 e1, the integrated squared equivalent kernel.
    pub c2: f64,
    /// e1' S^-1 c~_p / (p+2)!, the leading bias factor for even p.
    pub even_bias: f64,
    /// [C2 / (2 (p+1) C1)]^(1/(2p+3)); infinite when C1 vanishes (even p).
    pub c0p: f64,
}

impl KernelConstants {
    pub fn is_odd(&self) -> bool {
        self.p % 2 == 1
    }
}

pub fn kernel_constants(kernel: Kernel, p: usize) -> Result<KernelConstants> {
    if !(1..=5).contains(&p) {
        return Err(Error::Validation(format!("kernel constants need 1 <= p <= 5, got {p}")));
    }
    let (mu, nu) = kernel_moments(kernel, 2 * p + 2);
    let dim = p + 1;
    let s = DMatrix::from_fn(dim, dim, |j, l| mu[j + l]);
    let s_star = DMatrix::from_fn(dim, dim, |j, l| nu[j + l]);
    let c_p = DVector::from_fn(dim, |j, _| mu[p + 1 + j]);
    let c_tilde_p = DVector::from_fn(dim, |j, _| mu[p + 2 + j]);

    let chol = s.clone().cholesky().ok_or_else(|| {
        Error::Validation(format!("kernel moment matrix for p={p} is not positive definite"))
    })?;
    let mut e1 = DVector::zeros(dim);
    e1[0] = 1.0;
    let s_inv_e1 = chol.solve(&e1);

    let lead = s_inv_e1.dot(&c_p);
    // Odd kernel moments are zero, so for even p the leading term is pure
    // quadrature round-off.
    let lead = if lead.abs() < 1e-12 { 0.0 } else { lead };
    let c1 = (lead / factorial(p + 1)).powi(2);
    let c2 = s_inv_e1.dot(&(&s_star * &s_inv_e1));
    let even_bias = s_inv_e1.dot(&c_tilde_p) / factorial(p + 2);
    let c0p = if c1 > 0.0 {
        (c2 / (2.0 * (p + 1) as f64 * c1)).powf(1.0 / (2 * p + 3) as f64)
    } else {
        f64::INFINITY
    };
    Ok(KernelConstants {
        kernel,
        p,
        s,
        s_star,
        c_p,
        c_tilde_p,
        c1,
        c2,
        even_bias,
        c0p,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadrature_integrates_polynomials() {
        let (x, w) = gauss_legendre(64);
        let total: f64 = w.iter().sum();
        assert!((total - 2.0).abs() < 1e-14);
        let m10: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(10)).sum();
        assert!((m10 - 2.0 / 11.0).abs() < 1e-14);
    }

    #[test]
    fn epanechnikov_closed_form_moments() {
        let (mu, nu) = kernel_moments(Kernel::Epanechnikov, 4);
        assert!((mu[0] - 1.0).abs() < 1e-12);
        assert!((mu[2] - 0.2).abs() < 1e-12);
        assert!((mu[4] - 3.0 / 35.0).abs() < 1e-12);
        assert!((nu[0] - 0.6).abs() < 1e-12);
        assert!(mu[1].abs() < 1e-12 && mu[3].abs() < 1e-12);
    }

    #[test]
    fn quartic_integrates_to_one() {
        let (mu, nu) = kernel_moments(Kernel::Quartic, 2);
        assert!((mu[0] - 1.0).abs() < 1e-12);
        assert!((mu[2] - 1.0 / 7.0).abs() < 1e-12);
        assert!((nu[0] - 5.0 / 7.0).abs() < 1e-12);
        assert!(mu[1].abs() < 1e-12);
    }

    #[test]
    fn derivative_matches_difference_quotient() {
        for k in [Kernel::Epanechnikov, Kernel::Quartic] {
            for u in [-0.7, -0.1, 0.3, 0.9] {
                let h = 1e-6;
                let fd = (k.eval(u + h) - k.eval(u - h)) / (2.0 * h);
                assert!((fd - k.derivative(u)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn local_linear_constant_is_minimiser_of_amise() {
        // For p = 1 the asymptotic MSE is A h^4 + B / h with
        // A = C1 f''^2 and B = C2 tau^2 / (g n); the constant must reproduce
        // the brute-force minimiser of that curve.
        let c = kernel_constants(Kernel::Epanechnikov, 1).unwrap();
        let (f2, tau2, g, n) = (3.0, 2e-4, 1.3, 500.0);
        let a = c.c1 * f2 * f2;
        let b = c.c2 * tau2 / (g * n);
        let z = |h: f64| a * h.powi(4) + b / h;
        let (mut lo, mut hi) = (1e-4, 10.0);
        let phi = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..300 {
            let m1 = hi - phi * (hi - lo);
            let m2 = lo + phi * (hi - lo);
            if z(m1) < z(m2) {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        let numeric = 0.5 * (lo + hi);
        let closed = c.c0p * (tau2 / (f2 * f2 * g)).powf(0.2) * n.powf(-0.2);
        assert!(((closed - numeric) / numeric).abs() < 1e-6);
        // Tabulated value for the Epanechnikov kernel.
        assert!((c.c0p - 1.719).abs() < 1e-3, "{}", c.c0p);
    }

    #[test]
    fn even_orders_have_no_odd_bias_term() {
        let c = kernel_constants(Kernel::Epanechnikov, 2).unwrap();
        assert_eq!(c.c1, 0.0);
        assert!(c.c0p.is_infinite());
        assert!(c.even_bias.abs() > 1e-6);
        // Reference value from adaptive quadrature of the equivalent kernel.
        let c3 = kernel_constants(Kernel::Epanechnikov, 3).unwrap();
        assert!((c3.c0p - 3.243_131_560_314_587).abs() < 1e-10, "{}", c3.c0p);
    }

    #[test]
    fn moment_matrices_are_symmetric_positive_definite() {
        for p in 1..=5 {
            let c = kernel_constants(Kernel::Quartic, p).unwrap();
            assert_eq!(c.s, c.s.transpose());
            assert!(c.s.clone().cholesky().is_some());
            assert!(c.c2 > 0.0);
        }
        assert!(kernel_constants(Kernel::Epanechnikov, 0).is_err());
        assert!(kernel_constants(Kernel::Epanechnikov, 6).is_err());
    }
}
