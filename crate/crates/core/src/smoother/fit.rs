//! Kernel-weighted least-squares polynomial fits centred at an evaluation strike.

use nalgebra::{DMatrix, DVector};

use super::kernel::Kernel;
use super::SliceData;
use crate::error::{Error, Result};

/// Upper limit on the condition estimate of the bandwidth-scaled moment matrix.
pub const MAX_CONDITION: f64 = 1e12;

/// Solution of the local weighted least-squares problem at `center`.
#[derive(Debug, Clone)]
pub struct LocalFit {
    pub center: f64,
    pub order: usize,
    pub bandwidth: f64,
    /// Coefficients of the polynomial in (K - center); alpha[0] is the fitted value.
    pub alpha: Vec<f64>,
    /// X'WX in unscaled coordinates.
    pub sn: DMatrix<f64>,
    /// Indices into the slice data of the points with positive kernel weight.
    pub indices: Vec<usize>,
    /// Kernel weights kappa_h(K_i - center) of those points.
    pub weights: Vec<f64>,
    /// Equivalent-kernel weights: alpha[0] = sum_i l_i sigma_i.
    pub equivalent_kernel: Vec<f64>,
    /// Diagonal of the hat matrix for each in-window point.
    pub leverage: Vec<f64>,
    pub condition: f64,
}

impl LocalFit {
    pub fn value(&self) -> f64 {
        self.alpha[0]
    }

    /// Residuals sigma_i - P(K_i) of the in-window points.
    pub fn residuals(&self, data: &SliceData) -> Vec<f64> {
        self.indices
            .iter()
            .map(|&i| {
                let d = data.strikes[i] - self.center;
                data.ivs[i] - horner(&self.alpha, d)
            })
            .collect()
    }
}

pub(crate) fn horner(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

/// In-window points of a kernel of half-width `h` centred at `k`.
pub(crate) fn window(data: &SliceData, k: f64, h: f64, kernel: Kernel) -> (Vec<usize>, Vec<f64>) {
    let lo = data.strikes.partition_point(|&x| x <= k - h);
    let hi = data.strikes.partition_point(|&x| x < k + h);
    let mut idx = Vec::with_capacity(hi.saturating_sub(lo));
    let mut w = Vec::with_capacity(hi.saturating_sub(lo));
    for i in lo..hi {
        let wi = kernel.eval((data.strikes[i] - k) / h) / h;
        if wi > 0.0 {
            idx.push(i);
            w.push(wi);
        }
    }
    (idx, w)
}

/// Fits a degree-`p` polynomial in (K - k) by kernel-weighted least squares.
///
/// The design is scaled to u = (K - k)/h and solved by Householder QR; the
/// condition estimate refers to that scaled problem.
pub fn local_fit(data: &SliceData, k: f64, p: usize, h: f64, kernel: Kernel) -> Result<LocalFit> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::Validation(format!("bandwidth must be positive, got {h}")));
    }
    let (indices, weights) = window(data, k, h, kernel);
    fit_points(data, k, p, h, indices, weights)
}

pub(crate) fn fit_points(
    data: &SliceData,
    k: f64,
    p: usize,
    h: f64,
    indices: Vec<usize>,
    weights: Vec<f64>,
) -> Result<LocalFit> {
    let m = indices.len();
    let dim = p + 1;
    if m < dim {
        return Err(Error::Rank {
            center: k,
            order: p,
            bandwidth: h,
            effective: m,
        });
    }

    let mut z = DMatrix::zeros(m, dim);
    let mut rhs = DVector::zeros(m);
    for (r, (&i, &w)) in indices.iter().zip(&weights).enumerate() {
        let sw = w.sqrt();
        let u = (data.strikes[i] - k) / h;
        let mut pow = sw;
        for j in 0..dim {
            z[(r, j)] = pow;
            pow *= u;
        }
        rhs[r] = sw * data.ivs[i];
    }

    let qr = z.qr();
    let rmat = qr.r();
    let sv = rmat.singular_values();
    let smax = sv.max();
    let smin = sv.min();
    let condition = if smin > 0.0 { (smax / smin).powi(2) } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::Conditioning { center: k, condition });
    }
    let q = qr.q();
    let qtb = q.transpose() * &rhs;
    let scaled = rmat
        .solve_upper_triangular(&qtb)
        .ok_or(Error::Conditioning { center: k, condition })?;

    // Equivalent kernel: l = sqrt(w) * Q R^{-T} e1 in scaled coordinates.
    let mut e1 = DVector::zeros(dim);
    e1[0] = 1.0;
    let rt_e1 = rmat
        .transpose()
        .solve_lower_triangular(&e1)
        .ok_or(Error::Conditioning { center: k, condition })?;
    let qv = &q * rt_e1;

    let mut alpha = vec![0.0; dim];
    let mut scale = 1.0;
    for (j, a) in alpha.iter_mut().enumerate() {
        *a = scaled[j] / scale;
        scale *= h;
    }

    let mut equivalent_kernel = Vec::with_capacity(m);
    let mut leverage = Vec::with_capacity(m);
    for r in 0..m {
        equivalent_kernel.push(weights[r].sqrt() * qv[r]);
        leverage.push(q.row(r).norm_squared());
    }

    let mut moments = vec![0.0; 2 * p + 1];
    for (&i, &w) in indices.iter().zip(&weights) {
        let d = data.strikes[i] - k;
        let mut pow = w;
        for mom in moments.iter_mut() {
            *mom += pow;
            pow *= d;
        }
    }
    let sn = DMatrix::from_fn(dim, dim, |a, b| moments[a + b]);

    Ok(LocalFit {
        center: k,
        order: p,
        bandwidth: h,
        alpha,
        sn,
        indices,
        weights,
        equivalent_kernel,
        leverage,
        condition,
    })
}
