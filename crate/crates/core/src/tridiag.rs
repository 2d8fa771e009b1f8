//! Factored tridiagonal systems (Thomas algorithm).

/// LU factors of a tridiagonal matrix with sub-diagonal `a`, diagonal `b` and
/// super-diagonal `c` (a[0] and c[n-1] unused). Without pivoting; intended for
/// diagonally dominant systems.
#[derive(Debug, Clone)]
pub struct Tridiagonal {
    a: Vec<f64>,
    c_prime: Vec<f64>,
    inv_denom: Vec<f64>,
}

impl Tridiagonal {
    pub fn factor(a: &[f64], b: &[f64], c: &[f64]) -> Self {
        let n = b.len();
        assert!(a.len() == n && c.len() == n && n > 0);
        let mut c_prime = vec![0.0; n];
        let mut inv_denom = vec![0.0; n];
        inv_denom[0] = 1.0 / b[0];
        c_prime[0] = c[0] * inv_denom[0];
        for i in 1..n {
            let denom = b[i] - a[i] * c_prime[i - 1];
            inv_denom[i] = 1.0 / denom;
            c_prime[i] = c[i] * inv_denom[i];
        }
        Tridiagonal {
            a: a.to_vec(),
            c_prime,
            inv_denom,
        }
    }

    /// Solves in place.
    pub fn solve(&self, rhs: &mut [f64]) {
        let n = rhs.len();
        rhs[0] *= self.inv_denom[0];
        for i in 1..n {
            rhs[i] = (rhs[i] - self.a[i] * rhs[i - 1]) * self.inv_denom[i];
        }
        for i in (0..n - 1).rev() {
            rhs[i] -= self.c_prime[i] * rhs[i + 1];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_against_dense_product() {
        let n = 7;
        let a: Vec<f64> = (0..n).map(|i| -0.3 - 0.01 * i as f64).collect();
        let b: Vec<f64> = (0..n).map(|i| 2.0 + 0.1 * i as f64).collect();
        let c: Vec<f64> = (0..n).map(|i| -0.5 + 0.02 * i as f64).collect();
        let x: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let mut rhs: Vec<f64> = (0..n)
            .map(|i| {
                let mut v = b[i] * x[i];
                if i > 0 {
                    v += a[i] * x[i - 1];
                }
                if i + 1 < n {
                    v += c[i] * x[i + 1];
                }
                v
            })
            .collect();
        Tridiagonal::factor(&a, &b, &c).solve(&mut rhs);
        for (u, v) in rhs.iter().zip(&x) {
            assert!((u - v).abs() < 1e-14);
        }
    }
}
