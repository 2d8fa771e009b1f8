//! Implicit finite-difference propagation of the normalized Dupire equation
//! dC/dt = 0.5 sigma^2 k^2 d2C/dk2.

use super::grid::FdGrid;
use crate::interp::linear_flat;
use crate::tridiag::Tridiagonal;

/// Factored implicit-Euler operator (I - dt A) for one sub-step.
#[derive(Debug, Clone)]
pub struct ImplicitStep {
    lu: Tridiagonal,
    k_lo: f64,
}

impl ImplicitStep {
    /// `sigma_nodes` are local volatilities at the grid nodes.
    pub fn new(grid: &FdGrid, sigma_nodes: &[f64], dt: f64) -> Self {
        let n = grid.len();
        let mut a = vec![0.0; n];
        let mut b = vec![1.0; n];
        let mut c = vec![0.0; n];
        let inv_dk2 = 1.0 / (grid.dk * grid.dk);
        for i in 1..n - 1 {
            let k = grid.k[i];
            let coef = 0.5 * sigma_nodes[i] * sigma_nodes[i] * k * k * inv_dk2 * dt;
            a[i] = -coef;
            b[i] = 1.0 + 2.0 * coef;
            c[i] = -coef;
        }
        ImplicitStep {
            lu: Tridiagonal::factor(&a, &b, &c),
            k_lo: grid.k_lo(),
        }
    }

    /// One sub-step in place with Dirichlet values 1 - k_lo and 0.
    pub fn apply(&self, c: &mut [f64]) {
        let n = c.len();
        c[0] = 1.0 - self.k_lo;
        c[n - 1] = 0.0;
        self.lu.solve(c);
    }
}

/// Interpolates knot volatilities onto the grid nodes.
pub fn sigma_on_nodes(grid: &FdGrid, knots: &[f64], sigma: &[f64]) -> Vec<f64> {
    grid.k.iter().map(|&k| linear_flat(knots, sigma, k)).collect()
}

/// Advances normalized prices over `dt` with volatility constant in time and
/// piecewise linear in k on `knots`. The interval is split into
/// `grid.substeps(dt)` equal implicit-Euler steps.
pub fn fd_step(c_prev: &[f64], knots: &[f64], sigma: &[f64], dt: f64, grid: &FdGrid) -> Vec<f64> {
    let nodes = sigma_on_nodes(grid, knots, sigma);
    fd_step_nodes(c_prev, &nodes, dt, grid, grid.substeps(dt))
}

/// As [`fd_step`] with node volatilities and an explicit sub-step count.
pub fn fd_step_nodes(c_prev: &[f64], sigma_nodes: &[f64], dt: f64, grid: &FdGrid, substeps: usize) -> Vec<f64> {
    let step = ImplicitStep::new(grid, sigma_nodes, dt / substeps as f64);
    let mut c = c_prev.to_vec();
    for _ in 0..substeps {
        step.apply(&mut c);
    }
    c
}
