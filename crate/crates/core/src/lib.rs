//! Local-volatility calibration with automatic local polynomial denoising of
//! implied-volatility quotes.
//!
//! The pipeline has two stages. [`smoother`] denoises each maturity slice of
//! IV quotes with per-strike data-driven polynomial order and bandwidth.
//! [`dupire`] converts the smoothed quotes to prices and calibrates a local
//! volatility surface by implicit finite-difference inversion of the
//! normalized Dupire equation, one maturity interval at a time. [`pricing`]
//! and [`greeks`] price instruments under the calibrated surface.

pub mod black_scholes;
pub mod dupire;
pub mod error;
pub mod greeks;
pub mod interp;
pub mod market;
pub mod pipeline;
pub mod pricing;
pub mod smoother;
pub mod synthetic;
pub mod tridiag;

pub use error::{Error, Result};
