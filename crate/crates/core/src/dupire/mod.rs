//! Stage 2: implicit finite-difference calibration of local volatility.
//!
//! Prices are normalized by the forward, C~(t, k) = C e^{rT} / F(0, t) with
//! k = K / F(0, t), which removes the drift from the Dupire equation. Each
//! maturity interval carries its own piecewise-linear volatility curve, fitted
//! so that implicit Euler steps from the previous slice reproduce the targets.

mod calibrate;
mod fd;
mod grid;
mod optimize;
mod surface;

pub use calibrate::{
    calibrate_regularized, calibrate_slice, calibrate_surface, calibrate_targets, lv_knots, market_targets,
    normalized_call, smoothed_to_prices, write_csv, CalibConfig, CalibratedModel, CalibrationReport, SliceFit,
    SliceReport, SliceTargets,
};
pub use fd::{fd_step, fd_step_nodes, sigma_on_nodes, ImplicitStep};
pub use grid::{FdGrid, GridSpec, MIN_NODES};
pub use optimize::{minimize, LmSolution, OptimizerConfig, StopReason};
pub use surface::{ArbitrageReport, LvInterval, LvSurface, PriceGrid};
