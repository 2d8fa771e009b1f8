//! Error type shared by every stage of the pipeline.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    /// Input outside the mathematical domain of an operation (e.g. a price
    /// outside the no-arbitrage band, a strike outside the calibrated grid).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("no convergence after {iterations} iterations: {message}")]
    Convergence { iterations: usize, message: String },

    /// Fewer points with positive kernel weight than coefficients to fit.
    #[error(
        "rank deficient local fit at k={center}: {effective} weighted points for order {order}; increase the bandwidth (h={bandwidth})"
    )]
    Rank {
        center: f64,
        order: usize,
        bandwidth: f64,
        effective: usize,
    },

    #[error("ill-conditioned moment matrix at k={center} (condition estimate {condition:.3e})")]
    Conditioning { center: f64, condition: f64 },

    #[error("zero kernel mass at k={center}; increase the bandwidth (h={bandwidth})")]
    ZeroMass { center: f64, bandwidth: f64 },

    #[error("selection failed: {0}")]
    Selection(String),

    #[error("degenerate design density: {0}")]
    DegenerateDensity(String),

    #[error("smoothing failed at strikes {strikes:?}: {message}")]
    Smoothing { strikes: Vec<f64>, message: String },

    #[error("data generation failed: {0}")]
    Generation(String),

    /// The damped Gauss-Newton iteration stopped improving. The best
    /// parameters found so far are attached so callers can decide whether to
    /// accept them.
    #[error("calibration stagnated at objective {best_objective:.6e} after {iterations} iterations")]
    Stagnation {
        best_sigma: Vec<f64>,
        best_objective: f64,
        iterations: usize,
    },

    #[error("calibration failed for maturity index {index} (T={maturity}): {source}")]
    Maturity {
        index: usize,
        maturity: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("profile failed at spot {spot}: {source}")]
    Profile {
        spot: f64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
