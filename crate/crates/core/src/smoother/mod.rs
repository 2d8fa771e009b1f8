//! Stage 1: automatic local polynomial denoising of one maturity slice.
//!
//! Each quoted strike gets its own polynomial order and bandwidth, chosen by
//! alternately minimising the finite-sample conditional MSE over the order and
//! the asymptotic conditional MSE over the bandwidth. Pilot quantities
//! (high-order fits, residual variance, design density) are computed once per
//! slice in a [`SmoothingContext`].

pub mod acmse;
pub mod density;
pub mod driver;
pub mod fit;
pub mod kernel;
pub mod pilot;

pub use acmse::{acmse, asymptotic_z, select_bandwidth, select_order, AcmseReport, AsymptoticInputs, BandwidthChoice};
pub use density::{design_density, DesignDensity};
pub use driver::{smooth_point, smooth_slice, SampleSize, SmoothedPoint, SmoothedSlice, SmootherConfig, SmoothingContext};
pub use fit::{local_fit, LocalFit};
pub use kernel::{kernel_constants, Kernel, KernelConstants};
pub use pilot::{
    candidate_grid, estimate_variance, pilot_bandwidth_cv, pseudo_nw_variance, CvSelection, PilotEstimate, VarianceEstimate,
    VarianceMode,
};

use crate::error::{Error, Result};
use crate::market::QuoteSlice;

/// Strike-sorted observations of one slice.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceData {
    pub strikes: Vec<f64>,
    pub ivs: Vec<f64>,
    pub volumes: Vec<f64>,
}

impl SliceData {
    /// Unit volumes.
    pub fn new(strikes: Vec<f64>, ivs: Vec<f64>) -> Result<Self> {
        let n = strikes.len();
        Self::with_volumes(strikes, ivs, vec![1.0; n])
    }

    /// Sorts by strike and rejects duplicates or non-finite values.
    pub fn with_volumes(strikes: Vec<f64>, ivs: Vec<f64>, volumes: Vec<f64>) -> Result<Self> {
        if strikes.len() != ivs.len() || strikes.len() != volumes.len() {
            return Err(Error::Validation("strike, IV and volume lengths differ".into()));
        }
        if strikes.iter().chain(&ivs).chain(&volumes).any(|x| !x.is_finite()) {
            return Err(Error::Validation("slice data must be finite".into()));
        }
        if volumes.iter().any(|&v| v < 0.0) {
            return Err(Error::Validation("volumes must be non-negative".into()));
        }
        let mut order: Vec<usize> = (0..strikes.len()).collect();
        order.sort_by(|&a, &b| strikes[a].total_cmp(&strikes[b]));
        let data = SliceData {
            strikes: order.iter().map(|&i| strikes[i]).collect(),
            ivs: order.iter().map(|&i| ivs[i]).collect(),
            volumes: order.iter().map(|&i| volumes[i]).collect(),
        };
        if let Some(w) = data.strikes.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::Validation(format!("duplicate strike {}", w[0])));
        }
        Ok(data)
    }

    pub fn from_slice(slice: &QuoteSlice) -> Result<Self> {
        Self::with_volumes(
            slice.strikes(),
            slice.ivs(),
            slice.quotes.iter().map(|q| q.volume).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.strikes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strikes.is_empty()
    }

    /// Volumes with zeros counted as one trade.
    pub fn density_weights(&self) -> Vec<f64> {
        self.volumes.iter().map(|&v| if v > 0.0 { v } else { 1.0 }).collect()
    }

    /// True when any volume differs from one.
    pub fn volumes_informative(&self) -> bool {
        self.volumes.iter().any(|&v| v != 1.0)
    }

    pub fn index_of(&self, k: f64) -> Option<usize> {
        self.strikes.binary_search_by(|x| x.total_cmp(&k)).ok()
    }
}
