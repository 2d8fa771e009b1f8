//! End-to-end calibration: optional Stage-1 smoothing followed by Stage 2.

use serde::{Deserialize, Serialize};

use crate::dupire::{calibrate_targets, market_targets, smoothed_to_prices, CalibConfig, CalibratedModel};
use crate::error::{Error, Result};
use crate::market::MarketSurface;
use crate::smoother::{smooth_slice, SmoothedSlice, SmootherConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    /// Calibrate to the quoted mid IVs.
    Direct,
    /// Denoise every slice first, then calibrate to the smoothed IVs.
    Smoothed,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub smoother: SmootherConfig,
    pub calibration: CalibConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub smoothed: Option<Vec<SmoothedSlice>>,
    pub model: CalibratedModel,
}

/// Smooths every slice, tagging failures with the maturity index.
pub fn smooth_surface(market: &MarketSurface, config: &SmootherConfig) -> Result<Vec<SmoothedSlice>> {
    market
        .slices
        .iter()
        .enumerate()
        .map(|(i, s)| {
            smooth_slice(s, config).map_err(|e| Error::Maturity {
                index: i,
                maturity: s.maturity,
                source: Box::new(e),
            })
        })
        .collect()
}

/// Stage 2 on already smoothed slices, or on the mids when `smoothed` is None.
pub fn calibrate_with(
    market: &MarketSurface,
    smoothed: Option<&[SmoothedSlice]>,
    config: &CalibConfig,
) -> Result<CalibratedModel> {
    market.validate()?;
    let targets = match smoothed {
        Some(s) => smoothed_to_prices(s, market)?,
        None => market_targets(market),
    };
    calibrate_targets(&market.env, &targets, config)
}

pub fn run_pipeline(market: &MarketSurface, pipeline: Pipeline, config: &PipelineConfig) -> Result<PipelineOutput> {
    let smoothed = match pipeline {
        Pipeline::Direct => None,
        Pipeline::Smoothed => Some(smooth_surface(market, &config.smoother)?),
    };
    let model = calibrate_with(market, smoothed.as_deref(), &config.calibration)?;
    Ok(PipelineOutput { smoothed, model })
}
