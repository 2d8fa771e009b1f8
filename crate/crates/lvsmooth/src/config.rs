//! Experiment configuration (a single JSON document).

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use lvsmooth_core::market::MarketEnv;
use lvsmooth_core::pipeline::PipelineConfig;
use lvsmooth_core::pricing::{AsianSpec, McConfig, DEFAULT_BUCKET_EDGES};
use lvsmooth_core::synthetic::{SviParams, WShapeConfig};

use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    SviIdeal,
    SviNoisyDirect,
    SviNoisySmoothed,
    SviSeedStability,
    WShapeDirect,
    WShapeRegularized,
    WShapeSmoothed,
    GreeksEuropean,
    GreeksAsian,
    FlatVolRoundtrip,
}

impl Experiment {
    pub const ALL: [Experiment; 10] = [
        Experiment::SviIdeal,
        Experiment::SviNoisyDirect,
        Experiment::SviNoisySmoothed,
        Experiment::SviSeedStability,
        Experiment::WShapeDirect,
        Experiment::WShapeRegularized,
        Experiment::WShapeSmoothed,
        Experiment::GreeksEuropean,
        Experiment::GreeksAsian,
        Experiment::FlatVolRoundtrip,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::SviIdeal => "svi_ideal",
            Experiment::SviNoisyDirect => "svi_noisy_direct",
            Experiment::SviNoisySmoothed => "svi_noisy_smoothed",
            Experiment::SviSeedStability => "svi_seed_stability",
            Experiment::WShapeDirect => "w_shape_direct",
            Experiment::WShapeRegularized => "w_shape_regularized",
            Experiment::WShapeSmoothed => "w_shape_smoothed",
            Experiment::GreeksEuropean => "greeks_european",
            Experiment::GreeksAsian => "greeks_asian",
            Experiment::FlatVolRoundtrip => "flat_vol_roundtrip",
        }
    }

    pub fn uses_noise(self) -> bool {
        matches!(
            self,
            Experiment::SviNoisyDirect
                | Experiment::SviNoisySmoothed
                | Experiment::SviSeedStability
                | Experiment::GreeksEuropean
                | Experiment::GreeksAsian
        )
    }
}

impl FromStr for Experiment {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Experiment::ALL.iter().map(|e| e.name()).collect();
                HarnessError::Usage(format!("unknown experiment '{s}'; expected one of {}", names.join(", ")))
            })
    }
}

impl std::fmt::Display for Experiment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// SVI market: one maturity sampled on a uniform strike grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SviMarketConfig {
    pub params: SviParams,
    pub maturity: f64,
    pub strike_lo: f64,
    pub strike_hi: f64,
    pub strike_count: usize,
    pub noise_stddev: f64,
}

impl Default for SviMarketConfig {
    fn default() -> Self {
        SviMarketConfig {
            params: SviParams::default(),
            maturity: 1.0,
            strike_lo: 0.5,
            strike_hi: 1.5,
            strike_count: 101,
            noise_stddev: 0.001,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlatVolConfig {
    pub sigma: f64,
    pub maturity: f64,
    pub strike_lo: f64,
    pub strike_hi: f64,
    pub strike_count: usize,
}

impl Default for FlatVolConfig {
    fn default() -> Self {
        FlatVolConfig {
            sigma: 0.2,
            maturity: 1.0,
            strike_lo: 0.5,
            strike_hi: 1.5,
            strike_count: 41,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpotGrid {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GreeksConfig {
    pub european_strike: f64,
    pub european_maturity: f64,
    pub european_spots: SpotGrid,
    pub asian: AsianSpec,
    pub asian_spots: SpotGrid,
}

impl Default for GreeksConfig {
    fn default() -> Self {
        GreeksConfig {
            european_strike: 1.0,
            european_maturity: 1.0,
            european_spots: SpotGrid {
                lo: 0.5,
                hi: 1.5,
                step: 0.02,
            },
            asian: AsianSpec {
                strike: 1.0,
                maturity: 1.0,
                monitoring: 12,
            },
            asian_spots: SpotGrid {
                lo: 0.8,
                hi: 1.2,
                step: 0.02,
            },
        }
    }
}

/// Pass/fail thresholds evaluated by the experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    /// Max |sigma_LV - sigma| on knots inside `interior` for the flat round trip.
    pub flat_sigma_tol: f64,
    /// Max per-bucket calibration error (percent) for the flat round trip.
    pub flat_bucket_error_pct: f64,
    /// Normalized-strike range whose knots enter knot-wise comparisons.
    pub interior: [f64; 2],
    /// Max per-bucket calibration error (percent) of the smoothed pipeline.
    pub bucket_error_pct: f64,
    pub seed_stability: f64,
    pub gamma_tv_ratio: f64,
    pub fail_ratio: f64,
    pub regularized_lambda: f64,
    pub regularized_rms_factor: f64,
    pub arbitrage_tol: f64,
    pub max_smoother_iterations: usize,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            flat_sigma_tol: 5e-3,
            flat_bucket_error_pct: 0.05,
            interior: [0.7, 1.3],
            bucket_error_pct: 0.5,
            seed_stability: 0.05,
            gamma_tv_ratio: 0.5,
            fail_ratio: 0.02,
            regularized_lambda: 1e-4,
            regularized_rms_factor: 2.0,
            arbitrage_tol: 1e-10,
            max_smoother_iterations: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Option<Experiment>,
    pub seeds: Vec<u64>,
    pub output_dir: Option<PathBuf>,
    pub market: MarketEnv,
    pub svi: SviMarketConfig,
    pub flat_vol: FlatVolConfig,
    pub w_shape: WShapeConfig,
    /// Quote CSV replacing the synthetic W-shaped market (licensed data path).
    pub w_shape_csv: Option<PathBuf>,
    pub pipeline: PipelineConfig,
    pub regularization_lambdas: Vec<f64>,
    pub bucket_edges: Vec<f64>,
    pub greeks: GreeksConfig,
    pub mc: McConfig,
    pub thresholds: Thresholds,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            experiment: None,
            seeds: vec![11, 12],
            output_dir: None,
            market: MarketEnv {
                spot: 1.0,
                rate: 0.0,
                dividend: 0.0,
            },
            svi: SviMarketConfig::default(),
            flat_vol: FlatVolConfig::default(),
            w_shape: WShapeConfig::default(),
            w_shape_csv: None,
            pipeline: PipelineConfig::default(),
            regularization_lambdas: vec![1e-6, 1e-5, 1e-4],
            bucket_edges: DEFAULT_BUCKET_EDGES.to_vec(),
            greeks: GreeksConfig::default(),
            mc: McConfig::default(),
            thresholds: Thresholds::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        if let (Some(csv), Some(dir)) = (&cfg.w_shape_csv, path.parent()) {
            if csv.is_relative() {
                cfg.w_shape_csv = Some(dir.join(csv));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self, experiment: Experiment) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if experiment.uses_noise() && self.seeds.is_empty() {
            return bad(format!("experiment {experiment} needs at least one seed"));
        }
        if experiment == Experiment::SviSeedStability && self.seeds.len() < 2 {
            return bad("svi_seed_stability needs two seeds".into());
        }
        if let Some(p) = &self.w_shape_csv {
            if !p.exists() {
                return bad(format!("w_shape_csv {} does not exist", p.display()));
            }
        }
        if self.bucket_edges.windows(2).any(|w| w[1] <= w[0]) {
            return bad("bucket_edges must be strictly increasing".into());
        }
        self.market.validate().map_err(HarnessError::Core)?;
        self.pipeline.smoother.validate().map_err(HarnessError::Core)?;
        self.pipeline.calibration.validate().map_err(HarnessError::Core)?;
        self.mc.validate().map_err(HarnessError::Core)?;
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}
