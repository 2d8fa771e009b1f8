//! Finite-difference grid in normalized strike and maturity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_NODES: usize = 201;

/// Grid construction rules. With `k_hi = None` the upper edge is
/// max(default_k_hi, 1.5 * 1.05 * max quoted k) and the node count grows to keep
/// the default spacing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub k_lo: f64,
    pub k_hi: Option<f64>,
    pub default_k_hi: f64,
    pub nodes: usize,
    /// Implicit-Euler sub-steps per year inside each maturity interval.
    pub steps_per_year: f64,
    /// Lower bound on the sub-steps of any interval.
    pub min_substeps: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            k_lo: 0.0,
            k_hi: None,
            default_k_hi: 3.0,
            nodes: 401,
            steps_per_year: 100.0,
            min_substeps: 20,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.k_lo >= 0.0) || self.nodes < MIN_NODES || !(self.steps_per_year > 0.0) || self.min_substeps == 0 {
            return Err(Error::Validation(format!(
                "grid needs k_lo >= 0, at least {MIN_NODES} nodes and positive sub-stepping"
            )));
        }
        Ok(())
    }

    /// Upper edge and node count for quoted normalized strikes up to `max_k`.
    pub fn resolve(&self, max_k: f64) -> (f64, usize) {
        match self.k_hi {
            Some(hi) => (hi, self.nodes),
            None => {
                let base_dk = (self.default_k_hi - self.k_lo) / (self.nodes - 1) as f64;
                let hi = self.default_k_hi.max(1.5 * 1.05 * max_k);
                let nodes = (((hi - self.k_lo) / base_dk).ceil() as usize + 1).max(self.nodes);
                (self.k_lo + (nodes - 1) as f64 * base_dk, nodes)
            }
        }
    }

    /// Builds the grid for quoted normalized strikes spanning [min_k, max_k].
    pub fn build(&self, min_k: f64, max_k: f64, maturities: &[f64]) -> Result<FdGrid> {
        self.validate()?;
        let (hi, nodes) = self.resolve(max_k);
        if !(hi > 1.5 * max_k) {
            return Err(Error::Validation(format!(
                "grid upper edge {hi} must exceed 1.5 x the largest normalized strike {max_k}"
            )));
        }
        let dk = (hi - self.k_lo) / (nodes - 1) as f64;
        if !(min_k > self.k_lo + dk) {
            return Err(Error::Validation(format!(
                "normalized strike {min_k} is not interior to the grid starting at {}",
                self.k_lo
            )));
        }
        if maturities.is_empty() || maturities[0] <= 0.0 || maturities.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Validation("maturities must be positive and strictly increasing".into()));
        }
        let k = (0..nodes).map(|i| self.k_lo + i as f64 * dk).collect();
        let mut t = Vec::with_capacity(maturities.len() + 1);
        t.push(0.0);
        t.extend_from_slice(maturities);
        Ok(FdGrid {
            k,
            dk,
            t,
            steps_per_year: self.steps_per_year,
            min_substeps: self.min_substeps,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdGrid {
    /// Uniform normalized-strike nodes.
    pub k: Vec<f64>,
    pub dk: f64,
    /// 0 followed by the quoted maturities.
    pub t: Vec<f64>,
    pub steps_per_year: f64,
    pub min_substeps: usize,
}

impl FdGrid {
    pub fn k_lo(&self) -> f64 {
        self.k[0]
    }

    pub fn k_hi(&self) -> f64 {
        self.k[self.k.len() - 1]
    }

    pub fn len(&self) -> usize {
        self.k.len()
    }

    pub fn is_empty(&self) -> bool {
        self.k.is_empty()
    }

    /// Implicit-Euler sub-steps used over a time span `dt`.
    pub fn substeps(&self, dt: f64) -> usize {
        ((dt * self.steps_per_year).ceil() as usize).max(self.min_substeps)
    }

    /// Normalized payoff max(1 - k, 0).
    pub fn payoff(&self) -> Vec<f64> {
        self.k.iter().map(|&k| (1.0 - k).max(0.0)).collect()
    }
}
