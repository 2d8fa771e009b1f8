//! Option quote data model and CSV ingestion.
//!
//! Quotes are carried as implied volatilities. A [`MarketSurface`] groups them
//! into maturity slices with strictly increasing strikes; the flat
//! rate/dividend environment lives in [`MarketEnv`] because the quote file
//! only carries per-option columns.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Header of the quote CSV, in column order.
pub const CSV_HEADER: [&str; 6] = ["maturity", "strike", "iv_mid", "iv_bid", "iv_ask", "volume"];

/// Smallest slice the smoother accepts: the highest candidate order (3) plus two.
pub const MIN_QUOTES_PER_SLICE: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quote {
    pub strike: f64,
    pub maturity: f64,
    pub iv_mid: f64,
    pub iv_bid: Option<f64>,
    pub iv_ask: Option<f64>,
    pub volume: f64,
}

impl Quote {
    pub fn new(strike: f64, maturity: f64, iv_mid: f64) -> Self {
        Quote {
            strike,
            maturity,
            iv_mid,
            iv_bid: None,
            iv_ask: None,
            volume: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let describe = || format!("quote (K={}, T={})", self.strike, self.maturity);
        if !(self.strike.is_finite() && self.strike > 0.0) {
            return Err(Error::Validation(format!("{}: strike must be > 0", describe())));
        }
        if !(self.maturity.is_finite() && self.maturity > 0.0) {
            return Err(Error::Validation(format!("{}: maturity must be > 0", describe())));
        }
        if !(self.iv_mid.is_finite() && self.iv_mid > 0.0) {
            return Err(Error::Validation(format!("{}: iv_mid must be > 0", describe())));
        }
        if !(self.volume.is_finite() && self.volume >= 0.0) {
            return Err(Error::Validation(format!("{}: volume must be >= 0", describe())));
        }
        for (name, v) in [("iv_bid", self.iv_bid), ("iv_ask", self.iv_ask)] {
            if let Some(v) = v {
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::Validation(format!("{}: {name} must be >= 0", describe())));
                }
            }
        }
        if let (Some(bid), Some(ask)) = (self.iv_bid, self.iv_ask) {
            if !(bid <= self.iv_mid && self.iv_mid <= ask) {
                return Err(Error::Validation(format!(
                    "{}: requires iv_bid <= iv_mid <= iv_ask, got {bid} / {} / {ask}",
                    describe(),
                    self.iv_mid
                )));
            }
        }
        Ok(())
    }

    /// Volume used for design-density weighting; zero volume counts as one trade.
    pub fn density_weight(&self) -> f64 {
        if self.volume > 0.0 {
            self.volume
        } else {
            1.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuoteSlice {
    pub maturity: f64,
    pub quotes: Vec<Quote>,
}

impl QuoteSlice {
    /// Sorts the quotes by strike and validates the slice.
    pub fn new(maturity: f64, mut quotes: Vec<Quote>) -> Result<Self> {
        quotes.sort_by(|a, b| a.strike.total_cmp(&b.strike));
        let slice = QuoteSlice { maturity, quotes };
        slice.validate()?;
        Ok(slice)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.maturity.is_finite() && self.maturity > 0.0) {
            return Err(Error::Validation(format!(
                "slice maturity must be > 0, got {}",
                self.maturity
            )));
        }
        if self.quotes.len() < MIN_QUOTES_PER_SLICE {
            return Err(Error::Validation(format!(
                "slice T={} has {} quotes; at least {MIN_QUOTES_PER_SLICE} required",
                self.maturity,
                self.quotes.len()
            )));
        }
        for q in &self.quotes {
            q.validate()?;
            if q.maturity != self.maturity {
                return Err(Error::Validation(format!(
                    "quote K={} has maturity {} inside slice T={}",
                    q.strike, q.maturity, self.maturity
                )));
            }
        }
        for pair in self.quotes.windows(2) {
            if pair[1].strike <= pair[0].strike {
                return Err(Error::Validation(format!(
                    "slice T={}: strikes must be strictly increasing (duplicate or unsorted strike {})",
                    self.maturity, pair[1].strike
                )));
            }
        }
        Ok(())
    }

    pub fn strikes(&self) -> Vec<f64> {
        self.quotes.iter().map(|q| q.strike).collect()
    }

    pub fn ivs(&self) -> Vec<f64> {
        self.quotes.iter().map(|q| q.iv_mid).collect()
    }

    /// Copy of the slice with every mid IV replaced, keeping bid/ask and volume.
    pub fn with_ivs(&self, ivs: &[f64]) -> Result<Self> {
        if ivs.len() != self.quotes.len() {
            return Err(Error::Validation(format!(
                "expected {} IVs, got {}",
                self.quotes.len(),
                ivs.len()
            )));
        }
        let quotes = self
            .quotes
            .iter()
            .zip(ivs)
            .map(|(q, &iv)| Quote {
                iv_mid: iv,
                iv_bid: None,
                iv_ask: None,
                ..*q
            })
            .collect();
        QuoteSlice::new(self.maturity, quotes)
    }
}

/// Flat-curve market environment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketEnv {
    pub spot: f64,
    pub rate: f64,
    pub dividend: f64,
}

impl MarketEnv {
    pub fn new(spot: f64, rate: f64, dividend: f64) -> Result<Self> {
        let env = MarketEnv {
            spot,
            rate,
            dividend,
        };
        env.validate()?;
        Ok(env)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.spot.is_finite() && self.spot > 0.0) {
            return Err(Error::Validation(format!("spot must be > 0, got {}", self.spot)));
        }
        if !self.rate.is_finite() || !self.dividend.is_finite() {
            return Err(Error::Validation("rate and dividend must be finite".into()));
        }
        Ok(())
    }

    /// Forward F(0, t) = S0 exp((r - d) t).
    pub fn forward(&self, t: f64) -> f64 {
        self.spot * ((self.rate - self.dividend) * t).exp()
    }

    pub fn discount(&self, t: f64) -> f64 {
        (-self.rate * t).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketSurface {
    pub env: MarketEnv,
    pub slices: Vec<QuoteSlice>,
}

impl MarketSurface {
    pub fn new(env: MarketEnv, mut slices: Vec<QuoteSlice>) -> Result<Self> {
        slices.sort_by(|a, b| a.maturity.total_cmp(&b.maturity));
        let surface = MarketSurface { env, slices };
        surface.validate()?;
        Ok(surface)
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        if self.slices.is_empty() {
            return Err(Error::Validation("surface has no maturity slices".into()));
        }
        for s in &self.slices {
            s.validate()?;
        }
        for pair in self.slices.windows(2) {
            if pair[1].maturity <= pair[0].maturity {
                return Err(Error::Validation(format!(
                    "maturities must be strictly increasing, found {} after {}",
                    pair[1].maturity, pair[0].maturity
                )));
            }
        }
        Ok(())
    }

    pub fn maturities(&self) -> Vec<f64> {
        self.slices.iter().map(|s| s.maturity).collect()
    }

    /// Same quotes under a different spot (sticky-strike bump).
    pub fn with_spot(&self, spot: f64) -> Result<Self> {
        let env = MarketEnv::new(spot, self.env.rate, self.env.dividend)?;
        Ok(MarketSurface {
            env,
            slices: self.slices.clone(),
        })
    }
}

fn parse_cell(cell: &str, column: &str, line: usize) -> Result<Option<f64>> {
    let cell = cell.trim();
    if cell.is_empty() {
        return Ok(None);
    }
    cell.parse::<f64>().map(Some).map_err(|e| Error::Parse {
        line,
        message: format!("column {column}: cannot parse {cell:?} as a number ({e})"),
    })
}

fn required(value: Option<f64>, column: &str, line: usize) -> Result<f64> {
    value.ok_or_else(|| Error::Parse {
        line,
        message: format!("column {column} is required"),
    })
}

/// Reads a quote CSV (`maturity,strike,iv_mid,iv_bid,iv_ask,volume`).
///
/// Rows may appear in any order; they are grouped by maturity and sorted by
/// strike. Duplicate (strike, maturity) pairs are rejected.
pub fn load_surface(path: impl AsRef<Path>, env: MarketEnv) -> Result<MarketSurface> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_surface(file, env)
}

pub fn read_surface<R: std::io::Read>(reader: R, env: MarketEnv) -> Result<MarketSurface> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers().map_err(|e| Error::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    let found: Vec<&str> = header.iter().collect();
    if found != CSV_HEADER {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header {:?}, found {:?}", CSV_HEADER.join(","), found.join(",")),
        });
    }

    let mut groups: BTreeMap<u64, Vec<(usize, Quote)>> = BTreeMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() != CSV_HEADER.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", CSV_HEADER.len(), record.len()),
            });
        }
        let cells: Vec<Option<f64>> = CSV_HEADER
            .iter()
            .zip(record.iter())
            .map(|(col, cell)| parse_cell(cell, col, line))
            .collect::<Result<_>>()?;
        let quote = Quote {
            maturity: required(cells[0], "maturity", line)?,
            strike: required(cells[1], "strike", line)?,
            iv_mid: required(cells[2], "iv_mid", line)?,
            iv_bid: cells[3],
            iv_ask: cells[4],
            volume: required(cells[5], "volume", line)?,
        };
        quote
            .validate()
            .map_err(|e| Error::Validation(format!("line {line}: {e}")))?;
        groups.entry(quote.maturity.to_bits()).or_default().push((line, quote));
    }

    let mut slices = Vec::with_capacity(groups.len());
    for (_, mut rows) in groups {
        rows.sort_by(|a, b| a.1.strike.total_cmp(&b.1.strike));
        for pair in rows.windows(2) {
            if pair[0].1.strike == pair[1].1.strike {
                return Err(Error::Validation(format!(
                    "line {}: duplicate quote for strike {} maturity {} (first seen on line {})",
                    pair[1].0, pair[1].1.strike, pair[1].1.maturity, pair[0].0
                )));
            }
        }
        let maturity = rows[0].1.maturity;
        let quotes = rows.into_iter().map(|(_, q)| q).collect();
        slices.push(QuoteSlice::new(maturity, quotes)?);
    }
    MarketSurface::new(env, slices)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes the quotes of `surface` in the CSV schema of [`load_surface`].
///
/// Values are written in shortest round-trip form, so reloading reproduces
/// every field bit-for-bit. The surface is validated before anything is
/// written.
pub fn save_surface(surface: &MarketSurface, path: impl AsRef<Path>) -> Result<()> {
    surface.validate()?;
    let path = path.as_ref();
    let mut out = String::new();
    out.push_str(&CSV_HEADER.join(","));
    out.push('\n');
    for slice in &surface.slices {
        for q in &slice.quotes {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                q.maturity,
                q.strike,
                q.iv_mid,
                fmt_opt(q.iv_bid),
                fmt_opt(q.iv_ask),
                q.volume
            ));
        }
    }
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env() -> MarketEnv {
        MarketEnv::new(1.0, 0.0, 0.0).unwrap()
    }

    fn csv_for(maturities: &[f64], strikes: usize) -> String {
        let mut s = CSV_HEADER.join(",") + "\n";
        for &t in maturities.iter().rev() {
            for i in (0..strikes).rev() {
                let k = 0.5 + i as f64 * 0.05;
                s.push_str(&format!("{t},{k},0.2,0.19,0.21,{}\n", i * 10));
            }
        }
        s
    }

    #[test]
    fn groups_and_sorts_rows() {
        let surface = read_surface(csv_for(&[0.25, 0.5, 1.0], 20).as_bytes(), env()).unwrap();
        assert_eq!(surface.slices.len(), 3);
        assert_eq!(surface.maturities(), vec![0.25, 0.5, 1.0]);
        for s in &surface.slices {
            assert_eq!(s.quotes.len(), 20);
            assert!(s.quotes.windows(2).all(|w| w[0].strike < w[1].strike));
        }
    }

    #[test]
    fn bid_above_ask_names_the_line() {
        let mut text = csv_for(&[1.0], 6);
        text.push_str("2.0,1.0,0.2,0.25,0.22,1\n");
        let err = read_surface(text.as_bytes(), env()).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Validation(_)), "{msg}");
        assert!(msg.contains("line 8"), "{msg}");
    }

    #[test]
    fn duplicate_strike_rejected() {
        let mut text = csv_for(&[1.0], 6);
        text.push_str("1,0.5,0.21,,,3\n");
        let err = read_surface(text.as_bytes(), env()).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn malformed_row_is_a_parse_error() {
        let mut text = csv_for(&[1.0], 6);
        text.push_str("1.0,abc,0.2,,,1\n");
        match read_surface(text.as_bytes(), env()).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 8),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn wrong_header_rejected() {
        let text = "maturity,strike,iv,bid,ask,volume\n1,1,0.2,,,1\n";
        assert!(matches!(
            read_surface(text.as_bytes(), env()),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn too_few_quotes_in_slice() {
        let text = csv_for(&[1.0], 4);
        let err = read_surface(text.as_bytes(), env()).unwrap_err();
        assert!(err.to_string().contains("at least"), "{err}");
    }

    #[test]
    fn empty_surface_is_not_written() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.csv");
        let surface = MarketSurface {
            env: env(),
            slices: vec![],
        };
        assert!(save_surface(&surface, &path).is_err());
        assert!(!path.exists());
    }

    #[test]
    fn absent_bid_ask_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.csv");
        let quotes = (0..6)
            .map(|i| Quote::new(0.8 + 0.1 * i as f64, 0.75, 0.2 + 0.001 * i as f64))
            .collect();
        let surface = MarketSurface::new(env(), vec![QuoteSlice::new(0.75, quotes).unwrap()]).unwrap();
        save_surface(&surface, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.lines().nth(1).unwrap().contains(",,,"));
        assert_eq!(load_surface(&path, env()).unwrap(), surface);
    }

    #[test]
    fn zero_volume_weights_as_one() {
        let mut q = Quote::new(1.0, 1.0, 0.2);
        q.volume = 0.0;
        assert_eq!(q.density_weight(), 1.0);
        q.volume = 7.0;
        assert_eq!(q.density_weight(), 7.0);
    }
}
