//! The ten experiments. Each writes its artifacts under `<out>/<name>/` and
//! returns the threshold checks evaluated on them.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use lvsmooth_core::dupire::{calibrate_regularized, write_csv, CalibratedModel, LvSurface};
use lvsmooth_core::greeks::{
    profile_from_values, profile_points, spot_grid, stability_metric, total_variation, GreeksProfile, Instrument,
    ProfilePoint,
};
use lvsmooth_core::market::{load_surface, MarketSurface, Quote, QuoteSlice};
use lvsmooth_core::pipeline::{run_pipeline, Pipeline, PipelineOutput};
use lvsmooth_core::pricing::{calibration_error, FitReport};
use lvsmooth_core::smoother::SmoothedSlice;
use lvsmooth_core::synthetic::{make_svi_slice, make_w_slice, uniform_grid, NoiseSpec};

use crate::config::{Experiment, ExperimentConfig, SpotGrid, Thresholds};
use crate::{write_json, HarnessError};

type Result<T> = std::result::Result<T, HarnessError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
}

impl Relation {
    pub fn symbol(self) -> &'static str {
        match self {
            Relation::Lt => "<",
            Relation::Le => "<=",
            Relation::Gt => ">",
            Relation::Ge => ">=",
        }
    }
}

/// One thresholded quantity. `value` is `None` when it could not be computed
/// (e.g. a fail ratio without bid/ask quotes), which counts as a failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: Option<f64>,
    pub relation: Relation,
    pub limit: f64,
    pub passed: bool,
}

impl Check {
    pub fn new(name: impl Into<String>, value: Option<f64>, relation: Relation, limit: f64) -> Self {
        let passed = match value {
            Some(v) if v.is_finite() => match relation {
                Relation::Lt => v < limit,
                Relation::Le => v <= limit,
                Relation::Gt => v > limit,
                Relation::Ge => v >= limit,
            },
            _ => false,
        };
        Check {
            name: name.into(),
            value: value.filter(|v| v.is_finite()),
            relation,
            limit,
            passed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub experiment: Experiment,
    pub checks: Vec<Check>,
    pub elapsed_secs: f64,
}

impl ExperimentResult {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Creates files under `<root>/<experiment>/` and remembers their paths
/// relative to `root`.
pub struct Artifacts {
    root: PathBuf,
    dir: String,
    files: Vec<String>,
}

impl Artifacts {
    pub fn new(root: &Path, experiment: Experiment) -> Self {
        Artifacts {
            root: root.to_path_buf(),
            dir: experiment.name().to_string(),
            files: Vec::new(),
        }
    }

    pub fn path(&mut self, rel: &str) -> Result<PathBuf> {
        let rel = format!("{}/{rel}", self.dir);
        let full = self.root.join(&rel);
        if let Some(parent) = full.parent() {
            std::fs::create_dir_all(parent).map_err(|e| HarnessError::io(parent, e))?;
        }
        self.files.push(rel);
        Ok(full)
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }
}

// ---------------------------------------------------------------------------
// Markets
// ---------------------------------------------------------------------------

pub fn svi_market(cfg: &ExperimentConfig, seed: Option<u64>) -> Result<MarketSurface> {
    let s = &cfg.svi;
    let strikes = uniform_grid(s.strike_lo, s.strike_hi, s.strike_count);
    let noise = seed.map(|seed| NoiseSpec::gaussian(s.noise_stddev, seed));
    let slice = make_svi_slice(&s.params, &strikes, s.maturity, &cfg.market, noise.as_ref())?;
    Ok(MarketSurface::new(cfg.market, vec![slice])?)
}

pub fn flat_market(cfg: &ExperimentConfig) -> Result<MarketSurface> {
    let f = &cfg.flat_vol;
    let quotes = uniform_grid(f.strike_lo, f.strike_hi, f.strike_count)
        .into_iter()
        .map(|k| Quote::new(k, f.maturity, f.sigma))
        .collect();
    let slice = QuoteSlice::new(f.maturity, quotes)?;
    Ok(MarketSurface::new(cfg.market, vec![slice])?)
}

/// The external quote file when configured, else the synthetic W smile.
pub fn w_market(cfg: &ExperimentConfig) -> Result<MarketSurface> {
    match &cfg.w_shape_csv {
        Some(path) => Ok(load_surface(path, cfg.w_shape.env)?),
        None => Ok(MarketSurface::new(cfg.w_shape.env, vec![make_w_slice(&cfg.w_shape)?])?),
    }
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Max |a - b| over the knots of `a` inside `range`, with `b` evaluated at
/// those knots.
pub fn interior_knot_difference(a: &LvSurface, b: &LvSurface, range: [f64; 2]) -> f64 {
    a.intervals
        .iter()
        .zip(&b.intervals)
        .flat_map(|(ia, ib)| {
            ia.knots
                .iter()
                .zip(&ia.sigma)
                .filter(|(k, _)| (range[0]..=range[1]).contains(*k))
                .map(move |(&k, &s)| (s - ib.at(k)).abs())
        })
        .fold(0.0, f64::max)
}

pub fn interior_flat_deviation(lv: &LvSurface, sigma: f64, range: [f64; 2]) -> f64 {
    lv.intervals
        .iter()
        .flat_map(|iv| iv.knots.iter().zip(&iv.sigma))
        .filter(|(k, _)| (range[0]..=range[1]).contains(*k))
        .map(|(_, s)| (s - sigma).abs())
        .fold(0.0, f64::max)
}

/// Largest increase between consecutive entries of any recorded ACMSE
/// history (<= 0 when every sequence is non-increasing) and the largest
/// iteration count.
pub fn descent_summary(slices: &[SmoothedSlice]) -> (f64, usize) {
    let points = slices.iter().flat_map(|s| &s.points);
    let rise = points
        .clone()
        .flat_map(|p| p.z_history.windows(2).map(|w| w[1] - w[0]))
        .fold(f64::NEG_INFINITY, f64::max);
    let iterations = points.map(|p| p.iterations).max().unwrap_or(0);
    (rise, iterations)
}

fn arbitrage_checks(label: &str, model: &CalibratedModel, th: &Thresholds) -> Vec<Check> {
    let rep = model.prices.arbitrage_report();
    vec![
        Check::new(
            format!("{label}min_second_difference"),
            Some(rep.min_second_difference),
            Relation::Ge,
            -th.arbitrage_tol,
        ),
        Check::new(
            format!("{label}min_calendar_difference"),
            Some(rep.min_calendar_difference),
            Relation::Ge,
            -th.arbitrage_tol,
        ),
        Check::new(
            format!("{label}min_sigma_above_floor"),
            Some(model.lv.min_sigma() - model.lv.floor),
            Relation::Ge,
            0.0,
        ),
    ]
}

fn profile_arbitrage_checks(label: &str, points: &[ProfilePoint], floor: f64, th: &Thresholds) -> Vec<Check> {
    let min = |f: fn(&ProfilePoint) -> f64| points.iter().map(f).fold(f64::INFINITY, f64::min);
    vec![
        Check::new(
            format!("{label}min_second_difference"),
            Some(min(|p| p.arbitrage.min_second_difference)),
            Relation::Ge,
            -th.arbitrage_tol,
        ),
        Check::new(
            format!("{label}min_calendar_difference"),
            Some(min(|p| p.arbitrage.min_calendar_difference)),
            Relation::Ge,
            -th.arbitrage_tol,
        ),
        Check::new(
            format!("{label}min_sigma_above_floor"),
            Some(min(|p| p.min_sigma) - floor),
            Relation::Ge,
            0.0,
        ),
    ]
}

fn bucket_checks(label: &str, fit: &FitReport, limit: f64) -> Vec<Check> {
    fit.buckets
        .iter()
        .enumerate()
        .filter(|(_, b)| b.count > 0)
        .map(|(i, b)| Check::new(format!("{label}bucket_{i}_error_pct"), b.mean_abs_rel_error_pct, Relation::Lt, limit))
        .collect()
}

fn descent_checks(label: &str, slices: &[SmoothedSlice], th: &Thresholds) -> Vec<Check> {
    let (rise, iterations) = descent_summary(slices);
    vec![
        Check::new(format!("{label}acmse_max_increase"), Some(rise.max(0.0)), Relation::Le, 0.0),
        Check::new(
            format!("{label}smoother_max_iterations"),
            Some(iterations as f64),
            Relation::Le,
            th.max_smoother_iterations as f64,
        ),
    ]
}

// ---------------------------------------------------------------------------
// Writers
// ---------------------------------------------------------------------------

fn write_model(a: &mut Artifacts, prefix: &str, model: &CalibratedModel, fit: &FitReport) -> Result<()> {
    model.write_lv_csv(a.path(&format!("{prefix}lv_surface.csv"))?)?;
    model.write_price_csv(a.path(&format!("{prefix}price_grid.csv"))?)?;
    model.write_second_difference_csv(a.path(&format!("{prefix}second_difference.csv"))?)?;
    write_json(
        &a.path(&format!("{prefix}fit_report.json"))?,
        &json!({ "fit": fit, "calibration": model.report }),
    )
}

fn write_smoothed(a: &mut Artifacts, prefix: &str, slices: &[SmoothedSlice]) -> Result<()> {
    let rows = slices.iter().flat_map(|s| {
        s.points.iter().map(move |p| {
            vec![
                s.maturity,
                p.strike,
                p.iv,
                p.p_star as f64,
                p.h_star,
                p.z_star,
                p.iterations as f64,
            ]
        })
    });
    write_csv(
        &a.path(&format!("{prefix}smoothed_slices.csv"))?,
        &["maturity", "strike", "iv", "p_star", "h_star", "z_star", "iterations"],
        rows,
    )?;
    Ok(())
}

fn write_output(a: &mut Artifacts, prefix: &str, out: &PipelineOutput, fit: &FitReport) -> Result<()> {
    if let Some(s) = &out.smoothed {
        write_smoothed(a, prefix, s)?;
    }
    write_model(a, prefix, &out.model, fit)
}

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

struct Run<'a> {
    cfg: &'a ExperimentConfig,
    art: Artifacts,
    checks: Vec<Check>,
}

impl Run<'_> {
    fn fit(&self, model: &CalibratedModel, reference: &MarketSurface) -> Result<FitReport> {
        Ok(calibration_error(model, reference, &self.cfg.bucket_edges)?)
    }

    fn pipeline(&self, market: &MarketSurface, pipeline: Pipeline) -> Result<PipelineOutput> {
        Ok(run_pipeline(market, pipeline, &self.cfg.pipeline)?)
    }

    fn arbitrage(&mut self, label: &str, model: &CalibratedModel) {
        let c = arbitrage_checks(label, model, &self.cfg.thresholds);
        self.checks.extend(c);
    }
}

/// Runs one experiment, writing artifacts below `root`. Returns the checks and
/// the list of files written (relative to `root`).
pub fn run_experiment(experiment: Experiment, cfg: &ExperimentConfig, root: &Path) -> Result<(ExperimentResult, Vec<String>)> {
    cfg.validate(experiment)?;
    let start = Instant::now();
    let mut run = Run {
        cfg,
        art: Artifacts::new(root, experiment),
        checks: Vec::new(),
    };
    let metrics = match experiment {
        Experiment::FlatVolRoundtrip => flat_vol_roundtrip(&mut run)?,
        Experiment::SviIdeal => svi_ideal(&mut run)?,
        Experiment::SviNoisyDirect => svi_noisy(&mut run, Pipeline::Direct)?,
        Experiment::SviNoisySmoothed => svi_noisy(&mut run, Pipeline::Smoothed)?,
        Experiment::SviSeedStability => svi_seed_stability(&mut run)?,
        Experiment::WShapeDirect => w_shape(&mut run, Pipeline::Direct)?,
        Experiment::WShapeSmoothed => w_shape(&mut run, Pipeline::Smoothed)?,
        Experiment::WShapeRegularized => w_shape_regularized(&mut run)?,
        Experiment::GreeksEuropean => {
            let g = &cfg.greeks;
            let inst = Instrument::European {
                strike: g.european_strike,
                maturity: g.european_maturity,
            };
            greeks(&mut run, inst, &g.european_spots, true)?
        }
        Experiment::GreeksAsian => {
            let g = &cfg.greeks;
            greeks(&mut run, Instrument::Asian(g.asian), &g.asian_spots, false)?
        }
    };
    let result = ExperimentResult {
        experiment,
        checks: run.checks,
        elapsed_secs: start.elapsed().as_secs_f64(),
    };
    write_json(
        &run.art.path("metrics.json")?,
        &json!({ "experiment": experiment, "metrics": metrics, "checks": result.checks }),
    )?;
    let files = run.art.files().to_vec();
    Ok((result, files))
}

fn flat_vol_roundtrip(run: &mut Run) -> Result<serde_json::Value> {
    let cfg = run.cfg;
    let th = &cfg.thresholds;
    let market = flat_market(cfg)?;
    let out = run.pipeline(&market, Pipeline::Direct)?;
    let fit = run.fit(&out.model, &market)?;
    write_output(&mut run.art, "", &out, &fit)?;
    let dev = interior_flat_deviation(&out.model.lv, cfg.flat_vol.sigma, th.interior);
    run.checks.push(Check::new("interior_sigma_deviation", Some(dev), Relation::Lt, th.flat_sigma_tol));
    run.checks.extend(bucket_checks("", &fit, th.flat_bucket_error_pct));
    run.arbitrage("", &out.model);
    Ok(json!({ "interior_sigma_deviation": dev, "bucket_errors_pct": fit.bucket_errors() }))
}

fn svi_ideal(run: &mut Run) -> Result<serde_json::Value> {
    let ideal = svi_market(run.cfg, None)?;
    let out = run.pipeline(&ideal, Pipeline::Direct)?;
    let fit = run.fit(&out.model, &ideal)?;
    write_output(&mut run.art, "", &out, &fit)?;
    run.checks.extend(bucket_checks("", &fit, run.cfg.thresholds.bucket_error_pct));
    run.arbitrage("", &out.model);
    Ok(json!({ "bucket_errors_pct": fit.bucket_errors(), "max_abs_iv_error": fit.max_abs_iv_error }))
}

/// Errors are measured against the noise-free SVI curve. The smoothed run
/// also calibrates the direct pipeline in memory and checks that smoothing
/// lowers the error in every bucket.
fn svi_noisy(run: &mut Run, pipeline: Pipeline) -> Result<serde_json::Value> {
    let cfg = run.cfg;
    let ideal = svi_market(cfg, None)?;
    let mut per_seed = Vec::new();
    for &seed in &cfg.seeds {
        let prefix = format!("seed_{seed}/");
        let noisy = svi_market(cfg, Some(seed))?;
        let out = run.pipeline(&noisy, pipeline)?;
        let fit = run.fit(&out.model, &ideal)?;
        write_output(&mut run.art, &prefix, &out, &fit)?;
        run.arbitrage(&prefix, &out.model);
        let mut entry = json!({ "seed": seed, "bucket_errors_pct": fit.bucket_errors() });
        if let Some(smoothed) = &out.smoothed {
            run.checks.extend(bucket_checks(&prefix, &fit, cfg.thresholds.bucket_error_pct));
            run.checks.extend(descent_checks(&prefix, smoothed, &cfg.thresholds));
            let direct = run.pipeline(&noisy, Pipeline::Direct)?;
            let direct_fit = run.fit(&direct.model, &ideal)?;
            run.arbitrage(&format!("{prefix}direct_"), &direct.model);
            for (i, (s, d)) in fit.buckets.iter().zip(&direct_fit.buckets).enumerate() {
                if let (Some(s), Some(d)) = (s.mean_abs_rel_error_pct, d.mean_abs_rel_error_pct) {
                    run.checks.push(Check::new(
                        format!("{prefix}bucket_{i}_smoothed_minus_direct_pct"),
                        Some(s - d),
                        Relation::Lt,
                        0.0,
                    ));
                }
            }
            entry["direct_bucket_errors_pct"] = json!(direct_fit.bucket_errors());
        }
        per_seed.push(entry);
    }
    Ok(json!({ "pipeline": pipeline, "seeds": per_seed }))
}

fn svi_seed_stability(run: &mut Run) -> Result<serde_json::Value> {
    let cfg = run.cfg;
    let th = &cfg.thresholds;
    let (s0, s1) = (cfg.seeds[0], cfg.seeds[1]);
    let ideal = svi_market(cfg, None)?;
    let mut diffs = Vec::new();
    for pipeline in [Pipeline::Direct, Pipeline::Smoothed] {
        let name = match pipeline {
            Pipeline::Direct => "direct",
            Pipeline::Smoothed => "smoothed",
        };
        let mut lvs = Vec::new();
        for seed in [s0, s1] {
            let prefix = format!("{name}/seed_{seed}/");
            let out = run.pipeline(&svi_market(cfg, Some(seed))?, pipeline)?;
            let fit = run.fit(&out.model, &ideal)?;
            write_output(&mut run.art, &prefix, &out, &fit)?;
            run.arbitrage(&prefix, &out.model);
            lvs.push(out.model.lv);
        }
        let d = interior_knot_difference(&lvs[0], &lvs[1], th.interior);
        let relation = match pipeline {
            Pipeline::Direct => Relation::Gt,
            Pipeline::Smoothed => Relation::Lt,
        };
        run.checks.push(Check::new(format!("{name}_interior_knot_difference"), Some(d), relation, th.seed_stability));
        diffs.push(json!({ "pipeline": pipeline, "interior_knot_difference": d }));
    }
    Ok(json!({ "seeds": [s0, s1], "interior": th.interior, "differences": diffs }))
}

fn w_shape(run: &mut Run, pipeline: Pipeline) -> Result<serde_json::Value> {
    let market = w_market(run.cfg)?;
    let out = run.pipeline(&market, pipeline)?;
    let fit = run.fit(&out.model, &market)?;
    write_output(&mut run.art, "", &out, &fit)?;
    run.arbitrage("", &out.model);
    if let Some(smoothed) = &out.smoothed {
        let th = &run.cfg.thresholds;
        run.checks.push(Check::new("fail_ratio", fit.fail_ratio, Relation::Le, th.fail_ratio));
        run.checks.extend(descent_checks("", smoothed, th));
    }
    Ok(json!({
        "pipeline": pipeline,
        "fail_ratio": fit.fail_ratio,
        "rms_iv_error": fit.rms_iv_error,
        "max_abs_iv_error": fit.max_abs_iv_error,
    }))
}

fn w_shape_regularized(run: &mut Run) -> Result<serde_json::Value> {
    let cfg = run.cfg;
    let th = &cfg.thresholds;
    let market = w_market(cfg)?;
    let mut lambdas: Vec<f64> = cfg.regularization_lambdas.clone();
    lambdas.extend([0.0, th.regularized_lambda]);
    lambdas.sort_by(f64::total_cmp);
    lambdas.dedup();
    let mut rows = Vec::new();
    let rms_at = |lambda: f64, rows: &[(f64, FitReport)]| {
        rows.iter().find(|(l, _)| *l == lambda).map(|(_, f)| f.rms_iv_error)
    };
    for &lambda in &lambdas {
        let model = calibrate_regularized(&market, lambda, &cfg.pipeline.calibration)?;
        let fit = run.fit(&model, &market)?;
        let prefix = format!("lambda_{lambda:e}/");
        write_model(&mut run.art, &prefix, &model, &fit)?;
        run.arbitrage(&prefix, &model);
        rows.push((lambda, fit));
    }
    let base = rms_at(0.0, &rows);
    let target = rms_at(th.regularized_lambda, &rows);
    let ratio = base.zip(target).map(|(b, t)| t / b);
    run.checks.push(Check::new(
        format!("rms_ratio_lambda_{:e}_vs_0", th.regularized_lambda),
        ratio,
        Relation::Ge,
        th.regularized_rms_factor,
    ));
    let table: Vec<_> = rows
        .iter()
        .map(|(l, f)| json!({ "lambda": l, "rms_iv_error": f.rms_iv_error, "fail_ratio": f.fail_ratio }))
        .collect();
    Ok(json!({ "lambdas": table }))
}

/// Profiles under both pipelines on the first seed's noisy SVI quotes. The
/// European run checks the gamma total-variation ratio; the Asian run checks
/// that smoothing lowers both delta and gamma total variation.
fn greeks(run: &mut Run, instrument: Instrument, grid: &SpotGrid, european: bool) -> Result<serde_json::Value> {
    let cfg = run.cfg;
    let th = &cfg.thresholds;
    let market = svi_market(cfg, Some(cfg.seeds[0]))?;
    let spots = spot_grid(grid.lo, grid.hi, grid.step);
    let mut profiles: Vec<GreeksProfile> = Vec::new();
    for (pipeline, name) in [(Pipeline::Direct, "direct"), (Pipeline::Smoothed, "smoothed")] {
        let points = profile_points(&market, &instrument, &spots, pipeline, &cfg.pipeline, &cfg.mc)?;
        run.checks.extend(profile_arbitrage_checks(
            &format!("{name}_"),
            &points,
            cfg.pipeline.calibration.sigma_floor,
            th,
        ));
        let profile = profile_from_values(&spots, points.iter().map(|p| p.value).collect())?;
        profile.write_csv(run.art.path(&format!("{name}/greeks_profile.csv"))?)?;
        profiles.push(profile);
    }
    let (direct, smoothed) = (&profiles[0], &profiles[1]);
    let stability = stability_metric(smoothed, direct)?;
    write_json(&run.art.path("stability.json")?, &stability)?;
    if european {
        run.checks.push(Check::new("tv_ratio_gamma", Some(stability.tv_ratio_gamma), Relation::Le, th.gamma_tv_ratio));
    } else {
        run.checks.push(Check::new("tv_ratio_delta", Some(stability.tv_ratio_delta), Relation::Lt, 1.0));
        run.checks.push(Check::new("tv_ratio_gamma", Some(stability.tv_ratio_gamma), Relation::Lt, 1.0));
    }
    Ok(json!({
        "instrument": instrument,
        "tv_delta": { "direct": total_variation(&direct.delta), "smoothed": total_variation(&smoothed.delta) },
        "tv_gamma": { "direct": total_variation(&direct.gamma), "smoothed": total_variation(&smoothed.gamma) },
        "stability": stability,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn check_relations_are_strict_where_named() {
        assert!(Check::new("a", Some(1.0), Relation::Le, 1.0).passed);
        assert!(!Check::new("a", Some(1.0), Relation::Lt, 1.0).passed);
        assert!(Check::new("a", Some(1.0), Relation::Ge, 1.0).passed);
        assert!(!Check::new("a", Some(1.0), Relation::Gt, 1.0).passed);
    }

    #[test]
    fn missing_or_non_finite_values_fail() {
        let c = Check::new("a", Some(f64::NAN), Relation::Lt, 1.0);
        assert!(!c.passed);
        assert_eq!(c.value, None);
        assert!(!Check::new("a", None, Relation::Ge, 0.0).passed);
    }
}
