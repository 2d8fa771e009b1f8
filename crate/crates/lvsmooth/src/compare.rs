//! Numeric diff of two run directories.
//!
//! Files are matched by their path in the manifests. When each run holds a
//! single experiment the experiment directory is stripped first, so a direct
//! and a smoothed run of the same study line up file by file.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::manifest::{Manifest, CONFIG_FILE};
use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Match,
    Differs,
    MissingInA,
    MissingInB,
    ShapeMismatch,
    ParseError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDiff {
    pub path: String,
    pub verdict: Verdict,
    pub values: usize,
    pub max_abs: Option<f64>,
    pub rms: Option<f64>,
    pub message: Option<String>,
    /// Bucket errors (percent) of both runs, for fit reports.
    pub bucket_errors_pct: Option<[Vec<Option<f64>>; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub run_a: String,
    pub run_b: String,
    pub tolerance: f64,
    pub files: Vec<FileDiff>,
}

impl CompareReport {
    /// 0 when every file matches, 1 when values differ, 3 when files are
    /// missing or unreadable.
    pub fn exit_code(&self) -> i32 {
        let broken = self.files.iter().any(|f| {
            matches!(
                f.verdict,
                Verdict::MissingInA | Verdict::MissingInB | Verdict::ShapeMismatch | Verdict::ParseError
            )
        });
        if broken {
            3
        } else if self.files.iter().any(|f| f.verdict == Verdict::Differs) {
            1
        } else {
            0
        }
    }
}

fn keyed_files(m: &Manifest, strip: bool) -> BTreeMap<String, String> {
    m.files
        .iter()
        .filter(|f| f.path != CONFIG_FILE)
        .map(|f| {
            let key = match (strip, f.path.split_once('/')) {
                (true, Some((_, rest))) => rest.to_string(),
                _ => f.path.clone(),
            };
            (key, f.path.clone())
        })
        .collect()
}

/// Numeric values of a CSV body (header skipped), row-major.
fn csv_values(path: &Path) -> Result<Vec<Vec<f64>>, String> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| e.to_string())?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| e.to_string())?;
        let row = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| format!("row {}: {e}", i + 2))?;
        rows.push(row);
    }
    Ok(rows)
}

/// Numeric leaves of a JSON document keyed by their pointer path.
fn json_leaves(value: &serde_json::Value, prefix: String, out: &mut BTreeMap<String, f64>) {
    match value {
        serde_json::Value::Number(n) => {
            if let Some(v) = n.as_f64() {
                out.insert(prefix, v);
            }
        }
        serde_json::Value::Array(xs) => {
            for (i, x) in xs.iter().enumerate() {
                json_leaves(x, format!("{prefix}/{i}"), out);
            }
        }
        serde_json::Value::Object(map) => {
            for (k, x) in map {
                json_leaves(x, format!("{prefix}/{k}"), out);
            }
        }
        _ => {}
    }
}

fn read_json(path: &Path) -> Result<serde_json::Value, String> {
    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    serde_json::from_str(&text).map_err(|e| e.to_string())
}

fn bucket_errors(doc: &serde_json::Value) -> Option<Vec<Option<f64>>> {
    let buckets = doc.pointer("/fit/buckets")?.as_array()?;
    Some(
        buckets
            .iter()
            .map(|b| b.get("mean_abs_rel_error_pct").and_then(|v| v.as_f64()))
            .collect(),
    )
}

fn diff_pairs(pairs: impl Iterator<Item = (f64, f64)>) -> (usize, f64, f64) {
    let (mut n, mut max, mut sq) = (0usize, 0.0f64, 0.0);
    for (a, b) in pairs {
        let d = if a == b { 0.0 } else { (a - b).abs() };
        max = max.max(d);
        sq += d * d;
        n += 1;
    }
    (n, max, if n > 0 { (sq / n as f64).sqrt() } else { 0.0 })
}

fn diff_file(key: &str, a: &Path, b: &Path, tolerance: f64) -> FileDiff {
    let mut diff = FileDiff {
        path: key.to_string(),
        verdict: Verdict::Match,
        values: 0,
        max_abs: None,
        rms: None,
        message: None,
        bucket_errors_pct: None,
    };
    let fail = |mut d: FileDiff, verdict, msg: String| {
        d.verdict = verdict;
        d.message = Some(msg);
        d
    };
    let stats = if key.ends_with(".csv") {
        let (va, vb) = match (csv_values(a), csv_values(b)) {
            (Ok(x), Ok(y)) => (x, y),
            (Err(e), _) => return fail(diff, Verdict::ParseError, format!("run a: {e}")),
            (_, Err(e)) => return fail(diff, Verdict::ParseError, format!("run b: {e}")),
        };
        let same_shape = va.len() == vb.len() && va.iter().zip(&vb).all(|(x, y)| x.len() == y.len());
        if !same_shape {
            return fail(diff, Verdict::ShapeMismatch, format!("{} rows vs {} rows", va.len(), vb.len()));
        }
        diff_pairs(va.iter().flatten().copied().zip(vb.iter().flatten().copied()))
    } else if key.ends_with(".json") {
        let (ja, jb) = match (read_json(a), read_json(b)) {
            (Ok(x), Ok(y)) => (x, y),
            (Err(e), _) => return fail(diff, Verdict::ParseError, format!("run a: {e}")),
            (_, Err(e)) => return fail(diff, Verdict::ParseError, format!("run b: {e}")),
        };
        if let (Some(x), Some(y)) = (bucket_errors(&ja), bucket_errors(&jb)) {
            diff.bucket_errors_pct = Some([x, y]);
        }
        let (mut la, mut lb) = (BTreeMap::new(), BTreeMap::new());
        json_leaves(&ja, String::new(), &mut la);
        json_leaves(&jb, String::new(), &mut lb);
        if la.keys().ne(lb.keys()) {
            return fail(diff, Verdict::ShapeMismatch, "numeric fields differ".into());
        }
        diff_pairs(la.values().copied().zip(lb.values().copied()))
    } else {
        let same = std::fs::read(a).ok() == std::fs::read(b).ok();
        (1, if same { 0.0 } else { f64::INFINITY }, if same { 0.0 } else { f64::INFINITY })
    };
    let (n, max, rms) = stats;
    diff.values = n;
    diff.max_abs = Some(max);
    diff.rms = Some(rms);
    if max > tolerance {
        diff.verdict = Verdict::Differs;
    }
    diff
}

pub fn compare(dir_a: &Path, dir_b: &Path, tolerance: f64) -> Result<CompareReport, HarnessError> {
    let ma = Manifest::load(dir_a)?;
    let mb = Manifest::load(dir_b)?;
    let strip = ma.experiments.len() == 1 && mb.experiments.len() == 1;
    let fa = keyed_files(&ma, strip);
    let fb = keyed_files(&mb, strip);
    let mut keys: Vec<&String> = fa.keys().chain(fb.keys()).collect();
    keys.sort();
    keys.dedup();
    let files = keys
        .into_iter()
        .map(|key| match (fa.get(key), fb.get(key)) {
            (Some(pa), Some(pb)) => diff_file(key, &dir_a.join(pa), &dir_b.join(pb), tolerance),
            (a, _) => FileDiff {
                path: key.clone(),
                verdict: if a.is_some() { Verdict::MissingInB } else { Verdict::MissingInA },
                values: 0,
                max_abs: None,
                rms: None,
                message: None,
                bucket_errors_pct: None,
            },
        })
        .collect();
    Ok(CompareReport {
        run_a: dir_a.display().to_string(),
        run_b: dir_b.display().to_string(),
        tolerance,
        files,
    })
}
