//! File formats and experiment plumbing: ground-truth coefficient models,
//! expansion files, value/field CSV export, error metrics, and the JSON
//! experiment configuration.
//!
//! All floating-point values are serialized with 17 significant digits so
//! every write/read cycle is lossless.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dictionary::{parse_element, DictionaryElement};
use crate::error::{Error, Result};
use crate::grid::SphereGrid;
use crate::learner::{LearnConfig, LearnRecord};
use crate::operator::{apply_operator, evaluate_surface};
use crate::pursuit::{IterationRecord, PursuitConfig};
use crate::types::{PolarCoord, Vec3};

/// Synthetic ground truth: a finite expansion over dictionary elements.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthModel {
    pub terms: Vec<(DictionaryElement, f64)>,
    pub description: String,
}

fn parse_term(s: &str) -> std::result::Result<(DictionaryElement, f64), String> {
    let s = s.trim();
    let (head, coeff) = s
        .rsplit_once(char::is_whitespace)
        .ok_or_else(|| format!("expected an element followed by a coefficient, got {s:?}"))?;
    let c: f64 = coeff
        .parse()
        .map_err(|e| format!("bad coefficient {coeff:?}: {e}"))?;
    if !c.is_finite() {
        return Err(format!("coefficient must be finite, got {coeff}"));
    }
    let d = parse_element(head)?;
    Ok((d, c))
}

/// Reads `(element, coefficient)` lines: `SH n j coeff` or
/// `APK x1 x2 x3 coeff`, with `#` comments and blank lines skipped.
pub fn read_terms(path: &Path) -> Result<Vec<(DictionaryElement, f64)>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut terms = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let term = parse_term(trimmed).map_err(|message| Error::Parse {
            path: path.display().to_string(),
            line: lineno + 1,
            message,
        })?;
        terms.push(term);
    }
    Ok(terms)
}

pub fn write_terms(path: &Path, terms: &[(DictionaryElement, f64)], header: &str) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for line in header.lines() {
        writeln!(f, "# {line}")?;
    }
    for (d, c) in terms {
        writeln!(f, "{} {} {:.17e}", d.kind(), d.params_string(), c)?;
    }
    Ok(())
}

pub fn read_model(path: &Path) -> Result<GroundTruthModel> {
    Ok(GroundTruthModel {
        terms: read_terms(path)?,
        description: path.display().to_string(),
    })
}

pub fn write_model(path: &Path, model: &GroundTruthModel) -> Result<()> {
    write_terms(path, &model.terms, &model.description)
}

/// Evaluates an expansion on a grid, on the unit sphere (`at_height = None`)
/// or upward-continued to radius `sigma` (`at_height = Some(sigma)`).
pub fn evaluate_field(
    terms: &[(DictionaryElement, f64)],
    grid: &SphereGrid,
    at_height: Option<f64>,
) -> Result<Vec<f64>> {
    match at_height {
        None => Ok(grid
            .points()
            .iter()
            .map(|eta| evaluate_surface(terms, *eta))
            .collect()),
        Some(sigma) => {
            if !(sigma >= 1.0) {
                return Err(Error::domain("sigma", sigma, "evaluation height must be >= 1"));
            }
            let mut values = vec![0.0; grid.len()];
            for (d, c) in terms {
                for (v, t) in values.iter_mut().zip(apply_operator(d, grid, sigma)) {
                    *v += c * t;
                }
            }
            Ok(values)
        }
    }
}

/// `(relative l2 error, max absolute error, rms error)` of `approx` against
/// `truth`. The relative error is 0 when both vectors are zero.
pub fn error_metrics(approx: &[f64], truth: &[f64]) -> Result<(f64, f64, f64)> {
    if approx.len() != truth.len() {
        return Err(Error::domain(
            "approx.len",
            approx.len() as f64,
            "metric vectors must have equal length",
        ));
    }
    let mut diff_sq = 0.0;
    let mut truth_sq = 0.0;
    let mut max_abs: f64 = 0.0;
    for (a, t) in approx.iter().zip(truth) {
        let d = a - t;
        diff_sq += d * d;
        truth_sq += t * t;
        max_abs = max_abs.max(d.abs());
    }
    let rel = if truth_sq > 0.0 {
        (diff_sq / truth_sq).sqrt()
    } else if diff_sq > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    let rms = (diff_sq / approx.len().max(1) as f64).sqrt();
    Ok((rel, max_abs, rms))
}

/// One value per row, 17 significant digits.
pub fn write_values(path: &Path, values: &[f64]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for v in values {
        writeln!(f, "{v:.17e}")?;
    }
    Ok(())
}

pub fn read_values(path: &Path) -> Result<Vec<f64>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut values = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        values.push(trimmed.parse().map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: lineno + 1,
            message: format!("bad value {trimmed:?}: {e}"),
        })?);
    }
    Ok(values)
}

fn lon_lat_deg(p: Vec3) -> (f64, f64) {
    let pc = PolarCoord::from_unit(p);
    let lon = pc.phi.to_degrees();
    let lat = 90.0 - pc.t.clamp(-1.0, 1.0).acos().to_degrees();
    (lon, lat)
}

/// `lon_deg,lat_deg` rows for a grid; plot-ready.
pub fn write_grid_csv(path: &Path, grid: &SphereGrid) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "lon_deg,lat_deg")?;
    for p in grid.points() {
        let (lon, lat) = lon_lat_deg(*p);
        writeln!(f, "{lon:.17e},{lat:.17e}")?;
    }
    Ok(())
}

/// `lon_deg,lat_deg,value` rows for a field on a grid.
pub fn write_field_csv(path: &Path, grid: &SphereGrid, values: &[f64]) -> Result<()> {
    if values.len() != grid.len() {
        return Err(Error::domain(
            "values.len",
            values.len() as f64,
            "field length must equal the grid size",
        ));
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "lon_deg,lat_deg,value")?;
    for (p, v) in grid.points().iter().zip(values) {
        let (lon, lat) = lon_lat_deg(*p);
        writeln!(f, "{lon:.17e},{lat:.17e},{v:.17e}")?;
    }
    Ok(())
}

pub fn write_pursuit_diagnostics(path: &Path, records: &[IterationRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        f,
        "iteration,index,kind,params,alpha,lambda,objective,residual_norm,rel_data_error"
    )?;
    for r in records {
        writeln!(
            f,
            "{},{},{},{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
            r.iteration,
            r.index,
            r.element.kind(),
            r.element.params_string(),
            r.alpha,
            r.lambda,
            r.objective,
            r.residual_norm,
            r.rel_data_error
        )?;
    }
    Ok(())
}

pub fn write_learn_diagnostics(path: &Path, records: &[LearnRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        f,
        "iteration,kind,params,alpha,lambda,objective,residual_norm,rel_data_error,\
         candidate,sh_value,apk_local_value,apk_opt_value,optimizer_status"
    )?;
    let opt_field = |v: &Option<f64>| match v {
        Some(v) => format!("{v:.17e}"),
        None => String::new(),
    };
    for r in records {
        writeln!(
            f,
            "{},{},{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{},{:.17e},{},{},{}",
            r.iteration,
            r.chosen.kind(),
            r.chosen.params_string(),
            r.alpha,
            r.lambda,
            r.objective,
            r.residual_norm,
            r.rel_data_error,
            r.candidate_kind,
            r.sh_value,
            opt_field(&r.apk_local_value),
            opt_field(&r.apk_opt_value),
            r.optimizer_status
                .map(|s| format!("{s:?}").to_lowercase())
                .unwrap_or_default()
        )?;
    }
    Ok(())
}

/// End-to-end experiment description, loaded from JSON.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Reuter parameter of the data grid.
    pub data_gamma: u32,
    /// Reuter parameter of the held-out evaluation grid; must differ from
    /// `data_gamma`.
    pub eval_gamma: u32,
    pub sigma: f64,
    pub model_path: String,
    #[serde(default)]
    pub noise_level: f64,
    #[serde(default)]
    pub noise_seed: u64,
    pub pursuit: PursuitConfig,
    pub learn: LearnConfig,
    pub output_dir: String,
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_reader(std::fs::File::open(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.data_gamma == self.eval_gamma {
            return Err(Error::Config(
                "eval_gamma must differ from data_gamma (generalization check)".into(),
            ));
        }
        if !(self.sigma > 1.0) {
            return Err(Error::domain("sigma", self.sigma, "must be > 1"));
        }
        if self.noise_level < 0.0 {
            return Err(Error::domain("noise_level", self.noise_level, "must be >= 0"));
        }
        Ok(())
    }
}
