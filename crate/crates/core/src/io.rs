//! Dataset and result persistence.
//!
//! All CSV files are UTF-8 with LF endings, comma separators, and decimal
//! points; floats are written with 17 significant digits so that
//! `read(write(x)) == x` bit-exactly. Headers may carry a bracketed length
//! unit (e.g. `wavelength[um]`); when present it must match the unit the
//! caller expects. Writes go through a temp file plus rename so a crashed
//! run never leaves a torn file.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{SizeGrid, WavelengthGrid};
use crate::inference::PosteriorResult;
use crate::scenario::{MeasurementSet, Provenance};

/// 17 significant digits: lossless decimal round-trip for f64.
fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes a file atomically (temp file in the same directory, then rename).
pub fn atomic_write(path: &Path, contents: &str) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    if !dir.as_os_str().is_empty() {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp_path = Path::new(&tmp);
    {
        let mut f = fs::File::create(tmp_path)?;
        f.write_all(contents.as_bytes())?;
        f.sync_all()?;
    }
    fs::rename(tmp_path, path)?;
    Ok(())
}

/// Splits a header field into (name, optional unit): `wavelength[um]`.
fn split_unit(field: &str) -> (&str, Option<&str>) {
    match (field.find('['), field.ends_with(']')) {
        (Some(i), true) => (&field[..i], Some(&field[i + 1..field.len() - 1])),
        _ => (field, None),
    }
}

fn check_header(
    line: &str,
    expected: &[&str],
    optional: &[&str],
    length_unit: &str,
) -> Result<Vec<String>> {
    let fields: Vec<&str> = line.trim().split(',').collect();
    if fields.len() < expected.len() || fields.len() > expected.len() + optional.len() {
        return Err(Error::parse(
            1,
            format!(
                "expected header '{}[,{}]', got '{line}'",
                expected.join(","),
                optional.join(",")
            ),
        ));
    }
    let mut names = Vec::new();
    for (i, field) in fields.iter().enumerate() {
        let (name, unit) = split_unit(field.trim());
        let want = if i < expected.len() {
            expected[i]
        } else {
            optional[i - expected.len()]
        };
        if name != want {
            return Err(Error::parse(
                1,
                format!("header column {} is '{name}', expected '{want}'", i + 1),
            ));
        }
        if let Some(u) = unit {
            if u != length_unit && !u.starts_with("1/") {
                return Err(Error::parse(
                    1,
                    format!(
                        "unit mismatch: column '{name}' declares '{u}' but the configuration uses '{length_unit}'"
                    ),
                ));
            }
        }
        names.push(name.to_string());
    }
    Ok(names)
}

fn parse_float(token: &str, line_no: usize, column: &str) -> Result<f64> {
    token.trim().parse::<f64>().map_err(|_| {
        Error::parse(
            line_no,
            format!("cannot parse '{token}' as a number in column '{column}'"),
        )
    })
}

/// Writes a measurement CSV (`wavelength,mu[,sigma]`).
pub fn write_measurements(path: &Path, set: &MeasurementSet) -> Result<()> {
    let mut out = String::new();
    match set.sigma_used {
        Some(_) => out.push_str("wavelength,mu,sigma\n"),
        None => out.push_str("wavelength,mu\n"),
    }
    for (i, &w) in set.wavelengths.values().iter().enumerate() {
        match set.sigma_used {
            Some(s) => {
                out.push_str(&format!("{},{},{}\n", fmt(w), fmt(set.mu[i]), fmt(s)));
            }
            None => out.push_str(&format!("{},{}\n", fmt(w), fmt(set.mu[i]))),
        }
    }
    atomic_write(path, &out)
}

/// Reads a measurement CSV. The sigma column, when present, is averaged
/// into `sigma_used`. An empty body is an explicit error, not a
/// zero-length success.
pub fn read_measurements(path: &Path, length_unit: &str) -> Result<MeasurementSet> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(0, "empty measurement file (no header)"))?;
    let names = check_header(header, &["wavelength", "mu"], &["sigma"], length_unit)?;
    let has_sigma = names.len() == 3;

    let mut wavelengths = Vec::new();
    let mut mu = Vec::new();
    let mut sigmas = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != names.len() {
            return Err(Error::parse(
                line_no,
                format!("expected {} fields, got {}", names.len(), parts.len()),
            ));
        }
        wavelengths.push(parse_float(parts[0], line_no, "wavelength")?);
        mu.push(parse_float(parts[1], line_no, "mu")?);
        if has_sigma {
            sigmas.push(parse_float(parts[2], line_no, "sigma")?);
        }
    }
    if wavelengths.is_empty() {
        return Err(Error::parse(1, "no measurements in file"));
    }
    // Constant sigma columns (the common case) round-trip bit-exactly;
    // heteroscedastic columns collapse to their mean.
    let sigma_used = if has_sigma {
        if sigmas.windows(2).all(|w| w[0] == w[1]) {
            Some(sigmas[0])
        } else {
            Some(sigmas.iter().sum::<f64>() / sigmas.len() as f64)
        }
    } else {
        None
    };
    MeasurementSet::new(
        WavelengthGrid::new(wavelengths)?,
        mu,
        sigma_used,
        None,
        Provenance::External,
    )
}

/// Writes the inversion result CSV (`r,rho_mean,rho_lo95,rho_hi95`).
pub fn write_result(path: &Path, result: &PosteriorResult) -> Result<()> {
    let (lo, hi) = result.credible_bands(1.96);
    let mut out = String::from("r,rho_mean,rho_lo95,rho_hi95\n");
    for i in 0..result.radii.len() {
        out.push_str(&format!(
            "{},{},{},{}\n",
            fmt(result.radii[i]),
            fmt(result.rho_mean[i]),
            fmt(lo[i]),
            fmt(hi[i])
        ));
    }
    atomic_write(path, &out)
}

/// Stored inversion result, as read back from CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredResult {
    pub radii: Vec<f64>,
    pub rho_mean: Vec<f64>,
    pub rho_lo95: Vec<f64>,
    pub rho_hi95: Vec<f64>,
}

impl StoredResult {
    /// Quadrature of the stored mean on its own grid (trapezoid over the
    /// stored nodes).
    pub fn sum_rho(&self) -> Result<f64> {
        let grid = SizeGrid::from_nodes_trapezoid(self.radii.clone())?;
        grid.integrate(&self.rho_mean)
    }
}

pub fn read_result(path: &Path, length_unit: &str) -> Result<StoredResult> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(0, "empty result file (no header)"))?;
    check_header(
        header,
        &["r", "rho_mean", "rho_lo95", "rho_hi95"],
        &[],
        length_unit,
    )?;
    let mut radii = Vec::new();
    let mut mean = Vec::new();
    let mut lo = Vec::new();
    let mut hi = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            return Err(Error::parse(
                line_no,
                format!("expected 4 fields, got {}", parts.len()),
            ));
        }
        radii.push(parse_float(parts[0], line_no, "r")?);
        mean.push(parse_float(parts[1], line_no, "rho_mean")?);
        lo.push(parse_float(parts[2], line_no, "rho_lo95")?);
        hi.push(parse_float(parts[3], line_no, "rho_hi95")?);
    }
    if radii.is_empty() {
        return Err(Error::parse(1, "no rows in result file"));
    }
    Ok(StoredResult {
        radii,
        rho_mean: mean,
        rho_lo95: lo,
        rho_hi95: hi,
    })
}

/// Writes a ground-truth density CSV (`r,rho_true`).
pub fn write_truth(path: &Path, grid: &SizeGrid, rho: &[f64]) -> Result<()> {
    if grid.len() != rho.len() {
        return Err(Error::dimension(format!(
            "grid has {} points but rho has {}",
            grid.len(),
            rho.len()
        )));
    }
    let mut out = String::from("r,rho_true\n");
    for (r, v) in grid.radii().iter().zip(rho) {
        out.push_str(&format!("{},{}\n", fmt(*r), fmt(*v)));
    }
    atomic_write(path, &out)
}

pub fn read_truth(path: &Path, length_unit: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(0, "empty truth file (no header)"))?;
    check_header(header, &["r", "rho_true"], &[], length_unit)?;
    let mut radii = Vec::new();
    let mut rho = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 2 {
            return Err(Error::parse(
                line_no,
                format!("expected 2 fields, got {}", parts.len()),
            ));
        }
        radii.push(parse_float(parts[0], line_no, "r")?);
        rho.push(parse_float(parts[1], line_no, "rho_true")?);
    }
    if radii.is_empty() {
        return Err(Error::parse(1, "no rows in truth file"));
    }
    Ok((radii, rho))
}

/// Hyperparameters as stored in summaries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThetaSummary {
    pub sigma_f: f64,
    pub ell: f64,
    pub sigma: f64,
}

/// Run summary written next to results and fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Summary {
    /// Quadrature of the estimate (absent for fit summaries).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sum_rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mse_vs_truth: Option<f64>,
    pub lagrange_c: Option<f64>,
    pub theta: ThetaSummary,
    pub q: usize,
    pub kernel: String,
    pub nu: f64,
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective: Option<f64>,
}

pub fn write_summary(path: &Path, summary: &Summary) -> Result<()> {
    let text = serde_json::to_string_pretty(summary)
        .map_err(|e| Error::numeric(format!("summary serialization: {e}")))?;
    atomic_write(path, &(text + "\n"))
}

pub fn read_summary(path: &Path) -> Result<Summary> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::parse(e.line(), format!("summary: {e}")))
}

/// Optimization trace CSV (`restart,iter,sigma_f,ell,sigma,objective`).
pub fn write_trace(path: &Path, trace: &[crate::hyperopt::TraceRecord]) -> Result<()> {
    let mut out = String::from("restart,iter,sigma_f,ell,sigma,objective\n");
    for rec in trace {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            rec.restart,
            rec.iter,
            fmt(rec.sigma_f),
            fmt(rec.ell),
            fmt(rec.sigma),
            fmt(rec.objective)
        ));
    }
    atomic_write(path, &out)
}

/// Evaluation metrics against a known truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalMetrics {
    /// Mean squared error of the estimate against the truth, on the truth grid.
    pub mse_vs_truth: f64,
    /// Quadrature of the stored estimate on its grid.
    pub sum_rho: f64,
    /// Relative RMSE of re-predicted measurements against the measured input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forward_rel_rmse_vs_input: Option<f64>,
    /// Relative RMSE of re-predicted measurements against the noiseless forward
    /// of the truth.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forward_rel_rmse_vs_noiseless: Option<f64>,
}

pub fn write_metrics(path: &Path, metrics: &EvalMetrics) -> Result<()> {
    let text = serde_json::to_string_pretty(metrics)
        .map_err(|e| Error::numeric(format!("metrics serialization: {e}")))?;
    atomic_write(path, &(text + "\n"))
}

pub fn read_metrics(path: &Path) -> Result<EvalMetrics> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::parse(e.line(), format!("metrics: {e}")))
}
