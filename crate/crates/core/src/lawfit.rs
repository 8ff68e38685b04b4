//! Log-linear law fits `ln y = -k ln x + E` (natural logs throughout).

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::runlog::{GroupKey, Run, RunSet, XAxis, YAxis};

/// Dispersion of per-point `φ` below which the linkage check counts as exact.
pub const EXACT_PHI_DISPERSION: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLinearFit {
    pub k: f64,
    pub e: f64,
    pub r2: f64,
    pub n_points: usize,
}

impl LogLinearFit {
    pub fn predict(&self, x: f64) -> f64 {
        (self.e - self.k * x.ln()).exp()
    }
}

/// Ordinary least squares of `ln y` on `ln x`.
pub fn fit_loglinear(points: &[(f64, f64)]) -> Result<LogLinearFit> {
    if points.len() < 2 {
        return Err(Error::DegenerateFit(format!(
            "need at least 2 points, got {}",
            points.len()
        )));
    }
    if let Some(&(x, y)) = points.iter().find(|&&(x, y)| !(x > 0.0 && y > 0.0)) {
        return Err(Error::Domain(format!(
            "log fit needs positive coordinates, got ({x}, {y})"
        )));
    }
    if points.iter().all(|p| p.0 == points[0].0) {
        return Err(Error::DegenerateFit(format!(
            "all {} points share x = {}",
            points.len(),
            points[0].0
        )));
    }
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in lx.iter().zip(&ly) {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    Ok(LogLinearFit {
        k: -slope,
        e: intercept,
        r2: r2.min(1.0),
        n_points: points.len(),
    })
}

/// What to do with non-positive `y` values, which `ln` cannot take.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ZeroLoss {
    /// Drop the point and count it.
    Exclude,
    /// Replace losses below the floor with the floor. `None` means
    /// `1 / (2 R_max)` with `R_max` the run's evaluation set size.
    Floor(Option<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Fraction of each run's earliest evaluation points to drop.
    pub burn_in: f64,
    pub zero_loss: ZeroLoss,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            burn_in: 0.0,
            zero_loss: ZeroLoss::Exclude,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.burn_in) {
            return Err(Error::Config(format!(
                "burn-in fraction must be in [0, 1), got {}",
                self.burn_in
            )));
        }
        if let ZeroLoss::Floor(Some(f)) = self.zero_loss {
            if !(f > 0.0) {
                return Err(Error::Config(format!("loss floor must be > 0, got {f}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub model_n: usize,
    pub variant: String,
    pub x_axis: XAxis,
    pub y: YAxis,
    pub k: f64,
    pub e: f64,
    pub r2: f64,
    pub n_points: usize,
    /// Points dropped for non-positive `y`.
    pub excluded: usize,
    pub burn_in: f64,
}

impl FitResult {
    pub fn key(&self) -> GroupKey {
        GroupKey {
            model_n: self.model_n,
            variant: self.variant.clone(),
        }
    }

    pub fn line(&self) -> LogLinearFit {
        LogLinearFit {
            k: self.k,
            e: self.e,
            r2: self.r2,
            n_points: self.n_points,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PooledSeries {
    pub points: Vec<(f64, f64)>,
    pub excluded: usize,
}

/// Concatenates the usable points of `runs` after burn-in and zero handling.
/// Runs without evaluation points contribute nothing.
pub fn pooled_series(
    runs: &[&Run],
    x: XAxis,
    y: YAxis,
    options: &FitOptions,
) -> Result<PooledSeries> {
    options.validate()?;
    let mut pooled = PooledSeries::default();
    for run in runs {
        let series = match run.series(x, y) {
            Ok(s) => s,
            Err(Error::EmptySeries(_)) => continue,
            Err(e) => return Err(e),
        };
        let skip = (options.burn_in * series.len() as f64).floor() as usize;
        let floor = match (y, options.zero_loss) {
            (YAxis::Loss, ZeroLoss::Floor(Some(f))) => Some(f),
            (YAxis::Loss, ZeroLoss::Floor(None)) => {
                Some(1.0 / (2.0 * run.manifest.eval.dataset.size as f64))
            }
            _ => None,
        };
        for (xv, yv) in series.into_iter().skip(skip) {
            match floor {
                Some(f) => pooled.points.push((xv, yv.max(f))),
                None if yv > 0.0 => pooled.points.push((xv, yv)),
                None => pooled.excluded += 1,
            }
        }
    }
    Ok(pooled)
}

/// One row per `(model_n, variant)` group, sorted by model size. A group
/// that cannot be fitted yields an error in its row.
pub fn fit_per_model(
    runset: &RunSet,
    x: XAxis,
    y: YAxis,
    options: &FitOptions,
) -> Vec<(GroupKey, Result<FitResult>)> {
    runset
        .groups()
        .into_iter()
        .map(|(key, runs)| {
            let fit = fit_group(&key, &runs, x, y, options);
            (key, fit)
        })
        .collect()
}

pub fn fit_group(
    key: &GroupKey,
    runs: &[&Run],
    x: XAxis,
    y: YAxis,
    options: &FitOptions,
) -> Result<FitResult> {
    let pooled = pooled_series(runs, x, y, options)?;
    if pooled.points.is_empty() {
        return Err(Error::EmptySeries(format!(
            "group {key} has no usable {y} points against {x}"
        )));
    }
    let line = fit_loglinear(&pooled.points)?;
    Ok(FitResult {
        model_n: key.model_n,
        variant: key.variant.clone(),
        x_axis: x,
        y,
        k: line.k,
        e: line.e,
        r2: line.r2,
        n_points: line.n_points,
        excluded: pooled.excluded,
        burn_in: options.burn_in,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    /// `|k_C - k_D|`.
    pub k_gap: f64,
    /// `|E_C - E_D - k ln(N φ)|` with `k = k_D`.
    pub intercept_residual: f64,
    /// Mean of per-point `C / (N D)`.
    pub phi: f64,
    /// Coefficient of variation of the per-point `φ` estimates.
    pub phi_dispersion: f64,
    /// True when `phi_dispersion` is below [`EXACT_PHI_DISPERSION`].
    pub exact: bool,
}

/// Compares a compute fit and a data fit of one group, estimating `φ` from
/// the evaluation points of `runs`.
pub fn check_consistency(
    fit_c: &FitResult,
    fit_d: &FitResult,
    n: usize,
    runs: &[&Run],
) -> Result<ConsistencyReport> {
    let phis: Vec<f64> = runs
        .iter()
        .flat_map(|r| r.records.iter())
        .filter(|r| r.eval_loss.is_some() && r.unique_samples_seen > 0 && r.cumulative_flops > 0.0)
        .map(|r| r.cumulative_flops / (n as f64 * r.unique_samples_seen as f64))
        .collect();
    consistency_from_phis(fit_c, fit_d, n, &phis)
}

pub fn consistency_from_phis(
    fit_c: &FitResult,
    fit_d: &FitResult,
    n: usize,
    phis: &[f64],
) -> Result<ConsistencyReport> {
    if fit_c.x_axis != XAxis::Flops || fit_d.x_axis != XAxis::Data {
        return Err(Error::Config(format!(
            "consistency check needs a flops fit and a data fit, got {} and {}",
            fit_c.x_axis, fit_d.x_axis
        )));
    }
    if fit_c.key() != fit_d.key() || fit_c.y != fit_d.y {
        return Err(Error::Config(format!(
            "fits belong to different groups: {} ({}) and {} ({})",
            fit_c.key(),
            fit_c.y,
            fit_d.key(),
            fit_d.y
        )));
    }
    if n != fit_c.model_n {
        return Err(Error::Config(format!(
            "N = {n} does not match the fitted group's model size {}",
            fit_c.model_n
        )));
    }
    if phis.is_empty() {
        return Err(Error::EmptySeries(format!(
            "group {} has no points to estimate φ from",
            fit_c.key()
        )));
    }
    let m = phis.len() as f64;
    let phi = phis.iter().sum::<f64>() / m;
    let var = phis.iter().map(|p| (p - phi).powi(2)).sum::<f64>() / m;
    let phi_dispersion = var.sqrt() / phi;
    let k = fit_d.k;
    Ok(ConsistencyReport {
        k_gap: (fit_c.k - fit_d.k).abs(),
        intercept_residual: (fit_c.e - fit_d.e - k * (n as f64 * phi).ln()).abs(),
        phi,
        phi_dispersion,
        exact: phi_dispersion < EXACT_PHI_DISPERSION,
    })
}

pub const TABLE_HEADER: [&str; 6] = ["model_n", "variant", "k", "E", "r2", "n_points"];

/// Writes rows as CSV with 4-decimal coefficients.
pub fn emit_table<W: Write>(rows: &[FitResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Data(format!("writing table: {e}"));
    w.write_record(TABLE_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.model_n.to_string(),
            r.variant.clone(),
            format!("{:.4}", r.k),
            format!("{:.4}", r.e),
            format!("{:.4}", r.r2),
            r.n_points.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()
        .map_err(|e| Error::Data(format!("writing table: {e}")))
}

/// Reads a table written by [`emit_table`]; axis labels are not stored in
/// the file and must be supplied.
pub fn parse_table<R: Read>(input: R, x: XAxis, y: YAxis) -> Result<Vec<FitResult>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r
        .headers()
        .map_err(|e| Error::Data(format!("reading table header: {e}")))?;
    if header.iter().ne(TABLE_HEADER) {
        return Err(Error::Data(format!(
            "unexpected table header {:?}",
            header.iter().collect::<Vec<_>>()
        )));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::Data(format!("table row {}: {e}", i + 1)))?;
        let field = |j: usize| -> Result<&str> {
            rec.get(j)
                .ok_or_else(|| Error::Data(format!("table row {} is missing {}", i + 1, TABLE_HEADER[j])))
        };
        let num = |j: usize| -> Result<f64> {
            field(j)?
                .parse()
                .map_err(|_| Error::Data(format!("table row {}: bad {}", i + 1, TABLE_HEADER[j])))
        };
        let int = |j: usize| -> Result<usize> {
            field(j)?
                .parse()
                .map_err(|_| Error::Data(format!("table row {}: bad {}", i + 1, TABLE_HEADER[j])))
        };
        rows.push(FitResult {
            model_n: int(0)?,
            variant: field(1)?.to_owned(),
            x_axis: x,
            y,
            k: num(2)?,
            e: num(3)?,
            r2: num(4)?,
            n_points: int(5)?,
            excluded: 0,
            burn_in: 0.0,
        });
    }
    Ok(rows)
}

/// Writes `x,y,fitted_y` for the pooled points of one group.
pub fn write_plot_data(path: &Path, points: &[(f64, f64)], fit: &LogLinearFit) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let csv_err = |e: csv::Error| Error::Data(format!("writing {}: {e}", path.display()));
    w.write_record(["x", "y", "fitted_y"]).map_err(csv_err)?;
    for &(x, y) in points {
        w.write_record([x.to_string(), y.to_string(), fit.predict(x).to_string()])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
