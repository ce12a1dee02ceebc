//! Expanding-window out-of-sample evaluation.
//!
//! At each origin the window is re-standardized on its own sample, every
//! runner forecasts `h = 1..h_max` on that scale, and the forecasts are
//! mapped back before scoring against the realized (transformed) values.

mod metrics;
mod runners;

use std::path::Path;

use log::warn;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use metrics::{alpl, mafe, metric_table, relative_table, rmsfe, Cell, Metric, MetricTable};
pub use runners::{
    model_variant, runner_for, var_ols, ForecastSet, HorizonForecast, MaiRunner, PoolRunner, RandomWalk, Runner,
    VarFit, VarOls, VariantGrid,
};

use crate::data::{column_stats, Quarter};
use crate::error::{Error, Result};
use crate::linalg::normal_logpdf;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    /// Row index of the last observation in the estimation window.
    pub origin: usize,
    pub horizon: usize,
    pub variable: String,
    pub model: String,
    pub point: f64,
    pub pred_var: f64,
    /// `None` when the model has no predictive density or diverged.
    pub log_score: Option<f64>,
    pub actual: f64,
    pub diverged: bool,
}

impl ForecastRecord {
    pub fn error(&self) -> f64 {
        self.actual - self.point
    }
}

/// Which variables to score and over which design.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub h_max: usize,
    /// Row index of the first origin.
    pub first_origin: usize,
    /// Column indices scored; all columns when empty.
    pub targets: Vec<usize>,
}

fn standardize_window(window: &DMatrix<f64>) -> Option<(DMatrix<f64>, Vec<f64>, Vec<f64>)> {
    let (means, stds) = column_stats(window);
    if stds.iter().zip(&means).any(|(&s, &m)| !(s > 1e-12 * m.abs().max(1.0))) {
        return None;
    }
    let mut out = window.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        for v in col.iter_mut() {
            *v = (*v - means[j]) / stds[j];
        }
    }
    Some((out, means, stds))
}

#[allow(clippy::too_many_arguments)]
fn records_for(
    tag: &str,
    set: Option<&ForecastSet>,
    origin: usize,
    values: &DMatrix<f64>,
    ids: &[String],
    targets: &[usize],
    scale: (&[f64], &[f64]),
    h_max: usize,
) -> Vec<ForecastRecord> {
    let (means, stds) = scale;
    let mut out = Vec::new();
    for &i in targets {
        for h in 1..=h_max {
            let target = origin + h;
            if target >= values.nrows() {
                continue;
            }
            let actual = values[(target, i)];
            let mut rec = ForecastRecord {
                origin,
                horizon: h,
                variable: ids[i].clone(),
                model: tag.to_string(),
                point: f64::NAN,
                pred_var: f64::NAN,
                log_score: None,
                actual,
                diverged: true,
            };
            if let Some(set) = set {
                let f = &set.horizons[h - 1];
                let (m, s) = (means[i], stds[i]);
                let point = f.mean[i] * s + m;
                let var = f.var[i] * s * s;
                let z = (actual - m) / s;
                let score = match &f.mixture {
                    Some(mix) => mix.marginal_logpdf(i, z),
                    None => normal_logpdf(z, f.mean[i], f.var[i]),
                } - s.ln();
                if point.is_finite() && var > 0.0 && var.is_finite() && score.is_finite() {
                    rec.point = point;
                    rec.pred_var = var;
                    rec.log_score = set.has_density.then_some(score);
                    rec.diverged = false;
                }
            }
            out.push(rec);
        }
    }
    out
}

/// Run every runner over origins `first_origin..T-1` on the transformed,
/// unstandardized `values` (T x N). Records are only emitted where the
/// target date exists, so horizon h has `T - h - first_origin` records per
/// variable and model. Runners that fail at an origin produce divergent
/// records and the harness moves on.
pub fn expanding_window_forecast(
    values: &DMatrix<f64>,
    ids: &[String],
    runners: &mut [Box<dyn Runner>],
    design: &Design,
) -> Result<Vec<ForecastRecord>> {
    let (t_len, n) = values.shape();
    if ids.len() != n {
        return Err(Error::Dimension(format!("{} ids for {n} series", ids.len())));
    }
    if design.h_max == 0 {
        return Err(Error::InvalidParameter("h_max must be ≥ 1".into()));
    }
    if design.first_origin < 2 || design.first_origin + 1 >= t_len {
        return Err(Error::InvalidParameter(format!(
            "first origin {} leaves no estimation sample or no target in {t_len} observations",
            design.first_origin
        )));
    }
    if let Some(&bad) = design.targets.iter().find(|&&i| i >= n) {
        return Err(Error::InvalidParameter(format!("target column {bad} out of range")));
    }
    let targets: Vec<usize> = if design.targets.is_empty() {
        (0..n).collect()
    } else {
        design.targets.clone()
    };
    let mut records = Vec::new();
    for origin in design.first_origin..t_len - 1 {
        let window = values.rows(0, origin + 1).into_owned();
        let Some((std_window, means, stds)) = standardize_window(&window) else {
            warn!("origin {origin}: a series is constant over the window; all forecasts diverge");
            for r in runners.iter() {
                records.extend(records_for(r.tag(), None, origin, values, ids, &targets, (&[], &[]), design.h_max));
            }
            continue;
        };
        let sets: Vec<Option<ForecastSet>> = runners
            .par_iter_mut()
            .map(|r| match r.forecast(&std_window, design.h_max) {
                Ok(set) => Some(set),
                Err(e) => {
                    warn!("origin {origin}: {} failed: {e}", r.tag());
                    None
                }
            })
            .collect();
        for (r, set) in runners.iter().zip(&sets) {
            records.extend(records_for(
                r.tag(),
                set.as_ref(),
                origin,
                values,
                ids,
                &targets,
                (&means, &stds),
                design.h_max,
            ));
        }
    }
    Ok(records)
}

fn fmt_opt(v: f64) -> String {
    if v.is_finite() {
        crate::report::fmt_sig(v)
    } else {
        String::new()
    }
}

/// Records as CSV, origins written as dates.
pub fn write_records_csv(records: &[ForecastRecord], dates: &[Quarter], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "origin", "horizon", "variable", "model", "point", "pred_var", "log_score", "actual", "diverged",
    ])?;
    for r in records {
        w.write_record([
            dates.get(r.origin).map(|d| d.to_string()).unwrap_or_else(|| r.origin.to_string()),
            r.horizon.to_string(),
            r.variable.clone(),
            r.model.clone(),
            fmt_opt(r.point),
            fmt_opt(r.pred_var),
            r.log_score.map(fmt_opt).unwrap_or_default(),
            fmt_opt(r.actual),
            r.diverged.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Deserialize)]
struct ExternalRow {
    origin: String,
    horizon: usize,
    variable: String,
    model: String,
    point: Option<f64>,
    pred_var: Option<f64>,
    log_score: Option<f64>,
    actual: f64,
    #[serde(default)]
    diverged: bool,
}

/// Read forecast records produced elsewhere (same columns as
/// [`write_records_csv`]), e.g. a benchmark not implemented here. Origin
/// dates are mapped to rows of `dates`.
pub fn read_records_csv(path: impl AsRef<Path>, dates: &[Quarter]) -> Result<Vec<ForecastRecord>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (k, row) in rdr.deserialize::<ExternalRow>().enumerate() {
        let row = row?;
        let date: Quarter = row.origin.parse().map_err(|_| Error::Parse {
            row: k + 2,
            column: "origin".into(),
            message: format!("not a date: {}", row.origin),
        })?;
        let origin = dates.iter().position(|d| *d == date).ok_or_else(|| Error::Parse {
            row: k + 2,
            column: "origin".into(),
            message: format!("{date} is not in the panel"),
        })?;
        let diverged = row.diverged || row.point.is_none();
        out.push(ForecastRecord {
            origin,
            horizon: row.horizon,
            variable: row.variable,
            model: row.model,
            point: row.point.unwrap_or(f64::NAN),
            pred_var: row.pred_var.unwrap_or(f64::NAN),
            log_score: row.log_score,
            actual: row.actual,
            diverged,
        });
    }
    Ok(out)
}
