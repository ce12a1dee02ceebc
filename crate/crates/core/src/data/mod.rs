//! Macro panel ingestion: calendar quarters, stationarity transforms and
//! column standardization.

mod io;
mod transform;

pub use io::{load_panel, load_panel_str, read_any_panel, read_normalized_panel, write_normalized_panel, write_raw_panel};
pub use transform::{apply_transform, rows_lost, validate_tcode};

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A calendar quarter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Quarter {
    pub year: i32,
    /// 1..=4
    pub quarter: u8,
}

impl Quarter {
    pub fn new(year: i32, quarter: u8) -> Self {
        assert!((1..=4).contains(&quarter), "quarter must be 1..=4");
        Quarter { year, quarter }
    }

    /// Quarters elapsed since year 0 Q1.
    pub fn ordinal(self) -> i64 {
        self.year as i64 * 4 + (self.quarter as i64 - 1)
    }

    pub fn from_ordinal(ord: i64) -> Self {
        Quarter {
            year: ord.div_euclid(4) as i32,
            quarter: (ord.rem_euclid(4) + 1) as u8,
        }
    }

    pub fn offset(self, steps: i64) -> Self {
        Self::from_ordinal(self.ordinal() + steps)
    }

    fn from_month(year: i32, month: u32) -> Option<Self> {
        (1..=12)
            .contains(&month)
            .then(|| Quarter::new(year, ((month - 1) / 3 + 1) as u8))
    }
}

impl fmt::Display for Quarter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}Q{}", self.year, self.quarter)
    }
}

impl FromStr for Quarter {
    type Err = String;

    /// Accepts `1960Q1`, `1960:1`, `1960:Q1`, `1960-Q1`, `1960-01-01` and
    /// the FRED `m/d/yyyy` layout.
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let s = s.trim();
        let bad = || format!("unrecognized quarter date '{s}'");
        if let Some((m, rest)) = s.split_once('/') {
            let (_, y) = rest.split_once('/').ok_or_else(bad)?;
            let month: u32 = m.parse().map_err(|_| bad())?;
            let year: i32 = y.parse().map_err(|_| bad())?;
            return Quarter::from_month(year, month).ok_or_else(bad);
        }
        let upper = s.to_ascii_uppercase();
        for sep in ["Q", ":Q", "-Q", ":"] {
            if let Some((y, q)) = upper.split_once(sep) {
                if let (Ok(year), Ok(q)) = (y.parse::<i32>(), q.parse::<u8>()) {
                    if (1..=4).contains(&q) {
                        return Ok(Quarter::new(year, q));
                    }
                }
            }
        }
        let parts: Vec<&str> = s.split('-').collect();
        if parts.len() == 3 {
            let year: i32 = parts[0].parse().map_err(|_| bad())?;
            let month: u32 = parts[1].parse().map_err(|_| bad())?;
            return Quarter::from_month(year, month).ok_or_else(bad);
        }
        Err(bad())
    }
}

/// Block tag used by the identification template.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Group {
    RI,
    NI,
    LMI,
    PI,
    FI,
}

impl FromStr for Group {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "RI" => Ok(Group::RI),
            "NI" => Ok(Group::NI),
            "LMI" => Ok(Group::LMI),
            "PI" => Ok(Group::PI),
            "FI" => Ok(Group::FI),
            other => Err(format!("unknown group tag '{other}'")),
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Group::RI => "RI",
            Group::NI => "NI",
            Group::LMI => "LMI",
            Group::PI => "PI",
            Group::FI => "FI",
        };
        f.write_str(s)
    }
}

/// A panel before standardization: either straight from the CSV or after
/// stationarity transforms.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPanel {
    pub dates: Vec<Quarter>,
    pub series_ids: Vec<String>,
    /// T x N, rows are dates.
    pub values: DMatrix<f64>,
    pub tcodes: Vec<u8>,
    pub group_labels: Option<Vec<Group>>,
}

impl RawPanel {
    pub fn n_obs(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_series(&self) -> usize {
        self.values.ncols()
    }

    /// Apply each column's transform code and drop the same number of leading
    /// rows from every column, so all series share one date support.
    pub fn transform(&self) -> Result<RawPanel> {
        let lost = self.tcodes.iter().map(|&c| rows_lost(c)).max().unwrap_or(0);
        let t = self.n_obs();
        if t <= lost {
            return Err(Error::InsufficientObservations {
                needed: lost + 1,
                available: t,
            });
        }
        let keep = t - lost;
        let mut values = DMatrix::zeros(keep, self.n_series());
        for (j, &code) in self.tcodes.iter().enumerate() {
            let column: Vec<f64> = self.values.column(j).iter().copied().collect();
            let out = apply_transform(&column, code).map_err(|e| match e {
                Error::Domain { index, message } => Error::Domain {
                    index,
                    message: format!("series {}: {message}", self.series_ids[j]),
                },
                other => other,
            })?;
            let skip = out.len() - keep;
            for (i, v) in out[skip..].iter().enumerate() {
                values[(i, j)] = *v;
            }
        }
        Ok(RawPanel {
            dates: self.dates[lost..].to_vec(),
            series_ids: self.series_ids.clone(),
            values,
            tcodes: self.tcodes.clone(),
            group_labels: self.group_labels.clone(),
        })
    }
}

/// Standardized panel ready for estimation. `means`/`stds` are the
/// pre-standardization column statistics used to map forecasts back.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesPanel {
    pub dates: Vec<Quarter>,
    pub series_ids: Vec<String>,
    pub values: DMatrix<f64>,
    pub tcodes: Vec<u8>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub group_labels: Option<Vec<Group>>,
}

impl TimeSeriesPanel {
    pub fn n_obs(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_series(&self) -> usize {
        self.values.ncols()
    }

    /// The transformed (unstandardized) values.
    pub fn destandardize(&self) -> DMatrix<f64> {
        destandardize_columns(&self.values, &self.means, &self.stds)
    }

    pub fn series_index(&self, id: &str) -> Option<usize> {
        self.series_ids.iter().position(|s| s == id)
    }
}

/// Column means and sample standard deviations (denominator `T - 1`).
pub fn column_stats(values: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>) {
    let t = values.nrows() as f64;
    values
        .column_iter()
        .map(|c| {
            let mean = c.sum() / t;
            let ss: f64 = c.iter().map(|v| (v - mean) * (v - mean)).sum();
            (mean, (ss / (t - 1.0)).sqrt())
        })
        .unzip()
}

/// Center and scale each column. Fails on a zero-variance column, naming it.
pub fn standardize_columns(
    values: &DMatrix<f64>,
    ids: &[String],
) -> Result<(DMatrix<f64>, Vec<f64>, Vec<f64>)> {
    if values.nrows() < 2 {
        return Err(Error::InsufficientObservations {
            needed: 2,
            available: values.nrows(),
        });
    }
    let (means, stds) = column_stats(values);
    for (j, (&m, &s)) in means.iter().zip(&stds).enumerate() {
        if !(s > 1e-12 * m.abs().max(1.0)) {
            return Err(Error::ZeroVariance {
                series: ids.get(j).cloned().unwrap_or_else(|| format!("#{j}")),
            });
        }
    }
    let mut out = values.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        for v in col.iter_mut() {
            *v = (*v - means[j]) / stds[j];
        }
    }
    Ok((out, means, stds))
}

pub fn destandardize_columns(values: &DMatrix<f64>, means: &[f64], stds: &[f64]) -> DMatrix<f64> {
    let mut out = values.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        for v in col.iter_mut() {
            *v = *v * stds[j] + means[j];
        }
    }
    out
}

pub fn standardize(panel: &RawPanel) -> Result<TimeSeriesPanel> {
    let (values, means, stds) = standardize_columns(&panel.values, &panel.series_ids)?;
    Ok(TimeSeriesPanel {
        dates: panel.dates.clone(),
        series_ids: panel.series_ids.clone(),
        values,
        tcodes: panel.tcodes.clone(),
        means,
        stds,
        group_labels: panel.group_labels.clone(),
    })
}

/// Transform to stationarity, then standardize.
pub fn prepare(panel: &RawPanel) -> Result<TimeSeriesPanel> {
    standardize(&panel.transform()?)
}

pub(crate) fn check_dates(dates: &[Quarter]) -> Result<()> {
    for w in dates.windows(2) {
        if w[1].ordinal() - w[0].ordinal() != 1 {
            return Err(Error::Structure(format!(
                "dates must be consecutive quarters; found {} followed by {}",
                w[0], w[1]
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quarter_formats() {
        for s in ["1960Q1", "1960:1", "1960:Q1", "1960-Q1", "1/1/1960", "1960-02-01", "3/1/1960"] {
            assert_eq!(s.parse::<Quarter>().unwrap(), Quarter::new(1960, 1), "{s}");
        }
        assert_eq!("12/1/2019".parse::<Quarter>().unwrap(), Quarter::new(2019, 4));
        assert!("tcode".parse::<Quarter>().is_err());
        assert!("1960Q5".parse::<Quarter>().is_err());
        assert_eq!(Quarter::new(1960, 4).offset(1), Quarter::new(1961, 1));
        assert_eq!(Quarter::new(1960, 1).to_string(), "1960Q1");
    }

    #[test]
    fn standardize_symmetric_column() {
        let v = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let (s, m, sd) = standardize_columns(&v, &["x".into()]).unwrap();
        assert_eq!(m, vec![2.0]);
        assert_eq!(sd, vec![1.0]);
        assert_eq!(s.as_slice(), &[-1.0, 0.0, 1.0]);
    }

    #[test]
    fn standardize_is_idempotent() {
        let v = DMatrix::from_column_slice(5, 1, &[0.3, -1.2, 4.4, 2.0, 0.1]);
        let (once, _, _) = standardize_columns(&v, &["x".into()]).unwrap();
        let (twice, _, _) = standardize_columns(&once, &["x".into()]).unwrap();
        assert!((once - twice).amax() < 1e-12);
    }

    #[test]
    fn standardize_round_trip() {
        let v = DMatrix::from_row_slice(4, 2, &[1.0, 10.0, 2.5, 11.0, -3.0, 9.5, 0.0, 14.0]);
        let (s, m, sd) = standardize_columns(&v, &["a".into(), "b".into()]).unwrap();
        assert!((destandardize_columns(&s, &m, &sd) - v).amax() < 1e-12);
    }

    #[test]
    fn zero_variance_column_is_named() {
        let v = DMatrix::from_row_slice(3, 2, &[1.0, 5.0, 2.0, 5.0, 3.0, 5.0]);
        match standardize_columns(&v, &["a".into(), "FLAT".into()]) {
            Err(Error::ZeroVariance { series }) => assert_eq!(series, "FLAT"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn transform_drops_rows_uniformly() {
        let panel = RawPanel {
            dates: (0..5).map(|i| Quarter::new(2000, 1).offset(i)).collect(),
            series_ids: vec!["lvl".into(), "d2".into(), "dl".into()],
            values: DMatrix::from_row_slice(
                5,
                3,
                &[1.0, 1.0, 1.0, 2.0, 4.0, 2.0, 3.0, 9.0, 4.0, 4.0, 16.0, 8.0, 5.0, 25.0, 16.0],
            ),
            tcodes: vec![1, 3, 5],
            group_labels: None,
        };
        let out = panel.transform().unwrap();
        assert_eq!(out.n_obs(), 3);
        assert_eq!(out.dates[0], Quarter::new(2000, 3));
        assert_eq!(out.values.column(0).as_slice(), &[3.0, 4.0, 5.0]);
        assert_eq!(out.values.column(1).as_slice(), &[2.0, 2.0, 2.0]);
        for v in out.values.column(2).iter() {
            assert!((v - 2f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn check_dates_rejects_gaps() {
        let d = vec![Quarter::new(2000, 1), Quarter::new(2000, 3)];
        assert!(check_dates(&d).is_err());
    }
}
