use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::ForecastRecord;
use crate::error::{Error, Result};
use crate::report::fmt_sig;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell {
    Value(f64),
    /// Some forecast in the cell diverged; rendered `---`.
    Diverged,
    /// No density (or no defined ratio); rendered `n/a`.
    Unavailable,
}

impl Cell {
    pub fn render(&self) -> String {
        match self {
            Cell::Value(v) => fmt_sig(*v),
            Cell::Diverged => "---".into(),
            Cell::Unavailable => "n/a".into(),
        }
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            Cell::Value(v) => Some(*v),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Metric {
    Rmsfe,
    Mafe,
    Alpl,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Rmsfe, Metric::Mafe, Metric::Alpl];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Rmsfe => "rmsfe",
            Metric::Mafe => "mafe",
            Metric::Alpl => "alpl",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

fn guard(records: &[ForecastRecord]) -> Result<Option<Cell>> {
    if records.is_empty() {
        return Err(Error::EmptyRecords);
    }
    Ok(records.iter().any(|r| r.diverged).then_some(Cell::Diverged))
}

/// `sqrt(mean((actual - point)²))` over the records.
pub fn rmsfe(records: &[ForecastRecord]) -> Result<Cell> {
    if let Some(c) = guard(records)? {
        return Ok(c);
    }
    let sse: f64 = records.iter().map(|r| r.error() * r.error()).sum();
    Ok(Cell::Value((sse / records.len() as f64).sqrt()))
}

pub fn mafe(records: &[ForecastRecord]) -> Result<Cell> {
    if let Some(c) = guard(records)? {
        return Ok(c);
    }
    let sae: f64 = records.iter().map(|r| r.error().abs()).sum();
    Ok(Cell::Value(sae / records.len() as f64))
}

/// Mean log predictive density of the realizations.
pub fn alpl(records: &[ForecastRecord]) -> Result<Cell> {
    if let Some(c) = guard(records)? {
        return Ok(c);
    }
    let mut total = 0.0;
    for r in records {
        match r.log_score {
            Some(s) => total += s,
            None => return Ok(Cell::Unavailable),
        }
    }
    Ok(Cell::Value(total / records.len() as f64))
}

/// Cells for every (model, variable, horizon) present in the records.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricTable {
    pub models: Vec<String>,
    pub variables: Vec<String>,
    pub horizons: Vec<usize>,
    cells: BTreeMap<(usize, usize, usize), [Cell; 3]>,
}

impl MetricTable {
    pub fn cell(&self, model: &str, variable: &str, horizon: usize, metric: Metric) -> Option<Cell> {
        let m = self.models.iter().position(|x| x == model)?;
        let v = self.variables.iter().position(|x| x == variable)?;
        self.cells.get(&(m, v, horizon)).map(|c| c[metric.index()])
    }

    /// Long CSV: `model,variable,horizon,value` plus `relative` when given.
    pub fn write_csv(&self, metric: Metric, relative: Option<&MetricTable>, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["model", "variable", "horizon", "value"];
        if relative.is_some() {
            header.push("relative");
        }
        w.write_record(&header)?;
        for (&(m, v, h), cells) in &self.cells {
            let mut row = vec![
                self.models[m].clone(),
                self.variables[v].clone(),
                h.to_string(),
                cells[metric.index()].render(),
            ];
            if let Some(rel) = relative {
                let c = rel.cell(&self.models[m], &self.variables[v], h, metric).unwrap_or(Cell::Unavailable);
                row.push(c.render());
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Aligned plain text: one block per variable, rows are models, columns
    /// are horizons for each metric.
    pub fn render_text(&self, title: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{title}");
        let width = 10;
        let name_width = self.models.iter().map(|m| m.len()).max().unwrap_or(5).max(5);
        for (v, var) in self.variables.iter().enumerate() {
            let _ = writeln!(out, "\n{var}");
            let _ = write!(out, "{:<name_width$}", "model");
            for metric in Metric::ALL {
                for h in &self.horizons {
                    let label = format!("{}_h{h}", metric.name().to_uppercase());
                    let _ = write!(out, " {label:>width$}");
                }
            }
            out.push('\n');
            for (m, model) in self.models.iter().enumerate() {
                let _ = write!(out, "{model:<name_width$}");
                for metric in Metric::ALL {
                    for &h in &self.horizons {
                        let c = self
                            .cells
                            .get(&(m, v, h))
                            .map(|c| c[metric.index()])
                            .unwrap_or(Cell::Unavailable);
                        let _ = write!(out, " {:>width$}", c.render());
                    }
                }
                out.push('\n');
            }
        }
        out
    }
}

fn first_seen<'a>(items: impl Iterator<Item = &'a String>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for s in items {
        if !out.contains(s) {
            out.push(s.clone());
        }
    }
    out
}

/// Absolute metrics per cell. Models and variables keep their order of
/// first appearance.
pub fn metric_table(records: &[ForecastRecord]) -> Result<MetricTable> {
    if records.is_empty() {
        return Err(Error::EmptyRecords);
    }
    let models = first_seen(records.iter().map(|r| &r.model));
    let variables = first_seen(records.iter().map(|r| &r.variable));
    let mut groups: BTreeMap<(usize, usize, usize), Vec<ForecastRecord>> = BTreeMap::new();
    for r in records {
        let m = models.iter().position(|x| *x == r.model).expect("collected");
        let v = variables.iter().position(|x| *x == r.variable).expect("collected");
        groups.entry((m, v, r.horizon)).or_default().push(r.clone());
    }
    let mut horizons: Vec<usize> = groups.keys().map(|k| k.2).collect();
    horizons.sort_unstable();
    horizons.dedup();
    let mut cells = BTreeMap::new();
    for (key, recs) in groups {
        cells.insert(key, [rmsfe(&recs)?, mafe(&recs)?, alpl(&recs)?]);
    }
    Ok(MetricTable {
        models,
        variables,
        horizons,
        cells,
    })
}

/// Every cell divided by the benchmark's cell for the same variable and
/// horizon; the benchmark's own defined cells are exactly 1.
pub fn relative_table(table: &MetricTable, benchmark: &str) -> Result<MetricTable> {
    let b = table
        .models
        .iter()
        .position(|m| m == benchmark)
        .ok_or_else(|| Error::InvalidParameter(format!("benchmark model {benchmark} has no records")))?;
    let mut cells = BTreeMap::new();
    for (&(m, v, h), own) in &table.cells {
        let bench = table.cells.get(&(b, v, h));
        let mut out = [Cell::Unavailable; 3];
        for k in 0..3 {
            out[k] = match (own[k], bench.map(|c| c[k])) {
                (Cell::Value(_), Some(Cell::Value(_))) if m == b => Cell::Value(1.0),
                (Cell::Value(x), Some(Cell::Value(y))) => {
                    let r = x / y;
                    if r.is_finite() {
                        Cell::Value(r)
                    } else {
                        Cell::Unavailable
                    }
                }
                (_, Some(Cell::Diverged)) => Cell::Diverged,
                (Cell::Diverged, _) => Cell::Diverged,
                _ => Cell::Unavailable,
            };
        }
        cells.insert((m, v, h), out);
    }
    Ok(MetricTable {
        models: table.models.clone(),
        variables: table.variables.clone(),
        horizons: table.horizons.clone(),
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(model: &str, point: f64, actual: f64, score: Option<f64>) -> ForecastRecord {
        ForecastRecord {
            origin: 0,
            horizon: 1,
            variable: "x".into(),
            model: model.into(),
            point,
            pred_var: 1.0,
            log_score: score,
            actual,
            diverged: false,
        }
    }

    #[test]
    fn hand_arithmetic() {
        let perfect = vec![rec("a", 1.0, 1.0, None), rec("a", 2.0, 2.0, None)];
        assert_eq!(rmsfe(&perfect).unwrap(), Cell::Value(0.0));
        assert_eq!(mafe(&perfect).unwrap(), Cell::Value(0.0));
        let constant = vec![rec("a", 0.0, 2.0, None), rec("a", 1.0, 3.0, None)];
        assert_eq!(rmsfe(&constant).unwrap(), Cell::Value(2.0));
        assert_eq!(mafe(&constant).unwrap(), Cell::Value(2.0));
        let mixed = vec![rec("a", 0.0, 3.0, None), rec("a", 0.0, -4.0, None)];
        assert!((rmsfe(&mixed).unwrap().value().unwrap() - 12.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(mafe(&mixed).unwrap(), Cell::Value(3.5));
    }

    #[test]
    fn alpl_standard_normal_and_duplication() {
        let s = -0.5 * (2.0 * std::f64::consts::PI).ln();
        let one = vec![rec("a", 0.0, 0.0, Some(s))];
        assert!((alpl(&one).unwrap().value().unwrap() + 0.9189385).abs() < 1e-7);
        let recs = vec![rec("a", 0.0, 0.0, Some(-1.0)), rec("a", 0.0, 0.0, Some(-2.5))];
        let doubled: Vec<_> = recs.iter().chain(&recs).cloned().collect();
        assert_eq!(alpl(&recs).unwrap(), alpl(&doubled).unwrap());
        assert_eq!(alpl(&[rec("a", 0.0, 0.0, None)]).unwrap(), Cell::Unavailable);
    }

    #[test]
    fn empty_is_an_error() {
        assert!(matches!(rmsfe(&[]), Err(Error::EmptyRecords)));
    }

    #[test]
    fn benchmark_cells_are_one_and_divergence_renders() {
        let mut recs = vec![
            rec("bench", 0.1, 0.4, Some(-1.2)),
            rec("bench", 0.3, -0.2, Some(-1.4)),
            rec("m", 0.2, 0.4, Some(-1.0)),
            rec("m", 0.0, -0.2, Some(-1.1)),
        ];
        let mut bad = rec("div", f64::NAN, 0.4, None);
        bad.diverged = true;
        recs.push(bad);
        let abs = metric_table(&recs).unwrap();
        let rel = relative_table(&abs, "bench").unwrap();
        for metric in Metric::ALL {
            assert_eq!(rel.cell("bench", "x", 1, metric), Some(Cell::Value(1.0)));
            assert_eq!(rel.cell("div", "x", 1, metric).unwrap().render(), "---");
        }
        let self_rel = relative_table(&abs, "m").unwrap();
        assert_eq!(self_rel.cell("m", "x", 1, Metric::Rmsfe), Some(Cell::Value(1.0)));
        assert!(rel.render_text("t").contains("---"));
        assert!(relative_table(&abs, "missing").is_err());
    }
}
