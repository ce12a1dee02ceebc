use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;

use super::{check_dates, prepare, transform::validate_tcode, Group, Quarter, RawPanel, TimeSeriesPanel};
use crate::error::{Error, Result};

enum MetaRow {
    Tcode,
    Group,
    Ignored,
}

fn meta_row_kind(label: &str) -> Option<MetaRow> {
    let label = label.trim().trim_end_matches(':').to_ascii_lowercase();
    match label.as_str() {
        "tcode" | "tcodes" | "transform" => Some(MetaRow::Tcode),
        "group" | "groups" => Some(MetaRow::Group),
        "factors" => Some(MetaRow::Ignored),
        _ => None,
    }
}

/// Load a FRED-QD style CSV: a header row of series ids (one of which is the
/// date column), optional `tcode`/`group` metadata rows identified by their
/// date-column label, then one row per quarter. Transform codes default to 1.
pub fn load_panel(path: impl AsRef<Path>, date_column: &str) -> Result<RawPanel> {
    let text = fs::read_to_string(path)?;
    load_panel_str(&text, date_column)
}

pub fn load_panel_str(text: &str, date_column: &str) -> Result<RawPanel> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut records = reader.records();
    let header = records
        .next()
        .ok_or_else(|| Error::Structure("empty file".into()))??;
    let header: Vec<String> = header.iter().map(str::to_string).collect();
    let date_idx = header
        .iter()
        .position(|h| h == date_column)
        .ok_or_else(|| Error::Structure(format!("date column '{date_column}' not found in header")))?;
    let series_cols: Vec<usize> = (0..header.len()).filter(|&j| j != date_idx).collect();
    let series_ids: Vec<String> = series_cols.iter().map(|&j| header[j].clone()).collect();
    if series_ids.is_empty() {
        return Err(Error::Structure("no series columns".into()));
    }

    let mut tcodes: Option<Vec<u8>> = None;
    let mut groups: Option<Vec<Group>> = None;
    let mut dates = Vec::new();
    let mut data: Vec<f64> = Vec::new();

    for (k, rec) in records.enumerate() {
        let rec = rec?;
        let row = k + 2;
        if rec.iter().all(|c| c.is_empty()) {
            continue;
        }
        if rec.len() != header.len() {
            return Err(Error::Structure(format!(
                "row {row} has {} fields, header has {}",
                rec.len(),
                header.len()
            )));
        }
        let label = &rec[date_idx];
        if let Ok(q) = label.parse::<Quarter>() {
            dates.push(q);
            for (&j, id) in series_cols.iter().zip(&series_ids) {
                let cell = &rec[j];
                let v: f64 = cell.parse().map_err(|_| Error::Parse {
                    row,
                    column: id.clone(),
                    message: format!("'{cell}' is not a number"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        row,
                        column: id.clone(),
                        message: format!("'{cell}' is not finite"),
                    });
                }
                data.push(v);
            }
            continue;
        }
        if !dates.is_empty() {
            return Err(Error::Parse {
                row,
                column: date_column.to_string(),
                message: format!("'{label}' is not a quarter date"),
            });
        }
        match meta_row_kind(label) {
            Some(MetaRow::Tcode) => {
                let mut codes = Vec::with_capacity(series_ids.len());
                for (&j, id) in series_cols.iter().zip(&series_ids) {
                    let cell = &rec[j];
                    let code: f64 = cell.parse().map_err(|_| Error::Parse {
                        row,
                        column: id.clone(),
                        message: format!("transform code '{cell}' is not an integer"),
                    })?;
                    if code.fract() != 0.0 {
                        return Err(Error::InvalidTcode {
                            series: id.clone(),
                            code: code as i64,
                        });
                    }
                    codes.push(validate_tcode(code as i64, id)?);
                }
                tcodes = Some(codes);
            }
            Some(MetaRow::Group) => {
                let mut tags = Vec::with_capacity(series_ids.len());
                for (&j, id) in series_cols.iter().zip(&series_ids) {
                    tags.push(rec[j].parse::<Group>().map_err(|message| Error::Parse {
                        row,
                        column: id.clone(),
                        message,
                    })?);
                }
                groups = Some(tags);
            }
            Some(MetaRow::Ignored) => {}
            None => {
                return Err(Error::Parse {
                    row,
                    column: date_column.to_string(),
                    message: format!("'{label}' is neither a quarter date nor a metadata label"),
                })
            }
        }
    }

    if dates.is_empty() {
        return Err(Error::Structure("no data rows".into()));
    }
    check_dates(&dates)?;
    let n = series_ids.len();
    let values = DMatrix::from_row_slice(dates.len(), n, &data);
    Ok(RawPanel {
        dates,
        tcodes: tcodes.unwrap_or_else(|| vec![1; n]),
        series_ids,
        values,
        group_labels: groups,
    })
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn write_rows(out: &mut impl Write, dates: &[Quarter], values: &DMatrix<f64>) -> Result<()> {
    for (i, d) in dates.iter().enumerate() {
        let row: Vec<String> = values.row(i).iter().map(|v| v.to_string()).collect();
        writeln!(out, "{d},{}", row.join(","))?;
    }
    Ok(())
}

/// Write a panel in the layout [`load_panel`] reads (date column `date`).
pub fn write_raw_panel(panel: &RawPanel, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    writeln!(buf, "date,{}", panel.series_ids.join(","))?;
    writeln!(buf, "tcode,{}", join(&panel.tcodes))?;
    if let Some(g) = &panel.group_labels {
        writeln!(buf, "group,{}", join(g))?;
    }
    write_rows(&mut buf, &panel.dates, &panel.values)?;
    fs::write(path, buf)?;
    Ok(())
}

/// Write a standardized panel with `#tcode:`, `#mean:`, `#std:` (and
/// optionally `#group:`) metadata lines ahead of the CSV body.
pub fn write_normalized_panel(panel: &TimeSeriesPanel, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    writeln!(buf, "#tcode:{}", join(&panel.tcodes))?;
    writeln!(buf, "#mean:{}", join(&panel.means))?;
    writeln!(buf, "#std:{}", join(&panel.stds))?;
    if let Some(g) = &panel.group_labels {
        writeln!(buf, "#group:{}", join(g))?;
    }
    writeln!(buf, "date,{}", panel.series_ids.join(","))?;
    write_rows(&mut buf, &panel.dates, &panel.values)?;
    fs::write(path, buf)?;
    Ok(())
}

fn parse_meta<T: std::str::FromStr>(line: &str, key: &str, n: usize) -> Result<Vec<T>> {
    let items: Vec<&str> = line.split(',').map(str::trim).collect();
    if items.len() != n {
        return Err(Error::Structure(format!("#{key} line has {} entries, expected {n}", items.len())));
    }
    items
        .iter()
        .enumerate()
        .map(|(j, s)| {
            s.parse().map_err(|_| Error::Parse {
                row: 0,
                column: format!("#{key}[{j}]"),
                message: format!("cannot parse '{s}'"),
            })
        })
        .collect()
}

pub fn read_normalized_panel(path: impl AsRef<Path>) -> Result<TimeSeriesPanel> {
    let text = fs::read_to_string(path)?;
    let mut meta = Vec::new();
    let mut body = String::new();
    for line in text.lines() {
        match line.strip_prefix('#') {
            Some(m) => meta.push(m.to_string()),
            None => {
                body.push_str(line);
                body.push('\n');
            }
        }
    }
    let raw = load_panel_str(&body, "date")?;
    let n = raw.n_series();
    let mut tcodes = None;
    let mut means = None;
    let mut stds = None;
    let mut groups = None;
    for m in &meta {
        let (key, val) = m
            .split_once(':')
            .ok_or_else(|| Error::Structure(format!("malformed metadata line '#{m}'")))?;
        match key.trim() {
            "tcode" => tcodes = Some(parse_meta::<u8>(val, "tcode", n)?),
            "mean" => means = Some(parse_meta::<f64>(val, "mean", n)?),
            "std" => stds = Some(parse_meta::<f64>(val, "std", n)?),
            "group" => {
                let tags: Vec<String> = parse_meta(val, "group", n)?;
                groups = Some(
                    tags.iter()
                        .map(|s| s.parse::<Group>().map_err(Error::Structure))
                        .collect::<Result<Vec<_>>>()?,
                );
            }
            other => return Err(Error::Structure(format!("unknown metadata key '{other}'"))),
        }
    }
    let missing = |k: &str| Error::Structure(format!("normalized panel lacks #{k} line"));
    Ok(TimeSeriesPanel {
        dates: raw.dates,
        series_ids: raw.series_ids,
        values: raw.values,
        tcodes: tcodes.ok_or_else(|| missing("tcode"))?,
        means: means.ok_or_else(|| missing("mean"))?,
        stds: stds.ok_or_else(|| missing("std"))?,
        group_labels: groups,
    })
}

/// Read either a normalized panel (detected by a leading `#` line) or a raw
/// CSV, which is then transformed and standardized.
pub fn read_any_panel(path: impl AsRef<Path>, date_column: &str) -> Result<TimeSeriesPanel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    if text.starts_with('#') {
        read_normalized_panel(path)
    } else {
        prepare(&load_panel_str(&text, date_column)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = "date,GDP,CPI\n\
                         tcode,1,5\n\
                         1960Q1,1.0,100\n\
                         1960Q2,2.0,101\n\
                         1960Q3,3.0,103\n\
                         1960Q4,2.5,104\n\
                         1961Q1,4.0,106\n";

    #[test]
    fn loads_tcode_row() {
        let p = load_panel_str(SMALL, "date").unwrap();
        assert_eq!(p.n_obs(), 5);
        assert_eq!(p.n_series(), 2);
        assert_eq!(p.tcodes, vec![1, 5]);
        assert_eq!(p.values[(4, 1)], 106.0);
    }

    #[test]
    fn missing_tcode_row_defaults_to_levels() {
        let text = "sasdate,A,B\n1/1/1960,1,2\n4/1/1960,3,4\n";
        let p = load_panel_str(text, "sasdate").unwrap();
        assert_eq!(p.tcodes, vec![1, 1]);
        assert_eq!(p.dates[1], Quarter::new(1960, 2));
    }

    #[test]
    fn non_numeric_cell_names_row_and_column() {
        let text = "date,GDP,CPI\n1960Q1,1,2\n1960Q2,1,2\n1960Q3,abc,2\n";
        match load_panel_str(text, "date") {
            Err(Error::Parse { row, column, .. }) => {
                assert_eq!(row, 4);
                assert_eq!(column, "GDP");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ragged_rows_are_structural_errors() {
        let text = "date,A,B\n1960Q1,1,2\n1960Q2,1\n";
        assert!(matches!(load_panel_str(text, "date"), Err(Error::Structure(_))));
    }

    #[test]
    fn bad_tcode_names_series() {
        let text = "date,A,B\ntcode,1,9\n1960Q1,1,2\n";
        match load_panel_str(text, "date") {
            Err(Error::InvalidTcode { series, code }) => {
                assert_eq!(series, "B");
                assert_eq!(code, 9);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn group_row_is_parsed() {
        let text = "date,A,B\ngroup,RI,FI\n1960Q1,1,2\n";
        let p = load_panel_str(text, "date").unwrap();
        assert_eq!(p.group_labels, Some(vec![Group::RI, Group::FI]));
    }

    #[test]
    fn normalized_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("panel.csv");
        let panel = prepare(&load_panel_str(SMALL, "date").unwrap()).unwrap();
        write_normalized_panel(&panel, &path).unwrap();
        let back = read_normalized_panel(&path).unwrap();
        assert_eq!(back, panel);
        let any = read_any_panel(&path, "date").unwrap();
        assert_eq!(any, panel);
    }

    #[test]
    fn raw_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("raw.csv");
        let raw = load_panel_str(SMALL, "date").unwrap();
        write_raw_panel(&raw, &path).unwrap();
        assert_eq!(load_panel(&path, "date").unwrap(), raw);
    }
}
