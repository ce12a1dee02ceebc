//! Stationarity transforms following the FRED-QD transform-code table.
//!
//! | code | transform            | rows lost |
//! |------|----------------------|-----------|
//! | 1    | x                    | 0         |
//! | 2    | Δx                   | 1         |
//! | 3    | Δ²x                  | 2         |
//! | 4    | ln x                 | 0         |
//! | 5    | Δ ln x               | 1         |
//! | 6    | Δ² ln x              | 2         |
//! | 7    | Δ(x_t / x_{t-1} - 1) | 2         |

use crate::error::{Error, Result};

/// Number of leading observations a transform code consumes.
pub fn rows_lost(tcode: u8) -> usize {
    match tcode {
        1 | 4 => 0,
        2 | 5 => 1,
        _ => 2,
    }
}

pub fn validate_tcode(code: i64, series: &str) -> Result<u8> {
    if (1..=7).contains(&code) {
        Ok(code as u8)
    } else {
        Err(Error::InvalidTcode {
            series: series.to_string(),
            code,
        })
    }
}

fn diff(x: &[f64]) -> Vec<f64> {
    x.windows(2).map(|w| w[1] - w[0]).collect()
}

fn log_series(x: &[f64]) -> Result<Vec<f64>> {
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            if v > 0.0 {
                Ok(v.ln())
            } else {
                Err(Error::Domain {
                    index: i,
                    message: format!("log transform requires positive values, found {v}"),
                })
            }
        })
        .collect()
}

/// Apply transform `tcode` to `x`. The result is shorter than `x` by
/// [`rows_lost`]`(tcode)` observations.
pub fn apply_transform(x: &[f64], tcode: u8) -> Result<Vec<f64>> {
    if !(1..=7).contains(&tcode) {
        return Err(Error::InvalidTcode {
            series: "<unnamed>".into(),
            code: tcode as i64,
        });
    }
    if x.len() < rows_lost(tcode) {
        return Err(Error::InsufficientObservations {
            needed: rows_lost(tcode),
            available: x.len(),
        });
    }
    let out = match tcode {
        1 => x.to_vec(),
        2 => diff(x),
        3 => diff(&diff(x)),
        4 => log_series(x)?,
        5 => diff(&log_series(x)?),
        6 => diff(&diff(&log_series(x)?)),
        7 => {
            // positivity check doubles as the guard against division by zero
            log_series(x)?;
            let growth: Vec<f64> = x.windows(2).map(|w| w[1] / w[0] - 1.0).collect();
            diff(&growth)
        }
        _ => unreachable!(),
    };
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_difference_of_doubling_sequence() {
        let out = apply_transform(&[1.0, 2.0, 4.0], 5).unwrap();
        assert_eq!(out.len(), 2);
        for v in out {
            assert!((v - 2f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn first_difference_of_constant_is_zero() {
        assert_eq!(apply_transform(&[3.0, 3.0, 3.0], 2).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn second_log_difference() {
        let e = std::f64::consts::E;
        let out = apply_transform(&[1.0, e, e.powi(3)], 6).unwrap();
        // (3 - 1) - (1 - 0)
        assert_eq!(out.len(), 1);
        assert!((out[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn output_lengths_match_code_table() {
        let x: Vec<f64> = (1..=10).map(|v| v as f64).collect();
        for code in 1..=7u8 {
            let out = apply_transform(&x, code).unwrap();
            assert_eq!(out.len(), x.len() - rows_lost(code), "tcode {code}");
        }
    }

    #[test]
    fn growth_rate_change() {
        // growth rates 1.0, 0.5 -> change -0.5
        let out = apply_transform(&[1.0, 2.0, 3.0], 7).unwrap();
        assert!((out[0] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn nonpositive_value_under_log_reports_index() {
        match apply_transform(&[1.0, 2.0, 0.0, 4.0], 5) {
            Err(Error::Domain { index, .. }) => assert_eq!(index, 2),
            other => panic!("expected domain error, got {other:?}"),
        }
        assert!(apply_transform(&[1.0, -1.0], 4).is_err());
    }

    #[test]
    fn invalid_code_names_series() {
        let err = validate_tcode(9, "GDPC1").unwrap_err();
        assert!(err.to_string().contains("GDPC1"));
    }
}
