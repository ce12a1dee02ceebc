use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::filter::Design;

/// Index paths `f_t = ω' y_t`, one row per observation (T x q).
pub fn build_indexes(values: &DMatrix<f64>, omega: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if values.ncols() != omega.nrows() {
        return Err(Error::Dimension(format!(
            "panel has {} series but omega has {} rows",
            values.ncols(),
            omega.nrows()
        )));
    }
    Ok(values * omega)
}

/// Lagged-index regressors for rows `p..T`: `Z_t = I_N ⊗ x_t'` with
/// `x_t = (f_{t-1}', ..., f_{t-p}')'`.
///
/// The state vector is ordered equation by equation, and within an
/// equation by lag, then by index: coefficient of `f_{j,t-h}` in equation
/// `i` sits at `i·q·p + (h-1)·q + j`.
pub fn build_regressors(indexes: &DMatrix<f64>, p: usize, n: usize) -> Design {
    let (t_len, q) = indexes.shape();
    let rows = (p..t_len)
        .map(|t| {
            let mut x = DVector::zeros(q * p);
            for h in 1..=p {
                for j in 0..q {
                    x[(h - 1) * q + j] = indexes[(t - h, j)];
                }
            }
            x
        })
        .collect();
    Design::Kronecker { n, rows }
}

/// Loadings `β_h` (N x q) for lags `h = 1..=p` from a stacked state vector.
pub fn lag_coefficients(beta: &DVector<f64>, n: usize, q: usize, p: usize) -> Vec<DMatrix<f64>> {
    let r = q * p;
    (0..p)
        .map(|h| DMatrix::from_fn(n, q, |i, j| beta[i * r + h * q + j]))
        .collect()
}

/// Inverse of [`lag_coefficients`].
pub fn stack_coefficients(lags: &[DMatrix<f64>]) -> DVector<f64> {
    let p = lags.len();
    let (n, q) = lags[0].shape();
    let r = q * p;
    let mut beta = DVector::zeros(n * r);
    for (h, b) in lags.iter().enumerate() {
        for i in 0..n {
            for j in 0..q {
                beta[i * r + h * q + j] = b[(i, j)];
            }
        }
    }
    beta
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selection_omega_copies_series() {
        let y = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
        let omega = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let f = build_indexes(&y, &omega).unwrap();
        assert_eq!(f, y.columns(0, 2));
    }

    #[test]
    fn averaging_omega_gives_cross_sectional_mean() {
        let y = DMatrix::from_row_slice(2, 4, &[1.0, 2.0, 3.0, 6.0, -1.0, 0.0, 1.0, 4.0]);
        let omega = DMatrix::from_element(4, 1, 0.25);
        let f = build_indexes(&y, &omega).unwrap();
        assert_eq!(f.as_slice(), &[3.0, 1.0]);
    }

    #[test]
    fn dimension_mismatch() {
        assert!(build_indexes(&DMatrix::zeros(2, 3), &DMatrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn scalar_design() {
        let f = DMatrix::from_column_slice(3, 1, &[0.5, 2.0, -1.0]);
        let d = build_regressors(&f, 1, 1);
        assert_eq!(d.len(), 2);
        assert_eq!(d.matrix(0), DMatrix::from_element(1, 1, 0.5));
        assert_eq!(d.matrix(1), DMatrix::from_element(1, 1, 2.0));
    }

    #[test]
    fn two_equations_one_index() {
        let f = DMatrix::from_column_slice(2, 1, &[3.0, 9.0]);
        let d = build_regressors(&f, 1, 2);
        assert_eq!(d.matrix(0), DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 3.0]));
    }

    #[test]
    fn design_times_state_matches_triple_loop() {
        let (n, q, p, t_len) = (3, 2, 3, 7);
        let f = DMatrix::from_fn(t_len, q, |t, j| ((t * 7 + j * 3) % 5) as f64 - 1.7);
        let beta = DVector::from_fn(n * q * p, |k, _| (k as f64 * 0.37).sin());
        let lags = lag_coefficients(&beta, n, q, p);
        assert_eq!(stack_coefficients(&lags), beta);
        let d = build_regressors(&f, p, n);
        for k in 0..d.len() {
            let t = p + k;
            let fitted = d.apply(k, &beta);
            for i in 0..n {
                let mut direct = 0.0;
                for j in 0..q {
                    for h in 1..=p {
                        direct += lags[h - 1][(i, j)] * f[(t - h, j)];
                    }
                }
                assert!((fitted[i] - direct).abs() < 1e-12);
            }
        }
    }
}
