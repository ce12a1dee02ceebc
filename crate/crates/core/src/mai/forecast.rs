use nalgebra::{DMatrix, DVector};

use crate::linalg::{companion, symmetrize};

/// Joint Gaussian forecasts for horizons `1..=h_max` (index `h - 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct MultiStepForecast {
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
}

impl MultiStepForecast {
    pub fn horizons(&self) -> usize {
        self.means.len()
    }

    /// Mean and variance of series `i` at horizon `h` (1-based).
    pub fn marginal(&self, h: usize, i: usize) -> (f64, f64) {
        (self.means[h - 1][i], self.covs[h - 1][(i, i)])
    }
}

/// Iterate `y_t = Σ_h Φ_h y_{t-h} + u_t` forward from the last `p` rows of
/// `history`, with the same innovation covariance at every step; forecast
/// covariances accumulate through the companion form. `first_step_extra`
/// is added to the one-step covariance only (coefficient uncertainty).
pub fn iterate_var(
    lags: &[DMatrix<f64>],
    history: &DMatrix<f64>,
    innovation_cov: &DMatrix<f64>,
    first_step_extra: Option<&DMatrix<f64>>,
    h_max: usize,
) -> MultiStepForecast {
    let p = lags.len();
    let n = innovation_cov.nrows();
    let t_len = history.nrows();
    assert!(t_len >= p, "history shorter than lag order");
    let comp = companion(lags);
    let mut state = DVector::zeros(n * p);
    for h in 0..p {
        state.rows_mut(h * n, n).copy_from(&history.row(t_len - 1 - h).transpose());
    }
    let mut v = DMatrix::zeros(n * p, n * p);
    let mut means = Vec::with_capacity(h_max);
    let mut covs = Vec::with_capacity(h_max);
    for step in 0..h_max {
        state = &comp * &state;
        v = &comp * &v * comp.transpose();
        let mut top = v.view_mut((0, 0), (n, n));
        top += innovation_cov;
        if let (0, Some(extra)) = (step, first_step_extra) {
            top += extra;
        }
        symmetrize(&mut v);
        means.push(state.rows(0, n).into_owned());
        covs.push(v.view((0, 0), (n, n)).into_owned());
    }
    MultiStepForecast { means, covs }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ar1_variance_accumulates() {
        let phi = DMatrix::from_element(1, 1, 0.5);
        let hist = DMatrix::from_element(1, 1, 2.0);
        let f = iterate_var(&[phi], &hist, &DMatrix::from_element(1, 1, 1.0), None, 3);
        assert_eq!(f.marginal(1, 0), (1.0, 1.0));
        assert_eq!(f.marginal(2, 0), (0.5, 1.25));
        assert_eq!(f.marginal(3, 0), (0.25, 1.3125));
    }

    #[test]
    fn ar2_mean_recursion() {
        let lags = vec![DMatrix::from_element(1, 1, 0.5), DMatrix::from_element(1, 1, 0.25)];
        let hist = DMatrix::from_column_slice(2, 1, &[4.0, 2.0]);
        let f = iterate_var(&lags, &hist, &DMatrix::from_element(1, 1, 1.0), None, 2);
        // 0.5*2 + 0.25*4 = 2, then 0.5*2 + 0.25*2 = 1.5
        assert_eq!(f.means[0][0], 2.0);
        assert_eq!(f.means[1][0], 1.5);
    }

    #[test]
    fn first_step_extra_propagates() {
        let phi = DMatrix::from_element(1, 1, 0.5);
        let hist = DMatrix::from_element(1, 1, 0.0);
        let extra = DMatrix::from_element(1, 1, 0.5);
        let f = iterate_var(&[phi], &hist, &DMatrix::from_element(1, 1, 1.0), Some(&extra), 2);
        assert_eq!(f.covs[0][(0, 0)], 1.5);
        assert_eq!(f.covs[1][(0, 0)], 0.25 * 1.5 + 1.0);
    }
}
