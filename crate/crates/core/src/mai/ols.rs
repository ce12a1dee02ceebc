//! Generalized least squares step for the index weights given filtered
//! loadings and covariances.
//!
//! Premultiplying the measurement equation by `H_t^{-1/2}` and vectorizing
//! gives, for every usable t,
//!
//! ```text
//! H_t^{-1/2} y_t = Σ_h (y_{t-h}' ⊗ H_t^{-1/2} β_{h,t}) Vec(ω') + noise
//! ```
//!
//! which is stacked over t and solved by least squares, optionally through
//! the block restriction `Vec(ω) = M ω_free + pinned`.

use nalgebra::{Cholesky, DMatrix, DVector};

use super::regressors::lag_coefficients;
use crate::decomposition::Restriction;
use crate::error::{Error, Result};
use crate::filter::KalmanBelief;
use crate::linalg::inv_sqrt_sym;

const EIGEN_FLOOR: f64 = 1e-10;

/// Normal equations `A θ = b` in `θ = Vec(ω')`, i.e. `θ[k q + j] = ω[k, j]`.
struct NormalEquations {
    a: DMatrix<f64>,
    b: DVector<f64>,
}

fn accumulate(values: &DMatrix<f64>, beliefs: &[KalmanBelief], q: usize, p: usize) -> NormalEquations {
    let n = values.ncols();
    let dim = n * q;
    let mut a = DMatrix::zeros(dim, dim);
    let mut b = DVector::zeros(dim);
    let mut x = DMatrix::zeros(n, dim);
    for belief in beliefs {
        let t = belief.t;
        let w = inv_sqrt_sym(&belief.h, EIGEN_FLOOR);
        let weighted: Vec<DMatrix<f64>> = lag_coefficients(&belief.beta_mean, n, q, p)
            .iter()
            .map(|bh| &w * bh)
            .collect();
        x.fill(0.0);
        for (h, wb) in weighted.iter().enumerate() {
            let lagged = values.row(t - h - 1);
            for k in 0..n {
                let yk = lagged[k];
                if yk != 0.0 {
                    for c in 0..q {
                        for r in 0..n {
                            x[(r, k * q + c)] += yk * wb[(r, c)];
                        }
                    }
                }
            }
        }
        let wy = &w * values.row(t).transpose();
        a.gemm_tr(1.0, &x, &x, 1.0);
        b.gemv_tr(1.0, &x, &wy, 1.0);
    }
    NormalEquations { a, b }
}

fn solve_spd(a: DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let scale = a.diagonal().iter().copied().fold(0.0, f64::max);
    let rank_error = || {
        Error::RankDeficient(
            "index-weight normal matrix is singular; use fewer indexes or more observations".into(),
        )
    };
    if !(scale > 0.0) {
        return Err(rank_error());
    }
    let chol = Cholesky::new(a).ok_or_else(rank_error)?;
    let l = chol.l_dirty();
    let min_pivot = (0..l.nrows()).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
    if min_pivot < 1e-12 * scale {
        return Err(rank_error());
    }
    Ok(chol.solve(b))
}

/// One GLS update of ω (N x q). Uses `β̂_{t|t}` and `Ĥ_t` from each belief;
/// every belief must have `t >= p`.
pub fn omega_ols_step(
    values: &DMatrix<f64>,
    beliefs: &[KalmanBelief],
    q: usize,
    p: usize,
    restriction: Option<&Restriction>,
) -> Result<DMatrix<f64>> {
    let n = values.ncols();
    if beliefs.is_empty() {
        return Err(Error::InsufficientObservations {
            needed: 1,
            available: 0,
        });
    }
    if let Some(b) = beliefs.iter().find(|b| b.t < p || b.t >= values.nrows()) {
        return Err(Error::Dimension(format!("belief at t={} has no full lag window", b.t)));
    }
    if beliefs[0].beta_mean.len() != n * q * p || beliefs[0].h.nrows() != n {
        return Err(Error::Dimension("beliefs do not match (N, q, p)".into()));
    }
    let NormalEquations { a, b } = accumulate(values, beliefs, q, p);
    match restriction {
        None => {
            let theta = solve_spd(a, &b)?;
            Ok(DMatrix::from_row_slice(n, q, theta.as_slice()))
        }
        Some(r) => {
            if r.n != n || r.q != q {
                return Err(Error::Dimension(format!(
                    "restriction is {}x{}, model is {n}x{q}",
                    r.n, r.q
                )));
            }
            // M and the pinned vector re-expressed in θ = Vec(ω') coordinates.
            let mut m = DMatrix::zeros(n * q, r.free.len());
            for (k, &(i, j)) in r.free.iter().enumerate() {
                m[(i * q + j, k)] = 1.0;
            }
            let pinned_cm = r.pinned_vec();
            let pinned = DVector::from_fn(n * q, |idx, _| {
                let (i, j) = (idx / q, idx % q);
                pinned_cm[j * n + i]
            });
            if r.free.is_empty() {
                return Ok(r.assemble(&DVector::zeros(0)));
            }
            let lhs = m.transpose() * &a * &m;
            let rhs = m.transpose() * (&b - &a * &pinned);
            let free = solve_spd(lhs, &rhs)?;
            Ok(r.assemble(&free))
        }
    }
}
