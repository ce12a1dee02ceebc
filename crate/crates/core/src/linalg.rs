//! Small dense linear-algebra helpers shared by the filter, the index-weight
//! regression and the volatility decomposition.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

/// Pivot threshold below which a factorization is treated as singular.
pub const PIVOT_FLOOR: f64 = 1e-12;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Replace `a` by `(a + a') / 2`.
pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

fn min_pivot(chol: &Cholesky<f64, Dyn>) -> f64 {
    let l = chol.l_dirty();
    (0..l.nrows())
        .map(|i| l[(i, i)] * l[(i, i)])
        .fold(f64::INFINITY, f64::min)
}

/// Cholesky factor of a symmetric matrix, retried once with `jitter * I`
/// added when the plain factorization fails or its smallest squared pivot
/// falls below [`PIVOT_FLOOR`]. Returns `None` when both attempts fail.
pub fn cholesky_with_jitter(a: &DMatrix<f64>, jitter: f64) -> Option<Cholesky<f64, Dyn>> {
    if let Some(chol) = Cholesky::new(a.clone()) {
        if min_pivot(&chol) >= PIVOT_FLOOR {
            return Some(chol);
        }
    }
    let n = a.nrows();
    let ridged = a + DMatrix::<f64>::identity(n, n) * jitter;
    Cholesky::new(ridged).filter(|c| min_pivot(c) >= PIVOT_FLOOR)
}

/// `ln det A` from a Cholesky factor of `A`.
pub fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    let l = chol.l_dirty();
    2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
}

/// Multivariate normal log density of `x` given a factorized covariance.
pub fn mvn_logpdf_chol(x: &DVector<f64>, mean: &DVector<f64>, chol: &Cholesky<f64, Dyn>) -> f64 {
    let diff = x - mean;
    let z = chol
        .l_dirty()
        .solve_lower_triangular(&diff)
        .expect("cholesky factor has a nonzero diagonal");
    let n = x.len() as f64;
    -0.5 * (n * LN_2PI + log_det(chol) + z.norm_squared())
}

/// Univariate normal log density.
pub fn normal_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (LN_2PI + var.ln() + d * d / var)
}

/// Symmetric inverse square root `A^{-1/2}` via eigendecomposition, with
/// eigenvalues floored at `floor`.
pub fn inv_sqrt_sym(a: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let eig = a.clone().symmetric_eigen();
    let d = eig.eigenvalues.map(|v| 1.0 / v.max(floor).sqrt());
    let v = &eig.eigenvectors;
    let mut out = v * DMatrix::from_diagonal(&d) * v.transpose();
    symmetrize(&mut out);
    out
}

pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    a.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// `ln sum exp(x_i)`, returning `-inf` when every entry is `-inf`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

/// Companion matrix of a VAR with lag coefficient matrices `coeffs[h]`
/// (lag h + 1), each `k x k`.
pub fn companion(coeffs: &[DMatrix<f64>]) -> DMatrix<f64> {
    let p = coeffs.len();
    let k = coeffs.first().map_or(0, |c| c.nrows());
    let mut c = DMatrix::zeros(k * p, k * p);
    for (h, a) in coeffs.iter().enumerate() {
        c.view_mut((0, h * k), (k, k)).copy_from(a);
    }
    for i in k..(k * p) {
        c[(i, i - k)] = 1.0;
    }
    c
}

pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Orthonormal basis of the column space of a full-column-rank matrix.
pub fn orthonormal_basis(a: &DMatrix<f64>) -> DMatrix<f64> {
    a.clone().qr().q()
}

/// Principal angles (radians, ascending) between the column spaces of `a`
/// and `b`, both assumed full column rank.
pub fn principal_angles(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<f64> {
    let qa = orthonormal_basis(a);
    let qb = orthonormal_basis(b);
    let m = qa.transpose() * qb;
    let mut angles: Vec<f64> = m
        .singular_values()
        .iter()
        .map(|s| s.clamp(-1.0, 1.0).acos())
        .collect();
    angles.sort_by(|x, y| x.total_cmp(y));
    angles
}

/// Largest principal angle between two column spaces.
pub fn max_principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    principal_angles(a, b).last().copied().unwrap_or(0.0)
}

/// Sample mean and covariance (denominator `T - 1`) of the rows of `x`.
pub fn sample_covariance(x: &DMatrix<f64>) -> DMatrix<f64> {
    let t = x.nrows();
    let n = x.ncols();
    if t < 2 {
        return DMatrix::identity(n, n);
    }
    let mean = x.row_mean();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    let mut cov = centered.transpose() * &centered / (t as f64 - 1.0);
    symmetrize(&mut cov);
    cov
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sum_exp_handles_all_negative_infinity() {
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]), f64::NEG_INFINITY);
        let v = log_sum_exp(&[0.0, (3.0f64).ln()]);
        assert!((v - 4.0f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn companion_of_scalar_ar2() {
        let c = companion(&[DMatrix::from_element(1, 1, 0.5), DMatrix::from_element(1, 1, 0.2)]);
        assert_eq!(c, DMatrix::from_row_slice(2, 2, &[0.5, 0.2, 1.0, 0.0]));
        // roots of z^2 - 0.5 z - 0.2
        let r = (0.5 + (0.25f64 + 0.8).sqrt()) / 2.0;
        assert!((spectral_radius(&c) - r).abs() < 1e-12);
    }

    #[test]
    fn inverse_square_root_squares_to_inverse() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let w = inv_sqrt_sym(&a, 1e-10);
        let prod = &w * &a * &w;
        assert!((prod - DMatrix::<f64>::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn principal_angles_of_rotated_basis_are_zero() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let g = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, -1.0, 3.0]);
        assert!(max_principal_angle(&a, &(&a * g)) < 1e-7);
        let e1 = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let e2 = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        assert!((max_principal_angle(&e1, &e2) - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn jitter_rescues_singular_matrix() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(cholesky_with_jitter(&a, 1e-8).is_some());
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(cholesky_with_jitter(&indefinite, 1e-8).is_none());
    }
}
