//! Block identification template for the index weights and the split of the
//! measurement covariance into common and idiosyncratic parts.
//!
//! With `W = ω'` (q x N), `ξ_t = W H_t W'` and `W⊥` an orthonormal basis of
//! the orthogonal complement of the columns of ω:
//!
//! ```text
//! H_com  = H W' ξ⁻¹ W H
//! H_idio = W⊥' (W⊥ H⁻¹ W⊥')⁻¹ W⊥
//! H      = H_com + H_idio
//! ```

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Group, Quarter};
use crate::error::{Error, Result};
use crate::linalg::{cholesky_with_jitter, symmetrize};
use crate::mai::MaiFit;

/// Contiguous blocks of series, one per index. The first series of each
/// block loads on its index with weight exactly 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupTemplate {
    pub group_sizes: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Loading {
    Zero,
    One,
    Free,
}

/// Zero pattern, pinned unit leaders, and the selection matrix `M` with
/// `Vec(ω) = M ω_free + Vec(pinned)` (column-major `Vec`).
#[derive(Debug, Clone, PartialEq)]
pub struct Restriction {
    pub n: usize,
    pub q: usize,
    /// N x q pattern.
    pub pattern: Vec<Vec<Loading>>,
    /// (row, column) of each free loading, in `ω_free` order.
    pub free: Vec<(usize, usize)>,
    /// `N q x n_free`
    pub m: DMatrix<f64>,
}

impl GroupTemplate {
    pub fn new(group_sizes: Vec<usize>) -> Result<Self> {
        if group_sizes.is_empty() {
            return Err(Error::InvalidParameter("template needs at least one group".into()));
        }
        if let Some(g) = group_sizes.iter().position(|&s| s == 0) {
            return Err(Error::InvalidParameter(format!("group {g} has size 0")));
        }
        Ok(GroupTemplate { group_sizes })
    }

    /// Template from per-series group tags. Tags must form contiguous runs.
    pub fn from_labels(labels: &[Group]) -> Result<Self> {
        let mut sizes = Vec::new();
        let mut seen: Vec<Group> = Vec::new();
        for (i, g) in labels.iter().enumerate() {
            if seen.last() == Some(g) {
                *sizes.last_mut().unwrap() += 1;
            } else if seen.contains(g) {
                return Err(Error::Structure(format!(
                    "series {i} tagged {g} but group {g} is not contiguous; reorder the panel by group"
                )));
            } else {
                seen.push(*g);
                sizes.push(1);
            }
        }
        GroupTemplate::new(sizes)
    }

    pub fn n(&self) -> usize {
        self.group_sizes.iter().sum()
    }

    pub fn q(&self) -> usize {
        self.group_sizes.len()
    }

    /// Row range of each block.
    pub fn ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut start = 0;
        self.group_sizes
            .iter()
            .map(|&s| {
                let r = start..start + s;
                start += s;
                r
            })
            .collect()
    }
}

pub fn build_restriction(template: &GroupTemplate) -> Result<Restriction> {
    let template = GroupTemplate::new(template.group_sizes.clone())?;
    let n = template.n();
    let q = template.q();
    let mut pattern = vec![vec![Loading::Zero; q]; n];
    let mut free = Vec::new();
    for (j, range) in template.ranges().into_iter().enumerate() {
        pattern[range.start][j] = Loading::One;
        for i in range.start + 1..range.end {
            pattern[i][j] = Loading::Free;
            free.push((i, j));
        }
    }
    let mut m = DMatrix::zeros(n * q, free.len());
    for (k, &(i, j)) in free.iter().enumerate() {
        m[(j * n + i, k)] = 1.0;
    }
    Ok(Restriction { n, q, pattern, free, m })
}

impl Restriction {
    /// Vec(pinned) with ones at the block leaders.
    pub fn pinned_vec(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.n * self.q);
        for (i, row) in self.pattern.iter().enumerate() {
            for (j, l) in row.iter().enumerate() {
                if *l == Loading::One {
                    v[j * self.n + i] = 1.0;
                }
            }
        }
        v
    }

    /// ω from its free loadings via `Vec(ω) = M ω_free + Vec(pinned)`.
    pub fn assemble(&self, free_values: &DVector<f64>) -> DMatrix<f64> {
        let vec = &self.m * free_values + self.pinned_vec();
        DMatrix::from_column_slice(self.n, self.q, vec.as_slice())
    }

    /// Free loadings read off `omega`.
    pub fn free_values(&self, omega: &DMatrix<f64>) -> DVector<f64> {
        DVector::from_iterator(self.free.len(), self.free.iter().map(|&(i, j)| omega[(i, j)]))
    }

    /// Whether `omega` reproduces the zero pattern and unit leaders exactly.
    pub fn is_satisfied_by(&self, omega: &DMatrix<f64>) -> bool {
        omega.shape() == (self.n, self.q)
            && self.pattern.iter().enumerate().all(|(i, row)| {
                row.iter().enumerate().all(|(j, l)| match l {
                    Loading::Zero => omega[(i, j)] == 0.0,
                    Loading::One => omega[(i, j)] == 1.0,
                    Loading::Free => true,
                })
            })
    }
}

/// Orthonormal rows spanning the orthogonal complement of the columns of
/// `omega` (N x q): returns `(N - q) x N`.
pub fn orthogonal_complement(omega: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n, q) = omega.shape();
    if q > n {
        return Err(Error::Dimension(format!("omega is {n}x{q}; need q <= N")));
    }
    // Square padding so the SVD returns a full N x N left basis.
    let mut padded = DMatrix::zeros(n, n);
    padded.columns_mut(0, q).copy_from(omega);
    let svd = padded.svd(true, false);
    let u = svd.u.expect("requested U");
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let smax = svd.singular_values[order[0]];
    if q > 0 && !(svd.singular_values[order[q - 1]] > 1e-10 * smax.max(1e-300)) {
        return Err(Error::RankDeficient(format!("omega has rank below {q}")));
    }
    let mut w = DMatrix::zeros(n - q, n);
    for (r, &c) in order[q..].iter().enumerate() {
        w.row_mut(r).copy_from(&u.column(c).transpose());
    }
    Ok(w)
}

/// Common/idiosyncratic split of one covariance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct VolShares {
    pub t: usize,
    pub h_com: DMatrix<f64>,
    pub h_idio: DMatrix<f64>,
    /// `H_com[i,i] / H[i,i]`
    pub share_common: DVector<f64>,
}

const DECOMP_JITTER: f64 = 1e-8;

fn spd_inverse(a: &DMatrix<f64>, what: &str, t: usize) -> Result<DMatrix<f64>> {
    let chol = cholesky_with_jitter(a, DECOMP_JITTER).ok_or_else(|| Error::FilterFailure {
        t,
        reason: format!("{what} is singular beyond jitter rescue"),
    })?;
    let mut inv = chol.inverse();
    symmetrize(&mut inv);
    Ok(inv)
}

pub fn variance_decompose(h: &DMatrix<f64>, omega: &DMatrix<f64>) -> Result<VolShares> {
    variance_decompose_at(h, omega, 0)
}

fn variance_decompose_at(h: &DMatrix<f64>, omega: &DMatrix<f64>, t: usize) -> Result<VolShares> {
    let n = h.nrows();
    if h.shape() != (n, n) || omega.nrows() != n {
        return Err(Error::Dimension(format!(
            "H is {}x{}, omega is {}x{}",
            h.nrows(),
            h.ncols(),
            omega.nrows(),
            omega.ncols()
        )));
    }
    let w = omega.transpose();
    let xi = &w * h * omega;
    let xi_inv = spd_inverse(&xi, "index covariance", t)?;
    let hw = h * omega;
    let mut h_com = &hw * xi_inv * hw.transpose();
    symmetrize(&mut h_com);

    let w_perp = orthogonal_complement(omega)?;
    let mut h_idio = if w_perp.nrows() == 0 {
        DMatrix::zeros(n, n)
    } else {
        let h_inv = spd_inverse(h, "measurement covariance", t)?;
        let inner = spd_inverse(&(&w_perp * h_inv * w_perp.transpose()), "complement covariance", t)?;
        w_perp.transpose() * inner * &w_perp
    };
    symmetrize(&mut h_idio);

    let share_common = DVector::from_fn(n, |i, _| h_com[(i, i)] / h[(i, i)]);
    Ok(VolShares {
        t,
        h_com,
        h_idio,
        share_common,
    })
}

/// Common-volatility share of every series at every filtered time point,
/// `(time index, shares)` per row.
pub fn share_series(fit: &MaiFit) -> Result<Vec<VolShares>> {
    let omega = &fit.omega.omega;
    fit.beliefs
        .par_iter()
        .map(|b| variance_decompose_at(&b.h, omega, b.t))
        .collect()
}

/// Long-format CSV: `date,series_id,common_share`.
pub fn write_shares_csv(
    shares: &[VolShares],
    dates: &[Quarter],
    series_ids: &[String],
    out: &mut impl Write,
) -> Result<()> {
    writeln!(out, "date,series_id,common_share")?;
    for s in shares {
        for (i, id) in series_ids.iter().enumerate() {
            writeln!(
                out,
                "{},{},{}",
                dates[s.t],
                id,
                crate::report::fmt_sig(s.share_common[i])
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_pinned_template() {
        let r = build_restriction(&GroupTemplate::new(vec![1, 1]).unwrap()).unwrap();
        assert_eq!(r.m.shape(), (4, 0));
        assert_eq!(r.assemble(&DVector::zeros(0)), DMatrix::identity(2, 2));
    }

    #[test]
    fn single_block_selects_trailing_positions() {
        let r = build_restriction(&GroupTemplate::new(vec![3]).unwrap()).unwrap();
        let expected = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        assert_eq!(r.m, expected);
        let omega = r.assemble(&DVector::from_vec(vec![0.4, -2.0]));
        assert_eq!(omega.as_slice(), &[1.0, 0.4, -2.0]);
    }

    #[test]
    fn two_blocks_match_hand_placed_matrix() {
        let r = build_restriction(&GroupTemplate::new(vec![2, 3]).unwrap()).unwrap();
        let free = DVector::from_vec(vec![0.7, -1.3, 2.2]);
        let mut hand = DMatrix::zeros(5, 2);
        hand[(0, 0)] = 1.0;
        hand[(1, 0)] = 0.7;
        hand[(2, 1)] = 1.0;
        hand[(3, 1)] = -1.3;
        hand[(4, 1)] = 2.2;
        assert_eq!(r.assemble(&free), hand);
        assert!(r.is_satisfied_by(&hand));
        assert_eq!(r.free_values(&hand), free);
    }

    #[test]
    fn zero_sized_group_rejected() {
        assert!(GroupTemplate::new(vec![2, 0]).is_err());
    }

    #[test]
    fn labels_must_be_contiguous() {
        use Group::*;
        assert_eq!(GroupTemplate::from_labels(&[RI, RI, NI]).unwrap().group_sizes, vec![2, 1]);
        assert!(GroupTemplate::from_labels(&[RI, NI, RI]).is_err());
    }

    #[test]
    fn complement_of_first_axis() {
        let e1 = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let w = orthogonal_complement(&e1).unwrap();
        assert_eq!(w.shape(), (1, 2));
        assert!(w[(0, 0)].abs() < 1e-15);
        assert!((w[(0, 1)].abs() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn full_rank_complement_is_empty() {
        let w = orthogonal_complement(&DMatrix::identity(3, 3)).unwrap();
        assert_eq!(w.shape(), (0, 3));
    }

    #[test]
    fn rank_deficient_omega_rejected() {
        let omega = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        assert!(orthogonal_complement(&omega).is_err());
    }

    #[test]
    fn decoupled_case() {
        let omega = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let s = variance_decompose(&DMatrix::identity(2, 2), &omega).unwrap();
        assert!((s.h_com - DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0])).amax() < 1e-14);
        assert!((s.h_idio - DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0])).amax() < 1e-14);
        assert!((s.share_common[0] - 1.0).abs() < 1e-14);
        assert!(s.share_common[1].abs() < 1e-14);
    }

    #[test]
    fn full_rank_omega_gives_unit_shares() {
        let h = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.0, -0.2, 0.1, -0.2, 0.5]);
        let omega = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.0, 0.5, 1.0, 0.3, 0.0, 0.1, 2.0]);
        let s = variance_decompose(&h, &omega).unwrap();
        for v in s.share_common.iter() {
            assert!((v - 1.0).abs() < 1e-10);
        }
        assert_eq!(s.h_idio, DMatrix::zeros(3, 3));
    }
}
