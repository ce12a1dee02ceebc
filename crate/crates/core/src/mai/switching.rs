use log::{debug, warn};
use nalgebra::{DMatrix, SymmetricEigen};

use super::ols::omega_ols_step;
use super::regressors::{build_indexes, build_regressors};
use super::{fix_signs, IndexWeights, MaiFit, ModelSpec, OmegaInit, SwitchingOptions};
use crate::decomposition::{build_restriction, GroupTemplate, Restriction};
use crate::error::{Error, Result};
use crate::filter::{filter_pass, FilterOutput};
use crate::linalg::{orthonormal_basis, sample_covariance};

/// Eigenvectors of `cov` for its `q` largest eigenvalues, descending, with
/// the sign rule applied.
fn leading_eigenvectors(cov: &DMatrix<f64>, q: usize) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(cov.clone());
    let mut order: Vec<usize> = (0..cov.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut out = DMatrix::zeros(cov.nrows(), q);
    for (j, &k) in order.iter().take(q).enumerate() {
        out.set_column(j, &eig.eigenvectors.column(k));
    }
    fix_signs(&mut out);
    out
}

/// Principal-component weights: the first `q` eigenvectors of the sample
/// covariance of `values` (T x N).
pub fn init_omega_pca(values: &DMatrix<f64>, q: usize) -> IndexWeights {
    IndexWeights {
        omega: leading_eigenvectors(&sample_covariance(values), q),
        restriction: None,
        normalized: true,
    }
}

/// Template-conforming start: within each block, the leading principal
/// component of that block's series, scaled so the leader loads with 1.
pub fn init_omega_restricted(values: &DMatrix<f64>, template: &GroupTemplate) -> Result<IndexWeights> {
    let restriction = build_restriction(template)?;
    let cov = sample_covariance(values);
    let mut free = nalgebra::DVector::zeros(restriction.free.len());
    let mut k = 0;
    for range in template.ranges() {
        let len = range.len();
        let block = cov.view((range.start, range.start), (len, len)).into_owned();
        let v = leading_eigenvectors(&block, 1);
        let lead = v[(0, 0)];
        for r in 1..len {
            free[k] = if lead.abs() > 1e-8 { v[(r, 0)] / lead } else { 1.0 };
            k += 1;
        }
    }
    Ok(IndexWeights {
        omega: restriction.assemble(&free),
        restriction: Some(template.clone()),
        normalized: false,
    })
}

/// Canonical representative of the column space of `omega`: orthonormal,
/// ordered by the variance of the implied indexes under `cov`.
///
/// The likelihood only depends on ω through its column space, so without
/// this the unrestricted iteration can wander along equivalent rotations.
pub fn canonical_omega(omega: &DMatrix<f64>, cov: &DMatrix<f64>) -> DMatrix<f64> {
    let basis = orthonormal_basis(omega);
    let inner = basis.transpose() * cov * &basis;
    let rot = leading_eigenvectors(&inner, omega.ncols());
    let mut out = basis * rot;
    fix_signs(&mut out);
    out
}

fn relative_change(new: &DMatrix<f64>, old: &DMatrix<f64>) -> f64 {
    let denom = old.norm();
    if denom > 0.0 {
        (new - old).norm() / denom
    } else {
        f64::INFINITY
    }
}

fn run_filter(values: &DMatrix<f64>, omega: &DMatrix<f64>, spec: &ModelSpec, keep: bool) -> Result<FilterOutput> {
    let indexes = build_indexes(values, omega)?;
    let design = build_regressors(&indexes, spec.p, values.ncols());
    let mut config = spec.filter_config();
    config.keep_covariances = keep;
    filter_pass(values, &design, spec.p, &config)
}

/// Estimate with default options.
pub fn switching_estimate(values: &DMatrix<f64>, spec: &ModelSpec) -> Result<MaiFit> {
    switching_estimate_with(values, spec, &SwitchingOptions::default())
}

/// Alternate a filter pass given ω with a GLS update of ω given the filtered
/// loadings and covariances, until the relative Frobenius change of ω drops
/// below `tol` or `max_iter` updates have been made. Without convergence the
/// iterate with the highest log PL is returned.
pub fn switching_estimate_with(
    values: &DMatrix<f64>,
    spec: &ModelSpec,
    options: &SwitchingOptions,
) -> Result<MaiFit> {
    let (t_len, n) = values.shape();
    spec.validate(n)?;
    if options.max_iter == 0 {
        return Err(Error::InvalidParameter("max_iter must be ≥ 1".into()));
    }
    if !(options.tol > 0.0) {
        return Err(Error::InvalidParameter("tol must be positive".into()));
    }
    let needed = spec.min_observations(n);
    if t_len < needed {
        return Err(Error::InsufficientObservations {
            needed,
            available: t_len,
        });
    }
    let restriction: Option<Restriction> = spec.restriction.as_ref().map(build_restriction).transpose()?;
    let cov = sample_covariance(values);
    let mut omega = match (&options.init, &spec.restriction) {
        (OmegaInit::Given(w), _) if w.shape() != (n, spec.q) => {
            return Err(Error::Dimension(format!("initial omega must be {n}x{}", spec.q)));
        }
        (OmegaInit::Given(w), Some(_)) => {
            let r = restriction.as_ref().expect("built above");
            if !r.is_satisfied_by(w) {
                return Err(Error::InvalidParameter("initial omega violates the block template".into()));
            }
            w.clone()
        }
        (OmegaInit::Given(w), None) => canonical_omega(w, &cov),
        (OmegaInit::Pca, Some(t)) => init_omega_restricted(values, t)?.omega,
        (OmegaInit::Pca, None) => init_omega_pca(values, spec.q).omega,
    };

    let mut trace = Vec::new();
    let mut best: Option<(f64, DMatrix<f64>)> = None;
    let mut converged = false;
    // Set when a later iterate breaks numerically; the best earlier iterate
    // is returned instead of the error.
    let mut stalled = false;
    let mut iterations = 0;
    while iterations < options.max_iter {
        let pass = match run_filter(values, &omega, spec, false) {
            Ok(pass) => pass,
            Err(e) if best.is_some() => {
                warn!("{}: stopping at iteration {iterations}: {e}", spec.fingerprint());
                stalled = true;
                break;
            }
            Err(e) => return Err(e),
        };
        trace.push(pass.total_log_pl);
        if best.as_ref().is_none_or(|(ll, _)| pass.total_log_pl > *ll) {
            best = Some((pass.total_log_pl, omega.clone()));
        }
        let raw = match omega_ols_step(values, &pass.beliefs, spec.q, spec.p, restriction.as_ref()) {
            Ok(raw) => raw,
            Err(e) if iterations > 0 => {
                warn!("{}: stopping at iteration {iterations}: {e}", spec.fingerprint());
                stalled = true;
                break;
            }
            Err(e) => return Err(e),
        };
        let next = if restriction.is_some() { raw } else { canonical_omega(&raw, &cov) };
        let change = relative_change(&next, &omega);
        omega = next;
        iterations += 1;
        debug!(
            "{} iteration {iterations}: log PL {:.6}, change {change:.3e}",
            spec.fingerprint(),
            pass.total_log_pl
        );
        if change < options.tol {
            converged = true;
            break;
        }
    }

    let last = if stalled {
        None
    } else {
        match run_filter(values, &omega, spec, options.keep_covariances) {
            Ok(pass) => Some(pass),
            Err(e) if best.is_some() => {
                warn!("{}: final iterate failed: {e}", spec.fingerprint());
                converged = false;
                None
            }
            Err(e) => return Err(e),
        }
    };
    let final_pass = if let Some(mut pass) = last {
        trace.push(pass.total_log_pl);
        if let (false, Some((ll, w))) = (converged, best) {
            if ll > pass.total_log_pl {
                omega = w;
                pass = run_filter(values, &omega, spec, options.keep_covariances)?;
            }
        }
        pass
    } else {
        omega = best.expect("a pass succeeded before any fallback").1;
        run_filter(values, &omega, spec, options.keep_covariances)?
    };
    let indexes = build_indexes(values, &omega)?;
    Ok(MaiFit {
        spec: spec.clone(),
        omega: IndexWeights {
            omega,
            restriction: spec.restriction.clone(),
            normalized: restriction.is_none(),
        },
        log_pl: final_pass.total_log_pl,
        beliefs: final_pass.beliefs,
        indexes,
        iterations,
        converged,
        log_pl_trace: trace,
        first_t: spec.p,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_principal_angle;

    fn panel(t_len: usize, n: usize, seed: u64) -> DMatrix<f64> {
        // Small deterministic LCG panel; enough for contract tests.
        let mut s = seed;
        let mut next = move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let mut y = DMatrix::zeros(t_len, n);
        for t in 0..t_len {
            let common = next();
            for i in 0..n {
                let prev = if t > 0 { y[(t - 1, i)] } else { 0.0 };
                y[(t, i)] = 0.4 * prev + common + 0.3 * next();
            }
        }
        y
    }

    #[test]
    fn pca_full_rank_is_orthonormal() {
        let y = panel(80, 4, 1);
        let w = init_omega_pca(&y, 4).omega;
        let gram = w.transpose() * &w;
        assert!((gram - DMatrix::identity(4, 4)).abs().max() < 1e-10);
    }

    #[test]
    fn pca_duplicated_series_share_weight() {
        let mut y = panel(60, 3, 2);
        let dup = y.column(0).into_owned();
        y = y.insert_column(3, 0.0);
        y.set_column(3, &dup);
        let w = init_omega_pca(&y, 1).omega;
        assert!((w[(0, 0)] - w[(3, 0)]).abs() < 1e-8);
    }

    #[test]
    fn pca_sign_and_order() {
        let y = panel(100, 5, 3);
        let w = init_omega_pca(&y, 2).omega;
        for col in w.column_iter() {
            let big = col.iter().copied().fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
            assert!(big > 0.0);
        }
        let cov = sample_covariance(&y);
        let v0 = (w.column(0).transpose() * &cov * w.column(0))[(0, 0)];
        let v1 = (w.column(1).transpose() * &cov * w.column(1))[(0, 0)];
        assert!(v0 >= v1);
    }

    #[test]
    fn canonical_form_keeps_column_space() {
        let y = panel(100, 5, 4);
        let w = DMatrix::from_fn(5, 2, |i, j| ((i + 2 * j) as f64).sin() + 0.1 * j as f64);
        let c = canonical_omega(&w, &sample_covariance(&y));
        assert!(max_principal_angle(&w, &c) < 1e-10);
        let c2 = canonical_omega(&(&w * DMatrix::from_row_slice(2, 2, &[2.0, 1.0, -0.5, 3.0])), &sample_covariance(&y));
        assert!((c - c2).abs().max() < 1e-10);
    }

    #[test]
    fn max_iter_one_updates_once() {
        let y = panel(120, 4, 5);
        let opts = SwitchingOptions {
            max_iter: 1,
            ..Default::default()
        };
        let fit = switching_estimate_with(&y, &ModelSpec::new(2, 1, 0.99, 0.96), &opts).unwrap();
        assert_eq!(fit.iterations, 1);
        assert_eq!(fit.log_pl_trace.len(), 2);
        assert_eq!(fit.beliefs.len(), 119);
    }

    #[test]
    fn insufficient_sample() {
        let y = panel(6, 4, 6);
        let err = switching_estimate(&y, &ModelSpec::new(2, 1, 0.99, 0.96)).unwrap_err();
        assert!(matches!(err, Error::InsufficientObservations { needed: 9, available: 6 }));
    }

    #[test]
    fn restricted_fit_keeps_template() {
        let y = panel(150, 5, 7);
        let spec = ModelSpec::new(2, 1, 0.99, 0.96).restricted(GroupTemplate::new(vec![2, 3]).unwrap());
        let fit = switching_estimate(&y, &spec).unwrap();
        let r = build_restriction(spec.restriction.as_ref().unwrap()).unwrap();
        assert!(r.is_satisfied_by(&fit.omega.omega));
    }

    #[test]
    fn indexes_match_weights_exactly() {
        let y = panel(90, 4, 8);
        let fit = switching_estimate(&y, &ModelSpec::new(1, 2, 0.98, 0.95)).unwrap();
        assert_eq!(fit.indexes, &y * &fit.omega.omega);
        assert!(fit.iterations <= 100);
    }

    #[test]
    fn diverging_restricted_iterates_fall_back_to_the_best_one() {
        // Non-block true ω: a free loading runs off toward infinity until a
        // GLS step turns singular.
        use crate::simulation::{simulate_mai, DgpSpec};
        let template = GroupTemplate::new(vec![2, 3]).unwrap();
        let sim = simulate_mai(&DgpSpec::random_constant(5, 2, 1, 150, 0.5, 0.8, 14)).unwrap();
        let spec = ModelSpec::new(2, 1, 0.99, 0.96).restricted(template.clone());
        let fit = switching_estimate(&sim.values, &spec).unwrap();
        assert!(!fit.converged);
        assert!(build_restriction(&template).unwrap().is_satisfied_by(&fit.omega.omega));
        let best = fit.log_pl_trace.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(fit.log_pl, best);
    }
}
