//! Multivariate autoregressive index models with time-varying loadings and
//! EWMA volatility, estimated by alternating filtering and GLS for ω.

mod forecast;
mod ols;
mod regressors;
mod switching;

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use forecast::{iterate_var, MultiStepForecast};
pub use ols::omega_ols_step;
pub use regressors::{build_indexes, build_regressors, lag_coefficients, stack_coefficients};
pub use switching::{canonical_omega, init_omega_pca, init_omega_restricted, switching_estimate, switching_estimate_with};

use crate::data::Quarter;
use crate::decomposition::GroupTemplate;
use crate::error::{Error, Result};
use crate::filter::{FilterConfig, InitialCovariance, KalmanBelief};
use crate::report::fmt_sig;

/// One candidate model: number of indexes, lag order, forgetting factors and
/// an optional block template for ω.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub q: usize,
    pub p: usize,
    pub lambda: f64,
    pub kappa: f64,
    #[serde(default)]
    pub restriction: Option<GroupTemplate>,
    #[serde(default = "default_prior_scale")]
    pub beta0_var_scale: f64,
    #[serde(default)]
    pub h0: InitialCovariance,
}

fn default_prior_scale() -> f64 {
    4.0
}

impl ModelSpec {
    pub fn new(q: usize, p: usize, lambda: f64, kappa: f64) -> Self {
        ModelSpec {
            q,
            p,
            lambda,
            kappa,
            restriction: None,
            beta0_var_scale: default_prior_scale(),
            h0: InitialCovariance::Identity,
        }
    }

    pub fn restricted(mut self, template: GroupTemplate) -> Self {
        self.restriction = Some(template);
        self
    }

    /// Checks that do not depend on the sample length.
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.q == 0 {
            return Err(Error::InvalidParameter("q must be ≥ 1".into()));
        }
        if self.q > n {
            return Err(Error::InvalidParameter(format!("q = {} exceeds the number of series {n}", self.q)));
        }
        if self.p == 0 {
            return Err(Error::InvalidParameter("p must be ≥ 1".into()));
        }
        if let Some(t) = &self.restriction {
            if t.n() != n || t.q() != self.q {
                return Err(Error::InvalidParameter(format!(
                    "template covers {} series in {} groups, model has N = {n}, q = {}",
                    t.n(),
                    t.q(),
                    self.q
                )));
            }
        }
        self.filter_config().validate()
    }

    /// Smallest T accepted by the estimator.
    pub fn min_observations(&self, n: usize) -> usize {
        self.p + n * self.q
    }

    pub fn filter_config(&self) -> FilterConfig {
        FilterConfig {
            lambda: self.lambda,
            kappa: self.kappa,
            beta0_var_scale: self.beta0_var_scale,
            h0: self.h0.clone(),
            ..FilterConfig::default()
        }
    }

    /// Short stable tag such as `q2_p1_l0.99_k0.96`.
    pub fn fingerprint(&self) -> String {
        let mut s = format!("q{}_p{}_l{}_k{}", self.q, self.p, fmt_sig(self.lambda), fmt_sig(self.kappa));
        if let Some(t) = &self.restriction {
            let sizes: Vec<String> = t.group_sizes.iter().map(|g| g.to_string()).collect();
            s.push_str("_r");
            s.push_str(&sizes.join("-"));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexWeights {
    /// N x q
    pub omega: DMatrix<f64>,
    pub restriction: Option<GroupTemplate>,
    /// Rotated to the canonical orthonormal basis during estimation.
    pub normalized: bool,
}

impl IndexWeights {
    /// Orthonormal columns spanning the same space, for reporting.
    pub fn orthonormalized(&self) -> DMatrix<f64> {
        if self.normalized {
            self.omega.clone()
        } else {
            let mut q = crate::linalg::orthonormal_basis(&self.omega);
            fix_signs(&mut q);
            q
        }
    }

    pub fn min_singular_value(&self) -> f64 {
        self.omega.singular_values().min()
    }
}

/// Flip each column so that its largest-magnitude entry is positive.
pub(crate) fn fix_signs(m: &mut DMatrix<f64>) {
    for mut col in m.column_iter_mut() {
        let mut best = 0.0f64;
        for &v in col.iter() {
            if v.abs() > best.abs() {
                best = v;
            }
        }
        if best < 0.0 {
            col.neg_mut();
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OmegaInit {
    Pca,
    /// Warm start, e.g. from the previous forecast origin.
    Given(DMatrix<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwitchingOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub init: OmegaInit,
    /// Keep `Σ_{t|t}` for every t in the returned beliefs.
    pub keep_covariances: bool,
}

impl Default for SwitchingOptions {
    fn default() -> Self {
        SwitchingOptions {
            tol: 1e-6,
            max_iter: 100,
            init: OmegaInit::Pca,
            keep_covariances: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MaiFit {
    pub spec: ModelSpec,
    pub omega: IndexWeights,
    /// Filtered beliefs for rows `first_t..T`, computed with the final ω.
    pub beliefs: Vec<KalmanBelief>,
    /// T x q
    pub indexes: DMatrix<f64>,
    /// Number of ω updates performed.
    pub iterations: usize,
    pub converged: bool,
    /// Log predictive likelihood of the returned fit.
    pub log_pl: f64,
    /// Log PL of the filter pass run with each successive ω, starting with
    /// the initial value.
    pub log_pl_trace: Vec<f64>,
    pub first_t: usize,
}

#[derive(Serialize)]
struct FitReport<'a> {
    model: String,
    q: usize,
    p: usize,
    lambda: f64,
    kappa: f64,
    group_sizes: Option<&'a [usize]>,
    series_ids: &'a [String],
    /// One row per series.
    omega: Vec<Vec<f64>>,
    omega_orthonormal: Vec<Vec<f64>>,
    iterations: usize,
    converged: bool,
    log_pl: f64,
    log_pl_trace: &'a [f64],
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl MaiFit {
    pub fn n(&self) -> usize {
        self.omega.omega.nrows()
    }

    pub fn last_belief(&self) -> &KalmanBelief {
        self.beliefs.last().expect("fit has at least one belief")
    }

    /// VAR lag matrices `Φ_h = β_h ω'` at the last filtered date.
    pub fn var_lags(&self) -> Vec<DMatrix<f64>> {
        let (n, q, p) = (self.n(), self.spec.q, self.spec.p);
        lag_coefficients(&self.last_belief().beta_mean, n, q, p)
            .into_iter()
            .map(|b| b * self.omega.omega.transpose())
            .collect()
    }

    /// Iterated forecasts from the end of `values` (the panel used for the
    /// fit), with loadings frozen at `β̂_{T|T}` and covariance at `Ĥ_T`.
    pub fn forecast(&self, values: &DMatrix<f64>, h_max: usize) -> Result<MultiStepForecast> {
        if values.ncols() != self.n() {
            return Err(Error::Dimension(format!(
                "panel has {} series, fit has {}",
                values.ncols(),
                self.n()
            )));
        }
        let last = self.last_belief();
        let lags = self.var_lags();
        // Coefficient uncertainty of the next step: Z Σ_{T+1|T} Z'.
        let extra = last.beta_cov.as_ref().map(|cov| {
            let t = values.nrows();
            let p = self.spec.p;
            let f = &self.indexes;
            let q = self.spec.q;
            let mut x = DVector::zeros(q * p);
            for h in 1..=p {
                for j in 0..q {
                    x[(h - 1) * q + j] = f[(t - h, j)];
                }
            }
            let design = crate::filter::Design::Kronecker {
                n: self.n(),
                rows: vec![x],
            };
            let pred = cov / self.spec.lambda;
            let zs = design.apply_left(0, &pred);
            design.apply_right_transpose(0, &zs)
        });
        Ok(iterate_var(&lags, values, &last.h, extra.as_ref(), h_max))
    }

    pub fn write_json(&self, series_ids: &[String], out: &mut impl Write) -> Result<()> {
        let report = FitReport {
            model: self.spec.fingerprint(),
            q: self.spec.q,
            p: self.spec.p,
            lambda: self.spec.lambda,
            kappa: self.spec.kappa,
            group_sizes: self.spec.restriction.as_ref().map(|t| t.group_sizes.as_slice()),
            series_ids,
            omega: rows_of(&self.omega.omega),
            omega_orthonormal: rows_of(&self.omega.orthonormalized()),
            iterations: self.iterations,
            converged: self.converged,
            log_pl: self.log_pl,
            log_pl_trace: &self.log_pl_trace,
        };
        serde_json::to_writer_pretty(&mut *out, &report)?;
        writeln!(out)?;
        Ok(())
    }

    /// `date,f1,...,fq`, one row per observation.
    pub fn write_indexes_csv(&self, dates: &[Quarter], out: &mut impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["date".to_string()];
        header.extend((1..=self.spec.q).map(|j| format!("f{j}")));
        w.write_record(&header)?;
        for (t, row) in self.indexes.row_iter().enumerate() {
            let mut rec = vec![dates.get(t).map(|d| d.to_string()).unwrap_or_else(|| t.to_string())];
            rec.extend(row.iter().map(|v| fmt_sig(*v)));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}
