//! Forgetting-factor Kalman filter with an EWMA measurement covariance.
//!
//! State equation is a random walk whose predicted covariance is inflated by
//! `1/λ` instead of adding an explicit state noise:
//!
//! ```text
//! β_t | Y_{t-1} ~ N(β̂_{t-1|t-1}, Σ_{t-1|t-1} / λ)
//! y_t | Y_{t-1} ~ N(Z_t β̂_{t|t-1}, H_{t-1} + Z_t Σ_{t|t-1} Z_t')
//! H_t = κ H_{t-1} + (1 - κ) ε_t ε_t'
//! ```
//!
//! `ε_t = y_t - Z_t β̂_{t|t-1}` is the one-step prediction error, so the
//! first residual of a pass comes from the prior predictive.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_with_jitter, log_det, sample_covariance, symmetrize};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// How the initial measurement covariance `H_0` is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub enum InitialCovariance {
    #[default]
    Identity,
    /// Sample covariance of the observations handed to the pass.
    Sample,
    Given(DMatrix<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    /// Forgetting factor λ ∈ (0, 1]; 1 means constant parameters.
    pub lambda: f64,
    /// EWMA decay κ ∈ (0, 1]; 1 keeps `H` at `H_0`.
    pub kappa: f64,
    /// Prior state mean; zero when `None`.
    pub beta0_mean: Option<DVector<f64>>,
    /// Prior state covariance is `beta0_var_scale * I`.
    pub beta0_var_scale: f64,
    pub h0: InitialCovariance,
    pub jitter: f64,
    /// Keep `Σ_{t|t}` for every t; otherwise only for the last belief.
    pub keep_covariances: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            lambda: 0.99,
            kappa: 0.96,
            beta0_mean: None,
            beta0_var_scale: 4.0,
            h0: InitialCovariance::Identity,
            jitter: 1e-8,
            keep_covariances: true,
        }
    }
}

impl FilterConfig {
    pub fn with_factors(lambda: f64, kappa: f64) -> Self {
        FilterConfig {
            lambda,
            kappa,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v <= 1.0;
        if !unit(self.lambda) {
            return Err(Error::InvalidParameter(format!("lambda must be in (0, 1], got {}", self.lambda)));
        }
        if !unit(self.kappa) {
            return Err(Error::InvalidParameter(format!("kappa must be in (0, 1], got {}", self.kappa)));
        }
        if !(self.beta0_var_scale > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "beta0_var_scale must be positive, got {}",
                self.beta0_var_scale
            )));
        }
        if !(self.jitter >= 0.0) {
            return Err(Error::InvalidParameter("jitter must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Gaussian moments of the state vector.
#[derive(Debug, Clone, PartialEq)]
pub struct StateMoments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Filtered quantities at one time point.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanBelief {
    /// Row index into the observation matrix.
    pub t: usize,
    /// β̂_{t|t}
    pub beta_mean: DVector<f64>,
    /// Σ_{t|t}; `None` for intermediate beliefs when the pass drops them.
    pub beta_cov: Option<DMatrix<f64>>,
    /// diag Σ_{t|t}
    pub beta_var: DVector<f64>,
    /// Ĥ_t after the EWMA step.
    pub h: DMatrix<f64>,
    /// One-step prediction error y_t - Z_t β̂_{t|t-1}.
    pub resid: DVector<f64>,
    pub log_pred_density: f64,
}

impl KalmanBelief {
    pub fn state(&self) -> Option<StateMoments> {
        self.beta_cov.as_ref().map(|cov| StateMoments {
            mean: self.beta_mean.clone(),
            cov: cov.clone(),
        })
    }
}

/// One-step predictive distribution of `y_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictive {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub log_pdf: f64,
}

/// Measurement matrices `Z_t` for a contiguous block of time points.
#[derive(Debug, Clone, PartialEq)]
pub enum Design {
    /// Explicit `Z_t` per time point.
    Dense(Vec<DMatrix<f64>>),
    /// `Z_t = I_n ⊗ x_t'`; state ordered equation by equation.
    Kronecker { n: usize, rows: Vec<DVector<f64>> },
}

impl Design {
    pub fn len(&self) -> usize {
        match self {
            Design::Dense(z) => z.len(),
            Design::Kronecker { rows, .. } => rows.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn obs_dim(&self) -> Option<usize> {
        match self {
            Design::Dense(z) => z.first().map(|m| m.nrows()),
            Design::Kronecker { n, .. } => Some(*n),
        }
    }

    pub fn state_dim(&self) -> Option<usize> {
        match self {
            Design::Dense(z) => z.first().map(|m| m.ncols()),
            Design::Kronecker { n, rows } => rows.first().map(|x| n * x.len()),
        }
    }

    /// Dense `Z_k`.
    pub fn matrix(&self, k: usize) -> DMatrix<f64> {
        match self {
            Design::Dense(z) => z[k].clone(),
            Design::Kronecker { n, rows } => {
                let x = &rows[k];
                let r = x.len();
                let mut z = DMatrix::zeros(*n, n * r);
                for i in 0..*n {
                    for (j, v) in x.iter().enumerate() {
                        z[(i, i * r + j)] = *v;
                    }
                }
                z
            }
        }
    }

    /// `Z_k v`
    pub fn apply(&self, k: usize, v: &DVector<f64>) -> DVector<f64> {
        match self {
            Design::Dense(z) => &z[k] * v,
            Design::Kronecker { n, rows } => {
                let x = &rows[k];
                let r = x.len();
                DVector::from_fn(*n, |i, _| x.dot(&v.rows(i * r, r)))
            }
        }
    }

    /// `Z_k M`
    pub fn apply_left(&self, k: usize, m: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Design::Dense(z) => &z[k] * m,
            Design::Kronecker { n, rows } => {
                let x = &rows[k];
                let r = x.len();
                let mut out = DMatrix::zeros(*n, m.ncols());
                for i in 0..*n {
                    let block = m.rows(i * r, r);
                    out.row_mut(i).copy_from(&(x.transpose() * block));
                }
                out
            }
        }
    }

    /// `A Z_k'` for `A` with `state_dim` columns.
    pub fn apply_right_transpose(&self, k: usize, a: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Design::Dense(z) => a * z[k].transpose(),
            Design::Kronecker { n, rows } => {
                let x = &rows[k];
                let r = x.len();
                let mut out = DMatrix::zeros(a.nrows(), *n);
                for j in 0..*n {
                    out.column_mut(j).copy_from(&(a.columns(j * r, r) * x));
                }
                out
            }
        }
    }
}

/// Covariance prediction `Σ_{t|t-1} = Σ_{t-1|t-1} / λ`; mean unchanged.
pub fn predict_state(prev: &StateMoments, lambda: f64) -> StateMoments {
    StateMoments {
        mean: prev.mean.clone(),
        cov: &prev.cov / lambda,
    }
}

/// Implied state-noise covariance `Q_t = (1/λ - 1) Σ_{t-1|t-1}`.
pub fn implied_state_noise(prev_cov: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    prev_cov * (1.0 / lambda - 1.0)
}

struct Step {
    posterior: StateMoments,
    resid: DVector<f64>,
    log_pdf: f64,
}

fn measurement_step(
    pred: &StateMoments,
    y: &DVector<f64>,
    design: &Design,
    k: usize,
    h: &DMatrix<f64>,
    jitter: f64,
    t: usize,
) -> Result<Step> {
    let z_sigma = design.apply_left(k, &pred.cov);
    let mut s = h + design.apply_right_transpose(k, &z_sigma);
    symmetrize(&mut s);
    let chol = cholesky_with_jitter(&s, jitter).ok_or_else(|| Error::FilterFailure {
        t,
        reason: "innovation covariance is numerically singular".into(),
    })?;
    let resid = y - design.apply(k, &pred.mean);
    let l = chol.l();
    let g = l
        .solve_lower_triangular(&z_sigma)
        .expect("nonzero cholesky diagonal");
    let u = l.solve_lower_triangular(&resid).expect("nonzero cholesky diagonal");
    let n = y.len() as f64;
    let log_pdf = -0.5 * (n * LN_2PI + log_det(&chol) + u.norm_squared());
    let mean = &pred.mean + g.transpose() * &u;
    let mut cov = &pred.cov - g.transpose() * &g;
    symmetrize(&mut cov);
    if !log_pdf.is_finite() || mean.iter().any(|v| !v.is_finite()) {
        return Err(Error::FilterFailure {
            t,
            reason: "non-finite filter output".into(),
        });
    }
    Ok(Step {
        posterior: StateMoments { mean, cov },
        resid,
        log_pdf,
    })
}

/// Predictive moments and log density of `y` under `N(Zβ̂, H + ZΣZ')`.
pub fn predictive_density(
    pred: &StateMoments,
    y: &DVector<f64>,
    z: &DMatrix<f64>,
    h: &DMatrix<f64>,
    jitter: f64,
) -> Result<Predictive> {
    let mean = z * &pred.mean;
    let mut cov = h + z * &pred.cov * z.transpose();
    symmetrize(&mut cov);
    let chol = cholesky_with_jitter(&cov, jitter).ok_or_else(|| Error::FilterFailure {
        t: 0,
        reason: "predictive covariance is numerically singular".into(),
    })?;
    let log_pdf = crate::linalg::mvn_logpdf_chol(y, &mean, &chol);
    Ok(Predictive { mean, cov, log_pdf })
}

/// Kalman measurement update. The returned belief carries `h` unchanged;
/// [`filter_pass`] replaces it with the EWMA estimate.
pub fn update_state(
    pred: &StateMoments,
    y: &DVector<f64>,
    z: &DMatrix<f64>,
    h: &DMatrix<f64>,
    jitter: f64,
    t: usize,
) -> Result<KalmanBelief> {
    let design = Design::Dense(vec![z.clone()]);
    let step = measurement_step(pred, y, &design, 0, h, jitter, t)?;
    Ok(KalmanBelief {
        t,
        beta_var: step.posterior.cov.diagonal(),
        beta_mean: step.posterior.mean,
        beta_cov: Some(step.posterior.cov),
        h: h.clone(),
        resid: step.resid,
        log_pred_density: step.log_pdf,
    })
}

/// `H_t = κ H_{t-1} + (1 - κ) ε ε'`, symmetrized.
pub fn ewma_update(h_prev: &DMatrix<f64>, resid: &DVector<f64>, kappa: f64) -> DMatrix<f64> {
    let mut h = h_prev * kappa + resid * resid.transpose() * (1.0 - kappa);
    symmetrize(&mut h);
    h
}

#[derive(Debug, Clone)]
pub struct FilterOutput {
    pub beliefs: Vec<KalmanBelief>,
    pub total_log_pl: f64,
    pub h0: DMatrix<f64>,
}

impl FilterOutput {
    pub fn last(&self) -> &KalmanBelief {
        self.beliefs.last().expect("filter output is never empty")
    }
}

/// Run the filter over observation rows `first_t .. first_t + design.len()`
/// of `y` (T x N).
pub fn filter_pass(
    y: &DMatrix<f64>,
    design: &Design,
    first_t: usize,
    config: &FilterConfig,
) -> Result<FilterOutput> {
    config.validate()?;
    if design.is_empty() {
        return Err(Error::InsufficientObservations {
            needed: 1,
            available: 0,
        });
    }
    let n = y.ncols();
    let m = design.state_dim().unwrap_or(0);
    if design.obs_dim() != Some(n) {
        return Err(Error::Dimension(format!(
            "design has {} rows, observations have {n} columns",
            design.obs_dim().unwrap_or(0)
        )));
    }
    if first_t + design.len() > y.nrows() {
        return Err(Error::Dimension(format!(
            "design covers rows {first_t}..{} but only {} observations exist",
            first_t + design.len(),
            y.nrows()
        )));
    }
    let h0 = match &config.h0 {
        InitialCovariance::Identity => DMatrix::identity(n, n),
        InitialCovariance::Sample => sample_covariance(y),
        InitialCovariance::Given(h) => {
            if h.shape() != (n, n) {
                return Err(Error::Dimension(format!("H0 must be {n}x{n}")));
            }
            h.clone()
        }
    };
    let mean0 = match &config.beta0_mean {
        Some(b) if b.len() != m => {
            return Err(Error::Dimension(format!("prior mean has length {}, state has {m}", b.len())))
        }
        Some(b) => b.clone(),
        None => DVector::zeros(m),
    };
    let mut state = StateMoments {
        mean: mean0,
        cov: DMatrix::identity(m, m) * config.beta0_var_scale,
    };
    let mut h = h0.clone();
    let mut beliefs = Vec::with_capacity(design.len());
    let mut total = 0.0;
    for k in 0..design.len() {
        let t = first_t + k;
        let yt: DVector<f64> = y.row(t).transpose();
        let pred = predict_state(&state, config.lambda);
        let step = measurement_step(&pred, &yt, design, k, &h, config.jitter, t)?;
        h = ewma_update(&h, &step.resid, config.kappa);
        total += step.log_pdf;
        state = step.posterior;
        let last = k + 1 == design.len();
        beliefs.push(KalmanBelief {
            t,
            beta_mean: state.mean.clone(),
            beta_cov: (config.keep_covariances || last).then(|| state.cov.clone()),
            beta_var: state.cov.diagonal(),
            h: h.clone(),
            resid: step.resid,
            log_pred_density: step.log_pdf,
        });
    }
    Ok(FilterOutput {
        beliefs,
        total_log_pl: total,
        h0,
    })
}

/// Columnar dump: `t, beta_0.., var_0.., h_ij (vech, i >= j), log_pdf`.
pub fn write_beliefs_csv(beliefs: &[KalmanBelief], out: &mut impl Write) -> Result<()> {
    let Some(first) = beliefs.first() else {
        return Ok(());
    };
    let m = first.beta_mean.len();
    let n = first.h.nrows();
    let mut header = vec!["t".to_string()];
    header.extend((0..m).map(|i| format!("beta_{i}")));
    header.extend((0..m).map(|i| format!("var_{i}")));
    for j in 0..n {
        for i in j..n {
            header.push(format!("h_{i}_{j}"));
        }
    }
    header.push("log_pdf".into());
    writeln!(out, "{}", header.join(","))?;
    for b in beliefs {
        let mut row = vec![b.t.to_string()];
        row.extend(b.beta_mean.iter().map(|v| v.to_string()));
        row.extend(b.beta_var.iter().map(|v| v.to_string()));
        for j in 0..n {
            for i in j..n {
                row.push(b.h[(i, j)].to_string());
            }
        }
        row.push(b.log_pred_density.to_string());
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}
