//! Dynamic model averaging and selection over a grid of MAI specifications.
//!
//! Weights are carried as logarithms. With forgetting factor α,
//!
//! ```text
//! log π_{t|t-1,k} = α log π_{t-1|t-1,k} - log Σ_l π^α_{t-1|t-1,l}
//! log π_{t|t,k}   ∝ log π_{t|t-1,k} + log p_k(y_t | Y_{t-1})
//! ```
//!
//! and α = 1 gives Bayesian model averaging.

use std::io::Write;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::data::Quarter;
use crate::error::{Error, Result};
use crate::linalg::{cholesky_with_jitter, log_sum_exp, mvn_logpdf_chol, normal_logpdf};
use crate::mai::{switching_estimate_with, MaiFit, ModelSpec, OmegaInit, SwitchingOptions};
use crate::report::fmt_sig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PoolMode {
    Dma,
    Dms,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("alpha must be in (0, 1], got {alpha}")))
    }
}

fn normalize_log(mut logs: Vec<f64>) -> Option<Vec<f64>> {
    let lse = log_sum_exp(&logs);
    if !lse.is_finite() {
        return None;
    }
    for v in &mut logs {
        *v -= lse;
    }
    Some(logs)
}

/// Prediction step on log weights.
pub fn log_predict_weights(log_post: &[f64], alpha: f64) -> Result<Vec<f64>> {
    check_alpha(alpha)?;
    let scaled = log_post.iter().map(|&l| if l == f64::NEG_INFINITY { l } else { alpha * l }).collect();
    normalize_log(scaled).ok_or_else(|| Error::DegeneratePool("all model weights are zero".into()))
}

/// Update step on log weights; non-finite likelihoods count as zero.
pub fn log_update_weights(log_pred: &[f64], log_liks: &[f64], t: usize) -> Result<Vec<f64>> {
    if log_pred.len() != log_liks.len() {
        return Err(Error::Dimension(format!(
            "{} weights but {} likelihoods",
            log_pred.len(),
            log_liks.len()
        )));
    }
    let joint = log_pred
        .iter()
        .zip(log_liks)
        .map(|(&w, &l)| if l.is_nan() { f64::NEG_INFINITY } else { w + l })
        .collect();
    normalize_log(joint).ok_or(Error::PoolCollapse { t })
}

fn to_logs(pi: &[f64]) -> Result<Vec<f64>> {
    if pi.is_empty() {
        return Err(Error::DegeneratePool("no models".into()));
    }
    if pi.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
        return Err(Error::InvalidParameter("weights must be finite and nonnegative".into()));
    }
    Ok(pi.iter().map(|p| p.ln()).collect())
}

fn exp_all(logs: Vec<f64>) -> Vec<f64> {
    logs.into_iter().map(f64::exp).collect()
}

/// `π_{t|t-1} ∝ π_{t-1|t-1}^α`.
pub fn pool_predict_weights(pi_post: &[f64], alpha: f64) -> Result<Vec<f64>> {
    log_predict_weights(&to_logs(pi_post)?, alpha).map(exp_all)
}

/// `π_{t|t} ∝ π_{t|t-1} p(y_t | ·)`.
pub fn pool_update_weights(pi_pred: &[f64], log_liks: &[f64]) -> Result<Vec<f64>> {
    log_update_weights(&to_logs(pi_pred)?, log_liks, 0).map(exp_all)
}

/// Argmax, lowest index on ties.
pub fn dms_select(pi: &[f64]) -> usize {
    let mut best = 0;
    for (k, &p) in pi.iter().enumerate() {
        if p > pi[best] {
            best = k;
        }
    }
    best
}

/// Finite Gaussian mixture used as the DMA predictive density.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    pub weights: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
}

impl GaussianMixture {
    /// Weighted average of the component means.
    pub fn mean(&self) -> DVector<f64> {
        let mut m = DVector::zeros(self.means[0].len());
        for (w, mu) in self.weights.iter().zip(&self.means) {
            m.axpy(*w, mu, 1.0);
        }
        m
    }

    fn mix(&self, component_logpdf: impl Fn(usize) -> f64) -> f64 {
        let terms: Vec<f64> = (0..self.weights.len())
            .filter(|&k| self.weights[k] > 0.0)
            .map(|k| self.weights[k].ln() + component_logpdf(k))
            .collect();
        log_sum_exp(&terms)
    }

    pub fn logpdf(&self, x: &DVector<f64>) -> f64 {
        self.mix(|k| match cholesky_with_jitter(&self.covs[k], 1e-8) {
            Some(chol) => mvn_logpdf_chol(x, &self.means[k], &chol),
            None => f64::NEG_INFINITY,
        })
    }

    /// Log density of coordinate `i` under the mixture of Gaussian marginals.
    pub fn marginal_logpdf(&self, i: usize, x: f64) -> f64 {
        self.mix(|k| normal_logpdf(x, self.means[k][i], self.covs[k][(i, i)]))
    }
}

/// Combine per-model Gaussian forecasts `(mean, cov)` with weights `pi_pred`.
pub fn dma_forecast(pi_pred: &[f64], forecasts: &[(DVector<f64>, DMatrix<f64>)]) -> Result<GaussianMixture> {
    if pi_pred.len() != forecasts.len() || forecasts.is_empty() {
        return Err(Error::Dimension(format!(
            "{} weights for {} forecasts",
            pi_pred.len(),
            forecasts.len()
        )));
    }
    Ok(GaussianMixture {
        weights: pi_pred.to_vec(),
        means: forecasts.iter().map(|f| f.0.clone()).collect(),
        covs: forecasts.iter().map(|f| f.1.clone()).collect(),
    })
}

/// Weight trajectory from a T x K matrix of one-step log predictive
/// densities, starting from equal weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightPath {
    pub log_pred: Vec<Vec<f64>>,
    pub log_post: Vec<Vec<f64>>,
    /// Log score of the DMA mixture at each step.
    pub dma_log_score: Vec<f64>,
}

impl WeightPath {
    pub fn pi_pred(&self, step: usize) -> Vec<f64> {
        exp_all(self.log_pred[step].clone())
    }

    pub fn pi_post(&self, step: usize) -> Vec<f64> {
        exp_all(self.log_post[step].clone())
    }
}

/// `times[s]` labels step `s` in pool-collapse errors.
pub fn weight_recursion(log_densities: &[Vec<f64>], alpha: f64, times: &[usize]) -> Result<WeightPath> {
    check_alpha(alpha)?;
    let k = log_densities.first().map_or(0, |r| r.len());
    if k == 0 {
        return Err(Error::DegeneratePool("no models".into()));
    }
    let mut post = vec![-(k as f64).ln(); k];
    let mut path = WeightPath {
        log_pred: Vec::with_capacity(log_densities.len()),
        log_post: Vec::with_capacity(log_densities.len()),
        dma_log_score: Vec::with_capacity(log_densities.len()),
    };
    for (s, ll) in log_densities.iter().enumerate() {
        let pred = log_predict_weights(&post, alpha)?;
        let terms: Vec<f64> = pred
            .iter()
            .zip(ll)
            .map(|(w, l)| if l.is_nan() { f64::NEG_INFINITY } else { w + l })
            .collect();
        path.dma_log_score.push(log_sum_exp(&terms));
        post = log_update_weights(&pred, ll, times.get(s).copied().unwrap_or(s))?;
        path.log_pred.push(pred);
        path.log_post.push(post.clone());
    }
    Ok(path)
}

/// Pool output on a common sample `times`.
#[derive(Debug, Clone)]
pub struct PoolRun {
    pub specs: Vec<ModelSpec>,
    pub alpha: f64,
    pub mode: PoolMode,
    pub times: Vec<usize>,
    /// `log_densities[s][k]`
    pub log_densities: Vec<Vec<f64>>,
    pub weights: WeightPath,
    /// One-step combined point forecast at each step (DMA mean or the
    /// selected model's mean, per `mode`).
    pub point: Vec<DVector<f64>>,
    /// Selected model at each step (argmax of `π_{t|t-1}`).
    pub selected: Vec<usize>,
    pub fits: Vec<Option<MaiFit>>,
}

/// Model ranking by total log PL (α = 1 with equal priors) alongside the
/// terminal pooled weight.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankingRow {
    pub rank: usize,
    pub model: String,
    pub q: usize,
    pub lambda: f64,
    pub kappa: f64,
    pub log_pl: f64,
    pub final_weight: f64,
}

impl PoolRun {
    pub fn total_log_pl(&self) -> Vec<f64> {
        (0..self.specs.len())
            .map(|k| self.log_densities.iter().map(|r| r[k]).sum())
            .collect()
    }

    pub fn ranking(&self) -> Vec<RankingRow> {
        let totals = self.total_log_pl();
        let last = self.weights.log_post.len() - 1;
        let final_w = self.weights.pi_post(last);
        let mut order: Vec<usize> = (0..self.specs.len()).collect();
        order.sort_by(|&a, &b| totals[b].total_cmp(&totals[a]).then(a.cmp(&b)));
        order
            .into_iter()
            .enumerate()
            .map(|(r, k)| RankingRow {
                rank: r + 1,
                model: self.specs[k].fingerprint(),
                q: self.specs[k].q,
                lambda: self.specs[k].lambda,
                kappa: self.specs[k].kappa,
                log_pl: totals[k],
                final_weight: final_w[k],
            })
            .collect()
    }

    /// Long format: `date,model,pi_pred,pi_post`.
    pub fn write_weights_csv(&self, dates: &[Quarter], out: &mut impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["date", "model", "pi_pred", "pi_post"])?;
        let names: Vec<String> = self.specs.iter().map(|s| s.fingerprint()).collect();
        for (s, &t) in self.times.iter().enumerate() {
            let date = dates.get(t).map(|d| d.to_string()).unwrap_or_else(|| t.to_string());
            let pred = self.weights.pi_pred(s);
            let post = self.weights.pi_post(s);
            for k in 0..names.len() {
                w.write_record([date.as_str(), &names[k], &fmt_sig(pred[k]), &fmt_sig(post[k])])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_ranking_csv(&self, out: &mut impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["rank", "model", "q", "lambda", "kappa", "log_pl", "final_weight"])?;
        for row in self.ranking() {
            w.write_record([
                row.rank.to_string(),
                row.model,
                row.q.to_string(),
                fmt_sig(row.lambda),
                fmt_sig(row.kappa),
                fmt_sig(row.log_pl),
                fmt_sig(row.final_weight),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// `date,selected_model`, one row per step.
    pub fn write_selection_csv(&self, dates: &[Quarter], out: &mut impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["date", "selected_model"])?;
        for (s, &t) in self.times.iter().enumerate() {
            let date = dates.get(t).map(|d| d.to_string()).unwrap_or_else(|| t.to_string());
            w.write_record([date, self.specs[self.selected[s]].fingerprint()])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_specs(values: &DMatrix<f64>, specs: &[ModelSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::DegeneratePool("no models".into()));
    }
    let n = values.ncols();
    for spec in specs {
        spec.validate(n)?;
        let needed = spec.min_observations(n);
        if values.nrows() < needed {
            return Err(Error::InsufficientObservations {
                needed,
                available: values.nrows(),
            });
        }
    }
    Ok(())
}

/// Estimate every spec in parallel. `inits[k]`, when given, warm-starts
/// model k. Failures are logged and come back as `None`.
pub fn fit_members(
    values: &DMatrix<f64>,
    specs: &[ModelSpec],
    options: &SwitchingOptions,
    inits: Option<&[Option<DMatrix<f64>>]>,
) -> Result<Vec<Option<MaiFit>>> {
    check_specs(values, specs)?;
    Ok(specs
        .par_iter()
        .enumerate()
        .map(|(k, spec)| {
            let mut opts = options.clone();
            if let Some(Some(w)) = inits.and_then(|i| i.get(k)) {
                opts.init = OmegaInit::Given(w.clone());
            }
            match switching_estimate_with(values, spec, &opts) {
                Ok(fit) => Some(fit),
                Err(e) => {
                    warn!("model {} failed: {e}; its weight is set to zero", spec.fingerprint());
                    None
                }
            }
        })
        .collect())
}

/// Weight recursion and one-step combined forecasts over already fitted
/// members, on the common sample `t >= max p`.
pub fn assemble_pool(
    values: &DMatrix<f64>,
    specs: &[ModelSpec],
    fits: Vec<Option<MaiFit>>,
    alpha: f64,
    mode: PoolMode,
) -> Result<PoolRun> {
    check_alpha(alpha)?;
    check_specs(values, specs)?;
    if fits.len() != specs.len() {
        return Err(Error::Dimension(format!("{} fits for {} specs", fits.len(), specs.len())));
    }
    let n = values.ncols();
    let start = specs.iter().map(|s| s.p).max().expect("non-empty");
    let times: Vec<usize> = (start..values.nrows()).collect();
    let mut log_densities = vec![vec![f64::NEG_INFINITY; specs.len()]; times.len()];
    let mut means = vec![vec![DVector::zeros(n); specs.len()]; times.len()];
    for (k, fit) in fits.iter().enumerate() {
        let Some(fit) = fit else { continue };
        for b in fit.beliefs.iter().filter(|b| b.t >= start) {
            let s = b.t - start;
            let ll = b.log_pred_density;
            log_densities[s][k] = if ll.is_finite() { ll } else { f64::NEG_INFINITY };
            means[s][k] = values.row(b.t).transpose() - &b.resid;
        }
    }
    let weights = weight_recursion(&log_densities, alpha, &times)?;
    let mut point = Vec::with_capacity(times.len());
    let mut selected = Vec::with_capacity(times.len());
    for s in 0..times.len() {
        let pi = weights.pi_pred(s);
        let sel = dms_select(&pi);
        selected.push(sel);
        point.push(match mode {
            PoolMode::Dms => means[s][sel].clone(),
            PoolMode::Dma => {
                let mut m = DVector::zeros(n);
                for (w, mu) in pi.iter().zip(&means[s]) {
                    m.axpy(*w, mu, 1.0);
                }
                m
            }
        });
    }
    Ok(PoolRun {
        specs: specs.to_vec(),
        alpha,
        mode,
        times,
        log_densities,
        weights,
        point,
        selected,
        fits,
    })
}

/// Fit every spec on `values` (in parallel), then run the weight recursion
/// over the common filtered sample. A model that fails to estimate gets log
/// density −∞ at every step.
pub fn run_pool(
    values: &DMatrix<f64>,
    specs: &[ModelSpec],
    alpha: f64,
    mode: PoolMode,
    options: &SwitchingOptions,
) -> Result<PoolRun> {
    check_alpha(alpha)?;
    let fits = fit_members(values, specs, options, None)?;
    assemble_pool(values, specs, fits, alpha, mode)
}
