use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mai::{iterate_var, switching_estimate_with, ModelSpec, MultiStepForecast, OmegaInit, SwitchingOptions};
use crate::pool::{assemble_pool, dma_forecast, dms_select, fit_members, log_predict_weights, GaussianMixture, PoolMode};

/// Forecast for one horizon on the standardized scale.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonForecast {
    pub mean: DVector<f64>,
    /// Marginal predictive variances.
    pub var: DVector<f64>,
    /// Set for pooled forecasts; scores then use the mixture marginal.
    pub mixture: Option<GaussianMixture>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastSet {
    /// Index `h - 1`.
    pub horizons: Vec<HorizonForecast>,
    /// Whether log scores should be reported.
    pub has_density: bool,
}

impl ForecastSet {
    fn from_gaussian(f: MultiStepForecast) -> Self {
        ForecastSet {
            horizons: f
                .means
                .into_iter()
                .zip(f.covs)
                .map(|(mean, cov)| HorizonForecast {
                    mean,
                    var: cov.diagonal(),
                    mixture: None,
                })
                .collect(),
            has_density: true,
        }
    }
}

/// A forecasting model re-estimated at every origin. `window` holds the
/// standardized observations up to and including the origin.
pub trait Runner: Send {
    fn tag(&self) -> &str;
    fn forecast(&mut self, window: &DMatrix<f64>, h_max: usize) -> Result<ForecastSet>;
}

/// Random walk: every horizon forecasts the last observation, with the
/// sample variance of first differences as a flat predictive variance.
pub struct RandomWalk {
    pub tag: String,
    /// Report log scores (off by default: tables show "n/a").
    pub density: bool,
}

impl RandomWalk {
    pub fn new(density: bool) -> Self {
        RandomWalk {
            tag: "M9".into(),
            density,
        }
    }
}

impl Runner for RandomWalk {
    fn tag(&self) -> &str {
        &self.tag
    }

    fn forecast(&mut self, window: &DMatrix<f64>, h_max: usize) -> Result<ForecastSet> {
        let t = window.nrows();
        if t < 3 {
            return Err(Error::InsufficientObservations { needed: 3, available: t });
        }
        let diffs = window.rows(1, t - 1) - window.rows(0, t - 1);
        let var = DVector::from_iterator(
            window.ncols(),
            diffs.column_iter().map(|c| {
                let m = c.mean();
                c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (c.len() as f64 - 1.0)
            }),
        );
        let last = window.row(t - 1).transpose();
        Ok(ForecastSet {
            horizons: (0..h_max)
                .map(|_| HorizonForecast {
                    mean: last.clone(),
                    var: var.clone(),
                    mixture: None,
                })
                .collect(),
            has_density: self.density,
        })
    }
}

/// Least-squares VAR(p) without intercept (the panels are standardized).
#[derive(Debug, Clone, PartialEq)]
pub struct VarFit {
    /// `Φ_1..Φ_p`, N x N.
    pub lags: Vec<DMatrix<f64>>,
    pub resid_cov: DMatrix<f64>,
}

pub fn var_ols(values: &DMatrix<f64>, p: usize) -> Result<VarFit> {
    let (t_len, n) = values.shape();
    let k = n * p;
    if p == 0 || t_len <= p || t_len - p <= k {
        return Err(Error::RankDeficient(format!(
            "VAR({p}) on {n} series needs more than {} observations, have {t_len}",
            k + p
        )));
    }
    let rows = t_len - p;
    let x = DMatrix::from_fn(rows, k, |r, c| values[(r + p - 1 - c / n, c % n)]);
    let y = values.rows(p, rows).into_owned();
    let xtx = x.transpose() * &x;
    let scale = xtx.diagonal().max();
    let chol = Cholesky::new(xtx).ok_or_else(|| Error::RankDeficient("VAR regressors are collinear".into()))?;
    let l = chol.l_dirty();
    if (0..k).any(|i| l[(i, i)] * l[(i, i)] < 1e-12 * scale) {
        return Err(Error::RankDeficient("VAR regressors are collinear".into()));
    }
    let b = chol.solve(&(x.transpose() * &y));
    let resid = y - &x * &b;
    let resid_cov = resid.transpose() * resid / (rows - k) as f64;
    let lags = (0..p).map(|h| b.rows(h * n, n).transpose()).collect();
    Ok(VarFit { lags, resid_cov })
}

pub struct VarOls {
    pub tag: String,
    pub p: usize,
}

impl VarOls {
    /// `M10` for one lag, `M11` for four, `VAR(p)` otherwise.
    pub fn new(p: usize) -> Self {
        let tag = match p {
            1 => "M10".to_string(),
            4 => "M11".to_string(),
            _ => format!("VAR({p})"),
        };
        VarOls { tag, p }
    }
}

impl Runner for VarOls {
    fn tag(&self) -> &str {
        &self.tag
    }

    fn forecast(&mut self, window: &DMatrix<f64>, h_max: usize) -> Result<ForecastSet> {
        let fit = var_ols(window, self.p)?;
        Ok(ForecastSet::from_gaussian(iterate_var(&fit.lags, window, &fit.resid_cov, None, h_max)))
    }
}

/// A single MAI specification.
pub struct MaiRunner {
    pub tag: String,
    pub spec: ModelSpec,
    pub options: SwitchingOptions,
    pub warm_start: bool,
    last_omega: Option<DMatrix<f64>>,
}

impl MaiRunner {
    pub fn new(tag: impl Into<String>, spec: ModelSpec, options: SwitchingOptions, warm_start: bool) -> Self {
        MaiRunner {
            tag: tag.into(),
            spec,
            options,
            warm_start,
            last_omega: None,
        }
    }
}

impl Runner for MaiRunner {
    fn tag(&self) -> &str {
        &self.tag
    }

    fn forecast(&mut self, window: &DMatrix<f64>, h_max: usize) -> Result<ForecastSet> {
        let mut opts = self.options.clone();
        if let (true, Some(w)) = (self.warm_start, &self.last_omega) {
            opts.init = OmegaInit::Given(w.clone());
        }
        let fit = switching_estimate_with(window, &self.spec, &opts)?;
        self.last_omega = Some(fit.omega.omega.clone());
        Ok(ForecastSet::from_gaussian(fit.forecast(window, h_max)?))
    }
}

/// DMA or DMS over a grid of specifications. Weights `π_{T+1|T}` formed at
/// the origin are applied to every horizon.
pub struct PoolRunner {
    pub tag: String,
    pub specs: Vec<ModelSpec>,
    pub alpha: f64,
    pub mode: PoolMode,
    pub options: SwitchingOptions,
    pub warm_start: bool,
    last_omegas: Vec<Option<DMatrix<f64>>>,
}

impl PoolRunner {
    pub fn new(
        tag: impl Into<String>,
        specs: Vec<ModelSpec>,
        alpha: f64,
        mode: PoolMode,
        options: SwitchingOptions,
        warm_start: bool,
    ) -> Self {
        let k = specs.len();
        PoolRunner {
            tag: tag.into(),
            specs,
            alpha,
            mode,
            options,
            warm_start,
            last_omegas: vec![None; k],
        }
    }
}

impl Runner for PoolRunner {
    fn tag(&self) -> &str {
        &self.tag
    }

    fn forecast(&mut self, window: &DMatrix<f64>, h_max: usize) -> Result<ForecastSet> {
        let inits = self.warm_start.then_some(self.last_omegas.as_slice());
        let fits = fit_members(window, &self.specs, &self.options, inits)?;
        for (slot, fit) in self.last_omegas.iter_mut().zip(&fits) {
            if let Some(f) = fit {
                *slot = Some(f.omega.omega.clone());
            }
        }
        let per_model: Vec<Option<MultiStepForecast>> = fits
            .iter()
            .map(|f| f.as_ref().and_then(|f| f.forecast(window, h_max).ok()))
            .collect();
        let run = assemble_pool(window, &self.specs, fits, self.alpha, self.mode)?;
        let last_post = run.weights.log_post.last().expect("non-empty sample");
        let mut log_next = log_predict_weights(last_post, self.alpha)?;
        for (w, f) in log_next.iter_mut().zip(&per_model) {
            if f.is_none() {
                *w = f64::NEG_INFINITY;
            }
        }
        let lse = crate::linalg::log_sum_exp(&log_next);
        if !lse.is_finite() {
            return Err(Error::DegeneratePool("no pool member produced a forecast".into()));
        }
        let pi: Vec<f64> = log_next.iter().map(|l| (l - lse).exp()).collect();
        let horizons = (0..h_max)
            .map(|h| -> Result<HorizonForecast> {
                let live: Vec<usize> = (0..pi.len()).filter(|&k| per_model[k].is_some()).collect();
                let comps: Vec<(DVector<f64>, DMatrix<f64>)> = live
                    .iter()
                    .map(|&k| {
                        let f = per_model[k].as_ref().expect("live");
                        (f.means[h].clone(), f.covs[h].clone())
                    })
                    .collect();
                let weights: Vec<f64> = live.iter().map(|&k| pi[k]).collect();
                match self.mode {
                    PoolMode::Dms => {
                        let (mean, cov) = comps[dms_select(&weights)].clone();
                        Ok(HorizonForecast {
                            mean,
                            var: cov.diagonal(),
                            mixture: None,
                        })
                    }
                    PoolMode::Dma => {
                        let mix = dma_forecast(&weights, &comps)?;
                        let mean = mix.mean();
                        let second = weights.iter().zip(&comps).fold(DVector::zeros(mean.len()), |acc, (w, (m, c))| {
                            acc + (c.diagonal() + m.component_mul(m)) * *w
                        });
                        let var = second - mean.component_mul(&mean);
                        Ok(HorizonForecast {
                            mean,
                            var,
                            mixture: Some(mix),
                        })
                    }
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ForecastSet {
            horizons,
            has_density: true,
        })
    }
}

/// Grids over which the pooled variants are formed.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantGrid {
    pub qs: Vec<usize>,
    pub lambdas: Vec<f64>,
    pub kappas: Vec<f64>,
    pub p: usize,
    pub alpha: f64,
}

impl Default for VariantGrid {
    fn default() -> Self {
        VariantGrid {
            qs: vec![1, 2, 3],
            lambdas: vec![0.97, 0.98, 0.99, 1.0],
            kappas: vec![0.96, 0.98, 1.0],
            p: 1,
            alpha: 0.99,
        }
    }
}

impl VariantGrid {
    pub fn specs(&self, lambdas: &[f64], kappas: &[f64]) -> Vec<ModelSpec> {
        let mut out = Vec::new();
        for &q in &self.qs {
            for &l in lambdas {
                for &k in kappas {
                    out.push(ModelSpec::new(q, self.p, l, k));
                }
            }
        }
        out
    }
}

/// Pooled variants M1..M8: (λ, κ) free, λ = 1, κ = 1, or both fixed at 1,
/// each with DMA (odd) and DMS (even).
pub fn model_variant(
    tag: &str,
    grid: &VariantGrid,
    options: &SwitchingOptions,
    warm_start: bool,
) -> Result<PoolRunner> {
    let one = [1.0];
    let (lambdas, kappas, mode): (&[f64], &[f64], PoolMode) = match tag {
        "M1" => (&grid.lambdas, &grid.kappas, PoolMode::Dma),
        "M2" => (&grid.lambdas, &grid.kappas, PoolMode::Dms),
        "M3" => (&one, &grid.kappas, PoolMode::Dma),
        "M4" => (&one, &grid.kappas, PoolMode::Dms),
        "M5" => (&grid.lambdas, &one, PoolMode::Dma),
        "M6" => (&grid.lambdas, &one, PoolMode::Dms),
        "M7" => (&one, &one, PoolMode::Dma),
        "M8" => (&one, &one, PoolMode::Dms),
        other => return Err(Error::InvalidParameter(format!("unknown model variant {other}"))),
    };
    Ok(PoolRunner::new(
        tag,
        grid.specs(lambdas, kappas),
        grid.alpha,
        mode,
        options.clone(),
        warm_start,
    ))
}

/// Runner for any of the tags M1..M11.
pub fn runner_for(
    tag: &str,
    grid: &VariantGrid,
    options: &SwitchingOptions,
    warm_start: bool,
    rw_density: bool,
) -> Result<Box<dyn Runner>> {
    Ok(match tag {
        "M9" => Box::new(RandomWalk::new(rw_density)),
        "M10" => Box::new(VarOls::new(1)),
        "M11" => Box::new(VarOls::new(4)),
        _ => Box::new(model_variant(tag, grid, options, warm_start)?),
    })
}
