//! Synthetic MAI panels:
//! `y_t = Σ_h β_{h,t} ω' y_{t-h} + ε_t`, `ε_t ~ N(0, H_t)`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{write_raw_panel, Quarter, RawPanel};
use crate::error::{Error, Result};
use crate::linalg::{companion, spectral_radius};

/// Companion spectral radius allowed for the implied VAR.
pub const RADIUS_LIMIT: f64 = 0.98;
const MAX_REDRAWS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BetaPath {
    /// Lag loadings `β_1..β_p`, each N x q.
    Constant(Vec<DMatrix<f64>>),
    /// Start at `initial`; each step adds N(0, step_std²) to every loading.
    /// Steps that would breach the stationarity guard are redrawn.
    RandomWalk { initial: Vec<DMatrix<f64>>, step_std: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum VolPath {
    Constant(DMatrix<f64>),
    /// `before` for t < `at`, `after` from `at` on (post burn-in index).
    Break {
        before: DMatrix<f64>,
        after: DMatrix<f64>,
        at: usize,
    },
    /// `H_t = (1-ρ) target + ρ (κ H_{t-1} + (1-κ) ε_{t-1} ε_{t-1}')`.
    Ewma {
        target: DMatrix<f64>,
        kappa: f64,
        persistence: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    /// N x q
    pub omega: DMatrix<f64>,
    pub beta: BetaPath,
    pub vol: VolPath,
    pub t_len: usize,
    pub burn_in: usize,
    pub seed: u64,
}

/// Everything needed to score an estimate against the generating process.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroundTruth {
    pub omega: DMatrix<f64>,
    /// Stacked loadings per retained t (same ordering as the filter state).
    pub beta: Vec<DVector<f64>>,
    pub h: Vec<DMatrix<f64>>,
    pub max_radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulated {
    /// T x N
    pub values: DMatrix<f64>,
    pub truth: GroundTruth,
}

fn var_radius(lags: &[DMatrix<f64>], omega: &DMatrix<f64>) -> f64 {
    let phi: Vec<DMatrix<f64>> = lags.iter().map(|b| b * omega.transpose()).collect();
    spectral_radius(&companion(&phi))
}

fn stack(lags: &[DMatrix<f64>]) -> DVector<f64> {
    crate::mai::stack_coefficients(lags)
}

fn normal_matrix(rng: &mut impl Rng, rows: usize, cols: usize, sd: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| sd * rng.sample::<f64, _>(StandardNormal))
}

impl DgpSpec {
    pub fn n(&self) -> usize {
        self.omega.nrows()
    }

    pub fn q(&self) -> usize {
        self.omega.ncols()
    }

    fn initial_lags(&self) -> &[DMatrix<f64>] {
        match &self.beta {
            BetaPath::Constant(l) => l,
            BetaPath::RandomWalk { initial, .. } => initial,
        }
    }

    pub fn p(&self) -> usize {
        self.initial_lags().len()
    }

    pub fn validate(&self) -> Result<()> {
        let (n, q) = self.omega.shape();
        if q == 0 || q > n {
            return Err(Error::InvalidParameter(format!("omega is {n}x{q}; need 1 <= q <= N")));
        }
        let lags = self.initial_lags();
        if lags.is_empty() {
            return Err(Error::InvalidParameter("need at least one lag".into()));
        }
        if lags.iter().any(|b| b.shape() != (n, q)) {
            return Err(Error::Dimension(format!("every lag loading must be {n}x{q}")));
        }
        if let BetaPath::RandomWalk { step_std, .. } = self.beta {
            if !(step_std >= 0.0) {
                return Err(Error::InvalidParameter("step_std must be nonnegative".into()));
            }
        }
        let square = |h: &DMatrix<f64>| h.shape() == (n, n);
        let ok = match &self.vol {
            VolPath::Constant(h) => square(h),
            VolPath::Break { before, after, .. } => square(before) && square(after),
            VolPath::Ewma { target, kappa, persistence } => {
                square(target) && (0.0..=1.0).contains(kappa) && (0.0..1.0).contains(persistence)
            }
        };
        if !ok {
            return Err(Error::InvalidParameter(format!("volatility path must be {n}x{n} with valid factors")));
        }
        if self.t_len <= self.p() {
            return Err(Error::InvalidParameter("t_len must exceed the lag order".into()));
        }
        let radius = var_radius(lags, &self.omega);
        if radius >= RADIUS_LIMIT {
            return Err(Error::Stationarity {
                radius,
                limit: RADIUS_LIMIT,
            });
        }
        Ok(())
    }

    /// Constant-parameter DGP with standard normal ω, N(0, loading_sd²)
    /// loadings shrunk so the implied VAR has spectral radius at most
    /// `radius`, and `H = I`.
    pub fn random_constant(
        n: usize,
        q: usize,
        p: usize,
        t_len: usize,
        loading_sd: f64,
        radius: f64,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x005e_ed0f_0e6a);
        let omega = normal_matrix(&mut rng, n, q, 1.0);
        let mut lags: Vec<DMatrix<f64>> = (0..p).map(|_| normal_matrix(&mut rng, n, q, loading_sd)).collect();
        let r = var_radius(&lags, &omega);
        if r > radius {
            // Scaling lag h by s^h scales every companion root by s.
            let s = radius / r;
            for (h, b) in lags.iter_mut().enumerate() {
                *b *= s.powi(h as i32 + 1);
            }
        }
        DgpSpec {
            omega,
            beta: BetaPath::Constant(lags),
            vol: VolPath::Constant(DMatrix::identity(n, n)),
            t_len,
            burn_in: 200,
            seed,
        }
    }
}

/// Run the DGP forward. Fully determined by `spec.seed`.
pub fn simulate_mai(spec: &DgpSpec) -> Result<Simulated> {
    spec.validate()?;
    let (n, p) = (spec.n(), spec.p());
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let total = spec.burn_in + spec.t_len;
    let mut lags = spec.initial_lags().to_vec();
    let mut y = DMatrix::zeros(total + p, n);
    let mut h_prev = match &spec.vol {
        VolPath::Constant(h) => h.clone(),
        VolPath::Break { before, .. } => before.clone(),
        VolPath::Ewma { target, .. } => target.clone(),
    };
    let mut eps_prev = DVector::zeros(n);
    let mut truth_beta = Vec::with_capacity(spec.t_len);
    let mut truth_h = Vec::with_capacity(spec.t_len);
    let mut max_radius = var_radius(&lags, &spec.omega);

    for step in 0..total {
        let kept = step.checked_sub(spec.burn_in);
        if let BetaPath::RandomWalk { step_std, .. } = spec.beta {
            if step > 0 && step_std > 0.0 {
                for _ in 0..MAX_REDRAWS {
                    let proposal: Vec<DMatrix<f64>> = lags
                        .iter()
                        .map(|b| b + normal_matrix(&mut rng, b.nrows(), b.ncols(), step_std))
                        .collect();
                    let r = var_radius(&proposal, &spec.omega);
                    if r < RADIUS_LIMIT {
                        lags = proposal;
                        max_radius = max_radius.max(r);
                        break;
                    }
                }
            }
        }
        let h = match &spec.vol {
            VolPath::Constant(h) => h.clone(),
            VolPath::Break { before, after, at } => {
                if kept.is_some_and(|k| k >= *at) {
                    after.clone()
                } else {
                    before.clone()
                }
            }
            VolPath::Ewma { target, kappa, persistence } => {
                let local = &h_prev * *kappa + &eps_prev * eps_prev.transpose() * (1.0 - kappa);
                target * (1.0 - persistence) + local * *persistence
            }
        };
        let chol = h
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidParameter(format!("H is not positive definite at step {step}")))?;
        let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let eps = chol.l() * z;
        let row = step + p;
        let mut yt = eps.clone();
        for (lag, b) in lags.iter().enumerate() {
            let f = spec.omega.transpose() * y.row(row - lag - 1).transpose();
            yt += b * f;
        }
        y.set_row(row, &yt.transpose());
        if kept.is_some() {
            truth_beta.push(stack(&lags));
            truth_h.push(h.clone());
        }
        h_prev = h;
        eps_prev = eps;
    }
    let values = y.rows(p + spec.burn_in, spec.t_len).into_owned();
    Ok(Simulated {
        values,
        truth: GroundTruth {
            omega: spec.omega.clone(),
            beta: truth_beta,
            h: truth_h,
            max_radius,
        },
    })
}

impl Simulated {
    /// As a raw panel (`s1..sN`, all transform codes 1) starting at `start`.
    pub fn to_panel(&self, start: Quarter) -> RawPanel {
        let (t_len, n) = self.values.shape();
        RawPanel {
            dates: (0..t_len).map(|t| start.offset(t as i64)).collect(),
            series_ids: (1..=n).map(|i| format!("s{i}")).collect(),
            values: self.values.clone(),
            tcodes: vec![1; n],
            group_labels: None,
        }
    }

    pub fn write(&self, panel_path: impl AsRef<Path>, truth_path: impl AsRef<Path>, start: Quarter) -> Result<()> {
        write_raw_panel(&self.to_panel(start), panel_path)?;
        let file = std::fs::File::create(truth_path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), &self.truth)?;
        Ok(())
    }
}
