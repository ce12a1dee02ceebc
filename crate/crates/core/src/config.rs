//! Run configuration: flat `key = value` files (repeat a key to list grid
//! values, or separate them with commas), overridden key by key by command
//! line pairs, over per-command defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::pool::PoolMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Transform,
    Estimate,
    Pool,
    Decompose,
    Forecast,
    Simulate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Transform => "transform",
            Command::Estimate => "estimate",
            Command::Pool => "pool",
            Command::Decompose => "decompose",
            Command::Forecast => "forecast",
            Command::Simulate => "simulate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum VolKind {
    Constant,
    Break,
    Ewma,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimConfig {
    pub n: usize,
    pub q: usize,
    pub p: usize,
    pub t_len: usize,
    pub burn_in: usize,
    pub loading_sd: f64,
    pub radius: f64,
    /// Random-walk step of the loadings; 0 gives constant parameters.
    pub step_std: f64,
    pub vol: VolKind,
    /// Variance multiplier after the break.
    pub vol_ratio: f64,
    pub vol_kappa: f64,
    pub start: String,
}

/// Fully resolved settings for one command.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: Command,
    pub input: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub date_column: String,
    pub seed: u64,
    pub workers: Option<usize>,
    pub dry_run: bool,
    pub warm_start: bool,
    pub q: Vec<usize>,
    pub p: usize,
    pub lambda: Vec<f64>,
    pub kappa: Vec<f64>,
    pub alpha: f64,
    pub mode: PoolMode,
    pub tol: f64,
    pub max_iter: usize,
    pub prior_scale: f64,
    pub h0: String,
    /// Block sizes for a restricted ω; `labels` in the file means "use the
    /// panel's group row".
    pub groups: Vec<usize>,
    pub groups_from_labels: bool,
    pub h_max: usize,
    pub first_origin: Option<String>,
    pub targets: Vec<String>,
    pub models: Vec<String>,
    pub benchmark: String,
    pub rw_density: bool,
    pub records: Option<PathBuf>,
    pub sim: SimConfig,
}

const KEYS: &[&str] = &[
    "input",
    "out",
    "date_column",
    "seed",
    "workers",
    "dry_run",
    "warm_start",
    "q",
    "p",
    "lambda",
    "kappa",
    "alpha",
    "mode",
    "tol",
    "max_iter",
    "prior_scale",
    "h0",
    "groups",
    "h_max",
    "first_origin",
    "targets",
    "models",
    "benchmark",
    "rw_density",
    "records",
    "n",
    "t_len",
    "burn_in",
    "loading_sd",
    "radius",
    "step_std",
    "vol",
    "vol_ratio",
    "vol_kappa",
    "start",
];

/// Ordered `(key, value)` pairs.
pub type Entries = Vec<(String, String)>;

/// Parse `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_entries(text: &str) -> Result<Entries> {
    let mut out = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            row: k + 1,
            column: "config".into(),
            message: format!("expected key = value, got {line:?}"),
        })?;
        out.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(out)
}

pub fn read_entries(path: impl AsRef<Path>) -> Result<Entries> {
    parse_entries(&std::fs::read_to_string(path)?)
}

/// Merge by key: every key present in `flags` replaces all of that key's
/// values from `file`.
fn merge(file: &[(String, String)], flags: &[(String, String)]) -> Result<BTreeMap<String, Vec<String>>> {
    let mut map: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (layer, entries) in [(0, file), (1, flags)] {
        let mut seen_here: Vec<&str> = Vec::new();
        for (k, v) in entries {
            let key = k.replace('-', "_");
            if !KEYS.contains(&key.as_str()) {
                return Err(Error::InvalidParameter(format!("unknown config key {k:?}")));
            }
            if layer == 1 && !seen_here.contains(&k.as_str()) {
                map.remove(&key);
                seen_here.push(k);
            }
            map.entry(key)
                .or_default()
                .extend(v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()));
        }
    }
    Ok(map)
}

struct Lookup {
    map: BTreeMap<String, Vec<String>>,
}

impl Lookup {
    fn values(&self, key: &str) -> Option<&[String]> {
        self.map.get(key).map(|v| v.as_slice())
    }

    fn single(&self, key: &str) -> Result<Option<&str>> {
        match self.values(key) {
            None => Ok(None),
            Some([v]) => Ok(Some(v.as_str())),
            Some([]) => Err(Error::InvalidParameter(format!("{key} has no value"))),
            Some(_) => Err(Error::InvalidParameter(format!("{key} takes a single value"))),
        }
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.single(key)? {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::InvalidParameter(format!("cannot parse {key} = {v:?}"))),
        }
    }

    fn list<T: std::str::FromStr + Clone>(&self, key: &str, default: &[T]) -> Result<Vec<T>> {
        match self.values(key) {
            None => Ok(default.to_vec()),
            Some(vs) => vs
                .iter()
                .map(|v| {
                    v.parse()
                        .map_err(|_| Error::InvalidParameter(format!("cannot parse {key} = {v:?}")))
                })
                .collect(),
        }
    }

    fn flag(&self, key: &str, default: bool) -> Result<bool> {
        match self.single(key)? {
            None => Ok(default),
            Some("true" | "yes" | "1" | "on") => Ok(true),
            Some("false" | "no" | "0" | "off") => Ok(false),
            Some(v) => Err(Error::InvalidParameter(format!("{key} must be true or false, got {v:?}"))),
        }
    }
}

impl RunConfig {
    /// Resolve `flags > file > defaults` for `command`.
    pub fn resolve(command: Command, file: &[(String, String)], flags: &[(String, String)]) -> Result<RunConfig> {
        let l = Lookup { map: merge(file, flags)? };
        let estimating = matches!(command, Command::Estimate | Command::Decompose);
        let (dq, dl, dk): (&[usize], &[f64], &[f64]) = if estimating {
            (&[1], &[0.99], &[0.96])
        } else {
            (&[1, 2, 3], &[0.97, 0.98, 0.99, 1.0], &[0.96, 0.98, 1.0])
        };
        let mode = match l.single("mode")?.unwrap_or("dma") {
            "dma" | "DMA" => PoolMode::Dma,
            "dms" | "DMS" => PoolMode::Dms,
            other => return Err(Error::InvalidParameter(format!("mode must be dma or dms, got {other:?}"))),
        };
        let vol = match l.single("vol")?.unwrap_or("constant") {
            "constant" => VolKind::Constant,
            "break" => VolKind::Break,
            "ewma" => VolKind::Ewma,
            other => {
                return Err(Error::InvalidParameter(format!(
                    "vol must be constant, break or ewma, got {other:?}"
                )))
            }
        };
        let groups_from_labels = l.values("groups") == Some(&["labels".to_string()][..]);
        let groups = if groups_from_labels { Vec::new() } else { l.list("groups", &[])? };
        let default_models: Vec<String> = (1..=11).map(|k| format!("M{k}")).collect();
        let cfg = RunConfig {
            command,
            input: l.single("input")?.map(PathBuf::from),
            out: l.single("out")?.map(PathBuf::from),
            date_column: l.single("date_column")?.unwrap_or("date").to_string(),
            seed: l.parse("seed", 0)?,
            workers: l.single("workers")?.map(|v| v.parse()).transpose().map_err(|_| {
                Error::InvalidParameter("workers must be a positive integer".into())
            })?,
            dry_run: l.flag("dry_run", false)?,
            warm_start: l.flag("warm_start", true)?,
            q: l.list("q", dq)?,
            p: l.parse("p", 1)?,
            lambda: l.list("lambda", dl)?,
            kappa: l.list("kappa", dk)?,
            alpha: l.parse("alpha", 0.99)?,
            mode,
            tol: l.parse("tol", 1e-6)?,
            max_iter: l.parse("max_iter", 100)?,
            prior_scale: l.parse("prior_scale", 4.0)?,
            h0: l.single("h0")?.unwrap_or("identity").to_string(),
            groups,
            groups_from_labels,
            h_max: l.parse("h_max", 4)?,
            first_origin: l.single("first_origin")?.map(str::to_string),
            targets: l.list("targets", &[])?,
            models: l.list("models", &default_models)?,
            benchmark: l.single("benchmark")?.unwrap_or("M10").to_string(),
            rw_density: l.flag("rw_density", false)?,
            records: l.single("records")?.map(PathBuf::from),
            sim: SimConfig {
                n: l.parse("n", 6)?,
                q: *l.list("q", &[2usize])?.first().unwrap_or(&2),
                p: l.parse("p", 1)?,
                t_len: l.parse("t_len", 200)?,
                burn_in: l.parse("burn_in", 200)?,
                loading_sd: l.parse("loading_sd", 0.5)?,
                radius: l.parse("radius", 0.9)?,
                step_std: l.parse("step_std", 0.0)?,
                vol,
                vol_ratio: l.parse("vol_ratio", 2.0)?,
                vol_kappa: l.parse("vol_kappa", 0.94)?,
                start: l.single("start")?.unwrap_or("1960Q1").to_string(),
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v <= 1.0;
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.q.is_empty() || self.lambda.is_empty() || self.kappa.is_empty() {
            return bad("grids must be non-empty".into());
        }
        if let Some(&q) = self.q.iter().find(|&&q| q == 0) {
            return bad(format!("q must be ≥ 1, got {q}"));
        }
        if self.p == 0 {
            return bad("p must be ≥ 1".into());
        }
        for (name, list) in [("lambda", &self.lambda), ("kappa", &self.kappa)] {
            if let Some(v) = list.iter().find(|&&v| !unit(v)) {
                return bad(format!("{name} must be in (0, 1], got {v}"));
            }
        }
        if !unit(self.alpha) {
            return bad(format!("alpha must be in (0, 1], got {}", self.alpha));
        }
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return bad("tol must be positive and max_iter ≥ 1".into());
        }
        if !(self.prior_scale > 0.0) {
            return bad("prior_scale must be positive".into());
        }
        if !matches!(self.h0.as_str(), "identity" | "sample") {
            return bad(format!("h0 must be identity or sample, got {:?}", self.h0));
        }
        if self.h_max == 0 {
            return bad("h_max must be ≥ 1".into());
        }
        if self.workers == Some(0) {
            return bad("workers must be ≥ 1".into());
        }
        let estimating = matches!(self.command, Command::Estimate | Command::Decompose);
        if estimating && (self.q.len() > 1 || self.lambda.len() > 1 || self.kappa.len() > 1) {
            return bad(format!("{} takes a single q, lambda and kappa", self.command.name()));
        }
        if self.command != Command::Simulate && self.input.is_none() {
            return bad("an input panel is required".into());
        }
        if self.command == Command::Simulate {
            let s = &self.sim;
            if s.q == 0 || s.q > s.n || s.t_len <= s.p {
                return bad("simulation needs 1 <= q <= n and t_len > p".into());
            }
            if !(s.vol_ratio > 0.0) || !unit(s.vol_kappa) || !(s.loading_sd >= 0.0) || !(s.step_std >= 0.0) {
                return bad("simulation scales must be positive".into());
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of the resolved configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}
