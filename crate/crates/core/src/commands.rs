//! The batch commands behind the CLI. Each returns a one-line summary and
//! writes its outputs under `out` with fixed file names.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;
use nalgebra::DMatrix;
use serde_json::{json, Value};

use crate::config::{Command, RunConfig, VolKind};
use crate::data::{load_panel, prepare, read_any_panel, write_normalized_panel, Quarter, TimeSeriesPanel};
use crate::decomposition::{share_series, write_shares_csv, GroupTemplate};
use crate::error::{Error, Result};
use crate::evaluation::{
    expanding_window_forecast, metric_table, read_records_csv, relative_table, runner_for, write_records_csv, Design,
    Metric, Runner, VariantGrid,
};
use crate::filter::InitialCovariance;
use crate::mai::{switching_estimate_with, MaiFit, ModelSpec, SwitchingOptions};
use crate::pool::{run_pool, PoolRun};
use crate::report::fmt_sig;
use crate::simulation::{simulate_mai, BetaPath, DgpSpec, VolPath};

pub fn run(cfg: &RunConfig) -> Result<String> {
    match cfg.command {
        Command::Transform => cmd_transform(cfg),
        Command::Estimate => cmd_estimate(cfg),
        Command::Pool => cmd_pool(cfg),
        Command::Decompose => cmd_decompose(cfg),
        Command::Forecast => cmd_forecast(cfg),
        Command::Simulate => cmd_simulate(cfg),
    }
}

fn out_dir(cfg: &RunConfig) -> Result<Option<PathBuf>> {
    if cfg.dry_run {
        return Ok(None);
    }
    let dir = cfg
        .out
        .clone()
        .ok_or_else(|| Error::InvalidParameter("an output directory is required (out)".into()))?;
    fs::create_dir_all(&dir)?;
    Ok(Some(dir))
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_manifest(dir: &Path, cfg: &RunConfig, results: Value) -> Result<()> {
    let manifest = json!({
        "command": cfg.command.name(),
        "config_hash": cfg.hash(),
        "config": cfg,
        "results": results,
    });
    let mut w = create(dir, "manifest.json")?;
    serde_json::to_writer_pretty(&mut w, &manifest)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn input(cfg: &RunConfig) -> Result<&Path> {
    cfg.input
        .as_deref()
        .ok_or_else(|| Error::InvalidParameter("an input panel is required".into()))
}

fn load(cfg: &RunConfig) -> Result<TimeSeriesPanel> {
    read_any_panel(input(cfg)?, &cfg.date_column)
}

fn template(cfg: &RunConfig, panel: &TimeSeriesPanel) -> Result<Option<GroupTemplate>> {
    if cfg.groups_from_labels {
        let labels = panel
            .group_labels
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("groups = labels but the panel has no group row".into()))?;
        return GroupTemplate::from_labels(labels).map(Some);
    }
    if cfg.groups.is_empty() {
        return Ok(None);
    }
    GroupTemplate::new(cfg.groups.clone()).map(Some)
}

fn spec_for(cfg: &RunConfig, q: usize, lambda: f64, kappa: f64, tmpl: &Option<GroupTemplate>) -> Result<ModelSpec> {
    let mut spec = ModelSpec::new(q, cfg.p, lambda, kappa);
    spec.beta0_var_scale = cfg.prior_scale;
    spec.h0 = if cfg.h0 == "sample" {
        InitialCovariance::Sample
    } else {
        InitialCovariance::Identity
    };
    if let Some(t) = tmpl {
        if t.q() != q {
            return Err(Error::InvalidParameter(format!(
                "the block template has {} groups but q = {q}",
                t.q()
            )));
        }
        spec = spec.restricted(t.clone());
    }
    Ok(spec)
}

fn options(cfg: &RunConfig) -> SwitchingOptions {
    SwitchingOptions {
        tol: cfg.tol,
        max_iter: cfg.max_iter,
        ..SwitchingOptions::default()
    }
}

pub fn cmd_transform(cfg: &RunConfig) -> Result<String> {
    let raw = load_panel(input(cfg)?, &cfg.date_column)?;
    let panel = prepare(&raw)?;
    let summary = format!("N={} T={}", panel.n_series(), panel.n_obs());
    if let Some(dir) = out_dir(cfg)? {
        write_normalized_panel(&panel, dir.join("normalized.csv"))?;
        write_manifest(
            &dir,
            cfg,
            json!({ "n_series": panel.n_series(), "n_obs": panel.n_obs(), "first_date": panel.dates[0].to_string() }),
        )?;
    }
    Ok(summary)
}

fn estimate_single(cfg: &RunConfig, panel: &TimeSeriesPanel) -> Result<MaiFit> {
    let tmpl = template(cfg, panel)?;
    let spec = spec_for(cfg, cfg.q[0], cfg.lambda[0], cfg.kappa[0], &tmpl)?;
    spec.validate(panel.n_series())?;
    switching_estimate_with(&panel.values, &spec, &options(cfg))
}

fn fit_results(fit: &MaiFit) -> Value {
    json!({
        "model": fit.spec.fingerprint(),
        "converged": fit.converged,
        "iterations": fit.iterations,
        "log_pl": fit.log_pl,
    })
}

pub fn cmd_estimate(cfg: &RunConfig) -> Result<String> {
    let panel = load(cfg)?;
    let fit = estimate_single(cfg, &panel)?;
    if let Some(dir) = out_dir(cfg)? {
        let mut w = create(&dir, "omega.json")?;
        fit.write_json(&panel.series_ids, &mut w)?;
        w.flush()?;
        let mut w = create(&dir, "indexes.csv")?;
        fit.write_indexes_csv(&panel.dates, &mut w)?;
        w.flush()?;
        write_manifest(&dir, cfg, fit_results(&fit))?;
    }
    Ok(format!(
        "{} converged={} iterations={} log_pl={}",
        fit.spec.fingerprint(),
        fit.converged,
        fit.iterations,
        fmt_sig(fit.log_pl)
    ))
}

fn grid_specs(cfg: &RunConfig, panel: &TimeSeriesPanel) -> Result<Vec<ModelSpec>> {
    let tmpl = template(cfg, panel)?;
    let mut specs = Vec::new();
    for &q in &cfg.q {
        for &l in &cfg.lambda {
            for &k in &cfg.kappa {
                specs.push(spec_for(cfg, q, l, k, &tmpl)?);
            }
        }
    }
    Ok(specs)
}

/// Best five and worst five rows as aligned text.
fn ranking_text(run: &PoolRun) -> String {
    let rows = run.ranking();
    let mut out = String::from("rank  q  lambda   kappa      log_pl  final_weight\n");
    let k = rows.len();
    for (i, r) in rows.iter().enumerate() {
        if k > 10 && i == 5 {
            out.push_str("...\n");
        }
        if k <= 10 || i < 5 || i >= k - 5 {
            out.push_str(&format!(
                "{:>4} {:>2} {:>7} {:>7} {:>11} {:>13}\n",
                r.rank,
                r.q,
                fmt_sig(r.lambda),
                fmt_sig(r.kappa),
                fmt_sig(r.log_pl),
                fmt_sig(r.final_weight)
            ));
        }
    }
    out
}

pub fn cmd_pool(cfg: &RunConfig) -> Result<String> {
    let panel = load(cfg)?;
    let specs = grid_specs(cfg, &panel)?;
    let run = run_pool(&panel.values, &specs, cfg.alpha, cfg.mode, &options(cfg))?;
    let ranking = run.ranking();
    if let Some(dir) = out_dir(cfg)? {
        let mut w = create(&dir, "weights.csv")?;
        run.write_weights_csv(&panel.dates, &mut w)?;
        w.flush()?;
        let mut w = create(&dir, "ranking.csv")?;
        run.write_ranking_csv(&mut w)?;
        w.flush()?;
        let mut w = create(&dir, "selection.csv")?;
        run.write_selection_csv(&panel.dates, &mut w)?;
        w.flush()?;
        fs::write(dir.join("ranking.txt"), ranking_text(&run))?;
        let members: Vec<Value> = run
            .specs
            .iter()
            .zip(&run.fits)
            .map(|(s, f)| {
                json!({
                    "model": s.fingerprint(),
                    "q": s.q,
                    "lambda": s.lambda,
                    "kappa": s.kappa,
                    "converged": f.as_ref().map(|f| f.converged),
                    "failed": f.is_none(),
                })
            })
            .collect();
        write_manifest(&dir, cfg, json!({ "grid": members, "best": ranking[0].model }))?;
    }
    Ok(format!(
        "{} models, best {} (log_pl={})",
        specs.len(),
        ranking[0].model,
        fmt_sig(ranking[0].log_pl)
    ))
}

pub fn cmd_decompose(cfg: &RunConfig) -> Result<String> {
    let panel = load(cfg)?;
    let fit = estimate_single(cfg, &panel)?;
    let shares = share_series(&fit)?;
    let mean_share: f64 = shares.iter().map(|s| s.share_common.mean()).sum::<f64>() / shares.len() as f64;
    if let Some(dir) = out_dir(cfg)? {
        let mut w = create(&dir, "shares.csv")?;
        write_shares_csv(&shares, &panel.dates, &panel.series_ids, &mut w)?;
        w.flush()?;
        let mut w = create(&dir, "omega.json")?;
        fit.write_json(&panel.series_ids, &mut w)?;
        w.flush()?;
        let mut results = fit_results(&fit);
        results["mean_common_share"] = json!(mean_share);
        write_manifest(&dir, cfg, results)?;
    }
    Ok(format!(
        "{} dates, mean common share {}",
        shares.len(),
        fmt_sig(mean_share)
    ))
}

fn resolve_origin(cfg: &RunConfig, dates: &[Quarter]) -> Result<usize> {
    match &cfg.first_origin {
        None => Ok(dates.len() / 2),
        Some(s) => {
            if let Ok(i) = s.parse::<usize>() {
                return Ok(i);
            }
            let q: Quarter = s
                .parse()
                .map_err(|_| Error::InvalidParameter(format!("first_origin {s:?} is neither a date nor a row index")))?;
            dates
                .iter()
                .position(|d| *d == q)
                .ok_or_else(|| Error::InvalidParameter(format!("first_origin {q} is outside the panel")))
        }
    }
}

pub fn cmd_forecast(cfg: &RunConfig) -> Result<String> {
    let panel = load(cfg)?;
    let values: DMatrix<f64> = panel.destandardize();
    let targets = cfg
        .targets
        .iter()
        .map(|id| {
            panel
                .series_index(id)
                .ok_or_else(|| Error::InvalidParameter(format!("unknown target series {id}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let design = Design {
        h_max: cfg.h_max,
        first_origin: resolve_origin(cfg, &panel.dates)?,
        targets,
    };
    let grid = VariantGrid {
        qs: cfg.q.clone(),
        lambdas: cfg.lambda.clone(),
        kappas: cfg.kappa.clone(),
        p: cfg.p,
        alpha: cfg.alpha,
    };
    let opts = options(cfg);
    let mut runners: Vec<Box<dyn Runner>> = cfg
        .models
        .iter()
        .map(|tag| runner_for(tag, &grid, &opts, cfg.warm_start, cfg.rw_density))
        .collect::<Result<_>>()?;
    let n = panel.n_series();
    let pooled = |t: &str| matches!(t, "M1" | "M2" | "M3" | "M4" | "M5" | "M6" | "M7" | "M8");
    if let (true, Some(q)) = (cfg.models.iter().any(|t| pooled(t)), grid.qs.iter().find(|&&q| q > n)) {
        return Err(Error::InvalidParameter(format!("q = {q} exceeds the number of series {n}")));
    }
    if cfg.dry_run {
        return Ok(format!(
            "{} models, {} origins, h_max={}",
            runners.len(),
            panel.n_obs().saturating_sub(design.first_origin + 1),
            design.h_max
        ));
    }
    let mut records = expanding_window_forecast(&values, &panel.series_ids, &mut runners, &design)?;
    if let Some(path) = &cfg.records {
        records.extend(read_records_csv(path, &panel.dates)?);
    }
    let table = metric_table(&records)?;
    let rel = relative_table(&table, &cfg.benchmark)?;
    let dir = out_dir(cfg)?.expect("not a dry run");
    for metric in Metric::ALL {
        table.write_csv(metric, Some(&rel), dir.join(format!("metrics_{}.csv", metric.name())))?;
    }
    write_records_csv(&records, &panel.dates, dir.join("records.csv"))?;
    fs::write(
        dir.join("tables.txt"),
        rel.render_text(&format!("Relative to {} (RMSFE, MAFE: lower is better; ALPL: ratio)", cfg.benchmark)),
    )?;
    let diverged = records.iter().filter(|r| r.diverged).count();
    write_manifest(
        &dir,
        cfg,
        json!({
            "records": records.len(),
            "diverged": diverged,
            "first_origin": panel.dates[design.first_origin].to_string(),
            "models": table.models,
        }),
    )?;
    info!("{} records, {diverged} diverged", records.len());
    Ok(format!("{} records over {} models, {diverged} diverged", records.len(), table.models.len()))
}

pub fn dgp_from_config(cfg: &RunConfig) -> DgpSpec {
    let s = &cfg.sim;
    let mut spec = DgpSpec::random_constant(s.n, s.q, s.p, s.t_len, s.loading_sd, s.radius, cfg.seed);
    spec.burn_in = s.burn_in;
    if s.step_std > 0.0 {
        let BetaPath::Constant(lags) = spec.beta.clone() else { unreachable!("random_constant") };
        spec.beta = BetaPath::RandomWalk {
            initial: lags,
            step_std: s.step_std,
        };
    }
    let eye = DMatrix::identity(s.n, s.n);
    spec.vol = match s.vol {
        VolKind::Constant => VolPath::Constant(eye),
        VolKind::Break => VolPath::Break {
            before: eye.clone(),
            after: eye * s.vol_ratio,
            at: s.t_len / 2,
        },
        VolKind::Ewma => VolPath::Ewma {
            target: eye,
            kappa: s.vol_kappa,
            persistence: 0.9,
        },
    };
    spec
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<String> {
    let spec = dgp_from_config(cfg);
    let start: Quarter = cfg
        .sim
        .start
        .parse()
        .map_err(|e| Error::InvalidParameter(format!("start date: {e}")))?;
    let sim = simulate_mai(&spec)?;
    if let Some(dir) = out_dir(cfg)? {
        sim.write(dir.join("panel.csv"), dir.join("truth.json"), start)?;
        write_manifest(&dir, cfg, json!({ "max_radius": sim.truth.max_radius }))?;
    }
    Ok(format!("N={} T={} seed={}", spec.n(), spec.t_len, cfg.seed))
}
