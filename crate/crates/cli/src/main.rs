//! Command-line front end. Exit status: 0 on success, 2 for invalid input or
//! configuration, 1 for any other failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::debug;
use tvpmai::config::{read_entries, Command, Entries, RunConfig};
use tvpmai::Error;

#[derive(Parser)]
#[command(name = "tvpmai", version, about = "Time-varying multivariate autoregressive index models")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Transform and standardize a raw panel.
    Transform(Common),
    /// Fit one model by switching estimation.
    Estimate(Common),
    /// Fit a model grid and combine it by DMA or DMS.
    Pool(Common),
    /// Split each series' variance into common and idiosyncratic parts.
    Decompose(Common),
    /// Expanding-window forecast evaluation.
    Forecast(Common),
    /// Simulate a panel from a known model.
    Simulate(Common),
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input panel: a raw CSV or the normalized CSV written by `transform`.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    workers: Option<usize>,
    /// Validate and run without writing any file.
    #[arg(long)]
    dry_run: bool,
    /// Number of indexes; comma-separated for a grid.
    #[arg(long)]
    q: Option<String>,
    #[arg(long)]
    p: Option<String>,
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    kappa: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    /// dma or dms.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    h_max: Option<String>,
    /// First forecast origin, as a date (e.g. 1985Q1) or a 0-based index.
    #[arg(long)]
    first_origin: Option<String>,
    #[arg(long)]
    benchmark: Option<String>,
    /// Comma-separated model tags (M1..M11).
    #[arg(long)]
    models: Option<String>,
    /// Any configuration key, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn flags(&self) -> Result<Entries, Error> {
        let mut out: Entries = Vec::new();
        let mut push = |k: &str, v: String| out.push((k.to_string(), v));
        let paths = [("input", &self.input), ("out", &self.out)];
        for (k, v) in paths {
            if let Some(v) = v {
                push(k, v.display().to_string());
            }
        }
        if let Some(s) = self.seed {
            push("seed", s.to_string());
        }
        if let Some(w) = self.workers {
            push("workers", w.to_string());
        }
        if self.dry_run {
            push("dry_run", "true".into());
        }
        let values = [
            ("q", &self.q),
            ("p", &self.p),
            ("lambda", &self.lambda),
            ("kappa", &self.kappa),
            ("alpha", &self.alpha),
            ("mode", &self.mode),
            ("h_max", &self.h_max),
            ("first_origin", &self.first_origin),
            ("benchmark", &self.benchmark),
            ("models", &self.models),
        ];
        for (k, v) in values {
            if let Some(v) = v {
                push(k, v.clone());
            }
        }
        for s in &self.set {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| Error::InvalidParameter(format!("--set expects KEY=VALUE, got {s:?}")))?;
            push(k.trim(), v.trim().to_string());
        }
        Ok(out)
    }
}

fn execute(cli: Cli) -> Result<String, Error> {
    let (command, common) = match &cli.command {
        Sub::Transform(c) => (Command::Transform, c),
        Sub::Estimate(c) => (Command::Estimate, c),
        Sub::Pool(c) => (Command::Pool, c),
        Sub::Decompose(c) => (Command::Decompose, c),
        Sub::Forecast(c) => (Command::Forecast, c),
        Sub::Simulate(c) => (Command::Simulate, c),
    };
    let file = match &common.config {
        Some(path) => read_entries(path)?,
        None => Vec::new(),
    };
    let cfg = RunConfig::resolve(command, &file, &common.flags()?)?;
    debug!("config hash {}", cfg.hash());
    if let Some(n) = cfg.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidParameter(format!("cannot start {n} workers: {e}")))?;
    }
    tvpmai::commands::run(&cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
    }
}
