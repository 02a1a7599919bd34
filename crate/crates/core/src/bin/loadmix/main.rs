//! Command line front end: ingest meter data, fit and select mixture
//! models, report clusters, and compare day-ahead forecasts.

mod commands;

use std::path::PathBuf;
use std::str::FromStr;

use chrono::{NaiveDate, Weekday};
use clap::{Args, Parser, Subcommand};

use loadmix::error::{Error, Result};

#[derive(Parser)]
#[command(
    name = "loadmix",
    version,
    about = "Cluster half-hourly load curves and forecast the next day"
)]
struct Cli {
    /// Defaults file with key=value lines; explicit flags win
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Worker threads for the fitting sweep (default: all cores)
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,

    /// Omit timestamps so identical runs write identical bytes
    #[arg(long, global = true)]
    reproducible: bool,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Turn a meter CSV into feature and curve tables
    Ingest(IngestArgs),
    /// Draw a synthetic dataset from a known mixture
    Synth(SynthArgs),
    /// Sweep cluster counts and penalties into a model collection
    Fit(FitArgs),
    /// Calibrate the dimension penalty and pick a model
    Select(SelectArgs),
    /// Report cluster assignments and per-cluster tables
    Cluster(ClusterArgs),
    /// Compare day-ahead forecasts against a pooled regression
    Forecast(ForecastArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Meter readings CSV
    #[arg(long, value_name = "FILE")]
    meters: PathBuf,

    /// Input layout: wide (one row per day) or long (one row per reading)
    #[arg(long, default_value = "wide")]
    layout: String,

    /// Missing readings: strict (reject) or impute (fill isolated gaps)
    #[arg(long, default_value = "strict")]
    missing: String,

    /// Dataset variant: aggregate, individual, or mean-day
    #[arg(long, default_value = "aggregate")]
    variant: String,

    /// Preprocessing: 1 keeps smooth bands of centered curves, 2 keeps
    /// detail bands of raw curves
    #[arg(long, value_name = "1|2")]
    prep: Option<u8>,

    /// Regressor date for the individual variant (YYYY-MM-DD)
    #[arg(long, value_name = "DATE")]
    eve_date: Option<NaiveDate>,

    /// Regressor weekday for the mean-day variant (mon..sun)
    #[arg(long, value_name = "DAY")]
    weekday: Option<Weekday>,

    /// Output directory
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// Mixture parameters JSON (k, pi, beta, sigma2)
    #[arg(long, value_name = "FILE")]
    model: PathBuf,

    /// Rows to draw
    #[arg(long)]
    n: Option<usize>,

    /// Regressor law: standard, or resample to draw rows from --pool
    #[arg(long, default_value = "standard")]
    x_law: String,

    /// Feature file whose x rows feed the resample law
    #[arg(long, value_name = "FILE")]
    pool: Option<PathBuf>,

    #[arg(long)]
    seed: Option<u64>,

    /// Output directory
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    /// Feature table from ingest or synth
    #[arg(long, value_name = "FILE")]
    features: PathBuf,

    /// Cluster counts, as a comma list and/or lo..hi ranges (e.g. 1..4,6)
    #[arg(long, value_name = "SET")]
    k_set: Option<String>,

    /// Penalty levels per cluster count
    #[arg(long)]
    grid_size: Option<usize>,

    #[arg(long)]
    seed: Option<u64>,

    /// Random starts per grid cell
    #[arg(long)]
    n_starts: Option<usize>,

    #[arg(long)]
    max_iter: Option<usize>,

    /// Relative objective change that stops a fit
    #[arg(long)]
    tol: Option<f64>,

    /// Output directory
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct SelectArgs {
    /// Model collection from fit
    #[arg(long, value_name = "FILE")]
    collection: PathBuf,

    /// Resolution of the penalty-weight scan
    #[arg(long)]
    grid_points: Option<usize>,

    /// Runner-up models to keep
    #[arg(long)]
    shortlist: Option<usize>,

    /// Output directory
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct ClusterArgs {
    /// Feature table the model was fitted on
    #[arg(long, value_name = "FILE")]
    features: PathBuf,

    /// Model collection from fit
    #[arg(long, value_name = "FILE")]
    collection: PathBuf,

    /// Selection record from select; optional when --model-id is given
    #[arg(long, value_name = "FILE")]
    selection: Option<PathBuf>,

    /// Report this collection id instead of the selected one
    #[arg(long)]
    model_id: Option<usize>,

    /// Raw curve table; adds per-cluster mean profiles
    #[arg(long, value_name = "FILE")]
    curves: Option<PathBuf>,

    /// Output directory
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct ForecastArgs {
    /// Meter readings CSV
    #[arg(long, value_name = "FILE")]
    meters: PathBuf,

    #[arg(long, default_value = "wide")]
    layout: String,

    #[arg(long, default_value = "strict")]
    missing: String,

    /// Evening to forecast from: training uses the transition into this
    /// date, testing the transition out of it
    #[arg(long, value_name = "DATE")]
    eve_date: NaiveDate,

    #[arg(long, value_name = "1|2")]
    prep: Option<u8>,

    /// Model collection from fit
    #[arg(long, value_name = "FILE")]
    collection: PathBuf,

    /// Selection record from select; optional when --model-id is given
    #[arg(long, value_name = "FILE")]
    selection: Option<PathBuf>,

    #[arg(long)]
    model_id: Option<usize>,

    /// Re-infer test labels from the test transition instead of carrying
    /// the training ones
    #[arg(long)]
    relabel: bool,

    /// Output directory
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

/// key=value defaults, consulted when a flag was not given.
pub struct Defaults(std::collections::BTreeMap<String, String>);

impl Defaults {
    fn load(path: Option<&PathBuf>) -> Result<Self> {
        let mut map = std::collections::BTreeMap::new();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)?;
            for (i, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let Some((key, value)) = line.split_once('=') else {
                    return Err(Error::config(format!(
                        "{}:{}: expected key=value, got {line:?}",
                        path.display(),
                        i + 1
                    )));
                };
                map.insert(key.trim().to_string(), value.trim().to_string());
            }
        }
        Ok(Defaults(map))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse().map(Some).map_err(|_| {
                Error::config(format!("config key {key}: cannot parse {raw:?}"))
            }),
        }
    }

    /// Flag value if given, else config value, else the built-in default.
    pub fn resolve<T: FromStr>(&self, flag: Option<T>, key: &str, fallback: T) -> Result<T> {
        Ok(flag.or(self.get(key)?).unwrap_or(fallback))
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };

    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: cannot size the thread pool: {e}");
            std::process::exit(1);
        }
    }

    let defaults = match Defaults::load(cli.config.as_ref()) {
        Ok(d) => d,
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    };

    let reproducible = cli.reproducible;
    let outcome = match cli.cmd {
        Cmd::Ingest(args) => commands::ingest(args, &defaults, reproducible),
        Cmd::Synth(args) => commands::synth(args, &defaults, reproducible),
        Cmd::Fit(args) => commands::fit(args, &defaults),
        Cmd::Select(args) => commands::select(args, &defaults),
        Cmd::Cluster(args) => commands::cluster(args, &defaults),
        Cmd::Forecast(args) => commands::forecast(args, &defaults),
    };
    if let Err(e) = outcome {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
