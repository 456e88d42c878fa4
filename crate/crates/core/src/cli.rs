//! Command-line front end.
//!
//! Exit codes: 0 on success (and for `member`, when the point is in the
//! set), 1 when `member` rejects the point, 2 for usage or configuration
//! errors, 3 for numerical failures.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::calibrate::{
    bonferroni_quantile, bootstrap_quantile, default_bootstrap_draws, sidak_quantile,
    QuantileMethod, QuantileValue,
};
use crate::confset::{
    calibrate_lin, calibrate_reclin, calibrate_wald, CalibratedSet, Variant, WaldOracle,
};
use crate::error::{Error, Result};
use crate::estimating::RegressionSample;
use crate::numlin::Mat;
use crate::simharness::{
    run_concentration, run_coverage, run_hausdorff_similarity, run_width_scaling, write_csv_rows,
    write_json, ConcentrationConfig, CoverageConfig, HausdorffConfig, WidthConfig,
};
use crate::statistic::CorrelationMatrix;

pub const EXIT_OK: i32 = 0;
pub const EXIT_NOT_MEMBER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "selfnorm",
    version,
    about = "Self-normalized confidence sets for regression"
)]
pub struct Cli {
    /// Overrides the seed in any config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Print resolved configuration and progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Calibrate a confidence set from a CSV dataset.
    Calibrate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Test whether a parameter vector lies in a calibrated set.
    Member {
        #[arg(long)]
        set: PathBuf,
        /// CSV holding the candidate parameter, as one row or one column.
        #[arg(long)]
        beta: PathBuf,
    },
    /// Print a critical value for the max statistic.
    Quantile {
        #[arg(long, value_enum)]
        method: MethodArg,
        #[arg(long)]
        alpha: f64,
        /// Dimension; taken from the correlation matrix when one is given.
        #[arg(long)]
        p: Option<usize>,
        /// Correlation matrix CSV for the bootstrap.
        #[arg(long, conflicts_with = "set")]
        gamma: Option<PathBuf>,
        /// Calibrated set whose plug-in correlation feeds the bootstrap.
        #[arg(long)]
        set: Option<PathBuf>,
        /// Bootstrap draws.
        #[arg(long = "draws", visible_alias = "B")]
        draws: Option<usize>,
    },
    /// Run a Monte Carlo coverage experiment.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a scaling diagnostic.
    Diag {
        #[arg(long, value_enum)]
        kind: DiagKind,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum MethodArg {
    Bonferroni,
    Sidak,
    Bootstrap,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum DiagKind {
    Width,
    Concentration,
    Hausdorff,
}

/// Configuration of the `calibrate` subcommand.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CalibrateConfig {
    /// CSV with columns `x1..xp` and `y`; relative paths resolve against the
    /// config file's directory.
    pub data: PathBuf,
    pub variant: Variant,
    pub alpha: f64,
    #[serde(default)]
    pub draws: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    /// Critical value for Wald sets.
    #[serde(default = "sidak")]
    pub wald_quantile: QuantileMethod,
    /// Population `Σ` and `V(β*)` for `wald_oracle`.
    #[serde(default)]
    pub oracle: Option<WaldOracle>,
}

fn sidak() -> QuantileMethod {
    QuantileMethod::Sidak
}

/// A failure tagged with the stage it happened in.
struct Failure {
    stage: &'static str,
    error: Error,
}

trait Stage<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, Failure>;
}

impl<T> Stage<T> for Result<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, Failure> {
        self.map_err(|error| Failure { stage, error })
    }
}

type CmdResult = std::result::Result<i32, Failure>;

/// Parses arguments and runs the chosen subcommand, returning the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match dispatch(&cli) {
        Ok(code) => code,
        Err(Failure { stage, error }) => {
            eprintln!("error during {stage}: {error}");
            if error.is_numerical() {
                EXIT_NUMERICAL
            } else {
                EXIT_CONFIG
            }
        }
    }
}

fn dispatch(cli: &Cli) -> CmdResult {
    match &cli.command {
        Command::Calibrate { config, out } => cmd_calibrate(cli, config, out),
        Command::Member { set, beta } => cmd_member(set, beta),
        Command::Quantile {
            method,
            alpha,
            p,
            gamma,
            set,
            draws,
        } => cmd_quantile(
            cli,
            *method,
            *alpha,
            *p,
            gamma.as_deref(),
            set.as_deref(),
            *draws,
        ),
        Command::Simulate { config, out } => cmd_simulate(cli, config, out),
        Command::Diag { kind, config, out } => cmd_diag(cli, *kind, config, out),
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn echo<T: Serialize>(cli: &Cli, config: &T) {
    if cli.verbose {
        if let Ok(s) = serde_json::to_string_pretty(config) {
            eprintln!("resolved config:\n{s}");
        }
    }
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.6}")).collect();
    format!("[{}]", parts.join(", "))
}

fn cmd_calibrate(cli: &Cli, config_path: &Path, out: &Path) -> CmdResult {
    let mut cfg: CalibrateConfig = read_json(config_path).stage("reading config")?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if cfg.data.is_relative() {
        if let Some(dir) = config_path.parent() {
            cfg.data = dir.join(&cfg.data);
        }
    }
    let sample = RegressionSample::from_csv_path(&cfg.data).stage("reading data")?;
    let draws = cfg
        .draws
        .unwrap_or_else(|| default_bootstrap_draws(sample.n().div_ceil(2)));
    if matches!(cfg.variant, Variant::Lin | Variant::RecLin) {
        cfg.draws = Some(draws);
    }
    echo(cli, &cfg);
    let wald_k = || match cfg.wald_quantile {
        QuantileMethod::Bonferroni => bonferroni_quantile(cfg.alpha, sample.p()),
        QuantileMethod::Sidak => sidak_quantile(cfg.alpha, sample.p()),
        QuantileMethod::Bootstrap => Err(Error::InvalidInput(
            "wald sets take a bonferroni or sidak critical value".into(),
        )),
    };
    let set = match cfg.variant {
        Variant::Lin => calibrate_lin(&sample, cfg.alpha, draws, cfg.seed),
        Variant::RecLin => calibrate_reclin(&sample, cfg.alpha, draws, cfg.seed),
        Variant::Wald => wald_k().and_then(|k| calibrate_wald(&sample, k, None)),
        Variant::WaldOracle => match &cfg.oracle {
            None => Err(Error::InvalidInput(
                "wald_oracle needs an oracle section".into(),
            )),
            Some(o) => wald_k().and_then(|k| calibrate_wald(&sample, k, Some(o))),
        },
    }
    .stage("calibration")?;
    let mut set = set;
    set.config = serde_json::to_value(&cfg).ok();
    let json = set.to_json().stage("writing set")?;
    fs::write(out, json + "\n")
        .map_err(|e| Error::io(out, e))
        .stage("writing set")?;
    println!("variant: {}", set.variant.name());
    println!("khat: {:.6}", set.khat_value());
    if let Some(b) = &set.pilot_beta {
        println!("pilot_beta: {}", fmt_vec(b));
    }
    if let Some(c) = &set.wald_center {
        println!("center: {}", fmt_vec(c));
    }
    Ok(EXIT_OK)
}

/// Reads every number in a CSV, skipping one leading header row.
fn read_numbers(path: &Path) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::InvalidInput(format!("{}: {other:?}", path.display())),
        })?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parsed: std::result::Result<Vec<f64>, _> = rec
            .iter()
            .filter(|f| !f.is_empty())
            .map(str::parse::<f64>)
            .collect();
        match parsed {
            Ok(v) if !v.is_empty() => rows.push(v),
            Ok(_) => {}
            Err(_) if i == 0 => {}
            Err(_) => {
                return Err(Error::InvalidInput(format!(
                    "{}: row {} is not numeric",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    Ok(rows.into_iter().flatten().collect())
}

fn read_matrix(path: &Path) -> Result<Mat> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        match rec
            .iter()
            .map(str::parse::<f64>)
            .collect::<std::result::Result<Vec<_>, _>>()
        {
            Ok(v) => rows.push(v),
            Err(_) if i == 0 => {}
            Err(_) => {
                return Err(Error::InvalidInput(format!(
                    "{}: row {} is not numeric",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    Mat::from_rows(rows)
}

fn cmd_member(set_path: &Path, beta_path: &Path) -> CmdResult {
    let text = fs::read_to_string(set_path)
        .map_err(|e| Error::io(set_path, e))
        .stage("reading set")?;
    let set = CalibratedSet::from_json(&text).stage("reading set")?;
    let beta = read_numbers(beta_path).stage("reading beta")?;
    if beta.len() != set.dim() {
        return Err(Failure {
            stage: "reading beta",
            error: Error::dims(format!("parameter of length {}", set.dim()), beta.len()),
        });
    }
    let stat = set.statistic(&beta).stage("membership")?;
    let member = set.member(&beta).stage("membership")?;
    println!("member: {member}");
    println!("statistic: {stat:.6}");
    println!("khat: {:.6}", set.khat_value());
    Ok(if member { EXIT_OK } else { EXIT_NOT_MEMBER })
}

#[allow(clippy::too_many_arguments)]
fn cmd_quantile(
    cli: &Cli,
    method: MethodArg,
    alpha: f64,
    p: Option<usize>,
    gamma: Option<&Path>,
    set: Option<&Path>,
    draws: Option<usize>,
) -> CmdResult {
    let need_p = || {
        p.ok_or_else(|| Error::InvalidInput("--p is required for this method".into()))
            .stage("arguments")
    };
    let value: QuantileValue = match method {
        MethodArg::Bonferroni => bonferroni_quantile(alpha, need_p()?).stage("quantile")?,
        MethodArg::Sidak => sidak_quantile(alpha, need_p()?).stage("quantile")?,
        MethodArg::Bootstrap => {
            let corr = match (gamma, set) {
                (Some(g), _) => {
                    let m = read_matrix(g).stage("reading gamma")?;
                    CorrelationMatrix::from_mat(m).stage("reading gamma")?
                }
                (None, Some(s)) => {
                    let text = fs::read_to_string(s)
                        .map_err(|e| Error::io(s, e))
                        .stage("reading set")?;
                    let set = CalibratedSet::from_json(&text).stage("reading set")?;
                    set.correlation().stage("plug-in correlation")?
                }
                (None, None) => {
                    return Err(Failure {
                        stage: "arguments",
                        error: Error::InvalidInput("bootstrap needs --gamma or --set".into()),
                    })
                }
            };
            if let Some(p) = p {
                if p != corr.dim() {
                    return Err(Failure {
                        stage: "arguments",
                        error: Error::dims(p, corr.dim()),
                    });
                }
            }
            let b = draws.unwrap_or_else(|| default_bootstrap_draws(0));
            bootstrap_quantile(&corr, alpha, b, cli.seed.unwrap_or(0)).stage("bootstrap")?
        }
    };
    println!("method: {}", method_name(value.method));
    println!("alpha: {alpha}");
    if let Some(p) = p {
        println!("p: {p}");
    }
    println!("khat: {:.6}", value.khat);
    if let (Some(b), Some(s)) = (value.draws, value.seed) {
        println!("draws: {b}");
        println!("seed: {s}");
    }
    if let (MethodArg::Bonferroni | MethodArg::Sidak, Some(p)) = (method, p) {
        let s = sidak_quantile(alpha, p).stage("quantile")?.khat;
        let b = bonferroni_quantile(alpha, p).stage("quantile")?.khat;
        println!("sidak_le_bonferroni: {}", s <= b);
    }
    Ok(EXIT_OK)
}

fn method_name(m: QuantileMethod) -> &'static str {
    match m {
        QuantileMethod::Bonferroni => "bonferroni",
        QuantileMethod::Sidak => "sidak",
        QuantileMethod::Bootstrap => "bootstrap",
    }
}

fn prepare_out(out: &Path) -> std::result::Result<(), Failure> {
    fs::create_dir_all(out)
        .map_err(|e| Error::io(out, e))
        .stage("creating output directory")
}

fn cmd_simulate(cli: &Cli, config: &Path, out: &Path) -> CmdResult {
    let mut cfg: CoverageConfig = read_json(config).stage("reading config")?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    echo(cli, &cfg);
    prepare_out(out)?;
    let report = run_coverage(&cfg).stage("simulation")?;
    write_csv_rows(&out.join("replications.csv"), &report.records).stage("writing results")?;
    write_json(&out.join("summary.json"), &report).stage("writing results")?;
    for m in &report.methods {
        println!(
            "{}: coverage {} over {} replications ({} failed)",
            m.method.name(),
            m.coverage.map_or("n/a".to_string(), |c| format!("{c:.4}")),
            m.hits + m.misses,
            m.failures
        );
    }
    Ok(EXIT_OK)
}

fn cmd_diag(cli: &Cli, kind: DiagKind, config: &Path, out: &Path) -> CmdResult {
    let csv = out.join("grid.csv");
    let summary = out.join("summary.json");
    match kind {
        DiagKind::Width => {
            let mut cfg: WidthConfig = read_json(config).stage("reading config")?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            echo(cli, &cfg);
            prepare_out(out)?;
            let r = run_width_scaling(&cfg).stage("width diagnostic")?;
            write_csv_rows(&csv, &r.rows).stage("writing results")?;
            write_json(&summary, &r).stage("writing results")?;
            for row in &r.rows {
                println!(
                    "n={} median_diam2={:?} ratio={:?}",
                    row.n, row.median_diam2, row.ratio
                );
            }
        }
        DiagKind::Concentration => {
            let mut cfg: ConcentrationConfig = read_json(config).stage("reading config")?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            echo(cli, &cfg);
            prepare_out(out)?;
            let r = run_concentration(&cfg).stage("concentration diagnostic")?;
            write_csv_rows(&csv, &r.rows).stage("writing results")?;
            write_json(&summary, &r).stage("writing results")?;
            for row in &r.rows {
                println!(
                    "n={} median_deviation={:?} ratio={:?}",
                    row.n, row.median_deviation, row.ratio
                );
            }
        }
        DiagKind::Hausdorff => {
            let mut cfg: HausdorffConfig = read_json(config).stage("reading config")?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            echo(cli, &cfg);
            prepare_out(out)?;
            let r = run_hausdorff_similarity(&cfg).stage("hausdorff diagnostic")?;
            write_csv_rows(&csv, &r.rows).stage("writing results")?;
            write_json(&summary, &r).stage("writing results")?;
            for row in &r.rows {
                println!(
                    "n={} median_d2={:?} ratio={:?}",
                    row.n, row.median_d2, row.ratio
                );
            }
        }
    }
    Ok(EXIT_OK)
}
