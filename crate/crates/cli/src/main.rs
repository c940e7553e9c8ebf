use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use esd_core::error::Error;
use esd_core::experiments::{
    run_deepnet_to, run_fig1_to, run_fig2_to, run_linreg_to, run_rkhs_to, rerun_from_manifest, Fig1Config,
    Fig2Config, RunManifest,
};
use esd_core::deepnet::DeepnetConfig;
use esd_core::io::{fmt_f64, read_values, write_table, write_trace_csv, write_trace_summary_csv};
use esd_core::linreg::LinregConfig;
use esd_core::opgf::{opgf_run, OpgfConfig, Truth};
use esd_core::rkhs::RkhsConfig;
use esd_core::seqcore::{
    check_quota_schedule, esd, log_grid, profile_records, sort_spectrum, span_profile, QuotaReport, QuotaSequence,
    SignalVector,
};

#[derive(Debug, Parser)]
#[command(name = "esd", version, about = "Effective span dimension tools and experiment runners")]
struct Cli {
    /// JSON configuration for the subcommand; flags given on the command line win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// ESD of a signal with respect to a spectrum at one threshold.
    Esd {
        #[arg(long)]
        signal: Option<PathBuf>,
        #[arg(long)]
        spectrum: Option<PathBuf>,
        #[arg(long)]
        tau: Option<f64>,
    },
    /// ESD over a grid of thresholds.
    SpanProfile {
        #[arg(long)]
        signal: Option<PathBuf>,
        #[arg(long)]
        spectrum: Option<PathBuf>,
        /// Comma-separated thresholds.
        #[arg(long, value_delimiter = ',')]
        taus: Option<Vec<f64>>,
        /// Log-spaced grid `lo,hi,count` instead of explicit thresholds.
        #[arg(long, value_delimiter = ',')]
        log_grid: Option<Vec<f64>>,
    },
    /// Integrate the over-parameterized gradient flow on one observation vector.
    Opgf {
        #[arg(long)]
        obs: Option<PathBuf>,
        #[arg(long)]
        spectrum: Option<PathBuf>,
        /// True signal, for pathwise ESD and tuned-PC error.
        #[arg(long)]
        signal: Option<PathBuf>,
        #[arg(long)]
        sigma2: Option<f64>,
        #[arg(long, value_delimiter = ',')]
        times: Option<Vec<f64>>,
        #[arg(long)]
        depth: Option<u32>,
        #[arg(long)]
        b0: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
    },
    /// Span-profile evolution under the flow for several misalignment levels.
    Fig1,
    /// Mean ESD and tuned-PC error along the flow for several depths.
    Fig2,
    /// PCR risk against ESD on Gaussian designs.
    Linreg,
    /// Kernel principal component projection risk against ESD.
    Rkhs,
    /// Pathwise ESD of a deep linear network trained with Adam.
    Deepnet,
    /// Growth-regularity checks for a quota sequence.
    CheckQuota {
        /// Explicit values `K_1, K_2, ...` (CSV `value` column or JSON array).
        #[arg(long)]
        values: Option<PathBuf>,
        /// `K_n = ceil(n^a)`.
        #[arg(long)]
        power: Option<f64>,
        /// `K_n = ceil((ln n)^b)`.
        #[arg(long)]
        log_power: Option<f64>,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long)]
        n0: Option<usize>,
    },
    /// Repeat a run recorded in a manifest.
    Rerun {
        #[arg(long)]
        manifest: PathBuf,
    },
}

/// Failure with its process exit code.
struct Failure {
    code: u8,
    msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NumericalBlowup { .. } | Error::NumericalFailure(_) => 3,
            Error::Io(_) => 1,
            _ => 2,
        };
        Failure {
            code,
            msg: e.to_string(),
        }
    }
}

fn config_error(msg: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        msg: msg.into(),
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn load_config<C: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<C> {
    let Some(path) = path else {
        return Ok(C::default());
    };
    let text = fs::read_to_string(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))
}

fn load_values(path: &Path) -> CliResult<Vec<f64>> {
    read_values(path).map_err(|e| config_error(format!("{}: {e}", path.display())))
}

fn require<T>(v: Option<T>, what: &str) -> CliResult<T> {
    v.ok_or_else(|| config_error(format!("missing {what}")))
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct EsdJob {
    signal: Option<PathBuf>,
    spectrum: Option<PathBuf>,
    tau: Option<f64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ProfileJob {
    signal: Option<PathBuf>,
    spectrum: Option<PathBuf>,
    taus: Option<Vec<f64>>,
    log_grid: Option<Vec<f64>>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct OpgfJob {
    obs: Option<PathBuf>,
    spectrum: Option<PathBuf>,
    signal: Option<PathBuf>,
    sigma2: Option<f64>,
    times: Option<Vec<f64>>,
    flow: OpgfConfig,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct QuotaJob {
    values: Option<PathBuf>,
    power: Option<f64>,
    log_power: Option<f64>,
    horizon: usize,
    n0: usize,
}

impl Default for QuotaJob {
    fn default() -> Self {
        Self {
            values: None,
            power: None,
            log_power: None,
            horizon: 10_000,
            n0: 10,
        }
    }
}

fn set<T>(slot: &mut Option<T>, v: Option<T>) {
    if v.is_some() {
        *slot = v;
    }
}

fn load_pair(signal: Option<&PathBuf>, spectrum: Option<&PathBuf>) -> CliResult<(SignalVector, esd_core::SortedSpectrum)> {
    let signal = SignalVector::new(load_values(require(signal, "--signal")?)?)?;
    let spectrum = sort_spectrum(&load_values(require(spectrum, "--spectrum")?)?)?;
    Ok((signal, spectrum))
}

/// Small commands write into `--out` when given, otherwise print to stdout.
fn emit_table(cli: &Cli, id: &str, job: &impl Serialize, file: &str, header: &[&str], rows: Vec<Vec<String>>, json: String) -> CliResult<()> {
    match &cli.out {
        Some(dir) => {
            let start = Instant::now();
            fs::create_dir_all(dir).map_err(Error::from)?;
            let name = match cli.format {
                Format::Csv => {
                    write_table(&dir.join(format!("{file}.csv")), Some(esd_core::experiments::MANIFEST_FILE), header, rows)?;
                    format!("{file}.csv")
                }
                Format::Json => {
                    fs::write(dir.join(format!("{file}.json")), &json).map_err(Error::from)?;
                    format!("{file}.json")
                }
            };
            let mut m = RunManifest::new(id, job, cli.seed.unwrap_or(0))?;
            m.paths = vec![name];
            m.wall_clock_secs = start.elapsed().as_secs_f64();
            m.write(dir)?;
        }
        None => match cli.format {
            Format::Csv => {
                let bytes = esd_core::io::render_table(None, header, rows)?;
                print!("{}", String::from_utf8_lossy(&bytes));
            }
            Format::Json => println!("{json}"),
        },
    }
    Ok(())
}

fn run_esd(cli: &Cli, signal: &Option<PathBuf>, spectrum: &Option<PathBuf>, tau: Option<f64>) -> CliResult<()> {
    let mut job: EsdJob = load_config(cli.config.as_deref())?;
    set(&mut job.signal, signal.clone());
    set(&mut job.spectrum, spectrum.clone());
    set(&mut job.tau, tau);
    let (sig, spec) = load_pair(job.signal.as_ref(), job.spectrum.as_ref())?;
    let tau = require(job.tau, "--tau")?;
    let d = esd(&sig, &spec, tau)?;
    let rec = profile_records(&[tau], &[d]);
    let json = serde_json::to_string_pretty(&rec[0]).map_err(Error::from)?;
    emit_table(cli, "esd", &job, "esd", &["tau", "esd"], vec![vec![fmt_f64(tau), d.to_string()]], json)
}

fn run_profile(
    cli: &Cli,
    signal: &Option<PathBuf>,
    spectrum: &Option<PathBuf>,
    taus: &Option<Vec<f64>>,
    grid: &Option<Vec<f64>>,
) -> CliResult<()> {
    let mut job: ProfileJob = load_config(cli.config.as_deref())?;
    set(&mut job.signal, signal.clone());
    set(&mut job.spectrum, spectrum.clone());
    set(&mut job.taus, taus.clone());
    set(&mut job.log_grid, grid.clone());
    let (sig, spec) = load_pair(job.signal.as_ref(), job.spectrum.as_ref())?;
    let taus = match (&job.taus, &job.log_grid) {
        (Some(t), _) => t.clone(),
        (None, Some(g)) if g.len() == 3 && g[2] >= 1.0 && g[2].fract() == 0.0 => log_grid(g[0], g[1], g[2] as usize)?,
        (None, Some(_)) => return Err(config_error("--log-grid needs lo,hi,count")),
        (None, None) => return Err(config_error("missing --taus or --log-grid")),
    };
    let profile = span_profile(&sig, &spec, &taus)?;
    let recs = profile_records(&taus, &profile);
    let rows = recs.iter().map(|r| vec![fmt_f64(r.tau), r.esd.to_string()]).collect();
    let json = serde_json::to_string_pretty(&recs).map_err(Error::from)?;
    emit_table(cli, "span-profile", &job, "span_profile", &["tau", "esd"], rows, json)
}

#[allow(clippy::too_many_arguments)]
fn run_opgf(
    cli: &Cli,
    obs: &Option<PathBuf>,
    spectrum: &Option<PathBuf>,
    signal: &Option<PathBuf>,
    sigma2: Option<f64>,
    times: &Option<Vec<f64>>,
    depth: Option<u32>,
    b0: Option<f64>,
    dt: Option<f64>,
) -> CliResult<()> {
    let mut job: OpgfJob = load_config(cli.config.as_deref())?;
    set(&mut job.obs, obs.clone());
    set(&mut job.spectrum, spectrum.clone());
    set(&mut job.signal, signal.clone());
    set(&mut job.sigma2, sigma2);
    set(&mut job.times, times.clone());
    if let Some(d) = depth {
        job.flow.depth = d;
    }
    if let Some(b) = b0 {
        job.flow.b0 = b;
    }
    if let Some(h) = dt {
        job.flow.dt = h;
    }
    let z = load_values(require(job.obs.as_ref(), "--obs")?)?;
    let spec = sort_spectrum(&load_values(require(job.spectrum.as_ref(), "--spectrum")?)?)?;
    let times = job.times.clone().unwrap_or_else(|| vec![0.0, 10.0, 20.0, 40.0, 80.0]);
    let thetastar = match &job.signal {
        Some(p) => Some(SignalVector::new(load_values(p)?)?),
        None => None,
    };
    let truth = match (&thetastar, job.sigma2) {
        (Some(t), Some(s)) => Some(Truth {
            thetastar: t,
            sigma2: s,
        }),
        (None, None) => None,
        _ => return Err(config_error("--signal and --sigma2 go together")),
    };
    let trace = opgf_run(&spec, &z, &job.flow, &times, truth)?;
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("out/opgf"));
    let start = Instant::now();
    fs::create_dir_all(&dir).map_err(Error::from)?;
    let manifest = Some(esd_core::experiments::MANIFEST_FILE);
    let paths = match cli.format {
        Format::Csv => {
            write_trace_csv(&dir.join("opgf_trace.csv"), manifest, &trace)?;
            write_trace_summary_csv(&dir.join("opgf_summary.csv"), manifest, &trace)?;
            vec!["opgf_trace.csv".to_owned(), "opgf_summary.csv".to_owned()]
        }
        Format::Json => {
            fs::write(dir.join("opgf_trace.json"), serde_json::to_string_pretty(&trace).map_err(Error::from)?)
                .map_err(Error::from)?;
            vec!["opgf_trace.json".to_owned()]
        }
    };
    let mut m = RunManifest::new("opgf", &job, cli.seed.unwrap_or(0))?;
    m.paths = paths;
    m.wall_clock_secs = start.elapsed().as_secs_f64();
    m.write(&dir)?;
    println!("max conservation drift: a {:e}, b {:e}", trace.max_drift.a, trace.max_drift.b);
    Ok(())
}

fn quota_rows(r: &QuotaReport) -> Vec<Vec<String>> {
    let opt = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
    vec![vec![
        r.unit_step_ok.to_string(),
        r.ratio_monotone_ok.to_string(),
        opt(r.first_step_violation),
        opt(r.first_ratio_violation),
    ]]
}

fn run_quota(
    cli: &Cli,
    values: &Option<PathBuf>,
    power: Option<f64>,
    log_power: Option<f64>,
    horizon: Option<usize>,
    n0: Option<usize>,
) -> CliResult<()> {
    let mut job: QuotaJob = load_config(cli.config.as_deref())?;
    set(&mut job.values, values.clone());
    set(&mut job.power, power);
    set(&mut job.log_power, log_power);
    if let Some(h) = horizon {
        job.horizon = h;
    }
    if let Some(n) = n0 {
        job.n0 = n;
    }
    let quota = match (&job.values, job.power, job.log_power) {
        (Some(p), None, None) => {
            let v = load_values(p)?;
            if v.iter().any(|x| !(*x >= 0.0 && x.fract() == 0.0)) {
                return Err(config_error("quota values must be nonnegative integers"));
            }
            QuotaSequence::from_values(v.into_iter().map(|x| x as usize).collect())?
        }
        (None, Some(a), None) => QuotaSequence::power(a, job.horizon)?,
        (None, None, Some(b)) => QuotaSequence::log_power(b, job.horizon)?,
        _ => return Err(config_error("give exactly one of --values, --power, --log-power")),
    };
    let report = check_quota_schedule(&quota, job.n0);
    let json = serde_json::to_string_pretty(&report).map_err(Error::from)?;
    emit_table(
        cli,
        "check-quota",
        &job,
        "quota_report",
        &["unit_step_ok", "ratio_monotone_ok", "first_step_violation", "first_ratio_violation"],
        quota_rows(&report),
        json,
    )
}

fn out_dir(cli: &Cli, id: &str) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| Path::new("out").join(id))
}

fn report(m: &RunManifest, dir: &Path) {
    for p in &m.paths {
        println!("{}", dir.join(p).display());
    }
    println!("{}", dir.join(esd_core::experiments::MANIFEST_FILE).display());
}

fn run_experiment(cli: &Cli) -> CliResult<()> {
    let cfg_path = cli.config.as_deref();
    let (dir, m) = match &cli.cmd {
        Cmd::Fig1 => {
            let mut c: Fig1Config = load_config(cfg_path)?;
            if let Some(s) = cli.seed {
                c.base.seed = s;
            }
            let dir = out_dir(cli, "fig1");
            (dir.clone(), run_fig1_to(&c, &dir)?)
        }
        Cmd::Fig2 => {
            let mut c: Fig2Config = load_config(cfg_path)?;
            if let Some(s) = cli.seed {
                let len = c.seeds.len() as u64;
                c.seeds = (s..s + len).collect();
            }
            let dir = out_dir(cli, "fig2");
            (dir.clone(), run_fig2_to(&c, &dir)?)
        }
        Cmd::Linreg => {
            let mut c: LinregConfig = load_config(cfg_path)?;
            if let Some(s) = cli.seed {
                c.seed = s;
            }
            let dir = out_dir(cli, "linreg");
            (dir.clone(), run_linreg_to(&c, &dir)?)
        }
        Cmd::Rkhs => {
            let mut c: RkhsConfig = load_config(cfg_path)?;
            if let Some(s) = cli.seed {
                c.seed = s;
            }
            let dir = out_dir(cli, "rkhs");
            (dir.clone(), run_rkhs_to(&c, &dir)?)
        }
        Cmd::Deepnet => {
            let mut c: DeepnetConfig = load_config(cfg_path)?;
            if let Some(s) = cli.seed {
                c.seed = s;
            }
            c.validate()?;
            let dir = out_dir(cli, "deepnet");
            (dir.clone(), run_deepnet_to(&c, &dir)?)
        }
        Cmd::Rerun { manifest } => {
            let dir = cli
                .out
                .clone()
                .ok_or_else(|| config_error("rerun needs --out"))?;
            if !manifest.exists() {
                return Err(config_error(format!("{}: no such manifest", manifest.display())));
            }
            (dir.clone(), rerun_from_manifest(manifest, &dir)?)
        }
        _ => unreachable!("not an experiment"),
    };
    if cli.format == Format::Json {
        println!("{}", serde_json::to_string_pretty(&m).map_err(Error::from)?);
    } else {
        report(&m, &dir);
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> CliResult<()> {
    match &cli.cmd {
        Cmd::Esd { signal, spectrum, tau } => run_esd(cli, signal, spectrum, *tau),
        Cmd::SpanProfile {
            signal,
            spectrum,
            taus,
            log_grid,
        } => run_profile(cli, signal, spectrum, taus, log_grid),
        Cmd::Opgf {
            obs,
            spectrum,
            signal,
            sigma2,
            times,
            depth,
            b0,
            dt,
        } => run_opgf(cli, obs, spectrum, signal, *sigma2, times, *depth, *b0, *dt),
        Cmd::CheckQuota {
            values,
            power,
            log_power,
            horizon,
            n0,
        } => run_quota(cli, values, *power, *log_power, *horizon, *n0),
        _ => run_experiment(cli),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
