//! Experiment configurations, the misalignment generator and the OP-GF
//! figure runners, plus the run manifest shared by all runners.

use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::deepnet::{save_checkpoint, train_deepnet, DeepnetConfig, DeepnetSnapshot};
use crate::error::{invalid, Result};
use crate::io::{fmt_f64, write_table};
use crate::linreg::{linreg_experiment, LinregConfig, LinregRow};
use crate::opgf::{opgf_run, Integrator, OpgfConfig, Truth};
use crate::rkhs::{rkhs_experiment, BasisRegistry, RkhsConfig};
use crate::rng::CounterRng;
use crate::seqcore::{log_grid, sort_spectrum, SeqInstance, SignalVector, TradeoffCurve};
use crate::stats;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST_FILE: &str = "manifest.json";

/// Record of one runner invocation, written next to its CSV outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub id: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub version: String,
    pub paths: Vec<String>,
    pub wall_clock_secs: f64,
}

impl RunManifest {
    pub fn new<C: Serialize>(id: &str, config: &C, seed: u64) -> Result<Self> {
        Ok(Self {
            id: id.to_owned(),
            config: serde_json::to_value(config)?,
            seed,
            version: VERSION.to_owned(),
            paths: Vec::new(),
            wall_clock_secs: 0.0,
        })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// Recover the typed configuration stored in the manifest.
    pub fn config_as<C: for<'de> Deserialize<'de>>(&self) -> Result<C> {
        Ok(serde_json::from_value(self.config.clone())?)
    }
}

// ---------------------------------------------------------------------------
// Misalignment generator
// ---------------------------------------------------------------------------

/// Sequence model with `lambda_j = j^-gamma` and `J` nonzero coefficients
/// `C j^{-(p+1)/2}` placed at indices `round(j^q)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MisalignConfig {
    pub d: usize,
    #[serde(rename = "J")]
    pub nonzero: usize,
    pub q: f64,
    pub p: f64,
    pub gamma: f64,
    #[serde(rename = "C")]
    pub amplitude: f64,
    pub n: f64,
    pub sigma0: f64,
    pub seed: u64,
}

impl Default for MisalignConfig {
    fn default() -> Self {
        Self {
            d: 5000,
            nonzero: 15,
            q: 1.0,
            p: 2.5,
            gamma: 1.0,
            amplitude: 1.0,
            n: 1e4,
            sigma0: 1.0,
            seed: 0,
        }
    }
}

impl MisalignConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.q >= 1.0 && self.q.is_finite()) {
            return invalid(format!("q = {} must be >= 1", self.q));
        }
        if self.nonzero < 1 {
            return invalid("J must be >= 1");
        }
        let last = (self.nonzero as f64).powf(self.q).ceil();
        if (self.d as f64) < last {
            return invalid(format!(
                "d = {} is smaller than J^q = {last}; the support does not fit",
                self.d
            ));
        }
        for (name, v) in [
            ("p", self.p),
            ("gamma", self.gamma),
            ("n", self.n),
            ("sigma0", self.sigma0),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return invalid(format!("{name} = {v} must be > 0"));
            }
        }
        if !self.amplitude.is_finite() {
            return invalid("C must be finite");
        }
        Ok(())
    }

    pub fn noise_var(&self) -> f64 {
        self.sigma0 * self.sigma0 / self.n
    }

    /// 0-based support index of the `j`-th (1-based) coefficient.
    pub fn support_index(&self, j: usize) -> usize {
        ((j as f64).powf(self.q).round() as usize).max(1) - 1
    }
}

pub fn misaligned_signal(cfg: &MisalignConfig) -> Result<SignalVector> {
    cfg.validate()?;
    let mut theta = vec![0.0; cfg.d];
    let mut filled = vec![false; cfg.d];
    for j in 1..=cfg.nonzero {
        let idx = cfg.support_index(j);
        // Collisions keep the earlier (larger) coefficient.
        if !filled[idx] {
            theta[idx] = cfg.amplitude * (j as f64).powf(-(cfg.p + 1.0) / 2.0);
            filled[idx] = true;
        }
    }
    SignalVector::new(theta)
}

/// Misaligned instance with observations `z_i ~ N(theta_i, sigma0^2 / n)`.
pub fn gen_misaligned(cfg: &MisalignConfig) -> Result<SeqInstance> {
    let signal = misaligned_signal(cfg)?;
    let lambda: Vec<f64> = (1..=cfg.d).map(|j| (j as f64).powf(-cfg.gamma)).collect();
    let spectrum = sort_spectrum(&lambda)?;
    let sd = cfg.noise_var().sqrt();
    let mut xi = vec![0.0; cfg.d];
    CounterRng::new(cfg.seed)
        .domain("misalign-noise")
        .fill_normal(0, 0, &mut xi);
    let z = signal
        .as_slice()
        .iter()
        .zip(&xi)
        .map(|(t, e)| t + sd * e)
        .collect();
    SeqInstance::new(signal, spectrum, cfg.noise_var())?.with_obs(z)
}

/// Log-spaced noise levels on `[lo_factor * sigma0^2 / n, ||theta||^2]`.
pub fn profile_tau_grid(cfg: &MisalignConfig, signal: &SignalVector, n_tau: usize, lo_factor: f64) -> Result<Vec<f64>> {
    let lo = cfg.noise_var() * lo_factor;
    let hi = signal.norm_sq().max(lo);
    log_grid(lo, hi, n_tau)
}

// ---------------------------------------------------------------------------
// Span-profile evolution
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Fig1Config {
    pub base: MisalignConfig,
    pub qs: Vec<f64>,
    pub times: Vec<f64>,
    pub dt: f64,
    pub integrator: Integrator,
    pub n_tau: usize,
    pub tau_lo_factor: f64,
}

impl Default for Fig1Config {
    fn default() -> Self {
        Self {
            base: MisalignConfig::default(),
            qs: vec![1.0, 1.5, 2.0, 3.0],
            times: vec![0.0, 10.0, 20.0, 40.0, 80.0],
            dt: 1e-2,
            integrator: Integrator::Rk4,
            n_tau: 40,
            tau_lo_factor: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig1Panel {
    pub q: f64,
    pub taus: Vec<f64>,
    pub times: Vec<f64>,
    /// `profiles[i][k]` is the ESD at `times[i]` and `taus[k]`.
    pub profiles: Vec<Vec<usize>>,
    pub drift_a: f64,
    pub drift_b: f64,
}

impl Fig1Panel {
    /// Sum over the grid of the ESD drop from the first to the last snapshot.
    pub fn total_decrease(&self) -> i64 {
        let first = &self.profiles[0];
        let last = self.profiles.last().expect("at least one snapshot");
        first
            .iter()
            .zip(last)
            .map(|(&a, &b)| a as i64 - b as i64)
            .sum()
    }

    /// Largest absolute change between the first profile and any later one.
    pub fn max_abs_change(&self) -> usize {
        let first = &self.profiles[0];
        self.profiles
            .iter()
            .flat_map(|p| p.iter().zip(first).map(|(&a, &b)| a.abs_diff(b)))
            .max()
            .unwrap_or(0)
    }

    /// Last profile pointwise <= first profile, with a strict drop somewhere.
    pub fn shifts_down(&self) -> bool {
        let first = &self.profiles[0];
        let last = self.profiles.last().expect("at least one snapshot");
        first.iter().zip(last).all(|(a, b)| b <= a) && first.iter().zip(last).any(|(a, b)| b < a)
    }
}

pub fn run_fig1(cfg: &Fig1Config) -> Result<Vec<Fig1Panel>> {
    if cfg.qs.is_empty() || cfg.times.is_empty() {
        return invalid("fig1 needs at least one q and one snapshot time");
    }
    cfg.qs
        .iter()
        .map(|&q| {
            let mc = MisalignConfig { q, ..cfg.base };
            let inst = gen_misaligned(&mc)?;
            let taus = profile_tau_grid(&mc, inst.signal(), cfg.n_tau, cfg.tau_lo_factor)?;
            let ocfg = OpgfConfig {
                depth: 0,
                b0: 1.0,
                dt: cfg.dt,
                integrator: cfg.integrator,
                ..OpgfConfig::default()
            };
            let trace = opgf_run(inst.spectrum(), inst.require_obs()?, &ocfg, &cfg.times, None)?;
            let profiles = trace
                .snapshots
                .iter()
                .map(|s| {
                    let spec = sort_spectrum(&s.lambda_tilde)?;
                    let curve = TradeoffCurve::new(inst.signal(), &spec)?;
                    taus.iter().map(|&t| curve.esd(t)).collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Fig1Panel {
                q,
                taus,
                times: trace.times(),
                profiles,
                drift_a: trace.max_drift.a,
                drift_b: trace.max_drift.b,
            })
        })
        .collect()
}

pub const FIG1_HEADER: [&str; 4] = ["q", "t", "tau", "esd"];

pub fn fig1_rows(panels: &[Fig1Panel]) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for p in panels {
        for (t, prof) in p.times.iter().zip(&p.profiles) {
            for (tau, esd) in p.taus.iter().zip(prof) {
                rows.push(vec![fmt_f64(p.q), fmt_f64(*t), fmt_f64(*tau), esd.to_string()]);
            }
        }
    }
    rows
}

// ---------------------------------------------------------------------------
// ESD and tuned-PC error versus depth
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Fig2Config {
    pub base: MisalignConfig,
    pub depths: Vec<u32>,
    /// Initialization scale for the depth factors (ignored for `D = 0`).
    pub b0: f64,
    pub seeds: Vec<u64>,
    pub times: Vec<f64>,
    pub dt: f64,
    pub integrator: Integrator,
}

impl Default for Fig2Config {
    fn default() -> Self {
        Self {
            base: MisalignConfig {
                q: 2.0,
                ..MisalignConfig::default()
            },
            depths: vec![0, 1, 3],
            b0: 0.5,
            seeds: (0..20).collect(),
            times: fig2_default_times(),
            dt: 5e-2,
            integrator: Integrator::Rk4,
        }
    }
}

pub fn fig2_default_times() -> Vec<f64> {
    let mut t = vec![0.0];
    t.extend(log_grid(1.0, 200.0, 20).expect("valid grid"));
    t
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig2Row {
    pub depth: u32,
    pub t: f64,
    pub esd_mean: f64,
    pub esd_sd: f64,
    pub err_mean: f64,
    pub err_sd: f64,
}

pub fn run_fig2(cfg: &Fig2Config) -> Result<Vec<Fig2Row>> {
    if cfg.base.q <= 1.0 {
        return invalid("fig2 needs a misaligned configuration (q > 1)");
    }
    if cfg.seeds.len() < 2 || cfg.depths.is_empty() {
        return invalid("fig2 needs at least two seeds and one depth");
    }
    let nt = cfg.times.len();
    let mut rows = Vec::new();
    for &depth in &cfg.depths {
        let mut esd = vec![Vec::with_capacity(cfg.seeds.len()); nt];
        let mut err = vec![Vec::with_capacity(cfg.seeds.len()); nt];
        for &seed in &cfg.seeds {
            let inst = gen_misaligned(&MisalignConfig { seed, ..cfg.base })?;
            let ocfg = OpgfConfig {
                depth,
                b0: cfg.b0,
                dt: cfg.dt,
                integrator: cfg.integrator,
                ..OpgfConfig::default()
            };
            let truth = Truth {
                thetastar: inst.signal(),
                sigma2: inst.noise_var(),
            };
            let trace = opgf_run(
                inst.spectrum(),
                inst.require_obs()?,
                &ocfg,
                &cfg.times,
                Some(truth),
            )?;
            for (i, s) in trace.snapshots.iter().enumerate() {
                esd[i].push(s.esd.expect("truth supplied") as f64);
                err[i].push(s.tuned_pc_sq_error.expect("truth supplied"));
            }
        }
        for i in 0..nt {
            rows.push(Fig2Row {
                depth,
                t: cfg.times[i],
                esd_mean: stats::mean(&esd[i]),
                esd_sd: stats::sample_sd(&esd[i]),
                err_mean: stats::mean(&err[i]),
                err_sd: stats::sample_sd(&err[i]),
            });
        }
    }
    Ok(rows)
}

pub const FIG2_HEADER: [&str; 6] = ["D", "t", "esd_mean", "esd_sd", "err_mean", "err_sd"];

pub fn fig2_rows(rows: &[Fig2Row]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|r| {
            vec![
                r.depth.to_string(),
                fmt_f64(r.t),
                fmt_f64(r.esd_mean),
                fmt_f64(r.esd_sd),
                fmt_f64(r.err_mean),
                fmt_f64(r.err_sd),
            ]
        })
        .collect()
}

/// Trend summary of one depth's curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig2Trend {
    pub depth: u32,
    pub esd_start: f64,
    pub esd_end: f64,
    pub err_start: f64,
    pub err_end: f64,
    /// First snapshot time with mean ESD below its initial value.
    pub first_decrease: Option<f64>,
}

pub fn fig2_trends(rows: &[Fig2Row]) -> Vec<Fig2Trend> {
    let mut depths: Vec<u32> = rows.iter().map(|r| r.depth).collect();
    depths.dedup();
    depths
        .into_iter()
        .map(|d| {
            let rs: Vec<&Fig2Row> = rows.iter().filter(|r| r.depth == d).collect();
            let (first, last) = (rs[0], rs[rs.len() - 1]);
            Fig2Trend {
                depth: d,
                esd_start: first.esd_mean,
                esd_end: last.esd_mean,
                err_start: first.err_mean,
                err_end: last.err_mean,
                first_decrease: rs.iter().find(|r| r.esd_mean < first.esd_mean).map(|r| r.t),
            }
        })
        .collect()
}

/// Write rows to `dir/<name>` with the manifest comment line.
pub fn write_runner_csv(dir: &Path, name: &str, header: &[&str], rows: Vec<Vec<String>>) -> Result<String> {
    write_table(&dir.join(name), Some(MANIFEST_FILE), header, rows)?;
    Ok(name.to_owned())
}

// ---------------------------------------------------------------------------
// Runners: compute, write CSVs and a manifest into an output directory
// ---------------------------------------------------------------------------

pub const RUNNER_IDS: [&str; 5] = ["fig1", "fig2", "linreg", "rkhs", "deepnet"];

fn finish<C: Serialize>(
    id: &str,
    cfg: &C,
    seed: u64,
    dir: &Path,
    start: Instant,
    paths: Vec<String>,
) -> Result<RunManifest> {
    let mut m = RunManifest::new(id, cfg, seed)?;
    m.paths = paths;
    m.wall_clock_secs = start.elapsed().as_secs_f64();
    m.write(dir)?;
    Ok(m)
}

fn bool_str(b: bool) -> String {
    b.to_string()
}

pub fn run_fig1_to(cfg: &Fig1Config, dir: &Path) -> Result<RunManifest> {
    let start = Instant::now();
    fs::create_dir_all(dir)?;
    let panels = run_fig1(cfg)?;
    let mut paths = vec![write_runner_csv(dir, "fig1.csv", &FIG1_HEADER, fig1_rows(&panels))?];
    let report = panels.iter().map(|p| {
        vec![
            fmt_f64(p.q),
            p.total_decrease().to_string(),
            p.max_abs_change().to_string(),
            bool_str(p.shifts_down()),
            fmt_f64(p.drift_a),
            fmt_f64(p.drift_b),
        ]
    });
    paths.push(write_runner_csv(
        dir,
        "fig1_report.csv",
        &["q", "total_decrease", "max_abs_change", "shifts_down", "drift_a", "drift_b"],
        report.collect(),
    )?);
    finish("fig1", cfg, cfg.base.seed, dir, start, paths)
}

pub fn run_fig2_to(cfg: &Fig2Config, dir: &Path) -> Result<RunManifest> {
    let start = Instant::now();
    fs::create_dir_all(dir)?;
    let rows = run_fig2(cfg)?;
    let mut paths = vec![write_runner_csv(dir, "fig2.csv", &FIG2_HEADER, fig2_rows(&rows))?];
    let trends = fig2_trends(&rows).into_iter().map(|t| {
        vec![
            t.depth.to_string(),
            fmt_f64(t.esd_start),
            fmt_f64(t.esd_end),
            fmt_f64(t.err_start),
            fmt_f64(t.err_end),
            t.first_decrease.map(fmt_f64).unwrap_or_default(),
        ]
    });
    paths.push(write_runner_csv(
        dir,
        "fig2_trends.csv",
        &["D", "esd_start", "esd_end", "err_start", "err_end", "first_decrease"],
        trends.collect(),
    )?);
    let seed = cfg.seeds.first().copied().unwrap_or(0);
    finish("fig2", cfg, seed, dir, start, paths)
}

pub const LINREG_HEADER: [&str; 12] = [
    "alpha",
    "esd",
    "risk_mean",
    "risk_stderr",
    "k_mc",
    "risk_at_kstar_mean",
    "risk_at_kstar_stderr",
    "k_star",
    "analytic_risk",
    "lower_env",
    "upper_env",
    "seed",
];

pub fn linreg_rows(cfg: &LinregConfig, rows: &[LinregRow]) -> Vec<Vec<String>> {
    let unit = cfg.sigma0 * cfg.sigma0 / cfg.n as f64;
    rows.iter()
        .map(|r| {
            vec![
                fmt_f64(r.alpha),
                r.esd.to_string(),
                fmt_f64(r.risk_mean),
                fmt_f64(r.risk_stderr),
                r.k_mc.to_string(),
                fmt_f64(r.risk_at_kstar_mean),
                fmt_f64(r.risk_at_kstar_stderr),
                r.k_star.to_string(),
                fmt_f64(r.analytic_risk),
                fmt_f64((r.esd as f64 - 1.0) * unit),
                fmt_f64(2.0 * r.esd as f64 * unit),
                cfg.seed.to_string(),
            ]
        })
        .collect()
}

/// One `linreg_<case>.csv` per spectrum case.
pub fn run_linreg_to(cfg: &LinregConfig, dir: &Path) -> Result<RunManifest> {
    let start = Instant::now();
    fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    for &case in &cfg.cases {
        let rows = linreg_experiment(cfg, case)?;
        let name = format!("linreg_{}.csv", case.name());
        paths.push(write_runner_csv(dir, &name, &LINREG_HEADER, linreg_rows(cfg, &rows))?);
    }
    finish("linreg", cfg, cfg.seed, dir, start, paths)
}

pub const RKHS_HEADER: [&str; 7] = ["alpha", "esd", "risk_mean", "risk_stderr", "lower_env", "upper_env", "seed"];

pub fn run_rkhs_to(cfg: &RkhsConfig, dir: &Path) -> Result<RunManifest> {
    let start = Instant::now();
    fs::create_dir_all(dir)?;
    let summary = rkhs_experiment(cfg, &BasisRegistry::default())?;
    let rows = summary.rows.iter().map(|r| {
        vec![
            fmt_f64(r.alpha),
            r.esd.to_string(),
            fmt_f64(r.risk_mean),
            fmt_f64(r.risk_stderr),
            fmt_f64(r.lower_env),
            fmt_f64(r.upper_env),
            cfg.seed.to_string(),
        ]
    });
    let mut paths = vec![write_runner_csv(dir, "rkhs.csv", &RKHS_HEADER, rows.collect())?];
    paths.push(write_runner_csv(
        dir,
        "rkhs_noise.csv",
        &["design_variance", "sigma_eff2"],
        vec![vec![fmt_f64(summary.design_variance), fmt_f64(summary.sigma_eff2)]],
    )?);
    finish("rkhs", cfg, cfg.seed, dir, start, paths)
}

pub const DEEPNET_HEADER: [&str; 5] = ["step", "t_wall", "esd", "risk", "loss"];

pub fn deepnet_rows(snapshots: &[DeepnetSnapshot]) -> Vec<Vec<String>> {
    snapshots
        .iter()
        .map(|s| {
            vec![
                s.step.to_string(),
                s.t_wall.map(fmt_f64).unwrap_or_default(),
                s.esd.to_string(),
                fmt_f64(s.risk),
                fmt_f64(s.loss),
            ]
        })
        .collect()
}

/// Snapshot table plus a checkpoint of the final network.
pub fn run_deepnet_to(cfg: &DeepnetConfig, dir: &Path) -> Result<RunManifest> {
    let start = Instant::now();
    fs::create_dir_all(dir)?;
    let run = train_deepnet(cfg)?;
    let mut paths = vec![write_runner_csv(dir, "deepnet.csv", &DEEPNET_HEADER, deepnet_rows(&run.snapshots))?];
    save_checkpoint(&dir.join("deepnet_final.bin"), &run.net, cfg.seed, run.adam.step)?;
    paths.push("deepnet_final.bin".into());
    paths.push("deepnet_final.json".into());
    finish("deepnet", cfg, cfg.seed, dir, start, paths)
}

/// Run the experiment `id` with a JSON configuration.
pub fn run_by_id(id: &str, config: &serde_json::Value, dir: &Path) -> Result<RunManifest> {
    fn cfg<C: for<'de> Deserialize<'de>>(v: &serde_json::Value) -> Result<C> {
        Ok(serde_json::from_value(v.clone())?)
    }
    match id {
        "fig1" => run_fig1_to(&cfg(config)?, dir),
        "fig2" => run_fig2_to(&cfg(config)?, dir),
        "linreg" => run_linreg_to(&cfg(config)?, dir),
        "rkhs" => run_rkhs_to(&cfg(config)?, dir),
        "deepnet" => run_deepnet_to(&cfg(config)?, dir),
        other => invalid(format!("unknown experiment `{other}`")),
    }
}

/// Repeat a recorded run into `dir`.
pub fn rerun_from_manifest(manifest: &Path, dir: &Path) -> Result<RunManifest> {
    let m = RunManifest::read(manifest)?;
    run_by_id(&m.id, &m.config, dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aligned_support_is_leading_block() {
        let cfg = MisalignConfig {
            d: 50,
            ..MisalignConfig::default()
        };
        let s = misaligned_signal(&cfg).unwrap();
        let support: Vec<usize> = (0..50).filter(|&i| s.as_slice()[i] != 0.0).collect();
        assert_eq!(support, (0..15).collect::<Vec<_>>());
        assert_eq!(s.as_slice()[0], 1.0);
    }

    #[test]
    fn cubic_support_fits_default_dimension() {
        let cfg = MisalignConfig {
            q: 3.0,
            ..MisalignConfig::default()
        };
        let s = misaligned_signal(&cfg).unwrap();
        assert_eq!(cfg.support_index(15), 3374);
        assert!(s.as_slice()[3374] > 0.0);
        assert_eq!(s.as_slice().iter().filter(|v| **v != 0.0).count(), 15);
    }

    #[test]
    fn config_validation() {
        let bad = MisalignConfig {
            d: 100,
            q: 3.0,
            ..MisalignConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = MisalignConfig {
            q: 0.5,
            ..MisalignConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let m = RunManifest::new("fig1", &Fig1Config::default(), 3).unwrap();
        let text = serde_json::to_string(&m).unwrap();
        let back: RunManifest = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.config_as::<Fig1Config>().unwrap(), Fig1Config::default());
    }
}
