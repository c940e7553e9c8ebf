//! Outcome checks over the CSV bundles written by the experiment runners.
//!
//! Every check reads the files a runner produced rather than its in-memory
//! results, so what is verified is exactly what a user would get on disk.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use esd_core::deepnet::DeepnetConfig;
use esd_core::error::{Error, Result};
use esd_core::experiments::{Fig1Config, Fig2Config, RunManifest};
use esd_core::io::read_table;
use esd_core::linreg::LinregConfig;
use esd_core::rkhs::RkhsConfig;
use esd_core::stats::spearman;

fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}

/// Wall-clock budgets in seconds.
pub const FIG1_BUDGET: f64 = 600.0;
pub const FIG2_BUDGET: f64 = 1800.0;
pub const LINREG_BUDGET: f64 = 600.0;
pub const RKHS_BUDGET: f64 = 600.0;
pub const DEEPNET_BUDGET: f64 = 1200.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub criterion: u32,
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    pub fn new(criterion: u32, pass: bool, detail: impl Into<String>) -> Self {
        Self {
            criterion,
            pass,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.pass { "PASS" } else { "FAIL" };
        write!(f, "criterion {}: {verdict} {}", self.criterion, self.detail)
    }
}

/// Default configuration of a runner as JSON.
pub fn default_config(id: &str) -> Result<serde_json::Value> {
    Ok(match id {
        "fig1" => serde_json::to_value(Fig1Config::default())?,
        "fig2" => serde_json::to_value(Fig2Config::default())?,
        "linreg" => serde_json::to_value(LinregConfig::default())?,
        "rkhs" => serde_json::to_value(RkhsConfig::default())?,
        "deepnet" => serde_json::to_value(DeepnetConfig::default())?,
        other => return invalid(format!("unknown experiment `{other}`")),
    })
}

/// A CSV table with named columns, all cells kept as text.
pub struct Table {
    header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn load(path: &Path) -> Result<Self> {
        let (header, rows) = read_table(path)?;
        Ok(Self { header, rows })
    }

    pub fn col(&self, name: &str) -> Result<usize> {
        match self.header.iter().position(|h| h == name) {
            Some(i) => Ok(i),
            None => invalid(format!("missing column `{name}`")),
        }
    }

    pub fn f64s(&self, name: &str) -> Result<Vec<f64>> {
        let c = self.col(name)?;
        self.rows
            .iter()
            .map(|r| match r[c].parse() {
                Ok(v) => Ok(v),
                Err(_) => invalid(format!("`{}` in column `{name}` is not a number", r[c])),
            })
            .collect()
    }
}

fn budget_note(secs: f64, budget: f64) -> (bool, String) {
    (secs <= budget, format!("wall {secs:.1}s of {budget:.0}s"))
}

/// Span profiles keyed by `q`, then by snapshot time, in file order of `tau`.
type Profiles = BTreeMap<String, Vec<(f64, Vec<i64>)>>;

fn fig1_profiles(dir: &Path) -> Result<Profiles> {
    let t = Table::load(&dir.join("fig1.csv"))?;
    let (cq, ct, ce) = (t.col("q")?, t.col("t")?, t.col("esd")?);
    let mut out: Profiles = BTreeMap::new();
    for r in &t.rows {
        let (Ok(time), Ok(esd)) = (r[ct].parse::<f64>(), r[ce].parse::<i64>()) else {
            return invalid(format!("bad fig1.csv row {r:?}"));
        };
        let snaps = out.entry(r[cq].clone()).or_default();
        match snaps.last_mut() {
            Some((t0, prof)) if *t0 == time => prof.push(esd),
            _ => snaps.push((time, vec![esd])),
        }
    }
    Ok(out)
}

/// Stability of the aligned profile and downward shifts of the misaligned ones.
pub fn fig1_outcome(dir: &Path, wall_secs: f64) -> Result<Outcome> {
    let profiles = fig1_profiles(dir)?;
    let get = |q: &str| match profiles.get(q) {
        Some(p) if !p.is_empty() => Ok(p),
        _ => invalid(format!("fig1.csv has no profile for q = {q}")),
    };
    let mut notes = Vec::new();
    let mut pass = true;

    let aligned = get("1")?;
    let base = &aligned[0].1;
    let max_change = aligned
        .iter()
        .flat_map(|(_, p)| p.iter().zip(base).map(|(a, b)| (a - b).abs()))
        .max()
        .unwrap_or(0);
    pass &= max_change <= 1;
    notes.push(format!("q=1 max change {max_change}"));

    let mut decrease = BTreeMap::new();
    for q in ["1.5", "3"] {
        let snaps = get(q)?;
        let (first, last) = (&snaps[0].1, &snaps[snaps.len() - 1].1);
        let ups: Vec<usize> = (0..first.len()).filter(|&i| last[i] > first[i]).collect();
        let strict = first.iter().zip(last).any(|(a, b)| b < a);
        let total: i64 = first.iter().zip(last).map(|(a, b)| a - b).sum();
        decrease.insert(q, total);
        pass &= ups.is_empty() && strict;
        let mut note = format!("q={q} total decrease {total}");
        if !ups.is_empty() {
            let shown: Vec<String> = ups
                .iter()
                .map(|&i| format!("tau#{i} {}->{}", first[i], last[i]))
                .collect();
            note.push_str(&format!(" (increases at {})", shown.join(", ")));
        }
        if !strict {
            note.push_str(" (no strict decrease)");
        }
        notes.push(note);
    }
    let ordered = decrease["3"] > decrease["1.5"];
    pass &= ordered;
    notes.push(format!("q=3 beats q=1.5: {ordered}"));
    let (in_budget, b) = budget_note(wall_secs, FIG1_BUDGET);
    pass &= in_budget;
    notes.push(b);
    Ok(Outcome::new(7, pass, notes.join("; ")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthTrend {
    pub depth: u32,
    pub esd_start: f64,
    pub esd_end: f64,
    pub err_start: f64,
    pub err_end: f64,
    pub first_decrease: Option<f64>,
}

pub fn fig2_depth_trends(dir: &Path) -> Result<Vec<DepthTrend>> {
    let t = Table::load(&dir.join("fig2.csv"))?;
    let (d, time, esd, err) = (t.f64s("D")?, t.f64s("t")?, t.f64s("esd_mean")?, t.f64s("err_mean")?);
    let mut depths: Vec<u32> = d.iter().map(|v| *v as u32).collect();
    depths.dedup();
    Ok(depths
        .into_iter()
        .map(|depth| {
            let idx: Vec<usize> = (0..d.len()).filter(|&i| d[i] as u32 == depth).collect();
            let (i0, i1) = (idx[0], idx[idx.len() - 1]);
            DepthTrend {
                depth,
                esd_start: esd[i0],
                esd_end: esd[i1],
                err_start: err[i0],
                err_end: err[i1],
                first_decrease: idx.iter().find(|&&i| esd[i] < esd[i0]).map(|&i| time[i]),
            }
        })
        .collect())
}

/// Decay of the mean ESD and tuned-PC error for every depth, and the ordering across depths.
pub fn fig2_outcome(dir: &Path, wall_secs: f64) -> Result<Outcome> {
    let trends = fig2_depth_trends(dir)?;
    let find = |depth: u32| match trends.iter().find(|t| t.depth == depth) {
        Some(t) => Ok(t.clone()),
        None => invalid(format!("fig2.csv has no rows for D = {depth}")),
    };
    let (t0, t1, t3) = (find(0)?, find(1)?, find(3)?);
    let mut pass = true;
    let mut notes = Vec::new();
    for t in [&t0, &t1, &t3] {
        let ok = t.esd_end < t.esd_start && t.err_end < t.err_start;
        pass &= ok;
        notes.push(format!(
            "D={} esd {}->{} err {:.4e}->{:.4e} first drop {:?}",
            t.depth, t.esd_start, t.esd_end, t.err_start, t.err_end, t.first_decrease
        ));
    }
    let earlier = match (t0.first_decrease, t1.first_decrease, t3.first_decrease) {
        (Some(a), Some(b), Some(c)) => a < b && a < c,
        (Some(_), None, None) => true,
        _ => false,
    };
    let deeper_lower = t1.esd_end <= t0.esd_end && t3.esd_end <= t0.esd_end;
    pass &= earlier && deeper_lower;
    notes.push(format!("D=0 drops first: {earlier}; deeper ends lower: {deeper_lower}"));
    let (in_budget, b) = budget_note(wall_secs, FIG2_BUDGET);
    pass &= in_budget;
    notes.push(b);
    Ok(Outcome::new(8, pass, notes.join("; ")))
}

/// `n R / sigma0^2` inside `[d - 1, 2 d]` on every row of both spectrum cases,
/// and a rank correlation of at least 0.9 between alpha and ESD for the geometric case.
pub fn linreg_outcome(dir: &Path, cfg: &LinregConfig, wall_secs: f64) -> Result<Outcome> {
    let mut pass = true;
    let mut notes = Vec::new();
    let unit = cfg.n as f64 / (cfg.sigma0 * cfg.sigma0);
    for case in &cfg.cases {
        let t = Table::load(&dir.join(format!("linreg_{}.csv", case.name())))?;
        let (alpha, esd, risk, se) = (t.f64s("alpha")?, t.f64s("esd")?, t.f64s("risk_mean")?, t.f64s("risk_stderr")?);
        if alpha.len() != cfg.alphas.len() {
            return invalid(format!("{} rows for {} alphas", alpha.len(), cfg.alphas.len()));
        }
        let mut outside = Vec::new();
        for i in 0..alpha.len() {
            let scaled = unit * risk[i];
            if !(scaled >= esd[i] - 1.0 && scaled <= 2.0 * esd[i]) {
                outside.push(format!("alpha={} nR={scaled:.3}+-{:.3} d={}", alpha[i], unit * se[i], esd[i]));
            }
        }
        pass &= outside.is_empty();
        let rho = spearman(&alpha, &esd);
        let mut note = format!("{}: esd {:?}", case.name(), esd.iter().map(|v| *v as usize).collect::<Vec<_>>());
        if case.name() == "geometric" {
            let ok = rho.is_some_and(|r| r >= 0.9);
            pass &= ok;
            note.push_str(&format!(" rho {rho:?}"));
        }
        if !outside.is_empty() {
            note.push_str(&format!(" outside envelope: {}", outside.join(", ")));
        }
        notes.push(note);
    }
    let (in_budget, b) = budget_note(wall_secs, LINREG_BUDGET);
    pass &= in_budget;
    notes.push(b);
    Ok(Outcome::new(9, pass, notes.join("; ")))
}

/// Optimal KPCPE risk inside `[(d - 1) sigma0^2 / n, 2 d sigma_eff^2]` and an
/// increasing ESD trend over alpha.
pub fn rkhs_outcome(dir: &Path, cfg: &RkhsConfig, wall_secs: f64) -> Result<Outcome> {
    let t = Table::load(&dir.join("rkhs.csv"))?;
    let noise = Table::load(&dir.join("rkhs_noise.csv"))?;
    let sigma_eff2 = noise.f64s("sigma_eff2")?[0];
    let (alpha, esd, risk) = (t.f64s("alpha")?, t.f64s("esd")?, t.f64s("risk_mean")?);
    let base = cfg.sigma0 * cfg.sigma0 / cfg.n as f64;
    let mut outside = Vec::new();
    for i in 0..alpha.len() {
        let (lo, hi) = ((esd[i] - 1.0) * base, 2.0 * esd[i] * sigma_eff2);
        if !(risk[i] >= lo && risk[i] <= hi) {
            outside.push(format!("alpha={} risk={:.4e} not in [{lo:.4e}, {hi:.4e}]", alpha[i], risk[i]));
        }
    }
    let rho = spearman(&alpha, &esd);
    let trend = rho.is_some_and(|r| r >= 0.9);
    let (in_budget, b) = budget_note(wall_secs, RKHS_BUDGET);
    let pass = outside.is_empty() && trend && in_budget && alpha.len() == cfg.alphas.len();
    let mut detail = format!(
        "esd {:?} rho {rho:?} sigma_eff2 {sigma_eff2:.4e}",
        esd.iter().map(|v| *v as usize).collect::<Vec<_>>()
    );
    if !outside.is_empty() {
        detail.push_str(&format!("; outside envelope: {}", outside.join(", ")));
    }
    detail.push_str(&format!("; {b}"));
    Ok(Outcome::new(10, pass, detail))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingTrend {
    pub esd_start: f64,
    pub esd_end: f64,
    pub risk_start: f64,
    pub risk_end: f64,
}

pub fn deepnet_trend(dir: &Path) -> Result<TrainingTrend> {
    let t = Table::load(&dir.join("deepnet.csv"))?;
    let (esd, risk) = (t.f64s("esd")?, t.f64s("risk")?);
    if esd.is_empty() {
        return invalid("deepnet.csv has no snapshots");
    }
    Ok(TrainingTrend {
        esd_start: esd[0],
        esd_end: esd[esd.len() - 1],
        risk_start: risk[0],
        risk_end: risk[risk.len() - 1],
    })
}

/// Output files of `first` whose bytes differ in `second`.
pub fn differing_outputs(first: &RunManifest, first_dir: &Path, second_dir: &Path) -> Result<Vec<String>> {
    let mut bad = Vec::new();
    for p in &first.paths {
        if fs::read(first_dir.join(p))? != fs::read(second_dir.join(p))? {
            bad.push(p.clone());
        }
    }
    Ok(bad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn outcome_line() {
        assert_eq!(Outcome::new(3, true, "ok").to_string(), "criterion 3: PASS ok");
        assert_eq!(Outcome::new(12, false, "x").to_string(), "criterion 12: FAIL x");
    }

    #[test]
    fn defaults_round_trip() {
        for id in esd_core::experiments::RUNNER_IDS {
            assert!(default_config(id).unwrap().is_object());
        }
        assert!(default_config("other").is_err());
    }
}
