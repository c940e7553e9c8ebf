//! Spectral filters and their risk in the sequence model.
//!
//! A filter multiplies each observation by a factor `1 - psi_nu(lambda_j)`.
//! Risks are computed analytically from the true signal; Monte Carlo is only
//! a cross-check.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::CounterRng;
use crate::seqcore::{
    esd, sorted_tails, NoiseKind, NoiseSpec, SeqInstance, SignalVector, SortedSpectrum,
};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterKind {
    Ridge,
    GradientFlow,
    PrincipalComponent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub kind: FilterKind,
    pub nu: f64,
}

impl FilterSpec {
    pub fn new(kind: FilterKind, nu: f64) -> Result<Self> {
        if !(nu > 0.0 && nu.is_finite()) {
            return invalid(format!("regularization nu = {nu} must be > 0"));
        }
        Ok(Self { kind, nu })
    }

    /// Multiplier applied to `z_j` for eigenvalue `lambda`.
    pub fn factor(&self, lambda: f64) -> f64 {
        match self.kind {
            FilterKind::Ridge => lambda / (lambda + self.nu),
            FilterKind::GradientFlow => -(-lambda / self.nu).exp_m1(),
            FilterKind::PrincipalComponent => {
                if lambda >= self.nu {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskBreakdown {
    pub bias_sq: f64,
    pub variance: f64,
    pub total: f64,
}

impl RiskBreakdown {
    fn new(bias_sq: f64, variance: f64) -> Self {
        Self {
            bias_sq,
            variance,
            total: bias_sq + variance,
        }
    }
}

pub fn apply_filter(instance: &SeqInstance, filter: &FilterSpec) -> Result<SignalVector> {
    let z = instance.require_obs()?;
    let est = z
        .iter()
        .zip(instance.spectrum().raw())
        .map(|(&zj, &l)| filter.factor(l) * zj)
        .collect();
    SignalVector::new(est)
}

/// Exact bias/variance of a filter at noise variance `noise_var`.
pub fn filter_risk(
    thetastar: &SignalVector,
    spectrum: &SortedSpectrum,
    filter: &FilterSpec,
    noise_var: f64,
) -> RiskBreakdown {
    let mut bias = 0.0;
    let mut var = 0.0;
    for (&t, &l) in thetastar.as_slice().iter().zip(spectrum.raw()) {
        let f = filter.factor(l);
        bias += (1.0 - f) * (1.0 - f) * t * t;
        var += f * f * noise_var;
    }
    RiskBreakdown::new(bias, var)
}

/// `R(k) = k sigma^2 + sum_{i>k} theta_{pi_i}^2` for `k = 0..=d`.
pub fn pc_risk_curve(instance: &SeqInstance) -> Vec<RiskBreakdown> {
    let tails = sorted_tails(
        instance.signal().as_slice(),
        instance.spectrum().perm(),
        0.0,
    );
    let s2 = instance.noise_var();
    tails
        .iter()
        .enumerate()
        .map(|(k, &b)| RiskBreakdown::new(b, k as f64 * s2))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimalPc {
    pub k_star: usize,
    pub risk: f64,
}

/// Minimizer of the analytic PC risk over `k = 0..=d`; ties go to the smaller `k`.
pub fn optimal_pc(instance: &SeqInstance) -> OptimalPc {
    let mut best = OptimalPc {
        k_star: 0,
        risk: f64::INFINITY,
    };
    for (k, r) in pc_risk_curve(instance).iter().enumerate() {
        if r.total < best.risk {
            best = OptimalPc {
                k_star: k,
                risk: r.total,
            };
        }
    }
    best
}

/// Whether `(d - 1) sigma^2 <= R* <= 2 d sigma^2` holds with `d` the ESD at `sigma^2`.
pub fn sandwich_holds(instance: &SeqInstance, rel_tol: f64) -> Result<bool> {
    let d = instance.esd()? as f64;
    let s2 = instance.noise_var();
    let r = optimal_pc(instance).risk;
    let lo = (d - 1.0) * s2;
    let hi = 2.0 * d * s2;
    Ok(r >= lo - rel_tol * lo.abs() && r <= hi + rel_tol * hi)
}

/// Keep the `k` observations with the largest eigenvalues, zero the rest.
pub fn truncate_top_k(z: &[f64], spectrum: &SortedSpectrum, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; z.len()];
    for &j in spectrum.top(k) {
        out[j] = z[j];
    }
    out
}

/// Squared loss of the top-`k` truncation of `z` for every `k = 0..=d`.
pub fn pc_loss_curve(z: &[f64], thetastar: &[f64], spectrum: &SortedSpectrum) -> Vec<f64> {
    let perm = spectrum.perm();
    let tails = sorted_tails(thetastar, perm, 0.0);
    let mut out = Vec::with_capacity(perm.len() + 1);
    let mut head = 0.0;
    out.push(tails[0]);
    for (k, &j) in perm.iter().enumerate() {
        let e = z[j] - thetastar[j];
        head += e * e;
        out.push(head + tails[k + 1]);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McRisk {
    pub mean: f64,
    pub stderr: f64,
    pub reps: usize,
}

/// Monte-Carlo risk of `filter` with noise standard deviation `noise.sigma0`.
pub fn mc_risk(
    thetastar: &SignalVector,
    spectrum: &SortedSpectrum,
    filter: &FilterSpec,
    noise: &NoiseSpec,
    reps: usize,
) -> Result<McRisk> {
    if reps < 2 {
        return invalid(format!("reps = {reps} must be >= 2"));
    }
    if thetastar.len() != spectrum.len() {
        return invalid("signal and spectrum lengths differ");
    }
    noise.validate()?;
    let factors: Vec<f64> = spectrum.raw().iter().map(|&l| filter.factor(l)).collect();
    let theta = thetastar.as_slice();
    let rng = CounterRng::new(noise.seed).domain("mc-risk");
    let mut xi = vec![0.0; theta.len()];
    let losses: Vec<f64> = (0..reps as u64)
        .map(|rep| {
            match noise.kind {
                NoiseKind::IidGaussian => {
                    rng.fill_normal(rep, 0, &mut xi);
                    xi.iter_mut().for_each(|v| *v *= noise.sigma0);
                }
                NoiseKind::IidSubgaussianBounded => {
                    rng.fill_uniform(rep, 0, &mut xi);
                    let h = 3f64.sqrt() * noise.sigma0;
                    xi.iter_mut().for_each(|v| *v = (2.0 * *v - 1.0) * h);
                }
            }
            theta
                .iter()
                .zip(&xi)
                .zip(&factors)
                .map(|((&t, &e), &f)| {
                    let d = f * (t + e) - t;
                    d * d
                })
                .sum()
        })
        .collect();
    let ms = stats::mean_stderr(&losses);
    Ok(McRisk {
        mean: ms.mean,
        stderr: ms.stderr,
        reps,
    })
}

/// PC estimate with the number of components set to the ESD of the true
/// signal under the instance's spectrum.
///
/// This is an oracle tuning: it reads the true signal, which is only
/// available in simulation.
pub fn tuned_pc_estimate(instance: &SeqInstance) -> Result<SignalVector> {
    let z = instance.require_obs()?;
    let k = esd(instance.signal(), instance.spectrum(), instance.noise_var())?;
    SignalVector::new(truncate_top_k(z, instance.spectrum(), k))
}

pub fn squared_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
