//! Kernel regression through its Mercer eigen-expansion.
//!
//! Random-design samples `(x_i, y_i)` are projected onto eigenfunctions,
//! `z_j = n^{-1} sum_i y_i psi_j(x_i)`, which behaves like a sequence-model
//! observation of `theta_j = <f, psi_j>` with inflated noise. The kernel
//! principal component projection estimator keeps the `z_j` with the largest
//! eigenvalues.

use std::collections::BTreeMap;
use std::f64::consts::{SQRT_2, TAU};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::estimators::pc_loss_curve;
use crate::linalg::{spd_power, sym_eigen};
use crate::rng::CounterRng;
use crate::seqcore::{esd, sort_spectrum, SignalVector, SortedSpectrum, TradeoffCurve};
use crate::stats;

/// Orthonormal eigenfunctions together with their sampling measure.
pub trait Basis: Send + Sync + std::fmt::Debug {
    fn name(&self) -> &str;
    /// `psi_j(x)` for 1-based `j`.
    fn eval(&self, j: usize, x: f64) -> f64;
    /// Map a uniform draw on `[0, 1)` to a sample from the measure.
    fn sample(&self, u: f64) -> f64;

    /// `psi_1(x), ..., psi_J(x)` written into `out`.
    fn eval_all(&self, x: f64, out: &mut [f64]) {
        for (j, v) in out.iter_mut().enumerate() {
            *v = self.eval(j + 1, x);
        }
    }
}

/// `psi_j(x) = sqrt(2) cos(2 pi j x)` under the uniform measure on `[0, 1]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct CosineBasis;

impl Basis for CosineBasis {
    fn name(&self) -> &str {
        "cosine"
    }

    fn eval(&self, j: usize, x: f64) -> f64 {
        SQRT_2 * (TAU * j as f64 * x).cos()
    }

    fn sample(&self, u: f64) -> f64 {
        u
    }
}

/// Name-to-basis lookup.
#[derive(Debug, Clone)]
pub struct BasisRegistry {
    entries: BTreeMap<String, Arc<dyn Basis>>,
}

impl Default for BasisRegistry {
    fn default() -> Self {
        let mut r = Self {
            entries: BTreeMap::new(),
        };
        r.register(Arc::new(CosineBasis));
        r
    }
}

impl BasisRegistry {
    pub fn register(&mut self, basis: Arc<dyn Basis>) {
        self.entries.insert(basis.name().to_owned(), basis);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn Basis>> {
        self.entries
            .get(name)
            .cloned()
            .ok_or_else(|| Error::InvalidInput(format!("unknown basis `{name}`")))
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }
}

#[derive(Debug, Clone)]
pub struct KernelEigenModel {
    spectrum: SortedSpectrum,
    basis: Arc<dyn Basis>,
}

impl KernelEigenModel {
    pub fn new(eigenvalues: &[f64], basis: Arc<dyn Basis>) -> Result<Self> {
        if eigenvalues.iter().any(|l| !(*l > 0.0)) {
            return invalid("kernel eigenvalues must be > 0");
        }
        Ok(Self {
            spectrum: sort_spectrum(eigenvalues)?,
            basis,
        })
    }

    pub fn truncation(&self) -> usize {
        self.spectrum.len()
    }

    pub fn spectrum(&self) -> &SortedSpectrum {
        &self.spectrum
    }

    pub fn basis(&self) -> &dyn Basis {
        self.basis.as_ref()
    }
}

/// Target coefficients `<f, psi_j>` and a bound on `sup |f|`.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetFunction {
    coeffs: SignalVector,
    sup_norm: f64,
}

impl TargetFunction {
    pub fn new(coeffs: SignalVector, sup_norm: f64) -> Result<Self> {
        if !(sup_norm >= 0.0 && sup_norm.is_finite()) {
            return invalid(format!("sup norm {sup_norm} must be finite and >= 0"));
        }
        let l2 = coeffs.norm_sq();
        if l2 > sup_norm * sup_norm * (1.0 + 1e-12) + 1e-300 {
            return invalid(format!(
                "squared L2 norm {l2} exceeds the squared sup norm {}",
                sup_norm * sup_norm
            ));
        }
        Ok(Self { coeffs, sup_norm })
    }

    /// Estimate `sup |f|` by evaluating `f` on `grid` equally spaced points of `[0, 1]`.
    pub fn with_grid_sup(coeffs: SignalVector, basis: &dyn Basis, grid: usize) -> Result<Self> {
        let mut psi = vec![0.0; coeffs.len()];
        let mut sup = 0f64;
        for i in 0..grid {
            let x = i as f64 / (grid - 1).max(1) as f64;
            basis.eval_all(x, &mut psi);
            let f: f64 = coeffs.as_slice().iter().zip(&psi).map(|(c, p)| c * p).sum();
            sup = sup.max(f.abs());
        }
        // A grid maximum can undershoot; never report less than the L2 norm.
        Self::new(coeffs.clone(), sup.max(coeffs.norm_sq().sqrt()))
    }

    pub fn coeffs(&self) -> &SignalVector {
        &self.coeffs
    }

    pub fn sup_norm(&self) -> f64 {
        self.sup_norm
    }

    pub fn eval(&self, basis: &dyn Basis, x: f64) -> f64 {
        let mut psi = vec![0.0; self.coeffs.len()];
        basis.eval_all(x, &mut psi);
        self.coeffs.as_slice().iter().zip(&psi).map(|(c, p)| c * p).sum()
    }
}

/// Empirical eigen-coefficients `z_j = n^{-1} sum_i y_i psi_j(x_i)` for `j = 1..=J`.
pub fn transform_obs(xs: &[f64], ys: &[f64], basis: &dyn Basis, truncation: usize) -> Result<Vec<f64>> {
    if xs.is_empty() || xs.len() != ys.len() {
        return invalid("need n >= 1 samples with matching x and y");
    }
    if truncation == 0 {
        return invalid("truncation J must be >= 1");
    }
    let mut z = vec![0.0; truncation];
    let mut psi = vec![0.0; truncation];
    for (&x, &y) in xs.iter().zip(ys) {
        basis.eval_all(x, &mut psi);
        for (zj, p) in z.iter_mut().zip(&psi) {
            *zj += y * p;
        }
    }
    let n = xs.len() as f64;
    z.iter_mut().for_each(|v| *v /= n);
    Ok(z)
}

/// `(sigma0^2 + ||f||_inf^2) / n`.
pub fn effective_noise(sigma0: f64, target: &TargetFunction, n: usize) -> f64 {
    (sigma0 * sigma0 + target.sup_norm * target.sup_norm) / n as f64
}

/// `max_j` of the empirical variance of `f(x_i) psi_j(x_i)` over the sample.
pub fn design_induced_variance(target: &TargetFunction, basis: &dyn Basis, xs: &[f64]) -> f64 {
    let jn = target.coeffs.len();
    let mut psi = vec![0.0; jn];
    let mut sum = vec![0.0; jn];
    let mut sumsq = vec![0.0; jn];
    for &x in xs {
        basis.eval_all(x, &mut psi);
        let f: f64 = target.coeffs.as_slice().iter().zip(&psi).map(|(c, p)| c * p).sum();
        for j in 0..jn {
            let v = f * psi[j];
            sum[j] += v;
            sumsq[j] += v * v;
        }
    }
    let n = xs.len() as f64;
    (0..jn)
        .map(|j| (sumsq[j] - sum[j] * sum[j] / n) / (n - 1.0))
        .fold(0.0, f64::max)
}

/// Coefficients of the projection estimator onto the top `k` eigenfunctions.
pub fn kpcpe(z: &[f64], model: &KernelEigenModel, k: usize) -> Result<Vec<f64>> {
    if k == 0 || k > model.truncation() {
        return invalid(format!("k = {k} outside 1..={}", model.truncation()));
    }
    if z.len() != model.truncation() {
        return invalid("coefficient length differs from truncation");
    }
    Ok(crate::estimators::truncate_top_k(z, model.spectrum(), k))
}

/// L2 risk `||f_hat - f||^2` of a coefficient estimate (truncated at `J`).
pub fn kpcpe_risk(estimate: &[f64], target: &TargetFunction) -> f64 {
    crate::estimators::squared_error(estimate, target.coeffs.as_slice())
}

pub fn esd_rkhs(target: &TargetFunction, model: &KernelEigenModel, sigma_eff2: f64) -> Result<usize> {
    esd(&target.coeffs, model.spectrum(), sigma_eff2)
}

/// ESD for a rank-`d` kernel whose eigenfunctions miss part of `f`:
/// `min{j : (delta + sum_{i>j} theta_{pi_i}^2) / j <= sigma^2}` with
/// `delta = ||f||^2 - sum_{j<=d} theta_j^2`.
pub fn esd_psd_rank(
    coeffs: &SignalVector,
    spectrum: &SortedSpectrum,
    l2_norm_sq: f64,
    sigma2: f64,
) -> Result<usize> {
    let delta = l2_norm_sq - coeffs.norm_sq();
    if delta < -1e-10 {
        return invalid(format!(
            "||f||^2 = {l2_norm_sq} is smaller than the captured energy {}",
            coeffs.norm_sq()
        ));
    }
    TradeoffCurve::with_tail(coeffs, spectrum, delta.max(0.0))?.esd(sigma2)
}

/// `sum_{i <= floor(c1 K)} 1 / lambda_{pi_i} <= C1 n`.
pub fn regularity_check(spectrum: &SortedSpectrum, k: usize, n: usize, c1: f64, big_c1: f64) -> Result<bool> {
    if !(c1 > 0.0 && c1 < 1.0) || !(big_c1 > 0.0) {
        return invalid("regularity check needs 0 < c1 < 1 and C1 > 0");
    }
    let m = ((c1 * k as f64).floor() as usize).min(spectrum.len());
    let s: f64 = spectrum.sorted_values()[..m].iter().map(|l| 1.0 / l).sum();
    Ok(s <= big_c1 * n as f64)
}

/// `lambda_j(alpha) = lambda_j exp(alpha t_j)`, `t_j = (j-1)/(D-1)` for `j <= D`, else 0.
pub fn spectral_perturb(lambda0: &[f64], alpha: f64, width: usize) -> Result<Vec<f64>> {
    if width < 2 {
        return invalid(format!("perturbation width D = {width} must be >= 2"));
    }
    if width > lambda0.len() {
        return invalid("perturbation width exceeds the truncation");
    }
    Ok(lambda0
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            if i < width {
                l * (alpha * i as f64 / (width - 1) as f64).exp()
            } else {
                l
            }
        })
        .collect())
}

/// Eigen-expansion of a linear kernel `K` under covariance `Sigma_x`.
#[derive(Debug, Clone)]
pub struct KernelBridge {
    pub lambda: Vec<f64>,
    pub theta: Vec<f64>,
    /// Eigenfunction coefficients `Psi = Sigma_x^{-1/2} V`, one per column.
    pub psi: DMatrix<f64>,
}

pub fn linear_kernel_bridge(k: &DMatrix<f64>, sigma_x: &DMatrix<f64>, betastar: &DVector<f64>) -> Result<KernelBridge> {
    let p = k.nrows();
    if sigma_x.nrows() != p || betastar.len() != p {
        return invalid("kernel, covariance and beta* sizes differ");
    }
    let l = spd_power(sigma_x, 0.5)?;
    let l_inv = spd_power(sigma_x, -0.5)?;
    spd_power(k, 1.0)?;
    let m = &l * k * &l;
    let m = (&m + m.transpose()) * 0.5;
    let e = sym_eigen(&m)?;
    let theta = e.vectors.transpose() * (&l * betastar);
    Ok(KernelBridge {
        lambda: e.values.iter().copied().collect(),
        theta: theta.iter().copied().collect(),
        psi: l_inv * e.vectors,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RkhsConfig {
    pub basis: String,
    pub n: usize,
    pub truncation: usize,
    pub sigma0: f64,
    pub eigen_decay: f64,
    pub signal_decay: f64,
    pub width: usize,
    pub reps: usize,
    pub alphas: Vec<f64>,
    pub seed: u64,
}

impl Default for RkhsConfig {
    fn default() -> Self {
        Self {
            basis: "cosine".into(),
            n: 400,
            truncation: 800,
            sigma0: 1.0,
            eigen_decay: 1.1,
            signal_decay: 4.0,
            width: 80,
            reps: 10,
            alphas: (0..8).map(|i| i as f64 * 20.0 / 7.0).collect(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RkhsRow {
    pub alpha: f64,
    pub esd: usize,
    pub risk_mean: f64,
    pub risk_stderr: f64,
    pub k_mc: usize,
    pub lower_env: f64,
    pub upper_env: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RkhsSummary {
    pub rows: Vec<RkhsRow>,
    /// `max_j` empirical variance of `f psi_j` on the fixed design sample.
    pub design_variance: f64,
    pub sigma_eff2: f64,
}

fn draw_samples(
    rng: &CounterRng,
    stream: u64,
    basis: &dyn Basis,
    target: &TargetFunction,
    n: usize,
    sigma0: f64,
) -> (Vec<f64>, Vec<f64>) {
    let mut u = vec![0.0; n];
    let mut e = vec![0.0; n];
    rng.domain("x").fill_uniform(stream, 0, &mut u);
    rng.domain("eps").fill_normal(stream, 0, &mut e);
    let xs: Vec<f64> = u.iter().map(|&v| basis.sample(v)).collect();
    let ys = xs
        .iter()
        .zip(&e)
        .map(|(&x, &eps)| target.eval(basis, x) + sigma0 * eps)
        .collect();
    (xs, ys)
}

/// Optimal KPCPE risk over an alpha grid of perturbed spectra.
///
/// The design-induced variance is measured on one fixed sample; every
/// replication then draws a fresh design and fresh noise.
pub fn rkhs_experiment(cfg: &RkhsConfig, registry: &BasisRegistry) -> Result<RkhsSummary> {
    if cfg.n < 2 || cfg.truncation < 1 || cfg.reps < 2 || cfg.alphas.is_empty() {
        return invalid("rkhs needs n >= 2, J >= 1, reps >= 2 and a nonempty alpha grid");
    }
    if !(cfg.sigma0 > 0.0) {
        return invalid("sigma0 must be > 0");
    }
    let basis = registry.get(&cfg.basis)?;
    let jn = cfg.truncation;
    let lambda0: Vec<f64> = (1..=jn).map(|j| (j as f64).powf(-cfg.eigen_decay)).collect();
    let coeffs = SignalVector::new((1..=jn).map(|j| (j as f64).powf(-cfg.signal_decay)).collect())?;
    let target = TargetFunction::with_grid_sup(coeffs, basis.as_ref(), 100_000)?;
    let rng = CounterRng::new(cfg.seed).domain("rkhs");
    let (fixed_x, _) = draw_samples(&rng.domain("fixed"), 0, basis.as_ref(), &target, cfg.n, cfg.sigma0);
    let design_variance = design_induced_variance(&target, basis.as_ref(), &fixed_x);
    let n = cfg.n as f64;
    let sigma_eff2 = (cfg.sigma0 * cfg.sigma0 + design_variance) / n;
    let base_var = cfg.sigma0 * cfg.sigma0 / n;
    let theta = target.coeffs().as_slice();

    let rows = cfg
        .alphas
        .iter()
        .enumerate()
        .map(|(ai, &alpha)| {
            let model = KernelEigenModel::new(&spectral_perturb(&lambda0, alpha, cfg.width)?, basis.clone())?;
            let d = esd_rkhs(&target, &model, sigma_eff2)?;
            let mut per_k = vec![Vec::with_capacity(cfg.reps); jn + 1];
            for rep in 0..cfg.reps {
                let stream = ((ai as u64) << 32) | rep as u64;
                let (xs, ys) = draw_samples(&rng, stream, basis.as_ref(), &target, cfg.n, cfg.sigma0);
                let z = transform_obs(&xs, &ys, basis.as_ref(), jn)?;
                for (k, loss) in pc_loss_curve(&z, theta, model.spectrum()).into_iter().enumerate() {
                    per_k[k].push(loss);
                }
            }
            let ms: Vec<stats::MeanStderr> = per_k.iter().map(|v| stats::mean_stderr(v)).collect();
            let k_mc = (1..=jn)
                .min_by(|&a, &b| ms[a].mean.total_cmp(&ms[b].mean))
                .expect("J >= 1");
            Ok(RkhsRow {
                alpha,
                esd: d,
                risk_mean: ms[k_mc].mean,
                risk_stderr: ms[k_mc].stderr,
                k_mc,
                lower_env: (d as f64 - 1.0) * base_var,
                upper_env: 2.0 * d as f64 * sigma_eff2,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RkhsSummary {
        rows,
        design_variance,
        sigma_eff2,
    })
}
