//! Fixed-design linear regression viewed as a sequence model.
//!
//! With the thin SVD `X / sqrt(n) = U S V^T`, the rotated responses
//! `Z = U^T Y / sqrt(n)` satisfy `Z = S V^T beta + noise` with per-coordinate
//! noise variance `sigma0^2 / n`, and prediction risk equals the Euclidean
//! risk in `Z`-space. Everything in [`crate::seqcore`] and
//! [`crate::estimators`] then applies with eigenvalues `s_j^2`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::estimators::pc_loss_curve;
use crate::linalg::{check_symmetric, spd_power, sym_eigen};
use crate::rng::CounterRng;
use crate::seqcore::{esd, sort_spectrum, SeqInstance, SignalVector};
use crate::stats;

/// Singular values at or below this fraction of the largest count as zero.
pub const RANK_TOL: f64 = 1e-10;

/// Thin SVD of `X / sqrt(n)` truncated to its numerical rank.
///
/// `u` is `n x r`, `v` is `p x r` and `s` holds `r` positive singular values
/// in descending order.
#[derive(Debug, Clone)]
pub struct DesignSvd {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v: DMatrix<f64>,
    pub n: usize,
    pub p: usize,
}

impl DesignSvd {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    /// Eigenvalues `s_j^2` of the sample second-moment matrix.
    pub fn eigenvalues(&self) -> Vec<f64> {
        self.s.iter().map(|s| s * s).collect()
    }

    /// `theta = S V^T beta`.
    pub fn theta_of(&self, beta: &DVector<f64>) -> Result<DVector<f64>> {
        if beta.len() != self.p {
            return invalid(format!("beta has length {}, expected {}", beta.len(), self.p));
        }
        Ok((self.v.transpose() * beta).component_mul(&self.s))
    }

    /// Minimum-norm preimage `V S^+ theta` of a `Z`-space vector.
    pub fn beta_of(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        if theta.len() != self.rank() {
            return invalid(format!("theta has length {}, expected {}", theta.len(), self.rank()));
        }
        Ok(&self.v * theta.component_div(&self.s))
    }

    /// `Z = U^T Y / sqrt(n)`.
    pub fn rotate(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        if y.len() != self.n {
            return invalid(format!("Y has length {}, expected {}", y.len(), self.n));
        }
        Ok(self.u.transpose() * y / (self.n as f64).sqrt())
    }

    /// `U S V^T`, i.e. the reconstruction of `X / sqrt(n)`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let us = DMatrix::from_fn(self.n, self.rank(), |i, k| self.u[(i, k)] * self.s[k]);
        us * self.v.transpose()
    }
}

pub fn svd_reduce(x: &DMatrix<f64>) -> Result<DesignSvd> {
    let (n, p) = x.shape();
    if n == 0 || p == 0 {
        return invalid("design matrix is empty");
    }
    if x.iter().any(|v| !v.is_finite()) {
        return invalid("design matrix has non-finite entries");
    }
    let scaled = x / (n as f64).sqrt();
    let svd = nalgebra::linalg::SVD::try_new(scaled, true, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::NumericalFailure("SVD did not converge".into()))?;
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested V^T");
    let sv = svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    let s1 = sv[order[0]];
    let keep: Vec<usize> = order
        .into_iter()
        .filter(|&i| s1 > 0.0 && sv[i] > RANK_TOL * s1)
        .collect();
    let r = keep.len();
    Ok(DesignSvd {
        u: DMatrix::from_fn(n, r, |i, k| u[(i, keep[k])]),
        s: DVector::from_iterator(r, keep.iter().map(|&i| sv[i])),
        v: DMatrix::from_fn(p, r, |j, k| vt[(keep[k], j)]),
        n,
        p,
    })
}

/// Sequence-model view of `(X, Y)`. Without `betastar` the signal is zero.
pub fn to_sequence(
    y: &DVector<f64>,
    svd: &DesignSvd,
    betastar: Option<&DVector<f64>>,
    sigma0: f64,
) -> Result<SeqInstance> {
    if svd.rank() == 0 {
        return invalid("design has rank 0");
    }
    if !(sigma0 > 0.0) {
        return invalid(format!("sigma0 = {sigma0} must be > 0"));
    }
    let z = svd.rotate(y)?;
    let theta = match betastar {
        Some(b) => svd.theta_of(b)?,
        None => DVector::zeros(svd.rank()),
    };
    SeqInstance::new(
        SignalVector::new(theta.as_slice().to_vec())?,
        sort_spectrum(&svd.eigenvalues())?,
        sigma0 * sigma0 / svd.n as f64,
    )?
    .with_obs(z.as_slice().to_vec())
}

/// ESD of `S V^T beta*` against `s_j^2` at `tau = sigma0^2 / n`.
pub fn esd_design(betastar: &DVector<f64>, svd: &DesignSvd, sigma0: f64, n: usize) -> Result<usize> {
    if svd.rank() == 0 {
        return invalid("design has rank 0");
    }
    let theta = svd.theta_of(betastar)?;
    esd(
        &SignalVector::new(theta.as_slice().to_vec())?,
        &sort_spectrum(&svd.eigenvalues())?,
        sigma0 * sigma0 / n as f64,
    )
}

/// PCR coefficients using the top `k` singular directions.
pub fn pcr_estimate(y: &DVector<f64>, svd: &DesignSvd, k: usize) -> Result<DVector<f64>> {
    if k == 0 || k > svd.rank() {
        return invalid(format!("k = {k} outside 1..={}", svd.rank()));
    }
    let z = svd.rotate(y)?;
    let mut theta = DVector::zeros(svd.rank());
    theta.rows_mut(0, k).copy_from(&z.rows(0, k));
    svd.beta_of(&theta)
}

/// Observation noise `N(0, sigma2 * sigma_xi)`.
#[derive(Debug, Clone)]
pub struct CorrelatedNoiseModel {
    sigma_xi: DMatrix<f64>,
    sigma2: f64,
}

impl CorrelatedNoiseModel {
    pub fn new(sigma_xi: DMatrix<f64>, sigma2: f64) -> Result<Self> {
        check_symmetric(&sigma_xi, 1e-10)?;
        if !(sigma2 > 0.0) {
            return invalid(format!("sigma2 = {sigma2} must be > 0"));
        }
        let e = sym_eigen(&sigma_xi)?;
        if e.values[e.values.len() - 1] <= 0.0 {
            return invalid("noise covariance is not positive definite");
        }
        Ok(Self { sigma_xi, sigma2 })
    }

    pub fn sigma_xi(&self) -> &DMatrix<f64> {
        &self.sigma_xi
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }
}

#[derive(Debug, Clone)]
pub struct Whitened {
    pub z: DVector<f64>,
    /// Symmetric inverse square root of the noise covariance.
    pub l: DMatrix<f64>,
}

pub fn whiten(z: &DVector<f64>, model: &CorrelatedNoiseModel) -> Result<Whitened> {
    if z.len() != model.sigma_xi.nrows() {
        return invalid("observation length differs from covariance size");
    }
    let l = spd_power(&model.sigma_xi, -0.5)?;
    Ok(Whitened { z: &l * z, l })
}

/// `(a - b)^T M^{-1} (a - b)`.
pub fn mahalanobis_sq(a: &DVector<f64>, b: &DVector<f64>, m: &DMatrix<f64>) -> Result<f64> {
    let diff = a - b;
    let sol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidInput("matrix is not positive definite".into()))?
        .solve(&diff);
    Ok(diff.dot(&sol))
}

/// Column-scaling transform `A(alpha) = diag(exp(alpha t_j))`.
#[derive(Debug, Clone)]
pub struct AlphaTransform {
    pub x: DMatrix<f64>,
    pub scales: Vec<f64>,
    pub beta: Option<DVector<f64>>,
}

/// `t_j = (j - 1) / (p - 1) - 1/2` for `j = 1..=p`.
pub fn alpha_positions(p: usize) -> Vec<f64> {
    (0..p).map(|j| j as f64 / (p - 1) as f64 - 0.5).collect()
}

pub fn alpha_transform(
    x0: &DMatrix<f64>,
    alpha: f64,
    betastar: Option<&DVector<f64>>,
) -> Result<AlphaTransform> {
    let p = x0.ncols();
    if p < 2 {
        return invalid("alpha transform needs p >= 2");
    }
    let scales: Vec<f64> = alpha_positions(p).iter().map(|t| (alpha * t).exp()).collect();
    let mut x = x0.clone();
    for (j, &a) in scales.iter().enumerate() {
        x.column_mut(j).scale_mut(a);
    }
    let beta = match betastar {
        Some(b) if b.len() != p => return invalid("beta* length differs from p"),
        Some(b) => Some(DVector::from_fn(p, |j, _| b[j] / scales[j])),
        None => None,
    };
    Ok(AlphaTransform { x, scales, beta })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpectrumCase {
    /// `lambda_j = 0.95^j`, `beta*_j = j^-0.2`.
    Geometric,
    /// `lambda_j = beta*_j = 1 / ln(j + 1)`.
    Logarithmic,
}

impl SpectrumCase {
    pub fn covariance_diag(&self, p: usize) -> Vec<f64> {
        (1..=p)
            .map(|j| match self {
                SpectrumCase::Geometric => 0.95f64.powi(j as i32),
                SpectrumCase::Logarithmic => 1.0 / ((j + 1) as f64).ln(),
            })
            .collect()
    }

    pub fn betastar(&self, p: usize) -> DVector<f64> {
        DVector::from_iterator(
            p,
            (1..=p).map(|j| match self {
                SpectrumCase::Geometric => (j as f64).powf(-0.2),
                SpectrumCase::Logarithmic => 1.0 / ((j + 1) as f64).ln(),
            }),
        )
    }

    pub fn name(&self) -> &'static str {
        match self {
            SpectrumCase::Geometric => "geometric",
            SpectrumCase::Logarithmic => "logarithmic",
        }
    }
}

/// Rows i.i.d. `N(0, diag(lambda))`.
pub fn gen_design(case: SpectrumCase, n: usize, p: usize, seed: u64) -> DMatrix<f64> {
    let sd: Vec<f64> = case.covariance_diag(p).iter().map(|l| l.sqrt()).collect();
    let rng = CounterRng::new(seed).domain("linreg-design");
    let mut row = vec![0.0; p];
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        rng.fill_normal(i as u64, 0, &mut row);
        for j in 0..p {
            x[(i, j)] = sd[j] * row[j];
        }
    }
    x
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinregConfig {
    pub cases: Vec<SpectrumCase>,
    pub n: usize,
    pub p: usize,
    pub sigma0: f64,
    pub alphas: Vec<f64>,
    pub reps: usize,
    pub seed: u64,
}

impl Default for LinregConfig {
    fn default() -> Self {
        Self {
            cases: vec![SpectrumCase::Geometric, SpectrumCase::Logarithmic],
            n: 300,
            p: 400,
            sigma0: 1.0,
            alphas: (0..8).map(|i| i as f64 * 12.0 / 7.0).collect(),
            reps: 20,
            seed: 0,
        }
    }
}

impl LinregConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 1 || self.p < 2 {
            return invalid("linreg needs n >= 1 and p >= 2");
        }
        if !(self.sigma0 > 0.0) {
            return invalid("sigma0 must be > 0");
        }
        if self.cases.is_empty() {
            return invalid("linreg needs at least one spectrum case");
        }
        if self.reps < 2 {
            return invalid("linreg needs at least 2 replications");
        }
        if self.alphas.is_empty() || self.alphas.iter().any(|a| !a.is_finite()) {
            return invalid("alpha grid must be nonempty and finite");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinregRow {
    pub alpha: f64,
    pub esd: usize,
    /// Minimum over `k` of the per-`k` Monte-Carlo mean prediction risk.
    pub risk_mean: f64,
    pub risk_stderr: f64,
    /// Component count achieving `risk_mean`.
    pub k_mc: usize,
    /// Monte-Carlo risk at the analytic optimum `k*`.
    pub risk_at_kstar_mean: f64,
    pub risk_at_kstar_stderr: f64,
    pub k_star: usize,
    pub analytic_risk: f64,
}

/// PCR risk over an alpha grid on a frozen Gaussian design.
pub fn linreg_experiment(cfg: &LinregConfig, case: SpectrumCase) -> Result<Vec<LinregRow>> {
    cfg.validate()?;
    let x0 = gen_design(case, cfg.n, cfg.p, cfg.seed);
    let betastar = case.betastar(cfg.p);
    let noise = CounterRng::new(cfg.seed).domain("linreg-noise");
    let mut eps = vec![0.0; cfg.n];
    cfg.alphas
        .iter()
        .enumerate()
        .map(|(ai, &alpha)| {
            let tr = alpha_transform(&x0, alpha, Some(&betastar))?;
            let beta = tr.beta.expect("beta supplied");
            let svd = svd_reduce(&tr.x)?;
            let mean_y = &tr.x * &beta;
            let inst = to_sequence(&mean_y, &svd, Some(&beta), cfg.sigma0)?;
            let d = inst.esd()?;
            let theta = inst.signal().as_slice();
            let spectrum = inst.spectrum();
            let r = svd.rank();
            let mut per_k = vec![Vec::with_capacity(cfg.reps); r + 1];
            for rep in 0..cfg.reps {
                let stream = ((ai as u64) << 32) | rep as u64;
                noise.fill_normal(stream, 0, &mut eps);
                let y = &mean_y + DVector::from_column_slice(&eps) * cfg.sigma0;
                let z = svd.rotate(&y)?;
                for (k, loss) in pc_loss_curve(z.as_slice(), theta, spectrum).into_iter().enumerate() {
                    per_k[k].push(loss);
                }
            }
            let stats: Vec<stats::MeanStderr> = per_k.iter().map(|v| stats::mean_stderr(v)).collect();
            let k_mc = (1..=r)
                .min_by(|&a, &b| stats[a].mean.total_cmp(&stats[b].mean))
                .expect("rank >= 1");
            let curve = crate::estimators::pc_risk_curve(&inst);
            let k_star = (1..=r)
                .min_by(|&a, &b| curve[a].total.total_cmp(&curve[b].total))
                .expect("rank >= 1");
            Ok(LinregRow {
                alpha,
                esd: d,
                risk_mean: stats[k_mc].mean,
                risk_stderr: stats[k_mc].stderr,
                k_mc,
                risk_at_kstar_mean: stats[k_star].mean,
                risk_at_kstar_stderr: stats[k_star].stderr,
                k_star,
                analytic_risk: curve[k_star].total,
            })
        })
        .collect()
}

/// Write `x` as little-endian f64 in row-major order.
pub fn design_to_bytes(x: &DMatrix<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(x.len() * 8);
    for i in 0..x.nrows() {
        for j in 0..x.ncols() {
            out.extend_from_slice(&x[(i, j)].to_le_bytes());
        }
    }
    out
}

pub fn design_from_bytes(bytes: &[u8], n: usize, p: usize) -> Result<DMatrix<f64>> {
    if bytes.len() != n * p * 8 {
        return invalid(format!(
            "design file has {} bytes, expected {} for {n}x{p}",
            bytes.len(),
            n * p * 8
        ));
    }
    let vals: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok(DMatrix::from_row_slice(n, p, &vals))
}

/// Sidecar metadata for a persisted design matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignMeta {
    pub n: usize,
    pub p: usize,
    pub seed: u64,
    pub case: SpectrumCase,
}

pub fn save_design(path: &std::path::Path, x: &DMatrix<f64>, meta: &DesignMeta) -> Result<()> {
    std::fs::write(path, design_to_bytes(x))?;
    std::fs::write(path.with_extension("json"), serde_json::to_string_pretty(meta)?)?;
    Ok(())
}

pub fn load_design(path: &std::path::Path) -> Result<(DMatrix<f64>, DesignMeta)> {
    let meta: DesignMeta = serde_json::from_str(&std::fs::read_to_string(path.with_extension("json"))?)?;
    let x = design_from_bytes(&std::fs::read(path)?, meta.n, meta.p)?;
    Ok((x, meta))
}
