//! Sequence-model core: signals, sorted spectra, the trade-off function, the
//! effective span dimension (ESD) and span profiles, quota schedules, and a
//! few analytic reference signals.
//!
//! Coordinates are 0-based throughout. A [`SortedSpectrum`] orders
//! coordinates by descending eigenvalue with ties broken by ascending index,
//! and the trade-off function is defined on sorted position:
//!
//! ```text
//! H(k) = (1/k) * sum_{i > k} theta[perm[i]]^2,    k = 1..=d
//! ```
//!
//! The ESD at noise level `tau` is the smallest `k` with `H(k) <= tau`. The
//! comparison is an exact `<=` on doubles.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::CounterRng;

/// Coefficient sequence of a signal in a fixed coordinate basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SignalVector {
    coords: Vec<f64>,
}

impl SignalVector {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return invalid("signal must have at least one coordinate");
        }
        if let Some(i) = coords.iter().position(|v| !v.is_finite()) {
            return invalid(format!("signal coordinate {i} is not finite"));
        }
        Ok(Self { coords })
    }

    pub fn zeros(d: usize) -> Result<Self> {
        Self::new(vec![0.0; d])
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.coords
    }

    pub fn norm_sq(&self) -> f64 {
        self.coords.iter().map(|v| v * v).sum()
    }
}

impl TryFrom<Vec<f64>> for SignalVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<SignalVector> for Vec<f64> {
    fn from(s: SignalVector) -> Self {
        s.coords
    }
}

/// Eigenvalues together with the stable descending permutation.
#[derive(Debug, Clone, PartialEq)]
pub struct SortedSpectrum {
    raw: Vec<f64>,
    perm: Vec<usize>,
}

impl SortedSpectrum {
    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    /// Eigenvalues in their original coordinate order.
    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    /// `perm[k]` is the coordinate holding the `(k+1)`-th largest eigenvalue.
    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    /// Inverse permutation: `ranks()[j]` is the 0-based sorted position of coordinate `j`.
    pub fn ranks(&self) -> Vec<usize> {
        let mut ranks = vec![0; self.perm.len()];
        for (pos, &j) in self.perm.iter().enumerate() {
            ranks[j] = pos;
        }
        ranks
    }

    pub fn sorted_values(&self) -> Vec<f64> {
        self.perm.iter().map(|&j| self.raw[j]).collect()
    }

    /// Coordinates occupying the top `k` sorted positions.
    pub fn top(&self, k: usize) -> &[usize] {
        &self.perm[..k.min(self.perm.len())]
    }
}

impl Serialize for SortedSpectrum {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.raw.serialize(s)
    }
}

impl<'de> Deserialize<'de> for SortedSpectrum {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = Vec::<f64>::deserialize(d)?;
        sort_spectrum(&raw).map_err(serde::de::Error::custom)
    }
}

/// Sort eigenvalues in descending order; equal values keep ascending index order.
pub fn sort_spectrum(lambda: &[f64]) -> Result<SortedSpectrum> {
    if lambda.is_empty() {
        return invalid("spectrum must have at least one eigenvalue");
    }
    if let Some(i) = lambda.iter().position(|v| !v.is_finite() || *v < 0.0) {
        return invalid(format!(
            "eigenvalue {i} = {} must be finite and nonnegative",
            lambda[i]
        ));
    }
    let mut perm: Vec<usize> = (0..lambda.len()).collect();
    // slice::sort_by is stable, so ties stay in index order.
    perm.sort_by(|&a, &b| lambda[b].total_cmp(&lambda[a]));
    Ok(SortedSpectrum {
        raw: lambda.to_vec(),
        perm,
    })
}

fn check_lengths(signal: &SignalVector, spectrum: &SortedSpectrum) -> Result<()> {
    if signal.len() != spectrum.len() {
        return invalid(format!(
            "signal has {} coordinates but spectrum has {}",
            signal.len(),
            spectrum.len()
        ));
    }
    Ok(())
}

/// The full trade-off function `H(1..=d)` for one (signal, spectrum) pair.
///
/// `tail_energy` is an extra squared mass added to every tail sum. It models
/// signal energy beyond a finite truncation (or the systematic bias of a
/// finite-rank kernel).
#[derive(Debug, Clone, PartialEq)]
pub struct TradeoffCurve {
    values: Vec<f64>,
}

impl TradeoffCurve {
    pub fn new(signal: &SignalVector, spectrum: &SortedSpectrum) -> Result<Self> {
        Self::with_tail(signal, spectrum, 0.0)
    }

    pub fn with_tail(
        signal: &SignalVector,
        spectrum: &SortedSpectrum,
        tail_energy: f64,
    ) -> Result<Self> {
        check_lengths(signal, spectrum)?;
        if !(tail_energy.is_finite() && tail_energy >= 0.0) {
            return invalid(format!("tail energy {tail_energy} must be finite and >= 0"));
        }
        let theta = signal.as_slice();
        let tails = sorted_tails(theta, spectrum.perm(), tail_energy);
        let values = (1..=theta.len())
            .map(|k| tails[k] / k as f64)
            .collect::<Vec<_>>();
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// `H(k)` for `1 <= k <= d`.
    pub fn value(&self, k: usize) -> Result<f64> {
        if k == 0 || k > self.values.len() {
            return invalid(format!("k = {k} outside 1..={}", self.values.len()));
        }
        Ok(self.values[k - 1])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Smallest `k` with `H(k) <= tau`, or `None` when even `H(d)` exceeds `tau`
    /// (only possible with a positive tail energy).
    pub fn first_below(&self, tau: f64) -> Option<usize> {
        // H is nonincreasing in floating point as well: the suffix sums only
        // accumulate nonnegative terms and rounded division is monotone.
        let k = self.values.partition_point(|&h| h > tau);
        (k < self.values.len()).then_some(k + 1)
    }

    pub fn esd(&self, tau: f64) -> Result<usize> {
        check_tau(tau)?;
        self.first_below(tau).ok_or_else(|| {
            Error::InvalidInput(format!(
                "H(d) = {} exceeds tau = {tau}; the residual tail energy is too large",
                self.values.last().copied().unwrap_or(f64::NAN)
            ))
        })
    }
}

/// Suffix sums of squared signal in sorted order: `tails[k] = tail + sum_{i >= k} theta[perm[i]]^2`.
pub(crate) fn sorted_tails(theta: &[f64], perm: &[usize], tail_energy: f64) -> Vec<f64> {
    let d = perm.len();
    let mut tails = vec![0.0; d + 1];
    tails[d] = tail_energy;
    for k in (0..d).rev() {
        let v = theta[perm[k]];
        tails[k] = tails[k + 1] + v * v;
    }
    tails
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0) || !tau.is_finite() {
        return invalid(format!("noise level tau = {tau} must be finite and > 0"));
    }
    Ok(())
}

/// `H(k) = (1/k) * sum_{i=k+1}^{d} theta_{pi_i}^2`, with 1-based `k`.
pub fn tradeoff_h(signal: &SignalVector, spectrum: &SortedSpectrum, k: usize) -> Result<f64> {
    check_lengths(signal, spectrum)?;
    let d = signal.len();
    if k == 0 || k > d {
        return invalid(format!("k = {k} outside 1..={d}"));
    }
    let theta = signal.as_slice();
    let tail: f64 = spectrum.perm()[k..]
        .iter()
        .rev()
        .map(|&j| theta[j] * theta[j])
        .sum();
    Ok(tail / k as f64)
}

/// Effective span dimension of `signal` w.r.t. `spectrum` at noise level `tau`.
pub fn esd(signal: &SignalVector, spectrum: &SortedSpectrum, tau: f64) -> Result<usize> {
    check_tau(tau)?;
    TradeoffCurve::new(signal, spectrum)?.esd(tau)
}

/// ESD with an additional analytic tail energy beyond the stored coordinates.
pub fn esd_with_tail(
    signal: &SignalVector,
    spectrum: &SortedSpectrum,
    tau: f64,
    tail_energy: f64,
) -> Result<usize> {
    check_tau(tau)?;
    TradeoffCurve::with_tail(signal, spectrum, tail_energy)?.esd(tau)
}

/// ESD evaluated at every noise level in `taus`.
pub fn span_profile(
    signal: &SignalVector,
    spectrum: &SortedSpectrum,
    taus: &[f64],
) -> Result<Vec<usize>> {
    if taus.is_empty() {
        return invalid("span profile needs at least one tau");
    }
    taus.iter().try_for_each(|&t| check_tau(t))?;
    let curve = TradeoffCurve::new(signal, spectrum)?;
    taus.iter().map(|&t| curve.esd(t)).collect()
}

/// One point of a span profile, as serialized to JSON.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EsdRecord {
    pub tau: f64,
    pub esd: usize,
}

pub fn profile_records(taus: &[f64], profile: &[usize]) -> Vec<EsdRecord> {
    taus.iter()
        .zip(profile)
        .map(|(&tau, &esd)| EsdRecord { tau, esd })
        .collect()
}

/// `n` points spaced evenly in log scale on `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi >= lo && n >= 1) {
        return invalid(format!("bad log grid [{lo}, {hi}] with {n} points"));
    }
    if n == 1 {
        return Ok(vec![lo]);
    }
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect())
}

// ---------------------------------------------------------------------------
// Sequence-model instances and noise
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    IidGaussian,
    /// Uniform on `[-sqrt(3) sigma, sqrt(3) sigma]`: bounded, hence sub-Gaussian.
    IidSubgaussianBounded,
}

/// How observation noise is drawn: per-coordinate standard deviation and seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub sigma0: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn gaussian(sigma0: f64, seed: u64) -> Result<Self> {
        let spec = Self {
            kind: NoiseKind::IidGaussian,
            sigma0,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma0 > 0.0 && self.sigma0.is_finite()) {
            return invalid(format!("sigma0 = {} must be > 0", self.sigma0));
        }
        Ok(())
    }

    /// Noise for coordinates `0..d` of replication `rep`.
    pub fn draw(&self, rep: u64, d: usize) -> Vec<f64> {
        let rng = CounterRng::new(self.seed).domain("seq-noise");
        let mut out = vec![0.0; d];
        match self.kind {
            NoiseKind::IidGaussian => {
                rng.fill_normal(rep, 0, &mut out);
                out.iter_mut().for_each(|v| *v *= self.sigma0);
            }
            NoiseKind::IidSubgaussianBounded => {
                rng.fill_uniform(rep, 0, &mut out);
                let half = 3f64.sqrt() * self.sigma0;
                out.iter_mut().for_each(|v| *v = (2.0 * *v - 1.0) * half);
            }
        }
        out
    }
}

/// A sequence-model problem `z_j = theta_j + xi_j` with `Var(xi_j) = noise_var`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqInstance {
    signal: SignalVector,
    spectrum: SortedSpectrum,
    noise_var: f64,
    obs: Option<Vec<f64>>,
}

impl SeqInstance {
    pub fn new(signal: SignalVector, spectrum: SortedSpectrum, noise_var: f64) -> Result<Self> {
        check_lengths(&signal, &spectrum)?;
        if !(noise_var > 0.0 && noise_var.is_finite()) {
            return invalid(format!("noise variance {noise_var} must be > 0"));
        }
        Ok(Self {
            signal,
            spectrum,
            noise_var,
            obs: None,
        })
    }

    pub fn with_obs(mut self, obs: Vec<f64>) -> Result<Self> {
        if obs.len() != self.signal.len() {
            return invalid(format!(
                "observation length {} differs from dimension {}",
                obs.len(),
                self.signal.len()
            ));
        }
        if obs.iter().any(|v| !v.is_finite()) {
            return invalid("observations must be finite");
        }
        self.obs = Some(obs);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.signal.len()
    }

    pub fn signal(&self) -> &SignalVector {
        &self.signal
    }

    pub fn spectrum(&self) -> &SortedSpectrum {
        &self.spectrum
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn obs(&self) -> Option<&[f64]> {
        self.obs.as_deref()
    }

    pub fn require_obs(&self) -> Result<&[f64]> {
        self.obs
            .as_deref()
            .ok_or_else(|| Error::InvalidState("instance has no observations".into()))
    }

    /// Same signal and noise level under a different spectrum; observations are kept.
    pub fn with_spectrum(&self, spectrum: SortedSpectrum) -> Result<Self> {
        check_lengths(&self.signal, &spectrum)?;
        Ok(Self {
            spectrum,
            ..self.clone()
        })
    }

    /// ESD of the instance at its own noise variance.
    pub fn esd(&self) -> Result<usize> {
        esd(&self.signal, &self.spectrum, self.noise_var)
    }
}

/// Draw `z = theta + xi` using replication 0 of `noise`.
///
/// The draw uses `noise.sigma0` as the per-coordinate standard deviation and
/// the returned instance records `noise_var = sigma0^2`.
pub fn sample_observations(instance: &SeqInstance, noise: &NoiseSpec) -> Result<SeqInstance> {
    sample_observations_rep(instance, noise, 0)
}

pub fn sample_observations_rep(
    instance: &SeqInstance,
    noise: &NoiseSpec,
    rep: u64,
) -> Result<SeqInstance> {
    noise.validate()?;
    let xi = noise.draw(rep, instance.dim());
    let z = instance
        .signal
        .as_slice()
        .iter()
        .zip(&xi)
        .map(|(t, e)| t + e)
        .collect();
    let mut out = instance.clone();
    out.noise_var = noise.sigma0 * noise.sigma0;
    out.with_obs(z)
}

// ---------------------------------------------------------------------------
// Quota schedules and class membership
// ---------------------------------------------------------------------------

/// `K_n` for `n = 1..=N_max`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuotaSequence {
    values: Vec<usize>,
}

impl QuotaSequence {
    /// Build from `K_1, K_2, ...`; every quota must be at least 1.
    pub fn from_values(values: Vec<usize>) -> Result<Self> {
        if values.is_empty() {
            return invalid("quota sequence is empty");
        }
        if let Some(i) = values.iter().position(|&k| k == 0) {
            return invalid(format!("K_{} = 0; quotas must be >= 1", i + 1));
        }
        Ok(Self { values })
    }

    /// `K_n = max(1, ceil(f(n)))`.
    pub fn from_fn(n_max: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = (1..=n_max)
            .map(|n| {
                let v = f(n as f64).ceil();
                if v.is_finite() && v >= 1.0 {
                    v as usize
                } else {
                    1
                }
            })
            .collect();
        Self::from_values(values)
    }

    /// `K_n = ceil(n^a)`.
    pub fn power(a: f64, n_max: usize) -> Result<Self> {
        Self::from_fn(n_max, |n| n.powf(a))
    }

    /// `K_n = max(1, ceil((ln n)^b))`.
    pub fn log_power(b: f64, n_max: usize) -> Result<Self> {
        Self::from_fn(n_max, |n| n.ln().powf(b))
    }

    pub fn horizon(&self) -> usize {
        self.values.len()
    }

    /// `K_n` for 1-based `n`.
    pub fn get(&self, n: usize) -> Option<usize> {
        n.checked_sub(1).and_then(|i| self.values.get(i)).copied()
    }

    pub fn values(&self) -> &[usize] {
        &self.values
    }

    /// `M_k = max{n <= N_max : K_n = k}` for every attained `k`.
    pub fn last_attained(&self) -> std::collections::BTreeMap<usize, usize> {
        let mut m = std::collections::BTreeMap::new();
        for (i, &k) in self.values.iter().enumerate() {
            m.insert(k, i + 1);
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuotaReport {
    pub unit_step_ok: bool,
    pub ratio_monotone_ok: bool,
    /// First `n` with `K_{n+1} - K_n > 1`.
    pub first_step_violation: Option<usize>,
    /// First `k` with `(k+1)/M_{k+1} > k/M_k`.
    pub first_ratio_violation: Option<usize>,
}

/// Check the growth regularity of a quota schedule from `n0` onwards.
///
/// The unit-step check covers every `n >= n0`. The ratio check covers
/// consecutive attained quotas `k, k+1` with `k >= K_{n0}`; the largest
/// attained quota is skipped because its `M_k` is cut off by the horizon.
pub fn check_quota_schedule(quota: &QuotaSequence, n0: usize) -> QuotaReport {
    let n0 = n0.max(1);
    let vals = quota.values();
    let first_step_violation = (n0..vals.len())
        .find(|&n| vals[n] > vals[n - 1] + 1);

    let m = quota.last_attained();
    let k_floor = quota.get(n0).unwrap_or(usize::MAX);
    let censored = m
        .iter()
        .find(|(_, &mk)| mk == quota.horizon())
        .map(|(&k, _)| k);
    let first_ratio_violation = m
        .iter()
        .filter(|(&k, _)| k >= k_floor && Some(k + 1) != censored && Some(k) != censored)
        .find_map(|(&k, &mk)| {
            let mk1 = *m.get(&(k + 1))?;
            // (k+1)/M_{k+1} <= k/M_k  <=>  (k+1) M_k <= k M_{k+1}
            let lhs = (k as u128 + 1) * mk as u128;
            let rhs = k as u128 * mk1 as u128;
            (lhs > rhs).then_some(k)
        });
    QuotaReport {
        unit_step_ok: first_step_violation.is_none(),
        ratio_monotone_ok: first_ratio_violation.is_none(),
        first_step_violation,
        first_ratio_violation,
    }
}

/// Whether `D(sigma0^2 / n) <= K_n` holds at every `n` in `n_grid`.
pub fn class_membership(
    signal: &SignalVector,
    spectrum: &SortedSpectrum,
    quota: &QuotaSequence,
    sigma0: f64,
    n_grid: &[usize],
) -> Result<bool> {
    class_membership_with_tail(signal, spectrum, 0.0, quota, sigma0, n_grid)
}

pub fn class_membership_with_tail(
    signal: &SignalVector,
    spectrum: &SortedSpectrum,
    tail_energy: f64,
    quota: &QuotaSequence,
    sigma0: f64,
    n_grid: &[usize],
) -> Result<bool> {
    if n_grid.is_empty() {
        return invalid("n grid is empty");
    }
    if let Some(n) = n_grid.iter().find(|&&n| n == 0 || n > quota.horizon()) {
        return invalid(format!("n = {n} outside 1..={}", quota.horizon()));
    }
    if !(sigma0 > 0.0 && sigma0.is_finite()) {
        return invalid(format!("sigma0 = {sigma0} must be > 0"));
    }
    let curve = TradeoffCurve::with_tail(signal, spectrum, tail_energy)?;
    for &n in n_grid {
        let tau = sigma0 * sigma0 / n as f64;
        let k_n = quota.get(n).expect("checked against horizon");
        match curve.first_below(tau) {
            Some(d) if d <= k_n => {}
            _ => return Ok(false),
        }
    }
    Ok(true)
}

// ---------------------------------------------------------------------------
// Analytic reference signals and rates
// ---------------------------------------------------------------------------

/// Signal whose trade-off function under any decreasing spectrum is
/// `sigma0^2 * exp(-k^b)` (minus a truncation correction at finite `d`).
///
/// `theta_1 = 0` and `theta_{j+1}^2 = sigma0^2 (j e^{-j^b} - (j+1) e^{-(j+1)^b})`.
pub fn fast_rate_signal(b: f64, sigma0: f64, d: usize) -> Result<SignalVector> {
    if !(b >= 1.0) || !b.is_finite() {
        return invalid(format!("b = {b} must be >= 1"));
    }
    if !(sigma0 > 0.0 && sigma0.is_finite()) {
        return invalid(format!("sigma0 = {sigma0} must be > 0"));
    }
    if d < 2 {
        return invalid(format!("d = {d} must be >= 2"));
    }
    let s2 = sigma0 * sigma0;
    let f = |x: f64| x * (-x.powf(b)).exp();
    let mut coords = Vec::with_capacity(d);
    coords.push(0.0);
    for j in 1..d {
        let j = j as f64;
        let diff = (f(j) - f(j + 1.0)).max(0.0);
        coords.push((s2 * diff).sqrt());
    }
    SignalVector::new(coords)
}

/// Squared energy the infinite fast-rate signal places beyond coordinate `d`.
pub fn fast_rate_tail(b: f64, sigma0: f64, d: usize) -> f64 {
    let d = d as f64;
    sigma0 * sigma0 * d * (-d.powf(b)).exp()
}

/// The four canonical (signal, spectrum) settings with closed-form PC rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "setting", rename_all = "kebab-case")]
pub enum CanonicalSetting {
    /// `lambda_i = i^-beta` with a source condition of order `s`.
    PolySource { beta: f64, s: f64 },
    /// `theta_i = i^{-alpha/2}` with `alpha > 1`.
    PolySignalGt1 { alpha: f64 },
    /// `theta_i = i^{-1/2}`, finite `d`.
    PolySignalEq1,
    /// `theta_i = i^{-alpha/2}` with `0 < alpha < 1`, finite `d`.
    PolySignalLt1 { alpha: f64 },
}

/// Order-of-magnitude rate of the optimal PC risk; `d = None` means infinite dimension.
pub fn canonical_rate_bound(
    setting: CanonicalSetting,
    noise_var: f64,
    d: Option<usize>,
) -> Result<f64> {
    if !(noise_var > 0.0 && noise_var.is_finite()) {
        return invalid(format!("noise variance {noise_var} must be > 0"));
    }
    let d_sigma = d.map(|d| d as f64 * noise_var).unwrap_or(f64::INFINITY);
    let need_finite = || {
        d.filter(|&d| d >= 1)
            .map(|d| d as f64)
            .ok_or_else(|| Error::InvalidInput("this setting requires a finite d".into()))
    };
    match setting {
        CanonicalSetting::PolySource { beta, s } => {
            if !(beta > 0.0 && s > 0.0) {
                return invalid("poly-source needs beta > 0 and s > 0");
            }
            let e = s * beta / (1.0 + s * beta);
            Ok(noise_var.powf(e).min(d_sigma))
        }
        CanonicalSetting::PolySignalGt1 { alpha } => {
            if !(alpha > 1.0 && alpha.is_finite()) {
                return invalid("poly-signal-gt1 needs alpha > 1");
            }
            Ok(noise_var.powf(1.0 - 1.0 / alpha).min(d_sigma))
        }
        CanonicalSetting::PolySignalEq1 => {
            let ds = need_finite()? * noise_var;
            if ds <= std::f64::consts::E {
                Ok(ds)
            } else {
                Ok((ds / ds.ln()).ln())
            }
        }
        CanonicalSetting::PolySignalLt1 { alpha } => {
            if !(alpha > 0.0 && alpha < 1.0) {
                return invalid("poly-signal-lt1 needs 0 < alpha < 1");
            }
            let d = need_finite()?;
            Ok(d * d.powf(-alpha).min(noise_var))
        }
    }
}

// ---------------------------------------------------------------------------
// Signal-agnostic diagnostics
// ---------------------------------------------------------------------------

/// Ridge effective dimension `sum_j lambda_j / (lambda_j + nu)`.
pub fn effective_dimension(spectrum: &SortedSpectrum, nu: f64) -> Result<f64> {
    if !(nu > 0.0) {
        return invalid(format!("nu = {nu} must be > 0"));
    }
    Ok(spectrum.raw().iter().map(|l| l / (l + nu)).sum())
}

/// Splitting index `min{k >= 0 : sigma^2 r_k >= b}` with effective rank
/// `r_k = sum_{i>k} lambda_{pi_i} / lambda_{pi_{k+1}}`.
pub fn splitting_index(spectrum: &SortedSpectrum, noise_var: f64, b: f64) -> Option<usize> {
    let sorted = spectrum.sorted_values();
    let d = sorted.len();
    let mut tail = vec![0.0; d + 1];
    for k in (0..d).rev() {
        tail[k] = tail[k + 1] + sorted[k];
    }
    (0..d).find(|&k| sorted[k] > 0.0 && noise_var * tail[k] / sorted[k] >= b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig(v: &[f64]) -> SignalVector {
        SignalVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn sort_orders_and_breaks_ties_by_index() {
        assert_eq!(sort_spectrum(&[3.0, 1.0, 2.0]).unwrap().perm(), &[0, 2, 1]);
        assert_eq!(sort_spectrum(&[1.0, 1.0, 1.0]).unwrap().perm(), &[0, 1, 2]);
        assert_eq!(
            sort_spectrum(&[2.0, 5.0, 2.0, 5.0]).unwrap().perm(),
            &[1, 3, 0, 2]
        );
    }

    #[test]
    fn sort_rejects_bad_input() {
        assert!(matches!(sort_spectrum(&[]), Err(Error::InvalidInput(_))));
        assert!(sort_spectrum(&[1.0, -0.5]).is_err());
        assert!(sort_spectrum(&[f64::NAN]).is_err());
        assert!(sort_spectrum(&[f64::INFINITY]).is_err());
    }

    #[test]
    fn tradeoff_small_example() {
        let s = sig(&[2.0, 1.0, 0.1]);
        let l = sort_spectrum(&[3.0, 2.0, 1.0]).unwrap();
        assert!((tradeoff_h(&s, &l, 1).unwrap() - 1.01).abs() < 1e-15);
        assert_eq!(tradeoff_h(&s, &l, 3).unwrap(), 0.0);
        assert!(tradeoff_h(&s, &l, 0).is_err());
        assert!(tradeoff_h(&s, &l, 4).is_err());
    }

    #[test]
    fn esd_small_example() {
        let s = sig(&[2.0, 1.0, 0.1]);
        let l = sort_spectrum(&[3.0, 2.0, 1.0]).unwrap();
        assert_eq!(esd(&s, &l, 1.0).unwrap(), 2);
        assert!(esd(&s, &l, 0.0).is_err());
        assert!(esd(&s, &l, -1.0).is_err());
        let zero = SignalVector::zeros(10).unwrap();
        let l10 = sort_spectrum(&(0..10).map(|i| i as f64).collect::<Vec<_>>()).unwrap();
        assert_eq!(esd(&zero, &l10, 1e-9).unwrap(), 1);
    }

    #[test]
    fn span_profile_example() {
        let s = sig(&[2.0, 1.0, 0.1]);
        let l = sort_spectrum(&[3.0, 2.0, 1.0]).unwrap();
        // H = (1.01, 0.005, 0)
        let p = span_profile(&s, &l, &[0.001, 0.01, 0.1, 1.0]).unwrap();
        assert_eq!(p, vec![3, 2, 2, 2]);
        assert_eq!(span_profile(&s, &l, &[0.004, 0.0051]).unwrap(), vec![3, 2]);
        assert_eq!(span_profile(&s, &l, &[1.0]).unwrap(), vec![2]);
        assert!(span_profile(&s, &l, &[]).is_err());
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let s = sig(&[1.0, 2.0]);
        let l = sort_spectrum(&[1.0, 2.0, 3.0]).unwrap();
        assert!(esd(&s, &l, 1.0).is_err());
        assert!(SeqInstance::new(s, l, 1.0).is_err());
    }

    #[test]
    fn tail_energy_shifts_esd() {
        let s = sig(&[1.0, 0.0]);
        let l = sort_spectrum(&[2.0, 1.0]).unwrap();
        assert_eq!(esd_with_tail(&s, &l, 0.5, 0.0).unwrap(), 1);
        // tail 1.0: H(1) = 1.0, H(2) = 0.5
        assert_eq!(esd_with_tail(&s, &l, 0.5, 1.0).unwrap(), 2);
        assert!(esd_with_tail(&s, &l, 0.1, 1.0).is_err());
    }

    #[test]
    fn quota_unit_step_violation() {
        let q = QuotaSequence::from_values(vec![1, 3, 4, 5]).unwrap();
        let r = check_quota_schedule(&q, 1);
        assert!(!r.unit_step_ok);
        assert_eq!(r.first_step_violation, Some(1));
        assert!(QuotaSequence::from_values(vec![1, 0]).is_err());
    }

    #[test]
    fn quota_ratio_violation() {
        // M_1 = 4, M_2 = 5, M_3 = 9 (censored): 2/5 > 1/4 fails at k = 1.
        let q = QuotaSequence::from_values(vec![1, 1, 1, 1, 2, 3, 3, 3, 3]).unwrap();
        let r = check_quota_schedule(&q, 1);
        assert!(r.unit_step_ok);
        assert_eq!(r.first_ratio_violation, Some(1));
    }

    #[test]
    fn class_membership_cases() {
        let zero = SignalVector::zeros(5).unwrap();
        let l = sort_spectrum(&[5.0, 4.0, 3.0, 2.0, 1.0]).unwrap();
        let ones = QuotaSequence::from_values(vec![1; 100]).unwrap();
        assert!(class_membership(&zero, &l, &ones, 1.0, &[1, 10, 100]).unwrap());
        // H(1) = sigma0^2 exactly, so at n = 2 the ESD is at least 2.
        let s = sig(&[0.0, 1.0, 0.0, 0.0, 0.0]);
        assert_eq!(tradeoff_h(&s, &l, 1).unwrap(), 1.0);
        assert!(!class_membership(&s, &l, &ones, 1.0, &[2]).unwrap());
        assert!(class_membership(&s, &l, &ones, 1.0, &[1]).unwrap());
        assert!(class_membership(&s, &l, &ones, 1.0, &[]).is_err());
        assert!(class_membership(&s, &l, &ones, 1.0, &[101]).is_err());
    }

    #[test]
    fn fast_rate_signal_shape() {
        let s = fast_rate_signal(2.0, 1.0, 40).unwrap();
        assert_eq!(s.as_slice()[0], 0.0);
        assert!(s.as_slice().iter().all(|v| v.is_finite() && *v >= 0.0));
        assert!(fast_rate_signal(0.5, 1.0, 10).is_err());
        assert!(fast_rate_signal(1.0, 1.0, 1).is_err());
    }

    #[test]
    fn fast_rate_h_at_five() {
        let d = 40;
        let s = fast_rate_signal(2.0, 1.0, d).unwrap();
        let l = sort_spectrum(&(1..=d).map(|j| 1.0 / j as f64).collect::<Vec<_>>()).unwrap();
        let h = TradeoffCurve::with_tail(&s, &l, fast_rate_tail(2.0, 1.0, d)).unwrap();
        let want = (-25f64).exp();
        assert!((h.value(5).unwrap() - want).abs() <= 1e-12 * want);
    }

    #[test]
    fn canonical_rates() {
        let r = canonical_rate_bound(CanonicalSetting::PolySignalGt1 { alpha: 2.0 }, 1e-4, Some(1_000_000))
            .unwrap();
        assert!((r - 0.01).abs() < 1e-15);
        let r = canonical_rate_bound(CanonicalSetting::PolySignalGt1 { alpha: 2.0 }, 1e-4, Some(10))
            .unwrap();
        assert!((r - 1e-3).abs() < 1e-15);
        let e = std::f64::consts::E;
        let r = canonical_rate_bound(CanonicalSetting::PolySignalEq1, e / 100.0, Some(100)).unwrap();
        assert!((r - e).abs() < 1e-12);
        let r = canonical_rate_bound(CanonicalSetting::PolySignalEq1, 1.0, Some(100)).unwrap();
        assert!((r - (100f64 / 100f64.ln()).ln()).abs() < 1e-12);
        assert!(canonical_rate_bound(CanonicalSetting::PolySignalEq1, 1.0, None).is_err());
        assert!(canonical_rate_bound(CanonicalSetting::PolySignalGt1 { alpha: 1.0 }, 1.0, None).is_err());
        assert!(canonical_rate_bound(CanonicalSetting::PolySignalLt1 { alpha: 1.5 }, 1.0, Some(3)).is_err());
        let r = canonical_rate_bound(CanonicalSetting::PolySignalLt1 { alpha: 0.5 }, 0.01, Some(100)).unwrap();
        assert!((r - 100.0 * 0.01).abs() < 1e-12);
        let r = canonical_rate_bound(CanonicalSetting::PolySource { beta: 1.0, s: 1.0 }, 1e-4, None).unwrap();
        assert!((r - 1e-2).abs() < 1e-15);
    }

    #[test]
    fn sampling_is_deterministic_and_vanishes() {
        let s = sig(&[1.0, -2.0, 0.5]);
        let l = sort_spectrum(&[1.0, 2.0, 3.0]).unwrap();
        let inst = SeqInstance::new(s.clone(), l, 1.0).unwrap();
        let tiny = NoiseSpec::gaussian(1e-12, 3).unwrap();
        let z = sample_observations(&inst, &tiny).unwrap();
        for (a, b) in z.require_obs().unwrap().iter().zip(s.as_slice()) {
            assert!((a - b).abs() < 1e-9);
        }
        let n = NoiseSpec::gaussian(0.7, 11).unwrap();
        let a = sample_observations(&inst, &n).unwrap();
        let b = sample_observations(&inst, &n).unwrap();
        assert_eq!(a.require_obs().unwrap(), b.require_obs().unwrap());
        assert_eq!(a.noise_var(), 0.7 * 0.7);
    }

    #[test]
    fn bounded_noise_is_bounded() {
        let spec = NoiseSpec {
            kind: NoiseKind::IidSubgaussianBounded,
            sigma0: 2.0,
            seed: 5,
        };
        let xi = spec.draw(0, 10_000);
        assert!(xi.iter().all(|v| v.abs() <= 3f64.sqrt() * 2.0));
        let var = xi.iter().map(|v| v * v).sum::<f64>() / xi.len() as f64;
        assert!((var - 4.0).abs() < 0.2);
    }

    #[test]
    fn diagnostics_ignore_signal_placement() {
        let l1 = sort_spectrum(&[4.0, 3.0, 2.0, 1.0]).unwrap();
        let l2 = sort_spectrum(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(
            effective_dimension(&l1, 1.0).unwrap(),
            effective_dimension(&l2, 1.0).unwrap()
        );
        assert_eq!(splitting_index(&l1, 1.0, 1.5), splitting_index(&l2, 1.0, 1.5));
        // r_0 = 10/4 = 2.5 >= 1.5
        assert_eq!(splitting_index(&l1, 1.0, 1.5), Some(0));
    }
}
