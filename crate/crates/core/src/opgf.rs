//! Over-parameterized gradient flow (OP-GF) that learns the spectrum.
//!
//! Each coordinate is parameterized as `theta_j = a_j b_j^D beta_j` and trained
//! by gradient flow on `(z_j - theta_j)^2 / 2`. Because all depth factors start
//! equal they stay equal, so a single `b_j` is stored:
//!
//! ```text
//! a'    = b^D beta r
//! b'    = D a b^(D-1) beta r
//! beta' = a b^D r,              r = z - a b^D beta
//! ```
//!
//! with `a(0) = sqrt(lambda)`, `b(0) = b0`, `beta(0) = 0`. The flow conserves
//! `a^2 - beta^2` and `b^2 - D beta^2`. The learned eigenvalue is
//! `(a b^D)^2` and the estimate is `sqrt(learned eigenvalue) * beta`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::estimators::{squared_error, truncate_top_k};
use crate::seqcore::{sort_spectrum, SignalVector, SortedSpectrum, TradeoffCurve};

/// Time-stepping scheme for the collapsed dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Integrator {
    /// Explicit Euler, i.e. plain gradient descent with step `dt`.
    Euler,
    /// Classical fourth-order Runge-Kutta.
    #[default]
    Rk4,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpgfState {
    depth: u32,
    a: Vec<f64>,
    b: Vec<f64>,
    beta: Vec<f64>,
    t: f64,
    a0: Vec<f64>,
    b0: f64,
}

/// Largest relative violation of the two conservation laws.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ConservationDrift {
    /// `max_j |a^2 - beta^2 - a0^2| / (1 + a0^2)`
    pub a: f64,
    /// `max_j |b^2 - D beta^2 - b0^2| / (1 + b0^2)`
    pub b: f64,
}

impl ConservationDrift {
    fn absorb(&mut self, other: ConservationDrift) {
        self.a = self.a.max(other.a);
        self.b = self.b.max(other.b);
    }

    pub fn max(&self) -> f64 {
        self.a.max(self.b)
    }
}

pub fn opgf_init(spectrum: &SortedSpectrum, depth: u32, b0: f64) -> Result<OpgfState> {
    let b0 = if depth == 0 {
        1.0
    } else if b0 > 0.0 && b0.is_finite() {
        b0
    } else {
        return invalid(format!("b0 = {b0} must be > 0 when D >= 1"));
    };
    let a0: Vec<f64> = spectrum.raw().iter().map(|l| l.sqrt()).collect();
    let d = a0.len();
    Ok(OpgfState {
        depth,
        a: a0.clone(),
        b: vec![b0; d],
        beta: vec![0.0; d],
        t: 0.0,
        a0,
        b0,
    })
}

impl OpgfState {
    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn a0(&self) -> &[f64] {
        &self.a0
    }

    pub fn b0(&self) -> f64 {
        self.b0
    }

    /// Current fitted values `theta_j = a_j b_j^D beta_j`.
    pub fn theta(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|j| self.a[j] * self.b[j].powi(self.depth as i32) * self.beta[j])
            .collect()
    }

    /// `(a_j b_j^D)^2` in coordinate order.
    pub fn learned_eigenvalues(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|j| {
                let g = self.a[j] * self.b[j].powi(self.depth as i32);
                g * g
            })
            .collect()
    }

    /// `sqrt(learned eigenvalue) * beta`, which equals `theta`.
    pub fn estimate(&self) -> Vec<f64> {
        self.learned_eigenvalues()
            .iter()
            .zip(&self.beta)
            .map(|(l, b)| l.sqrt() * b)
            .collect()
    }

    pub fn drift(&self) -> ConservationDrift {
        let mut out = ConservationDrift::default();
        for j in 0..self.dim() {
            out.absorb(coord_drift(
                self.depth,
                [self.a[j], self.b[j], self.beta[j]],
                self.a0[j],
                self.b0,
            ));
        }
        out
    }
}

fn coord_drift(depth: u32, s: [f64; 3], a0: f64, b0: f64) -> ConservationDrift {
    let [a, b, beta] = s;
    ConservationDrift {
        a: (a * a - beta * beta - a0 * a0).abs() / (1.0 + a0 * a0),
        b: (b * b - depth as f64 * beta * beta - b0 * b0).abs() / (1.0 + b0 * b0),
    }
}

#[inline]
fn rhs(depth: u32, s: [f64; 3], z: f64) -> [f64; 3] {
    let [a, b, beta] = s;
    let (bd, bd1) = if depth == 0 {
        (1.0, 0.0)
    } else {
        let bd1 = b.powi(depth as i32 - 1);
        (bd1 * b, bd1)
    };
    let r = z - a * bd * beta;
    [bd * beta * r, depth as f64 * a * bd1 * beta * r, a * bd * r]
}

#[inline]
fn axpy(s: [f64; 3], h: f64, k: [f64; 3]) -> [f64; 3] {
    [s[0] + h * k[0], s[1] + h * k[1], s[2] + h * k[2]]
}

#[inline]
fn step_coord(depth: u32, s: [f64; 3], z: f64, h: f64, integrator: Integrator) -> [f64; 3] {
    match integrator {
        Integrator::Euler => axpy(s, h, rhs(depth, s, z)),
        Integrator::Rk4 => {
            let k1 = rhs(depth, s, z);
            let k2 = rhs(depth, axpy(s, 0.5 * h, k1), z);
            let k3 = rhs(depth, axpy(s, 0.5 * h, k2), z);
            let k4 = rhs(depth, axpy(s, h, k3), z);
            [
                s[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
                s[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
                s[2] + h / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]),
            ]
        }
    }
}

fn check_obs(state: &OpgfState, z: &[f64]) -> Result<()> {
    if z.len() != state.dim() {
        return invalid(format!(
            "observation length {} differs from dimension {}",
            z.len(),
            state.dim()
        ));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return invalid("observations must be finite");
    }
    Ok(())
}

/// One explicit-Euler step of length `dt`.
pub fn opgf_step(state: &OpgfState, z: &[f64], dt: f64) -> Result<OpgfState> {
    opgf_step_with(state, z, dt, Integrator::Euler)
}

pub fn opgf_step_with(
    state: &OpgfState,
    z: &[f64],
    dt: f64,
    integrator: Integrator,
) -> Result<OpgfState> {
    if !(dt > 0.0 && dt.is_finite()) {
        return invalid(format!("dt = {dt} must be > 0"));
    }
    check_obs(state, z)?;
    let mut next = state.clone();
    for j in 0..next.dim() {
        let s = step_coord(
            next.depth,
            [next.a[j], next.b[j], next.beta[j]],
            z[j],
            dt,
            integrator,
        );
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalBlowup {
                t: state.t + dt,
                detail: format!("coordinate {j} became non-finite"),
            });
        }
        (next.a[j], next.b[j], next.beta[j]) = (s[0], s[1], s[2]);
    }
    next.t += dt;
    Ok(next)
}

/// Integration settings for [`opgf_run`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OpgfConfig {
    pub depth: u32,
    pub b0: f64,
    pub dt: f64,
    pub integrator: Integrator,
    /// How many times a failing segment is retried with half the step.
    pub max_halvings: u32,
}

impl Default for OpgfConfig {
    fn default() -> Self {
        Self {
            depth: 0,
            b0: 1.0,
            dt: 1e-2,
            integrator: Integrator::Rk4,
            max_halvings: 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpgfSnapshot {
    pub t: f64,
    pub lambda_tilde: Vec<f64>,
    pub beta: Vec<f64>,
    pub theta_hat: Vec<f64>,
    pub esd: Option<usize>,
    pub tuned_pc_sq_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpgfTrace {
    pub depth: u32,
    pub snapshots: Vec<OpgfSnapshot>,
    /// Worst drift seen at any step of the run.
    pub max_drift: ConservationDrift,
}

impl OpgfTrace {
    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.t).collect()
    }

    pub fn esds(&self) -> Option<Vec<usize>> {
        self.snapshots.iter().map(|s| s.esd).collect()
    }
}

/// True signal and noise level used to annotate snapshots with the ESD and
/// the oracle-tuned PC error.
#[derive(Debug, Clone, Copy)]
pub struct Truth<'a> {
    pub thetastar: &'a SignalVector,
    pub sigma2: f64,
}

fn snapshot(state: &OpgfState, z: &[f64], truth: Option<Truth<'_>>) -> Result<OpgfSnapshot> {
    let lambda_tilde = state.learned_eigenvalues();
    let theta_hat = state.estimate();
    let (esd, err) = match truth {
        Some(tr) => {
            let spec = sort_spectrum(&lambda_tilde)?;
            let k = TradeoffCurve::new(tr.thetastar, &spec)?.esd(tr.sigma2)?;
            let est = truncate_top_k(z, &spec, k);
            (Some(k), Some(squared_error(&est, tr.thetastar.as_slice())))
        }
        None => (None, None),
    };
    Ok(OpgfSnapshot {
        t: state.t,
        lambda_tilde,
        beta: state.beta.clone(),
        theta_hat,
        esd,
        tuned_pc_sq_error: err,
    })
}

/// March one coordinate from `s` over `span` with about `span / dt` steps.
/// Returns the end state and the worst drift along the way, or `None` if the
/// state left the finite range.
fn march(
    depth: u32,
    s: [f64; 3],
    z: f64,
    span: f64,
    dt: f64,
    integrator: Integrator,
    a0: f64,
    b0: f64,
) -> Option<([f64; 3], ConservationDrift)> {
    let steps = (span / dt).round().max(1.0) as u64;
    let h = span / steps as f64;
    let mut s = s;
    let mut drift = ConservationDrift::default();
    for _ in 0..steps {
        s = step_coord(depth, s, z, h, integrator);
        if !(s[0].is_finite() && s[1].is_finite() && s[2].is_finite()) {
            return None;
        }
        drift.absorb(coord_drift(depth, s, a0, b0));
    }
    Some((s, drift))
}

/// Integrate from `t = 0` and record the state at each snapshot time.
///
/// Segments between snapshots use `round(gap / dt)` equal steps, so the
/// snapshot times are hit exactly. A coordinate whose segment blows up is
/// retried with half the step, up to `cfg.max_halvings` times.
pub fn opgf_run(
    spectrum: &SortedSpectrum,
    z: &[f64],
    cfg: &OpgfConfig,
    snapshot_times: &[f64],
    truth: Option<Truth<'_>>,
) -> Result<OpgfTrace> {
    if !(cfg.dt > 0.0 && cfg.dt.is_finite()) {
        return invalid(format!("dt = {} must be > 0", cfg.dt));
    }
    if snapshot_times.is_empty() {
        return invalid("no snapshot times");
    }
    if snapshot_times[0] < 0.0 || snapshot_times.windows(2).any(|w| !(w[1] > w[0])) {
        return invalid("snapshot times must be >= 0 and strictly increasing");
    }
    if let Some(tr) = truth {
        if tr.thetastar.len() != spectrum.len() {
            return invalid("true signal length differs from spectrum");
        }
        if !(tr.sigma2 > 0.0) {
            return invalid("sigma2 must be > 0");
        }
    }
    let mut state = opgf_init(spectrum, cfg.depth, cfg.b0)?;
    check_obs(&state, z)?;
    let mut max_drift = ConservationDrift::default();
    let mut snapshots = Vec::with_capacity(snapshot_times.len());
    for &target in snapshot_times {
        let span = target - state.t;
        if span > 0.0 {
            for j in 0..state.dim() {
                let s = [state.a[j], state.b[j], state.beta[j]];
                let mut dt = cfg.dt;
                let mut attempt = 0;
                let (end, drift) = loop {
                    match march(
                        cfg.depth,
                        s,
                        z[j],
                        span,
                        dt,
                        cfg.integrator,
                        state.a0[j],
                        state.b0,
                    ) {
                        Some(out) => break out,
                        None if attempt < cfg.max_halvings => {
                            attempt += 1;
                            dt *= 0.5;
                        }
                        None => {
                            return Err(Error::NumericalBlowup {
                                t: target,
                                detail: format!(
                                    "coordinate {j} diverged between t = {} and t = {target} \
                                     even with dt = {dt}",
                                    state.t
                                ),
                            })
                        }
                    }
                };
                (state.a[j], state.b[j], state.beta[j]) = (end[0], end[1], end[2]);
                max_drift.absorb(drift);
            }
            state.t = target;
        }
        snapshots.push(snapshot(&state, z, truth)?);
    }
    Ok(OpgfTrace {
        depth: cfg.depth,
        snapshots,
        max_drift,
    })
}

/// Learned eigenvalues sorted with the stable descending rule.
pub fn learned_spectrum(state: &OpgfState) -> SortedSpectrum {
    sort_spectrum(&state.learned_eigenvalues())
        .expect("squares of finite numbers are finite and nonnegative")
}

/// ESD of `thetastar` under the learned spectrum at every snapshot.
pub fn pathwise_esd(trace: &OpgfTrace, thetastar: &SignalVector, sigma2: f64) -> Result<Vec<usize>> {
    trace
        .snapshots
        .iter()
        .map(|s| {
            let spec = sort_spectrum(&s.lambda_tilde)?;
            TradeoffCurve::new(thetastar, &spec)?.esd(sigma2)
        })
        .collect()
}

/// Noise scale `2 C^{-1/2} n^{-1/2} sqrt(ln(n d_tilde) ln n)` with
/// `d_tilde = sum_j lambda_j`.
pub fn epsilon_scale(n: f64, d_tilde: f64, c_proxy: f64) -> f64 {
    2.0 / c_proxy.sqrt() / n.sqrt() * ((n * d_tilde).ln() * n.ln()).sqrt()
}

/// Initialization scale `c_B D^{(D+1)/(D+2)} eps^{1/(D+2)}`.
pub fn theorem_b0(c_b: f64, depth: u32, eps: f64) -> f64 {
    let d = depth as f64;
    c_b * d.powf((d + 1.0) / (d + 2.0)) * eps.powf(1.0 / (d + 2.0))
}

/// Time scale `C D^{D/(D+2)} eps^{-(2D+2)/(D+2)}` after which the ESD has dropped.
pub fn theorem_t2(c: f64, depth: u32, eps: f64) -> f64 {
    let d = depth as f64;
    c * d.powf(d / (d + 2.0)) * eps.powf(-(2.0 * d + 2.0) / (d + 2.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_example() {
        let s = opgf_init(&sort_spectrum(&[4.0, 1.0]).unwrap(), 2, 0.5).unwrap();
        assert_eq!(s.a(), &[2.0, 1.0]);
        assert_eq!(s.b(), &[0.5, 0.5]);
        assert_eq!(s.beta(), &[0.0, 0.0]);
        assert!(opgf_init(&sort_spectrum(&[1.0]).unwrap(), 1, 0.0).is_err());
        let s0 = opgf_init(&sort_spectrum(&[4.0, 1.0]).unwrap(), 0, -3.0).unwrap();
        assert_eq!(s0.theta(), vec![0.0, 0.0]);
    }

    #[test]
    fn zero_observations_are_a_fixed_point() {
        let s = opgf_init(&sort_spectrum(&[2.0, 0.5, 0.1]).unwrap(), 1, 0.7).unwrap();
        let n = opgf_step(&s, &[0.0; 3], 0.1).unwrap();
        assert_eq!(n.a(), s.a());
        assert_eq!(n.b(), s.b());
        assert_eq!(n.beta(), s.beta());
        assert!((n.time() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn learned_eigenvalue_arithmetic() {
        let mut s = opgf_init(&sort_spectrum(&[4.0]).unwrap(), 1, 3.0).unwrap();
        assert_eq!(s.learned_eigenvalues(), vec![36.0]);
        s.beta[0] = 0.5;
        assert!((s.estimate()[0] - s.theta()[0]).abs() < 1e-15);
    }

    #[test]
    fn step_rejects_bad_input() {
        let s = opgf_init(&sort_spectrum(&[1.0, 1.0]).unwrap(), 0, 1.0).unwrap();
        assert!(opgf_step(&s, &[1.0], 0.1).is_err());
        assert!(opgf_step(&s, &[1.0, 1.0], 0.0).is_err());
    }

    #[test]
    fn blowup_is_reported() {
        // a0 = 2 overshoots on the first step and the second step overflows.
        let s = opgf_init(&sort_spectrum(&[4.0]).unwrap(), 0, 1.0).unwrap();
        let mut cur = s;
        let mut failed = false;
        for _ in 0..5 {
            match opgf_step(&cur, &[1e200], 1.0) {
                Ok(n) => cur = n,
                Err(Error::NumericalBlowup { .. }) => {
                    failed = true;
                    break;
                }
                Err(e) => panic!("unexpected error {e}"),
            }
        }
        assert!(failed);
    }

    #[test]
    fn first_snapshot_at_zero_is_the_input_spectrum() {
        let l = sort_spectrum(&[3.0, 1.0, 2.0]).unwrap();
        let tr = opgf_run(&l, &[0.3, 0.1, -0.2], &OpgfConfig::default(), &[0.0, 1.0], None).unwrap();
        for (got, want) in tr.snapshots[0].lambda_tilde.iter().zip([3.0, 1.0, 2.0]) {
            assert!((got - want).abs() <= 4.0 * f64::EPSILON * want);
        }
        assert!(opgf_run(&l, &[0.0; 3], &OpgfConfig::default(), &[1.0, 1.0], None).is_err());
    }

    #[test]
    fn theorem_scales() {
        let eps = epsilon_scale(1e4, 2.0, 1.0);
        let want = 2.0 / 100.0 * ((2e4f64).ln() * (1e4f64).ln()).sqrt();
        assert!((eps - want).abs() < 1e-15);
        assert!((theorem_b0(1.0, 1, 0.008) - 0.2).abs() < 1e-12);
        assert!((theorem_t2(1.0, 0, 0.1) - 10.0).abs() < 1e-12);
    }
}
