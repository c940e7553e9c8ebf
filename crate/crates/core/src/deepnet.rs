//! Deep linear network `f(x) = w^T W_D ... W_1 x` trained with full-batch Adam,
//! and the ESD of a fixed target under the kernel `G = A^T A` it learns.
//!
//! The gradient with respect to each `W_l` is a rank-one outer product, so a
//! training step costs `O(D p^2 + n p)` and the product `A` is only formed at
//! snapshots.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::sym_eigen;
use crate::rng::CounterRng;
use crate::seqcore::{esd, sort_spectrum, SignalVector};

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionData {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub betastar: DVector<f64>,
    pub sigma0: f64,
}

impl RegressionData {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }
}

/// `beta*_j = j^{-decay}` for `j <= len`, zero beyond.
pub fn power_law_betastar(p: usize, len: usize, decay: f64) -> Vec<f64> {
    (1..=p)
        .map(|j| if j <= len { (j as f64).powf(-decay) } else { 0.0 })
        .collect()
}

/// `||f*||_inf^2 = ||beta*||_1^2` under a `{+-1}` design.
pub fn sup_norm_sq(betastar: &[f64]) -> f64 {
    let l1: f64 = betastar.iter().map(|b| b.abs()).sum();
    l1 * l1
}

/// `X` with i.i.d. uniform `{+-1}` entries and `Y = X beta* + N(0, sigma0^2)`.
pub fn gen_rademacher_regression(
    p: usize,
    n: usize,
    betastar: &[f64],
    sigma0: f64,
    seed: u64,
) -> Result<RegressionData> {
    if p == 0 || n == 0 {
        return invalid("need p >= 1 and n >= 1");
    }
    if betastar.len() != p {
        return invalid(format!("beta* has length {}, expected {p}", betastar.len()));
    }
    if !(sigma0 >= 0.0 && sigma0.is_finite()) {
        return invalid("sigma0 must be finite and >= 0");
    }
    let rng = CounterRng::new(seed).domain("rademacher");
    let mut row = vec![0.0; p];
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        rng.fill_sign(i as u64, 0, &mut row);
        for (j, v) in row.iter().enumerate() {
            x[(i, j)] = *v;
        }
    }
    let mut eps = vec![0.0; n];
    rng.domain("noise").fill_normal(0, 0, &mut eps);
    let betastar = DVector::from_column_slice(betastar);
    let y = &x * &betastar + DVector::from_vec(eps) * sigma0;
    Ok(RegressionData {
        x,
        y,
        betastar,
        sigma0,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeepLinearNet {
    /// `W_1, ..., W_D`, each `p x p`.
    pub layers: Vec<DMatrix<f64>>,
    pub w: DVector<f64>,
}

impl DeepLinearNet {
    /// `W_l = I + zeta G_l` with standard Gaussian `G_l`, and `w = 0`.
    pub fn near_identity(p: usize, depth: usize, zeta: f64, seed: u64) -> Result<Self> {
        if p == 0 || depth == 0 {
            return invalid("need p >= 1 and depth >= 1");
        }
        let rng = CounterRng::new(seed).domain("deepnet-init");
        let layers = (0..depth)
            .map(|l| {
                let mut g = vec![0.0; p * p];
                rng.fill_normal(l as u64, 0, &mut g);
                DMatrix::identity(p, p) + DMatrix::from_vec(p, p, g) * zeta
            })
            .collect();
        Ok(Self {
            layers,
            w: DVector::zeros(p),
        })
    }

    pub fn from_parts(layers: Vec<DMatrix<f64>>, w: DVector<f64>) -> Result<Self> {
        let p = w.len();
        if layers.is_empty() || p == 0 {
            return invalid("need at least one layer and p >= 1");
        }
        if layers.iter().any(|m| m.shape() != (p, p)) {
            return invalid(format!("every layer must be {p}x{p}"));
        }
        Ok(Self { layers, w })
    }

    pub fn p(&self) -> usize {
        self.w.len()
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// `A = W_D ... W_1`.
    pub fn product(&self) -> DMatrix<f64> {
        let mut a = self.layers[0].clone();
        for m in &self.layers[1..] {
            a = m * a;
        }
        a
    }

    /// `beta = A^T w`, computed without forming `A`.
    pub fn effective_beta(&self) -> DVector<f64> {
        let mut u = self.w.clone();
        for m in self.layers.iter().rev() {
            u = m.tr_mul(&u);
        }
        u
    }

    pub fn param_count(&self) -> usize {
        self.depth() * self.p() * self.p() + self.p()
    }

    /// All parameters: each layer column-major in order `W_1..W_D`, then `w`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for m in &self.layers {
            out.extend_from_slice(m.as_slice());
        }
        out.extend_from_slice(self.w.as_slice());
        out
    }

    pub fn from_flat(p: usize, depth: usize, flat: &[f64]) -> Result<Self> {
        if p == 0 || depth == 0 || flat.len() != depth * p * p + p {
            return invalid("flat parameter length does not match p and depth");
        }
        let layers = flat
            .chunks(p * p)
            .take(depth)
            .map(|c| DMatrix::from_column_slice(p, p, c))
            .collect();
        let w = DVector::from_column_slice(&flat[depth * p * p..]);
        Self::from_parts(layers, w)
    }
}

/// `(1/n) ||X beta - Y||^2`.
pub fn mse_loss(beta: &DVector<f64>, data: &RegressionData) -> f64 {
    (&data.x * beta - &data.y).norm_squared() / data.n() as f64
}

/// Loss gradient. The `W_l` part is `left[l] * right[l]^T`.
#[derive(Debug, Clone)]
pub struct NetGradient {
    pub loss: f64,
    pub left: Vec<DVector<f64>>,
    pub right: Vec<DVector<f64>>,
    pub w: DVector<f64>,
}

impl NetGradient {
    pub fn layer(&self, l: usize) -> DMatrix<f64> {
        &self.left[l] * self.right[l].transpose()
    }

    fn is_finite(&self) -> bool {
        self.loss.is_finite()
            && self.w.iter().all(|v| v.is_finite())
            && self.left.iter().chain(&self.right).all(|v| v.iter().all(|x| x.is_finite()))
    }
}

pub fn loss_and_gradient(net: &DeepLinearNet, data: &RegressionData) -> Result<NetGradient> {
    if data.p() != net.p() {
        return invalid("network and data dimensions differ");
    }
    let depth = net.depth();
    // left[l] = W_{l+1}^T ... W_D^T w
    let mut left = vec![DVector::zeros(0); depth];
    let mut u = net.w.clone();
    for l in (0..depth).rev() {
        let next = net.layers[l].tr_mul(&u);
        left[l] = u;
        u = next;
    }
    let beta = u;
    let resid = &data.x * &beta - &data.y;
    let n = data.n() as f64;
    let loss = resid.norm_squared() / n;
    let g_beta = data.x.tr_mul(&resid) * (2.0 / n);
    // right[l] = W_{l-1} ... W_1 g_beta
    let mut right = Vec::with_capacity(depth);
    let mut v = g_beta;
    for m in &net.layers {
        let next = m * &v;
        right.push(v);
        v = next;
    }
    let grad = NetGradient {
        loss,
        left,
        right,
        w: v,
    };
    if !grad.is_finite() {
        return Err(Error::NumericalBlowup {
            t: f64::NAN,
            detail: "non-finite loss or gradient".into(),
        });
    }
    Ok(grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub params: AdamParams,
    pub step: u64,
    m_layers: Vec<DMatrix<f64>>,
    v_layers: Vec<DMatrix<f64>>,
    m_w: DVector<f64>,
    v_w: DVector<f64>,
}

impl AdamState {
    pub fn new(net: &DeepLinearNet, params: AdamParams) -> Self {
        let p = net.p();
        Self {
            params,
            step: 0,
            m_layers: vec![DMatrix::zeros(p, p); net.depth()],
            v_layers: vec![DMatrix::zeros(p, p); net.depth()],
            m_w: DVector::zeros(p),
            v_w: DVector::zeros(p),
        }
    }

    pub fn moments_finite(&self) -> bool {
        self.m_layers
            .iter()
            .chain(&self.v_layers)
            .all(|m| m.iter().all(|v| v.is_finite()))
            && self.m_w.iter().chain(self.v_w.iter()).all(|v| v.is_finite())
    }
}

#[inline]
fn adam_update(param: &mut f64, m: &mut f64, v: &mut f64, g: f64, k: &AdamCoeffs) {
    *m = k.b1 * *m + k.c1 * g;
    *v = k.b2 * *v + k.c2 * g * g;
    *param -= k.lr_hat * *m / ((*v * k.inv_bc2).sqrt() + k.eps);
}

struct AdamCoeffs {
    b1: f64,
    c1: f64,
    b2: f64,
    c2: f64,
    lr_hat: f64,
    inv_bc2: f64,
    eps: f64,
}

/// One full-batch Adam update. Returns the loss before the update.
pub fn adam_step(net: &mut DeepLinearNet, adam: &mut AdamState, data: &RegressionData) -> Result<f64> {
    let grad = loss_and_gradient(net, data)?;
    adam.step += 1;
    let hp = adam.params;
    let t = adam.step as i32;
    let k = AdamCoeffs {
        b1: hp.beta1,
        c1: 1.0 - hp.beta1,
        b2: hp.beta2,
        c2: 1.0 - hp.beta2,
        lr_hat: hp.lr / (1.0 - hp.beta1.powi(t)),
        inv_bc2: 1.0 / (1.0 - hp.beta2.powi(t)),
        eps: hp.eps,
    };
    let p = net.p();
    for l in 0..net.depth() {
        let (u, r) = (grad.left[l].as_slice(), grad.right[l].as_slice());
        let w = net.layers[l].as_mut_slice();
        let m = adam.m_layers[l].as_mut_slice();
        let v = adam.v_layers[l].as_mut_slice();
        // Column-major: entry (i, j) sits at j * p + i.
        for j in 0..p {
            let rj = r[j];
            let cols = j * p..(j + 1) * p;
            let (wc, mc, vc) = (&mut w[cols.clone()], &mut m[cols.clone()], &mut v[cols]);
            for i in 0..p {
                adam_update(&mut wc[i], &mut mc[i], &mut vc[i], u[i] * rj, &k);
            }
        }
    }
    for i in 0..p {
        adam_update(&mut net.w[i], &mut adam.m_w[i], &mut adam.v_w[i], grad.w[i], &k);
    }
    Ok(grad.loss)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathwiseEsd {
    pub esd: usize,
    pub risk: f64,
    /// `V^T beta*` in the eigenbasis of `G = A^T A`, eigenvalues descending.
    pub theta: Vec<f64>,
    pub eigenvalues: Vec<f64>,
    pub sigma2: f64,
}

/// ESD of `beta*` under the kernel `x^T A^T A x'` at noise `(sigma0^2 + ||beta*||_1^2) / n`,
/// and the excess risk `||A^T w - beta*||^2`.
pub fn pathwise_kernel_esd(net: &DeepLinearNet, betastar: &DVector<f64>, sigma0: f64, n: usize) -> Result<PathwiseEsd> {
    if betastar.len() != net.p() || n == 0 {
        return invalid("beta* length must equal p and n must be >= 1");
    }
    let a = net.product();
    let g = a.tr_mul(&a);
    let g = (&g + g.transpose()) * 0.5;
    let eig = sym_eigen(&g)?;
    let theta = eig.vectors.tr_mul(betastar);
    // Round-off can leave tiny negative eigenvalues of a PSD Gram.
    let lambda: Vec<f64> = eig.values.iter().map(|v| v.max(0.0)).collect();
    let sigma2 = (sigma0 * sigma0 + sup_norm_sq(betastar.as_slice())) / n as f64;
    let signal = SignalVector::new(theta.iter().copied().collect())?;
    let d = esd(&signal, &sort_spectrum(&lambda)?, sigma2)?;
    let risk = (net.effective_beta() - betastar).norm_squared();
    Ok(PathwiseEsd {
        esd: d,
        risk,
        theta: signal.into_vec(),
        eigenvalues: lambda,
        sigma2,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeepnetConfig {
    pub p: usize,
    pub n: usize,
    pub depth: usize,
    pub sigma0: f64,
    pub signal_len: usize,
    pub signal_decay: f64,
    pub zeta: f64,
    pub adam: AdamParams,
    pub steps: usize,
    pub snapshot_every: usize,
    pub seed: u64,
    /// Fill the `t_wall` column. Off by default so output depends only on the config.
    pub record_wall_time: bool,
}

impl Default for DeepnetConfig {
    fn default() -> Self {
        Self {
            p: 900,
            n: 1000,
            depth: 4,
            sigma0: 0.1,
            signal_len: 200,
            signal_decay: 1.1,
            zeta: 1e-3,
            adam: AdamParams::default(),
            steps: 20_000,
            snapshot_every: 200,
            seed: 0,
            record_wall_time: false,
        }
    }
}

impl DeepnetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.n == 0 || self.depth == 0 {
            return invalid("deepnet needs p, n and depth >= 1");
        }
        if self.snapshot_every == 0 {
            return invalid("snapshot_every must be >= 1");
        }
        if !(self.sigma0 >= 0.0) || !(self.zeta >= 0.0) || !(self.adam.lr > 0.0) {
            return invalid("sigma0 and zeta must be >= 0 and lr > 0");
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return invalid("Adam betas must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn betastar(&self) -> Vec<f64> {
        power_law_betastar(self.p, self.signal_len, self.signal_decay)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepnetSnapshot {
    pub step: usize,
    pub t_wall: Option<f64>,
    pub esd: usize,
    pub risk: f64,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct DeepnetRun {
    pub snapshots: Vec<DeepnetSnapshot>,
    pub net: DeepLinearNet,
    pub adam: AdamState,
}

/// Train from the near-identity init, analysing the network every
/// `snapshot_every` steps and after the last one.
pub fn train_deepnet(cfg: &DeepnetConfig) -> Result<DeepnetRun> {
    cfg.validate()?;
    let betastar = cfg.betastar();
    let data = gen_rademacher_regression(cfg.p, cfg.n, &betastar, cfg.sigma0, cfg.seed)?;
    let mut net = DeepLinearNet::near_identity(cfg.p, cfg.depth, cfg.zeta, cfg.seed)?;
    let mut adam = AdamState::new(&net, cfg.adam);
    let start = Instant::now();
    let mut snapshots = Vec::new();
    let mut snap = |net: &DeepLinearNet, step: usize| -> Result<()> {
        let pw = pathwise_kernel_esd(net, &data.betastar, cfg.sigma0, cfg.n)?;
        snapshots.push(DeepnetSnapshot {
            step,
            t_wall: cfg.record_wall_time.then(|| start.elapsed().as_secs_f64()),
            esd: pw.esd,
            risk: pw.risk,
            loss: mse_loss(&net.effective_beta(), &data),
        });
        Ok(())
    };
    snap(&net, 0)?;
    for step in 1..=cfg.steps {
        adam_step(&mut net, &mut adam, &data).map_err(|e| match e {
            Error::NumericalBlowup { detail, .. } => Error::NumericalBlowup {
                t: step as f64,
                detail,
            },
            e => e,
        })?;
        if step % cfg.snapshot_every == 0 || step == cfg.steps {
            snap(&net, step)?;
        }
    }
    Ok(DeepnetRun {
        snapshots,
        net,
        adam,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub p: usize,
    #[serde(rename = "D")]
    pub depth: usize,
    pub seed: u64,
    pub step: u64,
}

fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Little-endian `f64` parameters (see [`DeepLinearNet::to_flat`]) plus a JSON sidecar.
pub fn save_checkpoint(path: &Path, net: &DeepLinearNet, seed: u64, step: u64) -> Result<()> {
    let bytes: Vec<u8> = net.to_flat().iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes)?;
    let meta = CheckpointMeta {
        p: net.p(),
        depth: net.depth(),
        seed,
        step,
    };
    fs::write(sidecar(path), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(DeepLinearNet, CheckpointMeta)> {
    let meta: CheckpointMeta = serde_json::from_str(&fs::read_to_string(sidecar(path))?)?;
    let bytes = fs::read(path)?;
    if bytes.len() % 8 != 0 {
        return invalid("checkpoint length is not a multiple of 8 bytes");
    }
    let flat: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok((DeepLinearNet::from_flat(meta.p, meta.depth, &flat)?, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (DeepLinearNet, RegressionData) {
        let p = 6;
        let beta: Vec<f64> = (1..=p).map(|j| 1.0 / j as f64).collect();
        let data = gen_rademacher_regression(p, 12, &beta, 0.3, 5).unwrap();
        let mut net = DeepLinearNet::near_identity(p, 3, 0.3, 9).unwrap();
        net.w = DVector::from_fn(p, |i, _| 0.2 * i as f64 - 0.4);
        (net, data)
    }

    #[test]
    fn effective_beta_matches_product() {
        let (net, _) = toy();
        let direct = net.product().tr_mul(&net.w);
        assert!((direct - net.effective_beta()).amax() < 1e-13);
    }

    #[test]
    fn flat_round_trip() {
        let (net, _) = toy();
        let back = DeepLinearNet::from_flat(6, 3, &net.to_flat()).unwrap();
        assert_eq!(back, net);
        assert!(DeepLinearNet::from_flat(6, 2, &net.to_flat()).is_err());
    }

    #[test]
    fn identity_network_has_zero_risk() {
        let beta = DVector::from_vec(vec![0.5, -0.25, 0.125]);
        let net = DeepLinearNet::from_parts(vec![DMatrix::identity(3, 3); 2], beta.clone()).unwrap();
        let pw = pathwise_kernel_esd(&net, &beta, 0.1, 100).unwrap();
        assert_eq!(pw.risk, 0.0);
        for (t, b) in pw.theta.iter().zip(beta.iter()) {
            assert!((t.abs() - b.abs()).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let (net, mut data) = toy();
        data.y = &data.x * net.effective_beta();
        let mut moved = net.clone();
        let mut adam = AdamState::new(&net, AdamParams::default());
        adam_step(&mut moved, &mut adam, &data).unwrap();
        assert!((moved.effective_beta() - net.effective_beta()).amax() < 1e-12);
        for (a, b) in moved.to_flat().iter().zip(net.to_flat()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(adam.step, 1);
        assert!(adam.moments_finite());
    }

    #[test]
    fn sign_design_entries() {
        let d = gen_rademacher_regression(4, 50, &[1.0, 0.0, 0.0, 0.0], 0.0, 1).unwrap();
        assert!(d.x.iter().all(|v| v.abs() == 1.0));
        assert_eq!(d.y, d.x.column(0).into_owned());
    }

    #[test]
    fn checkpoint_round_trip() {
        let (net, _) = toy();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.bin");
        save_checkpoint(&path, &net, 7, 42).unwrap();
        let (back, meta) = load_checkpoint(&path).unwrap();
        assert_eq!(back, net);
        assert_eq!(meta, CheckpointMeta { p: 6, depth: 3, seed: 7, step: 42 });
        let json = fs::read_to_string(path.with_extension("json")).unwrap();
        assert!(json.contains("\"D\": 3"));
    }
}
