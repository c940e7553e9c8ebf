use std::f64::consts::{SQRT_2, TAU};
use std::sync::Arc;

use esd_core::estimators::{squared_error, truncate_top_k};
use esd_core::rkhs::{
    esd_psd_rank, esd_rkhs, kpcpe, kpcpe_risk, linear_kernel_bridge, regularity_check, rkhs_experiment,
    spectral_perturb, transform_obs, Basis, BasisRegistry, CosineBasis, KernelEigenModel, RkhsConfig, TargetFunction,
};
use esd_core::rng::CounterRng;
use esd_core::seqcore::{esd, sort_spectrum, SignalVector};
use esd_core::stats::{mean_stderr, sample_sd};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

#[derive(Debug)]
struct SineBasis;

impl Basis for SineBasis {
    fn name(&self) -> &str {
        "sine"
    }
    fn eval(&self, j: usize, x: f64) -> f64 {
        SQRT_2 * (TAU * j as f64 * x).sin()
    }
    fn sample(&self, u: f64) -> f64 {
        u
    }
}

fn target(jn: usize) -> TargetFunction {
    let c: Vec<f64> = (1..=jn).map(|j| if j <= 6 { (j as f64).powi(-2) } else { 0.0 }).collect();
    TargetFunction::with_grid_sup(SignalVector::new(c).unwrap(), &CosineBasis, 10_001).unwrap()
}

/// `E[f(x)^2 psi_j(x)^2]` by the midpoint rule, exact for these trigonometric polynomials.
fn second_moment(f: &TargetFunction, j: usize) -> f64 {
    let m = 4096;
    (0..m)
        .map(|i| {
            let x = (i as f64 + 0.5) / m as f64;
            (f.eval(&CosineBasis, x) * CosineBasis.eval(j, x)).powi(2)
        })
        .sum::<f64>()
        / m as f64
}

fn coefficient_draws(sigma0: f64, n: usize, jn: usize, reps: usize) -> Vec<Vec<f64>> {
    let f = target(jn);
    let rng = CounterRng::new(5);
    let mut by_j = vec![Vec::with_capacity(reps); jn];
    let (mut xs, mut e) = (vec![0.0; n], vec![0.0; n]);
    for r in 0..reps as u64 {
        rng.fill_uniform(r, 0, &mut xs);
        rng.fill_normal(r, 1 << 40, &mut e);
        let ys: Vec<f64> = xs.iter().zip(&e).map(|(&x, &eps)| f.eval(&CosineBasis, x) + sigma0 * eps).collect();
        let z = transform_obs(&xs, &ys, &CosineBasis, jn).unwrap();
        for (j, v) in z.into_iter().enumerate() {
            by_j[j].push(v);
        }
    }
    by_j
}

#[test]
fn empirical_coefficients_are_unbiased() {
    let (n, jn, reps) = (50, 20, 4000);
    let f = target(jn);
    // sigma0 = 0 isolates the design-induced part of the noise.
    for sigma0 in [0.5, 0.0] {
        let draws = coefficient_draws(sigma0, n, jn, reps);
        for (j, d) in draws.iter().enumerate() {
            let ms = mean_stderr(d);
            let theta = f.coeffs().as_slice()[j];
            assert!(
                (ms.mean - theta).abs() <= 4.0 * ms.stderr,
                "sigma0={sigma0} j={}: {} +- {} vs {theta}",
                j + 1,
                ms.mean,
                ms.stderr
            );
        }
    }
}

#[test]
fn empirical_coefficient_variance() {
    let (n, jn, reps, sigma0) = (50, 20, 4000, 0.5);
    let f = target(jn);
    let draws = coefficient_draws(sigma0, n, jn, reps);
    for (j, d) in draws.iter().enumerate() {
        let theta = f.coeffs().as_slice()[j];
        let want = (second_moment(&f, j + 1) + sigma0 * sigma0 - theta * theta) / n as f64;
        let got = sample_sd(d).powi(2);
        let tol = 5.0 * want * (2.0 / (reps - 1) as f64).sqrt();
        assert!((got - want).abs() <= tol, "j={}: {got} vs {want}", j + 1);
    }
}

#[test]
fn design_and_label_noise_are_uncorrelated() {
    let (n, jn, reps) = (50, 12, 4000);
    let f = target(jn);
    let rng = CounterRng::new(17);
    let (mut xs, mut e) = (vec![0.0; n], vec![0.0; n]);
    let mut prods = vec![Vec::with_capacity(reps); jn];
    for r in 0..reps as u64 {
        rng.fill_uniform(r, 0, &mut xs);
        rng.fill_normal(r, 1 << 40, &mut e);
        let fx: Vec<f64> = xs.iter().map(|&x| f.eval(&CosineBasis, x)).collect();
        let delta = transform_obs(&xs, &fx, &CosineBasis, jn).unwrap();
        let xi = transform_obs(&xs, &e, &CosineBasis, jn).unwrap();
        for j in 0..jn {
            prods[j].push((delta[j] - f.coeffs().as_slice()[j]) * xi[j]);
        }
    }
    for (j, v) in prods.iter().enumerate() {
        let ms = mean_stderr(v);
        assert!(ms.mean.abs() <= 4.0 * ms.stderr, "j={}: {} +- {}", j + 1, ms.mean, ms.stderr);
    }
}

#[test]
fn empirical_gram_near_identity() {
    let n = 20_000;
    let mut xs = vec![0.0; n];
    CounterRng::new(2).fill_uniform(0, 0, &mut xs);
    let jn = 10;
    let mut g = DMatrix::<f64>::zeros(jn, jn);
    let mut psi = vec![0.0; jn];
    for &x in &xs {
        CosineBasis.eval_all(x, &mut psi);
        let v = DVector::from_column_slice(&psi);
        g += &v * v.transpose();
    }
    g /= n as f64;
    let dev = (g - DMatrix::identity(jn, jn)).amax();
    assert!(dev < 5.0 / (n as f64).sqrt(), "{dev}");
}

fn spd(d: usize, seed: u64, shift: f64) -> DMatrix<f64> {
    let mut v = vec![0.0; d * d];
    CounterRng::new(seed).fill_normal(0, 0, &mut v);
    let a = DMatrix::from_vec(d, d, v);
    &a * a.transpose() + DMatrix::identity(d, d) * shift
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn linear_kernel_bridge_reconstructs(d in 1usize..7, seed in any::<u64>()) {
        let k = spd(d, seed, 0.1);
        let sx = spd(d, seed ^ 0xabc, 0.5);
        let mut b = vec![0.0; d];
        CounterRng::new(seed).fill_normal(9, 0, &mut b);
        let beta = DVector::from_vec(b);
        let br = linear_kernel_bridge(&k, &sx, &beta).unwrap();
        let lam = DMatrix::from_diagonal(&DVector::from_vec(br.lambda.clone()));
        let scale = 1.0 + k.amax();
        prop_assert!((&br.psi * lam * br.psi.transpose() - &k).amax() < 1e-8 * scale);
        let gram = br.psi.transpose() * &sx * &br.psi;
        prop_assert!((gram - DMatrix::identity(d, d)).amax() < 1e-8);
        let back = &br.psi * DVector::from_vec(br.theta.clone());
        prop_assert!((back - &beta).amax() < 1e-8 * (1.0 + beta.amax()));
        prop_assert!(br.lambda.iter().all(|l| *l >= -1e-12));
    }

    #[test]
    fn kernel_quantities_delegate_to_sequence_model(
        theta in prop::collection::vec(-1.0f64..1.0, 1..20),
        lam in prop::collection::vec(0.01f64..2.0, 20),
        sigma2 in 1e-4f64..1.0,
        kf in 0.0f64..1.0,
    ) {
        let d = theta.len();
        let coeffs = SignalVector::new(theta.clone()).unwrap();
        let sup = coeffs.norm_sq().sqrt() * 2.0;
        let f = TargetFunction::new(coeffs.clone(), sup).unwrap();
        let model = KernelEigenModel::new(&lam[..d], Arc::new(CosineBasis)).unwrap();
        let spec = sort_spectrum(&lam[..d]).unwrap();
        prop_assert_eq!(esd_rkhs(&f, &model, sigma2).unwrap(), esd(&coeffs, &spec, sigma2).unwrap());
        let k = 1 + ((d - 1) as f64 * kf) as usize;
        let z: Vec<f64> = theta.iter().map(|t| t * 0.9 + 0.01).collect();
        let est = kpcpe(&z, &model, k).unwrap();
        prop_assert_eq!(&est, &truncate_top_k(&z, &spec, k));
        prop_assert_eq!(kpcpe_risk(&est, &f), squared_error(&est, &theta));
        // With no missing energy the rank-limited ESD is the ordinary one.
        prop_assert_eq!(esd_psd_rank(&coeffs, &spec, coeffs.norm_sq(), sigma2).unwrap(), esd(&coeffs, &spec, sigma2).unwrap());
        // Missing energy can only raise it, and makes it undefined once delta / d > sigma^2.
        match esd_psd_rank(&coeffs, &spec, coeffs.norm_sq() + 0.5, sigma2) {
            Ok(v) => prop_assert!(v >= esd(&coeffs, &spec, sigma2).unwrap()),
            Err(_) => prop_assert!(0.5 / d as f64 > sigma2),
        }
    }

    #[test]
    fn perturbation_tilts_leading_block(alpha in -20.0f64..20.0, width in 2usize..30) {
        let l0: Vec<f64> = (1..=40).map(|j| (j as f64).powf(-1.1)).collect();
        let l = spectral_perturb(&l0, alpha, width).unwrap();
        for j in 0..40 {
            let want = if j < width { (alpha * j as f64 / (width - 1) as f64).exp() } else { 1.0 };
            prop_assert!((l[j] / l0[j] - want).abs() <= 1e-12 * want);
        }
    }
}

#[test]
fn regularity_example() {
    let spec = sort_spectrum(&(1..=20).map(|j| 1.0 / j as f64).collect::<Vec<_>>()).unwrap();
    // floor(0.5 * 10) = 5 leading reciprocals sum to 15.
    assert!(regularity_check(&spec, 10, 15, 0.5, 1.0).unwrap());
    assert!(!regularity_check(&spec, 10, 14, 0.5, 1.0).unwrap());
    assert!(regularity_check(&spec, 10, 14, 1.5, 1.0).is_err());
}

#[test]
fn target_rejects_inconsistent_norms() {
    let c = SignalVector::new(vec![1.0, 1.0]).unwrap();
    assert!(TargetFunction::new(c.clone(), 1.0).is_err());
    assert!(TargetFunction::new(c, 2.0).is_ok());
    let c = SignalVector::new(vec![0.5, 0.25]).unwrap();
    let f = TargetFunction::with_grid_sup(c, &CosineBasis, 1001).unwrap();
    // Both cosines peak at x = 0.
    assert!((f.sup_norm() - 0.75 * SQRT_2).abs() < 1e-12);
}

#[test]
fn registered_basis_drives_experiment() {
    let mut reg = BasisRegistry::default();
    reg.register(Arc::new(SineBasis));
    assert_eq!(reg.names(), vec!["cosine", "sine"]);
    let cfg = RkhsConfig {
        basis: "sine".into(),
        n: 60,
        truncation: 40,
        width: 10,
        reps: 3,
        alphas: vec![0.0, 5.0],
        ..RkhsConfig::default()
    };
    let s = rkhs_experiment(&cfg, &reg).unwrap();
    assert_eq!(s.rows.len(), 2);
    assert!(s.rows.iter().all(|r| r.esd >= 1 && r.risk_mean >= 0.0));
    assert_eq!(s, rkhs_experiment(&cfg, &reg).unwrap());
    let bad = RkhsConfig {
        basis: "legendre".into(),
        ..cfg
    };
    assert!(rkhs_experiment(&bad, &reg).is_err());
}
