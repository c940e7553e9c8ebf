use esd_core::linreg::{
    alpha_transform, esd_design, gen_design, load_design, mahalanobis_sq, pcr_estimate, save_design, svd_reduce,
    to_sequence, whiten, CorrelatedNoiseModel, DesignMeta, SpectrumCase,
};
use esd_core::rng::CounterRng;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn gaussian_matrix(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
    let mut v = vec![0.0; n * p];
    CounterRng::new(seed).fill_normal(0, 0, &mut v);
    DMatrix::from_vec(n, p, v)
}

fn gaussian_vec(n: usize, seed: u64, stream: u64) -> DVector<f64> {
    let mut v = vec![0.0; n];
    CounterRng::new(seed).fill_normal(stream, 0, &mut v);
    DVector::from_vec(v)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn prediction_loss_equals_sequence_loss(n in 3usize..25, p in 2usize..25, seed in any::<u64>(), kf in 0.0f64..1.0) {
        let x = gaussian_matrix(n, p, seed);
        let beta = gaussian_vec(p, seed, 1);
        let y = &x * &beta + gaussian_vec(n, seed, 2) * 0.3;
        let svd = svd_reduce(&x).unwrap();
        let r = svd.rank();
        prop_assert_eq!(r, n.min(p));
        let k = 1 + ((r - 1) as f64 * kf) as usize;
        let bhat = pcr_estimate(&y, &svd, k).unwrap();
        let pred = (&x * (&bhat - &beta)).norm_squared() / n as f64;
        let inst = to_sequence(&y, &svd, Some(&beta), 0.3).unwrap();
        let z = inst.obs().unwrap();
        let theta = inst.signal().as_slice();
        let seq: f64 = (0..r).map(|j| if j < k { (z[j] - theta[j]).powi(2) } else { theta[j].powi(2) }).sum();
        prop_assert!((pred - seq).abs() <= 1e-9 * (1.0 + seq), "{} vs {}", pred, seq);
    }

    #[test]
    fn svd_reconstructs_scaled_design(n in 2usize..20, p in 2usize..20, seed in any::<u64>()) {
        let x = gaussian_matrix(n, p, seed);
        let svd = svd_reduce(&x).unwrap();
        let scaled = &x / (n as f64).sqrt();
        prop_assert!((svd.reconstruct() - &scaled).amax() < 1e-10 * (1.0 + scaled.amax()));
        let utu = svd.u.transpose() * &svd.u;
        prop_assert!((utu - DMatrix::identity(svd.rank(), svd.rank())).amax() < 1e-10);
        prop_assert!(svd.s.as_slice().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn alpha_transform_keeps_predictions(alpha in -10.0f64..10.0, seed in any::<u64>()) {
        let x = gaussian_matrix(8, 6, seed);
        let beta = gaussian_vec(6, seed, 3);
        let t = alpha_transform(&x, alpha, Some(&beta)).unwrap();
        let a = &x * &beta;
        let b = &t.x * t.beta.unwrap();
        prop_assert!((a - b).amax() < 1e-10 * (1.0 + (&x * &beta).amax()));
    }
}

#[test]
fn noiseless_rotation_recovers_signal() {
    let x = gaussian_matrix(30, 12, 4);
    let beta = gaussian_vec(12, 4, 9);
    let svd = svd_reduce(&x).unwrap();
    let z = svd.rotate(&(&x * &beta)).unwrap();
    assert!((z - svd.theta_of(&beta).unwrap()).amax() < 1e-12);
    let inst = to_sequence(&(&x * &beta), &svd, Some(&beta), 1.0).unwrap();
    assert_eq!(inst.esd().unwrap(), esd_design(&beta, &svd, 1.0, 30).unwrap());
    assert!((inst.noise_var() - 1.0 / 30.0).abs() < 1e-16);
}

#[test]
fn rank_deficient_design() {
    let col = gaussian_vec(10, 1, 0);
    let x = DMatrix::from_fn(10, 3, |i, j| col[i] * (j + 1) as f64);
    let svd = svd_reduce(&x).unwrap();
    assert_eq!(svd.rank(), 1);
    assert!(pcr_estimate(&col, &svd, 2).is_err());
    assert!(svd_reduce(&DMatrix::zeros(0, 3)).is_err());
}

#[test]
fn whitening_gives_identity_covariance() {
    let d = 4;
    let a = gaussian_matrix(d, d, 8);
    let cov = &a * a.transpose() + DMatrix::identity(d, d) * 0.5;
    let model = CorrelatedNoiseModel::new(cov.clone(), 1.0).unwrap();
    let chol = cov.clone().cholesky().unwrap().l();
    let reps = 20_000;
    let mut acc = DMatrix::zeros(d, d);
    for r in 0..reps {
        let e = &chol * gaussian_vec(d, 21, r);
        let w = whiten(&e, &model).unwrap().z;
        acc += &w * w.transpose();
    }
    acc /= reps as f64;
    // Entries of a sample covariance of unit normals have sd about 1/sqrt(reps).
    assert!((acc - DMatrix::identity(d, d)).amax() < 5.0 * (2.0 / reps as f64).sqrt());

    let (u, v) = (gaussian_vec(d, 3, 0), gaussian_vec(d, 3, 1));
    let w = whiten(&(&u - &v), &model).unwrap().z;
    assert!((w.norm_squared() - mahalanobis_sq(&u, &v, &cov).unwrap()).abs() < 1e-10);

    let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
    assert!(CorrelatedNoiseModel::new(bad, 1.0).is_err());
}

#[test]
fn design_file_round_trip() {
    let x = gen_design(SpectrumCase::Logarithmic, 7, 5, 2);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.bin");
    let meta = DesignMeta {
        n: 7,
        p: 5,
        seed: 2,
        case: SpectrumCase::Logarithmic,
    };
    save_design(&path, &x, &meta).unwrap();
    let (back, m) = load_design(&path).unwrap();
    assert_eq!(back, x);
    assert_eq!(m, meta);
}

#[test]
fn generated_design_covariance() {
    let p = 5;
    let x = gen_design(SpectrumCase::Geometric, 20_000, p, 1);
    let want = SpectrumCase::Geometric.covariance_diag(p);
    for j in 0..p {
        let v = x.column(j).norm_squared() / 20_000.0;
        assert!((v - want[j]).abs() < 5.0 * want[j] * (2.0 / 20_000f64).sqrt(), "j={j}");
    }
}
