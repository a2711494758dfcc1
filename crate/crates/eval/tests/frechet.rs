use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rgbd_eval::{embedding_stats, frechet_distance, Embedder, GaussianStats, IdentityDownsample, RandomConvEmbedder};
use rgbd_gan::camera::{DepthMap, DepthRange, RgbdImage};
use rgbd_tensor::Tensor;

fn stats(mean: Vec<f64>, cov: DMatrix<f64>) -> GaussianStats {
    GaussianStats::new(DVector::from_vec(mean), cov).unwrap()
}

fn random_spd(rng: &mut impl Rng, d: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(d, d) * 0.1
}

/// Denman–Beavers iteration for the principal square root of a (non-symmetric) matrix.
fn sqrtm_db(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let mut y = a.clone();
    let mut z = DMatrix::identity(n, n);
    for _ in 0..100 {
        let yi = y.clone().try_inverse().unwrap();
        let zi = z.clone().try_inverse().unwrap();
        let y2 = (&y + zi) * 0.5;
        z = (&z + yi) * 0.5;
        y = y2;
    }
    y
}

fn frechet_oracle(a: &GaussianStats, b: &GaussianStats) -> f64 {
    let prod = &a.cov * &b.cov;
    let root = sqrtm_db(&prod);
    (&a.mean - &b.mean).norm_squared() + a.cov.trace() + b.cov.trace() - 2.0 * root.trace()
}

#[test]
fn one_dimensional_unit_shift_is_one() {
    let a = stats(vec![0.0], DMatrix::from_element(1, 1, 1.0));
    let b = stats(vec![1.0], DMatrix::from_element(1, 1, 1.0));
    assert!((frechet_distance(&a, &b).unwrap() - 1.0).abs() <= 1e-6);
}

#[test]
fn identical_inputs_give_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = stats(vec![0.3, -1.0, 2.0, 0.5], random_spd(&mut rng, 4));
    assert!(frechet_distance(&a, &a).unwrap().abs() <= 1e-6);
}

#[test]
fn matches_iterative_sqrt_oracle_on_random_spd_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let mean = |rng: &mut ChaCha8Rng| (0..4).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<f64>>();
        let a = stats(mean(&mut rng), random_spd(&mut rng, 4));
        let b = stats(mean(&mut rng), random_spd(&mut rng, 4));
        let got = frechet_distance(&a, &b).unwrap();
        let want = frechet_oracle(&a, &b);
        assert!((got - want).abs() <= 1e-5, "{got} vs {want}");
    }
}

#[test]
fn singular_covariances_are_handled() {
    let a = stats(vec![0.0, 0.0], DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]));
    let b = stats(vec![0.0, 0.0], DMatrix::zeros(2, 2));
    assert!((frechet_distance(&a, &b).unwrap() - 2.0).abs() < 1e-9);
}

#[test]
fn dimension_mismatch_is_an_error() {
    let a = stats(vec![0.0], DMatrix::identity(1, 1));
    let b = stats(vec![0.0, 0.0], DMatrix::identity(2, 2));
    assert!(frechet_distance(&a, &b).is_err());
}

#[test]
fn asymmetric_covariance_is_rejected() {
    assert!(GaussianStats::new(DVector::zeros(2), DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0])).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn frechet_is_symmetric_and_nonnegative(seed in any::<u64>(), d in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mean = |rng: &mut ChaCha8Rng| (0..d).map(|_| rng.random_range(-3.0..3.0)).collect::<Vec<f64>>();
        let a = stats(mean(&mut rng), random_spd(&mut rng, d));
        let b = stats(mean(&mut rng), random_spd(&mut rng, d));
        let ab = frechet_distance(&a, &b).unwrap();
        let ba = frechet_distance(&b, &a).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() <= 1e-8 * (1.0 + ab));
        prop_assert!(frechet_distance(&a, &a).unwrap() <= 1e-8 * (1.0 + a.cov.trace()));
        if (&a.mean - &b.mean).norm() > 1e-3 {
            prop_assert!(ab > 0.0);
        }
    }
}

fn range() -> DepthRange {
    DepthRange::new(0.5, 10.0).unwrap()
}

fn image(rgb: impl Fn(usize) -> f32, depth: impl Fn(usize) -> f32, size: usize) -> RgbdImage {
    let rgb = Tensor::from_fn(vec![3, size, size], rgb);
    let depth = DepthMap::new(Tensor::from_fn(vec![size, size], depth), range()).unwrap();
    RgbdImage::new(rgb, depth).unwrap()
}

#[test]
fn constant_images_have_zero_covariance() {
    let imgs: Vec<_> = (0..5).map(|_| image(|_| 0.25, |_| 3.0, 16)).collect();
    for e in [&IdentityDownsample { size: 8, range: range() } as &dyn Embedder, &RandomConvEmbedder::new(3, range())] {
        let s = embedding_stats(&imgs, e).unwrap();
        assert!(s.cov.amax() < 1e-24);
        assert_eq!(s.dim(), e.dim());
    }
}

#[test]
fn two_known_embeddings() {
    // 1×1 thumbnails of uniform images: features are the channel means.
    let e = IdentityDownsample { size: 1, range: range() };
    let a = image(|_| 0.0, |_| 0.5, 4);
    let b = image(|_| 1.0, |_| 10.0, 4);
    let s = embedding_stats(&[a, b], &e).unwrap();
    assert_eq!(s.mean.as_slice(), &[0.5, 0.5, 0.5, 0.5]);
    // Each feature is {0, 1}: variance (0.25 + 0.25) / 1 = 0.5, all pairs fully correlated.
    assert!(s.cov.iter().all(|&v| (v - 0.5).abs() < 1e-12));
}

#[test]
fn stats_match_two_pass_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let imgs: Vec<_> = (0..12)
        .map(|_| {
            let r: Vec<f32> = (0..3 * 64).map(|_| rng.random_range(-1.0..1.0)).collect();
            let d: Vec<f32> = (0..64).map(|_| rng.random_range(0.5..10.0)).collect();
            image(|i| r[i], |i| d[i], 8)
        })
        .collect();
    let e = IdentityDownsample { size: 2, range: range() };
    let s = embedding_stats(&imgs, &e).unwrap();
    let feats: Vec<Vec<f64>> = imgs.iter().map(|i| e.embed(i).unwrap()).collect();
    let n = feats.len() as f64;
    for i in 0..e.dim() {
        let mi = feats.iter().map(|f| f[i]).sum::<f64>() / n;
        assert!((s.mean[i] - mi).abs() <= 1e-7);
        for j in 0..e.dim() {
            let mj = feats.iter().map(|f| f[j]).sum::<f64>() / n;
            let c = feats.iter().map(|f| (f[i] - mi) * (f[j] - mj)).sum::<f64>() / (n - 1.0);
            assert!((s.cov[(i, j)] - c).abs() <= 1e-7);
        }
    }
}

#[test]
fn fewer_than_two_images_is_an_error() {
    let e = IdentityDownsample { size: 1, range: range() };
    assert!(embedding_stats(&[image(|_| 0.0, |_| 1.0, 4)], &e).is_err());
}

#[test]
fn random_conv_embedder_is_seed_deterministic() {
    let img = image(|i| ((i % 7) as f32 - 3.0) / 3.0, |i| 1.0 + (i % 5) as f32, 16);
    let a = RandomConvEmbedder::new(4, range()).embed(&img).unwrap();
    let b = RandomConvEmbedder::new(4, range()).embed(&img).unwrap();
    let c = RandomConvEmbedder::new(5, range()).embed(&img).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}
