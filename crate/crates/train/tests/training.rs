use std::fs;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rgbd_gan::camera::{DepthRange, RgbdImage};
use rgbd_gan::discriminator::DiscriminatorConfig;
use rgbd_gan::generator::{ChannelSchedule, GenNoise, GeneratorConfig, Latents};
use rgbd_gan::nn::{AdamConfig, Group, ParamId, ParamStore};
use rgbd_gan::objectives::LossWeights;
use rgbd_gan::toy::{render_scene, SceneSpec};
use rgbd_gan::Error;
use rgbd_tensor::gradcheck::{check_gradients, GradCheckOptions, GradCheckReport};
use rgbd_tensor::{Tensor, Var};
use rgbd_train::checkpoint::{read_manifest, FORMAT_VERSION};
use rgbd_train::losses;
use rgbd_train::*;

fn train_config(batch: usize, seed: u64) -> TrainConfig {
    TrainConfig { batch, steps: 0, adam: AdamConfig::default(), weights: LossWeights::BASE, seed, checkpoint_every: 0 }
}

fn toy_images(cfg: &ModelConfig, n: usize, seed: u64) -> Vec<RgbdImage> {
    let k = cfg.intrinsics().unwrap();
    let g = &cfg.generator;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let spec = SceneSpec::random(&mut rng);
            let theta = g.theta_min + (g.theta_max - g.theta_min) * (i as f64 + 0.5) / n as f64;
            render_scene(&spec, theta, &k, g.depth_range).unwrap()
        })
        .collect()
}

fn real_batch(images: &[RgbdImage]) -> RealBatch {
    let (rgb, depth) = RgbdImage::stack(images).unwrap();
    RealBatch { rgb, depth }
}

/// Gradient check of `loss` against every parameter tensor of `group`.
fn check_group(
    store: &ParamStore<f64>,
    group: Group,
    samples: usize,
    loss: impl Fn(&rgbd_gan::nn::Bound<f64>) -> Var<f64>,
) -> GradCheckReport {
    let ids: Vec<ParamId> = store.ids_in(group);
    let inputs: Vec<Tensor<f64>> = ids.iter().map(|&id| store.get(id).clone()).collect();
    let f = |vars: &[Var<f64>]| {
        let overrides: Vec<(ParamId, Var<f64>)> = ids.iter().copied().zip(vars.iter().cloned()).collect();
        loss(&store.bind_with(&overrides))
    };
    check_gradients(f, &inputs, GradCheckOptions { samples_per_input: samples, ..Default::default() })
}

/// The tiny preset with a fixed pivot: the scene-centroid pivot is held constant
/// during differentiation, so finite differences through it would not match.
fn gradcheck_model() -> Model {
    Model::new(ModelConfig { pivot_depth: Some(4.0), ..ModelConfig::tiny() }, 3).unwrap()
}

fn assert_gradients(name: &str, report: &GradCheckReport) {
    assert!(report.checked >= 100, "{name}: only {} coordinates", report.checked);
    assert!(report.passes(1e-3), "{name}: {report:?}");
}

#[test]
fn generator_loss_gradients_match_finite_differences() {
    let model = gradcheck_model();
    let store: ParamStore<f64> = model.params.cast();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let latents = Latents::sample(&mut rng, 16, vec![0.1, -0.2]);
    let noise: GenNoise<f64> = GenNoise::random(&model.generator, 2, &mut rng);
    let t2 = [-0.15, 0.2];

    for group in [Group::DepthGen, Group::RgbGen] {
        let r = check_group(&store, group, 8, |b| losses::generator_adversarial(&model, b, &latents, &noise).unwrap());
        assert_gradients(&format!("adv_g / {group}"), &r);
    }
    let r = check_group(&store, Group::DepthGen, 8, |b| {
        losses::depth_rotation(&model, b, &latents.z_d, &latents.theta, &t2, &noise).unwrap()
    });
    assert_gradients("rot_depth", &r);
    let r = check_group(&store, Group::RgbGen, 8, |b| losses::appearance(&model, b, &latents, &t2, &noise).unwrap().rot_rgb);
    assert_gradients("rot_rgb", &r);
    let r = check_group(&store, Group::RgbGen, 8, |b| losses::appearance(&model, b, &latents, &t2, &noise).unwrap().dp_fake);
    assert_gradients("dp_fake", &r);
}

#[test]
fn discriminator_loss_gradients_match_finite_differences() {
    let model = gradcheck_model();
    let store: ParamStore<f64> = model.params.cast();
    let real = real_batch(&toy_images(&model.cfg, 2, 5));
    let fake = model.generate(&Latents::sample(&mut ChaCha8Rng::seed_from_u64(6), 16, vec![0.0, 0.1])).unwrap();
    let (rr, rd) = (real.rgb.cast::<f64>(), real.depth.cast::<f64>());
    let (fr, fd) = (fake.rgb.value().cast::<f64>(), fake.depth.value().cast::<f64>());
    let run = |b: &rgbd_gan::nn::Bound<f64>| losses::discriminator(&model, b, &rr, &rd, &fr, &fd, 0.3).unwrap();
    assert_gradients("adv_d", &check_group(&store, Group::Disc, 6, |b| run(b).adv_d));
    assert_gradients("dp_real", &check_group(&store, Group::Disc, 6, |b| run(b).dp_real));
    assert_gradients("r1", &check_group(&store, Group::Disc, 6, |b| run(b).r1));
}

#[test]
fn appearance_losses_do_not_reach_the_depth_path() {
    let model = gradcheck_model();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let latents = Latents::sample(&mut rng, 16, vec![0.1, -0.2]);
    let noise = GenNoise::random(&model.generator, 2, &mut rng);
    let b = model.params.bind(&[Group::RgbGen]);
    let l = losses::appearance(&model, &b, &latents, &[0.2, 0.0], &noise).unwrap();
    let loss = l.rot_rgb.add(&l.dp_fake);
    let g = loss.backward();
    let trainable = b.trainable();
    assert!(trainable.iter().all(|(id, _)| model.params.group(*id) == Group::RgbGen));
    assert!(trainable.iter().any(|(_, v)| g.tensor(v).is_some_and(|t| t.data().iter().any(|&x| x != 0.0))));
}

#[test]
fn each_phase_updates_only_its_group() {
    let cfg = ModelConfig::tiny();
    let data = toy_images(&cfg, 16, 8);
    let mut state = TrainState::new(cfg, train_config(4, 9)).unwrap();
    let hashes = |p: &ParamStore<f32>| Group::ALL.map(|g| p.group_hash(g));
    let expected: [(u8, [bool; 3]); 4] =
        [(1, [true, true, false]), (2, [true, false, false]), (3, [false, true, false]), (4, [false, false, true])];
    for _ in 0..20 {
        let real = sample_real(&mut state, &data).unwrap();
        let mut before = hashes(&state.model.params);
        let mut phases = Vec::new();
        train_step_observed(&mut state, &real, |phase, params| {
            let after = hashes(params);
            phases.push((phase, [0, 1, 2].map(|i| after[i] != before[i])));
            before = after;
        })
        .unwrap();
        assert_eq!(phases, expected);
    }
    assert_eq!(state.step, 20);
}

#[test]
fn rotation_views_share_codes() {
    let l = Latents::sample(&mut ChaCha8Rng::seed_from_u64(1), 4, vec![0.1, 0.2]);
    let other = l.with_theta(vec![-0.1, 0.0]);
    assert_eq!((&l.z_d, &l.z_rgb), (&other.z_d, &other.z_rgb));
}

#[test]
fn sample_angles_are_independent_uniform_draws() {
    let (lo, hi) = ((-15f64).to_radians(), 15f64.to_radians());
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let n = 10_000;
    let draws: Vec<(f64, f64)> = (0..n).map(|_| sample_angles(&mut rng, lo, hi)).collect();
    let all = || draws.iter().flat_map(|&(a, b)| [a, b]);
    assert!(all().all(|t| (lo..=hi).contains(&t)));
    let sigma = (hi - lo) / 12f64.sqrt() / (2.0 * n as f64).sqrt();
    let mean = all().sum::<f64>() / (2 * n) as f64;
    assert!(mean.abs() <= 3.0 * sigma, "mean {mean}, sigma {sigma}");
    let var = (hi - lo).powi(2) / 12.0;
    let corr = draws.iter().map(|&(a, b)| a * b).sum::<f64>() / n as f64 / var;
    assert!(corr.abs() < 4.0 / (n as f64).sqrt(), "correlation {corr}");

    let mut again = ChaCha8Rng::seed_from_u64(10);
    assert!(draws.iter().take(100).all(|&d| d == sample_angles(&mut again, lo, hi)));
}

fn run_logged(steps: u64, seed: u64) -> (TrainState, Vec<u8>) {
    let cfg = ModelConfig::tiny();
    let data = toy_images(&cfg, 12, 11);
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("metrics.log");
    let mut state = TrainState::new(cfg, train_config(2, seed)).unwrap();
    let opts = FitOptions { until_step: steps, metrics: Some(log.clone()), ..Default::default() };
    fit(&mut state, &data, &opts, |_| {}).unwrap();
    (state, fs::read(&log).unwrap())
}

#[test]
fn fixed_seed_reproduces_the_loss_log() {
    let (a, log_a) = run_logged(8, 12);
    let (b, log_b) = run_logged(8, 12);
    assert!(!log_a.is_empty());
    assert_eq!(log_a, log_b);
    assert!(a.model.params.bitwise_eq(&b.model.params));
    let (_, log_c) = run_logged(8, 13);
    assert_ne!(log_a, log_c);
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let (state, _) = run_logged(3, 14);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("state.ckpt");
    save_checkpoint(&state, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert!(back.model.params.bitwise_eq(&state.model.params));
    assert_eq!(back.step, state.step);
    assert_eq!(back.train, state.train);
    assert_eq!(back.model.cfg, state.model.cfg);
    for (a, b) in back.optimizers.iter().zip(&state.optimizers) {
        assert_eq!(a.steps, b.steps);
        for (x, y) in a.m.iter().chain(&a.v).zip(b.m.iter().chain(&b.v)) {
            assert!(x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }
    assert_eq!(back.latent_rng, state.latent_rng);
    assert_eq!(back.data_rng, state.data_rng);

    save_checkpoint(&back, &dir.path().join("again.ckpt")).unwrap();
    assert_eq!(fs::read(&path).unwrap(), fs::read(dir.path().join("again.ckpt")).unwrap());
}

#[test]
fn resumed_run_matches_unbroken_run() {
    let cfg = ModelConfig::tiny();
    let data = toy_images(&cfg, 12, 15);
    let dir = tempfile::tempdir().unwrap();

    let mut unbroken = TrainState::new(cfg.clone(), train_config(2, 16)).unwrap();
    let full = fit(&mut unbroken, &data, &FitOptions { until_step: 15, ..Default::default() }, |_| {}).unwrap();

    let mut first = TrainState::new(cfg, train_config(2, 16)).unwrap();
    let opts = FitOptions { until_step: 5, checkpoint_dir: Some(dir.path().to_path_buf()), ..Default::default() };
    fit(&mut first, &data, &opts, |_| {}).unwrap();
    drop(first);
    let mut resumed = load_checkpoint(&resolve_checkpoint(dir.path()).unwrap()).unwrap();
    assert_eq!(resumed.step, 5);
    let rest = fit(&mut resumed, &data, &FitOptions { until_step: 15, ..Default::default() }, |_| {}).unwrap();

    assert_eq!(rest.len(), 10);
    assert_eq!(&full[5..], &rest[..]);
    assert!(resumed.model.params.bitwise_eq(&unbroken.model.params));
}

#[test]
fn version_mismatch_is_refused() {
    let (state, _) = run_logged(1, 17);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.ckpt");
    save_checkpoint(&state, &path).unwrap();
    let mut bytes = fs::read(&path).unwrap();
    bytes[8..12].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
    fs::write(&path, &bytes).unwrap();
    let err = load_checkpoint(&path).unwrap_err();
    assert!(matches!(&err, Error::Format { message, .. } if message.contains("version")), "{err}");
    assert!(read_manifest(&path).is_err());
}

#[test]
fn corrupt_checkpoints_are_refused_with_a_diff() {
    let (state, _) = run_logged(1, 18);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.ckpt");
    save_checkpoint(&state, &path).unwrap();
    let bytes = fs::read(&path).unwrap();

    let renamed = String::from_utf8_lossy(&bytes).contains("disc.branch.head.weight");
    assert!(renamed);
    let needle = b"disc.branch.head.weight";
    let at = bytes.windows(needle.len()).position(|w| w == needle).unwrap();
    let mut patched = bytes.clone();
    patched[at + needle.len() - 1] = b'x';
    fs::write(&path, &patched).unwrap();
    let err = load_checkpoint(&path).unwrap_err().to_string();
    assert!(err.contains("missing disc.branch.head.weight") && err.contains("unexpected disc.branch.head.weighx"), "{err}");

    fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
    assert!(load_checkpoint(&path).unwrap_err().to_string().contains("payload"));
    fs::write(&path, b"garbage").unwrap();
    assert!(load_checkpoint(&path).is_err());
    assert!(load_checkpoint(&dir.path().join("missing.ckpt")).is_err());
}

#[test]
fn non_finite_losses_abort_the_step_and_restore_state() {
    let cfg = ModelConfig::tiny();
    let data = toy_images(&cfg, 4, 19);
    let mut state = TrainState::new(cfg, train_config(2, 20)).unwrap();
    let mut real = real_batch(&data[..2]);
    real.rgb.data_mut()[0] = f32::NAN;
    let before = state.model.params.clone();
    let err = train_step(&mut state, &real).unwrap_err();
    assert!(matches!(err, Error::NonFinite { step: 1, phase: 4, .. }), "{err}");
    assert!(state.model.params.bitwise_eq(&before));
    assert_eq!(state.step, 0);
    assert_eq!(state.optimizers[2].steps, 0);
}

#[test]
fn mismatched_batches_and_bad_configs_are_rejected() {
    let cfg = ModelConfig::tiny();
    let data = toy_images(&cfg, 3, 21);
    let mut state = TrainState::new(cfg.clone(), train_config(2, 22)).unwrap();
    assert!(matches!(train_step(&mut state, &real_batch(&data)), Err(Error::InvalidArgument(_))));
    assert!(matches!(TrainState::new(cfg, train_config(1, 0)), Err(Error::Config { key, .. }) if key == "train.batch"));
}

fn smoke_config() -> ModelConfig {
    let range = DepthRange::new(0.5, 10.0).unwrap();
    let theta = 15f64.to_radians();
    ModelConfig {
        generator: GeneratorConfig {
            latent_dim: 32,
            mapping_layers: 2,
            angle_freqs: 4,
            resolution: 64,
            channels: ChannelSchedule(vec![(4, 16), (8, 16), (16, 8), (32, 8), (64, 4)]),
            depth_range: range,
            theta_min: -theta,
            theta_max: theta,
            fusion_kernel: 3,
        },
        discriminator: DiscriminatorConfig {
            resolution: 64,
            channels: ChannelSchedule(vec![(64, 4), (32, 8), (16, 8), (8, 16), (4, 16)]),
            depth_classes: 10,
            branch_channels: 8,
            depth_range: range,
        },
        focal_mm: 26.0,
        sensor_width_mm: 36.0,
        pivot_depth: None,
    }
}

#[test]
fn fifty_steps_at_64_keep_losses_finite_and_lower_the_discriminator_loss() {
    let cfg = smoke_config();
    let data = toy_images(&cfg, 64, 23);
    let mut state = TrainState::new(cfg, TrainConfig { batch: 8, ..train_config(8, 24) }).unwrap();
    let reports = fit(&mut state, &data, &FitOptions { until_step: 50, ..Default::default() }, |_| {}).unwrap();
    assert_eq!(reports.len(), 50);
    assert!(reports.iter().all(|r| r.entries().iter().all(|(_, v)| v.is_finite())));
    let first = reports[0].totals.d;
    let last = reports[45..].iter().map(|r| r.totals.d).sum::<f64>() / 5.0;
    assert!(last < first, "L_D {first} -> {last}");
}

proptest::proptest! {
    #![proptest_config(proptest::prelude::ProptestConfig { cases: 64, failure_persistence: None, ..Default::default() })]

    #[test]
    fn sampled_angles_stay_in_any_range(lo in -1.0f64..1.0, width in 1e-6f64..1.0, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..32 {
            let (a, b) = sample_angles(&mut rng, lo, lo + width);
            proptest::prop_assert!(a >= lo && a <= lo + width && b >= lo && b <= lo + width);
        }
    }
}
