use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rgbd_eval::{depth_prediction_metrics, dp_fake, dp_real, rotation_scores, AnglePairs, GeneratorViews, ToyViews};
use rgbd_gan::camera::{intrinsics_from_focal, DepthRange, RgbdImage};
use rgbd_gan::objectives::{area_downsample, depth_ce, quantize_depth};
use rgbd_gan::toy::{render_scene, SceneSpec};
use rgbd_tensor::{Tensor, Var};
use rgbd_train::{Model, ModelConfig};

fn range() -> DepthRange {
    DepthRange::new(0.5, 10.0).unwrap()
}

fn toy_views(res: usize, seed: u64) -> ToyViews {
    let t = 15f64.to_radians();
    ToyViews {
        k: intrinsics_from_focal(26.0, 36.0, res, res).unwrap(),
        range: range(),
        theta_min: -t,
        theta_max: t,
        rng: ChaCha8Rng::seed_from_u64(seed),
    }
}

fn toy_images(n: usize, res: usize, seed: u64) -> Vec<RgbdImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = intrinsics_from_focal(26.0, 36.0, res, res).unwrap();
    (0..n).map(|_| render_scene(&SceneSpec::random(&mut rng), 0.0, &k, range()).unwrap()).collect()
}

#[test]
fn toy_renderer_sets_the_rotation_floor() {
    let s = rotation_scores(&mut toy_views(64, 1), 64, 11, AnglePairs::Independent).unwrap();
    assert_eq!(s.pairs, 64);
    assert!(s.rp <= 0.01, "toy RP {}", s.rp);
    assert!(s.rc <= 0.02, "toy RC {}", s.rc);
}

#[test]
fn equal_angles_score_zero() {
    let s = rotation_scores(&mut toy_views(32, 2), 16, 3, AnglePairs::Same).unwrap();
    assert!(s.rp.abs() < 1e-6 && s.rc.abs() < 1e-6, "{s:?}");
    let m = Model::new(ModelConfig::tiny(), 1).unwrap();
    let s = rotation_scores(&mut GeneratorViews::new(&m, 4), 16, 4, AnglePairs::Same).unwrap();
    assert!(s.rp.abs() < 1e-6 && s.rc.abs() < 1e-6, "{s:?}");
}

#[test]
fn rotation_scores_are_seed_pinned() {
    let m = Model::new(ModelConfig::tiny(), 1).unwrap();
    let a = rotation_scores(&mut GeneratorViews::new(&m, 5), 40, 5, AnglePairs::Independent).unwrap();
    let b = rotation_scores(&mut GeneratorViews::new(&m, 5), 40, 5, AnglePairs::Independent).unwrap();
    assert_eq!(a, b);
    assert!(rotation_scores(&mut GeneratorViews::new(&m, 5), 0, 5, AnglePairs::Independent).is_err());
}

fn uniform_branch(mut m: Model) -> Model {
    let ids: Vec<_> = m.params.ids().filter(|&id| m.params.name(id).starts_with("disc.branch.head")).collect();
    assert!(!ids.is_empty());
    for id in ids {
        m.params.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    m
}

#[test]
fn uniform_branch_scores_ln_k() {
    let m = uniform_branch(Model::new(ModelConfig::tiny(), 2).unwrap());
    // f32 logits: ln k up to single-precision round-off.
    let ln_k = 10f64.ln();
    let real = toy_images(6, 16, 3);
    let v = dp_real(&m, &real).unwrap();
    assert!((v - ln_k).abs() < 1e-4, "{v}");
    assert!((dp_fake(&m, 5, 1).unwrap() - ln_k).abs() < 1e-4);
    let (r, f) = depth_prediction_metrics(&m, &real, 3, 2).unwrap();
    assert!((r - ln_k).abs() < 1e-4 && (f - ln_k).abs() < 1e-4);
}

#[test]
fn empty_sets_are_errors() {
    let m = Model::new(ModelConfig::tiny(), 2).unwrap();
    assert!(dp_real(&m, &[]).is_err());
    assert!(dp_fake(&m, 0, 1).is_err());
}

#[test]
fn oracle_branch_on_toy_depth_is_near_zero() {
    // Logits that put a large margin on the true class of each toy pixel.
    let imgs = toy_images(8, 64, 5);
    let (_, depth) = RgbdImage::stack(&imgs).unwrap();
    let target = quantize_depth(&area_downsample(&depth, 16).unwrap(), range(), 10).unwrap();
    let plane = 16 * 16;
    let mut logits = vec![0.0f64; 8 * 10 * plane];
    for (i, &c) in target.classes.iter().enumerate() {
        let (b, p) = (i / plane, i % plane);
        logits[(b * 10 + c as usize) * plane + p] = 12.0;
    }
    let ce = depth_ce(&Var::constant(Tensor::new(vec![8, 10, 16, 16], logits)), &target).unwrap().item();
    assert!(ce <= 0.1, "{ce}");
}
