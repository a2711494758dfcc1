use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rgbd_eval::{export_pointcloud, interpolate, rotation_sweep, Interpolated, LatentSpace, MetricReport};
use rgbd_gan::camera::{unproject, CameraIntrinsics, DepthMap, DepthRange, RgbdImage};
use rgbd_gan::generator::Latents;
use rgbd_tensor::Tensor;
use rgbd_train::{Model, ModelConfig};

fn model() -> Model {
    Model::new(ModelConfig::tiny(), 3).unwrap()
}

fn codes(seed: u64, theta: f64) -> Latents {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Latents::sample(&mut rng, 16, vec![theta])
}

#[test]
fn sweep_grid_has_one_column_per_angle() {
    let dir = tempfile::tempdir().unwrap();
    let m = model();
    let angles: Vec<f64> = [-15.0f64, -7.5, 0.0, 7.5, 15.0].iter().map(|d| d.to_radians()).collect();
    let path = dir.path().join("sweep.png");
    let imgs = rotation_sweep(&m, &codes(1, 0.0), &angles, &path).unwrap();
    assert_eq!(imgs.len(), 5);
    let grid = image::open(&path).unwrap().to_rgb8();
    assert_eq!(grid.dimensions(), (5 * 16, 2 * 16));
    let labels = std::fs::read_to_string(path.with_extension("txt")).unwrap();
    assert_eq!(labels.lines().count(), 6);

    let single = rotation_sweep(&m, &codes(1, 0.0), &[0.1], &path).unwrap();
    assert_eq!(single.len(), 1);
    assert_eq!(image::open(&path).unwrap().to_rgb8().dimensions(), (16, 32));
}

#[test]
fn sweep_columns_match_direct_generation() {
    let dir = tempfile::tempdir().unwrap();
    let m = model();
    let c = codes(4, 0.0);
    let imgs = rotation_sweep(&m, &c, &[-0.2, 0.2], &dir.path().join("s.png")).unwrap();
    let direct = m.generate(&c.with_theta(vec![0.2])).unwrap();
    assert_eq!(imgs[1].depth.values.data(), direct.depth.value().data());
    assert_eq!(imgs[1].rgb.data(), direct.rgb.value().data());
}

#[test]
fn extrapolated_sweep_is_still_produced() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("wide.png");
    let imgs = rotation_sweep(&model(), &codes(2, 0.0), &[-0.6, 0.0, 0.6], &path).unwrap();
    assert_eq!(imgs.len(), 3);
    assert!(path.exists());
}

#[test]
fn interpolation_endpoints_are_exact() {
    let dir = tempfile::tempdir().unwrap();
    let m = model();
    let a = codes(5, 0.1);
    let mut b = codes(6, 0.1);
    b.theta = a.theta.clone();
    for which in [Interpolated::Depth, Interpolated::Appearance] {
        let strip = interpolate(&m, &a, &b, which, 5, LatentSpace::Z, &dir.path().join("i.png")).unwrap();
        assert_eq!(strip.len(), 5);
        let ga = m.generate(&a).unwrap();
        assert_eq!(strip[0].rgb.data(), ga.rgb.value().data());
        assert_eq!(strip[0].depth.values.data(), ga.depth.value().data());
        let end = match which {
            Interpolated::Depth => Latents { z_d: b.z_d.clone(), z_rgb: a.z_rgb.clone(), theta: a.theta.clone() },
            Interpolated::Appearance => Latents { z_d: a.z_d.clone(), z_rgb: b.z_rgb.clone(), theta: a.theta.clone() },
        };
        let ge = m.generate(&end).unwrap();
        assert_eq!(strip[4].rgb.data(), ge.rgb.value().data());
        assert_eq!(strip[4].depth.values.data(), ge.depth.value().data());
    }
}

#[test]
fn two_step_interpolation_is_just_the_endpoints() {
    let dir = tempfile::tempdir().unwrap();
    let m = model();
    let (a, b) = (codes(7, 0.0), codes(8, 0.0));
    let strip = interpolate(&m, &a, &b, Interpolated::Depth, 2, LatentSpace::Z, &dir.path().join("i.png")).unwrap();
    assert_eq!(strip.len(), 2);
    assert_eq!(strip[0].depth.values.data(), m.generate(&a).unwrap().depth.value().data());
    assert!(interpolate(&m, &a, &b, Interpolated::Depth, 1, LatentSpace::Z, &dir.path().join("i.png")).is_err());
}

#[test]
fn appearance_interpolation_keeps_depth_fixed() {
    let dir = tempfile::tempdir().unwrap();
    let m = model();
    for space in [LatentSpace::Z, LatentSpace::W] {
        let strip = interpolate(&m, &codes(9, 0.0), &codes(10, 0.0), Interpolated::Appearance, 4, space, &dir.path().join("a.png")).unwrap();
        for img in &strip[1..] {
            assert_eq!(img.depth.values.data(), strip[0].depth.values.data());
        }
        assert_ne!(strip[0].rgb.data(), strip[3].rgb.data());
    }
}

#[test]
fn w_space_endpoints_match_generation() {
    let dir = tempfile::tempdir().unwrap();
    let m = model();
    let a = codes(11, 0.05);
    let strip = interpolate(&m, &a, &codes(12, 0.05), Interpolated::Depth, 3, LatentSpace::W, &dir.path().join("w.png")).unwrap();
    assert_eq!(strip[0].depth.values.data(), m.generate(&a).unwrap().depth.value().data());
}

fn parse_ply(text: &str) -> Vec<[f64; 6]> {
    let (header, body) = text.split_once("end_header\n").unwrap();
    let n: usize = header.lines().find_map(|l| l.strip_prefix("element vertex ")).unwrap().parse().unwrap();
    let rows: Vec<[f64; 6]> = body
        .lines()
        .map(|l| {
            let v: Vec<f64> = l.split_whitespace().map(|t| t.parse().unwrap()).collect();
            [v[0], v[1], v[2], v[3], v[4], v[5]]
        })
        .collect();
    assert_eq!(rows.len(), n);
    rows
}

#[test]
fn pointcloud_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let range = DepthRange::new(0.5, 10.0).unwrap();
    let k = CameraIntrinsics::new(3.0, 3.0, 1.5, 1.5, 4, 4).unwrap();
    let depth = DepthMap::new(Tensor::from_fn(vec![4, 4], |i| 1.0 + 0.37 * i as f32), range).unwrap();
    let rgb = Tensor::from_fn(vec![3, 4, 4], |i| (i as f32 / 24.0) - 1.0);
    let img = RgbdImage::new(rgb.clone(), depth.clone()).unwrap();
    let path = dir.path().join("cloud.ply");
    assert_eq!(export_pointcloud(&img, &k, &path).unwrap(), 16);
    let rows = parse_ply(&std::fs::read_to_string(&path).unwrap());
    let pts = unproject(&depth, &k).unwrap();
    for (r, p) in rows.iter().zip(&pts) {
        for a in 0..3 {
            assert!((r[a] - p[a]).abs() <= 1e-5);
        }
    }
    assert_eq!(rows[0][3], 0.0);
}

#[test]
fn small_pointcloud_vertex_count_and_principal_point() {
    let dir = tempfile::tempdir().unwrap();
    let range = DepthRange::new(0.5, 10.0).unwrap();
    let k = CameraIntrinsics::new(2.0, 2.0, 1.0, 0.0, 2, 2).unwrap();
    let depth = DepthMap::new(Tensor::full(vec![2, 2], 2.0), range).unwrap();
    let img = RgbdImage::new(Tensor::zeros(vec![3, 2, 2]), depth).unwrap();
    let path = dir.path().join("p.ply");
    assert_eq!(export_pointcloud(&img, &k, &path).unwrap(), 4);
    let rows = parse_ply(&std::fs::read_to_string(&path).unwrap());
    // Pixel (u=1, v=0) sits on the principal point.
    assert_eq!((rows[1][0], rows[1][1]), (0.0, 0.0));
}

#[test]
fn metric_report_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = MetricReport::default();
    r.insert("rp", 0.02, 256, 7, "run/checkpoints/step_000010.ckpt");
    r.insert("dp_real", 1.5, 100, 7, "run/checkpoints/step_000010.ckpt");
    let path = dir.path().join("m.json");
    r.write(&path).unwrap();
    let back = MetricReport::read(&path).unwrap();
    assert_eq!(back, r);
    let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
    assert_eq!(json["rp"]["n"], 256);
}
