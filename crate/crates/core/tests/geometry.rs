use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rgbd_gan::camera::*;
use rgbd_gan::toy::{render_scene, render_with_surfaces, silhouette_mask, SceneSpec, Surface};
use rgbd_tensor::Tensor;

const DEG: f64 = std::f64::consts::PI / 180.0;

fn range() -> DepthRange {
    DepthRange::new(0.5, 10.0).unwrap()
}

/// Per-pixel reference warp written directly from the definition.
pub fn scalar_warp(src: &RgbdImage, target: &DepthMap, k: &CameraIntrinsics, spec: &RotationSpec) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (w, h) = (k.width, k.height);
    let back = central_axis_transform(&spec.reversed());
    let fwd = central_axis_transform(spec);
    let read = |ch: usize, x: i64, y: i64| -> f64 {
        if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
            return 0.0;
        }
        let i = y as usize * w + x as usize;
        if ch < 3 {
            src.rgb.data()[ch * w * h + i] as f64
        } else {
            src.depth.values.data()[i] as f64
        }
    };
    let (mut rgb, mut depth, mut mask) = (vec![0.0; 3 * w * h], vec![0.0; w * h], vec![0.0; w * h]);
    for y in 0..h {
        for x in 0..w {
            let p = k.unproject_pixel(x as f64, y as f64, target.get(x, y) as f64);
            let q = back.apply(p);
            if q[2] <= 1e-6 {
                continue;
            }
            let (u, v) = k.project(q);
            let s = BORDER_SLACK;
            if u < -s || v < -s || u > (w - 1) as f64 + s || v > (h - 1) as f64 + s {
                continue;
            }
            let (x0, y0) = (u.floor(), v.floor());
            let (a, b) = (u - x0, v - y0);
            let (x0, y0) = (x0 as i64, y0 as i64);
            let sample = |ch| {
                (1.0 - a) * (1.0 - b) * read(ch, x0, y0)
                    + a * (1.0 - b) * read(ch, x0 + 1, y0)
                    + (1.0 - a) * b * read(ch, x0, y0 + 1)
                    + a * b * read(ch, x0 + 1, y0 + 1)
            };
            let i = y * w + x;
            mask[i] = 1.0;
            for ch in 0..3 {
                rgb[ch * w * h + i] = sample(ch);
            }
            let ds = sample(3);
            let surface = [(u - k.cx) / k.fx * ds, (v - k.cy) / k.fy * ds, ds];
            depth[i] = fwd.apply(surface)[2];
        }
    }
    (rgb, depth, mask)
}

fn random_rgbd(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> RgbdImage {
    let rgb = Tensor::from_fn([3, n, n], |_| rng.random_range(-1.0f32..1.0));
    let depth = Tensor::from_fn([n, n], |_| rng.random_range(lo as f32..hi as f32));
    RgbdImage::new(rgb, DepthMap::new(depth, range()).unwrap()).unwrap()
}

#[test]
fn unproject_matches_scalar_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let k = intrinsics_from_focal(26.0, 36.0, 8, 8).unwrap();
    let d = random_rgbd(&mut rng, 8, 1.0, 9.0).depth;
    let pts = unproject(&d, &k).unwrap();
    for y in 0..8 {
        for x in 0..8 {
            let z = d.get(x, y) as f64;
            let want = [(x as f64 - k.cx) * z / k.fx, (y as f64 - k.cy) * z / k.fy, z];
            for c in 0..3 {
                assert!((pts[y * 8 + x][c] - want[c]).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn warp_matches_scalar_oracle_on_random_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let k = intrinsics_from_focal(26.0, 36.0, 16, 16).unwrap();
    for deg in [-15.0, -5.0, 5.0, 15.0] {
        let src = random_rgbd(&mut rng, 16, 2.0, 6.0);
        let tgt = random_rgbd(&mut rng, 16, 2.0, 6.0).depth;
        let spec = RotationSpec::vertical(0.0, deg * DEG, centroid_pivot(src.depth.values.data()));
        let out = backward_warp(&src, &tgt, &k, &spec).unwrap();
        let (rgb, depth, mask) = scalar_warp(&src, &tgt, &k, &spec);
        for (a, b) in out.rgbd.rgb.data().iter().zip(&rgb) {
            assert!((*a as f64 - b).abs() <= 1e-5);
        }
        for (a, b) in out.rgbd.depth.values.data().iter().zip(&depth) {
            assert!((*a as f64 - b).abs() <= 1e-5 * b.abs().max(1.0));
        }
        assert_eq!(out.mask.data().iter().map(|&m| m as f64).collect::<Vec<_>>(), mask);
    }
}

#[test]
fn fronto_parallel_plane_matches_oracle() {
    let k = intrinsics_from_focal(26.0, 36.0, 32, 32).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rgb = Tensor::from_fn([3, 32, 32], |_| rng.random_range(-1.0f32..1.0));
    let plane = DepthMap::new(Tensor::full([32, 32], 4.0), range()).unwrap();
    let src = RgbdImage::new(rgb, plane.clone()).unwrap();
    let spec = RotationSpec::vertical(0.0, 10.0 * DEG, [0.0, 0.0, 4.0]);
    let out = backward_warp(&src, &plane, &k, &spec).unwrap();
    let (rgb, _, mask) = scalar_warp(&src, &plane, &k, &spec);
    for (a, b) in out.rgbd.rgb.data().iter().zip(&rgb) {
        assert!((*a as f64 - b).abs() <= 1e-5);
    }
    assert_eq!(out.mask.data().iter().map(|&m| m as f64).collect::<Vec<_>>(), mask);
}

#[test]
fn identity_warp_reproduces_source() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let k = intrinsics_from_focal(26.0, 36.0, 16, 16).unwrap();
    let src = random_rgbd(&mut rng, 16, 0.5, 10.0);
    let spec = RotationSpec::vertical(0.2, 0.2, centroid_pivot(src.depth.values.data()));
    let out = backward_warp(&src, &src.depth, &k, &spec).unwrap();
    assert!(out.mask.data().iter().all(|&m| m == 1.0));
    for (a, b) in out.rgbd.rgb.data().iter().zip(src.rgb.data()) {
        assert!((a - b).abs() <= 1e-5);
    }
    for (a, b) in out.rgbd.depth.values.data().iter().zip(src.depth.values.data()) {
        assert!((a - b).abs() <= 1e-5);
    }
}

#[test]
fn empty_room_centre_depth() {
    let k = intrinsics_from_focal(26.0, 36.0, 33, 33).unwrap();
    let k = CameraIntrinsics { cx: 16.0, cy: 16.0, ..k };
    let spec = SceneSpec::empty_room([4.0, 2.5, 3.0], 2.0);
    let im = render_scene(&spec, 0.0, &k, range()).unwrap();
    assert!((im.depth.get(16, 16) - 5.0).abs() < 1e-6);
    assert!(im.depth.values.data().iter().all(|&d| (0.5..=10.0).contains(&d)));
}

/// Independent depth reference: march each ray against box signed distances, then bisect.
fn marched_depth(spec: &SceneSpec, theta: f64, k: &CameraIntrinsics, x: usize, y: usize) -> f64 {
    let c = spec.pivot();
    let to_canonical = |p: [f64; 3]| -> [f64; 3] {
        let (s, co) = (-theta).sin_cos();
        let d = [p[0] - c[0], p[1] - c[1], p[2] - c[2]];
        [co * d[0] + s * d[2] + c[0], d[1] + c[1], -s * d[0] + co * d[2] + c[2]]
    };
    let box_sdf = |p: [f64; 3], centre: [f64; 3], half: [f64; 3]| -> f64 {
        let q: [f64; 3] = std::array::from_fn(|i| (p[i] - centre[i]).abs() - half[i]);
        let outside = q.iter().map(|v| v.max(0.0).powi(2)).sum::<f64>().sqrt();
        outside + q[0].max(q[1]).max(q[2]).min(0.0)
    };
    // Negative inside free space, positive inside solids or outside the room.
    let field = |t: f64| -> f64 {
        let p = to_canonical([(x as f64 - k.cx) / k.fx * t, (y as f64 - k.cy) / k.fy * t, t]);
        let mut f = box_sdf(p, c, spec.room_half);
        for o in &spec.objects {
            f = f.max(-box_sdf(p, o.center, o.half));
        }
        f
    };
    let mut t = 1e-3;
    let step = 1e-3;
    while field(t) < 0.0 {
        t += step;
    }
    let (mut lo, mut hi) = (t - step, t);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if field(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

#[test]
fn ray_cast_depth_matches_marched_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let k = intrinsics_from_focal(26.0, 36.0, 24, 24).unwrap();
    let spec = SceneSpec::random(&mut rng);
    let theta = 9.0 * DEG;
    let r = render_with_surfaces(&spec, theta, &k, range()).unwrap();
    let mut checked = 0;
    for y in 1..23 {
        for x in 1..23 {
            // Skip pixels whose neighbourhood straddles two surfaces.
            let own = r.surfaces[y * 24 + x];
            if [y * 24 + x - 1, y * 24 + x + 1, (y - 1) * 24 + x, (y + 1) * 24 + x].iter().any(|&j| r.surfaces[j] != own) {
                continue;
            }
            let want = marched_depth(&spec, theta, &k, x, y);
            let got = r.image.depth.get(x, y) as f64;
            // Stored as f32; the reference itself is exact to the bisection width.
            assert!((got - want).abs() <= 1e-6 + want * f32::EPSILON as f64, "({x},{y}) {got} vs {want}");
            checked += 1;
        }
    }
    assert!(checked > 24 * 24 / 2, "only {checked} interior pixels");
    assert!(r.surfaces.iter().any(|s| matches!(s, Surface::Object(_))));
}

/// Measurement used to size the toy scenes: worst renderer/warp disagreement.
#[test]
fn renderer_and_warp_agree() {
    let k = intrinsics_from_focal(26.0, 36.0, 64, 64).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (mut worst_rgb, mut worst_d) = (0f64, 0f64);
    for _ in 0..50 {
        let spec = SceneSpec::random(&mut rng);
        let t1 = rng.random_range(-15.0..15.0) * DEG;
        let t2 = rng.random_range(-15.0..15.0) * DEG;
        let a = render_scene(&spec, t1, &k, range()).unwrap();
        let b = render_scene(&spec, t2, &k, range()).unwrap();
        let out = backward_warp(&a, &b.depth, &k, &RotationSpec::vertical(t1, t2, spec.pivot())).unwrap();
        let ea = silhouette_mask(&a.depth, 0.1);
        let eb = silhouette_mask(&b.depth, 0.1);
        let n = 64 * 64;
        let (mut srgb, mut sd, mut cnt) = (0.0, 0.0, 0.0);
        for i in 0..n {
            if out.mask.data()[i] == 0.0 || ea.data()[i] != 0.0 || eb.data()[i] != 0.0 {
                continue;
            }
            cnt += 1.0;
            for ch in 0..3 {
                srgb += (out.rgbd.rgb.data()[ch * n + i] - b.rgb.data()[ch * n + i]).abs() as f64;
            }
            sd += (range().normalize(out.rgbd.depth.values.data()[i] as f64) - range().normalize(b.depth.values.data()[i] as f64)).abs();
        }
        worst_rgb = worst_rgb.max(srgb / (3.0 * cnt));
        worst_d = worst_d.max(sd / cnt);
    }
    eprintln!("worst rgb {worst_rgb:.5} worst depth {worst_d:.5}");
    assert!(worst_rgb <= 0.02 && worst_d <= 0.01);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn pivot_is_fixed(theta in -1.0f64..1.0, px in -2.0f64..2.0, pz in 0.5f64..6.0, y in -3.0f64..3.0) {
        let t = central_axis_transform(&RotationSpec::vertical(0.0, theta, [px, 0.0, pz]));
        // Every point on the vertical axis through the pivot stays put.
        let q = t.apply([px, y, pz]);
        prop_assert!((q[0] - px).abs() < 1e-12 && (q[1] - y).abs() < 1e-12 && (q[2] - pz).abs() < 1e-12);
    }

    #[test]
    fn mask_shrinks_with_angle(depth in 2.0f32..8.0, sign in prop::bool::ANY) {
        let k = intrinsics_from_focal(26.0, 36.0, 24, 24).unwrap();
        let plane = DepthMap::new(Tensor::full([24, 24], depth), range()).unwrap();
        let src = RgbdImage::new(Tensor::zeros([3, 24, 24]), plane.clone()).unwrap();
        let mut last = usize::MAX;
        for step in 0..8 {
            let deg = step as f64 * 2.0 * if sign { 1.0 } else { -1.0 };
            let spec = RotationSpec::vertical(0.0, deg * DEG, [0.0, 0.0, depth as f64]);
            let valid = backward_warp(&src, &plane, &k, &spec).unwrap().mask.data().iter().filter(|&&m| m == 1.0).count();
            if step == 0 {
                prop_assert_eq!(valid, 24 * 24);
            }
            prop_assert!(valid <= last);
            last = valid;
        }
    }
}
