//! Procedural cuboid rooms with exact depth, rendered at any rotation about the pivot.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rgbd_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::camera::{axis_angle, CameraIntrinsics, DepthMap, DepthRange, RgbdImage};
use crate::error::{invalid, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cuboid {
    /// Canonical-frame centre (scene at angle 0).
    pub center: [f64; 3],
    pub half: [f64; 3],
    pub albedo: [f64; 3],
}

/// Which surface a ray hit. Walls are ordered -x, +x, -z (behind the camera), +z.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Surface {
    Wall(u8),
    Floor,
    Ceiling,
    Object(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    /// Room half-extents; the room box is centred on the pivot.
    pub room_half: [f64; 3],
    /// Distance from the camera to the pivot along the optical axis.
    pub camera_distance: f64,
    pub objects: Vec<Cuboid>,
    /// -x, +x, -z, +z walls.
    pub wall_albedo: [[f64; 3]; 4],
    pub floor_albedo: [f64; 3],
    pub ceiling_albedo: [f64; 3],
    /// Depth-cue strength α in `albedo / (1 + α·z)`.
    pub shading: f64,
}

impl SceneSpec {
    pub fn pivot(&self) -> [f64; 3] {
        [0.0, 0.0, self.camera_distance]
    }

    /// Empty grey room.
    pub fn empty_room(room_half: [f64; 3], camera_distance: f64) -> Self {
        Self {
            room_half,
            camera_distance,
            objects: Vec::new(),
            wall_albedo: [[0.6; 3]; 4],
            floor_albedo: [0.4; 3],
            ceiling_albedo: [0.8; 3],
            shading: 0.08,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.room_half.iter().any(|&h| !(h > 0.0)) || !(self.camera_distance >= 0.0) {
            return Err(invalid("room half-extents must be positive and the camera distance non-negative"));
        }
        if self.camera_distance >= self.room_half[2] {
            return Err(invalid("camera must sit inside the room"));
        }
        let albedos = self
            .wall_albedo
            .iter()
            .chain([&self.floor_albedo, &self.ceiling_albedo])
            .chain(self.objects.iter().map(|o| &o.albedo));
        for a in albedos {
            if a.iter().any(|&c| !(0.0..=1.0).contains(&c)) {
                return Err(invalid(format!("albedo {a:?} outside [0, 1]")));
            }
        }
        for (i, o) in self.objects.iter().enumerate() {
            let rel = [o.center[0], o.center[1], o.center[2] - self.camera_distance];
            for ax in 0..3 {
                if o.half[ax] <= 0.0 || rel[ax].abs() + o.half[ax] > self.room_half[ax] + 1e-9 {
                    return Err(invalid(format!("object {i} does not fit inside the room")));
                }
            }
        }
        Ok(())
    }

    /// Random room with one to three floor-standing boxes in its far half.
    pub fn random(rng: &mut impl Rng) -> Self {
        let room_half = [rng.random_range(3.4..4.2), rng.random_range(2.0..2.6), rng.random_range(4.2..5.0)];
        let camera_distance = rng.random_range(2.6..3.2);
        let mut colour = |lo: f64, hi: f64| -> [f64; 3] { std::array::from_fn(|_| rng.random_range(lo..hi)) };
        let wall_albedo = [colour(0.3, 0.9), colour(0.3, 0.9), colour(0.3, 0.9), colour(0.3, 0.9)];
        let floor_albedo = colour(0.1, 0.6);
        let ceiling_albedo = colour(0.6, 1.0);
        let n = rng.random_range(1..=3);
        let objects = (0..n)
            .map(|_| {
                let half = [rng.random_range(0.3..0.9), rng.random_range(0.25..0.9), rng.random_range(0.3..0.8)];
                let x = rng.random_range(-(room_half[0] - half[0] - 0.3)..(room_half[0] - half[0] - 0.3));
                let z = rng.random_range(camera_distance + 1.0..camera_distance + room_half[2] - half[2] - 0.2);
                Cuboid {
                    center: [x, room_half[1] - half[1], z],
                    half,
                    albedo: std::array::from_fn(|_| rng.random_range(0.1..0.95)),
                }
            })
            .collect();
        Self { room_half, camera_distance, objects, wall_albedo, floor_albedo, ceiling_albedo, shading: 0.08 }
    }
}

/// A ray-cast frame with per-pixel surface labels (for silhouette tests).
#[derive(Clone, Debug)]
pub struct Rendering {
    pub image: RgbdImage,
    pub surfaces: Vec<Surface>,
}

/// Renders `spec` rotated by `theta` about its pivot, seen by the fixed camera `k`.
/// Depth is clamped to `range`.
pub fn render_scene(spec: &SceneSpec, theta: f64, k: &CameraIntrinsics, range: DepthRange) -> Result<RgbdImage> {
    Ok(render_with_surfaces(spec, theta, k, range)?.image)
}

pub fn render_with_surfaces(spec: &SceneSpec, theta: f64, k: &CameraIntrinsics, range: DepthRange) -> Result<Rendering> {
    spec.validate()?;
    let (w, h) = (k.width, k.height);
    let c = spec.pivot();
    // Rays are carried into the canonical frame: b = R(-θ)(p - c) + c.
    let r = axis_angle([0.0, 1.0, 0.0], -theta);
    let rot = |p: [f64; 3]| -> [f64; 3] { std::array::from_fn(|i| r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2]) };
    let oc = rot([-c[0], -c[1], -c[2]]);
    let origin = [oc[0] + c[0], oc[1] + c[1], oc[2] + c[2]];

    let mut rgb = vec![0f32; 3 * h * w];
    let mut depth = vec![0f32; h * w];
    let mut surfaces = Vec::with_capacity(h * w);
    for v in 0..h {
        for u in 0..w {
            // Direction with unit camera-z, so the ray parameter is the depth.
            let dir = rot([(u as f64 - k.cx) / k.fx, (v as f64 - k.cy) / k.fy, 1.0]);
            let (t, surface) = cast(spec, origin, dir);
            let hit: [f64; 3] = std::array::from_fn(|i| origin[i] + t * dir[i]);
            let albedo = match surface {
                Surface::Wall(i) => spec.wall_albedo[i as usize],
                Surface::Floor => spec.floor_albedo,
                Surface::Ceiling => spec.ceiling_albedo,
                Surface::Object(i) => spec.objects[i].albedo,
            };
            // Shading uses the canonical depth so a surface point keeps its colour in every view.
            let shade = 1.0 / (1.0 + spec.shading * hit[2].max(0.0));
            let p = v * w + u;
            for ch in 0..3 {
                rgb[ch * h * w + p] = (2.0 * albedo[ch] * shade - 1.0) as f32;
            }
            depth[p] = t.clamp(range.near, range.far) as f32;
            surfaces.push(surface);
        }
    }
    let depth = DepthMap::new(Tensor::new([h, w], depth), range)?;
    Ok(Rendering { image: RgbdImage::new(Tensor::new([3, h, w], rgb), depth)?, surfaces })
}

/// Nearest hit along `origin + t·dir`, `t > 0`.
fn cast(spec: &SceneSpec, origin: [f64; 3], dir: [f64; 3]) -> (f64, Surface) {
    let c = spec.pivot();
    // Inside the room box the ray leaves through the nearest exit face.
    let mut best = (f64::INFINITY, Surface::Floor);
    for ax in 0..3 {
        if dir[ax] == 0.0 {
            continue;
        }
        let lo = c[ax] - spec.room_half[ax];
        let hi = c[ax] + spec.room_half[ax];
        let (plane, positive) = if dir[ax] > 0.0 { (hi, true) } else { (lo, false) };
        let t = (plane - origin[ax]) / dir[ax];
        if t > 0.0 && t < best.0 {
            let surface = match (ax, positive) {
                (0, false) => Surface::Wall(0),
                (0, true) => Surface::Wall(1),
                (1, true) => Surface::Floor,
                (1, false) => Surface::Ceiling,
                (_, false) => Surface::Wall(2),
                (_, true) => Surface::Wall(3),
            };
            best = (t, surface);
        }
    }
    assert!(best.0.is_finite(), "ray escaped a closed room");
    for (i, o) in spec.objects.iter().enumerate() {
        if let Some(t) = slab_entry(o, origin, dir) {
            if t < best.0 {
                best = (t, Surface::Object(i));
            }
        }
    }
    best
}

/// Entry distance of a ray into an axis-aligned box, if it enters ahead of the origin.
fn slab_entry(o: &Cuboid, origin: [f64; 3], dir: [f64; 3]) -> Option<f64> {
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    for ax in 0..3 {
        let lo = o.center[ax] - o.half[ax];
        let hi = o.center[ax] + o.half[ax];
        if dir[ax] == 0.0 {
            if origin[ax] < lo || origin[ax] > hi {
                return None;
            }
            continue;
        }
        let a = (lo - origin[ax]) / dir[ax];
        let b = (hi - origin[ax]) / dir[ax];
        t0 = t0.max(a.min(b));
        t1 = t1.min(a.max(b));
    }
    (t0 <= t1 && t0 > 0.0).then_some(t0)
}

/// 1 at depth discontinuities and their 4-neighbours, 0 elsewhere (`[H, W]`).
///
/// A discontinuity is a neighbouring pair whose depths differ by more than
/// `rel_jump` of the smaller one.
pub fn silhouette_mask(depth: &DepthMap, rel_jump: f64) -> Tensor<f32> {
    let (h, w) = (depth.height(), depth.width());
    let d = depth.values.data();
    let mut edge = vec![false; h * w];
    let jump = |a: f32, b: f32| (a - b).abs() as f64 > rel_jump * a.min(b) as f64;
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if x + 1 < w && jump(d[i], d[i + 1]) {
                edge[i] = true;
                edge[i + 1] = true;
            }
            if y + 1 < h && jump(d[i], d[i + w]) {
                edge[i] = true;
                edge[i + w] = true;
            }
        }
    }
    let mut out = vec![0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            let near_edge = edge[y * w + x]
                || (x > 0 && edge[y * w + x - 1])
                || (x + 1 < w && edge[y * w + x + 1])
                || (y > 0 && edge[(y - 1) * w + x])
                || (y + 1 < h && edge[(y + 1) * w + x]);
            out[y * w + x] = near_edge as u8 as f32;
        }
    }
    Tensor::new([h, w], out)
}

/// Seed for scene `index` of a dataset seeded with `seed`.
pub fn scene_seed(seed: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng.random()
}
