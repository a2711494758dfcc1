//! Pinhole camera, central-axis rotation and the backward RGBD warp.
//!
//! Convention: the camera looks down +z, x points right and y points down. A scene
//! "at angle θ" is the canonical scene rotated by `R_y(θ)` about a vertical axis
//! through the pivot, with the camera held fixed.

use rgbd_tensor::{Real, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Reprojections this close outside the image still count as inside. Absorbs the
/// round-off of an identity warp, where `u'` lands a few ulps left of column 0.
pub const BORDER_SLACK: f64 = 1e-3;

/// Transformed points with `z` below this are behind the camera.
const MIN_Z: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(invalid(format!("focal lengths must be positive, got fx={fx} fy={fy}")));
        }
        if width == 0 || height == 0 {
            return Err(invalid("image size must be positive"));
        }
        if !(0.0..width as f64).contains(&cx) || !(0.0..height as f64).contains(&cy) {
            return Err(invalid(format!("principal point ({cx}, {cy}) outside {width}x{height}")));
        }
        Ok(Self { fx, fy, cx, cy, width, height })
    }

    /// Camera-frame point seen at pixel `(u, v)` with depth `d`.
    pub fn unproject_pixel(&self, u: f64, v: f64, d: f64) -> [f64; 3] {
        [(u - self.cx) * d / self.fx, (v - self.cy) * d / self.fy, d]
    }

    /// Continuous pixel coordinate of a camera-frame point.
    pub fn project(&self, p: [f64; 3]) -> (f64, f64) {
        (self.fx * p[0] / p[2] + self.cx, self.fy * p[1] / p[2] + self.cy)
    }

    /// Same camera at another resolution (focal scales with width).
    pub fn rescaled(&self, width: usize, height: usize) -> Self {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Self { fx: self.fx * sx, fy: self.fy * sy, cx: self.cx * sx, cy: self.cy * sy, width, height }
    }
}

/// `fx = fy = focal / sensor_width · W`, principal point at the image centre.
pub fn intrinsics_from_focal(focal_mm: f64, sensor_width_mm: f64, width: usize, height: usize) -> Result<CameraIntrinsics> {
    if !(focal_mm > 0.0 && sensor_width_mm > 0.0) || width == 0 || height == 0 {
        return Err(invalid(format!(
            "intrinsics need positive inputs, got focal={focal_mm} sensor={sensor_width_mm} size={width}x{height}"
        )));
    }
    let f = focal_mm / sensor_width_mm * width as f64;
    CameraIntrinsics::new(f, f, width as f64 / 2.0, height as f64 / 2.0, width, height)
}

/// Depth normalisation bounds, in camera units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthRange {
    pub near: f64,
    pub far: f64,
}

impl DepthRange {
    pub fn new(near: f64, far: f64) -> Result<Self> {
        if !(near > 0.0 && far > near) {
            return Err(invalid(format!("depth range needs 0 < near < far, got {near}..{far}")));
        }
        Ok(Self { near, far })
    }

    pub fn span(&self) -> f64 {
        self.far - self.near
    }

    /// Maps `[near, far]` to `[0, 1]`.
    pub fn normalize(&self, d: f64) -> f64 {
        (d - self.near) / self.span()
    }

    pub fn denormalize(&self, t: f64) -> f64 {
        self.near + t * self.span()
    }

    pub fn normalize_var<T: Real>(&self, d: &Var<T>) -> Var<T> {
        d.add_scalar(T::lit(-self.near)).mul_scalar(T::lit(1.0 / self.span()))
    }
}

/// H×W depth along the optical axis.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    /// Shape `[H, W]`.
    pub values: Tensor<f32>,
    pub range: DepthRange,
}

impl DepthMap {
    /// Checks that every value lies in `[near, far]` (to f32 round-off).
    pub fn new(values: Tensor<f32>, range: DepthRange) -> Result<Self> {
        if values.rank() != 2 {
            return Err(invalid(format!("depth map must be [H, W], got {:?}", values.shape())));
        }
        let tol = 1e-5 * range.far;
        if let Some(bad) = values.data().iter().find(|&&d| !(d as f64 >= range.near - tol && d as f64 <= range.far + tol)) {
            return Err(invalid(format!("depth {bad} outside [{}, {}]", range.near, range.far)));
        }
        Ok(Self { values, range })
    }

    /// No range check. Warped depth may legitimately leave `[near, far]` and carries 0 fill.
    pub fn from_raw(values: Tensor<f32>, range: DepthRange) -> Self {
        Self { values, range }
    }

    pub fn height(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values.data()[y * self.width() + x]
    }

    pub fn mean(&self) -> f64 {
        self.values.data().iter().map(|&d| d as f64).sum::<f64>() / self.values.numel().max(1) as f64
    }
}

/// RGB in `[-1, 1]` (`[3, H, W]`) plus depth.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbdImage {
    pub rgb: Tensor<f32>,
    pub depth: DepthMap,
}

impl RgbdImage {
    pub fn new(rgb: Tensor<f32>, depth: DepthMap) -> Result<Self> {
        let s = rgb.shape();
        if s.len() != 3 || s[0] != 3 || s[1] != depth.height() || s[2] != depth.width() {
            return Err(invalid(format!(
                "rgb {:?} does not match depth {:?}",
                s,
                depth.values.shape()
            )));
        }
        Ok(Self { rgb, depth })
    }

    pub fn height(&self) -> usize {
        self.depth.height()
    }

    pub fn width(&self) -> usize {
        self.depth.width()
    }

    /// Stacks images into `[B, 3, H, W]` RGB and `[B, 1, H, W]` depth tensors.
    pub fn stack(images: &[RgbdImage]) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let first = images.first().ok_or_else(|| invalid("cannot stack an empty image list"))?;
        let (h, w) = (first.height(), first.width());
        let mut rgb = Vec::with_capacity(images.len() * 3 * h * w);
        let mut depth = Vec::with_capacity(images.len() * h * w);
        for im in images {
            if im.height() != h || im.width() != w {
                return Err(invalid("images in a batch must share a size"));
            }
            rgb.extend_from_slice(im.rgb.data());
            depth.extend_from_slice(im.depth.values.data());
        }
        Ok((Tensor::new([images.len(), 3, h, w], rgb), Tensor::new([images.len(), 1, h, w], depth)))
    }

    /// Splits batch tensors back into images (depth range unchecked).
    pub fn unstack(rgb: &Tensor<f32>, depth: &Tensor<f32>, range: DepthRange) -> Vec<RgbdImage> {
        let (b, _, h, w) = rgb.dims4();
        (0..b)
            .map(|i| RgbdImage {
                rgb: Tensor::new([3, h, w], rgb.data()[i * 3 * h * w..(i + 1) * 3 * h * w].to_vec()),
                depth: DepthMap::from_raw(Tensor::new([h, w], depth.data()[i * h * w..(i + 1) * h * w].to_vec()), range),
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RotationSpec {
    pub theta1: f64,
    pub theta2: f64,
    /// Point the rotation axis passes through, camera frame.
    pub pivot: [f64; 3],
    /// Unit rotation axis; vertical (camera y) in practice.
    pub axis: [f64; 3],
}

impl RotationSpec {
    /// Rotation about the camera's vertical axis through `pivot`.
    pub fn vertical(theta1: f64, theta2: f64, pivot: [f64; 3]) -> Self {
        Self { theta1, theta2, pivot, axis: [0.0, 1.0, 0.0] }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.axis.iter().map(|a| a * a).sum::<f64>().sqrt();
        if (n - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("rotation axis must be unit length, has norm {n}")));
        }
        if !(self.theta1.is_finite() && self.theta2.is_finite() && self.pivot.iter().all(|p| p.is_finite())) {
            return Err(invalid("rotation angles and pivot must be finite"));
        }
        Ok(())
    }

    pub fn validate_range(&self, theta_min: f64, theta_max: f64) -> Result<()> {
        self.validate()?;
        for t in [self.theta1, self.theta2] {
            if t < theta_min || t > theta_max {
                return Err(invalid(format!("angle {t} outside [{theta_min}, {theta_max}]")));
            }
        }
        Ok(())
    }

    /// Same axis and pivot with the angles swapped.
    pub fn reversed(&self) -> Self {
        Self { theta1: self.theta2, theta2: self.theta1, ..*self }
    }
}

/// Pivot on the optical axis at the mean depth of `depth` (any shape).
pub fn centroid_pivot(depth: &[f32]) -> [f64; 3] {
    let mean = depth.iter().map(|&d| d as f64).sum::<f64>() / depth.len().max(1) as f64;
    [0.0, 0.0, mean]
}

pub type Mat3 = [[f64; 3]; 3];

/// Right-handed rotation by `angle` about unit `axis` (Rodrigues).
pub fn axis_angle(axis: [f64; 3], angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    let [x, y, z] = axis;
    let t = 1.0 - c;
    [
        [c + x * x * t, x * y * t - z * s, x * z * t + y * s],
        [y * x * t + z * s, c + y * y * t, y * z * t - x * s],
        [z * x * t - y * s, z * y * t + x * s, c + z * z * t],
    ]
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    pub rotation: Mat3,
    pub translation: [f64; 3],
}

impl RigidTransform {
    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        std::array::from_fn(|i| r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2] + self.translation[i])
    }
}

/// `T(p) = R(θ2 − θ1)·(p − pivot) + pivot`: carries a point of the θ1 view into the θ2 view.
pub fn central_axis_transform(spec: &RotationSpec) -> RigidTransform {
    let rotation = axis_angle(spec.axis, spec.theta2 - spec.theta1);
    let rp = RigidTransform { rotation, translation: [0.0; 3] }.apply(spec.pivot);
    // Written as R·p + (c − R·c) so the identity rotation adds an exact zero.
    RigidTransform { rotation, translation: std::array::from_fn(|i| spec.pivot[i] - rp[i]) }
}

/// One camera-frame point per pixel, row-major.
pub fn unproject(depth: &DepthMap, k: &CameraIntrinsics) -> Result<Vec<[f64; 3]>> {
    if depth.width() != k.width || depth.height() != k.height {
        return Err(invalid(format!(
            "depth is {}x{} but intrinsics are {}x{}",
            depth.width(),
            depth.height(),
            k.width,
            k.height
        )));
    }
    let w = k.width;
    Ok(depth
        .values
        .data()
        .iter()
        .enumerate()
        .map(|(i, &d)| k.unproject_pixel((i % w) as f64, (i / w) as f64, d as f64))
        .collect())
}

#[derive(Clone, Debug)]
pub struct WarpResult {
    /// Warped view; depth is the source surface's depth as seen from the target
    /// view and is not clamped to `[near, far]`. Masked-out pixels hold 0.
    pub rgbd: RgbdImage,
    /// `[H, W]`, entries 0 or 1.
    pub mask: Tensor<f32>,
}

/// Backward warp of `source` (seen at `spec.theta1`) into the view at `spec.theta2`,
/// driven by the target view's depth.
pub fn backward_warp(
    source: &RgbdImage,
    target_depth: &DepthMap,
    k: &CameraIntrinsics,
    spec: &RotationSpec,
) -> Result<WarpResult> {
    let (h, w) = (k.height, k.width);
    if source.height() != h || source.width() != w || target_depth.height() != h || target_depth.width() != w {
        return Err(invalid("source, target depth and intrinsics must share a size"));
    }
    let rgb = Var::constant(source.rgb.cast::<f64>().reshape([1, 3, h, w]));
    let sd = Var::constant(source.depth.values.cast::<f64>().reshape([1, 1, h, w]));
    let td = Var::constant(target_depth.values.cast::<f64>().reshape([1, 1, h, w]));
    let out = warp_batch(&rgb, &sd, &td, k, std::slice::from_ref(spec))?;
    let depth = DepthMap::from_raw(out.depth.value().cast::<f32>().reshape([h, w]), source.depth.range);
    Ok(WarpResult {
        rgbd: RgbdImage::new(out.rgb.value().cast::<f32>().reshape([3, h, w]), depth)?,
        mask: out.mask.cast::<f32>().reshape([h, w]),
    })
}

/// Differentiable batched warp. Everything is `[B, C, H, W]`; `mask` is `[B, 1, H, W]`.
pub struct WarpedBatch<T: Real> {
    pub rgb: Var<T>,
    pub depth: Var<T>,
    pub mask: Tensor<T>,
}

/// Batched form of [`backward_warp`], one [`RotationSpec`] per sample.
///
/// Gradients reach the source images through the bilinear weights and the target
/// depth through the sampling coordinates. The sampler's backward is first order only.
pub fn warp_batch<T: Real>(
    src_rgb: &Var<T>,
    src_depth: &Var<T>,
    tgt_depth: &Var<T>,
    k: &CameraIntrinsics,
    specs: &[RotationSpec],
) -> Result<WarpedBatch<T>> {
    let (b, c, h, w) = dims4(src_rgb)?;
    if c != 3 || src_depth.shape() != [b, 1, h, w] || tgt_depth.shape() != [b, 1, h, w] {
        return Err(invalid(format!(
            "warp expects rgb [B,3,H,W] and depths [B,1,H,W], got {:?}, {:?}, {:?}",
            src_rgb.shape(),
            src_depth.shape(),
            tgt_depth.shape()
        )));
    }
    if (w, h) != (k.width, k.height) {
        return Err(invalid(format!("images are {w}x{h} but intrinsics are {}x{}", k.width, k.height)));
    }
    if specs.len() != b {
        return Err(invalid(format!("{} rotation specs for a batch of {b}", specs.len())));
    }
    for s in specs {
        s.validate()?;
    }

    let ray_x = Var::constant(Tensor::from_fn([1, 1, h, w], |i| T::lit(((i % w) as f64 - k.cx) / k.fx)));
    let ray_y = Var::constant(Tensor::from_fn([1, 1, h, w], |i| T::lit(((i / w) as f64 - k.cy) / k.fy)));
    let p = [tgt_depth.mul(&ray_x), tgt_depth.mul(&ray_y), tgt_depth.clone()];

    // Target-view point into the source view.
    let back: Vec<RigidTransform> = specs.iter().map(|s| central_axis_transform(&s.reversed())).collect();
    let q = apply_per_sample(&back, &p, 0..3);

    let zmask = q[2].value().map(|z| if z.as_f64() > MIN_Z { T::one() } else { T::zero() });
    let z_safe = q[2].mul(&Var::constant(zmask.clone())).add(&Var::constant(zmask.map(|m| T::one() - m)));
    let inv_z = z_safe.powf(-T::one());
    let ax = q[0].mul(&inv_z);
    let ay = q[1].mul(&inv_z);
    let u = ax.mul_scalar(T::lit(k.fx)).add_scalar(T::lit(k.cx));
    let v = ay.mul_scalar(T::lit(k.fy)).add_scalar(T::lit(k.cy));

    let (lo, hi_u, hi_v) = (-BORDER_SLACK, (w - 1) as f64 + BORDER_SLACK, (h - 1) as f64 + BORDER_SLACK);
    let inside_u = u.value().map(|x| if x.as_f64() >= lo && x.as_f64() <= hi_u { T::one() } else { T::zero() });
    let inside_v = v.value().map(|y| if y.as_f64() >= lo && y.as_f64() <= hi_v { T::one() } else { T::zero() });
    let mask = zmask.zip_with(&inside_u, |a, b| a * b).zip_with(&inside_v, |a, b| a * b);

    let src = Var::concat(&[src_rgb.clone(), src_depth.clone()], 1);
    let sampled = bilinear_sample(&src, &u, &v);
    let rgb = sampled.narrow(1, 0, 3);
    let ds = sampled.narrow(1, 3, 1);

    // The sampled source surface point, carried into the target view; its z is the
    // depth the target camera would see there.
    let fwd: Vec<RigidTransform> = specs.iter().map(central_axis_transform).collect();
    let s = [ds.mul(&ax), ds.mul(&ay), ds];
    let depth = apply_per_sample(&fwd, &s, 2..3).remove(0);

    let m = Var::constant(mask.clone());
    Ok(WarpedBatch { rgb: rgb.mul(&m), depth: depth.mul(&m), mask })
}

fn dims4<T: Real>(v: &Var<T>) -> Result<(usize, usize, usize, usize)> {
    match *v.shape() {
        [b, c, h, w] => Ok((b, c, h, w)),
        _ => Err(invalid(format!("expected a 4-D tensor, got {:?}", v.shape()))),
    }
}

/// Rows `rows` of `T_b(p)` for per-sample transforms, `p` given as three `[B,1,H,W]` planes.
fn apply_per_sample<T: Real>(ts: &[RigidTransform], p: &[Var<T>; 3], rows: std::ops::Range<usize>) -> Vec<Var<T>> {
    let b = ts.len();
    let coef = |f: &dyn Fn(&RigidTransform) -> f64| {
        Var::constant(Tensor::new([b, 1, 1, 1], ts.iter().map(|t| T::lit(f(t))).collect()))
    };
    rows.map(|i| {
        let mut acc = p[0].mul(&coef(&|t| t.rotation[i][0]));
        acc = acc.add(&p[1].mul(&coef(&|t| t.rotation[i][1])));
        acc = acc.add(&p[2].mul(&coef(&|t| t.rotation[i][2])));
        acc.add(&coef(&|t| t.translation[i]))
    })
    .collect()
}

/// Bilinear lookup of `src` (`[B, C, H, W]`) at continuous pixel coordinates `u`, `v`
/// (`[B, 1, Ho, Wo]`). Taps outside the image read 0.
pub fn bilinear_sample<T: Real>(src: &Var<T>, u: &Var<T>, v: &Var<T>) -> Var<T> {
    let (b, c, h, w) = src.value().dims4();
    let (ub, _, ho, wo) = u.value().dims4();
    assert_eq!(ub, b, "coordinate batch must match source batch");
    assert_eq!(u.shape(), v.shape(), "u and v must share a shape");
    let taps = corner_taps(u.value(), v.value(), h, w);
    let sd = src.value().data();
    let plane = h * w;
    let out_plane = ho * wo;
    let mut out = vec![T::zero(); b * c * out_plane];
    for bi in 0..b {
        for p in 0..out_plane {
            let t = &taps[bi * out_plane + p];
            for ch in 0..c {
                let base = (bi * c + ch) * plane;
                let mut acc = T::zero();
                for (idx, wt) in t.iter() {
                    acc += sd[base + idx] * wt;
                }
                out[(bi * c + ch) * out_plane + p] = acc;
            }
        }
    }
    let value = Tensor::new([b, c, ho, wo], out);
    Var::from_op(
        "bilinear_sample",
        value,
        vec![src.clone(), u.clone(), v.clone()],
        Box::new(move |inp, _, g| {
            let (src, u, v) = (&inp[0], &inp[1], &inp[2]);
            let g = g.value();
            let gd = g.data();
            let sd = src.value().data();
            let taps = corner_taps(u.value(), v.value(), h, w);
            let gsrc = src.requires_grad().then(|| {
                let mut acc = vec![T::zero(); b * c * plane];
                for bi in 0..b {
                    for p in 0..out_plane {
                        for ch in 0..c {
                            let gv = gd[(bi * c + ch) * out_plane + p];
                            for (idx, wt) in taps[bi * out_plane + p].iter() {
                                acc[(bi * c + ch) * plane + idx] += gv * wt;
                            }
                        }
                    }
                }
                Var::constant(Tensor::new([b, c, h, w], acc))
            });
            let need_coords = u.requires_grad() || v.requires_grad();
            let (mut gu, mut gv) = (vec![T::zero(); b * out_plane], vec![T::zero(); b * out_plane]);
            if need_coords {
                for bi in 0..b {
                    for p in 0..out_plane {
                        let t = &taps[bi * out_plane + p];
                        let (fx, fy) = (t.fx, t.fy);
                        let (mut du, mut dv) = (T::zero(), T::zero());
                        for ch in 0..c {
                            let base = (bi * c + ch) * plane;
                            let at = |k: usize| t.index[k].map_or(T::zero(), |i| sd[base + i]);
                            let (s00, s10, s01, s11) = (at(0), at(1), at(2), at(3));
                            let gval = gd[(bi * c + ch) * out_plane + p];
                            du += gval * ((T::one() - fy) * (s10 - s00) + fy * (s11 - s01));
                            dv += gval * ((T::one() - fx) * (s01 - s00) + fx * (s11 - s10));
                        }
                        gu[bi * out_plane + p] = du;
                        gv[bi * out_plane + p] = dv;
                    }
                }
            }
            let shape = [b, 1, ho, wo];
            vec![
                gsrc,
                u.requires_grad().then(|| Var::constant(Tensor::new(shape, gu))),
                v.requires_grad().then(|| Var::constant(Tensor::new(shape, gv))),
            ]
        }),
    )
}

/// The four bilinear corners of one lookup: `index` is `None` for out-of-image taps.
struct Taps<T> {
    index: [Option<usize>; 4],
    weight: [T; 4],
    fx: T,
    fy: T,
}

impl<T: Real> Taps<T> {
    fn iter(&self) -> impl Iterator<Item = (usize, T)> + '_ {
        (0..4).filter_map(move |k| self.index[k].map(|i| (i, self.weight[k])))
    }
}

fn corner_taps<T: Real>(u: &Tensor<T>, v: &Tensor<T>, h: usize, w: usize) -> Vec<Taps<T>> {
    u.data()
        .iter()
        .zip(v.data())
        .map(|(&x, &y)| {
            if !(x.is_finite() && y.is_finite()) {
                return Taps { index: [None; 4], weight: [T::zero(); 4], fx: T::zero(), fy: T::zero() };
            }
            let (x0, y0) = (x.floor(), y.floor());
            let (fx, fy) = (x - x0, y - y0);
            let (x0, y0) = (x0.as_f64() as i64, y0.as_f64() as i64);
            let at = |xi: i64, yi: i64| {
                (xi >= 0 && yi >= 0 && xi < w as i64 && yi < h as i64).then(|| yi as usize * w + xi as usize)
            };
            let one = T::one();
            Taps {
                index: [at(x0, y0), at(x0 + 1, y0), at(x0, y0 + 1), at(x0 + 1, y0 + 1)],
                weight: [(one - fx) * (one - fy), fx * (one - fy), (one - fx) * fy, fx * fy],
                fx,
                fy,
            }
        })
        .collect()
}
