//! Loss terms: logit-space adversarial losses, masked L1 rotation consistency, depth
//! classification, R1, and their weighted totals.

use std::sync::atomic::{AtomicU64, Ordering};

use rgbd_tensor::{grad, Real, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::camera::{warp_batch, CameraIntrinsics, DepthRange, RotationSpec};
use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Depth rotation consistency in the depth path's loss.
    pub lambda1: f64,
    /// RGB rotation consistency in the appearance path's loss.
    pub lambda2: f64,
    /// Fake depth prediction in the appearance path's loss.
    pub lambda3: f64,
    /// Real depth prediction in the discriminator's loss.
    pub lambda4: f64,
    pub r1: f64,
}

impl LossWeights {
    /// Weights used at 64² and 128².
    pub const BASE: LossWeights = LossWeights { lambda1: 50.0, lambda2: 0.3, lambda3: 1e-3, lambda4: 0.8, r1: 0.3 };

    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda1, self.lambda2, self.lambda3, self.lambda4, self.r1];
        if all.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(invalid(format!("loss weights must be finite and non-negative: {self:?}")));
        }
        Ok(())
    }
}

fn check_finite<T: Real>(name: &str, v: &Var<T>) -> Result<()> {
    if v.value().data().iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("{name} contains non-finite values")))
    }
}

/// `E[softplus(-real)] + E[softplus(fake)]`, i.e. `-E log σ(real) - E log(1 - σ(fake))`.
pub fn adversarial_d<T: Real>(real: &Var<T>, fake: &Var<T>) -> Result<Var<T>> {
    check_finite("real logits", real)?;
    check_finite("fake logits", fake)?;
    Ok(real.neg().softplus().mean().add(&fake.softplus().mean()))
}

/// `E[softplus(-fake)]`, i.e. `-E log σ(fake)`.
pub fn adversarial_g<T: Real>(fake: &Var<T>) -> Result<Var<T>> {
    check_finite("fake logits", fake)?;
    Ok(fake.neg().softplus().mean())
}

/// `sum(|a - b|·mask) / max(1, sum(mask)·C)`. `mask` broadcasts over channels.
pub fn masked_l1<T: Real>(a: &Var<T>, b: &Var<T>, mask: &Tensor<T>) -> Result<Var<T>> {
    if a.shape() != b.shape() {
        return Err(invalid(format!("masked L1 of {:?} against {:?}", a.shape(), b.shape())));
    }
    let shape = a.shape();
    let channels = if shape.len() == 4 { shape[1] } else { 1 };
    let ok = mask.shape().len() == shape.len()
        && mask.shape().iter().zip(shape).enumerate().all(|(i, (&m, &s))| m == s || (i == 1 && m == 1 && shape.len() == 4));
    if !ok {
        return Err(invalid(format!("mask {:?} does not fit images {:?}", mask.shape(), shape)));
    }
    let count = mask.data().iter().map(|m| m.as_f64()).sum::<f64>() * channels as f64;
    let m = Var::constant(mask.clone());
    Ok(a.sub(b).abs().mul(&m).sum().mul_scalar(T::lit(1.0 / count.max(1.0))))
}

/// A generated view: RGB `[B, 3, H, W]`, depth `[B, 1, H, W]` in camera units.
#[derive(Clone, Debug)]
pub struct View<T: Real> {
    pub rgb: Var<T>,
    pub depth: Var<T>,
}

#[derive(Clone, Debug)]
pub struct RotationLosses<T: Real> {
    /// On normalised depth.
    pub depth: Var<T>,
    pub rgb: Var<T>,
    pub mask: Tensor<T>,
}

/// Warps view 1 toward view 2 and compares them on the valid mask.
pub fn rotation_losses<T: Real>(
    view1: &View<T>,
    view2: &View<T>,
    k: &CameraIntrinsics,
    specs: &[RotationSpec],
    range: DepthRange,
) -> Result<RotationLosses<T>> {
    let warped = warp_batch(&view1.rgb, &view1.depth, &view2.depth, k, specs)?;
    let depth = masked_l1(&range.normalize_var(&warped.depth), &range.normalize_var(&view2.depth), &warped.mask)?;
    let rgb = masked_l1(&warped.rgb, &view2.rgb, &warped.mask)?;
    Ok(RotationLosses { depth, rgb, mask: warped.mask })
}

/// Per-pixel class labels, `[B, H, W]` row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DepthClassMap {
    pub shape: [usize; 3],
    pub classes: Vec<u32>,
    /// Depths outside `[near, far]` that were clamped into the end bins.
    pub clamped: usize,
}

static QUANTIZE_CLAMPS: AtomicU64 = AtomicU64::new(0);

/// Total out-of-range depths clamped by [`quantize_depth`] in this process.
pub fn quantize_clamp_count() -> u64 {
    QUANTIZE_CLAMPS.load(Ordering::Relaxed)
}

/// Uniform bins over `[near, far]`: `min(k - 1, floor((d - near) / (far - near) · k))`.
/// `depth` is `[B, 1, H, W]` or `[H, W]`.
pub fn quantize_depth<T: Real>(depth: &Tensor<T>, range: DepthRange, k: usize) -> Result<DepthClassMap> {
    if k < 2 {
        return Err(invalid("quantization needs k >= 2"));
    }
    let shape = match *depth.shape() {
        [b, 1, h, w] => [b, h, w],
        [h, w] => [1, h, w],
        _ => return Err(invalid(format!("depth must be [B, 1, H, W] or [H, W], got {:?}", depth.shape()))),
    };
    let mut clamped = 0;
    let classes = depth
        .data()
        .iter()
        .map(|d| {
            let d = d.as_f64();
            let t = range.normalize(d);
            if !(0.0..=1.0).contains(&t) {
                clamped += 1;
            }
            let t = if t.is_nan() { 0.0 } else { t.clamp(0.0, 1.0) };
            ((t * k as f64).floor() as usize).min(k - 1) as u32
        })
        .collect();
    if clamped > 0 {
        QUANTIZE_CLAMPS.fetch_add(clamped as u64, Ordering::Relaxed);
        log::warn!("quantize_depth clamped {clamped} out-of-range depth values");
    }
    Ok(DepthClassMap { shape, classes, clamped })
}

/// Box-filter downsampling of `[B, C, H, W]` by a power-of-two factor.
pub fn area_downsample<T: Real>(x: &Tensor<T>, size: usize) -> Result<Tensor<T>> {
    let (_, _, h, w) = x.dims4();
    if h != w || size == 0 || h % size != 0 || !(h / size).is_power_of_two() {
        return Err(invalid(format!("cannot area-downsample {h}x{w} to {size}x{size}")));
    }
    let mut out = x.clone();
    while out.shape()[2] > size {
        out = out.sum_pool2x().map(|v| v * T::lit(0.25));
    }
    Ok(out)
}

/// Mean over pixels of `-log softmax(logits)[target]`. `logits` is `[B, k, H, W]`.
pub fn depth_ce<T: Real>(logits: &Var<T>, target: &DepthClassMap) -> Result<Var<T>> {
    let (b, k, h, w) = match *logits.shape() {
        [b, k, h, w] => (b, k, h, w),
        _ => return Err(invalid(format!("logits must be [B, k, H, W], got {:?}", logits.shape()))),
    };
    if target.shape != [b, h, w] {
        return Err(invalid(format!("targets {:?} do not match logits {:?}", target.shape, logits.shape())));
    }
    if let Some(&c) = target.classes.iter().find(|&&c| c as usize >= k) {
        return Err(invalid(format!("class {c} out of range for k = {k}")));
    }
    check_finite("depth logits", logits)?;
    let plane = h * w;
    let lv = logits.value().data();
    // Per-pixel max, held constant: logsumexp is shift invariant.
    let mut mx = vec![T::neg_infinity(); b * plane];
    let mut onehot = vec![T::zero(); b * k * plane];
    for bi in 0..b {
        for p in 0..plane {
            for c in 0..k {
                mx[bi * plane + p] = mx[bi * plane + p].max(lv[(bi * k + c) * plane + p]);
            }
            let c = target.classes[bi * plane + p] as usize;
            onehot[(bi * k + c) * plane + p] = T::one();
        }
    }
    let shifted = logits.sub(&Var::constant(Tensor::new([b, 1, h, w], mx)));
    let lse = shifted.exp().sum_axis(1).log();
    let picked = shifted.mul(&Var::constant(Tensor::new([b, k, h, w], onehot))).sum_axis(1);
    Ok(lse.sub(&picked).mean())
}

/// `(weight / 2) · mean_b ||∂ score_b / ∂ x_b||²`, differentiable in the scorer's parameters.
pub fn r1_penalty<T: Real>(
    score: impl Fn(&Var<T>) -> Result<Var<T>>,
    real: &Tensor<T>,
    weight: f64,
) -> Result<Var<T>> {
    let batch = real.shape().first().copied().unwrap_or(1).max(1);
    let x = Var::leaf(real.clone());
    let logits = score(&x)?;
    let g = grad(&logits.sum(), std::slice::from_ref(&x), true).remove(0);
    Ok(g.square().sum().mul_scalar(T::lit(weight / 2.0 / batch as f64)))
}

/// Scalar loss components of one training step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub adv_g: f64,
    pub adv_d: f64,
    pub rot_depth: f64,
    pub rot_rgb: f64,
    pub dp_fake: f64,
    pub dp_real: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub g_depth: f64,
    pub g_rgb: f64,
    pub d: f64,
}

/// `L_Gd = adv_g + λ1·rot_d`, `L_Grgb = adv_g + λ2·rot_rgb + λ3·dp_fake`,
/// `L_D = adv_d + λ4·dp_real`.
pub fn totals(c: &LossComponents, w: &LossWeights) -> Result<Totals> {
    let all = [c.adv_g, c.adv_d, c.rot_depth, c.rot_rgb, c.dp_fake, c.dp_real];
    if all.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite loss component in {c:?}")));
    }
    Ok(Totals {
        g_depth: c.adv_g + w.lambda1 * c.rot_depth,
        g_rgb: c.adv_g + w.lambda2 * c.rot_rgb + w.lambda3 * c.dp_fake,
        d: c.adv_d + w.lambda4 * c.dp_real,
    })
}
