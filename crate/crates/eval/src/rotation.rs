//! Rotation precision (depth) and rotation consistency (RGB): masked L1 between a view
//! warped from θ1 to θ2 and the view produced directly at θ2.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rgbd_gan::camera::{CameraIntrinsics, DepthRange, RgbdImage, RotationSpec};
use rgbd_gan::error::{invalid, Result};
use rgbd_gan::generator::Latents;
use rgbd_gan::objectives::{rotation_losses, View};
use rgbd_gan::toy::{render_scene, SceneSpec};
use rgbd_tensor::{no_grad, Var};
use rgbd_train::Model;

/// Produces the same scenes at two angles.
pub trait ViewSource {
    fn intrinsics(&self) -> &CameraIntrinsics;
    fn range(&self) -> DepthRange;
    fn theta_range(&self) -> (f64, f64);
    /// Views at `theta1`, views at `theta2`, and the rotation relating each pair.
    fn views(&mut self, theta1: &[f64], theta2: &[f64]) -> Result<(Vec<RgbdImage>, Vec<RgbdImage>, Vec<RotationSpec>)>;
}

/// A generator with fresh latent codes per pair, shared across the two angles.
pub struct GeneratorViews<'a> {
    pub model: &'a Model,
    pub rng: ChaCha8Rng,
}

impl<'a> GeneratorViews<'a> {
    pub fn new(model: &'a Model, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        Self { model, rng }
    }
}

impl ViewSource for GeneratorViews<'_> {
    fn intrinsics(&self) -> &CameraIntrinsics {
        &self.model.k
    }

    fn range(&self) -> DepthRange {
        self.model.cfg.generator.depth_range
    }

    fn theta_range(&self) -> (f64, f64) {
        (self.model.cfg.generator.theta_min, self.model.cfg.generator.theta_max)
    }

    fn views(&mut self, theta1: &[f64], theta2: &[f64]) -> Result<(Vec<RgbdImage>, Vec<RgbdImage>, Vec<RotationSpec>)> {
        let latents = Latents::sample(&mut self.rng, self.model.cfg.generator.latent_dim, theta1.to_vec());
        let a = self.model.generate(&latents)?;
        let b = self.model.generate(&latents.with_theta(theta2.to_vec()))?;
        let specs = self.model.cfg.rotation_specs(a.depth.value().data(), theta1, theta2);
        let range = self.range();
        Ok((
            RgbdImage::unstack(a.rgb.value(), a.depth.value(), range),
            RgbdImage::unstack(b.rgb.value(), b.depth.value(), range),
            specs,
        ))
    }
}

/// Ground-truth renders of random toy rooms, rotated about each room's pivot.
pub struct ToyViews {
    pub k: CameraIntrinsics,
    pub range: DepthRange,
    pub theta_min: f64,
    pub theta_max: f64,
    pub rng: ChaCha8Rng,
}

impl ViewSource for ToyViews {
    fn intrinsics(&self) -> &CameraIntrinsics {
        &self.k
    }

    fn range(&self) -> DepthRange {
        self.range
    }

    fn theta_range(&self) -> (f64, f64) {
        (self.theta_min, self.theta_max)
    }

    fn views(&mut self, theta1: &[f64], theta2: &[f64]) -> Result<(Vec<RgbdImage>, Vec<RgbdImage>, Vec<RotationSpec>)> {
        let (mut a, mut b, mut specs) = (Vec::new(), Vec::new(), Vec::new());
        for (&t1, &t2) in theta1.iter().zip(theta2) {
            let scene = SceneSpec::random(&mut self.rng);
            a.push(render_scene(&scene, t1, &self.k, self.range)?);
            b.push(render_scene(&scene, t2, &self.k, self.range)?);
            specs.push(RotationSpec::vertical(t1, t2, scene.pivot()));
        }
        Ok((a, b, specs))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RotationScores {
    /// Normalised depth.
    pub rp: f64,
    /// `[-1, 1]` RGB.
    pub rc: f64,
    pub pairs: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AnglePairs {
    /// Independent uniform draws per view.
    Independent,
    /// θ2 = θ1.
    Same,
}

const CHUNK: usize = 32;

/// Mean per-pair masked L1 over `n_pairs` pairs; angles drawn from `seed`.
pub fn rotation_scores(source: &mut dyn ViewSource, n_pairs: usize, seed: u64, pairs: AnglePairs) -> Result<RotationScores> {
    if n_pairs == 0 {
        return Err(invalid("rotation metrics need at least one pair"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = source.theta_range();
    let (mut rp, mut rc) = (0.0, 0.0);
    let mut done = 0;
    while done < n_pairs {
        let n = CHUNK.min(n_pairs - done);
        let t1: Vec<f64> = (0..n).map(|_| rng.random_range(lo..=hi)).collect();
        let t2: Vec<f64> = match pairs {
            AnglePairs::Independent => (0..n).map(|_| rng.random_range(lo..=hi)).collect(),
            AnglePairs::Same => t1.clone(),
        };
        let (a, b, specs) = source.views(&t1, &t2)?;
        let k = source.intrinsics().clone();
        let range = source.range();
        for i in 0..n {
            let (rpi, rci) = pair_scores(&a[i], &b[i], &k, &specs[i], range)?;
            rp += rpi;
            rc += rci;
        }
        done += n;
    }
    Ok(RotationScores { rp: rp / n_pairs as f64, rc: rc / n_pairs as f64, pairs: n_pairs })
}

/// `(depth, rgb)` masked L1 of one pair, warping `a` toward `b`.
pub fn pair_scores(a: &RgbdImage, b: &RgbdImage, k: &CameraIntrinsics, spec: &RotationSpec, range: DepthRange) -> Result<(f64, f64)> {
    no_grad(|| {
        let (ra, da) = RgbdImage::stack(std::slice::from_ref(a))?;
        let (rb, db) = RgbdImage::stack(std::slice::from_ref(b))?;
        let v1 = View { rgb: Var::constant(ra.cast::<f64>()), depth: Var::constant(da.cast::<f64>()) };
        let v2 = View { rgb: Var::constant(rb.cast::<f64>()), depth: Var::constant(db.cast::<f64>()) };
        let l = rotation_losses(&v1, &v2, k, std::slice::from_ref(spec), range)?;
        Ok((l.depth.item(), l.rgb.item()))
    })
}

/// Rotation precision of `model` over `n_pairs` seed-pinned pairs.
pub fn rotation_precision(model: &Model, n_pairs: usize, seed: u64) -> Result<f64> {
    Ok(rotation_scores(&mut GeneratorViews::new(model, seed), n_pairs, seed, AnglePairs::Independent)?.rp)
}

/// Rotation consistency of `model` over `n_pairs` seed-pinned pairs.
pub fn rotation_consistency(model: &Model, n_pairs: usize, seed: u64) -> Result<f64> {
    Ok(rotation_scores(&mut GeneratorViews::new(model, seed), n_pairs, seed, AnglePairs::Independent)?.rc)
}
