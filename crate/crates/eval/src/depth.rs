//! Depth prediction cross-entropy of the discriminator's branch on real and generated images.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rgbd_gan::camera::RgbdImage;
use rgbd_gan::discriminator::SwitchableInput;
use rgbd_gan::error::{invalid, Result};
use rgbd_gan::generator::Latents;
use rgbd_gan::objectives::{area_downsample, depth_ce, quantize_depth};
use rgbd_tensor::{no_grad, Tensor, Var};
use rgbd_train::Model;

const CHUNK: usize = 32;

/// Mean per-pixel cross-entropy of the branch on `rgb` against quantized `depth`
/// (`[B, 3, H, W]`, `[B, 1, H, W]`).
pub fn depth_prediction_ce(model: &Model, rgb: &Tensor<f32>, depth: &Tensor<f32>) -> Result<f64> {
    let d = &model.discriminator;
    no_grad(|| {
        let b = model.params.bind(&[]);
        let logits = d.predict_depth(&b, &SwitchableInput::rgb(Var::constant(rgb.clone())))?;
        let target = quantize_depth(&area_downsample(depth, d.cfg.branch_resolution())?, d.cfg.depth_range, d.cfg.depth_classes)?;
        Ok(depth_ce(&logits, &target)?.item() as f64)
    })
}

/// DP(Real): mean cross-entropy over `images`, weighted by image count.
pub fn dp_real(model: &Model, images: &[RgbdImage]) -> Result<f64> {
    if images.is_empty() {
        return Err(invalid("DP(Real) needs at least one image"));
    }
    let mut total = 0.0;
    for chunk in images.chunks(CHUNK) {
        let (rgb, depth) = RgbdImage::stack(chunk)?;
        total += depth_prediction_ce(model, &rgb, &depth)? * chunk.len() as f64;
    }
    Ok(total / images.len() as f64)
}

/// DP(Fake): the branch's prediction on generated RGB against the generated depth.
pub fn dp_fake(model: &Model, n: usize, seed: u64) -> Result<f64> {
    if n == 0 {
        return Err(invalid("DP(Fake) needs at least one sample"));
    }
    let g = &model.cfg.generator;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    let mut done = 0;
    while done < n {
        let m = CHUNK.min(n - done);
        let theta = (0..m).map(|_| rand::Rng::random_range(&mut rng, g.theta_min..=g.theta_max)).collect();
        let latents = Latents::sample(&mut rng, g.latent_dim, theta);
        let fake = model.generate(&latents)?;
        total += depth_prediction_ce(model, fake.rgb.value(), fake.depth.value())? * m as f64;
        done += m;
    }
    Ok(total / n as f64)
}

/// `(DP(Real), DP(Fake))`.
pub fn depth_prediction_metrics(model: &Model, real: &[RgbdImage], n_fake: usize, seed: u64) -> Result<(f64, f64)> {
    Ok((dp_real(model, real)?, dp_fake(model, n_fake, seed)?))
}
