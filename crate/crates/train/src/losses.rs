//! The loss graph of each training phase, generic over the float type so the same
//! code can be checked against finite differences in `f64`.

use rgbd_gan::discriminator::SwitchableInput;
use rgbd_gan::error::Result;
use rgbd_gan::generator::{GenNoise, Latents};
use rgbd_gan::nn::Bound;
use rgbd_gan::objectives::{
    adversarial_d, adversarial_g, area_downsample, depth_ce, quantize_depth, r1_penalty, rotation_losses, View,
};
use rgbd_tensor::{Real, Tensor, Var};

use crate::model::Model;

fn specs_for<T: Real>(model: &Model, depth1: &Var<T>, t1: &[f64], t2: &[f64]) -> Vec<rgbd_gan::camera::RotationSpec> {
    let d: Vec<f32> = depth1.value().data().iter().map(|v| v.as_f64() as f32).collect();
    model.cfg.rotation_specs(&d, t1, t2)
}

/// Phase 1: `L^g_adv` of fresh fakes through the discriminator.
pub fn generator_adversarial<T: Real>(model: &Model, b: &Bound<T>, latents: &Latents, noise: &GenNoise<T>) -> Result<Var<T>> {
    let fake = model.generator.generate(b, latents, noise)?;
    let logits = model.discriminator.score(b, &SwitchableInput::rgbd(fake.rgb, fake.depth))?;
    adversarial_g(&logits)
}

/// Phase 2: depth rotation consistency between the depth path's views at `t1` and `t2`.
pub fn depth_rotation<T: Real>(
    model: &Model,
    b: &Bound<T>,
    z_d: &Tensor<f32>,
    t1: &[f64],
    t2: &[f64],
    noise: &GenNoise<T>,
) -> Result<Var<T>> {
    let g = &model.generator;
    let z = Var::constant(z_d.cast());
    let d1 = g.generate_depth(b, &z, t1, noise)?.depth;
    let d2 = g.generate_depth(b, &z, t2, noise)?.depth;
    let specs = specs_for(model, &d1, t1, t2);
    let (batch, r) = (t1.len(), g.cfg.resolution);
    let blank = Var::constant(Tensor::zeros(vec![batch, 3, r, r]));
    let v1 = View { rgb: blank.clone(), depth: d1 };
    let v2 = View { rgb: blank, depth: d2 };
    Ok(rotation_losses(&v1, &v2, &model.k, &specs, g.cfg.depth_range)?.depth)
}

#[derive(Clone, Debug)]
pub struct AppearanceLosses<T: Real> {
    pub rot_rgb: Var<T>,
    pub dp_fake: Var<T>,
}

/// Phase 3: RGB rotation consistency and fake depth prediction on view 1.
pub fn appearance<T: Real>(
    model: &Model,
    b: &Bound<T>,
    latents: &Latents,
    t2: &[f64],
    noise: &GenNoise<T>,
) -> Result<AppearanceLosses<T>> {
    let g = &model.generator;
    let f1 = g.generate(b, latents, noise)?;
    let f2 = g.generate(b, &latents.with_theta(t2.to_vec()), noise)?;
    let specs = specs_for(model, &f1.depth, &latents.theta, t2);
    let v1 = View { rgb: f1.rgb.clone(), depth: f1.depth.clone() };
    let v2 = View { rgb: f2.rgb, depth: f2.depth };
    let rot = rotation_losses(&v1, &v2, &model.k, &specs, g.cfg.depth_range)?;
    let d = &model.discriminator;
    let logits = d.predict_depth(b, &SwitchableInput::rgb(f1.rgb))?;
    let s = d.cfg.branch_resolution();
    let target = quantize_depth(&area_downsample(f1.depth.value(), s)?, d.cfg.depth_range, d.cfg.depth_classes)?;
    Ok(AppearanceLosses { rot_rgb: rot.rgb, dp_fake: depth_ce(&logits, &target)? })
}

#[derive(Clone, Debug)]
pub struct DiscriminatorLosses<T: Real> {
    pub adv_d: Var<T>,
    pub dp_real: Var<T>,
    /// Already weighted.
    pub r1: Var<T>,
}

/// Phase 4: realness on real and (detached) fake images, real depth prediction, R1.
pub fn discriminator<T: Real>(
    model: &Model,
    b: &Bound<T>,
    real_rgb: &Tensor<T>,
    real_depth: &Tensor<T>,
    fake_rgb: &Tensor<T>,
    fake_depth: &Tensor<T>,
    r1_weight: f64,
) -> Result<DiscriminatorLosses<T>> {
    let d = &model.discriminator;
    let rgb = Var::constant(real_rgb.clone());
    let depth = Var::constant(real_depth.clone());
    let real_logits = d.score(b, &SwitchableInput::rgbd(rgb.clone(), depth.clone()))?;
    let fake_logits = d.score(b, &SwitchableInput::rgbd(Var::constant(fake_rgb.clone()), Var::constant(fake_depth.clone())))?;
    let adv_d = adversarial_d(&real_logits, &fake_logits)?;
    let logits = d.predict_depth(b, &SwitchableInput::rgb(rgb.clone()))?;
    let s = d.cfg.branch_resolution();
    let target = quantize_depth(&area_downsample(real_depth, s)?, d.cfg.depth_range, d.cfg.depth_classes)?;
    let dp_real = depth_ce(&logits, &target)?;
    let packed = Var::concat(&[rgb, d.depth_to_unit(&depth)], 1).value().clone();
    let r1 = r1_penalty(|x| d.score_packed(b, x), &packed, r1_weight)?;
    Ok(DiscriminatorLosses { adv_d, dp_real, r1 })
}
