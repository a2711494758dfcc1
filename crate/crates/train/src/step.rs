//! One optimization step: four phases, each updating exactly one parameter set.
//!
//! 1. adversarial loss into both generator paths
//! 2. depth rotation consistency into the depth path
//! 3. RGB rotation consistency and fake depth prediction into the appearance path
//! 4. adversarial loss, real depth prediction and R1 into the discriminator

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rgbd_gan::error::{Error, Result};
use rgbd_gan::generator::{GenNoise, Latents};
use rgbd_gan::nn::{Adam, Bound, Group, ParamId, ParamStore};
use rgbd_gan::objectives::{totals, LossComponents, Totals};
use rgbd_tensor::{no_grad, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, TrainConfig};
use crate::losses;
use crate::model::Model;

/// Two independent uniform draws from `[theta_min, theta_max]`.
pub fn sample_angles(rng: &mut impl Rng, theta_min: f64, theta_max: f64) -> (f64, f64) {
    (rng.random_range(theta_min..=theta_max), rng.random_range(theta_min..=theta_max))
}

/// Everything that evolves during training.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub model: Model,
    pub train: TrainConfig,
    /// One per group, in [`Group::ALL`] order.
    pub optimizers: Vec<Adam>,
    pub step: u64,
    /// Latent codes, angles and per-layer noise.
    pub latent_rng: ChaCha8Rng,
    /// Real-batch selection.
    pub data_rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(model_cfg: ModelConfig, train: TrainConfig) -> Result<Self> {
        train.validate()?;
        let model = Model::new(model_cfg, train.seed)?;
        let optimizers = Group::ALL.iter().map(|&g| Adam::new(&model.params, g, train.adam)).collect();
        let mut latent_rng = ChaCha8Rng::seed_from_u64(train.seed);
        latent_rng.set_stream(1);
        let mut data_rng = ChaCha8Rng::seed_from_u64(train.seed);
        data_rng.set_stream(2);
        Ok(Self { model, train, optimizers, step: 0, latent_rng, data_rng })
    }

    fn apply(&mut self, group: Group, grads: &HashMap<ParamId, Tensor<f32>>) {
        let i = Group::ALL.iter().position(|&g| g == group).expect("known group");
        self.optimizers[i].step(&mut self.model.params, grads);
    }

    fn draw_latents(&mut self, batch: usize) -> Latents {
        let g = &self.model.cfg.generator;
        let (lo, hi) = (g.theta_min, g.theta_max);
        let theta = (0..batch).map(|_| self.latent_rng.random_range(lo..=hi)).collect();
        Latents::sample(&mut self.latent_rng, g.latent_dim, theta)
    }

    fn draw_pair(&mut self, batch: usize) -> (Latents, Vec<f64>, Vec<f64>) {
        let g = &self.model.cfg.generator;
        let (lo, hi) = (g.theta_min, g.theta_max);
        let (mut t1, mut t2) = (Vec::with_capacity(batch), Vec::with_capacity(batch));
        for _ in 0..batch {
            let (a, b) = sample_angles(&mut self.latent_rng, lo, hi);
            t1.push(a);
            t2.push(b);
        }
        let latents = Latents::sample(&mut self.latent_rng, g.latent_dim, t1.clone());
        (latents, t1, t2)
    }

    fn draw_noise(&mut self, batch: usize) -> GenNoise<f32> {
        GenNoise::random(&self.model.generator, batch, &mut self.latent_rng)
    }
}

/// Real images for one step: RGB `[B, 3, H, W]` in `[-1, 1]`, depth `[B, 1, H, W]`.
#[derive(Clone, Debug)]
pub struct RealBatch {
    pub rgb: Tensor<f32>,
    pub depth: Tensor<f32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: u64,
    pub losses: LossComponents,
    pub r1: f64,
    pub totals: Totals,
}

impl StepReport {
    /// `(name, value)` in log order.
    pub fn entries(&self) -> [(&'static str, f64); 10] {
        let l = &self.losses;
        [
            ("adv_g", l.adv_g),
            ("rot_depth", l.rot_depth),
            ("rot_rgb", l.rot_rgb),
            ("dp_fake", l.dp_fake),
            ("adv_d", l.adv_d),
            ("dp_real", l.dp_real),
            ("r1", self.r1),
            ("loss_g_depth", self.totals.g_depth),
            ("loss_g_rgb", self.totals.g_rgb),
            ("loss_d", self.totals.d),
        ]
    }
}

fn gradients(loss: &Var<f32>, bound: &Bound<f32>) -> HashMap<ParamId, Tensor<f32>> {
    let g = loss.backward();
    bound
        .trainable()
        .into_iter()
        .map(|(id, v)| {
            let t = g.tensor(&v).cloned().unwrap_or_else(|| Tensor::zeros(v.shape().to_vec()));
            (id, t)
        })
        .collect()
}

struct PhaseGuard {
    step: u64,
    seen: Vec<(&'static str, f64)>,
}

impl PhaseGuard {
    fn check(&mut self, phase: u8, parts: &[(&'static str, f64)]) -> Result<()> {
        self.seen.extend_from_slice(parts);
        if parts.iter().all(|(_, v)| v.is_finite()) {
            return Ok(());
        }
        Err(self.fail(phase))
    }

    fn fail(&self, phase: u8) -> Error {
        let losses = self.seen.iter().map(|(n, v)| format!("{n}={v}")).collect::<Vec<_>>().join(", ");
        Error::NonFinite { step: self.step, phase, losses }
    }

    /// Non-finite logits surface as numeric errors from the loss functions.
    fn lift<T>(&self, phase: u8, r: Result<T>) -> Result<T> {
        match r {
            Err(Error::Numeric(msg)) => {
                let mut e = self.fail(phase);
                if let Error::NonFinite { losses, .. } = &mut e {
                    losses.push_str(&format!(" ({msg})"));
                }
                Err(e)
            }
            other => other,
        }
    }
}

/// Runs the four phases on `real`. A non-finite loss aborts the step, restores the
/// parameters and optimizer state, and reports where it happened. RNG draws already
/// made are not rewound.
pub fn train_step(state: &mut TrainState, real: &RealBatch) -> Result<StepReport> {
    train_step_observed(state, real, |_, _| {})
}

/// [`train_step`], calling `after_phase(phase, params)` once each phase's update is applied.
pub fn train_step_observed(
    state: &mut TrainState,
    real: &RealBatch,
    mut after_phase: impl FnMut(u8, &ParamStore<f32>),
) -> Result<StepReport> {
    let snapshot = (state.model.params.clone(), state.optimizers.clone());
    match run_phases(state, real, &mut after_phase) {
        Ok(report) => {
            state.step += 1;
            Ok(report)
        }
        Err(e) => {
            state.model.params = snapshot.0;
            state.optimizers = snapshot.1;
            Err(e)
        }
    }
}

fn run_phases(state: &mut TrainState, real: &RealBatch, after_phase: &mut dyn FnMut(u8, &ParamStore<f32>)) -> Result<StepReport> {
    let batch = state.train.batch;
    let r = state.model.cfg.generator.resolution;
    if real.rgb.shape() != [batch, 3, r, r] || real.depth.shape() != [batch, 1, r, r] {
        return Err(Error::InvalidArgument(format!(
            "real batch {:?} / {:?} does not match batch {batch} at {r}x{r}",
            real.rgb.shape(),
            real.depth.shape()
        )));
    }
    let w = state.train.weights;
    let mut guard = PhaseGuard { step: state.step + 1, seen: Vec::new() };
    let mut c = LossComponents::default();

    // Phase 1: both generator paths through a frozen discriminator.
    {
        let latents = state.draw_latents(batch);
        let noise = state.draw_noise(batch);
        let m = &state.model;
        let bound = m.params.bind(&[Group::DepthGen, Group::RgbGen]);
        let loss = guard.lift(1, losses::generator_adversarial(m, &bound, &latents, &noise))?;
        c.adv_g = loss.item() as f64;
        guard.check(1, &[("adv_g", c.adv_g)])?;
        let grads = gradients(&loss, &bound);
        state.apply(Group::DepthGen, &grads);
        state.apply(Group::RgbGen, &grads);
        after_phase(1, &state.model.params);
    }

    // Phase 2: depth rotation consistency, depth path only.
    {
        let (latents, t1, t2) = state.draw_pair(batch);
        let noise = state.draw_noise(batch);
        let m = &state.model;
        let bound = m.params.bind(&[Group::DepthGen]);
        let rot = guard.lift(2, losses::depth_rotation(m, &bound, &latents.z_d, &t1, &t2, &noise))?;
        c.rot_depth = rot.item() as f64;
        guard.check(2, &[("rot_depth", c.rot_depth)])?;
        let loss = rot.mul_scalar(w.lambda1 as f32);
        let grads = gradients(&loss, &bound);
        state.apply(Group::DepthGen, &grads);
        after_phase(2, &state.model.params);
    }

    // Phase 3: RGB rotation consistency and fake depth prediction, appearance path only.
    {
        let (latents, _, t2) = state.draw_pair(batch);
        let noise = state.draw_noise(batch);
        let m = &state.model;
        let bound = m.params.bind(&[Group::RgbGen]);
        let l = guard.lift(3, losses::appearance(m, &bound, &latents, &t2, &noise))?;
        c.rot_rgb = l.rot_rgb.item() as f64;
        c.dp_fake = l.dp_fake.item() as f64;
        guard.check(3, &[("rot_rgb", c.rot_rgb), ("dp_fake", c.dp_fake)])?;
        let loss = l.rot_rgb.mul_scalar(w.lambda2 as f32).add(&l.dp_fake.mul_scalar(w.lambda3 as f32));
        let grads = gradients(&loss, &bound);
        state.apply(Group::RgbGen, &grads);
        after_phase(3, &state.model.params);
    }

    // Phase 4: discriminator.
    let r1_value;
    {
        let latents = state.draw_latents(batch);
        let noise = state.draw_noise(batch);
        let m = &state.model;
        let fake = no_grad(|| m.generator.generate(&m.params.bind(&[]), &latents, &noise))?;
        let bound = m.params.bind(&[Group::Disc]);
        let l = guard.lift(
            4,
            losses::discriminator(m, &bound, &real.rgb, &real.depth, fake.rgb.value(), fake.depth.value(), w.r1),
        )?;
        c.adv_d = l.adv_d.item() as f64;
        c.dp_real = l.dp_real.item() as f64;
        r1_value = l.r1.item() as f64;
        guard.check(4, &[("adv_d", c.adv_d), ("dp_real", c.dp_real), ("r1", r1_value)])?;
        let loss = l.adv_d.add(&l.dp_real.mul_scalar(w.lambda4 as f32)).add(&l.r1);
        let grads = gradients(&loss, &bound);
        state.apply(Group::Disc, &grads);
        after_phase(4, &state.model.params);
    }

    let totals = totals(&c, &w)?;
    Ok(StepReport { step: state.step + 1, losses: c, r1: r1_value, totals })
}
