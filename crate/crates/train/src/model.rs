use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rgbd_gan::camera::CameraIntrinsics;
use rgbd_gan::discriminator::Discriminator;
use rgbd_gan::error::Result;
use rgbd_gan::generator::{GenNoise, Generated, Generator, Latents};
use rgbd_gan::nn::ParamStore;
use rgbd_tensor::no_grad;

use crate::config::ModelConfig;

/// Both networks over one parameter store.
#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub params: ParamStore<f32>,
    pub k: CameraIntrinsics,
}

impl Model {
    /// Fresh initialization, deterministic in `seed`.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let generator = Generator::build(cfg.generator.clone(), &mut params, &mut rng)?;
        let discriminator = Discriminator::build(cfg.discriminator.clone(), &mut params, &mut rng)?;
        let k = cfg.intrinsics()?;
        Ok(Self { cfg, generator, discriminator, params, k })
    }

    /// Inference with zero noise and no graph.
    pub fn generate(&self, latents: &Latents) -> Result<Generated<f32>> {
        no_grad(|| {
            let b = self.params.bind(&[]);
            self.generator.generate(&b, latents, &GenNoise::zeros(&self.generator))
        })
    }
}
