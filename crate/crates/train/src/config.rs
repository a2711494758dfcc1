use rgbd_gan::camera::{centroid_pivot, intrinsics_from_focal, CameraIntrinsics, DepthRange, RotationSpec};
use rgbd_gan::discriminator::DiscriminatorConfig;
use rgbd_gan::error::{Error, Result};
use rgbd_gan::generator::{ChannelSchedule, GeneratorConfig};
use rgbd_gan::nn::AdamConfig;
use rgbd_gan::objectives::LossWeights;
use serde::{Deserialize, Serialize};

/// Everything needed to rebuild the networks and the camera.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub focal_mm: f64,
    pub sensor_width_mm: f64,
    /// Fixed pivot depth; `None` uses the mean depth of the view being warped.
    pub pivot_depth: Option<f64>,
}

impl ModelConfig {
    /// 16×16, eight channels everywhere: for smoke runs and gradient checks.
    pub fn tiny() -> Self {
        let range = DepthRange { near: 0.5, far: 10.0 };
        let theta = 15f64.to_radians();
        Self {
            generator: GeneratorConfig {
                latent_dim: 16,
                mapping_layers: 1,
                angle_freqs: 4,
                resolution: 16,
                channels: ChannelSchedule(vec![(4, 8), (8, 8), (16, 8)]),
                depth_range: range,
                theta_min: -theta,
                theta_max: theta,
                fusion_kernel: 3,
            },
            discriminator: DiscriminatorConfig {
                resolution: 16,
                channels: ChannelSchedule(vec![(16, 8), (8, 8), (4, 8)]),
                depth_classes: 10,
                branch_channels: 8,
                depth_range: range,
            },
            focal_mm: 26.0,
            sensor_width_mm: 36.0,
            pivot_depth: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.discriminator.validate()?;
        if self.generator.resolution != self.discriminator.resolution {
            return Err(Error::Config {
                key: "model.resolution".into(),
                message: "generator and discriminator resolutions differ".into(),
            });
        }
        if self.generator.depth_range != self.discriminator.depth_range {
            return Err(Error::Config { key: "camera.near".into(), message: "networks disagree on the depth range".into() });
        }
        if let Some(z) = self.pivot_depth {
            if !(z > 0.0) {
                return Err(Error::Config { key: "camera.pivot_depth".into(), message: format!("must be positive, got {z}") });
            }
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> Result<CameraIntrinsics> {
        let r = self.generator.resolution;
        intrinsics_from_focal(self.focal_mm, self.sensor_width_mm, r, r)
    }

    /// One vertical rotation per sample. `depth1` is view 1's `[B, 1, H, W]` depth,
    /// only read when the pivot follows the scene.
    pub fn rotation_specs(&self, depth1: &[f32], theta1: &[f64], theta2: &[f64]) -> Vec<RotationSpec> {
        let b = theta1.len();
        let plane = depth1.len() / b.max(1);
        (0..b)
            .map(|i| {
                let pivot = match self.pivot_depth {
                    Some(z) => [0.0, 0.0, z],
                    None => centroid_pivot(&depth1[i * plane..(i + 1) * plane]),
                };
                RotationSpec::vertical(theta1[i], theta2[i], pivot)
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch: usize,
    pub steps: u64,
    pub adam: AdamConfig,
    pub weights: LossWeights,
    pub seed: u64,
    /// Steps between checkpoints; 0 writes only the final one.
    pub checkpoint_every: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch < 2 {
            return Err(Error::Config { key: "train.batch".into(), message: format!("must be >= 2, got {}", self.batch) });
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::Config { key: "train.lr".into(), message: "must be positive".into() });
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return Err(Error::Config { key: "train.beta1".into(), message: "moments must lie in [0, 1)".into() });
        }
        self.weights.validate()
    }
}
