//! Flat `key = value` run configuration.
//!
//! Precedence, lowest first: built-in defaults, the selected preset, the config file,
//! command-line flags. The `preset` key itself may come from the file or a flag.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rgbd_eval::{EmbedderKind, LatentSpace};
use rgbd_gan::camera::DepthRange;
use rgbd_gan::data::ToyDataConfig;
use rgbd_gan::discriminator::DiscriminatorConfig;
use rgbd_gan::error::{Error, Result};
use rgbd_gan::generator::{ChannelSchedule, GeneratorConfig};
use rgbd_gan::nn::AdamConfig;
use rgbd_gan::objectives::LossWeights;
use rgbd_train::{ModelConfig, TrainConfig};

pub struct KeySpec {
    pub key: &'static str,
    /// `None`: no default, the key must be given when a command needs it.
    pub default: Option<&'static str>,
    pub doc: &'static str,
}

const fn key(key: &'static str, default: &'static str, doc: &'static str) -> KeySpec {
    KeySpec { key, default: Some(default), doc }
}

/// Every recognised key with its default (the 64-desk values).
pub const KEYS: &[KeySpec] = &[
    key("preset", "64-desk", "64-desk, 128-paper, 256-paper (bedroom weights) or 256-paper-kitchen"),
    key("model.resolution", "64", "output resolution, a power of two >= 16"),
    key("model.latent_dim", "128", "width m of z_d, z_rgb and the style vectors"),
    key("model.mapping_layers", "2", "layers per mapping network"),
    key("model.angle_freqs", "4", "highest angle-encoding frequency t"),
    key("model.gen_channels", "4:64,8:64,16:32,32:16,64:8", "generator channels per resolution"),
    key("model.disc_channels", "64:8,32:16,16:32,8:64,4:64", "discriminator trunk channels per resolution"),
    key("model.depth_classes", "10", "depth bins k of the prediction branch"),
    key("model.branch_channels", "16", "channels of the depth-prediction branch"),
    key("model.fusion_kernel", "3", "kernel of the second fusion convolution"),
    key("camera.near", "0.5", "nearest depth, scene units"),
    key("camera.far", "10", "farthest depth, scene units"),
    key("camera.focal_mm", "26", "focal length, mm (35 mm equivalent)"),
    key("camera.sensor_width_mm", "36", "sensor width, mm"),
    key("camera.theta_min", "-15", "lowest sampled rotation angle, degrees"),
    key("camera.theta_max", "15", "highest sampled rotation angle, degrees"),
    key("camera.pivot_depth", "auto", "rotation pivot depth; auto uses the mean depth of view 1"),
    key("train.batch", "8", "batch size, >= 2"),
    key("train.steps", "500", "total training steps"),
    key("train.lr", "0.0015", "Adam learning rate"),
    key("train.beta1", "0", "Adam first-moment decay"),
    key("train.beta2", "0.99", "Adam second-moment decay"),
    key("train.eps", "1e-8", "Adam epsilon"),
    key("train.seed", "0", "seed for initialisation, latents, angles and batches"),
    key("train.checkpoint_every", "100", "steps between checkpoints; 0 keeps only the final one"),
    key("loss.lambda1", "50", "depth rotation-consistency weight"),
    key("loss.lambda2", "0.3", "RGB rotation-consistency weight"),
    key("loss.lambda3", "0.001", "depth-prediction weight on generated images"),
    key("loss.lambda4", "0.8", "depth-prediction weight on real images"),
    key("loss.r1", "0.3", "R1 penalty weight"),
    KeySpec { key: "data.dir", default: None, doc: "dataset directory (manifest.json, or rgb/ and depth/ folders)" },
    key("data.toy_scenes", "1000", "scenes rendered by make-toy-data"),
    key("data.toy_angles", "2", "angles rendered per toy scene"),
    key("data.toy_seed", "0", "seed of make-toy-data"),
    key("metrics.pairs", "256", "view pairs behind RP and RC"),
    key("metrics.seed", "0", "seed of metric sampling"),
    key("metrics.fake_samples", "256", "generated samples behind DP(Fake) and the Fréchet distance"),
    key("metrics.holdout", "200", "images taken from the start of data.dir for DP(Real) and the Fréchet distance"),
    key("metrics.embedder", "random-conv", "Fréchet embedder: random-conv or identity-downsample"),
    key("metrics.latent_space", "z", "interpolation space: z or w"),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Desk64,
    Paper128,
    Paper256Bedroom,
    Paper256Kitchen,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::Desk64, Preset::Paper128, Preset::Paper256Bedroom, Preset::Paper256Kitchen];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Desk64 => "64-desk",
            Preset::Paper128 => "128-paper",
            Preset::Paper256Bedroom => "256-paper",
            Preset::Paper256Kitchen => "256-paper-kitchen",
        }
    }

    /// Values that differ from the key defaults.
    pub fn values(self) -> Vec<(&'static str, &'static str)> {
        let paper = |res: &'static str, gen: &'static str, disc: &'static str| {
            vec![
                ("model.resolution", res),
                ("model.latent_dim", "512"),
                ("model.mapping_layers", "8"),
                ("model.gen_channels", gen),
                ("model.disc_channels", disc),
                ("model.branch_channels", "64"),
                ("train.batch", "64"),
                ("train.steps", "200000"),
                ("train.checkpoint_every", "5000"),
            ]
        };
        const G128: &str = "4:512,8:512,16:512,32:512,64:256,128:128";
        const D128: &str = "128:128,64:256,32:512,16:512,8:512,4:512";
        const G256: &str = "4:512,8:512,16:512,32:512,64:256,128:128,256:64";
        const D256: &str = "256:64,128:128,64:256,32:512,16:512,8:512,4:512";
        match self {
            Preset::Desk64 => Vec::new(),
            Preset::Paper128 => paper("128", G128, D128),
            Preset::Paper256Bedroom => {
                let mut v = paper("256", G256, D256);
                v.extend([("loss.lambda2", "0.5"), ("loss.r1", "0.5")]);
                v
            }
            Preset::Paper256Kitchen => {
                let mut v = paper("256", G256, D256);
                v.extend([("loss.lambda2", "0.4"), ("loss.r1", "0.5")]);
                v
            }
        }
    }
}

impl FromStr for Preset {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Preset::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Preset::ALL.iter().map(|p| p.name()).collect();
            format!("unknown preset `{s}` ({})", names.join(", "))
        })
    }
}

fn config_err(key: &str, message: impl Into<String>) -> Error {
    Error::Config { key: key.to_string(), message: message.into() }
}

fn spec(key: &str) -> Option<&'static KeySpec> {
    KEYS.iter().find(|k| k.key == key)
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_pairs(text: &str, origin: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| config_err(line, format!("{origin}:{}: expected `key = value`", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Parses a `key=value` command-line override.
pub fn parse_override(s: &str) -> std::result::Result<(String, String), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected key=value, got `{s}`"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

/// Fully resolved configuration.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    /// Resolves defaults, preset, file pairs and flag pairs, in that order.
    pub fn resolve(file: &[(String, String)], flags: &[(String, String)]) -> Result<Self> {
        for (k, _) in file.iter().chain(flags) {
            if spec(k).is_none() {
                return Err(config_err(k, "unknown key"));
            }
        }
        let preset_name = flags
            .iter()
            .rev()
            .chain(file.iter().rev())
            .find(|(k, _)| k == "preset")
            .map_or("64-desk", |(_, v)| v.as_str());
        let preset: Preset = preset_name.parse().map_err(|e: String| config_err("preset", e))?;

        let mut values = BTreeMap::new();
        for k in KEYS {
            if let Some(d) = k.default {
                values.insert(k.key.to_string(), d.to_string());
            }
        }
        for (k, v) in preset.values() {
            values.insert(k.to_string(), v.to_string());
        }
        for (k, v) in file.iter().chain(flags) {
            values.insert(k.clone(), v.clone());
        }
        values.insert("preset".into(), preset.name().into());
        let cfg = Self { values };
        cfg.check_types()?;
        Ok(cfg)
    }

    pub fn from_file(path: Option<&Path>, flags: &[(String, String)]) -> Result<Self> {
        let file = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|source| Error::Io { path: p.to_path_buf(), source })?;
                parse_pairs(&text, &p.display().to_string())?
            }
            None => Vec::new(),
        };
        Self::resolve(&file, flags)
    }

    pub fn preset(&self) -> Preset {
        self.values["preset"].parse().expect("checked on resolve")
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// The value of a key that has no default.
    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| config_err(key, "required but not set (no default)"))
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        if spec(key).is_none() {
            return Err(config_err(key, "unknown key"));
        }
        self.values.insert(key.to_string(), value.into());
        self.check_types()
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.require(key)?;
        raw.parse().map_err(|e: T::Err| config_err(key, format!("cannot parse `{raw}`: {e}")))
    }

    fn check_types(&self) -> Result<()> {
        // Touch every typed key once so bad values fail at load time with their key.
        self.model_config()?;
        self.train_config()?;
        self.parse::<usize>("data.toy_scenes")?;
        self.parse::<usize>("data.toy_angles")?;
        self.parse::<u64>("data.toy_seed")?;
        self.parse::<usize>("metrics.pairs")?;
        self.parse::<u64>("metrics.seed")?;
        self.parse::<usize>("metrics.fake_samples")?;
        self.parse::<usize>("metrics.holdout")?;
        self.parse::<EmbedderKind>("metrics.embedder")?;
        self.latent_space()?;
        Ok(())
    }

    pub fn range(&self) -> Result<DepthRange> {
        let (near, far) = (self.parse::<f64>("camera.near")?, self.parse::<f64>("camera.far")?);
        DepthRange::new(near, far).map_err(|e| config_err("camera.near", e.to_string()))
    }

    /// Sampled angle range in radians.
    pub fn theta_range(&self) -> Result<(f64, f64)> {
        let lo: f64 = self.parse("camera.theta_min")?;
        let hi: f64 = self.parse("camera.theta_max")?;
        if !(lo < hi) {
            return Err(config_err("camera.theta_min", format!("must be below camera.theta_max ({lo} >= {hi})")));
        }
        Ok((lo.to_radians(), hi.to_radians()))
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let range = self.range()?;
        let (theta_min, theta_max) = self.theta_range()?;
        let resolution = self.parse("model.resolution")?;
        let pivot_depth = match self.require("camera.pivot_depth")? {
            "auto" => None,
            _ => Some(self.parse::<f64>("camera.pivot_depth")?),
        };
        let cfg = ModelConfig {
            generator: GeneratorConfig {
                latent_dim: self.parse("model.latent_dim")?,
                mapping_layers: self.parse("model.mapping_layers")?,
                angle_freqs: self.parse("model.angle_freqs")?,
                resolution,
                channels: self.parse::<ChannelSchedule>("model.gen_channels")?,
                depth_range: range,
                theta_min,
                theta_max,
                fusion_kernel: self.parse("model.fusion_kernel")?,
            },
            discriminator: DiscriminatorConfig {
                resolution,
                channels: self.parse::<ChannelSchedule>("model.disc_channels")?,
                depth_classes: self.parse("model.depth_classes")?,
                branch_channels: self.parse("model.branch_channels")?,
                depth_range: range,
            },
            focal_mm: self.parse("camera.focal_mm")?,
            sensor_width_mm: self.parse("camera.sensor_width_mm")?,
            pivot_depth,
        };
        cfg.generator.validate().map_err(|e| config_err("model.gen_channels", e.to_string()))?;
        cfg.discriminator.validate().map_err(|e| config_err("model.disc_channels", e.to_string()))?;
        cfg.validate()?;
        cfg.intrinsics().map_err(|e| config_err("camera.focal_mm", e.to_string()))?;
        Ok(cfg)
    }

    pub fn weights(&self) -> Result<LossWeights> {
        let w = LossWeights {
            lambda1: self.parse("loss.lambda1")?,
            lambda2: self.parse("loss.lambda2")?,
            lambda3: self.parse("loss.lambda3")?,
            lambda4: self.parse("loss.lambda4")?,
            r1: self.parse("loss.r1")?,
        };
        w.validate().map_err(|e| config_err("loss.lambda1", e.to_string()))?;
        Ok(w)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            batch: self.parse("train.batch")?,
            steps: self.parse("train.steps")?,
            adam: AdamConfig {
                lr: self.parse("train.lr")?,
                beta1: self.parse("train.beta1")?,
                beta2: self.parse("train.beta2")?,
                eps: self.parse("train.eps")?,
            },
            weights: self.weights()?,
            seed: self.parse("train.seed")?,
            checkpoint_every: self.parse("train.checkpoint_every")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn toy_config(&self) -> Result<ToyDataConfig> {
        let (theta_min, theta_max) = self.theta_range()?;
        Ok(ToyDataConfig {
            n_scenes: self.parse("data.toy_scenes")?,
            angles_per_scene: self.parse("data.toy_angles")?,
            resolution: self.parse("model.resolution")?,
            theta_min,
            theta_max,
            focal_mm: self.parse("camera.focal_mm")?,
            sensor_width_mm: self.parse("camera.sensor_width_mm")?,
            range: self.range()?,
            seed: self.parse("data.toy_seed")?,
        })
    }

    pub fn data_dir(&self) -> Result<PathBuf> {
        Ok(PathBuf::from(self.require("data.dir")?))
    }

    pub fn latent_space(&self) -> Result<LatentSpace> {
        match self.require("metrics.latent_space")? {
            "z" => Ok(LatentSpace::Z),
            "w" => Ok(LatentSpace::W),
            other => Err(config_err("metrics.latent_space", format!("expected z or w, got `{other}`"))),
        }
    }

    /// Overwrites the model and training keys with `model` and `train`, as read back
    /// from a checkpoint. Angles are written in degrees.
    pub fn with_configs(&self, model: &ModelConfig, train: &TrainConfig) -> Result<Self> {
        let mut c = self.clone();
        let g = &model.generator;
        let d = &model.discriminator;
        let w = &train.weights;
        let pairs: Vec<(&str, String)> = vec![
            ("model.resolution", g.resolution.to_string()),
            ("model.latent_dim", g.latent_dim.to_string()),
            ("model.mapping_layers", g.mapping_layers.to_string()),
            ("model.angle_freqs", g.angle_freqs.to_string()),
            ("model.gen_channels", g.channels.to_string()),
            ("model.disc_channels", d.channels.to_string()),
            ("model.depth_classes", d.depth_classes.to_string()),
            ("model.branch_channels", d.branch_channels.to_string()),
            ("model.fusion_kernel", g.fusion_kernel.to_string()),
            ("camera.near", g.depth_range.near.to_string()),
            ("camera.far", g.depth_range.far.to_string()),
            ("camera.focal_mm", model.focal_mm.to_string()),
            ("camera.sensor_width_mm", model.sensor_width_mm.to_string()),
            ("camera.theta_min", g.theta_min.to_degrees().to_string()),
            ("camera.theta_max", g.theta_max.to_degrees().to_string()),
            ("camera.pivot_depth", model.pivot_depth.map_or("auto".into(), |z| z.to_string())),
            ("train.batch", train.batch.to_string()),
            ("train.steps", train.steps.to_string()),
            ("train.lr", train.adam.lr.to_string()),
            ("train.beta1", train.adam.beta1.to_string()),
            ("train.beta2", train.adam.beta2.to_string()),
            ("train.eps", train.adam.eps.to_string()),
            ("train.seed", train.seed.to_string()),
            ("train.checkpoint_every", train.checkpoint_every.to_string()),
            ("loss.lambda1", w.lambda1.to_string()),
            ("loss.lambda2", w.lambda2.to_string()),
            ("loss.lambda3", w.lambda3.to_string()),
            ("loss.lambda4", w.lambda4.to_string()),
            ("loss.r1", w.r1.to_string()),
        ];
        for (k, v) in pairs {
            c.values.insert(k.to_string(), v);
        }
        c.check_types()?;
        Ok(c)
    }

    /// The resolved configuration as a config file: every key, with its description.
    pub fn echo(&self) -> String {
        let mut out = String::from("# resolved run configuration\n");
        let mut section = "";
        for k in KEYS {
            let s = k.key.split('.').next().unwrap_or("");
            if s != section {
                out.push('\n');
                section = s;
            }
            match self.values.get(k.key) {
                Some(v) => writeln!(out, "{} = {v}  # {}", k.key, k.doc),
                None => writeln!(out, "# {} =   # {} (unset)", k.key, k.doc),
            }
            .expect("string write");
        }
        out
    }

    /// Every key with its default, for `--help`-style listings.
    pub fn describe_keys() -> String {
        let mut out = String::new();
        for k in KEYS {
            writeln!(out, "  {:<26} {:<28} {}", k.key, k.default.unwrap_or("(required)"), k.doc).expect("string write");
        }
        out
    }
}
