//! Switchable discriminator: RGBD realness scoring through two summed input layers,
//! and per-pixel depth classification from RGB through a branch on the shared trunk.

use rand::Rng;
use rgbd_tensor::{Real, Var};
use serde::{Deserialize, Serialize};

use crate::camera::DepthRange;
use crate::error::{invalid, Result};
use crate::generator::ChannelSchedule;
use crate::nn::{Bound, Conv2d, Dense, Group, ParamBuilder, ParamStore};

/// Highest trunk resolution the depth branch reads.
const MAX_TAP: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub resolution: usize,
    /// Trunk channels per resolution, from the input down to 4.
    pub channels: ChannelSchedule,
    /// Depth classes `k`.
    pub depth_classes: usize,
    pub branch_channels: usize,
    pub depth_range: DepthRange,
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.resolution.is_power_of_two() || self.resolution < 16 {
            return Err(invalid(format!("discriminator resolution must be a power of two >= 16, got {}", self.resolution)));
        }
        if self.depth_classes < 2 {
            return Err(invalid("depth prediction needs k >= 2 classes"));
        }
        if self.branch_channels == 0 {
            return Err(invalid("depth branch needs channels"));
        }
        self.channels.covers(4, self.resolution)
    }

    /// Trunk resolutions read by the depth branch, smallest first: up to three of the
    /// largest below the input, capped at 64.
    pub fn tap_resolutions(&self) -> Vec<usize> {
        let mut taps: Vec<usize> = std::iter::successors(Some(self.resolution / 2), |r| Some(r / 2))
            .take_while(|&r| r >= 4)
            .filter(|&r| r <= MAX_TAP)
            .take(3)
            .collect();
        taps.reverse();
        taps
    }

    /// Spatial size of the depth logits.
    pub fn branch_resolution(&self) -> usize {
        *self.tap_resolutions().last().expect("resolution >= 16 gives taps")
    }
}

/// RGB with or without depth: with depth the network scores realness, without it
/// predicts depth.
#[derive(Clone, Debug)]
pub struct SwitchableInput<T: Real> {
    /// `[B, 3, H, W]` in `[-1, 1]`.
    pub rgb: Var<T>,
    /// `[B, 1, H, W]` in camera units.
    pub depth: Option<Var<T>>,
}

impl<T: Real> SwitchableInput<T> {
    pub fn rgbd(rgb: Var<T>, depth: Var<T>) -> Self {
        Self { rgb, depth: Some(depth) }
    }

    pub fn rgb(rgb: Var<T>) -> Self {
        Self { rgb, depth: None }
    }
}

#[derive(Clone, Debug)]
struct ResBlock {
    conv0: Conv2d,
    conv1: Conv2d,
    skip: Conv2d,
    out_res: usize,
}

impl ResBlock {
    fn forward<T: Real>(&self, b: &Bound<T>, x: &Var<T>) -> Var<T> {
        let h = self.conv0.forward(b, x).avg_pool2x();
        let h = self.conv1.forward(b, &h);
        let s = self.skip.forward(b, &x.avg_pool2x());
        h.add(&s).mul_scalar(T::lit(std::f64::consts::FRAC_1_SQRT_2))
    }
}

#[derive(Clone, Debug)]
struct BranchStage {
    input: Conv2d,
    res0: Conv2d,
    res1: Conv2d,
}

#[derive(Clone, Debug)]
pub struct Discriminator {
    pub cfg: DiscriminatorConfig,
    from_rgb: Conv2d,
    from_depth: Conv2d,
    blocks: Vec<ResBlock>,
    epilogue: Conv2d,
    fc: Dense,
    out: Dense,
    stages: Vec<BranchStage>,
    head: Conv2d,
}

impl Discriminator {
    pub fn build(cfg: DiscriminatorConfig, store: &mut ParamStore<f32>, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let ch = |r: usize| cfg.channels.at(r).expect("validated");
        let mut pb = ParamBuilder::new(store, rng, Group::Disc);
        let top = ch(cfg.resolution);
        let from_rgb = Conv2d::new(&mut pb, "from_rgb", 3, top, 1, true, true);
        let from_depth = Conv2d::new(&mut pb, "from_depth", 1, top, 1, true, true);
        let mut blocks = Vec::new();
        let mut r = cfg.resolution;
        while r > 4 {
            let (cin, cout) = (ch(r), ch(r / 2));
            blocks.push(pb.scope(format!("trunk.{r}"), |pb| ResBlock {
                conv0: Conv2d::new(pb, "conv0", cin, cin, 3, true, true),
                conv1: Conv2d::new(pb, "conv1", cin, cout, 3, true, true),
                skip: Conv2d::new(pb, "skip", cin, cout, 1, false, false),
                out_res: r / 2,
            }));
            r /= 2;
        }
        let c4 = ch(4);
        let epilogue = Conv2d::new(&mut pb, "epilogue.conv", c4, c4, 3, true, true);
        let fc = Dense::new(&mut pb, "epilogue.fc", c4 * 16, c4, 1.0, 0.0, true);
        let out = Dense::new(&mut pb, "epilogue.out", c4, 1, 1.0, 0.0, false);

        let cb = cfg.branch_channels;
        let stages = cfg
            .tap_resolutions()
            .iter()
            .enumerate()
            .map(|(i, &r)| {
                let cin = ch(r) + if i == 0 { 0 } else { cb };
                pb.scope(format!("branch.{r}"), |pb| BranchStage {
                    input: Conv2d::new(pb, "input", cin, cb, 3, true, true),
                    res0: Conv2d::new(pb, "res0", cb, cb, 3, true, true),
                    res1: Conv2d::new(pb, "res1", cb, cb, 3, true, false),
                })
            })
            .collect();
        let head = Conv2d::new(&mut pb, "branch.head", cb, cfg.depth_classes, 3, true, false);
        Ok(Self { cfg, from_rgb, from_depth, blocks, epilogue, fc, out, stages, head })
    }

    fn check_rgb<T: Real>(&self, rgb: &Var<T>) -> Result<usize> {
        let r = self.cfg.resolution;
        match *rgb.shape() {
            [b, 3, h, w] if h == r && w == r => Ok(b),
            _ => Err(invalid(format!("discriminator expects [B, 3, {r}, {r}] RGB, got {:?}", rgb.shape()))),
        }
    }

    /// `Γ0(rgb)`.
    pub fn rgb_features<T: Real>(&self, b: &Bound<T>, rgb: &Var<T>) -> Var<T> {
        self.from_rgb.forward(b, rgb)
    }

    /// `Γ1(depth)` on depth already mapped to `[-1, 1]`.
    pub fn depth_features<T: Real>(&self, b: &Bound<T>, depth_unit: &Var<T>) -> Var<T> {
        self.from_depth.forward(b, depth_unit)
    }

    /// Camera-unit depth to the `[-1, 1]` scale the input layer sees.
    pub fn depth_to_unit<T: Real>(&self, depth: &Var<T>) -> Var<T> {
        let r = self.cfg.depth_range;
        depth.add_scalar(T::lit(-r.near)).mul_scalar(T::lit(2.0 / r.span())).add_scalar(-T::one())
    }

    /// Trunk and epilogue on input-layer features: one logit per sample, `[B]`.
    pub fn trunk_logit<T: Real>(&self, b: &Bound<T>, features: &Var<T>) -> Var<T> {
        let batch = features.shape()[0];
        let mut x = features.clone();
        for block in &self.blocks {
            x = block.forward(b, &x);
        }
        let x = self.epilogue.forward(b, &x);
        let x = x.reshape(vec![batch, x.value().numel() / batch]);
        self.out.forward(b, &self.fc.forward(b, &x)).reshape(vec![batch])
    }

    /// Realness logits, `[B]`.
    pub fn score<T: Real>(&self, b: &Bound<T>, input: &SwitchableInput<T>) -> Result<Var<T>> {
        let depth = input.depth.as_ref().ok_or_else(|| invalid("realness scoring needs the depth channel"))?;
        let batch = self.check_rgb(&input.rgb)?;
        let r = self.cfg.resolution;
        if depth.shape() != [batch, 1, r, r] {
            return Err(invalid(format!("depth {:?} does not match rgb {:?}", depth.shape(), input.rgb.shape())));
        }
        let f = self.rgb_features(b, &input.rgb).add(&self.depth_features(b, &self.depth_to_unit(depth)));
        Ok(self.trunk_logit(b, &f))
    }

    /// Realness logits for a packed `[B, 4, H, W]` input whose fourth channel is
    /// depth on the `[-1, 1]` scale. This is the input R1 differentiates against.
    pub fn score_packed<T: Real>(&self, b: &Bound<T>, x: &Var<T>) -> Result<Var<T>> {
        let rgb = x.narrow(1, 0, 3);
        self.check_rgb(&rgb)?;
        let f = self.rgb_features(b, &rgb).add(&self.depth_features(b, &x.narrow(1, 3, 1)));
        Ok(self.trunk_logit(b, &f))
    }

    /// Depth-class logits `[B, k, s, s]` at the branch resolution. Only `Γ0` is used.
    pub fn predict_depth<T: Real>(&self, b: &Bound<T>, input: &SwitchableInput<T>) -> Result<Var<T>> {
        if input.depth.is_some() {
            return Err(invalid("depth prediction takes RGB only; drop the depth channel"));
        }
        self.check_rgb(&input.rgb)?;
        let taps = self.cfg.tap_resolutions();
        let lowest = taps[0];
        let mut feats = Vec::with_capacity(taps.len());
        let mut x = self.rgb_features(b, &input.rgb);
        for block in &self.blocks {
            x = block.forward(b, &x);
            if taps.contains(&block.out_res) {
                feats.push(x.clone());
            }
            if block.out_res == lowest {
                break;
            }
        }
        feats.reverse();
        let mut y: Option<Var<T>> = None;
        for (stage, f) in self.stages.iter().zip(&feats) {
            let inp = match y {
                None => f.clone(),
                Some(prev) => Var::concat(&[prev.upsample2x(), f.clone()], 1),
            };
            let h = stage.input.forward(b, &inp);
            y = Some(h.add(&stage.res1.forward(b, &stage.res0.forward(b, &h))));
        }
        Ok(self.head.forward(b, &y.expect("at least one tap")))
    }
}
