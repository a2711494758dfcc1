//! Dual-path generator: a depth path driven by `(z_d, θ)` and an appearance path driven
//! by `z_rgb` that reads the depth path's features at every resolution.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use rgbd_tensor::{Real, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::camera::DepthRange;
use crate::error::{invalid, Result};
use crate::nn::{pixel_norm, Bound, Conv2d, Dense, Group, ModConv, ModConvSpec, ParamBuilder, ParamStore};

/// Channel count per resolution, e.g. `4:64,8:64,16:32`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelSchedule(pub Vec<(usize, usize)>);

impl ChannelSchedule {
    pub fn at(&self, res: usize) -> Option<usize> {
        self.0.iter().find(|(r, _)| *r == res).map(|&(_, c)| c)
    }

    /// Checks that every power of two from `lo` to `hi` has an entry.
    pub fn covers(&self, lo: usize, hi: usize) -> Result<()> {
        let mut r = lo;
        while r <= hi {
            match self.at(r) {
                Some(c) if c > 0 => {}
                _ => return Err(invalid(format!("channel schedule {self} has no entry for {r}x{r}"))),
            }
            r *= 2;
        }
        Ok(())
    }
}

impl fmt::Display for ChannelSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|(r, c)| format!("{r}:{c}")).collect();
        f.write_str(&parts.join(","))
    }
}

impl FromStr for ChannelSchedule {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        s.split(',')
            .map(|part| {
                let (r, c) = part.trim().split_once(':').ok_or_else(|| format!("expected res:channels, got `{part}`"))?;
                let r = r.trim().parse().map_err(|_| format!("bad resolution `{r}`"))?;
                let c = c.trim().parse().map_err(|_| format!("bad channel count `{c}`"))?;
                Ok((r, c))
            })
            .collect::<std::result::Result<Vec<_>, String>>()
            .map(ChannelSchedule)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    /// Latent and style width `m`.
    pub latent_dim: usize,
    pub mapping_layers: usize,
    /// Highest angle-encoding frequency `t`.
    pub angle_freqs: usize,
    pub resolution: usize,
    pub channels: ChannelSchedule,
    pub depth_range: DepthRange,
    /// Sampled angle range, radians.
    pub theta_min: f64,
    pub theta_max: f64,
    /// Kernel of the second fusion convolution (the first is always 3×3).
    pub fusion_kernel: usize,
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.resolution.is_power_of_two() || self.resolution < 16 {
            return Err(invalid(format!("generator resolution must be a power of two >= 16, got {}", self.resolution)));
        }
        if self.angle_freqs < 1 {
            return Err(invalid("angle encoding needs t >= 1"));
        }
        if self.latent_dim == 0 || self.mapping_layers == 0 {
            return Err(invalid("latent width and mapping depth must be positive"));
        }
        if !(self.theta_min < self.theta_max) {
            return Err(invalid("angle range needs theta_min < theta_max"));
        }
        if self.fusion_kernel % 2 == 0 {
            return Err(invalid("fusion kernel must be odd"));
        }
        self.channels.covers(4, self.resolution)
    }

    /// 4, 8, ..., resolution.
    pub fn levels(&self) -> Vec<usize> {
        std::iter::successors(Some(4), |r| Some(r * 2)).take_while(|&r| r <= self.resolution).collect()
    }
}

/// `(sin θ, cos θ, ..., sin tθ, cos tθ)`.
pub fn angle_features(theta: f64, t: usize) -> Result<Vec<f64>> {
    if t < 1 {
        return Err(invalid("angle encoding needs t >= 1"));
    }
    Ok((1..=t).flat_map(|j| [(j as f64 * theta).sin(), (j as f64 * theta).cos()]).collect())
}

/// `w' = w ⊗ γ`.
pub fn inject_angle<T: Real>(w: &Var<T>, gamma: &Var<T>) -> Result<Var<T>> {
    if w.shape() != gamma.shape() {
        return Err(invalid(format!("cannot inject angle code {:?} into style {:?}", gamma.shape(), w.shape())));
    }
    Ok(w.mul(gamma))
}

/// One sample's generator input.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentPair {
    pub z_d: Vec<f32>,
    pub z_rgb: Vec<f32>,
    pub theta: f64,
}

/// A batch of latent pairs: `z_d`, `z_rgb` are `[B, m]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Latents {
    pub z_d: Tensor<f32>,
    pub z_rgb: Tensor<f32>,
    pub theta: Vec<f64>,
}

impl Latents {
    /// Standard-normal codes with the given angles.
    pub fn sample(rng: &mut impl Rng, m: usize, theta: Vec<f64>) -> Self {
        let b = theta.len();
        let mut normal = |n| Tensor::from_fn(vec![n, m], |_| rng.sample::<f32, _>(StandardNormal));
        let z_d = normal(b);
        let z_rgb = normal(b);
        Self { z_d, z_rgb, theta }
    }

    pub fn from_pairs(pairs: &[LatentPair]) -> Result<Self> {
        let first = pairs.first().ok_or_else(|| invalid("no latent pairs"))?;
        let m = first.z_d.len();
        if pairs.iter().any(|p| p.z_d.len() != m || p.z_rgb.len() != m) {
            return Err(invalid("latent pairs disagree on the code width"));
        }
        Ok(Self {
            z_d: Tensor::new([pairs.len(), m], pairs.iter().flat_map(|p| p.z_d.iter().copied()).collect()),
            z_rgb: Tensor::new([pairs.len(), m], pairs.iter().flat_map(|p| p.z_rgb.iter().copied()).collect()),
            theta: pairs.iter().map(|p| p.theta).collect(),
        })
    }

    pub fn batch(&self) -> usize {
        self.theta.len()
    }

    /// Same codes, other angles.
    pub fn with_theta(&self, theta: Vec<f64>) -> Self {
        assert_eq!(theta.len(), self.batch());
        Self { theta, ..self.clone() }
    }
}

/// Per-layer additive noise (`[B, 1, H, W]`), `None` meaning zero.
#[derive(Clone, Debug)]
pub struct GenNoise<T: Real> {
    pub depth: Vec<Option<Tensor<T>>>,
    pub rgb: Vec<Option<Tensor<T>>>,
}

impl<T: Real> GenNoise<T> {
    pub fn zeros(g: &Generator) -> Self {
        Self { depth: vec![None; g.num_convs()], rgb: vec![None; g.num_convs()] }
    }

    pub fn random(g: &Generator, batch: usize, rng: &mut impl Rng) -> Self {
        let mut draw = |r: usize| Some(Tensor::from_fn(vec![batch, 1, r, r], |_| T::lit(rng.sample::<f64, _>(StandardNormal))));
        let res = g.conv_resolutions();
        let depth = res.iter().map(|&r| draw(r)).collect();
        let rgb = res.iter().map(|&r| draw(r)).collect();
        Self { depth, rgb }
    }
}

/// Mapped depth style `w` and its angle-injected variant `w'` (`[B, m]` each).
#[derive(Clone, Debug)]
pub struct StyleVector<T: Real> {
    pub w: Var<T>,
    pub w_prime: Var<T>,
}

/// Block outputs at 4², 8², ..., R².
#[derive(Clone, Debug)]
pub struct FeaturePyramid<T: Real> {
    pub levels: Vec<Var<T>>,
}

#[derive(Clone, Debug)]
pub struct DepthSynthesis<T: Real> {
    /// `[B, 1, R, R]` in `[near, far]`.
    pub depth: Var<T>,
    pub pyramid: FeaturePyramid<T>,
    /// Input of the third style-modulated convolution, the first one driven by `w`.
    pub third_layer_input: Var<T>,
}

#[derive(Clone, Debug)]
pub struct Generated<T: Real> {
    /// `[B, 3, R, R]` in `[-1, 1]`.
    pub rgb: Var<T>,
    /// `[B, 1, R, R]` in `[near, far]`.
    pub depth: Var<T>,
}

#[derive(Clone, Debug)]
struct SynthesisPath {
    mapping: Vec<Dense>,
    input: crate::nn::ParamId,
    convs: Vec<ModConv>,
    out: ModConv,
}

#[derive(Clone, Debug)]
struct AngleEncoder {
    fc1: Dense,
    fc2: Dense,
}

/// `f(Ψ ⊕ Φ)`: 3×3 conv + activation, then a linear conv back to `channels(Φ)`.
#[derive(Clone, Debug)]
pub struct Fusion {
    conv1: Conv2d,
    conv2: Conv2d,
    pub psi_channels: usize,
    pub phi_channels: usize,
}

impl Fusion {
    pub fn new<R: Rng>(pb: &mut ParamBuilder<'_, R>, name: &str, psi: usize, phi: usize, kernel: usize) -> Self {
        pb.scope(name, |pb| Self {
            conv1: Conv2d::new(pb, "conv0", psi + phi, phi, 3, true, true),
            conv2: Conv2d::new(pb, "conv1", phi, phi, kernel, true, false),
            psi_channels: psi,
            phi_channels: phi,
        })
    }

    pub fn forward<T: Real>(&self, b: &Bound<T>, psi: &Var<T>, phi: &Var<T>) -> Result<Var<T>> {
        let (ps, fs) = (psi.shape(), phi.shape());
        if ps.len() != 4 || fs.len() != 4 || ps[0] != fs[0] || ps[2..] != fs[2..] {
            return Err(invalid(format!("cannot fuse {ps:?} with {fs:?}")));
        }
        if ps[1] != self.psi_channels || fs[1] != self.phi_channels {
            return Err(invalid(format!(
                "fusion expects {} + {} channels, got {} + {}",
                self.psi_channels, self.phi_channels, ps[1], fs[1]
            )));
        }
        let x = Var::concat(&[psi.clone(), phi.clone()], 1);
        Ok(self.conv2.forward(b, &self.conv1.forward(b, &x)))
    }
}

#[derive(Clone, Debug)]
pub struct Generator {
    pub cfg: GeneratorConfig,
    depth: SynthesisPath,
    rgb: SynthesisPath,
    angle: AngleEncoder,
    fusions: Vec<Fusion>,
}

const MAPPING_LR_MUL: f64 = 0.01;

impl Generator {
    /// Registers all generator parameters in `store`.
    pub fn build(cfg: GeneratorConfig, store: &mut ParamStore<f32>, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let m = cfg.latent_dim;
        let (depth, angle) = {
            let mut pb = ParamBuilder::new(store, rng, Group::DepthGen);
            let path = Self::build_path(&mut pb, &cfg, 1);
            let angle = pb.scope("angle", |pb| AngleEncoder {
                fc1: Dense::new(pb, "fc0", 2 * cfg.angle_freqs, m, 1.0, 0.0, true),
                fc2: Dense::new(pb, "fc1", m, m, 1.0, 1.0, false),
            });
            (path, angle)
        };
        let mut pb = ParamBuilder::new(store, rng, Group::RgbGen);
        let rgb = Self::build_path(&mut pb, &cfg, 3);
        let fusions = cfg
            .levels()
            .iter()
            .map(|&r| {
                let c = cfg.channels.at(r).expect("validated");
                Fusion::new(&mut pb, &format!("fusion.{r}"), c, c, cfg.fusion_kernel)
            })
            .collect();
        Ok(Self { cfg, depth, rgb, angle, fusions })
    }

    fn build_path<R: Rng>(pb: &mut ParamBuilder<'_, R>, cfg: &GeneratorConfig, out_channels: usize) -> SynthesisPath {
        let m = cfg.latent_dim;
        let ch = |r: usize| cfg.channels.at(r).expect("validated");
        let mapping = pb.scope("mapping", |pb| {
            (0..cfg.mapping_layers).map(|i| Dense::new(pb, &format!("fc{i}"), m, m, MAPPING_LR_MUL, 0.0, true)).collect()
        });
        pb.scope("synth", |pb| {
            let input = pb.normal("const", &[1, ch(4), 4, 4], 1.0);
            let conv = |cin, cout, upsample| ModConvSpec {
                cin,
                cout,
                kernel: 3,
                upsample,
                demodulate: true,
                noise: true,
                act: true,
            };
            let mut convs = vec![ModConv::new(pb, "4.conv0", m, conv(ch(4), ch(4), false))];
            for r in cfg.levels().into_iter().skip(1) {
                convs.push(ModConv::new(pb, &format!("{r}.conv0"), m, conv(ch(r / 2), ch(r), true)));
                convs.push(ModConv::new(pb, &format!("{r}.conv1"), m, conv(ch(r), ch(r), false)));
            }
            let out_spec = ModConvSpec {
                cin: ch(cfg.resolution),
                cout: out_channels,
                kernel: 1,
                upsample: false,
                demodulate: false,
                noise: false,
                act: false,
            };
            let out = ModConv::new(pb, "out", m, out_spec);
            SynthesisPath { mapping, input, convs, out }
        })
    }

    /// Style-modulated convolutions per path.
    pub fn num_convs(&self) -> usize {
        self.depth.convs.len()
    }

    /// Output resolution of each style-modulated convolution.
    pub fn conv_resolutions(&self) -> Vec<usize> {
        let mut out = vec![4];
        for r in self.cfg.levels().into_iter().skip(1) {
            out.extend([r, r]);
        }
        out
    }

    pub fn fusion(&self, level: usize) -> &Fusion {
        &self.fusions[level]
    }

    /// `γ(θ, t)` for each angle: `[B, m]`.
    pub fn encode_angle<T: Real>(&self, b: &Bound<T>, thetas: &[f64]) -> Result<Var<T>> {
        let t = self.cfg.angle_freqs;
        let mut feats = Vec::with_capacity(thetas.len() * 2 * t);
        for &th in thetas {
            feats.extend(angle_features(th, t)?.into_iter().map(T::lit));
        }
        let x = Var::constant(Tensor::new([thetas.len(), 2 * t], feats));
        Ok(self.angle.fc2.forward(b, &self.angle.fc1.forward(b, &x)))
    }

    fn map<T: Real>(&self, path: &SynthesisPath, b: &Bound<T>, z: &Var<T>) -> Result<Var<T>> {
        if z.shape().len() != 2 || z.shape()[1] != self.cfg.latent_dim {
            return Err(invalid(format!("latent must be [B, {}], got {:?}", self.cfg.latent_dim, z.shape())));
        }
        let mut x = pixel_norm(z);
        for layer in &path.mapping {
            x = layer.forward(b, &x);
        }
        Ok(x)
    }

    pub fn map_depth_latent<T: Real>(&self, b: &Bound<T>, z_d: &Var<T>) -> Result<Var<T>> {
        self.map(&self.depth, b, z_d)
    }

    pub fn map_rgb_latent<T: Real>(&self, b: &Bound<T>, z_rgb: &Var<T>) -> Result<Var<T>> {
        self.map(&self.rgb, b, z_rgb)
    }

    pub fn depth_styles<T: Real>(&self, b: &Bound<T>, z_d: &Var<T>, thetas: &[f64]) -> Result<StyleVector<T>> {
        if thetas.len() != z_d.shape()[0] {
            return Err(invalid(format!("{} angles for {} depth codes", thetas.len(), z_d.shape()[0])));
        }
        let w = self.map_depth_latent(b, z_d)?;
        let gamma = self.encode_angle(b, thetas)?;
        let w_prime = inject_angle(&w, &gamma)?;
        Ok(StyleVector { w, w_prime })
    }

    /// Depth synthesis. The first two style-modulated convolutions read `w'`, the rest `w`.
    /// `probe` replaces the third convolution's input when given.
    pub fn synthesize_depth<T: Real>(
        &self,
        b: &Bound<T>,
        style: &StyleVector<T>,
        noise: &[Option<Tensor<T>>],
        probe: Option<&Var<T>>,
    ) -> Result<DepthSynthesis<T>> {
        let batch = style.w.shape()[0];
        let p = &self.depth;
        let c4 = p.convs[0].cin;
        let mut x = b.get(p.input).broadcast_to(&[batch, c4, 4, 4]);
        let mut levels = Vec::new();
        let mut third = None;
        for (i, conv) in p.convs.iter().enumerate() {
            if i == 2 {
                third = Some(x.clone());
                if let Some(replacement) = probe {
                    if replacement.shape() != x.shape() {
                        return Err(invalid(format!("probe {:?} does not match {:?}", replacement.shape(), x.shape())));
                    }
                    x = replacement.clone();
                }
            }
            let s = if i < 2 { &style.w_prime } else { &style.w };
            x = conv.forward(b, &x, s, noise.get(i).and_then(|n| n.as_ref()));
            if i == 0 || i % 2 == 0 {
                levels.push(x.clone());
            }
        }
        let raw = p.out.forward(b, &x, &style.w, None);
        let range = self.cfg.depth_range;
        let depth = raw.sigmoid().mul_scalar(T::lit(range.span())).add_scalar(T::lit(range.near));
        Ok(DepthSynthesis { depth, pyramid: FeaturePyramid { levels }, third_layer_input: third.expect("at least three convs") })
    }

    /// `Φ'_i = f(Ψ_i ⊕ Φ_i)` at pyramid level `level` (0 is 4×4).
    pub fn fuse_features<T: Real>(&self, b: &Bound<T>, level: usize, psi: &Var<T>, phi: &Var<T>) -> Result<Var<T>> {
        let f = self.fusions.get(level).ok_or_else(|| invalid(format!("no fusion at level {level}")))?;
        f.forward(b, psi, phi)
    }

    /// Appearance synthesis conditioned on the depth path's pyramid: `[B, 3, R, R]` in `[-1, 1]`.
    pub fn synthesize_rgb<T: Real>(
        &self,
        b: &Bound<T>,
        w_rgb: &Var<T>,
        pyramid: &FeaturePyramid<T>,
        noise: &[Option<Tensor<T>>],
    ) -> Result<Var<T>> {
        let levels = self.cfg.levels();
        if pyramid.levels.len() != levels.len() {
            return Err(invalid(format!("pyramid has {} levels, expected {}", pyramid.levels.len(), levels.len())));
        }
        let batch = w_rgb.shape()[0];
        let p = &self.rgb;
        let c4 = p.convs[0].cin;
        let mut x = b.get(p.input).broadcast_to(&[batch, c4, 4, 4]);
        let mut level = 0;
        for (i, conv) in p.convs.iter().enumerate() {
            x = conv.forward(b, &x, w_rgb, noise.get(i).and_then(|n| n.as_ref()));
            if i == 0 || i % 2 == 0 {
                x = self.fuse_features(b, level, &pyramid.levels[level], &x)?;
                level += 1;
            }
        }
        Ok(p.out.forward(b, &x, w_rgb, None).tanh())
    }

    /// Depth only: `[B, 1, R, R]` plus the pyramid the appearance path needs.
    pub fn generate_depth<T: Real>(
        &self,
        b: &Bound<T>,
        z_d: &Var<T>,
        thetas: &[f64],
        noise: &GenNoise<T>,
    ) -> Result<DepthSynthesis<T>> {
        let style = self.depth_styles(b, z_d, thetas)?;
        self.synthesize_depth(b, &style, &noise.depth, None)
    }

    pub fn generate<T: Real>(&self, b: &Bound<T>, latents: &Latents, noise: &GenNoise<T>) -> Result<Generated<T>> {
        let z_d = Var::constant(latents.z_d.cast());
        let z_rgb = Var::constant(latents.z_rgb.cast());
        let w_d = self.map_depth_latent(b, &z_d)?;
        let w_rgb = self.map_rgb_latent(b, &z_rgb)?;
        self.generate_from_styles(b, &w_d, &w_rgb, &latents.theta, noise)
    }

    /// Generation from already-mapped codes `w_d` (before angle injection) and `w_rgb`.
    pub fn generate_from_styles<T: Real>(
        &self,
        b: &Bound<T>,
        w_d: &Var<T>,
        w_rgb: &Var<T>,
        thetas: &[f64],
        noise: &GenNoise<T>,
    ) -> Result<Generated<T>> {
        if thetas.len() != w_d.shape()[0] || w_rgb.shape()[0] != w_d.shape()[0] {
            return Err(invalid(format!("{} angles for {} depth and {} appearance codes", thetas.len(), w_d.shape()[0], w_rgb.shape()[0])));
        }
        let gamma = self.encode_angle(b, thetas)?;
        let style = StyleVector { w: w_d.clone(), w_prime: inject_angle(w_d, &gamma)? };
        let d = self.synthesize_depth(b, &style, &noise.depth, None)?;
        let rgb = self.synthesize_rgb(b, w_rgb, &d.pyramid, &noise.rgb)?;
        Ok(Generated { rgb, depth: d.depth })
    }
}
