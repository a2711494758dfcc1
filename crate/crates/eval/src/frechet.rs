//! Fréchet distance between Gaussian fits of image embeddings, with pluggable embedders.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rgbd_gan::camera::{DepthRange, RgbdImage};
use rgbd_gan::error::{invalid, Error, Result};
use rgbd_tensor::{no_grad, ConvGeom, Tensor, Var};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

const SYM_TOL: f64 = 1e-9;
/// Eigenvalues above `-EIG_TOL · max|λ|` are rounding noise and clamp to zero silently.
const EIG_TOL: f64 = 1e-8;

impl GaussianStats {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(invalid(format!("mean has {d} entries but covariance is {}x{}", cov.nrows(), cov.ncols())));
        }
        let scale = cov.amax().max(1.0);
        if (&cov - cov.transpose()).amax() > SYM_TOL * scale {
            return Err(invalid("covariance is not symmetric"));
        }
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Sample mean and covariance (denominator n−1) of the rows of `x`.
    pub fn from_samples(x: &DMatrix<f64>) -> Result<Self> {
        let n = x.nrows();
        if n < 2 {
            return Err(invalid(format!("need at least 2 samples for a covariance, got {n}")));
        }
        let mean = x.row_mean().transpose();
        let mut centered = x.clone();
        for mut row in centered.row_iter_mut() {
            row -= mean.transpose();
        }
        let mut cov = centered.transpose() * &centered / (n - 1) as f64;
        cov = (&cov + cov.transpose()) * 0.5;
        Self::new(mean, cov)
    }
}

fn eigen(m: DMatrix<f64>, what: &str) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    SymmetricEigen::try_new(m, 1e-14, 10_000).ok_or_else(|| Error::Numeric(format!("eigen-decomposition of {what} did not converge")))
}

fn clamp_eigs(values: &DVector<f64>, what: &str) -> DVector<f64> {
    let scale = values.amax().max(f64::MIN_POSITIVE);
    values.map(|l| {
        if l < -EIG_TOL * scale {
            log::warn!("{what} has eigenvalue {l:e}; clamped to 0");
        }
        l.max(0.0)
    })
}

/// PSD square root through the eigendecomposition.
fn sqrtm_psd(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let e = eigen(m.clone(), what)?;
    let s = clamp_eigs(&e.eigenvalues, what).map(f64::sqrt);
    Ok(&e.eigenvectors * DMatrix::from_diagonal(&s) * e.eigenvectors.transpose())
}

/// `‖μa−μb‖² + tr(Σa + Σb − 2(ΣaΣb)^½)`.
///
/// `tr((ΣaΣb)^½)` is computed as `tr((Σa^½ Σb Σa^½)^½)`, which has the same spectrum and
/// is symmetric.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(invalid(format!("dimension mismatch: {} vs {}", a.dim(), b.dim())));
    }
    let diff = &a.mean - &b.mean;
    let sa = sqrtm_psd(&a.cov, "first covariance")?;
    let mut m = &sa * &b.cov * &sa;
    m = (&m + m.transpose()) * 0.5;
    let e = eigen(m, "covariance product")?;
    let tr_sqrt: f64 = clamp_eigs(&e.eigenvalues, "covariance product").iter().map(|l| l.sqrt()).sum();
    let d = diff.norm_squared() + a.cov.trace() + b.cov.trace() - 2.0 * tr_sqrt;
    if !d.is_finite() {
        return Err(Error::Numeric("Fréchet distance is not finite".into()));
    }
    Ok(d.max(0.0))
}

/// Maps an RGBD image to a fixed-length feature vector.
pub trait Embedder {
    fn dim(&self) -> usize;
    fn embed(&self, image: &RgbdImage) -> Result<Vec<f64>>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbedderKind {
    IdentityDownsample,
    RandomConv,
}

impl std::str::FromStr for EmbedderKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "identity-downsample" => Ok(Self::IdentityDownsample),
            "random-conv" => Ok(Self::RandomConv),
            _ => Err(format!("unknown embedder `{s}` (identity-downsample, random-conv)")),
        }
    }
}

/// Default seed of the random convolutional embedder.
pub const EMBEDDER_SEED: u64 = 0x5eed;

pub fn make_embedder(kind: EmbedderKind, range: DepthRange) -> Box<dyn Embedder> {
    match kind {
        EmbedderKind::IdentityDownsample => Box::new(IdentityDownsample { size: 8, range }),
        EmbedderKind::RandomConv => Box::new(RandomConvEmbedder::new(EMBEDDER_SEED, range)),
    }
}

/// RGB plus normalised depth as a `[1, 4, H, W]` tensor.
fn packed(image: &RgbdImage, range: DepthRange) -> Tensor<f64> {
    let (h, w) = (image.height(), image.width());
    let mut data: Vec<f64> = image.rgb.data().iter().map(|&v| v as f64).collect();
    data.extend(image.depth.values.data().iter().map(|&d| range.normalize(d as f64)));
    Tensor::new(vec![1, 4, h, w], data)
}

/// Area-averaged 4-channel thumbnail, flattened.
#[derive(Clone, Debug)]
pub struct IdentityDownsample {
    pub size: usize,
    pub range: DepthRange,
}

impl Embedder for IdentityDownsample {
    fn dim(&self) -> usize {
        4 * self.size * self.size
    }

    fn embed(&self, image: &RgbdImage) -> Result<Vec<f64>> {
        let (h, w) = (image.height(), image.width());
        if h % self.size != 0 || w % self.size != 0 {
            return Err(invalid(format!("{h}x{w} image is not a multiple of the {} thumbnail", self.size)));
        }
        let x = packed(image, self.range);
        let (fy, fx) = (h / self.size, w / self.size);
        let mut out = vec![0.0; self.dim()];
        for c in 0..4 {
            for y in 0..h {
                for xx in 0..w {
                    out[(c * self.size + y / fy) * self.size + xx / fx] += x.data()[(c * h + y) * w + xx];
                }
            }
        }
        let inv = 1.0 / (fy * fx) as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        Ok(out)
    }
}

/// Two random 3×3 conv layers with leaky ReLU and pooling, then per-channel mean and
/// standard deviation. Weights are fixed by the seed.
#[derive(Clone, Debug)]
pub struct RandomConvEmbedder {
    w1: Tensor<f64>,
    w2: Tensor<f64>,
    range: DepthRange,
}

const C1: usize = 16;
const C2: usize = 32;

impl RandomConvEmbedder {
    pub fn new(seed: u64, range: DepthRange) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |shape: [usize; 4]| {
            let std = (2.0 / (shape[1] * 9) as f64).sqrt();
            Tensor::from_fn(shape.to_vec(), |_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                std * z
            })
        };
        let w1 = draw([C1, 4, 3, 3]);
        let w2 = draw([C2, C1, 3, 3]);
        Self { w1, w2, range }
    }
}

impl Embedder for RandomConvEmbedder {
    fn dim(&self) -> usize {
        2 * C2
    }

    fn embed(&self, image: &RgbdImage) -> Result<Vec<f64>> {
        let geom = ConvGeom { stride: 1, pad: 1 };
        let y = no_grad(|| {
            let x = Var::constant(packed(image, self.range));
            let h = x.conv2d(&Var::constant(self.w1.clone()), geom).leaky_relu(0.2);
            let h = if h.value().shape()[2] % 2 == 0 { h.avg_pool2x() } else { h };
            let h = h.conv2d(&Var::constant(self.w2.clone()), geom).leaky_relu(0.2);
            h.value().clone()
        });
        let (_, c, hh, ww) = y.dims4();
        let n = (hh * ww) as f64;
        let mut out = Vec::with_capacity(2 * c);
        for ch in y.data().chunks(hh * ww) {
            let m = ch.iter().sum::<f64>() / n;
            out.push(m);
            out.push((ch.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt());
        }
        Ok(out)
    }
}

/// Gaussian fit of the embeddings of `images`.
pub fn embedding_stats(images: &[RgbdImage], embedder: &dyn Embedder) -> Result<GaussianStats> {
    if images.len() < 2 {
        return Err(invalid(format!("need at least 2 images for embedding statistics, got {}", images.len())));
    }
    let d = embedder.dim();
    let mut x = DMatrix::zeros(images.len(), d);
    for (i, img) in images.iter().enumerate() {
        let e = embedder.embed(img)?;
        if e.len() != d {
            return Err(invalid(format!("embedder returned {} features, declared {d}", e.len())));
        }
        x.row_mut(i).copy_from_slice(&e);
    }
    GaussianStats::from_samples(&x)
}
