//! On-disk RGBD datasets: 8-bit RGB PNGs, 16-bit depth PNGs and a JSON manifest
//! holding the depth encoding bounds and camera.

use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};
use image::{ImageBuffer, Luma, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rgbd_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::camera::{intrinsics_from_focal, CameraIntrinsics, DepthMap, DepthRange, RgbdImage};
use crate::error::{format_err, invalid, io_err, Result};
use crate::toy::{render_scene, scene_seed, SceneSpec};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    /// Relative to the dataset directory.
    pub rgb: String,
    pub depth: String,
    /// Render angle in radians (toy data only).
    pub theta: Option<f64>,
    pub scene_seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    /// Depth PNG code `c` decodes to `near + c / 65535 · (far - near)`.
    pub near: f64,
    pub far: f64,
    pub width: usize,
    pub height: usize,
    pub intrinsics: Option<CameraIntrinsics>,
    pub seed: Option<u64>,
    pub records: Vec<DatasetRecord>,
}

impl Manifest {
    pub fn range(&self) -> Result<DepthRange> {
        DepthRange::new(self.near, self.far)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| format_err(&path, e.to_string()))?;
        if m.version != MANIFEST_VERSION {
            return Err(format_err(&path, format!("manifest version {} (expected {MANIFEST_VERSION})", m.version)));
        }
        Ok(m)
    }

    /// Builds a manifest for an external folder holding `rgb/NAME.png` and `depth/NAME.png`
    /// pairs, with depth codes spread over `range`.
    pub fn scan(dir: &Path, range: DepthRange) -> Result<Self> {
        let rgb_dir = dir.join("rgb");
        let mut names: Vec<String> = fs::read_dir(&rgb_dir)
            .map_err(io_err(&rgb_dir))?
            .filter_map(|e| e.ok())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| n.to_ascii_lowercase().ends_with(".png"))
            .collect();
        names.sort();
        if names.is_empty() {
            return Err(format_err(&rgb_dir, "no PNG files"));
        }
        let records: Vec<DatasetRecord> = names
            .iter()
            .map(|n| DatasetRecord { rgb: format!("rgb/{n}"), depth: format!("depth/{n}"), theta: None, scene_seed: None })
            .collect();
        for r in &records {
            let d = dir.join(&r.depth);
            if !d.is_file() {
                return Err(io_err(&d)(std::io::Error::new(std::io::ErrorKind::NotFound, "depth file missing for RGB image")));
            }
        }
        let first = dir.join(&records[0].rgb);
        let (width, height) = image::image_dimensions(&first).map_err(|e| format_err(&first, e.to_string()))?;
        Ok(Self {
            version: MANIFEST_VERSION,
            near: range.near,
            far: range.far,
            width: width as usize,
            height: height as usize,
            intrinsics: None,
            seed: None,
            records,
        })
    }

    /// The folder's manifest if it has one, else [`Manifest::scan`].
    pub fn open(dir: &Path, range: DepthRange) -> Result<Self> {
        if dir.join(MANIFEST_FILE).is_file() {
            Self::read(dir)
        } else {
            Self::scan(dir, range)
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(&path, text).map_err(io_err(&path))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyDataConfig {
    pub n_scenes: usize,
    pub angles_per_scene: usize,
    pub resolution: usize,
    /// Radians.
    pub theta_min: f64,
    pub theta_max: f64,
    pub focal_mm: f64,
    pub sensor_width_mm: f64,
    pub range: DepthRange,
    pub seed: u64,
}

/// Renders `n_scenes` random rooms at `angles_per_scene` uniform angles each and writes
/// them with a manifest. Deterministic in `cfg.seed`.
pub fn generate_dataset(cfg: &ToyDataConfig, out_dir: &Path) -> Result<Manifest> {
    if cfg.n_scenes == 0 || cfg.angles_per_scene == 0 {
        return Err(invalid("dataset needs at least one scene and one angle"));
    }
    if !(cfg.theta_min <= cfg.theta_max) {
        return Err(invalid("dataset angle range needs theta_min <= theta_max"));
    }
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let k = intrinsics_from_focal(cfg.focal_mm, cfg.sensor_width_mm, cfg.resolution, cfg.resolution)?;
    let mut records = Vec::with_capacity(cfg.n_scenes * cfg.angles_per_scene);
    for i in 0..cfg.n_scenes {
        let seed = scene_seed(cfg.seed, i);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = SceneSpec::random(&mut rng);
        for j in 0..cfg.angles_per_scene {
            let theta = if cfg.theta_min == cfg.theta_max {
                cfg.theta_min
            } else {
                rng.random_range(cfg.theta_min..=cfg.theta_max)
            };
            let image = render_scene(&spec, theta, &k, cfg.range)?;
            let rec = DatasetRecord {
                rgb: format!("rgb_{i:05}_{j:02}.png"),
                depth: format!("depth_{i:05}_{j:02}.png"),
                theta: Some(theta),
                scene_seed: Some(seed),
            };
            write_rgb_png(&image.rgb, &out_dir.join(&rec.rgb))?;
            write_depth_png(&image.depth, &out_dir.join(&rec.depth))?;
            records.push(rec);
        }
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        near: cfg.range.near,
        far: cfg.range.far,
        width: cfg.resolution,
        height: cfg.resolution,
        intrinsics: Some(k),
        seed: Some(cfg.seed),
        records,
    };
    manifest.write(out_dir)?;
    Ok(manifest)
}

/// `[-1, 1]` RGB `[3, H, W]` to 8-bit.
pub fn rgb_to_image(rgb: &Tensor<f32>) -> RgbImage {
    let (h, w) = (rgb.shape()[1], rgb.shape()[2]);
    let d = rgb.data();
    ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let at = |c: usize| {
            let v = d[(c * h + y as usize) * w + x as usize];
            (((v + 1.0) * 0.5).clamp(0.0, 1.0) * 255.0).round() as u8
        };
        Rgb([at(0), at(1), at(2)])
    })
}

/// Depth to 8-bit grey, near bright and far dark.
pub fn depth_to_image(depth: &DepthMap) -> RgbImage {
    ImageBuffer::from_fn(depth.width() as u32, depth.height() as u32, |x, y| {
        let t = depth.range.normalize(depth.get(x as usize, y as usize) as f64).clamp(0.0, 1.0);
        let g = ((1.0 - t) * 255.0).round() as u8;
        Rgb([g, g, g])
    })
}

pub fn write_rgb_png(rgb: &Tensor<f32>, path: &Path) -> Result<()> {
    rgb_to_image(rgb).save(path).map_err(|e| format_err(path, e.to_string()))
}

/// 16-bit PNG, codes spread uniformly over `[near, far]`.
pub fn write_depth_png(depth: &DepthMap, path: &Path) -> Result<()> {
    let img: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(depth.width() as u32, depth.height() as u32, |x, y| {
        let t = depth.range.normalize(depth.get(x as usize, y as usize) as f64).clamp(0.0, 1.0);
        Luma([(t * 65535.0).round() as u16])
    });
    img.save(path).map_err(|e| format_err(path, e.to_string()))
}

fn open(path: &Path) -> Result<image::DynamicImage> {
    if !path.exists() {
        return Err(io_err(path)(std::io::Error::new(std::io::ErrorKind::NotFound, "file not found")));
    }
    image::open(path).map_err(|e| format_err(path, e.to_string()))
}

/// Largest centred square.
fn crop_box(w: u32, h: u32) -> (u32, u32, u32) {
    let s = w.min(h);
    ((w - s) / 2, (h - s) / 2, s)
}

fn square_rgb(rgb: &RgbImage, resolution: usize) -> Tensor<f32> {
    let (x0, y0, s) = crop_box(rgb.width(), rgb.height());
    let r = resolution as u32;
    let rgb = imageops::crop_imm(rgb, x0, y0, s, s).to_image();
    let rgb = if s == r { rgb } else { imageops::resize(&rgb, r, r, FilterType::Triangle) };
    let n = resolution * resolution;
    let mut out = vec![0.0f32; 3 * n];
    for (x, y, p) in rgb.enumerate_pixels() {
        for c in 0..3 {
            out[c * n + y as usize * resolution + x as usize] = p[c] as f32 / 127.5 - 1.0;
        }
    }
    Tensor::new([3, resolution, resolution], out)
}

/// One RGB image, centre-cropped, resized and mapped to `[-1, 1]`: `[3, R, R]`.
pub fn load_rgb(path: &Path, resolution: usize) -> Result<Tensor<f32>> {
    Ok(square_rgb(&open(path)?.to_rgb8(), resolution))
}

/// Loads one RGB/depth pair, centre-cropped to a square and resized to `resolution`.
pub fn load_pair(rgb_path: &Path, depth_path: &Path, resolution: usize, range: DepthRange) -> Result<RgbdImage> {
    let rgb = open(rgb_path)?.to_rgb8();
    let depth = open(depth_path)?.to_luma16();
    if rgb.dimensions() != depth.dimensions() {
        return Err(format_err(
            depth_path,
            format!("depth is {:?} but {} is {:?}", depth.dimensions(), rgb_path.display(), rgb.dimensions()),
        ));
    }
    let (x0, y0, s) = crop_box(depth.width(), depth.height());
    let r = resolution as u32;
    // Resampled as normalised codes: the image crate clamps float pixels to [0, 1].
    let depth: ImageBuffer<Luma<f32>, Vec<f32>> = ImageBuffer::from_fn(s, s, |x, y| {
        Luma([(depth.get_pixel(x0 + x, y0 + y)[0] as f64 / 65535.0) as f32])
    });
    let depth = if s == r { depth } else { imageops::resize(&depth, r, r, FilterType::Triangle) };
    let depth_t: Vec<f32> =
        depth.pixels().map(|p| (range.denormalize(p[0] as f64) as f32).clamp(range.near as f32, range.far as f32)).collect();
    RgbdImage::new(square_rgb(&rgb, resolution), DepthMap::new(Tensor::new([resolution, resolution], depth_t), range)?)
}

/// Loads `records` from `dir`.
pub fn load_batch(dir: &Path, records: &[DatasetRecord], resolution: usize, range: DepthRange) -> Result<Vec<RgbdImage>> {
    records.iter().map(|r| load_pair(&dir.join(&r.rgb), &dir.join(&r.depth), resolution, range)).collect()
}

/// A whole dataset directory held in memory.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub images: Vec<RgbdImage>,
}

impl Dataset {
    pub fn load(dir: &Path, resolution: usize) -> Result<Self> {
        Self::from_manifest(dir, Manifest::read(dir)?, resolution)
    }

    pub fn from_manifest(dir: &Path, manifest: Manifest, resolution: usize) -> Result<Self> {
        let images = load_batch(dir, &manifest.records, resolution, manifest.range()?)?;
        if images.is_empty() {
            return Err(format_err(dir.join(MANIFEST_FILE), "manifest lists no records"));
        }
        Ok(Self { dir: dir.to_path_buf(), manifest, images })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Splits off the last `n` images as a held-out set.
    pub fn split_holdout(mut self, n: usize) -> Result<(Self, Vec<RgbdImage>)> {
        if n >= self.images.len() {
            return Err(invalid(format!("cannot hold out {n} of {} images", self.images.len())));
        }
        let held = self.images.split_off(self.images.len() - n);
        Ok((self, held))
    }
}
