//! Rotation sweeps, latent interpolation strips, and point-cloud export.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use image::{imageops, RgbImage};
use rgbd_gan::camera::{unproject, CameraIntrinsics, RgbdImage};
use rgbd_gan::data::{depth_to_image, rgb_to_image};
use rgbd_gan::error::{invalid, Error, Result};
use rgbd_gan::generator::{GenNoise, Latents};
use rgbd_tensor::{no_grad, Tensor, Var};
use rgbd_train::Model;
use serde::{Deserialize, Serialize};

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

/// Columns of images, RGB over depth.
pub fn compose_grid(images: &[RgbdImage]) -> RgbImage {
    let (h, w) = (images[0].height() as u32, images[0].width() as u32);
    let mut grid = RgbImage::new(w * images.len() as u32, 2 * h);
    for (i, img) in images.iter().enumerate() {
        let x = i as i64 * w as i64;
        imageops::replace(&mut grid, &rgb_to_image(&img.rgb), x, 0);
        imageops::replace(&mut grid, &depth_to_image(&img.depth), x, h as i64);
    }
    grid
}

/// Writes the grid PNG plus a `.txt` sidecar with one label per column.
pub fn write_grid(images: &[RgbdImage], labels: &[String], path: &Path) -> Result<()> {
    if images.is_empty() {
        return Err(invalid("nothing to draw"));
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io(dir))?;
    }
    compose_grid(images).save(path).map_err(|e| Error::Format { path: path.to_path_buf(), message: e.to_string() })?;
    let side = path.with_extension("txt");
    let mut text = String::from("column label\n");
    for (i, l) in labels.iter().enumerate() {
        writeln!(text, "{i} {l}").expect("string write");
    }
    fs::write(&side, text).map_err(io(&side))
}

fn single(latents: &Latents) -> Result<()> {
    if latents.batch() != 1 {
        return Err(invalid(format!("expected one latent pair, got {}", latents.batch())));
    }
    Ok(())
}

/// Renders the scene of `codes` at each angle and writes a one-column-per-angle grid.
pub fn rotation_sweep(model: &Model, codes: &Latents, angles: &[f64], path: &Path) -> Result<Vec<RgbdImage>> {
    single(codes)?;
    if angles.is_empty() {
        return Err(invalid("no angles to sweep"));
    }
    let (lo, hi) = (model.cfg.generator.theta_min, model.cfg.generator.theta_max);
    let outside: Vec<String> = angles.iter().filter(|&&t| t < lo || t > hi).map(|t| format!("{:.2}°", t.to_degrees())).collect();
    if !outside.is_empty() {
        log::warn!(
            "extrapolating outside the trained range [{:.2}°, {:.2}°]: {}",
            lo.to_degrees(),
            hi.to_degrees(),
            outside.join(", ")
        );
    }
    let n = angles.len();
    let batch = Latents {
        z_d: codes.z_d.broadcast_to(&[n, codes.z_d.shape()[1]]),
        z_rgb: codes.z_rgb.broadcast_to(&[n, codes.z_rgb.shape()[1]]),
        theta: angles.to_vec(),
    };
    let g = model.generate(&batch)?;
    let images = RgbdImage::unstack(g.rgb.value(), g.depth.value(), model.cfg.generator.depth_range);
    let labels: Vec<String> = angles.iter().map(|t| format!("{:.2}deg", t.to_degrees())).collect();
    write_grid(&images, &labels, path)?;
    Ok(images)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolated {
    Depth,
    Appearance,
}

impl std::str::FromStr for Interpolated {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "depth" => Ok(Self::Depth),
            "appearance" => Ok(Self::Appearance),
            _ => Err(format!("unknown code `{s}` (depth, appearance)")),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatentSpace {
    #[default]
    Z,
    /// After the mapping network.
    W,
}

fn lerp(a: &Tensor<f32>, b: &Tensor<f32>, steps: usize) -> Tensor<f32> {
    let m = a.numel();
    let mut out = Vec::with_capacity(steps * m);
    for s in 0..steps {
        let t = s as f32 / (steps - 1) as f32;
        out.extend(a.data().iter().zip(b.data()).map(|(&x, &y)| x * (1.0 - t) + y * t));
    }
    Tensor::new(vec![steps, m], out)
}

/// Linearly interpolates one code from `a` to `b`; the other code and the angle stay at `a`'s.
pub fn interpolate(
    model: &Model,
    a: &Latents,
    b: &Latents,
    which: Interpolated,
    steps: usize,
    space: LatentSpace,
    path: &Path,
) -> Result<Vec<RgbdImage>> {
    single(a)?;
    single(b)?;
    if steps < 2 {
        return Err(invalid(format!("interpolation needs at least 2 steps, got {steps}")));
    }
    let m = a.z_d.shape()[1];
    let theta = vec![a.theta[0]; steps];
    let fixed = |t: &Tensor<f32>| t.broadcast_to(&[steps, m]);
    let g = match space {
        LatentSpace::Z => {
            let (z_d, z_rgb) = match which {
                Interpolated::Depth => (lerp(&a.z_d, &b.z_d, steps), fixed(&a.z_rgb)),
                Interpolated::Appearance => (fixed(&a.z_d), lerp(&a.z_rgb, &b.z_rgb, steps)),
            };
            model.generate(&Latents { z_d, z_rgb, theta })?
        }
        LatentSpace::W => no_grad(|| {
            let bound = model.params.bind(&[]);
            let gen = &model.generator;
            let map_d = |z: &Tensor<f32>| gen.map_depth_latent(&bound, &Var::constant(z.clone())).map(|v| v.value().clone());
            let map_rgb = |z: &Tensor<f32>| gen.map_rgb_latent(&bound, &Var::constant(z.clone())).map(|v| v.value().clone());
            let (w_d, w_rgb) = match which {
                Interpolated::Depth => (lerp(&map_d(&a.z_d)?, &map_d(&b.z_d)?, steps), fixed(&map_rgb(&a.z_rgb)?)),
                Interpolated::Appearance => (fixed(&map_d(&a.z_d)?), lerp(&map_rgb(&a.z_rgb)?, &map_rgb(&b.z_rgb)?, steps)),
            };
            gen.generate_from_styles(&bound, &Var::constant(w_d), &Var::constant(w_rgb), &theta, &GenNoise::zeros(gen))
        })?,
    };
    let images = RgbdImage::unstack(g.rgb.value(), g.depth.value(), model.cfg.generator.depth_range);
    let labels: Vec<String> = (0..steps).map(|s| format!("t={:.3}", s as f64 / (steps - 1) as f64)).collect();
    write_grid(&images, &labels, path)?;
    Ok(images)
}

/// ASCII PLY with one coloured vertex per pixel, row-major.
pub fn export_pointcloud(rgbd: &RgbdImage, k: &CameraIntrinsics, path: &Path) -> Result<usize> {
    let points = unproject(&rgbd.depth, k)?;
    let (h, w) = (rgbd.height(), rgbd.width());
    let rgb = rgbd.rgb.data();
    let mut out = String::with_capacity(points.len() * 48);
    out.push_str("ply\nformat ascii 1.0\n");
    writeln!(out, "element vertex {}", points.len()).expect("string write");
    out.push_str("property float x\nproperty float y\nproperty float z\n");
    out.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n");
    for (i, p) in points.iter().enumerate() {
        let byte = |c: usize| (((rgb[c * h * w + i] + 1.0) * 0.5).clamp(0.0, 1.0) * 255.0).round() as u8;
        writeln!(out, "{} {} {} {} {} {}", p[0], p[1], p[2], byte(0), byte(1), byte(2)).expect("string write");
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io(dir))?;
    }
    fs::write(path, out).map_err(io(path))?;
    Ok(points.len())
}
