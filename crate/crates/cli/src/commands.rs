use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rgbd_eval::{
    depth_prediction_metrics, embedding_stats, export_pointcloud, frechet_distance, make_embedder, rotation_scores, write_grid, AnglePairs,
    EmbedderKind, GeneratorViews, MetricReport,
};
use rgbd_gan::camera::{DepthMap, RgbdImage};
use rgbd_gan::data::{generate_dataset, load_pair, load_rgb, write_depth_png, write_rgb_png, Dataset, Manifest};
use rgbd_gan::discriminator::SwitchableInput;
use rgbd_gan::error::{Error, Result};
use rgbd_gan::generator::Latents;
use rgbd_tensor::{no_grad, Tensor, Var};
use rgbd_train::{fit, load_checkpoint, resolve_checkpoint, FitOptions, Model, TrainState};

use crate::config::RunConfig;
use crate::run_dir::{self, CHECKPOINT_DIR, METRICS_LOG};
use crate::{Command, Common, Source};

fn config_err(key: &str, message: impl Into<String>) -> Error {
    Error::Config { key: key.into(), message: message.into() }
}

fn flags(common: &Common, extra: Vec<(&str, Option<String>)>) -> Vec<(String, String)> {
    let mut out = common.set.clone();
    out.extend(extra.into_iter().filter_map(|(k, v)| v.map(|v| (k.to_string(), v))));
    out
}

/// Loads a checkpoint and the run configuration it implies.
fn open_checkpoint(common: &Common, extra: Vec<(&str, Option<String>)>, checkpoint: &Path) -> Result<(RunConfig, TrainState, String)> {
    let base = RunConfig::from_file(common.config.as_deref(), &flags(common, extra))?;
    let path = resolve_checkpoint(checkpoint)?;
    let state = load_checkpoint(&path)?;
    let cfg = base.with_configs(&state.model.cfg, &state.train)?;
    Ok((cfg, state, path.display().to_string()))
}

fn start(common: &Common, command: &str, cfg: &RunConfig) -> Result<PathBuf> {
    let dir = run_dir::create(common.run.as_deref(), command, common.force)?;
    run_dir::write_echo(&dir, cfg)?;
    Ok(dir)
}

fn seed_of(source: &Source, cfg: &RunConfig) -> Result<u64> {
    source.seed.map_or_else(|| cfg.parse("metrics.seed"), Ok)
}

fn codes(model: &Model, seed: u64, thetas: Vec<f64>) -> Latents {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Latents::sample(&mut rng, model.cfg.generator.latent_dim, thetas)
}

/// Runs `command` and returns the directory it wrote into.
pub fn dispatch(command: Command) -> Result<PathBuf> {
    match command {
        Command::MakeToyData { common, out, scenes, angles, seed } => {
            let extra = vec![
                ("data.toy_scenes", scenes.map(|v| v.to_string())),
                ("data.toy_angles", angles.map(|v| v.to_string())),
                ("data.toy_seed", seed.map(|v| v.to_string())),
            ];
            let cfg = RunConfig::from_file(common.config.as_deref(), &flags(&common, extra))?;
            let common = Common { run: Some(out), ..common };
            let dir = start(&common, "make-toy-data", &cfg)?;
            let toy = cfg.toy_config()?;
            log::info!("rendering {} scenes x {} angles at {}x{}", toy.n_scenes, toy.angles_per_scene, toy.resolution, toy.resolution);
            let m = generate_dataset(&toy, &dir)?;
            log::info!("wrote {} images", m.records.len());
            Ok(dir)
        }
        Command::Train { common, data, steps, seed, resume } => train(common, data, steps, seed, resume),
        Command::Sample { common, source, n, theta } => {
            let (cfg, state, _) = open_checkpoint(&common, vec![], &source.checkpoint)?;
            let dir = start(&common, "sample", &cfg)?;
            let model = &state.model;
            let seed = seed_of(&source, &cfg)?;
            let g = &model.cfg.generator;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let thetas: Vec<f64> = (0..n)
                .map(|_| theta.map(f64::to_radians).unwrap_or_else(|| rng.random_range(g.theta_min..=g.theta_max)))
                .collect();
            let latents = Latents::sample(&mut rng, g.latent_dim, thetas.clone());
            let out = model.generate(&latents)?;
            let images = RgbdImage::unstack(out.rgb.value(), out.depth.value(), g.depth_range);
            for (i, img) in images.iter().enumerate() {
                write_rgb_png(&img.rgb, &dir.join(format!("sample_{i:03}_rgb.png")))?;
                write_depth_png(&img.depth, &dir.join(format!("sample_{i:03}_depth.png")))?;
            }
            let labels: Vec<String> = thetas.iter().map(|t| format!("{:.2}deg", t.to_degrees())).collect();
            write_grid(&images, &labels, &dir.join("samples.png"))?;
            Ok(dir)
        }
        Command::Sweep { common, source, angles } => {
            let (cfg, state, _) = open_checkpoint(&common, vec![], &source.checkpoint)?;
            let dir = start(&common, "sweep", &cfg)?;
            let seed = seed_of(&source, &cfg)?;
            let c = codes(&state.model, seed, vec![0.0]);
            let radians: Vec<f64> = angles.iter().map(|d| d.to_radians()).collect();
            rgbd_eval::rotation_sweep(&state.model, &c, &radians, &dir.join("sweep.png"))?;
            Ok(dir)
        }
        Command::Interpolate { common, source, which, steps, theta } => {
            let (cfg, state, _) = open_checkpoint(&common, vec![], &source.checkpoint)?;
            let dir = start(&common, "interpolate", &cfg)?;
            let seed = seed_of(&source, &cfg)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = state.model.cfg.generator.latent_dim;
            let a = Latents::sample(&mut rng, m, vec![theta.to_radians()]);
            let b = Latents::sample(&mut rng, m, vec![theta.to_radians()]);
            rgbd_eval::interpolate(&state.model, &a, &b, which, steps, cfg.latent_space()?, &dir.join("interpolation.png"))?;
            Ok(dir)
        }
        Command::Metrics { common, source, data } => {
            let extra = vec![("data.dir", data.map(|d| d.display().to_string()))];
            let (cfg, state, ckpt) = open_checkpoint(&common, extra, &source.checkpoint)?;
            let dir = start(&common, "metrics", &cfg)?;
            let report = metrics(&cfg, &state.model, seed_of(&source, &cfg)?, &ckpt)?;
            report.write(&dir.join("metrics.json"))?;
            println!("{}", report.to_json());
            Ok(dir)
        }
        Command::ExportPointcloud { common, checkpoint, seed, theta, rgb, depth } => {
            let (cfg, image, k) = match (checkpoint, rgb, depth) {
                (Some(ckpt), _, _) => {
                    let (cfg, state, _) = open_checkpoint(&common, vec![], &ckpt)?;
                    let seed = seed.map_or_else(|| cfg.parse("metrics.seed"), Ok)?;
                    let c = codes(&state.model, seed, vec![theta.to_radians()]);
                    let g = state.model.generate(&c)?;
                    let img = RgbdImage::unstack(g.rgb.value(), g.depth.value(), state.model.cfg.generator.depth_range).remove(0);
                    (cfg, img, state.model.k.clone())
                }
                (None, Some(rgb), Some(depth)) => {
                    let cfg = RunConfig::from_file(common.config.as_deref(), &common.set)?;
                    let res: usize = cfg.parse("model.resolution")?;
                    let img = load_pair(&rgb, &depth, res, cfg.range()?)?;
                    let k = cfg.model_config()?.intrinsics()?;
                    (cfg, img, k)
                }
                _ => return Err(config_err("data.dir", "give --checkpoint or both --rgb and --depth")),
            };
            let dir = start(&common, "export-pointcloud", &cfg)?;
            let n = export_pointcloud(&image, &k, &dir.join("pointcloud.ply"))?;
            write_rgb_png(&image.rgb, &dir.join("rgb.png"))?;
            write_depth_png(&image.depth, &dir.join("depth.png"))?;
            log::info!("wrote {n} vertices");
            Ok(dir)
        }
        Command::PredictDepth { common, checkpoint, rgb } => {
            let (cfg, state, _) = open_checkpoint(&common, vec![], &checkpoint)?;
            let dir = start(&common, "predict-depth", &cfg)?;
            predict_depth(&state.model, &rgb, &dir)?;
            Ok(dir)
        }
    }
}

fn train(common: Common, data: Option<PathBuf>, steps: Option<u64>, seed: Option<u64>, resume: Option<PathBuf>) -> Result<PathBuf> {
    let extra = vec![
        ("data.dir", data.map(|d| d.display().to_string())),
        ("train.steps", steps.map(|v| v.to_string())),
        ("train.seed", seed.map(|v| v.to_string())),
    ];
    let (cfg, mut state, dir) = match &resume {
        Some(ckpt) => {
            let path = resolve_checkpoint(ckpt)?;
            let mut state = load_checkpoint(&path)?;
            // The original run's echo supplies what the checkpoint does not record (data.dir).
            let echo = path.parent().and_then(|p| p.parent()).map(|d| d.join(run_dir::CONFIG_ECHO)).filter(|p| p.is_file());
            let base = RunConfig::from_file(common.config.as_deref().or(echo.as_deref()), &flags(&common, vec![]))?;
            let mut cfg = base.with_configs(&state.model.cfg, &state.train)?;
            for (k, v) in flags(&common, extra) {
                cfg.set(&k, v)?;
            }
            state.train.steps = cfg.parse("train.steps")?;
            // Resuming appends to the original run unless told otherwise.
            let dir = match &common.run {
                Some(d) => run_dir::create(Some(d), "train", common.force)?,
                None => path
                    .parent()
                    .and_then(|p| p.parent())
                    .map(Path::to_path_buf)
                    .ok_or_else(|| config_err("train.resume", "cannot locate the run directory of the checkpoint"))?,
            };
            run_dir::write_echo(&dir, &cfg)?;
            log::info!("resuming at step {} from {}", state.step, path.display());
            (cfg, state, dir)
        }
        None => {
            let cfg = RunConfig::from_file(common.config.as_deref(), &flags(&common, extra))?;
            let model = cfg.model_config()?;
            let train = cfg.train_config()?;
            cfg.data_dir()?;
            let dir = start(&common, "train", &cfg)?;
            let state = TrainState::new(model, train)?;
            (cfg, state, dir)
        }
    };
    let data = load_dataset(&cfg)?;
    log::info!("{} training images from {}", data.len(), data.dir.display());
    let until = state.train.steps;
    let every = state.train.checkpoint_every;
    let opts = FitOptions {
        until_step: until,
        checkpoint_dir: Some(dir.join(CHECKPOINT_DIR)),
        checkpoint_every: every,
        metrics: Some(dir.join(METRICS_LOG)),
    };
    let log_every = (until / 20).max(1);
    fit(&mut state, &data.images, &opts, |r| {
        if r.step % log_every == 0 || r.step == until {
            log::info!(
                "step {}/{}: loss_g_depth {:.4} loss_g_rgb {:.4} loss_d {:.4}",
                r.step,
                until,
                r.totals.g_depth,
                r.totals.g_rgb,
                r.totals.d
            );
        }
    })?;
    Ok(dir)
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let dir = cfg.data_dir()?;
    let range = cfg.range()?;
    let manifest = Manifest::open(&dir, range)?;
    let stored = manifest.range()?;
    if stored != range {
        return Err(config_err(
            "camera.near",
            format!("dataset depth range [{}, {}] differs from the configured [{}, {}]", stored.near, stored.far, range.near, range.far),
        ));
    }
    Dataset::from_manifest(&dir, manifest, cfg.parse("model.resolution")?)
}

/// Every metric for `model`, with sample counts and provenance.
pub fn metrics(cfg: &RunConfig, model: &Model, seed: u64, checkpoint: &str) -> Result<MetricReport> {
    let pairs: usize = cfg.parse("metrics.pairs")?;
    let n_fake: usize = cfg.parse("metrics.fake_samples")?;
    let n_real: usize = cfg.parse("metrics.holdout")?;
    let data = load_dataset(cfg)?;
    let real: Vec<RgbdImage> = data.images.into_iter().take(n_real.max(1)).collect();

    let mut report = MetricReport::default();
    let rot = rotation_scores(&mut GeneratorViews::new(model, seed), pairs, seed, AnglePairs::Independent)?;
    report.insert("rp", rot.rp, rot.pairs, seed, checkpoint);
    report.insert("rc", rot.rc, rot.pairs, seed, checkpoint);
    let (dp_real, dp_fake) = depth_prediction_metrics(model, &real, n_fake, seed)?;
    report.insert("dp_real", dp_real, real.len(), seed, checkpoint);
    report.insert("dp_fake", dp_fake, n_fake, seed, checkpoint);

    let kind: EmbedderKind = cfg.parse("metrics.embedder")?;
    let embedder = make_embedder(kind, model.cfg.generator.depth_range);
    let g = &model.cfg.generator;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xf1d);
    let mut fakes = Vec::with_capacity(n_fake);
    while fakes.len() < n_fake {
        let m = 32.min(n_fake - fakes.len());
        let thetas = (0..m).map(|_| rng.random_range(g.theta_min..=g.theta_max)).collect();
        let out = model.generate(&Latents::sample(&mut rng, g.latent_dim, thetas))?;
        fakes.extend(RgbdImage::unstack(out.rgb.value(), out.depth.value(), g.depth_range));
    }
    let fd = frechet_distance(&embedding_stats(&real, embedder.as_ref())?, &embedding_stats(&fakes, embedder.as_ref())?)?;
    report.insert("frechet_distance", fd, real.len().min(fakes.len()), seed, checkpoint);
    Ok(report)
}

/// Writes the argmax depth class map and the matching bin-centre depth.
fn predict_depth(model: &Model, rgb_path: &Path, dir: &Path) -> Result<()> {
    let d = &model.discriminator;
    let res = model.cfg.generator.resolution;
    let rgb = load_rgb(rgb_path, res)?;
    let logits = no_grad(|| {
        let b = model.params.bind(&[]);
        d.predict_depth(&b, &SwitchableInput::rgb(Var::constant(rgb.reshape([1, 3, res, res])))).map(|v| v.value().clone())
    })?;
    let (_, k, h, w) = logits.dims4();
    let range = d.cfg.depth_range;
    let plane = h * w;
    let mut classes = vec![0usize; plane];
    for (p, c) in classes.iter_mut().enumerate() {
        *c = (0..k).max_by(|&a, &b| logits.data()[a * plane + p].total_cmp(&logits.data()[b * plane + p])).expect("k >= 2");
    }
    let depth: Vec<f32> = classes.iter().map(|&c| range.denormalize((c as f64 + 0.5) / k as f64) as f32).collect();
    let map = DepthMap::new(Tensor::new([h, w], depth), range)?;
    write_depth_png(&map, &dir.join("predicted_depth.png"))?;
    let grey = image::GrayImage::from_fn(w as u32, h as u32, |x, y| {
        let c = classes[y as usize * w + x as usize];
        image::Luma([(255.0 * (1.0 - c as f64 / (k - 1) as f64)).round() as u8])
    });
    let path = dir.join("predicted_classes.png");
    grey.save(&path).map_err(|e| Error::Format { path, message: e.to_string() })?;
    log::info!("predicted a {h}x{w} map over {k} depth bins");
    Ok(())
}
