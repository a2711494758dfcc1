use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rgbd_gan::camera::RgbdImage;
use rgbd_gan::error::{Error, Result};

use crate::checkpoint::save_into;
use crate::step::{train_step, RealBatch, StepReport, TrainState};

/// Line-oriented loss log: `step name value` per line.
pub struct MetricsLog {
    path: PathBuf,
    out: BufWriter<File>,
}

impl MetricsLog {
    /// Appends to `path`.
    pub fn open(path: &Path) -> Result<Self> {
        let f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        Ok(Self { path: path.to_path_buf(), out: BufWriter::new(f) })
    }

    pub fn record(&mut self, r: &StepReport) -> Result<()> {
        for (name, value) in r.entries() {
            writeln!(self.out, "{} {name} {value:e}", r.step).map_err(|source| Error::Io { path: self.path.clone(), source })?;
        }
        self.out.flush().map_err(|source| Error::Io { path: self.path.clone(), source })
    }
}

/// Parses a metrics log into `(step, name, value)` rows.
pub fn read_metrics(path: &Path) -> Result<Vec<(u64, String, f64)>> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let mut it = l.split_whitespace();
            let parsed = (|| Some((it.next()?.parse().ok()?, it.next()?.to_string(), it.next()?.parse().ok()?)))();
            parsed.ok_or_else(|| Error::Format { path: path.to_path_buf(), message: format!("bad metrics line `{l}`") })
        })
        .collect()
}

/// Uniform draw of `batch` images (with replacement) from `data`.
pub fn sample_real(state: &mut TrainState, data: &[RgbdImage]) -> Result<RealBatch> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("no real images to train on".into()));
    }
    let picks: Vec<RgbdImage> = (0..state.train.batch).map(|_| data[state.data_rng.random_range(0..data.len())].clone()).collect();
    let (rgb, depth) = RgbdImage::stack(&picks)?;
    Ok(RealBatch { rgb, depth })
}

#[derive(Clone, Debug, Default)]
pub struct FitOptions {
    /// Train until the state's step counter reaches this.
    pub until_step: u64,
    pub checkpoint_dir: Option<PathBuf>,
    /// 0 saves only at the end.
    pub checkpoint_every: u64,
    pub metrics: Option<PathBuf>,
}

/// Trains from the current step to `opts.until_step`.
pub fn fit(
    state: &mut TrainState,
    data: &[RgbdImage],
    opts: &FitOptions,
    mut on_step: impl FnMut(&StepReport),
) -> Result<Vec<StepReport>> {
    let mut log = opts.metrics.as_deref().map(MetricsLog::open).transpose()?;
    let mut reports = Vec::new();
    while state.step < opts.until_step {
        let real = sample_real(state, data)?;
        let report = train_step(state, &real)?;
        if let Some(log) = log.as_mut() {
            log.record(&report)?;
        }
        on_step(&report);
        reports.push(report);
        if let Some(dir) = &opts.checkpoint_dir {
            if opts.checkpoint_every > 0 && state.step % opts.checkpoint_every == 0 && state.step < opts.until_step {
                save_into(state, dir)?;
            }
        }
    }
    if let Some(dir) = &opts.checkpoint_dir {
        save_into(state, dir)?;
    }
    Ok(reports)
}
