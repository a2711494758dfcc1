//! Run directories: one per invocation, never silently overwritten.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rgbd_gan::error::{Error, Result};

use crate::config::RunConfig;

/// Environment variable naming the directory that holds default run directories.
pub const RUN_ROOT_ENV: &str = "RGBDGAN_RUN_ROOT";
pub const CONFIG_ECHO: &str = "config.cfg";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const METRICS_LOG: &str = "metrics.log";

pub fn run_root() -> PathBuf {
    std::env::var_os(RUN_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"))
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

fn is_empty_dir(path: &Path) -> Result<bool> {
    Ok(fs::read_dir(path).map_err(io(path))?.next().is_none())
}

/// Creates the run directory. An explicit directory that already has contents is refused
/// unless `force`, which deletes it first. Without an explicit directory a fresh
/// `<command>-<unix time>` directory is made under [`run_root`].
pub fn create(explicit: Option<&Path>, command: &str, force: bool) -> Result<PathBuf> {
    let dir = match explicit {
        Some(d) => d.to_path_buf(),
        None => {
            let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
            let root = run_root();
            let base = root.join(format!("{command}-{secs}"));
            let mut dir = base.clone();
            let mut n = 1;
            while dir.exists() {
                dir = root.join(format!("{command}-{secs}-{n}"));
                n += 1;
            }
            dir
        }
    };
    if dir.exists() && !is_empty_dir(&dir)? {
        if !force {
            return Err(Error::Io {
                path: dir,
                source: std::io::Error::new(std::io::ErrorKind::AlreadyExists, "run directory is not empty (pass --force to replace it)"),
            });
        }
        log::warn!("--force: removing {}", dir.display());
        fs::remove_dir_all(&dir).map_err(io(&dir))?;
    }
    fs::create_dir_all(&dir).map_err(io(&dir))?;
    Ok(dir)
}

pub fn write_echo(dir: &Path, cfg: &RunConfig) -> Result<PathBuf> {
    let path = dir.join(CONFIG_ECHO);
    fs::write(&path, cfg.echo()).map_err(io(&path))?;
    Ok(path)
}
