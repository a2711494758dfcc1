//! Binary checkpoints: magic, format version, a JSON manifest, then little-endian f32
//! payloads (parameters, then each optimizer's first and second moments).

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;
use rgbd_gan::error::{Error, Result};
use rgbd_gan::nn::Group;
use rgbd_tensor::{Real, Tensor};
use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, TrainConfig};
use crate::step::TrainState;

const MAGIC: &[u8; 8] = b"RGBDCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// Decimal `u128`.
    pub word_pos: String,
}

impl RngState {
    pub fn of(rng: &ChaCha8Rng) -> Self {
        Self { seed: rng.get_seed(), stream: rng.get_stream(), word_pos: rng.get_word_pos().to_string() }
    }

    pub fn restore(&self) -> std::result::Result<ChaCha8Rng, String> {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse::<u128>().map_err(|e| format!("bad word position: {e}"))?);
        Ok(rng)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub group: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerEntry {
    pub group: String,
    pub steps: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub step: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub params: Vec<ParamEntry>,
    pub optimizers: Vec<OptimizerEntry>,
    pub latent_rng: RngState,
    pub data_rng: RngState,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

fn bad(path: &Path, message: impl Into<String>) -> Error {
    Error::Format { path: path.to_path_buf(), message: message.into() }
}

fn manifest_of(state: &TrainState) -> CheckpointManifest {
    let p = &state.model.params;
    CheckpointManifest {
        step: state.step,
        model: state.model.cfg.clone(),
        train: state.train.clone(),
        params: p
            .ids()
            .map(|id| ParamEntry { name: p.name(id).to_string(), group: p.group(id).key().to_string(), shape: p.get(id).shape().to_vec() })
            .collect(),
        optimizers: state.optimizers.iter().map(|o| OptimizerEntry { group: o.group.key().to_string(), steps: o.steps }).collect(),
        latent_rng: RngState::of(&state.latent_rng),
        data_rng: RngState::of(&state.data_rng),
    }
}

fn tensors(state: &TrainState) -> Vec<&Tensor<f32>> {
    let p = &state.model.params;
    let mut out: Vec<&Tensor<f32>> = p.ids().map(|id| p.get(id)).collect();
    for o in &state.optimizers {
        out.extend(o.m.iter());
        out.extend(o.v.iter());
    }
    out
}

/// Writes atomically (temporary file, then rename).
pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let manifest = serde_json::to_vec(&manifest_of(state)).expect("manifest serializes");
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    buf.extend_from_slice(&manifest);
    for t in tensors(state) {
        for &v in t.data() {
            v.write_le(&mut buf);
        }
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io(dir))?;
    }
    let tmp = path.with_extension("ckpt.tmp");
    let mut f = fs::File::create(&tmp).map_err(io(&tmp))?;
    f.write_all(&buf).map_err(io(&tmp))?;
    f.sync_all().map_err(io(&tmp))?;
    fs::rename(&tmp, path).map_err(io(path))
}

/// Reads the manifest alone.
pub fn read_manifest(path: &Path) -> Result<(CheckpointManifest, Vec<u8>)> {
    let mut bytes = Vec::new();
    fs::File::open(path).map_err(io(path))?.read_to_end(&mut bytes).map_err(io(path))?;
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad(path, "not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(bad(path, format!("checkpoint format version {version}; this build reads version {FORMAT_VERSION}")));
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(20..20 + len).ok_or_else(|| bad(path, "truncated manifest"))?;
    let manifest: CheckpointManifest = serde_json::from_slice(body).map_err(|e| bad(path, format!("corrupt manifest: {e}")))?;
    let payload = bytes.split_off(20 + len);
    Ok((manifest, payload))
}

/// Lines describing how the stored parameter list differs from `expected`.
fn manifest_diff(stored: &[ParamEntry], expected: &[ParamEntry]) -> Vec<String> {
    let mut out = Vec::new();
    for e in expected {
        match stored.iter().find(|s| s.name == e.name) {
            None => out.push(format!("missing {} {:?}", e.name, e.shape)),
            Some(s) if s != e => out.push(format!("{}: stored {} {:?}, expected {} {:?}", e.name, s.group, s.shape, e.group, e.shape)),
            _ => {}
        }
    }
    for s in stored {
        if !expected.iter().any(|e| e.name == s.name) {
            out.push(format!("unexpected {} {:?}", s.name, s.shape));
        }
    }
    if out.is_empty() && stored != expected {
        out.push("parameter order differs".into());
    }
    out
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let (manifest, payload) = read_manifest(path)?;
    let mut state = TrainState::new(manifest.model.clone(), manifest.train.clone())?;
    let expected = manifest_of(&state);
    let diff = manifest_diff(&manifest.params, &expected.params);
    if !diff.is_empty() {
        return Err(bad(path, format!("parameter manifest mismatch:\n  {}", diff.join("\n  "))));
    }
    let groups: Vec<&str> = Group::ALL.iter().map(|g| g.key()).collect();
    let stored: Vec<&str> = manifest.optimizers.iter().map(|o| o.group.as_str()).collect();
    if stored != groups {
        return Err(bad(path, format!("optimizer groups {stored:?}, expected {groups:?}")));
    }

    let total: usize = tensors(&state).iter().map(|t| t.numel()).sum();
    if payload.len() != total * 4 {
        return Err(bad(path, format!("payload has {} bytes, expected {}", payload.len(), total * 4)));
    }
    let mut chunks = payload.chunks_exact(4).map(f32::read_le);
    let mut fill = |t: &mut Tensor<f32>| {
        for v in t.data_mut() {
            *v = chunks.next().expect("length checked");
        }
    };
    let ids: Vec<_> = state.model.params.ids().collect();
    for id in ids {
        fill(state.model.params.get_mut(id));
    }
    for (o, entry) in state.optimizers.iter_mut().zip(&manifest.optimizers) {
        o.steps = entry.steps;
        o.m.iter_mut().for_each(&mut fill);
        o.v.iter_mut().for_each(&mut fill);
    }
    state.step = manifest.step;
    state.latent_rng = manifest.latent_rng.restore().map_err(|e| bad(path, e))?;
    state.data_rng = manifest.data_rng.restore().map_err(|e| bad(path, e))?;
    Ok(state)
}

/// `checkpoints/step_000123.ckpt`.
pub fn checkpoint_path(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("step_{step:06}.ckpt"))
}

pub const LATEST: &str = "latest";

/// Saves into `dir` and points `dir/latest` at it.
pub fn save_into(state: &TrainState, dir: &Path) -> Result<PathBuf> {
    let path = checkpoint_path(dir, state.step);
    save_checkpoint(state, &path)?;
    let name = path.file_name().expect("file name").to_string_lossy().into_owned();
    let latest = dir.join(LATEST);
    fs::write(&latest, format!("{name}\n")).map_err(io(&latest))?;
    Ok(path)
}

/// Accepts a checkpoint file, a checkpoint directory, or a run directory.
pub fn resolve_checkpoint(path: &Path) -> Result<PathBuf> {
    if path.is_file() {
        return Ok(path.to_path_buf());
    }
    for dir in [path.to_path_buf(), path.join("checkpoints")] {
        let latest = dir.join(LATEST);
        if latest.is_file() {
            let name = fs::read_to_string(&latest).map_err(io(&latest))?;
            return Ok(dir.join(name.trim()));
        }
    }
    Err(Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::new(std::io::ErrorKind::NotFound, "no checkpoint file or `latest` pointer"),
    })
}
