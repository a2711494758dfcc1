use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rgbd_gan::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricEntry {
    pub value: f64,
    /// Samples behind the value.
    pub n: usize,
    pub seed: u64,
    pub checkpoint: String,
}

/// Metric name to entry; serialises as a JSON object.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MetricReport {
    pub metrics: BTreeMap<String, MetricEntry>,
}

impl MetricReport {
    pub fn insert(&mut self, name: &str, value: f64, n: usize, seed: u64, checkpoint: &str) {
        self.metrics.insert(name.to_string(), MetricEntry { value, n, seed, checkpoint: checkpoint.to_string() });
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).map(|e| e.value)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json() + "\n").map_err(|source| Error::Io { path: path.to_path_buf(), source })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        serde_json::from_str(&text).map_err(|e| Error::Format { path: path.to_path_buf(), message: e.to_string() })
    }
}
