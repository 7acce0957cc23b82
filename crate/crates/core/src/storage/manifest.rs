use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::StorageError;

pub const MANIFEST_FILE: &str = "run_manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PluginKind {
    Loader,
    Saver,
    Processing,
}

/// One dataset container produced (or linked) by a process-list entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputLink {
    pub dataset: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PluginRecord {
    pub index: usize,
    pub name: String,
    pub kind: PluginKind,
    pub params: serde_json::Map<String, serde_json::Value>,
    pub outputs: Vec<OutputLink>,
    pub intermediate: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "lowercase")]
pub enum RunStatus {
    Completed,
    Failed { plugin_index: usize, message: String },
}

/// Links the initial, intermediate and final containers of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub inputs: Vec<PathBuf>,
    pub intermediate_dir: Option<PathBuf>,
    pub plugins: Vec<PluginRecord>,
    pub final_outputs: Vec<OutputLink>,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log: Option<PathBuf>,
}

impl RunManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, StorageError> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Every container path the manifest refers to.
    pub fn container_paths(&self) -> impl Iterator<Item = &Path> {
        self.plugins
            .iter()
            .flat_map(|p| p.outputs.iter())
            .chain(&self.final_outputs)
            .map(|o| o.path.as_path())
    }
}

/// Writes `manifest` as `run_manifest.json` in `dir` after checking that
/// every linked container exists.
pub fn write_manifest(dir: impl AsRef<Path>, manifest: &RunManifest) -> Result<PathBuf, StorageError> {
    if manifest.plugins.is_empty() {
        return Err(StorageError::EmptyManifest);
    }
    if let Some(missing) = manifest.container_paths().find(|p| !p.exists()) {
        return Err(StorageError::MissingFile(missing.to_path_buf()));
    }
    let path = dir.as_ref().join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(manifest)?;
    std::fs::write(&path, text + "\n")?;
    Ok(path)
}
