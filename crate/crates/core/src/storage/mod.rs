//! Chunked on-disk container and the run manifest.

mod container;
mod grid;
mod header;
mod manifest;

use std::path::PathBuf;

use thiserror::Error;

use crate::model::ModelError;

pub use container::{batch_chunk_count, Container, IoStats, OpenMode};
pub use grid::ChunkGrid;
pub use header::{ContainerHeader, MAGIC, MAX_DIMS, VERSION};
pub use manifest::{write_manifest, OutputLink, PluginKind, PluginRecord, RunManifest, RunStatus, MANIFEST_FILE};

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("chunk shape {chunk:?} invalid for shape {shape:?}")]
    InvalidChunkShape { shape: Vec<usize>, chunk: Vec<usize> },
    #[error("not a container (bad magic)")]
    BadMagic,
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u32),
    #[error("corrupt container header: {0}")]
    CorruptHeader(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("container {0} is open read-only")]
    ReadOnly(PathBuf),
    #[error("manifest has no plugin records")]
    EmptyManifest,
    #[error("manifest links missing file {0}")]
    MissingFile(PathBuf),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest json: {0}")]
    Json(#[from] serde_json::Error),
}
