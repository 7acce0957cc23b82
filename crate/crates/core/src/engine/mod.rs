//! Process-list validation and execution.

mod check;
mod log;
mod plugin;
mod process_list;
mod registry;
mod run;
mod schedule;

use std::path::PathBuf;

use thiserror::Error;

pub use check::{check_plugin_list, Issue, StepPlan, ValidationReport};
pub use log::{check_lifecycle, parse_log, EventLog, LogError, LogEvent, Phase};
pub use plugin::{
    mirror_setup, CreateContainer, Driver, Loader, OutputSpec, Params, Plugin, PluginError, PluginSetup, PluginSpec,
    Saver,
};
pub use process_list::{PluginEntry, ProcessList, IN_DATASETS, OUT_DATASETS};
pub use registry::{Instance, ParamSpec, ParamType, PluginInfo, Registry};
pub use run::{
    execute_plugin, BoundInput, BoundOutput, ChunkPolicy, DatasetTable, LiveDataset, RunOptions, RunOutcome,
};
pub use schedule::{gate_workers, partition_frames};

use crate::scalar::Scalar;
use crate::storage::StorageError;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("process list failed validation:\n{0}")]
    Validation(Box<ValidationReport>),
    #[error("plugin {index} ({name}) failed: {source}")]
    PluginFailure {
        index: usize,
        name: String,
        #[source]
        source: PluginError,
        /// Manifest of the partial run, if one could be written.
        manifest: Option<PathBuf>,
    },
    #[error("accelerator plugin scheduled but no accelerators are available")]
    NoAccelerators,
    #[error("unknown dataset '{0}'")]
    UnknownDataset(String),
    #[error("dataset '{0}' already exists")]
    DuplicateDataset(String),
    #[error("invalid run options: {0}")]
    InvalidOptions(String),
    #[error("process list: {0}")]
    ProcessList(String),
    #[error(transparent)]
    Plugin(#[from] PluginError),
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Runs process lists against a plugin registry.
pub struct Engine<T: Scalar> {
    registry: Registry<T>,
}

impl<T: Scalar> Engine<T> {
    pub fn new(registry: Registry<T>) -> Self {
        Engine { registry }
    }

    pub fn registry(&self) -> &Registry<T> {
        &self.registry
    }

    pub fn registry_mut(&mut self) -> &mut Registry<T> {
        &mut self.registry
    }

    /// Symbolic validation only; see [`check_plugin_list`].
    pub fn check(&self, list: &ProcessList, data_paths: &[PathBuf]) -> ValidationReport {
        check_plugin_list(&self.registry, list, data_paths)
    }
}
