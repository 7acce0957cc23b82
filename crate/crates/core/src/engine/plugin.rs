use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::chunking::ChunkError;
use crate::model::{DatasetDescriptor, ModelError, PluginDatasetView};
use crate::scalar::Scalar;
use crate::storage::{Container, StorageError};

#[derive(Debug, Error)]
pub enum PluginError {
    #[error("parameter '{name}': {reason}")]
    Param { name: String, reason: String },
    #[error("plugin {plugin} has no parameter '{param}'")]
    UnknownParam { plugin: String, param: String },
    #[error("unknown plugin '{0}'")]
    UnknownPlugin(String),
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("angles mismatch: {0}")]
    AnglesMismatch(String),
    #[error("{0}")]
    Failed(String),
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Chunk(#[from] ChunkError),
}

impl PluginError {
    pub fn param(name: &str, reason: impl Into<String>) -> Self {
        PluginError::Param { name: name.to_string(), reason: reason.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Driver {
    Cpu,
    Accelerator,
}

impl fmt::Display for Driver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Driver::Cpu => "cpu",
            Driver::Accelerator => "accelerator",
        })
    }
}

impl FromStr for Driver {
    type Err = PluginError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cpu" => Ok(Driver::Cpu),
            "accelerator" | "gpu" => Ok(Driver::Accelerator),
            other => Err(PluginError::param("driver", format!("expected cpu or accelerator, got '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PluginSpec {
    pub nr_in_datasets: usize,
    pub nr_out_datasets: usize,
    pub driver: Driver,
}

/// An output dataset declared by `setup`. The engine overwrites the
/// descriptor name with the entry's `out_datasets` name.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputSpec {
    pub descriptor: DatasetDescriptor,
    /// Pattern the process hook writes frames with.
    pub pattern: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PluginSetup {
    /// One view per in-dataset, in `in_datasets` order. The first one drives
    /// frame partitioning.
    pub in_views: Vec<PluginDatasetView>,
    pub outputs: Vec<OutputSpec>,
}

/// Setup that reads every input through `pattern` and declares outputs with
/// the same descriptors (as F32).
pub fn mirror_setup(
    inputs: &[DatasetDescriptor],
    out_names: &[String],
    pattern: &str,
    frames: usize,
) -> Result<PluginSetup, PluginError> {
    let first = inputs
        .first()
        .ok_or_else(|| PluginError::InvalidSpec("plugin needs at least one in_dataset".into()))?;
    let in_views = inputs.iter().map(|d| PluginDatasetView::new(&d.name, pattern, frames)).collect();
    let outputs = out_names
        .iter()
        .map(|name| {
            let mut descriptor = first.clone();
            descriptor.name = name.clone();
            descriptor.dtype = crate::model::DType::F32;
            OutputSpec { descriptor, pattern: pattern.to_string() }
        })
        .collect();
    Ok(PluginSetup { in_views, outputs })
}

/// A processing plugin. One instance serves all workers of a run: `process`
/// takes `&self` and must not depend on call order.
pub trait Plugin<T: Scalar>: Send + Sync {
    fn spec(&self) -> PluginSpec;

    /// Binds views and declares outputs. The default reads each input one
    /// frame at a time through its first pattern and mirrors the first
    /// input's descriptor for every output.
    fn setup(&mut self, inputs: &[DatasetDescriptor], out_names: &[String]) -> Result<PluginSetup, PluginError> {
        let pattern = inputs
            .first()
            .and_then(|d| d.patterns.keys().next().cloned())
            .ok_or_else(|| PluginError::InvalidSpec("first in_dataset has no patterns".into()))?;
        mirror_setup(inputs, out_names, &pattern, 1)
    }

    /// Runs once before processing, after `setup`.
    fn pre_process(&mut self) -> Result<(), PluginError> {
        Ok(())
    }

    /// Maps one batch per in-view (shape `[m, pads..., core...]`) to one
    /// block per output (shape `[m, core...]`).
    fn process(&self, inputs: &[ArrayD<T>]) -> Result<Vec<ArrayD<T>>, PluginError>;

    /// Runs once after every worker finished.
    fn post_process(&mut self) -> Result<(), PluginError> {
        Ok(())
    }
}

/// Creates the container backing a dataset a loader materialises.
pub type CreateContainer<'a> = dyn FnMut(&DatasetDescriptor) -> Result<Container, StorageError> + 'a;

pub trait Loader: Send {
    /// Whether this loader consumes the next data path given to the run.
    fn uses_data_path(&self) -> bool {
        false
    }

    /// Descriptors of the datasets this loader registers. Reads at most
    /// file headers.
    fn describe(&self, data_path: Option<&Path>) -> Result<Vec<DatasetDescriptor>, PluginError>;

    /// Makes each described dataset available, returning the container path
    /// for each descriptor in `describe` order.
    fn load(&self, data_path: Option<&Path>, create: &mut CreateContainer<'_>) -> Result<Vec<PathBuf>, PluginError>;
}

pub trait Saver: Send {
    /// File that holds `dataset` as produced by entry `index`.
    fn container_path(&self, dir: &Path, index: usize, dataset: &str) -> PathBuf;
}

/// Typed access to an entry's parameter map.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Params(Map<String, Value>);

impl Params {
    pub fn new(map: Map<String, Value>) -> Self {
        Params(map)
    }

    pub fn map(&self) -> &Map<String, Value> {
        &self.0
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.0.get(key).filter(|v| !v.is_null())
    }

    fn required(&self, key: &str) -> Result<&Value, PluginError> {
        self.get(key).ok_or_else(|| PluginError::param(key, "missing"))
    }

    pub fn usize(&self, key: &str) -> Result<usize, PluginError> {
        let v = self.required(key)?;
        v.as_u64()
            .map(|n| n as usize)
            .ok_or_else(|| PluginError::param(key, format!("expected a non-negative integer, got {v}")))
    }

    pub fn f64(&self, key: &str) -> Result<f64, PluginError> {
        let v = self.required(key)?;
        v.as_f64().ok_or_else(|| PluginError::param(key, format!("expected a number, got {v}")))
    }

    pub fn opt_f64(&self, key: &str) -> Result<Option<f64>, PluginError> {
        match self.get(key) {
            None => Ok(None),
            Some(_) => self.f64(key).map(Some),
        }
    }

    pub fn bool(&self, key: &str) -> Result<bool, PluginError> {
        let v = self.required(key)?;
        v.as_bool().ok_or_else(|| PluginError::param(key, format!("expected true or false, got {v}")))
    }

    pub fn string(&self, key: &str) -> Result<String, PluginError> {
        match self.required(key)? {
            Value::String(s) => Ok(s.clone()),
            v => Err(PluginError::param(key, format!("expected a string, got {v}"))),
        }
    }

    pub fn strings(&self, key: &str) -> Result<Vec<String>, PluginError> {
        match self.get(key) {
            None => Ok(Vec::new()),
            Some(Value::String(s)) => Ok(vec![s.clone()]),
            Some(Value::Array(items)) => items
                .iter()
                .map(|i| {
                    i.as_str()
                        .map(str::to_string)
                        .ok_or_else(|| PluginError::param(key, format!("expected strings, got {i}")))
                })
                .collect(),
            Some(v) => Err(PluginError::param(key, format!("expected a list of strings, got {v}"))),
        }
    }

    /// Deserialises a structured parameter.
    pub fn parse<D: serde::de::DeserializeOwned>(&self, key: &str) -> Result<D, PluginError> {
        let v = self.required(key)?;
        serde_json::from_value(v.clone()).map_err(|e| PluginError::param(key, e.to_string()))
    }
}
