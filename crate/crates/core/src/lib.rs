//! Out-of-core processing of n-dimensional datasets through a chain of
//! plugins. Datasets live in chunked container files and are streamed to
//! plugins frame by frame according to named access patterns.

pub mod chunking;
pub mod engine;
pub mod model;
pub mod plugins;
pub mod scalar;
pub mod storage;

pub use engine::{Engine, EngineError, ProcessList, Registry, RunOptions};
pub use model::{DType, DatasetDescriptor, Pattern};
pub use scalar::Scalar;
pub use storage::Container;

pub type Engine32 = Engine<f32>;
pub type Engine64 = Engine<f64>;
pub type Registry32 = Registry<f32>;
pub type Registry64 = Registry<f64>;
