//! Dataset vocabulary: dtypes, access patterns, frame indexing and the
//! per-dimension role classification used by the chunk optimizer.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("pattern '{pattern}': dimension {dim} listed more than once")]
    OverlappingDims { pattern: String, dim: usize },
    #[error("pattern '{pattern}': dimensions {missing:?} are neither core nor slice")]
    MissingDims { pattern: String, missing: Vec<usize> },
    #[error("pattern '{pattern}': dimension {dim} out of range for {ndims} dimensions")]
    DimOutOfRange { pattern: String, dim: usize, ndims: usize },
    #[error("dataset '{dataset}' has no pattern '{pattern}'")]
    UnknownPattern { dataset: String, pattern: String },
    #[error("frame ordinal {ordinal} out of range (frame count {count})")]
    OrdinalOutOfRange { ordinal: usize, count: usize },
    #[error("patterns span {0} and {1} dimensions")]
    NdimsMismatch(usize, usize),
    #[error("invalid dataset descriptor: {0}")]
    InvalidDescriptor(String),
    #[error("unknown dtype code {0}")]
    UnknownDType(u8),
}

/// On-disk element type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    U16,
    F32,
    F64,
}

impl DType {
    pub const fn byte_size(self) -> usize {
        match self {
            DType::U16 => 2,
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }

    /// Code written into container headers.
    pub const fn code(self) -> u8 {
        match self {
            DType::U16 => 0,
            DType::F32 => 1,
            DType::F64 => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self, ModelError> {
        match code {
            0 => Ok(DType::U16),
            1 => Ok(DType::F32),
            2 => Ok(DType::F64),
            other => Err(ModelError::UnknownDType(other)),
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DType::U16 => "u16",
            DType::F32 => "f32",
            DType::F64 => "f64",
        })
    }
}

impl std::str::FromStr for DType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "u16" => Ok(DType::U16),
            "f32" => Ok(DType::F32),
            "f64" => Ok(DType::F64),
            other => Err(format!("unknown dtype '{other}'")),
        }
    }
}

/// A named split of a dataset's dimensions into core dimensions (delivered
/// whole) and slice dimensions (iterated, first entry fastest).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Pattern {
    pub name: String,
    pub core_dims: Vec<usize>,
    pub slice_dims: Vec<usize>,
}

impl Pattern {
    pub fn new(name: impl Into<String>, core_dims: &[usize], slice_dims: &[usize]) -> Self {
        Pattern {
            name: name.into(),
            core_dims: core_dims.to_vec(),
            slice_dims: slice_dims.to_vec(),
        }
    }

    /// Number of dimensions this pattern spans.
    pub fn ndims(&self) -> usize {
        self.core_dims.len() + self.slice_dims.len()
    }

    pub fn validate(&self, ndims: usize) -> Result<(), ModelError> {
        let mut seen = vec![false; ndims];
        for &dim in self.core_dims.iter().chain(&self.slice_dims) {
            if dim >= ndims {
                return Err(ModelError::DimOutOfRange {
                    pattern: self.name.clone(),
                    dim,
                    ndims,
                });
            }
            if std::mem::replace(&mut seen[dim], true) {
                return Err(ModelError::OverlappingDims {
                    pattern: self.name.clone(),
                    dim,
                });
            }
        }
        let missing: Vec<usize> = (0..ndims).filter(|&d| !seen[d]).collect();
        if !missing.is_empty() {
            return Err(ModelError::MissingDims {
                pattern: self.name.clone(),
                missing,
            });
        }
        Ok(())
    }

    pub fn is_core(&self, dim: usize) -> bool {
        self.core_dims.contains(&dim)
    }

    pub fn role(&self, dim: usize) -> DimRole {
        if self.is_core(dim) {
            DimRole::Core
        } else if self.slice_dims.first() == Some(&dim) {
            DimRole::Slice
        } else {
            DimRole::Other
        }
    }

    /// Product of the slice extents; 1 when there are no slice dimensions.
    pub fn frame_count(&self, shape: &[usize]) -> usize {
        self.slice_dims.iter().map(|&d| shape[d]).product()
    }

    /// Extents of the core dimensions, in listed order.
    pub fn core_shape(&self, shape: &[usize]) -> Vec<usize> {
        self.core_dims.iter().map(|&d| shape[d]).collect()
    }

    /// Mixed-radix decomposition of `ordinal` with `slice_dims[0]` as the
    /// fastest digit. Entries follow `slice_dims` order.
    pub fn frame_coords(&self, shape: &[usize], ordinal: usize) -> Result<Vec<usize>, ModelError> {
        let count = self.frame_count(shape);
        if ordinal >= count {
            return Err(ModelError::OrdinalOutOfRange { ordinal, count });
        }
        let mut rest = ordinal;
        Ok(self
            .slice_dims
            .iter()
            .map(|&d| {
                let c = rest % shape[d];
                rest /= shape[d];
                c
            })
            .collect())
    }
}

/// Role of one dimension under one pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DimRole {
    Core,
    /// The first slice dimension.
    Slice,
    /// Any later slice dimension.
    Other,
}

/// Unordered pair of roles a dimension takes under the (now, next) patterns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DimClass {
    CoreCore,
    CoreSlice,
    CoreOther,
    SliceSlice,
    SliceOther,
    OtherOther,
}

impl DimClass {
    pub fn from_roles(a: DimRole, b: DimRole) -> Self {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        match (lo, hi) {
            (DimRole::Core, DimRole::Core) => DimClass::CoreCore,
            (DimRole::Core, DimRole::Slice) => DimClass::CoreSlice,
            (DimRole::Core, DimRole::Other) => DimClass::CoreOther,
            (DimRole::Slice, DimRole::Slice) => DimClass::SliceSlice,
            (DimRole::Slice, DimRole::Other) => DimClass::SliceOther,
            _ => DimClass::OtherOther,
        }
    }
}

impl fmt::Display for DimClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DimClass::CoreCore => "core/core",
            DimClass::CoreSlice => "core/slice",
            DimClass::CoreOther => "core/other",
            DimClass::SliceSlice => "slice/slice",
            DimClass::SliceOther => "slice/other",
            DimClass::OtherOther => "other/other",
        })
    }
}

/// Per-dimension classification of the (now, next) pattern pair.
pub fn classify_dims(now: &Pattern, next: &Pattern) -> Result<Vec<DimClass>, ModelError> {
    let ndims = now.ndims();
    if next.ndims() != ndims {
        return Err(ModelError::NdimsMismatch(ndims, next.ndims()));
    }
    now.validate(ndims)?;
    next.validate(ndims)?;
    Ok((0..ndims)
        .map(|d| DimClass::from_roles(now.role(d), next.role(d)))
        .collect())
}

/// Everything the framework knows about a dataset apart from its bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetDescriptor {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: DType,
    /// One `label.units` string per dimension.
    pub axis_labels: Vec<String>,
    pub patterns: BTreeMap<String, Pattern>,
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl DatasetDescriptor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, dtype: DType, axis_labels: Vec<String>) -> Self {
        DatasetDescriptor {
            name: name.into(),
            shape,
            dtype,
            axis_labels,
            patterns: BTreeMap::new(),
            metadata: BTreeMap::new(),
        }
    }

    pub fn with_pattern(mut self, pattern: Pattern) -> Self {
        self.patterns.insert(pattern.name.clone(), pattern);
        self
    }

    pub fn ndims(&self) -> usize {
        self.shape.len()
    }

    pub fn element_count(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.name.is_empty() {
            return Err(ModelError::InvalidDescriptor("empty dataset name".into()));
        }
        if self.shape.contains(&0) {
            return Err(ModelError::InvalidDescriptor(format!(
                "'{}': extents must be positive, got {:?}",
                self.name, self.shape
            )));
        }
        if self.axis_labels.len() != self.ndims() {
            return Err(ModelError::InvalidDescriptor(format!(
                "'{}': {} axis labels for {} dimensions",
                self.name,
                self.axis_labels.len(),
                self.ndims()
            )));
        }
        for pattern in self.patterns.values() {
            pattern.validate(self.ndims())?;
        }
        Ok(())
    }

    pub fn pattern(&self, name: &str) -> Result<&Pattern, ModelError> {
        self.patterns.get(name).ok_or_else(|| ModelError::UnknownPattern {
            dataset: self.name.clone(),
            pattern: name.to_string(),
        })
    }

    pub fn frame_count(&self, pattern_name: &str) -> Result<usize, ModelError> {
        Ok(self.pattern(pattern_name)?.frame_count(&self.shape))
    }

    pub fn frame_coords(&self, pattern_name: &str, ordinal: usize) -> Result<Vec<usize>, ModelError> {
        self.pattern(pattern_name)?.frame_coords(&self.shape, ordinal)
    }
}

pub fn validate_pattern(descriptor: &DatasetDescriptor, pattern: &Pattern) -> Result<(), ModelError> {
    pattern.validate(descriptor.ndims())
}

/// How a plugin binds to one of its datasets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PluginDatasetView {
    pub dataset_name: String,
    pub pattern_name: String,
    pub frames_per_call: usize,
    /// Pad width per dimension; nonzero only on slice dimensions.
    pub padding: Vec<usize>,
}

impl PluginDatasetView {
    pub fn new(dataset_name: impl Into<String>, pattern_name: impl Into<String>, frames_per_call: usize) -> Self {
        PluginDatasetView {
            dataset_name: dataset_name.into(),
            pattern_name: pattern_name.into(),
            frames_per_call,
            padding: Vec::new(),
        }
    }

    /// Checks the view against the dataset it is bound to. An empty padding
    /// vector is normalised to all zeros.
    pub fn bind(&mut self, descriptor: &DatasetDescriptor) -> Result<(), ModelError> {
        let pattern = descriptor.pattern(&self.pattern_name)?;
        if self.frames_per_call == 0 {
            return Err(ModelError::InvalidDescriptor(format!(
                "view on '{}' requests zero frames per call",
                descriptor.name
            )));
        }
        if self.padding.is_empty() {
            self.padding = vec![0; descriptor.ndims()];
        }
        if self.padding.len() != descriptor.ndims() {
            return Err(ModelError::InvalidDescriptor(format!(
                "view on '{}' pads {} dimensions, dataset has {}",
                descriptor.name,
                self.padding.len(),
                descriptor.ndims()
            )));
        }
        if let Some(&dim) = pattern.core_dims.iter().find(|&&d| self.padding[d] != 0) {
            return Err(ModelError::InvalidDescriptor(format!(
                "view on '{}' pads core dimension {dim}",
                descriptor.name
            )));
        }
        Ok(())
    }
}
