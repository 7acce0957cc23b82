use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;
use serde_json::{Map, Value};

use super::plugin::{Loader, Params, Plugin, PluginError, Saver};
use crate::scalar::Scalar;
use crate::storage::PluginKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamType {
    Int,
    Float,
    Bool,
    Str,
    StrList,
    Json,
}

impl fmt::Display for ParamType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ParamType::Int => "int",
            ParamType::Float => "float",
            ParamType::Bool => "bool",
            ParamType::Str => "str",
            ParamType::StrList => "list[str]",
            ParamType::Json => "json",
        })
    }
}

impl ParamType {
    /// Whether `v` is a valid value of this type; null always is.
    pub fn accepts(self, v: &Value) -> bool {
        match self {
            _ if v.is_null() => true,
            ParamType::Int => v.is_u64() || v.is_i64(),
            ParamType::Float => v.is_number(),
            ParamType::Bool => v.is_boolean(),
            ParamType::Str => v.is_string(),
            ParamType::StrList => v.is_string() || v.as_array().is_some_and(|a| a.iter().all(Value::is_string)),
            ParamType::Json => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamSpec {
    pub name: &'static str,
    pub kind: ParamType,
    pub default: Value,
    pub help: &'static str,
}

impl ParamSpec {
    pub fn new(name: &'static str, kind: ParamType, default: Value, help: &'static str) -> Self {
        ParamSpec { name, kind, default, help }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PluginInfo {
    pub name: &'static str,
    pub kind: PluginKind,
    pub help: &'static str,
    pub params: Vec<ParamSpec>,
}

pub enum Instance<T: Scalar> {
    Loader(Box<dyn Loader>),
    Saver(Box<dyn Saver>),
    Processing(Box<dyn Plugin<T>>),
}

impl<T: Scalar> Instance<T> {
    pub fn kind(&self) -> PluginKind {
        match self {
            Instance::Loader(_) => PluginKind::Loader,
            Instance::Saver(_) => PluginKind::Saver,
            Instance::Processing(_) => PluginKind::Processing,
        }
    }
}

type Factory<T> = Box<dyn Fn(&Params) -> Result<Instance<T>, PluginError> + Send + Sync>;

struct Entry<T: Scalar> {
    info: PluginInfo,
    factory: Factory<T>,
}

/// Plugins addressable by name from a process list.
pub struct Registry<T: Scalar> {
    entries: BTreeMap<String, Entry<T>>,
}

impl<T: Scalar> Default for Registry<T> {
    fn default() -> Self {
        Registry { entries: BTreeMap::new() }
    }
}

impl<T: Scalar> Registry<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds or replaces a plugin.
    pub fn register<F>(&mut self, info: PluginInfo, factory: F)
    where
        F: Fn(&Params) -> Result<Instance<T>, PluginError> + Send + Sync + 'static,
    {
        self.entries.insert(info.name.to_string(), Entry { info, factory: Box::new(factory) });
    }

    pub fn info(&self, name: &str) -> Option<&PluginInfo> {
        self.entries.get(name).map(|e| &e.info)
    }

    pub fn infos(&self) -> impl Iterator<Item = &PluginInfo> {
        self.entries.values().map(|e| &e.info)
    }

    /// Schema defaults for a plugin.
    pub fn defaults(&self, name: &str) -> Result<Map<String, Value>, PluginError> {
        let info = self.info(name).ok_or_else(|| PluginError::UnknownPlugin(name.to_string()))?;
        Ok(info.params.iter().map(|p| (p.name.to_string(), p.default.clone())).collect())
    }

    /// Checks `params` against the schema and fills in defaults.
    pub fn resolve(&self, name: &str, params: &Map<String, Value>) -> Result<Params, PluginError> {
        let info = self.info(name).ok_or_else(|| PluginError::UnknownPlugin(name.to_string()))?;
        let mut merged = self.defaults(name)?;
        for (k, v) in params {
            let spec = info.params.iter().find(|p| p.name == k).ok_or_else(|| PluginError::UnknownParam {
                plugin: name.to_string(),
                param: k.clone(),
            })?;
            if !spec.kind.accepts(v) {
                return Err(PluginError::param(k, format!("expected {}, got {v}", spec.kind)));
            }
            merged.insert(k.clone(), v.clone());
        }
        Ok(Params::new(merged))
    }

    pub fn create(&self, name: &str, params: &Map<String, Value>) -> Result<Instance<T>, PluginError> {
        let resolved = self.resolve(name, params)?;
        let entry = &self.entries[name];
        let instance = (entry.factory)(&resolved)?;
        debug_assert_eq!(instance.kind(), entry.info.kind);
        Ok(instance)
    }
}
