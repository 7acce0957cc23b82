use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::EngineError;

/// Ordered chain of plugin entries, as stored in a process-list file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProcessList {
    pub plugins: Vec<PluginEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PluginEntry {
    /// 1-based position in the list.
    pub index: usize,
    pub name: String,
    #[serde(default = "default_active")]
    pub active: bool,
    #[serde(default)]
    pub params: Map<String, Value>,
}

fn default_active() -> bool {
    true
}

pub const IN_DATASETS: &str = "in_datasets";
pub const OUT_DATASETS: &str = "out_datasets";

impl PluginEntry {
    pub fn new(name: impl Into<String>, params: Map<String, Value>) -> Self {
        PluginEntry {
            index: 0,
            name: name.into(),
            active: true,
            params,
        }
    }

    pub fn in_datasets(&self) -> Vec<String> {
        string_list(self.params.get(IN_DATASETS))
    }

    pub fn out_datasets(&self) -> Vec<String> {
        string_list(self.params.get(OUT_DATASETS))
    }
}

fn string_list(v: Option<&Value>) -> Vec<String> {
    match v {
        Some(Value::Array(items)) => items
            .iter()
            .map(|i| match i {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            })
            .collect(),
        Some(Value::String(s)) => vec![s.clone()],
        _ => Vec::new(),
    }
}

impl ProcessList {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: impl IntoIterator<Item = PluginEntry>) -> Self {
        let mut list = ProcessList {
            plugins: entries.into_iter().collect(),
        };
        list.reindex();
        list
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EngineError> {
        let text = std::fs::read_to_string(path.as_ref())?;
        serde_json::from_str(&text).map_err(|e| EngineError::ProcessList(format!("{}: {e}", path.as_ref().display())))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EngineError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| EngineError::ProcessList(e.to_string()))?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn push(&mut self, entry: PluginEntry) {
        self.plugins.push(entry);
        self.reindex();
    }

    /// Renumbers entries 1..=n in list order.
    pub fn reindex(&mut self) {
        for (i, e) in self.plugins.iter_mut().enumerate() {
            e.index = i + 1;
        }
    }

    pub fn indices_contiguous(&self) -> bool {
        self.plugins.iter().enumerate().all(|(i, e)| e.index == i + 1)
    }

    pub fn get(&self, index: usize) -> Option<&PluginEntry> {
        index.checked_sub(1).and_then(|i| self.plugins.get(i))
    }

    pub fn get_mut(&mut self, index: usize) -> Option<&mut PluginEntry> {
        index.checked_sub(1).and_then(move |i| self.plugins.get_mut(i))
    }

    pub fn remove(&mut self, index: usize) -> Option<PluginEntry> {
        if index == 0 || index > self.plugins.len() {
            return None;
        }
        let e = self.plugins.remove(index - 1);
        self.reindex();
        Some(e)
    }

    /// Moves the entry at `from` so that it ends up at position `to`.
    pub fn move_entry(&mut self, from: usize, to: usize) -> bool {
        let n = self.plugins.len();
        if from == 0 || to == 0 || from > n || to > n {
            return false;
        }
        let e = self.plugins.remove(from - 1);
        self.plugins.insert(to - 1, e);
        self.reindex();
        true
    }
}
