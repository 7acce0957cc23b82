use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use clap::Subcommand;
use framechain::engine::{PluginEntry, ProcessList, Registry};
use framechain::plugins::default_registry;
use serde_json::Value;

#[derive(Subcommand)]
pub enum ConfigCommand {
    /// Create an empty process list.
    New { list: PathBuf },
    /// Append a plugin with its default parameters.
    Add { list: PathBuf, plugin: String },
    /// Remove the entry at a 1-based index.
    Remove { list: PathBuf, index: usize },
    /// Move entry `from` to position `to`.
    Move { list: PathBuf, from: usize, to: usize },
    /// Set a parameter; the value is parsed as JSON, else taken as a string.
    Set { list: PathBuf, index: usize, param: String, value: String },
    /// Print indices, names and parameters.
    Show { list: PathBuf },
    /// List the available plugins and their parameters.
    Plugins,
}

pub fn execute(cmd: ConfigCommand) -> Result<()> {
    let registry = default_registry::<f32>();
    match cmd {
        ConfigCommand::New { list } => {
            ProcessList::new().save(&list)?;
            println!("created {}", list.display());
        }
        ConfigCommand::Add { list: path, plugin } => {
            let mut list = load(&path)?;
            let defaults = registry.defaults(&plugin).map_err(|_| anyhow!("unknown plugin '{plugin}'"))?;
            list.push(PluginEntry::new(plugin, defaults));
            list.save(&path)?;
            print!("{}", render(&list));
        }
        ConfigCommand::Remove { list: path, index } => {
            let mut list = load(&path)?;
            let n = list.plugins.len();
            list.remove(index).ok_or_else(|| bad_index(index, n))?;
            list.save(&path)?;
            print!("{}", render(&list));
        }
        ConfigCommand::Move { list: path, from, to } => {
            let mut list = load(&path)?;
            let n = list.plugins.len();
            if !list.move_entry(from, to) {
                return Err(bad_index(if from == 0 || from > n { from } else { to }, n));
            }
            list.save(&path)?;
            print!("{}", render(&list));
        }
        ConfigCommand::Set { list: path, index, param, value } => {
            let mut list = load(&path)?;
            let n = list.plugins.len();
            let entry = list.get_mut(index).ok_or_else(|| bad_index(index, n))?;
            let value = serde_json::from_str(&value).unwrap_or(Value::String(value));
            set_param(&registry, entry, &param, value)?;
            list.save(&path)?;
            print!("{}", render(&list));
        }
        ConfigCommand::Show { list } => print!("{}", render(&load(&list)?)),
        ConfigCommand::Plugins => {
            for info in registry.infos() {
                println!("{} ({:?}): {}", info.name, info.kind, info.help);
                for p in &info.params {
                    println!("    {} [{}] = {}  {}", p.name, p.kind, p.default, p.help);
                }
            }
        }
    }
    Ok(())
}

fn load(path: &PathBuf) -> Result<ProcessList> {
    let mut list = ProcessList::load(path).with_context(|| format!("reading {}", path.display()))?;
    list.reindex();
    Ok(list)
}

fn bad_index(index: usize, len: usize) -> anyhow::Error {
    anyhow!("bad index {index}: the list has {len} entries")
}

fn set_param(registry: &Registry<f32>, entry: &mut PluginEntry, param: &str, value: Value) -> Result<()> {
    let info = registry.info(&entry.name).ok_or_else(|| anyhow!("unknown plugin '{}'", entry.name))?;
    let spec = info
        .params
        .iter()
        .find(|p| p.name == param)
        .ok_or_else(|| anyhow!("unknown parameter '{param}' for {}", entry.name))?;
    if !spec.kind.accepts(&value) {
        bail!("parameter '{param}' expects {}, got {value}", spec.kind);
    }
    entry.params.insert(param.to_string(), value);
    Ok(())
}

pub fn render(list: &ProcessList) -> String {
    let mut out = String::new();
    if list.plugins.is_empty() {
        out.push_str("(empty process list)\n");
    }
    for e in &list.plugins {
        let flag = if e.active { "" } else { " (inactive)" };
        out.push_str(&format!("{:>3}) {}{flag}\n", e.index, e.name));
        for (k, v) in &e.params {
            out.push_str(&format!("       {k} = {v}\n"));
        }
    }
    out
}
