use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

use super::plugin::{Driver, OutputSpec, PluginError};
use super::process_list::{PluginEntry, ProcessList, IN_DATASETS, OUT_DATASETS};
use super::registry::{Instance, Registry};
use crate::model::{DatasetDescriptor, ModelError, PluginDatasetView};
use crate::scalar::Scalar;
use crate::storage::PluginKind;

/// One inconsistency found by [`check_plugin_list`].
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Issue {
    #[error("process list has no active entries")]
    EmptyList,
    #[error("entry indices are not contiguous from 1")]
    BadIndices,
    #[error("entry {index} ({name}): unknown plugin")]
    UnknownPlugin { index: usize, name: String },
    #[error("entry {index} ({name}): {message}")]
    BadParams { index: usize, name: String, message: String },
    #[error("process list must start with a loader (first active entry is {name})")]
    MissingLoader { name: String },
    #[error("process list must end with a saver (last active entry is {name})")]
    SaverNotLast { name: String },
    #[error("entry {index} ({name}): a saver may only appear as the last entry")]
    MisplacedSaver { index: usize, name: String },
    #[error("entry {index} ({name}): loaders must come before every other entry")]
    MisplacedLoader { index: usize, name: String },
    #[error("entry {index} ({name}): plugin takes {expected} {which}_datasets, entry lists {found}")]
    CountMismatch { index: usize, name: String, which: &'static str, expected: usize, found: usize },
    #[error("entry {index} ({name}): in_dataset '{dataset}' does not match any available dataset {available:?}")]
    UnknownDataset { index: usize, name: String, dataset: String, available: Vec<String> },
    #[error("entry {index} ({name}): pattern '{pattern}' is not defined on dataset '{dataset}' (has {available:?})")]
    MissingPattern { index: usize, name: String, dataset: String, pattern: String, available: Vec<String> },
    #[error("entry {index} ({name}): pattern '{pattern}' has {first} core dims on '{first_dataset}' but {second} on '{second_dataset}'")]
    PatternConflict {
        index: usize,
        name: String,
        pattern: String,
        first_dataset: String,
        first: usize,
        second_dataset: String,
        second: usize,
    },
    #[error("entry {index} ({name}): dataset '{dataset}' has {found} frames, expected a divisor of {expected}")]
    FrameCountMismatch { index: usize, name: String, dataset: String, expected: usize, found: usize },
    #[error("entry {index} ({name}): dataset '{dataset}' already exists")]
    DuplicateDataset { index: usize, name: String, dataset: String },
    #[error("entry {index} ({name}): no data path left for this loader")]
    MissingDataPath { index: usize, name: String },
    #[error("data path {0} is not used by any loader")]
    UnusedDataPath(PathBuf),
    #[error("entry {index} ({name}): loader failed: {message}")]
    LoaderFailed { index: usize, name: String, message: String },
    #[error("entry {index} ({name}): setup failed: {message}")]
    SetupFailed { index: usize, name: String, message: String },
}

/// What an active entry will do, as established by the symbolic run.
#[derive(Debug, Clone, PartialEq)]
pub struct StepPlan {
    pub index: usize,
    pub name: String,
    pub kind: PluginKind,
    pub driver: Driver,
    /// Data path consumed by a loader.
    pub data_path: Option<PathBuf>,
    /// Bound views and the descriptors they were bound to (processing only).
    pub inputs: Vec<(PluginDatasetView, DatasetDescriptor)>,
    /// Named outputs (processing only).
    pub outputs: Vec<OutputSpec>,
    /// Datasets registered by a loader.
    pub loaded: Vec<DatasetDescriptor>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub issues: Vec<Issue>,
    /// One plan per active entry that could be fully simulated.
    pub steps: Vec<StepPlan>,
    /// Available dataset names after each active entry.
    pub available: Vec<(usize, Vec<String>)>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn step(&self, index: usize) -> Option<&StepPlan> {
        self.steps.iter().find(|s| s.index == index)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.issues.is_empty() {
            return writeln!(f, "process list OK");
        }
        for issue in &self.issues {
            writeln!(f, "- {issue}")?;
        }
        Ok(())
    }
}

struct Checker<'a, T: Scalar> {
    registry: &'a Registry<T>,
    report: ValidationReport,
    /// `None` marks a dataset whose shape is unknown because its producer failed.
    available: BTreeMap<String, Option<DatasetDescriptor>>,
    paths: std::slice::Iter<'a, PathBuf>,
}

/// Simulates the chain without touching data. An empty issue list means the
/// run may proceed.
pub fn check_plugin_list<T: Scalar>(registry: &Registry<T>, list: &ProcessList, data_paths: &[PathBuf]) -> ValidationReport {
    let mut c = Checker { registry, report: ValidationReport::default(), available: BTreeMap::new(), paths: data_paths.iter() };
    if !list.indices_contiguous() {
        c.issue(Issue::BadIndices);
    }
    let active: Vec<&PluginEntry> = list.plugins.iter().filter(|e| e.active).collect();
    if active.is_empty() {
        c.issue(Issue::EmptyList);
        return c.report;
    }
    c.check_order(&active);
    for entry in &active {
        c.simulate(entry);
        let names = c.available.keys().cloned().collect();
        c.report.available.push((entry.index, names));
    }
    for p in c.paths.by_ref() {
        c.report.issues.push(Issue::UnusedDataPath(p.clone()));
    }
    c.report
}

impl<T: Scalar> Checker<'_, T> {
    fn issue(&mut self, issue: Issue) {
        self.report.issues.push(issue);
    }

    fn check_order(&mut self, active: &[&PluginEntry]) {
        let kinds: Vec<Option<PluginKind>> = active.iter().map(|e| self.registry.info(&e.name).map(|i| i.kind)).collect();
        for (e, k) in active.iter().zip(&kinds) {
            if k.is_none() {
                self.issue(Issue::UnknownPlugin { index: e.index, name: e.name.clone() });
            }
        }
        let first = active[0];
        if matches!(&kinds[0], Some(k) if *k != PluginKind::Loader) {
            self.issue(Issue::MissingLoader { name: first.name.clone() });
        }
        let last = active.len() - 1;
        if matches!(&kinds[last], Some(k) if *k != PluginKind::Saver) {
            self.issue(Issue::SaverNotLast { name: active[last].name.clone() });
        }
        let mut seen_other = false;
        for (i, (e, k)) in active.iter().zip(&kinds).enumerate() {
            match k {
                Some(PluginKind::Loader) if seen_other => {
                    self.issue(Issue::MisplacedLoader { index: e.index, name: e.name.clone() })
                }
                Some(PluginKind::Loader) => {}
                Some(PluginKind::Saver) if i != last => {
                    self.issue(Issue::MisplacedSaver { index: e.index, name: e.name.clone() });
                    seen_other = true;
                }
                _ => seen_other = true,
            }
        }
    }

    fn simulate(&mut self, entry: &PluginEntry) {
        let (index, name) = (entry.index, entry.name.clone());
        let instance = match self.registry.create(&entry.name, &entry.params) {
            Ok(i) => i,
            Err(PluginError::UnknownPlugin(_)) => return,
            Err(e) => {
                self.issue(Issue::BadParams { index, name, message: e.to_string() });
                if self.registry.info(&entry.name).is_some_and(|i| i.kind == PluginKind::Processing) {
                    self.add_unknown_outputs(entry);
                }
                return;
            }
        };
        match instance {
            Instance::Loader(loader) => {
                let data_path = if loader.uses_data_path() {
                    match self.paths.next() {
                        Some(p) => Some(p.clone()),
                        None => {
                            self.issue(Issue::MissingDataPath { index, name });
                            return;
                        }
                    }
                } else {
                    None
                };
                let described = loader
                    .describe(data_path.as_deref())
                    .and_then(|ds| ds.iter().try_for_each(|d| d.validate()).map(|_| ds).map_err(PluginError::from));
                match described {
                    Ok(loaded) => {
                        for d in &loaded {
                            if self.available.contains_key(&d.name) {
                                self.issue(Issue::DuplicateDataset { index, name: name.clone(), dataset: d.name.clone() });
                            }
                            self.available.insert(d.name.clone(), Some(d.clone()));
                        }
                        self.report.steps.push(StepPlan {
                            index,
                            name,
                            kind: PluginKind::Loader,
                            driver: Driver::Cpu,
                            data_path,
                            inputs: Vec::new(),
                            outputs: Vec::new(),
                            loaded,
                        });
                    }
                    Err(e) => self.issue(Issue::LoaderFailed { index, name, message: e.to_string() }),
                }
            }
            Instance::Saver(_) => self.report.steps.push(StepPlan {
                index,
                name,
                kind: PluginKind::Saver,
                driver: Driver::Cpu,
                data_path: None,
                inputs: Vec::new(),
                outputs: Vec::new(),
                loaded: Vec::new(),
            }),
            Instance::Processing(mut plugin) => {
                let before = self.report.issues.len();
                let plan = self.simulate_processing(entry, plugin.as_mut());
                let ok = self.report.issues.len() == before;
                match plan {
                    Some(step) if ok => {
                        let ins = self.dataset_names(entry).0;
                        for out in &step.outputs {
                            let name = &out.descriptor.name;
                            if !ins.contains(name) && self.available.contains_key(name) {
                                self.issue(Issue::DuplicateDataset { index, name: entry.name.clone(), dataset: name.clone() });
                            }
                            self.available.insert(name.clone(), Some(out.descriptor.clone()));
                        }
                        self.report.steps.push(step);
                    }
                    _ => self.add_unknown_outputs(entry),
                }
            }
        }
    }

    /// In and out dataset names with schema defaults applied.
    fn dataset_names(&self, entry: &PluginEntry) -> (Vec<String>, Vec<String>) {
        match self.registry.resolve(&entry.name, &entry.params) {
            Ok(p) => (
                p.strings(IN_DATASETS).unwrap_or_default(),
                p.strings(OUT_DATASETS).unwrap_or_default(),
            ),
            Err(_) => (entry.in_datasets(), entry.out_datasets()),
        }
    }

    fn add_unknown_outputs(&mut self, entry: &PluginEntry) {
        for name in self.dataset_names(entry).1 {
            self.available.entry(name).or_insert(None);
        }
    }

    fn simulate_processing(&mut self, entry: &PluginEntry, plugin: &mut dyn super::Plugin<T>) -> Option<StepPlan> {
        let (index, name) = (entry.index, entry.name.clone());
        let spec = plugin.spec();
        let (ins, outs) = self.dataset_names(entry);
        let mut ok = true;
        for (which, expected, found) in [("in", spec.nr_in_datasets, ins.len()), ("out", spec.nr_out_datasets, outs.len())] {
            if expected != found {
                self.issue(Issue::CountMismatch { index, name: name.clone(), which, expected, found });
                ok = false;
            }
        }
        for (k, out) in outs.iter().enumerate() {
            if outs[..k].contains(out) {
                self.issue(Issue::DuplicateDataset { index, name: name.clone(), dataset: out.clone() });
                ok = false;
            }
        }
        let mut descriptors = Vec::new();
        for d in &ins {
            match self.available.get(d) {
                Some(Some(desc)) => descriptors.push(desc.clone()),
                Some(None) => ok = false,
                None => {
                    let available = self.available.keys().cloned().collect();
                    self.issue(Issue::UnknownDataset { index, name: name.clone(), dataset: d.clone(), available });
                    ok = false;
                }
            }
        }
        if !ok {
            return None;
        }
        let setup = match plugin.setup(&descriptors, &outs) {
            Ok(s) => s,
            Err(e) => {
                self.issue(Issue::SetupFailed { index, name, message: e.to_string() });
                return None;
            }
        };
        if setup.in_views.len() != ins.len() || setup.outputs.len() != outs.len() {
            let message = format!(
                "setup declared {} views and {} outputs for {} in and {} out datasets",
                setup.in_views.len(),
                setup.outputs.len(),
                ins.len(),
                outs.len()
            );
            self.issue(Issue::SetupFailed { index, name, message });
            return None;
        }

        let mut inputs = Vec::new();
        let mut cores: BTreeMap<String, (String, usize)> = BTreeMap::new();
        for ((mut view, desc), dname) in setup.in_views.into_iter().zip(descriptors).zip(&ins) {
            view.dataset_name = dname.clone();
            if let Err(e) = view.bind(&desc) {
                self.binding_issue(index, &name, &desc, &view.pattern_name, e);
                ok = false;
                continue;
            }
            let ncore = desc.patterns[&view.pattern_name].core_dims.len();
            match cores.get(&view.pattern_name) {
                Some((first_dataset, first)) if *first != ncore => {
                    self.issue(Issue::PatternConflict {
                        index,
                        name: name.clone(),
                        pattern: view.pattern_name.clone(),
                        first_dataset: first_dataset.clone(),
                        first: *first,
                        second_dataset: dname.clone(),
                        second: ncore,
                    });
                    ok = false;
                }
                Some(_) => {}
                None => {
                    cores.insert(view.pattern_name.clone(), (dname.clone(), ncore));
                }
            }
            inputs.push((view, desc));
        }
        if !ok {
            return None;
        }

        let primary = frame_count(&inputs[0].1, &inputs[0].0.pattern_name);
        for (view, desc) in &inputs[1..] {
            let found = frame_count(desc, &view.pattern_name);
            if found == 0 || !primary.is_multiple_of(found) {
                self.issue(Issue::FrameCountMismatch { index, name: name.clone(), dataset: desc.name.clone(), expected: primary, found });
                ok = false;
            }
        }
        let mut outputs = Vec::new();
        for (mut out, oname) in setup.outputs.into_iter().zip(&outs) {
            out.descriptor.name = oname.clone();
            if let Err(e) = out.descriptor.validate() {
                self.issue(Issue::SetupFailed { index, name: name.clone(), message: e.to_string() });
                ok = false;
                continue;
            }
            if !out.descriptor.patterns.contains_key(&out.pattern) {
                self.issue(Issue::MissingPattern {
                    index,
                    name: name.clone(),
                    dataset: oname.clone(),
                    pattern: out.pattern.clone(),
                    available: out.descriptor.patterns.keys().cloned().collect(),
                });
                ok = false;
                continue;
            }
            let found = frame_count(&out.descriptor, &out.pattern);
            if found != primary {
                self.issue(Issue::FrameCountMismatch { index, name: name.clone(), dataset: oname.clone(), expected: primary, found });
                ok = false;
            }
            outputs.push(out);
        }
        ok.then(|| StepPlan {
            index,
            name,
            kind: PluginKind::Processing,
            driver: spec.driver,
            data_path: None,
            inputs,
            outputs,
            loaded: Vec::new(),
        })
    }

    fn binding_issue(&mut self, index: usize, name: &str, desc: &DatasetDescriptor, pattern: &str, e: ModelError) {
        let issue = match e {
            ModelError::UnknownPattern { .. } => Issue::MissingPattern {
                index,
                name: name.to_string(),
                dataset: desc.name.clone(),
                pattern: pattern.to_string(),
                available: desc.patterns.keys().cloned().collect(),
            },
            other => Issue::SetupFailed { index, name: name.to_string(), message: other.to_string() },
        };
        self.issue(issue);
    }
}

fn frame_count(desc: &DatasetDescriptor, pattern: &str) -> usize {
    desc.patterns[pattern].frame_count(&desc.shape)
}
