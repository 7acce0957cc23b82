use std::collections::BTreeMap;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Instant;

use ndarray::{concatenate, ArrayD, Axis};

use super::check::{StepPlan, ValidationReport};
use super::log::{EventLog, LogEvent, Phase};
use super::plugin::{Plugin, PluginError, Saver};
use super::process_list::ProcessList;
use super::registry::Instance;
use super::schedule::{gate_workers, partition_frames};
use super::{Engine, EngineError};
use crate::chunking::{optimize_chunks, OptimizerInputs, DEFAULT_CHUNK_BUDGET};
use crate::model::{DatasetDescriptor, Pattern};
use crate::scalar::Scalar;
use crate::storage::{
    write_manifest, Container, IoStats, OpenMode, OutputLink, PluginKind, PluginRecord, RunManifest, RunStatus,
};

/// How output chunk shapes are chosen.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum ChunkPolicy {
    /// Chunk optimizer over the producing and consuming patterns.
    #[default]
    Optimized,
    /// One element along every core dimension of the writing pattern and
    /// full extent elsewhere. Worst case for frame access; ignores the budget.
    Transposed,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub output_dir: PathBuf,
    /// Where non-final containers go; defaults to `output_dir`.
    pub inter_dir: Option<PathBuf>,
    pub workers: usize,
    pub accelerators: usize,
    /// Chunk byte budget.
    pub chunk_budget: u64,
    pub log_path: Option<PathBuf>,
    pub chunk_policy: ChunkPolicy,
}

impl RunOptions {
    pub fn new(output_dir: impl Into<PathBuf>) -> Self {
        RunOptions {
            output_dir: output_dir.into(),
            inter_dir: None,
            workers: 1,
            accelerators: 0,
            chunk_budget: DEFAULT_CHUNK_BUDGET,
            log_path: None,
            chunk_policy: ChunkPolicy::Optimized,
        }
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }

    pub fn with_inter_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.inter_dir = Some(dir.into());
        self
    }

    fn inter(&self) -> &Path {
        self.inter_dir.as_deref().unwrap_or(&self.output_dir)
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub manifest_path: PathBuf,
    /// Chunk I/O summed over every container the run opened.
    pub io: IoStats,
    pub events: Vec<LogEvent>,
    /// Available dataset names after each active entry.
    pub available: Vec<(usize, Vec<String>)>,
}

#[derive(Debug, Clone)]
pub struct LiveDataset {
    pub descriptor: DatasetDescriptor,
    pub container: Arc<Container>,
    /// Index of the entry that produced it.
    pub producer: usize,
}

/// Datasets available to the next entry, keyed by unique name.
#[derive(Debug, Default)]
pub struct DatasetTable {
    entries: BTreeMap<String, LiveDataset>,
}

impl DatasetTable {
    pub fn get(&self, name: &str) -> Option<&LiveDataset> {
        self.entries.get(name)
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &LiveDataset)> {
        self.entries.iter()
    }

    pub fn add(&mut self, name: &str, dataset: LiveDataset) -> Result<(), EngineError> {
        if self.entries.contains_key(name) {
            return Err(EngineError::DuplicateDataset(name.to_string()));
        }
        self.entries.insert(name.to_string(), dataset);
        Ok(())
    }

    /// Puts `dataset` in place of the existing dataset `name` and hands back
    /// the superseded one. Its file stays on disk.
    pub fn replace_dataset(&mut self, name: &str, dataset: LiveDataset) -> Result<LiveDataset, EngineError> {
        match self.entries.get_mut(name) {
            Some(slot) => Ok(std::mem::replace(slot, dataset)),
            None => Err(EngineError::UnknownDataset(name.to_string())),
        }
    }
}

/// An in-view bound to an open container.
#[derive(Debug, Clone)]
pub struct BoundInput {
    pub container: Arc<Container>,
    pub pattern: Pattern,
    pub frames_per_call: usize,
    pub padding: Vec<usize>,
}

impl BoundInput {
    pub fn frame_count(&self) -> usize {
        self.pattern.frame_count(self.container.shape())
    }

    /// Frames for ordinals `start..start + n` of the driving view. A view
    /// with fewer frames is indexed by ordinal modulo its own frame count.
    fn read_mapped<T: Scalar>(&self, start: usize, n: usize, driving: usize) -> Result<ArrayD<T>, PluginError> {
        let own = self.frame_count();
        let c = &self.container;
        if own == driving {
            return Ok(c.read_frames_with(&self.pattern, start, n, &self.padding)?);
        }
        let mapped: Vec<usize> = (start..start + n).map(|o| o % own).collect();
        if own <= n {
            let all: ArrayD<T> = c.read_frames_with(&self.pattern, 0, own, &self.padding)?;
            return Ok(all.select(Axis(0), &mapped));
        }
        let mut parts = Vec::new();
        let mut run_start = 0;
        for k in 1..=mapped.len() {
            if k == mapped.len() || mapped[k] != mapped[k - 1] + 1 {
                let block: ArrayD<T> = c.read_frames_with(&self.pattern, mapped[run_start], k - run_start, &self.padding)?;
                parts.push(block);
                run_start = k;
            }
        }
        if parts.len() == 1 {
            return Ok(parts.pop().expect("one part"));
        }
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        concatenate(Axis(0), &views).map_err(|e| PluginError::ShapeMismatch(e.to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct BoundOutput {
    pub container: Arc<Container>,
    pub pattern: Pattern,
}

/// Runs one plugin over every frame of its first in-view: `pre_process`,
/// then `workers` threads each looping read/process/write over a contiguous
/// frame range, then `post_process` once all threads have joined.
pub fn execute_plugin<T: Scalar>(
    plugin: &mut dyn Plugin<T>,
    index: usize,
    name: &str,
    inputs: &[BoundInput],
    outputs: &[BoundOutput],
    workers: usize,
    log: &EventLog,
) -> Result<(), PluginError> {
    let driving = inputs
        .first()
        .ok_or_else(|| PluginError::InvalidSpec(format!("{name} has no in-views")))?
        .frame_count();
    let t = Instant::now();
    plugin.pre_process()?;
    log.record(0, index, name, Phase::Pre, 0, t);

    let (ranges, _) = partition_frames(driving, workers);
    let shared: &dyn Plugin<T> = plugin;
    let abort = AtomicBool::new(false);
    let results: Vec<Result<(), PluginError>> = thread::scope(|s| {
        let handles: Vec<_> = ranges
            .into_iter()
            .enumerate()
            .map(|(w, range)| {
                let abort = &abort;
                s.spawn(move || {
                    let r = work(shared, w, range, inputs, outputs, driving, index, name, log, abort);
                    if r.is_err() {
                        abort.store(true, Ordering::Relaxed);
                    }
                    r
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(PluginError::Failed("worker panicked".into()))))
            .collect()
    });
    results.into_iter().collect::<Result<(), _>>()?;

    let t = Instant::now();
    plugin.post_process()?;
    log.record(0, index, name, Phase::Post, 0, t);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn work<T: Scalar>(
    plugin: &dyn Plugin<T>,
    worker: usize,
    range: Range<usize>,
    inputs: &[BoundInput],
    outputs: &[BoundOutput],
    driving: usize,
    index: usize,
    name: &str,
    log: &EventLog,
    abort: &AtomicBool,
) -> Result<(), PluginError> {
    let m = inputs[0].frames_per_call.max(1);
    let mut f = range.start;
    while f < range.end && !abort.load(Ordering::Relaxed) {
        let n = m.min(range.end - f);
        let t = Instant::now();
        let blocks = inputs
            .iter()
            .map(|i| i.read_mapped::<T>(f, n, driving))
            .collect::<Result<Vec<_>, _>>()?;
        log.record(worker, index, name, Phase::Load, n, t);

        let t = Instant::now();
        let produced = plugin.process(&blocks)?;
        log.record(worker, index, name, Phase::Process, n, t);
        if produced.len() != outputs.len() {
            return Err(PluginError::ShapeMismatch(format!(
                "process returned {} blocks for {} outputs",
                produced.len(),
                outputs.len()
            )));
        }

        let t = Instant::now();
        for (out, block) in outputs.iter().zip(&produced) {
            out.container.write_frames_with(&out.pattern, f, block.view())?;
        }
        log.record(worker, index, name, Phase::Write, n, t);
        f += n;
    }
    Ok(())
}

struct Failure {
    index: usize,
    name: String,
    cause: PluginError,
}

struct RunState {
    table: DatasetTable,
    records: Vec<PluginRecord>,
    opened: Vec<Arc<Container>>,
    available: Vec<(usize, Vec<String>)>,
}

/// Consumer of a dataset: pattern, frames per call and active workers.
struct Consumer<'a> {
    pattern: &'a Pattern,
    frames: usize,
    workers: usize,
}

impl<T: Scalar> Engine<T> {
    /// Validates and executes a process list. Nothing is created on disk if
    /// validation fails.
    pub fn run(&self, data_paths: &[PathBuf], list: &ProcessList, opts: &RunOptions) -> Result<RunOutcome, EngineError> {
        if opts.workers == 0 {
            return Err(EngineError::InvalidOptions("at least one worker is required".into()));
        }
        if opts.chunk_budget < 8 {
            return Err(EngineError::InvalidOptions(format!("chunk budget {} is below one element", opts.chunk_budget)));
        }
        let report = self.check(list, data_paths);
        if !report.is_ok() {
            return Err(EngineError::Validation(Box::new(report)));
        }
        let mut workers = BTreeMap::new();
        for step in report.steps.iter().filter(|s| s.kind == PluginKind::Processing) {
            workers.insert(step.index, gate_workers(step.driver, opts.workers, opts.accelerators)?);
        }
        let saver_step = report.steps.last().expect("validated list ends with a saver");
        let saver_entry = list.get(saver_step.index).expect("step index from list");
        let saver = match self.registry().create(&saver_entry.name, &saver_entry.params)? {
            Instance::Saver(s) => s,
            _ => unreachable!("validated saver entry"),
        };

        std::fs::create_dir_all(&opts.output_dir)?;
        if let Some(dir) = &opts.inter_dir {
            std::fs::create_dir_all(dir)?;
        }
        let log = EventLog::new();
        let mut state = RunState { table: DatasetTable::default(), records: Vec::new(), opened: Vec::new(), available: Vec::new() };
        let mut manifest = RunManifest {
            run_id: uuid::Uuid::new_v4().to_string(),
            inputs: data_paths.to_vec(),
            intermediate_dir: opts.inter_dir.clone(),
            plugins: Vec::new(),
            final_outputs: Vec::new(),
            status: RunStatus::Completed,
            log: opts.log_path.clone(),
        };

        let executed = report
            .steps
            .iter()
            .filter(|s| s.kind != PluginKind::Saver)
            .try_for_each(|step| {
                let ctx = StepContext { engine: self, list, report: &report, opts, saver: saver.as_ref(), workers: &workers, log: &log };
                ctx.run_step(step, &mut state).map_err(|cause| Failure { index: step.index, name: step.name.clone(), cause })
            });

        if let Err(failure) = executed {
            manifest.plugins = state.records;
            manifest.status = RunStatus::Failed { plugin_index: failure.index, message: failure.cause.to_string() };
            write_log(opts, &log)?;
            let manifest_path = write_manifest(&opts.output_dir, &manifest).ok();
            return Err(EngineError::PluginFailure {
                index: failure.index,
                name: failure.name,
                source: failure.cause,
                manifest: manifest_path,
            });
        }

        for (name, live) in state.table.iter() {
            let path = if live.container.path().parent() == Some(opts.output_dir.as_path()) {
                live.container.path().to_path_buf()
            } else {
                let dest = saver.container_path(&opts.output_dir, live.producer, name);
                std::fs::copy(live.container.path(), &dest)?;
                dest
            };
            manifest.final_outputs.push(OutputLink { dataset: name.clone(), path });
        }
        for record in &mut state.records {
            record.intermediate = !record.outputs.iter().any(|o| manifest.final_outputs.contains(o));
        }
        state.records.push(PluginRecord {
            index: saver_step.index,
            name: saver_step.name.clone(),
            kind: PluginKind::Saver,
            params: self.registry().resolve(&saver_entry.name, &saver_entry.params)?.map().clone(),
            outputs: manifest.final_outputs.clone(),
            intermediate: false,
        });
        state.available.push((saver_step.index, state.table.names()));
        manifest.plugins = state.records;

        let mut io = IoStats::default();
        for c in &state.opened {
            io += c.stats();
        }
        drop(state.table);
        drop(state.opened);
        write_log(opts, &log)?;
        let manifest_path = write_manifest(&opts.output_dir, &manifest)?;
        Ok(RunOutcome { manifest, manifest_path, io, events: log.events(), available: state.available })
    }
}

fn write_log(opts: &RunOptions, log: &EventLog) -> Result<(), EngineError> {
    if let Some(path) = &opts.log_path {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, log.render())?;
    }
    Ok(())
}

struct StepContext<'a, T: Scalar> {
    engine: &'a Engine<T>,
    list: &'a ProcessList,
    report: &'a ValidationReport,
    opts: &'a RunOptions,
    saver: &'a dyn Saver,
    workers: &'a BTreeMap<usize, usize>,
    log: &'a EventLog,
}

impl<T: Scalar> StepContext<'_, T> {
    fn run_step(&self, step: &StepPlan, state: &mut RunState) -> Result<(), PluginError> {
        let entry = self.list.get(step.index).expect("step index from list");
        let params = self.engine.registry().resolve(&entry.name, &entry.params)?.map().clone();
        let instance = self.engine.registry().create(&entry.name, &entry.params)?;
        let outputs = match instance {
            Instance::Loader(loader) => {
                let t = Instant::now();
                let mut create = |d: &DatasetDescriptor| {
                    let chunk = self.loader_chunks(step.index, d)?;
                    Container::create(self.saver.container_path(self.opts.inter(), step.index, &d.name), d, &chunk)
                };
                let paths = loader.load(step.data_path.as_deref(), &mut create)?;
                if paths.len() != step.loaded.len() {
                    return Err(PluginError::Failed(format!(
                        "loader produced {} datasets, described {}",
                        paths.len(),
                        step.loaded.len()
                    )));
                }
                let mut links = Vec::new();
                for (d, path) in step.loaded.iter().zip(paths) {
                    let container = Arc::new(Container::open(&path, OpenMode::Read)?);
                    state.opened.push(container.clone());
                    let live = LiveDataset { descriptor: d.clone(), container, producer: step.index };
                    state.table.add(&d.name, live).map_err(|e| PluginError::Failed(e.to_string()))?;
                    links.push(OutputLink { dataset: d.name.clone(), path });
                }
                self.log.record(0, step.index, &step.name, Phase::Load, 0, t);
                links
            }
            Instance::Processing(mut plugin) => self.run_processing(step, plugin.as_mut(), state)?,
            Instance::Saver(_) => unreachable!("saver handled by the caller"),
        };
        state.records.push(PluginRecord {
            index: step.index,
            name: step.name.clone(),
            kind: step.kind,
            params,
            outputs,
            intermediate: true,
        });
        state.available.push((step.index, state.table.names()));
        Ok(())
    }

    fn run_processing(&self, step: &StepPlan, plugin: &mut dyn Plugin<T>, state: &mut RunState) -> Result<Vec<OutputLink>, PluginError> {
        let in_names: Vec<String> = step.inputs.iter().map(|(v, _)| v.dataset_name.clone()).collect();
        let out_names: Vec<String> = step.outputs.iter().map(|o| o.descriptor.name.clone()).collect();
        let live: Vec<LiveDataset> = in_names
            .iter()
            .map(|n| state.table.get(n).cloned().ok_or_else(|| PluginError::Failed(format!("dataset '{n}' is not available"))))
            .collect::<Result<_, _>>()?;
        let descriptors: Vec<DatasetDescriptor> = live.iter().map(|l| l.descriptor.clone()).collect();

        let t = Instant::now();
        let mut setup = plugin.setup(&descriptors, &out_names)?;
        for (view, name) in setup.in_views.iter_mut().zip(&in_names) {
            view.dataset_name = name.clone();
        }
        for (view, d) in setup.in_views.iter_mut().zip(&descriptors) {
            view.bind(d)?;
        }
        for (out, name) in setup.outputs.iter_mut().zip(&out_names) {
            out.descriptor.name = name.clone();
        }
        let planned_views: Vec<_> = step.inputs.iter().map(|(v, _)| v.clone()).collect();
        if setup.in_views != planned_views || setup.outputs != step.outputs {
            return Err(PluginError::Failed("setup result differs from the validated plan".into()));
        }
        self.log.record(0, step.index, &step.name, Phase::Setup, 0, t);

        let workers = self.workers[&step.index];
        let inputs: Vec<BoundInput> = setup
            .in_views
            .iter()
            .zip(&live)
            .map(|(v, l)| BoundInput {
                container: l.container.clone(),
                pattern: l.descriptor.patterns[&v.pattern_name].clone(),
                frames_per_call: v.frames_per_call,
                padding: v.padding.clone(),
            })
            .collect();
        let frames = inputs[0].frames_per_call;

        let mut outputs = Vec::new();
        let mut links = Vec::new();
        for out in &setup.outputs {
            let name = &out.descriptor.name;
            let now = &out.descriptor.patterns[&out.pattern];
            let consumer = self.consumer(step.index, name);
            let is_final = self.is_final(step.index, name);
            let chunk = self.chunk_shape(&out.descriptor, now, frames, workers, consumer, is_final)?;
            let dir = if is_final { self.opts.output_dir.as_path() } else { self.opts.inter() };
            let path = self.saver.container_path(dir, step.index, name);
            let container = Arc::new(Container::create(&path, &out.descriptor, &chunk)?);
            state.opened.push(container.clone());
            outputs.push(BoundOutput { container, pattern: now.clone() });
            links.push(OutputLink { dataset: name.clone(), path });
        }

        execute_plugin(plugin, step.index, &step.name, &inputs, &outputs, workers, self.log)?;

        for (out, bound) in setup.outputs.iter().zip(outputs) {
            let name = &out.descriptor.name;
            let live = LiveDataset { descriptor: out.descriptor.clone(), container: bound.container, producer: step.index };
            let r = if in_names.contains(name) {
                state.table.replace_dataset(name, live).map(drop)
            } else {
                state.table.add(name, live)
            };
            r.map_err(|e| PluginError::Failed(e.to_string()))?;
        }
        Ok(links)
    }

    /// First later entry that reads `name`.
    fn consumer(&self, after: usize, name: &str) -> Option<Consumer<'_>> {
        self.report
            .steps
            .iter()
            .filter(|s| s.index > after && s.kind == PluginKind::Processing)
            .find_map(|s| {
                s.inputs.iter().find(|(v, _)| v.dataset_name == name).map(|(v, d)| Consumer {
                    pattern: &d.patterns[&v.pattern_name],
                    frames: v.frames_per_call,
                    workers: self.workers[&s.index],
                })
            })
    }

    /// No later entry produces a dataset called `name`.
    fn is_final(&self, after: usize, name: &str) -> bool {
        !self
            .report
            .steps
            .iter()
            .filter(|s| s.index > after)
            .any(|s| s.outputs.iter().any(|o| o.descriptor.name == name))
    }

    fn loader_chunks(&self, index: usize, d: &DatasetDescriptor) -> Result<Vec<usize>, crate::storage::StorageError> {
        let all;
        let (now, frames, workers) = match self.consumer(index, &d.name) {
            Some(c) => (c.pattern, c.frames, c.workers),
            None => match d.patterns.values().next() {
                Some(p) => (p, 1, self.opts.workers),
                None => {
                    all = Pattern::new("ALL", &(0..d.ndims()).collect::<Vec<_>>(), &[]);
                    (&all, 1, self.opts.workers)
                }
            },
        };
        self.chunk_shape(d, now, frames, workers, None, self.is_final(index, &d.name))
            .map_err(|e| crate::storage::StorageError::ShapeMismatch(e.to_string()))
    }

    fn chunk_shape(
        &self,
        d: &DatasetDescriptor,
        now: &Pattern,
        frames: usize,
        workers: usize,
        next: Option<Consumer<'_>>,
        is_final: bool,
    ) -> Result<Vec<usize>, PluginError> {
        match self.opts.chunk_policy {
            ChunkPolicy::Transposed => {
                Ok(d.shape.iter().enumerate().map(|(k, &s)| if now.is_core(k) { 1 } else { s }).collect())
            }
            ChunkPolicy::Optimized => {
                let (next_pattern, mut next_workers) = match &next {
                    Some(c) => (c.pattern, c.workers),
                    None => (now, workers),
                };
                // final containers get one layout whatever the worker count
                let mut workers = workers;
                if is_final {
                    (workers, next_workers) = (1, 1);
                }
                let inputs = OptimizerInputs::new(&d.shape, d.dtype, now.clone(), next_pattern.clone())
                    .with_frames(frames)
                    .with_workers(workers, next_workers)
                    .with_budget(self.opts.chunk_budget);
                Ok(optimize_chunks(&inputs)?.chunk_shape)
            }
        }
    }
}
