//! Reference plugins: loaders, a saver and a full-field tomography chain.
//!
//! The correction formulas are the conventional ones: dark/flat
//! normalisation, Beer-Lambert linearisation and Ram-Lak filtered
//! back-projection.

pub mod kernels;
mod loaders;
mod processing;

use std::path::{Path, PathBuf};

use serde_json::{json, Value};

pub use loaders::{ContainerLoader, Disk, PhantomSpec, SyntheticTomo, DARK_LEVEL, I0, MIN_TRANSMISSION};
pub use processing::{DarkFlatCorrect, DatasetRatio, FbpRecon, MedianFilter3x3, MinusLog, ViewParams, SLICE_PATTERN};

use crate::engine::{Driver, Engine, Instance, ParamSpec, ParamType, PluginInfo, Registry, Saver};
use crate::scalar::Scalar;
use crate::storage::PluginKind;

/// Writes each dataset to `p{index}.{dataset}.cnt`.
#[derive(Debug, Clone, Default)]
pub struct ContainerSaver;

impl Saver for ContainerSaver {
    fn container_path(&self, dir: &Path, index: usize, dataset: &str) -> PathBuf {
        let safe: String = dataset.chars().map(|c| if c == '/' || c == '\\' { '_' } else { c }).collect();
        dir.join(format!("p{index}.{safe}.cnt"))
    }
}

fn param(name: &'static str, kind: ParamType, default: Value, help: &'static str) -> ParamSpec {
    ParamSpec::new(name, kind, default, help)
}

fn view_params(ins: Value, outs: Value, pattern: &str) -> Vec<ParamSpec> {
    vec![
        param("in_datasets", ParamType::StrList, ins, "datasets read by the plugin"),
        param("out_datasets", ParamType::StrList, outs, "datasets written by the plugin"),
        param("pattern", ParamType::Str, json!(pattern), "access pattern of the frames"),
        param("frames", ParamType::Int, json!(1), "frames per process call"),
    ]
}

/// Registry holding every plugin in this module.
pub fn default_registry<T: Scalar>() -> Registry<T> {
    let mut r = Registry::new();
    r.register(
        PluginInfo {
            name: "SyntheticTomoLoader",
            kind: PluginKind::Loader,
            help: "analytic disk phantom as U16 transmission counts, with dark and flat fields",
            params: loaders::synthetic_defaults()
                .into_iter()
                .map(|(n, v, h)| {
                    let kind = match &v {
                        Value::Bool(_) => ParamType::Bool,
                        Value::Number(_) => ParamType::Int,
                        Value::String(_) => ParamType::Str,
                        _ => ParamType::Json,
                    };
                    param(n, kind, v, h)
                })
                .collect(),
        },
        |p| Ok(Instance::Loader(Box::new(SyntheticTomo::from_params(p)?))),
    );
    r.register(
        PluginInfo {
            name: "ContainerLoader",
            kind: PluginKind::Loader,
            help: "registers the dataset stored in the next data path",
            params: vec![param("name", ParamType::Str, json!(""), "dataset name; empty keeps the stored name")],
        },
        |p| {
            let name = p.string("name")?;
            Ok(Instance::Loader(Box::new(ContainerLoader { rename: (!name.is_empty()).then_some(name) })))
        },
    );
    r.register(
        PluginInfo { name: "ContainerSaver", kind: PluginKind::Saver, help: "writes p<index>.<dataset>.cnt containers", params: vec![] },
        |_| Ok(Instance::Saver(Box::new(ContainerSaver))),
    );
    r.register(
        PluginInfo {
            name: "DarkFlatCorrect",
            kind: PluginKind::Processing,
            help: "(raw - dark) / max(flat - dark, 1e-6)",
            params: view_params(json!(["tomo", "dark", "flat"]), json!(["tomo"]), "PROJECTION"),
        },
        |p| Ok(Instance::Processing(Box::new(DarkFlatCorrect { view: ViewParams::from_params(p)? }))),
    );
    r.register(
        PluginInfo {
            name: "MinusLog",
            kind: PluginKind::Processing,
            help: "-ln(max(v, 1e-6))",
            params: view_params(json!(["tomo"]), json!(["tomo"]), "SINOGRAM"),
        },
        |p| Ok(Instance::Processing(Box::new(MinusLog { view: ViewParams::from_params(p)? }))),
    );
    r.register(
        PluginInfo {
            name: "MedianFilter3x3",
            kind: PluginKind::Processing,
            help: "median over 3 frames along the first slice dim times a 3x3 core window",
            params: view_params(json!(["tomo"]), json!(["tomo"]), "PROJECTION"),
        },
        |p| Ok(Instance::Processing(Box::new(MedianFilter3x3 { view: ViewParams::from_params(p)? }))),
    );
    r.register(
        PluginInfo {
            name: "DatasetRatio",
            kind: PluginKind::Processing,
            help: "num / max(den, 1e-6); the denominator may have fewer frames",
            params: view_params(json!(["fluo", "tomo"]), json!(["ratio"]), "PROJECTION"),
        },
        |p| Ok(Instance::Processing(Box::new(DatasetRatio { view: ViewParams::from_params(p)? }))),
    );
    r.register(
        PluginInfo {
            name: "FbpRecon",
            kind: PluginKind::Processing,
            help: "Ram-Lak filtered back-projection of SINOGRAM frames",
            params: vec![
                param("in_datasets", ParamType::StrList, json!(["tomo"]), "sinogram dataset"),
                param("out_datasets", ParamType::StrList, json!(["recon"]), "reconstructed slices"),
                param("frames", ParamType::Int, json!(1), "sinograms per process call"),
                param("center", ParamType::Float, Value::Null, "rotation axis in bins; null means n_x / 2"),
                param("angles", ParamType::Json, Value::Null, "angles in degrees; null means uniform over [0, 180)"),
                param("driver", ParamType::Str, json!("cpu"), "cpu or accelerator"),
            ],
        },
        |p| {
            let frames = p.usize("frames")?;
            if frames == 0 {
                return Err(crate::engine::PluginError::param("frames", "must be at least 1"));
            }
            let angles = match p.get("angles") {
                None => None,
                Some(_) => Some(p.parse::<Vec<f64>>("angles")?),
            };
            let driver: Driver = p.string("driver")?.parse()?;
            Ok(Instance::Processing(Box::new(FbpRecon::<T>::new(frames, p.opt_f64("center")?, angles, driver))))
        },
    );
    r
}

/// Engine over [`default_registry`].
pub fn default_engine<T: Scalar>() -> Engine<T> {
    Engine::new(default_registry())
}
