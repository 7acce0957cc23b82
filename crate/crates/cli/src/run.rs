use std::path::PathBuf;

use anyhow::{anyhow, Context};
use clap::Args;
use framechain::engine::{EngineError, ProcessList, RunOptions};
use framechain::plugins::default_engine;

use crate::Failure;

#[derive(Args)]
pub struct RunArgs {
    /// Data paths, then the process list, then the output directory.
    #[arg(required = true, num_args = 2.., value_name = "PATH")]
    paths: Vec<PathBuf>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, default_value_t = 0)]
    accelerators: usize,
    /// Directory for intermediate containers.
    #[arg(long)]
    inter_dir: Option<PathBuf>,
    /// Chunk byte budget.
    #[arg(long)]
    cache_bytes: Option<u64>,
    /// Event log destination.
    #[arg(long)]
    log: Option<PathBuf>,
}

pub fn execute(args: RunArgs) -> Result<(), Failure> {
    let n = args.paths.len();
    if n < 2 {
        return Err(anyhow!("expected a process list and an output directory").into());
    }
    let data: Vec<PathBuf> = args.paths[..n - 2].to_vec();
    let (list_path, out) = (&args.paths[n - 2], &args.paths[n - 1]);
    for p in &data {
        if !p.exists() {
            return Err(anyhow!("data path {} does not exist", p.display()).into());
        }
    }
    let list = ProcessList::load(list_path).with_context(|| format!("reading {}", list_path.display()))?;

    let engine = default_engine::<f32>();
    let report = engine.check(&list, &data);
    if !report.is_ok() {
        println!("{report}");
        return Err(Failure::new(2, anyhow!("process list failed validation")));
    }

    let mut opts = RunOptions::new(out).with_workers(args.workers);
    opts.accelerators = args.accelerators;
    opts.inter_dir = args.inter_dir;
    opts.log_path = args.log;
    if let Some(b) = args.cache_bytes {
        opts.chunk_budget = b;
    }
    match engine.run(&data, &list, &opts) {
        Ok(outcome) => {
            println!("{}", outcome.manifest_path.display());
            Ok(())
        }
        Err(EngineError::Validation(report)) => {
            println!("{report}");
            Err(Failure::new(2, anyhow!("process list failed validation")))
        }
        Err(e @ EngineError::PluginFailure { .. }) => {
            if let EngineError::PluginFailure { manifest: Some(m), .. } = &e {
                println!("{}", m.display());
            }
            Err(Failure::new(3, e))
        }
        Err(e) => Err(Failure::new(1, e)),
    }
}
