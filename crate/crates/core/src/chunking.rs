//! Chunk-shape selection from a dataset's (now, next) access patterns.
//!
//! Every dimension gets a start value, bounds and a step from the class of
//! its role pair. If the start chunk fits the byte budget the adjustable
//! dimensions are grown one at a time, each to the largest admissible value;
//! otherwise they are shrunk one at a time, in the reverse order, keeping each
//! as large as feasibility allows.

use std::fmt;

use thiserror::Error;

use crate::model::{classify_dims, DType, DimClass, DimRole, ModelError, Pattern};
use crate::storage::{batch_chunk_count, ChunkGrid};

/// Default chunk byte budget.
pub const DEFAULT_CHUNK_BUDGET: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChunkError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid optimizer inputs: {0}")]
    InvalidInputs(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("{candidates} candidate chunk shapes exceeds limit {limit}")]
    TooLarge { candidates: u128, limit: u128 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OptimizerInputs {
    pub shape: Vec<usize>,
    pub element_bytes: usize,
    pub now: Pattern,
    pub next: Pattern,
    /// Frames delivered per plugin call.
    pub frames: usize,
    /// Average frames per worker under the `now` pattern.
    pub frames_per_worker_now: usize,
    /// Average frames per worker under the `next` pattern.
    pub frames_per_worker_next: usize,
    /// Chunk byte budget.
    pub budget: u64,
}

impl OptimizerInputs {
    /// Single worker, one frame per call, default budget.
    pub fn new(shape: &[usize], dtype: DType, now: Pattern, next: Pattern) -> Self {
        let fp_now = now.frame_count(shape).max(1);
        let fp_next = next.frame_count(shape).max(1);
        OptimizerInputs {
            shape: shape.to_vec(),
            element_bytes: dtype.byte_size(),
            now,
            next,
            frames: 1,
            frames_per_worker_now: fp_now,
            frames_per_worker_next: fp_next,
            budget: DEFAULT_CHUNK_BUDGET,
        }
    }

    pub fn with_frames(mut self, frames: usize) -> Self {
        self.frames = frames;
        self
    }

    pub fn with_budget(mut self, budget: u64) -> Self {
        self.budget = budget;
        self
    }

    /// Sets the per-worker frame averages from worker counts.
    pub fn with_workers(mut self, workers_now: usize, workers_next: usize) -> Self {
        self.frames_per_worker_now = self.now.frame_count(&self.shape).div_ceil(workers_now.max(1)).max(1);
        self.frames_per_worker_next = self.next.frame_count(&self.shape).div_ceil(workers_next.max(1)).max(1);
        self
    }

    pub fn validate(&self) -> Result<(), ChunkError> {
        let nd = self.shape.len();
        if nd == 0 || self.shape.contains(&0) {
            return Err(ChunkError::InvalidInputs(format!("shape {:?}", self.shape)));
        }
        self.now.validate(nd)?;
        self.next.validate(nd)?;
        if self.frames == 0 || self.frames_per_worker_now == 0 || self.frames_per_worker_next == 0 {
            return Err(ChunkError::InvalidInputs("frame counts must be at least 1".into()));
        }
        if self.element_bytes == 0 || self.budget < self.element_bytes as u64 {
            return Err(ChunkError::InvalidInputs(format!(
                "budget {} below element size {}",
                self.budget, self.element_bytes
            )));
        }
        Ok(())
    }

    fn bytes(&self, chunk: &[usize]) -> u128 {
        chunk.iter().map(|&c| c as u128).product::<u128>() * self.element_bytes as u128
    }
}

/// Start value, bounds and step for one dimension.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DimPlan {
    pub dim: usize,
    pub class: DimClass,
    pub start: usize,
    pub lower: usize,
    pub upper: usize,
    pub adjustable: bool,
    /// Increment/decrement unit; core/core dims shrink by halving instead.
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkPlan {
    pub chunk_shape: Vec<usize>,
    pub chunk_bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Increase,
    Decrease,
}

/// Full trace of one optimizer run, for debugging output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Explanation {
    pub inputs: OptimizerInputs,
    pub dims: Vec<DimPlan>,
    pub direction: Direction,
    pub visit_order: Vec<usize>,
    pub plan: ChunkPlan,
}

pub fn initial_values(inputs: &OptimizerInputs) -> Result<Vec<DimPlan>, ChunkError> {
    inputs.validate()?;
    let classes = classify_dims(&inputs.now, &inputs.next)?;
    let f = inputs.frames;
    Ok(classes
        .into_iter()
        .enumerate()
        .map(|(dim, class)| {
            let d = inputs.shape[dim];
            // per-worker frames of whichever pattern slices this dimension
            let fp = if inputs.now.role(dim) == DimRole::Slice {
                inputs.frames_per_worker_now
            } else {
                inputs.frames_per_worker_next
            };
            let (start, upper, step, adjustable) = match class {
                DimClass::CoreCore => (d, d, 1, true),
                DimClass::CoreSlice | DimClass::SliceSlice => {
                    let c0 = f.min(d);
                    (c0, fp.max(c0).min(d), f, true)
                }
                DimClass::CoreOther | DimClass::SliceOther => (1, d, 1, true),
                DimClass::OtherOther => (1, 1, 1, false),
            };
            DimPlan {
                dim,
                class,
                start,
                lower: 1,
                upper,
                adjustable,
                step,
            }
        })
        .collect())
}

/// Order in which adjustable dimensions are grown. Shrinking uses the reverse.
///
/// Classes are visited core/core, core/slice, slice/slice, core/other,
/// slice/other. Inside a class, dimensions that are core under `now` come
/// first, then the rest; ties go to the lower index.
pub fn increase_order(inputs: &OptimizerInputs, dims: &[DimPlan]) -> Vec<usize> {
    let class_rank = |c: DimClass| match c {
        DimClass::CoreCore => 0,
        DimClass::CoreSlice => 1,
        DimClass::SliceSlice => 2,
        DimClass::CoreOther => 3,
        DimClass::SliceOther => 4,
        DimClass::OtherOther => 5,
    };
    let mut order: Vec<usize> = dims.iter().filter(|p| p.adjustable).map(|p| p.dim).collect();
    order.sort_by_key(|&d| (class_rank(dims[d].class), !inputs.now.is_core(d), d));
    order
}

pub fn explain(inputs: &OptimizerInputs) -> Result<Explanation, ChunkError> {
    let dims = initial_values(inputs)?;
    let mut chunk: Vec<usize> = dims.iter().map(|p| p.start).collect();
    let budget = inputs.budget as u128;
    let eb = inputs.element_bytes as u128;
    let mut order = increase_order(inputs, &dims);

    let others = |chunk: &[usize], j: usize| -> u128 {
        chunk
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != j)
            .map(|(_, &c)| c as u128)
            .product::<u128>()
            * eb
    };

    let direction = if inputs.bytes(&chunk) <= budget {
        for &j in &order {
            let p = &dims[j];
            let room = (budget / others(&chunk, j)).min(p.upper as u128) as usize;
            if room > chunk[j] {
                chunk[j] += (room - chunk[j]) / p.step * p.step;
            }
        }
        Direction::Increase
    } else {
        order.reverse();
        for &j in &order {
            if inputs.bytes(&chunk) <= budget {
                break;
            }
            let p = &dims[j];
            if p.class == DimClass::CoreCore {
                while chunk[j] > p.lower && inputs.bytes(&chunk) > budget {
                    chunk[j] = chunk[j].div_ceil(2);
                }
                continue;
            }
            let room = (budget / others(&chunk, j)) as usize;
            let floor = p.start - (p.start - p.lower) / p.step * p.step;
            chunk[j] = if room >= p.start {
                p.start
            } else if room < floor {
                floor
            } else {
                p.start - (p.start - room).div_ceil(p.step) * p.step
            };
        }
        // Stepped dims cannot always reach 1; finish with unit steps.
        for &j in &order {
            if inputs.bytes(&chunk) <= budget {
                break;
            }
            let room = (budget / others(&chunk, j)) as usize;
            chunk[j] = chunk[j].min(room.max(1));
        }
        if inputs.bytes(&chunk) > budget {
            chunk.iter_mut().for_each(|c| *c = 1);
        }
        Direction::Decrease
    };

    for (c, &d) in chunk.iter_mut().zip(&inputs.shape) {
        *c = (*c).clamp(1, d);
    }
    let plan = ChunkPlan {
        chunk_bytes: inputs.bytes(&chunk) as u64,
        chunk_shape: chunk,
    };
    Ok(Explanation {
        inputs: inputs.clone(),
        dims,
        direction,
        visit_order: order,
        plan,
    })
}

pub fn optimize_chunks(inputs: &OptimizerInputs) -> Result<ChunkPlan, ChunkError> {
    Ok(explain(inputs)?.plan)
}

/// Total chunks touched when `pattern` is read in batches of `m` frames.
pub fn chunk_cost(shape: &[usize], chunk_shape: &[usize], pattern: &Pattern, m: usize) -> Result<usize, ChunkError> {
    if shape.len() != chunk_shape.len() || chunk_shape.iter().zip(shape).any(|(&c, &s)| c == 0 || c > s) {
        return Err(ChunkError::ShapeMismatch(format!("chunk {chunk_shape:?} for shape {shape:?}")));
    }
    if m == 0 {
        return Err(ChunkError::InvalidInputs("batch size 0".into()));
    }
    pattern.validate(shape.len())?;
    let grid = ChunkGrid::new(shape, chunk_shape);
    let total = pattern.frame_count(shape);
    Ok((0..total)
        .step_by(m)
        .map(|start| batch_chunk_count(&grid, pattern, start, m))
        .sum())
}

/// Exhaustive search over every chunk shape within the budget, minimising
/// the summed `now` and `next` chunk cost at `m = frames`. Ties prefer more
/// bytes, then the lexicographically smallest shape.
pub fn brute_force_best(inputs: &OptimizerInputs, candidate_limit: u128) -> Result<ChunkPlan, ChunkError> {
    inputs.validate()?;
    let candidates: u128 = inputs.shape.iter().map(|&d| d as u128).product();
    if candidates > candidate_limit {
        return Err(ChunkError::TooLarge {
            candidates,
            limit: candidate_limit,
        });
    }
    let nd = inputs.shape.len();
    let mut chunk = vec![1usize; nd];
    let mut best: Option<(usize, u128, Vec<usize>)> = None;
    loop {
        let bytes = inputs.bytes(&chunk);
        if bytes <= inputs.budget as u128 {
            let cost = chunk_cost(&inputs.shape, &chunk, &inputs.now, inputs.frames)?
                + chunk_cost(&inputs.shape, &chunk, &inputs.next, inputs.frames)?;
            let better = match &best {
                None => true,
                Some((bc, bb, bs)) => (cost, std::cmp::Reverse(bytes), &chunk) < (*bc, std::cmp::Reverse(*bb), bs),
            };
            if better {
                best = Some((cost, bytes, chunk.clone()));
            }
        }
        // odometer over 1..=shape[d]
        let mut d = nd;
        loop {
            if d == 0 {
                let (_, bytes, shape) = best.expect("all-ones chunk is always within budget");
                return Ok(ChunkPlan {
                    chunk_shape: shape,
                    chunk_bytes: bytes as u64,
                });
            }
            d -= 1;
            if chunk[d] < inputs.shape[d] {
                chunk[d] += 1;
                break;
            }
            chunk[d] = 1;
        }
    }
}

impl fmt::Display for Explanation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let i = &self.inputs;
        writeln!(
            f,
            "shape {:?}, {} bytes/element, budget {} bytes",
            i.shape, i.element_bytes, i.budget
        )?;
        writeln!(
            f,
            "now  = {} core {:?} slice {:?}\nnext = {} core {:?} slice {:?}",
            i.now.name, i.now.core_dims, i.now.slice_dims, i.next.name, i.next.core_dims, i.next.slice_dims
        )?;
        writeln!(
            f,
            "frames/call {}, frames/worker now {} next {}",
            i.frames, i.frames_per_worker_now, i.frames_per_worker_next
        )?;
        writeln!(f, "{:>4}  {:<12} {:>6} {:>6} {:>6} {:>6}  {:>6}", "dim", "class", "start", "lower", "upper", "step", "final")?;
        for p in &self.dims {
            let (lower, upper, step) = if p.adjustable {
                (p.lower.to_string(), p.upper.to_string(), if p.class == DimClass::CoreCore { "1|/2".into() } else { p.step.to_string() })
            } else {
                ("-".into(), "-".into(), "-".into())
            };
            writeln!(
                f,
                "{:>4}  {:<12} {:>6} {:>6} {:>6} {:>6}  {:>6}",
                p.dim,
                p.class.to_string(),
                p.start,
                lower,
                upper,
                step,
                self.plan.chunk_shape[p.dim]
            )?;
        }
        let dir = match self.direction {
            Direction::Increase => "increase",
            Direction::Decrease => "decrease",
        };
        writeln!(f, "{dir} pass, visit order {:?}", self.visit_order)?;
        write!(f, "chunk {:?} = {} bytes", self.plan.chunk_shape, self.plan.chunk_bytes)
    }
}
