use std::ops::Range;

use super::plugin::Driver;
use super::EngineError;

/// Splits `[0, frame_count)` into `n_workers` contiguous ranges whose sizes
/// differ by at most one, larger ranges first. Also returns
/// `f_p = ceil(frame_count / n_workers)`.
pub fn partition_frames(frame_count: usize, n_workers: usize) -> (Vec<Range<usize>>, usize) {
    let n = n_workers.max(1);
    let base = frame_count / n;
    let extra = frame_count % n;
    let mut start = 0;
    let ranges = (0..n)
        .map(|w| {
            let len = base + usize::from(w < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect();
    (ranges, frame_count.div_ceil(n))
}

/// Number of workers that execute a plugin; they are always workers
/// `0..active`.
pub fn gate_workers(driver: Driver, n_workers: usize, n_accelerators: usize) -> Result<usize, EngineError> {
    match driver {
        Driver::Cpu => Ok(n_workers.max(1)),
        Driver::Accelerator if n_accelerators == 0 => Err(EngineError::NoAccelerators),
        Driver::Accelerator => Ok(n_workers.max(1).min(n_accelerators)),
    }
}
