use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Read;
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use ndarray::{ArrayD, ArrayViewD, IxDyn};

use crate::model::{DType, DatasetDescriptor, ModelError, Pattern};
use crate::scalar::Scalar;

use super::grid::ChunkGrid;
use super::header::ContainerHeader;
use super::StorageError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpenMode {
    Read,
    ReadWrite,
}

/// Chunk-level I/O counts for one container handle.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct IoStats {
    pub chunks_read: u64,
    pub chunks_written: u64,
}

impl std::ops::AddAssign for IoStats {
    fn add_assign(&mut self, rhs: Self) {
        self.chunks_read += rhs.chunks_read;
        self.chunks_written += rhs.chunks_written;
    }
}

/// Open chunked container.
///
/// Chunk `k` (row-major over the chunk grid) always lives at
/// `data_start + k * chunk_bytes`; its index slot holds that offset once the
/// chunk has been written and 0 before. Reads and writes use positional I/O,
/// so a handle can be shared between threads. Writers touching the same chunk
/// are serialised by a per-chunk lock.
#[derive(Debug)]
pub struct Container {
    path: PathBuf,
    header: ContainerHeader,
    grid: ChunkGrid,
    file: File,
    mode: OpenMode,
    index_start: u64,
    data_start: u64,
    index: Vec<AtomicU64>,
    locks: Vec<Mutex<()>>,
    chunks_read: AtomicU64,
    chunks_written: AtomicU64,
}

impl Container {
    pub fn create(path: impl AsRef<Path>, descriptor: &DatasetDescriptor, chunk_shape: &[usize]) -> Result<Self, StorageError> {
        let header = ContainerHeader::new(descriptor, chunk_shape)?;
        let encoded = header.encode()?;
        let grid = ChunkGrid::new(&header.shape, &header.chunk_shape);
        let mut bytes = encoded;
        let index_start = bytes.len() as u64;
        bytes.resize(bytes.len() + 8 * grid.num_chunks(), 0);
        let file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(true)
            .open(path.as_ref())?;
        file.write_all_at(&bytes, 0)?;
        Ok(Self::assemble(path.as_ref(), header, grid, file, OpenMode::ReadWrite, index_start, vec![0; 0]))
    }

    pub fn open(path: impl AsRef<Path>, mode: OpenMode) -> Result<Self, StorageError> {
        let mut file = OpenOptions::new()
            .read(true)
            .write(mode == OpenMode::ReadWrite)
            .open(path.as_ref())?;
        let (header, header_len) = read_header_from(&mut file)?;
        let grid = ChunkGrid::new(&header.shape, &header.chunk_shape);
        let mut raw = vec![0u8; 8 * grid.num_chunks()];
        file.read_exact_at(&mut raw, header_len as u64)
            .map_err(|_| StorageError::CorruptHeader("truncated chunk index".into()))?;
        let offsets = raw.chunks_exact(8).map(|b| u64::from_le_bytes(b.try_into().unwrap())).collect();
        Ok(Self::assemble(path.as_ref(), header, grid, file, mode, header_len as u64, offsets))
    }

    /// Reads only the header; no chunk payload is touched.
    pub fn read_header(path: impl AsRef<Path>) -> Result<ContainerHeader, StorageError> {
        let mut file = File::open(path.as_ref())?;
        Ok(read_header_from(&mut file)?.0)
    }

    fn assemble(
        path: &Path,
        header: ContainerHeader,
        grid: ChunkGrid,
        file: File,
        mode: OpenMode,
        index_start: u64,
        offsets: Vec<u64>,
    ) -> Self {
        let n = grid.num_chunks();
        let index = if offsets.is_empty() {
            (0..n).map(|_| AtomicU64::new(0)).collect()
        } else {
            offsets.into_iter().map(AtomicU64::new).collect()
        };
        Container {
            path: path.to_path_buf(),
            data_start: index_start + 8 * n as u64,
            header,
            grid,
            file,
            mode,
            index_start,
            index,
            locks: (0..n).map(|_| Mutex::new(())).collect(),
            chunks_read: AtomicU64::new(0),
            chunks_written: AtomicU64::new(0),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn header(&self) -> &ContainerHeader {
        &self.header
    }

    pub fn descriptor(&self) -> DatasetDescriptor {
        self.header.descriptor()
    }

    pub fn shape(&self) -> &[usize] {
        &self.header.shape
    }

    pub fn chunk_shape(&self) -> &[usize] {
        &self.header.chunk_shape
    }

    pub fn grid(&self) -> &ChunkGrid {
        &self.grid
    }

    pub fn mode(&self) -> OpenMode {
        self.mode
    }

    pub fn stats(&self) -> IoStats {
        IoStats {
            chunks_read: self.chunks_read.load(Ordering::Relaxed),
            chunks_written: self.chunks_written.load(Ordering::Relaxed),
        }
    }

    pub fn chunk_written(&self, linear: usize) -> bool {
        self.index[linear].load(Ordering::Acquire) != 0
    }

    fn pattern(&self, name: &str) -> Result<&Pattern, StorageError> {
        self.header.pattern(name).ok_or_else(|| {
            StorageError::Model(ModelError::UnknownPattern {
                dataset: self.header.name.clone(),
                pattern: name.to_string(),
            })
        })
    }

    /// Reads `count` frames of the named pattern starting at `start_ordinal`.
    /// See [`Container::read_frames_with`].
    pub fn read_frames<T: Scalar>(
        &self,
        pattern_name: &str,
        start_ordinal: usize,
        count: usize,
        padding: &[usize],
    ) -> Result<ArrayD<T>, StorageError> {
        let pattern = self.pattern(pattern_name)?.clone();
        self.read_frames_with(&pattern, start_ordinal, count, padding)
    }

    /// Reads a batch of frames.
    ///
    /// The block has shape `[m, (2p+1) per padded slice dim..., core extents...]`
    /// where `m` is `count` clipped to the frames remaining, padded slice
    /// dimensions appear in `slice_dims` order and core dimensions in
    /// `core_dims` order. Pads past the array boundary replicate the edge.
    pub fn read_frames_with<T: Scalar>(
        &self,
        pattern: &Pattern,
        start_ordinal: usize,
        count: usize,
        padding: &[usize],
    ) -> Result<ArrayD<T>, StorageError> {
        let shape = &self.header.shape;
        pattern.validate(shape.len())?;
        let total = pattern.frame_count(shape);
        if start_ordinal >= total {
            return Err(ModelError::OrdinalOutOfRange { ordinal: start_ordinal, count: total }.into());
        }
        let m = count.min(total - start_ordinal);
        let pads: Vec<usize> = if padding.is_empty() { vec![0; shape.len()] } else { padding.to_vec() };
        if pads.len() != shape.len() || pattern.core_dims.iter().any(|&d| pads[d] != 0) {
            return Err(StorageError::ShapeMismatch(format!(
                "padding {padding:?} invalid for pattern '{}'",
                pattern.name
            )));
        }
        let padded: Vec<usize> = pattern.slice_dims.iter().copied().filter(|&d| pads[d] > 0).collect();

        let mut block_shape = vec![m];
        block_shape.extend(padded.iter().map(|&d| 2 * pads[d] + 1));
        block_shape.extend(pattern.core_shape(shape));

        let mut lines = Vec::new();
        let window: Vec<usize> = padded.iter().map(|&d| 2 * pads[d] + 1).collect();
        let n_window: usize = window.iter().product();
        for ordinal in start_ordinal..start_ordinal + m {
            let coords = pattern.frame_coords(shape, ordinal)?;
            let mut base = vec![0usize; shape.len()];
            for (&d, &c) in pattern.slice_dims.iter().zip(&coords) {
                base[d] = c;
            }
            for w in 0..n_window {
                let mut line = base.clone();
                let mut rest = w;
                // last padded dim varies fastest inside the window block
                for (k, &d) in padded.iter().enumerate().rev() {
                    let off = rest % window[k];
                    rest /= window[k];
                    let pos = base[d] as isize + off as isize - pads[d] as isize;
                    line[d] = pos.clamp(0, shape[d] as isize - 1) as usize;
                }
                lines.push(line);
            }
        }
        let data = self.gather::<T>(&pattern.core_dims, &lines)?;
        Ok(ArrayD::from_shape_vec(IxDyn(&block_shape), data).expect("block shape matches gathered length"))
    }

    /// Writes frames `[start_ordinal, start_ordinal + m)` from a block of
    /// shape `[m, core extents...]`.
    pub fn write_frames<T: Scalar>(&self, pattern_name: &str, start_ordinal: usize, block: ArrayViewD<'_, T>) -> Result<(), StorageError> {
        let pattern = self.pattern(pattern_name)?.clone();
        self.write_frames_with(&pattern, start_ordinal, block)
    }

    pub fn write_frames_with<T: Scalar>(&self, pattern: &Pattern, start_ordinal: usize, block: ArrayViewD<'_, T>) -> Result<(), StorageError> {
        let shape = &self.header.shape;
        pattern.validate(shape.len())?;
        let total = pattern.frame_count(shape);
        let core = pattern.core_shape(shape);
        if block.ndim() != core.len() + 1 || block.shape()[1..] != core[..] || block.shape()[0] == 0 {
            return Err(StorageError::ShapeMismatch(format!(
                "block {:?} does not match [m, {:?}] for pattern '{}'",
                block.shape(),
                core,
                pattern.name
            )));
        }
        let m = block.shape()[0];
        if start_ordinal + m > total {
            return Err(ModelError::OrdinalOutOfRange { ordinal: start_ordinal + m - 1, count: total }.into());
        }
        let mut lines = Vec::with_capacity(m);
        for ordinal in start_ordinal..start_ordinal + m {
            let coords = pattern.frame_coords(shape, ordinal)?;
            let mut line = vec![0usize; shape.len()];
            for (&d, &c) in pattern.slice_dims.iter().zip(&coords) {
                line[d] = c;
            }
            lines.push(line);
        }
        let values: Vec<T> = block.iter().copied().collect();
        self.scatter(&pattern.core_dims, &lines, &values)
    }

    pub fn read_all<T: Scalar>(&self) -> Result<ArrayD<T>, StorageError> {
        let dims: Vec<usize> = (0..self.header.shape.len()).collect();
        let data = self.gather::<T>(&dims, &[vec![0; dims.len()]])?;
        Ok(ArrayD::from_shape_vec(IxDyn(&self.header.shape), data).expect("full shape"))
    }

    pub fn write_all<T: Scalar>(&self, array: ArrayViewD<'_, T>) -> Result<(), StorageError> {
        if array.shape() != &self.header.shape[..] {
            return Err(StorageError::ShapeMismatch(format!(
                "array {:?} vs container {:?}",
                array.shape(),
                self.header.shape
            )));
        }
        let dims: Vec<usize> = (0..self.header.shape.len()).collect();
        let values: Vec<T> = array.iter().copied().collect();
        self.scatter(&dims, &[vec![0; dims.len()]], &values)
    }

    /// Element addressing for a set of "lines": each line fixes every
    /// non-core coordinate and spans the full extent of `core_dims`.
    /// Yields `(chunk, offset_in_chunk)` per element, lines in order and core
    /// elements row-major in `core_dims` order.
    fn addresses(&self, core_dims: &[usize], lines: &[Vec<usize>], mut f: impl FnMut(usize, usize)) {
        let chunk = self.grid.chunk_shape();
        let gstr = self.grid.grid_strides();
        let cstr = self.grid.chunk_strides();
        let shape = &self.header.shape;
        // per core axis and index: (chunk id contribution, in-chunk offset contribution)
        let axis_tables: Vec<Vec<(usize, usize)>> = core_dims
            .iter()
            .map(|&d| {
                (0..shape[d])
                    .map(|i| ((i / chunk[d]) * gstr[d], (i % chunk[d]) * cstr[d]))
                    .collect()
            })
            .collect();
        let core_extents: Vec<usize> = core_dims.iter().map(|&d| shape[d]).collect();
        let n_core: usize = core_extents.iter().product();
        let k = core_dims.len();
        for line in lines {
            let mut base_chunk = 0;
            let mut base_off = 0;
            for d in 0..shape.len() {
                if !core_dims.contains(&d) {
                    base_chunk += (line[d] / chunk[d]) * gstr[d];
                    base_off += (line[d] % chunk[d]) * cstr[d];
                }
            }
            if k == 0 {
                f(base_chunk, base_off);
                continue;
            }
            let mut idx = vec![0usize; k];
            for _ in 0..n_core {
                let mut c = base_chunk;
                let mut o = base_off;
                for a in 0..k {
                    let (dc, doff) = axis_tables[a][idx[a]];
                    c += dc;
                    o += doff;
                }
                f(c, o);
                for a in (0..k).rev() {
                    idx[a] += 1;
                    if idx[a] < core_extents[a] {
                        break;
                    }
                    idx[a] = 0;
                }
            }
        }
    }

    fn gather<T: Scalar>(&self, core_dims: &[usize], lines: &[Vec<usize>]) -> Result<Vec<T>, StorageError> {
        let mut addrs = Vec::new();
        self.addresses(core_dims, lines, |c, o| addrs.push((c, o)));

        let mut slots: HashMap<usize, usize> = HashMap::new();
        let mut chunks: Vec<Vec<T>> = Vec::new();
        let mut out = Vec::with_capacity(addrs.len());
        let mut last = (usize::MAX, 0);
        for (c, o) in addrs {
            let slot = if last.0 == c {
                last.1
            } else {
                let slot = match slots.get(&c) {
                    Some(&s) => s,
                    None => {
                        chunks.push(self.load_chunk(c)?);
                        slots.insert(c, chunks.len() - 1);
                        chunks.len() - 1
                    }
                };
                last = (c, slot);
                slot
            };
            out.push(chunks[slot][o]);
        }
        self.chunks_read.fetch_add(chunks.len() as u64, Ordering::Relaxed);
        Ok(out)
    }

    fn scatter<T: Scalar>(&self, core_dims: &[usize], lines: &[Vec<usize>], values: &[T]) -> Result<(), StorageError> {
        if self.mode != OpenMode::ReadWrite {
            return Err(StorageError::ReadOnly(self.path.clone()));
        }
        let mut per_chunk: HashMap<usize, Vec<(usize, T)>> = HashMap::new();
        let mut i = 0;
        self.addresses(core_dims, lines, |c, o| {
            per_chunk.entry(c).or_default().push((o, values[i]));
            i += 1;
        });
        debug_assert_eq!(i, values.len());
        let mut ids: Vec<usize> = per_chunk.keys().copied().collect();
        ids.sort_unstable();
        for id in ids {
            let updates = &per_chunk[&id];
            let _guard = self.locks[id].lock().unwrap_or_else(|e| e.into_inner());
            let mut data = if updates.len() == self.grid.valid_elements(id) {
                vec![T::zero(); self.grid.chunk_elements()]
            } else {
                self.load_chunk::<T>(id)?
            };
            for &(o, v) in updates {
                data[o] = v;
            }
            self.store_chunk(id, &data)?;
        }
        self.chunks_written.fetch_add(per_chunk.len() as u64, Ordering::Relaxed);
        Ok(())
    }

    fn chunk_bytes(&self) -> usize {
        self.grid.chunk_elements() * self.header.dtype.byte_size()
    }

    fn slot_offset(&self, id: usize) -> u64 {
        self.data_start + (id * self.chunk_bytes()) as u64
    }

    fn load_chunk<T: Scalar>(&self, id: usize) -> Result<Vec<T>, StorageError> {
        let n = self.grid.chunk_elements();
        let offset = self.index[id].load(Ordering::Acquire);
        if offset == 0 {
            return Ok(vec![T::zero(); n]);
        }
        let mut raw = vec![0u8; self.chunk_bytes()];
        self.file.read_exact_at(&mut raw, offset)?;
        Ok(decode(self.header.dtype, &raw))
    }

    fn store_chunk<T: Scalar>(&self, id: usize, data: &[T]) -> Result<(), StorageError> {
        let offset = self.slot_offset(id);
        self.file.write_all_at(&encode(self.header.dtype, data), offset)?;
        if self.index[id].load(Ordering::Acquire) == 0 {
            self.file
                .write_all_at(&offset.to_le_bytes(), self.index_start + 8 * id as u64)?;
            self.index[id].store(offset, Ordering::Release);
        }
        Ok(())
    }
}

fn read_header_from(file: &mut File) -> Result<(ContainerHeader, usize), StorageError> {
    // headers are a few hundred bytes; 1 MiB bounds the read on garbage input
    let mut buf = Vec::new();
    file.take(1 << 20).read_to_end(&mut buf)?;
    ContainerHeader::decode(&buf)
}

pub(crate) fn decode<T: Scalar>(dtype: DType, raw: &[u8]) -> Vec<T> {
    match dtype {
        DType::U16 => raw
            .chunks_exact(2)
            .map(|b| T::of(u16::from_le_bytes([b[0], b[1]]) as f64))
            .collect(),
        DType::F32 => raw
            .chunks_exact(4)
            .map(|b| T::from_f32(f32::from_le_bytes(b.try_into().unwrap())).unwrap_or_else(T::nan))
            .collect(),
        DType::F64 => raw
            .chunks_exact(8)
            .map(|b| T::of(f64::from_le_bytes(b.try_into().unwrap())))
            .collect(),
    }
}

pub(crate) fn encode<T: Scalar>(dtype: DType, data: &[T]) -> Vec<u8> {
    let mut out = Vec::with_capacity(data.len() * dtype.byte_size());
    match dtype {
        DType::U16 => {
            for v in data {
                let x = v.as_f64();
                let q = if x.is_nan() { 0.0 } else { x.round().clamp(0.0, u16::MAX as f64) };
                out.extend_from_slice(&(q as u16).to_le_bytes());
            }
        }
        DType::F32 => {
            for v in data {
                out.extend_from_slice(&v.to_f32().unwrap_or(f32::NAN).to_le_bytes());
            }
        }
        DType::F64 => {
            for v in data {
                out.extend_from_slice(&v.as_f64().to_le_bytes());
            }
        }
    }
    out
}

/// Number of distinct chunks a frame batch touches, computed from chunk
/// coordinates alone (no I/O).
pub fn batch_chunk_count(grid: &ChunkGrid, pattern: &Pattern, start: usize, count: usize) -> usize {
    let shape = grid.shape();
    let chunk = grid.chunk_shape();
    let core_factor: usize = pattern.core_dims.iter().map(|&d| grid.grid_shape()[d]).product();
    let total = pattern.frame_count(shape);
    let end = (start + count).min(total);
    let mut seen = std::collections::HashSet::new();
    for ordinal in start..end {
        let coords = pattern.frame_coords(shape, ordinal).expect("ordinal in range");
        let key: Vec<usize> = pattern
            .slice_dims
            .iter()
            .zip(&coords)
            .map(|(&d, &c)| c / chunk[d])
            .collect();
        seen.insert(key);
    }
    seen.len() * core_factor
}
