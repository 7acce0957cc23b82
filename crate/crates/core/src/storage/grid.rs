/// Regular chunk grid over an N-dimensional array.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkGrid {
    shape: Vec<usize>,
    chunk: Vec<usize>,
    grid: Vec<usize>,
}

impl ChunkGrid {
    /// Callers guarantee `1 <= chunk[i] <= shape[i]`.
    pub fn new(shape: &[usize], chunk: &[usize]) -> Self {
        debug_assert_eq!(shape.len(), chunk.len());
        let grid = shape.iter().zip(chunk).map(|(&s, &c)| s.div_ceil(c)).collect();
        ChunkGrid {
            shape: shape.to_vec(),
            chunk: chunk.to_vec(),
            grid,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn chunk_shape(&self) -> &[usize] {
        &self.chunk
    }

    /// Chunks per dimension.
    pub fn grid_shape(&self) -> &[usize] {
        &self.grid
    }

    pub fn num_chunks(&self) -> usize {
        self.grid.iter().product()
    }

    /// Elements per stored chunk (edge chunks are stored full size).
    pub fn chunk_elements(&self) -> usize {
        self.chunk.iter().product()
    }

    /// Row-major strides over the chunk grid.
    pub fn grid_strides(&self) -> Vec<usize> {
        row_major_strides(&self.grid)
    }

    /// Row-major strides within one chunk.
    pub fn chunk_strides(&self) -> Vec<usize> {
        row_major_strides(&self.chunk)
    }

    /// In-bounds element count of the chunk at `linear`.
    pub fn valid_elements(&self, linear: usize) -> usize {
        let mut rest = linear;
        let mut n = 1;
        for d in (0..self.grid.len()).rev() {
            let g = rest % self.grid[d];
            rest /= self.grid[d];
            n *= self.chunk[d].min(self.shape[d] - g * self.chunk[d]);
        }
        n
    }
}

pub(crate) fn row_major_strides(extents: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; extents.len()];
    for d in (0..extents.len().saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * extents[d + 1];
    }
    strides
}
