//! Block compressed-row storage.
//!
//! A [`BlockMatrix`] is a square sparse matrix whose nonzeros are dense
//! `b × b` blocks. The sparsity pattern is kept as two contiguous arrays
//! (row pointers and column indices) and the block values as one contiguous
//! array of `nnz · b²` reals, in one of three [`Layout`]s.

use std::borrow::Cow;

use rayon::prelude::*;

use crate::dense;
use crate::{Error, Result};

/// Rows per rayon task in [`spmv`].
const SPMV_ROW_CHUNK: usize = 256;

/// Block-level sparsity pattern in compressed-row form.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SparsityPattern {
    row_pointers: Vec<usize>,
    column_indices: Vec<usize>,
}

impl SparsityPattern {
    /// Build a pattern from raw arrays, checking every structural invariant.
    /// A missing diagonal is not an error here.
    pub fn new(row_pointers: Vec<usize>, column_indices: Vec<usize>) -> Result<Self> {
        if row_pointers.first() != Some(&0) {
            return Err(Error::InvalidPattern("row_pointers must start at 0".into()));
        }
        let nb = row_pointers.len() - 1;
        if row_pointers[nb] != column_indices.len() {
            return Err(Error::InvalidPattern(format!(
                "row_pointers end at {} but there are {} column indices",
                row_pointers[nb],
                column_indices.len()
            )));
        }
        if let Some(i) = row_pointers.windows(2).position(|w| w[0] > w[1]) {
            return Err(Error::InvalidPattern(format!(
                "row_pointers decrease at row {i}"
            )));
        }
        for i in 0..nb {
            let (start, end) = (row_pointers[i], row_pointers[i + 1]);
            let cols = &column_indices[start..end];
            for (k, &c) in cols.iter().enumerate() {
                if c >= nb {
                    return Err(Error::IndexOutOfRange {
                        row: i,
                        col: c,
                        num_rows: nb,
                    });
                }
                if k > 0 && cols[k - 1] >= c {
                    return Err(Error::InvalidPattern(format!(
                        "column indices of row {i} are not strictly increasing"
                    )));
                }
            }
        }
        Ok(SparsityPattern {
            row_pointers,
            column_indices,
        })
    }

    /// Only for callers that construct arrays which are valid by construction.
    pub(crate) fn from_parts_unchecked(
        row_pointers: Vec<usize>,
        column_indices: Vec<usize>,
    ) -> Self {
        debug_assert!(SparsityPattern::new(row_pointers.clone(), column_indices.clone()).is_ok());
        SparsityPattern {
            row_pointers,
            column_indices,
        }
    }

    pub fn diagonal(num_block_rows: usize) -> Self {
        SparsityPattern {
            row_pointers: (0..=num_block_rows).collect(),
            column_indices: (0..num_block_rows).collect(),
        }
    }

    pub fn num_block_rows(&self) -> usize {
        self.row_pointers.len() - 1
    }

    /// Number of stored blocks.
    pub fn nnz(&self) -> usize {
        self.column_indices.len()
    }

    pub fn row_pointers(&self) -> &[usize] {
        &self.row_pointers
    }

    pub fn column_indices(&self) -> &[usize] {
        &self.column_indices
    }

    pub fn row_range(&self, row: usize) -> std::ops::Range<usize> {
        self.row_pointers[row]..self.row_pointers[row + 1]
    }

    /// Column indices of one block row.
    pub fn row(&self, row: usize) -> &[usize] {
        &self.column_indices[self.row_range(row)]
    }

    /// Position of block `(row, col)` in the nonzero array.
    pub fn find(&self, row: usize, col: usize) -> Option<usize> {
        let range = self.row_range(row);
        let start = range.start;
        self.column_indices[range]
            .binary_search(&col)
            .ok()
            .map(|k| start + k)
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.find(row, col).is_some()
    }

    /// All `(row, col)` coordinates in storage order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_block_rows()).flat_map(move |i| self.row(i).iter().map(move |&j| (i, j)))
    }

    /// Nonzero position of each row's diagonal block.
    pub fn diagonal_positions(&self) -> Result<Vec<usize>> {
        (0..self.num_block_rows())
            .map(|i| self.find(i, i).ok_or(Error::MissingDiagonal(i)))
            .collect()
    }

    /// Whether `(i, j)` present implies `(j, i)` present.
    pub fn is_structurally_symmetric(&self) -> bool {
        self.entries().all(|(i, j)| self.contains(j, i))
    }

    /// Undirected adjacency lists (off-diagonal, sorted, deduplicated).
    pub fn symmetrized_adjacency(&self) -> Vec<Vec<usize>> {
        let nb = self.num_block_rows();
        let mut adj = vec![Vec::new(); nb];
        for (i, j) in self.entries() {
            if i != j {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        adj
    }
}

/// Build a pattern from block coordinates. Input need not be sorted.
pub fn extract_pattern<I>(num_block_rows: usize, entries: I) -> Result<SparsityPattern>
where
    I: IntoIterator<Item = (usize, usize)>,
{
    let mut coords: Vec<(usize, usize)> = entries.into_iter().collect();
    for &(row, col) in &coords {
        if row >= num_block_rows || col >= num_block_rows {
            return Err(Error::IndexOutOfRange {
                row,
                col,
                num_rows: num_block_rows,
            });
        }
    }
    coords.sort_unstable();
    if let Some(w) = coords.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::DuplicateEntry {
            row: w[0].0,
            col: w[0].1,
        });
    }
    let mut row_pointers = vec![0; num_block_rows + 1];
    for &(row, _) in &coords {
        row_pointers[row + 1] += 1;
    }
    for i in 0..num_block_rows {
        row_pointers[i + 1] += row_pointers[i];
    }
    let column_indices = coords.into_iter().map(|(_, c)| c).collect();
    Ok(SparsityPattern {
        row_pointers,
        column_indices,
    })
}

/// Arrangement of scalar values inside the nonzero array.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum Layout {
    /// Each block contiguous and row-major (Dune/OPM `BCRSMatrix`).
    #[default]
    BlockRowMajor,
    /// Each block row stored as one dense row-major strip spanning all its
    /// blocks (amgcl-style).
    FlatRowMajor,
    /// Each block contiguous and column-major (rocalution-style).
    BlockColMajor,
}

impl Layout {
    pub const ALL: [Layout; 3] = [
        Layout::BlockRowMajor,
        Layout::FlatRowMajor,
        Layout::BlockColMajor,
    ];
}

/// Row-major copy of one block, independent of the source layout.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockView {
    pub row: usize,
    pub col: usize,
    pub entries: Vec<f64>,
}

/// Square block-sparse matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockMatrix {
    pattern: SparsityPattern,
    block_size: usize,
    values: Vec<f64>,
    layout: Layout,
}

impl BlockMatrix {
    pub fn new(
        pattern: SparsityPattern,
        block_size: usize,
        values: Vec<f64>,
        layout: Layout,
    ) -> Result<Self> {
        if block_size == 0 {
            return Err(Error::shape("block size must be at least 1"));
        }
        let expected = pattern.nnz() * block_size * block_size;
        if values.len() != expected {
            return Err(Error::shape(format!(
                "{} values supplied, pattern with {} blocks of size {} needs {}",
                values.len(),
                pattern.nnz(),
                block_size,
                expected
            )));
        }
        Ok(BlockMatrix {
            pattern,
            block_size,
            values,
            layout,
        })
    }

    pub fn zeros(pattern: SparsityPattern, block_size: usize) -> Self {
        let len = pattern.nnz() * block_size * block_size;
        BlockMatrix {
            pattern,
            block_size,
            values: vec![0.0; len],
            layout: Layout::BlockRowMajor,
        }
    }

    pub fn identity(num_block_rows: usize, block_size: usize) -> Self {
        let mut m = BlockMatrix::zeros(SparsityPattern::diagonal(num_block_rows), block_size);
        for k in 0..num_block_rows {
            let blk = m.block_mut(k);
            for d in 0..block_size {
                blk[d * block_size + d] = 1.0;
            }
        }
        m
    }

    /// Assemble from `(row, col, block)` triplets, each block row-major.
    pub fn from_blocks<I>(num_block_rows: usize, block_size: usize, blocks: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, Vec<f64>)>,
    {
        let bb = block_size * block_size;
        let mut blocks: Vec<(usize, usize, Vec<f64>)> = blocks.into_iter().collect();
        for (_, _, blk) in &blocks {
            if blk.len() != bb {
                return Err(Error::shape(format!(
                    "block of {} values given for block size {block_size}",
                    blk.len()
                )));
            }
        }
        let pattern = extract_pattern(num_block_rows, blocks.iter().map(|(r, c, _)| (*r, *c)))?;
        blocks.sort_unstable_by_key(|(r, c, _)| (*r, *c));
        let values = blocks.into_iter().flat_map(|(_, _, b)| b).collect();
        BlockMatrix::new(pattern, block_size, values, Layout::BlockRowMajor)
    }

    pub fn pattern(&self) -> &SparsityPattern {
        &self.pattern
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_parts(self) -> (SparsityPattern, usize, Vec<f64>, Layout) {
        (self.pattern, self.block_size, self.values, self.layout)
    }

    pub fn num_block_rows(&self) -> usize {
        self.pattern.num_block_rows()
    }

    /// Scalar dimension.
    pub fn dim(&self) -> usize {
        self.num_block_rows() * self.block_size
    }

    pub fn nnz_blocks(&self) -> usize {
        self.pattern.nnz()
    }

    /// Contiguous storage of nonzero block `k`. Only meaningful in the two
    /// block-contiguous layouts.
    pub fn block(&self, k: usize) -> &[f64] {
        debug_assert!(self.layout != Layout::FlatRowMajor);
        let bb = self.block_size * self.block_size;
        &self.values[k * bb..(k + 1) * bb]
    }

    pub fn block_mut(&mut self, k: usize) -> &mut [f64] {
        debug_assert!(self.layout != Layout::FlatRowMajor);
        let bb = self.block_size * self.block_size;
        &mut self.values[k * bb..(k + 1) * bb]
    }

    /// Flat index of local entry `(r, c)` of nonzero block `k` (which lies in
    /// block row `row`) under `layout`.
    fn flat_index(&self, layout: Layout, row: usize, k: usize, r: usize, c: usize) -> usize {
        let b = self.block_size;
        match layout {
            Layout::BlockRowMajor => k * b * b + r * b + c,
            Layout::BlockColMajor => k * b * b + c * b + r,
            Layout::FlatRowMajor => {
                let range = self.pattern.row_range(row);
                let width = range.len() * b;
                range.start * b * b + r * width + (k - range.start) * b + c
            }
        }
    }

    /// Row-major copy of nonzero block `k`.
    pub fn view(&self, k: usize) -> BlockView {
        let row = self
            .pattern
            .row_pointers
            .partition_point(|&p| p <= k)
            .saturating_sub(1);
        let b = self.block_size;
        let mut entries = vec![0.0; b * b];
        for r in 0..b {
            for c in 0..b {
                entries[r * b + c] = self.values[self.flat_index(self.layout, row, k, r, c)];
            }
        }
        BlockView {
            row,
            col: self.pattern.column_indices[k],
            entries,
        }
    }

    /// Iterate all blocks as layout-independent views.
    pub fn views(&self) -> impl Iterator<Item = BlockView> + '_ {
        (0..self.nnz_blocks()).map(move |k| self.view(k))
    }

    /// Same operator with values rearranged into `target`.
    pub fn convert_layout(&self, target: Layout) -> BlockMatrix {
        if target == self.layout {
            return self.clone();
        }
        let b = self.block_size;
        let mut values = vec![0.0; self.values.len()];
        for row in 0..self.num_block_rows() {
            for k in self.pattern.row_range(row) {
                for r in 0..b {
                    for c in 0..b {
                        values[self.flat_index(target, row, k, r, c)] =
                            self.values[self.flat_index(self.layout, row, k, r, c)];
                    }
                }
            }
        }
        BlockMatrix {
            pattern: self.pattern.clone(),
            block_size: b,
            values,
            layout: target,
        }
    }

    /// Borrow in block-row-major layout, converting only if necessary.
    pub fn as_block_row_major(&self) -> Cow<'_, BlockMatrix> {
        match self.layout {
            Layout::BlockRowMajor => Cow::Borrowed(self),
            _ => Cow::Owned(self.convert_layout(Layout::BlockRowMajor)),
        }
    }

    /// Dense row-major `dim × dim` copy.
    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.dim();
        let b = self.block_size;
        let mut dense = vec![0.0; n * n];
        for v in self.views() {
            for r in 0..b {
                for c in 0..b {
                    dense[(v.row * b + r) * n + v.col * b + c] = v.entries[r * b + c];
                }
            }
        }
        dense
    }

    /// Frobenius norm of block `(row, col)`, or 0 if absent.
    pub fn block_norm(&self, row: usize, col: usize) -> f64 {
        match self.pattern.find(row, col) {
            Some(k) => self
                .view(k)
                .entries
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt(),
            None => 0.0,
        }
    }
}

/// Dense vector of `b`-element blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockVector {
    block_size: usize,
    data: Vec<f64>,
}

impl BlockVector {
    pub fn new(block_size: usize, data: Vec<f64>) -> Result<Self> {
        if block_size == 0 {
            return Err(Error::shape("block size must be at least 1"));
        }
        if !data.len().is_multiple_of(block_size) {
            return Err(Error::shape(format!(
                "{} entries do not form blocks of size {block_size}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::shape(format!("entry {pos} is not finite")));
        }
        Ok(BlockVector { block_size, data })
    }

    pub fn zeros(num_blocks: usize, block_size: usize) -> Self {
        BlockVector {
            block_size,
            data: vec![0.0; num_blocks * block_size],
        }
    }

    pub fn from_fn(num_blocks: usize, block_size: usize, f: impl FnMut(usize) -> f64) -> Self {
        BlockVector {
            block_size,
            data: (0..num_blocks * block_size).map(f).collect(),
        }
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn num_blocks(&self) -> usize {
        self.data.len() / self.block_size
    }

    /// Scalar length.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn block(&self, i: usize) -> &[f64] {
        &self.data[i * self.block_size..(i + 1) * self.block_size]
    }

    pub fn block_mut(&mut self, i: usize) -> &mut [f64] {
        let b = self.block_size;
        &mut self.data[i * b..(i + 1) * b]
    }

    pub fn same_shape(&self, other: &BlockVector) -> bool {
        self.block_size == other.block_size && self.data.len() == other.data.len()
    }
}

fn check_operand(a: &BlockMatrix, x: &BlockVector, what: &str) -> Result<()> {
    if a.block_size() != x.block_size() || a.dim() != x.len() {
        return Err(Error::shape(format!(
            "{what}: matrix is {} blocks of size {}, vector has {} entries in blocks of {}",
            a.num_block_rows(),
            a.block_size(),
            x.len(),
            x.block_size()
        )));
    }
    Ok(())
}

/// `y = A·x`.
pub fn spmv(a: &BlockMatrix, x: &BlockVector) -> Result<BlockVector> {
    let mut y = BlockVector::zeros(a.num_block_rows(), a.block_size());
    spmv_into(a, x, &mut y)?;
    Ok(y)
}

/// `y = A·x` into an existing vector. Rows are independent, so the result
/// does not depend on how rows are spread over workers.
pub fn spmv_into(a: &BlockMatrix, x: &BlockVector, y: &mut BlockVector) -> Result<()> {
    check_operand(a, x, "spmv")?;
    check_operand(a, y, "spmv output")?;
    let a = a.as_block_row_major();
    let b = a.block_size();
    let rows_per_task = SPMV_ROW_CHUNK;
    y.data
        .par_chunks_mut(rows_per_task * b)
        .enumerate()
        .for_each(|(chunk, out)| {
            let first = chunk * rows_per_task;
            for (local, yi) in out.chunks_mut(b).enumerate() {
                yi.iter_mut().for_each(|v| *v = 0.0);
                let row = first + local;
                for k in a.pattern.row_range(row) {
                    let j = a.pattern.column_indices[k];
                    dense::matvec_add(a.block(k), x.block(j), yi, b, b);
                }
            }
        });
    Ok(())
}

/// `b − A·x`.
pub fn residual(a: &BlockMatrix, x: &BlockVector, b: &BlockVector) -> Result<BlockVector> {
    check_operand(a, b, "residual")?;
    let mut r = spmv(a, x)?;
    for (ri, bi) in r.data.iter_mut().zip(&b.data) {
        *ri = bi - *ri;
    }
    Ok(r)
}
