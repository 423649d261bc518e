//! Parallelism extraction for the ILU0 phases.
//!
//! A [`ParallelPlan`] groups block rows so that rows in one group can be
//! processed at the same time, and carries the row permutation that makes
//! each group a contiguous range. Level scheduling keeps every dependency of
//! the sequential algorithm; graph coloring only separates directly coupled
//! rows and so changes the factorization it leads to.

use crate::blockcore::{BlockMatrix, BlockVector, Layout, SparsityPattern};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Strategy {
    Sequential,
    LevelScheduling,
    GraphColoring,
}

/// Row grouping plus the permutation that makes groups contiguous.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParallelPlan {
    strategy: Strategy,
    row_group: Vec<usize>,
    group_offsets: Vec<usize>,
    permutation: Vec<usize>,
    inverse_permutation: Vec<usize>,
}

impl ParallelPlan {
    /// One row per group, identity permutation.
    pub fn sequential(num_block_rows: usize) -> Self {
        ParallelPlan::from_groups(Strategy::Sequential, (0..num_block_rows).collect())
    }

    /// Build a plan from a group id per row. Rows are ordered by group, ties
    /// kept in original order.
    pub fn from_groups(strategy: Strategy, row_group: Vec<usize>) -> Self {
        let nb = row_group.len();
        let num_groups = row_group.iter().max().map_or(0, |g| g + 1);
        let mut group_offsets = vec![0; num_groups + 1];
        for &g in &row_group {
            group_offsets[g + 1] += 1;
        }
        for g in 0..num_groups {
            group_offsets[g + 1] += group_offsets[g];
        }
        let mut next = group_offsets.clone();
        let mut permutation = vec![0; nb];
        let mut inverse_permutation = vec![0; nb];
        for (row, &g) in row_group.iter().enumerate() {
            let pos = next[g];
            next[g] += 1;
            permutation[row] = pos;
            inverse_permutation[pos] = row;
        }
        ParallelPlan {
            strategy,
            row_group,
            group_offsets,
            permutation,
            inverse_permutation,
        }
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn num_block_rows(&self) -> usize {
        self.row_group.len()
    }

    /// Group id of each original block row.
    pub fn row_group(&self) -> &[usize] {
        &self.row_group
    }

    pub fn group_offsets(&self) -> &[usize] {
        &self.group_offsets
    }

    /// `permutation[old] = new`.
    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    /// `inverse_permutation[new] = old`.
    pub fn inverse_permutation(&self) -> &[usize] {
        &self.inverse_permutation
    }

    pub fn group_count(&self) -> usize {
        self.group_offsets.len() - 1
    }

    pub fn largest_group(&self) -> usize {
        self.groups().map(|r| r.len()).max().unwrap_or(0)
    }

    /// Permuted-order row range of each group, in execution order.
    pub fn groups(
        &self,
    ) -> impl DoubleEndedIterator + ExactSizeIterator<Item = std::ops::Range<usize>> + '_ {
        self.group_offsets.windows(2).map(|w| w[0]..w[1])
    }

    /// Group of the row stored at permuted position `pos`.
    pub fn group_at(&self, pos: usize) -> usize {
        self.row_group[self.inverse_permutation[pos]]
    }

    pub fn is_identity(&self) -> bool {
        self.permutation.iter().enumerate().all(|(i, &p)| i == p)
    }
}

fn require_diagonal(p: &SparsityPattern) -> Result<()> {
    p.diagonal_positions().map(|_| ())
}

/// Level of each row: one more than the deepest lower neighbour.
pub fn level_schedule(p: &SparsityPattern) -> Result<ParallelPlan> {
    require_diagonal(p)?;
    let nb = p.num_block_rows();
    let mut level = vec![0usize; nb];
    for i in 0..nb {
        level[i] = p
            .row(i)
            .iter()
            .take_while(|&&j| j < i)
            .map(|&j| level[j] + 1)
            .max()
            .unwrap_or(0);
    }
    Ok(ParallelPlan::from_groups(Strategy::LevelScheduling, level))
}

/// Greedy first-fit coloring of the symmetrized row graph, visiting rows in
/// ascending order.
pub fn graph_color(p: &SparsityPattern) -> Result<ParallelPlan> {
    require_diagonal(p)?;
    let nb = p.num_block_rows();
    let adjacency = p.symmetrized_adjacency();
    let mut color = vec![usize::MAX; nb];
    // marker[c] == i means color c is taken by a neighbour of row i
    let mut marker: Vec<usize> = Vec::new();
    for i in 0..nb {
        for &j in &adjacency[i] {
            let c = color[j];
            if c != usize::MAX {
                if c >= marker.len() {
                    marker.resize(c + 1, usize::MAX);
                }
                marker[c] = i;
            }
        }
        let c = (0..).find(|&c| marker.get(c) != Some(&i)).unwrap();
        color[i] = c;
    }
    Ok(ParallelPlan::from_groups(Strategy::GraphColoring, color))
}

fn check_size(nb: usize, plan: &ParallelPlan) -> Result<()> {
    if plan.num_block_rows() != nb {
        return Err(Error::shape(format!(
            "plan covers {} block rows, operand has {nb}",
            plan.num_block_rows()
        )));
    }
    Ok(())
}

/// Reorder rows and columns: block `(i, j)` moves to `(perm[i], perm[j])`.
pub fn permute_matrix(m: &BlockMatrix, perm: &[usize]) -> Result<BlockMatrix> {
    let nb = m.num_block_rows();
    if perm.len() != nb {
        return Err(Error::shape(format!(
            "permutation of length {} for {nb} block rows",
            perm.len()
        )));
    }
    let mut inverse = vec![usize::MAX; nb];
    for (old, &new) in perm.iter().enumerate() {
        if new >= nb || inverse[new] != usize::MAX {
            return Err(Error::shape("not a permutation"));
        }
        inverse[new] = old;
    }
    let source = m.as_block_row_major();
    let pattern = source.pattern();
    let bb = m.block_size() * m.block_size();

    let mut row_pointers = Vec::with_capacity(nb + 1);
    row_pointers.push(0);
    let mut column_indices = Vec::with_capacity(pattern.nnz());
    let mut values = Vec::with_capacity(m.values().len());
    let mut row_buf: Vec<(usize, usize)> = Vec::new();
    for &old in &inverse {
        row_buf.clear();
        row_buf.extend(
            pattern
                .row_range(old)
                .map(|k| (perm[pattern.column_indices()[k]], k)),
        );
        row_buf.sort_unstable_by_key(|&(c, _)| c);
        for &(c, k) in &row_buf {
            column_indices.push(c);
            values.extend_from_slice(&source.values()[k * bb..(k + 1) * bb]);
        }
        row_pointers.push(column_indices.len());
    }
    let permuted = BlockMatrix::new(
        SparsityPattern::from_parts_unchecked(row_pointers, column_indices),
        m.block_size(),
        values,
        Layout::BlockRowMajor,
    )?;
    Ok(match m.layout() {
        Layout::BlockRowMajor => permuted,
        other => permuted.convert_layout(other),
    })
}

/// Matrix in the plan's permuted ordering.
pub fn apply_permutation(m: &BlockMatrix, plan: &ParallelPlan) -> Result<BlockMatrix> {
    check_size(m.num_block_rows(), plan)?;
    permute_matrix(m, &plan.permutation)
}

/// Undo [`apply_permutation`].
pub fn unapply_permutation(m: &BlockMatrix, plan: &ParallelPlan) -> Result<BlockMatrix> {
    check_size(m.num_block_rows(), plan)?;
    permute_matrix(m, &plan.inverse_permutation)
}

/// Vector in the plan's permuted ordering.
pub fn apply_permutation_vec(v: &BlockVector, plan: &ParallelPlan) -> Result<BlockVector> {
    check_size(v.num_blocks(), plan)?;
    let mut out = BlockVector::zeros(v.num_blocks(), v.block_size());
    for (old, &new) in plan.permutation.iter().enumerate() {
        out.block_mut(new).copy_from_slice(v.block(old));
    }
    Ok(out)
}

/// Vector back in the original ordering.
pub fn unapply_permutation_vec(v: &BlockVector, plan: &ParallelPlan) -> Result<BlockVector> {
    check_size(v.num_blocks(), plan)?;
    let mut out = BlockVector::zeros(v.num_blocks(), v.block_size());
    for (old, &new) in plan.permutation.iter().enumerate() {
        out.block_mut(old).copy_from_slice(v.block(new));
    }
    Ok(out)
}
