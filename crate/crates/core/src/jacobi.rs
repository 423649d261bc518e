//! Block-Jacobi relaxation of the ILU0 preconditioner.
//!
//! Cells are split into `k` partitions by coupling strength and every block
//! connecting two partitions is dropped from the matrix the preconditioner is
//! built from. The solver itself keeps using the full matrix. A [`CopyPlan`]
//! records where each retained block lives in the full matrix so new values
//! can be copied over in a single pass.

use std::collections::{BTreeSet, HashMap};

use crate::blockcore::{BlockMatrix, Layout, SparsityPattern};
use crate::{Error, Result};

/// Symmetric weights on off-diagonal edges of a pattern.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EdgeWeights {
    weights: HashMap<(usize, usize), f64>,
}

impl EdgeWeights {
    pub fn new() -> Self {
        Self::default()
    }

    fn key(i: usize, j: usize) -> (usize, usize) {
        (i.min(j), i.max(j))
    }

    pub fn insert(&mut self, i: usize, j: usize, weight: f64) {
        self.weights.insert(Self::key(i, j), weight);
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.weights.get(&Self::key(i, j)).copied()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Same weight on every edge of `p`.
    pub fn uniform(p: &SparsityPattern, weight: f64) -> Self {
        let mut w = EdgeWeights::new();
        for (i, j) in p.entries().filter(|(i, j)| i != j) {
            w.insert(i, j, weight);
        }
        w
    }

    /// Transmissibility proxy: Frobenius norm of `A_ij` plus that of `A_ji`.
    pub fn from_block_norms(a: &BlockMatrix) -> Self {
        let mut w = EdgeWeights::new();
        for (i, j) in a
            .pattern()
            .entries()
            .filter(|(i, j)| i < j || !a.pattern().contains(*j, *i))
        {
            w.insert(i, j, a.block_norm(i, j) + a.block_norm(j, i));
        }
        w
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Partitioning {
    pub num_partitions: usize,
    pub cell_partition: Vec<usize>,
    pub edge_cut_weight: f64,
}

impl Partitioning {
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_partitions];
        for &p in &self.cell_partition {
            sizes[p] += 1;
        }
        sizes
    }
}

/// Greedy region growing: partition `p` is seeded at the lowest unassigned
/// cell and repeatedly absorbs the frontier cell with the heaviest total
/// edge weight into the region (lowest index on ties) until it holds its
/// share of cells (`⌊Nb/k⌋` or one more).
pub fn partition(p: &SparsityPattern, weights: &EdgeWeights, k: usize) -> Result<Partitioning> {
    let nb = p.num_block_rows();
    if k == 0 {
        return Err(Error::Config("at least one partition is required".into()));
    }
    if k > nb {
        return Err(Error::TooManyPartitions {
            requested: k,
            rows: nb,
        });
    }
    let adjacency = p.symmetrized_adjacency();
    let mut adj_weights: Vec<Vec<f64>> = Vec::with_capacity(nb);
    for (i, list) in adjacency.iter().enumerate() {
        let row = list
            .iter()
            .map(|&j| {
                weights
                    .get(i, j)
                    .ok_or_else(|| Error::shape(format!("no edge weight for ({i}, {j})")))
            })
            .collect::<Result<Vec<f64>>>()?;
        adj_weights.push(row);
    }

    const UNASSIGNED: usize = usize::MAX;
    let mut part = vec![UNASSIGNED; nb];
    let mut gain = vec![0.0f64; nb];
    let mut next_seed = 0;
    for pid in 0..k {
        let target = nb / k + usize::from(pid < nb % k);
        let mut frontier: BTreeSet<usize> = BTreeSet::new();
        let mut size = 0;
        while size < target {
            let cell = match best_frontier_cell(&frontier, &gain) {
                Some(c) => c,
                None => {
                    while part[next_seed] != UNASSIGNED {
                        next_seed += 1;
                    }
                    next_seed
                }
            };
            frontier.remove(&cell);
            part[cell] = pid;
            size += 1;
            for (&n, &w) in adjacency[cell].iter().zip(&adj_weights[cell]) {
                if part[n] == UNASSIGNED {
                    gain[n] += w;
                    frontier.insert(n);
                }
            }
        }
        for c in frontier {
            gain[c] = 0.0;
        }
    }

    let mut edge_cut_weight = 0.0;
    for i in 0..nb {
        for (&j, &w) in adjacency[i].iter().zip(&adj_weights[i]) {
            if i < j && part[i] != part[j] {
                edge_cut_weight += w;
            }
        }
    }
    Ok(Partitioning {
        num_partitions: k,
        cell_partition: part,
        edge_cut_weight,
    })
}

fn best_frontier_cell(frontier: &BTreeSet<usize>, gain: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for &c in frontier {
        match best {
            Some(b) if gain[c] <= gain[b] => {}
            _ => best = Some(c),
        }
    }
    best
}

/// Source position in the full nonzero array for each retained block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CopyPlan {
    indices: Vec<usize>,
    full_nnz: usize,
}

impl CopyPlan {
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Keep only blocks whose row and column cells share a partition.
///
/// The returned matrix has block-row-major layout and reserves room for the
/// full matrix's nonzeros.
pub fn drop_cross_blocks(a: &BlockMatrix, part: &Partitioning) -> Result<(BlockMatrix, CopyPlan)> {
    let nb = a.num_block_rows();
    if part.cell_partition.len() != nb {
        return Err(Error::shape(format!(
            "partitioning covers {} cells, matrix has {nb} block rows",
            part.cell_partition.len()
        )));
    }
    let full = a.as_block_row_major();
    let pattern = full.pattern();
    let bb = a.block_size() * a.block_size();

    let mut row_pointers = Vec::with_capacity(nb + 1);
    row_pointers.push(0);
    let mut column_indices = Vec::with_capacity(pattern.nnz());
    let mut indices = Vec::with_capacity(pattern.nnz());
    for i in 0..nb {
        for k in pattern.row_range(i) {
            let j = pattern.column_indices()[k];
            if part.cell_partition[i] == part.cell_partition[j] {
                column_indices.push(j);
                indices.push(k);
            }
        }
        row_pointers.push(column_indices.len());
    }
    let mut values = Vec::with_capacity(full.values().len());
    for &k in &indices {
        values.extend_from_slice(&full.values()[k * bb..(k + 1) * bb]);
    }
    let jac = BlockMatrix::new(
        SparsityPattern::from_parts_unchecked(row_pointers, column_indices),
        a.block_size(),
        values,
        Layout::BlockRowMajor,
    )?;
    Ok((
        jac,
        CopyPlan {
            indices,
            full_nnz: pattern.nnz(),
        },
    ))
}

/// Copy current values of the retained blocks from `full` into `jac`.
pub fn refresh_values(full: &BlockMatrix, jac: &mut BlockMatrix, plan: &CopyPlan) -> Result<()> {
    if plan.full_nnz != full.nnz_blocks()
        || plan.indices.len() != jac.nnz_blocks()
        || full.block_size() != jac.block_size()
        || jac.layout() != Layout::BlockRowMajor
    {
        return Err(Error::PlanInvalidated);
    }
    let full = full.as_block_row_major();
    let bb = jac.block_size() * jac.block_size();
    let src = full.values();
    let dst = jac.values_mut();
    for (i, &k) in plan.indices.iter().enumerate() {
        dst[i * bb..(i + 1) * bb].copy_from_slice(&src[k * bb..(k + 1) * bb]);
    }
    Ok(())
}
