//! Zero fill-in incomplete LU factorization of a block matrix.
//!
//! `L` (unit block lower triangular) and `U` share the storage and the
//! sparsity pattern of `A`. The factorization lives in the permuted ordering
//! of its [`ParallelPlan`]: rows in one plan group only read rows of earlier
//! groups, so each group is processed by parallel workers while the per-entry
//! arithmetic stays exactly that of the row-by-row algorithm.

use rayon::prelude::*;

use crate::analysis::{
    apply_permutation, apply_permutation_vec, unapply_permutation_vec, ParallelPlan,
};
use crate::blockcore::{BlockMatrix, BlockVector};
use crate::dense;
use crate::{Error, Result};

/// Groups smaller than this run on the calling thread.
const PAR_MIN_ROWS: usize = 64;

#[derive(Clone, Debug)]
pub struct Ilu0Factorization {
    combined: BlockMatrix,
    inverted_diagonals: Vec<f64>,
    diagonal_positions: Vec<usize>,
    plan: ParallelPlan,
    /// Per group: some row has an upper neighbour inside the same group, so
    /// the backward sweep must walk that group row by row.
    upper_coupled: Vec<bool>,
}

impl Ilu0Factorization {
    /// `L` strictly below and `U` on/above the diagonal, permuted ordering.
    pub fn combined(&self) -> &BlockMatrix {
        &self.combined
    }

    /// `U_ii⁻¹` for every permuted block row, contiguous.
    pub fn inverted_diagonals(&self) -> &[f64] {
        &self.inverted_diagonals
    }

    pub fn inverted_diagonal(&self, row: usize) -> &[f64] {
        let bb = self.block_size() * self.block_size();
        &self.inverted_diagonals[row * bb..(row + 1) * bb]
    }

    pub fn plan(&self) -> &ParallelPlan {
        &self.plan
    }

    pub fn block_size(&self) -> usize {
        self.combined.block_size()
    }

    pub fn num_block_rows(&self) -> usize {
        self.combined.num_block_rows()
    }

    /// Solve `L·U·z = r` with `r` and `z` in permuted ordering.
    pub fn apply(&self, r: &BlockVector) -> Result<BlockVector> {
        let mut z = BlockVector::zeros(r.num_blocks(), r.block_size());
        self.apply_into(r, &mut z)?;
        Ok(z)
    }

    /// [`apply`](Self::apply) into an existing vector.
    pub fn apply_into(&self, r: &BlockVector, z: &mut BlockVector) -> Result<()> {
        let b = self.block_size();
        let nb = self.num_block_rows();
        if r.block_size() != b || r.num_blocks() != nb || !z.same_shape(r) {
            return Err(Error::shape(format!(
                "ILU0 apply: factorization is {nb} blocks of size {b}, got vectors of {} and {} entries",
                r.len(),
                z.len()
            )));
        }
        z.as_mut_slice().copy_from_slice(r.as_slice());
        let pattern = self.combined.pattern();
        let values = self.combined.values();
        let bb = b * b;

        // forward: y_i = r_i - sum_{j<i} L_ij y_j
        for group in self.plan.groups() {
            let (done, rest) = z.as_mut_slice().split_at_mut(group.start * b);
            let current = &mut rest[..group.len() * b];
            let done: &[f64] = done;
            let forward_row = |(local, yi): (usize, &mut [f64])| {
                let i = group.start + local;
                for k in pattern
                    .row_range(i)
                    .take_while(|&k| pattern.column_indices()[k] < i)
                {
                    let j = pattern.column_indices()[k];
                    dense::matvec_sub(
                        &values[k * bb..(k + 1) * bb],
                        &done[j * b..(j + 1) * b],
                        yi,
                        b,
                        b,
                    );
                }
            };
            if group.len() >= PAR_MIN_ROWS {
                current.par_chunks_mut(b).enumerate().for_each(forward_row);
            } else {
                current.chunks_mut(b).enumerate().for_each(forward_row);
            }
        }

        // backward: x_i = U_ii^-1 (y_i - sum_{j>i} U_ij x_j)
        let backward_row = |i: usize, xi: &mut [f64], after: &[f64], offset: usize| {
            let mut tmp = [0.0f64; 8];
            let mut heap;
            let acc: &mut [f64] = if b <= tmp.len() {
                &mut tmp[..b]
            } else {
                heap = vec![0.0; b];
                &mut heap
            };
            acc.copy_from_slice(xi);
            for k in self.diagonal_positions[i] + 1..pattern.row_pointers()[i + 1] {
                let j = pattern.column_indices()[k] - offset;
                dense::matvec_sub(
                    &values[k * bb..(k + 1) * bb],
                    &after[j * b..(j + 1) * b],
                    acc,
                    b,
                    b,
                );
            }
            xi.iter_mut().for_each(|v| *v = 0.0);
            dense::matvec_add(self.inverted_diagonal(i), acc, xi, b, b);
        };
        for (g, group) in self.plan.groups().enumerate().rev() {
            if self.upper_coupled[g] {
                for i in group.rev() {
                    let (front, after) = z.as_mut_slice().split_at_mut((i + 1) * b);
                    backward_row(i, &mut front[i * b..], after, i + 1);
                }
                continue;
            }
            let (front, after) = z.as_mut_slice().split_at_mut(group.end * b);
            let current = &mut front[group.start * b..];
            let after: &[f64] = after;
            let row = |(local, xi): (usize, &mut [f64])| {
                backward_row(group.start + local, xi, after, group.end)
            };
            if group.len() >= PAR_MIN_ROWS {
                current.par_chunks_mut(b).enumerate().for_each(row);
            } else {
                current.chunks_mut(b).enumerate().for_each(row);
            }
        }
        Ok(())
    }

    /// Apply to a vector in the original ordering; permutes in and out.
    pub fn apply_unpermuted(&self, r: &BlockVector) -> Result<BlockVector> {
        let rp = apply_permutation_vec(r, &self.plan)?;
        let zp = self.apply(&rp)?;
        unapply_permutation_vec(&zp, &self.plan)
    }
}

/// Factor `a` (given in its original ordering) under `plan`.
///
/// For each row `i` in permuted order, with `r` running over its lower
/// blocks in ascending column order:
/// `A_ir ← A_ir·U_rr⁻¹`, then `A_ij ← A_ij − A_ir·A_rj` for every `j > r`
/// where both `(i, j)` and `(r, j)` are in the pattern. The inverse of the
/// finished diagonal block is stored.
pub fn decompose(a: &BlockMatrix, plan: &ParallelPlan) -> Result<Ilu0Factorization> {
    if plan.num_block_rows() != a.num_block_rows() {
        return Err(Error::shape(format!(
            "plan covers {} block rows, matrix has {}",
            plan.num_block_rows(),
            a.num_block_rows()
        )));
    }
    a.pattern().diagonal_positions()?;
    let mut combined = if plan.is_identity() {
        a.as_block_row_major().into_owned()
    } else {
        apply_permutation(a, plan)?
    };
    let diagonal_positions = combined.pattern().diagonal_positions()?;
    check_plan(&combined, plan)?;

    let b = combined.block_size();
    let bb = b * b;
    let nb = combined.num_block_rows();
    let mut inverted_diagonals = vec![0.0; nb * bb];
    let pattern = combined.pattern().clone();
    let row_pointers = pattern.row_pointers();

    for group in plan.groups() {
        let (done, rest) = combined
            .values_mut()
            .split_at_mut(row_pointers[group.start] * bb);
        let group_values = &mut rest[..(row_pointers[group.end] - row_pointers[group.start]) * bb];
        let (inv_done, inv_rest) = inverted_diagonals.split_at_mut(group.start * bb);
        let inv_group = &mut inv_rest[..group.len() * bb];

        let mut rows: Vec<(usize, &mut [f64], &mut [f64])> = Vec::with_capacity(group.len());
        let mut remaining = group_values;
        for (i, inv) in group.clone().zip(inv_group.chunks_mut(bb)) {
            let (row_vals, tail) = remaining.split_at_mut(pattern.row_range(i).len() * bb);
            rows.push((i, row_vals, inv));
            remaining = tail;
        }

        let done: &[f64] = done;
        let inv_done: &[f64] = inv_done;
        let work = |(i, row_vals, inv): (usize, &mut [f64], &mut [f64])| {
            factor_row(
                i,
                row_vals,
                inv,
                done,
                inv_done,
                &pattern,
                &diagonal_positions,
                b,
            )
        };
        let outcome: Vec<Result<()>> = if group.len() >= PAR_MIN_ROWS {
            rows.into_par_iter().map(work).collect()
        } else {
            rows.into_iter().map(work).collect()
        };
        if let Some(err) = outcome.into_iter().find_map(|r| r.err()) {
            return Err(match err {
                Error::SingularPivot(pos) => Error::SingularPivot(plan.inverse_permutation()[pos]),
                other => other,
            });
        }
    }

    let upper_coupled = plan
        .groups()
        .map(|group| {
            group.clone().any(|i| {
                pattern.row(i)[diagonal_positions[i] - row_pointers[i] + 1..]
                    .first()
                    .is_some_and(|&j| j < group.end)
            })
        })
        .collect();

    Ok(Ilu0Factorization {
        combined,
        inverted_diagonals,
        diagonal_positions,
        plan: plan.clone(),
        upper_coupled,
    })
}

/// Every lower block of a permuted row must come from an earlier group.
fn check_plan(permuted: &BlockMatrix, plan: &ParallelPlan) -> Result<()> {
    let pattern = permuted.pattern();
    for i in 0..pattern.num_block_rows() {
        let gi = plan.group_at(i);
        for &j in pattern.row(i).iter().take_while(|&&j| j < i) {
            if plan.group_at(j) >= gi {
                return Err(Error::InvalidPlan(format!(
                    "permuted row {i} (group {gi}) depends on row {j} of group {}",
                    plan.group_at(j)
                )));
            }
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn factor_row(
    i: usize,
    row_vals: &mut [f64],
    inv_slot: &mut [f64],
    done: &[f64],
    inv_done: &[f64],
    pattern: &crate::blockcore::SparsityPattern,
    diagonal_positions: &[usize],
    b: usize,
) -> Result<()> {
    let bb = b * b;
    let cols = pattern.row(i);
    let base = pattern.row_pointers()[i];
    let mut scratch = vec![0.0; bb];
    for kk in 0..cols.len() {
        let r = cols[kk];
        if r >= i {
            break;
        }
        // L_ir = A_ir · U_rr^-1
        dense::matmul_into(
            &row_vals[kk * bb..(kk + 1) * bb],
            &inv_done[r * bb..(r + 1) * bb],
            &mut scratch,
            b,
            b,
            b,
        );
        row_vals[kk * bb..(kk + 1) * bb].copy_from_slice(&scratch);

        // A_ij -= L_ir · U_rj for j > r present in both rows
        let mut pos = kk + 1;
        for krj in diagonal_positions[r] + 1..pattern.row_pointers()[r + 1] {
            let j = pattern.column_indices()[krj];
            while pos < cols.len() && cols[pos] < j {
                pos += 1;
            }
            if pos == cols.len() {
                break;
            }
            if cols[pos] == j {
                let (head, tail) = row_vals.split_at_mut(pos * bb);
                dense::matmul_sub(
                    &head[kk * bb..(kk + 1) * bb],
                    &done[krj * bb..(krj + 1) * bb],
                    &mut tail[..bb],
                    b,
                );
            }
        }
    }
    let d = diagonal_positions[i] - base;
    let inv = dense::invert(&row_vals[d * bb..(d + 1) * bb], b).ok_or(Error::SingularPivot(i))?;
    inv_slot.copy_from_slice(&inv);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{graph_color, level_schedule};
    use crate::blockcore::{spmv, SparsityPattern};

    fn scalar_2x2() -> BlockMatrix {
        BlockMatrix::from_blocks(
            2,
            1,
            vec![
                (0, 0, vec![4.0]),
                (0, 1, vec![2.0]),
                (1, 0, vec![1.0]),
                (1, 1, vec![3.0]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn scalar_factorization_matches_hand_lu() {
        let f = decompose(&scalar_2x2(), &ParallelPlan::sequential(2)).unwrap();
        assert_eq!(f.combined().values(), &[4.0, 2.0, 0.25, 2.5]);
        assert_eq!(f.inverted_diagonal(0), &[0.25]);
        assert!((f.inverted_diagonal(1)[0] - 0.4).abs() < 1e-16);
    }

    #[test]
    fn scalar_application_matches_substitution_by_hand() {
        let f = decompose(&scalar_2x2(), &ParallelPlan::sequential(2)).unwrap();
        let r = BlockVector::new(1, vec![1.0, 1.0]).unwrap();
        let x = f.apply(&r).unwrap();
        assert!((x.as_slice()[0] - 0.1).abs() < 1e-15);
        assert!((x.as_slice()[1] - 0.3).abs() < 1e-15);
        // dense solve of [[4,2],[1,3]] x = [1,1]
        let check = spmv(&scalar_2x2(), &x).unwrap();
        assert!((check.as_slice()[0] - 1.0).abs() < 1e-15);
        assert!((check.as_slice()[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn block_diagonal_matrix_only_inverts_diagonals() {
        let blocks = vec![
            (0, 0, vec![2.0, 1.0, 0.0, 3.0]),
            (1, 1, vec![1.0, 0.0, 4.0, 5.0]),
        ];
        let a = BlockMatrix::from_blocks(2, 2, blocks).unwrap();
        let f = decompose(&a, &ParallelPlan::sequential(2)).unwrap();
        assert_eq!(f.combined(), &a);
        for k in 0..2 {
            let inv = dense::invert(a.block(k), 2).unwrap();
            assert_eq!(f.inverted_diagonal(k), inv.as_slice());
        }
    }

    #[test]
    fn identity_application_is_identity() {
        let a = BlockMatrix::identity(5, 3);
        let f = decompose(&a, &level_schedule(a.pattern()).unwrap()).unwrap();
        let r = BlockVector::from_fn(5, 3, |i| i as f64 * 0.5 - 3.0);
        assert_eq!(f.apply(&r).unwrap(), r);
    }

    #[test]
    fn singular_pivot_reports_original_row() {
        let a = BlockMatrix::from_blocks(
            3,
            1,
            vec![
                (0, 0, vec![1.0]),
                (1, 1, vec![2.0]),
                (2, 0, vec![1.0]),
                (2, 2, vec![1.0]),
            ],
        )
        .unwrap();
        let mut bad = a.clone();
        // A_22 - L_20 U_02 with no (0,2) entry stays 1; zero it directly.
        let k = bad.pattern().find(2, 2).unwrap();
        bad.block_mut(k)[0] = 0.0;
        let plan = graph_color(bad.pattern()).unwrap();
        assert!(matches!(
            decompose(&bad, &plan),
            Err(Error::SingularPivot(2))
        ));
        assert!(matches!(
            decompose(&bad, &ParallelPlan::sequential(3)),
            Err(Error::SingularPivot(2))
        ));
    }

    #[test]
    fn missing_diagonal_is_rejected() {
        let a = BlockMatrix::new(
            SparsityPattern::new(vec![0, 1, 2], vec![0, 0]).unwrap(),
            1,
            vec![1.0, 1.0],
            Default::default(),
        )
        .unwrap();
        assert!(matches!(
            decompose(&a, &ParallelPlan::sequential(2)),
            Err(Error::MissingDiagonal(1))
        ));
    }

    #[test]
    fn plan_that_breaks_dependencies_is_rejected() {
        // rows 0 and 1 coupled but put in the same group
        let a = scalar_2x2();
        let plan = ParallelPlan::from_groups(crate::analysis::Strategy::GraphColoring, vec![0, 0]);
        assert!(matches!(decompose(&a, &plan), Err(Error::InvalidPlan(_))));
    }

    #[test]
    fn apply_rejects_wrong_shape() {
        let f = decompose(&scalar_2x2(), &ParallelPlan::sequential(2)).unwrap();
        assert!(matches!(
            f.apply(&BlockVector::zeros(3, 1)),
            Err(Error::Shape(_))
        ));
    }
}
