//! Random system builders and dense oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use bilu::blockcore::{BlockMatrix, BlockVector, SparsityPattern};
use bilu::io::{generate, GeneratorSpec, WellKind};
use bilu::wells::{MultisegmentWell, Perforation, StandardWell, WellMode, WellSet};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Diagonal plus each off-diagonal position with probability `density`.
pub fn random_entries(rng: &mut ChaCha8Rng, nb: usize, density: f64) -> BTreeSet<(usize, usize)> {
    let mut set = BTreeSet::new();
    for i in 0..nb {
        for j in 0..nb {
            if i == j || rng.gen_bool(density) {
                set.insert((i, j));
            }
        }
    }
    set
}

/// Close a pattern under symbolic Gaussian elimination so that LU of any
/// matrix with this pattern has no fill.
pub fn close_under_elimination(
    nb: usize,
    entries: &BTreeSet<(usize, usize)>,
) -> BTreeSet<(usize, usize)> {
    let mut present = vec![vec![false; nb]; nb];
    for &(i, j) in entries {
        present[i][j] = true;
    }
    for k in 0..nb {
        for i in k + 1..nb {
            if !present[i][k] {
                continue;
            }
            let (upper, lower) = present.split_at_mut(i);
            for (dst, &src) in lower[0][k + 1..].iter_mut().zip(&upper[k][k + 1..]) {
                *dst |= src;
            }
        }
    }
    let mut out = BTreeSet::new();
    for (i, row) in present.iter().enumerate() {
        for (j, &p) in row.iter().enumerate() {
            if p {
                out.insert((i, j));
            }
        }
    }
    out
}

/// Random values on `entries`, with each diagonal scalar exceeding the
/// absolute sum of the rest of its row.
pub fn dominant_matrix(
    rng: &mut ChaCha8Rng,
    nb: usize,
    b: usize,
    entries: &BTreeSet<(usize, usize)>,
) -> BlockMatrix {
    let mut row_abs = vec![0.0; nb * b];
    let mut blocks: Vec<(usize, usize, Vec<f64>)> = entries
        .iter()
        .map(|&(i, j)| {
            let blk: Vec<f64> = (0..b * b).map(|_| rng.gen_range(-1.0..1.0)).collect();
            for r in 0..b {
                for c in 0..b {
                    if i != j || r != c {
                        row_abs[i * b + r] += f64::abs(blk[r * b + c]);
                    }
                }
            }
            (i, j, blk)
        })
        .collect();
    for (i, j, blk) in &mut blocks {
        if i == j {
            for r in 0..b {
                blk[r * b + r] = row_abs[*i * b + r] + rng.gen_range(0.1..1.0);
            }
        }
    }
    BlockMatrix::from_blocks(nb, b, blocks).unwrap()
}

pub fn random_vector(rng: &mut ChaCha8Rng, nb: usize, b: usize) -> BlockVector {
    BlockVector::from_fn(nb, b, |_| rng.gen_range(-1.0..1.0))
}

/// A generated seven-point system with random dimensions, block size and seed.
pub fn random_grid_system(rng: &mut ChaCha8Rng, max_dim: usize) -> BlockMatrix {
    let mut spec = GeneratorSpec::grid(
        rng.gen_range(1..=max_dim),
        rng.gen_range(1..=max_dim),
        rng.gen_range(1..=max_dim),
    );
    spec.block_size = rng.gen_range(1..=3);
    spec.seed = rng.gen();
    generate(&spec).matrix
}

pub fn random_well_set(rng: &mut ChaCha8Rng, nb: usize, b: usize, mode: WellMode) -> WellSet {
    let mut set = WellSet::empty(mode);
    let count = rng.gen_range(1..=3);
    let mut cells: Vec<usize> = (0..nb).collect();
    for _ in 0..count {
        let m = rng.gen_range(1..=4);
        let nperf = rng.gen_range(1..=nb.min(5));
        cells.shuffle(rng);
        let mut perf_cells: Vec<usize> = cells[..nperf].to_vec();
        perf_cells.sort_unstable();
        let b_blocks: Vec<f64> = (0..nperf * m * b)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let c_blocks: Vec<f64> = (0..nperf * m * b)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let kind = if rng.gen_bool(0.5) {
            WellKind::Standard
        } else {
            WellKind::Multisegment
        };
        match kind {
            WellKind::Standard => {
                let d = dominant_dense(rng, m);
                set.standard
                    .push(StandardWell::new(m, b, perf_cells, b_blocks, c_blocks, d).unwrap());
            }
            WellKind::Multisegment => {
                let nseg = rng.gen_range(1..=3);
                let perfs = perf_cells
                    .iter()
                    .map(|&cell| Perforation {
                        segment: rng.gen_range(0..nseg),
                        cell,
                    })
                    .collect();
                let d = dominant_dense(rng, nseg * m);
                set.multisegment
                    .push(MultisegmentWell::new(m, b, nseg, perfs, b_blocks, c_blocks, d).unwrap());
            }
        }
    }
    set
}

pub fn dominant_dense(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut d: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    for r in 0..n {
        let off: f64 = (0..n).filter(|&c| c != r).map(|c| d[r * n + c].abs()).sum();
        d[r * n + r] = off + 1.0;
    }
    d
}

pub fn dense(m: &BlockMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.dim(), m.dim(), &m.to_dense())
}

pub fn dvec(v: &BlockVector) -> DVector<f64> {
    DVector::from_column_slice(v.as_slice())
}

/// Dense `Σ_w Cᵀ·D⁻¹·B` scattered onto cell rows and columns, with D inverted
/// by nalgebra.
pub fn dense_well_term(wells: &WellSet, nb: usize, b: usize) -> DMatrix<f64> {
    let n = nb * b;
    let mut total = DMatrix::zeros(n, n);
    for w in &wells.standard {
        let m = w.well_block();
        let cells = w.perforated_cells();
        let mut bm = DMatrix::zeros(m, n);
        let mut cm = DMatrix::zeros(m, n);
        for (p, &cell) in cells.iter().enumerate() {
            bm.view_mut((0, cell * b), (m, b))
                .copy_from(&DMatrix::from_row_slice(m, b, w.b_block(p)));
            cm.view_mut((0, cell * b), (m, b))
                .copy_from(&DMatrix::from_row_slice(m, b, w.c_block(p)));
        }
        let dinv = DMatrix::from_row_slice(m, m, w.d()).try_inverse().unwrap();
        total += cm.transpose() * dinv * bm;
    }
    for w in &wells.multisegment {
        let m = w.well_block();
        let dim = w.num_segments() * m;
        let mut bm = DMatrix::zeros(dim, n);
        let mut cm = DMatrix::zeros(dim, n);
        for (p, perf) in w.perforations().iter().enumerate() {
            let rows = perf.segment * m;
            bm.view_mut((rows, perf.cell * b), (m, b))
                .copy_from(&DMatrix::from_row_slice(m, b, w.b_block(p)));
            cm.view_mut((rows, perf.cell * b), (m, b))
                .copy_from(&DMatrix::from_row_slice(m, b, w.c_block(p)));
        }
        let dinv = DMatrix::from_row_slice(dim, dim, w.d())
            .try_inverse()
            .unwrap();
        total += cm.transpose() * dinv * bm;
    }
    total
}

/// Dense block Gaussian elimination without pivoting, column by column.
/// Returns the eliminated matrix: strictly lower blocks hold `L`, the rest `U`.
pub fn dense_block_lu(a: &DMatrix<f64>, b: usize) -> DMatrix<f64> {
    let n = a.nrows();
    let nb = n / b;
    let mut w = a.clone();
    for k in 0..nb {
        let ukk_inv = w
            .view((k * b, k * b), (b, b))
            .clone_owned()
            .try_inverse()
            .unwrap();
        for i in k + 1..nb {
            let l = w.view((i * b, k * b), (b, b)).clone_owned() * &ukk_inv;
            w.view_mut((i * b, k * b), (b, b)).copy_from(&l);
            for j in k + 1..nb {
                let ukj = w.view((k * b, j * b), (b, b)).clone_owned();
                let upd = w.view((i * b, j * b), (b, b)).clone_owned() - &l * ukj;
                w.view_mut((i * b, j * b), (b, b)).copy_from(&upd);
            }
        }
    }
    w
}

/// Every lower neighbour of a row sits in an earlier group.
pub fn plan_respects_dependencies(p: &SparsityPattern, row_group: &[usize]) -> bool {
    (0..p.num_block_rows()).all(|i| {
        p.row(i)
            .iter()
            .filter(|&&j| j < i)
            .all(|&j| row_group[j] < row_group[i])
    })
}

/// Neumaier-compensated sum of products.
pub fn compensated_dot(a: &[f64], b: &[f64]) -> f64 {
    let mut sum = 0.0f64;
    let mut c = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let t = x * y;
        let s = sum + t;
        if sum.abs() >= t.abs() {
            c += (sum - s) + t;
        } else {
            c += (t - s) + sum;
        }
        sum = s;
    }
    sum + c
}
