//! Well contributions `−Cᵀ·D⁻¹·B`.
//!
//! A well couples the reservoir cells it perforates through its own unknowns.
//! The contribution is either applied after each matrix-vector product
//! (separate mode) or folded into the matrix once (coupled mode), which adds
//! blocks between every pair of cells perforated by the same well.
//!
//! `B` and `C` blocks are `M × N` (well unknowns × cell unknowns), row-major.

use std::collections::BTreeMap;

use crate::blockcore::{extract_pattern, BlockMatrix, BlockVector, Layout};
use crate::dense::{self, DenseLu};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum WellMode {
    Coupled,
    #[default]
    Separate,
}

impl std::str::FromStr for WellMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coupled" => Ok(WellMode::Coupled),
            "separate" => Ok(WellMode::Separate),
            other => Err(Error::Config(format!("unknown well mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for WellMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            WellMode::Coupled => "coupled",
            WellMode::Separate => "separate",
        })
    }
}

fn check_block_data(what: &str, data: &[f64], expected: usize) -> Result<()> {
    if data.len() != expected {
        return Err(Error::InvalidWell(format!(
            "{what} has {} values, expected {expected}",
            data.len()
        )));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidWell(format!("{what} has non-finite values")));
    }
    Ok(())
}

/// Well with a single set of unknowns: `D` is one `M × M` block and `B`, `C`
/// hold one block per perforated cell.
#[derive(Clone, Debug, PartialEq)]
pub struct StandardWell {
    well_block: usize,
    cell_block: usize,
    perforated_cells: Vec<usize>,
    b_blocks: Vec<f64>,
    c_blocks: Vec<f64>,
    d: Vec<f64>,
    d_inverse: Vec<f64>,
}

impl StandardWell {
    pub fn new(
        well_block: usize,
        cell_block: usize,
        perforated_cells: Vec<usize>,
        b_blocks: Vec<f64>,
        c_blocks: Vec<f64>,
        d: Vec<f64>,
    ) -> Result<Self> {
        if well_block == 0 || cell_block == 0 {
            return Err(Error::InvalidWell(
                "block dimensions must be positive".into(),
            ));
        }
        if perforated_cells.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidWell(
                "perforated cells must be strictly increasing".into(),
            ));
        }
        let mn = well_block * cell_block;
        check_block_data("B", &b_blocks, perforated_cells.len() * mn)?;
        check_block_data("C", &c_blocks, perforated_cells.len() * mn)?;
        check_block_data("D", &d, well_block * well_block)?;
        let d_inverse = dense::invert(&d, well_block).ok_or(Error::SingularWellMatrix)?;
        Ok(StandardWell {
            well_block,
            cell_block,
            perforated_cells,
            b_blocks,
            c_blocks,
            d,
            d_inverse,
        })
    }

    pub fn well_block(&self) -> usize {
        self.well_block
    }

    pub fn cell_block(&self) -> usize {
        self.cell_block
    }

    pub fn perforated_cells(&self) -> &[usize] {
        &self.perforated_cells
    }

    pub fn b_block(&self, perf: usize) -> &[f64] {
        let mn = self.well_block * self.cell_block;
        &self.b_blocks[perf * mn..(perf + 1) * mn]
    }

    pub fn c_block(&self, perf: usize) -> &[f64] {
        let mn = self.well_block * self.cell_block;
        &self.c_blocks[perf * mn..(perf + 1) * mn]
    }

    pub fn d(&self) -> &[f64] {
        &self.d
    }

    pub fn d_inverse(&self) -> &[f64] {
        &self.d_inverse
    }

    /// `y ← y − Cᵀ·(D⁻¹·(B·x))`.
    pub fn apply(&self, x: &BlockVector, y: &mut BlockVector) -> Result<()> {
        check_vectors(self.cell_block, self.perforated_cells.last().copied(), x, y)?;
        let (m, n) = (self.well_block, self.cell_block);
        let mut t1 = vec![0.0; m];
        for (p, &cell) in self.perforated_cells.iter().enumerate() {
            dense::matvec_add(self.b_block(p), x.block(cell), &mut t1, m, n);
        }
        let mut t2 = vec![0.0; m];
        dense::matvec_add(&self.d_inverse, &t1, &mut t2, m, m);
        for (p, &cell) in self.perforated_cells.iter().enumerate() {
            dense::matvec_transpose_sub(self.c_block(p), &t2, y.block_mut(cell), m, n);
        }
        Ok(())
    }

    fn permuted(&self, perm: &[usize]) -> StandardWell {
        let mn = self.well_block * self.cell_block;
        let mut order: Vec<(usize, usize)> = self
            .perforated_cells
            .iter()
            .enumerate()
            .map(|(p, &c)| (perm[c], p))
            .collect();
        order.sort_unstable();
        let mut out = self.clone();
        out.perforated_cells = order.iter().map(|&(c, _)| c).collect();
        out.b_blocks = order
            .iter()
            .flat_map(|&(_, p)| self.b_blocks[p * mn..(p + 1) * mn].iter().copied())
            .collect();
        out.c_blocks = order
            .iter()
            .flat_map(|&(_, p)| self.c_blocks[p * mn..(p + 1) * mn].iter().copied())
            .collect();
        out
    }
}

/// One perforation of a multisegment well: the segment it feeds and the cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Perforation {
    pub segment: usize,
    pub cell: usize,
}

/// Well split into `nseg` segments. `D` is a dense `nseg × nseg` block matrix
/// kept LU-factored; `B` and `C` have at most one block per cell column.
#[derive(Clone, Debug, PartialEq)]
pub struct MultisegmentWell {
    well_block: usize,
    cell_block: usize,
    num_segments: usize,
    perforations: Vec<Perforation>,
    b_blocks: Vec<f64>,
    c_blocks: Vec<f64>,
    d: Vec<f64>,
    d_lu: DenseLu,
}

impl MultisegmentWell {
    /// `d` is the dense `(nseg·M) × (nseg·M)` matrix, row-major.
    pub fn new(
        well_block: usize,
        cell_block: usize,
        num_segments: usize,
        perforations: Vec<Perforation>,
        b_blocks: Vec<f64>,
        c_blocks: Vec<f64>,
        d: Vec<f64>,
    ) -> Result<Self> {
        if well_block == 0 || cell_block == 0 || num_segments == 0 {
            return Err(Error::InvalidWell(
                "block dimensions and segment count must be positive".into(),
            ));
        }
        if let Some(p) = perforations.iter().find(|p| p.segment >= num_segments) {
            return Err(Error::InvalidWell(format!(
                "perforation at cell {} refers to segment {} of {num_segments}",
                p.cell, p.segment
            )));
        }
        let mut cells: Vec<usize> = perforations.iter().map(|p| p.cell).collect();
        cells.sort_unstable();
        if cells.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidWell(
                "a cell column of B/C holds more than one block".into(),
            ));
        }
        let mn = well_block * cell_block;
        check_block_data("B", &b_blocks, perforations.len() * mn)?;
        check_block_data("C", &c_blocks, perforations.len() * mn)?;
        let dim = num_segments * well_block;
        check_block_data("D", &d, dim * dim)?;
        let d_lu = DenseLu::factor(&d, dim).ok_or(Error::SingularWellMatrix)?;
        Ok(MultisegmentWell {
            well_block,
            cell_block,
            num_segments,
            perforations,
            b_blocks,
            c_blocks,
            d,
            d_lu,
        })
    }

    pub fn well_block(&self) -> usize {
        self.well_block
    }

    pub fn cell_block(&self) -> usize {
        self.cell_block
    }

    pub fn num_segments(&self) -> usize {
        self.num_segments
    }

    pub fn perforations(&self) -> &[Perforation] {
        &self.perforations
    }

    pub fn b_block(&self, perf: usize) -> &[f64] {
        let mn = self.well_block * self.cell_block;
        &self.b_blocks[perf * mn..(perf + 1) * mn]
    }

    pub fn c_block(&self, perf: usize) -> &[f64] {
        let mn = self.well_block * self.cell_block;
        &self.c_blocks[perf * mn..(perf + 1) * mn]
    }

    /// Dense `D`, row-major.
    pub fn d(&self) -> &[f64] {
        &self.d
    }

    /// `y ← y − Cᵀ·(D⁻¹·(B·x))`, with `D⁻¹` applied by an LU solve. This
    /// stays on the host in any accelerator port.
    pub fn apply(&self, x: &BlockVector, y: &mut BlockVector) -> Result<()> {
        check_vectors(
            self.cell_block,
            self.perforations.iter().map(|p| p.cell).max(),
            x,
            y,
        )?;
        let (m, n) = (self.well_block, self.cell_block);
        let mut t = vec![0.0; self.num_segments * m];
        for (p, perf) in self.perforations.iter().enumerate() {
            let seg = &mut t[perf.segment * m..(perf.segment + 1) * m];
            dense::matvec_add(self.b_block(p), x.block(perf.cell), seg, m, n);
        }
        self.d_lu.solve_in_place(&mut t);
        for (p, perf) in self.perforations.iter().enumerate() {
            let seg = &t[perf.segment * m..(perf.segment + 1) * m];
            dense::matvec_transpose_sub(self.c_block(p), seg, y.block_mut(perf.cell), m, n);
        }
        Ok(())
    }

    fn permuted(&self, perm: &[usize]) -> MultisegmentWell {
        let mut out = self.clone();
        for p in &mut out.perforations {
            p.cell = perm[p.cell];
        }
        out
    }
}

fn check_vectors(
    cell_block: usize,
    max_cell: Option<usize>,
    x: &BlockVector,
    y: &BlockVector,
) -> Result<()> {
    if x.block_size() != cell_block || !x.same_shape(y) {
        return Err(Error::shape(format!(
            "well with cell blocks of {cell_block} applied to vectors with blocks of {} and {}",
            x.block_size(),
            y.block_size()
        )));
    }
    if let Some(c) = max_cell {
        if c >= x.num_blocks() {
            return Err(Error::shape(format!(
                "well perforates cell {c}, vector has {} blocks",
                x.num_blocks()
            )));
        }
    }
    Ok(())
}

/// All wells of a system and how they are applied.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WellSet {
    pub standard: Vec<StandardWell>,
    pub multisegment: Vec<MultisegmentWell>,
    pub mode: WellMode,
}

impl WellSet {
    pub fn empty(mode: WellMode) -> Self {
        WellSet {
            mode,
            ..Default::default()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.standard.is_empty() && self.multisegment.is_empty()
    }

    pub fn num_wells(&self) -> usize {
        self.standard.len() + self.multisegment.len()
    }

    pub fn with_mode(mut self, mode: WellMode) -> Self {
        self.mode = mode;
        self
    }

    /// Apply every well's contribution to `y`, regardless of mode.
    /// Standard wells first, then multisegment wells, each in list order.
    pub fn subtract_contributions(&self, x: &BlockVector, y: &mut BlockVector) -> Result<()> {
        for w in &self.standard {
            w.apply(x, y)?;
        }
        for w in &self.multisegment {
            w.apply(x, y)?;
        }
        Ok(())
    }

    /// Contribution as seen by the solver: nothing in coupled mode (already
    /// folded into the matrix), the full term in separate mode.
    pub fn apply_wells(&self, x: &BlockVector, y: &mut BlockVector) -> Result<()> {
        match self.mode {
            WellMode::Coupled => Ok(()),
            WellMode::Separate => self.subtract_contributions(x, y),
        }
    }

    /// Check every well against a system of `num_blocks` cells of `block_size`.
    pub fn check_against(&self, num_blocks: usize, block_size: usize) -> Result<()> {
        let standard = self
            .standard
            .iter()
            .map(|w| (w.cell_block, w.perforated_cells.last().copied()));
        let multisegment = self
            .multisegment
            .iter()
            .map(|w| (w.cell_block, w.perforations.iter().map(|p| p.cell).max()));
        for (cell_block, max_cell) in standard.chain(multisegment) {
            if cell_block != block_size {
                return Err(Error::shape(format!(
                    "well with cell blocks of {cell_block} in a system with blocks of {block_size}"
                )));
            }
            if let Some(c) = max_cell.filter(|&c| c >= num_blocks) {
                return Err(Error::shape(format!(
                    "well perforates cell {c}, system has {num_blocks} cells"
                )));
            }
        }
        Ok(())
    }

    /// Relabel perforated cells through `perm[old] = new`.
    pub fn permuted(&self, perm: &[usize]) -> WellSet {
        WellSet {
            standard: self.standard.iter().map(|w| w.permuted(perm)).collect(),
            multisegment: self.multisegment.iter().map(|w| w.permuted(perm)).collect(),
            mode: self.mode,
        }
    }

    /// Block positions `(i, j)` the wells couple.
    pub fn coupling_positions(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for w in &self.standard {
            for &i in &w.perforated_cells {
                for &j in &w.perforated_cells {
                    out.push((i, j));
                }
            }
        }
        for w in &self.multisegment {
            for pi in &w.perforations {
                for pj in &w.perforations {
                    out.push((pi.cell, pj.cell));
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// `A' = A − Σ_w Cᵀ_w·D⁻¹_w·B_w`, with new blocks created where two cells of
/// the same well were not yet coupled.
pub fn fold_into_matrix(a: &BlockMatrix, wells: &WellSet) -> Result<BlockMatrix> {
    let nb = a.num_block_rows();
    let n = a.block_size();
    if wells.is_empty() {
        return Ok(a.clone());
    }
    let mut contributions: Vec<((usize, usize), Vec<f64>)> = Vec::new();

    for w in &wells.standard {
        if w.cell_block != n {
            return Err(Error::shape(
                "well cell block size differs from matrix block size",
            ));
        }
        let m = w.well_block;
        // G_l = D⁻¹·B_l, then block (k, l) = C_kᵀ·G_l
        let g: Vec<Vec<f64>> = (0..w.perforated_cells.len())
            .map(|l| dense::matmul(&w.d_inverse, w.b_block(l), m, m, n))
            .collect();
        for (k, &ck) in w.perforated_cells.iter().enumerate() {
            let ct = dense::transpose(w.c_block(k), m, n);
            for (l, &cl) in w.perforated_cells.iter().enumerate() {
                contributions.push(((ck, cl), dense::matmul(&ct, &g[l], n, m, n)));
            }
        }
    }

    for w in &wells.multisegment {
        if w.cell_block != n {
            return Err(Error::shape(
                "well cell block size differs from matrix block size",
            ));
        }
        let m = w.well_block;
        let dim = w.num_segments * m;
        let d_inv = w.d_lu.inverse();
        // H_l = D⁻¹[:, seg_l]·B_l, a (nseg·M) × N strip
        let h: Vec<Vec<f64>> = w
            .perforations
            .iter()
            .enumerate()
            .map(|(l, perf)| {
                let mut cols = vec![0.0; dim * m];
                for r in 0..dim {
                    for c in 0..m {
                        cols[r * m + c] = d_inv[r * dim + perf.segment * m + c];
                    }
                }
                dense::matmul(&cols, w.b_block(l), dim, m, n)
            })
            .collect();
        for (k, pk) in w.perforations.iter().enumerate() {
            let ct = dense::transpose(w.c_block(k), m, n);
            for (l, pl) in w.perforations.iter().enumerate() {
                let rows = &h[l][pk.segment * m * n..(pk.segment + 1) * m * n];
                contributions.push(((pk.cell, pl.cell), dense::matmul(&ct, rows, n, m, n)));
            }
        }
    }

    if let Some(((i, j), _)) = contributions
        .iter()
        .find(|((i, j), _)| *i >= nb || *j >= nb)
    {
        return Err(Error::shape(format!(
            "well couples cells ({i}, {j}) outside a matrix of {nb} block rows"
        )));
    }

    let source = a.as_block_row_major();
    let mut coords: BTreeMap<(usize, usize), ()> =
        source.pattern().entries().map(|e| (e, ())).collect();
    for (pos, _) in &contributions {
        coords.insert(*pos, ());
    }
    let pattern = extract_pattern(nb, coords.into_keys())?;
    let bb = n * n;
    let mut values = vec![0.0; pattern.nnz() * bb];
    for (k, (i, j)) in source.pattern().entries().enumerate() {
        let dst = pattern.find(i, j).expect("source entry in union pattern");
        values[dst * bb..(dst + 1) * bb].copy_from_slice(source.block(k));
    }
    for ((i, j), blk) in &contributions {
        let dst = pattern.find(*i, *j).expect("contribution in union pattern");
        for (v, c) in values[dst * bb..(dst + 1) * bb].iter_mut().zip(blk) {
            *v -= c;
        }
    }
    BlockMatrix::new(pattern, n, values, Layout::BlockRowMajor)
}
