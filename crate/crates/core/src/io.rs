//! Reading, writing and generating blocked linear systems.
//!
//! A system on disk is up to three files sharing a stem:
//!
//! * `<stem>.mtx`: the matrix, scalar coordinate Matrix Market
//!   (`%%MatrixMarket matrix coordinate real general`) with a mandatory
//!   `% blocksize: <b>` comment. Scalars are grouped into `b × b` blocks; a
//!   block exists as soon as one of its scalars is listed and unlisted
//!   scalars of an existing block are zero.
//! * `<stem>_rhs.mtx`: the right-hand side, array Matrix Market. When absent
//!   the right-hand side is `A·1`.
//! * `<stem>.wells`: well data, line oriented (see [`parse_wells`]). When
//!   absent the system has no wells.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::blockcore::{extract_pattern, spmv, BlockMatrix, BlockVector, Layout};
use crate::wells::{MultisegmentWell, Perforation, StandardWell, WellMode, WellSet};
use crate::{Error, Result};

/// Largest scalar dimension accepted from a file.
pub const MAX_SCALAR_ROWS: usize = 1 << 25;
/// Largest block size accepted from a file.
pub const MAX_BLOCK_SIZE: usize = 64;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Metadata {
    pub name: String,
    pub block_size: usize,
    /// Cell grid dimensions for generated systems.
    pub grid: Option<(usize, usize, usize)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SystemBundle {
    pub matrix: BlockMatrix,
    pub rhs: BlockVector,
    pub wells: WellSet,
    pub metadata: Metadata,
}

impl SystemBundle {
    pub fn num_block_rows(&self) -> usize {
        self.matrix.num_block_rows()
    }
}

/// Lines with their 1-based numbers, skipping blank lines.
fn numbered_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

fn parse_num<T: std::str::FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T> {
    let tok = tok.ok_or_else(|| Error::parse(line, format!("missing {what}")))?;
    tok.parse()
        .map_err(|_| Error::parse(line, format!("invalid {what} '{tok}'")))
}

fn parse_real(tok: &str, line: usize) -> Result<f64> {
    let v: f64 = tok
        .parse()
        .map_err(|_| Error::parse(line, format!("invalid real '{tok}'")))?;
    if !v.is_finite() {
        return Err(Error::parse(line, format!("non-finite value '{tok}'")));
    }
    Ok(v)
}

fn check_banner(line: usize, text: &str, kind: &str) -> Result<()> {
    let tokens: Vec<String> = text
        .split_whitespace()
        .map(|t| t.to_ascii_lowercase())
        .collect();
    let expected = ["%%matrixmarket", "matrix", kind, "real", "general"];
    if tokens.len() != expected.len() || tokens.iter().zip(expected).any(|(t, e)| t != e) {
        return Err(Error::parse(
            line,
            format!("expected '%%MatrixMarket matrix {kind} real general'"),
        ));
    }
    Ok(())
}

/// Parse a blocked coordinate Matrix Market matrix.
pub fn parse_matrix_market(text: &str) -> Result<BlockMatrix> {
    parse_matrix_with_metadata(text).map(|(m, _)| m)
}

fn parse_matrix_with_metadata(text: &str) -> Result<(BlockMatrix, Metadata)> {
    let mut lines = numbered_lines(text);
    let (ln, banner) = lines.next().ok_or_else(|| Error::parse(1, "empty input"))?;
    check_banner(ln, banner, "coordinate")?;

    let mut meta = Metadata::default();
    let mut block_size = None;
    let (ln, size_line) = loop {
        let (ln, line) = lines
            .next()
            .ok_or_else(|| Error::parse(ln, "missing size line"))?;
        let Some(comment) = line.strip_prefix('%') else {
            break (ln, line);
        };
        let comment = comment.trim();
        if let Some(v) = comment.strip_prefix("blocksize:") {
            let b: usize = parse_num(Some(v.trim()), ln, "block size")?;
            if b == 0 || b > MAX_BLOCK_SIZE {
                return Err(Error::parse(
                    ln,
                    format!("block size {b} outside 1..={MAX_BLOCK_SIZE}"),
                ));
            }
            block_size = Some(b);
        } else if let Some(v) = comment.strip_prefix("name:") {
            meta.name = v.trim().to_string();
        } else if let Some(v) = comment.strip_prefix("grid:") {
            let mut t = v.split_whitespace();
            let nx = parse_num(t.next(), ln, "grid nx")?;
            let ny = parse_num(t.next(), ln, "grid ny")?;
            let nz = parse_num(t.next(), ln, "grid nz")?;
            meta.grid = Some((nx, ny, nz));
        }
    };
    let b = block_size.ok_or_else(|| Error::parse(ln, "missing '% blocksize: <b>' comment"))?;
    meta.block_size = b;

    let mut t = size_line.split_whitespace();
    let rows: usize = parse_num(t.next(), ln, "row count")?;
    let cols: usize = parse_num(t.next(), ln, "column count")?;
    let nnz: usize = parse_num(t.next(), ln, "entry count")?;
    if t.next().is_some() {
        return Err(Error::parse(ln, "trailing tokens on size line"));
    }
    if rows > MAX_SCALAR_ROWS || cols > MAX_SCALAR_ROWS {
        return Err(Error::parse(
            ln,
            format!("dimension above {MAX_SCALAR_ROWS}"),
        ));
    }
    if rows != cols {
        return Err(Error::Blocking(format!(
            "matrix is {rows}×{cols}, not square"
        )));
    }
    if !rows.is_multiple_of(b) {
        return Err(Error::Blocking(format!(
            "{rows} rows do not divide into blocks of {b}"
        )));
    }
    let nb = rows / b;

    let mut blocks: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    let mut seen: HashSet<(usize, usize)> = HashSet::new();
    let mut count = 0;
    for (ln, line) in lines {
        if line.starts_with('%') {
            continue;
        }
        if count == nnz {
            return Err(Error::parse(
                ln,
                format!("more than the declared {nnz} entries"),
            ));
        }
        let mut t = line.split_whitespace();
        let i: usize = parse_num(t.next(), ln, "row index")?;
        let j: usize = parse_num(t.next(), ln, "column index")?;
        let v = parse_real(
            t.next().ok_or_else(|| Error::parse(ln, "missing value"))?,
            ln,
        )?;
        if t.next().is_some() {
            return Err(Error::parse(ln, "trailing tokens after entry"));
        }
        if i == 0 || j == 0 || i > rows || j > cols {
            return Err(Error::parse(
                ln,
                format!("entry ({i}, {j}) outside {rows}×{cols}"),
            ));
        }
        let (i, j) = (i - 1, j - 1);
        if !seen.insert((i, j)) {
            return Err(Error::parse(
                ln,
                format!("duplicate entry ({}, {})", i + 1, j + 1),
            ));
        }
        let blk = blocks
            .entry((i / b, j / b))
            .or_insert_with(|| vec![0.0; b * b]);
        blk[(i % b) * b + j % b] = v;
        count += 1;
    }
    if count != nnz {
        return Err(Error::parse(
            text.lines().count().max(1),
            format!("declared {nnz} entries, found {count}"),
        ));
    }
    let pattern = extract_pattern(nb, blocks.keys().copied())?;
    let values = blocks.into_values().flatten().collect();
    Ok((
        BlockMatrix::new(pattern, b, values, Layout::BlockRowMajor)?,
        meta,
    ))
}

/// Matrix Market text for `m`. Every scalar of every stored block is
/// written, so the block pattern survives a round trip.
pub fn format_matrix_market(m: &BlockMatrix) -> String {
    format_matrix_with_metadata(m, None)
}

fn format_matrix_with_metadata(m: &BlockMatrix, meta: Option<&Metadata>) -> String {
    let b = m.block_size();
    let mut out = String::new();
    out.push_str("%%MatrixMarket matrix coordinate real general\n");
    let _ = writeln!(out, "% blocksize: {b}");
    if let Some(meta) = meta {
        if !meta.name.is_empty() {
            let _ = writeln!(out, "% name: {}", meta.name);
        }
        if let Some((nx, ny, nz)) = meta.grid {
            let _ = writeln!(out, "% grid: {nx} {ny} {nz}");
        }
    }
    let _ = writeln!(out, "{} {} {}", m.dim(), m.dim(), m.nnz_blocks() * b * b);
    for v in m.views() {
        for r in 0..b {
            for c in 0..b {
                let _ = writeln!(
                    out,
                    "{} {} {:e}",
                    v.row * b + r + 1,
                    v.col * b + c + 1,
                    v.entries[r * b + c]
                );
            }
        }
    }
    out
}

/// Parse an array Matrix Market right-hand side into blocks of `block_size`.
pub fn parse_rhs(text: &str, block_size: usize) -> Result<BlockVector> {
    if block_size == 0 {
        return Err(Error::Blocking("block size must be positive".into()));
    }
    let mut lines =
        numbered_lines(text).filter(|(_, l)| !l.starts_with('%') || l.starts_with("%%"));
    let (ln, banner) = lines.next().ok_or_else(|| Error::parse(1, "empty input"))?;
    check_banner(ln, banner, "array")?;
    let (ln, size_line) = lines
        .next()
        .ok_or_else(|| Error::parse(ln, "missing size line"))?;
    let mut t = size_line.split_whitespace();
    let rows: usize = parse_num(t.next(), ln, "row count")?;
    let cols: usize = parse_num(t.next(), ln, "column count")?;
    if t.next().is_some() {
        return Err(Error::parse(ln, "trailing tokens on size line"));
    }
    if cols != 1 {
        return Err(Error::parse(ln, "right-hand side must have one column"));
    }
    if rows > MAX_SCALAR_ROWS {
        return Err(Error::parse(
            ln,
            format!("dimension above {MAX_SCALAR_ROWS}"),
        ));
    }
    if !rows.is_multiple_of(block_size) {
        return Err(Error::Blocking(format!(
            "{rows} entries do not divide into blocks of {block_size}"
        )));
    }
    let mut data = Vec::new();
    for (ln, line) in lines {
        if data.len() == rows {
            return Err(Error::parse(
                ln,
                format!("more than the declared {rows} values"),
            ));
        }
        let mut t = line.split_whitespace();
        let v = parse_real(t.next().unwrap_or_default(), ln)?;
        if t.next().is_some() {
            return Err(Error::parse(ln, "one value per line expected"));
        }
        data.push(v);
    }
    if data.len() != rows {
        return Err(Error::parse(
            text.lines().count().max(1),
            format!("declared {rows} values, found {}", data.len()),
        ));
    }
    BlockVector::new(block_size, data)
}

pub fn format_rhs(v: &BlockVector) -> String {
    let mut out = String::new();
    out.push_str("%%MatrixMarket matrix array real general\n");
    let _ = writeln!(out, "{} 1", v.len());
    for x in v.as_slice() {
        let _ = writeln!(out, "{x:e}");
    }
    out
}

fn take_record<'a, I>(
    lines: &mut I,
    keyword: &str,
    expected: usize,
    after: usize,
) -> Result<Vec<f64>>
where
    I: Iterator<Item = (usize, &'a str)>,
{
    let (ln, line) = lines
        .next()
        .ok_or_else(|| Error::parse(after, format!("missing '{keyword}' record")))?;
    let mut t = line.split_whitespace();
    if t.next() != Some(keyword) {
        return Err(Error::parse(ln, format!("expected '{keyword}' record")));
    }
    let values = t
        .map(|tok| parse_real(tok, ln))
        .collect::<Result<Vec<f64>>>()?;
    if values.len() != expected {
        return Err(Error::parse(
            ln,
            format!(
                "'{keyword}' needs {expected} values, found {}",
                values.len()
            ),
        ));
    }
    Ok(values)
}

fn checked_product(factors: &[usize], line: usize) -> Result<usize> {
    factors
        .iter()
        .try_fold(1usize, |acc, &f| acc.checked_mul(f))
        .ok_or_else(|| Error::parse(line, "dimensions overflow"))
}

/// Parse the line-oriented well format:
///
/// ```text
/// wells separate
/// standard <M> <N> <nperf>
/// perf <cell>
/// B <M·N values, row-major>
/// C <M·N values, row-major>
/// ...one perf/B/C triple per perforation...
/// D <M·M values, row-major>
/// end
/// multisegment <M> <N> <nseg> <nperf>
/// perf <cell> <segment>
/// B ...
/// C ...
/// D <nseg² blocks of M·M values; blocks in row-major block order>
/// end
/// ```
///
/// Blank lines and lines starting with `#` are ignored.
pub fn parse_wells(text: &str) -> Result<WellSet> {
    let mut lines = numbered_lines(text).filter(|(_, l)| !l.starts_with('#'));
    let (ln, header) = lines.next().ok_or_else(|| Error::parse(1, "empty input"))?;
    let mut t = header.split_whitespace();
    if t.next() != Some("wells") {
        return Err(Error::parse(ln, "expected 'wells <coupled|separate>'"));
    }
    let mode: WellMode = t
        .next()
        .ok_or_else(|| Error::parse(ln, "missing well mode"))?
        .parse()
        .map_err(|_| Error::parse(ln, "well mode must be 'coupled' or 'separate'"))?;
    let mut set = WellSet::empty(mode);

    while let Some((ln, line)) = lines.next() {
        let mut t = line.split_whitespace();
        let kind = t.next().unwrap_or_default();
        let multisegment = match kind {
            "standard" => false,
            "multisegment" => true,
            other => return Err(Error::parse(ln, format!("unknown well kind '{other}'"))),
        };
        let m: usize = parse_num(t.next(), ln, "well block size")?;
        let n: usize = parse_num(t.next(), ln, "cell block size")?;
        let nseg: usize = if multisegment {
            parse_num(t.next(), ln, "segment count")?
        } else {
            1
        };
        let nperf: usize = parse_num(t.next(), ln, "perforation count")?;
        if t.next().is_some() {
            return Err(Error::parse(ln, "trailing tokens on well header"));
        }
        let mn = checked_product(&[m, n], ln)?;
        let d_len = checked_product(&[nseg, nseg, m, m], ln)?;

        let mut perforations = Vec::new();
        let mut b_blocks = Vec::new();
        let mut c_blocks = Vec::new();
        let mut last = ln;
        for _ in 0..nperf {
            let (pln, pline) = lines
                .next()
                .ok_or_else(|| Error::parse(last, "missing 'perf' record"))?;
            let mut t = pline.split_whitespace();
            if t.next() != Some("perf") {
                return Err(Error::parse(pln, "expected 'perf' record"));
            }
            let cell: usize = parse_num(t.next(), pln, "perforated cell")?;
            let segment: usize = if multisegment {
                parse_num(t.next(), pln, "segment")?
            } else {
                0
            };
            if t.next().is_some() {
                return Err(Error::parse(pln, "trailing tokens on 'perf' record"));
            }
            perforations.push(Perforation { segment, cell });
            b_blocks.extend(take_record(&mut lines, "B", mn, pln)?);
            c_blocks.extend(take_record(&mut lines, "C", mn, pln)?);
            last = pln;
        }
        let d_blocks = take_record(&mut lines, "D", d_len, last)?;
        match lines.next() {
            Some((_, "end")) => {}
            Some((eln, _)) => return Err(Error::parse(eln, "expected 'end'")),
            None => return Err(Error::parse(last, "missing 'end'")),
        }
        let invalid = |e: Error| match e {
            Error::InvalidWell(msg) => Error::parse(ln, msg),
            Error::SingularWellMatrix => Error::parse(ln, "singular D"),
            other => other,
        };
        if multisegment {
            let d = blocks_to_dense(&d_blocks, nseg, m);
            set.multisegment.push(
                MultisegmentWell::new(m, n, nseg, perforations, b_blocks, c_blocks, d)
                    .map_err(invalid)?,
            );
        } else {
            let cells = perforations.iter().map(|p| p.cell).collect();
            set.standard.push(
                StandardWell::new(m, n, cells, b_blocks, c_blocks, d_blocks).map_err(invalid)?,
            );
        }
    }
    Ok(set)
}

fn blocks_to_dense(blocks: &[f64], nseg: usize, m: usize) -> Vec<f64> {
    let dim = nseg * m;
    let mut dense = vec![0.0; dim * dim];
    for bi in 0..nseg {
        for bj in 0..nseg {
            let base = (bi * nseg + bj) * m * m;
            for r in 0..m {
                for c in 0..m {
                    dense[(bi * m + r) * dim + bj * m + c] = blocks[base + r * m + c];
                }
            }
        }
    }
    dense
}

fn dense_to_blocks(dense: &[f64], nseg: usize, m: usize) -> Vec<f64> {
    let dim = nseg * m;
    let mut blocks = Vec::with_capacity(dense.len());
    for bi in 0..nseg {
        for bj in 0..nseg {
            for r in 0..m {
                for c in 0..m {
                    blocks.push(dense[(bi * m + r) * dim + bj * m + c]);
                }
            }
        }
    }
    blocks
}

fn push_record(out: &mut String, keyword: &str, values: &[f64]) {
    out.push_str(keyword);
    for v in values {
        let _ = write!(out, " {v:e}");
    }
    out.push('\n');
}

pub fn format_wells(wells: &WellSet) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "wells {}", wells.mode);
    for w in &wells.standard {
        let _ = writeln!(
            out,
            "standard {} {} {}",
            w.well_block(),
            w.cell_block(),
            w.perforated_cells().len()
        );
        for (p, cell) in w.perforated_cells().iter().enumerate() {
            let _ = writeln!(out, "perf {cell}");
            push_record(&mut out, "B", w.b_block(p));
            push_record(&mut out, "C", w.c_block(p));
        }
        push_record(&mut out, "D", w.d());
        out.push_str("end\n");
    }
    for w in &wells.multisegment {
        let _ = writeln!(
            out,
            "multisegment {} {} {} {}",
            w.well_block(),
            w.cell_block(),
            w.num_segments(),
            w.perforations().len()
        );
        for (p, perf) in w.perforations().iter().enumerate() {
            let _ = writeln!(out, "perf {} {}", perf.cell, perf.segment);
            push_record(&mut out, "B", w.b_block(p));
            push_record(&mut out, "C", w.c_block(p));
        }
        push_record(
            &mut out,
            "D",
            &dense_to_blocks(w.d(), w.num_segments(), w.well_block()),
        );
        out.push_str("end\n");
    }
    out
}

/// Right-hand side and well file names belonging to a matrix file.
pub fn companion_paths(matrix_path: &Path) -> (PathBuf, PathBuf) {
    let stem = matrix_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let rhs = matrix_path.with_file_name(format!("{stem}_rhs.mtx"));
    let wells = matrix_path.with_extension("wells");
    (rhs, wells)
}

pub fn read_system(path: impl AsRef<Path>) -> Result<SystemBundle> {
    let path = path.as_ref();
    let (matrix, mut metadata) = parse_matrix_with_metadata(&fs::read_to_string(path)?)?;
    if metadata.name.is_empty() {
        metadata.name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
    }
    let (rhs_path, wells_path) = companion_paths(path);
    let rhs = if rhs_path.exists() {
        let rhs = parse_rhs(&fs::read_to_string(&rhs_path)?, matrix.block_size())?;
        if rhs.len() != matrix.dim() {
            return Err(Error::shape(format!(
                "right-hand side has {} entries, matrix dimension is {}",
                rhs.len(),
                matrix.dim()
            )));
        }
        rhs
    } else {
        spmv(
            &matrix,
            &BlockVector::from_fn(matrix.num_block_rows(), matrix.block_size(), |_| 1.0),
        )?
    };
    let wells = if wells_path.exists() {
        parse_wells(&fs::read_to_string(&wells_path)?)?
    } else {
        WellSet::default()
    };
    Ok(SystemBundle {
        matrix,
        rhs,
        wells,
        metadata,
    })
}

/// Write matrix, right-hand side and (if any) wells next to each other.
pub fn write_system(bundle: &SystemBundle, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (rhs_path, wells_path) = companion_paths(path);
    fs::write(
        path,
        format_matrix_with_metadata(&bundle.matrix, Some(&bundle.metadata)),
    )?;
    fs::write(rhs_path, format_rhs(&bundle.rhs))?;
    if !bundle.wells.is_empty() {
        fs::write(wells_path, format_wells(&bundle.wells))?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum WellKind {
    #[default]
    Standard,
    Multisegment,
}

impl std::str::FromStr for WellKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" | "std" => Ok(WellKind::Standard),
            "multisegment" | "msw" => Ok(WellKind::Multisegment),
            other => Err(Error::Config(format!("unknown well kind '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WellGenSpec {
    pub count: usize,
    pub kind: WellKind,
    /// Perforated cells per well, from the top layer down.
    pub perforation_depth: usize,
    pub well_block: usize,
}

impl Default for WellGenSpec {
    fn default() -> Self {
        WellGenSpec {
            count: 0,
            kind: WellKind::Standard,
            perforation_depth: 3,
            well_block: 4,
        }
    }
}

/// Synthetic reservoir-like system on an `nx × ny × nz` cell grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorSpec {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub block_size: usize,
    /// Coupling strength in x, y and z.
    pub transmissibility: [f64; 3],
    /// Added to every diagonal entry after the absolute row sum; must be > 0.
    pub diagonal_boost: f64,
    pub wells: WellGenSpec,
    pub seed: u64,
}

impl GeneratorSpec {
    pub fn grid(nx: usize, ny: usize, nz: usize) -> Self {
        GeneratorSpec {
            nx,
            ny,
            nz,
            block_size: 3,
            transmissibility: [1.0, 1.0, 0.1],
            diagonal_boost: 0.05,
            wells: WellGenSpec::default(),
            seed: 0,
        }
    }

    pub fn num_cells(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    fn cell(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.nx * (y + self.ny * z)
    }
}

fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    rng.gen_range(-1.0..1.0)
}

/// Seven-point stencil system: off-diagonal blocks `−t_d·(I + 0.2·R)`, and
/// diagonal blocks whose diagonal entries exceed the absolute sum of the rest
/// of their scalar row by `diagonal_boost`.
pub fn generate(spec: &GeneratorSpec) -> SystemBundle {
    assert!(
        spec.nx >= 1 && spec.ny >= 1 && spec.nz >= 1,
        "grid dimensions must be positive"
    );
    assert!(spec.block_size >= 1, "block size must be positive");
    assert!(spec.diagonal_boost > 0.0, "diagonal boost must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let b = spec.block_size;
    let bb = b * b;
    let nb = spec.num_cells();

    let mut blocks: Vec<(usize, usize, Vec<f64>)> = Vec::with_capacity(nb * 7);
    for z in 0..spec.nz {
        for y in 0..spec.ny {
            for x in 0..spec.nx {
                let i = spec.cell(x, y, z);
                let mut neighbours: Vec<(usize, f64)> = Vec::with_capacity(6);
                if z > 0 {
                    neighbours.push((spec.cell(x, y, z - 1), spec.transmissibility[2]));
                }
                if y > 0 {
                    neighbours.push((spec.cell(x, y - 1, z), spec.transmissibility[1]));
                }
                if x > 0 {
                    neighbours.push((spec.cell(x - 1, y, z), spec.transmissibility[0]));
                }
                if x + 1 < spec.nx {
                    neighbours.push((spec.cell(x + 1, y, z), spec.transmissibility[0]));
                }
                if y + 1 < spec.ny {
                    neighbours.push((spec.cell(x, y + 1, z), spec.transmissibility[1]));
                }
                if z + 1 < spec.nz {
                    neighbours.push((spec.cell(x, y, z + 1), spec.transmissibility[2]));
                }

                let mut row_abs = vec![0.0; b];
                let mut row_blocks = Vec::with_capacity(neighbours.len() + 1);
                for &(j, t) in &neighbours {
                    let mut blk = vec![0.0; bb];
                    for r in 0..b {
                        for c in 0..b {
                            let id = if r == c { 1.0 } else { 0.0 };
                            let v = -t * (id + 0.2 * uniform(&mut rng));
                            blk[r * b + c] = v;
                            row_abs[r] += v.abs();
                        }
                    }
                    row_blocks.push((i, j, blk));
                }
                let coupling = 0.1 * spec.transmissibility.iter().sum::<f64>() / 3.0;
                let mut diag = vec![0.0; bb];
                for r in 0..b {
                    for c in 0..b {
                        if r != c {
                            let v = coupling * uniform(&mut rng);
                            diag[r * b + c] = v;
                            row_abs[r] += v.abs();
                        }
                    }
                }
                for r in 0..b {
                    diag[r * b + r] = row_abs[r] + spec.diagonal_boost;
                }
                row_blocks.push((i, i, diag));
                blocks.extend(row_blocks);
            }
        }
    }
    let matrix = BlockMatrix::from_blocks(nb, b, blocks).expect("generated pattern is valid");
    let rhs = BlockVector::from_fn(nb, b, |_| uniform(&mut rng));
    let wells = generate_wells(spec, &mut rng);
    SystemBundle {
        matrix,
        rhs,
        wells,
        metadata: Metadata {
            name: format!("grid-{}x{}x{}", spec.nx, spec.ny, spec.nz),
            block_size: b,
            grid: Some((spec.nx, spec.ny, spec.nz)),
        },
    }
}

fn generate_wells(spec: &GeneratorSpec, rng: &mut ChaCha8Rng) -> WellSet {
    let ws = &spec.wells;
    let mut set = WellSet::default();
    if ws.count == 0 {
        return set;
    }
    let (m, n) = (ws.well_block, spec.block_size);
    let depth = ws.perforation_depth.clamp(1, spec.nz);
    let scale = 0.5 * spec.transmissibility[0].max(spec.transmissibility[1]);
    let columns = spec.nx * spec.ny;
    let mut used = HashSet::new();
    for _ in 0..ws.count {
        let mut col = rng.gen_range(0..columns);
        if used.len() < columns {
            while !used.insert(col) {
                col = (col + 1) % columns;
            }
        }
        let (x, y) = (col % spec.nx, col / spec.nx);
        let cells: Vec<usize> = (0..depth).map(|z| spec.cell(x, y, z)).collect();

        let mut b_blocks = Vec::with_capacity(depth * m * n);
        let mut c_blocks = Vec::with_capacity(depth * m * n);
        for _ in 0..depth * m * n {
            let v = scale * rng.gen_range(0.0..1.0);
            b_blocks.push(v);
            c_blocks.push(-v * (1.0 + 0.05 * uniform(rng)));
        }
        match ws.kind {
            WellKind::Standard => {
                let d = dominant_dense(m, rng);
                set.standard.push(
                    StandardWell::new(m, n, cells, b_blocks, c_blocks, d)
                        .expect("generated well is valid"),
                );
            }
            WellKind::Multisegment => {
                let nseg = depth;
                let dim = nseg * m;
                let mut d = vec![0.0; dim * dim];
                for r in 0..dim {
                    let seg = r / m;
                    for c in 0..dim {
                        let cseg = c / m;
                        if r != c && seg.abs_diff(cseg) <= 1 {
                            d[r * dim + c] = 0.3 * uniform(rng);
                        }
                    }
                    let off: f64 = (0..dim)
                        .filter(|&c| c != r)
                        .map(|c| d[r * dim + c].abs())
                        .sum();
                    d[r * dim + r] = off + 1.0 + rng.gen_range(0.0..1.0);
                }
                let perforations = cells
                    .iter()
                    .enumerate()
                    .map(|(k, &cell)| Perforation { segment: k, cell })
                    .collect();
                set.multisegment.push(
                    MultisegmentWell::new(m, n, nseg, perforations, b_blocks, c_blocks, d)
                        .expect("generated well is valid"),
                );
            }
        }
    }
    set
}

fn dominant_dense(m: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut d = vec![0.0; m * m];
    for r in 0..m {
        let mut off = 0.0;
        for c in 0..m {
            if r != c {
                let v = 0.2 * uniform(rng);
                d[r * m + c] = v;
                off += v.abs();
            }
        }
        d[r * m + r] = off + 1.0 + rng.gen_range(0.0..1.0);
    }
    d
}
