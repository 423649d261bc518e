//! Right-preconditioned BiCGStab.
//!
//! Reductions (`dot`, `norm`) sum fixed 64-element chunks first and then add
//! the partial sums in order, so results do not depend on the number of
//! worker threads.

use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::blockcore::{spmv_into, BlockMatrix, BlockVector};
use crate::ilu0::Ilu0Factorization;
use crate::wells::WellSet;
use crate::{Error, Result};

/// Width of one reduction chunk.
pub const REDUCTION_CHUNK: usize = 64;

/// Below this many chunks the partial sums are formed on the calling thread.
const PAR_MIN_CHUNKS: usize = 64;

/// |ρ|, |ω| or |(r̂, v)| below this ends the iteration as a breakdown.
pub const BREAKDOWN_THRESHOLD: f64 = 1e-60;

pub trait LinearOperator: Sync {
    fn num_block_rows(&self) -> usize;
    fn block_size(&self) -> usize;
    /// `y = op(x)`.
    fn apply(&self, x: &BlockVector, y: &mut BlockVector) -> Result<()>;
}

/// Plain `y = A·x`.
#[derive(Clone, Copy, Debug)]
pub struct MatrixOperator<'a> {
    pub matrix: &'a BlockMatrix,
}

impl<'a> MatrixOperator<'a> {
    pub fn new(matrix: &'a BlockMatrix) -> Self {
        MatrixOperator { matrix }
    }
}

impl LinearOperator for MatrixOperator<'_> {
    fn num_block_rows(&self) -> usize {
        self.matrix.num_block_rows()
    }

    fn block_size(&self) -> usize {
        self.matrix.block_size()
    }

    fn apply(&self, x: &BlockVector, y: &mut BlockVector) -> Result<()> {
        spmv_into(self.matrix, x, y)
    }
}

/// `y = A·x − Σ_w Cᵀ·D⁻¹·B·x`: the matrix product followed by every well's
/// contribution.
#[derive(Clone, Copy, Debug)]
pub struct WellAugmentedOperator<'a> {
    pub matrix: &'a BlockMatrix,
    pub wells: &'a WellSet,
}

impl<'a> WellAugmentedOperator<'a> {
    pub fn new(matrix: &'a BlockMatrix, wells: &'a WellSet) -> Self {
        WellAugmentedOperator { matrix, wells }
    }
}

impl LinearOperator for WellAugmentedOperator<'_> {
    fn num_block_rows(&self) -> usize {
        self.matrix.num_block_rows()
    }

    fn block_size(&self) -> usize {
        self.matrix.block_size()
    }

    fn apply(&self, x: &BlockVector, y: &mut BlockVector) -> Result<()> {
        spmv_into(self.matrix, x, y)?;
        self.wells.subtract_contributions(x, y)
    }
}

pub trait Preconditioner: Sync {
    /// `z = M⁻¹·r`.
    fn apply(&self, r: &BlockVector, z: &mut BlockVector) -> Result<()>;

    /// Parallel groups used, reported as the color count.
    fn group_count(&self) -> usize {
        0
    }
}

impl Preconditioner for Ilu0Factorization {
    fn apply(&self, r: &BlockVector, z: &mut BlockVector) -> Result<()> {
        self.apply_into(r, z)
    }

    fn group_count(&self) -> usize {
        self.plan().group_count()
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityPreconditioner;

impl Preconditioner for IdentityPreconditioner {
    fn apply(&self, r: &BlockVector, z: &mut BlockVector) -> Result<()> {
        if !r.same_shape(z) {
            return Err(Error::shape(
                "identity preconditioner: vector shapes differ",
            ));
        }
        z.as_mut_slice().copy_from_slice(r.as_slice());
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StoppingCriteria {
    pub relative_reduction: f64,
    pub max_iterations: usize,
}

impl Default for StoppingCriteria {
    fn default() -> Self {
        StoppingCriteria {
            relative_reduction: 0.01,
            max_iterations: 200,
        }
    }
}

impl StoppingCriteria {
    pub fn new(relative_reduction: f64, max_iterations: usize) -> Result<Self> {
        let s = StoppingCriteria {
            relative_reduction,
            max_iterations,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.relative_reduction > 0.0 && self.relative_reduction < 1.0) {
            return Err(Error::Config(format!(
                "relative reduction {} must lie in (0, 1)",
                self.relative_reduction
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("iteration budget must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    Breakdown,
    NumericalFailure,
    /// The preconditioner could not be built (singular pivot, bad partition count).
    SetupFailed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveReport {
    pub converged: bool,
    pub status: SolveStatus,
    /// Counts half-steps as 0.5.
    pub iterations: f64,
    pub initial_norm: f64,
    pub final_norm: f64,
    /// Krylov iteration time.
    pub elapsed: Duration,
    /// Analysis, relaxation, factorization and well folding; filled by the bridge.
    pub setup: Duration,
    pub group_count: usize,
    pub fallback_used: bool,
}

impl SolveReport {
    /// `final_norm / initial_norm`, or 0 when the initial residual vanished.
    pub fn reduction(&self) -> f64 {
        if self.initial_norm == 0.0 {
            0.0
        } else {
            self.final_norm / self.initial_norm
        }
    }

    /// Equality of everything except the wall-clock times.
    pub fn same_outcome(&self, other: &SolveReport) -> bool {
        self.converged == other.converged
            && self.status == other.status
            && self.iterations.to_bits() == other.iterations.to_bits()
            && self.initial_norm.to_bits() == other.initial_norm.to_bits()
            && self.final_norm.to_bits() == other.final_norm.to_bits()
            && self.group_count == other.group_count
            && self.fallback_used == other.fallback_used
    }
}

fn chunk_sum(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

fn dot_slices(a: &[f64], b: &[f64]) -> f64 {
    let chunks = a.len().div_ceil(REDUCTION_CHUNK);
    let partials: Vec<f64> = if chunks >= PAR_MIN_CHUNKS {
        a.par_chunks(REDUCTION_CHUNK)
            .zip(b.par_chunks(REDUCTION_CHUNK))
            .map(|(x, y)| chunk_sum(x, y))
            .collect()
    } else {
        a.chunks(REDUCTION_CHUNK)
            .zip(b.chunks(REDUCTION_CHUNK))
            .map(|(x, y)| chunk_sum(x, y))
            .collect()
    };
    partials.iter().fold(0.0, |acc, p| acc + p)
}

pub fn dot(a: &BlockVector, b: &BlockVector) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(format!(
            "dot of vectors with {} and {} entries",
            a.len(),
            b.len()
        )));
    }
    Ok(dot_slices(a.as_slice(), b.as_slice()))
}

pub fn norm(a: &BlockVector) -> f64 {
    dot_slices(a.as_slice(), a.as_slice()).sqrt()
}

/// `y += alpha·x`.
fn axpy(alpha: f64, x: &BlockVector, y: &mut BlockVector) {
    for (yi, xi) in y.as_mut_slice().iter_mut().zip(x.as_slice()) {
        *yi += alpha * xi;
    }
}

/// Solve `op(x) = b` with BiCGStab, right-preconditioned by `precond`.
///
/// Stops once `‖b − op(x)‖₂ ≤ relative_reduction · ‖b − op(x0)‖₂`. The
/// recurrence residual triggers the check; the true residual is recomputed
/// to confirm it, and replaces the recurrence residual if it disagrees.
pub fn bicgstab(
    op: &dyn LinearOperator,
    precond: &dyn Preconditioner,
    b: &BlockVector,
    x0: &BlockVector,
    stop: &StoppingCriteria,
) -> Result<(BlockVector, SolveReport)> {
    let start = Instant::now();
    stop.validate()?;
    let nb = op.num_block_rows();
    let bs = op.block_size();
    if b.num_blocks() != nb || b.block_size() != bs || !x0.same_shape(b) {
        return Err(Error::shape(format!(
            "bicgstab: operator is {nb} blocks of size {bs}, rhs has {} entries, x0 has {}",
            b.len(),
            x0.len()
        )));
    }

    let zeros = || BlockVector::zeros(nb, bs);
    let true_residual = |x: &BlockVector, out: &mut BlockVector| -> Result<f64> {
        op.apply(x, out)?;
        for (o, bi) in out.as_mut_slice().iter_mut().zip(b.as_slice()) {
            *o = bi - *o;
        }
        Ok(norm(out))
    };

    let mut x = x0.clone();
    let mut r = zeros();
    let initial_norm = true_residual(&x, &mut r)?;
    let target = stop.relative_reduction * initial_norm;

    let mut report = SolveReport {
        converged: false,
        status: SolveStatus::MaxIterations,
        iterations: 0.0,
        initial_norm,
        final_norm: initial_norm,
        elapsed: Duration::ZERO,
        setup: Duration::ZERO,
        group_count: precond.group_count(),
        fallback_used: false,
    };
    let finish = |mut report: SolveReport, status: SolveStatus, final_norm: f64| {
        report.status = status;
        report.converged = status == SolveStatus::Converged;
        report.final_norm = final_norm;
        report.elapsed = start.elapsed();
        report
    };

    if !initial_norm.is_finite() {
        return Ok((
            x,
            finish(report, SolveStatus::NumericalFailure, initial_norm),
        ));
    }
    if initial_norm == 0.0 {
        return Ok((x, finish(report, SolveStatus::Converged, 0.0)));
    }

    let r_hat = r.clone();
    let mut p = zeros();
    let mut v = zeros();
    let mut p_hat = zeros();
    let mut s_hat = zeros();
    let mut t = zeros();
    let mut scratch = zeros();
    let (mut rho_prev, mut alpha, mut omega) = (1.0f64, 1.0f64, 1.0f64);
    let mut current_norm = initial_norm;

    for _ in 0..stop.max_iterations {
        let rho = dot_slices(r_hat.as_slice(), r.as_slice());
        if !rho.is_finite() {
            return Ok((
                x,
                finish(report, SolveStatus::NumericalFailure, current_norm),
            ));
        }
        if rho.abs() < BREAKDOWN_THRESHOLD {
            return Ok((x, finish(report, SolveStatus::Breakdown, current_norm)));
        }
        let beta = (rho / rho_prev) * (alpha / omega);
        // p = r + beta (p - omega v)
        for ((pi, ri), vi) in p
            .as_mut_slice()
            .iter_mut()
            .zip(r.as_slice())
            .zip(v.as_slice())
        {
            *pi = ri + beta * (*pi - omega * vi);
        }
        precond.apply(&p, &mut p_hat)?;
        op.apply(&p_hat, &mut v)?;
        let rv = dot_slices(r_hat.as_slice(), v.as_slice());
        if !rv.is_finite() {
            return Ok((
                x,
                finish(report, SolveStatus::NumericalFailure, current_norm),
            ));
        }
        if rv.abs() < BREAKDOWN_THRESHOLD {
            return Ok((x, finish(report, SolveStatus::Breakdown, current_norm)));
        }
        alpha = rho / rv;

        // s = r - alpha v, kept in r
        axpy(-alpha, &v, &mut r);
        axpy(alpha, &p_hat, &mut x);
        report.iterations += 0.5;
        let s_norm = norm(&r);
        if !s_norm.is_finite() {
            return Ok((x, finish(report, SolveStatus::NumericalFailure, s_norm)));
        }
        current_norm = s_norm;
        if s_norm <= target {
            let true_norm = true_residual(&x, &mut scratch)?;
            if true_norm <= target {
                return Ok((x, finish(report, SolveStatus::Converged, true_norm)));
            }
        }

        precond.apply(&r, &mut s_hat)?;
        op.apply(&s_hat, &mut t)?;
        let tt = dot_slices(t.as_slice(), t.as_slice());
        let ts = dot_slices(t.as_slice(), r.as_slice());
        if !(tt.is_finite() && ts.is_finite()) {
            return Ok((
                x,
                finish(report, SolveStatus::NumericalFailure, current_norm),
            ));
        }
        if tt == 0.0 {
            return Ok((x, finish(report, SolveStatus::Breakdown, current_norm)));
        }
        omega = ts / tt;
        axpy(omega, &s_hat, &mut x);
        axpy(-omega, &t, &mut r);
        report.iterations += 0.5;
        let r_norm = norm(&r);
        if !r_norm.is_finite() {
            return Ok((x, finish(report, SolveStatus::NumericalFailure, r_norm)));
        }
        current_norm = r_norm;
        if r_norm <= target {
            let true_norm = true_residual(&x, &mut scratch)?;
            if true_norm <= target {
                return Ok((x, finish(report, SolveStatus::Converged, true_norm)));
            }
            std::mem::swap(&mut r, &mut scratch);
            current_norm = true_norm;
        }
        if omega.abs() < BREAKDOWN_THRESHOLD {
            return Ok((x, finish(report, SolveStatus::Breakdown, current_norm)));
        }
        rho_prev = rho;
    }
    let final_norm = true_residual(&x, &mut scratch)?;
    let status = if final_norm.is_finite() {
        SolveStatus::MaxIterations
    } else {
        SolveStatus::NumericalFailure
    };
    Ok((x, finish(report, status, final_norm)))
}
