//! Solver configuration, orchestration and fallback.
//!
//! A solve builds the preconditioner matrix (optionally block-Jacobi
//! relaxed), extracts a parallel plan, factors, permutes the system into the
//! plan's ordering and runs BiCGStab there. If the configured backend fails,
//! the system is solved again from scratch with the sequential reference
//! configuration.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use crate::analysis::{
    apply_permutation, apply_permutation_vec, graph_color, level_schedule, unapply_permutation_vec,
    ParallelPlan,
};
use crate::blockcore::{BlockMatrix, BlockVector};
use crate::ilu0::decompose;
use crate::jacobi::{drop_cross_blocks, partition, EdgeWeights};
use crate::krylov::{
    bicgstab, LinearOperator, MatrixOperator, SolveReport, SolveStatus, StoppingCriteria,
    WellAugmentedOperator,
};
use crate::wells::{fold_into_matrix, WellMode, WellSet};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum Backend {
    ReferenceSequential,
    #[default]
    LevelScheduled,
    GraphColored,
}

impl Backend {
    pub const ALL: [Backend; 3] = [
        Backend::ReferenceSequential,
        Backend::LevelScheduled,
        Backend::GraphColored,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Backend::ReferenceSequential => "reference",
            Backend::LevelScheduled => "level",
            Backend::GraphColored => "color",
        }
    }

    fn plan_for(&self, matrix: &BlockMatrix) -> Result<ParallelPlan> {
        match self {
            Backend::ReferenceSequential => {
                matrix.pattern().diagonal_positions()?;
                Ok(ParallelPlan::sequential(matrix.num_block_rows()))
            }
            Backend::LevelScheduled => level_schedule(matrix.pattern()),
            Backend::GraphColored => graph_color(matrix.pattern()),
        }
    }
}

impl FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reference" | "reference-sequential" | "sequential" => Ok(Backend::ReferenceSequential),
            "level" | "level-scheduled" => Ok(Backend::LevelScheduled),
            "color" | "graph-colored" => Ok(Backend::GraphColored),
            other => Err(Error::Config(format!(
                "unknown backend '{other}' (available: reference, level, color)"
            ))),
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub backend: Backend,
    /// Block-Jacobi partitions for the preconditioner; 0 disables.
    pub jacobi_partitions: usize,
    pub well_mode: WellMode,
    pub stop: StoppingCriteria,
    /// Iteration budget of the reference solver after a failure.
    pub fallback_max_iterations: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            backend: Backend::default(),
            jacobi_partitions: 0,
            well_mode: WellMode::Separate,
            stop: StoppingCriteria::default(),
            fallback_max_iterations: StoppingCriteria::default().max_iterations,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        self.stop.validate()?;
        if self.fallback_max_iterations == 0 {
            return Err(Error::Config(
                "fallback iteration budget must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Sequential ILU0 on the full matrix, same tolerance, fallback budget.
    pub fn reference(&self) -> SolverConfig {
        SolverConfig {
            backend: Backend::ReferenceSequential,
            jacobi_partitions: 0,
            well_mode: self.well_mode,
            stop: StoppingCriteria {
                relative_reduction: self.stop.relative_reduction,
                max_iterations: self.fallback_max_iterations,
            },
            fallback_max_iterations: self.fallback_max_iterations,
        }
    }
}

fn check_system(a: &BlockMatrix, b: &BlockVector) -> Result<()> {
    if a.block_size() != b.block_size() || a.dim() != b.len() {
        return Err(Error::shape(format!(
            "matrix of {} blocks of size {} with rhs of {} entries in blocks of {}",
            a.num_block_rows(),
            a.block_size(),
            b.len(),
            b.block_size()
        )));
    }
    Ok(())
}

fn setup_failure(initial_norm: f64, setup: Duration) -> SolveReport {
    SolveReport {
        converged: false,
        status: SolveStatus::SetupFailed,
        iterations: 0.0,
        initial_norm,
        final_norm: initial_norm,
        elapsed: Duration::ZERO,
        setup,
        group_count: 0,
        fallback_used: false,
    }
}

/// Run one configuration without fallback.
///
/// Returns `Err` only for malformed input (shape errors). A failure to
/// factor or to converge comes back as a report with `converged == false`;
/// the returned vector is then the zero start vector or the last iterate.
pub fn solve(
    cfg: &SolverConfig,
    a: &BlockMatrix,
    b: &BlockVector,
    wells: &WellSet,
) -> Result<(BlockVector, SolveReport)> {
    cfg.validate()?;
    check_system(a, b)?;
    wells.check_against(a.num_block_rows(), a.block_size())?;
    let setup_start = Instant::now();
    let zero = BlockVector::zeros(a.num_block_rows(), a.block_size());

    let coupled = cfg.well_mode == WellMode::Coupled && !wells.is_empty();
    let folded;
    let system = if coupled {
        folded = fold_into_matrix(a, wells)?;
        &folded
    } else {
        a
    };

    let prepared = (|| -> Result<_> {
        let relaxed;
        let precond_source = if cfg.jacobi_partitions > 0 {
            let weights = EdgeWeights::from_block_norms(system);
            let parts = partition(system.pattern(), &weights, cfg.jacobi_partitions)?;
            relaxed = drop_cross_blocks(system, &parts)?.0;
            &relaxed
        } else {
            system
        };
        let plan = cfg.backend.plan_for(precond_source)?;
        let factorization = decompose(precond_source, &plan)?;
        Ok((plan, factorization))
    })();
    let (plan, factorization) = match prepared {
        Ok(p) => p,
        Err(Error::Shape(msg)) => return Err(Error::Shape(msg)),
        Err(_) => {
            let r0 = crate::krylov::norm(b);
            return Ok((zero, setup_failure(r0, setup_start.elapsed())));
        }
    };

    let permuted_matrix;
    let permuted_wells;
    let (op_matrix, op_wells, rhs) = if plan.is_identity() {
        (system, wells, b.clone())
    } else {
        permuted_matrix = apply_permutation(system, &plan)?;
        permuted_wells = wells.permuted(plan.permutation());
        (
            &permuted_matrix,
            &permuted_wells,
            apply_permutation_vec(b, &plan)?,
        )
    };
    let separate_wells = !coupled && !op_wells.is_empty();
    let matrix_op = MatrixOperator::new(op_matrix);
    let well_op = WellAugmentedOperator::new(op_matrix, op_wells);
    let op: &dyn LinearOperator = if separate_wells { &well_op } else { &matrix_op };
    let setup = setup_start.elapsed();

    let (x, mut report) = bicgstab(op, &factorization, &rhs, &zero, &cfg.stop)?;
    report.setup = setup;
    let x = if plan.is_identity() {
        x
    } else {
        unapply_permutation_vec(&x, &plan)?
    };
    Ok((x, report))
}

/// Run the configured backend; on failure rerun with [`SolverConfig::reference`].
pub fn solve_with_fallback(
    cfg: &SolverConfig,
    a: &BlockMatrix,
    b: &BlockVector,
    wells: &WellSet,
) -> Result<(BlockVector, SolveReport)> {
    let (x, primary) = solve(cfg, a, b, wells)?;
    if primary.converged {
        return Ok((x, primary));
    }
    let (x, mut fallback) = solve(&cfg.reference(), a, b, wells)?;
    fallback.fallback_used = true;
    fallback.setup += primary.setup;
    if fallback.converged {
        Ok((x, fallback))
    } else {
        Err(Error::SolveFailed {
            primary: Box::new(primary),
            fallback: Box::new(fallback),
        })
    }
}
