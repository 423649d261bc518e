//! Blocked sparse linear solvers for reservoir-style systems.
//!
//! The crate provides a block compressed-row matrix type, ILU0 factorization
//! with level-scheduled or graph-colored parallel execution, a block-Jacobi
//! relaxed variant of that preconditioner, well operators (folded into the
//! matrix or applied as a separate term) and a right-preconditioned BiCGStab
//! solver with fallback to a sequential reference configuration.
//!
//! ```
//! use bilu::io::{generate, GeneratorSpec};
//! use bilu::bridge::{solve_with_fallback, SolverConfig};
//!
//! let bundle = generate(&GeneratorSpec::grid(4, 4, 4));
//! let cfg = SolverConfig::default();
//! let (x, report) = solve_with_fallback(&cfg, &bundle.matrix, &bundle.rhs, &bundle.wells).unwrap();
//! assert!(report.converged);
//! assert_eq!(x.len(), bundle.rhs.len());
//! ```

pub mod analysis;
pub mod blockcore;
pub mod bridge;
pub mod cli;
pub mod dense;
mod error;
pub mod ilu0;
pub mod io;
pub mod jacobi;
pub mod krylov;
pub mod wells;

pub use error::{Error, Result};
