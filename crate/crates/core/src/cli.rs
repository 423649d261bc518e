//! The `bilu-bench` benchmark harness.
//!
//! Every solve prints one line `time_s, iterations, reduction | groups, fallback`
//! and the run ends with a summary in the shape
//! `summary: A (B+C+D), -, -, H | I, J`:
//!
//! * A: total wall time, B: setup (analysis, decomposition, well folding),
//!   C: Krylov iterations, D: everything else (I/O, generation, permutation);
//! * H: linear iterations summed over all solves;
//! * I: largest parallel group count seen;
//! * J: solves whose configured backend failed (rescued by fallback or not).
//!
//! The two dashes stand for simulator stages this harness does not have.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use clap::Parser;
use rayon::prelude::*;

use crate::bridge::{solve, solve_with_fallback, Backend, SolverConfig};
use crate::io::{generate, read_system, write_system, GeneratorSpec, SystemBundle, WellKind};
use crate::krylov::{SolveReport, StoppingCriteria};
use crate::wells::WellMode;
use crate::Error;

#[derive(Parser, Debug, Clone)]
#[command(
    name = "bilu-bench",
    version,
    about = "Benchmark blocked ILU0-BiCGStab solves"
)]
pub struct Args {
    /// Matrix Market system to solve (repeatable).
    #[arg(long, value_name = "PATH", required_unless_present = "generate")]
    pub input: Vec<PathBuf>,

    /// Generate a synthetic system on an nx,ny,nz cell grid.
    #[arg(long, value_name = "NX,NY,NZ", value_parser = parse_grid, conflicts_with = "input")]
    pub generate: Option<(usize, usize, usize)>,

    #[arg(long, default_value = "level", value_parser = parse_backend)]
    pub backend: Backend,

    /// Block-Jacobi partitions for the preconditioner (0 disables).
    #[arg(long, default_value_t = 0)]
    pub jacobi_blocks: usize,

    #[arg(long, default_value = "separate", value_parser = parse_well_mode)]
    pub wells: WellMode,

    /// Required relative residual reduction.
    #[arg(long, default_value_t = 0.01)]
    pub tol: f64,

    #[arg(long, default_value_t = 200)]
    pub max_iter: usize,

    /// Generator seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Solves per system.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub repeat: u64,

    /// Also write per-solve rows to this CSV file.
    #[arg(long, value_name = "PATH")]
    pub csv: Option<PathBuf>,

    /// Solve independent systems concurrently.
    #[arg(long)]
    pub parallel: bool,

    /// Report a failed primary solve without rerunning the reference solver.
    #[arg(long)]
    pub no_fallback: bool,

    /// Block size of generated systems.
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(1..=16))]
    pub block_size: u64,

    /// Number of generated wells.
    #[arg(long, default_value_t = 0)]
    pub gen_wells: usize,

    #[arg(long, default_value = "standard", value_parser = parse_well_kind)]
    pub well_type: WellKind,

    /// Perforated layers per generated well.
    #[arg(long, default_value_t = 3)]
    pub perf_depth: usize,

    /// Write the generated system to this matrix path (plus companions).
    #[arg(long, value_name = "PATH", requires = "generate")]
    pub save: Option<PathBuf>,
}

fn parse_grid(s: &str) -> Result<(usize, usize, usize), String> {
    let dims: Vec<usize> = s
        .split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|e| format!("'{t}': {e}")))
        .collect::<Result<_, _>>()?;
    match dims[..] {
        [nx, ny, nz] if nx > 0 && ny > 0 && nz > 0 => Ok((nx, ny, nz)),
        [_, _, _] => Err("grid dimensions must be positive".into()),
        _ => Err("expected three comma-separated dimensions".into()),
    }
}

fn parse_backend(s: &str) -> Result<Backend, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_well_mode(s: &str) -> Result<WellMode, String> {
    s.parse()
        .map_err(|_| format!("unknown well mode '{s}' (coupled, separate)"))
}

fn parse_well_kind(s: &str) -> Result<WellKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

impl Args {
    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            backend: self.backend,
            jacobi_partitions: self.jacobi_blocks,
            well_mode: self.wells,
            stop: StoppingCriteria {
                relative_reduction: self.tol,
                max_iterations: self.max_iter,
            },
            ..SolverConfig::default()
        }
    }

    fn generator_spec(&self) -> Option<GeneratorSpec> {
        let (nx, ny, nz) = self.generate?;
        let mut spec = GeneratorSpec::grid(nx, ny, nz);
        spec.block_size = self.block_size as usize;
        spec.seed = self.seed;
        spec.wells.count = self.gen_wells;
        spec.wells.kind = self.well_type;
        spec.wells.perforation_depth = self.perf_depth;
        Some(spec)
    }

    fn header(&self) -> String {
        format!(
            "# bilu-bench backend={} jacobi_blocks={} wells={} tol={} max_iter={} seed={} repeat={} fallback={}",
            self.backend,
            self.jacobi_blocks,
            self.wells,
            self.tol,
            self.max_iter,
            self.seed,
            self.repeat,
            if self.no_fallback { "off" } else { "on" }
        )
    }
}

/// One solve as reported on its line.
#[derive(Clone, Debug)]
pub struct SolveRecord {
    pub system: String,
    pub repeat: u64,
    pub report: SolveReport,
    /// The configured backend did not converge.
    pub primary_failed: bool,
    /// No attempt converged.
    pub unrecovered: bool,
}

impl SolveRecord {
    pub fn line(&self) -> String {
        let r = &self.report;
        format!(
            "{:.6}, {}, {:.3e} | {}, {}",
            (r.setup + r.elapsed).as_secs_f64(),
            r.iterations,
            r.reduction(),
            r.group_count,
            u8::from(r.fallback_used)
        )
    }

    fn csv_row(&self) -> String {
        let r = &self.report;
        format!(
            "{},{},{:.9},{:.9},{},{:e},{},{},{}",
            self.system,
            self.repeat,
            r.setup.as_secs_f64(),
            r.elapsed.as_secs_f64(),
            r.iterations,
            r.reduction(),
            r.group_count,
            u8::from(r.fallback_used),
            u8::from(r.converged)
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunSummary {
    pub total_time: Duration,
    pub solve_time: Duration,
    pub setup_time: Duration,
    pub linear_iterations: f64,
    pub group_count: usize,
    pub failed_solves: usize,
    pub unrecovered_solves: usize,
    pub num_solves: usize,
}

impl RunSummary {
    pub fn add(&mut self, rec: &SolveRecord) {
        self.solve_time += rec.report.elapsed;
        self.setup_time += rec.report.setup;
        self.linear_iterations += rec.report.iterations;
        self.group_count = self.group_count.max(rec.report.group_count);
        self.failed_solves += usize::from(rec.primary_failed);
        self.unrecovered_solves += usize::from(rec.unrecovered);
        self.num_solves += 1;
    }

    pub fn line(&self) -> String {
        let other = self
            .total_time
            .saturating_sub(self.setup_time + self.solve_time);
        format!(
            "summary: {:.6} ({:.6}+{:.6}+{:.6}), -, -, {} | {}, {}",
            self.total_time.as_secs_f64(),
            self.setup_time.as_secs_f64(),
            self.solve_time.as_secs_f64(),
            other.as_secs_f64(),
            self.linear_iterations,
            self.group_count,
            self.failed_solves
        )
    }
}

fn run_system(
    args: &Args,
    cfg: &SolverConfig,
    bundle: &SystemBundle,
) -> Result<Vec<SolveRecord>, Error> {
    let mut out = Vec::new();
    for repeat in 0..args.repeat {
        let record = if args.no_fallback {
            let (_, report) = solve(cfg, &bundle.matrix, &bundle.rhs, &bundle.wells)?;
            let failed = !report.converged;
            SolveRecord {
                system: bundle.metadata.name.clone(),
                repeat,
                report,
                primary_failed: failed,
                unrecovered: failed,
            }
        } else {
            match solve_with_fallback(cfg, &bundle.matrix, &bundle.rhs, &bundle.wells) {
                Ok((_, report)) => SolveRecord {
                    system: bundle.metadata.name.clone(),
                    repeat,
                    primary_failed: report.fallback_used,
                    unrecovered: false,
                    report,
                },
                Err(Error::SolveFailed {
                    primary,
                    mut fallback,
                }) => {
                    fallback.fallback_used = true;
                    fallback.setup += primary.setup;
                    SolveRecord {
                        system: bundle.metadata.name.clone(),
                        repeat,
                        report: *fallback,
                        primary_failed: true,
                        unrecovered: true,
                    }
                }
                Err(e) => return Err(e),
            }
        };
        out.push(record);
    }
    Ok(out)
}

/// Parse `args`, run the benchmark and return the process exit code:
/// 0 when every primary solve converged, 1 for unreadable input, 2 for bad
/// flags or configuration, 3 when any solve needed fallback or failed.
pub fn run_benchmark<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_benchmark_with(args, &mut stdout.lock(), &mut stderr.lock())
}

pub fn run_benchmark_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(args) {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let sink: &mut dyn Write = if e.use_stderr() { err } else { out };
            let _ = write!(sink, "{}", e.render());
            return code;
        }
    };
    let cfg = args.solver_config();
    if let Err(e) = cfg.validate() {
        let _ = writeln!(err, "error: {e}");
        return 2;
    }
    let start = Instant::now();
    let _ = writeln!(out, "{}", args.header());

    let mut systems = Vec::new();
    if let Some(spec) = args.generator_spec() {
        let bundle = generate(&spec);
        if let Some(path) = &args.save {
            if let Err(e) = write_system(&bundle, path) {
                let _ = writeln!(err, "error: cannot write {}: {e}", path.display());
                return 1;
            }
        }
        systems.push(bundle);
    }
    for path in &args.input {
        match read_system(path) {
            Ok(b) => systems.push(b),
            Err(e) => {
                let _ = writeln!(err, "error: cannot read {}: {e}", path.display());
                return 1;
            }
        }
    }

    let results: Vec<Result<Vec<SolveRecord>, Error>> = if args.parallel {
        systems
            .par_iter()
            .map(|s| run_system(&args, &cfg, s))
            .collect()
    } else {
        systems.iter().map(|s| run_system(&args, &cfg, s)).collect()
    };

    let mut summary = RunSummary::default();
    let mut csv = String::from(
        "system,repeat,setup_s,solve_s,iterations,reduction,groups,fallback,converged\n",
    );
    for (bundle, result) in systems.iter().zip(results) {
        let _ = writeln!(
            out,
            "# system {} Nb={} b={} nnzb={} wells={}",
            bundle.metadata.name,
            bundle.matrix.num_block_rows(),
            bundle.matrix.block_size(),
            bundle.matrix.nnz_blocks(),
            bundle.wells.num_wells()
        );
        let records = match result {
            Ok(r) => r,
            Err(e) => {
                let _ = writeln!(err, "error: {}: {e}", bundle.metadata.name);
                return 1;
            }
        };
        for rec in &records {
            let _ = writeln!(out, "{}", rec.line());
            let _ = writeln!(csv, "{}", rec.csv_row());
            summary.add(rec);
        }
    }
    if let Some(path) = &args.csv {
        if let Err(e) = std::fs::write(path, csv) {
            let _ = writeln!(err, "error: cannot write {}: {e}", path.display());
            return 1;
        }
    }
    summary.total_time = start.elapsed().max(summary.setup_time + summary.solve_time);
    let _ = writeln!(out, "{}", summary.line());
    if summary.unrecovered_solves > 0 {
        let _ = writeln!(
            err,
            "{} solve(s) failed without recovery",
            summary.unrecovered_solves
        );
    }
    if summary.failed_solves > 0 {
        3
    } else {
        0
    }
}
