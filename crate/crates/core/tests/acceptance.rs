//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Run with `cargo test --test acceptance`.

mod common;

use std::process::{Command, ExitCode};
use std::time::Instant;

use bilu::analysis::{graph_color, level_schedule, unapply_permutation, ParallelPlan};
use bilu::blockcore::{residual, spmv, BlockMatrix, BlockVector, Layout, SparsityPattern};
use bilu::bridge::{solve, solve_with_fallback, Backend, SolverConfig};
use bilu::ilu0::decompose;
use bilu::io::{generate, GeneratorSpec, WellKind};
use bilu::jacobi::{drop_cross_blocks, partition, refresh_values, EdgeWeights, Partitioning};
use bilu::krylov::{dot, norm, StoppingCriteria};
use bilu::wells::{fold_into_matrix, WellMode};
use common::*;
use rand::Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn criterion_1_ilu0_matches_dense_lu() -> Outcome {
    let start = Instant::now();
    let mut r = rng(101);
    let mut worst: f64 = 0.0;
    let cases = 150;
    for case in 0..cases {
        let b = 1 + case % 3;
        let nb = r.gen_range(1..=12);
        let density = r.gen_range(0.05..0.4);
        let entries = close_under_elimination(nb, &random_entries(&mut r, nb, density));
        let a = dominant_matrix(&mut r, nb, b, &entries);
        let f = decompose(&a, &ParallelPlan::sequential(nb))
            .map_err(|e| format!("case {case}: {e}"))?;
        let lu = dense_block_lu(&dense(&a), b);
        let combined = dense(f.combined());
        for bi in 0..nb {
            for bj in 0..nb {
                let in_pattern = entries.contains(&(bi, bj));
                for rr in 0..b {
                    for cc in 0..b {
                        let (i, j) = (bi * b + rr, bj * b + cc);
                        let y = lu[(i, j)];
                        if !in_pattern {
                            ensure!(y == 0.0, "case {case}: dense LU fills ({bi},{bj})");
                            continue;
                        }
                        let x = combined[(i, j)];
                        let rel = if y == 0.0 {
                            x.abs()
                        } else {
                            ((x - y) / y).abs()
                        };
                        worst = worst.max(rel);
                        ensure!(
                            rel <= 1e-10,
                            "case {case}: entry ({i},{j}) {x} vs {y}, rel {rel:e}"
                        );
                    }
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 10.0, "took {secs:.2} s");
    Ok(format!(
        "{cases} systems, worst relative error {worst:.1e}, {secs:.2} s"
    ))
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn criterion_2_level_scheduling_is_exact() -> Outcome {
    let mut r = rng(202);
    let cases = 120;
    let mut parallel_groups = 0;
    for case in 0..cases {
        let max_dim = if case % 10 == 0 { 14 } else { 7 };
        let a = random_grid_system(&mut r, max_dim);
        let nb = a.num_block_rows();
        let b = a.block_size();
        let plan = level_schedule(a.pattern()).map_err(|e| e.to_string())?;
        parallel_groups += plan.groups().filter(|g| g.len() >= 64).count();
        let ls = decompose(&a, &plan).map_err(|e| e.to_string())?;
        let seq = decompose(&a, &ParallelPlan::sequential(nb)).map_err(|e| e.to_string())?;

        let ls_combined = unapply_permutation(ls.combined(), &plan).map_err(|e| e.to_string())?;
        ensure!(
            bits(ls_combined.values()) == bits(seq.combined().values()),
            "case {case}: factor values differ"
        );
        for i in 0..nb {
            let pi = plan.permutation()[i];
            ensure!(
                bits(ls.inverted_diagonal(pi)) == bits(seq.inverted_diagonal(i)),
                "case {case}: inverted diagonal {i} differs"
            );
        }
        let v = random_vector(&mut r, nb, b);
        let z_ls = ls.apply_unpermuted(&v).map_err(|e| e.to_string())?;
        let z_seq = seq.apply(&v).map_err(|e| e.to_string())?;
        ensure!(
            bits(z_ls.as_slice()) == bits(z_seq.as_slice()),
            "case {case}: apply differs"
        );
    }
    Ok(format!(
        "{cases} seven-point systems bit-identical ({parallel_groups} groups ran in parallel)"
    ))
}

fn criterion_3_coloring_is_valid() -> Outcome {
    let mut r = rng(303);
    let mut max_colors = 0;
    for case in 0..1000 {
        let nb = r.gen_range(1..=80);
        let density = r.gen_range(0.0..0.2);
        let entries = random_entries(&mut r, nb, density);
        let p = SparsityPattern::new(
            {
                let mut rp = vec![0; nb + 1];
                for &(i, _) in &entries {
                    rp[i + 1] += 1;
                }
                for i in 0..nb {
                    rp[i + 1] += rp[i];
                }
                rp
            },
            entries.iter().map(|&(_, j)| j).collect(),
        )
        .map_err(|e| e.to_string())?;
        let plan = graph_color(&p).map_err(|e| e.to_string())?;
        let color = plan.row_group();
        for (i, j) in p.entries() {
            ensure!(
                i == j || color[i] != color[j],
                "case {case}: rows {i},{j} share color"
            );
        }
        max_colors = max_colors.max(plan.group_count());
    }
    let chain =
        SparsityPattern::new(vec![0, 1, 3, 5], vec![0, 0, 1, 1, 2]).map_err(|e| e.to_string())?;
    let plan = graph_color(&chain).map_err(|e| e.to_string())?;
    ensure!(
        plan.row_group() == [0, 1, 0],
        "chain colors {:?}",
        plan.row_group()
    );
    Ok(format!(
        "1000 patterns without conflicts (up to {max_colors} colors); chain rows 0 and 2 share color 0"
    ))
}

fn criterion_4_coupled_equals_separate() -> Outcome {
    let mut r = rng(404);
    let mut worst: f64 = 0.0;
    let mut grown = 0;
    let cases = 150;
    for case in 0..cases {
        let nb = r.gen_range(2..=14);
        let b = r.gen_range(1..=3);
        let density = r.gen_range(0.05..0.3);
        let entries = random_entries(&mut r, nb, density);
        let a = dominant_matrix(&mut r, nb, b, &entries);
        let wells = random_well_set(&mut r, nb, b, WellMode::Separate);
        let x = random_vector(&mut r, nb, b);
        let folded = fold_into_matrix(&a, &wells).map_err(|e| e.to_string())?;
        let yf = spmv(&folded, &x).map_err(|e| e.to_string())?;
        let mut ys = spmv(&a, &x).map_err(|e| e.to_string())?;
        wells
            .subtract_contributions(&x, &mut ys)
            .map_err(|e| e.to_string())?;
        let scale = ys.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let diff = yf
            .as_slice()
            .iter()
            .zip(ys.as_slice())
            .fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
        let rel = diff / scale.max(f64::MIN_POSITIVE);
        worst = worst.max(rel);
        ensure!(rel <= 1e-11, "case {case}: relative difference {rel:e}");

        let missing = wells
            .coupling_positions()
            .iter()
            .any(|&(i, j)| !a.pattern().contains(i, j));
        if missing {
            grown += 1;
            ensure!(
                folded.nnz_blocks() > a.nnz_blocks(),
                "case {case}: folded pattern did not grow"
            );
        }
    }
    ensure!(grown > 0, "no case had a missing perforation pair");
    Ok(format!(
        "{cases} systems, worst relative difference {worst:.1e}; folded pattern grew in all {grown} cases with missing pairs"
    ))
}

fn criterion_5_block_jacobi_consistency() -> Outcome {
    let mut r = rng(505);
    for case in 0..40 {
        let a = random_grid_system(&mut r, 6);
        let weights = EdgeWeights::from_block_norms(&a);
        let one = partition(a.pattern(), &weights, 1).map_err(|e| e.to_string())?;
        let (jac, _) = drop_cross_blocks(&a, &one).map_err(|e| e.to_string())?;
        let plan = level_schedule(a.pattern()).map_err(|e| e.to_string())?;
        let plain = decompose(&a, &plan).map_err(|e| e.to_string())?;
        let relaxed = decompose(
            &jac,
            &level_schedule(jac.pattern()).map_err(|e| e.to_string())?,
        )
        .map_err(|e| e.to_string())?;
        ensure!(
            bits(plain.combined().values()) == bits(relaxed.combined().values())
                && bits(plain.inverted_diagonals()) == bits(relaxed.inverted_diagonals()),
            "case {case}: k=1 factorization differs"
        );

        let k = r.gen_range(1..=a.num_block_rows().min(8));
        let part = partition(a.pattern(), &weights, k).map_err(|e| e.to_string())?;
        let (mut jac, copy) = drop_cross_blocks(&a, &part).map_err(|e| e.to_string())?;
        let updated = BlockMatrix::new(
            a.pattern().clone(),
            a.block_size(),
            a.values().iter().map(|_| r.gen_range(-1.0..1.0)).collect(),
            a.layout(),
        )
        .map_err(|e| e.to_string())?;
        refresh_values(&updated, &mut jac, &copy).map_err(|e| e.to_string())?;
        let naive = naive_jacobi_copy(&updated, &part);
        ensure!(
            bits(jac.values()) == bits(&naive),
            "case {case}: refresh differs from naive copy"
        );
    }

    let grid = generate(&GeneratorSpec::grid(20, 20, 10)).matrix;
    let levels_0 = level_schedule(grid.pattern())
        .map_err(|e| e.to_string())?
        .group_count();
    let weights = EdgeWeights::from_block_norms(&grid);
    let part = partition(grid.pattern(), &weights, 150).map_err(|e| e.to_string())?;
    let (jac, _) = drop_cross_blocks(&grid, &part).map_err(|e| e.to_string())?;
    let levels_150 = level_schedule(jac.pattern())
        .map_err(|e| e.to_string())?
        .group_count();
    ensure!(
        levels_150 <= levels_0,
        "k=150 gives {levels_150} levels, k=0 gives {levels_0}"
    );
    Ok(format!(
        "k=1 identical on 40 systems; refresh equals naive copy; 20x20x10 levels {levels_150} (k=150) <= {levels_0} (k=0)"
    ))
}

/// Values of every block whose row and column cells share a partition, in
/// pattern order.
fn naive_jacobi_copy(a: &BlockMatrix, part: &Partitioning) -> Vec<f64> {
    let mut out = Vec::new();
    for (k, (i, j)) in a.pattern().entries().enumerate() {
        if part.cell_partition[i] == part.cell_partition[j] {
            out.extend_from_slice(a.block(k));
        }
    }
    out
}

fn criterion_6_bicgstab_converges() -> Outcome {
    let start = Instant::now();
    let mut runs = 0;
    let mut max_iters: f64 = 0.0;
    let grids = [
        (10, 10, 10, 0),
        (20, 20, 10, 3),
        (30, 30, 30, 0),
        (30, 30, 30, 4),
    ];
    for (nx, ny, nz, wells) in grids {
        let mut spec = GeneratorSpec::grid(nx, ny, nz);
        spec.seed = (nx * 7 + nz) as u64;
        spec.wells.count = wells;
        spec.wells.kind = if wells % 2 == 0 {
            WellKind::Multisegment
        } else {
            WellKind::Standard
        };
        let sys = generate(&spec);
        for backend in Backend::ALL {
            for jacobi in [0, 150] {
                if jacobi > 0 && backend == Backend::ReferenceSequential {
                    continue;
                }
                let cfg = SolverConfig {
                    backend,
                    jacobi_partitions: jacobi,
                    ..Default::default()
                };
                let (x, rep) =
                    solve(&cfg, &sys.matrix, &sys.rhs, &sys.wells).map_err(|e| e.to_string())?;
                ensure!(
                    rep.converged,
                    "{nx}x{ny}x{nz} {backend} k={jacobi}: {:?}",
                    rep.status
                );
                ensure!(
                    rep.iterations <= 200.0,
                    "{backend}: {} iterations",
                    rep.iterations
                );
                let mut res = residual(&sys.matrix, &x, &sys.rhs).map_err(|e| e.to_string())?;
                let mut well_part = BlockVector::zeros(x.num_blocks(), x.block_size());
                sys.wells
                    .subtract_contributions(&x, &mut well_part)
                    .map_err(|e| e.to_string())?;
                // r = b - (A - W)x = (b - Ax) - (-Wx)
                for (ri, wi) in res.as_mut_slice().iter_mut().zip(well_part.as_slice()) {
                    *ri -= wi;
                }
                let bound = 0.01 * norm(&sys.rhs) * (1.0 + 1e-8);
                ensure!(
                    norm(&res) <= bound,
                    "{nx}x{ny}x{nz} {backend}: true residual {:e} above {bound:e}",
                    norm(&res)
                );
                runs += 1;
                max_iters = max_iters.max(rep.iterations);
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 60.0, "took {secs:.1} s");
    Ok(format!(
        "{runs} solves up to 30x30x30 b=3, at most {max_iters} iterations, {secs:.1} s"
    ))
}

fn criterion_7_fallback() -> Outcome {
    let sys = generate(&GeneratorSpec::grid(12, 12, 12));
    let cfg = SolverConfig {
        backend: Backend::GraphColored,
        stop: StoppingCriteria::new(0.01, 1).map_err(|e| e.to_string())?,
        ..Default::default()
    };
    let (_, primary) = solve(&cfg, &sys.matrix, &sys.rhs, &sys.wells).map_err(|e| e.to_string())?;
    ensure!(
        !primary.converged,
        "budget 1 did not fail the primary solve"
    );
    let (_, rep) =
        solve_with_fallback(&cfg, &sys.matrix, &sys.rhs, &sys.wells).map_err(|e| e.to_string())?;
    ensure!(
        rep.converged && rep.fallback_used,
        "fallback report {rep:?}"
    );

    let out = Command::new(env!("CARGO_BIN_EXE_bilu-bench"))
        .args(["--generate", "12,12,12", "--max-iter", "1"])
        .output()
        .map_err(|e| e.to_string())?;
    let stdout = String::from_utf8_lossy(&out.stdout);
    let summary = stdout
        .lines()
        .find(|l| l.starts_with("summary: "))
        .ok_or("no summary line")?;
    let j: usize = summary
        .rsplit(", ")
        .next()
        .and_then(|f| f.parse().ok())
        .ok_or_else(|| format!("unparsable summary '{summary}'"))?;
    ensure!(j >= 1, "CLI printed J = {j}");
    Ok(format!(
        "fallback converged in {} iterations; CLI summary J = {j}",
        rep.iterations
    ))
}

fn criterion_8_determinism() -> Outcome {
    let mut spec = GeneratorSpec::grid(20, 20, 20);
    spec.wells.count = 3;
    spec.seed = 8;
    let sys = generate(&spec);
    let pool = |n| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| e.to_string())
    };
    let (one, four) = (pool(1)?, pool(4)?);
    let mut checked = 0;
    for backend in Backend::ALL {
        for (jacobi, mode) in [(0, WellMode::Separate), (150, WellMode::Coupled)] {
            let cfg = SolverConfig {
                backend,
                jacobi_partitions: jacobi,
                well_mode: mode,
                ..Default::default()
            };
            let run = |p: &rayon::ThreadPool| {
                p.install(|| solve_with_fallback(&cfg, &sys.matrix, &sys.rhs, &sys.wells))
                    .map_err(|e| e.to_string())
            };
            let (x1, r1) = run(&one)?;
            let (x1b, r1b) = run(&one)?;
            let (x4, r4) = run(&four)?;
            ensure!(
                bits(x1.as_slice()) == bits(x1b.as_slice()) && r1.same_outcome(&r1b),
                "{backend} k={jacobi}: repeated runs differ"
            );
            ensure!(
                bits(x1.as_slice()) == bits(x4.as_slice()) && r1.same_outcome(&r4),
                "{backend} k={jacobi}: 1 vs 4 workers differ"
            );
            checked += 1;
        }
    }
    let mut r = rng(808);
    let x = random_vector(&mut r, 100_000, 1);
    let y = random_vector(&mut r, 100_000, 1);
    let d1 = one.install(|| dot(&x, &y)).map_err(|e| e.to_string())?;
    let d4 = four.install(|| dot(&x, &y)).map_err(|e| e.to_string())?;
    ensure!(
        d1.to_bits() == d4.to_bits(),
        "dot differs across worker counts"
    );
    Ok(format!(
        "{checked} configurations bit-identical across runs and 1/4 workers"
    ))
}

fn criterion_9_layouts() -> Outcome {
    let pattern = SparsityPattern::new(vec![0, 2, 2], vec![0, 1]).map_err(|e| e.to_string())?;
    let opm = BlockMatrix::new(
        pattern,
        3,
        (0..18).map(f64::from).collect(),
        Layout::BlockRowMajor,
    )
    .map_err(|e| e.to_string())?;
    let amgcl = opm.convert_layout(Layout::FlatRowMajor);
    ensure!(
        amgcl.values()[3] == opm.values()[9],
        "OPM flat 9 is not amgcl flat 3"
    );

    let mut r = rng(909);
    for case in 0..200 {
        let nb = r.gen_range(1..=10);
        let b = r.gen_range(1..=4);
        let entries = random_entries(&mut r, nb, 0.3);
        let a = dominant_matrix(&mut r, nb, b, &entries);
        for from in Layout::ALL {
            let start = a.convert_layout(from);
            for to in Layout::ALL {
                let back = start.convert_layout(to).convert_layout(from);
                ensure!(
                    bits(back.values()) == bits(start.values()),
                    "case {case}: {from:?} -> {to:?} -> {from:?} not exact"
                );
            }
        }
    }
    Ok(
        "OPM flat 9 -> amgcl flat 3; 200 random matrices round-trip through all layout pairs"
            .into(),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        (
            "1 ILU0 equals dense LU on no-fill patterns",
            criterion_1_ilu0_matches_dense_lu,
        ),
        (
            "2 level-scheduled ILU0 equals sequential bit-exactly",
            criterion_2_level_scheduling_is_exact,
        ),
        ("3 graph coloring is proper", criterion_3_coloring_is_valid),
        (
            "4 coupled wells equal separate wells",
            criterion_4_coupled_equals_separate,
        ),
        (
            "5 block-Jacobi consistency",
            criterion_5_block_jacobi_consistency,
        ),
        (
            "6 BiCGStab converges on every backend",
            criterion_6_bicgstab_converges,
        ),
        ("7 fallback to the reference solver", criterion_7_fallback),
        (
            "8 determinism across runs and workers",
            criterion_8_determinism,
        ),
        ("9 layout round trips", criterion_9_layouts),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS [{name}] {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{name}] {detail}");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
