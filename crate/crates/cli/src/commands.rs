use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use h2direct::factor::{factorize, FactorOptions};
use h2direct::geometry::{build_block_tree, build_cluster_tree, TreeStats};
use h2direct::h2::{build_h2, H2Matrix};
use h2direct::io;
use h2direct::verify::{
    dense_oracle_solve, random_vector, relative_residual, replay_dense_shadow, scaling_sweep,
    SweepConfig, REPLAY_GUARD,
};
use h2direct::{CVec, Error};
use serde::Serialize;
use serde_json::json;

use crate::config::{Geometry, ProblemArgs, RunConfig};
use crate::CliError;

fn build_matrix(cfg: &RunConfig) -> Result<(H2Matrix, f64), CliError> {
    let pc = cfg.points()?;
    let t0 = Instant::now();
    let tree = build_cluster_tree(&pc, cfg.leafsize)?;
    let blocks = build_block_tree(&tree, cfg.eta);
    let a = build_h2(&cfg.kernel_spec(), &tree, &blocks, cfg.eps_h2)?;
    Ok((a, t0.elapsed().as_secs_f64()))
}

fn load_or_build(cfg: &RunConfig, matrix: Option<&Path>) -> Result<H2Matrix, CliError> {
    match matrix {
        Some(p) => Ok(io::load_h2(p).map_err(|e| with_path(e, p))?),
        None => Ok(build_matrix(cfg)?.0),
    }
}

fn with_path(e: Error, p: &Path) -> CliError {
    match CliError::from(e) {
        CliError::Input(m) => CliError::Input(format!("{}: {m}", p.display())),
        other => other,
    }
}

fn print_json<T: Serialize>(v: &T) -> Result<(), CliError> {
    let s = serde_json::to_string_pretty(v).map_err(|e| CliError::Input(e.to_string()))?;
    println!("{s}");
    Ok(())
}

fn write_json_file<T: Serialize>(v: &T, path: &Path) -> Result<(), CliError> {
    let f = File::create(path).map_err(|e| with_path(e.into(), path))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, v).map_err(|e| CliError::Input(e.to_string()))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| with_path(e.into(), path))
}

pub fn build(
    problem: &ProblemArgs,
    out: &Path,
    stats_path: Option<&Path>,
    json: bool,
) -> Result<(), CliError> {
    let cfg = RunConfig::resolve(problem)?;
    let (a, secs) = build_matrix(&cfg)?;
    io::save_h2(&a, out).map_err(|e| with_path(e, out))?;
    let stats = json!({
        "config": cfg,
        "tree": TreeStats::new(a.tree(), a.blocks()),
        "max_rank_per_level": a.max_rank_per_level(),
        "storage_bytes": a.storage_bytes(),
        "build_seconds": secs,
        "out": out,
    });
    if let Some(p) = stats_path {
        write_json_file(&stats, p)?;
    }
    if json {
        print_json(&stats)?;
    } else {
        println!(
            "built N={} depth={} admissible={} ranks per level {:?} in {secs:.3}s -> {}",
            a.n(),
            a.tree().depth(),
            a.blocks().admissible.len(),
            a.max_rank_per_level(),
            out.display()
        );
    }
    Ok(())
}

pub fn factor(
    problem: &ProblemArgs,
    matrix: Option<&Path>,
    out: &Path,
    diagnostics: Option<&Path>,
    json: bool,
) -> Result<(), CliError> {
    let cfg = RunConfig::resolve(problem)?;
    let a = load_or_build(&cfg, matrix)?;
    let opts = FactorOptions::new(cfg.eps_fill_in).with_stop_level(cfg.stop_level);
    let t0 = Instant::now();
    let chain = factorize(&a, &opts)?;
    let secs = t0.elapsed().as_secs_f64();
    io::save_chain(&chain, out).map_err(|e| with_path(e, out))?;
    if let Some(p) = diagnostics {
        let f = File::create(p).map_err(|e| with_path(e.into(), p))?;
        io::write_json_lines(&chain.diagnostics, BufWriter::new(f)).map_err(|e| with_path(e, p))?;
    }
    if json {
        print_json(&json!({
            "n": chain.n,
            "depth": chain.depth,
            "stop_level": chain.stop_level,
            "eps_fill_in": chain.eps_fill_in,
            "memory_bytes": chain.memory_bytes(),
            "peak_working_bytes": chain.peak_working_bytes,
            "fill_ins": chain.ledger_nonempty(),
            "factor_seconds": secs,
            "diagnostics": chain.diagnostics,
            "out": out,
        }))?;
    } else {
        println!(
            "factored N={} stop level {} memory {} bytes in {secs:.3}s -> {}",
            chain.n,
            chain.stop_level,
            chain.memory_bytes(),
            out.display()
        );
    }
    Ok(())
}

pub struct SolveArgs {
    pub chain: PathBuf,
    pub matrix: Option<PathBuf>,
    pub rhs: Option<PathBuf>,
    pub random_rhs: Option<u64>,
    pub out: Option<PathBuf>,
    pub tol: Option<f64>,
    pub json: bool,
}

pub fn solve(problem: &ProblemArgs, args: &SolveArgs) -> Result<(), CliError> {
    let cfg = RunConfig::resolve(problem)?;
    let chain = io::load_chain(&args.chain).map_err(|e| with_path(e, &args.chain))?;
    let a = load_or_build(&cfg, args.matrix.as_deref())?;
    if a.n() != chain.n {
        return Err(CliError::Input(format!(
            "chain has N={} but the matrix has N={}",
            chain.n,
            a.n()
        )));
    }
    let tree = a.tree();
    let (b, rhs_desc) = match &args.rhs {
        Some(p) => {
            let v = io::load_vector(p).map_err(|e| with_path(e, p))?;
            if v.len() != a.n() {
                return Err(CliError::Input(format!(
                    "{}: right-hand side has {} entries, system has {}",
                    p.display(),
                    v.len(),
                    a.n()
                )));
            }
            (CVec::from_vec(tree.to_tree_order(v.as_slice())), json!(p))
        }
        None => {
            let seed = args.random_rhs.unwrap_or(cfg.seed);
            (random_vector(a.n(), seed), json!({ "random_seed": seed }))
        }
    };
    let t0 = Instant::now();
    let x = h2direct::solve::solve(&chain, &b)?;
    let secs = t0.elapsed().as_secs_f64();
    let residual = match relative_residual(&a, &x, &b) {
        Ok(r) => Some(r),
        Err(Error::UndefinedMetric) => None,
        Err(e) => return Err(e.into()),
    };
    if let Some(p) = &args.out {
        let xo = CVec::from_vec(tree.to_original_order(x.as_slice()));
        io::save_vector(&xo, p).map_err(|e| with_path(e, p))?;
    }
    let met = match (args.tol, residual) {
        (Some(t), Some(r)) => r <= t,
        _ => true,
    };
    if args.json {
        print_json(&json!({
            "n": a.n(),
            "rhs": rhs_desc,
            "relative_residual": residual,
            "tol": args.tol,
            "tol_met": met,
            "solve_seconds": secs,
            "out": args.out,
        }))?;
    } else {
        match residual {
            Some(r) => println!("solved N={} relative residual {r:.3e} in {secs:.4}s", a.n()),
            None => println!("solved N={}; zero right-hand side, residual undefined", a.n()),
        }
    }
    if met {
        Ok(())
    } else {
        Err(CliError::Numerical(format!(
            "relative residual {:.3e} exceeds --tol {:.3e}",
            residual.unwrap_or(f64::NAN),
            args.tol.unwrap_or(f64::NAN)
        )))
    }
}

pub fn verify(problem: &ProblemArgs, tol: f64, json: bool) -> Result<(), CliError> {
    let cfg = RunConfig::resolve(problem)?;
    let (a, _) = build_matrix(&cfg)?;
    let opts = FactorOptions::new(cfg.eps_fill_in).with_stop_level(cfg.stop_level);
    let chain = factorize(&a, &opts)?;
    let b = random_vector(a.n(), cfg.seed);
    let x = h2direct::solve::solve(&chain, &b)?;
    let xd = dense_oracle_solve(&cfg.kernel_spec(), a.tree(), &b)?;
    let err = (&x - &xd).norm() / xd.norm();
    let replay = if a.n() <= REPLAY_GUARD {
        Some(replay_dense_shadow(&chain, &a)?)
    } else {
        None
    };
    let residual = relative_residual(&a, &x, &b)?;
    let met = err <= tol;
    if json {
        print_json(&json!({
            "n": a.n(),
            "oracle_error": err,
            "relative_residual": residual,
            "replay_error": replay,
            "fill_ins": chain.ledger_nonempty(),
            "tol": tol,
            "tol_met": met,
        }))?;
    } else {
        println!(
            "N={} distance to dense solution {err:.3e}, residual {residual:.3e}{}",
            a.n(),
            replay.map(|r| format!(", replay {r:.3e}")).unwrap_or_default()
        );
    }
    if met {
        Ok(())
    } else {
        Err(CliError::Numerical(format!(
            "distance to dense solution {err:.3e} exceeds --tol {tol:.3e}"
        )))
    }
}

pub fn bench(
    problem: &ProblemArgs,
    sizes: Vec<usize>,
    batches: usize,
    csv: Option<&Path>,
    out: Option<&Path>,
    json: bool,
) -> Result<(), CliError> {
    let mut problem = problem.clone();
    if problem.geometry.is_some() && problem.n.is_none() {
        problem.n = sizes.first().copied();
    }
    let cfg = RunConfig::resolve(&problem)?;
    let family = match cfg.geometry {
        Some(Geometry::Fixture { family, .. }) => family,
        Some(Geometry::File(_)) => {
            return Err(CliError::input("bench runs on fixtures; use --geometry"))
        }
        None => h2direct::fixtures::Family::Rod,
    };
    if sizes.iter().any(|&n| n == 0) {
        return Err(CliError::input("--sizes must be positive"));
    }
    let mut sweep = SweepConfig::new(family, sizes);
    sweep.kernel = cfg.kernel_spec();
    sweep.leafsize = cfg.leafsize;
    sweep.eta = cfg.eta;
    sweep.eps_h2 = cfg.eps_h2;
    sweep.eps_fill_in = cfg.eps_fill_in;
    sweep.seed = cfg.seed;
    sweep.solve_batches = batches;
    let report = scaling_sweep(&sweep)?;
    if let Some(p) = csv {
        let f = File::create(p).map_err(|e| with_path(e.into(), p))?;
        io::write_metrics_csv(&report.runs, BufWriter::new(f)).map_err(|e| with_path(e, p))?;
    }
    if let Some(p) = out {
        let f = File::create(p).map_err(|e| with_path(e.into(), p))?;
        io::write_json_lines(&report.runs, BufWriter::new(f)).map_err(|e| with_path(e, p))?;
    }
    if json {
        print_json(&json!({ "config": sweep, "report": report }))?;
    } else {
        println!("{:>8} {:>10} {:>10} {:>10} {:>12} {:>5} {:>10}", "N", "build", "factor", "solve", "mem", "csp", "eps_rel");
        for r in &report.runs {
            println!(
                "{:>8} {:>10.4} {:>10.4} {:>10.6} {:>12} {:>5} {:>10.2e}",
                r.n, r.t_build, r.t_factor, r.t_solve, r.mem_factor, r.csp, r.eps_rel
            );
        }
        let s = &report.slopes;
        let f = |v: Option<f64>| v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into());
        println!(
            "slopes: build {} factor {} solve {} memory {}",
            f(s.build),
            f(s.factor),
            f(s.solve),
            f(s.memory)
        );
        if let Some(note) = &report.note {
            println!("note: {note}");
        }
    }
    Ok(())
}
