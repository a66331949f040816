//! Oracles, residual metrics and the scaling sweep.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dense::PivotedLu;
use crate::factor::{factorize, FactorChain, FactorOptions};
use crate::fixtures::Family;
use crate::geometry::{build_block_tree, build_cluster_tree, ClusterTree};
use crate::h2::{build_h2, H2Matrix};
use crate::kernel::{assemble_dense, KernelSpec};
use crate::solve::{apply_lower, apply_upper, solve, solve_in_place};
use crate::{CMat, CVec, Error, Result, C64};

/// Size limit of [`replay_dense_shadow`].
pub const REPLAY_GUARD: usize = 200;

/// `‖Z_H² x − b‖ / ‖b‖`.
pub fn relative_residual(a: &H2Matrix, x: &CVec, b: &CVec) -> Result<f64> {
    if b.len() != a.n() {
        return Err(Error::DimensionMismatch {
            expected: a.n(),
            got: b.len(),
        });
    }
    let nb = b.norm();
    if nb == 0.0 {
        return Err(Error::UndefinedMetric);
    }
    Ok((a.matvec(x)? - b).norm() / nb)
}

/// Dense assembly plus pivoted LU; `b` and the result are in tree ordering.
pub fn dense_oracle_solve(kernel: &KernelSpec, tree: &ClusterTree, b: &CVec) -> Result<CVec> {
    if b.len() != tree.n() {
        return Err(Error::DimensionMismatch {
            expected: tree.n(),
            got: b.len(),
        });
    }
    let z = assemble_dense(kernel, tree)?;
    let lu = PivotedLu::factor(&z)?;
    let mut x = b.clone();
    lu.solve_in_place(x.as_mut_slice());
    Ok(x)
}

/// Multiplies out `𝓛 𝓤` column by column and returns its relative Frobenius
/// distance to the dense image of `a`.
pub fn replay_dense_shadow(chain: &FactorChain, a: &H2Matrix) -> Result<f64> {
    let n = a.n();
    if n > REPLAY_GUARD {
        return Err(Error::TooLarge {
            n,
            limit: REPLAY_GUARD,
        });
    }
    let z = a.to_dense();
    let mut lu = CMat::zeros(n, n);
    for i in 0..n {
        let mut e = CVec::zeros(n);
        e[i] = C64::new(1.0, 0.0);
        let col = apply_lower(chain, &apply_upper(chain, &e)?)?;
        lu.set_column(i, &col);
    }
    Ok((lu - &z).norm() / z.norm())
}

/// Seeded random complex vector with entries in the unit square.
pub fn random_vector(n: usize, seed: u64) -> CVec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    CVec::from_fn(n, |_, _| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
}

/// Measurements of one build → factorize → solve run.
#[derive(Debug, Clone, Serialize)]
pub struct RunMetrics {
    pub family: String,
    pub n: usize,
    pub t_build: f64,
    pub t_factor: f64,
    pub t_solve: f64,
    pub mem_h2: usize,
    pub mem_factor: usize,
    pub csp: usize,
    pub eps_rel: f64,
    pub eps_h2: f64,
    pub eps_fill_in: f64,
    pub depth: usize,
    pub stop_level: usize,
    pub max_rank_per_level: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepConfig {
    pub family: Family,
    pub sizes: Vec<usize>,
    #[serde(skip)]
    pub kernel: KernelSpec,
    pub leafsize: usize,
    pub eta: f64,
    pub eps_h2: f64,
    pub eps_fill_in: f64,
    pub seed: u64,
    /// Number of timing batches; the median is reported.
    pub solve_batches: usize,
}

impl SweepConfig {
    pub fn new(family: Family, sizes: Vec<usize>) -> Self {
        Self {
            family,
            sizes,
            kernel: KernelSpec::laplace(),
            leafsize: 25,
            eta: 1.0,
            eps_h2: 1e-3,
            eps_fill_in: 1e-5,
            seed: 0,
            solve_batches: 3,
        }
    }
}

/// Least-squares log-log slopes over a sweep. `None` when the sizes do not
/// spread (fewer than two distinct `N`).
#[derive(Debug, Clone, Default, Serialize)]
pub struct Slopes {
    pub build: Option<f64>,
    pub factor: Option<f64>,
    pub solve: Option<f64>,
    pub memory: Option<f64>,
    /// Factor time divided by `csp²`.
    pub factor_per_csp2: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub runs: Vec<RunMetrics>,
    pub slopes: Slopes,
    pub note: Option<String>,
}

/// Slope of the least-squares line through `(log x, log y)`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.max(f64::MIN_POSITIVE).ln()).collect();
    let m = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / m, ly.iter().sum::<f64>() / m);
    let sxx: f64 = lx.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx <= 1e-24 {
        return None;
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    Some(sxy / sxx)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// Shortest wall time of one solve-timing batch.
const BATCH_SECS: f64 = 0.1;

/// Per-solve time: each batch repeats the solve for at least [`BATCH_SECS`].
fn time_solve(chain: &FactorChain, b: &CVec, batches: usize) -> Result<f64> {
    let mut samples = Vec::with_capacity(batches.max(1));
    let mut work = b.clone();
    for _ in 0..batches.max(1) {
        let start = Instant::now();
        let mut count = 0u32;
        while count == 0 || start.elapsed().as_secs_f64() < BATCH_SECS {
            work.copy_from(b);
            solve_in_place(chain, work.as_mut_slice())?;
            count += 1;
        }
        samples.push(start.elapsed().as_secs_f64() / count as f64);
    }
    Ok(median(samples))
}

/// One build → factorize → solve run on a fixture.
pub fn run_once(cfg: &SweepConfig, n: usize) -> Result<RunMetrics> {
    let pc = cfg.family.points(n);
    let t0 = Instant::now();
    let tree = build_cluster_tree(&pc, cfg.leafsize)?;
    let blocks = build_block_tree(&tree, cfg.eta);
    let a = build_h2(&cfg.kernel, &tree, &blocks, cfg.eps_h2)?;
    let t_build = t0.elapsed().as_secs_f64();
    let opts = FactorOptions::new(cfg.eps_fill_in).with_checks(false);
    let t0 = Instant::now();
    let chain = factorize(&a, &opts)?;
    let t_factor = t0.elapsed().as_secs_f64();
    let b = random_vector(n, cfg.seed);
    let t_solve = time_solve(&chain, &b, cfg.solve_batches)?;
    let x = solve(&chain, &b)?;
    Ok(RunMetrics {
        family: cfg.family.name().to_string(),
        n,
        t_build,
        t_factor,
        t_solve,
        mem_h2: a.storage_bytes(),
        mem_factor: chain.memory_bytes(),
        csp: blocks.csp_max(),
        eps_rel: relative_residual(&a, &x, &b)?,
        eps_h2: cfg.eps_h2,
        eps_fill_in: cfg.eps_fill_in,
        depth: tree.depth(),
        stop_level: chain.stop_level,
        max_rank_per_level: a.max_rank_per_level(),
    })
}

/// Runs every size of the sweep in turn and fits the scaling slopes.
pub fn scaling_sweep(cfg: &SweepConfig) -> Result<SweepReport> {
    let runs = cfg
        .sizes
        .iter()
        .map(|&n| run_once(cfg, n))
        .collect::<Result<Vec<_>>>()?;
    let x: Vec<f64> = runs.iter().map(|r| r.n as f64).collect();
    let col = |f: &dyn Fn(&RunMetrics) -> f64| runs.iter().map(f).collect::<Vec<f64>>();
    let slopes = Slopes {
        build: fit_slope(&x, &col(&|r| r.t_build)),
        factor: fit_slope(&x, &col(&|r| r.t_factor)),
        solve: fit_slope(&x, &col(&|r| r.t_solve)),
        memory: fit_slope(&x, &col(&|r| r.mem_factor as f64)),
        factor_per_csp2: fit_slope(&x, &col(&|r| r.t_factor / (r.csp * r.csp) as f64)),
    };
    let note = slopes
        .factor
        .is_none()
        .then(|| "degenerate sweep: fewer than two distinct sizes, slopes undefined".to_string());
    Ok(SweepReport { runs, slopes, note })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn slope_of_power_law() {
        let x = [100.0, 200.0, 400.0, 800.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(1.5)).collect();
        assert!((fit_slope(&x, &y).unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn degenerate_slope() {
        assert_eq!(fit_slope(&[400.0, 400.0], &[1.0, 2.0]), None);
        assert_eq!(fit_slope(&[400.0], &[1.0]), None);
    }

    #[test]
    fn residual_of_zero_solution_is_one() {
        let tree = build_cluster_tree(&fixtures::rod(60), 25).unwrap();
        let blocks = build_block_tree(&tree, 1.0);
        let a = build_h2(&KernelSpec::laplace(), &tree, &blocks, 1e-6).unwrap();
        let b = random_vector(60, 1);
        assert!((relative_residual(&a, &CVec::zeros(60), &b).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(
            relative_residual(&a, &b, &CVec::zeros(60)),
            Err(Error::UndefinedMetric)
        ));
    }

    #[test]
    fn oracle_identity_kernel() {
        let tree = build_cluster_tree(&fixtures::rod(30), 25).unwrap();
        let k = KernelSpec::custom(|_, _| C64::new(0.0, 0.0), true);
        let b = random_vector(30, 3);
        let x = dense_oracle_solve(&k, &tree, &b).unwrap();
        assert!((x - &b).norm() < 1e-15);
    }

    #[test]
    fn oracle_two_by_two() {
        let pc = crate::geometry::PointCloud::new(vec![[0.0; 3], [1.0, 0.0, 0.0]]).unwrap();
        let tree = build_cluster_tree(&pc, 25).unwrap();
        let k = KernelSpec::custom(|_, _| C64::new(1.0, 0.0), true).with_diagonal_shift(2.0);
        let b = CVec::from_vec(vec![C64::new(3.0, 0.0), C64::new(3.0, 0.0)]);
        let x = dense_oracle_solve(&k, &tree, &b).unwrap();
        assert!((x[0] - C64::new(1.0, 0.0)).norm() < 1e-15);
        assert!((x[1] - C64::new(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn oracle_random_residual() {
        let tree = build_cluster_tree(&fixtures::cube(100), 25).unwrap();
        let k = KernelSpec::helmholtz(C64::new(2.0, 0.0));
        let b = random_vector(100, 4);
        let x = dense_oracle_solve(&k, &tree, &b).unwrap();
        let z = assemble_dense(&k, &tree).unwrap();
        assert!((&z * &x - &b).norm() <= 1e-12 * b.norm());
    }

    #[test]
    fn single_size_sweep_is_degenerate() {
        let mut cfg = SweepConfig::new(Family::Rod, vec![200, 200]);
        cfg.solve_batches = 1;
        let report = scaling_sweep(&cfg).unwrap();
        assert_eq!(report.runs.len(), 2);
        assert!(report.slopes.factor.is_none());
        assert!(report.note.is_some());
    }
}
