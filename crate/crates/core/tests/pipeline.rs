use h2direct::dense::PivotedLu;
use h2direct::factor::{effective_stop_level, factorize, FactorOptions};
use h2direct::fixtures::{self, Family};
use h2direct::geometry::{build_block_tree, build_cluster_tree, PointCloud};
use h2direct::h2::{build_h2, H2Matrix};
use h2direct::io;
use h2direct::kernel::{assemble_dense, KernelSpec};
use h2direct::solve::solve;
use h2direct::verify::{dense_oracle_solve, random_vector, relative_residual, replay_dense_shadow};
use h2direct::{Error, C64};

fn build(pc: &PointCloud, kernel: &KernelSpec, eps_h2: f64) -> H2Matrix {
    let tree = build_cluster_tree(pc, 25).unwrap();
    let blocks = build_block_tree(&tree, 1.0);
    build_h2(kernel, &tree, &blocks, eps_h2).unwrap()
}

#[test]
fn files_round_trip_to_identical_solutions() {
    let dir = tempfile::tempdir().unwrap();
    let pts = dir.path().join("pts.csv");
    io::write_points_csv(&fixtures::slab(500), std::fs::File::create(&pts).unwrap()).unwrap();
    let pc = io::load_points(&pts).unwrap();
    let kernel = KernelSpec::helmholtz(C64::new(1.0, 0.2));
    let a = build(&pc, &kernel, 1e-4);
    let opts = FactorOptions::new(1e-6);
    let chain = factorize(&a, &opts).unwrap();

    let mpath = dir.path().join("a.h2mx");
    io::save_h2(&a, &mpath).unwrap();
    let a2 = io::load_h2(&mpath).unwrap();
    let chain2 = factorize(&a2, &opts).unwrap();
    let cpath = dir.path().join("c.h2fc");
    io::save_chain(&chain2, &cpath).unwrap();
    let chain3 = io::load_chain(&cpath).unwrap();

    let b = random_vector(a.n(), 4);
    let x = solve(&chain, &b).unwrap();
    let x3 = solve(&chain3, &b).unwrap();
    assert_eq!(x, x3);
    let r = relative_residual(&a, &x, &b).unwrap();
    let r3 = relative_residual(&a2, &x3, &b).unwrap();
    assert!((r - r3).abs() <= 1e-13);
}

#[test]
fn tiny_problems_are_exact() {
    for n in [1, 3, 25] {
        for kernel in [KernelSpec::laplace(), KernelSpec::helmholtz(C64::new(3.0, 0.0))] {
            let a = build(&fixtures::cube(n), &kernel, 1e-2);
            assert!(a.blocks().admissible.is_empty());
            let chain = factorize(&a, &FactorOptions::new(1e-1)).unwrap();
            let b = random_vector(n, 1);
            let x = solve(&chain, &b).unwrap();
            let xd = dense_oracle_solve(&kernel, a.tree(), &b).unwrap();
            assert!((&x - &xd).norm() <= 1e-12 * xd.norm());
            assert!(replay_dense_shadow(&chain, &a).unwrap() <= 1e-13);
        }
    }
}

#[test]
fn block_diagonal_matrix_factors_blockwise() {
    // two far apart clumps: their interaction is set to zero by the kernel
    let mut pts = Vec::new();
    for c in 0..2 {
        for i in 0..25 {
            pts.push([100.0 * c as f64 + 0.1 * (i % 5) as f64, 0.1 * (i / 5) as f64, 0.0]);
        }
    }
    let pc = PointCloud::new(pts).unwrap();
    let kernel = KernelSpec::custom(
        |x, y| {
            if (x[0] - y[0]).abs() > 50.0 {
                C64::new(0.0, 0.0)
            } else {
                C64::new(0.3, 0.0) / (1.0 + (x[0] - y[0]).abs() + (x[1] - y[1]).abs())
            }
        },
        true,
    )
    .with_diagonal_shift(2.0);
    let a = build(&pc, &kernel, 1e-8);
    let chain = factorize(&a, &FactorOptions::new(1e-8)).unwrap();
    let b = random_vector(50, 2);
    let x = solve(&chain, &b).unwrap();
    let z = assemble_dense(&kernel, a.tree()).unwrap();
    for half in [0..25, 25..50] {
        let blk = z.view((half.start, half.start), (25, 25)).into_owned();
        let mut xb = b.rows(half.start, 25).iter().copied().collect::<Vec<_>>();
        PivotedLu::factor(&blk).unwrap().solve_in_place(&mut xb);
        for (i, v) in half.clone().zip(xb) {
            assert!((x[i] - v).norm() <= 1e-12 * (1.0 + v.norm()));
        }
    }
}

#[test]
fn identity_like_kernel_returns_the_rhs() {
    let kernel = KernelSpec::custom(|_, _| C64::new(0.0, 0.0), true);
    let a = build(&fixtures::rod(300), &kernel, 1e-6);
    let chain = factorize(&a, &FactorOptions::new(1e-6)).unwrap();
    let b = random_vector(300, 5);
    let x = solve(&chain, &b).unwrap();
    assert!((&x - &b).norm() <= 1e-14 * b.norm());
}

#[test]
fn stop_level_overrides_agree() {
    let a = build(&fixtures::rod(400), &KernelSpec::laplace(), 1e-6);
    let depth = a.tree().depth();
    let b = random_vector(400, 6);
    let mut xd: Vec<C64> = b.iter().copied().collect();
    PivotedLu::factor(&a.to_dense()).unwrap().solve_in_place(&mut xd);
    let xd = h2direct::CVec::from_vec(xd);
    for stop in [None, Some(depth), Some(depth + 1)] {
        let chain = factorize(&a, &FactorOptions::new(1e-10).with_stop_level(stop)).unwrap();
        assert_eq!(chain.stop_level, effective_stop_level(&a, stop));
        let x = solve(&chain, &b).unwrap();
        assert!((&x - &xd).norm() <= 1e-5 * xd.norm(), "{stop:?}");
    }
    let dense = factorize(&a, &FactorOptions::new(1e-10).with_stop_level(Some(depth + 1))).unwrap();
    assert!(dense.levels.is_empty());
    assert_eq!(dense.root.dim(), 400);
}

#[test]
fn singular_pivot_names_cluster_and_level() {
    // a zero matrix has no usable pivot anywhere
    let kernel = KernelSpec::custom(|_, _| C64::new(0.0, 0.0), true).with_diagonal_shift(0.0);
    let a = build(&fixtures::rod(200), &kernel, 1e-6);
    match factorize(&a, &FactorOptions::new(1e-6)) {
        Err(Error::SingularPivot { cluster, level, .. }) => {
            assert!(cluster.is_some() && level.is_some())
        }
        other => panic!("expected a singular pivot, got {other:?}"),
    }
}

#[test]
fn every_family_solves_to_its_accuracy() {
    for fam in [Family::Rod, Family::Slab, Family::Cube] {
        let kernel = KernelSpec::laplace().with_row_sum_scaling(true);
        let a = build(&fam.points(800), &kernel, 1e-5);
        let chain = factorize(&a, &FactorOptions::new(1e-6)).unwrap();
        let b = random_vector(800, 8);
        let x = solve(&chain, &b).unwrap();
        let r = relative_residual(&a, &x, &b).unwrap();
        assert!(r <= 1e-5, "{}: {r:e}", fam.name());
    }
}
