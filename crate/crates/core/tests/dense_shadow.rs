//! Drives the factorization one step at a time next to a dense shadow that
//! applies the same unitary projections and Schur eliminations explicitly.

use h2direct::factor::{FactorOptions, Factorizer};
use h2direct::fixtures;
use h2direct::geometry::{build_block_tree, build_cluster_tree};
use h2direct::h2::{build_h2, H2Matrix};
use h2direct::kernel::KernelSpec;
use h2direct::{CMat, C64};

fn h2(pc: h2direct::geometry::PointCloud, kernel: &KernelSpec) -> H2Matrix {
    let tree = build_cluster_tree(&pc, 25).unwrap();
    let blocks = build_block_tree(&tree, 1.0);
    build_h2(kernel, &tree, &blocks, 1e-6).unwrap()
}

/// `d ← Q̂^H d conj(Q̂)` with `q` embedded at `pos`.
fn rotate(d: &mut CMat, pos: &[usize], q: &CMat) {
    let n = d.nrows();
    let rows = CMat::from_fn(pos.len(), n, |r, c| d[(pos[r], c)]);
    let rows = q.adjoint() * rows;
    for (r, &p) in pos.iter().enumerate() {
        for c in 0..n {
            d[(p, c)] = rows[(r, c)];
        }
    }
    let cols = CMat::from_fn(n, pos.len(), |r, c| d[(r, pos[c])]);
    let cols = cols * q.conjugate();
    for (c, &p) in pos.iter().enumerate() {
        for r in 0..n {
            d[(r, p)] = cols[(r, c)];
        }
    }
}

/// Eliminates the unknowns `elim` from `d`: Schur update of the rest, then
/// identity rows and columns.
fn schur(d: &mut CMat, elim: &[usize]) {
    if elim.is_empty() {
        return;
    }
    let n = d.nrows();
    let rest: Vec<usize> = (0..n).filter(|p| !elim.contains(p)).collect();
    let a = CMat::from_fn(elim.len(), elim.len(), |r, c| d[(elim[r], elim[c])]);
    let b = CMat::from_fn(elim.len(), rest.len(), |r, c| d[(elim[r], rest[c])]);
    let c = CMat::from_fn(rest.len(), elim.len(), |r, k| d[(rest[r], elim[k])]);
    let upd = c * a.lu().solve(&b).expect("pivot block invertible");
    for (r, &pr) in rest.iter().enumerate() {
        for (k, &pk) in rest.iter().enumerate() {
            d[(pr, pk)] -= upd[(r, k)];
        }
    }
    for &p in elim {
        for q in 0..n {
            d[(p, q)] = C64::new(0.0, 0.0);
            d[(q, p)] = C64::new(0.0, 0.0);
        }
        d[(p, p)] = C64::new(1.0, 0.0);
    }
}

fn rel(a: &CMat, b: &CMat) -> f64 {
    (a - b).norm() / b.norm()
}

/// Runs the shadow to the stop level; returns the worst mismatch seen and the
/// number of unknowns eliminated on the way.
fn shadow_run(a: &H2Matrix, eps: f64) -> (f64, usize) {
    let mut f = Factorizer::new(a, FactorOptions::new(eps)).unwrap();
    let mut d = a.to_dense();
    let mut worst = rel(&f.materialize(), &d);
    let stop = h2direct::factor::effective_stop_level(a, None);
    let mut eliminated = 0;
    while f.level() >= stop && f.level() > 0 {
        for c in f.clusters() {
            f.step0_update_basis(c).unwrap();
            let q = f.step1_projection(c).unwrap();
            let pos = f.positions(c).to_vec();
            rotate(&mut d, &pos, &q);
            f.step2_apply_projection(c, &q);
            worst = worst.max(rel(&f.materialize(), &d));
            let rec = f.step3_partial_eliminate(c).unwrap();
            schur(&mut d, &pos[..rec.eliminated]);
            worst = worst.max(rel(&f.materialize(), &d));
            eliminated += rec.eliminated;
        }
        f.finish_level();
        f.merge_permute();
        worst = worst.max(rel(&f.materialize(), &d));
    }
    (worst, eliminated)
}

#[test]
fn shadow_matches_at_tight_tolerance_laplace_rod() {
    let a = h2(fixtures::rod(200), &KernelSpec::laplace());
    let (worst, eliminated) = shadow_run(&a, 1e-12);
    assert!(eliminated > 0);
    assert!(worst <= 1e-9, "{worst:e}");
}

#[test]
fn shadow_matches_at_tight_tolerance_helmholtz_slab() {
    let a = h2(fixtures::slab(200), &KernelSpec::helmholtz(C64::new(2.0, 0.5)));
    let (worst, eliminated) = shadow_run(&a, 1e-12);
    assert!(eliminated > 0);
    assert!(worst <= 1e-9, "{worst:e}");
}

#[test]
fn shadow_tracks_truncation_level() {
    let a = h2(fixtures::slab(200), &KernelSpec::laplace());
    for eps in [1e-4, 1e-6, 1e-8] {
        let (worst, eliminated) = shadow_run(&a, eps);
        assert!(eliminated >= 100);
        assert!(worst <= 100.0 * eps, "eps {eps:e}: {worst:e}");
    }
}

#[test]
fn materialize_starts_at_the_dense_image() {
    let a = h2(fixtures::rod(150), &KernelSpec::laplace());
    let f = Factorizer::new(&a, FactorOptions::new(1e-6)).unwrap();
    assert!(rel(&f.materialize(), &a.to_dense()) <= 1e-14);
}
