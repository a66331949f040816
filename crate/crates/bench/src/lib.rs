//! Shared setup for the criterion benchmarks.

use h2direct::factor::{factorize, FactorChain, FactorOptions};
use h2direct::fixtures::Family;
use h2direct::geometry::{build_block_tree, build_cluster_tree, BlockClusterTree, ClusterTree};
use h2direct::h2::{build_h2, H2Matrix};
use h2direct::kernel::KernelSpec;
use h2direct::verify::random_vector;
use h2direct::CVec;

/// Sizes swept by the benchmarks.
pub const SIZES: [usize; 3] = [800, 1600, 3200];
pub const EPS_H2: f64 = 1e-3;
pub const EPS_FILL_IN: f64 = 1e-5;

/// Geometry and partition for a fixture of size `n`.
pub fn partition(family: Family, n: usize) -> (ClusterTree, BlockClusterTree) {
    let tree = build_cluster_tree(&family.points(n), 25).expect("fixture tree");
    let blocks = build_block_tree(&tree, 1.0);
    (tree, blocks)
}

pub fn matrix(family: Family, n: usize) -> H2Matrix {
    let (tree, blocks) = partition(family, n);
    build_h2(&KernelSpec::laplace(), &tree, &blocks, EPS_H2).expect("fixture matrix")
}

pub fn options() -> FactorOptions {
    FactorOptions::new(EPS_FILL_IN).with_checks(false)
}

/// Factored fixture with a seeded right-hand side.
pub fn factored(family: Family, n: usize) -> (FactorChain, CVec) {
    let a = matrix(family, n);
    let chain = factorize(&a, &options()).expect("fixture factorization");
    (chain, random_vector(n, 0))
}
