use std::sync::OnceLock;

use h2direct::factor::{factorize, FactorChain, FactorOptions};
use h2direct::fixtures::Family;
use h2direct::geometry::{build_block_tree, build_cluster_tree};
use h2direct::h2::{build_h2, H2Matrix};
use h2direct::io::write_chain;
use h2direct::kernel::KernelSpec;
use h2direct::solve::{apply_lower, apply_upper, solve};
use h2direct::verify::{random_vector, relative_residual};
use h2direct::{CVec, C64};
use proptest::prelude::*;

fn build(family: Family, n: usize, kernel: &KernelSpec, eps_h2: f64) -> H2Matrix {
    let tree = build_cluster_tree(&family.points(n), 25).unwrap();
    let blocks = build_block_tree(&tree, 1.0);
    build_h2(kernel, &tree, &blocks, eps_h2).unwrap()
}

fn fixed() -> &'static (H2Matrix, FactorChain) {
    static CELL: OnceLock<(H2Matrix, FactorChain)> = OnceLock::new();
    CELL.get_or_init(|| {
        let a = build(Family::Slab, 300, &KernelSpec::helmholtz(C64::new(1.5, 0.0)), 1e-6);
        let chain = factorize(&a, &FactorOptions::new(1e-8)).unwrap();
        (a, chain)
    })
}

fn family() -> impl Strategy<Value = Family> {
    prop_oneof![Just(Family::Rod), Just(Family::Slab), Just(Family::Cube)]
}

fn kernel() -> impl Strategy<Value = KernelSpec> {
    prop_oneof![
        Just(KernelSpec::laplace()),
        (0.5f64..3.0).prop_map(|k| KernelSpec::helmholtz(C64::new(k, 0.0))),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn solve_is_linear(s1 in any::<u64>(), s2 in any::<u64>(), re in -2.0f64..2.0, im in -2.0f64..2.0) {
        let (a, chain) = fixed();
        let alpha = C64::new(re, im);
        let b1 = random_vector(a.n(), s1);
        let b2 = random_vector(a.n(), s2);
        let lhs = solve(chain, &(&b1 * alpha + &b2)).unwrap();
        let rhs = solve(chain, &b1).unwrap() * alpha + solve(chain, &b2).unwrap();
        prop_assert!((&lhs - &rhs).norm() <= 1e-12 * rhs.norm().max(1e-300));
    }

    #[test]
    fn lower_upper_product_reproduces_the_matrix(seed in any::<u64>()) {
        let (a, chain) = fixed();
        let v = random_vector(a.n(), seed);
        let lu_v = apply_lower(chain, &apply_upper(chain, &v).unwrap()).unwrap();
        let zv = a.matvec(&v).unwrap();
        prop_assert!((&lu_v - &zv).norm() <= 100.0 * 1e-8 * zv.norm());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn chains_are_bitwise_deterministic(fam in family(), k in kernel(), n in 60usize..260, exp in 3i32..9) {
        let eps = 10f64.powi(-exp);
        let bytes = || {
            let a = build(fam, n, &k, 1e-6);
            let chain = factorize(&a, &FactorOptions::new(eps)).unwrap();
            let mut out = Vec::new();
            write_chain(&chain, &mut out).unwrap();
            out
        };
        prop_assert_eq!(bytes(), bytes());
    }

    #[test]
    fn tighter_tolerance_does_not_worsen_the_residual(fam in family(), n in 150usize..400, exp in 2i32..6) {
        let a = build(fam, n, &KernelSpec::laplace().with_row_sum_scaling(true), 1e-6);
        let b = random_vector(n, n as u64);
        let res = |eps: f64| {
            let chain = factorize(&a, &FactorOptions::new(eps)).unwrap();
            relative_residual(&a, &solve(&chain, &b).unwrap(), &b).unwrap()
        };
        let loose = res(10f64.powi(-exp));
        let tight = res(10f64.powi(-exp - 2));
        prop_assert!(tight <= 2.0 * loose, "{} -> {}", loose, tight);
    }

    #[test]
    fn factor_storage_covers_the_matrix(fam in family(), n in 100usize..600) {
        let a = build(fam, n, &KernelSpec::laplace(), 1e-4);
        let chain = factorize(&a, &FactorOptions::new(1e-5)).unwrap();
        prop_assert!(chain.memory_bytes() >= a.storage_bytes());
    }
}

#[test]
fn zero_rhs_solves_to_zero() {
    let (a, chain) = fixed();
    assert_eq!(solve(chain, &CVec::zeros(a.n())).unwrap(), CVec::zeros(a.n()));
}
