use h2direct::fixtures::Family;
use h2direct::solve::solve;
use h2direct_bench::{factored, matrix, SIZES};

#[test]
fn benchmark_fixtures_are_consistent() {
    let n = SIZES[0];
    let a = matrix(Family::Rod, n);
    assert_eq!(a.n(), n);
    let (chain, rhs) = factored(Family::Rod, n);
    assert_eq!(chain.n, n);
    let x = solve(&chain, &rhs).unwrap();
    let r = h2direct::verify::relative_residual(&a, &x, &rhs).unwrap();
    assert!(r < 1e-3, "{r:e}");
}
