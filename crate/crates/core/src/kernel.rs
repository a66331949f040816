//! Kernel functions generating matrix entries from point pairs.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::geometry::ClusterTree;
use crate::{CMat, Error, Result, C64};

/// Default size limit for dense assembly.
pub const DENSE_GUARD: usize = 20_000;

type PairFn = dyn Fn(&[f64; 3], &[f64; 3]) -> C64 + Send + Sync;

#[derive(Clone)]
pub enum KernelKind {
    /// `1 / (4π r)`.
    Laplace,
    /// `exp(−i k r) / (4π r)` with a complex wavenumber `k`.
    Helmholtz { wavenumber: C64 },
    /// User-supplied off-diagonal entry function.
    Custom { f: Arc<PairFn>, symmetric: bool },
}

impl fmt::Debug for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelKind::Laplace => write!(f, "Laplace"),
            KernelKind::Helmholtz { wavenumber } => write!(f, "Helmholtz({wavenumber})"),
            KernelKind::Custom { symmetric, .. } => write!(f, "Custom(symmetric={symmetric})"),
        }
    }
}

/// Entry generator `Z[m][n]`.
///
/// Off-diagonal entries come from the kernel function; self-interaction
/// entries are set to `diagonal_shift`, optionally raised by the largest
/// off-diagonal absolute row sum so that the matrix is strictly diagonally
/// dominant.
#[derive(Debug, Clone)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub diagonal_shift: f64,
    pub row_sum_scaling: bool,
}

impl KernelSpec {
    pub fn laplace() -> Self {
        Self {
            kind: KernelKind::Laplace,
            diagonal_shift: 1.0,
            row_sum_scaling: false,
        }
    }

    pub fn helmholtz(wavenumber: C64) -> Self {
        Self {
            kind: KernelKind::Helmholtz { wavenumber },
            diagonal_shift: 1.0,
            row_sum_scaling: false,
        }
    }

    pub fn custom<F>(f: F, symmetric: bool) -> Self
    where
        F: Fn(&[f64; 3], &[f64; 3]) -> C64 + Send + Sync + 'static,
    {
        Self {
            kind: KernelKind::Custom {
                f: Arc::new(f),
                symmetric,
            },
            diagonal_shift: 1.0,
            row_sum_scaling: false,
        }
    }

    pub fn with_diagonal_shift(mut self, shift: f64) -> Self {
        self.diagonal_shift = shift;
        self
    }

    pub fn with_row_sum_scaling(mut self, on: bool) -> Self {
        self.row_sum_scaling = on;
        self
    }

    /// True when `Z = Z^T`.
    pub fn is_symmetric(&self) -> bool {
        match &self.kind {
            KernelKind::Custom { symmetric, .. } => *symmetric,
            _ => true,
        }
    }

    /// True when all entries are real.
    pub fn is_real(&self) -> bool {
        match &self.kind {
            KernelKind::Laplace => true,
            KernelKind::Helmholtz { .. } | KernelKind::Custom { .. } => false,
        }
    }

    /// Off-diagonal entry for two points.
    pub fn eval(&self, x: &[f64; 3], y: &[f64; 3]) -> C64 {
        let r = ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2) + (x[2] - y[2]).powi(2)).sqrt();
        match &self.kind {
            KernelKind::Laplace => C64::new(1.0 / (4.0 * PI * r), 0.0),
            KernelKind::Helmholtz { wavenumber } => {
                (-C64::i() * wavenumber * r).exp() / (4.0 * PI * r)
            }
            KernelKind::Custom { f, .. } => f(x, y),
        }
    }

    /// Binds the kernel to the points of a cluster tree (tree ordering).
    pub fn bind(&self, tree: &ClusterTree) -> Result<BoundKernel> {
        let points: Vec<[f64; 3]> = (0..tree.n()).map(|p| *tree.tree_point(p)).collect();
        let mut bound = BoundKernel {
            spec: self.clone(),
            diagonal: C64::new(self.diagonal_shift, 0.0),
            points,
        };
        if self.row_sum_scaling {
            let n = bound.points.len();
            let mut max_sum = 0.0f64;
            for i in 0..n {
                let s: f64 = (0..n)
                    .filter(|&j| j != i)
                    .map(|j| self.eval(&bound.points[i], &bound.points[j]).norm())
                    .sum();
                if !s.is_finite() {
                    return Err(Error::NonFinite(format!("kernel row {i}")));
                }
                max_sum = max_sum.max(s);
            }
            bound.diagonal += max_sum;
        }
        Ok(bound)
    }
}

/// A kernel evaluated on a fixed point set in tree ordering.
#[derive(Debug, Clone)]
pub struct BoundKernel {
    spec: KernelSpec,
    diagonal: C64,
    points: Vec<[f64; 3]>,
}

impl BoundKernel {
    pub fn n(&self) -> usize {
        self.points.len()
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn diagonal(&self) -> C64 {
        self.diagonal
    }

    pub fn entry(&self, i: usize, j: usize) -> C64 {
        if i == j {
            self.diagonal
        } else {
            self.spec.eval(&self.points[i], &self.points[j])
        }
    }

    /// Dense sub-block over tree-ordered index ranges.
    pub fn block(&self, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> Result<CMat> {
        let (r0, c0) = (rows.start, cols.start);
        let m = CMat::from_fn(rows.len(), cols.len(), |r, c| self.entry(r0 + r, c0 + c));
        if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite(format!(
                "kernel block rows {r0}.. cols {c0}.. (coincident points?)"
            )));
        }
        Ok(m)
    }
}

/// Dense kernel matrix in tree ordering, refused above [`DENSE_GUARD`].
pub fn assemble_dense(kernel: &KernelSpec, tree: &ClusterTree) -> Result<CMat> {
    assemble_dense_guarded(kernel, tree, DENSE_GUARD)
}

pub fn assemble_dense_guarded(kernel: &KernelSpec, tree: &ClusterTree, limit: usize) -> Result<CMat> {
    if tree.n() > limit {
        return Err(Error::TooLarge { n: tree.n(), limit });
    }
    let bound = kernel.bind(tree)?;
    bound.block(0..tree.n(), 0..tree.n())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_cluster_tree, PointCloud};

    fn tree_of(pts: Vec<[f64; 3]>) -> ClusterTree {
        build_cluster_tree(&PointCloud::new(pts).unwrap(), 25).unwrap()
    }

    #[test]
    fn laplace_unit_distance() {
        let tree = tree_of(vec![[0.0; 3], [1.0, 0.0, 0.0]]);
        let z = assemble_dense(&KernelSpec::laplace(), &tree).unwrap();
        assert!((z[(0, 1)].re - 1.0 / (4.0 * PI)).abs() < 1e-15);
        assert_eq!(z[(0, 1)].im, 0.0);
        assert_eq!(z[(0, 0)], C64::new(1.0, 0.0));
    }

    #[test]
    fn helmholtz_zero_wavenumber_is_laplace() {
        let x = [0.0; 3];
        let y = [0.0, 1.0, 0.0];
        let h = KernelSpec::helmholtz(C64::new(0.0, 0.0)).eval(&x, &y);
        let l = KernelSpec::laplace().eval(&x, &y);
        assert!((h - l).norm() < 1e-16);
    }

    #[test]
    fn helmholtz_matches_closed_form() {
        let k = C64::new(2.0, 0.1);
        let r: f64 = 0.7;
        let z = KernelSpec::helmholtz(k).eval(&[0.0; 3], &[r, 0.0, 0.0]);
        // exp(-i(a+ib)r) = exp(br)(cos(ar) - i sin(ar))
        let expect = C64::new((2.0 * r).cos(), -(2.0 * r).sin()) * (0.1 * r).exp() / (4.0 * PI * r);
        assert!((z - expect).norm() < 1e-14);
    }

    #[test]
    fn symmetric_kernels_give_symmetric_matrices() {
        let tree = tree_of(vec![[0.0; 3], [0.3, 0.1, 0.0], [0.9, -0.2, 0.5]]);
        for k in [KernelSpec::laplace(), KernelSpec::helmholtz(C64::new(3.0, 0.0))] {
            let z = assemble_dense(&k, &tree).unwrap();
            assert_eq!(z, z.transpose());
        }
    }

    #[test]
    fn coincident_points_are_non_finite() {
        let tree = tree_of(vec![[0.0; 3], [0.0; 3]]);
        assert!(matches!(
            assemble_dense(&KernelSpec::laplace(), &tree),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn dense_guard_refuses() {
        let tree = tree_of(vec![[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
        assert!(matches!(
            assemble_dense_guarded(&KernelSpec::laplace(), &tree, 2),
            Err(Error::TooLarge { n: 3, limit: 2 })
        ));
    }

    #[test]
    fn row_sum_scaling_dominates() {
        let pts: Vec<_> = (0..20).map(|i| [i as f64 * 0.05, 0.0, 0.0]).collect();
        let tree = tree_of(pts);
        let k = KernelSpec::helmholtz(C64::new(1.0, 0.0)).with_row_sum_scaling(true);
        let z = assemble_dense(&k, &tree).unwrap();
        for i in 0..20 {
            let off: f64 = (0..20).filter(|&j| j != i).map(|j| z[(i, j)].norm()).sum();
            assert!(z[(i, i)].norm() > off);
        }
    }
}
