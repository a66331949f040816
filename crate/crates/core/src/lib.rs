//! Accuracy-controlled direct solution of H²-matrices.
//!
//! The crate covers the whole pipeline:
//!
//! 1. [`geometry`] builds a binary cluster tree over a point cloud and the
//!    block-cluster partition from the admissibility condition.
//! 2. [`h2`] assembles an H²-matrix with nested, orthonormal cluster bases
//!    from a [`kernel::KernelSpec`].
//! 3. [`factor`] runs the level-by-level partial LU factorization. Cluster
//!    bases are enlarged on the fly to absorb fill-ins, truncated at a
//!    prescribed `eps_fill_in`, so the accuracy of the factorization is set
//!    directly by that parameter.
//! 4. [`solve`] applies the factored form (forward and backward
//!    substitution, or equivalently the explicit inverse).
//! 5. [`verify`] contains dense oracles, residual metrics and the scaling
//!    sweep harness.
//!
//! ```no_run
//! use h2direct::prelude::*;
//!
//! let pc = fixtures::rod(800);
//! let tree = build_cluster_tree(&pc, 25).unwrap();
//! let blocks = build_block_tree(&tree, 1.0);
//! let kernel = KernelSpec::laplace();
//! let a = build_h2(&kernel, &tree, &blocks, 1e-3).unwrap();
//! let chain = factorize(&a, &FactorOptions::new(1e-5)).unwrap();
//! let b = CVec::from_element(a.n(), C64::new(1.0, 0.0));
//! let x = solve(&chain, &b).unwrap();
//! println!("residual {:e}", relative_residual(&a, &x, &b).unwrap());
//! ```

pub mod dense;
pub mod error;
pub mod factor;
pub mod fixtures;
pub mod geometry;
pub mod h2;
pub mod io;
pub mod kernel;
pub mod solve;
pub mod verify;

pub use error::{Error, Result};

/// Complex double scalar used throughout.
pub type C64 = num_complex::Complex64;
/// Dense complex matrix (column-major).
pub type CMat = nalgebra::DMatrix<C64>;
/// Dense complex vector.
pub type CVec = nalgebra::DVector<C64>;

/// Everything needed for the common build → factorize → solve flow.
pub mod prelude {
    pub use crate::factor::{factorize, FactorChain, FactorOptions};
    pub use crate::fixtures;
    pub use crate::geometry::{
        build_block_tree, build_cluster_tree, BlockClusterTree, ClusterTree, PointCloud,
    };
    pub use crate::h2::{build_h2, H2Matrix};
    pub use crate::kernel::KernelSpec;
    pub use crate::solve::{apply_inverse, solve};
    pub use crate::verify::relative_residual;
    pub use crate::{CMat, CVec, Error, Result, C64};
}
