//! Small dense kernels: truncated Hermitian eigen/SVD compression, unitary
//! completion, unpivoted partial LU and the triangular solves built on it.
//!
//! Everything here operates on blocks of leaf or rank size, so plain loops
//! over column-major storage are used rather than blocked kernels.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::{CMat, Error, Result, C64};

/// Default relative pivot threshold for [`partial_lu`].
pub const PIVOT_TOL: f64 = 1e-13;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// Leading singular (or eigen) vectors retained by a truncation.
#[derive(Debug, Clone)]
pub struct TruncatedSvd {
    /// Orthonormal columns spanning the retained space.
    pub u: CMat,
    /// All singular values (or eigenvalues) in descending order, including
    /// the discarded tail.
    pub sigma: Vec<f64>,
    pub rank: usize,
    pub eps: f64,
}

impl TruncatedSvd {
    /// Retained values only.
    pub fn retained(&self) -> &[f64] {
        &self.sigma[..self.rank]
    }
}

/// True when every entry has a zero imaginary part.
pub fn is_real(m: &CMat) -> bool {
    m.iter().all(|z| z.im == 0.0)
}

fn check_finite(m: &CMat, what: &str) -> Result<()> {
    if m.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

fn to_real(m: &CMat) -> DMatrix<f64> {
    m.map(|z| z.re)
}

fn to_complex(m: &DMatrix<f64>) -> CMat {
    m.map(|x| C64::new(x, 0.0))
}

/// Eigen-decomposition of a Hermitian matrix, eigenpairs sorted descending.
///
/// Real input stays in real arithmetic so that real problems keep real bases.
fn hermitian_eig_sorted(g: &CMat) -> (Vec<f64>, CMat) {
    let n = g.nrows();
    if n == 0 {
        return (Vec::new(), CMat::zeros(0, 0));
    }
    let (values, vectors): (Vec<f64>, CMat) = if is_real(g) {
        let eig = SymmetricEigen::new(to_real(g));
        (eig.eigenvalues.iter().copied().collect(), to_complex(&eig.eigenvectors))
    } else {
        let eig = SymmetricEigen::new(g.clone());
        (eig.eigenvalues.iter().copied().collect(), eig.eigenvectors)
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let sorted_vals = order.iter().map(|&i| values[i].max(0.0)).collect();
    let sorted_vecs = CMat::from_fn(n, n, |r, c| vectors[(r, order[c])]);
    (sorted_vals, sorted_vecs)
}

fn hermitian_part(g: &CMat) -> Result<CMat> {
    if g.nrows() != g.ncols() {
        return Err(Error::InvalidInput(format!(
            "expected a square matrix, got {}x{}",
            g.nrows(),
            g.ncols()
        )));
    }
    check_finite(g, "Hermitian compression input")?;
    Ok((g + g.adjoint()) * C64::new(0.5, 0.0))
}

/// Truncated eigen-decomposition of a Hermitian positive semidefinite matrix.
///
/// Eigenvalues `λ_j ≤ eps·λ_0` (and anything below `1e-300`) are discarded,
/// where `λ_0` is the largest eigenvalue of `g` itself.
pub fn truncated_eig_psd(g: &CMat, eps: f64) -> Result<TruncatedSvd> {
    let g = hermitian_part(g)?;
    let (sigma, vectors) = hermitian_eig_sorted(&g);
    let threshold = (eps * sigma.first().copied().unwrap_or(0.0)).max(1e-300);
    let rank = sigma.iter().take_while(|&&s| s > threshold).count();
    Ok(TruncatedSvd {
        u: vectors.columns(0, rank).into_owned(),
        sigma,
        rank,
        eps,
    })
}

/// Truncated eigen-decomposition keeping the smallest rank whose discarded
/// eigenvalue sum is at most `tail_tol`.
///
/// Applied to a Gram matrix `A A^H` this bounds `‖(I − UU^H) A‖_F² ≤ tail_tol`.
pub fn truncated_eig_psd_tail(g: &CMat, tail_tol: f64) -> Result<TruncatedSvd> {
    let g = hermitian_part(g)?;
    let (sigma, vectors) = hermitian_eig_sorted(&g);
    let mut rank = sigma.len();
    let mut tail = 0.0;
    while rank > 0 {
        let next = tail + sigma[rank - 1];
        if next > tail_tol || sigma[rank - 1] > 1e300 {
            break;
        }
        tail = next;
        rank -= 1;
    }
    Ok(TruncatedSvd {
        u: vectors.columns(0, rank).into_owned(),
        sigma,
        rank,
        eps: tail_tol,
    })
}

/// Left singular vectors of `a` whose singular values exceed `abs_tol`.
pub fn truncated_svd(a: &CMat, abs_tol: f64) -> Result<TruncatedSvd> {
    check_finite(a, "SVD input")?;
    let n = a.nrows();
    if n == 0 || a.ncols() == 0 {
        return Ok(TruncatedSvd {
            u: CMat::zeros(n, 0),
            sigma: Vec::new(),
            rank: 0,
            eps: abs_tol,
        });
    }
    let (sv, u) = jacobi_left_svd(a);
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&x, &y| sv[y].total_cmp(&sv[x]).then(x.cmp(&y)));
    let sigma: Vec<f64> = order.iter().map(|&i| sv[i]).collect();
    let rank = sigma.iter().take_while(|&&s| s > abs_tol.max(1e-300)).count();
    let u = CMat::from_fn(n, rank, |r, c| u[(r, order[c])]);
    Ok(TruncatedSvd {
        u,
        sigma,
        rank,
        eps: abs_tol,
    })
}

/// Left singular pairs of `a` by one-sided Jacobi on `a^H`.
///
/// nalgebra 0.35's bidiagonal SVD can return a leading singular value above
/// `‖a‖_F` for near rank-one input when `U` is requested, so the truncation
/// path does not rely on it. Jacobi keeps small singular values to high
/// relative accuracy and stays real for real input.
fn jacobi_left_svd(a: &CMat) -> (Vec<f64>, CMat) {
    let n = a.nrows();
    let mut w = a.adjoint();
    let mut v = CMat::identity(n, n);
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = w.column(p).norm_squared();
                let beta = w.column(q).norm_squared();
                let gamma: C64 = w.column(p).dotc(&w.column(q));
                let g = gamma.norm();
                if g == 0.0 || g <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let ph = (gamma / g).conj();
                let zeta = (beta - alpha) / (2.0 * g);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for m in [&mut w, &mut v] {
                    for r in 0..m.nrows() {
                        let xp = m[(r, p)];
                        let xq = m[(r, q)] * ph;
                        m[(r, p)] = xp * c - xq * s;
                        m[(r, q)] = xp * s + xq * c;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let sv: Vec<f64> = (0..n).map(|j| w.column(j).norm()).collect();
    (sv, v)
}

/// `‖V^H V − I‖_F`.
pub fn orthonormality_error(v: &CMat) -> f64 {
    let g = v.adjoint() * v;
    (g - CMat::identity(v.ncols(), v.ncols())).norm()
}

/// Thin QR factor: orthonormal columns spanning `range(a)` (assumes full
/// column rank).
pub fn orthonormalize(a: &CMat) -> CMat {
    let (n, k) = a.shape();
    if k == 0 || n == 0 {
        return CMat::zeros(n, 0);
    }
    if is_real(a) {
        to_complex(&to_real(a).qr().q())
    } else {
        a.clone().qr().q()
    }
}

/// Orthonormal complement of the columns of `v`.
///
/// Returns `V⊥` with `#i − k` columns such that `[V⊥ V]` is unitary.
pub fn unitary_completion(v: &CMat) -> Result<CMat> {
    let (n, k) = v.shape();
    if k > n {
        return Err(Error::InvalidInput(format!("basis has {k} columns but only {n} rows")));
    }
    check_finite(v, "unitary completion input")?;
    let dev = orthonormality_error(v);
    if dev > 1e-10 {
        return Err(Error::NotOrthonormal(dev));
    }
    if k == n {
        return Ok(CMat::zeros(n, 0));
    }
    // Householder QR of [V | I]: the first k columns of Q span range(V), the
    // remaining n − k complete it.
    let mut aug = CMat::zeros(n, k + n);
    aug.columns_mut(0, k).copy_from(v);
    aug.columns_mut(k, n).fill_with_identity();
    let q = if is_real(&aug) {
        to_complex(&to_real(&aug).qr().q())
    } else {
        aug.qr().q()
    };
    Ok(q.columns(k, n - k).into_owned())
}

/// Unpivoted LU factorization `F = L U` with unit-lower `L`.
///
/// Row exchanges are never performed; a pivot with
/// `|p| < pivot_tol · max|F|` is reported as [`Error::SingularPivot`].
pub fn partial_lu(f: &CMat, pivot_tol: f64) -> Result<(CMat, CMat)> {
    let n = f.nrows();
    if f.ncols() != n {
        return Err(Error::InvalidInput(format!("LU of non-square {}x{}", n, f.ncols())));
    }
    check_finite(f, "partial LU input")?;
    let scale = f.iter().fold(0.0f64, |m, z| m.max(z.norm()));
    let mut a = f.clone();
    for p in 0..n {
        let pivot = a[(p, p)];
        if pivot.norm() <= pivot_tol * scale || pivot.norm() == 0.0 {
            return Err(Error::SingularPivot {
                index: p,
                pivot: pivot.norm(),
                cluster: None,
                level: None,
            });
        }
        let inv = ONE / pivot;
        for r in p + 1..n {
            a[(r, p)] *= inv;
        }
        for c in p + 1..n {
            let upc = a[(p, c)];
            if upc == ZERO {
                continue;
            }
            for r in p + 1..n {
                let lrp = a[(r, p)];
                a[(r, c)] -= lrp * upc;
            }
        }
    }
    let l = CMat::from_fn(n, n, |r, c| match r.cmp(&c) {
        std::cmp::Ordering::Greater => a[(r, c)],
        std::cmp::Ordering::Equal => ONE,
        std::cmp::Ordering::Less => ZERO,
    });
    let u = CMat::from_fn(n, n, |r, c| if r <= c { a[(r, c)] } else { ZERO });
    Ok((l, u))
}

/// Solve `L x = b` in place for unit-lower `L`.
pub fn unit_lower_solve(l: &CMat, b: &mut [C64]) {
    let n = l.nrows();
    for c in 0..n {
        let x = b[c];
        if x == ZERO {
            continue;
        }
        let col = &l.as_slice()[c * n..(c + 1) * n];
        for r in c + 1..n {
            b[r] -= col[r] * x;
        }
    }
}

/// Solve `U x = b` in place for upper-triangular `U`.
pub fn upper_solve(u: &CMat, b: &mut [C64]) {
    let n = u.nrows();
    for c in (0..n).rev() {
        let col = &u.as_slice()[c * n..(c + 1) * n];
        b[c] /= col[c];
        let x = b[c];
        if x == ZERO {
            continue;
        }
        for r in 0..c {
            b[r] -= col[r] * x;
        }
    }
}

/// `L^{-1} B` for unit-lower `L`.
pub fn unit_lower_solve_mat(l: &CMat, b: &CMat) -> CMat {
    let mut x = b.clone();
    let n = b.nrows();
    for j in 0..b.ncols() {
        unit_lower_solve(l, &mut x.as_mut_slice()[j * n..(j + 1) * n]);
    }
    x
}

/// `B U^{-1}` for upper-triangular `U`.
pub fn right_upper_solve_mat(b: &CMat, u: &CMat) -> CMat {
    let (m, n) = b.shape();
    let mut x = b.clone();
    for j in 0..n {
        for p in 0..j {
            let upj = u[(p, j)];
            if upj == ZERO {
                continue;
            }
            for r in 0..m {
                let xp = x[(r, p)];
                x[(r, j)] -= xp * upj;
            }
        }
        let inv = ONE / u[(j, j)];
        for r in 0..m {
            x[(r, j)] *= inv;
        }
    }
    x
}

/// LU factorization with partial (row) pivoting, `P A = L U`, stored packed.
#[derive(Debug, Clone, PartialEq)]
pub struct PivotedLu {
    /// Strictly lower part holds `L` (unit diagonal implied), upper part `U`.
    pub packed: CMat,
    /// `perm[i]` is the original row placed at position `i`.
    pub perm: Vec<usize>,
}

impl PivotedLu {
    pub fn factor(a: &CMat) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::InvalidInput(format!("LU of non-square {}x{}", n, a.ncols())));
        }
        check_finite(a, "dense LU input")?;
        let mut m = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for p in 0..n {
            let (best, mag) = (p..n)
                .map(|r| (r, m[(r, p)].norm()))
                .fold((p, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            if mag == 0.0 {
                return Err(Error::SingularPivot {
                    index: p,
                    pivot: 0.0,
                    cluster: None,
                    level: None,
                });
            }
            if best != p {
                m.swap_rows(p, best);
                perm.swap(p, best);
            }
            let inv = ONE / m[(p, p)];
            for r in p + 1..n {
                m[(r, p)] *= inv;
            }
            for c in p + 1..n {
                let upc = m[(p, c)];
                if upc == ZERO {
                    continue;
                }
                for r in p + 1..n {
                    let l = m[(r, p)];
                    m[(r, c)] -= l * upc;
                }
            }
        }
        Ok(Self { packed: m, perm })
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    pub fn l(&self) -> CMat {
        let n = self.dim();
        CMat::from_fn(n, n, |r, c| match r.cmp(&c) {
            std::cmp::Ordering::Greater => self.packed[(r, c)],
            std::cmp::Ordering::Equal => ONE,
            std::cmp::Ordering::Less => ZERO,
        })
    }

    pub fn u(&self) -> CMat {
        let n = self.dim();
        CMat::from_fn(n, n, |r, c| if r <= c { self.packed[(r, c)] } else { ZERO })
    }

    /// Row permutation matrix `P` with `P A = L U`.
    pub fn p(&self) -> CMat {
        let n = self.dim();
        let mut p = CMat::zeros(n, n);
        for (i, &r) in self.perm.iter().enumerate() {
            p[(i, r)] = ONE;
        }
        p
    }

    /// `y ← L^{-1} P b` in place.
    pub fn forward(&self, b: &mut [C64]) {
        let permuted: Vec<C64> = self.perm.iter().map(|&r| b[r]).collect();
        b.copy_from_slice(&permuted);
        let n = self.dim();
        for c in 0..n {
            let x = b[c];
            for r in c + 1..n {
                b[r] -= self.packed[(r, c)] * x;
            }
        }
    }

    /// `x ← U^{-1} y` in place.
    pub fn backward(&self, b: &mut [C64]) {
        let n = self.dim();
        for c in (0..n).rev() {
            b[c] /= self.packed[(c, c)];
            let x = b[c];
            for r in 0..c {
                b[r] -= self.packed[(r, c)] * x;
            }
        }
    }

    pub fn solve_in_place(&self, b: &mut [C64]) {
        self.forward(b);
        self.backward(b);
    }
}
