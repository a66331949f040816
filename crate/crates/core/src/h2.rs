//! H²-matrices with nested orthonormal cluster bases.
//!
//! An admissible block `(t, s)` is stored as `V_t S_{t,s} V_s^T`, where the
//! basis of a non-leaf cluster is never stored explicitly but expressed
//! through its children: `V_t = [V_{t1} T_{t1}; V_{t2} T_{t2}]`.
//!
//! Construction is algebraic. Each cluster's basis is the dominant left
//! singular space of all its far-field rows (the admissible blocks of the
//! cluster and of its ancestors, restricted to its index set), computed
//! bottom-up so that every parent basis lies in the span of its children.

use std::collections::BTreeMap;

use crate::dense::truncated_eig_psd_tail;
use crate::geometry::{BlockClusterTree, ClusterTree};
use crate::kernel::{BoundKernel, KernelSpec};
use crate::{CMat, CVec, Error, Result, C64};

/// Cluster basis: explicit for leaves, transfer matrices otherwise.
#[derive(Debug, Clone, PartialEq)]
pub enum ClusterBasis {
    /// `#t × k` matrix with orthonormal columns.
    Leaf(CMat),
    /// `[upper; lower]` has orthonormal columns; `upper` has one row per
    /// basis vector of the first child, `lower` of the second.
    Transfer { upper: CMat, lower: CMat },
}

impl ClusterBasis {
    pub fn rank(&self) -> usize {
        match self {
            ClusterBasis::Leaf(v) => v.ncols(),
            ClusterBasis::Transfer { upper, .. } => upper.ncols(),
        }
    }

    /// The stored matrix: `V` for leaves, `[upper; lower]` otherwise.
    pub fn stacked(&self) -> CMat {
        match self {
            ClusterBasis::Leaf(v) => v.clone(),
            ClusterBasis::Transfer { upper, lower } => stack(upper, lower),
        }
    }

    fn entries(&self) -> usize {
        match self {
            ClusterBasis::Leaf(v) => v.len(),
            ClusterBasis::Transfer { upper, lower } => upper.len() + lower.len(),
        }
    }
}

pub(crate) fn stack(a: &CMat, b: &CMat) -> CMat {
    let mut m = CMat::zeros(a.nrows() + b.nrows(), a.ncols());
    m.rows_mut(0, a.nrows()).copy_from(a);
    m.rows_mut(a.nrows(), b.nrows()).copy_from(b);
    m
}

#[derive(Debug, Clone, PartialEq)]
pub struct H2Matrix {
    tree: ClusterTree,
    blocks: BlockClusterTree,
    eps_h2: f64,
    bases: Vec<ClusterBasis>,
    couplings: BTreeMap<(usize, usize), CMat>,
    dense: BTreeMap<(usize, usize), CMat>,
}

impl H2Matrix {
    pub(crate) fn from_parts(
        tree: ClusterTree,
        blocks: BlockClusterTree,
        eps_h2: f64,
        bases: Vec<ClusterBasis>,
        couplings: BTreeMap<(usize, usize), CMat>,
        dense: BTreeMap<(usize, usize), CMat>,
    ) -> Result<Self> {
        let a = Self {
            tree,
            blocks,
            eps_h2,
            bases,
            couplings,
            dense,
        };
        a.validate()?;
        Ok(a)
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Format(m));
        if self.bases.len() != self.tree.clusters().len() {
            return bad("basis count does not match cluster count".into());
        }
        for c in self.tree.clusters() {
            match (&self.bases[c.id], c.children) {
                (ClusterBasis::Leaf(v), None) if v.nrows() == c.size() => {}
                (ClusterBasis::Transfer { upper, lower }, Some([a, b]))
                    if upper.nrows() == self.rank(a)
                        && lower.nrows() == self.rank(b)
                        && upper.ncols() == lower.ncols() => {}
                _ => return bad(format!("basis of cluster {} has the wrong shape", c.id)),
            }
        }
        for &(t, s, _) in &self.blocks.admissible {
            match self.couplings.get(&(t, s)) {
                Some(m) if m.shape() == (self.rank(t), self.rank(s)) => {}
                _ => return bad(format!("coupling ({t}, {s}) missing or misshaped")),
            }
        }
        for &(t, s) in &self.blocks.inadmissible {
            let shape = (self.tree.cluster(t).size(), self.tree.cluster(s).size());
            match self.dense.get(&(t, s)) {
                Some(m) if m.shape() == shape => {}
                _ => return bad(format!("dense block ({t}, {s}) missing or misshaped")),
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.tree.n()
    }

    pub fn tree(&self) -> &ClusterTree {
        &self.tree
    }

    pub fn blocks(&self) -> &BlockClusterTree {
        &self.blocks
    }

    pub fn eps_h2(&self) -> f64 {
        self.eps_h2
    }

    pub fn basis(&self, t: usize) -> &ClusterBasis {
        &self.bases[t]
    }

    pub fn rank(&self, t: usize) -> usize {
        self.bases[t].rank()
    }

    pub fn coupling(&self, t: usize, s: usize) -> Option<&CMat> {
        self.couplings.get(&(t, s))
    }

    pub fn couplings(&self) -> &BTreeMap<(usize, usize), CMat> {
        &self.couplings
    }

    pub fn dense_block(&self, t: usize, s: usize) -> Option<&CMat> {
        self.dense.get(&(t, s))
    }

    pub fn dense_blocks(&self) -> &BTreeMap<(usize, usize), CMat> {
        &self.dense
    }

    /// Largest cluster rank on each level.
    pub fn max_rank_per_level(&self) -> Vec<usize> {
        (0..=self.tree.depth())
            .map(|l| self.tree.level_ids(l).map(|t| self.rank(t)).max().unwrap_or(0))
            .collect()
    }

    /// Bytes held by bases, couplings and dense blocks.
    pub fn storage_bytes(&self) -> usize {
        let entries: usize = self.bases.iter().map(ClusterBasis::entries).sum::<usize>()
            + self.couplings.values().map(|m| m.len()).sum::<usize>()
            + self.dense.values().map(|m| m.len()).sum::<usize>();
        entries * std::mem::size_of::<C64>()
    }

    /// Explicit `#t × k_t` basis of cluster `t`, expanded through the
    /// transfer matrices.
    pub fn expanded_basis(&self, t: usize) -> CMat {
        match (&self.bases[t], self.tree.cluster(t).children) {
            (ClusterBasis::Leaf(v), _) => v.clone(),
            (ClusterBasis::Transfer { upper, lower }, Some([a, b])) => {
                stack(&(self.expanded_basis(a) * upper), &(self.expanded_basis(b) * lower))
            }
            _ => unreachable!("transfer basis on a leaf"),
        }
    }

    /// `E_t^H X` for `X` with `#t` rows, evaluated through the transfer
    /// matrices without forming `E_t`.
    fn project(&self, t: usize, x: &CMat) -> CMat {
        match (&self.bases[t], self.tree.cluster(t).children) {
            (ClusterBasis::Leaf(v), _) => v.adjoint() * x,
            (ClusterBasis::Transfer { upper, lower }, Some([a, b])) => {
                let na = self.tree.cluster(a).size();
                let xa = self.project(a, &x.rows(0, na).into_owned());
                let xb = self.project(b, &x.rows(na, x.nrows() - na).into_owned());
                upper.adjoint() * xa + lower.adjoint() * xb
            }
            _ => unreachable!("transfer basis on a leaf"),
        }
    }

    /// `V_t S_{t,s} V_s^T` as a dense matrix.
    pub fn reconstruct_block(&self, t: usize, s: usize) -> Result<CMat> {
        let sm = self.coupling(t, s).ok_or(Error::NotAdmissible(t, s))?;
        Ok(self.expanded_basis(t) * sm * self.expanded_basis(s).transpose())
    }

    /// Dense `N × N` matrix in tree ordering.
    pub fn to_dense(&self) -> CMat {
        let n = self.n();
        let mut z = CMat::zeros(n, n);
        for (&(t, s), m) in &self.dense {
            let (ct, cs) = (self.tree.cluster(t), self.tree.cluster(s));
            z.view_mut((ct.start, cs.start), m.shape()).copy_from(m);
        }
        let expanded: Vec<CMat> = (0..self.tree.clusters().len())
            .map(|t| self.expanded_basis(t))
            .collect();
        for (&(t, s), sm) in &self.couplings {
            let (ct, cs) = (self.tree.cluster(t), self.tree.cluster(s));
            let block = &expanded[t] * sm * expanded[s].transpose();
            z.view_mut((ct.start, cs.start), block.shape()).copy_from(&block);
        }
        z
    }

    /// `y = Z x` in tree ordering.
    pub fn matvec(&self, x: &CVec) -> Result<CVec> {
        let n = self.n();
        if x.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: x.len(),
            });
        }
        let nc = self.tree.clusters().len();
        let mut y = CVec::zeros(n);
        for (&(t, s), m) in &self.dense {
            let (ct, cs) = (self.tree.cluster(t), self.tree.cluster(s));
            let part = m * x.rows(cs.start, cs.size());
            let mut dst = y.rows_mut(ct.start, ct.size());
            dst += part;
        }
        // upward pass: xh_t = E_t^T x_t
        let mut xh: Vec<CVec> = vec![CVec::zeros(0); nc];
        for l in (0..=self.tree.depth()).rev() {
            for t in self.tree.level_ids(l) {
                let c = self.tree.cluster(t);
                xh[t] = match (&self.bases[t], c.children) {
                    (ClusterBasis::Leaf(v), _) => v.transpose() * x.rows(c.start, c.size()),
                    (ClusterBasis::Transfer { upper, lower }, Some([a, b])) => {
                        upper.transpose() * &xh[a] + lower.transpose() * &xh[b]
                    }
                    _ => unreachable!(),
                };
            }
        }
        let mut yh: Vec<CVec> = (0..nc).map(|t| CVec::zeros(self.rank(t))).collect();
        for (&(t, s), sm) in &self.couplings {
            yh[t] += sm * &xh[s];
        }
        // downward pass
        for l in 0..=self.tree.depth() {
            for t in self.tree.level_ids(l) {
                let c = self.tree.cluster(t);
                match (&self.bases[t], c.children) {
                    (ClusterBasis::Leaf(v), _) => {
                        let part = v * &yh[t];
                        let mut dst = y.rows_mut(c.start, c.size());
                        dst += part;
                    }
                    (ClusterBasis::Transfer { upper, lower }, Some([a, b])) => {
                        let (ua, ub) = (upper * &yh[t], lower * &yh[t]);
                        yh[a] += ua;
                        yh[b] += ub;
                    }
                    _ => unreachable!(),
                }
            }
        }
        Ok(y)
    }
}

/// Far-field row group of a cluster: the column cluster and whether the
/// rows come from the transposed block `Z(s, t)^T`.
type Group = (usize, bool);

struct Builder<'a> {
    tree: &'a ClusterTree,
    blocks: &'a BlockClusterTree,
    kernel: BoundKernel,
    symmetric: bool,
    tail_tol: f64,
    bases: Vec<ClusterBasis>,
    /// `E_t^H Z(t, s)` for admissible blocks on the cluster's own level.
    own: BTreeMap<(usize, usize), CMat>,
}

const GRAM_FLOOR: f64 = 1e-14;

impl Builder<'_> {
    fn groups(&self, t: usize) -> Vec<(Group, usize)> {
        let mut out = Vec::new();
        let mut cur = Some(t);
        while let Some(a) = cur {
            for &s in self.blocks.admissible_partners(a) {
                out.push(((s, false), self.tree.cluster(a).level));
                if !self.symmetric {
                    out.push(((s, true), self.tree.cluster(a).level));
                }
            }
            cur = self.tree.cluster(a).parent;
        }
        out
    }

    fn far_rows(&self, t: usize, g: Group) -> Result<CMat> {
        let (ct, cs) = (self.tree.cluster(t), self.tree.cluster(g.0));
        if g.1 {
            Ok(self.kernel.block(cs.range(), ct.range())?.transpose())
        } else {
            self.kernel.block(ct.range(), cs.range())
        }
    }

    /// Weighted compression of row groups: every group is scaled to unit
    /// Frobenius norm so that each one is captured to relative accuracy.
    fn compress(&self, rows: usize, groups: &[&CMat]) -> Result<CMat> {
        let mut g = CMat::zeros(rows, rows);
        for z in groups {
            let nz = z.norm();
            if nz > 0.0 {
                g += (*z * z.adjoint()) * C64::new(1.0 / (nz * nz), 0.0);
            }
        }
        // eigenvalues of G below ~1e-16 trace(G) are roundoff
        let floor = GRAM_FLOOR * g.trace().re;
        Ok(truncated_eig_psd_tail(&g, self.tail_tol.max(floor))?.u)
    }

    /// Post-order construction of the subtree under `t`. Returns
    /// `E_t^H (far rows)` for the groups inherited from strict ancestors.
    fn visit(&mut self, t: usize) -> Result<BTreeMap<Group, CMat>> {
        let cluster = self.tree.cluster(t).clone();
        let groups = self.groups(t);
        let mut projected: BTreeMap<Group, CMat> = BTreeMap::new();
        match cluster.children {
            None => {
                let rows: Vec<CMat> = groups
                    .iter()
                    .map(|&(g, _)| self.far_rows(t, g))
                    .collect::<Result<_>>()?;
                let v = self.compress(cluster.size(), &rows.iter().collect::<Vec<_>>())?;
                for ((g, _), z) in groups.iter().zip(&rows) {
                    projected.insert(*g, v.adjoint() * z);
                }
                self.bases[t] = ClusterBasis::Leaf(v);
            }
            Some([a, b]) => {
                let mut pa = self.visit(a)?;
                let mut pb = self.visit(b)?;
                let stacked: Vec<CMat> = groups
                    .iter()
                    .map(|(g, _)| {
                        stack(
                            &pa.remove(g).expect("child shares parent groups"),
                            &pb.remove(g).expect("child shares parent groups"),
                        )
                    })
                    .collect();
                let rows = self.bases[a].rank() + self.bases[b].rank();
                let tr = self.compress(rows, &stacked.iter().collect::<Vec<_>>())?;
                for ((g, _), r) in groups.iter().zip(&stacked) {
                    projected.insert(*g, tr.adjoint() * r);
                }
                let ka = self.bases[a].rank();
                self.bases[t] = ClusterBasis::Transfer {
                    upper: tr.rows(0, ka).into_owned(),
                    lower: tr.rows(ka, rows - ka).into_owned(),
                };
            }
        }
        for &((s, transposed), level) in &groups {
            if level == cluster.level {
                let p = projected.remove(&(s, transposed)).expect("group present");
                if !transposed {
                    self.own.insert((t, s), p);
                }
            }
        }
        Ok(projected)
    }
}

/// Builds an H²-matrix approximation of the kernel matrix with relative
/// block accuracy about `eps_h2`.
pub fn build_h2(
    kernel: &KernelSpec,
    tree: &ClusterTree,
    blocks: &BlockClusterTree,
    eps_h2: f64,
) -> Result<H2Matrix> {
    if !(eps_h2 > 0.0 && eps_h2.is_finite()) {
        return Err(Error::InvalidInput(format!("eps_h2 must be positive, got {eps_h2}")));
    }
    let bound = kernel.bind(tree)?;
    let mut dense = BTreeMap::new();
    for &(t, s) in &blocks.inadmissible {
        let (ct, cs) = (tree.cluster(t), tree.cluster(s));
        dense.insert((t, s), bound.block(ct.range(), cs.range())?);
    }
    let mut b = Builder {
        tree,
        blocks,
        kernel: bound,
        symmetric: kernel.is_symmetric(),
        tail_tol: eps_h2 * eps_h2,
        bases: vec![ClusterBasis::Leaf(CMat::zeros(0, 0)); tree.clusters().len()],
        own: BTreeMap::new(),
    };
    let leftover = b.visit(tree.root())?;
    debug_assert!(leftover.is_empty());
    let mut a = H2Matrix {
        tree: tree.clone(),
        blocks: blocks.clone(),
        eps_h2,
        bases: b.bases,
        couplings: BTreeMap::new(),
        dense,
    };
    // S = (E_t^H Z) conj(E_s), i.e. S^T = E_s^H (E_t^H Z)^T
    for ((t, s), p) in b.own {
        let st = a.project(s, &p.transpose());
        a.couplings.insert((t, s), st.transpose());
    }
    Ok(a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::orthonormality_error;
    use crate::fixtures;
    use crate::geometry::{build_block_tree, build_cluster_tree};
    use crate::kernel::assemble_dense;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rel(a: &CMat, b: &CMat) -> f64 {
        (a - b).norm() / b.norm()
    }

    fn rod_h2(n: usize, kernel: &KernelSpec, eps: f64) -> H2Matrix {
        let tree = build_cluster_tree(&fixtures::rod(n), 25).unwrap();
        let blocks = build_block_tree(&tree, 1.0);
        build_h2(kernel, &tree, &blocks, eps).unwrap()
    }

    fn random_vec(n: usize, seed: u64) -> CVec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        CVec::from_fn(n, |_, _| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
    }

    #[test]
    fn no_admissible_blocks_is_dense() {
        let a = rod_h2(20, &KernelSpec::laplace(), 1e-3);
        assert_eq!(a.couplings().len(), 0);
        assert_eq!(a.dense_blocks().len(), 1);
        let z = assemble_dense(&KernelSpec::laplace(), a.tree()).unwrap();
        assert_eq!(a.to_dense(), z);
    }

    #[test]
    fn rank_one_kernel_gives_rank_one_bases() {
        let f = |x: &[f64]| (0.3 * x[0]).exp() * (2.0 + x[1].cos());
        let k = KernelSpec::custom(move |x, y| C64::new(f(x) * f(y), 0.0), true);
        let a = rod_h2(400, &k, 1e-6);
        assert!(!a.couplings().is_empty());
        for &(t, s, _) in &a.blocks().admissible {
            assert_eq!(a.rank(t), 1);
            assert_eq!(a.rank(s), 1);
        }
        let z = assemble_dense(&k, a.tree()).unwrap();
        assert!(rel(&a.to_dense(), &z) <= 1e-12);
    }

    #[test]
    fn laplace_rod_accuracy() {
        let eps = 1e-3;
        let a = rod_h2(400, &KernelSpec::laplace(), eps);
        let z = assemble_dense(&KernelSpec::laplace(), a.tree()).unwrap();
        assert!(rel(&a.to_dense(), &z) <= 10.0 * eps);
        for &(t, s, _) in &a.blocks().admissible {
            let (ct, cs) = (a.tree().cluster(t), a.tree().cluster(s));
            let exact = z.view((ct.start, cs.start), (ct.size(), cs.size())).into_owned();
            assert!(rel(&a.reconstruct_block(t, s).unwrap(), &exact) <= 10.0 * eps);
        }
    }

    #[test]
    fn matvec_matches_dense() {
        let eps = 1e-3;
        for k in [KernelSpec::laplace(), KernelSpec::helmholtz(C64::new(4.0, 0.0))] {
            let a = rod_h2(400, &k, eps);
            let z = assemble_dense(&k, a.tree()).unwrap();
            let x = random_vec(400, 3);
            let exact = &z * &x;
            let y = a.matvec(&x).unwrap();
            assert!((y - &exact).norm() / exact.norm() <= 10.0 * eps);
            assert_eq!(a.matvec(&CVec::zeros(400)).unwrap(), CVec::zeros(400));
            assert!(a.matvec(&CVec::zeros(3)).is_err());
            // structured matvec and the dense reconstruction agree tightly
            let yd = a.to_dense() * &x;
            assert!((a.matvec(&x).unwrap() - &yd).norm() <= 1e-12 * yd.norm());
        }
    }

    #[test]
    fn bases_are_orthonormal_and_nested() {
        let k = KernelSpec::helmholtz(C64::new(3.0, 0.2));
        let a = rod_h2(400, &k, 1e-4);
        let zd = assemble_dense(&k, a.tree()).unwrap();
        for t in 0..a.tree().clusters().len() {
            assert!(orthonormality_error(&a.basis(t).stacked()) <= 1e-12);
            assert!(orthonormality_error(&a.expanded_basis(t)) <= 1e-12);
        }
        for (&(t, s), sm) in a.couplings() {
            let (ct, cs) = (a.tree().cluster(t), a.tree().cluster(s));
            let z = zd.view((ct.start, cs.start), (ct.size(), cs.size()));
            let direct = a.expanded_basis(t).adjoint() * z * a.expanded_basis(s).conjugate();
            assert!((direct - sm).norm() <= 1e-12 * sm.norm().max(1e-300));
        }
    }

    #[test]
    fn real_kernel_keeps_real_bases() {
        let a = rod_h2(200, &KernelSpec::laplace(), 1e-4);
        for t in 0..a.tree().clusters().len() {
            assert!(crate::dense::is_real(&a.basis(t).stacked()));
        }
    }

    #[test]
    fn identity_coupling_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = CMat::from_fn(8, 3, |_, _| C64::new(rng.random(), rng.random()));
        let v = crate::dense::orthonormalize(&m);
        let block = &v * CMat::identity(3, 3) * v.conjugate().transpose();
        assert!((block.norm() - 3f64.sqrt()).abs() < 1e-12);
    }
}
