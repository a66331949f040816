//! Level-by-level partial LU factorization of an H²-matrix.
//!
//! Starting at the leaf level, every cluster `i` goes through four steps:
//!
//! 0. Its basis is enlarged by the dominant part of the pending fill-ins on
//!    its admissible blocks (truncated at `eps_fill_in`).
//! 1. The basis is completed to a unitary `Q̃_i = [V⊥ Ṽ]`.
//! 2. Rows of cluster `i` are multiplied by `Q̃_i^H`, columns by `conj(Q̃_i)`.
//!    Admissible blocks then vanish on the first `#i − k_i` unknowns.
//! 3. Those unknowns are eliminated by a partial LU of the diagonal block.
//!    The Schur updates touch only near neighbors; updates landing on
//!    admissible blocks are kept in a fill-in ledger until the affected
//!    bases have absorbed them.
//!
//! After a level, couplings are padded and receive the projected fill-ins,
//! the retained unknowns of sibling clusters are merged into their parent,
//! and the next level is processed the same way. The remaining unknowns
//! are factored densely.
//!
//! Unknowns are never moved physically: every cluster keeps the list of
//! global (tree-order) positions of its active unknowns, which is all the
//! solver needs to replay the factorization.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dense::{
    orthonormality_error, orthonormalize, partial_lu, right_upper_solve_mat, truncated_svd,
    unit_lower_solve_mat, unitary_completion, PivotedLu, PIVOT_TOL,
};
use crate::h2::{ClusterBasis, H2Matrix};
use crate::{CMat, Error, Result, C64};

const BYTES: usize = std::mem::size_of::<C64>();

#[derive(Debug, Clone, PartialEq)]
pub struct FactorOptions {
    /// Truncation accuracy of the fill-in driven basis updates.
    pub eps_fill_in: f64,
    /// Last level processed by the hierarchical elimination; everything left
    /// above it is factored densely. Defaults to the shallowest level with
    /// admissible blocks. `depth + 1` gives a plain dense factorization.
    pub stop_level: Option<usize>,
    /// Relative pivot threshold of the unpivoted partial LU.
    pub pivot_tol: f64,
    /// Measure unitarity, orthonormality and zero-structure errors while
    /// factoring (costs one extra product per cluster).
    pub check_invariants: bool,
}

impl FactorOptions {
    pub fn new(eps_fill_in: f64) -> Self {
        Self {
            eps_fill_in,
            stop_level: None,
            pivot_tol: PIVOT_TOL,
            check_invariants: true,
        }
    }

    pub fn with_stop_level(mut self, level: Option<usize>) -> Self {
        self.stop_level = level;
        self
    }

    pub fn with_pivot_tol(mut self, tol: f64) -> Self {
        self.pivot_tol = tol;
        self
    }

    pub fn with_checks(mut self, on: bool) -> Self {
        self.check_invariants = on;
        self
    }
}

impl Default for FactorOptions {
    fn default() -> Self {
        Self::new(1e-5)
    }
}

/// Off-diagonal factor block of one elimination against neighbor `cluster`,
/// acting on that neighbor's active unknowns from `offset` on.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub cluster: usize,
    pub offset: usize,
    pub mat: CMat,
}

/// Everything produced by eliminating one cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct EliminationRecord {
    pub cluster: usize,
    pub level: usize,
    /// `[V⊥ Ṽ]`, applied as `Q̃^H` to rows.
    pub qt: CMat,
    /// Number of unknowns eliminated (the leading ones after the transform).
    pub eliminated: usize,
    /// Unit-lower factor of the eliminated diagonal block.
    pub l: CMat,
    /// Upper factor of the eliminated diagonal block.
    pub u: CMat,
    /// `Z_{j,i'} U^{-1}` for each near neighbor `j`.
    pub lower: Vec<Panel>,
    /// `L^{-1} Z_{i',j}` for each near neighbor `j`.
    pub upper: Vec<Panel>,
}

impl EliminationRecord {
    fn bytes(&self) -> usize {
        let panels: usize = self.lower.iter().chain(&self.upper).map(|p| p.mat.len()).sum();
        (self.qt.len() + self.l.len() + self.u.len() + panels) * BYTES
    }
}

/// Reordering realized at the end of a level: first the unknowns eliminated
/// on that level, then the retained ones grouped by parent cluster.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PermutationRecord {
    pub level: usize,
    pub perm: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelFactors {
    pub level: usize,
    /// Active global positions of every cluster on the level (by local
    /// index), as they were when the level was processed.
    pub positions: Vec<Vec<usize>>,
    pub records: Vec<EliminationRecord>,
    pub permutation: PermutationRecord,
}

impl LevelFactors {
    pub(crate) fn first_id(&self) -> usize {
        (1 << self.level) - 1
    }

    /// Positions of cluster `id` on this level.
    pub fn cluster_positions(&self, id: usize) -> &[usize] {
        &self.positions[id - self.first_id()]
    }
}

/// Per-level statistics of a factorization.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LevelDiagnostics {
    pub level: usize,
    pub rank_before: Vec<usize>,
    pub rank_after: Vec<usize>,
    pub active_before: usize,
    pub eliminated: usize,
    pub fill_in_targets: usize,
    pub max_targets_per_elimination: usize,
    pub csp: usize,
    pub admissible_blocks: usize,
    /// Largest number of ledger entries held at once.
    pub ledger_peak: usize,
    /// Peak count of entries keyed by an admissible block of this level.
    pub ledger_admissible_peak: usize,
    /// Peak count of entries for pairs covered by an ancestor's admissible
    /// block.
    pub ledger_virtual_peak: usize,
    pub max_unitarity_error: f64,
    pub max_orthonormality_error: f64,
    pub max_zero_structure: f64,
    pub working_bytes: usize,
    pub chain_bytes: usize,
}

/// The factored form `Z ≈ 𝓛 𝓤`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorChain {
    pub n: usize,
    pub depth: usize,
    /// Last level processed hierarchically (`depth + 1` if none).
    pub stop_level: usize,
    pub eps_fill_in: f64,
    /// Levels in elimination order, leaf level first.
    pub levels: Vec<LevelFactors>,
    /// Global positions of the unknowns left for the dense factorization.
    pub root_positions: Vec<usize>,
    pub root: PivotedLu,
    pub diagnostics: Vec<LevelDiagnostics>,
    /// Largest working storage (blocks, ledger, bases) held at any time.
    pub peak_working_bytes: usize,
}

impl FactorChain {
    /// Bytes held by the factors themselves.
    pub fn chain_bytes(&self) -> usize {
        let recs: usize = self.levels.iter().flat_map(|l| &l.records).map(|r| r.bytes()).sum();
        recs + self.root.packed.len() * BYTES
    }

    /// Total memory of the factorization: stored factors plus peak working
    /// storage.
    pub fn memory_bytes(&self) -> usize {
        self.chain_bytes() + self.peak_working_bytes
    }

    pub fn ledger_nonempty(&self) -> bool {
        self.diagnostics.iter().any(|d| d.ledger_peak > 0)
    }
}

#[derive(Debug, Clone)]
struct Active {
    n: usize,
    pos: Vec<usize>,
    basis: CMat,
    /// Rank of the input H²-matrix basis on this cluster.
    k0: usize,
    qt: Option<CMat>,
    e: usize,
}

/// Step-by-step driver of the factorization. [`factorize`] runs it to
/// completion; the individual steps are public for verification.
#[derive(Debug)]
pub struct Factorizer<'a> {
    a: &'a H2Matrix,
    opts: FactorOptions,
    level: usize,
    act: Vec<Active>,
    near: BTreeMap<(usize, usize), CMat>,
    coupling: BTreeMap<(usize, usize), CMat>,
    ledger: BTreeMap<(usize, usize), CMat>,
    records: Vec<EliminationRecord>,
    eliminated_positions: Vec<Vec<usize>>,
    positions_at_start: Vec<Vec<usize>>,
    levels: Vec<LevelFactors>,
    diag: Vec<LevelDiagnostics>,
    cur: LevelDiagnostics,
    chain_bytes: usize,
    peak_working: usize,
}

impl<'a> Factorizer<'a> {
    pub fn new(a: &'a H2Matrix, opts: FactorOptions) -> Result<Self> {
        if !(opts.eps_fill_in > 0.0 && opts.eps_fill_in.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "eps_fill_in must be positive, got {}",
                opts.eps_fill_in
            )));
        }
        let tree = a.tree();
        let depth = tree.depth();
        let act = tree
            .leaves()
            .map(|id| {
                let c = tree.cluster(id);
                let v = match a.basis(id) {
                    ClusterBasis::Leaf(v) => v.clone(),
                    ClusterBasis::Transfer { .. } => unreachable!("leaf with transfer basis"),
                };
                Active {
                    n: c.size(),
                    pos: c.range().collect(),
                    k0: v.ncols(),
                    basis: v,
                    qt: None,
                    e: 0,
                }
            })
            .collect();
        let near = a.dense_blocks().clone();
        let coupling = a
            .blocks()
            .admissible_at(depth)
            .map(|(t, s)| ((t, s), a.coupling(t, s).expect("coupling present").clone()))
            .collect();
        let mut f = Self {
            a,
            opts,
            level: depth,
            act,
            near,
            coupling,
            ledger: BTreeMap::new(),
            records: Vec::new(),
            eliminated_positions: Vec::new(),
            positions_at_start: Vec::new(),
            levels: Vec::new(),
            diag: Vec::new(),
            cur: LevelDiagnostics::default(),
            chain_bytes: 0,
            peak_working: 0,
        };
        f.begin_level();
        Ok(f)
    }

    /// Level whose clusters are currently active.
    pub fn level(&self) -> usize {
        self.level
    }

    /// Cluster ids of the active level.
    pub fn clusters(&self) -> std::ops::Range<usize> {
        self.a.tree().level_ids(self.level)
    }

    fn loc(&self, id: usize) -> usize {
        id + 1 - (1 << self.level)
    }

    fn active(&self, id: usize) -> &Active {
        &self.act[self.loc(id)]
    }

    /// Active global positions of cluster `id`.
    pub fn positions(&self, id: usize) -> &[usize] {
        &self.active(id).pos
    }

    /// Current basis of cluster `id` in its active coordinates.
    pub fn basis(&self, id: usize) -> &CMat {
        &self.active(id).basis
    }

    /// Number of pending ledger entries.
    pub fn ledger_len(&self) -> usize {
        self.ledger.len()
    }

    fn begin_level(&mut self) {
        let blocks = self.a.blocks();
        self.cur = LevelDiagnostics {
            level: self.level,
            rank_before: self.act.iter().map(|a| a.k0).collect(),
            active_before: self.act.iter().map(|a| a.n).sum(),
            csp: blocks.csp[self.level],
            admissible_blocks: self.coupling.len(),
            ..LevelDiagnostics::default()
        };
        self.positions_at_start = self.act.iter().map(|a| a.pos.clone()).collect();
        self.note_working();
    }

    fn working_bytes(&self) -> usize {
        let maps: usize = self
            .near
            .values()
            .chain(self.coupling.values())
            .chain(self.ledger.values())
            .map(|m| m.len())
            .sum();
        let bases: usize = self.act.iter().map(|a| a.basis.len()).sum();
        (maps + bases) * BYTES
    }

    fn note_working(&mut self) {
        let w = self.working_bytes();
        self.peak_working = self.peak_working.max(w);
        self.cur.working_bytes = self.cur.working_bytes.max(w);
        let virt = self
            .ledger
            .keys()
            .filter(|k| !self.coupling.contains_key(k))
            .count();
        self.cur.ledger_peak = self.cur.ledger_peak.max(self.ledger.len());
        self.cur.ledger_virtual_peak = self.cur.ledger_virtual_peak.max(virt);
        self.cur.ledger_admissible_peak =
            self.cur.ledger_admissible_peak.max(self.ledger.len() - virt);
    }

    /// Step 0: enlarges the basis of `c` so that it captures the pending
    /// fill-ins of its admissible blocks, as rows (`F`) and as columns
    /// (`F^T`). Returns the number of added basis vectors.
    pub fn step0_update_basis(&mut self, c: usize) -> Result<usize> {
        let li = self.loc(c);
        let n = self.act[li].n;
        let parts: Vec<CMat> = self
            .ledger
            .iter()
            .filter_map(|(&(i, j), f)| {
                if i == c {
                    Some(f.clone())
                } else if j == c {
                    Some(f.transpose())
                } else {
                    None
                }
            })
            .collect();
        let cols: usize = parts.iter().map(|p| p.ncols()).sum();
        let mut added = 0;
        if cols > 0 {
            let mut k = CMat::zeros(n, cols);
            let mut at = 0;
            for p in &parts {
                k.columns_mut(at, p.ncols()).copy_from(p);
                at += p.ncols();
            }
            let knorm = k.norm();
            let v = &self.act[li].basis;
            if knorm > 0.0 && v.ncols() < n {
                let pk = &k - v * (v.adjoint() * &k);
                let svd = truncated_svd(&pk, self.opts.eps_fill_in * knorm)?;
                let r = svd.rank.min(n - v.ncols());
                if r > 0 {
                    let mut add = svd.u.columns(0, r).into_owned();
                    add -= v * (v.adjoint() * &add);
                    let add = orthonormalize(&add);
                    let mut nb = CMat::zeros(n, v.ncols() + r);
                    nb.columns_mut(0, v.ncols()).copy_from(v);
                    nb.columns_mut(v.ncols(), r).copy_from(&add);
                    self.act[li].basis = nb;
                    added = r;
                }
            }
        }
        if self.opts.check_invariants {
            let err = orthonormality_error(&self.act[li].basis);
            self.cur.max_orthonormality_error = self.cur.max_orthonormality_error.max(err);
        }
        Ok(added)
    }

    /// Step 1: `Q̃ = [V⊥ Ṽ]`.
    pub fn step1_projection(&self, c: usize) -> Result<CMat> {
        let v = &self.active(c).basis;
        let perp = unitary_completion(v)?;
        let n = v.nrows();
        let mut q = CMat::zeros(n, n);
        q.columns_mut(0, perp.ncols()).copy_from(&perp);
        q.columns_mut(perp.ncols(), v.ncols()).copy_from(v);
        Ok(q)
    }

    /// Step 2: applies `Q̃^H` to the rows and `conj(Q̃)` to the columns of
    /// cluster `c` in every near block and ledger entry. Couplings are left
    /// alone; in the new coordinates their first `#c − k̃_c` rows are zero.
    pub fn step2_apply_projection(&mut self, c: usize, q: &CMat) {
        let li = self.loc(c);
        let n = self.act[li].n;
        assert_eq!(q.shape(), (n, n), "projection size");
        let qh = q.adjoint();
        let qc = q.conjugate();
        let e = n - self.act[li].basis.ncols();
        for &j in self.a.blocks().near_partners(c) {
            let m = self.near.get_mut(&(c, j)).expect("near block");
            *m = &qh * &*m;
            let m = self.near.get_mut(&(j, c)).expect("near block");
            *m = &*m * &qc;
        }
        for (&(i, j), f) in self.ledger.iter_mut() {
            if i == c {
                *f = &qh * &*f;
                f.rows_mut(0, e).fill(C64::new(0.0, 0.0));
            }
            if j == c {
                *f = &*f * &qc;
                f.columns_mut(0, e).fill(C64::new(0.0, 0.0));
            }
        }
        if self.opts.check_invariants {
            let err = (&qh * q - CMat::identity(n, n)).norm();
            self.cur.max_unitarity_error = self.cur.max_unitarity_error.max(err);
            let k0 = self.act[li].k0;
            let head = (&qh * self.act[li].basis.columns(0, k0)).rows(0, e).into_owned();
            for (&(i, j), s) in &self.coupling {
                let sn = s.norm();
                if sn == 0.0 {
                    continue;
                }
                let ratio = if i == c {
                    (&head * s).norm() / sn
                } else if j == c {
                    (s * head.transpose()).norm() / sn
                } else {
                    continue;
                };
                self.cur.max_zero_structure = self.cur.max_zero_structure.max(ratio);
            }
        }
        let act = &mut self.act[li];
        act.qt = Some(q.clone());
        act.e = e;
    }

    fn offset(&self, j: usize) -> usize {
        let a = self.active(j);
        if a.qt.is_some() {
            a.e
        } else {
            0
        }
    }

    /// Step 3: partial LU of the leading `#c − k̃_c` unknowns of `c` and
    /// Schur updates of its near neighbors.
    pub fn step3_partial_eliminate(&mut self, c: usize) -> Result<EliminationRecord> {
        let li = self.loc(c);
        let (n, e) = (self.act[li].n, self.act[li].e);
        let q = self.act[li].qt.clone().expect("step2 precedes step3");
        let level = self.level;
        let mut rec = EliminationRecord {
            cluster: c,
            level,
            qt: q,
            eliminated: e,
            l: CMat::zeros(0, 0),
            u: CMat::zeros(0, 0),
            lower: Vec::new(),
            upper: Vec::new(),
        };
        if e > 0 {
            let d = self.near[&(c, c)].view((0, 0), (e, e)).into_owned();
            let (l, u) = partial_lu(&d, self.opts.pivot_tol).map_err(|x| x.with_context(c, level))?;
            let nbrs = self.a.blocks().near_partners(c).to_vec();
            for &j in &nbrs {
                let r = self.offset(j);
                let nj = self.active(j).n;
                let zjc = self.near[&(j, c)].view((r, 0), (nj - r, e)).into_owned();
                let zcj = self.near[&(c, j)].view((0, r), (e, nj - r)).into_owned();
                rec.lower.push(Panel {
                    cluster: j,
                    offset: r,
                    mat: right_upper_solve_mat(&zjc, &u),
                });
                rec.upper.push(Panel {
                    cluster: j,
                    offset: r,
                    mat: unit_lower_solve_mat(&l, &zcj),
                });
            }
            let mut targets = 0;
            for pj in &rec.lower {
                for pk in &rec.upper {
                    if pj.mat.nrows() == 0 || pk.mat.ncols() == 0 {
                        continue;
                    }
                    targets += 1;
                    let delta = -(&pj.mat * &pk.mat);
                    let key = (pj.cluster, pk.cluster);
                    let blk = match self.near.get_mut(&key) {
                        Some(b) => b,
                        None => {
                            let shape = (self.active(key.0).n, self.active(key.1).n);
                            self.ledger
                                .entry(key)
                                .or_insert_with(|| CMat::zeros(shape.0, shape.1))
                        }
                    };
                    let mut v = blk.view_mut((pj.offset, pk.offset), delta.shape());
                    v += delta;
                }
            }
            self.cur.fill_in_targets += targets;
            self.cur.max_targets_per_elimination = self.cur.max_targets_per_elimination.max(targets);
            for &j in &nbrs {
                self.near.get_mut(&(c, j)).unwrap().rows_mut(0, e).fill(C64::new(0.0, 0.0));
                self.near.get_mut(&(j, c)).unwrap().columns_mut(0, e).fill(C64::new(0.0, 0.0));
            }
            self.near
                .get_mut(&(c, c))
                .unwrap()
                .view_mut((0, 0), (e, e))
                .fill_with_identity();
            rec.l = l;
            rec.u = u;
        }
        debug_assert_eq!(n, self.act[li].n);
        self.eliminated_positions.push(self.act[li].pos[..e].to_vec());
        self.cur.eliminated += e;
        self.chain_bytes += rec.bytes();
        self.records.push(rec.clone());
        self.note_working();
        Ok(rec)
    }

    /// Runs steps 0 to 3 on one cluster.
    pub fn eliminate(&mut self, c: usize) -> Result<()> {
        self.step0_update_basis(c)?;
        let q = self.step1_projection(c)?;
        self.step2_apply_projection(c, &q);
        self.step3_partial_eliminate(c)?;
        Ok(())
    }

    /// Pads every coupling of the level to the updated ranks and adds the
    /// retained part of its ledger entry. Ledger entries of pairs covered by
    /// an ancestor block are cut down to their retained part.
    pub fn finish_level(&mut self) {
        let keys: Vec<_> = self.coupling.keys().copied().collect();
        for key in keys {
            let (ai, aj) = (self.active(key.0), self.active(key.1));
            let (ki, kj) = (ai.n - ai.e, aj.n - aj.e);
            let (ei, ej) = (ai.e, aj.e);
            let s = &self.coupling[&key];
            let mut st = CMat::zeros(ki, kj);
            st.view_mut((0, 0), s.shape()).copy_from(s);
            if let Some(f) = self.ledger.remove(&key) {
                st += f.view((ei, ej), (ki, kj));
            }
            self.coupling.insert(key, st);
        }
        let keys: Vec<_> = self.ledger.keys().copied().collect();
        for key in keys {
            let (ei, ej) = (self.active(key.0).e, self.active(key.1).e);
            let f = self.ledger.remove(&key).unwrap();
            let (r, c) = (f.nrows() - ei, f.ncols() - ej);
            self.ledger.insert(key, f.view((ei, ej), (r, c)).into_owned());
        }
        self.note_working();
    }

    /// Merges the retained unknowns of sibling clusters into their parent
    /// and moves to the parent level.
    pub fn merge_permute(&mut self) -> PermutationRecord {
        let tree = self.a.tree();
        let blocks = self.a.blocks();
        let level = self.level;
        assert!(level > 0, "cannot merge above the root");
        self.cur.rank_after = self.act.iter().map(|a| a.basis.ncols()).collect();
        let retained = |a: &Active| a.pos[a.e..].to_vec();
        let mut perm: Vec<usize> = self.eliminated_positions.concat();
        let parents = tree.level_ids(level - 1);
        let mut new_act = Vec::with_capacity(parents.len());
        for p in parents.clone() {
            let [c1, c2] = tree.cluster(p).children.expect("non-leaf parent");
            let (a1, a2) = (self.active(c1), self.active(c2));
            let (k1, k2) = (a1.n - a1.e, a2.n - a2.e);
            let (upper, lower) = match self.a.basis(p) {
                ClusterBasis::Transfer { upper, lower } => (upper, lower),
                ClusterBasis::Leaf(_) => unreachable!("parent with leaf basis"),
            };
            let kp = upper.ncols();
            let mut basis = CMat::zeros(k1 + k2, kp);
            basis.view_mut((0, 0), upper.shape()).copy_from(upper);
            basis.view_mut((k1, 0), lower.shape()).copy_from(lower);
            let mut pos = retained(a1);
            pos.extend(retained(a2));
            perm.extend_from_slice(&pos);
            new_act.push(Active {
                n: k1 + k2,
                pos,
                basis,
                k0: kp,
                qt: None,
                e: 0,
            });
        }
        let child_block = |f: &Self, a: usize, b: usize| -> CMat {
            if let Some(m) = f.near.get(&(a, b)) {
                let (ea, eb) = (f.active(a).e, f.active(b).e);
                m.view((ea, eb), (m.nrows() - ea, m.ncols() - eb)).into_owned()
            } else {
                f.coupling[&(a, b)].clone()
            }
        };
        let mut near = BTreeMap::new();
        for &(p, q) in &blocks.near[level - 1] {
            let [p1, p2] = tree.cluster(p).children.unwrap();
            let [q1, q2] = tree.cluster(q).children.unwrap();
            let np = &new_act[p - parents.start];
            let nq = &new_act[q - parents.start];
            let mut m = CMat::zeros(np.n, nq.n);
            let (r1, c1) = (self.active(p1).n - self.active(p1).e, self.active(q1).n - self.active(q1).e);
            for (a, ro) in [(p1, 0), (p2, r1)] {
                for (b, co) in [(q1, 0), (q2, c1)] {
                    let blk = child_block(self, a, b);
                    m.view_mut((ro, co), blk.shape()).copy_from(&blk);
                }
            }
            near.insert((p, q), m);
        }
        let coupling: BTreeMap<_, _> = blocks
            .admissible_at(level - 1)
            .map(|(t, s)| ((t, s), self.a.coupling(t, s).expect("coupling present").clone()))
            .collect();
        let mut ledger: BTreeMap<(usize, usize), CMat> = BTreeMap::new();
        for (&(a, b), f) in &self.ledger {
            let (pa, pb) = (tree.cluster(a).parent.unwrap(), tree.cluster(b).parent.unwrap());
            let first = |x: usize, px: usize| tree.cluster(px).children.unwrap()[0] == x;
            let ro = if first(a, pa) { 0 } else { self.retained_of_first(pa) };
            let co = if first(b, pb) { 0 } else { self.retained_of_first(pb) };
            let (np, nq) = (new_act[pa - parents.start].n, new_act[pb - parents.start].n);
            let entry = ledger.entry((pa, pb)).or_insert_with(|| CMat::zeros(np, nq));
            let mut v = entry.view_mut((ro, co), f.shape());
            v += f;
        }
        let record = PermutationRecord { level, perm };
        self.levels.push(LevelFactors {
            level,
            positions: std::mem::take(&mut self.positions_at_start),
            records: std::mem::take(&mut self.records),
            permutation: record.clone(),
        });
        self.cur.chain_bytes = self.chain_bytes;
        self.diag.push(std::mem::take(&mut self.cur));
        self.eliminated_positions.clear();
        self.act = new_act;
        self.near = near;
        self.coupling = coupling;
        self.ledger = ledger;
        self.level = level - 1;
        self.begin_level();
        record
    }

    fn retained_of_first(&self, parent: usize) -> usize {
        let c1 = self.a.tree().cluster(parent).children.unwrap()[0];
        let a = self.active(c1);
        a.n - a.e
    }

    /// Basis of `i` restricted to its first `k` columns, in the current
    /// coordinates of `i`.
    fn coords(&self, i: usize, k: usize) -> CMat {
        let a = self.active(i);
        let b = a.basis.columns(0, k);
        match &a.qt {
            Some(q) => q.adjoint() * b,
            None => b.into_owned(),
        }
    }

    /// Rows of the expanded basis of ancestor `anc` belonging to `i`.
    fn lifted(&self, i: usize, anc: usize) -> CMat {
        let tree = self.a.tree();
        let mut u = self.coords(i, self.active(i).k0);
        let mut x = i;
        while x != anc {
            let p = tree.cluster(x).parent.expect("ancestor above");
            let t = match self.a.basis(p) {
                ClusterBasis::Transfer { upper, lower } => {
                    if tree.cluster(p).children.unwrap()[0] == x {
                        upper
                    } else {
                        lower
                    }
                }
                ClusterBasis::Leaf(_) => unreachable!(),
            };
            u = u * t;
            x = p;
        }
        u
    }

    /// Current value of the block between active clusters `i` and `j`.
    pub fn active_block(&self, i: usize, j: usize) -> CMat {
        let mut m = if let Some(m) = self.near.get(&(i, j)) {
            m.clone()
        } else if let Some(s) = self.coupling.get(&(i, j)) {
            self.coords(i, s.nrows()) * s * self.coords(j, s.ncols()).transpose()
        } else {
            let tree = self.a.tree();
            let (mut a, mut b) = (i, j);
            let s = loop {
                a = tree.cluster(a).parent.expect("pair covered by the partition");
                b = tree.cluster(b).parent.expect("pair covered by the partition");
                if let Some(s) = self.a.coupling(a, b) {
                    break s;
                }
            };
            self.lifted(i, a) * s * self.lifted(j, b).transpose()
        };
        if let Some(f) = self.ledger.get(&(i, j)) {
            m += f;
        }
        m
    }

    /// Dense `N × N` image of the working state: the active unknowns carry
    /// the current blocks, eliminated unknowns are identity rows/columns.
    /// Only meant for small verification problems.
    pub fn materialize(&self) -> CMat {
        let n = self.a.n();
        let mut z = CMat::identity(n, n);
        let mut active = vec![false; n];
        for a in &self.act {
            for &p in &a.pos {
                active[p] = true;
            }
        }
        for (p, &on) in active.iter().enumerate() {
            if on {
                z[(p, p)] = C64::new(0.0, 0.0);
            }
        }
        for i in self.clusters() {
            for j in self.clusters() {
                let blk = self.active_block(i, j);
                let (pi, pj) = (self.positions(i), self.positions(j));
                for (r, &gr) in pi.iter().enumerate() {
                    for (c, &gc) in pj.iter().enumerate() {
                        z[(gr, gc)] = blk[(r, c)];
                    }
                }
            }
        }
        z
    }

    /// Dense factorization of the remaining active unknowns.
    pub fn finish(mut self, stop_level: usize) -> Result<FactorChain> {
        let ids = self.clusters();
        let mut offsets = Vec::new();
        let mut total = 0;
        for i in ids.clone() {
            offsets.push(total);
            total += self.active(i).n;
        }
        let mut m = CMat::zeros(total, total);
        for (a, i) in ids.clone().enumerate() {
            for (b, j) in ids.clone().enumerate() {
                if self.active(i).n == 0 || self.active(j).n == 0 {
                    continue;
                }
                let blk = self.active_block(i, j);
                m.view_mut((offsets[a], offsets[b]), blk.shape()).copy_from(&blk);
            }
        }
        let root = PivotedLu::factor(&m).map_err(|e| match e {
            Error::SingularPivot { index, pivot, .. } => Error::SingularPivot {
                index,
                pivot,
                cluster: None,
                level: Some(self.level),
            },
            other => other,
        })?;
        self.note_working();
        let root_positions = self.act.iter().flat_map(|a| a.pos.iter().copied()).collect();
        Ok(FactorChain {
            n: self.a.n(),
            depth: self.a.tree().depth(),
            stop_level,
            eps_fill_in: self.opts.eps_fill_in,
            levels: self.levels,
            root_positions,
            root,
            diagnostics: self.diag,
            peak_working_bytes: self.peak_working,
        })
    }

    /// Eliminated unknowns on the level so far.
    pub fn eliminated_on_level(&self) -> usize {
        self.cur.eliminated
    }

    pub fn active_unknowns(&self) -> usize {
        self.act.iter().map(|a| a.n).sum()
    }
}

/// Resolves the stop level: default `l0`, overrides clamped to
/// `[l0, depth + 1]`; no admissible blocks means a dense factorization.
pub fn effective_stop_level(a: &H2Matrix, requested: Option<usize>) -> usize {
    let depth = a.tree().depth();
    match a.blocks().l0 {
        None => depth + 1,
        Some(l0) => requested.unwrap_or(l0).clamp(l0, depth + 1),
    }
}

/// Factors `a` into `𝓛 𝓤`.
pub fn factorize(a: &H2Matrix, opts: &FactorOptions) -> Result<FactorChain> {
    let stop = effective_stop_level(a, opts.stop_level);
    let mut f = Factorizer::new(a, opts.clone())?;
    let mut last = a.tree().depth() + 1;
    while f.level() >= stop && f.level() > 0 {
        for c in f.clusters() {
            f.eliminate(c)?;
        }
        last = f.level();
        let nothing = f.eliminated_on_level() == 0;
        f.finish_level();
        f.merge_permute();
        if nothing || f.active_unknowns() == 0 {
            break;
        }
    }
    f.finish(last)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::geometry::{build_block_tree, build_cluster_tree};
    use crate::h2::build_h2;
    use crate::kernel::KernelSpec;

    fn rod_h2(n: usize) -> H2Matrix {
        let tree = build_cluster_tree(&fixtures::rod(n), 25).unwrap();
        let blocks = build_block_tree(&tree, 1.0);
        build_h2(&KernelSpec::laplace(), &tree, &blocks, 1e-6).unwrap()
    }

    #[test]
    fn stop_level_resolution() {
        let a = rod_h2(400);
        let l0 = a.blocks().l0.unwrap();
        let depth = a.tree().depth();
        assert_eq!(effective_stop_level(&a, None), l0);
        assert_eq!(effective_stop_level(&a, Some(0)), l0);
        assert_eq!(effective_stop_level(&a, Some(depth + 5)), depth + 1);
        let small = rod_h2(20);
        assert_eq!(effective_stop_level(&small, None), 1);
    }

    #[test]
    fn no_fill_in_keeps_basis() {
        let a = rod_h2(200);
        let mut f = Factorizer::new(&a, FactorOptions::new(1e-8)).unwrap();
        let c = f.clusters().start;
        let before = f.basis(c).clone();
        assert_eq!(f.step0_update_basis(c).unwrap(), 0);
        assert_eq!(f.basis(c), &before);
    }

    #[test]
    fn projection_structure() {
        let a = rod_h2(200);
        let f = Factorizer::new(&a, FactorOptions::new(1e-8)).unwrap();
        let c = f.clusters().start + 1;
        let q = f.step1_projection(c).unwrap();
        let v = f.basis(c);
        let (n, k) = v.shape();
        let qhv = q.adjoint() * v;
        assert!(qhv.rows(0, n - k).norm() <= 1e-12);
        assert!((qhv.rows(n - k, k) - CMat::identity(k, k)).norm() <= 1e-12);
        let vtq = v.transpose() * q.conjugate();
        assert!(vtq.columns(0, n - k).norm() <= 1e-12);
    }

    #[test]
    fn step2_preserves_diagonal_norm() {
        let a = rod_h2(200);
        let mut f = Factorizer::new(&a, FactorOptions::new(1e-8)).unwrap();
        let c = f.clusters().start;
        let before = f.active_block(c, c).norm();
        let q = f.step1_projection(c).unwrap();
        f.step2_apply_projection(c, &q);
        assert!((f.active_block(c, c).norm() - before).abs() <= 1e-12 * before);
    }

    #[test]
    fn invalid_eps_rejected() {
        let a = rod_h2(50);
        assert!(factorize(&a, &FactorOptions::new(0.0)).is_err());
    }

    #[test]
    fn fill_in_in_range_adds_nothing_and_orthogonal_part_is_captured() {
        let a = rod_h2(400);
        let mut f = Factorizer::new(&a, FactorOptions::new(1e-8)).unwrap();
        let ids: Vec<usize> = f.clusters().collect();
        let (c, j) = a
            .blocks()
            .admissible_at(a.tree().depth())
            .find(|&(t, _)| t == ids[0])
            .expect("leaf with an admissible partner");
        let v = f.basis(c).clone();
        let nj = f.positions(j).len();
        let coeff = CMat::from_fn(v.ncols(), nj, |r, s| C64::new((r + 2 * s) as f64 * 0.1, 0.0));
        f.ledger.insert((c, j), &v * &coeff);
        assert_eq!(f.step0_update_basis(c).unwrap(), 0);

        let n = v.nrows();
        let w = unitary_completion(&v).unwrap().column(0).into_owned();
        assert!(n > v.ncols());
        let b = CMat::from_fn(1, nj, |_, s| C64::new(1.0 + s as f64, 0.0));
        let fmat = &v * &coeff + &w * &b;
        f.ledger.insert((c, j), fmat.clone());
        assert_eq!(f.step0_update_basis(c).unwrap(), 1);
        let vt = f.basis(c);
        let resid = &fmat - vt * (vt.adjoint() * &fmat);
        assert!(resid.norm() <= 1e-6 * fmat.norm());
        assert!(orthonormality_error(vt) <= 1e-12);
    }
}
