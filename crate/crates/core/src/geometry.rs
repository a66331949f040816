//! Cluster tree and block-cluster partition.
//!
//! The cluster tree is a complete binary tree: every leaf sits at depth `L`,
//! the smallest depth for which `ceil(n / 2^L) ≤ leafsize`. Clusters are
//! numbered breadth-first, so the clusters of level `l` occupy the contiguous
//! id range `2^l − 1 .. 2^{l+1} − 1`, ordered left to right.

use std::ops::Range;

use serde::Serialize;

use crate::{Error, Result};

/// A set of points in 3-D space.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<[f64; 3]>,
}

impl PointCloud {
    /// Wraps a list of points; every coordinate must be finite.
    pub fn new(points: Vec<[f64; 3]>) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| p.iter().any(|x| !x.is_finite())) {
            return Err(Error::InvalidInput(format!("point {i} has a non-finite coordinate")));
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[f64; 3] {
        &self.points[i]
    }
}

/// Axis-aligned bounding box. An empty box has `min > max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundingBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl BoundingBox {
    pub fn empty() -> Self {
        Self {
            min: [f64::INFINITY; 3],
            max: [f64::NEG_INFINITY; 3],
        }
    }

    pub fn from_points<'a>(pts: impl IntoIterator<Item = &'a [f64; 3]>) -> Self {
        let mut b = Self::empty();
        for p in pts {
            for d in 0..3 {
                b.min[d] = b.min[d].min(p[d]);
                b.max[d] = b.max[d].max(p[d]);
            }
        }
        b
    }

    pub fn is_empty(&self) -> bool {
        (0..3).any(|d| self.min[d] > self.max[d])
    }

    /// Length of the box diagonal.
    pub fn diameter(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        (0..3)
            .map(|d| (self.max[d] - self.min[d]).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Euclidean distance between two boxes (zero when they overlap).
    /// Distance to an empty box is infinite.
    pub fn distance(&self, other: &BoundingBox) -> f64 {
        if self.is_empty() || other.is_empty() {
            return f64::INFINITY;
        }
        (0..3)
            .map(|d| {
                let gap = (other.min[d] - self.max[d]).max(self.min[d] - other.max[d]);
                gap.max(0.0).powi(2)
            })
            .sum::<f64>()
            .sqrt()
    }

    fn longest_axis(&self) -> usize {
        let ext = |d: usize| self.max[d] - self.min[d];
        (0..3).fold(0, |best, d| if ext(d) > ext(best) { d } else { best })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cluster {
    pub id: usize,
    pub level: usize,
    /// Start of the index range in tree ordering.
    pub start: usize,
    /// End (exclusive) of the index range in tree ordering.
    pub end: usize,
    pub bbox: BoundingBox,
    pub parent: Option<usize>,
    pub children: Option<[usize; 2]>,
}

impl Cluster {
    pub fn size(&self) -> usize {
        self.end - self.start
    }

    pub fn range(&self) -> Range<usize> {
        self.start..self.end
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_none()
    }
}

/// Complete binary cluster tree over a point cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterTree {
    clusters: Vec<Cluster>,
    depth: usize,
    leafsize: usize,
    /// `perm[tree_position] = original point index`.
    perm: Vec<usize>,
    points: PointCloud,
}

impl ClusterTree {
    pub fn n(&self) -> usize {
        self.perm.len()
    }

    /// Depth `L` of the tree; leaves live at level `L`, the root at 0.
    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn leafsize(&self) -> usize {
        self.leafsize
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn clusters(&self) -> &[Cluster] {
        &self.clusters
    }

    pub fn cluster(&self, id: usize) -> &Cluster {
        &self.clusters[id]
    }

    pub fn global_perm(&self) -> &[usize] {
        &self.perm
    }

    pub fn points(&self) -> &PointCloud {
        &self.points
    }

    /// Point in tree ordering.
    pub fn tree_point(&self, pos: usize) -> &[f64; 3] {
        self.points.point(self.perm[pos])
    }

    /// Cluster ids of level `l`, left to right.
    pub fn level_ids(&self, l: usize) -> Range<usize> {
        (1 << l) - 1..(1 << (l + 1)) - 1
    }

    /// Position of cluster `id` within its level.
    pub fn local_index(&self, id: usize) -> usize {
        id + 1 - (1 << self.clusters[id].level)
    }

    pub fn leaves(&self) -> Range<usize> {
        self.level_ids(self.depth)
    }

    /// True if `anc` is `id` or one of its ancestors.
    pub fn is_ancestor_or_self(&self, anc: usize, id: usize) -> bool {
        let mut cur = Some(id);
        while let Some(c) = cur {
            if c == anc {
                return true;
            }
            if self.clusters[c].level <= self.clusters[anc].level {
                return false;
            }
            cur = self.clusters[c].parent;
        }
        false
    }

    /// Reorders a vector from original point order into tree order.
    pub fn to_tree_order<T: Copy>(&self, original: &[T]) -> Vec<T> {
        self.perm.iter().map(|&i| original[i]).collect()
    }

    /// Reorders a vector from tree order back into original point order.
    pub fn to_original_order<T: Copy + Default>(&self, tree: &[T]) -> Vec<T> {
        let mut out = vec![T::default(); tree.len()];
        for (pos, &orig) in self.perm.iter().enumerate() {
            out[orig] = tree[pos];
        }
        out
    }

    /// Reassembles a tree from stored parts (used by the binary container).
    pub(crate) fn from_parts(
        clusters: Vec<Cluster>,
        depth: usize,
        leafsize: usize,
        perm: Vec<usize>,
        points: PointCloud,
    ) -> Result<Self> {
        if clusters.len() != (1 << (depth + 1)) - 1 || perm.len() != points.len() {
            return Err(Error::Format("inconsistent cluster tree".into()));
        }
        Ok(Self {
            clusters,
            depth,
            leafsize,
            perm,
            points,
        })
    }
}

/// Smallest depth with `ceil(n / 2^L) ≤ leafsize`.
fn tree_depth(n: usize, leafsize: usize) -> usize {
    let mut depth = 0;
    while n.div_ceil(1 << depth) > leafsize {
        depth += 1;
    }
    depth
}

/// Recursive bisection of a point cloud into a complete binary tree.
///
/// Each cluster is split at the median of its points along the longest axis
/// of its bounding box; ties are broken by original index so the result is
/// deterministic.
pub fn build_cluster_tree(pc: &PointCloud, leafsize: usize) -> Result<ClusterTree> {
    if pc.is_empty() {
        return Err(Error::InvalidInput("empty point cloud".into()));
    }
    if leafsize == 0 {
        return Err(Error::InvalidInput("leafsize must be at least 1".into()));
    }
    let n = pc.len();
    let depth = tree_depth(n, leafsize);
    let mut perm: Vec<usize> = (0..n).collect();
    let mut clusters = Vec::with_capacity((1 << (depth + 1)) - 1);
    let bbox_of = |perm: &[usize], r: Range<usize>| {
        BoundingBox::from_points(perm[r].iter().map(|&i| pc.point(i)))
    };
    clusters.push(Cluster {
        id: 0,
        level: 0,
        start: 0,
        end: n,
        bbox: bbox_of(&perm, 0..n),
        parent: None,
        children: None,
    });
    for level in 0..depth {
        for id in (1 << level) - 1..(1 << (level + 1)) - 1 {
            let (start, end, bbox) = {
                let c = &clusters[id];
                (c.start, c.end, c.bbox)
            };
            let axis = bbox.longest_axis();
            perm[start..end].sort_by(|&a, &b| {
                pc.point(a)[axis].total_cmp(&pc.point(b)[axis]).then(a.cmp(&b))
            });
            let mid = start + (end - start) / 2;
            let left = clusters.len();
            for (k, (s, e)) in [(start, mid), (mid, end)].into_iter().enumerate() {
                clusters.push(Cluster {
                    id: left + k,
                    level: level + 1,
                    start: s,
                    end: e,
                    bbox: bbox_of(&perm, s..e),
                    parent: Some(id),
                    children: None,
                });
            }
            clusters[id].children = Some([left, left + 1]);
        }
    }
    Ok(ClusterTree {
        clusters,
        depth,
        leafsize,
        perm,
        points: pc.clone(),
    })
}

/// `max{diam(t), diam(s)} < η · dist(t, s)` on bounding boxes.
pub fn is_admissible(t: &Cluster, s: &Cluster, eta: f64) -> bool {
    t.bbox.diameter().max(s.bbox.diameter()) < eta * t.bbox.distance(&s.bbox)
}

/// Multilevel partition of the index space into admissible and dense blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockClusterTree {
    /// Admissible blocks `(t, s, level)`.
    pub admissible: Vec<(usize, usize, usize)>,
    /// Dense leaf-level blocks `(t, s)`.
    pub inadmissible: Vec<(usize, usize)>,
    /// Inadmissible pairs per level: leaf dense blocks at the leaf level,
    /// subdivided pairs elsewhere.
    pub near: Vec<Vec<(usize, usize)>>,
    pub eta: f64,
    /// Shallowest level with an admissible block; `None` if there is none.
    pub l0: Option<usize>,
    /// Per-level maximum number of blocks formed by a single cluster.
    pub csp: Vec<usize>,
    adm_partners: Vec<Vec<usize>>,
    near_partners: Vec<Vec<usize>>,
}

impl BlockClusterTree {
    /// Column clusters forming admissible blocks with row cluster `t`.
    pub fn admissible_partners(&self, t: usize) -> &[usize] {
        &self.adm_partners[t]
    }

    /// Column clusters forming inadmissible (near) pairs with `t` at its level.
    pub fn near_partners(&self, t: usize) -> &[usize] {
        &self.near_partners[t]
    }

    pub fn is_admissible_block(&self, t: usize, s: usize) -> bool {
        self.adm_partners[t].binary_search(&s).is_ok()
    }

    pub fn is_near(&self, t: usize, s: usize) -> bool {
        self.near_partners[t].binary_search(&s).is_ok()
    }

    /// Largest `csp` over all levels.
    pub fn csp_max(&self) -> usize {
        self.csp.iter().copied().max().unwrap_or(1)
    }

    pub fn admissible_at(&self, level: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.admissible
            .iter()
            .filter(move |b| b.2 == level)
            .map(|b| (b.0, b.1))
    }

    pub(crate) fn from_lists(
        tree: &ClusterTree,
        admissible: Vec<(usize, usize, usize)>,
        near: Vec<Vec<(usize, usize)>>,
        eta: f64,
    ) -> Self {
        let nc = tree.clusters().len();
        let mut adm_partners = vec![Vec::new(); nc];
        let mut near_partners = vec![Vec::new(); nc];
        for &(t, s, _) in &admissible {
            adm_partners[t].push(s);
        }
        for pairs in &near {
            for &(t, s) in pairs {
                near_partners[t].push(s);
            }
        }
        adm_partners.iter_mut().for_each(|v| v.sort_unstable());
        near_partners.iter_mut().for_each(|v| v.sort_unstable());
        let l0 = admissible.iter().map(|b| b.2).min();
        let csp = (0..=tree.depth())
            .map(|l| {
                tree.level_ids(l)
                    .map(|t| adm_partners[t].len() + near_partners[t].len())
                    .max()
                    .unwrap_or(0)
                    .max(1)
            })
            .collect();
        let inadmissible = near.last().cloned().unwrap_or_default();
        Self {
            admissible,
            inadmissible,
            near,
            eta,
            l0,
            csp,
            adm_partners,
            near_partners,
        }
    }
}

/// Descends from the root pair: admissible pairs are recorded and not
/// refined, inadmissible pairs recurse into their four children pairs until
/// the leaf level, where they become dense blocks.
pub fn build_block_tree(tree: &ClusterTree, eta: f64) -> BlockClusterTree {
    let mut admissible = Vec::new();
    let mut near = vec![Vec::new(); tree.depth() + 1];
    let mut stack = vec![(tree.root(), tree.root())];
    while let Some((t, s)) = stack.pop() {
        let (ct, cs) = (tree.cluster(t), tree.cluster(s));
        if is_admissible(ct, cs, eta) {
            admissible.push((t, s, ct.level));
            continue;
        }
        near[ct.level].push((t, s));
        if let (Some(tc), Some(sc)) = (ct.children, cs.children) {
            for &a in tc.iter().rev() {
                for &b in sc.iter().rev() {
                    stack.push((a, b));
                }
            }
        }
    }
    admissible.sort_unstable_by_key(|&(t, s, l)| (l, t, s));
    near.iter_mut().for_each(|v| v.sort_unstable());
    BlockClusterTree::from_lists(tree, admissible, near, eta)
}

/// Summary of a tree/partition pair, exported as JSON.
#[derive(Debug, Clone, Serialize)]
pub struct TreeStats {
    pub n: usize,
    pub depth: usize,
    pub leafsize: usize,
    pub eta: f64,
    pub leaf_sizes: Vec<usize>,
    pub admissible_per_level: Vec<usize>,
    pub near_per_level: Vec<usize>,
    pub csp: Vec<usize>,
    pub l0: Option<usize>,
}

impl TreeStats {
    pub fn new(tree: &ClusterTree, blocks: &BlockClusterTree) -> Self {
        let levels = tree.depth() + 1;
        let mut admissible_per_level = vec![0; levels];
        for &(_, _, l) in &blocks.admissible {
            admissible_per_level[l] += 1;
        }
        Self {
            n: tree.n(),
            depth: tree.depth(),
            leafsize: tree.leafsize(),
            eta: blocks.eta,
            leaf_sizes: tree.leaves().map(|id| tree.cluster(id).size()).collect(),
            admissible_per_level,
            near_per_level: blocks.near.iter().map(Vec::len).collect(),
            csp: blocks.csp.clone(),
            l0: blocks.l0,
        }
    }
}
