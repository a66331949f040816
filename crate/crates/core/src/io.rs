//! File formats.
//!
//! * Points: CSV with one `x,y,z` row per point (an optional header row is
//!   skipped), or raw little-endian `f64` triples.
//! * Vectors: CSV with `re,im` rows, or raw little-endian `f64` pairs.
//! * H²-matrix container (`H2MX`) and factor chain container (`H2FC`):
//!   little-endian binary, sizes as `u64`, reals as `f64`, complex matrices
//!   as `rows, cols` followed by column-major `(re, im)` pairs.
//!
//! `H2MX` layout: magic, version, header (`N, L, leafsize, eta, eps_h2`),
//! points in original order, the tree permutation, cluster records, the
//! per-cluster rank table, bases, admissible blocks with couplings, near
//! pairs per level, dense blocks.
//!
//! `H2FC` layout: magic, version, header (`N, L, stop_level, eps_fill_in,
//! peak_working_bytes`), levels (positions, elimination records,
//! permutation), root positions, root LU, diagnostics as JSON text.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use serde::Serialize;

use crate::dense::PivotedLu;
use crate::factor::{EliminationRecord, FactorChain, LevelFactors, Panel, PermutationRecord};
use crate::geometry::{BlockClusterTree, BoundingBox, Cluster, ClusterTree, PointCloud};
use crate::h2::{ClusterBasis, H2Matrix};
use crate::{CMat, CVec, Error, Result, C64};

const H2_MAGIC: &[u8; 4] = b"H2MX";
const CHAIN_MAGIC: &[u8; 4] = b"H2FC";
const VERSION: u32 = 1;
const NONE: u64 = u64::MAX;

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

struct Enc<W: Write>(W);

impl<W: Write> Enc<W> {
    fn u64(&mut self, v: u64) -> Result<()> {
        Ok(self.0.write_u64::<LE>(v)?)
    }

    fn usize(&mut self, v: usize) -> Result<()> {
        self.u64(v as u64)
    }

    fn opt(&mut self, v: Option<usize>) -> Result<()> {
        self.u64(v.map_or(NONE, |x| x as u64))
    }

    fn f64(&mut self, v: f64) -> Result<()> {
        Ok(self.0.write_f64::<LE>(v)?)
    }

    fn usizes(&mut self, v: &[usize]) -> Result<()> {
        self.usize(v.len())?;
        v.iter().try_for_each(|&x| self.usize(x))
    }

    fn mat(&mut self, m: &CMat) -> Result<()> {
        self.usize(m.nrows())?;
        self.usize(m.ncols())?;
        for z in m.iter() {
            self.f64(z.re)?;
            self.f64(z.im)?;
        }
        Ok(())
    }

    fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.usize(b.len())?;
        Ok(self.0.write_all(b)?)
    }
}

struct Dec<R: Read>(R);

impl<R: Read> Dec<R> {
    fn u64(&mut self) -> Result<u64> {
        self.0
            .read_u64::<LE>()
            .map_err(|e| format_err(format!("truncated container: {e}")))
    }

    fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| format_err("size out of range"))
    }

    /// A length that must be plausible for the data that follows.
    fn len(&mut self, limit: usize) -> Result<usize> {
        let v = self.usize()?;
        if v > limit {
            return Err(format_err(format!("implausible length {v}")));
        }
        Ok(v)
    }

    fn opt(&mut self) -> Result<Option<usize>> {
        let v = self.u64()?;
        Ok((v != NONE).then_some(v as usize))
    }

    fn f64(&mut self) -> Result<f64> {
        self.0
            .read_f64::<LE>()
            .map_err(|e| format_err(format!("truncated container: {e}")))
    }

    fn usizes(&mut self) -> Result<Vec<usize>> {
        let n = self.len(1 << 32)?;
        (0..n).map(|_| self.usize()).collect()
    }

    fn mat(&mut self) -> Result<CMat> {
        let r = self.len(1 << 24)?;
        let c = self.len(1 << 24)?;
        if r.saturating_mul(c) > 1 << 30 {
            return Err(format_err("matrix too large"));
        }
        let mut data = Vec::with_capacity(r * c);
        for _ in 0..r * c {
            let re = self.f64()?;
            let im = self.f64()?;
            data.push(C64::new(re, im));
        }
        Ok(CMat::from_vec(r, c, data))
    }

    fn bytes(&mut self) -> Result<Vec<u8>> {
        let n = self.len(1 << 32)?;
        let mut b = vec![0; n];
        self.0
            .read_exact(&mut b)
            .map_err(|e| format_err(format!("truncated container: {e}")))?;
        Ok(b)
    }

    fn magic(&mut self, expect: &[u8; 4]) -> Result<()> {
        let mut m = [0u8; 4];
        self.0
            .read_exact(&mut m)
            .map_err(|_| format_err("file too short for a container"))?;
        if &m != expect {
            return Err(format_err(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&m),
                String::from_utf8_lossy(expect)
            )));
        }
        let v = self
            .0
            .read_u32::<LE>()
            .map_err(|_| format_err("missing version"))?;
        if v != VERSION {
            return Err(format_err(format!("unsupported version {v}")));
        }
        Ok(())
    }
}

/// Writes an H²-matrix container.
pub fn write_h2<W: Write>(a: &H2Matrix, w: W) -> Result<()> {
    let mut e = Enc(w);
    e.0.write_all(H2_MAGIC)?;
    e.0.write_u32::<LE>(VERSION)?;
    let tree = a.tree();
    e.usize(a.n())?;
    e.usize(tree.depth())?;
    e.usize(tree.leafsize())?;
    e.f64(a.blocks().eta)?;
    e.f64(a.eps_h2())?;
    for p in tree.points().points() {
        p.iter().try_for_each(|&x| e.f64(x))?;
    }
    e.usizes(tree.global_perm())?;
    e.usize(tree.clusters().len())?;
    for c in tree.clusters() {
        e.usize(c.level)?;
        e.usize(c.start)?;
        e.usize(c.end)?;
        e.opt(c.parent)?;
        e.opt(c.children.map(|x| x[0]))?;
        e.opt(c.children.map(|x| x[1]))?;
        c.bbox.min.iter().chain(&c.bbox.max).try_for_each(|&x| e.f64(x))?;
    }
    let ranks: Vec<usize> = (0..tree.clusters().len()).map(|t| a.rank(t)).collect();
    e.usizes(&ranks)?;
    for t in 0..tree.clusters().len() {
        match a.basis(t) {
            ClusterBasis::Leaf(v) => {
                e.u64(0)?;
                e.mat(v)?;
            }
            ClusterBasis::Transfer { upper, lower } => {
                e.u64(1)?;
                e.mat(upper)?;
                e.mat(lower)?;
            }
        }
    }
    let blocks = a.blocks();
    e.usize(blocks.admissible.len())?;
    for &(t, s, l) in &blocks.admissible {
        e.usize(t)?;
        e.usize(s)?;
        e.usize(l)?;
        e.mat(a.coupling(t, s).expect("coupling present"))?;
    }
    e.usize(blocks.near.len())?;
    for level in &blocks.near {
        e.usize(level.len())?;
        for &(t, s) in level {
            e.usize(t)?;
            e.usize(s)?;
        }
    }
    e.usize(a.dense_blocks().len())?;
    for (&(t, s), m) in a.dense_blocks() {
        e.usize(t)?;
        e.usize(s)?;
        e.mat(m)?;
    }
    e.0.flush()?;
    Ok(())
}

/// Reads an H²-matrix container.
pub fn read_h2<R: Read>(r: R) -> Result<H2Matrix> {
    let mut d = Dec(r);
    d.magic(H2_MAGIC)?;
    let n = d.len(1 << 32)?;
    let depth = d.len(62)?;
    let leafsize = d.usize()?;
    let eta = d.f64()?;
    let eps_h2 = d.f64()?;
    let mut pts = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        pts.push([d.f64()?, d.f64()?, d.f64()?]);
    }
    let points = PointCloud::new(pts)?;
    let perm = d.usizes()?;
    let nc = d.len(1 << 40)?;
    let mut clusters = Vec::with_capacity(nc.min(1 << 20));
    for id in 0..nc {
        let level = d.usize()?;
        let start = d.usize()?;
        let end = d.usize()?;
        let parent = d.opt()?;
        let c0 = d.opt()?;
        let c1 = d.opt()?;
        let mut b = [0.0; 6];
        for x in &mut b {
            *x = d.f64()?;
        }
        clusters.push(Cluster {
            id,
            level,
            start,
            end,
            bbox: BoundingBox {
                min: [b[0], b[1], b[2]],
                max: [b[3], b[4], b[5]],
            },
            parent,
            children: c0.zip(c1).map(|(a, b)| [a, b]),
        });
    }
    let tree = ClusterTree::from_parts(clusters, depth, leafsize, perm, points)?;
    let ranks = d.usizes()?;
    if ranks.len() != nc {
        return Err(format_err("rank table length"));
    }
    let mut bases = Vec::with_capacity(nc);
    for _ in 0..nc {
        bases.push(match d.u64()? {
            0 => ClusterBasis::Leaf(d.mat()?),
            1 => ClusterBasis::Transfer {
                upper: d.mat()?,
                lower: d.mat()?,
            },
            k => return Err(format_err(format!("unknown basis kind {k}"))),
        });
    }
    let na = d.len(1 << 40)?;
    let mut admissible = Vec::new();
    let mut couplings = BTreeMap::new();
    for _ in 0..na {
        let (t, s, l) = (d.usize()?, d.usize()?, d.usize()?);
        if t >= nc || s >= nc {
            return Err(format_err("block index out of range"));
        }
        admissible.push((t, s, l));
        couplings.insert((t, s), d.mat()?);
    }
    let levels = d.len(64)?;
    let mut near = Vec::with_capacity(levels);
    for _ in 0..levels {
        let m = d.len(1 << 40)?;
        let mut pairs = Vec::new();
        for _ in 0..m {
            let (t, s) = (d.usize()?, d.usize()?);
            if t >= nc || s >= nc {
                return Err(format_err("block index out of range"));
            }
            pairs.push((t, s));
        }
        near.push(pairs);
    }
    if near.len() != depth + 1 {
        return Err(format_err("near list depth"));
    }
    let nd = d.len(1 << 40)?;
    let mut dense = BTreeMap::new();
    for _ in 0..nd {
        let (t, s) = (d.usize()?, d.usize()?);
        dense.insert((t, s), d.mat()?);
    }
    let blocks = BlockClusterTree::from_lists(&tree, admissible, near, eta);
    let a = H2Matrix::from_parts(tree, blocks, eps_h2, bases, couplings, dense)?;
    for (t, &k) in ranks.iter().enumerate() {
        if a.rank(t) != k {
            return Err(format_err(format!("rank table mismatch at cluster {t}")));
        }
    }
    Ok(a)
}

fn write_panels<W: Write>(e: &mut Enc<W>, panels: &[Panel]) -> Result<()> {
    e.usize(panels.len())?;
    for p in panels {
        e.usize(p.cluster)?;
        e.usize(p.offset)?;
        e.mat(&p.mat)?;
    }
    Ok(())
}

fn read_panels<R: Read>(d: &mut Dec<R>) -> Result<Vec<Panel>> {
    let n = d.len(1 << 20)?;
    (0..n)
        .map(|_| {
            Ok(Panel {
                cluster: d.usize()?,
                offset: d.usize()?,
                mat: d.mat()?,
            })
        })
        .collect()
}

/// Writes a factor chain container.
pub fn write_chain<W: Write>(c: &FactorChain, w: W) -> Result<()> {
    let mut e = Enc(w);
    e.0.write_all(CHAIN_MAGIC)?;
    e.0.write_u32::<LE>(VERSION)?;
    e.usize(c.n)?;
    e.usize(c.depth)?;
    e.usize(c.stop_level)?;
    e.f64(c.eps_fill_in)?;
    e.usize(c.peak_working_bytes)?;
    e.usize(c.levels.len())?;
    for lv in &c.levels {
        e.usize(lv.level)?;
        e.usize(lv.positions.len())?;
        lv.positions.iter().try_for_each(|p| e.usizes(p))?;
        e.usize(lv.records.len())?;
        for r in &lv.records {
            e.usize(r.cluster)?;
            e.usize(r.level)?;
            e.usize(r.eliminated)?;
            e.mat(&r.qt)?;
            e.mat(&r.l)?;
            e.mat(&r.u)?;
            write_panels(&mut e, &r.lower)?;
            write_panels(&mut e, &r.upper)?;
        }
        e.usize(lv.permutation.level)?;
        e.usizes(&lv.permutation.perm)?;
    }
    e.usizes(&c.root_positions)?;
    e.mat(&c.root.packed)?;
    e.usizes(&c.root.perm)?;
    let diag = serde_json::to_vec(&c.diagnostics).map_err(|x| format_err(x.to_string()))?;
    e.bytes(&diag)?;
    e.0.flush()?;
    Ok(())
}

/// Reads a factor chain container and checks that all positions are in
/// range.
pub fn read_chain<R: Read>(r: R) -> Result<FactorChain> {
    let mut d = Dec(r);
    d.magic(CHAIN_MAGIC)?;
    let n = d.len(1 << 32)?;
    let depth = d.len(62)?;
    let stop_level = d.usize()?;
    let eps_fill_in = d.f64()?;
    let peak_working_bytes = d.usize()?;
    let nl = d.len(64)?;
    let mut levels = Vec::with_capacity(nl);
    for _ in 0..nl {
        let level = d.len(62)?;
        let np = d.len(1 << 40)?;
        let positions = (0..np).map(|_| d.usizes()).collect::<Result<Vec<_>>>()?;
        let nr = d.len(1 << 40)?;
        let mut records = Vec::with_capacity(nr.min(1 << 20));
        for _ in 0..nr {
            let cluster = d.usize()?;
            let rlevel = d.usize()?;
            let eliminated = d.usize()?;
            let qt = d.mat()?;
            let l = d.mat()?;
            let u = d.mat()?;
            let lower = read_panels(&mut d)?;
            let upper = read_panels(&mut d)?;
            records.push(EliminationRecord {
                cluster,
                level: rlevel,
                qt,
                eliminated,
                l,
                u,
                lower,
                upper,
            });
        }
        let plevel = d.usize()?;
        let perm = d.usizes()?;
        levels.push(LevelFactors {
            level,
            positions,
            records,
            permutation: PermutationRecord { level: plevel, perm },
        });
    }
    let root_positions = d.usizes()?;
    let packed = d.mat()?;
    let root_perm = d.usizes()?;
    let diag = d.bytes()?;
    let diagnostics = serde_json::from_slice(&diag).map_err(|x| format_err(x.to_string()))?;
    let chain = FactorChain {
        n,
        depth,
        stop_level,
        eps_fill_in,
        levels,
        root_positions,
        root: PivotedLu {
            packed,
            perm: root_perm,
        },
        diagnostics,
        peak_working_bytes,
    };
    check_chain(&chain)?;
    Ok(chain)
}

fn check_chain(c: &FactorChain) -> Result<()> {
    let in_range = |p: &[usize]| p.iter().all(|&x| x < c.n);
    let bad = |m: &str| Err(format_err(m.to_string()));
    for lv in &c.levels {
        let first = lv.first_id();
        if !lv.positions.iter().all(|p| in_range(p)) {
            return bad("position out of range");
        }
        for r in &lv.records {
            let Some(pos) = r.cluster.checked_sub(first).and_then(|i| lv.positions.get(i)) else {
                return bad("record cluster not on its level");
            };
            let m = pos.len();
            if r.qt.shape() != (m, m) || r.eliminated > m || r.l.nrows() != r.eliminated && r.eliminated > 0 {
                return bad("record shape");
            }
            for p in r.lower.iter().chain(&r.upper) {
                match p.cluster.checked_sub(first).and_then(|i| lv.positions.get(i)) {
                    Some(q) if p.offset <= q.len() => {}
                    _ => return bad("panel neighbor out of range"),
                }
            }
        }
    }
    let k = c.root_positions.len();
    if !in_range(&c.root_positions) || c.root.packed.shape() != (k, k) || c.root.perm.len() != k {
        return bad("root factor shape");
    }
    if c.root.perm.iter().any(|&p| p >= k) {
        return bad("root permutation");
    }
    Ok(())
}

pub fn save_h2(a: &H2Matrix, path: &Path) -> Result<()> {
    write_h2(a, BufWriter::new(File::create(path)?))
}

pub fn load_h2(path: &Path) -> Result<H2Matrix> {
    read_h2(BufReader::new(File::open(path)?))
}

pub fn save_chain(c: &FactorChain, path: &Path) -> Result<()> {
    write_chain(c, BufWriter::new(File::create(path)?))
}

pub fn load_chain(path: &Path) -> Result<FactorChain> {
    read_chain(BufReader::new(File::open(path)?))
}

/// Reads `x,y,z` rows; a first row that does not parse is taken as a header.
pub fn read_points_csv<R: Read>(r: R) -> Result<PointCloud> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(r);
    let mut pts = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != 3 {
            return Err(Error::InvalidInput(format!(
                "point row {} has {} fields, expected 3",
                i + 1,
                rec.len()
            )));
        }
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(v) => pts.push([v[0], v[1], v[2]]),
            Err(_) if i == 0 => continue,
            Err(e) => {
                return Err(Error::InvalidInput(format!("point row {}: {e}", i + 1)));
            }
        }
    }
    PointCloud::new(pts)
}

/// Reads little-endian `f64` triples.
pub fn read_points_bin<R: Read>(mut r: R) -> Result<PointCloud> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    if buf.len() % 24 != 0 {
        return Err(Error::InvalidInput(format!(
            "binary point file length {} is not a multiple of 24",
            buf.len()
        )));
    }
    let mut cur = &buf[..];
    let mut pts = Vec::with_capacity(buf.len() / 24);
    while !cur.is_empty() {
        pts.push([cur.read_f64::<LE>()?, cur.read_f64::<LE>()?, cur.read_f64::<LE>()?]);
    }
    PointCloud::new(pts)
}

pub fn write_points_csv<W: Write>(pc: &PointCloud, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for p in pc.points() {
        wtr.write_record(p.iter().map(|x| format!("{x:e}")))?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_points_bin<W: Write>(pc: &PointCloud, mut w: W) -> Result<()> {
    for p in pc.points() {
        for &x in p {
            w.write_f64::<LE>(x)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Loads points, choosing the format by extension (`.csv` or binary).
pub fn load_points(path: &Path) -> Result<PointCloud> {
    let f = BufReader::new(File::open(path)?);
    if is_csv(path) {
        read_points_csv(f)
    } else {
        read_points_bin(f)
    }
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

pub fn read_vector_csv<R: Read>(r: R) -> Result<CVec> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(r);
    let mut v = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(x) if x.len() == 2 => v.push(C64::new(x[0], x[1])),
            Ok(x) if x.len() == 1 => v.push(C64::new(x[0], 0.0)),
            Err(_) if i == 0 => continue,
            _ => return Err(Error::InvalidInput(format!("vector row {} is not 're,im'", i + 1))),
        }
    }
    Ok(CVec::from_vec(v))
}

pub fn read_vector_bin<R: Read>(mut r: R) -> Result<CVec> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    if buf.len() % 16 != 0 {
        return Err(Error::InvalidInput(format!(
            "binary vector length {} is not a multiple of 16",
            buf.len()
        )));
    }
    let mut cur = &buf[..];
    let mut v = Vec::with_capacity(buf.len() / 16);
    while !cur.is_empty() {
        v.push(C64::new(cur.read_f64::<LE>()?, cur.read_f64::<LE>()?));
    }
    Ok(CVec::from_vec(v))
}

pub fn write_vector_csv<W: Write>(v: &CVec, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["re", "im"])?;
    for z in v.iter() {
        wtr.write_record([format!("{:e}", z.re), format!("{:e}", z.im)])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_vector_bin<W: Write>(v: &CVec, mut w: W) -> Result<()> {
    for z in v.iter() {
        w.write_f64::<LE>(z.re)?;
        w.write_f64::<LE>(z.im)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_vector(path: &Path) -> Result<CVec> {
    let f = BufReader::new(File::open(path)?);
    if is_csv(path) {
        read_vector_csv(f)
    } else {
        read_vector_bin(f)
    }
}

pub fn save_vector(v: &CVec, path: &Path) -> Result<()> {
    let f = BufWriter::new(File::create(path)?);
    if is_csv(path) {
        write_vector_csv(v, f)
    } else {
        write_vector_bin(v, f)
    }
}

/// One JSON object per line.
pub fn write_json_lines<W: Write, T: Serialize>(rows: &[T], mut w: W) -> Result<()> {
    for r in rows {
        serde_json::to_writer(&mut w, r).map_err(|e| Error::Io(e.into()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Sweep metrics as CSV; per-level ranks go in one `;`-separated column.
pub fn write_metrics_csv<W: Write>(runs: &[crate::verify::RunMetrics], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record([
        "family",
        "N",
        "t_build",
        "t_factor",
        "t_solve",
        "mem_h2",
        "mem_factor",
        "csp",
        "eps_rel",
        "max_rank_per_level",
    ])?;
    for r in runs {
        let ranks: Vec<String> = r.max_rank_per_level.iter().map(|k| k.to_string()).collect();
        wtr.write_record([
            r.family.clone(),
            r.n.to_string(),
            format!("{:e}", r.t_build),
            format!("{:e}", r.t_factor),
            format!("{:e}", r.t_solve),
            r.mem_h2.to_string(),
            r.mem_factor.to_string(),
            r.csp.to_string(),
            format!("{:e}", r.eps_rel),
            ranks.join(";"),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factor::{factorize, FactorOptions};
    use crate::fixtures;
    use crate::geometry::{build_block_tree, build_cluster_tree};
    use crate::h2::build_h2;
    use crate::kernel::KernelSpec;

    fn sample() -> H2Matrix {
        let tree = build_cluster_tree(&fixtures::rod(200), 25).unwrap();
        let blocks = build_block_tree(&tree, 1.0);
        build_h2(&KernelSpec::helmholtz(C64::new(2.0, 0.0)), &tree, &blocks, 1e-4).unwrap()
    }

    #[test]
    fn h2_round_trip() {
        let a = sample();
        let mut buf = Vec::new();
        write_h2(&a, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"H2MX");
        let b = read_h2(&buf[..]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn chain_round_trip() {
        let a = sample();
        let c = factorize(&a, &FactorOptions::new(1e-6)).unwrap();
        let mut buf = Vec::new();
        write_chain(&c, &mut buf).unwrap();
        let d = read_chain(&buf[..]).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn truncated_and_foreign_containers_are_rejected() {
        let a = sample();
        let mut buf = Vec::new();
        write_h2(&a, &mut buf).unwrap();
        assert!(matches!(read_h2(&buf[..buf.len() / 2]), Err(Error::Format(_))));
        assert!(matches!(read_chain(&buf[..]), Err(Error::Format(_))));
        assert!(matches!(read_h2(&b"nope"[..]), Err(Error::Format(_))));
    }

    #[test]
    fn points_csv_with_header() {
        let pc = read_points_csv(&b"x,y,z\n0,0,0\n1, 2.5, -3\n"[..]).unwrap();
        assert_eq!(pc.points(), &[[0.0, 0.0, 0.0], [1.0, 2.5, -3.0]]);
        assert!(read_points_csv(&b"0,0\n"[..]).is_err());
        assert!(read_points_csv(&b"0,0,0\n1,a,2\n"[..]).is_err());
    }

    #[test]
    fn points_binary_round_trip() {
        let pc = fixtures::cube(10);
        let mut buf = Vec::new();
        write_points_bin(&pc, &mut buf).unwrap();
        assert_eq!(read_points_bin(&buf[..]).unwrap(), pc);
        assert!(read_points_bin(&buf[..5]).is_err());
    }

    #[test]
    fn vector_round_trips() {
        let v = CVec::from_vec(vec![C64::new(1.5, -2.0), C64::new(0.0, 1e-300)]);
        let mut buf = Vec::new();
        write_vector_csv(&v, &mut buf).unwrap();
        assert_eq!(read_vector_csv(&buf[..]).unwrap(), v);
        let mut buf = Vec::new();
        write_vector_bin(&v, &mut buf).unwrap();
        assert_eq!(buf.len(), 32);
        assert_eq!(read_vector_bin(&buf[..]).unwrap(), v);
    }
}
