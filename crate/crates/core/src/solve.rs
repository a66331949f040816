//! Forward and backward substitution with a [`FactorChain`].
//!
//! Vectors are in tree ordering. The chain is replayed in factorization
//! order for the forward pass and in reverse for the backward pass; cluster
//! data is gathered from and scattered to global positions, so no explicit
//! permutation is ever applied.

use crate::dense::{unit_lower_solve, upper_solve};
use crate::factor::{EliminationRecord, FactorChain, LevelFactors};
use crate::{CMat, CVec, Error, Result, C64};

fn check_len(chain: &FactorChain, len: usize) -> Result<()> {
    if len != chain.n {
        return Err(Error::DimensionMismatch {
            expected: chain.n,
            got: len,
        });
    }
    Ok(())
}

fn gather(b: &[C64], pos: &[usize]) -> Vec<C64> {
    pos.iter().map(|&p| b[p]).collect()
}

fn scatter(b: &mut [C64], pos: &[usize], x: &[C64]) {
    for (&p, &v) in pos.iter().zip(x) {
        b[p] = v;
    }
}

/// `y = M x` for a dense matrix and slice.
fn mat_vec(m: &CMat, x: &[C64]) -> Vec<C64> {
    let (r, c) = m.shape();
    let mut y = vec![C64::new(0.0, 0.0); r];
    for j in 0..c {
        let xj = x[j];
        if xj == C64::new(0.0, 0.0) {
            continue;
        }
        for (yi, &mij) in y.iter_mut().zip(m.column(j).iter()) {
            *yi += mij * xj;
        }
    }
    y
}

fn mat_adjoint_vec(m: &CMat, x: &[C64]) -> Vec<C64> {
    m.column_iter()
        .map(|col| col.iter().zip(x).map(|(a, b)| a.conj() * b).sum())
        .collect()
}

fn mat_conj_vec(m: &CMat, x: &[C64]) -> Vec<C64> {
    let (r, c) = m.shape();
    let mut y = vec![C64::new(0.0, 0.0); r];
    for j in 0..c {
        for (yi, &mij) in y.iter_mut().zip(m.column(j).iter()) {
            *yi += mij.conj() * x[j];
        }
    }
    y
}

fn mat_transpose_vec(m: &CMat, x: &[C64]) -> Vec<C64> {
    m.column_iter()
        .map(|col| col.iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

fn forward_record(level: &LevelFactors, rec: &EliminationRecord, b: &mut [C64]) {
    let pos = level.cluster_positions(rec.cluster);
    let mut x = mat_adjoint_vec(&rec.qt, &gather(b, pos));
    let e = rec.eliminated;
    unit_lower_solve(&rec.l, &mut x[..e]);
    scatter(b, pos, &x);
    if e == 0 {
        return;
    }
    let xe = &x[..e];
    for p in &rec.lower {
        let tgt = &level.cluster_positions(p.cluster)[p.offset..];
        let upd = mat_vec(&p.mat, xe);
        for (&g, u) in tgt.iter().zip(upd) {
            b[g] -= u;
        }
    }
}

fn backward_record(level: &LevelFactors, rec: &EliminationRecord, y: &mut [C64]) {
    let pos = level.cluster_positions(rec.cluster);
    let e = rec.eliminated;
    let mut x = gather(y, pos);
    if e > 0 {
        for p in &rec.upper {
            let src = gather(y, &level.cluster_positions(p.cluster)[p.offset..]);
            let upd = mat_vec(&p.mat, &src);
            for (xi, u) in x[..e].iter_mut().zip(upd) {
                *xi -= u;
            }
        }
        upper_solve(&rec.u, &mut x[..e]);
    }
    scatter(y, pos, &mat_conj_vec(&rec.qt, &x));
}

/// `b ← 𝓛^{-1} b` in place.
pub fn forward_substitute_in_place(chain: &FactorChain, b: &mut [C64]) -> Result<()> {
    check_len(chain, b.len())?;
    for level in &chain.levels {
        for rec in &level.records {
            forward_record(level, rec, b);
        }
    }
    let mut r = gather(b, &chain.root_positions);
    chain.root.forward(&mut r);
    scatter(b, &chain.root_positions, &r);
    Ok(())
}

/// `y ← 𝓤^{-1} y` in place.
pub fn backward_substitute_in_place(chain: &FactorChain, y: &mut [C64]) -> Result<()> {
    check_len(chain, y.len())?;
    let mut r = gather(y, &chain.root_positions);
    chain.root.backward(&mut r);
    scatter(y, &chain.root_positions, &r);
    for level in chain.levels.iter().rev() {
        for rec in level.records.iter().rev() {
            backward_record(level, rec, y);
        }
    }
    Ok(())
}

pub fn forward_substitute(chain: &FactorChain, b: &CVec) -> Result<CVec> {
    let mut y = b.clone();
    forward_substitute_in_place(chain, y.as_mut_slice())?;
    Ok(y)
}

pub fn backward_substitute(chain: &FactorChain, y: &CVec) -> Result<CVec> {
    let mut x = y.clone();
    backward_substitute_in_place(chain, x.as_mut_slice())?;
    Ok(x)
}

/// Solves `Z x = b` in place, overwriting `b` with `x`.
pub fn solve_in_place(chain: &FactorChain, b: &mut [C64]) -> Result<()> {
    forward_substitute_in_place(chain, b)?;
    backward_substitute_in_place(chain, b)
}

/// Solves `Z x = b`; `b` is left untouched.
pub fn solve(chain: &FactorChain, b: &CVec) -> Result<CVec> {
    let mut x = b.clone();
    solve_in_place(chain, x.as_mut_slice())?;
    Ok(x)
}

/// `Z^{-1} b` through the explicit inverse `𝓤^{-1} 𝓛^{-1}`; identical to
/// [`solve`].
pub fn apply_inverse(chain: &FactorChain, b: &CVec) -> Result<CVec> {
    solve(chain, b)
}

/// `𝓛 v`: the forward substitution run backwards.
pub fn apply_lower(chain: &FactorChain, v: &CVec) -> Result<CVec> {
    check_len(chain, v.len())?;
    let mut b = v.clone();
    let b = b.as_mut_slice();
    let root = &chain.root;
    let r = gather(b, &chain.root_positions);
    let n = root.dim();
    let mut lr = vec![C64::new(0.0, 0.0); n];
    for i in 0..n {
        let mut s = r[i];
        for (j, &rj) in r.iter().enumerate().take(i) {
            s += root.packed[(i, j)] * rj;
        }
        lr[i] = s;
    }
    let mut unperm = vec![C64::new(0.0, 0.0); n];
    for (i, &p) in root.perm.iter().enumerate() {
        unperm[p] = lr[i];
    }
    scatter(b, &chain.root_positions, &unperm);
    for level in chain.levels.iter().rev() {
        for rec in level.records.iter().rev() {
            let pos = level.cluster_positions(rec.cluster);
            let e = rec.eliminated;
            let mut x = gather(b, pos);
            for p in &rec.lower {
                let tgt = &level.cluster_positions(p.cluster)[p.offset..];
                let upd = mat_vec(&p.mat, &x[..e]);
                for (&g, u) in tgt.iter().zip(upd) {
                    b[g] += u;
                }
            }
            // own panel may have changed the retained part
            let retained = gather(b, &pos[e..]);
            x[e..].copy_from_slice(&retained);
            let le = mat_vec(&rec.l, &x[..e]);
            x[..e].copy_from_slice(&le);
            scatter(b, pos, &mat_vec(&rec.qt, &x));
        }
    }
    Ok(CVec::from_column_slice(b))
}

/// `𝓤 v`: the backward substitution run backwards.
pub fn apply_upper(chain: &FactorChain, v: &CVec) -> Result<CVec> {
    check_len(chain, v.len())?;
    let mut y = v.clone();
    let y = y.as_mut_slice();
    for level in &chain.levels {
        for rec in &level.records {
            let pos = level.cluster_positions(rec.cluster);
            let e = rec.eliminated;
            let x = mat_transpose_vec(&rec.qt, &gather(y, pos));
            scatter(y, pos, &x);
            if e == 0 {
                continue;
            }
            let mut xe = mat_vec(&rec.u, &x[..e]);
            for p in &rec.upper {
                let src = gather(y, &level.cluster_positions(p.cluster)[p.offset..]);
                for (xi, u) in xe.iter_mut().zip(mat_vec(&p.mat, &src)) {
                    *xi += u;
                }
            }
            scatter(y, &pos[..e], &xe);
        }
    }
    let root = &chain.root;
    let r = gather(y, &chain.root_positions);
    let n = root.dim();
    let ur: Vec<C64> = (0..n)
        .map(|i| (i..n).map(|j| root.packed[(i, j)] * r[j]).sum())
        .collect();
    scatter(y, &chain.root_positions, &ur);
    Ok(CVec::from_column_slice(y))
}
