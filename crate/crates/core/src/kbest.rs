//! K-best tree search on an upper-triangular integer least-squares system.
//!
//! Levels count 1..=n from the bottom row of R. Each surviving partial
//! vector owns a Schnorr-Euchner child stream (children ordered by
//! increasing distance from the Babai center), and the per-level selection
//! runs as a tournament over those streams: seed the heap with every
//! survivor's first child, then each of the K extractions except the last
//! replaces the winner with its next sibling. A level therefore expands at
//! most |survivors| + K - 1 <= 2K - 1 nodes, against the m*K of a
//! conventional sort-based K-best that generates every child.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::{DMatrix, DVector};

use crate::fixedpoint::{Arith, Quantizer};
use crate::model::Modulation;
use crate::{Error, Result};

/// One decided integer vector with its accumulated squared distance.
#[derive(Clone, Debug)]
pub struct Candidate {
    pub z: Vec<i64>,
    pub ped: f64,
}

/// Expansion counters; `per_level[0]` is the bottom row of R.
#[derive(Clone, Debug, Default)]
pub struct SearchStats {
    pub nodes_expanded: usize,
    pub per_level: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct KbestResult {
    /// K candidates sorted by (ped, emission order).
    pub candidates: Vec<Candidate>,
    pub stats: SearchStats,
}

/// Nodes expanded by a conventional K-best that rates every constellation
/// child of every survivor on all 2 n_t real levels.
pub fn count_conventional(n_t: usize, k: usize, scheme: Modulation) -> usize {
    2 * n_t * k * scheme.constellation_size()
}

/// Child `rank` of a Schnorr-Euchner stream: rank 0 is the rounded center
/// c0, then the zig-zag c0+d, c0-d, c0+2d, ... where d steps toward the
/// fractional remainder (ties take d = +1).
fn se_value(c0: i64, d: i64, rank: u32) -> i64 {
    if rank == 0 {
        return c0;
    }
    let magnitude = ((rank + 1) / 2) as i64;
    let sign = if rank % 2 == 1 { d } else { -d };
    c0 + sign * magnitude
}

/// First `count` children around `center`, in visit order.
pub fn se_enumerate(center: f64, count: usize) -> Vec<i64> {
    let (c0, d) = se_seed(center);
    (0..count as u32).map(|r| se_value(c0, d, r)).collect()
}

fn se_seed(center: f64) -> (i64, i64) {
    let clamped = center.clamp(-1e15, 1e15);
    let c0 = (clamped + 0.5).floor() as i64;
    let d = if clamped - c0 as f64 >= 0.0 { 1 } else { -1 };
    (c0, d)
}

struct Stream {
    parent: usize,
    resid: f64,
    c0: i64,
    d: i64,
}

struct HeapEntry {
    ped: f64,
    seq: u64,
    stream: usize,
    rank: u32,
    value: i64,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.ped == other.ped && self.seq == other.seq
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEntry {
    // Reversed: BinaryHeap is a max-heap, we want the smallest (ped, seq).
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .ped
            .partial_cmp(&self.ped)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

struct Partial {
    z: Vec<i64>,
    ped: f64,
}

/// K-best search in floating point.
pub fn kbest_search(r: &DMatrix<f64>, y: &DVector<f64>, k: usize) -> Result<KbestResult> {
    kbest_search_with(r, y, k, &Quantizer::Float)
}

/// K-best search with every distance operation routed through the
/// arithmetic hook; centers use `recip` of the diagonal, matching a
/// division-free datapath.
pub fn kbest_search_with<A: Arith>(
    r: &DMatrix<f64>,
    y: &DVector<f64>,
    k: usize,
    arith: &A,
) -> Result<KbestResult> {
    let n = r.nrows();
    if n == 0 || r.ncols() != n || y.len() != n {
        return Err(Error::Shape(format!("need square R and matching y, got {}x{} and {}", n, r.ncols(), y.len())));
    }
    if k == 0 {
        return Err(Error::Domain("k must be at least 1".into()));
    }
    let mut inv_diag = Vec::with_capacity(n);
    for i in 0..n {
        let d = r[(i, i)];
        if d == 0.0 || !d.is_finite() {
            return Err(Error::RankDeficient(format!("R diagonal entry {i} is {d}")));
        }
        inv_diag.push(arith.recip(d));
    }

    let mut survivors = vec![Partial { z: vec![0; n], ped: 0.0 }];
    let mut stats = SearchStats { nodes_expanded: 0, per_level: Vec::with_capacity(n) };
    let mut seq = 0u64;

    for level in 1..=n {
        let row = n - level;
        let mut streams = Vec::with_capacity(survivors.len());
        let mut heap = BinaryHeap::with_capacity(survivors.len() + k);
        let mut expanded = 0usize;

        for (si, sv) in survivors.iter().enumerate() {
            let mut resid = y[row];
            for j in row + 1..n {
                resid = arith.q(resid - arith.q(r[(row, j)] * sv.z[j] as f64));
            }
            let center = arith.q(resid * inv_diag[row]);
            let (c0, d) = se_seed(center);
            let value = se_value(c0, d, 0);
            let miss = arith.q(resid - arith.q(r[(row, row)] * value as f64));
            let ped = arith.q(sv.ped + arith.q(miss * miss));
            heap.push(HeapEntry { ped, seq, stream: si, rank: 0, value });
            seq += 1;
            expanded += 1;
            streams.push(Stream { parent: si, resid, c0, d });
        }

        let mut next = Vec::with_capacity(k);
        while next.len() < k {
            let e = heap.pop().expect("streams are inexhaustible");
            let st = &streams[e.stream];
            let mut z = survivors[st.parent].z.clone();
            z[row] = e.value;
            next.push(Partial { z, ped: e.ped });
            if next.len() < k {
                let rank = e.rank + 1;
                let value = se_value(st.c0, st.d, rank);
                let miss = arith.q(st.resid - arith.q(r[(row, row)] * value as f64));
                let ped = arith.q(survivors[st.parent].ped + arith.q(miss * miss));
                heap.push(HeapEntry { ped, seq, stream: e.stream, rank, value });
                seq += 1;
                expanded += 1;
            }
        }
        stats.nodes_expanded += expanded;
        stats.per_level.push(expanded);
        survivors = next;
    }

    let candidates = survivors.into_iter().map(|p| Candidate { z: p.z, ped: p.ped }).collect();
    Ok(KbestResult { candidates, stats })
}
