//! Uniform-cell spatial hashing for nearest-point queries and tolerance
//! deduplication.
//!
//! Cells are addressed by quantized coordinates hashed into a `u64`. Hash
//! collisions merge buckets, which only ever adds candidates to a scan and
//! never drops one, so queries stay exact.

use std::collections::HashMap;
use std::hash::{BuildHasherDefault, Hasher};

use crate::ifs::euclidean;

fn cell_key(cells: &[i64]) -> u64 {
    // FNV-1a over the raw cell coordinates; deterministic across runs.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &c in cells {
        for b in c.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

/// Pass-through hasher for keys that are already FNV-mixed `u64`s; rehashing
/// them buys nothing and shows up in every bucket probe.
#[derive(Default)]
struct PremixedHasher(u64);

impl Hasher for PremixedHasher {
    fn finish(&self) -> u64 {
        self.0
    }

    fn write(&mut self, _: &[u8]) {
        unreachable!("cell keys are hashed as u64");
    }

    fn write_u64(&mut self, v: u64) {
        self.0 = v;
    }
}

type CellMap = HashMap<u64, Vec<u32>, BuildHasherDefault<PremixedHasher>>;

/// Scratch for quantized cell coordinates, on the stack for the dimensions
/// that occur in practice.
const SCRATCH_DIM: usize = 8;

fn scratch<'a>(buf: &'a mut [i64; SCRATCH_DIM], heap: &'a mut Vec<i64>, dim: usize) -> &'a mut [i64] {
    if dim <= SCRATCH_DIM {
        &mut buf[..dim]
    } else {
        heap.resize(dim, 0);
        &mut heap[..]
    }
}

/// Point collection with nearest-neighbour queries over fixed-size cells.
pub(crate) struct PointIndex {
    dim: usize,
    cell: f64,
    buckets: CellMap,
    coords: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl PointIndex {
    pub(crate) fn new(dim: usize, cell: f64) -> Self {
        assert!(cell > 0.0 && cell.is_finite());
        PointIndex {
            dim,
            cell,
            buckets: CellMap::default(),
            coords: Vec::new(),
            lo: vec![f64::INFINITY; dim],
            hi: vec![f64::NEG_INFINITY; dim],
        }
    }

    pub(crate) fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    fn quantize(&self, p: &[f64], out: &mut [i64]) {
        for (o, &x) in out.iter_mut().zip(p) {
            *o = (x / self.cell).floor() as i64;
        }
    }

    pub(crate) fn insert(&mut self, p: &[f64]) -> u32 {
        debug_assert_eq!(p.len(), self.dim);
        let idx = self.len() as u32;
        let mut buf = [0i64; SCRATCH_DIM];
        let mut heap = Vec::new();
        let cells = scratch(&mut buf, &mut heap, self.dim);
        self.quantize(p, cells);
        self.buckets.entry(cell_key(cells)).or_default().push(idx);
        self.coords.extend_from_slice(p);
        for d in 0..self.dim {
            self.lo[d] = self.lo[d].min(p[d]);
            self.hi[d] = self.hi[d].max(p[d]);
        }
        idx
    }

    fn point(&self, idx: u32) -> &[f64] {
        let i = idx as usize * self.dim;
        &self.coords[i..i + self.dim]
    }

    /// Index and distance of the closest stored point. Ties break to the
    /// lowest index. Returns `None` when empty.
    pub(crate) fn nearest(&self, q: &[f64]) -> Option<(u32, f64)> {
        if self.coords.is_empty() {
            return None;
        }
        let (mut buf_a, mut buf_b, mut buf_c) = ([0i64; SCRATCH_DIM], [0i64; SCRATCH_DIM], [0i64; SCRATCH_DIM]);
        let (mut heap_a, mut heap_b, mut heap_c) = (Vec::new(), Vec::new(), Vec::new());
        let center = scratch(&mut buf_a, &mut heap_a, self.dim);
        self.quantize(q, center);
        let mut best: Option<(u32, f64)> = None;
        let offsets = scratch(&mut buf_b, &mut heap_b, self.dim);
        let cells = scratch(&mut buf_c, &mut heap_c, self.dim);
        // Points in cells at Chebyshev ring r are at least (r-1)*cell away,
        // so once a candidate is closer than that the scan can stop. Every
        // stored point lies within max_ring cells of the query.
        let mut reach: f64 = self.cell;
        for d in 0..self.dim {
            reach = reach.max((q[d] - self.lo[d]).abs()).max((q[d] - self.hi[d]).abs());
        }
        let max_ring = 2 + (reach / self.cell).ceil() as i64;
        for r in 0..=max_ring {
            if let Some((_, d)) = best {
                if (r - 1).max(0) as f64 * self.cell > d {
                    break;
                }
            }
            self.scan_ring(r, 0, offsets, center, cells, q, &mut best);
        }
        best
    }

    /// Closest stored point among the 3^k cells adjacent to the query's
    /// cell, ties to the lowest index. Anything outside that neighbourhood
    /// is farther than one cell along some axis, so the scan is exhaustive
    /// whenever only distances up to `cell` matter.
    pub(crate) fn nearest_adjacent(&self, q: &[f64]) -> Option<(u32, f64)> {
        if self.coords.is_empty() {
            return None;
        }
        let (mut buf_a, mut buf_b, mut buf_c) = ([0i64; SCRATCH_DIM], [0i64; SCRATCH_DIM], [0i64; SCRATCH_DIM]);
        let (mut heap_a, mut heap_b, mut heap_c) = (Vec::new(), Vec::new(), Vec::new());
        let center = scratch(&mut buf_a, &mut heap_a, self.dim);
        self.quantize(q, center);
        let mut best: Option<(u32, f64)> = None;
        let cells = scratch(&mut buf_b, &mut heap_b, self.dim);
        // Iterative enumeration of the 3^k neighbourhood via a mixed-radix
        // counter over {-1,0,1}^k.
        let offset = scratch(&mut buf_c, &mut heap_c, self.dim);
        offset.fill(-1);
        loop {
            for (c, (o, ctr)) in cells.iter_mut().zip(offset.iter().zip(center.iter())) {
                *c = ctr + o;
            }
            if let Some(bucket) = self.buckets.get(&cell_key(cells)) {
                for &idx in bucket {
                    let d = euclidean(self.point(idx), q);
                    let better = match best {
                        None => true,
                        Some((bi, bd)) => d < bd || (d == bd && idx < bi),
                    };
                    if better {
                        best = Some((idx, d));
                    }
                }
            }
            let mut axis = 0;
            while axis < self.dim {
                offset[axis] += 1;
                if offset[axis] <= 1 {
                    break;
                }
                offset[axis] = -1;
                axis += 1;
            }
            if axis == self.dim {
                break;
            }
        }
        best
    }

    #[allow(clippy::too_many_arguments)]
    fn scan_ring(
        &self,
        r: i64,
        axis: usize,
        offsets: &mut [i64],
        center: &[i64],
        cells: &mut [i64],
        q: &[f64],
        best: &mut Option<(u32, f64)>,
    ) {
        if axis == offsets.len() {
            if offsets.iter().map(|o| o.abs()).max().unwrap_or(0) != r {
                return;
            }
            for (c, (o, ctr)) in cells.iter_mut().zip(offsets.iter().zip(center)) {
                *c = ctr + o;
            }
            if let Some(bucket) = self.buckets.get(&cell_key(cells)) {
                for &idx in bucket {
                    let d = euclidean(self.point(idx), q);
                    let better = match *best {
                        None => true,
                        Some((_, bd)) => d < bd,
                    };
                    if better {
                        *best = Some((idx, d));
                    }
                }
            }
            return;
        }
        for o in -r..=r {
            offsets[axis] = o;
            self.scan_ring(r, axis + 1, offsets, center, cells, q, best);
        }
    }
}

/// Greedy tolerance deduplication: a point is kept only if no previously
/// kept point lies within `tol`, so kept points are pairwise more than
/// `tol` apart.
pub(crate) struct DedupSet {
    index: PointIndex,
    tol: f64,
}

impl DedupSet {
    pub(crate) fn new(dim: usize, tol: f64) -> Self {
        DedupSet { index: PointIndex::new(dim, tol), tol }
    }

    /// Returns true (and stores the point) when nothing within `tol` was
    /// already kept. The index cell equals `tol`, so the adjacent-cell scan
    /// is exhaustive for the acceptance decision.
    pub(crate) fn insert_if_absent(&mut self, p: &[f64]) -> bool {
        if let Some((_, close)) = self.index.nearest_adjacent(p) {
            if close <= self.tol {
                return false;
            }
        }
        self.index.insert(p);
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_finds_true_minimum() {
        let mut idx = PointIndex::new(1, 0.1);
        for i in 0..100 {
            idx.insert(&[i as f64 / 100.0]);
        }
        let (i, d) = idx.nearest(&[0.333]).unwrap();
        assert_eq!(i, 33);
        assert!((d - 0.003).abs() < 1e-12);
    }

    #[test]
    fn nearest_ties_break_to_lowest_index() {
        let mut idx = PointIndex::new(1, 0.5);
        idx.insert(&[0.0]);
        idx.insert(&[1.0]);
        let (i, _) = idx.nearest(&[0.5]).unwrap();
        assert_eq!(i, 0);
    }

    #[test]
    fn nearest_works_far_from_data() {
        let mut idx = PointIndex::new(2, 0.01);
        idx.insert(&[0.0, 0.0]);
        idx.insert(&[1.0, 1.0]);
        let (i, d) = idx.nearest(&[5.0, 5.0]).unwrap();
        assert_eq!(i, 1);
        assert!((d - 32f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn dedup_enforces_min_distance() {
        let mut set = DedupSet::new(1, 0.1);
        assert!(set.insert_if_absent(&[0.0]));
        assert!(!set.insert_if_absent(&[0.05]));
        assert!(set.insert_if_absent(&[0.2]));
        // Straddling a cell boundary must still be caught.
        assert!(!set.insert_if_absent(&[0.29]));
    }

    #[test]
    fn dedup_in_two_dimensions() {
        let mut set = DedupSet::new(2, 0.1);
        assert!(set.insert_if_absent(&[0.5, 0.5]));
        assert!(!set.insert_if_absent(&[0.55, 0.55]));
        assert!(set.insert_if_absent(&[0.5, 0.75]));
    }
}
