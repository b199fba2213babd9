//! Finite attractor approximations: the depth-`m` forward-image grid of a
//! base point.
//!
//! The grid at depth `m` is `{γ_w(x₀) : |w| = m}` deduplicated within a
//! tolerance. Every grid point is within `c^m · diam` of the attractor
//! (`c` the largest contraction factor), and the image of a grid point
//! under any single map is a depth-`m+1` point, hence again within that
//! bound of the grid. That bound is what all nearest-point interpolation
//! downstream leans on.

use std::io::Write;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::ifs::{lex_cmp, IfsSystem, Point, Word};
use crate::index::{DedupSet, PointIndex};

/// Default deduplication tolerance as a fraction of the ambient diameter.
pub const DEFAULT_DEDUP_FRACTION: f64 = 1e-9;

/// Default cap on the number of grid points.
pub const DEFAULT_GRID_CAP: usize = 10_000_000;

/// The depth-`m` word-image grid of a base point, sorted lexicographically
/// by coordinates.
pub struct AttractorGrid {
    dim: usize,
    depth: usize,
    base: Point,
    dedup_tol: f64,
    error_bound: f64,
    max_contraction: f64,
    ambient_diameter: f64,
    /// Flat row-major coordinates, `len = n * dim`.
    coords: Vec<f64>,
    /// Lexicographically smallest word reaching each slot.
    words: Vec<Word>,
    /// Slots in lexicographic word order, for word lookups by binary
    /// search.
    lex_rank: Vec<u32>,
    nn: PointIndex,
}

impl std::fmt::Debug for AttractorGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AttractorGrid")
            .field("dim", &self.dim)
            .field("depth", &self.depth)
            .field("points", &self.len())
            .field("error_bound", &self.error_bound)
            .finish()
    }
}

impl AttractorGrid {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn base_point(&self) -> &Point {
        &self.base
    }

    pub fn dedup_tolerance(&self) -> f64 {
        self.dedup_tol
    }

    /// Code-map error bound `c^depth · ambient_diameter`.
    pub fn error_bound(&self) -> f64 {
        self.error_bound
    }

    pub(crate) fn max_contraction(&self) -> f64 {
        self.max_contraction
    }

    /// Diameter of the ambient region the grid was built inside, inherited
    /// from the system.
    pub fn ambient_diameter(&self) -> f64 {
        self.ambient_diameter
    }

    /// Coordinates of the slot `i`.
    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn point_at(&self, i: usize) -> Point {
        Point::new(self.point(i).to_vec()).expect("grid points are finite")
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> + '_ {
        (0..self.len()).map(move |i| self.point(i))
    }

    /// Representative word of slot `i`.
    pub fn word(&self, i: usize) -> &Word {
        &self.words[i]
    }

    /// Slot of a representative word, if that word survived deduplication.
    pub fn slot_of_word(&self, w: &Word) -> Option<u32> {
        self.lex_rank
            .binary_search_by(|&slot| self.words[slot as usize].cmp(w))
            .ok()
            .map(|k| self.lex_rank[k])
    }

    /// Slot and distance of the grid point closest to `q`.
    pub fn nearest(&self, q: &[f64]) -> (u32, f64) {
        self.nn.nearest(q).expect("grid is never empty")
    }

    /// One row per point, coordinates only.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for d in 0..self.dim {
            if d > 0 {
                write!(out, ",")?;
            }
            write!(out, "c{d}")?;
        }
        writeln!(out)?;
        for p in self.points() {
            for (d, v) in p.iter().enumerate() {
                if d > 0 {
                    write!(out, ",")?;
                }
                write!(out, "{v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Grid construction options; the defaults match the documented tolerances.
#[derive(Clone, Debug)]
pub struct GridOptions {
    /// Merge radius for points; defaults to `1e-9 · ambient_diameter`.
    pub dedup_tol: Option<f64>,
    /// Hard cap on stored points.
    pub max_points: usize,
}

impl Default for GridOptions {
    fn default() -> Self {
        GridOptions { dedup_tol: None, max_points: DEFAULT_GRID_CAP }
    }
}

/// Builds the depth-`m` grid from `base`.
///
/// Expansion is level by level with the new letter prepended (outermost),
/// visiting letters in ascending order, so candidate words appear in
/// lexicographic order and greedy deduplication keeps the lexicographically
/// smallest representative. The final point list is re-sorted by
/// coordinates.
pub fn attractor_grid(
    ifs: &IfsSystem,
    depth: usize,
    base: &Point,
    opts: &GridOptions,
) -> Result<Arc<AttractorGrid>> {
    if base.dim() != ifs.dimension() {
        return Err(Error::DimensionMismatch { expected: ifs.dimension(), got: base.dim() });
    }
    let diam = ifs.ambient_diameter();
    let dedup_tol = opts.dedup_tol.unwrap_or(DEFAULT_DEDUP_FRACTION * diam);
    if !(dedup_tol > 0.0 && dedup_tol.is_finite()) {
        return Err(Error::InvalidInput(format!("dedup tolerance {dedup_tol} must be positive")));
    }
    let d = ifs.branch_count();
    let dim = ifs.dimension();

    let mut words: Vec<Word> = vec![Word::empty()];
    let mut pts: Vec<f64> = base.coords().to_vec();
    for _ in 0..depth {
        let prev_n = words.len();
        if prev_n.saturating_mul(d) > opts.max_points {
            return Err(Error::ResourceCap(format!(
                "expanding {prev_n} points by {d} maps exceeds the cap of {} grid points",
                opts.max_points
            )));
        }
        let mut dedup = DedupSet::new(dim, dedup_tol);
        let mut next_words = Vec::with_capacity(prev_n * d);
        let mut next_pts: Vec<f64> = Vec::with_capacity(prev_n * d * dim);
        let mut img = vec![0.0; dim];
        for letter in 1..=d as u8 {
            let map = ifs.map(letter)?;
            for i in 0..prev_n {
                map.apply_into(&pts[i * dim..(i + 1) * dim], &mut img);
                if dedup.insert_if_absent(&img) {
                    next_words.push(words[i].prepended(letter));
                    next_pts.extend_from_slice(&img);
                }
            }
        }
        words = next_words;
        pts = next_pts;
    }

    // Canonical order: sort slots by coordinates. The pre-sort sequence is
    // already in word order (letters were visited ascending), so its
    // inverse permutation is the lexicographic ranking of the words.
    let n = words.len();
    let mut order: Vec<u32> = (0..n as u32).collect();
    order.sort_by(|&a, &b| {
        lex_cmp(
            &pts[a as usize * dim..(a as usize + 1) * dim],
            &pts[b as usize * dim..(b as usize + 1) * dim],
        )
    });
    let mut coords = Vec::with_capacity(n * dim);
    let mut sorted_words = Vec::with_capacity(n);
    let mut lex_rank = vec![0u32; n];
    for (slot, &i) in order.iter().enumerate() {
        coords.extend_from_slice(&pts[i as usize * dim..(i as usize + 1) * dim]);
        sorted_words.push(std::mem::replace(&mut words[i as usize], Word::empty()));
        lex_rank[i as usize] = slot as u32;
    }

    let error_bound = ifs.max_contraction().powi(depth as i32) * diam;
    let cell = error_bound.max(dedup_tol).max(diam * 1e-12);
    let mut nn = PointIndex::new(dim, cell);
    for slot in 0..n {
        nn.insert(&coords[slot * dim..(slot + 1) * dim]);
    }

    Ok(Arc::new(AttractorGrid {
        dim,
        depth,
        base: base.clone(),
        dedup_tol,
        error_bound,
        max_contraction: ifs.max_contraction(),
        ambient_diameter: diam,
        coords,
        words: sorted_words,
        lex_rank,
        nn,
    }))
}
