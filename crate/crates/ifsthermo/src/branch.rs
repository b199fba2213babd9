//! Branched values and branched points of an iterated function system.
//!
//! Two maps `γ_i` and `γ_j` coincide at `y` when `γ_i(y) = γ_j(y)`. The set
//! of such `y` inside the attractor is the branched-value set `C`; its image
//! under the coinciding maps is the branched-point set `B`. For affine maps
//! the coincidence equation `(A_i - A_j) y = b_j - b_i` is linear, so each
//! pair contributes at most one candidate unless the difference is singular.
//! A singular pair with a consistent right-hand side would make `C` a whole
//! affine subspace; we refuse that case rather than approximate it.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::AttractorGrid;
use crate::ifs::{lex_cmp, IfsSystem, Point};

/// A point of `B` together with the one-based letters of every map whose
/// image passes through it via some branched value.
#[derive(Clone, Debug, Serialize)]
pub struct BranchPoint {
    pub point: Point,
    /// Sorted, deduplicated one-based map letters.
    pub coinciding_letters: Vec<u8>,
}

/// A point of `C` together with the map pairs that coincide there.
#[derive(Clone, Debug, Serialize)]
pub struct BranchValue {
    pub point: Point,
    /// Sorted pairs `(i, j)` with `i < j`, one-based, satisfying
    /// `γ_i(point) = γ_j(point)` within the acceptance tolerance.
    pub pairs: Vec<(u8, u8)>,
    /// Distance from `point` to the nearest attractor-grid point at the time
    /// the candidate was accepted.
    pub grid_distance: f64,
}

/// A coincidence solution that exists algebraically but was not accepted as
/// a point of the attractor. Kept so callers can see what a tolerance or a
/// deeper grid would have admitted.
#[derive(Clone, Debug, Serialize)]
pub struct RejectedCandidate {
    pub point: Point,
    pub grid_distance: f64,
    /// The pair whose coincidence equation produced the candidate.
    pub pair: (u8, u8),
}

/// Whether the branch sets were solved for or supplied by the caller.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchProvenance {
    Computed,
    Declared,
}

/// Branch structure of a system relative to an attractor grid.
///
/// Both point lists are sorted lexicographically by coordinates, so equal
/// inputs always produce byte-identical serializations.
#[derive(Clone, Debug, Serialize)]
pub struct BranchData {
    #[serde(rename = "C")]
    branch_values: Vec<BranchValue>,
    #[serde(rename = "B")]
    branch_points: Vec<BranchPoint>,
    rejected: Vec<RejectedCandidate>,
    provenance: BranchProvenance,
}

impl BranchData {
    /// Branched values `C`, sorted lexicographically.
    pub fn branch_values(&self) -> &[BranchValue] {
        &self.branch_values
    }

    /// Branched points `B`, sorted lexicographically.
    pub fn branch_points(&self) -> &[BranchPoint] {
        &self.branch_points
    }

    /// Candidates that solved a coincidence equation but sat farther from
    /// the grid than the acceptance tolerance.
    pub fn rejected(&self) -> &[RejectedCandidate] {
        &self.rejected
    }

    pub fn provenance(&self) -> BranchProvenance {
        self.provenance
    }

    pub fn is_branch_free(&self) -> bool {
        self.branch_values.is_empty()
    }

    /// Distance from `x` to the nearest point of `C`, or infinity when `C`
    /// is empty. Linear scan; `C` is small by construction.
    pub fn distance_to_values(&self, x: &[f64]) -> f64 {
        self.branch_values
            .iter()
            .map(|v| crate::ifs::euclidean(v.point.coords(), x))
            .fold(f64::INFINITY, f64::min)
    }

    /// Distance from `x` to the nearest point of `B`, or infinity when `B`
    /// is empty.
    pub fn distance_to_points(&self, x: &[f64]) -> f64 {
        self.branch_points
            .iter()
            .map(|b| crate::ifs::euclidean(b.point.coords(), x))
            .fold(f64::INFINITY, f64::min)
    }

    /// Validates a caller-supplied branched-value list against the system and
    /// derives `B` from it. Each entry must actually coincide within `tol`.
    pub fn declared(
        ifs: &IfsSystem,
        values: Vec<(Point, Vec<(u8, u8)>)>,
        tol: f64,
    ) -> Result<Self> {
        if !(tol > 0.0 && tol.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "declaration tolerance {tol} must be positive and finite"
            )));
        }
        let mut accepted = Vec::new();
        for (point, pairs) in values {
            if point.dim() != ifs.dimension() {
                return Err(Error::DimensionMismatch {
                    expected: ifs.dimension(),
                    got: point.dim(),
                });
            }
            if pairs.is_empty() {
                return Err(Error::InvalidInput(
                    "declared branched value lists no coinciding pair".into(),
                ));
            }
            for &(i, j) in &pairs {
                if i >= j {
                    return Err(Error::InvalidInput(format!(
                        "declared pair ({i}, {j}) must satisfy i < j"
                    )));
                }
                let pi = ifs.map(i)?.apply(point.coords());
                let pj = ifs.map(j)?.apply(point.coords());
                let gap = crate::ifs::euclidean(&pi, &pj);
                if gap > tol {
                    return Err(Error::InvalidInput(format!(
                        "maps {i} and {j} differ by {gap:.3e} at the declared \
                         branched value, beyond tolerance {tol:.3e}"
                    )));
                }
            }
            let mut pairs = pairs;
            pairs.sort_unstable();
            pairs.dedup();
            accepted.push(BranchValue { point, pairs, grid_distance: 0.0 });
        }
        accepted.sort_by(|a, b| lex_cmp(a.point.coords(), b.point.coords()));
        let branch_points = images_of(ifs, &accepted, tol)?;
        Ok(BranchData {
            branch_values: accepted,
            branch_points,
            rejected: Vec::new(),
            provenance: BranchProvenance::Declared,
        })
    }
}

/// Outcome of one pairwise coincidence system.
enum SolveOutcome {
    Unique(Vec<f64>),
    NoSolution,
    Underdetermined,
}

/// Gaussian elimination with partial pivoting on the `k x k` system
/// `m y = rhs`. Pivots below `1e-12` times the largest matrix entry count
/// as zero, which separates genuinely singular pairs from roundoff.
fn solve_linear(mut m: Vec<f64>, mut rhs: Vec<f64>, k: usize) -> SolveOutcome {
    let scale_m = m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let scale_r = rhs.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let pivot_tol = 1e-12 * scale_m;
    let rhs_tol = 1e-12 * scale_m.max(scale_r);

    let mut pivot_cols = Vec::with_capacity(k);
    let mut row = 0usize;
    for col in 0..k {
        let mut best = row;
        for r in row + 1..k {
            if m[r * k + col].abs() > m[best * k + col].abs() {
                best = r;
            }
        }
        if m[best * k + col].abs() <= pivot_tol {
            continue;
        }
        if best != row {
            for c in 0..k {
                m.swap(row * k + c, best * k + c);
            }
            rhs.swap(row, best);
        }
        for r in row + 1..k {
            let factor = m[r * k + col] / m[row * k + col];
            if factor != 0.0 {
                for c in col..k {
                    m[r * k + c] -= factor * m[row * k + c];
                }
                rhs[r] -= factor * rhs[row];
            }
        }
        pivot_cols.push(col);
        row += 1;
    }

    if row < k {
        for r in row..k {
            if rhs[r].abs() > rhs_tol {
                return SolveOutcome::NoSolution;
            }
        }
        return SolveOutcome::Underdetermined;
    }

    let mut y = vec![0.0; k];
    for (r, &col) in pivot_cols.iter().enumerate().rev() {
        let mut acc = rhs[r];
        for c in col + 1..k {
            acc -= m[r * k + c] * y[c];
        }
        y[col] = acc / m[r * k + col];
    }
    SolveOutcome::Unique(y)
}

/// Computes the branch sets of `ifs` relative to `grid`.
///
/// Candidates come from the pairwise linear systems; a candidate is accepted
/// as a point of `C` exactly when its distance to the grid is at most `tol`.
/// Rejected candidates are recorded with their distances so a caller can
/// distinguish "no coincidence" from "coincidence outside the attractor
/// approximation". A pair whose difference matrix is singular with a
/// consistent right-hand side coincides on an affine subspace; that falls
/// outside the finite-branch setting and is reported as an error.
pub fn branch_sets(ifs: &IfsSystem, grid: &AttractorGrid, tol: f64) -> Result<BranchData> {
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "branch tolerance {tol} must be positive and finite"
        )));
    }
    if grid.dim() != ifs.dimension() {
        return Err(Error::DimensionMismatch { expected: ifs.dimension(), got: grid.dim() });
    }
    let k = ifs.dimension();
    let d = ifs.branch_count();

    let mut candidates: Vec<(Vec<f64>, (u8, u8))> = Vec::new();
    let mut rejected = Vec::new();
    for i in 1..=d as u8 {
        for j in i + 1..=d as u8 {
            let mi = ifs.map(i)?;
            let mj = ifs.map(j)?;
            let mut m = vec![0.0; k * k];
            for idx in 0..k * k {
                m[idx] = mi.matrix()[idx] - mj.matrix()[idx];
            }
            let mut rhs = vec![0.0; k];
            for idx in 0..k {
                rhs[idx] = mj.offset()[idx] - mi.offset()[idx];
            }
            match solve_linear(m, rhs, k) {
                SolveOutcome::NoSolution => {}
                SolveOutcome::Underdetermined => {
                    return Err(Error::UnsupportedBranchStructure(format!(
                        "maps {i} and {j} coincide on an affine subspace; \
                         branched values must be isolated points"
                    )));
                }
                SolveOutcome::Unique(y) => {
                    let (_, dist) = grid.nearest(&y);
                    if dist <= tol {
                        candidates.push((y, (i, j)));
                    } else {
                        rejected.push(RejectedCandidate {
                            point: Point::new(y)?,
                            grid_distance: dist,
                            pair: (i, j),
                        });
                    }
                }
            }
        }
    }

    // Distinct pairs can coincide at the same value; merge candidates that
    // sit within tol of an earlier one, keeping the earlier representative.
    let mut merged: Vec<Vec<f64>> = Vec::new();
    for (y, _) in &candidates {
        if !merged.iter().any(|m| crate::ifs::euclidean(m, y) <= tol) {
            merged.push(y.clone());
        }
    }

    // Re-derive the pair list per merged value over every pair, not just the
    // pair that produced it, so shared coincidences are not undercounted.
    let mut branch_values = Vec::with_capacity(merged.len());
    for y in merged {
        let pairs = coinciding_pairs(ifs, &y, tol)?;
        debug_assert!(!pairs.is_empty());
        let (_, dist) = grid.nearest(&y);
        branch_values.push(BranchValue { point: Point::new(y)?, pairs, grid_distance: dist });
    }
    branch_values.sort_by(|a, b| lex_cmp(a.point.coords(), b.point.coords()));
    rejected.sort_by(|a, b| {
        lex_cmp(a.point.coords(), b.point.coords()).then(a.pair.cmp(&b.pair))
    });

    let branch_points = images_of(ifs, &branch_values, tol)?;
    Ok(BranchData {
        branch_values,
        branch_points,
        rejected,
        provenance: BranchProvenance::Computed,
    })
}

/// All one-based pairs `(i, j)`, `i < j`, whose maps agree at `y` within
/// `tol` in the image.
fn coinciding_pairs(ifs: &IfsSystem, y: &[f64], tol: f64) -> Result<Vec<(u8, u8)>> {
    let d = ifs.branch_count() as u8;
    let images: Vec<Vec<f64>> =
        (1..=d).map(|i| Ok(ifs.map(i)?.apply(y))).collect::<Result<_>>()?;
    let mut pairs = Vec::new();
    for i in 0..d as usize {
        for j in i + 1..d as usize {
            if crate::ifs::euclidean(&images[i], &images[j]) <= tol {
                pairs.push((i as u8 + 1, j as u8 + 1));
            }
        }
    }
    Ok(pairs)
}

/// Builds `B` as the deduplicated images of the branched values under their
/// coinciding maps, tagging each point with every letter that reaches it.
fn images_of(ifs: &IfsSystem, values: &[BranchValue], tol: f64) -> Result<Vec<BranchPoint>> {
    let mut points: Vec<BranchPoint> = Vec::new();
    for value in values {
        for &(i, j) in &value.pairs {
            let image = ifs.map(i)?.apply(value.point.coords());
            match points
                .iter_mut()
                .find(|p| crate::ifs::euclidean(p.point.coords(), &image) <= tol)
            {
                Some(existing) => {
                    existing.coinciding_letters.push(i);
                    existing.coinciding_letters.push(j);
                }
                None => points.push(BranchPoint {
                    point: Point::new(image)?,
                    coinciding_letters: vec![i, j],
                }),
            }
        }
    }
    for p in &mut points {
        p.coinciding_letters.sort_unstable();
        p.coinciding_letters.dedup();
    }
    points.sort_by(|a, b| lex_cmp(a.point.coords(), b.point.coords()));
    Ok(points)
}

/// Number of maps sending `y` onto `x`, written `e(x, y)`.
///
/// Away from the branch structure this is 1 for `x` on the image side of the
/// cograph; a count of zero means `(x, y)` does not lie on the cograph at all
/// and is an error rather than a value.
pub fn multiplicity(ifs: &IfsSystem, x: &[f64], y: &[f64], tol: f64) -> Result<u32> {
    if x.len() != ifs.dimension() {
        return Err(Error::DimensionMismatch { expected: ifs.dimension(), got: x.len() });
    }
    if y.len() != ifs.dimension() {
        return Err(Error::DimensionMismatch { expected: ifs.dimension(), got: y.len() });
    }
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "multiplicity tolerance {tol} must be positive and finite"
        )));
    }
    let mut count = 0u32;
    for i in 1..=ifs.branch_count() as u8 {
        let image = ifs.map(i)?.apply(y);
        if crate::ifs::euclidean(&image, x) <= tol {
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::NotInCograph { x: x.to_vec(), y: y.to_vec(), tol });
    }
    Ok(count)
}

/// Finite-depth evidence for the escape condition: every branched value has
/// a preimage-side witness whose forward orbit stays clear of `C`.
///
/// `Unknown` is not a refutation. It records the branched values for which
/// the search at the given depths found no witness, so the caller can retry
/// deeper or treat downstream results as conditional.
#[derive(Clone, Debug, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum EscapeCertificate {
    HoldsAtDepth {
        search_depth: usize,
        avoid_depth: usize,
        tol: f64,
        /// One `(branched value, witness)` entry per point of `C`.
        witnesses: Vec<(Point, Point)>,
    },
    Unknown {
        search_depth: usize,
        avoid_depth: usize,
        tol: f64,
        /// Branched values left without a witness.
        unresolved: Vec<Point>,
    },
}

impl EscapeCertificate {
    pub fn holds(&self) -> bool {
        matches!(self, EscapeCertificate::HoldsAtDepth { .. })
    }

    pub fn depths(&self) -> (usize, usize) {
        match self {
            EscapeCertificate::HoldsAtDepth { search_depth, avoid_depth, .. }
            | EscapeCertificate::Unknown { search_depth, avoid_depth, .. } => {
                (*search_depth, *avoid_depth)
            }
        }
    }
}

/// Searches for escape witnesses.
///
/// For each `y` in `C`, candidates are the iterated images of `y` up to
/// `search_depth`. A candidate `x` is a witness when every image of `x` up
/// to `avoid_depth` keeps distance greater than `tol` from all of `C`; the
/// candidate itself must too. An empty `C` holds vacuously.
pub fn check_escape_condition(
    ifs: &IfsSystem,
    branch: &BranchData,
    search_depth: usize,
    avoid_depth: usize,
    tol: f64,
) -> Result<EscapeCertificate> {
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "escape tolerance {tol} must be positive and finite"
        )));
    }
    let mut witnesses = Vec::new();
    let mut unresolved = Vec::new();
    for value in branch.branch_values() {
        match find_witness(ifs, branch, value.point.coords(), search_depth, avoid_depth, tol)? {
            Some(x) => witnesses.push((value.point.clone(), Point::new(x)?)),
            None => unresolved.push(value.point.clone()),
        }
    }
    if unresolved.is_empty() {
        Ok(EscapeCertificate::HoldsAtDepth { search_depth, avoid_depth, tol, witnesses })
    } else {
        Ok(EscapeCertificate::Unknown { search_depth, avoid_depth, tol, unresolved })
    }
}

/// First candidate in breadth-first, letter-ascending order that avoids `C`
/// for `avoid_depth` steps. The deterministic order makes certificates
/// reproducible across runs.
fn find_witness(
    ifs: &IfsSystem,
    branch: &BranchData,
    y: &[f64],
    search_depth: usize,
    avoid_depth: usize,
    tol: f64,
) -> Result<Option<Vec<f64>>> {
    let mut level: Vec<Vec<f64>> = vec![y.to_vec()];
    for _ in 0..=search_depth {
        for candidate in &level {
            if avoids_branch_values(ifs, branch, candidate, avoid_depth, tol)? {
                return Ok(Some(candidate.clone()));
            }
        }
        let mut next = Vec::with_capacity(level.len() * ifs.branch_count());
        for p in &level {
            for i in 1..=ifs.branch_count() as u8 {
                next.push(ifs.map(i)?.apply(p));
            }
        }
        level = next;
        if level.len() > (1usize << 22) {
            return Err(Error::ResourceCap(format!(
                "escape search level exceeds {} points; lower search_depth",
                1usize << 22
            )));
        }
    }
    Ok(None)
}

fn avoids_branch_values(
    ifs: &IfsSystem,
    branch: &BranchData,
    x: &[f64],
    avoid_depth: usize,
    tol: f64,
) -> Result<bool> {
    let mut level: Vec<Vec<f64>> = vec![x.to_vec()];
    for _ in 0..=avoid_depth {
        for p in &level {
            if branch.distance_to_values(p) <= tol {
                return Ok(false);
            }
        }
        let mut next = Vec::with_capacity(level.len() * ifs.branch_count());
        for p in &level {
            for i in 1..=ifs.branch_count() as u8 {
                next.push(ifs.map(i)?.apply(p));
            }
        }
        level = next;
    }
    Ok(true)
}
