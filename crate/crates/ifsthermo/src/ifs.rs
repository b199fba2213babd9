//! Affine iterated function systems and their word combinatorics.
//!
//! A system is a finite family `γ_1, …, γ_d` of strict contractions of
//! `R^k`. Words over the alphabet `{1..d}` act by composition with the
//! first letter outermost: the word `(w_1, …, w_n)` sends `x` to
//! `γ_{w_1}(γ_{w_2}(⋯γ_{w_n}(x)⋯))`. Everything downstream (grids,
//! branch analysis, transfer operators) is built on these two notions.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::DedupSet;

/// A point of the ambient space `R^k`. Coordinates are always finite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Point(Vec<f64>);

impl Point {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::InvalidInput("a point needs at least one coordinate".into()));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite coordinate in {coords:?}")));
        }
        Ok(Point(coords))
    }

    /// Convenience constructor for one-dimensional systems.
    pub fn scalar(x: f64) -> Self {
        Point(vec![x])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn distance_to(&self, other: &Point) -> f64 {
        euclidean(&self.0, &other.0)
    }
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Lexicographic order on coordinate slices; the canonical order for grids
/// and measure atoms.
pub(crate) fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            other => return other,
        }
    }
    a.len().cmp(&b.len())
}

/// A finite word over the alphabet `{1..d}`, stored with one-based letters.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Word(Vec<u8>);

impl Word {
    /// Validates every letter against the alphabet size `d`.
    pub fn new(letters: Vec<u8>, d: usize) -> Result<Self> {
        if d < 2 || d > u8::MAX as usize {
            return Err(Error::InvalidInput(format!("alphabet size {d} outside 2..=255")));
        }
        for &l in &letters {
            if l == 0 || l as usize > d {
                return Err(Error::InvalidInput(format!("letter {l} outside 1..={d}")));
            }
        }
        Ok(Word(letters))
    }

    pub fn empty() -> Self {
        Word(Vec::new())
    }

    pub fn depth(&self) -> usize {
        self.0.len()
    }

    pub fn letters(&self) -> &[u8] {
        &self.0
    }

    /// New word with `letter` prepended, i.e. applied outermost.
    pub(crate) fn prepended(&self, letter: u8) -> Word {
        let mut letters = Vec::with_capacity(self.0.len() + 1);
        letters.push(letter);
        letters.extend_from_slice(&self.0);
        Word(letters)
    }
}

/// One affine contraction `x ↦ A x + b` together with its declared
/// contraction factor.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AffineMap {
    /// Row-major `k × k` matrix.
    matrix: Vec<f64>,
    offset: Vec<f64>,
    contraction_factor: f64,
}

impl AffineMap {
    /// Validates that the operator norm of `A` (estimated by power iteration
    /// on `AᵀA`) stays below one and below the declared contraction factor.
    pub fn new(matrix: Vec<f64>, offset: Vec<f64>, contraction_factor: f64) -> Result<Self> {
        let k = offset.len();
        if k == 0 {
            return Err(Error::InvalidInput("affine map needs dimension >= 1".into()));
        }
        if matrix.len() != k * k {
            return Err(Error::InvalidInput(format!(
                "matrix has {} entries, expected {}",
                matrix.len(),
                k * k
            )));
        }
        if matrix.iter().chain(&offset).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite entry in affine map".into()));
        }
        if !(contraction_factor > 0.0 && contraction_factor < 1.0) {
            return Err(Error::InvalidInput(format!(
                "contraction factor {contraction_factor} outside (0, 1)"
            )));
        }
        let norm = operator_norm(&matrix, k);
        if norm > contraction_factor * (1.0 + 1e-10) {
            return Err(Error::InvalidInput(format!(
                "operator norm estimate {norm} exceeds contraction factor {contraction_factor}"
            )));
        }
        Ok(AffineMap { matrix, offset, contraction_factor })
    }

    /// One-dimensional map `x ↦ a x + b`.
    pub fn scalar_map(a: f64, b: f64) -> Result<Self> {
        AffineMap::new(vec![a], vec![b], a.abs())
    }

    pub fn dim(&self) -> usize {
        self.offset.len()
    }

    pub fn contraction_factor(&self) -> f64 {
        self.contraction_factor
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn offset(&self) -> &[f64] {
        &self.offset
    }

    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        let k = self.offset.len();
        debug_assert_eq!(x.len(), k);
        debug_assert_eq!(out.len(), k);
        for i in 0..k {
            let mut acc = self.offset[i];
            let row = &self.matrix[i * k..(i + 1) * k];
            for (a, xv) in row.iter().zip(x) {
                acc += a * xv;
            }
            out[i] = acc;
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.offset.len()];
        self.apply_into(x, &mut out);
        out
    }

    pub fn apply_point(&self, x: &Point) -> Point {
        Point(self.apply(x.coords()))
    }
}

/// Spectral-norm estimate via power iteration on `AᵀA`.
///
/// The start vector is fixed, so the estimate is deterministic; 1x1 and
/// diagonal matrices come out exact.
fn operator_norm(matrix: &[f64], k: usize) -> f64 {
    if k == 1 {
        return matrix[0].abs();
    }
    let mut v = vec![1.0 / (k as f64).sqrt(); k];
    let mut av = vec![0.0; k];
    let mut atav = vec![0.0; k];
    let mut lambda: f64 = 0.0;
    for _ in 0..200 {
        // av = A v, atav = Aᵀ av
        for i in 0..k {
            av[i] = matrix[i * k..(i + 1) * k].iter().zip(&v).map(|(a, x)| a * x).sum();
        }
        for j in 0..k {
            atav[j] = (0..k).map(|i| matrix[i * k + j] * av[i]).sum();
        }
        let norm = atav.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = norm;
        for (vi, ai) in v.iter_mut().zip(&atav) {
            *vi = ai / norm;
        }
    }
    lambda.sqrt()
}

/// A family of affine contractions acting on a common ambient space.
#[derive(Clone, Debug)]
pub struct IfsSystem {
    dimension: usize,
    maps: Vec<AffineMap>,
    ambient_diameter: f64,
}

impl IfsSystem {
    pub fn new(maps: Vec<AffineMap>, ambient_diameter: f64) -> Result<Self> {
        if maps.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "a system needs at least two maps, got {}",
                maps.len()
            )));
        }
        if maps.len() > u8::MAX as usize {
            return Err(Error::InvalidInput(format!("too many maps: {}", maps.len())));
        }
        let dimension = maps[0].dim();
        for (i, m) in maps.iter().enumerate() {
            if m.dim() != dimension {
                return Err(Error::DimensionMismatch { expected: dimension, got: maps[i].dim() });
            }
        }
        if !(ambient_diameter.is_finite() && ambient_diameter > 0.0) {
            return Err(Error::InvalidInput(format!(
                "ambient diameter {ambient_diameter} must be positive and finite"
            )));
        }
        Ok(IfsSystem { dimension, maps, ambient_diameter })
    }

    /// Built-in systems addressable by name: `tent`, `cantor3`, `sierpinski`.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "tent" => IfsSystem::new(
                vec![AffineMap::scalar_map(0.5, 0.0)?, AffineMap::scalar_map(-0.5, 1.0)?],
                1.0,
            ),
            "cantor3" => IfsSystem::new(
                vec![
                    AffineMap::scalar_map(1.0 / 3.0, 0.0)?,
                    AffineMap::scalar_map(1.0 / 3.0, 2.0 / 3.0)?,
                ],
                1.0,
            ),
            "sierpinski" => {
                let half = vec![0.5, 0.0, 0.0, 0.5];
                IfsSystem::new(
                    vec![
                        AffineMap::new(half.clone(), vec![0.0, 0.0], 0.5)?,
                        AffineMap::new(half.clone(), vec![0.5, 0.0], 0.5)?,
                        AffineMap::new(half, vec![0.25, 3f64.sqrt() / 4.0], 0.5)?,
                    ],
                    1.0,
                )
            }
            other => Err(Error::InvalidInput(format!("unknown preset '{other}'"))),
        }
    }

    /// A canonical base point on the attractor of a preset (the fixed point
    /// of the first map).
    pub fn preset_base_point(name: &str) -> Result<Point> {
        match name {
            "tent" | "cantor3" => Ok(Point::scalar(0.0)),
            "sierpinski" => Point::new(vec![0.0, 0.0]),
            other => Err(Error::InvalidInput(format!("unknown preset '{other}'"))),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// Number of maps `d`.
    pub fn branch_count(&self) -> usize {
        self.maps.len()
    }

    pub fn maps(&self) -> &[AffineMap] {
        &self.maps
    }

    pub fn ambient_diameter(&self) -> f64 {
        self.ambient_diameter
    }

    pub fn max_contraction(&self) -> f64 {
        self.maps.iter().map(|m| m.contraction_factor()).fold(0.0, f64::max)
    }

    /// Map for the one-based letter `j`.
    pub fn map(&self, letter: u8) -> Result<&AffineMap> {
        if letter == 0 || letter as usize > self.maps.len() {
            return Err(Error::InvalidInput(format!(
                "letter {letter} outside 1..={}",
                self.maps.len()
            )));
        }
        Ok(&self.maps[letter as usize - 1])
    }

    fn check_point(&self, x: &Point) -> Result<()> {
        if x.dim() != self.dimension {
            return Err(Error::DimensionMismatch { expected: self.dimension, got: x.dim() });
        }
        Ok(())
    }
}

/// Image of `x` under the word `w`, first letter outermost.
pub fn evaluate_word(ifs: &IfsSystem, word: &Word, x: &Point) -> Result<Point> {
    ifs.check_point(x)?;
    let mut cur = x.coords().to_vec();
    let mut next = vec![0.0; ifs.dimension()];
    for &letter in word.letters().iter().rev() {
        ifs.map(letter)?.apply_into(&cur, &mut next);
        std::mem::swap(&mut cur, &mut next);
    }
    Point::new(cur)
}

/// Union of the forward images of `x` through depth `max_depth`, including
/// `x` itself, deduplicated within `dedup_tol`.
///
/// Points are produced breadth first and deduplicated greedily in generation
/// order, then sorted lexicographically, so the result is deterministic.
pub fn orbit(
    ifs: &IfsSystem,
    x: &Point,
    max_depth: usize,
    dedup_tol: f64,
    cap: Option<usize>,
) -> Result<Vec<Point>> {
    ifs.check_point(x)?;
    if !(dedup_tol > 0.0 && dedup_tol.is_finite()) {
        return Err(Error::InvalidInput(format!("dedup tolerance {dedup_tol} must be positive")));
    }
    let cap = cap.unwrap_or(1 << 22);
    let mut dedup = DedupSet::new(ifs.dimension(), dedup_tol);
    let mut kept: Vec<Vec<f64>> = Vec::new();
    let mut frontier = vec![x.coords().to_vec()];
    dedup.insert_if_absent(x.coords());
    kept.push(x.coords().to_vec());
    for _ in 0..max_depth {
        let mut next_frontier = Vec::new();
        for p in &frontier {
            for m in ifs.maps() {
                let img = m.apply(p);
                if dedup.insert_if_absent(&img) {
                    if kept.len() >= cap {
                        return Err(Error::ResourceCap(format!(
                            "orbit exceeded {cap} points; lower the depth or raise dedup_tol"
                        )));
                    }
                    kept.push(img.clone());
                    next_frontier.push(img);
                }
            }
        }
        if next_frontier.is_empty() {
            break;
        }
        frontier = next_frontier;
    }
    kept.sort_by(|a, b| lex_cmp(a, b));
    kept.into_iter().map(Point::new).collect()
}
