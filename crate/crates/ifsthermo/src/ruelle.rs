//! The transfer operator, its branch-corrected variant, and their adjoints.
//!
//! For a grid function `a` the operator is
//!
//! ```text
//! (L_beta a)(y) = sum_j h_j(γ_j(y))^(-beta) a(γ_j(y))
//! ```
//!
//! and the branch-corrected variant divides each term by the multiplicity
//! `e(γ_j(y), y)`, the number of maps sending `y` to that same image. The
//! two differ only where images collide, which happens exactly on the
//! branched structure. On the dual side the same weights push point masses
//! forward; the fully corrected dual additionally divides by multiplicity
//! and is the building block of the finite-type series.
//!
//! Everything is evaluated against a fixed attractor grid. Off-grid values
//! are read from the nearest grid point, which is sound because images of
//! grid points stay within a computable distance of the grid. The engine
//! refuses to interpolate when that distance exceeds its allowance, so a
//! coarse or mismatched grid fails loudly rather than silently degrading.
//!
//! Summation orders are fixed (branches ascending, then atom order), so
//! every result is a pure function of the inputs. Parallel paths only
//! distribute independent output slots across threads and never reorder a
//! floating-point reduction.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::branch::{BranchData, EscapeCertificate};
use crate::error::{Error, Result};
use crate::grid::AttractorGrid;
use crate::ifs::IfsSystem;
use crate::measure::{Atom, DiscreteMeasure};
use crate::potential::{check_compatibility, check_margin, PotentialFamily};
use crate::suite::{default_suite, moment_suite, TestFunction};

/// Inverse temperature. Finite values must be finite floats; the infinite
/// value is a first-class citizen because the corrected dual degenerates
/// there instead of diverging.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Beta {
    Finite(f64),
    Infinite,
}

impl Beta {
    pub fn finite(value: f64) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::InvalidInput(format!(
                "beta {value} must be finite; use Beta::Infinite for the limit"
            )));
        }
        Ok(Beta::Finite(value))
    }

    pub fn as_finite(&self) -> Option<f64> {
        match self {
            Beta::Finite(v) => Some(*v),
            Beta::Infinite => None,
        }
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, Beta::Infinite)
    }
}

impl fmt::Display for Beta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Beta::Finite(v) => write!(f, "{v}"),
            Beta::Infinite => write!(f, "infinity"),
        }
    }
}

impl Serialize for Beta {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Beta::Finite(v) => serializer.serialize_f64(*v),
            Beta::Infinite => serializer.serialize_str("infinity"),
        }
    }
}

impl<'de> Deserialize<'de> for Beta {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct BetaVisitor;
        impl<'de> Visitor<'de> for BetaVisitor {
            type Value = Beta;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a finite number or the string \"infinity\"")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Beta, E> {
                Beta::finite(v).map_err(|e| E::custom(e.to_string()))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Beta, E> {
                self.visit_f64(v as f64)
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Beta, E> {
                self.visit_f64(v as f64)
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Beta, E> {
                match v {
                    "infinity" | "inf" => Ok(Beta::Infinite),
                    other => Err(E::custom(format!(
                        "unrecognized beta string {other:?}; use a number or \"infinity\""
                    ))),
                }
            }
        }
        deserializer.deserialize_any(BetaVisitor)
    }
}

/// A function known by its values on the slots of one attractor grid.
/// Off-grid evaluation reads the nearest slot.
#[derive(Clone, Debug)]
pub struct GridFunction {
    grid: Arc<AttractorGrid>,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: Arc<AttractorGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch { expected: grid.len(), got: values.len() });
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("grid function value {bad} is not finite")));
        }
        Ok(GridFunction { grid, values })
    }

    pub fn constant(grid: &Arc<AttractorGrid>, value: f64) -> Result<Self> {
        GridFunction::new(grid.clone(), vec![value; grid.len()])
    }

    pub fn from_fn<F: Fn(&[f64]) -> f64>(grid: &Arc<AttractorGrid>, f: F) -> Result<Self> {
        let values = grid.points().map(&f).collect();
        GridFunction::new(grid.clone(), values)
    }

    pub fn sample(grid: &Arc<AttractorGrid>, f: &TestFunction) -> Result<Self> {
        GridFunction::from_fn(grid, |x| f.eval(x))
    }

    pub fn grid(&self) -> &Arc<AttractorGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, slot: usize) -> f64 {
        self.values[slot]
    }

    /// Value at the grid point nearest to `q`.
    pub fn eval_at(&self, q: &[f64]) -> Result<f64> {
        if q.len() != self.grid.dim() {
            return Err(Error::DimensionMismatch { expected: self.grid.dim(), got: q.len() });
        }
        Ok(self.eval_nearest(q))
    }

    pub(crate) fn eval_nearest(&self, q: &[f64]) -> f64 {
        let (slot, _) = self.grid.nearest(q);
        self.values[slot as usize]
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().fold(f64::INFINITY, |acc, &v| acc.min(v))
    }

    pub fn same_grid(&self, other: &GridFunction) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid)
    }

    /// Applies `f` slotwise, keeping the grid.
    pub fn map_values<F: Fn(f64) -> f64>(&self, f: F) -> Result<Self> {
        GridFunction::new(self.grid.clone(), self.values.iter().map(|&v| f(v)).collect())
    }

    /// One row per slot: coordinates then the value.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        for d in 0..self.grid.dim() {
            write!(out, "c{d},")?;
        }
        writeln!(out, "value")?;
        for (slot, p) in self.grid.points().enumerate() {
            for c in p {
                write!(out, "{c},")?;
            }
            writeln!(out, "{}", self.values[slot])?;
        }
        Ok(())
    }
}

/// Caps and tolerances for an engine instance.
#[derive(Clone, Debug)]
pub struct EngineOptions {
    /// Distance under which image points count as coinciding.
    pub branch_tol: f64,
    /// Tolerance for potential equality at branched values.
    pub compat_tol: f64,
    /// Upper bound on `d^n` in the word expansion.
    pub word_cap: u64,
    /// Upper bound on atoms in dual-side measures.
    pub atom_cap: usize,
}

impl Default for EngineOptions {
    fn default() -> Self {
        EngineOptions {
            branch_tol: 1e-9,
            compat_tol: 1e-10,
            word_cap: 1 << 24,
            atom_cap: 1 << 22,
        }
    }
}

/// Options for the power iteration behind `spectral_radius`.
#[derive(Clone, Debug, Default)]
pub struct PowerOptions {
    /// 0 means the default of 500.
    pub max_iter: usize,
    /// 0.0 means the default of 1e-10.
    pub rtol: f64,
    /// Starting function; defaults to the constant 1. A warm start from a
    /// nearby parameter cuts the iteration count sharply during root
    /// finding.
    pub warm_start: Option<GridFunction>,
}

impl PowerOptions {
    fn max_iter(&self) -> usize {
        if self.max_iter == 0 { 500 } else { self.max_iter }
    }

    fn rtol(&self) -> f64 {
        if self.rtol == 0.0 { 1e-10 } else { self.rtol }
    }
}

/// Spectral radius estimate with its eigenfunction.
#[derive(Clone, Debug)]
pub struct PowerIterationResult {
    pub rho: f64,
    /// Positive eigenfunction, sup norm 1.
    pub k: GridFunction,
    /// `sup |L k - rho k|` for the returned pair.
    pub residual: f64,
    pub iterations: usize,
    /// Residual after each iteration, for convergence diagnostics.
    pub history: Vec<f64>,
}

/// Options for eigenmeasure iteration.
#[derive(Clone, Debug, Default)]
pub struct EigenmeasureOptions {
    /// 0 means the default of 300.
    pub max_iter: usize,
    /// 0.0 means the default of 1e-6. Iteration stops when the moment
    /// integrals move by less than half this between steps.
    pub rtol: f64,
    /// `None` buckets mass onto grid cells, tracking exact weighted
    /// centroids (fast, atom count bounded by the grid). `Some(eps)` keeps
    /// exact pushforward atoms, coarsening onto cells of side `eps` each
    /// step; `Some(0.0)` never merges and relies on the atom cap.
    pub merge_tol: Option<f64>,
    /// Functions for the final residual check; defaults to the full
    /// verification suite of the system.
    pub suite: Option<Vec<TestFunction>>,
}

impl EigenmeasureOptions {
    fn max_iter(&self) -> usize {
        if self.max_iter == 0 { 300 } else { self.max_iter }
    }

    fn rtol(&self) -> f64 {
        if self.rtol == 0.0 { 1e-6 } else { self.rtol }
    }
}

/// Eigenmeasure with its residual under the exact dual pairing.
#[derive(Clone, Debug)]
pub struct EigenmeasureResult {
    /// Probability measure.
    pub tau: DiscreteMeasure,
    /// `max_f |integral of L f d tau - rho * integral of f d tau|` over the
    /// residual suite, evaluated with exact images and weights.
    pub residual: f64,
    pub iterations: usize,
}

/// The full eigentriple at one parameter, normalized so `tau(k) = 1` and
/// `tau` is a probability measure.
#[derive(Clone, Debug)]
pub struct RpfSolution {
    pub beta: f64,
    pub rho: f64,
    pub k: GridFunction,
    pub tau: DiscreteMeasure,
    pub residual_k: f64,
    pub residual_tau: f64,
    /// Recomputed `tau(k)` after scaling; should sit at 1 up to roundoff.
    pub tau_of_k: f64,
    pub power_iterations: usize,
    pub measure_iterations: usize,
}

fn ensure_finite_beta(beta: f64) -> Result<()> {
    if !beta.is_finite() {
        return Err(Error::InvalidInput(format!("beta {beta} must be finite here")));
    }
    Ok(())
}

/// Precomputed operator tables over one grid.
///
/// For grid slot `i` and branch `j` (zero-based), the tables store the
/// nearest grid slot to the exact image `γ_{j+1}(y_i)`, the potential value
/// at that exact image, and the image multiplicity `e(γ_{j+1}(y_i), y_i)`.
/// Applying the operator is then a weighted gather, with the weights
/// `h^(-beta)` recomputed per call.
pub struct RuelleEngine {
    ifs: IfsSystem,
    potential: PotentialFamily,
    branch: BranchData,
    grid: Arc<AttractorGrid>,
    opts: EngineOptions,
    /// `ln` of the smallest potential value seen on the grid.
    margin: f64,
    /// Layout `[j * n + i]`.
    img_nn: Vec<u32>,
    h_img: Vec<f64>,
    mult: Vec<f64>,
    /// Per-branch min and max of `h_img`.
    h_lo: Vec<f64>,
    h_hi: Vec<f64>,
    /// Largest observed distance from an exact image to the grid.
    img_dist_max: f64,
    /// Largest interpolation distance the grid construction justifies.
    interp_allowance: f64,
    escape: Option<EscapeCertificate>,
}

impl std::fmt::Debug for RuelleEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RuelleEngine")
            .field("branches", &self.ifs.branch_count())
            .field("grid", &self.grid)
            .field("margin", &self.margin)
            .field("interp_allowance", &self.interp_allowance)
            .finish()
    }
}

impl RuelleEngine {
    pub fn new(
        ifs: IfsSystem,
        potential: PotentialFamily,
        branch: BranchData,
        grid: Arc<AttractorGrid>,
        opts: EngineOptions,
    ) -> Result<Self> {
        if grid.dim() != ifs.dimension() {
            return Err(Error::DimensionMismatch { expected: ifs.dimension(), got: grid.dim() });
        }
        if potential.len() != ifs.branch_count() {
            return Err(Error::IncompatiblePotential(format!(
                "family has {} potentials for {} branches",
                potential.len(),
                ifs.branch_count()
            )));
        }
        potential.validate_dimension(ifs.dimension())?;
        if !(opts.branch_tol > 0.0 && opts.branch_tol.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "branch tolerance {} must be positive and finite",
                opts.branch_tol
            )));
        }

        let compat = check_compatibility(&potential, &branch, opts.compat_tol)?;
        if !compat.is_compatible() {
            let v = &compat.violations[0];
            return Err(Error::IncompatiblePotential(format!(
                "potentials {} and {} differ by {:.3e} at a branched value; \
                 the operator weights would depend on the branch used",
                v.pair.0, v.pair.1, v.difference
            )));
        }
        let margin = check_margin(&potential, &grid)?;

        let n = grid.len();
        let d = ifs.branch_count();

        // Blocks keep allocation out of the per-point path; layout within a
        // block is branch-major, matching the final arrays.
        struct Block {
            start: usize,
            len: usize,
            nn: Vec<u32>,
            h: Vec<f64>,
            mult: Vec<f64>,
            max_dist: f64,
        }
        let dim = grid.dim();
        let block_len = 16384usize;
        let starts: Vec<usize> = (0..n).step_by(block_len.max(1)).collect();
        let blocks = starts
            .into_par_iter()
            .map(|start| -> Result<Block> {
                let len = block_len.min(n - start);
                let mut block = Block {
                    start,
                    len,
                    nn: vec![0u32; d * len],
                    h: vec![0.0f64; d * len],
                    mult: vec![0.0f64; d * len],
                    max_dist: 0.0,
                };
                let mut images = vec![0.0f64; d * dim];
                for k in 0..len {
                    let y = grid.point(start + k);
                    for j in 0..d {
                        let img = &mut images[j * dim..(j + 1) * dim];
                        ifs.maps()[j].apply_into(y, img);
                    }
                    for j in 0..d {
                        let img = &images[j * dim..(j + 1) * dim];
                        let (slot, dist) = grid.nearest(img);
                        block.nn[j * len + k] = slot;
                        block.max_dist = block.max_dist.max(dist);
                        block.h[j * len + k] = potential.eval(j as u8 + 1, img)?;
                        let e = (0..d)
                            .filter(|&l| {
                                crate::ifs::euclidean(
                                    &images[l * dim..(l + 1) * dim],
                                    img,
                                ) <= opts.branch_tol
                            })
                            .count();
                        block.mult[j * len + k] = e as f64;
                    }
                }
                Ok(block)
            })
            .collect::<Result<Vec<Block>>>()?;

        let mut img_nn = vec![0u32; n * d];
        let mut h_img = vec![0.0f64; n * d];
        let mut mult = vec![0.0f64; n * d];
        let mut img_dist_max = 0.0f64;
        for block in &blocks {
            img_dist_max = img_dist_max.max(block.max_dist);
            for j in 0..d {
                let (s, l) = (block.start, block.len);
                img_nn[j * n + s..j * n + s + l].copy_from_slice(&block.nn[j * l..(j + 1) * l]);
                h_img[j * n + s..j * n + s + l].copy_from_slice(&block.h[j * l..(j + 1) * l]);
                mult[j * n + s..j * n + s + l].copy_from_slice(&block.mult[j * l..(j + 1) * l]);
            }
        }
        let mut h_lo = vec![f64::INFINITY; d];
        let mut h_hi = vec![0.0f64; d];
        for j in 0..d {
            for i in 0..n {
                let v = h_img[j * n + i];
                h_lo[j] = h_lo[j].min(v);
                h_hi[j] = h_hi[j].max(v);
            }
        }

        // Images of grid points are depth-(m+1) word images, so they sit
        // within the code-map bound of the grid, plus the drift that greedy
        // deduplication can accumulate across levels.
        let c = grid.max_contraction();
        let interp_allowance = grid.error_bound()
            + 2.0 * grid.dedup_tolerance() / (1.0 - c)
            + 1e-12 * (1.0 + grid.ambient_diameter());

        Ok(RuelleEngine {
            ifs,
            potential,
            branch,
            grid,
            opts,
            margin,
            img_nn,
            h_img,
            mult,
            h_lo,
            h_hi,
            img_dist_max,
            interp_allowance,
            escape: None,
        })
    }

    /// Attaches an escape certificate so downstream states can report
    /// whether their trace identities are conditional on it.
    pub fn with_escape_certificate(mut self, cert: EscapeCertificate) -> Self {
        self.escape = Some(cert);
        self
    }

    pub fn ifs(&self) -> &IfsSystem {
        &self.ifs
    }

    pub fn potential(&self) -> &PotentialFamily {
        &self.potential
    }

    pub fn branch(&self) -> &BranchData {
        &self.branch
    }

    pub fn grid(&self) -> &Arc<AttractorGrid> {
        &self.grid
    }

    pub fn options(&self) -> &EngineOptions {
        &self.opts
    }

    /// `ln` of the smallest potential value on the grid; positive by the
    /// margin check.
    pub fn margin(&self) -> f64 {
        self.margin
    }

    pub fn escape_certificate(&self) -> Option<&EscapeCertificate> {
        self.escape.as_ref()
    }

    pub fn interp_allowance(&self) -> f64 {
        self.interp_allowance
    }

    /// The verification suite matched to this system's branch structure.
    pub fn verification_suite(&self) -> Vec<TestFunction> {
        let b: Vec<_> = self.branch.branch_points().iter().map(|p| p.point.clone()).collect();
        default_suite(self.grid.dim(), &b)
    }

    /// Slot-based operators interpolate image values from the grid; refuse
    /// when some image sits farther from the grid than construction
    /// guarantees allow.
    fn check_interpolation(&self) -> Result<()> {
        if self.img_dist_max > self.interp_allowance {
            return Err(Error::GridResolution {
                distance: self.img_dist_max,
                bound: self.interp_allowance,
            });
        }
        Ok(())
    }

    fn check_same_grid(&self, a: &GridFunction) -> Result<()> {
        if !Arc::ptr_eq(a.grid(), &self.grid) {
            return Err(Error::InvalidInput(
                "grid function belongs to a different grid than the engine".into(),
            ));
        }
        Ok(())
    }

    /// `h^(-beta)` at every precomputed image, engine layout.
    fn weights(&self, beta: f64) -> Vec<f64> {
        self.h_img.iter().map(|h| h.powf(-beta)).collect()
    }

    fn apply_weights(&self, a: &[f64], w: &[f64], corrected: bool, out: &mut [f64]) {
        let n = self.grid.len();
        let d = self.ifs.branch_count();
        // Each output slot is an independent short sum over branches in
        // ascending order; chunking preserves that order exactly.
        out.par_chunks_mut(4096).enumerate().for_each(|(chunk, slab)| {
            let base = chunk * 4096;
            for (off, o) in slab.iter_mut().enumerate() {
                let i = base + off;
                let mut acc = 0.0;
                for j in 0..d {
                    let idx = j * n + i;
                    let term = w[idx] * a[self.img_nn[idx] as usize];
                    acc += if corrected { term / self.mult[idx] } else { term };
                }
                *o = acc;
            }
        });
    }

    /// The transfer operator `L_beta` on grid functions.
    pub fn transfer(&self, a: &GridFunction, beta: f64) -> Result<GridFunction> {
        ensure_finite_beta(beta)?;
        self.check_same_grid(a)?;
        self.check_interpolation()?;
        let w = self.weights(beta);
        let mut out = vec![0.0; self.grid.len()];
        self.apply_weights(a.values(), &w, false, &mut out);
        GridFunction::new(self.grid.clone(), out)
    }

    /// The branch-corrected operator: each term divided by the image
    /// multiplicity. Coincides with `transfer` wherever no images collide.
    pub fn corrected_transfer(&self, a: &GridFunction, beta: f64) -> Result<GridFunction> {
        ensure_finite_beta(beta)?;
        self.check_same_grid(a)?;
        self.check_interpolation()?;
        let w = self.weights(beta);
        let mut out = vec![0.0; self.grid.len()];
        self.apply_weights(a.values(), &w, true, &mut out);
        GridFunction::new(self.grid.clone(), out)
    }

    /// Pointwise transfer value at an arbitrary `y`, with exact images and
    /// weights; only the reads of `a` interpolate.
    pub fn transfer_at(&self, a: &GridFunction, y: &[f64], beta: f64) -> Result<f64> {
        self.value_at(a, y, beta, false)
    }

    /// Pointwise branch-corrected value at an arbitrary `y`.
    pub fn corrected_transfer_at(&self, a: &GridFunction, y: &[f64], beta: f64) -> Result<f64> {
        self.value_at(a, y, beta, true)
    }

    fn value_at(&self, a: &GridFunction, y: &[f64], beta: f64, corrected: bool) -> Result<f64> {
        ensure_finite_beta(beta)?;
        self.check_same_grid(a)?;
        if y.len() != self.grid.dim() {
            return Err(Error::DimensionMismatch { expected: self.grid.dim(), got: y.len() });
        }
        let d = self.ifs.branch_count();
        let mut images = Vec::with_capacity(d);
        for j in 0..d {
            images.push(self.ifs.maps()[j].apply(y));
        }
        let mut acc = 0.0;
        for j in 0..d {
            let h = self.potential.eval(j as u8 + 1, &images[j])?;
            let mut term = h.powf(-beta) * a.eval_nearest(&images[j]);
            if corrected {
                let e = images
                    .iter()
                    .filter(|img| crate::ifs::euclidean(img, &images[j]) <= self.opts.branch_tol)
                    .count();
                term /= e as f64;
            }
            acc += term;
        }
        Ok(acc)
    }

    /// `(L_beta)^n a` at `y` by direct expansion over words of length `n`.
    ///
    /// The recursion applies one map at a time to the current point, letters
    /// ascending, multiplying in `h^(-beta)` at each new point; `a` is read
    /// at the final point of each word. Weights and points are exact, so
    /// the only approximation is the nearest-grid read of `a`, the same
    /// approximation `transfer` makes. This is the oracle that iterated
    /// `transfer` calls are tested against.
    pub fn word_sum(&self, a: &GridFunction, y: &[f64], n: usize, beta: f64) -> Result<f64> {
        ensure_finite_beta(beta)?;
        self.check_same_grid(a)?;
        if y.len() != self.grid.dim() {
            return Err(Error::DimensionMismatch { expected: self.grid.dim(), got: y.len() });
        }
        let d = self.ifs.branch_count() as u64;
        let words = d.checked_pow(n as u32).filter(|&w| w <= self.opts.word_cap);
        if words.is_none() {
            return Err(Error::ResourceCap(format!(
                "word expansion needs {d}^{n} terms, beyond the cap of {}",
                self.opts.word_cap
            )));
        }
        let mut scratch = vec![vec![0.0; self.grid.dim()]; n + 1];
        scratch[0].copy_from_slice(y);
        Ok(self.word_sum_rec(a, beta, n, 0, 1.0, &mut scratch))
    }

    fn word_sum_rec(
        &self,
        a: &GridFunction,
        beta: f64,
        n: usize,
        depth: usize,
        weight: f64,
        scratch: &mut [Vec<f64>],
    ) -> f64 {
        if depth == n {
            return weight * a.eval_nearest(&scratch[depth]);
        }
        let d = self.ifs.branch_count();
        let mut acc = 0.0;
        for j in 0..d {
            let (head, tail) = scratch.split_at_mut(depth + 1);
            self.ifs.maps()[j].apply_into(&head[depth], &mut tail[0]);
            let h = self.potential.eval_raw(j, &tail[0]);
            let w = weight * h.powf(-beta);
            acc += self.word_sum_rec(a, beta, n, depth + 1, w, scratch);
        }
        acc
    }

    /// Exact transfer value of an analytic test function at `y`: images,
    /// weights and function reads all exact, no grid involved.
    pub fn transfer_value_of(&self, f: &TestFunction, y: &[f64], beta: f64) -> Result<f64> {
        self.fn_value_at(f, y, beta, false)
    }

    /// Exact branch-corrected value of an analytic test function at `y`.
    pub fn corrected_value_of(&self, f: &TestFunction, y: &[f64], beta: f64) -> Result<f64> {
        self.fn_value_at(f, y, beta, true)
    }

    fn fn_value_at(
        &self,
        f: &TestFunction,
        y: &[f64],
        beta: f64,
        corrected: bool,
    ) -> Result<f64> {
        ensure_finite_beta(beta)?;
        if y.len() != self.grid.dim() {
            return Err(Error::DimensionMismatch { expected: self.grid.dim(), got: y.len() });
        }
        let d = self.ifs.branch_count();
        let mut images = Vec::with_capacity(d);
        for j in 0..d {
            images.push(self.ifs.maps()[j].apply(y));
        }
        let mut acc = 0.0;
        for j in 0..d {
            let h = self.potential.eval(j as u8 + 1, &images[j])?;
            let mut term = h.powf(-beta) * f.eval(&images[j]);
            if corrected {
                let e = images
                    .iter()
                    .filter(|img| crate::ifs::euclidean(img, &images[j]) <= self.opts.branch_tol)
                    .count();
                term /= e as f64;
            }
            acc += term;
        }
        Ok(acc)
    }

    /// Certified upper bound on the sup-norm operator norm of the transfer
    /// operator: the exact weight sum maximized over the grid, plus the
    /// worst the weights can vary between a point of the attractor and its
    /// nearest grid point.
    pub fn transfer_norm_bound(&self, beta: f64) -> Result<f64> {
        ensure_finite_beta(beta)?;
        let n = self.grid.len();
        let d = self.ifs.branch_count();
        let mut sup = 0.0f64;
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..d {
                acc += self.h_img[j * n + i].powf(-beta);
            }
            sup = sup.max(acc);
        }
        let mut bump = 0.0;
        for j in 0..d {
            let var = self
                .potential
                .variation_over_branch(j as u8 + 1, self.interp_allowance)?;
            let lo = (self.h_lo[j] - var).max(1.0 + 1e-12);
            let hi = self.h_hi[j] + var;
            bump += beta.abs() * lo.powf(-beta - 1.0).max(hi.powf(-beta - 1.0)) * var;
        }
        Ok(sup + bump)
    }

    /// Adjoint of `transfer` on measures: pushes each atom through every
    /// map with weight `h^(-beta)` at the exact image, then merges within
    /// the grid deduplication tolerance.
    pub fn dual_transfer(&self, mu: &DiscreteMeasure, beta: f64) -> Result<DiscreteMeasure> {
        ensure_finite_beta(beta)?;
        self.expand_measure(mu, beta, false)
    }

    /// The corrected dual: like `dual_transfer` but each pushed weight is
    /// divided by the image multiplicity. At `beta` infinite every weight
    /// `h^(-beta)` vanishes (`h > 1`), so the result is the zero measure.
    pub fn corrected_dual(&self, mu: &DiscreteMeasure, beta: Beta) -> Result<DiscreteMeasure> {
        match beta {
            Beta::Infinite => Ok(DiscreteMeasure::zero(mu.dim())),
            Beta::Finite(b) => self.expand_measure(mu, b, true),
        }
    }

    /// Corrected dual with no merging at all; callers control atom growth.
    pub(crate) fn corrected_dual_unmerged(
        &self,
        mu: &DiscreteMeasure,
        beta: f64,
    ) -> Result<DiscreteMeasure> {
        ensure_finite_beta(beta)?;
        self.expand_with_merge(mu, beta, true, 0.0)
    }

    fn expand_measure(
        &self,
        mu: &DiscreteMeasure,
        beta: f64,
        corrected: bool,
    ) -> Result<DiscreteMeasure> {
        self.expand_with_merge(mu, beta, corrected, self.grid.dedup_tolerance())
    }

    fn expand_with_merge(
        &self,
        mu: &DiscreteMeasure,
        beta: f64,
        corrected: bool,
        merge_tol: f64,
    ) -> Result<DiscreteMeasure> {
        if mu.dim() != self.grid.dim() {
            return Err(Error::DimensionMismatch { expected: self.grid.dim(), got: mu.dim() });
        }
        let d = self.ifs.branch_count();
        if mu.len().saturating_mul(d) > self.opts.atom_cap {
            return Err(Error::ResourceCap(format!(
                "dual expansion would create {} atoms, beyond the cap of {}; \
                 a larger merge tolerance keeps the count down",
                mu.len() * d,
                self.opts.atom_cap
            )));
        }
        let mut atoms = Vec::with_capacity(mu.len() * d);
        for atom in mu.atoms() {
            let x = atom.position.coords();
            let mut images = Vec::with_capacity(d);
            for j in 0..d {
                images.push(self.ifs.maps()[j].apply(x));
            }
            for j in 0..d {
                let h = self.potential.eval(j as u8 + 1, &images[j])?;
                let mut w = atom.weight * h.powf(-beta);
                if corrected {
                    let e = images
                        .iter()
                        .filter(|img| {
                            crate::ifs::euclidean(img, &images[j]) <= self.opts.branch_tol
                        })
                        .count();
                    w /= e as f64;
                }
                atoms.push(Atom {
                    position: crate::ifs::Point::new(images[j].clone())?,
                    weight: w,
                });
            }
        }
        DiscreteMeasure::new(self.grid.dim(), atoms, merge_tol)
    }

    /// Spectral radius and positive eigenfunction by power iteration in the
    /// sup norm.
    pub fn spectral_radius(&self, beta: f64, opts: &PowerOptions) -> Result<PowerIterationResult> {
        ensure_finite_beta(beta)?;
        self.check_interpolation()?;
        let n = self.grid.len();
        let rtol = opts.rtol();
        let max_iter = opts.max_iter();

        let mut a = match &opts.warm_start {
            Some(start) => {
                self.check_same_grid(start)?;
                start.values().to_vec()
            }
            None => vec![1.0; n],
        };
        let sup = a.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        if !(sup > 0.0 && sup.is_finite()) {
            // The zero function spans no direction to iterate on.
            return Err(Error::Convergence {
                iterations: 0,
                last_residual: f64::INFINITY,
                history: Vec::new(),
            });
        }
        for v in &mut a {
            *v /= sup;
        }

        let w = self.weights(beta);
        let mut b = vec![0.0; n];
        let mut history = Vec::new();
        let mut converged = None;
        for iter in 1..=max_iter {
            self.apply_weights(&a, &w, false, &mut b);
            let rho = b.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
            if !(rho.is_finite() && rho > 0.0) {
                return Err(Error::NumericalInstability(format!(
                    "power iteration produced sup norm {rho} at beta {beta}"
                )));
            }
            let mut residual = 0.0f64;
            for i in 0..n {
                residual = residual.max((b[i] - rho * a[i]).abs());
            }
            history.push(residual);
            for i in 0..n {
                a[i] = b[i] / rho;
            }
            if residual <= rtol * rho {
                converged = Some(iter);
                break;
            }
        }
        let Some(iterations) = converged else {
            return Err(Error::Convergence {
                iterations: max_iter,
                last_residual: *history.last().expect("max_iter is positive"),
                history,
            });
        };

        // Report the residual of the pair actually returned.
        self.apply_weights(&a, &w, false, &mut b);
        let rho = b.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        let mut residual = 0.0f64;
        for i in 0..n {
            residual = residual.max((b[i] - rho * a[i]).abs());
        }
        Ok(PowerIterationResult {
            rho,
            k: GridFunction::new(self.grid.clone(), a)?,
            residual,
            iterations,
            history,
        })
    }

    /// Residual of `tau` as an eigenmeasure: the dual pairing uses exact
    /// images and exact weights, so nothing here depends on the grid reads
    /// that produced `tau`.
    fn dual_pairing_residual(
        &self,
        tau: &DiscreteMeasure,
        beta: f64,
        rho: f64,
        suite: &[TestFunction],
    ) -> Result<f64> {
        let d = self.ifs.branch_count();
        let dim = self.grid.dim();
        let fixed_weight: Vec<Option<f64>> = (0..d)
            .map(|j| self.potential.constant_value(j).map(|v| v.powf(-beta)))
            .collect();
        let mut lhs = vec![0.0f64; suite.len()];
        let mut rhs = vec![0.0f64; suite.len()];
        let mut img = vec![0.0f64; dim];
        for atom in tau.atoms() {
            let x = atom.position.coords();
            for j in 0..d {
                self.ifs.maps()[j].apply_into(x, &mut img);
                let hw = match fixed_weight[j] {
                    Some(w) => w,
                    None => self.potential.eval(j as u8 + 1, &img)?.powf(-beta),
                };
                for (acc, f) in lhs.iter_mut().zip(suite) {
                    *acc += atom.weight * hw * f.eval(&img);
                }
            }
            for (acc, f) in rhs.iter_mut().zip(suite) {
                *acc += atom.weight * f.eval(x);
            }
        }
        let mut worst = 0.0f64;
        for (l, r) in lhs.iter().zip(&rhs) {
            worst = worst.max((l - rho * r).abs());
        }
        Ok(worst)
    }

    /// Eigenmeasure of the dual operator at `(beta, rho)` by iterating the
    /// normalized dual from a point mass at the first grid slot.
    ///
    /// The default path buckets mass by grid cell while tracking each
    /// cell's exact weighted centroid: mass is conserved exactly and
    /// integration errors against smooth functions are second order in the
    /// cell size. The exact path keeps pushforward atoms, optionally
    /// coarsened each step, and trips the atom cap rather than thrash.
    pub fn eigenmeasure(
        &self,
        beta: f64,
        rho: f64,
        k: &GridFunction,
        opts: &EigenmeasureOptions,
    ) -> Result<EigenmeasureResult> {
        ensure_finite_beta(beta)?;
        self.check_same_grid(k)?;
        self.check_interpolation()?;
        if !(rho.is_finite() && rho > 0.0) {
            return Err(Error::InvalidInput(format!("rho {rho} must be positive and finite")));
        }
        if !(k.min_value() > 0.0) {
            return Err(Error::InvalidInput(
                "eigenfunction must be strictly positive for measure normalization".into(),
            ));
        }

        let (raw, iterations) = match opts.merge_tol {
            None => self.eigenmeasure_dense(beta, rho, opts)?,
            Some(eps) => self.eigenmeasure_exact(beta, rho, eps, opts)?,
        };

        // The iteration limit of dual-normalized point masses is k(x0)
        // times the eigenmeasure; divide it out, then normalize to a
        // probability measure.
        let k_x0 = k.value(self.start_slot());
        let tau = raw.scaled(1.0 / k_x0)?.normalized()?;

        let suite = match &opts.suite {
            Some(s) => s.clone(),
            None => self.verification_suite(),
        };
        let residual = self.dual_pairing_residual(&tau, beta, rho, &suite)?;
        Ok(EigenmeasureResult { tau, residual, iterations })
    }

    /// Starting slot for measure iterations: the first grid slot, which is
    /// deterministic because grids are coordinate-sorted.
    fn start_slot(&self) -> usize {
        0
    }

    fn eigenmeasure_dense(
        &self,
        beta: f64,
        rho: f64,
        opts: &EigenmeasureOptions,
    ) -> Result<(DiscreteMeasure, usize)> {
        let n = self.grid.len();
        let dim = self.grid.dim();
        let d = self.ifs.branch_count();
        let rtol = opts.rtol();
        let max_iter = opts.max_iter();
        let moments = moment_suite(dim);

        let mut mass = vec![0.0f64; n];
        let mut pos = vec![0.0f64; n * dim];
        let s0 = self.start_slot();
        mass[s0] = 1.0;
        pos[s0 * dim..(s0 + 1) * dim].copy_from_slice(self.grid.point(s0));

        let mut new_mass = vec![0.0f64; n];
        let mut new_pos = vec![0.0f64; n * dim];
        let mut centroid = vec![0.0f64; dim];
        let mut img = vec![0.0f64; dim];
        let mut prev: Option<Vec<f64>> = None;
        let mut history = Vec::new();
        let mut converged = None;

        // Branches with position-independent weights contribute the same
        // factor at every atom; evaluate those once.
        let fixed_weight: Vec<Option<f64>> = (0..d)
            .map(|j| self.potential.constant_value(j).map(|v| v.powf(-beta)))
            .collect();

        for iter in 1..=max_iter {
            new_mass.iter_mut().for_each(|v| *v = 0.0);
            new_pos.iter_mut().for_each(|v| *v = 0.0);
            for i in 0..n {
                let m = mass[i];
                if m == 0.0 {
                    continue;
                }
                for (a, c) in centroid.iter_mut().zip(&pos[i * dim..(i + 1) * dim]) {
                    *a = c / m;
                }
                for j in 0..d {
                    self.ifs.maps()[j].apply_into(&centroid, &mut img);
                    let hw = match fixed_weight[j] {
                        Some(w) => w,
                        None => self.potential.eval_raw(j, &img).powf(-beta),
                    };
                    let w = m * hw / rho;
                    let t = self.img_nn[j * n + i] as usize;
                    new_mass[t] += w;
                    for (acc, &v) in new_pos[t * dim..(t + 1) * dim].iter_mut().zip(&img) {
                        *acc += w * v;
                    }
                }
            }
            std::mem::swap(&mut mass, &mut new_mass);
            std::mem::swap(&mut pos, &mut new_pos);

            let mut current = vec![0.0f64; moments.len()];
            for i in 0..n {
                let m = mass[i];
                if m == 0.0 {
                    continue;
                }
                for (a, c) in centroid.iter_mut().zip(&pos[i * dim..(i + 1) * dim]) {
                    *a = c / m;
                }
                for (acc, f) in current.iter_mut().zip(&moments) {
                    *acc += m * f.eval(&centroid);
                }
            }
            if let Some(p) = &prev {
                let delta = moment_delta(p, &current);
                history.push(delta);
                if delta <= 0.5 * rtol {
                    converged = Some(iter);
                    break;
                }
            }
            prev = Some(current);
        }
        let Some(iterations) = converged else {
            return Err(Error::Convergence {
                iterations: max_iter,
                last_residual: history.last().copied().unwrap_or(f64::INFINITY),
                history,
            });
        };

        let mut atoms = Vec::new();
        for i in 0..n {
            let m = mass[i];
            if m > 0.0 {
                let c: Vec<f64> = pos[i * dim..(i + 1) * dim].iter().map(|v| v / m).collect();
                atoms.push(Atom { position: crate::ifs::Point::new(c)?, weight: m });
            }
        }
        Ok((DiscreteMeasure::new(dim, atoms, 0.0)?, iterations))
    }

    fn eigenmeasure_exact(
        &self,
        beta: f64,
        rho: f64,
        eps: f64,
        opts: &EigenmeasureOptions,
    ) -> Result<(DiscreteMeasure, usize)> {
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "merge tolerance {eps} must be non-negative and finite"
            )));
        }
        let dim = self.grid.dim();
        let rtol = opts.rtol();
        let max_iter = opts.max_iter();
        let moments = moment_suite(dim);

        let mut mu = DiscreteMeasure::dirac(self.grid.point_at(self.start_slot()));
        let mut prev: Option<Vec<f64>> = None;
        let mut history = Vec::new();
        let mut converged = None;
        for iter in 1..=max_iter {
            let pushed = self.dual_transfer(&mu, beta)?.scaled(1.0 / rho)?;
            mu = if eps > 0.0 { pushed.coarsen_cells(eps)? } else { pushed };
            if mu.len() > self.opts.atom_cap {
                return Err(Error::ResourceCap(format!(
                    "eigenmeasure iteration reached {} atoms, beyond the cap of {}; \
                     a larger merge tolerance keeps the count down",
                    mu.len(),
                    self.opts.atom_cap
                )));
            }
            let current: Vec<f64> = moments.iter().map(|f| mu.integrate(|x| f.eval(x))).collect();
            if let Some(p) = &prev {
                let delta = moment_delta(p, &current);
                history.push(delta);
                if delta <= 0.5 * rtol {
                    converged = Some(iter);
                    break;
                }
            }
            prev = Some(current);
        }
        let Some(iterations) = converged else {
            return Err(Error::Convergence {
                iterations: max_iter,
                last_residual: history.last().copied().unwrap_or(f64::INFINITY),
                history,
            });
        };
        Ok((mu, iterations))
    }

    /// Full eigentriple at `beta`, normalized so `tau` is a probability
    /// measure and `tau(k) = 1`.
    pub fn solve_rpf(
        &self,
        beta: f64,
        power: &PowerOptions,
        eigen: &EigenmeasureOptions,
    ) -> Result<RpfSolution> {
        let p = self.spectral_radius(beta, power)?;
        let e = self.eigenmeasure(beta, p.rho, &p.k, eigen)?;
        let scale = e.tau.integrate(|x| p.k.eval_nearest(x));
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::NumericalInstability(format!(
                "eigenmeasure pairs to {scale} against the eigenfunction"
            )));
        }
        let k = p.k.map_values(|v| v / scale)?;
        let tau_of_k = e.tau.integrate(|x| k.eval_nearest(x));
        Ok(RpfSolution {
            beta,
            rho: p.rho,
            k,
            tau: e.tau,
            // Rescaling an eigenpair scales its defect linearly.
            residual_k: p.residual / scale,
            residual_tau: e.residual,
            tau_of_k,
            power_iterations: p.iterations,
            measure_iterations: e.iterations,
        })
    }

    /// Upper bound on `|transfer^n(a) - word_sum(a, ., n)|` at grid points,
    /// for `a` sampled from a function with the given Lipschitz bound and
    /// sup norm.
    ///
    /// Both sides read `a` by nearest grid point; the iterated slot-based
    /// side additionally interpolates every intermediate level. One level
    /// of that costs `M * (E + omega(delta))` where `M` bounds the operator
    /// norm, `E` is the error carried in, `omega` is the modulus of the
    /// current level (an affine `K t + J` we track alongside), and `delta`
    /// is the interpolation allowance. Every term is proportional to
    /// `delta`, so the bound contracts by the factor `c` when the grid gets
    /// one level deeper.
    pub fn oracle_error_bound(&self, lip_a: f64, sup_a: f64, n: usize, beta: f64) -> f64 {
        let delta = self.interp_allowance;
        let c = self.grid.max_contraction();
        let d = self.ifs.branch_count();

        let mut m_norm = 0.0f64;
        let mut lambda = 0.0f64;
        // Weight slopes are only ever applied to pairs at distance
        // >= c^n * delta; the modulus quotient of a concave modulus is
        // largest there.
        let scale = (c.powi(n as i32) * delta).max(1e-300);
        for j in 0..d {
            let var = self
                .potential
                .variation_over_branch(j as u8 + 1, delta)
                .unwrap_or(0.0);
            let lo = (self.h_lo[j] - var).max(1.0 + 1e-12);
            let hi = self.h_hi[j] + var;
            m_norm += lo.powf(-beta).max(hi.powf(-beta));
            let slope = self.potential.variation_over_branch(j as u8 + 1, scale).unwrap_or(0.0)
                / scale;
            lambda += beta.abs() * lo.powf(-beta - 1.0).max(hi.powf(-beta - 1.0)) * slope;
        }

        let mut e = 0.0f64;
        let mut k_slope = lip_a;
        let mut jump = 2.0 * lip_a * delta;
        let mut sup = sup_a;
        for _ in 0..n {
            e = m_norm * (e + k_slope * delta + jump);
            let next_k = m_norm * c * k_slope + lambda * sup;
            jump *= m_norm;
            k_slope = next_k;
            sup *= m_norm;
        }
        e
    }
}

/// Largest relative change between two moment vectors.
fn moment_delta(prev: &[f64], current: &[f64]) -> f64 {
    prev.iter()
        .zip(current)
        .map(|(p, c)| (p - c).abs() / (1.0 + c.abs()))
        .fold(0.0f64, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::branch::branch_sets;
    use crate::grid::{attractor_grid, GridOptions};
    use crate::ifs::Point;
    use crate::potential::PotentialKind;

    fn engine(name: &str, depth: usize, family: PotentialFamily) -> RuelleEngine {
        let ifs = IfsSystem::preset(name).unwrap();
        let base = IfsSystem::preset_base_point(name).unwrap();
        let grid = attractor_grid(&ifs, depth, &base, &GridOptions::default()).unwrap();
        let branch = branch_sets(&ifs, &grid, 1e-9).unwrap();
        RuelleEngine::new(ifs, family, branch, grid, EngineOptions::default()).unwrap()
    }

    fn tent_euler(depth: usize) -> RuelleEngine {
        engine("tent", depth, PotentialFamily::euler(2).unwrap())
    }

    fn cantor_two_four(depth: usize) -> RuelleEngine {
        let family = PotentialFamily::new(vec![
            PotentialKind::Constant { value: 2.0 },
            PotentialKind::Constant { value: 4.0 },
        ])
        .unwrap();
        engine("cantor3", depth, family)
    }

    #[test]
    fn transfer_of_one_matches_weight_sum() {
        let eng = tent_euler(8);
        let one = GridFunction::constant(eng.grid(), 1.0).unwrap();
        for beta in [0.0, 0.5, 1.0, 2.0] {
            let out = eng.transfer(&one, beta).unwrap();
            let expected = 2.0 * (-beta).exp();
            for &v in out.values() {
                assert!((v - expected).abs() < 1e-14, "beta {beta}: {v} vs {expected}");
            }
        }
    }

    #[test]
    fn cantor_transfer_of_one() {
        let eng = cantor_two_four(8);
        let one = GridFunction::constant(eng.grid(), 1.0).unwrap();
        let out = eng.transfer(&one, 1.0).unwrap();
        for &v in out.values() {
            assert!((v - 0.75).abs() < 1e-14);
        }
    }

    #[test]
    fn corrected_transfer_divides_at_branch_point() {
        // At the branched value y = 1 both tent maps land on 0.5, so the
        // corrected sum halves each of the two equal terms.
        let eng = tent_euler(8);
        let a = GridFunction::from_fn(eng.grid(), |x| 1.0 + x[0]).unwrap();
        let beta = 0.7;
        let l = eng.transfer_at(&a, &[1.0], beta).unwrap();
        let s = eng.corrected_transfer_at(&a, &[1.0], beta).unwrap();
        assert!((l - 2.0 * s).abs() < 1e-14);
        // Away from the branched value the two operators agree exactly.
        let l0 = eng.transfer_at(&a, &[0.25], beta).unwrap();
        let s0 = eng.corrected_transfer_at(&a, &[0.25], beta).unwrap();
        assert_eq!(l0, s0);
    }

    #[test]
    fn word_sum_matches_closed_form_for_constants() {
        // With h = e everywhere, each of the d^n words carries weight
        // e^(-n beta), so the sum is (d e^(-beta))^n.
        let eng = tent_euler(8);
        let one = GridFunction::constant(eng.grid(), 1.0).unwrap();
        for (n, beta) in [(1, 0.5), (2, 1.0), (5, 0.25)] {
            let v = eng.word_sum(&one, &[0.375], n, beta).unwrap();
            let expected = (2.0 * (-beta).exp()).powi(n as i32);
            assert!((v - expected).abs() < 1e-12 * expected.max(1.0));
        }
        let eng = cantor_two_four(8);
        let one = GridFunction::constant(eng.grid(), 1.0).unwrap();
        let v = eng.word_sum(&one, &[0.0], 2, 1.0).unwrap();
        assert!((v - 0.5625).abs() < 1e-14);
    }

    #[test]
    fn word_sum_respects_cap() {
        let opts = EngineOptions { word_cap: 8, ..EngineOptions::default() };
        let ifs = IfsSystem::preset("tent").unwrap();
        let base = IfsSystem::preset_base_point("tent").unwrap();
        let grid = attractor_grid(&ifs, 4, &base, &GridOptions::default()).unwrap();
        let branch = branch_sets(&ifs, &grid, 1e-9).unwrap();
        let eng = RuelleEngine::new(ifs, PotentialFamily::euler(2).unwrap(), branch, grid, opts)
            .unwrap();
        let one = GridFunction::constant(eng.grid(), 1.0).unwrap();
        assert!(eng.word_sum(&one, &[0.0], 3, 1.0).is_ok());
        let err = eng.word_sum(&one, &[0.0], 4, 1.0).unwrap_err();
        assert!(matches!(err, Error::ResourceCap(_)));
    }

    #[test]
    fn dual_transfer_on_point_masses() {
        let eng = tent_euler(8);
        let beta = 1.3;
        // delta_0 pushes to e^(-beta) (delta_0 + delta_1).
        let mu = DiscreteMeasure::dirac(Point::scalar(0.0));
        let out = eng.dual_transfer(&mu, beta).unwrap();
        assert_eq!(out.len(), 2);
        let w = (-beta).exp();
        assert!((out.atoms()[0].weight - w).abs() < 1e-15);
        assert!((out.atoms()[1].weight - w).abs() < 1e-15);
        assert_eq!(out.atoms()[0].position.coords(), &[0.0]);
        assert_eq!(out.atoms()[1].position.coords(), &[1.0]);

        // delta_1 pushes both branches onto 0.5; the merged atom carries
        // 2 e^(-beta).
        let mu = DiscreteMeasure::dirac(Point::scalar(1.0));
        let out = eng.dual_transfer(&mu, beta).unwrap();
        assert_eq!(out.len(), 1);
        assert!((out.atoms()[0].weight - 2.0 * w).abs() < 1e-15);
        assert_eq!(out.atoms()[0].position.coords(), &[0.5]);
    }

    #[test]
    fn corrected_dual_divides_by_multiplicity() {
        let eng = tent_euler(8);
        let beta = 1.3f64;
        let w = (-beta).exp();
        let mu = DiscreteMeasure::dirac(Point::scalar(1.0));
        let out = eng.corrected_dual(&mu, Beta::Finite(beta)).unwrap();
        assert_eq!(out.len(), 1);
        assert!((out.atoms()[0].weight - w).abs() < 1e-15);

        // Multiplicity is 1 away from the branch structure.
        let mu = DiscreteMeasure::dirac(Point::scalar(0.0));
        let out = eng.corrected_dual(&mu, Beta::Finite(beta)).unwrap();
        assert_eq!(out.len(), 2);
        assert!((out.atoms()[0].weight - w).abs() < 1e-15);

        // The infinite-temperature corrected dual is identically zero.
        let out = eng.corrected_dual(&mu, Beta::Infinite).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn spectral_radius_constant_potential() {
        let eng = tent_euler(8);
        for beta in [0.0, 0.5, 2.0f64.ln()] {
            let r = eng.spectral_radius(beta, &PowerOptions::default()).unwrap();
            let expected = 2.0 * (-beta).exp();
            assert!((r.rho - expected).abs() < 1e-12, "{} vs {expected}", r.rho);
            assert!(r.residual <= 1e-12);
            assert!(r.k.min_value() > 0.0);
        }
        let eng = cantor_two_four(8);
        let r = eng.spectral_radius(1.0, &PowerOptions::default()).unwrap();
        assert!((r.rho - 0.75).abs() < 1e-12);
    }

    #[test]
    fn zero_start_is_rejected() {
        let eng = tent_euler(4);
        let zero = GridFunction::constant(eng.grid(), 0.0).unwrap();
        let opts = PowerOptions { warm_start: Some(zero), ..PowerOptions::default() };
        let err = eng.spectral_radius(0.5, &opts).unwrap_err();
        assert!(matches!(err, Error::Convergence { iterations: 0, .. }));
    }

    #[test]
    fn eigenmeasure_tent_at_critical_beta_is_lebesgue_like() {
        // At beta = ln 2 with h = e, rho = 1 and the eigenmeasure is the
        // uniform measure on [0, 1]: first moment 1/2, second moment 1/3.
        let eng = tent_euler(10);
        let beta = 2.0f64.ln();
        let p = eng.spectral_radius(beta, &PowerOptions::default()).unwrap();
        let e = eng.eigenmeasure(beta, p.rho, &p.k, &EigenmeasureOptions::default()).unwrap();
        assert!((e.tau.total_mass() - 1.0).abs() < 1e-12);
        let m1 = e.tau.integrate(|x| x[0]);
        let m2 = e.tau.integrate(|x| x[0] * x[0]);
        assert!((m1 - 0.5).abs() < 2e-4, "first moment {m1}");
        assert!((m2 - 1.0 / 3.0).abs() < 2e-4, "second moment {m2}");
        assert!(e.residual < 1e-4, "residual {}", e.residual);
    }

    #[test]
    fn exact_and_dense_eigenmeasures_agree() {
        let eng = tent_euler(8);
        let beta = 2.0f64.ln();
        let p = eng.spectral_radius(beta, &PowerOptions::default()).unwrap();
        let dense = eng.eigenmeasure(beta, p.rho, &p.k, &EigenmeasureOptions::default()).unwrap();
        let exact_opts =
            EigenmeasureOptions { merge_tol: Some(1e-4), ..EigenmeasureOptions::default() };
        let exact = eng.eigenmeasure(beta, p.rho, &p.k, &exact_opts).unwrap();
        let d1 = dense.tau.integrate(|x| x[0]);
        let e1 = exact.tau.integrate(|x| x[0]);
        assert!((d1 - e1).abs() < 1e-3, "dense {d1} vs exact {e1}");
    }

    #[test]
    fn solve_rpf_normalizes_tau_of_k() {
        let eng = cantor_two_four(10);
        // Critical parameter of the (2, 4) family: 2^(-b) + 4^(-b) = 1.
        let beta = 0.694241913630617;
        let sol = eng
            .solve_rpf(beta, &PowerOptions::default(), &EigenmeasureOptions::default())
            .unwrap();
        assert!((sol.rho - 1.0).abs() < 1e-10);
        assert!((sol.tau_of_k - 1.0).abs() < 1e-10);
        assert!((sol.tau.total_mass() - 1.0).abs() < 1e-12);
        // Self-similarity of the eigenmeasure gives
        // m1 = (1/3) m1 (2^-b + 4^-b) + (2/3) 4^-b, and the bracket is 1 at
        // the critical parameter, so m1 = 4^-b exactly.
        let expected = 4.0f64.powf(-beta);
        let m1 = sol.tau.integrate(|x| x[0]);
        assert!((m1 - expected).abs() < 2e-4, "{m1} vs {expected}");
    }

    #[test]
    fn oracle_bound_shrinks_with_depth() {
        let shallow = tent_euler(8);
        let deep = tent_euler(9);
        for beta in [0.0, 0.7] {
            let bs = shallow.oracle_error_bound(1.0, 1.0, 6, beta);
            let bd = deep.oracle_error_bound(1.0, 1.0, 6, beta);
            assert!(bs > 0.0);
            assert!(bd <= 0.51 * bs, "depth 9 bound {bd} vs depth 8 bound {bs}");
        }
    }

    #[test]
    fn word_sum_agrees_with_iterated_transfer() {
        let eng = tent_euler(10);
        let f = TestFunction::Coordinate { axis: 0 };
        let a = GridFunction::sample(eng.grid(), &f).unwrap();
        let beta = 0.9;
        let n = 5;
        let mut iterated = a.clone();
        for _ in 0..n {
            iterated = eng.transfer(&iterated, beta).unwrap();
        }
        let bound = eng.oracle_error_bound(1.0, 1.0, n, beta);
        for slot in (0..eng.grid().len()).step_by(97) {
            let y = eng.grid().point(slot).to_vec();
            let direct = eng.word_sum(&a, &y, n, beta).unwrap();
            let diff = (iterated.value(slot) - direct).abs();
            assert!(diff <= bound, "slot {slot}: diff {diff} vs bound {bound}");
        }
    }

    #[test]
    fn incompatible_potential_is_refused() {
        let ifs = IfsSystem::preset("tent").unwrap();
        let base = IfsSystem::preset_base_point("tent").unwrap();
        let grid = attractor_grid(&ifs, 6, &base, &GridOptions::default()).unwrap();
        let branch = branch_sets(&ifs, &grid, 1e-9).unwrap();
        let family = PotentialFamily::new(vec![
            PotentialKind::Constant { value: 2.0 },
            PotentialKind::Constant { value: 3.0 },
        ])
        .unwrap();
        let err =
            RuelleEngine::new(ifs, family, branch, grid, EngineOptions::default()).unwrap_err();
        assert!(matches!(err, Error::IncompatiblePotential(_)));
    }

    #[test]
    fn beta_serde_roundtrip() {
        let b: Beta = serde_json::from_str("1.5").unwrap();
        assert_eq!(b, Beta::Finite(1.5));
        let b: Beta = serde_json::from_str("\"infinity\"").unwrap();
        assert_eq!(b, Beta::Infinite);
        assert_eq!(serde_json::to_string(&Beta::Finite(0.5)).unwrap(), "0.5");
        assert_eq!(serde_json::to_string(&Beta::Infinite).unwrap(), "\"infinity\"");
        assert!(serde_json::from_str::<Beta>("\"warm\"").is_err());
    }

    #[test]
    fn affine_potential_engine_round_trip() {
        let family = PotentialFamily::new(vec![
            PotentialKind::AffineInX { gradient: vec![0.5], offset: 2.0 },
            PotentialKind::AffineInX { gradient: vec![-0.5], offset: 3.0 },
        ])
        .unwrap();
        // Values at the branched value y = 1: 2.5 and 2.5, compatible.
        let eng = engine("tent", 8, family);
        let one = GridFunction::constant(eng.grid(), 1.0).unwrap();
        let out = eng.transfer(&one, 1.0).unwrap();
        // At y = 0: images 0 and 1, h values 2.0 and 2.5.
        let at0 = out.eval_at(&[0.0]).unwrap();
        assert!((at0 - (1.0 / 2.0 + 1.0 / 2.5)).abs() < 1e-12);
        let r = eng.spectral_radius(0.5, &PowerOptions::default()).unwrap();
        assert!(r.rho > 0.0 && r.residual <= 1e-9);
    }
}
