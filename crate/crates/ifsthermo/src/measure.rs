//! Finitely supported measures with non-negative weights.
//!
//! Every constructor and operation leaves the atom list sorted
//! lexicographically by position, so iteration order, integration order and
//! serialized output are functions of the measure's value alone. Weight
//! sums are taken sequentially in that order; two equal measures therefore
//! produce bit-identical totals.

use serde::ser::{SerializeSeq, SerializeStruct};
use serde::{Serialize, Serializer};
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::ifs::{lex_cmp, Point};
use crate::index::PointIndex;

/// A weighted point. Weights are finite and strictly positive; zero-weight
/// atoms are dropped at construction.
#[derive(Clone, Debug, PartialEq)]
pub struct Atom {
    pub position: Point,
    pub weight: f64,
}

impl Serialize for Atom {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut seq = serializer.serialize_seq(Some(2))?;
        seq.serialize_element(self.position.coords())?;
        seq.serialize_element(&self.weight)?;
        seq.end()
    }
}

/// A non-negative measure supported on finitely many points.
#[derive(Clone, Debug)]
pub struct DiscreteMeasure {
    dim: usize,
    atoms: Vec<Atom>,
    total_mass: f64,
}

impl DiscreteMeasure {
    /// Builds a measure from raw atoms. Atoms closer than `merge_tol` are
    /// merged onto the first-seen representative in lexicographic order,
    /// with weights added; pass `0.0` to keep all distinct positions.
    pub fn new(dim: usize, atoms: Vec<Atom>, merge_tol: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("measure dimension must be positive".into()));
        }
        if !(merge_tol >= 0.0 && merge_tol.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "merge tolerance {merge_tol} must be non-negative and finite"
            )));
        }
        let mut atoms = atoms;
        for atom in &atoms {
            if atom.position.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: atom.position.dim() });
            }
            if !(atom.weight.is_finite() && atom.weight >= 0.0) {
                return Err(Error::InvalidInput(format!(
                    "atom weight {} must be finite and non-negative",
                    atom.weight
                )));
            }
        }
        atoms.retain(|a| a.weight > 0.0);
        atoms.sort_by(|a, b| lex_cmp(a.position.coords(), b.position.coords()));
        let atoms = if merge_tol > 0.0 { merge_sorted(dim, atoms, merge_tol) } else { atoms };
        let total_mass = atoms.iter().map(|a| a.weight).sum();
        Ok(DiscreteMeasure { dim, atoms, total_mass })
    }

    /// The zero measure: no atoms, mass zero.
    pub fn zero(dim: usize) -> Self {
        DiscreteMeasure { dim: dim.max(1), atoms: Vec::new(), total_mass: 0.0 }
    }

    /// Unit point mass at `point`.
    pub fn dirac(point: Point) -> Self {
        let dim = point.dim();
        DiscreteMeasure { dim, atoms: vec![Atom { position: point, weight: 1.0 }], total_mass: 1.0 }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    /// Integral of `f`, summed in atom order.
    pub fn integrate<F: Fn(&[f64]) -> f64>(&self, f: F) -> f64 {
        self.atoms.iter().map(|a| a.weight * f(a.position.coords())).sum()
    }

    /// Mass carried by atoms within `tol` of any of `points`.
    pub fn mass_near(&self, points: &[Point], tol: f64) -> f64 {
        self.atoms
            .iter()
            .filter(|a| {
                points
                    .iter()
                    .any(|p| crate::ifs::euclidean(a.position.coords(), p.coords()) <= tol)
            })
            .map(|a| a.weight)
            .sum()
    }

    /// Scales every weight by `factor >= 0`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor.is_finite() && factor >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "scale factor {factor} must be finite and non-negative"
            )));
        }
        if factor == 0.0 {
            return Ok(DiscreteMeasure::zero(self.dim));
        }
        let atoms = self
            .atoms
            .iter()
            .map(|a| Atom { position: a.position.clone(), weight: a.weight * factor })
            .collect();
        Ok(DiscreteMeasure { dim: self.dim, atoms, total_mass: self.total_mass * factor })
    }

    /// Rescales to total mass one. The zero measure has no normalization.
    pub fn normalized(&self) -> Result<Self> {
        if self.total_mass <= 0.0 {
            return Err(Error::InvalidInput(
                "cannot normalize a measure of zero total mass".into(),
            ));
        }
        let mut out = self.scaled(1.0 / self.total_mass)?;
        out.total_mass = out.atoms.iter().map(|a| a.weight).sum();
        Ok(out)
    }

    /// Merges atoms within `tol` of an earlier atom onto it, adding weights.
    /// Greedy in lexicographic order, so the result is deterministic; kept
    /// positions are unchanged (no centroid drift).
    pub fn merge_within(&self, tol: f64) -> Result<Self> {
        if !(tol > 0.0 && tol.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "merge tolerance {tol} must be positive and finite"
            )));
        }
        let atoms = merge_sorted(self.dim, self.atoms.clone(), tol);
        let total_mass = atoms.iter().map(|a| a.weight).sum();
        Ok(DiscreteMeasure { dim: self.dim, atoms, total_mass })
    }

    /// Replaces all atoms inside each axis-aligned cell of side `cell` by a
    /// single atom at their weighted centroid. Mass is preserved exactly;
    /// positions move by at most the cell diagonal.
    pub fn coarsen_cells(&self, cell: f64) -> Result<Self> {
        if !(cell > 0.0 && cell.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "cell size {cell} must be positive and finite"
            )));
        }
        let mut buckets: HashMap<Vec<i64>, (f64, Vec<f64>)> = HashMap::new();
        for atom in &self.atoms {
            let key: Vec<i64> = atom
                .position
                .coords()
                .iter()
                .map(|&c| (c / cell).floor() as i64)
                .collect();
            let entry = buckets.entry(key).or_insert_with(|| (0.0, vec![0.0; self.dim]));
            entry.0 += atom.weight;
            for (acc, &c) in entry.1.iter_mut().zip(atom.position.coords()) {
                *acc += atom.weight * c;
            }
        }
        let mut atoms = Vec::with_capacity(buckets.len());
        for (_, (w, wx)) in buckets {
            let position = Point::new(wx.iter().map(|v| v / w).collect())?;
            atoms.push(Atom { position, weight: w });
        }
        // HashMap order is arbitrary; restore the canonical order before
        // anything downstream can observe it.
        atoms.sort_by(|a, b| lex_cmp(a.position.coords(), b.position.coords()));
        let total_mass = atoms.iter().map(|a| a.weight).sum();
        Ok(DiscreteMeasure { dim: self.dim, atoms, total_mass })
    }

    /// Convex combination `lambda * self + (1 - lambda) * other`.
    pub fn mixture(&self, other: &DiscreteMeasure, lambda: f64) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: other.dim });
        }
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::InvalidInput(format!("lambda {lambda} outside [0, 1]")));
        }
        let mut atoms = Vec::with_capacity(self.len() + other.len());
        for a in &self.atoms {
            atoms.push(Atom { position: a.position.clone(), weight: lambda * a.weight });
        }
        for a in &other.atoms {
            atoms.push(Atom { position: a.position.clone(), weight: (1.0 - lambda) * a.weight });
        }
        DiscreteMeasure::new(self.dim, atoms, 0.0)
    }

    /// Writes `c0,...,ck,weight` rows. Floats use the shortest
    /// representation that round-trips.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        for i in 0..self.dim {
            write!(out, "c{i},")?;
        }
        writeln!(out, "weight")?;
        for atom in &self.atoms {
            for c in atom.position.coords() {
                write!(out, "{c},")?;
            }
            writeln!(out, "{}", atom.weight)?;
        }
        Ok(())
    }
}

impl Serialize for DiscreteMeasure {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut s = serializer.serialize_struct("DiscreteMeasure", 3)?;
        s.serialize_field("dim", &self.dim)?;
        s.serialize_field("atoms", &self.atoms)?;
        s.serialize_field("total_mass", &self.total_mass)?;
        s.end()
    }
}

/// Greedy merge of a lexicographically sorted atom list: each atom either
/// joins the nearest already-kept atom within `tol` or starts a new one.
fn merge_sorted(dim: usize, atoms: Vec<Atom>, tol: f64) -> Vec<Atom> {
    let mut kept: Vec<Atom> = Vec::with_capacity(atoms.len());
    // The index cell equals tol, so the adjacent-cell scan sees every kept
    // atom within tol of the candidate.
    let mut index = PointIndex::new(dim, tol);
    for atom in atoms {
        match index.nearest_adjacent(atom.position.coords()) {
            Some((slot, dist)) if dist <= tol => kept[slot as usize].weight += atom.weight,
            _ => {
                index.insert(atom.position.coords());
                kept.push(atom);
            }
        }
    }
    kept
}
