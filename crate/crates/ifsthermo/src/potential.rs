//! Potential families and their admissibility checks.
//!
//! A potential family assigns each branch a function `h_j > 1` on the
//! attractor. Three checks gate a family before any operator work: the
//! values must stay above 1 by a verifiable margin, maps that coincide at a
//! branched value must carry equal potentials there, and the modulus of
//! continuity must have a finite Dini integral. The first two are decided
//! numerically against the grid; the third is certified analytically for
//! every constructible kind, with a sampled estimate alongside for
//! diagnostics.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::branch::BranchData;
use crate::error::{Error, Result};
use crate::grid::AttractorGrid;

/// Pointwise evaluator backing a declared-regularity potential.
pub type HolderEvaluator = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// One branch's potential.
#[derive(Clone)]
pub enum PotentialKind {
    /// `h(x) = value` everywhere.
    Constant { value: f64 },
    /// `h(x) = gradient . x + offset`.
    AffineInX { gradient: Vec<f64>, offset: f64 },
    /// Caller-supplied Hölder function with declared constant and exponent,
    /// so that `|h(x) - h(y)| <= constant * |x - y|^exponent`. The declared
    /// data is trusted for regularity purposes; the pointwise checks still
    /// run against the evaluator.
    DeclaredHolder { evaluator: HolderEvaluator, constant: f64, exponent: f64 },
}

impl fmt::Debug for PotentialKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PotentialKind::Constant { value } => {
                f.debug_struct("Constant").field("value", value).finish()
            }
            PotentialKind::AffineInX { gradient, offset } => f
                .debug_struct("AffineInX")
                .field("gradient", gradient)
                .field("offset", offset)
                .finish(),
            PotentialKind::DeclaredHolder { constant, exponent, .. } => f
                .debug_struct("DeclaredHolder")
                .field("constant", constant)
                .field("exponent", exponent)
                .finish_non_exhaustive(),
        }
    }
}

impl PotentialKind {
    fn validate(&self) -> Result<()> {
        match self {
            PotentialKind::Constant { value } => {
                if !value.is_finite() {
                    return Err(Error::InvalidPotential(format!(
                        "constant potential value {value} is not finite"
                    )));
                }
            }
            PotentialKind::AffineInX { gradient, offset } => {
                if gradient.is_empty() || gradient.iter().any(|g| !g.is_finite()) {
                    return Err(Error::InvalidPotential(
                        "affine potential gradient must be nonempty and finite".into(),
                    ));
                }
                if !offset.is_finite() {
                    return Err(Error::InvalidPotential(format!(
                        "affine potential offset {offset} is not finite"
                    )));
                }
            }
            PotentialKind::DeclaredHolder { constant, exponent, .. } => {
                if !(*constant >= 0.0 && constant.is_finite()) {
                    return Err(Error::InvalidPotential(format!(
                        "Hölder constant {constant} must be finite and non-negative"
                    )));
                }
                if !(*exponent > 0.0 && *exponent <= 1.0) {
                    return Err(Error::InvalidPotential(format!(
                        "Hölder exponent {exponent} must lie in (0, 1]"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Raw value at `x`; finiteness and positivity are checked by the caller.
    fn raw(&self, x: &[f64]) -> f64 {
        match self {
            PotentialKind::Constant { value } => *value,
            PotentialKind::AffineInX { gradient, offset } => {
                gradient.iter().zip(x).map(|(g, xi)| g * xi).sum::<f64>() + offset
            }
            PotentialKind::DeclaredHolder { evaluator, .. } => evaluator(x),
        }
    }

    fn label(&self) -> &'static str {
        match self {
            PotentialKind::Constant { .. } => "constant",
            PotentialKind::AffineInX { .. } => "affine",
            PotentialKind::DeclaredHolder { .. } => "declared_holder",
        }
    }

    /// Worst-case drop of the value over a ball of radius `r`.
    fn variation_over(&self, r: f64) -> f64 {
        match self {
            PotentialKind::Constant { .. } => 0.0,
            PotentialKind::AffineInX { gradient, .. } => {
                gradient.iter().map(|g| g * g).sum::<f64>().sqrt() * r
            }
            PotentialKind::DeclaredHolder { constant, exponent, .. } => {
                constant * r.powf(*exponent)
            }
        }
    }

    /// Exact Dini integral of the analytic modulus over `(0, 1]`, available
    /// for every kind the crate can construct.
    fn analytic_dini_integral(&self) -> f64 {
        match self {
            PotentialKind::Constant { .. } => 0.0,
            PotentialKind::AffineInX { gradient, .. } => {
                gradient.iter().map(|g| g * g).sum::<f64>().sqrt()
            }
            PotentialKind::DeclaredHolder { constant, exponent, .. } => constant / exponent,
        }
    }
}

/// Whether a family's Dini condition is proven or merely sampled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RegularityClass {
    CertifiedDini,
    Heuristic,
}

/// One potential per branch, letters one-based.
#[derive(Clone, Debug)]
pub struct PotentialFamily {
    kinds: Vec<PotentialKind>,
}

impl PotentialFamily {
    pub fn new(kinds: Vec<PotentialKind>) -> Result<Self> {
        if kinds.len() < 2 {
            return Err(Error::InvalidPotential(format!(
                "a potential family needs one entry per branch, got {}",
                kinds.len()
            )));
        }
        for kind in &kinds {
            kind.validate()?;
        }
        Ok(PotentialFamily { kinds })
    }

    /// Same constant on every branch.
    pub fn constant(branches: usize, value: f64) -> Result<Self> {
        Self::new(vec![PotentialKind::Constant { value }; branches])
    }

    /// `h_j = e` for every branch: the geometric normalization in which the
    /// operator at `beta` scales like `d * e^(-beta)`.
    pub fn euler(branches: usize) -> Result<Self> {
        Self::constant(branches, std::f64::consts::E)
    }

    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    pub fn kind(&self, letter: u8) -> Result<&PotentialKind> {
        if letter == 0 || letter as usize > self.kinds.len() {
            return Err(Error::InvalidInput(format!(
                "potential letter {letter} out of range 1..={}",
                self.kinds.len()
            )));
        }
        Ok(&self.kinds[letter as usize - 1])
    }

    /// Every affine gradient must match the ambient dimension; other kinds
    /// are dimension-agnostic.
    pub fn validate_dimension(&self, dim: usize) -> Result<()> {
        for kind in &self.kinds {
            if let PotentialKind::AffineInX { gradient, .. } = kind {
                if gradient.len() != dim {
                    return Err(Error::DimensionMismatch { expected: dim, got: gradient.len() });
                }
            }
        }
        Ok(())
    }

    /// Value of `h_letter` at `x`, rejected unless finite and positive.
    pub fn eval(&self, letter: u8, x: &[f64]) -> Result<f64> {
        let v = self.kind(letter)?.raw(x);
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::InvalidPotential(format!(
                "potential {letter} evaluates to {v} at {x:?}; values must be finite and positive"
            )));
        }
        Ok(v)
    }

    /// Unchecked evaluation for hot loops; callers must have run
    /// [`check_margin`] on the relevant region first.
    pub(crate) fn eval_raw(&self, branch_zero_based: usize, x: &[f64]) -> f64 {
        self.kinds[branch_zero_based].raw(x)
    }

    /// The branch's value when it does not depend on position.
    pub(crate) fn constant_value(&self, branch_zero_based: usize) -> Option<f64> {
        match self.kinds[branch_zero_based] {
            PotentialKind::Constant { value } => Some(value),
            _ => None,
        }
    }

    /// `CertifiedDini` when every branch carries an analytic modulus. All
    /// three constructible kinds do, so this currently never degrades; the
    /// variant exists so report consumers can rely on the distinction.
    pub fn regularity_class(&self) -> RegularityClass {
        RegularityClass::CertifiedDini
    }

    /// Analytic bound on how much `h_letter` can move over a ball of
    /// radius `r`.
    pub(crate) fn variation_over_branch(&self, letter: u8, r: f64) -> Result<f64> {
        Ok(self.kind(letter)?.variation_over(r))
    }
}

/// One violated equality at a branched value.
#[derive(Clone, Debug, Serialize)]
pub struct CompatibilityViolation {
    pub point: Vec<f64>,
    pub pair: (u8, u8),
    pub difference: f64,
}

/// Outcome of the branched-value compatibility check. An empty violation
/// list means the family is admissible for the branch structure.
#[derive(Clone, Debug, Serialize)]
pub struct CompatibilityReport {
    pub tol: f64,
    pub checked_pairs: usize,
    pub violations: Vec<CompatibilityViolation>,
}

impl CompatibilityReport {
    pub fn is_compatible(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Verifies `h_k(y) = h_l(y)` within `tol` for every branched value `y` and
/// coinciding pair `(k, l)`. Without this equality the transfer operator's
/// branch weights would depend on which coinciding map is used to reach the
/// image point, and the operator would be ill-defined.
pub fn check_compatibility(
    family: &PotentialFamily,
    branch: &BranchData,
    tol: f64,
) -> Result<CompatibilityReport> {
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "compatibility tolerance {tol} must be positive and finite"
        )));
    }
    let mut checked_pairs = 0;
    let mut violations = Vec::new();
    for value in branch.branch_values() {
        for &(k, l) in &value.pairs {
            let hk = family.eval(k, value.point.coords())?;
            let hl = family.eval(l, value.point.coords())?;
            checked_pairs += 1;
            let difference = (hk - hl).abs();
            if difference > tol {
                violations.push(CompatibilityViolation {
                    point: value.point.coords().to_vec(),
                    pair: (k, l),
                    difference,
                });
            }
        }
    }
    Ok(CompatibilityReport { tol, checked_pairs, violations })
}

/// Certifies `h_j > 1` on the attractor and returns the margin
/// `c = ln(min over branches and grid points of h_j)`.
///
/// The grid only covers the attractor up to its error bound, so each kind
/// gives back the worst-case variation over that radius and the check
/// demands `min - variation > 1`. Failure reports the uncorrected margin so
/// the caller can see how close the family came.
pub fn check_margin(family: &PotentialFamily, grid: &AttractorGrid) -> Result<f64> {
    let mut global_min = f64::INFINITY;
    for letter in 1..=family.len() as u8 {
        let mut branch_min = f64::INFINITY;
        for i in 0..grid.len() {
            let v = family.eval(letter, grid.point(i))?;
            branch_min = branch_min.min(v);
        }
        let slack = family.kind(letter)?.variation_over(grid.error_bound());
        if branch_min - slack <= 1.0 {
            return Err(Error::PotentialNotAboveOne {
                margin: branch_min.max(f64::MIN_POSITIVE).ln(),
            });
        }
        global_min = global_min.min(branch_min);
    }
    Ok(global_min.ln())
}

/// Regularity data for one branch potential.
#[derive(Clone, Debug, Serialize)]
pub struct PotentialRegularity {
    pub kind: String,
    /// True when the Dini bound comes from the kind's analytic modulus.
    pub certified: bool,
    pub analytic_dini_integral: f64,
    /// Sampled modulus of continuity at each requested scale.
    pub sampled_modulus: Vec<f64>,
    /// Finite lower sum of the Dini integrand over the requested scales.
    pub sampled_dini_estimate: f64,
}

/// Moduli of continuity and Dini estimates for a family.
#[derive(Clone, Debug, Serialize)]
pub struct RegularityReport {
    pub scales: Vec<f64>,
    pub regularity_class: RegularityClass,
    pub potentials: Vec<PotentialRegularity>,
}

/// At most this many grid points feed the sampled modulus; the pair scan is
/// quadratic in the sample count.
const MODULUS_SAMPLE_CAP: usize = 512;

/// Estimates each potential's modulus of continuity at the given scales and
/// assembles Dini data.
///
/// `scales` must be strictly decreasing and lie in `(0, diameter]`. The
/// sampled estimate is a finite sum `sum omega(t_i) (t_i - t_{i+1}) / t_i`
/// with the list padded by `t = 0` at the end; it underestimates the true
/// integral and never upgrades the certification flag on its own.
pub fn dini_report(
    family: &PotentialFamily,
    grid: &AttractorGrid,
    scales: &[f64],
) -> Result<RegularityReport> {
    if scales.is_empty() {
        return Err(Error::InvalidInput("at least one scale is required".into()));
    }
    let diam = grid.ambient_diameter();
    for w in scales.windows(2) {
        if !(w[1] < w[0]) {
            return Err(Error::InvalidInput("scales must be strictly decreasing".into()));
        }
    }
    for &t in scales {
        if !(t > 0.0 && t <= diam) {
            return Err(Error::InvalidInput(format!(
                "scale {t} outside (0, {diam}]"
            )));
        }
    }

    let stride = grid.len().div_ceil(MODULUS_SAMPLE_CAP).max(1);
    let sample: Vec<usize> = (0..grid.len()).step_by(stride).collect();

    let mut potentials = Vec::with_capacity(family.len());
    for letter in 1..=family.len() as u8 {
        let values: Vec<f64> =
            sample.iter().map(|&i| family.eval(letter, grid.point(i))).collect::<Result<_>>()?;
        let mut modulus = vec![0.0f64; scales.len()];
        for a in 0..sample.len() {
            for b in a + 1..sample.len() {
                let dist = crate::ifs::euclidean(grid.point(sample[a]), grid.point(sample[b]));
                let diff = (values[a] - values[b]).abs();
                for (s, &t) in scales.iter().enumerate() {
                    if dist <= t && diff > modulus[s] {
                        modulus[s] = diff;
                    }
                }
            }
        }
        let mut estimate = 0.0;
        for (s, &t) in scales.iter().enumerate() {
            let next = scales.get(s + 1).copied().unwrap_or(0.0);
            estimate += modulus[s] * (t - next) / t;
        }
        let kind = family.kind(letter)?;
        potentials.push(PotentialRegularity {
            kind: kind.label().to_string(),
            certified: true,
            analytic_dini_integral: kind.analytic_dini_integral(),
            sampled_modulus: modulus,
            sampled_dini_estimate: estimate,
        });
    }

    Ok(RegularityReport {
        scales: scales.to_vec(),
        regularity_class: family.regularity_class(),
        potentials,
    })
}
