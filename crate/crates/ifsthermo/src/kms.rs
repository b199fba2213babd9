//! Equilibrium states: classification by regime, construction, and
//! verification of the trace identities.
//!
//! Below the critical parameter the operator has radius above 1 and no
//! states exist; the diagnostic in this module shows the would-be series
//! diverging. At the critical parameter the unique state comes from the
//! eigenmeasure. Above it, and at infinite inverse temperature, states of
//! finite type are built by summing the corrected dual series from a seed
//! measure, with a certified bound on the truncated tail.
//!
//! Verification never trusts the construction: the two sides of each trace
//! identity are computed independently, the corrected-transfer side with
//! exact images and weights, and compared within an explicit tolerance.

use serde::Serialize;

use crate::branch::{BranchData, EscapeCertificate};
use crate::error::{Error, Result};
use crate::grid::AttractorGrid;
use crate::ifs::Point;
use crate::measure::{Atom, DiscreteMeasure};
use crate::ruelle::{Beta, PowerOptions, RpfSolution, RuelleEngine};
use crate::suite::TestFunction;

/// Position of a parameter relative to the critical one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Subcritical,
    Critical,
    Supercritical,
}

/// Which operator algebra a state lives on. Finite-type states always exist
/// on the Toeplitz algebra; they descend to the quotient only when the seed
/// charges the branched points.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgebraTag {
    Toeplitz,
    CuntzPimsner,
}

/// How a state was constructed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StateType {
    Critical,
    FiniteType,
}

/// Places a finite or infinite parameter relative to `beta_c`. Parameters
/// within `band` of the critical value classify as critical, so callers
/// can route near-critical parameters to the eigenmeasure construction
/// instead of summing a series with ratio close to 1.
pub fn classify_regime(beta: Beta, beta_c: f64, band: f64) -> Result<Regime> {
    if !(beta_c.is_finite() && beta_c > 0.0) {
        return Err(Error::InvalidInput(format!(
            "critical parameter {beta_c} must be positive and finite"
        )));
    }
    if !(band >= 0.0 && band.is_finite()) {
        return Err(Error::InvalidInput(format!("band {band} must be non-negative")));
    }
    match beta {
        Beta::Infinite => Ok(Regime::Supercritical),
        Beta::Finite(b) => {
            if b <= 0.0 {
                return Err(Error::InvalidInput(format!(
                    "inverse temperature {b} must be positive"
                )));
            }
            if (b - beta_c).abs() <= band {
                Ok(Regime::Critical)
            } else if b < beta_c {
                Ok(Regime::Subcritical)
            } else {
                Ok(Regime::Supercritical)
            }
        }
    }
}

/// A constructed equilibrium state, stored as a probability measure plus
/// the data needed to audit how it was built.
#[derive(Clone, Debug, Serialize)]
pub struct KmsStateMeasure {
    pub beta: Beta,
    pub algebra: AlgebraTag,
    #[serde(rename = "type")]
    pub state_type: StateType,
    /// Probability measure representing the state.
    pub measure: DiscreteMeasure,
    /// Seed of a finite-type construction; absent for critical states.
    pub seed: Option<DiscreteMeasure>,
    /// Total mass of the unnormalized construction. For finite-type states
    /// this is the series value on the constant 1.
    pub normalization: f64,
    /// Number of series terms beyond the seed; absent for critical states.
    pub truncation_depth: Option<usize>,
    /// Certified bound on the discarded series tail.
    pub tail_bound: Option<f64>,
}

/// Atom-growth policy for the finite-type series. Without merging the
/// number of atoms per term grows geometrically with the term index, so
/// deep series must coarsen. Coarsening onto cells preserves each term's
/// mass exactly and moves positions by at most a cell, which perturbs
/// integrals of smooth functions at second order in the cell size.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SeriesMerge {
    /// Coarsen each term onto cells matching the grid's covering radius.
    /// The state then carries no more positional detail than the grid
    /// itself does. The sensible default.
    GridResolution,
    /// Coarsen each term onto cells of the given side.
    Cells(f64),
    /// No merging at all; exact to roundoff. Only for shallow series.
    None,
}

/// Largest admissible truncation depth; a ratio close enough to 1 to need
/// more terms should be treated as effectively critical instead.
const MAX_SERIES_DEPTH: usize = 100_000;

/// Certified ratio and prefactor for the series tail, tiered from the
/// cheapest bound that proves summability.
fn series_ratio(engine: &RuelleEngine, beta: f64) -> Result<(f64, f64)> {
    let d = engine.ifs().branch_count() as f64;
    let margin = engine.margin();
    let r_margin = d * (-beta * margin).exp();
    if r_margin < 1.0 {
        return Ok((r_margin, 1.0));
    }
    let r_norm = engine.transfer_norm_bound(beta)?;
    if r_norm < 1.0 {
        return Ok((r_norm, 1.0));
    }
    // Last resort: the radius itself, with the eigenfunction's condition
    // number as prefactor and its residual folded into the ratio.
    let p = engine.spectral_radius(beta, &PowerOptions::default())?;
    let min_k = p.k.min_value();
    if !(min_k > 0.0) {
        return Err(Error::NumericalInstability(
            "eigenfunction lost positivity while certifying the series ratio".into(),
        ));
    }
    let r_rpf = p.rho + p.residual / min_k;
    if r_rpf < 1.0 {
        return Ok((r_rpf, 1.0 / min_k));
    }
    Err(Error::Regime {
        required: "supercritical (summable corrected dual series)".into(),
        found: format!("certified series ratio {r_rpf:.6} at beta {beta}"),
    })
}

/// Builds the finite-type state from `seed` by summing the corrected dual
/// series until the certified tail drops below `series_tol`.
///
/// The seed must be a probability measure. At infinite inverse temperature
/// the corrected dual vanishes and the state is the seed itself with a
/// tail of exactly zero.
pub fn finite_type_state(
    engine: &RuelleEngine,
    beta: Beta,
    seed: &DiscreteMeasure,
    series_tol: f64,
    merge: SeriesMerge,
) -> Result<KmsStateMeasure> {
    if !(series_tol > 0.0 && series_tol.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "series tolerance {series_tol} must be positive and finite"
        )));
    }
    if seed.dim() != engine.grid().dim() {
        return Err(Error::DimensionMismatch {
            expected: engine.grid().dim(),
            got: seed.dim(),
        });
    }
    if (seed.total_mass() - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidInput(format!(
            "seed must be a probability measure; total mass is {}",
            seed.total_mass()
        )));
    }
    if let SeriesMerge::Cells(c) = merge {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "cell size {c} must be positive and finite"
            )));
        }
    }
    let algebra = seed_algebra(engine, seed);

    let (depth, tail, series) = match beta {
        Beta::Infinite => (0, 0.0, seed.clone()),
        Beta::Finite(b) => {
            let (ratio, prefactor) = series_ratio(engine, b)?;
            let mut depth = 0usize;
            let mut tail = prefactor * ratio / (1.0 - ratio);
            while tail > series_tol {
                depth += 1;
                tail *= ratio;
                if depth > MAX_SERIES_DEPTH {
                    return Err(Error::ResourceCap(format!(
                        "series needs more than {MAX_SERIES_DEPTH} terms at ratio {ratio:.6}; \
                         treat this parameter as critical instead"
                    )));
                }
            }

            let grid_cell =
                engine.grid().error_bound().max(engine.grid().dedup_tolerance());
            let mut term = seed.clone();
            let mut atoms: Vec<Atom> = seed.atoms().to_vec();
            for _ in 1..=depth {
                let raw = engine.corrected_dual_unmerged(&term, b)?;
                term = match merge {
                    SeriesMerge::GridResolution => raw.coarsen_cells(grid_cell)?,
                    SeriesMerge::Cells(c) => raw.coarsen_cells(c)?,
                    SeriesMerge::None => raw,
                };
                if atoms.len() + term.len() > engine.options().atom_cap {
                    return Err(Error::ResourceCap(format!(
                        "series accumulated more than {} atoms; a coarser merge \
                         policy keeps the count down",
                        engine.options().atom_cap
                    )));
                }
                atoms.extend_from_slice(term.atoms());
            }
            (depth, tail, DiscreteMeasure::new(seed.dim(), atoms, 0.0)?)
        }
    };

    let normalization = series.total_mass();
    let measure = series.normalized()?;
    Ok(KmsStateMeasure {
        beta,
        algebra,
        state_type: StateType::FiniteType,
        measure,
        seed: Some(seed.clone()),
        normalization,
        truncation_depth: Some(depth),
        tail_bound: Some(tail),
    })
}

/// A finite-type state descends to the quotient algebra exactly when its
/// seed charges only branched points.
fn seed_algebra(engine: &RuelleEngine, seed: &DiscreteMeasure) -> AlgebraTag {
    let tol = engine.options().branch_tol;
    let on_branch = !engine.branch().branch_points().is_empty()
        && seed
            .atoms()
            .iter()
            .all(|a| engine.branch().distance_to_points(a.position.coords()) <= tol);
    if on_branch {
        AlgebraTag::CuntzPimsner
    } else {
        AlgebraTag::Toeplitz
    }
}

/// Wraps an eigentriple at the critical parameter as the unique state
/// there.
///
/// The solution must be converged (residuals at most 1e-3) and genuinely
/// critical (radius at 1 within the residual's reach). The eigenmeasure
/// must not charge the branched values: mass there would make the trace
/// identities ill-posed, and signals a grid too coarse to separate the
/// branch structure.
pub fn critical_state(engine: &RuelleEngine, rpf: &RpfSolution) -> Result<KmsStateMeasure> {
    if rpf.residual_k > 1e-3 || rpf.residual_tau > 1e-3 {
        return Err(Error::InvalidInput(format!(
            "eigentriple residuals ({:.3e}, {:.3e}) too large for a state; solve tighter first",
            rpf.residual_k, rpf.residual_tau
        )));
    }
    let rho_slack = (10.0 * rpf.residual_k).max(1e-6);
    if (rpf.rho - 1.0).abs() > rho_slack {
        return Err(Error::Regime {
            required: "critical (radius 1)".into(),
            found: format!("radius {} at beta {}", rpf.rho, rpf.beta),
        });
    }
    // An atomless measure with bounded density keeps the mass within
    // `near` of each branched value proportional to `near` itself, so the
    // allowance scales with the measuring radius; an actual atom on a
    // branched value contributes weight independent of the radius and
    // trips the check at any depth.
    let near = engine.options().branch_tol.max(engine.grid().error_bound());
    let c_points: Vec<Point> =
        engine.branch().branch_values().iter().map(|v| v.point.clone()).collect();
    let mass_on_c = rpf.tau.mass_near(&c_points, near);
    let diam = engine.ifs().ambient_diameter();
    let density_allowance = 100.0 * near * c_points.len() as f64 / diam;
    let threshold = density_allowance.clamp(1e-3, 0.2);
    if mass_on_c > threshold {
        return Err(Error::Inconsistency(format!(
            "eigenmeasure places mass {mass_on_c:.3e} on the branched values \
             (allowance {threshold:.3e}); the trace identities do not extend there"
        )));
    }
    Ok(KmsStateMeasure {
        beta: Beta::Finite(rpf.beta),
        algebra: AlgebraTag::CuntzPimsner,
        state_type: StateType::Critical,
        measure: rpf.tau.clone(),
        seed: None,
        normalization: 1.0,
        truncation_depth: None,
        tail_bound: None,
    })
}

/// The extreme points of the state simplex in a given regime.
#[derive(Clone, Debug, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExtremeSet {
    /// No states at all.
    Empty { annotation: String },
    /// Exactly one state.
    UniqueState { description: String },
    /// One extreme state per branched point.
    BranchPoints { points: Vec<Point> },
    /// One extreme state per attractor point; listed by a bounded sample.
    AllPointsOfK { sample: Vec<Point>, description: String },
}

/// At most this many points in an `AllPointsOfK` sample.
const EXTREME_SAMPLE_CAP: usize = 64;

/// Describes the extreme states for an algebra and regime.
pub fn extreme_points(
    algebra: AlgebraTag,
    branch: &BranchData,
    grid: &AttractorGrid,
    regime: Regime,
) -> ExtremeSet {
    match regime {
        Regime::Subcritical => ExtremeSet::Empty {
            annotation: "no states below the critical parameter; the defining series diverges"
                .into(),
        },
        Regime::Critical => ExtremeSet::UniqueState {
            description: "the eigenmeasure state is the only one at the critical parameter"
                .into(),
        },
        Regime::Supercritical => match algebra {
            AlgebraTag::Toeplitz => {
                let stride = grid.len().div_ceil(EXTREME_SAMPLE_CAP).max(1);
                let sample =
                    (0..grid.len()).step_by(stride).map(|i| grid.point_at(i)).collect();
                ExtremeSet::AllPointsOfK {
                    sample,
                    description: format!(
                        "extreme finite-type states are indexed by attractor points; \
                         showing a sample from the depth-{} grid",
                        grid.depth()
                    ),
                }
            }
            AlgebraTag::CuntzPimsner => {
                let points: Vec<Point> =
                    branch.branch_points().iter().map(|b| b.point.clone()).collect();
                if points.is_empty() {
                    ExtremeSet::Empty {
                        annotation: "no branched points, so no finite-type state descends \
                                     to the quotient algebra"
                            .into(),
                    }
                } else {
                    ExtremeSet::BranchPoints { points }
                }
            }
        },
    }
}

/// Two sides of one trace identity for one test function.
#[derive(Clone, Debug, Serialize)]
pub struct SlackEntry {
    pub function: String,
    /// Trace side: the state paired with the corrected transfer of the
    /// function, computed with exact images and weights.
    pub trace_value: f64,
    /// State side: the plain integral of the function.
    pub integral_value: f64,
    /// Signed `trace - integral`.
    pub slack: f64,
}

/// Verdict of the trace-identity checks for one state.
#[derive(Clone, Debug, Serialize)]
pub struct KmsVerdict {
    pub beta: Beta,
    pub tol: f64,
    /// Equality entries, one per suite function vanishing on the branched
    /// points. Empty when the system is branch-free.
    pub k1: Vec<SlackEntry>,
    /// Inequality entries, one per non-negative suite function.
    pub k2: Vec<SlackEntry>,
    pub k1_pass: bool,
    pub k2_pass: bool,
    pub worst_k1: Option<String>,
    pub worst_k2: Option<String>,
    /// True when the identities rest on an escape condition that has not
    /// been certified for this system.
    pub escape_conditional: bool,
    /// Depths of the certificate consulted, when one is attached.
    pub escape_depths: Option<(usize, usize)>,
}

/// Checks the trace identities for `state` over `suite`.
///
/// The equality is asserted for functions vanishing on the branched points
/// within `tol`; the inequality (trace at most integral) for non-negative
/// functions, also within `tol`. At infinite inverse temperature the trace
/// side is identically zero and the checks degenerate accordingly.
pub fn verify_kms(
    engine: &RuelleEngine,
    state: &KmsStateMeasure,
    suite: &[TestFunction],
    tol: f64,
) -> Result<KmsVerdict> {
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "verification tolerance {tol} must be positive and finite"
        )));
    }
    let mut k1 = Vec::new();
    let mut k2 = Vec::new();
    for f in suite {
        let integral_value = state.measure.integrate(|x| f.eval(x));
        let trace_value = match state.beta {
            Beta::Infinite => 0.0,
            Beta::Finite(b) => {
                let mut acc = 0.0;
                for atom in state.measure.atoms() {
                    acc += atom.weight
                        * engine.corrected_value_of(f, atom.position.coords(), b)?;
                }
                acc
            }
        };
        let entry = SlackEntry {
            function: f.name(),
            trace_value,
            integral_value,
            slack: trace_value - integral_value,
        };
        if f.vanishes_on_branch() {
            k1.push(entry.clone());
        }
        if f.is_nonnegative() {
            k2.push(entry);
        }
    }
    let k1_pass = k1.iter().all(|e| e.slack.abs() <= tol);
    let k2_pass = k2.iter().all(|e| e.slack <= tol);
    let worst_k1 = k1
        .iter()
        .max_by(|a, b| a.slack.abs().total_cmp(&b.slack.abs()))
        .map(|e| e.function.clone());
    let worst_k2 =
        k2.iter().max_by(|a, b| a.slack.total_cmp(&b.slack)).map(|e| e.function.clone());

    let branch_free = engine.branch().is_branch_free();
    let (escape_conditional, escape_depths) = match engine.escape_certificate() {
        _ if branch_free => (false, None),
        Some(cert @ EscapeCertificate::HoldsAtDepth { .. }) => (false, Some(cert.depths())),
        Some(cert @ EscapeCertificate::Unknown { .. }) => (true, Some(cert.depths())),
        None => (true, None),
    };

    Ok(KmsVerdict {
        beta: state.beta,
        tol,
        k1,
        k2,
        k1_pass,
        k2_pass,
        worst_k1,
        worst_k2,
        escape_conditional,
        escape_depths,
    })
}

/// How the diagnostic series behaved.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesClassification {
    Diverging,
    Boundary,
    Converging,
}

/// Term-by-term record of the would-be finite-type series at a parameter.
#[derive(Clone, Debug, Serialize)]
pub struct SubcriticalReport {
    pub beta: f64,
    pub depth: usize,
    /// Starting point of the seed mass.
    pub start: Point,
    /// `terms[m]` is the mass of the m-fold corrected dual of the seed.
    pub terms: Vec<f64>,
    pub partial_sums: Vec<f64>,
    /// Least-squares slope of `ln terms[m]` against `m`.
    pub growth_exponent: f64,
    /// Log of the spectral radius at this parameter, for comparison; the
    /// two agree when the seed sees the full operator.
    pub log_rho: f64,
    pub classification: SeriesClassification,
    /// Whether an escape certificate backed the choice of starting point.
    pub escape_certified: bool,
}

/// Growth exponents within this distance of zero classify as boundary.
const GROWTH_EPS: f64 = 1e-6;

/// Iterates the corrected dual from a point seed and reports how the term
/// masses grow. Below the critical parameter they grow geometrically,
/// which is the quantitative content of "no states here".
///
/// The starting point is the first escape witness when a certificate with
/// witnesses is attached, otherwise the first grid point. Terms are
/// coarsened onto small cells between steps; coarsening moves positions,
/// not mass, so the reported masses are unaffected for constant potentials
/// and perturbed only at second order otherwise.
pub fn subcritical_diagnostic(
    engine: &RuelleEngine,
    beta: f64,
    depth: usize,
) -> Result<SubcriticalReport> {
    if !beta.is_finite() {
        return Err(Error::InvalidInput(format!("beta {beta} must be finite")));
    }
    if depth < 2 {
        return Err(Error::InvalidInput(
            "at least two steps are needed to estimate growth".into(),
        ));
    }
    let start = match engine.escape_certificate() {
        Some(EscapeCertificate::HoldsAtDepth { witnesses, .. }) if !witnesses.is_empty() => {
            witnesses[0].1.clone()
        }
        _ => engine.grid().point_at(0),
    };
    let escape_certified = matches!(
        engine.escape_certificate(),
        Some(EscapeCertificate::HoldsAtDepth { .. })
    );

    let cell = 1e-6 * engine.grid().ambient_diameter();
    let mut mu = DiscreteMeasure::dirac(start.clone());
    let mut terms = vec![mu.total_mass()];
    for _ in 1..=depth {
        mu = engine.corrected_dual(&mu, Beta::Finite(beta))?.coarsen_cells(cell)?;
        terms.push(mu.total_mass());
    }
    let mut partial_sums = Vec::with_capacity(terms.len());
    let mut acc = 0.0;
    for &t in &terms {
        acc += t;
        partial_sums.push(acc);
    }

    let m_mean = depth as f64 / 2.0;
    let logs: Vec<f64> = terms.iter().map(|t| t.ln()).collect();
    let y_mean = logs.iter().sum::<f64>() / logs.len() as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for (m, y) in logs.iter().enumerate() {
        let dm = m as f64 - m_mean;
        num += dm * (y - y_mean);
        den += dm * dm;
    }
    let growth_exponent = num / den;
    let classification = if growth_exponent > GROWTH_EPS {
        SeriesClassification::Diverging
    } else if growth_exponent < -GROWTH_EPS {
        SeriesClassification::Converging
    } else {
        SeriesClassification::Boundary
    };
    let log_rho = engine.spectral_radius(beta, &PowerOptions::default())?.rho.ln();

    Ok(SubcriticalReport {
        beta,
        depth,
        start,
        terms,
        partial_sums,
        growth_exponent,
        log_rho,
        classification,
        escape_certified,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::branch::{branch_sets, check_escape_condition};
    use crate::grid::{attractor_grid, GridOptions};
    use crate::ifs::IfsSystem;
    use crate::potential::PotentialFamily;
    use crate::ruelle::{EigenmeasureOptions, EngineOptions};

    fn tent_engine(depth: usize) -> RuelleEngine {
        let ifs = IfsSystem::preset("tent").unwrap();
        let base = IfsSystem::preset_base_point("tent").unwrap();
        let grid = attractor_grid(&ifs, depth, &base, &GridOptions::default()).unwrap();
        let branch = branch_sets(&ifs, &grid, 1e-9).unwrap();
        let cert = check_escape_condition(&ifs, &branch, 3, 12, 1e-6).unwrap();
        RuelleEngine::new(
            ifs,
            PotentialFamily::euler(2).unwrap(),
            branch,
            grid,
            EngineOptions::default(),
        )
        .unwrap()
        .with_escape_certificate(cert)
    }

    #[test]
    fn regime_classification_brackets_the_critical_parameter() {
        let bc = 2.0f64.ln();
        assert_eq!(classify_regime(Beta::Finite(0.3), bc, 1e-7).unwrap(), Regime::Subcritical);
        assert_eq!(classify_regime(Beta::Finite(bc), bc, 1e-7).unwrap(), Regime::Critical);
        assert_eq!(classify_regime(Beta::Finite(1.4), bc, 1e-7).unwrap(), Regime::Supercritical);
        assert_eq!(classify_regime(Beta::Infinite, bc, 1e-7).unwrap(), Regime::Supercritical);
        assert!(classify_regime(Beta::Finite(-1.0), bc, 1e-7).is_err());
    }

    #[test]
    fn finite_type_series_on_tent_doubles_the_seed_mass() {
        // At beta = 2 ln 2 the seed at the branched point 0.5 has corrected
        // dual mass ratio exactly 1/2, so the series value on 1 is 2.
        let eng = tent_engine(10);
        let beta = 2.0 * 2.0f64.ln();
        let seed = DiscreteMeasure::dirac(Point::scalar(0.5));
        let state =
            finite_type_state(&eng, Beta::Finite(beta), &seed, 1e-7, SeriesMerge::GridResolution)
                .unwrap();
        assert_eq!(state.algebra, AlgebraTag::CuntzPimsner);
        assert_eq!(state.state_type, StateType::FiniteType);
        assert!((state.normalization - 2.0).abs() < 1e-6, "{}", state.normalization);
        assert!(state.tail_bound.unwrap() <= 1e-7);
        assert!((state.measure.total_mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn finite_type_state_at_infinite_beta_is_the_seed() {
        let eng = tent_engine(8);
        let seed = DiscreteMeasure::dirac(Point::scalar(0.5));
        let state =
            finite_type_state(&eng, Beta::Infinite, &seed, 1e-8, SeriesMerge::GridResolution)
                .unwrap();
        assert_eq!(state.truncation_depth, Some(0));
        assert_eq!(state.tail_bound, Some(0.0));
        assert!((state.normalization - 1.0).abs() < 1e-12);
        assert_eq!(state.measure.len(), 1);
    }

    #[test]
    fn non_probability_seed_is_rejected() {
        let eng = tent_engine(6);
        let seed = DiscreteMeasure::dirac(Point::scalar(0.5)).scaled(0.7).unwrap();
        let err = finite_type_state(
            &eng,
            Beta::Finite(2.0),
            &seed,
            1e-6,
            SeriesMerge::GridResolution,
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn subcritical_parameter_cannot_sum() {
        let eng = tent_engine(8);
        let seed = DiscreteMeasure::dirac(Point::scalar(0.5));
        let err =
            finite_type_state(&eng, Beta::Finite(0.3), &seed, 1e-6, SeriesMerge::GridResolution)
                .unwrap_err();
        assert!(matches!(err, Error::Regime { .. }));
    }

    #[test]
    fn trace_identities_hold_for_a_finite_type_state() {
        let eng = tent_engine(12);
        let beta = 2.0 * 2.0f64.ln();
        let seed = DiscreteMeasure::dirac(Point::scalar(0.5));
        let state =
            finite_type_state(&eng, Beta::Finite(beta), &seed, 1e-8, SeriesMerge::GridResolution)
                .unwrap();
        let suite = eng.verification_suite();
        let verdict = verify_kms(&eng, &state, &suite, 1e-4).unwrap();
        assert!(verdict.k1_pass, "worst K1: {:?}", verdict.worst_k1);
        assert!(verdict.k2_pass, "worst K2: {:?}", verdict.worst_k2);
        assert!(!verdict.k1.is_empty());
        assert!(!verdict.escape_conditional);
        assert_eq!(verdict.escape_depths, Some((3, 12)));
    }

    #[test]
    fn off_branch_seed_fails_the_equality() {
        // A seed away from the branched point is a Toeplitz state whose
        // trace side genuinely differs on branch-vanishing functions.
        let eng = tent_engine(12);
        let beta = 2.0 * 2.0f64.ln();
        let seed = DiscreteMeasure::dirac(Point::scalar(0.3));
        let state =
            finite_type_state(&eng, Beta::Finite(beta), &seed, 1e-8, SeriesMerge::GridResolution)
                .unwrap();
        assert_eq!(state.algebra, AlgebraTag::Toeplitz);
        let suite = eng.verification_suite();
        let verdict = verify_kms(&eng, &state, &suite, 1e-4).unwrap();
        assert!(!verdict.k1_pass);
        // The inequality still holds: it is a positivity statement.
        assert!(verdict.k2_pass);
    }

    #[test]
    fn critical_state_from_the_eigentriple() {
        let eng = tent_engine(10);
        let beta = 2.0f64.ln();
        let sol = eng
            .solve_rpf(beta, &PowerOptions::default(), &EigenmeasureOptions::default())
            .unwrap();
        let state = critical_state(&eng, &sol).unwrap();
        assert_eq!(state.state_type, StateType::Critical);
        assert_eq!(state.algebra, AlgebraTag::CuntzPimsner);
        let suite = eng.verification_suite();
        let verdict = verify_kms(&eng, &state, &suite, 1e-4).unwrap();
        assert!(verdict.k1_pass, "worst K1: {:?}", verdict.worst_k1);
        assert!(verdict.k2_pass, "worst K2: {:?}", verdict.worst_k2);
    }

    #[test]
    fn critical_state_rejects_off_critical_solutions() {
        let eng = tent_engine(8);
        // Radius at beta = 0.2 is 2 e^(-0.2), far from 1.
        let sol = eng
            .solve_rpf(0.2, &PowerOptions::default(), &EigenmeasureOptions::default())
            .unwrap();
        let err = critical_state(&eng, &sol).unwrap_err();
        assert!(matches!(err, Error::Regime { .. }));
    }

    #[test]
    fn critical_state_rejects_a_measure_charging_the_branched_value() {
        let eng = tent_engine(10);
        let beta = 2.0f64.ln();
        let mut sol = eng
            .solve_rpf(beta, &PowerOptions::default(), &EigenmeasureOptions::default())
            .unwrap();
        // Move a third of the mass onto the branched value 1; the rest of
        // the triple stays converged.
        sol.tau = sol.tau.mixture(&DiscreteMeasure::dirac(Point::scalar(1.0)), 2.0 / 3.0).unwrap();
        let err = critical_state(&eng, &sol).unwrap_err();
        assert!(matches!(err, Error::Inconsistency(_)), "got {err:?}");
    }

    #[test]
    fn extreme_sets_by_regime() {
        let eng = tent_engine(6);
        let grid = eng.grid();
        let sub = extreme_points(AlgebraTag::CuntzPimsner, eng.branch(), grid, Regime::Subcritical);
        assert!(matches!(sub, ExtremeSet::Empty { .. }));
        let crit =
            extreme_points(AlgebraTag::CuntzPimsner, eng.branch(), grid, Regime::Critical);
        assert!(matches!(crit, ExtremeSet::UniqueState { .. }));
        let cp =
            extreme_points(AlgebraTag::CuntzPimsner, eng.branch(), grid, Regime::Supercritical);
        match cp {
            ExtremeSet::BranchPoints { ref points } => {
                assert_eq!(points.len(), 1);
                assert!((points[0].coords()[0] - 0.5).abs() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
        let toeplitz =
            extreme_points(AlgebraTag::Toeplitz, eng.branch(), grid, Regime::Supercritical);
        match toeplitz {
            ExtremeSet::AllPointsOfK { ref sample, .. } => {
                assert!(!sample.is_empty() && sample.len() <= 64);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn subcritical_series_diverges_at_the_documented_rate() {
        let eng = tent_engine(10);
        let report = subcritical_diagnostic(&eng, 0.5, 12).unwrap();
        // Off the branch structure each step multiplies the mass by
        // 2 e^(-beta), so the growth exponent is ln 2 - beta.
        let expected = 2.0f64.ln() - 0.5;
        assert!(
            (report.growth_exponent - expected).abs() < 1e-9,
            "exponent {} vs {expected}",
            report.growth_exponent
        );
        assert_eq!(report.classification, SeriesClassification::Diverging);
        assert!(report.escape_certified);
        assert!((report.log_rho - expected).abs() < 1e-9);
        assert_eq!(report.terms.len(), 13);
    }

    #[test]
    fn supercritical_diagnostic_converges() {
        let eng = tent_engine(10);
        let report = subcritical_diagnostic(&eng, 1.5, 12).unwrap();
        assert_eq!(report.classification, SeriesClassification::Converging);
        assert!(report.growth_exponent < 0.0);
    }
}
