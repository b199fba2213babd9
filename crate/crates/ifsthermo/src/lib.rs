//! Thermodynamic formalism for branched contractive systems, computed on
//! self-refining grids.
//!
//! The objects here are iterated function systems whose inverse branches
//! may collide on a finite set of points. The crate builds attractor grids,
//! identifies the branched structure exactly from the affine data, and runs
//! weighted transfer operators over the grids: the plain operator, its
//! branch-corrected variant, and their duals on discrete measures. On top
//! of that sit the spectral pieces (radius curves in the inverse
//! temperature, the critical parameter where the radius crosses 1, the
//! eigenfunction and eigenmeasure at a given parameter) and the equilibrium
//! states they induce, together with verification of the trace identities
//! the states must satisfy.
//!
//! Numerical results carry their error budgets: grids know their covering
//! radius, word-expansion oracles come with certified bounds, truncated
//! series report a tail bound, and verification always recomputes both
//! sides of an identity independently. Anything that cannot be certified is
//! reported as such rather than silently accepted.
//!
//! Entry points, roughly in dependency order:
//!
//! * [`IfsSystem`] and [`attractor_grid`] set up the geometry.
//! * [`branch_sets`] finds where inverse branches collide;
//!   [`check_escape_condition`] certifies that orbits leave the collision
//!   set.
//! * [`PotentialFamily`] attaches a weight to each branch and knows its
//!   regularity.
//! * [`RuelleEngine`] precomputes the operator tables and exposes the
//!   transfer operators, power iteration, and the eigenmeasure solver.
//! * [`rho_curve`] and [`beta_critical`] locate the critical parameter.
//! * [`finite_type_state`], [`critical_state`], and [`verify_kms`] build
//!   and audit equilibrium states; [`subcritical_diagnostic`] documents the
//!   divergence below the critical parameter.

// Negated comparisons like `!(x > 0.0)` are NaN-rejecting guards; index
// loops over flat buffers stay as written where they mirror the math.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

mod branch;
mod critical;
mod error;
mod grid;
mod ifs;
mod index;
mod kms;
mod measure;
mod potential;
mod ruelle;
mod suite;

pub use branch::{
    branch_sets, check_escape_condition, multiplicity, BranchData, BranchPoint,
    BranchProvenance, BranchValue, EscapeCertificate, RejectedCandidate,
};
pub use critical::{beta_critical, rho_curve, CriticalResult, RhoCurve, RhoSample};
pub use error::{Error, Result};
pub use grid::{attractor_grid, AttractorGrid, GridOptions};
pub use ifs::{evaluate_word, orbit, AffineMap, IfsSystem, Point, Word};
pub use kms::{
    classify_regime, critical_state, extreme_points, finite_type_state,
    subcritical_diagnostic, verify_kms, AlgebraTag, ExtremeSet, KmsStateMeasure, KmsVerdict,
    Regime, SeriesClassification, SeriesMerge, SlackEntry, StateType, SubcriticalReport,
};
pub use measure::{Atom, DiscreteMeasure};
pub use potential::{
    check_compatibility, check_margin, dini_report, CompatibilityReport,
    CompatibilityViolation, HolderEvaluator, PotentialFamily, PotentialKind,
    PotentialRegularity, RegularityClass, RegularityReport,
};
pub use ruelle::{
    Beta, EigenmeasureOptions, EigenmeasureResult, EngineOptions, GridFunction, PowerOptions,
    PowerIterationResult, RpfSolution, RuelleEngine,
};
pub use suite::{default_suite, moment_suite, smooth_batch, TestFunction, VanishingVariant, Wave};
