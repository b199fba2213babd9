//! The spectral-radius curve in the inverse temperature and its critical
//! parameter.
//!
//! For an admissible potential family the radius starts at the branch count
//! when `beta = 0`, decreases strictly, and crosses 1 exactly once. The
//! margin `c = ln min h` gives a hard a priori bracket: weights satisfy
//! `h^(-beta) <= e^(-beta c)`, so the radius is at most `d e^(-beta c)` and
//! the crossing lies in `[0, ln d / c]`. Bisection inside that bracket is
//! robust because the sign of `rho - 1` is reliable even when `rho` itself
//! carries iteration error.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::ruelle::{PowerOptions, RuelleEngine};

/// One point of the radius curve. `rho` is absent when the power iteration
/// failed at this parameter; the error text says why.
#[derive(Clone, Debug, Serialize)]
pub struct RhoSample {
    pub beta: f64,
    pub rho: Option<f64>,
    pub residual: Option<f64>,
    pub error: Option<String>,
}

/// Radius samples over an increasing parameter list.
#[derive(Clone, Debug, Serialize)]
pub struct RhoCurve {
    pub samples: Vec<RhoSample>,
    /// Indices whose radius exceeds the previous successful sample by more
    /// than the combined residuals justify. Monotonicity is a theorem for
    /// admissible families, so entries here point at numerical trouble.
    pub monotonicity_violations: Vec<usize>,
}

/// Samples the spectral radius at each parameter. Parameters must be
/// finite and strictly increasing; failures at single parameters are
/// recorded per sample instead of aborting the curve.
pub fn rho_curve(engine: &RuelleEngine, betas: &[f64], opts: &PowerOptions) -> Result<RhoCurve> {
    if betas.is_empty() {
        return Err(Error::InvalidInput("at least one beta is required".into()));
    }
    for &b in betas {
        if !b.is_finite() {
            return Err(Error::InvalidInput(format!("beta {b} must be finite")));
        }
    }
    for w in betas.windows(2) {
        if !(w[0] < w[1]) {
            return Err(Error::InvalidInput("betas must be strictly increasing".into()));
        }
    }

    // Each sample is an independent cold-started solve, so the curve is
    // safe to evaluate in parallel and identical to the sequential result.
    let samples: Vec<RhoSample> = betas
        .par_iter()
        .map(|&beta| match engine.spectral_radius(beta, opts) {
            Ok(r) => RhoSample {
                beta,
                rho: Some(r.rho),
                residual: Some(r.residual),
                error: None,
            },
            Err(e) => RhoSample { beta, rho: None, residual: None, error: Some(e.to_string()) },
        })
        .collect();

    let mut monotonicity_violations = Vec::new();
    let mut last_ok: Option<&RhoSample> = None;
    for (idx, s) in samples.iter().enumerate() {
        if let (Some(rho), Some(res)) = (s.rho, s.residual) {
            if let Some(prev) = last_ok {
                let allowance = prev.residual.unwrap_or(0.0) + res + 1e-12 * prev.rho.unwrap_or(1.0);
                if rho > prev.rho.unwrap_or(f64::INFINITY) + allowance {
                    monotonicity_violations.push(idx);
                }
            }
            last_ok = Some(s);
        }
    }
    Ok(RhoCurve { samples, monotonicity_violations })
}

/// Critical parameter with the bracket that pinned it down.
#[derive(Clone, Debug, Serialize)]
pub struct CriticalResult {
    pub beta_c: f64,
    pub bracket_lo: f64,
    pub bracket_hi: f64,
    /// Radius at the returned midpoint.
    pub rho_at_beta_c: f64,
    /// Power-iteration residual of that final solve.
    pub residual: f64,
    /// Number of bisection steps taken.
    pub iterations: usize,
}

/// Hard ceiling on bisection steps; with the a priori bracket this allows
/// tolerances far below anything the radius residuals support.
const MAX_BISECTIONS: usize = 200;

/// Locates the parameter where the radius crosses 1, to within `tol` on the
/// parameter axis.
///
/// The bracket endpoints are validated first: the radius must be the branch
/// count at 0 and at most 1 at `ln d / margin`. A family whose numerics
/// violate either is reported as unstable rather than silently bisected.
/// The root may sit exactly at the upper endpoint (it does whenever the
/// potential is constant), which bisection handles without a special case
/// because the predicate is a strict `rho > 1`.
pub fn beta_critical(
    engine: &RuelleEngine,
    tol: f64,
    opts: &PowerOptions,
) -> Result<CriticalResult> {
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "bisection tolerance {tol} must be positive and finite"
        )));
    }
    let d = engine.ifs().branch_count() as f64;
    let margin = engine.margin();

    let at_zero = engine.spectral_radius(0.0, opts)?;
    let zero_slack = (10.0 * at_zero.residual).max(1e-9 * d);
    if (at_zero.rho - d).abs() > zero_slack {
        return Err(Error::NumericalInstability(format!(
            "radius at beta 0 is {}, expected the branch count {d}",
            at_zero.rho
        )));
    }

    let hi0 = d.ln() / margin;
    let mut warm = PowerOptions {
        max_iter: opts.max_iter,
        rtol: opts.rtol,
        warm_start: Some(at_zero.k),
    };
    let at_hi = engine.spectral_radius(hi0, &warm)?;
    let hi_slack = (10.0 * at_hi.residual).max(1e-9);
    if at_hi.rho > 1.0 + hi_slack {
        return Err(Error::NumericalInstability(format!(
            "radius at the a priori bracket end {hi0} is {}, above 1; \
             the margin bound is violated numerically",
            at_hi.rho
        )));
    }

    let mut lo = 0.0f64;
    let mut hi = hi0;
    let mut rho_lo = at_zero.rho;
    let mut rho_hi = at_hi.rho;
    warm.warm_start = Some(at_hi.k);
    let mut iterations = 0;
    while hi - lo > tol && iterations < MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        let at_mid = engine.spectral_radius(mid, &warm)?;
        let noise = 10.0 * at_mid.residual + 1e-12 * d;
        if at_mid.rho > rho_lo + noise || at_mid.rho < rho_hi - noise {
            return Err(Error::NumericalInstability(format!(
                "radius {} at beta {mid} falls outside the bracket values \
                 [{rho_hi}, {rho_lo}]; the curve is not resolving as decreasing",
                at_mid.rho
            )));
        }
        if at_mid.rho > 1.0 {
            lo = mid;
            rho_lo = at_mid.rho;
        } else {
            hi = mid;
            rho_hi = at_mid.rho;
        }
        warm.warm_start = Some(at_mid.k);
        iterations += 1;
    }
    if hi - lo > tol {
        return Err(Error::Convergence {
            iterations,
            last_residual: hi - lo,
            history: vec![rho_lo, rho_hi],
        });
    }

    let beta_c = 0.5 * (lo + hi);
    let at_root = engine.spectral_radius(beta_c, &warm)?;
    Ok(CriticalResult {
        beta_c,
        bracket_lo: lo,
        bracket_hi: hi,
        rho_at_beta_c: at_root.rho,
        residual: at_root.residual,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::branch::branch_sets;
    use crate::grid::{attractor_grid, GridOptions};
    use crate::ifs::IfsSystem;
    use crate::potential::{PotentialFamily, PotentialKind};
    use crate::ruelle::{EngineOptions, RuelleEngine};

    fn engine(name: &str, depth: usize, family: PotentialFamily) -> RuelleEngine {
        let ifs = IfsSystem::preset(name).unwrap();
        let base = IfsSystem::preset_base_point(name).unwrap();
        let grid = attractor_grid(&ifs, depth, &base, &GridOptions::default()).unwrap();
        let branch = branch_sets(&ifs, &grid, 1e-9).unwrap();
        RuelleEngine::new(ifs, family, branch, grid, EngineOptions::default()).unwrap()
    }

    #[test]
    fn tent_critical_parameter_is_ln_two() {
        let eng = engine("tent", 8, PotentialFamily::euler(2).unwrap());
        let crit = beta_critical(&eng, 1e-8, &PowerOptions::default()).unwrap();
        assert!(
            (crit.beta_c - 2.0f64.ln()).abs() <= 1e-8 + 1e-12,
            "beta_c {}",
            crit.beta_c
        );
        assert!((crit.rho_at_beta_c - 1.0).abs() < 1e-7);
        assert!(crit.bracket_hi - crit.bracket_lo <= 1e-8 * (1.0 + 1e-9));
    }

    #[test]
    fn cantor_two_four_critical_parameter() {
        // Root of 2^(-b) + 4^(-b) = 1: substituting t = 2^(-b) gives
        // t + t^2 = 1, so t is the reciprocal golden ratio and
        // b = -ln t / ln 2.
        let family = PotentialFamily::new(vec![
            PotentialKind::Constant { value: 2.0 },
            PotentialKind::Constant { value: 4.0 },
        ])
        .unwrap();
        let eng = engine("cantor3", 8, family);
        let t = (5.0f64.sqrt() - 1.0) / 2.0;
        let expected = -t.ln() / 2.0f64.ln();
        let crit = beta_critical(&eng, 1e-9, &PowerOptions::default()).unwrap();
        assert!((crit.beta_c - expected).abs() <= 2e-9, "{} vs {expected}", crit.beta_c);
    }

    #[test]
    fn curve_is_decreasing_with_endpoint_values() {
        let eng = engine("tent", 8, PotentialFamily::euler(2).unwrap());
        let betas: Vec<f64> = (0..=10).map(|i| i as f64 * 0.1).collect();
        let curve = rho_curve(&eng, &betas, &PowerOptions::default()).unwrap();
        assert!(curve.monotonicity_violations.is_empty());
        assert_eq!(curve.samples.len(), 11);
        let rho0 = curve.samples[0].rho.unwrap();
        assert!((rho0 - 2.0).abs() < 1e-10);
        for (i, s) in curve.samples.iter().enumerate() {
            let expected = 2.0 * (-(i as f64) * 0.1).exp();
            assert!((s.rho.unwrap() - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn curve_rejects_unsorted_betas() {
        let eng = engine("tent", 6, PotentialFamily::euler(2).unwrap());
        assert!(rho_curve(&eng, &[0.2, 0.1], &PowerOptions::default()).is_err());
        assert!(rho_curve(&eng, &[], &PowerOptions::default()).is_err());
    }

    #[test]
    fn affine_family_critical_parameter_brackets() {
        // A mildly varying potential; the exact root is unknown but must
        // lie strictly inside the a priori bracket and carry rho close
        // to 1.
        let family = PotentialFamily::new(vec![
            PotentialKind::AffineInX { gradient: vec![0.5], offset: 2.0 },
            PotentialKind::AffineInX { gradient: vec![-0.5], offset: 3.0 },
        ])
        .unwrap();
        let eng = engine("tent", 8, family);
        let crit = beta_critical(&eng, 1e-8, &PowerOptions::default()).unwrap();
        assert!(crit.beta_c > 0.0);
        assert!((crit.rho_at_beta_c - 1.0).abs() < 1e-6);
        // Radius at the root parameter recomputed independently.
        let check = eng.spectral_radius(crit.beta_c, &PowerOptions::default()).unwrap();
        assert!((check.rho - 1.0).abs() < 1e-6);
    }
}
