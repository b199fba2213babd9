//! One function per subcommand.
//!
//! Commands share the same build path: configuration to system, system to
//! grid, grid to engine. Scalar results go into the JSON document; curves,
//! grids, and measure atoms go into CSV side files named in the document.

use std::io::Write as _;
use std::sync::Arc;

use serde::Serialize;

use ifsthermo::{
    attractor_grid, beta_critical, branch_sets, check_escape_condition, subcritical_diagnostic,
    verify_kms, AttractorGrid, Beta, BranchData, BranchPoint, BranchProvenance, BranchValue,
    CriticalResult, DiscreteMeasure, EigenmeasureOptions, EngineOptions, EscapeCertificate,
    GridOptions, IfsSystem, KmsStateMeasure, KmsVerdict, PowerOptions, RejectedCandidate,
    RuelleEngine,
};

use crate::config::{BetaSpec, BetaWord, RunConfig};
use crate::output::OutputDir;
use crate::CliError;

fn build_grid(cfg: &RunConfig) -> Result<(IfsSystem, Arc<AttractorGrid>), CliError> {
    let ifs = cfg.build_ifs()?;
    let base = cfg.base_point()?;
    let defaults = GridOptions::default();
    let opts = GridOptions {
        dedup_tol: cfg.grid.dedup_tol,
        max_points: cfg.grid.max_points.unwrap_or(defaults.max_points),
    };
    let grid = attractor_grid(&ifs, cfg.grid.depth, &base, &opts)?;
    Ok((ifs, grid))
}

fn build_engine(cfg: &RunConfig) -> Result<RuelleEngine, CliError> {
    let (ifs, grid) = build_grid(cfg)?;
    let family = cfg.build_potentials(ifs.branch_count())?;
    let opts = EngineOptions::default();
    let branch = branch_sets(&ifs, &grid, opts.branch_tol)?;
    let escape = escape_certificate(cfg, &ifs, &branch)?;
    let engine = RuelleEngine::new(ifs, family, branch, grid, opts)?;
    Ok(match escape {
        Some(cert) => engine.with_escape_certificate(cert),
        None => engine,
    })
}

/// Searches for escape witnesses when the config asks for them. Both
/// depths must be present together; a lone one is a config mistake.
fn escape_certificate(
    cfg: &RunConfig,
    ifs: &IfsSystem,
    branch: &BranchData,
) -> Result<Option<EscapeCertificate>, CliError> {
    match (cfg.params.search_depth, cfg.params.avoid_depth) {
        (Some(search), Some(avoid)) => {
            let tol = cfg.params.escape_tol.unwrap_or(1e-6);
            Ok(Some(check_escape_condition(ifs, branch, search, avoid, tol)?))
        }
        (None, None) => Ok(None),
        _ => Err(CliError::Config(
            "params.search_depth and params.avoid_depth must be given together".into(),
        )),
    }
}

fn power_opts(cfg: &RunConfig) -> PowerOptions {
    PowerOptions { max_iter: cfg.solver.max_iter, rtol: cfg.solver.rtol, warm_start: None }
}

fn measure_opts(cfg: &RunConfig) -> EigenmeasureOptions {
    EigenmeasureOptions {
        max_iter: cfg.solver.measure_max_iter,
        rtol: cfg.solver.measure_rtol,
        ..EigenmeasureOptions::default()
    }
}

/// Resolves the configured inverse temperature; "critical" triggers a
/// bisection on the spot.
enum ResolvedBeta {
    Finite(f64),
    Infinite,
}

fn resolve_beta(cfg: &RunConfig, engine: &RuelleEngine) -> Result<ResolvedBeta, CliError> {
    match cfg.params.beta {
        None => Err(CliError::Config("params.beta is required for this command".into())),
        Some(BetaSpec::Number(b)) => Ok(ResolvedBeta::Finite(b)),
        Some(BetaSpec::Word(BetaWord::Infinity)) => Ok(ResolvedBeta::Infinite),
        Some(BetaSpec::Word(BetaWord::Critical)) => {
            let crit = beta_critical(engine, cfg.beta_tol(), &power_opts(cfg))?;
            Ok(ResolvedBeta::Finite(crit.beta_c))
        }
    }
}

fn finite_beta(cfg: &RunConfig, engine: &RuelleEngine) -> Result<f64, CliError> {
    match resolve_beta(cfg, engine)? {
        ResolvedBeta::Finite(b) => Ok(b),
        ResolvedBeta::Infinite => {
            Err(CliError::Config("this command needs a finite beta".into()))
        }
    }
}

#[derive(Serialize)]
struct AttractorResult {
    dim: usize,
    depth: usize,
    points: usize,
    dedup_tolerance: f64,
    error_bound: f64,
    ambient_diameter: f64,
    csv: &'static str,
}

pub fn attractor(cfg: &RunConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let (ifs, grid) = build_grid(cfg)?;
    out.write_csv("attractor", |w| grid.write_csv(w))?;
    out.write_json(&AttractorResult {
        dim: grid.dim(),
        depth: grid.depth(),
        points: grid.len(),
        dedup_tolerance: grid.dedup_tolerance(),
        error_bound: grid.error_bound(),
        ambient_diameter: ifs.ambient_diameter(),
        csv: "attractor.csv",
    })
}

#[derive(Serialize)]
struct BranchResult<'a> {
    #[serde(rename = "C")]
    values: &'a [BranchValue],
    #[serde(rename = "B")]
    points: &'a [BranchPoint],
    provenance: BranchProvenance,
    branch_free: bool,
    rejected: &'a [RejectedCandidate],
    escape: Option<EscapeCertificate>,
}

pub fn branch(cfg: &RunConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let (ifs, grid) = build_grid(cfg)?;
    let data = branch_sets(&ifs, &grid, EngineOptions::default().branch_tol)?;
    let escape = escape_certificate(cfg, &ifs, &data)?;
    out.write_json(&BranchResult {
        values: data.branch_values(),
        points: data.branch_points(),
        provenance: data.provenance(),
        branch_free: data.is_branch_free(),
        rejected: data.rejected(),
        escape,
    })
}

#[derive(Serialize)]
struct RhoCurveResult {
    samples: usize,
    beta_min: f64,
    beta_max: f64,
    monotonicity_violations: Vec<usize>,
    csv: &'static str,
}

pub fn rho_curve(cfg: &RunConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let engine = build_engine(cfg)?;
    let betas = cfg
        .params
        .betas
        .as_deref()
        .ok_or_else(|| CliError::Config("params.betas is required for rho-curve".into()))?;
    let curve = ifsthermo::rho_curve(&engine, betas, &power_opts(cfg))?;
    out.write_csv("rho-curve", |w| {
        writeln!(w, "beta,rho,residual,error")?;
        for s in &curve.samples {
            write!(w, "{},", s.beta)?;
            match (s.rho, s.residual) {
                (Some(rho), Some(res)) => write!(w, "{rho},{res},")?,
                _ => write!(w, ",,")?,
            }
            match &s.error {
                Some(text) => writeln!(w, "\"{}\"", text.replace('"', "\"\""))?,
                None => writeln!(w)?,
            }
        }
        Ok(())
    })?;
    out.write_json(&RhoCurveResult {
        samples: curve.samples.len(),
        beta_min: betas[0],
        beta_max: betas[betas.len() - 1],
        monotonicity_violations: curve.monotonicity_violations,
        csv: "rho-curve.csv",
    })
}

pub fn beta_c(cfg: &RunConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let engine = build_engine(cfg)?;
    let crit: CriticalResult = beta_critical(&engine, cfg.beta_tol(), &power_opts(cfg))?;
    out.write_json(&crit)
}

#[derive(Serialize)]
struct RpfResult {
    beta: f64,
    rho: f64,
    residual_k: f64,
    residual_tau: f64,
    tau_of_k: f64,
    power_iterations: usize,
    measure_iterations: usize,
    tau_atoms: usize,
    k_csv: &'static str,
    tau_csv: &'static str,
}

pub fn rpf(cfg: &RunConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let engine = build_engine(cfg)?;
    let beta = finite_beta(cfg, &engine)?;
    let sol = engine.solve_rpf(beta, &power_opts(cfg), &measure_opts(cfg))?;
    out.write_csv("rpf-k", |w| sol.k.write_csv(w))?;
    out.write_csv("rpf-tau", |w| sol.tau.write_csv(w))?;
    out.write_json(&RpfResult {
        beta: sol.beta,
        rho: sol.rho,
        residual_k: sol.residual_k,
        residual_tau: sol.residual_tau,
        tau_of_k: sol.tau_of_k,
        power_iterations: sol.power_iterations,
        measure_iterations: sol.measure_iterations,
        tau_atoms: sol.tau.len(),
        k_csv: "rpf-k.csv",
        tau_csv: "rpf-tau.csv",
    })
}

/// Builds the configured state: a seed selects the finite-type series, no
/// seed selects the critical state from a fresh eigensolve.
fn build_state(cfg: &RunConfig, engine: &RuelleEngine) -> Result<KmsStateMeasure, CliError> {
    match &cfg.params.seed {
        Some(entries) => {
            if entries.is_empty() {
                return Err(CliError::Config("params.seed must not be empty".into()));
            }
            let atoms = entries
                .iter()
                .map(|a| {
                    Ok(ifsthermo::Atom {
                        position: ifsthermo::Point::new(a.point.clone())?,
                        weight: a.weight,
                    })
                })
                .collect::<Result<Vec<_>, ifsthermo::Error>>()?;
            let seed = DiscreteMeasure::new(engine.grid().dim(), atoms, 0.0)?;
            let beta = match resolve_beta(cfg, engine)? {
                ResolvedBeta::Finite(b) => Beta::finite(b)?,
                ResolvedBeta::Infinite => Beta::Infinite,
            };
            let series_tol = cfg.params.series_tol.unwrap_or(1e-7);
            Ok(ifsthermo::finite_type_state(
                engine,
                beta,
                &seed,
                series_tol,
                cfg.series_merge(),
            )?)
        }
        None => {
            let beta = finite_beta(cfg, engine)?;
            let sol =
                engine.solve_rpf(beta, &power_opts(cfg), &measure_opts(cfg))?;
            Ok(ifsthermo::critical_state(engine, &sol)?)
        }
    }
}

#[derive(Serialize)]
struct KmsStateResult {
    state: KmsStateMeasure,
    atoms_csv: &'static str,
}

pub fn kms_state(cfg: &RunConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let engine = build_engine(cfg)?;
    let state = build_state(cfg, &engine)?;
    out.write_csv("kms-state-atoms", |w| state.measure.write_csv(w))?;
    out.write_json(&KmsStateResult { state, atoms_csv: "kms-state-atoms.csv" })
}

#[derive(Serialize)]
struct KmsVerifyResult {
    state: KmsStateMeasure,
    verdict: KmsVerdict,
}

pub fn kms_verify(cfg: &RunConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let engine = build_engine(cfg)?;
    let state = build_state(cfg, &engine)?;
    let suite = engine.verification_suite();
    let tol = cfg.params.suite_tol.unwrap_or(1e-4);
    let verdict = verify_kms(&engine, &state, &suite, tol)?;
    out.write_json(&KmsVerifyResult { state, verdict })
}

pub fn diagnose_subcritical(cfg: &RunConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let engine = build_engine(cfg)?;
    let beta = finite_beta(cfg, &engine)?;
    let depth = cfg.params.depth.unwrap_or(12);
    let report = subcritical_diagnostic(&engine, beta, depth)?;
    out.write_csv("diagnose-subcritical-terms", |w| {
        writeln!(w, "step,term,partial_sum")?;
        for (i, (term, sum)) in report.terms.iter().zip(&report.partial_sums).enumerate() {
            writeln!(w, "{i},{term},{sum}")?;
        }
        Ok(())
    })?;
    out.write_json(&report)
}
