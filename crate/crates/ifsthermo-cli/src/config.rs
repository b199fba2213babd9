//! Run-configuration schema.
//!
//! One TOML document per run. Every section rejects unknown keys, so a
//! typo surfaces as a validation error instead of silently activating a
//! default. Values that the library also validates (tolerances, map
//! entries, seed weights) are passed through and checked there; the schema
//! only enforces structure.

use serde::Deserialize;

use ifsthermo::{AffineMap, IfsSystem, Point, PotentialFamily, PotentialKind, SeriesMerge};

use crate::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Worker threads for parallel sections; absent or 0 means automatic.
    #[serde(default)]
    pub threads: Option<usize>,
    pub ifs: IfsConfig,
    /// One entry per branch, or a single entry applied to every branch.
    /// Commands that only touch geometry (attractor, branch) ignore it.
    #[serde(default)]
    pub potentials: Vec<PotentialEntry>,
    pub grid: GridConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub params: Params,
}

/// Either a named preset or an explicit map list with a declared ambient
/// diameter, never both.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IfsConfig {
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub maps: Option<Vec<MapEntry>>,
    #[serde(default)]
    pub ambient_diameter: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapEntry {
    /// Row-major square matrix.
    pub matrix: Vec<f64>,
    pub offset: Vec<f64>,
    pub contraction_factor: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialEntry {
    /// `h(x) = value` on this branch.
    Constant { value: f64 },
    /// `h(x) = gradient . x + offset` on this branch.
    Affine { gradient: Vec<f64>, offset: f64 },
    /// `h(x) = e` on this branch.
    Euler,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub depth: usize,
    /// Required for explicit maps; presets carry their own.
    #[serde(default)]
    pub base_point: Option<Vec<f64>>,
    /// Merge radius for grid points; absent keeps the library default.
    #[serde(default)]
    pub dedup_tol: Option<f64>,
    /// Hard cap on stored grid points.
    #[serde(default)]
    pub max_points: Option<usize>,
}

/// Iteration knobs. Zeros keep the library defaults, so an empty section
/// is a valid configuration.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Relative tolerance of the power iteration.
    pub rtol: f64,
    /// Iteration cap of the power iteration.
    pub max_iter: usize,
    /// Bisection width for the critical parameter; 0 means 1e-9.
    pub beta_tol: f64,
    /// Moment tolerance of the eigenmeasure iteration. Coarse grids put a
    /// bucketing-noise floor under this; loosen it rather than deepening
    /// the grid when only the measure is needed.
    pub measure_rtol: f64,
    /// Iteration cap of the eigenmeasure iteration.
    pub measure_max_iter: usize,
}

/// Command-specific parameters. Each command documents which keys it
/// reads; unrelated keys may coexist so one file can drive several
/// commands.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Params {
    /// Inverse temperature: a number, "critical", or "infinity".
    pub beta: Option<BetaSpec>,
    /// Strictly increasing parameter list for the radius curve.
    pub betas: Option<Vec<f64>>,
    /// Seed atoms for the finite-type construction; absent means the
    /// critical state.
    pub seed: Option<Vec<SeedAtom>>,
    /// Relative tail bound for the finite-type series; default 1e-7.
    pub series_tol: Option<f64>,
    /// Atom-growth policy for the series: "grid", "none", or a cell side.
    pub merge: Option<MergeSpec>,
    /// Escape-witness search depth; must come with avoid_depth.
    pub search_depth: Option<usize>,
    /// Depth to which a witness orbit must avoid the branched values.
    pub avoid_depth: Option<usize>,
    /// Clearance radius for escape witnesses; default 1e-6.
    pub escape_tol: Option<f64>,
    /// Slack tolerance for the trace identities; default 1e-4.
    pub suite_tol: Option<f64>,
    /// Number of series terms for the subcritical diagnostic; default 12.
    pub depth: Option<usize>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(untagged)]
pub enum BetaSpec {
    Number(f64),
    Word(BetaWord),
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaWord {
    Critical,
    Infinity,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(untagged)]
pub enum MergeSpec {
    Cells(f64),
    Word(MergeWord),
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeWord {
    Grid,
    None,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedAtom {
    pub point: Vec<f64>,
    pub weight: f64,
}

pub fn parse(bytes: &[u8]) -> Result<RunConfig, CliError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| CliError::Config(format!("config is not UTF-8: {e}")))?;
    toml::from_str(text).map_err(|e| CliError::Config(format!("config error: {e}")))
}

impl RunConfig {
    pub fn build_ifs(&self) -> Result<IfsSystem, CliError> {
        match (&self.ifs.preset, &self.ifs.maps) {
            (Some(name), None) => {
                if self.ifs.ambient_diameter.is_some() {
                    return Err(CliError::Config(
                        "ifs.ambient_diameter only applies to explicit maps; \
                         presets carry their own"
                            .into(),
                    ));
                }
                Ok(IfsSystem::preset(name)?)
            }
            (None, Some(maps)) => {
                let diam = self.ifs.ambient_diameter.ok_or_else(|| {
                    CliError::Config("ifs.ambient_diameter is required with explicit maps".into())
                })?;
                let maps = maps
                    .iter()
                    .map(|m| {
                        AffineMap::new(m.matrix.clone(), m.offset.clone(), m.contraction_factor)
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(IfsSystem::new(maps, diam)?)
            }
            (Some(_), Some(_)) => {
                Err(CliError::Config("give either ifs.preset or ifs.maps, not both".into()))
            }
            (None, None) => Err(CliError::Config("ifs needs a preset or an explicit map list".into())),
        }
    }

    pub fn base_point(&self) -> Result<Point, CliError> {
        if let Some(coords) = &self.grid.base_point {
            return Ok(Point::new(coords.clone())?);
        }
        match &self.ifs.preset {
            Some(name) => Ok(IfsSystem::preset_base_point(name)?),
            None => Err(CliError::Config(
                "grid.base_point is required with explicit maps".into(),
            )),
        }
    }

    pub fn build_potentials(&self, branches: usize) -> Result<PotentialFamily, CliError> {
        if self.potentials.is_empty() {
            return Err(CliError::Config(
                "this command needs a potentials array (one entry per branch, \
                 or one entry for all)"
                    .into(),
            ));
        }
        let entries: Vec<PotentialEntry> = if self.potentials.len() == 1 && branches > 1 {
            vec![self.potentials[0].clone(); branches]
        } else if self.potentials.len() == branches {
            self.potentials.clone()
        } else {
            return Err(CliError::Config(format!(
                "{} potential entries for {branches} branches; give one per \
                 branch or a single shared entry",
                self.potentials.len()
            )));
        };
        let kinds = entries
            .into_iter()
            .map(|e| match e {
                PotentialEntry::Constant { value } => PotentialKind::Constant { value },
                PotentialEntry::Affine { gradient, offset } => {
                    PotentialKind::AffineInX { gradient, offset }
                }
                PotentialEntry::Euler => {
                    PotentialKind::Constant { value: std::f64::consts::E }
                }
            })
            .collect();
        Ok(PotentialFamily::new(kinds)?)
    }

    pub fn beta_tol(&self) -> f64 {
        if self.solver.beta_tol > 0.0 { self.solver.beta_tol } else { 1e-9 }
    }

    pub fn series_merge(&self) -> SeriesMerge {
        match self.params.merge {
            None | Some(MergeSpec::Word(MergeWord::Grid)) => SeriesMerge::GridResolution,
            Some(MergeSpec::Word(MergeWord::None)) => SeriesMerge::None,
            Some(MergeSpec::Cells(c)) => SeriesMerge::Cells(c),
        }
    }
}
