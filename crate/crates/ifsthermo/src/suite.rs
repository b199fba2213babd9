//! Test functions for verifying operator and state identities.
//!
//! Trace identities and eigenmeasure residuals are only checkable through
//! integrals, so the crate fixes a deterministic function suite: moments
//! (constants, coordinates, squared coordinates), products of distances to
//! the branched points (these vanish on `B`, which the trace identity
//! requires), and a reproducible batch of smooth strictly positive
//! functions drawn from a fixed-seed generator. Equal inputs build equal
//! suites, on every platform.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ifs::Point;

/// Seed for the smooth positive batch. Changing it changes every stored
/// verification value downstream, so it is part of the crate's contract.
const SMOOTH_SEED: u64 = 0x1F57E57;

/// How the branch-distance product is post-processed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VanishingVariant {
    /// `prod_b dist(x, b)`.
    Product,
    /// Square of the product; vanishes to second order on `B`.
    ProductSquared,
    /// Product times `1 + mean(x)`; breaks the symmetry of the plain
    /// product while still vanishing on `B`.
    ProductTilted,
}

/// One member of the verification suite.
#[derive(Clone, Debug)]
pub enum TestFunction {
    Constant { value: f64 },
    Coordinate { axis: usize },
    CoordinateSquared { axis: usize },
    /// Vanishes on the branched-point set it was built from.
    BranchVanishing { points: Vec<Point>, variant: VanishingVariant },
    /// `base + sum_t amp_t * cos^2(freq_t . x + phase_t)`, strictly positive.
    SmoothPositive { label: usize, base: f64, waves: Vec<Wave> },
}

#[derive(Clone, Debug)]
pub struct Wave {
    pub amplitude: f64,
    pub frequency: Vec<f64>,
    pub phase: f64,
}

impl TestFunction {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            TestFunction::Constant { value } => *value,
            TestFunction::Coordinate { axis } => x[*axis],
            TestFunction::CoordinateSquared { axis } => x[*axis] * x[*axis],
            TestFunction::BranchVanishing { points, variant } => {
                let product: f64 = points
                    .iter()
                    .map(|p| crate::ifs::euclidean(p.coords(), x))
                    .product();
                match variant {
                    VanishingVariant::Product => product,
                    VanishingVariant::ProductSquared => product * product,
                    VanishingVariant::ProductTilted => {
                        let mean = x.iter().sum::<f64>() / x.len() as f64;
                        product * (1.0 + mean)
                    }
                }
            }
            TestFunction::SmoothPositive { base, waves, .. } => {
                let mut v = *base;
                for w in waves {
                    let arg: f64 =
                        w.frequency.iter().zip(x).map(|(f, xi)| f * xi).sum::<f64>() + w.phase;
                    let c = arg.cos();
                    v += w.amplitude * c * c;
                }
                v
            }
        }
    }

    /// Stable identifier used in reports and failure messages.
    pub fn name(&self) -> String {
        match self {
            TestFunction::Constant { value } => format!("const_{value}"),
            TestFunction::Coordinate { axis } => format!("coord_{axis}"),
            TestFunction::CoordinateSquared { axis } => format!("coord_sq_{axis}"),
            TestFunction::BranchVanishing { variant, .. } => match variant {
                VanishingVariant::Product => "branch_dist_product".into(),
                VanishingVariant::ProductSquared => "branch_dist_product_sq".into(),
                VanishingVariant::ProductTilted => "branch_dist_product_tilted".into(),
            },
            TestFunction::SmoothPositive { label, .. } => format!("smooth_positive_{label}"),
        }
    }

    /// True when the function is non-negative on all of space, not just on
    /// the attractor.
    pub fn is_nonnegative(&self) -> bool {
        match self {
            TestFunction::Constant { value } => *value >= 0.0,
            TestFunction::Coordinate { .. } => false,
            TestFunction::CoordinateSquared { .. } => true,
            TestFunction::BranchVanishing { variant, .. } => {
                matches!(variant, VanishingVariant::Product | VanishingVariant::ProductSquared)
            }
            // base > 0 and every wave term is non-negative.
            TestFunction::SmoothPositive { base, .. } => *base > 0.0,
        }
    }

    /// True when the function vanishes identically on the branched-point
    /// set it was constructed against.
    pub fn vanishes_on_branch(&self) -> bool {
        matches!(self, TestFunction::BranchVanishing { .. })
    }

    /// Lipschitz bound valid on any convex region of diameter `diam` that
    /// contains the branched points and stays within distance `diam` of the
    /// origin. Coarse on purpose; used only to scale error budgets.
    pub fn lipschitz_bound(&self, diam: f64) -> f64 {
        match self {
            TestFunction::Constant { .. } => 0.0,
            TestFunction::Coordinate { .. } => 1.0,
            TestFunction::CoordinateSquared { .. } => 2.0 * diam,
            TestFunction::BranchVanishing { points, variant } => {
                let n = points.len() as f64;
                let prod_bound = diam.powi(points.len() as i32);
                let prod_lip = n * diam.powi(points.len() as i32 - 1);
                match variant {
                    VanishingVariant::Product => prod_lip,
                    VanishingVariant::ProductSquared => 2.0 * prod_bound * prod_lip,
                    VanishingVariant::ProductTilted => {
                        prod_lip * (1.0 + diam) + prod_bound
                    }
                }
            }
            TestFunction::SmoothPositive { waves, .. } => waves
                .iter()
                .map(|w| {
                    let norm = w.frequency.iter().map(|f| f * f).sum::<f64>().sqrt();
                    w.amplitude * norm
                })
                .sum(),
        }
    }
}

/// Number of seeded smooth positives in the default suite.
const SMOOTH_COUNT: usize = 10;

/// The default verification suite for a given ambient dimension and
/// branched-point set.
///
/// Layout: the constant 1, one coordinate and one squared coordinate per
/// axis, the three branch-vanishing products when `B` is nonempty, then
/// [`SMOOTH_COUNT`] seeded smooth positives. The smooth batch depends only
/// on the dimension, never on the branch structure, so suites for the same
/// system at different grid depths share it.
pub fn default_suite(dim: usize, branch_points: &[Point]) -> Vec<TestFunction> {
    let mut suite = moment_suite(dim);
    if !branch_points.is_empty() {
        for variant in [
            VanishingVariant::Product,
            VanishingVariant::ProductSquared,
            VanishingVariant::ProductTilted,
        ] {
            suite.push(TestFunction::BranchVanishing {
                points: branch_points.to_vec(),
                variant,
            });
        }
    }
    suite.extend(smooth_batch(dim, SMOOTH_COUNT));
    suite
}

/// Moment functions only: the constant 1, each coordinate, each squared
/// coordinate. Cheap to integrate, so iteration loops use these to decide
/// convergence.
pub fn moment_suite(dim: usize) -> Vec<TestFunction> {
    let mut suite = vec![TestFunction::Constant { value: 1.0 }];
    for axis in 0..dim {
        suite.push(TestFunction::Coordinate { axis });
    }
    for axis in 0..dim {
        suite.push(TestFunction::CoordinateSquared { axis });
    }
    suite
}

/// Reproducible batch of strictly positive smooth functions.
pub fn smooth_batch(dim: usize, count: usize) -> Vec<TestFunction> {
    let mut rng = ChaCha8Rng::seed_from_u64(SMOOTH_SEED);
    let mut batch = Vec::with_capacity(count);
    for label in 0..count {
        let mut waves = Vec::with_capacity(3);
        for _ in 0..3 {
            let amplitude = rng.gen_range(0.05..0.3);
            let frequency: Vec<f64> = (0..dim).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            waves.push(Wave { amplitude, frequency, phase });
        }
        batch.push(TestFunction::SmoothPositive { label, base: 0.5, waves });
    }
    batch
}
