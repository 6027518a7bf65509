//! Eigenvalues of `−Δ − αδ_Γ` below the threshold `−α²/4`.
//!
//! For fixed `j` the `j`-th eigenvalue `η_j(κ)` of the discretized
//! Birman–Schwinger operator decreases strictly in `κ`, so each bound state
//! `−κ_j²` is the unique root of `α η_j(κ) = 1` and bisection is safe. Signs
//! are read from factorizations of `I − α M(κ)` rather than eigensolves:
//! Cholesky succeeds exactly when `α η₁ < 1`, and the negative inertia of
//! `LBLᵀ` counts the `j` with `α η_j > 1`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eigen::{self, EigenError};
use crate::geometry::ScaledCurve;
use crate::operator::{self, Grid, GridSize, OperatorError, Scheme};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpectrumError {
    #[error("coupling constant {0} must be positive and finite")]
    Alpha(f64),
    #[error("tolerance {0} must be positive")]
    Tolerance(f64),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Eigen(#[from] EigenError),
    #[error("no sign change of the Birman-Schwinger condition up to kappa = {kappa_hi}")]
    Unbracketed { kappa_hi: f64 },
    #[error("supplied bracket ({lo}, {hi}) does not enclose a root")]
    BadBracket { lo: f64, hi: f64 },
    #[error("levels {levels:?} do not form a cluster within {tol:e}")]
    Cluster { levels: Vec<usize>, tol: f64 },
}

/// Knobs shared by the solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveSettings {
    pub scheme: Scheme,
    /// Bisection stops once the bracket in `κ` is this narrow.
    pub tol: f64,
    /// Levels closer than `cluster_tol·α²` are reported as one cluster.
    pub cluster_tol: f64,
    /// How many times the upper end of the bracket may be pushed out.
    pub max_expansions: usize,
}

impl Default for SolveSettings {
    fn default() -> Self {
        Self {
            scheme: Scheme::default(),
            tol: 1e-10,
            cluster_tol: 1e-8,
            max_expansions: 20,
        }
    }
}

/// A resolved bound state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralResult {
    pub kappa: f64,
    /// `λ = −κ²`.
    pub lambda: f64,
    /// `δ = √(κ² − α²/4)`, the decay rate along the tails.
    pub delta: f64,
    /// `|α η_j(κ) − 1|` at the returned `κ`.
    pub residual: f64,
    pub grid: GridSize,
    pub curve_hash: String,
    /// Position in the ascending list of eigenvalues, starting at 1.
    #[serde(skip)]
    pub level: usize,
    /// Final bisection bracket in `κ`.
    #[serde(skip)]
    pub bracket: (f64, f64),
    /// Samples of the Birman–Schwinger eigenfunction at the grid nodes,
    /// normalized in the weighted grid norm.
    #[serde(skip)]
    pub eigenfunction: Vec<f64>,
}

/// Outcome of [`solve_ground`]: a bound state is not guaranteed to exist
/// (or to be resolved by the grid), and its absence is an answer.
#[derive(Debug, Clone, PartialEq)]
pub enum Ground {
    Bound(SpectralResult),
    /// `α η₁(κ) < 1` already just above the threshold.
    NoBoundState { kappa_lo: f64, eta_alpha: f64 },
}

impl Ground {
    pub fn bound(self) -> Option<SpectralResult> {
        match self {
            Ground::Bound(r) => Some(r),
            Ground::NoBoundState { .. } => None,
        }
    }
}

fn check(alpha: f64, settings: &SolveSettings) -> Result<(), SpectrumError> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(SpectrumError::Alpha(alpha));
    }
    if !(settings.tol > 0.0) {
        return Err(SpectrumError::Tolerance(settings.tol));
    }
    Ok(())
}

/// `η_j(κ)`, the `j`-th largest eigenvalue (`j ≥ 1`) of the assembled
/// operator.
pub fn eta(curve: &ScaledCurve, kappa: f64, grid: &Grid, j: usize, scheme: Scheme) -> Result<f64, SpectrumError> {
    let m = operator::assemble(curve, kappa, grid, scheme)?;
    let pairs = eigen::top_eigenpairs(m.as_mat().as_ref(), j)?;
    Ok(pairs[j - 1].value)
}

/// The `κ` at which the infinite straight line, discretized with spacing
/// `h`, stops having `α η₁ ≥ 1`. Exactly `α/2` for the cell-integrated
/// scheme.
pub fn discrete_threshold(alpha: f64, h: f64, scheme: Scheme) -> f64 {
    match scheme {
        Scheme::CellIntegrated => 0.5 * alpha,
        Scheme::Midpoint => {
            let g = |k: f64| alpha * operator::straight_symbol(k, h, scheme) - 1.0;
            let (mut lo, mut hi) = (0.25 * alpha, alpha);
            while g(hi) > 0.0 {
                hi *= 2.0;
            }
            while g(lo) < 0.0 {
                lo *= 0.5;
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if g(mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo <= 1e-15 * hi {
                    break;
                }
            }
            0.5 * (lo + hi)
        }
    }
}

fn lower_end(alpha: f64, grid: &Grid, scheme: Scheme) -> f64 {
    discrete_threshold(alpha, grid.spacing(), scheme).max(0.5 * alpha) * (1.0 + 1e-12)
}

// Sum of |corner angles| and ∫|k|: a bending scale that does not cancel.
fn bending_scale(curve: &ScaledCurve) -> f64 {
    let base = curve.base();
    let corners: f64 = base.vertices().iter().map(|v| v.angle.abs()).sum();
    let arcs: f64 = base.segments().iter().map(|g| (g.k * (g.b - g.a)).abs()).sum();
    curve.beta().abs() * (corners + arcs)
}

// Number of j with α η_j(κ) > 1.
fn count_levels(curve: &ScaledCurve, alpha: f64, kappa: f64, grid: &Grid, scheme: Scheme) -> Result<usize, SpectrumError> {
    let m = operator::assemble(curve, kappa, grid, scheme)?;
    Ok(eigen::count_above_one(m.as_mat().as_ref(), alpha))
}

fn ground_present(curve: &ScaledCurve, alpha: f64, kappa: f64, grid: &Grid, scheme: Scheme) -> Result<bool, SpectrumError> {
    let m = operator::assemble(curve, kappa, grid, scheme)?;
    Ok(!eigen::all_below_one(m.as_mat().as_ref(), alpha))
}

// Bisection for the κ where `above(κ)` switches from true to false.
fn bisect(
    mut lo: f64,
    mut hi: f64,
    tol: f64,
    mut above: impl FnMut(f64) -> Result<bool, SpectrumError>,
) -> Result<(f64, f64), SpectrumError> {
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if above(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((lo, hi))
}

fn upper_end(
    curve: &ScaledCurve,
    alpha: f64,
    lo: f64,
    settings: &SolveSettings,
    mut above: impl FnMut(f64) -> Result<bool, SpectrumError>,
) -> Result<f64, SpectrumError> {
    let mut excess = alpha * bending_scale(curve).powi(2).max(0.01);
    for _ in 0..=settings.max_expansions {
        let hi = lo + excess;
        if !above(hi)? {
            return Ok(hi);
        }
        excess *= 2.0;
    }
    Err(SpectrumError::Unbracketed { kappa_hi: lo + excess })
}

fn finish(
    curve: &ScaledCurve,
    alpha: f64,
    grid: &Grid,
    scheme: Scheme,
    level: usize,
    bracket: (f64, f64),
) -> Result<SpectralResult, SpectrumError> {
    let kappa = 0.5 * (bracket.0 + bracket.1);
    let m = operator::assemble(curve, kappa, grid, scheme)?;
    let pairs = eigen::top_eigenpairs(m.as_mat().as_ref(), level)?;
    let pair = &pairs[level - 1];
    let mut f: Vec<f64> = pair
        .vector
        .iter()
        .zip(grid.weights())
        .map(|(v, w)| v / w.sqrt())
        .collect();
    // Fix the sign so the largest-magnitude sample is positive.
    let peak = f.iter().copied().fold(0.0, |a: f64, b| if b.abs() > a.abs() { b } else { a });
    if peak < 0.0 {
        f.iter_mut().for_each(|x| *x = -*x);
    }
    Ok(SpectralResult {
        kappa,
        lambda: -kappa * kappa,
        delta: (kappa * kappa - 0.25 * alpha * alpha).max(0.0).sqrt(),
        residual: (alpha * pair.value - 1.0).abs(),
        grid: grid.size(),
        curve_hash: curve.hash(),
        level,
        bracket,
        eigenfunction: f,
    })
}

/// Lowest eigenvalue, by bisection on `α η₁(κ) = 1`.
pub fn solve_ground(curve: &ScaledCurve, alpha: f64, grid: &Grid, settings: &SolveSettings) -> Result<Ground, SpectrumError> {
    solve_ground_near(curve, alpha, grid, settings, None)
}

/// As [`solve_ground`], starting from a bracket `(κ_lo, κ_hi)` believed to
/// contain the root. The bracket is verified; if it fails the full search
/// runs instead.
pub fn solve_ground_near(
    curve: &ScaledCurve,
    alpha: f64,
    grid: &Grid,
    settings: &SolveSettings,
    hint: Option<(f64, f64)>,
) -> Result<Ground, SpectrumError> {
    check(alpha, settings)?;
    let scheme = settings.scheme;
    let floor = lower_end(alpha, grid, scheme);
    let above = |k: f64| ground_present(curve, alpha, k, grid, scheme);

    if let Some((lo, hi)) = hint {
        let lo = lo.max(floor);
        if lo < hi && above(lo)? && !above(hi)? {
            let bracket = bisect(lo, hi, settings.tol, above)?;
            return finish(curve, alpha, grid, scheme, 1, bracket).map(Ground::Bound);
        }
    }

    if !above(floor)? {
        let eta_alpha = alpha * eta(curve, floor, grid, 1, scheme)?;
        return Ok(Ground::NoBoundState {
            kappa_lo: floor,
            eta_alpha,
        });
    }
    let hi = upper_end(curve, alpha, floor, settings, above)?;
    let bracket = bisect(floor, hi, settings.tol, above)?;
    finish(curve, alpha, grid, scheme, 1, bracket).map(Ground::Bound)
}

/// Up to `max_levels` eigenvalues in ascending order.
pub fn solve_all(
    curve: &ScaledCurve,
    alpha: f64,
    grid: &Grid,
    settings: &SolveSettings,
    max_levels: usize,
) -> Result<Vec<SpectralResult>, SpectrumError> {
    check(alpha, settings)?;
    let scheme = settings.scheme;
    let floor = lower_end(alpha, grid, scheme);
    let available = count_levels(curve, alpha, floor, grid, scheme)?;
    let wanted = available.min(max_levels);
    if wanted == 0 {
        return Ok(Vec::new());
    }
    let hi = upper_end(curve, alpha, floor, settings, |k| ground_present(curve, alpha, k, grid, scheme))?;
    let mut out = Vec::with_capacity(wanted);
    let mut top = hi;
    for level in 1..=wanted {
        let bracket = bisect(floor, top, settings.tol, |k| {
            Ok(count_levels(curve, alpha, k, grid, scheme)? >= level)
        })?;
        top = bracket.1;
        out.push(finish(curve, alpha, grid, scheme, level, bracket)?);
    }
    Ok(out)
}

/// Groups consecutive levels whose eigenvalues differ by less than
/// `cluster_tol·α²`. Returns indices into `levels`.
pub fn clusters(levels: &[SpectralResult], alpha: f64, cluster_tol: f64) -> Vec<Vec<usize>> {
    let tol = cluster_tol * alpha * alpha;
    let mut out: Vec<Vec<usize>> = Vec::new();
    for (i, r) in levels.iter().enumerate() {
        match out.last_mut() {
            Some(c) if (levels[*c.last().unwrap()].lambda - r.lambda).abs() < tol => c.push(i),
            _ => out.push(vec![i]),
        }
    }
    out
}
