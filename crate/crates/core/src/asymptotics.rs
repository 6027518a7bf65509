//! Perturbative predictions to compare with full solves.
//!
//! *Weak bending.* For the family `γ_β`, the ground state behaves as
//! `λ(β) = −α²/4 − (∫∫𝒜)² β⁴ + o(β⁴)` with
//!
//! ```text
//! 𝒜(s, s′) = (α⁴/32π) K₀′(α|s − s′|/2) · ( |s − s′|⁻¹ (∫φ)² − ∫φ² ),
//! ```
//!
//! the integrals running over the interval between `s′` and `s` with
//! `φ(u) = φ(u, s′)`. The bracket equals `−|s − s′|·Var(A)` over that
//! interval, which is how it is evaluated here. That form is manifestly
//! non-positive and symmetric. It is also exact for piecewise-linear `A`.
//!
//! *Wiggling.* Rotating everything beyond a pivot by `φ` moves each bound
//! state linearly in `φ`. The derivative of the discretized condition
//! `α η(κ, φ) = 1` gives the slope
//!
//! ```text
//! dλ/dφ = −(D f, f) / N,   N = −α (∂_{κ²} Q f, f) > 0,
//! ```
//!
//! with `D = α ∂_φ Q` (see [`wiggle_kernel`]) and `f` normalized. For a
//! cluster of `m` levels the slopes are the generalized eigenvalues of
//! `(−D, N)` on the cluster, which do not depend on the basis chosen.

use std::f64::consts::PI;

use faer::{Mat, Side};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CurveSpec, GeometryError, Profile, ScaledCurve};
use crate::operator::{self, Grid, Scheme};
use crate::quadrature::{self, QuadError, QuadSettings, Rect};
use crate::spectrum::SpectralResult;
use crate::specfun;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AsymptoticsError {
    #[error("coupling constant {0} must be positive and finite")]
    Alpha(f64),
    #[error("quadrature did not reach the requested accuracy: {0}")]
    Quadrature(#[from] QuadError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Operator(#[from] operator::OperatorError),
    #[error("a wiggle cluster needs at least one level")]
    EmptyCluster,
    #[error("cluster levels are {spread:e} apart, more than the {tol:e} allowed")]
    Cluster { spread: f64, tol: f64 },
    #[error("eigenfunction has {got} samples but the grid has {want} nodes")]
    GridMismatch { got: usize, want: usize },
    #[error("eigenfunctions of the cluster are linearly dependent")]
    Dependent,
}

/// Curve and coupling for the weak-bending kernel. The curve carries the
/// `β = 1` bending profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AKernelParams {
    pub curve: CurveSpec,
    pub alpha: f64,
}

impl AKernelParams {
    pub fn new(curve: CurveSpec, alpha: f64) -> Result<Self, AsymptoticsError> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(AsymptoticsError::Alpha(alpha));
        }
        Ok(Self { curve, alpha })
    }
}

/// `∫∫𝒜` and the resulting `β⁴` coefficient of the gap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticCoefficient {
    pub alpha: f64,
    pub integral: f64,
    /// `(∫∫𝒜)²`.
    pub gap_coefficient: f64,
    /// Quadrature error estimate plus the bound on the truncated tails.
    pub quadrature_error_estimate: f64,
    /// Half-width `T` added on each side of the bending support.
    pub tail_cutoff: f64,
}

impl AsymptoticCoefficient {
    /// `(∫∫𝒜)² β⁴`.
    pub fn predicted_gap(&self, beta: f64) -> f64 {
        predicted_gap(self, beta)
    }

    /// `−α²/4 − (∫∫𝒜)² β⁴`.
    pub fn predicted_eigenvalue(&self, beta: f64) -> f64 {
        -0.25 * self.alpha * self.alpha - self.predicted_gap(beta)
    }
}

/// `(∫∫𝒜)² β⁴`.
pub fn predicted_gap(coef: &AsymptoticCoefficient, beta: f64) -> f64 {
    coef.gap_coefficient * beta.powi(4)
}

/// `−|b − a|·Var(A)` over the interval between `a` and `b`.
pub fn bending_bracket(profile: &Profile, a: f64, b: f64) -> f64 {
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    if lo == hi {
        return 0.0;
    }
    // Chan's pairwise update of (length, mean, length·variance).
    let (mut len, mut mean, mut m2) = (0.0, 0.0, 0.0);
    for (u0, u1, a0, k) in profile.linear_pieces(lo, hi) {
        let l = u1 - u0;
        let pm = a0 + 0.5 * k * l;
        let pm2 = l * (k * l).powi(2) / 12.0;
        let total = len + l;
        let d = pm - mean;
        mean += d * l / total;
        m2 += pm2 + d * d * len * l / total;
        len = total;
    }
    -m2
}

/// `𝒜(s, s′)`; zero on the diagonal.
pub fn a_kernel(params: &AKernelParams, s: f64, s_prime: f64) -> f64 {
    let sigma = (s - s_prime).abs();
    if sigma == 0.0 {
        return 0.0;
    }
    let alpha = params.alpha;
    let bracket = bending_bracket(params.curve.profile(), s, s_prime);
    if bracket == 0.0 {
        return 0.0;
    }
    let k0_prime = -specfun::k1(0.5 * alpha * sigma);
    alpha.powi(4) / (32.0 * PI) * k0_prime * bracket
}

// Panel edges: knots, plus geometric panels out to distance `t` beyond the
// support on each side.
fn panel_edges(knots: &[f64], t: f64, first: f64) -> Vec<f64> {
    let (lo, hi) = (knots[0], knots[knots.len() - 1]);
    let mut edges = knots.to_vec();
    let mut d = first;
    loop {
        let d_clamped = d.min(t);
        edges.push(lo - d_clamped);
        edges.push(hi + d_clamped);
        if d >= t {
            break;
        }
        d *= 2.0;
    }
    edges.sort_by(f64::total_cmp);
    edges.dedup();
    edges
}

/// `∫∫𝒜` by adaptive tensor Gauss–Kronrod on panels aligned with the
/// knots of the curve, truncated at `T` beyond the support.
///
/// `T` solves `C e^{−αT/2} T = 0.01·ε` where `C` bounds
/// `𝒜 / (e^{−α(|s|+|s′|)/2}(|s|+|s′|))` on samples (distances measured from
/// the support) and `ε` is the absolute accuracy target. Cells with both
/// arguments on the same straight tail contribute exactly zero and are
/// skipped. Cells are integrated in parallel and summed in a fixed order.
pub fn a_coefficient(params: &AKernelParams, quad: &QuadSettings) -> Result<AsymptoticCoefficient, AsymptoticsError> {
    let alpha = params.alpha;
    let Some((lo, hi)) = params.curve.support() else {
        return Ok(AsymptoticCoefficient {
            alpha,
            integral: 0.0,
            gap_coefficient: 0.0,
            quadrature_error_estimate: 0.0,
            tail_cutoff: 0.0,
        });
    };
    let knots = params.curve.profile().knots().to_vec();
    let width = (hi - lo).max(1.0 / alpha);

    // Tail constant from samples on the two tails and across the support.
    let mut c_bound: f64 = 0.0;
    for i in 0..=40 {
        for j in 0..=40 {
            let x = 0.25 * width * (1.25f64).powi(i) / alpha.min(1.0).max(1e-3);
            let y = 0.25 * width * (1.25f64).powi(j) / alpha.min(1.0).max(1e-3);
            let (s, sp) = (lo - x, hi + y);
            let r = x + y;
            let envelope = (-0.5 * alpha * r).exp() * r;
            if envelope > 1e-250 {
                c_bound = c_bound.max(a_kernel(params, s, sp).abs() / envelope);
            }
        }
    }

    // Rough scale of the integral from one Kronrod pass per cell.
    let cells_for = |t: f64| -> Vec<Rect> {
        let edges = panel_edges(&knots, t, 0.25 * width);
        let mut cells = Vec::new();
        for w in edges.windows(2) {
            for v in edges.windows(2) {
                let same_left = w[1] <= lo && v[1] <= lo;
                let same_right = w[0] >= hi && v[0] >= hi;
                if !(same_left || same_right) {
                    cells.push(Rect { x0: w[0], x1: w[1], y0: v[0], y1: v[1] });
                }
            }
        }
        cells
    };
    let coarse_t = 40.0 / alpha;
    let coarse_cells = cells_for(coarse_t);
    let coarse_settings = QuadSettings { max_evaluations: 225, ..*quad };
    let scale: f64 = coarse_cells
        .par_iter()
        .map(|c| match quadrature::integrate_2d(|s, sp| a_kernel(params, s, sp), std::slice::from_ref(c), &coarse_settings) {
            Ok(e) => e.value,
            Err(QuadError::NotConverged { value, .. }) => value,
            Err(QuadError::NonFinite { .. }) => f64::NAN,
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum::<f64>()
        .abs();
    let target = quad.abs_tol.max(quad.rel_tol * scale);

    // Smallest T with C e^{−αT/2} T ≤ 0.01·target.
    let mut t = 1.0 / alpha;
    while c_bound * (-0.5 * alpha * t).exp() * t > 0.01 * target && t < 2000.0 / alpha {
        t *= 1.1;
    }
    // Mass of the envelope outside the truncated square bounds the tail.
    let tail = 8.0 * c_bound * (-0.5 * alpha * t).exp() * (t + 4.0 / alpha) / (alpha * alpha);

    let cells = cells_for(t);
    let per_cell = QuadSettings {
        abs_tol: target / cells.len() as f64,
        rel_tol: 0.0,
        max_evaluations: quad.max_evaluations,
    };
    let results: Vec<Result<quadrature::Estimate, QuadError>> = cells
        .par_iter()
        .map(|c| quadrature::integrate_2d(|s, sp| a_kernel(params, s, sp), std::slice::from_ref(c), &per_cell))
        .collect();
    let mut integral = 0.0;
    let mut error = 0.0;
    for r in results {
        let e = r?;
        integral += e.value;
        error += e.error;
    }
    Ok(AsymptoticCoefficient {
        alpha,
        integral,
        gap_coefficient: integral * integral,
        quadrature_error_estimate: error + tail,
        tail_cutoff: t,
    })
}

/// The two factors of the closed-form broken-line coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReducedIntegral {
    /// `∫₀^∞ t² K₁(t) dt = 2`.
    pub radial: f64,
    /// `∫₀^{π/2} sin 2ψ / (cos ψ + sin ψ)⁴ dψ = 1/3`.
    pub angular: f64,
    /// `−radial·angular = −2/3`.
    pub value: f64,
}

/// Evaluates the reduced broken-line integral by quadrature. In polar
/// coordinates on the quadrant `s < 0 < s′` the kernel factorizes, and
/// `∫∫𝒜 = (α/4π)·|value|` for a unit corner.
pub fn broken_line_reduced_integral() -> Result<ReducedIntegral, AsymptoticsError> {
    let settings = QuadSettings {
        abs_tol: 1e-15,
        rel_tol: 1e-13,
        ..QuadSettings::default()
    };
    let radial = quadrature::integrate(
        |t| if t == 0.0 { 0.0 } else { t * t * specfun::k1(t) },
        0.0,
        745.0,
        &[1.0, 2.0, 5.0, 10.0, 20.0, 40.0, 80.0],
        &settings,
    )?
    .value;
    let angular = quadrature::integrate(
        |p| (2.0 * p).sin() / (p.cos() + p.sin()).powi(4),
        0.0,
        0.5 * PI,
        &[],
        &settings,
    )?
    .value;
    Ok(ReducedIntegral {
        radial,
        angular,
        value: -radial * angular,
    })
}

/// `D(s, s′) = α ∂_φ q(s, s′)` at `φ = 0`, where `q` is the kernel of the
/// curve with everything beyond `pivot` rotated by `φ` about `γ(pivot)`.
///
/// With coordinates relative to `γ(pivot)`, on `s ≤ pivot < s′`
///
/// ```text
/// D(s, s′) = (ακ/2π) K₁(κρ) · (γ₂(s)γ₁(s′) − γ₁(s)γ₂(s′)) / ρ,
/// ```
///
/// which reduces to `(ακ/2π) K₁(κρ) s′ γ₂(s)/ρ` when the part beyond the
/// pivot is the straight tail along the first axis. The other ordering uses
/// swapped arguments, so the kernel is symmetric; it vanishes when both
/// points lie on the same side of the pivot.
pub fn wiggle_kernel(curve: &ScaledCurve, alpha: f64, kappa: f64, pivot: f64, s: f64, s_prime: f64) -> f64 {
    let (a, b) = if s <= pivot && s_prime > pivot {
        (s, s_prime)
    } else if s_prime <= pivot && s > pivot {
        (s_prime, s)
    } else {
        return 0.0;
    };
    let o = curve.point(pivot);
    let p = curve.point(a);
    let q = curve.point(b);
    let (x1, y1) = (p[0] - o[0], p[1] - o[1]);
    let (x2, y2) = (q[0] - o[0], q[1] - o[1]);
    let rho = (x1 - x2).hypot(y1 - y2);
    if rho == 0.0 {
        return 0.0;
    }
    let cross = y1 * x2 - x1 * y2;
    alpha * kappa / (2.0 * PI) * specfun::k1(kappa * rho) * cross / rho
}

/// First-order response of a cluster of levels to wiggling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WiggleSlope {
    pub levels: Vec<usize>,
    pub pivot: f64,
    /// Mean `κ` of the cluster, used in both kernels.
    pub kappa: f64,
    /// `S_ij = α (D f_i, f_j)`.
    pub matrix: Vec<Vec<f64>>,
    /// Eigenvalues of `S`, ascending.
    pub matrix_eigenvalues: Vec<f64>,
    /// `N_ij = −α (∂_{κ²} Q f_i, f_j)`.
    pub metric: Vec<Vec<f64>>,
    /// `dλ/dφ` for each level of the cluster, ascending: the generalized
    /// eigenvalues of `(−D, N)` with `D_ij = (D f_i, f_j)`.
    pub slopes: Vec<f64>,
}

/// Options for [`wiggle_slope`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WiggleOptions {
    /// Pivot arc length; defaults to the right end of the bending support.
    pub pivot: Option<f64>,
    pub scheme: Scheme,
    /// Largest allowed spread of the cluster eigenvalues, relative to `α²`.
    pub cluster_tol: f64,
}

impl Default for WiggleOptions {
    fn default() -> Self {
        Self {
            pivot: None,
            scheme: Scheme::default(),
            cluster_tol: 1e-8,
        }
    }
}

/// The default wiggle pivot: the end of the bending support, where the
/// right tail begins.
pub fn default_pivot(curve: &CurveSpec) -> f64 {
    curve.support().map_or(0.0, |(_, hi)| hi)
}

fn to_rows(m: &Mat<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

/// Wiggle slopes of a cluster of (near-)degenerate levels of `curve`.
pub fn wiggle_slope(
    curve: &CurveSpec,
    alpha: f64,
    cluster: &[SpectralResult],
    grid: &Grid,
    options: &WiggleOptions,
) -> Result<WiggleSlope, AsymptoticsError> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(AsymptoticsError::Alpha(alpha));
    }
    let m = cluster.len();
    if m == 0 {
        return Err(AsymptoticsError::EmptyCluster);
    }
    let lambdas: Vec<f64> = cluster.iter().map(|r| r.lambda).collect();
    let spread = lambdas.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        - lambdas.iter().copied().fold(f64::INFINITY, f64::min);
    let tol = options.cluster_tol * alpha * alpha;
    if spread > tol {
        return Err(AsymptoticsError::Cluster { spread, tol });
    }
    let n = grid.len();
    for r in cluster {
        if r.eigenfunction.len() != n {
            return Err(AsymptoticsError::GridMismatch {
                got: r.eigenfunction.len(),
                want: n,
            });
        }
    }
    let kappa = cluster.iter().map(|r| r.kappa).sum::<f64>() / m as f64;
    let pivot = options.pivot.unwrap_or_else(|| default_pivot(curve));
    let unit = ScaledCurve::new(curve.clone(), 1.0)?;

    // Orthonormalize the cluster in the weighted grid norm.
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m);
    for r in cluster {
        let mut f = r.eigenfunction.clone();
        for b in &basis {
            let c = grid.dot(&f, b);
            f.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
        }
        let norm = grid.dot(&f, &f).sqrt();
        if norm < 1e-8 {
            return Err(AsymptoticsError::Dependent);
        }
        f.iter_mut().for_each(|x| *x /= norm);
        basis.push(f);
    }
    // g = √w f turns weighted forms into Euclidean ones.
    let g: Vec<Vec<f64>> = basis
        .iter()
        .map(|f| f.iter().zip(grid.weights()).map(|(x, w)| x * w.sqrt()).collect())
        .collect();

    let s = grid.nodes();
    let w = grid.weights();
    let d_rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    (w[i] * w[j]).sqrt() * wiggle_kernel(&unit, alpha, kappa, pivot, s[i], s[j])
                })
                .collect()
        })
        .collect();
    let dq = operator::assemble_dkappa(&unit, kappa, grid, options.scheme)?;

    let form = |a: &[f64], b: &[f64], entry: &dyn Fn(usize, usize) -> f64| -> f64 {
        (0..n).map(|i| a[i] * (0..n).map(|j| entry(i, j) * b[j]).sum::<f64>()).sum()
    };
    let d = Mat::from_fn(m, m, |i, j| form(&g[i], &g[j], &|p, q| d_rows[p][q]));
    // ∂_{κ²} = (1/2κ) ∂_κ
    let metric = Mat::from_fn(m, m, |i, j| -alpha / (2.0 * kappa) * form(&g[i], &g[j], &|p, q| dq[(p, q)]));
    let d = Mat::from_fn(m, m, |i, j| 0.5 * (d[(i, j)] + d[(j, i)]));
    let metric = Mat::from_fn(m, m, |i, j| 0.5 * (metric[(i, j)] + metric[(j, i)]));
    let matrix = Mat::from_fn(m, m, |i, j| alpha * d[(i, j)]);

    let matrix_eigenvalues = matrix
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|_| AsymptoticsError::Dependent)?;
    // Generalized eigenvalues of (−D, N) through N = LLᵀ.
    let llt = metric.llt(Side::Lower).map_err(|_| AsymptoticsError::Dependent)?;
    let l = llt.L();
    let mut linv = Mat::<f64>::zeros(m, m);
    for c in 0..m {
        for r in 0..m {
            let mut v = if r == c { 1.0 } else { 0.0 };
            for k in 0..r {
                v -= l[(r, k)] * linv[(k, c)];
            }
            linv[(r, c)] = v / l[(r, r)];
        }
    }
    let reduced = Mat::from_fn(m, m, |i, j| {
        let mut v = 0.0;
        for p in 0..m {
            for q in 0..m {
                v -= linv[(i, p)] * d[(p, q)] * linv[(j, q)];
            }
        }
        v
    });
    let reduced = Mat::from_fn(m, m, |i, j| 0.5 * (reduced[(i, j)] + reduced[(j, i)]));
    let slopes = reduced
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|_| AsymptoticsError::Dependent)?;

    Ok(WiggleSlope {
        levels: cluster.iter().map(|r| r.level).collect(),
        pivot,
        kappa,
        matrix: to_rows(&matrix),
        matrix_eigenvalues,
        metric: to_rows(&metric),
        slopes,
    })
}
