//! Nyström discretization of the Birman–Schwinger operator
//!
//! ```text
//! (Q(κ) f)(s) = ∫ q(s, s′) f(s′) ds′,   q(s, s′) = K₀(κ ρ(s, s′)) / 2π,
//! ```
//!
//! with `ρ` the chord length, on a uniform mesh of `[−L, L]`.

use std::f64::consts::PI;
use std::io::Write;

use faer::Mat;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::ScaledCurve;
use crate::quadrature::{self, GaussRule, QuadSettings};
use crate::specfun::{self, EULER_GAMMA};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OperatorError {
    #[error("kernel is singular on the diagonal (s = s' = {0})")]
    Diagonal(f64),
    #[error("spectral parameter {0} must be positive and finite")]
    Kappa(f64),
    #[error("grid needs a positive half-length and at least one node (got L = {half_length}, n = {n})")]
    Grid { half_length: f64, n: usize },
}

/// Uniform mid-point mesh of `[−L, L]` with `n` cells of width `h = 2L/n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridSize", into = "GridSize")]
pub struct Grid {
    half_length: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

/// Serialized form of a [`Grid`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSize {
    #[serde(rename = "L")]
    pub half_length: f64,
    pub n: usize,
}

impl TryFrom<GridSize> for Grid {
    type Error = OperatorError;

    fn try_from(size: GridSize) -> Result<Self, Self::Error> {
        Grid::uniform(size.half_length, size.n)
    }
}

impl From<Grid> for GridSize {
    fn from(grid: Grid) -> Self {
        grid.size()
    }
}

impl Grid {
    pub fn uniform(half_length: f64, n: usize) -> Result<Self, OperatorError> {
        if !(half_length > 0.0 && half_length.is_finite()) || n == 0 {
            return Err(OperatorError::Grid { half_length, n });
        }
        let h = 2.0 * half_length / n as f64;
        let nodes = (0..n).map(|i| -half_length + h * (i as f64 + 0.5)).collect();
        Ok(Self {
            half_length,
            nodes,
            weights: vec![h; n],
        })
    }

    /// Mesh of spacing `h` whose cell boundaries are the multiples of `h`,
    /// covering at least `[−L, L]`. Corners placed at multiples of `h` then
    /// sit on cell boundaries, which keeps the convergence in `h` regular.
    pub fn with_spacing(h: f64, half_length: f64) -> Result<Self, OperatorError> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(OperatorError::Grid { half_length, n: 0 });
        }
        let half_cells = (half_length / h - 1e-9).ceil().max(1.0) as usize;
        Self::uniform(half_cells as f64 * h, 2 * half_cells)
    }

    pub fn half_length(&self) -> f64 {
        self.half_length
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn spacing(&self) -> f64 {
        self.weights[0]
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn size(&self) -> GridSize {
        GridSize {
            half_length: self.half_length,
            n: self.len(),
        }
    }

    /// Weighted inner product `Σ wᵢ fᵢ gᵢ`.
    pub fn dot(&self, f: &[f64], g: &[f64]) -> f64 {
        self.weights.iter().zip(f).zip(g).map(|((w, a), b)| w * a * b).sum()
    }
}

/// How the logarithmic singularity of the kernel is treated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Product integration: the straight-line part `K₀(κ|s − s′|)` is
    /// integrated exactly over each cell and only the smooth remainder
    /// `q(ρ) − q(|s − s′|)` is sampled. The remainder vanishes identically
    /// on straight runs, so the straight line is reproduced exactly.
    #[default]
    CellIntegrated,
    /// Plain mid-point rule with a cell-averaged diagonal.
    Midpoint,
}

/// `q(s, s′) = K₀(κ ρ(s, s′)) / 2π` for `s ≠ s′`.
pub fn q_kernel(curve: &ScaledCurve, kappa: f64, s: f64, s_prime: f64) -> Result<f64, OperatorError> {
    check_kappa(kappa)?;
    if s == s_prime {
        return Err(OperatorError::Diagonal(s));
    }
    Ok(specfun::k0(kappa * curve.distance(s, s_prime)) / (2.0 * PI))
}

fn check_kappa(kappa: f64) -> Result<(), OperatorError> {
    if kappa > 0.0 && kappa.is_finite() {
        Ok(())
    } else {
        Err(OperatorError::Kappa(kappa))
    }
}

/// `∫₀^b K₀(u) du`.
///
/// Up to `b = 2` the logarithm is split off analytically,
/// `∫₀^b K₀ = ∫₀^b [K₀(u) + ln(u/2) + γ] du − b(ln(b/2) − 1 + γ)`,
/// and the smooth remainder is integrated adaptively.
pub fn integral_k0(b: f64) -> f64 {
    if b <= 0.0 {
        return 0.0;
    }
    let settings = QuadSettings {
        abs_tol: 1e-16,
        rel_tol: 1e-14,
        ..QuadSettings::default()
    };
    let head = b.min(2.0);
    let smooth = |u: f64| {
        if u == 0.0 {
            0.0
        } else {
            specfun::k0(u) + (0.5 * u).ln() + EULER_GAMMA
        }
    };
    let mut total = settled(quadrature::integrate(smooth, 0.0, head, &[], &settings))
        - head * ((0.5 * head).ln() - 1.0 + EULER_GAMMA);
    if b > 2.0 {
        let upper = b.min(750.0);
        let splits = [4.0, 8.0, 16.0, 32.0];
        total += settled(quadrature::integrate(specfun::k0, 2.0, upper, &splits, &settings));
    }
    total
}

// The tolerances above sit at round-off; a stalled refinement still carries
// the best available value.
fn settled(r: Result<quadrature::Estimate, quadrature::QuadError>) -> f64 {
    match r {
        Ok(e) => e.value,
        Err(quadrature::QuadError::NotConverged { value, .. }) => value,
        Err(quadrature::QuadError::NonFinite { .. }) => f64::NAN,
    }
}

/// Cell average `(1/h) ∫_{−h/2}^{h/2} K₀(κ|t|)/2π dt` of the kernel on the
/// diagonal. Depends on `(κ, h)` only through `κh`.
pub fn diag_correction(kappa: f64, h: f64) -> f64 {
    let b = 0.5 * kappa * h;
    integral_k0(b) / (PI * kappa * h)
}

// T_m = ∫_{(m−½)h}^{(m+½)h} K₀(κ|t|)/2π dt for m = 0..n.
fn toeplitz_cells(kappa: f64, h: f64, n: usize) -> Vec<f64> {
    let rule = GaussRule::new(16);
    let mut t = Vec::with_capacity(n);
    t.push(h * diag_correction(kappa, h));
    for m in 1..n {
        let a = (m as f64 - 0.5) * h;
        if kappa * a > 745.0 {
            t.resize(n, 0.0);
            break;
        }
        t.push(rule.integrate(a, a + h, |x| specfun::k0(kappa * x)) / (2.0 * PI));
    }
    t
}

// dT_m/dκ from T_m(κ) = (1/2πκ) ∫_{κa}^{κb} K₀.
fn toeplitz_cells_dkappa(kappa: f64, h: f64, cells: &[f64]) -> Vec<f64> {
    cells
        .iter()
        .enumerate()
        .map(|(m, &tm)| {
            let b = (m as f64 + 0.5) * h;
            let a = (m as f64 - 0.5) * h;
            let upper = b * specfun::k0(kappa * b);
            let lower = if m == 0 { -upper } else { a * specfun::k0(kappa * a) };
            -tm / kappa + (upper - lower) / (2.0 * PI * kappa)
        })
        .collect()
}

/// Dense symmetric Nyström matrix of `Q(κ)`.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    kappa: f64,
    scheme: Scheme,
    grid: Grid,
    curve_hash: String,
    matrix: Mat<f64>,
}

impl KernelMatrix {
    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn curve_hash(&self) -> &str {
        &self.curve_hash
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[(i, j)]
    }

    pub fn as_mat(&self) -> &Mat<f64> {
        &self.matrix
    }

    pub fn into_mat(self) -> Mat<f64> {
        self.matrix
    }

    /// Writes the matrix as CSV: a `#`-prefixed header line with `n`, `κ`,
    /// the scheme and the curve hash, then `n` rows of `n` values.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        let n = self.dim();
        writeln!(
            out,
            "# n={n} kappa={:e} L={} scheme={:?} curve={} layout=row-major",
            self.kappa, self.grid.half_length, self.scheme, self.curve_hash
        )?;
        let mut line = String::new();
        for i in 0..n {
            line.clear();
            for j in 0..n {
                if j > 0 {
                    line.push(',');
                }
                line.push_str(&format!("{:e}", self.matrix[(i, j)]));
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

// Geometry sampled once per node.
struct Nodes {
    s: Vec<f64>,
    pts: Vec<[f64; 2]>,
    run: Vec<Option<usize>>,
}

impl Nodes {
    fn new(curve: &ScaledCurve, grid: &Grid) -> Self {
        let s = grid.nodes().to_vec();
        let pts = s.iter().map(|&x| curve.point(x)).collect();
        let run = s.iter().map(|&x| curve.straight_run(x)).collect();
        Self { s, pts, run }
    }

    fn distance(&self, i: usize, j: usize) -> f64 {
        if self.run[i].is_some() && self.run[i] == self.run[j] {
            (self.s[i] - self.s[j]).abs()
        } else {
            let (a, b) = (self.pts[i], self.pts[j]);
            (a[0] - b[0]).hypot(a[1] - b[1])
        }
    }
}

fn fill_symmetric(n: usize, entry: impl Fn(usize, usize) -> f64 + Sync) -> Mat<f64> {
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (0..=i).map(|j| entry(i, j)).collect())
        .collect();
    Mat::from_fn(n, n, |i, j| if j <= i { rows[i][j] } else { rows[j][i] })
}

/// Assembles the Nyström matrix of `Q(κ)` for `curve` on `grid`.
pub fn assemble(
    curve: &ScaledCurve,
    kappa: f64,
    grid: &Grid,
    scheme: Scheme,
) -> Result<KernelMatrix, OperatorError> {
    check_kappa(kappa)?;
    let n = grid.len();
    let h = grid.spacing();
    let nodes = Nodes::new(curve, grid);
    let q = |r: f64| specfun::k0(kappa * r) / (2.0 * PI);

    let matrix = match scheme {
        Scheme::Midpoint => {
            let diag = h * diag_correction(kappa, h);
            let straight: Vec<f64> = (0..n).map(|m| if m == 0 { diag } else { h * q(m as f64 * h) }).collect();
            fill_symmetric(n, |i, j| {
                let d = nodes.distance(i, j);
                let sigma = (nodes.s[i] - nodes.s[j]).abs();
                if i == j {
                    diag
                } else if d == sigma {
                    straight[i - j]
                } else {
                    h * q(d)
                }
            })
        }
        Scheme::CellIntegrated => {
            let cells = toeplitz_cells(kappa, h, n);
            let sampled: Vec<f64> = (0..n).map(|m| if m == 0 { 0.0 } else { q(m as f64 * h) }).collect();
            fill_symmetric(n, |i, j| {
                let m = i - j;
                if m == 0 {
                    return cells[0];
                }
                let d = nodes.distance(i, j);
                if d == (nodes.s[i] - nodes.s[j]).abs() {
                    cells[m]
                } else {
                    cells[m] + h * (q(d) - sampled[m])
                }
            })
        }
    };

    Ok(KernelMatrix {
        kappa,
        scheme,
        grid: grid.clone(),
        curve_hash: curve.hash(),
        matrix,
    })
}

/// Exact `κ`-derivative of the matrix produced by [`assemble`].
pub fn assemble_dkappa(
    curve: &ScaledCurve,
    kappa: f64,
    grid: &Grid,
    scheme: Scheme,
) -> Result<Mat<f64>, OperatorError> {
    check_kappa(kappa)?;
    let n = grid.len();
    let h = grid.spacing();
    let nodes = Nodes::new(curve, grid);
    // ∂κ K₀(κr)/2π = −r K₁(κr)/2π
    let dq = |r: f64| -r * specfun::k1(kappa * r) / (2.0 * PI);
    let cells = toeplitz_cells(kappa, h, n);
    let dcells = toeplitz_cells_dkappa(kappa, h, &cells);

    Ok(match scheme {
        Scheme::Midpoint => fill_symmetric(n, |i, j| {
            if i == j {
                dcells[0]
            } else {
                h * dq(nodes.distance(i, j))
            }
        }),
        Scheme::CellIntegrated => fill_symmetric(n, |i, j| {
            let m = i - j;
            if m == 0 {
                return dcells[0];
            }
            let d = nodes.distance(i, j);
            let sigma = (nodes.s[i] - nodes.s[j]).abs();
            if d == sigma {
                dcells[m]
            } else {
                dcells[m] + h * (dq(d) - dq(sigma))
            }
        }),
    })
}

/// Zero-frequency symbol `Σ_m T_m` of the infinite straight-line Toeplitz
/// matrix built by `scheme`, which is its largest eigenvalue. The discrete
/// threshold is the `κ` at which `α` times this equals one.
pub fn straight_symbol(kappa: f64, h: f64, scheme: Scheme) -> f64 {
    match scheme {
        // The cells tile the line, so the sum is ∫ K₀(κ|t|)/2π dt.
        Scheme::CellIntegrated => 0.5 / kappa,
        Scheme::Midpoint => {
            let mut sum = h * diag_correction(kappa, h);
            for m in 1.. {
                let x = kappa * h * m as f64;
                let term = if x > 745.0 { 0.0 } else { h * specfun::k0(x) / PI };
                sum += term;
                if term <= 1e-18 * sum {
                    break;
                }
            }
            sum
        }
    }
}
