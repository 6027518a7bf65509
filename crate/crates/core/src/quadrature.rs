//! Gauss rules and globally adaptive Gauss–Kronrod integration in one and
//! two dimensions.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

// 15-point Kronrod extension of the 7-point Gauss rule (QUADPACK constants).
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
// Gauss weights for XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Outcome of an adaptive integration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum QuadError {
    #[error("adaptive refinement stopped after {evaluations} evaluations: value {value:e}, error {error:e}")]
    NotConverged {
        value: f64,
        error: f64,
        evaluations: usize,
    },
    #[error("integrand returned a non-finite value at {at:?}")]
    NonFinite { at: (f64, f64) },
}

/// Tolerances and budget for the adaptive routines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadSettings {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_evaluations: usize,
}

impl Default for QuadSettings {
    fn default() -> Self {
        Self {
            abs_tol: 1e-14,
            rel_tol: 1e-9,
            max_evaluations: 4_000_000,
        }
    }
}

impl QuadSettings {
    fn satisfied(&self, value: f64, error: f64) -> bool {
        error <= self.abs_tol.max(self.rel_tol * value.abs())
    }
}

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0, "Gauss rule needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        // Tricomi initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let d = n as f64 * (x * p - p0) / (x * x - 1.0);
    (p, d)
}

/// A fixed Gauss–Legendre rule that can be mapped onto any interval.
#[derive(Debug, Clone)]
pub struct GaussRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussRule {
    pub fn new(n: usize) -> Self {
        let (nodes, weights) = gauss_legendre(n);
        Self { nodes, weights }
    }

    pub fn integrate(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        let c = 0.5 * (a + b);
        let r = 0.5 * (b - a);
        let mut sum = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            sum += w * f(c + r * x);
        }
        sum * r
    }
}

fn gk15(a: f64, b: f64, f: &mut impl FnMut(f64) -> f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let r = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let dx = r * XGK[j];
        let pair = f(c - dx) + f(c + dx);
        kronrod += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    (kronrod * r, ((kronrod - gauss) * r).abs())
}

#[derive(Debug)]
struct Piece<T> {
    error: f64,
    value: f64,
    order: usize,
    region: T,
}

impl<T> PartialEq for Piece<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl<T> Eq for Piece<T> {}
impl<T> PartialOrd for Piece<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<T> Ord for Piece<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error
            .total_cmp(&other.error)
            .then_with(|| other.order.cmp(&self.order))
    }
}

/// Globally adaptive 15-point Gauss–Kronrod integration of `f` over
/// `[a, b]`. Breakpoints in `splits` (if inside the interval) seed the
/// initial partition, which is where known kinks of the integrand belong.
pub fn integrate(
    mut f: impl FnMut(f64) -> f64,
    a: f64,
    b: f64,
    splits: &[f64],
    settings: &QuadSettings,
) -> Result<Estimate, QuadError> {
    if a == b {
        return Ok(Estimate {
            value: 0.0,
            error: 0.0,
            evaluations: 0,
        });
    }
    let (lo, hi, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };
    let mut edges: Vec<f64> = std::iter::once(lo)
        .chain(splits.iter().copied().filter(|&s| s > lo && s < hi))
        .chain(std::iter::once(hi))
        .collect();
    edges.sort_by(f64::total_cmp);
    edges.dedup();

    let mut heap = BinaryHeap::new();
    let mut evaluations = 0;
    let mut order = 0;
    for w in edges.windows(2) {
        let (value, error) = gk15(w[0], w[1], &mut f);
        evaluations += 15;
        heap.push(Piece {
            error,
            value,
            order,
            region: (w[0], w[1]),
        });
        order += 1;
    }

    loop {
        let (value, error) = totals(&heap);
        if !value.is_finite() || !error.is_finite() {
            let at = heap.peek().map(|p| p.region).unwrap_or((lo, hi));
            return Err(QuadError::NonFinite { at });
        }
        if settings.satisfied(value, error) {
            return Ok(Estimate {
                value: sign * value,
                error,
                evaluations,
            });
        }
        if evaluations >= settings.max_evaluations {
            return Err(QuadError::NotConverged {
                value: sign * value,
                error,
                evaluations,
            });
        }
        let worst = heap.pop().expect("non-empty partition");
        let (x0, x1) = worst.region;
        let mid = 0.5 * (x0 + x1);
        if mid <= x0 || mid >= x1 {
            // Interval cannot be split further in floating point.
            return Err(QuadError::NotConverged {
                value: sign * value,
                error,
                evaluations,
            });
        }
        for (p, q) in [(x0, mid), (mid, x1)] {
            let (value, error) = gk15(p, q, &mut f);
            evaluations += 15;
            heap.push(Piece {
                error,
                value,
                order,
                region: (p, q),
            });
            order += 1;
        }
    }
}

// Sum in creation order so results do not depend on heap layout.
fn totals<T>(heap: &BinaryHeap<Piece<T>>) -> (f64, f64) {
    let mut pieces: Vec<&Piece<T>> = heap.iter().collect();
    pieces.sort_by_key(|p| p.order);
    pieces
        .iter()
        .fold((0.0, 0.0), |(v, e), p| (v + p.value, e + p.error))
}

/// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

fn gk15_2d(r: &Rect, f: &mut impl FnMut(f64, f64) -> f64) -> (f64, f64) {
    let cx = 0.5 * (r.x0 + r.x1);
    let rx = 0.5 * (r.x1 - r.x0);
    let cy = 0.5 * (r.y0 + r.y1);
    let ry = 0.5 * (r.y1 - r.y0);
    // Expand to the full symmetric 15-point node list.
    let mut nodes = [0.0; 15];
    let mut wk = [0.0; 15];
    let mut wg = [0.0; 15];
    for j in 0..7 {
        nodes[j] = -XGK[j];
        nodes[14 - j] = XGK[j];
        wk[j] = WGK[j];
        wk[14 - j] = WGK[j];
        if j % 2 == 1 {
            wg[j] = WG[j / 2];
            wg[14 - j] = WG[j / 2];
        }
    }
    nodes[7] = 0.0;
    wk[7] = WGK[7];
    wg[7] = WG[3];

    let mut kronrod = 0.0;
    let mut gauss = 0.0;
    for i in 0..15 {
        let x = cx + rx * nodes[i];
        for j in 0..15 {
            let v = f(x, cy + ry * nodes[j]);
            kronrod += wk[i] * wk[j] * v;
            gauss += wg[i] * wg[j] * v;
        }
    }
    let area = rx * ry;
    (kronrod * area, ((kronrod - gauss) * area).abs())
}

/// Globally adaptive tensor-product Gauss–Kronrod integration over a union
/// of rectangles. The initial rectangles should be aligned with the lines
/// where the integrand is not smooth.
pub fn integrate_2d(
    mut f: impl FnMut(f64, f64) -> f64,
    cells: &[Rect],
    settings: &QuadSettings,
) -> Result<Estimate, QuadError> {
    let mut heap = BinaryHeap::new();
    let mut evaluations = 0;
    let mut order = 0;
    for cell in cells {
        let (value, error) = gk15_2d(cell, &mut f);
        evaluations += 225;
        heap.push(Piece {
            error,
            value,
            order,
            region: *cell,
        });
        order += 1;
    }
    if heap.is_empty() {
        return Ok(Estimate {
            value: 0.0,
            error: 0.0,
            evaluations: 0,
        });
    }

    // Running totals are refreshed from scratch periodically to avoid drift.
    let (mut value, mut error) = totals(&heap);
    let mut since_refresh = 0;
    loop {
        if !value.is_finite() || !error.is_finite() {
            let at = heap.peek().map(|p| (p.region.x0, p.region.y0)).unwrap_or_default();
            return Err(QuadError::NonFinite { at });
        }
        if settings.satisfied(value, error) {
            let (value, error) = totals(&heap);
            if settings.satisfied(value, error) {
                return Ok(Estimate {
                    value,
                    error,
                    evaluations,
                });
            }
        }
        if evaluations >= settings.max_evaluations {
            let (value, error) = totals(&heap);
            return Err(QuadError::NotConverged {
                value,
                error,
                evaluations,
            });
        }
        let worst = heap.pop().expect("non-empty partition");
        value -= worst.value;
        error -= worst.error;
        let r = worst.region;
        let mx = 0.5 * (r.x0 + r.x1);
        let my = 0.5 * (r.y0 + r.y1);
        let children = [
            Rect { x0: r.x0, x1: mx, y0: r.y0, y1: my },
            Rect { x0: mx, x1: r.x1, y0: r.y0, y1: my },
            Rect { x0: r.x0, x1: mx, y0: my, y1: r.y1 },
            Rect { x0: mx, x1: r.x1, y0: my, y1: r.y1 },
        ];
        for child in children {
            let (v, e) = gk15_2d(&child, &mut f);
            evaluations += 225;
            value += v;
            error += e;
            heap.push(Piece {
                error: e,
                value: v,
                order,
                region: child,
            });
            order += 1;
        }
        since_refresh += 1;
        if since_refresh == 256 {
            (value, error) = totals(&heap);
            since_refresh = 0;
        }
    }
}
