//! Oracles shared by several test targets.

use leakywire::geometry::CurveSpec;

// Accumulated angle from the raw curve data, independent of the profile.
// Corners count if they lie before `corner_cut`, arcs up to `u`.
pub fn raw_angle_split(curve: &CurveSpec, corner_cut: f64, u: f64) -> f64 {
    let corners: f64 = curve.vertices().iter().filter(|v| v.s < corner_cut).map(|v| v.angle).sum();
    let arcs: f64 = curve
        .segments()
        .iter()
        .map(|g| g.k * (u.min(g.b) - g.a).max(0.0))
        .sum();
    corners + arcs
}

pub fn raw_angle(curve: &CurveSpec, u: f64) -> f64 {
    raw_angle_split(curve, u, u)
}

// Composite Simpson on each smooth piece, refined once for a Richardson step.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let h = (b - a) / panels as f64;
    let mut sum = f(a) + f(b);
    for i in 1..panels {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(a + i as f64 * h);
    }
    sum * h / 3.0
}

pub fn quadrature_point(curve: &CurveSpec, beta: f64, s: f64) -> [f64; 2] {
    let a0 = raw_angle(curve, 0.0);
    let mut breaks: Vec<f64> = curve.vertices().iter().map(|v| v.s).collect();
    breaks.extend(curve.segments().iter().flat_map(|g| [g.a, g.b]));
    let (lo, hi) = if s < 0.0 { (s, 0.0) } else { (0.0, s) };
    breaks.retain(|&t| t > lo && t < hi);
    breaks.push(lo);
    breaks.push(hi);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let mut p = [0.0; 2];
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        // Corners are taken at the middle of the piece, so its end points see
        // the one-sided tangent of this piece.
        let cut = 0.5 * (a + b);
        let theta = |u: f64| beta * (raw_angle_split(curve, cut, u) - a0);
        let piece = |f: &dyn Fn(f64) -> f64| {
            let coarse = simpson(f, a, b, 400);
            let fine = simpson(f, a, b, 800);
            fine + (fine - coarse) / 15.0
        };
        p[0] += piece(&|u| theta(u).cos());
        p[1] += piece(&|u| theta(u).sin());
    }
    if s < 0.0 {
        [-p[0], -p[1]]
    } else {
        p
    }
}
