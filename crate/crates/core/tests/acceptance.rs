//! Acceptance run: seven end-to-end checks, one line of output each.
//!
//! Runs without the libtest harness so the summary is always printed.
//! Exits non-zero if any check fails.

use std::f64::consts::PI;
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use leakywire::asymptotics::{self, AKernelParams, WiggleOptions};
use leakywire::eigen;
use leakywire::geometry::{CurvatureSegment, CurveSpec, ScaledCurve, Vertex};
use leakywire::harness::{self, Experiment, ExperimentConfig};
use leakywire::operator::{self, Grid, Scheme};
use leakywire::quadrature::QuadSettings;
use leakywire::specfun::{self, branch};
use leakywire::spectrum::{self, Ground, SolveSettings};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;

/// Outcome of one check: whether it passed and a one-line summary.
type Outcome = (bool, String);

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn fixture(x: f64) -> (f64, f64) {
    include_str!("data/bessel_k.csv")
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split(',').map(|f| f.trim().parse::<f64>().unwrap()).collect::<Vec<_>>())
        .find(|v| v[0] == x)
        .map(|v| (v[1], v[2]))
        .expect("fixture present")
}

fn special_functions() -> Outcome {
    let (k0, k1) = fixture(1.0);
    let e0 = rel(specfun::bessel_k0(1.0).unwrap(), k0);
    let e1 = rel(specfun::bessel_k1(1.0).unwrap(), k1);
    let seam = |a: (f64, f64), b: (f64, f64)| rel(a.0, b.0).max(rel(a.1, b.1));
    let s1 = seam(branch::series(2.0), branch::continued_fraction(2.0));
    let s2 = seam(branch::continued_fraction(25.0), branch::asymptotic(25.0));
    let ok = e0 <= 1e-12 && e1 <= 1e-12 && s1 <= 1e-11 && s2 <= 1e-11;
    (ok, format!("K0(1) rel err {e0:.1e}, K1(1) {e1:.1e}; seams at 2 and 25: {s1:.1e}, {s2:.1e}"))
}

fn straight_line() -> Outcome {
    let alpha = 1.0;
    let curve = ScaledCurve::new(CurveSpec::straight(), 1.0).unwrap();
    let grid = Grid::uniform(200.0, 2000).unwrap();
    let eta = alpha * spectrum::eta(&curve, 1.0, &grid, 1, Scheme::CellIntegrated).unwrap();
    let ground = spectrum::solve_ground(&curve, alpha, &grid, &SolveSettings::default()).unwrap();
    let none = matches!(ground, Ground::NoBoundState { .. });
    let ok = (0.49..=0.50).contains(&eta) && none;
    (ok, format!("alpha*eta1(kappa=1) = {eta:.8}, ground state absent: {none}"))
}

fn broken_line_coefficient() -> Outcome {
    let reduced = asymptotics::broken_line_reduced_integral().unwrap();
    let params = AKernelParams::new(CurveSpec::broken_line(1.0).unwrap(), 1.0).unwrap();
    let c = asymptotics::a_coefficient(&params, &QuadSettings::default()).unwrap();
    let e_red = (reduced.value.abs() - 2.0 / 3.0).abs();
    let e_int = rel(c.integral.abs(), 1.0 / (6.0 * PI));
    let e_gap = rel(c.gap_coefficient, 1.0 / (36.0 * PI * PI));
    let ok = e_red <= 1e-6 && e_int <= 1e-4 && e_gap <= 2e-4;
    (
        ok,
        format!(
            "reduced integral {:.10} (err {e_red:.1e}), |int A| = {:.10} (rel {e_int:.1e}), gap coef {:.6e} (rel {e_gap:.1e})",
            reduced.value, c.integral, c.gap_coefficient
        ),
    )
}

fn beta_law() -> Outcome {
    let mut config = ExperimentConfig::new(CurveSpec::broken_line(1.0).unwrap(), 1.0);
    config.beta = vec![0.6, 0.8, 1.0, 1.2];
    let report = harness::sweep_beta(&Experiment::new(config).unwrap()).unwrap();
    let Some(fit) = report.fit else {
        return (false, "no fit".into());
    };
    let ratio = report.prefactor_ratio.unwrap();
    let ok = (3.7..=4.3).contains(&fit.exponent) && (0.75..=1.25).contains(&ratio);
    let largest = report.rows.iter().map(|r| r.grid.n).max().unwrap_or(0);
    (
        ok,
        format!(
            "exponent {:.4}, prefactor {:.4e} = {ratio:.4} x 1/(36 pi^2), R^2 {:.6}, largest grid n = {largest}",
            fit.exponent, fit.prefactor, fit.r2
        ),
    )
}

fn scaling() -> Outcome {
    let curve = ScaledCurve::new(CurveSpec::broken_line(1.0).unwrap(), 1.0).unwrap();
    let settings = SolveSettings::default();
    let delta = 1.0 / (6.0 * PI);
    let l1 = 8.0 / delta;
    let solve = |alpha: f64| {
        let grid = Grid::with_spacing(0.25 / alpha, l1 / alpha).unwrap();
        spectrum::solve_ground(&curve, alpha, &grid, &settings).unwrap().bound().unwrap().lambda
    };
    let (a, b) = (solve(1.0), solve(2.0));
    let ratio = b / a;
    ((ratio - 4.0).abs() <= 0.04, format!("lambda(2) / lambda(1) = {b:.10} / {a:.10} = {ratio:.10}"))
}

fn wiggle() -> Outcome {
    let alpha = 1.0;
    let z = CurveSpec::zigzag(PI / 4.0, 1.0).unwrap();
    let mut config = ExperimentConfig::new(z.clone(), alpha);
    config.phi = vec![0.05];
    let coef = asymptotics::a_coefficient(&AKernelParams::new(z.clone(), alpha).unwrap(), &QuadSettings::default()).unwrap();
    let grid = harness::grid_for(&config, Some(coef.predicted_gap(1.0).sqrt())).unwrap();
    let settings = SolveSettings::default();
    let unit = ScaledCurve::new(z.clone(), 1.0).unwrap();
    let base = spectrum::solve_ground(&unit, alpha, &grid, &settings).unwrap().bound().unwrap();
    let w = asymptotics::wiggle_slope(&z, alpha, std::slice::from_ref(&base), &grid, &WiggleOptions::default()).unwrap();
    let phi = 0.05;
    let lam = |p: f64| {
        let c = ScaledCurve::new(z.wiggled(w.pivot, p).unwrap(), 1.0).unwrap();
        spectrum::solve_ground(&c, alpha, &grid, &settings).unwrap().bound().unwrap().lambda
    };
    let fd = (lam(phi) - lam(-phi)) / (2.0 * phi);
    let err = rel(w.slopes[0], fd);
    let literal = w.matrix[0][0];
    (
        err <= 0.1,
        format!(
            "predicted slope {:.6e}, finite difference {fd:.6e}, rel err {err:.2e} (alpha(Df,f) alone: {literal:.6e}); n = {}",
            w.slopes[0],
            grid.len()
        ),
    )
}

fn properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    let mut failures = Vec::new();

    // 𝒜 ≥ 0.
    let curve = CurveSpec::new(
        vec![CurvatureSegment { a: -1.5, b: 0.5, k: 0.7 }],
        vec![Vertex { s: -3.0, angle: 0.4 }, Vertex { s: 1.0, angle: -1.1 }],
    )
    .unwrap();
    let params = AKernelParams::new(curve.clone(), 1.0).unwrap();
    let negative = (0..10_000)
        .filter(|_| {
            let (s, t) = (rng.random_range(-15.0..15.0), rng.random_range(-15.0..15.0));
            asymptotics::a_kernel(&params, s, t) < 0.0
        })
        .count();
    if negative > 0 {
        failures.push(format!("A < 0 at {negative} samples"));
    }

    // η_j strictly decreasing in κ.
    let scaled = ScaledCurve::new(curve.clone(), 1.0).unwrap();
    let grid = Grid::uniform(12.0, 96).unwrap();
    for j in 1..=3 {
        let etas: Vec<f64> = (0..8)
            .map(|i| spectrum::eta(&scaled, 0.4 + 0.2 * i as f64, &grid, j, Scheme::CellIntegrated).unwrap())
            .collect();
        if !etas.windows(2).all(|w| w[1] < w[0]) {
            failures.push(format!("eta_{j} not decreasing"));
        }
    }

    // Matrix symmetry and positivity.
    for scheme in [Scheme::CellIntegrated, Scheme::Midpoint] {
        let m = operator::assemble(&scaled, 0.7, &grid, scheme).unwrap();
        let n = grid.len();
        let symmetric = (0..n).all(|i| (0..n).all(|j| m.get(i, j) == m.get(j, i)));
        let positive = (0..n).all(|i| (0..n).all(|j| m.get(i, j) > 0.0));
        let smallest = *eigen::eigenvalues_desc(m.as_mat().as_ref()).unwrap().last().unwrap();
        if !(symmetric && positive && smallest > 0.0) {
            failures.push(format!("{scheme:?} matrix: symmetric {symmetric}, positive {positive}, min eig {smallest:e}"));
        }
    }

    // Closed-form geometry against quadrature.
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let beta = rng.random_range(0.1..1.0);
        let s = rng.random_range(-9.0..9.0);
        let exact = ScaledCurve::new(curve.clone(), beta).unwrap().point(s);
        let quad = common::quadrature_point(&curve, beta, s);
        worst = worst.max((exact[0] - quad[0]).abs()).max((exact[1] - quad[1]).abs());
    }
    if worst > 1e-10 {
        failures.push(format!("geometry mismatch {worst:e}"));
    }

    // Exact power laws.
    for (p, a) in [(4.0, 3.0), (1.0, 5.0), (-0.5, 0.2)] {
        let pts: Vec<(f64, f64)> = [0.2, 0.4, 0.6, 0.8, 1.0].iter().map(|&x: &f64| (x, a * x.powf(p))).collect();
        let f = harness::fit_power_law(&pts).unwrap();
        if (f.exponent - p).abs() > 1e-12 || rel(f.prefactor, a) > 1e-12 || (f.r2 - 1.0).abs() > 1e-12 {
            failures.push(format!("fit of {a} x^{p} gave {f:?}"));
        }
    }

    let ok = failures.is_empty();
    let detail = if ok {
        format!("A >= 0 on 10^4 samples, eta monotone, matrices symmetric positive definite, geometry err {worst:.1e}, exact fits")
    } else {
        failures.join("; ")
    };
    (ok, detail)
}

fn main() -> ExitCode {
    let checks: [(&str, fn() -> Outcome); 7] = [
        ("special functions", special_functions),
        ("straight-line oracle", straight_line),
        ("broken-line coefficient", broken_line_coefficient),
        ("beta^4 law", beta_law),
        ("scaling covariance", scaling),
        ("wiggle slope", wiggle),
        ("property suites", properties),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let start = Instant::now();
        let (ok, detail) = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        });
        if !ok {
            failed += 1;
        }
        println!(
            "criterion {}: {} [{name}] {detail} ({:.1} s)",
            i + 1,
            if ok { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} of {} criteria failed", checks.len());
        ExitCode::FAILURE
    }
}
