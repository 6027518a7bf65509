use leakywire::eigen;
use leakywire::geometry::{CurvatureSegment, CurveSpec, ScaledCurve, Vertex};
use leakywire::operator::{self, Grid, Scheme};
use leakywire::spectrum::{self, Ground, SolveSettings};
use proptest::prelude::*;

fn curve_strategy() -> impl Strategy<Value = CurveSpec> {
    (-1.0f64..1.0, -1.0f64..1.0, 0.0f64..0.6).prop_map(|(a, b, k)| {
        CurveSpec::new(
            vec![CurvatureSegment { a: -1.0, b: 0.5, k }],
            vec![Vertex { s: -2.0, angle: a }, Vertex { s: 1.5, angle: b }],
        )
        .unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn matrix_is_symmetric_and_positive(curve in curve_strategy(), kappa in 0.3f64..2.0, midpoint in any::<bool>()) {
        let scheme = if midpoint { Scheme::Midpoint } else { Scheme::CellIntegrated };
        let c = ScaledCurve::new(curve, 1.0).unwrap();
        let grid = Grid::uniform(8.0, 64).unwrap();
        let m = operator::assemble(&c, kappa, &grid, scheme).unwrap();
        for i in 0..grid.len() {
            for j in 0..grid.len() {
                prop_assert_eq!(m.get(i, j), m.get(j, i));
                prop_assert!(m.get(i, j) > 0.0);
            }
        }
        let values = eigen::eigenvalues_desc(m.as_mat().as_ref()).unwrap();
        prop_assert!(*values.last().unwrap() > 0.0, "smallest eigenvalue {}", values.last().unwrap());
    }

    #[test]
    fn eta_decreases_strictly_in_kappa(curve in curve_strategy(), k0 in 0.3f64..1.5) {
        let c = ScaledCurve::new(curve, 1.0).unwrap();
        let grid = Grid::uniform(10.0, 80).unwrap();
        let ks: Vec<f64> = (0..6).map(|i| k0 * (1.0 + 0.15 * i as f64)).collect();
        for j in [1, 2] {
            let etas: Vec<f64> = ks
                .iter()
                .map(|&k| spectrum::eta(&c, k, &grid, j, Scheme::CellIntegrated).unwrap())
                .collect();
            for w in etas.windows(2) {
                prop_assert!(w[1] < w[0], "eta_{j} not decreasing: {etas:?}");
            }
        }
    }
}

#[test]
fn straight_line_matches_fourier_symbol() {
    let c = ScaledCurve::new(CurveSpec::straight(), 1.0).unwrap();
    let grid = Grid::uniform(50.0, 500).unwrap();
    let eta = spectrum::eta(&c, 1.0, &grid, 1, Scheme::CellIntegrated).unwrap();
    assert!(eta < 0.5 && eta > 0.49, "{eta}");
    let settings = SolveSettings::default();
    assert!(matches!(
        spectrum::solve_ground(&c, 1.0, &grid, &settings).unwrap(),
        Ground::NoBoundState { .. }
    ));
}

#[test]
fn broken_line_ground_state_is_below_threshold() {
    let alpha = 4.0;
    let c = ScaledCurve::new(CurveSpec::broken_line(1.0).unwrap(), 1.0).unwrap();
    let grid = Grid::with_spacing(0.125, 20.0).unwrap();
    let r = spectrum::solve_ground(&c, alpha, &grid, &SolveSettings::default()).unwrap().bound().unwrap();
    assert!(r.lambda < -4.0);
    assert!(r.residual < 1e-8);
    assert!((r.lambda + r.kappa * r.kappa).abs() < 1e-15);
    assert!((r.delta * r.delta - (r.kappa * r.kappa - 4.0)).abs() < 1e-12);
    // The eigenfunction is normalized and peaks near the corner.
    assert!((grid.dot(&r.eigenfunction, &r.eigenfunction) - 1.0).abs() < 1e-10);
    let (peak, _) = r
        .eigenfunction
        .iter()
        .enumerate()
        .fold((0, 0.0), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
    assert!(grid.nodes()[peak].abs() < 1.0);

    let all = spectrum::solve_all(&c, alpha, &grid, &SolveSettings::default(), 3).unwrap();
    assert!(!all.is_empty());
    assert!((all[0].kappa - r.kappa).abs() < 1e-9);
    for w in all.windows(2) {
        assert!(w[0].lambda <= w[1].lambda);
    }
}

#[test]
fn more_bending_binds_more_strongly() {
    let grid = Grid::with_spacing(0.125, 25.0).unwrap();
    let settings = SolveSettings::default();
    let lambdas: Vec<f64> = [0.8, 1.0, 1.2]
        .iter()
        .map(|&beta| {
            let c = ScaledCurve::new(CurveSpec::broken_line(1.0).unwrap(), beta).unwrap();
            spectrum::solve_ground(&c, 4.0, &grid, &settings).unwrap().bound().unwrap().lambda
        })
        .collect();
    assert!(lambdas[0] > lambdas[1] && lambdas[1] > lambdas[2], "{lambdas:?}");
}

#[test]
fn hint_gives_the_same_answer() {
    let c = ScaledCurve::new(CurveSpec::zigzag(0.8, 1.0).unwrap(), 1.0).unwrap();
    let grid = Grid::with_spacing(0.125, 15.0).unwrap();
    let settings = SolveSettings::default();
    let a = spectrum::solve_ground(&c, 4.0, &grid, &settings).unwrap().bound().unwrap();
    let hint = (a.kappa - 1e-3, a.kappa + 1e-3);
    let b = spectrum::solve_ground_near(&c, 4.0, &grid, &settings, Some(hint)).unwrap().bound().unwrap();
    assert!((a.kappa - b.kappa).abs() < 2e-10);
    // A wrong hint falls back to the full search.
    let c2 = spectrum::solve_ground_near(&c, 4.0, &grid, &settings, Some((3.0, 3.1))).unwrap().bound().unwrap();
    assert!((a.kappa - c2.kappa).abs() < 2e-10);
}

#[test]
fn clusters_group_close_levels() {
    let c = ScaledCurve::new(CurveSpec::broken_line(1.0).unwrap(), 1.0).unwrap();
    let grid = Grid::with_spacing(0.25, 10.0).unwrap();
    let mut r = spectrum::solve_ground(&c, 4.0, &grid, &SolveSettings::default()).unwrap().bound().unwrap();
    let mut levels = vec![r.clone()];
    r.lambda += 1e-12;
    levels.push(r.clone());
    r.lambda += 1.0;
    levels.push(r);
    assert_eq!(spectrum::clusters(&levels, 4.0, 1e-8), vec![vec![0, 1], vec![2]]);
}
