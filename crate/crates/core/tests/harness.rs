use std::f64::consts::PI;
use std::fs;

use leakywire::geometry::{CurveSpec, ScaledCurve};
use leakywire::harness::{self, Experiment, ExperimentConfig, GridPolicy, HarnessError, RowStatus};
use leakywire::operator::Grid;
use leakywire::spectrum::{self, SolveSettings};
use proptest::prelude::*;

fn auto(spacing: f64, decay_multiplier: f64) -> GridPolicy {
    GridPolicy::Auto {
        spacing,
        decay_multiplier,
        min_half_length: 20.0,
        max_nodes: 6000,
    }
}

// Scaled-up coupling keeps the grids small; the problem is scale covariant.
fn beta_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::new(CurveSpec::broken_line(1.0).unwrap(), 4.0);
    c.beta = vec![1.2, 0.8, 1.0];
    c.grid = auto(0.5, 8.0);
    c
}

fn strip_timestamp(json: &str) -> String {
    json.lines().filter(|l| !l.contains("\"generated_at\"")).collect::<Vec<_>>().join("\n")
}

proptest! {
    #[test]
    fn power_law_fit_is_scale_equivariant(p in 0.5f64..5.0, a in 0.1f64..10.0, c in 0.2f64..5.0) {
        let xs = [0.3, 0.5, 0.7, 1.1, 1.6];
        let pts: Vec<(f64, f64)> = xs.iter().map(|&x: &f64| (x, a * x.powf(p) * (1.0 + 0.05 * x))).collect();
        let scaled: Vec<(f64, f64)> = pts.iter().map(|&(x, y)| (c * x, y)).collect();
        let f = harness::fit_power_law(&pts).unwrap();
        let g = harness::fit_power_law(&scaled).unwrap();
        prop_assert!((f.exponent - g.exponent).abs() < 1e-10);
        prop_assert!((g.prefactor / (f.prefactor * c.powf(-f.exponent)) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn power_law_fit_recovers_exact_laws(p in -3.0f64..6.0, a in 0.01f64..100.0) {
        let pts: Vec<(f64, f64)> = [0.2, 0.4, 0.6, 0.8, 1.0].iter().map(|&x: &f64| (x, a * x.powf(p))).collect();
        let f = harness::fit_power_law(&pts).unwrap();
        prop_assert!((f.exponent - p).abs() < 1e-10 && (f.prefactor / a - 1.0).abs() < 1e-10);
        prop_assert!((f.r2 - 1.0).abs() < 1e-10 || p.abs() < 1e-12);
    }
}

#[test]
fn beta_sweep_is_sorted_fitted_and_deterministic() {
    let exp = Experiment::new(beta_config()).unwrap();
    let a = harness::sweep_beta(&exp).unwrap();
    let params: Vec<f64> = a.rows.iter().map(|r| r.parameter).collect();
    assert_eq!(params, vec![0.8, 1.0, 1.2]);
    assert!(a.rows.iter().all(|r| r.status == RowStatus::Bound));
    let fit = a.fit.unwrap();
    assert!((3.7..4.3).contains(&fit.exponent), "{fit:?}");
    assert!((0.8..1.25).contains(&a.prefactor_ratio.unwrap()));
    for r in &a.rows {
        // Each row carries the grid it was solved on.
        assert!(r.grid.n > 0 && r.grid.half_length > 0.0);
        assert_eq!(r.threshold_kappa, 2.0);
    }
    let b = harness::sweep_beta(&exp).unwrap();
    assert_eq!(strip_timestamp(&a.to_json()), strip_timestamp(&b.to_json()));
    assert_eq!(a.to_csv(), b.to_csv());
}

#[test]
fn straight_curve_sweeps_have_no_bound_states() {
    let mut c = ExperimentConfig::new(CurveSpec::straight(), 1.0);
    c.beta = vec![0.5, 0.7, 0.9];
    let report = harness::sweep_beta(&Experiment::new(c.clone()).unwrap()).unwrap();
    assert!(report.rows.iter().all(|r| r.status == RowStatus::NoBoundState));
    assert!(report.fit.is_none() && !report.warnings.is_empty());

    c.beta = vec![0.5];
    c.grid = GridPolicy::Fixed { half_length: 10.0, n: 80 };
    let conv = harness::convergence(&Experiment::new(c).unwrap()).unwrap();
    assert!(conv.grids.iter().all(|e| e.lambda.is_none()));
    assert!(conv.richardson.is_none());
}

#[test]
fn phi_sweep_tracks_the_first_order_slope() {
    let mut c = ExperimentConfig::new(CurveSpec::zigzag(PI / 4.0, 1.0).unwrap(), 4.0);
    c.phi = vec![-0.1, -0.05, 0.0, 0.05, 0.1];
    c.grid = auto(0.5, 6.0);
    let exp = Experiment::new(c).unwrap();
    let report = harness::sweep_phi(&exp).unwrap();
    assert_eq!(report.slopes.len(), 1);
    let s = &report.slopes[0];
    assert!(s.relative_error <= 0.1, "{s:?}");
    assert_eq!(s.fit.slope.signum(), s.predicted.signum());

    // The φ = 0 row is the unperturbed ground state.
    let zero = report.rows.iter().find(|r| r.parameter == 0.0).unwrap();
    let grid = Grid::uniform(zero.grid.half_length, zero.grid.n).unwrap();
    let curve = ScaledCurve::new(exp.curve.clone(), 1.0).unwrap();
    let direct = spectrum::solve_ground(&curve, 4.0, &grid, &SolveSettings::default()).unwrap().bound().unwrap();
    assert_eq!(zero.lambda, Some(direct.lambda));
    assert_eq!(zero.predicted_lambda, Some(direct.lambda));
}

#[test]
fn convergence_refinements_shrink() {
    let mut c = beta_config();
    c.beta = vec![1.0];
    c.grid = auto(1.0, 3.0);
    c.rounds = 2;
    let report = harness::convergence(&Experiment::new(c).unwrap()).unwrap();
    assert_eq!(report.grids.len(), 4);
    assert_eq!(report.diagonal.len(), 3);
    assert!(report.differences[1] < report.differences[0], "{:?}", report.differences);
    let r = report.richardson.unwrap();
    let finest = report.diagonal.last().unwrap().lambda.unwrap();
    assert!((r.value - finest).abs() <= r.error);
    assert!(r.error < 1e-3 * finest.abs());
}

#[test]
fn config_files_resolve_relative_paths_and_write_outputs() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("curve.json"), r#"{"segments":[],"vertices":[{"s":0,"angle":1.0}]}"#).unwrap();
    let config = r#"{
        "curve": "curve.json",
        "alpha": 4.0,
        "beta": [0.9, 1.0, 1.1],
        "grid": {"policy": "auto", "spacing": 1.0, "decay_multiplier": 4.0},
        "outputs": {"json": "out/r.json", "csv": "out/r.csv", "gnuplot": "out/r"},
        "seed": 11
    }"#;
    let path = dir.path().join("config.json");
    fs::write(&path, config).unwrap();
    let exp = Experiment::load(&path).unwrap();
    let report = harness::sweep_beta(&exp).unwrap();
    report.write(&exp.config.outputs).unwrap();
    let out = dir.path().join("out");
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("r.json")).unwrap()).unwrap();
    assert_eq!(json["provenance"]["seed"], 11);
    assert_eq!(json["rows"].as_array().unwrap().len(), 3);
    let csv = fs::read_to_string(out.join("r.csv")).unwrap();
    assert!(csv.starts_with("parameter,level,status"));
    assert_eq!(csv.lines().count(), 4);
    assert!(fs::read_to_string(out.join("r.gp")).unwrap().contains("'r.dat'"));
    assert_eq!(fs::read_to_string(out.join("r.dat")).unwrap().lines().count(), 4);
}

#[test]
fn bad_configs_are_rejected_with_exit_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    fs::write(&path, r#"{"curve": "missing.json", "alpha": 1.0, "beta": [0.5], "typo": 1}"#).unwrap();
    assert_eq!(Experiment::load(&path).unwrap_err().exit_code(), 2);
    fs::write(&path, r#"{"curve": {"segments": [], "vertices": []}, "alpha": -1.0}"#).unwrap();
    assert_eq!(Experiment::load(&path).unwrap_err().exit_code(), 2);
    fs::write(&path, r#"{"curve": "missing.json", "alpha": 1.0}"#).unwrap();
    assert!(matches!(Experiment::load(&path), Err(HarnessError::Io { .. })));

    // Turning the broken line by more than π is not a curve.
    let mut c = ExperimentConfig::new(CurveSpec::broken_line(2.0).unwrap(), 1.0);
    c.beta = vec![2.0];
    assert_eq!(harness::sweep_beta(&Experiment::new(c).unwrap()).unwrap_err().exit_code(), 2);
}

#[test]
fn oversized_grids_are_a_numerical_failure() {
    let mut c = beta_config();
    c.grid = GridPolicy::Auto {
        spacing: 0.01,
        decay_multiplier: 8.0,
        min_half_length: 20.0,
        max_nodes: 500,
    };
    let err = harness::sweep_beta(&Experiment::new(c).unwrap()).unwrap_err();
    assert!(matches!(err, HarnessError::GridTooLarge { .. }));
    assert_eq!(err.exit_code(), 3);
}
