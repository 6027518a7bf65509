//! Experiments: sweeps in `β` and `φ`, grid convergence studies, power-law
//! fits, and the reports they produce.
//!
//! An experiment is described by an [`ExperimentConfig`], usually read from
//! JSON. Relative paths inside a config file are resolved against the
//! directory that contains it.
//!
//! ```json
//! {
//!   "curve": "broken_line.json",
//!   "alpha": 1.0,
//!   "beta": [0.6, 0.8, 1.0, 1.2],
//!   "grid": { "policy": "auto", "spacing": 0.25, "decay_multiplier": 8.0 },
//!   "outputs": { "json": "out/sweep.json", "csv": "out/sweep.csv", "gnuplot": "out/sweep" }
//! }
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::asymptotics::{self, AKernelParams, AsymptoticCoefficient, AsymptoticsError, WiggleOptions, WiggleSlope};
use crate::geometry::{self, CurveSpec, GeometryError, ScaledCurve, ValidationReport, ValidationSettings};
use crate::operator::{Grid, GridSize, OperatorError, Scheme};
use crate::quadrature::QuadSettings;
use crate::spectrum::{self, Ground, SolveSettings, SpectralResult, SpectrumError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("curve is not admissible: {}", .0.issues.join("; "))]
    Inadmissible(Box<ValidationReport>),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Spectrum(#[from] SpectrumError),
    #[error(transparent)]
    Asymptotics(#[from] AsymptoticsError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error("grid with {n} nodes exceeds the limit of {max}")]
    GridTooLarge { n: usize, max: usize },
    #[error("the unperturbed curve has no resolved bound state")]
    NoBaseLevel,
}

impl HarnessError {
    /// Process exit code: 2 for bad input, 3 for numerical failure, 1 for
    /// I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Io { .. } => 1,
            HarnessError::Config(_) | HarnessError::Inadmissible(_) | HarnessError::Geometry(_) => 2,
            HarnessError::Spectrum(SpectrumError::Alpha(_) | SpectrumError::Tolerance(_)) => 2,
            HarnessError::Asymptotics(AsymptoticsError::Alpha(_)) => 2,
            _ => 3,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Where the curve comes from: a path to a curve file or the curve itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CurveSource {
    Path(PathBuf),
    Inline(CurveSpec),
}

/// How the grid is chosen for each solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GridPolicy {
    /// The same grid everywhere.
    Fixed {
        #[serde(rename = "L")]
        half_length: f64,
        n: usize,
    },
    /// `h = spacing/α` and `L = decay_multiplier/δ`, with `δ` first taken
    /// from the weak-bending prediction and then, if the solve shows the
    /// state decays more slowly, from the solve itself. Lengths are in
    /// units of `1/α` so that the policy commutes with scaling.
    Auto {
        #[serde(default = "default_spacing")]
        spacing: f64,
        #[serde(default = "default_decay_multiplier")]
        decay_multiplier: f64,
        #[serde(default = "default_min_half_length")]
        min_half_length: f64,
        #[serde(default = "default_max_nodes")]
        max_nodes: usize,
    },
}

fn default_spacing() -> f64 {
    0.25
}
fn default_decay_multiplier() -> f64 {
    8.0
}
fn default_min_half_length() -> f64 {
    20.0
}
fn default_max_nodes() -> usize {
    6000
}
fn default_levels() -> usize {
    1
}
fn default_rounds() -> usize {
    1
}

impl Default for GridPolicy {
    fn default() -> Self {
        GridPolicy::Auto {
            spacing: default_spacing(),
            decay_multiplier: default_decay_multiplier(),
            min_half_length: default_min_half_length(),
            max_nodes: default_max_nodes(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Width of the final bracket in `κ`.
    pub solve: f64,
    /// Levels closer than `cluster·α²` form one cluster.
    pub cluster: f64,
    pub quad_abs: f64,
    pub quad_rel: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            solve: 1e-10,
            cluster: 1e-8,
            quad_abs: 1e-14,
            quad_rel: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Outputs {
    pub json: Option<PathBuf>,
    pub csv: Option<PathBuf>,
    /// Path stem: `<stem>.dat` and `<stem>.gp` are written.
    pub gnuplot: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub curve: CurveSource,
    pub alpha: f64,
    #[serde(default)]
    pub beta: Vec<f64>,
    #[serde(default)]
    pub phi: Vec<f64>,
    /// Wiggle pivot; defaults to the right end of the bending support.
    #[serde(default)]
    pub pivot: Option<f64>,
    /// Number of levels followed in a `φ` sweep.
    #[serde(default = "default_levels")]
    pub levels: usize,
    #[serde(default)]
    pub grid: GridPolicy,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default)]
    pub tolerances: Tolerances,
    /// Extra diagonal refinements `(h/2ʳ, 2ʳL)` in a convergence study.
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default)]
    pub outputs: Outputs,
    /// Recorded for provenance; every step is deterministic.
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentConfig {
    /// A config with defaults for everything but the curve and coupling.
    pub fn new(curve: CurveSpec, alpha: f64) -> Self {
        Self {
            curve: CurveSource::Inline(curve),
            alpha,
            beta: Vec::new(),
            phi: Vec::new(),
            pivot: None,
            levels: 1,
            grid: GridPolicy::default(),
            scheme: Scheme::default(),
            tolerances: Tolerances::default(),
            rounds: 1,
            outputs: Outputs::default(),
            seed: 0,
        }
    }

    pub fn check(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if let Some(b) = self.beta.iter().find(|b| !(**b > 0.0 && b.is_finite())) {
            return bad(format!("beta values must be positive, got {b}"));
        }
        if let Some(p) = self.phi.iter().find(|p| !(p.abs() < std::f64::consts::PI)) {
            return bad(format!("phi values must lie in (-pi, pi), got {p}"));
        }
        let t = &self.tolerances;
        if ![t.solve, t.cluster, t.quad_abs, t.quad_rel].iter().all(|v| *v > 0.0 && v.is_finite()) {
            return bad("tolerances must be positive".into());
        }
        if self.levels == 0 {
            return bad("levels must be at least 1".into());
        }
        match self.grid {
            GridPolicy::Fixed { half_length, n } => {
                if !(half_length > 0.0 && half_length.is_finite()) || n == 0 {
                    return bad("fixed grid needs L > 0 and n > 0".into());
                }
            }
            GridPolicy::Auto {
                spacing,
                decay_multiplier,
                min_half_length,
                max_nodes,
            } => {
                if ![spacing, decay_multiplier, min_half_length].iter().all(|v| *v > 0.0 && v.is_finite()) || max_nodes == 0 {
                    return bad("auto grid parameters must be positive".into());
                }
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        geometry::digest_hex(&serde_json::to_vec(self).expect("config serializes"))
    }

    fn solve_settings(&self) -> SolveSettings {
        SolveSettings {
            scheme: self.scheme,
            tol: self.tolerances.solve,
            cluster_tol: self.tolerances.cluster,
            ..SolveSettings::default()
        }
    }

    fn quad_settings(&self) -> QuadSettings {
        QuadSettings {
            abs_tol: self.tolerances.quad_abs,
            rel_tol: self.tolerances.quad_rel,
            ..QuadSettings::default()
        }
    }
}

/// A checked config together with its curve.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub curve: CurveSpec,
}

impl Experiment {
    /// Checks the config; an inline curve is used as is, a path must be
    /// absolute or relative to the working directory.
    pub fn new(config: ExperimentConfig) -> Result<Self, HarnessError> {
        config.check()?;
        let curve = match &config.curve {
            CurveSource::Inline(c) => c.clone(),
            CurveSource::Path(p) => read_curve(p)?,
        };
        Ok(Self { config, curve })
    }

    /// Reads a config file, resolving relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut config: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let dir = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        if let CurveSource::Path(p) = &mut config.curve {
            resolve(p);
        }
        for p in [&mut config.outputs.json, &mut config.outputs.csv, &mut config.outputs.gnuplot]
            .into_iter()
            .flatten()
        {
            resolve(p);
        }
        Self::new(config)
    }
}

/// Reads and strictly parses a curve file.
pub fn read_curve(path: &Path) -> Result<CurveSpec, HarnessError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    CurveSpec::from_json(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
}

/// Checks that `curve` scaled by `beta` is admissible.
pub fn check_admissible(curve: &CurveSpec, beta: f64) -> Result<ValidationReport, HarnessError> {
    let report = geometry::validate(&curve.scaled(beta)?, &ValidationSettings::default());
    if report.admissible {
        Ok(report)
    } else {
        Err(HarnessError::Inadmissible(Box::new(report)))
    }
}

// ---------------------------------------------------------------- fitting

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("{usable} usable points, at least {needed} are needed")]
    TooFew { usable: usize, needed: usize },
}

/// `y ≈ a·xᵖ` fitted by least squares on `(ln x, ln y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerFit {
    pub exponent: f64,
    pub prefactor: f64,
    /// Coefficient of determination in log–log space.
    pub r2: f64,
    pub points: usize,
    /// Points dropped because `x` or `y` was not positive.
    pub excluded: usize,
}

/// Straight line `y ≈ intercept + slope·x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub points: usize,
}

pub fn fit_line(points: &[(f64, f64)]) -> Result<LineFit, FitError> {
    let n = points.len();
    if n < 2 {
        return Err(FitError::TooFew { usable: n, needed: 2 });
    }
    let nf = n as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(FitError::TooFew { usable: 1, needed: 2 });
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = points.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let r2 = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    Ok(LineFit {
        slope,
        intercept,
        r2,
        points: n,
    })
}

/// Power law through points with positive coordinates; others are
/// excluded and counted. At least three must remain.
pub fn fit_power_law(points: &[(f64, f64)]) -> Result<PowerFit, FitError> {
    let logs: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0 && x.is_finite() && y.is_finite())
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if logs.len() < 3 {
        return Err(FitError::TooFew {
            usable: logs.len(),
            needed: 3,
        });
    }
    let line = fit_line(&logs)?;
    Ok(PowerFit {
        exponent: line.slope,
        prefactor: line.intercept.exp(),
        r2: line.r2,
        points: logs.len(),
        excluded: points.len() - logs.len(),
    })
}

// ---------------------------------------------------------------- reports

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub curve_hash: String,
    pub version: String,
    pub seed: u64,
    /// Seconds since the Unix epoch.
    pub generated_at: u64,
}

impl Provenance {
    fn new(exp: &Experiment) -> Self {
        Self {
            config_hash: exp.config.hash(),
            curve_hash: exp.curve.hash(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: exp.config.seed,
            generated_at: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RowStatus {
    Bound,
    NoBoundState,
}

/// One solve in a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// `β` or `φ`.
    pub parameter: f64,
    /// Level (from 1) of the unperturbed curve this row follows.
    pub level: usize,
    pub status: RowStatus,
    pub kappa: Option<f64>,
    pub lambda: Option<f64>,
    /// `κ² − κ_t²`, with `κ_t` the threshold of the discretized straight
    /// line on the same spacing.
    pub gap: Option<f64>,
    pub predicted_lambda: Option<f64>,
    pub predicted_gap: Option<f64>,
    pub residual: Option<f64>,
    pub threshold_kappa: f64,
    pub grid: GridSize,
}

/// Measured and predicted first-order slope of one level under wiggling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSlope {
    pub level: usize,
    /// Levels of the cluster this one belongs to.
    pub cluster: Vec<usize>,
    pub predicted: f64,
    pub fit: LineFit,
    /// `|fit − predicted| / |predicted|`.
    pub relative_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepKind {
    Beta,
    Phi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub kind: SweepKind,
    pub alpha: f64,
    pub provenance: Provenance,
    /// Sorted by parameter, then level.
    pub rows: Vec<SweepRow>,
    /// `∫∫𝒜` for the curve, in `β` sweeps.
    pub coefficient: Option<AsymptoticCoefficient>,
    /// Power law of the gap against `β`, when three or more rows are bound.
    pub fit: Option<PowerFit>,
    /// `prefactor / (∫∫𝒜)²`.
    pub prefactor_ratio: Option<f64>,
    /// Per-cluster predictions, in `φ` sweeps.
    pub wiggle: Vec<WiggleSlope>,
    pub slopes: Vec<LevelSlope>,
    pub warnings: Vec<String>,
}

/// Grid the policy of `config` picks for an expected decay rate
/// `delta_est`, if one is known.
pub fn grid_for(config: &ExperimentConfig, delta_est: Option<f64>) -> Result<Grid, HarnessError> {
    match config.grid {
        GridPolicy::Fixed { half_length, n } => Ok(Grid::uniform(half_length, n)?),
        GridPolicy::Auto {
            spacing,
            decay_multiplier,
            min_half_length,
            max_nodes,
        } => {
            let alpha = config.alpha;
            let floor = min_half_length / alpha;
            let half_length = delta_est.filter(|d| *d > 0.0).map_or(floor, |d| (decay_multiplier / d).max(floor));
            let h = spacing / alpha;
            let n = (2.0 * half_length / h).ceil() as usize;
            if n > max_nodes {
                return Err(HarnessError::GridTooLarge { n, max: max_nodes });
            }
            Ok(Grid::with_spacing(h, half_length)?)
        }
    }
}

// Whether an auto grid is too short for a state decaying at rate `delta`.
fn needs_longer(config: &ExperimentConfig, grid: &Grid, delta: f64) -> Option<f64> {
    match config.grid {
        GridPolicy::Auto { decay_multiplier, .. } if delta > 0.0 => {
            let wanted = decay_multiplier / delta;
            (wanted > 1.2 * grid.half_length()).then_some(delta)
        }
        _ => None,
    }
}

fn solve_with_policy(
    config: &ExperimentConfig,
    curve: &ScaledCurve,
    delta_est: Option<f64>,
) -> Result<(Ground, Grid), HarnessError> {
    let settings = config.solve_settings();
    let grid = grid_for(config, delta_est)?;
    let ground = spectrum::solve_ground(curve, config.alpha, &grid, &settings)?;
    if let Ground::Bound(r) = &ground {
        if let Some(d) = needs_longer(config, &grid, r.delta) {
            let grid = grid_for(config, Some(d))?;
            let ground = spectrum::solve_ground(curve, config.alpha, &grid, &settings)?;
            return Ok((ground, grid));
        }
    }
    Ok((ground, grid))
}

fn coefficient(exp: &Experiment) -> Result<AsymptoticCoefficient, HarnessError> {
    let params = AKernelParams::new(exp.curve.clone(), exp.config.alpha)?;
    Ok(asymptotics::a_coefficient(&params, &exp.config.quad_settings())?)
}

fn threshold(config: &ExperimentConfig, grid: &Grid) -> f64 {
    spectrum::discrete_threshold(config.alpha, grid.spacing(), config.scheme)
}

fn bound_row(config: &ExperimentConfig, parameter: f64, r: &SpectralResult, grid: &Grid) -> SweepRow {
    let kt = threshold(config, grid);
    SweepRow {
        parameter,
        level: r.level,
        status: RowStatus::Bound,
        kappa: Some(r.kappa),
        lambda: Some(r.lambda),
        gap: Some(r.kappa * r.kappa - kt * kt),
        predicted_lambda: None,
        predicted_gap: None,
        residual: Some(r.residual),
        threshold_kappa: kt,
        grid: grid.size(),
    }
}

fn empty_row(config: &ExperimentConfig, parameter: f64, level: usize, grid: &Grid) -> SweepRow {
    SweepRow {
        parameter,
        level,
        status: RowStatus::NoBoundState,
        kappa: None,
        lambda: None,
        gap: None,
        predicted_lambda: None,
        predicted_gap: None,
        residual: None,
        threshold_kappa: threshold(config, grid),
        grid: grid.size(),
    }
}

/// Ground state of `γ_β` for each `β` with the weak-bending prediction
/// alongside, and a `β⁴` fit of the gap. Points are solved in parallel.
pub fn sweep_beta(exp: &Experiment) -> Result<SweepReport, HarnessError> {
    let config = &exp.config;
    if config.beta.is_empty() {
        return Err(HarnessError::Config("a beta sweep needs a non-empty beta list".into()));
    }
    let mut betas = config.beta.clone();
    betas.sort_by(f64::total_cmp);
    for &b in &betas {
        check_admissible(&exp.curve, b)?;
    }
    let coef = coefficient(exp)?;
    let alpha = config.alpha;

    let rows: Vec<Result<SweepRow, HarnessError>> = betas
        .par_iter()
        .map(|&beta| {
            let curve = ScaledCurve::new(exp.curve.clone(), beta)?;
            let predicted = coef.predicted_gap(beta);
            let (ground, grid) = solve_with_policy(config, &curve, Some(predicted.sqrt()))?;
            let mut row = match ground {
                Ground::Bound(r) => bound_row(config, beta, &r, &grid),
                Ground::NoBoundState { .. } => empty_row(config, beta, 1, &grid),
            };
            row.predicted_gap = Some(predicted);
            row.predicted_lambda = Some(-0.25 * alpha * alpha - predicted);
            Ok(row)
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>, _>>()?;

    let mut warnings = Vec::new();
    let points: Vec<(f64, f64)> = rows.iter().filter_map(|r| Some((r.parameter, r.gap?))).collect();
    let fit = match fit_power_law(&points) {
        Ok(f) => {
            if f.excluded > 0 {
                warnings.push(format!("{} rows with non-positive gap excluded from the fit", f.excluded));
            }
            Some(f)
        }
        Err(e) => {
            warnings.push(format!("no power-law fit: {e}"));
            None
        }
    };
    let skipped = rows.iter().filter(|r| r.status == RowStatus::NoBoundState).count();
    if skipped > 0 {
        warnings.push(format!("{skipped} rows have no bound state"));
    }
    let prefactor_ratio = fit
        .filter(|_| coef.gap_coefficient > 0.0)
        .map(|f| f.prefactor / coef.gap_coefficient);
    Ok(SweepReport {
        kind: SweepKind::Beta,
        alpha,
        provenance: Provenance::new(exp),
        rows,
        coefficient: Some(coef),
        fit,
        prefactor_ratio,
        wiggle: Vec::new(),
        slopes: Vec::new(),
        warnings,
    })
}

// Solve the unperturbed curve (levels and grid) for a wiggle study.
fn base_levels(exp: &Experiment) -> Result<(Vec<SpectralResult>, Grid), HarnessError> {
    let config = &exp.config;
    let unit = ScaledCurve::new(exp.curve.clone(), 1.0)?;
    let coef = coefficient(exp)?;
    let (ground, grid) = solve_with_policy(config, &unit, Some(coef.predicted_gap(1.0).sqrt()))?;
    if ground.bound().is_none() {
        return Err(HarnessError::NoBaseLevel);
    }
    let levels = spectrum::solve_all(&unit, config.alpha, &grid, &config.solve_settings(), config.levels)?;
    if levels.is_empty() {
        return Err(HarnessError::NoBaseLevel);
    }
    Ok((levels, grid))
}

/// Levels of the wiggled curve for each `φ`, compared with the first-order
/// prediction. Within a cluster that splits, the branch with the `j`-th
/// smallest slope is the `j`-th lowest level for `φ > 0` and the `j`-th
/// highest for `φ < 0`.
pub fn sweep_phi(exp: &Experiment) -> Result<SweepReport, HarnessError> {
    let config = &exp.config;
    if config.phi.is_empty() {
        return Err(HarnessError::Config("a phi sweep needs a non-empty phi list".into()));
    }
    check_admissible(&exp.curve, 1.0)?;
    let mut phis = config.phi.clone();
    phis.sort_by(f64::total_cmp);
    phis.dedup();
    let pivot = config.pivot.unwrap_or_else(|| asymptotics::default_pivot(&exp.curve));
    for &phi in &phis {
        let wiggled = exp.curve.wiggled(pivot, phi)?;
        check_admissible(&wiggled, 1.0)?;
    }

    let (base, grid) = base_levels(exp)?;
    let alpha = config.alpha;
    let groups = spectrum::clusters(&base, alpha, config.tolerances.cluster);
    let options = WiggleOptions {
        pivot: Some(pivot),
        scheme: config.scheme,
        cluster_tol: config.tolerances.cluster,
    };
    let mut wiggle = Vec::new();
    // For each base level index: (cluster members, position in cluster, slope).
    let mut branch = vec![(Vec::new(), 0, 0.0); base.len()];
    for group in &groups {
        let members: Vec<SpectralResult> = group.iter().map(|&i| base[i].clone()).collect();
        let w = asymptotics::wiggle_slope(&exp.curve, alpha, &members, &grid, &options)?;
        for (j, &i) in group.iter().enumerate() {
            branch[i] = (group.clone(), j, w.slopes[j]);
        }
        wiggle.push(w);
    }

    let settings = config.solve_settings();
    let solved: Vec<Result<(f64, Vec<SpectralResult>), HarnessError>> = phis
        .par_iter()
        .map(|&phi| {
            if phi == 0.0 {
                return Ok((phi, base.clone()));
            }
            let curve = ScaledCurve::new(exp.curve.wiggled(pivot, phi)?, 1.0)?;
            Ok((phi, spectrum::solve_all(&curve, alpha, &grid, &settings, base.len())?))
        })
        .collect();
    let solved = solved.into_iter().collect::<Result<Vec<_>, _>>()?;

    let mut rows = Vec::new();
    let mut series: Vec<Vec<(f64, f64)>> = base.iter().map(|r| vec![(0.0, r.lambda)]).collect();
    for (phi, levels) in &solved {
        for (i, b) in base.iter().enumerate() {
            let (group, j, slope) = &branch[i];
            let m = group.len();
            let first = group[0];
            let idx = if *phi >= 0.0 { first + j } else { first + m - 1 - j };
            let mut row = match levels.get(idx) {
                Some(r) => {
                    let mut row = bound_row(config, *phi, r, &grid);
                    if *phi != 0.0 {
                        series[i].push((*phi, r.lambda));
                    }
                    row.level = b.level;
                    row
                }
                None => empty_row(config, *phi, b.level, &grid),
            };
            row.predicted_lambda = Some(b.lambda + slope * phi);
            rows.push(row);
        }
    }
    rows.sort_by(|a, b| a.parameter.total_cmp(&b.parameter).then(a.level.cmp(&b.level)));

    let mut warnings = Vec::new();
    let mut slopes = Vec::new();
    for (i, b) in base.iter().enumerate() {
        let (group, _, predicted) = &branch[i];
        match fit_line(&series[i]) {
            Ok(fit) => slopes.push(LevelSlope {
                level: b.level,
                cluster: group.iter().map(|&g| base[g].level).collect(),
                predicted: *predicted,
                fit,
                relative_error: (fit.slope - predicted).abs() / predicted.abs(),
            }),
            Err(e) => warnings.push(format!("level {}: no slope fit: {e}", b.level)),
        }
    }
    let skipped = rows.iter().filter(|r| r.status == RowStatus::NoBoundState).count();
    if skipped > 0 {
        warnings.push(format!("{skipped} rows lost their bound state"));
    }
    Ok(SweepReport {
        kind: SweepKind::Phi,
        alpha,
        provenance: Provenance::new(exp),
        rows,
        coefficient: None,
        fit: None,
        prefactor_ratio: None,
        wiggle,
        slopes,
        warnings,
    })
}

// ------------------------------------------------------------ convergence

/// One grid of a convergence study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceEntry {
    pub h: f64,
    pub grid: GridSize,
    /// `None` when the grid resolves no bound state.
    pub lambda: Option<f64>,
    pub kappa: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Richardson {
    pub value: f64,
    /// Extrapolation correction plus the change from doubling `L`.
    pub error: f64,
    /// Order in `h` used; estimated when three spacings are available.
    pub order: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub kind: SweepKind,
    pub parameter: f64,
    pub alpha: f64,
    pub provenance: Provenance,
    /// `(h, L)`, `(h/2, L)`, `(h, 2L)`, `(h/2, 2L)`.
    pub grids: Vec<ConvergenceEntry>,
    /// `(h/2ʳ, 2ʳL)` for `r = 0, 1, …, rounds`.
    pub diagonal: Vec<ConvergenceEntry>,
    /// `|λ_{r+1} − λ_r|` along the diagonal.
    pub differences: Vec<f64>,
    pub richardson: Option<Richardson>,
}

/// Eigenvalue on a family of grids around the configured one, for a single
/// `β` or a single `φ`.
pub fn convergence(exp: &Experiment) -> Result<ConvergenceReport, HarnessError> {
    let config = &exp.config;
    let (kind, parameter, curve) = match (config.beta.as_slice(), config.phi.as_slice()) {
        ([b], []) => {
            check_admissible(&exp.curve, *b)?;
            (SweepKind::Beta, *b, ScaledCurve::new(exp.curve.clone(), *b)?)
        }
        ([], [p]) => {
            let pivot = config.pivot.unwrap_or_else(|| asymptotics::default_pivot(&exp.curve));
            let w = exp.curve.wiggled(pivot, *p)?;
            check_admissible(&w, 1.0)?;
            (SweepKind::Phi, *p, ScaledCurve::new(w, 1.0)?)
        }
        _ => {
            return Err(HarnessError::Config(
                "a convergence study needs exactly one beta or exactly one phi".into(),
            ))
        }
    };
    let delta_est = match kind {
        SweepKind::Beta => Some(coefficient(exp)?.predicted_gap(parameter).sqrt()),
        SweepKind::Phi => Some(coefficient(exp)?.predicted_gap(1.0).sqrt()),
    };
    let (_, base) = solve_with_policy(config, &curve, delta_est)?;
    let (h, l) = (base.spacing(), base.half_length());

    let mut specs = vec![(h, l), (0.5 * h, l), (h, 2.0 * l), (0.5 * h, 2.0 * l)];
    let diag: Vec<(f64, f64)> = (0..=config.rounds)
        .map(|r| (h / f64::powi(2.0, r as i32), l * f64::powi(2.0, r as i32)))
        .collect();
    specs.extend(diag.iter().skip(2).copied());
    let settings = config.solve_settings();
    let entries: Vec<Result<ConvergenceEntry, HarnessError>> = specs
        .par_iter()
        .map(|&(h, l)| {
            let grid = Grid::with_spacing(h, l)?;
            let ground = spectrum::solve_ground(&curve, config.alpha, &grid, &settings)?;
            let r = ground.bound();
            Ok(ConvergenceEntry {
                h,
                grid: grid.size(),
                lambda: r.as_ref().map(|r| r.lambda),
                kappa: r.as_ref().map(|r| r.kappa),
            })
        })
        .collect();
    let entries = entries.into_iter().collect::<Result<Vec<_>, _>>()?;
    let grids = entries[..4].to_vec();
    let mut diagonal = vec![grids[0].clone(), grids[3].clone()];
    diagonal.extend(entries[4..].iter().cloned());
    diagonal.truncate(config.rounds + 1);

    let lambdas: Option<Vec<f64>> = diagonal.iter().map(|e| e.lambda).collect();
    let differences = lambdas
        .as_ref()
        .map(|v| v.windows(2).map(|w| (w[1] - w[0]).abs()).collect())
        .unwrap_or_default();

    let richardson = match (grids[2].lambda, grids[3].lambda, grids[1].lambda) {
        (Some(coarse), Some(fine), Some(fine_short)) => {
            let order = lambdas
                .as_ref()
                .filter(|v| v.len() >= 3)
                .map(|v| ((v[1] - v[0]) / (v[2] - v[1])).abs().log2())
                .filter(|p| p.is_finite() && (0.5..=6.0).contains(p))
                .unwrap_or(2.0);
            let value = fine + (fine - coarse) / (f64::powf(2.0, order) - 1.0);
            Some(Richardson {
                value,
                error: (value - fine).abs() + (fine - fine_short).abs(),
                order,
            })
        }
        _ => None,
    };
    Ok(ConvergenceReport {
        kind,
        parameter,
        alpha: config.alpha,
        provenance: Provenance::new(exp),
        grids,
        diagonal,
        differences,
        richardson,
    })
}

// ---------------------------------------------------------------- output

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x:.17e}"))
}

impl SweepReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("parameter,level,status,kappa,lambda,gap,predicted_lambda,predicted_gap,residual,threshold_kappa,L,n\n");
        for r in &self.rows {
            let status = match r.status {
                RowStatus::Bound => "bound",
                RowStatus::NoBoundState => "no-bound-state",
            };
            let _ = writeln!(
                out,
                "{:.17e},{},{},{},{},{},{},{},{},{:.17e},{:.17e},{}",
                r.parameter,
                r.level,
                status,
                opt(r.kappa),
                opt(r.lambda),
                opt(r.gap),
                opt(r.predicted_lambda),
                opt(r.predicted_gap),
                opt(r.residual),
                r.threshold_kappa,
                r.grid.half_length,
                r.grid.n
            );
        }
        out
    }

    /// Whitespace-separated columns for gnuplot; missing values are `NaN`.
    pub fn to_gnuplot_data(&self) -> String {
        let mut out = String::from("# parameter level lambda gap predicted_lambda predicted_gap\n");
        let g = |v: Option<f64>| v.map_or("NaN".to_string(), |x| format!("{x:.17e}"));
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:.17e} {} {} {} {} {}",
                r.parameter,
                r.level,
                g(r.lambda),
                g(r.gap),
                g(r.predicted_lambda),
                g(r.predicted_gap)
            );
        }
        out
    }

    /// A gnuplot script that plots `data_file`.
    pub fn to_gnuplot_script(&self, data_file: &str) -> String {
        match self.kind {
            SweepKind::Beta => {
                let fit = self
                    .fit
                    .map(|f| format!(", {:.17e} * x**{:.17e} title 'fit' with lines", f.prefactor, f.exponent))
                    .unwrap_or_default();
                format!(
                    "set logscale xy\nset xlabel 'beta'\nset ylabel 'gap'\nset key left top\n\
                     plot '{data_file}' using 1:4 title 'computed' with points pt 7, \
                     '{data_file}' using 1:6 title 'predicted' with linespoints{fit}\n"
                )
            }
            SweepKind::Phi => format!(
                "set xlabel 'phi'\nset ylabel 'lambda'\nset key left top\n\
                 plot '{data_file}' using 1:3 title 'computed' with points pt 7, \
                 '{data_file}' using 1:5 title 'first order' with lines\n"
            ),
        }
    }

    /// Writes every output named in `outputs`.
    pub fn write(&self, outputs: &Outputs) -> Result<(), HarnessError> {
        if let Some(p) = &outputs.json {
            write_file(p, &self.to_json())?;
        }
        if let Some(p) = &outputs.csv {
            write_file(p, &self.to_csv())?;
        }
        if let Some(stem) = &outputs.gnuplot {
            let dat = stem.with_extension("dat");
            let name = dat.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            write_file(&dat, &self.to_gnuplot_data())?;
            write_file(&stem.with_extension("gp"), &self.to_gnuplot_script(&name))?;
        }
        Ok(())
    }
}

impl ConvergenceReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("set,h,L,n,kappa,lambda\n");
        for (set, entries) in [("grid", &self.grids), ("diagonal", &self.diagonal)] {
            for e in entries {
                let _ = writeln!(
                    out,
                    "{set},{:.17e},{:.17e},{},{},{}",
                    e.h,
                    e.grid.half_length,
                    e.grid.n,
                    opt(e.kappa),
                    opt(e.lambda)
                );
            }
        }
        out
    }

    pub fn write(&self, outputs: &Outputs) -> Result<(), HarnessError> {
        if let Some(p) = &outputs.json {
            write_file(p, &self.to_json())?;
        }
        if let Some(p) = &outputs.csv {
            write_file(p, &self.to_csv())?;
        }
        if let Some(stem) = &outputs.gnuplot {
            let dat = stem.with_extension("dat");
            let mut data = String::from("# h lambda (diagonal refinement)\n");
            for e in &self.diagonal {
                let _ = writeln!(data, "{:.17e} {}", e.h, e.lambda.map_or("NaN".into(), |l| format!("{l:.17e}")));
            }
            let name = dat.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            write_file(&dat, &data)?;
            let script = format!("set logscale x\nset xlabel 'h'\nset ylabel 'lambda'\nplot '{name}' using 1:2 with linespoints pt 7 title 'lambda'\n");
            write_file(&stem.with_extension("gp"), &script)?;
        }
        Ok(())
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, contents).map_err(io_err(path))
}
