//! Curves built from constant-curvature pieces and corner vertices.
//!
//! A curve is described by its signed curvature `k(s)` (piecewise constant,
//! zero outside a compact support) and a list of corners where the tangent
//! jumps by an exterior angle. The accumulated tangent angle
//!
//! ```text
//! A(s) = Σ_{p < s} c(p) + ∫_{−∞}^s k(u) du
//! ```
//!
//! is piecewise linear, so the arc-length parametrization `γ_β` of the
//! scaled curve (tangent angle `β·(A(s) − A(0))`, `γ_β(0) = 0`) is a chain of
//! straight segments and circular arcs and can be evaluated in closed form.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("non-finite value in curve description: {0}")]
    NonFinite(&'static str),
    #[error("segment [{a}, {b}] is empty or reversed")]
    EmptySegment { a: f64, b: f64 },
    #[error("segments overlap or are out of order near s = {at}")]
    SegmentOrder { at: f64 },
    #[error("vertices are not strictly increasing near s = {at}")]
    VertexOrder { at: f64 },
    #[error("vertex angle {angle} at s = {at} is outside (-pi, pi)")]
    VertexAngle { at: f64, angle: f64 },
    #[error("scaling parameter {0} is not finite")]
    Beta(f64),
}

/// A corner at arc length `s` where the tangent turns by `angle` radians.
/// Positive angles turn counter-clockwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Vertex {
    pub s: f64,
    pub angle: f64,
}

/// Constant signed curvature `k` on `[a, b]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurvatureSegment {
    pub a: f64,
    pub b: f64,
    pub k: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCurveSpec {
    segments: Vec<CurvatureSegment>,
    vertices: Vec<Vertex>,
}

/// A structurally valid curve description.
///
/// Construction checks ordering and finiteness, which is all that is needed
/// for the curve to be straight outside a compact set and to have one-sided
/// tangents everywhere. Whether the curve stays away from itself is a
/// numerical question answered by [`validate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCurveSpec")]
pub struct CurveSpec {
    segments: Vec<CurvatureSegment>,
    vertices: Vec<Vertex>,
    #[serde(skip)]
    profile: Profile,
}

impl TryFrom<RawCurveSpec> for CurveSpec {
    type Error = GeometryError;

    fn try_from(raw: RawCurveSpec) -> Result<Self, Self::Error> {
        CurveSpec::new(raw.segments, raw.vertices)
    }
}

impl CurveSpec {
    pub fn new(
        segments: Vec<CurvatureSegment>,
        vertices: Vec<Vertex>,
    ) -> Result<Self, GeometryError> {
        for seg in &segments {
            if !(seg.a.is_finite() && seg.b.is_finite() && seg.k.is_finite()) {
                return Err(GeometryError::NonFinite("segment"));
            }
            if seg.a >= seg.b {
                return Err(GeometryError::EmptySegment { a: seg.a, b: seg.b });
            }
        }
        for w in segments.windows(2) {
            if w[1].a < w[0].b {
                return Err(GeometryError::SegmentOrder { at: w[1].a });
            }
        }
        for v in &vertices {
            if !(v.s.is_finite() && v.angle.is_finite()) {
                return Err(GeometryError::NonFinite("vertex"));
            }
            if v.angle.abs() >= PI {
                return Err(GeometryError::VertexAngle {
                    at: v.s,
                    angle: v.angle,
                });
            }
        }
        for w in vertices.windows(2) {
            if w[1].s <= w[0].s {
                return Err(GeometryError::VertexOrder { at: w[1].s });
            }
        }
        let profile = Profile::build(&segments, &vertices);
        Ok(Self {
            segments,
            vertices,
            profile,
        })
    }

    /// The straight line.
    pub fn straight() -> Self {
        Self::new(Vec::new(), Vec::new()).expect("empty curve is valid")
    }

    /// Two half-lines joined at `s = 0` with exterior angle `angle`.
    pub fn broken_line(angle: f64) -> Result<Self, GeometryError> {
        Self::new(Vec::new(), vec![Vertex { s: 0.0, angle }])
    }

    /// Corners `+angle` at `s = −half_gap` and `−angle` at `s = half_gap`;
    /// the two tails are parallel.
    pub fn zigzag(angle: f64, half_gap: f64) -> Result<Self, GeometryError> {
        Self::new(
            Vec::new(),
            vec![
                Vertex {
                    s: -half_gap,
                    angle,
                },
                Vertex {
                    s: half_gap,
                    angle: -angle,
                },
            ],
        )
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn segments(&self) -> &[CurvatureSegment] {
        &self.segments
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn profile(&self) -> &Profile {
        &self.profile
    }

    /// Smallest interval `[s₂, s₁]` outside which the curve is straight, or
    /// `None` for the straight line.
    pub fn support(&self) -> Option<(f64, f64)> {
        let knots = &self.profile.knots;
        Some((*knots.first()?, *knots.last()?))
    }

    pub fn is_straight(&self) -> bool {
        self.vertices.iter().all(|v| v.angle == 0.0) && self.segments.iter().all(|g| g.k == 0.0)
    }

    /// The same curve with everything beyond arc length `pivot` rigidly
    /// rotated by `phi` about `γ(pivot)`: a corner of angle `phi` is added at
    /// the pivot, or merged into one already there.
    pub fn wiggled(&self, pivot: f64, phi: f64) -> Result<Self, GeometryError> {
        let mut vertices = self.vertices.clone();
        match vertices.iter_mut().find(|v| v.s == pivot) {
            Some(v) => v.angle += phi,
            None => {
                vertices.push(Vertex { s: pivot, angle: phi });
                vertices.sort_by(|a, b| a.s.total_cmp(&b.s));
            }
        }
        Self::new(self.segments.clone(), vertices)
    }

    /// The curve with every curvature and corner angle multiplied by `beta`.
    pub fn scaled(&self, beta: f64) -> Result<Self, GeometryError> {
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(GeometryError::Beta(beta));
        }
        let segments = self
            .segments
            .iter()
            .map(|g| CurvatureSegment { k: beta * g.k, ..*g })
            .collect();
        let vertices = self
            .vertices
            .iter()
            .map(|v| Vertex { angle: beta * v.angle, ..*v })
            .collect();
        Self::new(segments, vertices)
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        digest_hex(&serde_json::to_vec(self).expect("curve serializes"))
    }
}

pub(crate) fn digest_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// The accumulated tangent angle `A(s)` in piecewise-linear form.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Profile {
    /// Sorted breakpoints: segment ends and vertex positions.
    knots: Vec<f64>,
    /// `A` just to the right of each knot.
    a_right: Vec<f64>,
    /// Curvature on `[knots[i], knots[i+1])`; the last entry is zero.
    slope: Vec<f64>,
}

impl Profile {
    fn build(segments: &[CurvatureSegment], vertices: &[Vertex]) -> Self {
        let mut knots: Vec<f64> = segments
            .iter()
            .flat_map(|g| [g.a, g.b])
            .chain(vertices.iter().map(|v| v.s))
            .collect();
        knots.sort_by(f64::total_cmp);
        knots.dedup();

        let slope: Vec<f64> = (0..knots.len())
            .map(|i| match knots.get(i + 1) {
                Some(&next) => {
                    let mid = 0.5 * (knots[i] + next);
                    segments
                        .iter()
                        .find(|g| g.a <= mid && mid <= g.b)
                        .map_or(0.0, |g| g.k)
                }
                None => 0.0,
            })
            .collect();

        let mut a_right = Vec::with_capacity(knots.len());
        let mut a = 0.0;
        for (i, &t) in knots.iter().enumerate() {
            if i > 0 {
                a += slope[i - 1] * (t - knots[i - 1]);
            }
            if let Some(v) = vertices.iter().find(|v| v.s == t) {
                a += v.angle;
            }
            a_right.push(a);
        }
        Self {
            knots,
            a_right,
            slope,
        }
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    fn eval(&self, j: usize, s: f64) -> f64 {
        if j == 0 {
            0.0
        } else {
            let i = j - 1;
            self.a_right[i] + self.slope[i] * (s - self.knots[i])
        }
    }

    /// `A(s)`, continuous from the left.
    pub fn angle(&self, s: f64) -> f64 {
        self.eval(self.knots.partition_point(|&t| t < s), s)
    }

    /// `A(s+)`.
    pub fn angle_right(&self, s: f64) -> f64 {
        self.eval(self.knots.partition_point(|&t| t <= s), s)
    }

    pub fn total(&self) -> f64 {
        self.a_right.last().copied().unwrap_or(0.0)
    }

    /// Linear pieces of `A` on `[lo, hi]` as `(u0, u1, A(u0+), slope)`.
    pub fn linear_pieces(&self, lo: f64, hi: f64) -> impl Iterator<Item = (f64, f64, f64, f64)> + '_ {
        let first = self.knots.partition_point(|&t| t <= lo);
        let interior = self.knots[first..].iter().copied().take_while(move |&t| t < hi);
        let starts = std::iter::once(lo).chain(interior.clone());
        let ends = interior.chain(std::iter::once(hi));
        starts.zip(ends).filter(|(a, b)| b > a).map(move |(a, b)| {
            let j = self.knots.partition_point(|&t| t <= a);
            let slope = if j == 0 { 0.0 } else { self.slope[j - 1] };
            (a, b, self.eval(j, a), slope)
        })
    }
}

/// `φ(s, s′)`: the tangent turn accumulated from `s′` to `s`.
pub fn bending(curve: &CurveSpec, s: f64, s_prime: f64) -> f64 {
    let p = &curve.profile;
    p.angle(s) - p.angle(s_prime)
}

/// Bending between the two straight tails.
pub fn total_bending(curve: &CurveSpec) -> f64 {
    curve.profile.total()
}

/// `γ_β`: the curve with all curvatures and corner angles multiplied by `β`,
/// placed so that `γ_β(0) = 0` with unit tangent `(1, 0)` just left of 0.
#[derive(Debug, Clone)]
pub struct ScaledCurve {
    base: CurveSpec,
    beta: f64,
    knots: Vec<f64>,
    theta: Vec<f64>,
    curvature: Vec<f64>,
    pos: Vec<[f64; 2]>,
    theta_left: f64,
    run: Vec<usize>,
}

impl ScaledCurve {
    pub fn new(base: CurveSpec, beta: f64) -> Result<Self, GeometryError> {
        if !beta.is_finite() {
            return Err(GeometryError::Beta(beta));
        }
        let profile = &base.profile;
        let a0 = profile.angle(0.0);
        let mut knots = profile.knots.clone();
        if let Err(at) = knots.binary_search_by(|t| t.total_cmp(&0.0)) {
            knots.insert(at, 0.0);
        }
        let m = knots.len();
        let theta: Vec<f64> = knots
            .iter()
            .map(|&t| beta * (profile.angle_right(t) - a0))
            .collect();
        let curvature: Vec<f64> = (0..m)
            .map(|i| match knots.get(i + 1) {
                Some(&next) => {
                    let mid = 0.5 * (knots[i] + next);
                    let j = profile.knots.partition_point(|&t| t <= mid);
                    if j == 0 {
                        0.0
                    } else {
                        beta * profile.slope[j - 1]
                    }
                }
                None => 0.0,
            })
            .collect();

        let zero = knots.iter().position(|&t| t == 0.0).expect("origin inserted");
        let mut pos = vec![[0.0; 2]; m];
        for i in zero..m - 1 {
            let d = arc(theta[i], curvature[i], knots[i + 1] - knots[i]);
            pos[i + 1] = [pos[i][0] + d[0], pos[i][1] + d[1]];
        }
        for i in (0..zero).rev() {
            let d = arc(theta[i], curvature[i], knots[i + 1] - knots[i]);
            pos[i] = [pos[i + 1][0] - d[0], pos[i + 1][1] - d[1]];
        }
        let theta_left = -beta * a0;

        // Piece p covers [knots[p−1], knots[p]); p = 0 is the left tail.
        let mut run = Vec::with_capacity(m + 1);
        let mut id = 0;
        run.push(id);
        for p in 1..=m {
            let straight_prev = p == 1 || curvature[p - 2] == 0.0;
            let straight_here = curvature[p - 1] == 0.0;
            let corner = beta
                * base
                    .vertices
                    .iter()
                    .find(|v| v.s == knots[p - 1])
                    .map_or(0.0, |v| v.angle);
            if !(straight_prev && straight_here && corner == 0.0) {
                id += 1;
            }
            run.push(id);
        }

        Ok(Self {
            base,
            beta,
            knots,
            theta,
            curvature,
            pos,
            theta_left,
            run,
        })
    }

    pub fn base(&self) -> &CurveSpec {
        &self.base
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    fn piece(&self, s: f64) -> usize {
        self.knots.partition_point(|&t| t <= s)
    }

    /// Identifier of the maximal straight run containing `s`, or `None` if
    /// `s` lies on a curved piece. Two points with the same id are joined by
    /// a straight segment of the curve.
    pub fn straight_run(&self, s: f64) -> Option<usize> {
        let p = self.piece(s);
        if p == 0 || self.curvature[p - 1] == 0.0 {
            Some(self.run[p])
        } else {
            None
        }
    }

    /// `γ_β(s)`.
    pub fn point(&self, s: f64) -> [f64; 2] {
        match self.piece(s) {
            0 => {
                let d = s - self.knots[0];
                let (sin, cos) = self.theta_left.sin_cos();
                [self.pos[0][0] + d * cos, self.pos[0][1] + d * sin]
            }
            p => {
                let i = p - 1;
                let d = arc(self.theta[i], self.curvature[i], s - self.knots[i]);
                [self.pos[i][0] + d[0], self.pos[i][1] + d[1]]
            }
        }
    }

    /// Tangent angle just to the right of `s`.
    pub fn tangent_angle(&self, s: f64) -> f64 {
        match self.piece(s) {
            0 => self.theta_left,
            p => self.theta[p - 1] + self.curvature[p - 1] * (s - self.knots[p - 1]),
        }
    }

    /// `|γ_β(s) − γ_β(s′)|`. Exact on a common straight run or arc.
    pub fn distance(&self, s: f64, s_prime: f64) -> f64 {
        if s == s_prime {
            return 0.0;
        }
        let (p, q) = (self.piece(s), self.piece(s_prime));
        if self.run[p] == self.run[q] {
            let d = s - s_prime;
            let c = if p == 0 { 0.0 } else { self.curvature[p - 1] };
            return (d * sinc(0.5 * c * d)).abs();
        }
        let a = self.point(s);
        let b = self.point(s_prime);
        (a[0] - b[0]).hypot(a[1] - b[1])
    }

    /// Hex SHA-256 of the base curve together with `β`.
    pub fn hash(&self) -> String {
        let doc = serde_json::json!({ "curve": self.base, "beta": self.beta });
        digest_hex(&serde_json::to_vec(&doc).expect("curve serializes"))
    }
}

// ∫₀^Δ (cos, sin)(θ + cΔ′) dΔ′ in closed form, valid for either sign of Δ.
fn arc(theta: f64, c: f64, delta: f64) -> [f64; 2] {
    let half = 0.5 * c * delta;
    let r = delta * sinc(half);
    let (sin, cos) = (theta + half).sin_cos();
    [r * cos, r * sin]
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        let x2 = x * x;
        1.0 - x2 / 6.0 * (1.0 - x2 / 20.0)
    } else {
        x.sin() / x
    }
}

/// Settings for the numerical admissibility check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidationSettings {
    /// Sample points along the curve; all pairs are examined.
    pub samples: usize,
    /// Chord constants at or below this value are rejected.
    pub floor: f64,
}

impl Default for ValidationSettings {
    fn default() -> Self {
        Self {
            samples: 400,
            floor: 1e-3,
        }
    }
}

/// Outcome of [`validate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub admissible: bool,
    /// Estimated `inf ρ(s,s′)/|s − s′|` at `β = 1`.
    pub chord_constant: f64,
    /// Where the estimate was attained; `None` if attained at infinity.
    pub minimizer: Option<(f64, f64)>,
    pub support: Option<(f64, f64)>,
    pub total_bending: f64,
    pub floor: f64,
    pub issues: Vec<String>,
}

/// Estimates the chord constant `c` in `|γ(s) − γ(s′)| ≥ c|s − s′|`.
///
/// The ratio is sampled on all pairs of a mesh that is dense on the bent
/// region and geometrically graded along the tails, the best candidates are
/// polished with golden-section searches, and the limit for points running
/// off along opposite tails, `|cos(Θ/2)|` with `Θ` the total bending, is
/// included. The result is an estimate, not a certificate.
pub fn validate(curve: &CurveSpec, settings: &ValidationSettings) -> ValidationReport {
    let total = total_bending(curve);
    let mut issues = Vec::new();
    let support = curve.support();
    let scaled = ScaledCurve::new(curve.clone(), 1.0).expect("unit scaling");
    let ratio = |s: f64, t: f64| scaled.distance(s, t) / (s - t).abs();

    let mut best = (0.5 * total).cos().abs();
    let mut minimizer = None;

    if let Some((lo, hi)) = support {
        let width = (hi - lo).max(1.0);
        let n_core = (settings.samples * 3 / 4).max(8);
        let n_tail = (settings.samples - n_core.min(settings.samples)).max(8) / 2;
        let mut mesh: Vec<f64> = (0..=n_core)
            .map(|i| lo - 0.5 * width + 2.0 * width * i as f64 / n_core as f64)
            .collect();
        for i in 1..=n_tail {
            let d = 0.5 * width * (400f64).powf(i as f64 / n_tail as f64);
            mesh.push(lo - 0.5 * width - d);
            mesh.push(hi + 0.5 * width + d);
        }
        mesh.sort_by(f64::total_cmp);

        let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
        for i in 0..mesh.len() {
            for j in i + 1..mesh.len() {
                candidates.push((ratio(mesh[i], mesh[j]), i, j));
            }
        }
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0));
        for &(r, i, j) in candidates.iter().take(8) {
            let step = |k: usize| {
                let left = if k > 0 { mesh[k] - mesh[k - 1] } else { 1.0 };
                let right = if k + 1 < mesh.len() { mesh[k + 1] - mesh[k] } else { 1.0 };
                (mesh[k] - left, mesh[k] + right)
            };
            let (mut s, mut t) = (mesh[i], mesh[j]);
            let mut value = r;
            for _ in 0..6 {
                let (a, b) = step(i);
                s = golden_min(|x| if x == t { 1.0 } else { ratio(x, t) }, a, b.min(t));
                let (a, b) = step(j);
                t = golden_min(|x| if x == s { 1.0 } else { ratio(s, x) }, a.max(s), b);
                if s != t {
                    value = value.min(ratio(s, t));
                }
            }
            if value < best {
                best = value;
                minimizer = Some((s, t));
            }
        }
    }

    if best <= settings.floor {
        issues.push(format!(
            "chord constant {best:.3e} is at or below the floor {:.1e}; the curve nearly or actually intersects itself",
            settings.floor
        ));
    }
    ValidationReport {
        admissible: issues.is_empty(),
        chord_constant: best,
        minimizer,
        support,
        total_bending: total,
        floor: settings.floor,
        issues,
    }
}

fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..60 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}
