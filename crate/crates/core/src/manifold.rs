//! Closed-form Riemannian geometry for flat space and the unit sphere.
//!
//! Points and tangents are stored in ambient embedding coordinates: a
//! `Flat(d)` point is any vector in `R^d`, a `Sphere(d)` point is a unit
//! vector in `R^{d+1}` and its tangent space is the orthogonal complement
//! of the point. All operations (exponential map, logarithm, parallel
//! transport, metric, distance) are exact closed forms; the sphere
//! formulas switch to series expansions of `sin t / t` and `(1 - cos t)`
//! near `t = 0` to avoid cancellation.
//!
//! At the sphere cut locus (antipodal points) the logarithm is not unique;
//! [`CutLocusPolicy`] fixes a deterministic choice so that runs are
//! reproducible.

use serde::{Deserialize, Serialize};

use crate::error::{GeomError, Result};

/// Constraint tolerance for point and tangent constructors.
pub const CONSTRAINT_TOL: f64 = 1e-12;

/// Below this sine threshold a sphere chord is treated as antipodal.
const ANTIPODAL_EPS: f64 = 1e-12;

/// Switch-over to series evaluation of `sin t / t`.
const SMALL_ANGLE: f64 = 1e-4;

// ---------------------------------------------------------------------------
// small dense-vector helpers shared across the crate
// ---------------------------------------------------------------------------

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn scale(v: &[f64], s: f64) -> Vec<f64> {
    v.iter().map(|x| x * s).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub(crate) fn axpy(acc: &mut [f64], s: f64, v: &[f64]) {
    for (a, x) in acc.iter_mut().zip(v) {
        *a += s * x;
    }
}

/// Stable `sin(t) / t`.
pub(crate) fn sinc(t: f64) -> f64 {
    if t.abs() < SMALL_ANGLE {
        let t2 = t * t;
        1.0 - t2 / 6.0 + t2 * t2 / 120.0
    } else {
        t.sin() / t
    }
}

/// `cos(t) - 1` without cancellation.
pub(crate) fn cos_minus_one(t: f64) -> f64 {
    let s = (0.5 * t).sin();
    -2.0 * s * s
}

// ---------------------------------------------------------------------------
// manifold kinds, points, tangents
// ---------------------------------------------------------------------------

/// Supported geometries. `dim` is the intrinsic dimension; sphere points
/// live in `R^{dim + 1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManifoldKind {
    Flat { dim: usize },
    Sphere { dim: usize },
}

impl ManifoldKind {
    pub fn flat(dim: usize) -> Self {
        assert!(dim >= 1, "manifold dimension must be at least 1");
        ManifoldKind::Flat { dim }
    }

    pub fn sphere(dim: usize) -> Self {
        assert!(dim >= 1, "manifold dimension must be at least 1");
        ManifoldKind::Sphere { dim }
    }

    /// Intrinsic dimension; equals the driver dimension in the rolling maps.
    pub fn dim(&self) -> usize {
        match *self {
            ManifoldKind::Flat { dim } | ManifoldKind::Sphere { dim } => dim,
        }
    }

    /// Dimension of the ambient coordinate vectors.
    pub fn ambient_dim(&self) -> usize {
        match *self {
            ManifoldKind::Flat { dim } => dim,
            ManifoldKind::Sphere { dim } => dim + 1,
        }
    }

    pub fn is_sphere(&self) -> bool {
        matches!(self, ManifoldKind::Sphere { .. })
    }

    /// How far `coords` is from satisfying the defining constraint.
    pub fn constraint_residual(&self, coords: &[f64]) -> f64 {
        match self {
            ManifoldKind::Flat { .. } => 0.0,
            ManifoldKind::Sphere { .. } => (norm(coords) - 1.0).abs(),
        }
    }

    fn check_ambient(&self, len: usize) -> Result<()> {
        if len != self.ambient_dim() {
            return Err(GeomError::DimensionMismatch {
                expected: self.ambient_dim(),
                got: len,
            });
        }
        Ok(())
    }
}

impl std::fmt::Display for ManifoldKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ManifoldKind::Flat { dim } => write!(f, "flat:{dim}"),
            ManifoldKind::Sphere { dim } => write!(f, "sphere:{dim}"),
        }
    }
}

impl std::str::FromStr for ManifoldKind {
    type Err = String;

    /// Parses `flat:<d>` or `sphere:<d>` with `d >= 1`.
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (kind, dim) = s
            .split_once(':')
            .ok_or_else(|| format!("expected flat:<d> or sphere:<d>, got {s:?}"))?;
        let dim: usize = dim
            .parse()
            .map_err(|_| format!("bad dimension in {s:?}"))?;
        if dim == 0 {
            return Err("manifold dimension must be at least 1".into());
        }
        match kind {
            "flat" => Ok(ManifoldKind::Flat { dim }),
            "sphere" => Ok(ManifoldKind::Sphere { dim }),
            other => Err(format!("unknown manifold kind {other:?}")),
        }
    }
}

/// Deterministic choice of logarithm direction at the sphere cut locus:
/// project the ambient basis vectors `e_1, e_2, ...` onto the tangent
/// space in order and normalize the first projection of norm at least
/// `1e-8`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum CutLocusPolicy {
    #[default]
    FirstAxisProjection,
}

/// A point on a manifold, in ambient coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    manifold: ManifoldKind,
    coords: Vec<f64>,
}

impl Point {
    /// Validates the ambient dimension and the defining constraint
    /// (unit norm on the sphere, within `1e-12`).
    pub fn new(manifold: ManifoldKind, coords: Vec<f64>) -> Result<Self> {
        manifold.check_ambient(coords.len())?;
        let residual = manifold.constraint_residual(&coords);
        if residual > CONSTRAINT_TOL {
            return Err(GeomError::ConstraintViolated { residual });
        }
        Ok(Point { manifold, coords })
    }

    /// Constructor for coordinates already known to satisfy the constraint
    /// (outputs of the closed-form maps). Checked in debug builds only.
    pub(crate) fn new_unchecked(manifold: ManifoldKind, coords: Vec<f64>) -> Self {
        debug_assert!(manifold.constraint_residual(&coords) <= 1e-9);
        Point { manifold, coords }
    }

    pub fn manifold(&self) -> ManifoldKind {
        self.manifold
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// Zero tangent vector at this point.
    pub fn zero_tangent(&self) -> Tangent {
        Tangent {
            base: self.clone(),
            vec: vec![0.0; self.coords.len()],
        }
    }

    /// Tangent at this point from ambient components; any normal component
    /// (sphere) is projected away.
    pub fn tangent_from_ambient(&self, vec: &[f64]) -> Result<Tangent> {
        self.manifold.check_ambient(vec.len())?;
        Ok(Tangent {
            base: self.clone(),
            vec: project_tangent(self.manifold, &self.coords, vec),
        })
    }
}

/// Subtract the normal component of `vec` at `base` (no-op on flat space).
pub(crate) fn project_tangent(kind: ManifoldKind, base: &[f64], vec: &[f64]) -> Vec<f64> {
    match kind {
        ManifoldKind::Flat { .. } => vec.to_vec(),
        ManifoldKind::Sphere { .. } => {
            let mut out = vec.to_vec();
            axpy(&mut out, -dot(vec, base), base);
            out
        }
    }
}

/// A tangent vector with its base point, in ambient coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Tangent {
    base: Point,
    vec: Vec<f64>,
}

impl Tangent {
    /// Validates the dimension and tangency (`<vec, base> = 0` on the
    /// sphere within `1e-12`).
    pub fn new(base: Point, vec: Vec<f64>) -> Result<Self> {
        base.manifold.check_ambient(vec.len())?;
        if base.manifold.is_sphere() {
            let residual = dot(&vec, &base.coords).abs();
            if residual > CONSTRAINT_TOL * (1.0 + norm(&vec)) {
                return Err(GeomError::TangencyViolated { residual });
            }
        }
        Ok(Tangent { base, vec })
    }

    pub(crate) fn new_unchecked(base: Point, vec: Vec<f64>) -> Self {
        Tangent { base, vec }
    }

    pub fn base(&self) -> &Point {
        &self.base
    }

    pub fn vec(&self) -> &[f64] {
        &self.vec
    }

    pub fn norm(&self) -> f64 {
        norm(&self.vec)
    }

    pub fn manifold(&self) -> ManifoldKind {
        self.base.manifold
    }

    pub fn scaled(&self, s: f64) -> Tangent {
        Tangent {
            base: self.base.clone(),
            vec: scale(&self.vec, s),
        }
    }

    fn same_base(&self, other: &Tangent) -> Result<()> {
        if self.base.manifold != other.base.manifold {
            return Err(GeomError::ManifoldMismatch(
                self.base.manifold,
                other.base.manifold,
            ));
        }
        let gap: f64 = self
            .base
            .coords
            .iter()
            .zip(&other.base.coords)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if gap > 1e-9 {
            return Err(GeomError::BaseMismatch);
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// operations
// ---------------------------------------------------------------------------

/// Exponential map: the endpoint of the geodesic with initial velocity `v`.
///
/// Flat: `x + v`. Sphere: the great circle `cos|v| x + sin|v| v/|v|`,
/// total for every length (a zero vector fixes the point).
pub fn exp_map(v: &Tangent) -> Point {
    let x = v.base.coords();
    match v.manifold() {
        ManifoldKind::Flat { .. } => Point::new_unchecked(v.manifold(), add(x, &v.vec)),
        ManifoldKind::Sphere { .. } => {
            let theta = v.norm();
            let mut out = scale(x, theta.cos());
            axpy(&mut out, sinc(theta), &v.vec);
            // renormalize so constraint drift cannot accumulate over long runs
            let n = norm(&out);
            Point::new_unchecked(v.manifold(), scale(&out, 1.0 / n))
        }
    }
}

/// Logarithm: the minimizing initial velocity `v` at `x` with
/// `exp_x(v) = y` and `|v| = d(x, y)`.
///
/// At the sphere cut locus (`y` antipodal to `x`) the direction is chosen
/// by `policy`; the returned vector still has length pi and reaches `y`.
pub fn log_map(x: &Point, y: &Point, policy: CutLocusPolicy) -> Result<Tangent> {
    if x.manifold != y.manifold {
        return Err(GeomError::ManifoldMismatch(x.manifold, y.manifold));
    }
    match x.manifold {
        ManifoldKind::Flat { .. } => Ok(Tangent {
            base: x.clone(),
            vec: sub(y.coords(), x.coords()),
        }),
        ManifoldKind::Sphere { .. } => {
            let c = dot(x.coords(), y.coords()).clamp(-1.0, 1.0);
            let mut perp = y.coords().to_vec();
            axpy(&mut perp, -c, x.coords());
            let s = norm(&perp); // = sin(theta) up to rounding
            let theta = s.atan2(c);
            if s > ANTIPODAL_EPS {
                Ok(Tangent {
                    base: x.clone(),
                    vec: scale(&perp, theta / s),
                })
            } else if c > 0.0 {
                // y == x up to rounding; perp itself is the best tiny answer
                Ok(Tangent {
                    base: x.clone(),
                    vec: perp,
                })
            } else {
                let dir = cut_locus_direction(x, policy);
                Ok(dir.scaled(std::f64::consts::PI))
            }
        }
    }
}

/// The unit tangent selected by the cut-locus tie-break at `x`.
pub fn cut_locus_direction(x: &Point, policy: CutLocusPolicy) -> Tangent {
    let CutLocusPolicy::FirstAxisProjection = policy;
    let n = x.coords.len();
    for k in 0..n {
        let mut w = vec![0.0; n];
        w[k] = 1.0;
        axpy(&mut w, -x.coords[k], &x.coords);
        let wn = norm(&w);
        if wn >= 1e-8 {
            return Tangent {
                base: x.clone(),
                vec: scale(&w, 1.0 / wn),
            };
        }
    }
    unreachable!("a unit vector cannot be parallel to every ambient axis");
}

/// Parallel transport of `w` along the geodesic `t -> exp(t v)`, landing
/// at `exp_map(v)`.
///
/// On the sphere this rotates the component of `w` lying in the geodesic
/// plane and fixes the orthogonal complement; on flat space the vector is
/// re-based unchanged.
pub fn parallel_transport(v: &Tangent, w: &Tangent) -> Result<Tangent> {
    v.same_base(w)?;
    let target = exp_map(v);
    match v.manifold() {
        ManifoldKind::Flat { .. } => Ok(Tangent {
            base: target,
            vec: w.vec.clone(),
        }),
        ManifoldKind::Sphere { .. } => {
            let theta = v.norm();
            if theta == 0.0 {
                return Ok(Tangent {
                    base: target,
                    vec: w.vec.clone(),
                });
            }
            let dir = scale(&v.vec, 1.0 / theta);
            let a = dot(&w.vec, &dir);
            let mut out = w.vec.clone();
            axpy(&mut out, a * cos_minus_one(theta), &dir);
            axpy(&mut out, -a * theta.sin(), v.base.coords());
            let out = project_tangent(v.manifold(), target.coords(), &out);
            Ok(Tangent { base: target, vec: out })
        }
    }
}

/// Riemannian metric: the ambient inner product restricted to the tangent
/// space.
pub fn metric(v: &Tangent, w: &Tangent) -> Result<f64> {
    v.same_base(w)?;
    Ok(dot(&v.vec, &w.vec))
}

/// Geodesic distance `|log_map(x, y)|`.
pub fn distance(x: &Point, y: &Point) -> Result<f64> {
    if x.manifold != y.manifold {
        return Err(GeomError::ManifoldMismatch(x.manifold, y.manifold));
    }
    match x.manifold {
        ManifoldKind::Flat { .. } => Ok(norm(&sub(y.coords(), x.coords()))),
        ManifoldKind::Sphere { .. } => {
            let c = dot(x.coords(), y.coords()).clamp(-1.0, 1.0);
            let mut perp = y.coords().to_vec();
            axpy(&mut perp, -c, x.coords());
            Ok(norm(&perp).atan2(c))
        }
    }
}

/// Nearest-point projection of raw ambient coordinates onto the manifold
/// (normalization for the sphere). Idempotent.
///
/// Errors on the sphere if `|raw| < 0.5`, where the projection is
/// ambiguous.
pub fn project_to_manifold(raw: &[f64], m: ManifoldKind) -> Result<Point> {
    m.check_ambient(raw.len())?;
    match m {
        ManifoldKind::Flat { .. } => Ok(Point::new_unchecked(m, raw.to_vec())),
        ManifoldKind::Sphere { .. } => {
            let n = norm(raw);
            if n < 0.5 {
                return Err(GeomError::AmbiguousProjection { norm: n });
            }
            Ok(Point::new_unchecked(m, scale(raw, 1.0 / n)))
        }
    }
}
