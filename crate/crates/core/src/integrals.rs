//! Jump-aware Ito and Stratonovich integrals and quadratic variation.
//!
//! Integrands are covector processes above the path, represented through
//! metric duality as tangent vectors (the pairing is the Riemannian
//! metric, exact for the supported embedded geometries). The Ito integral
//! accumulates left-evaluated Riemann sums of connection-rule increments
//! over continuous segments and adds the full pairing `<phi_{s-}, dX_s>`
//! at every jump, so the jump of the integral path at `s` equals that
//! pairing exactly and the continuous part becomes rule-independent as
//! the grid refines.
//!
//! The Stratonovich integral adds half the continuous quadratic variation
//! of the covariant derivative of the integrand. When no derivative is
//! supplied, a central-difference fallback evaluates the dual field along
//! short geodesic probes (step `1e-5`) and projects the ambient derivative
//! back onto the tangent space; the projection absorbs the second-
//! fundamental-form term of the embedding, so the fallback converges to
//! the intrinsic covariant derivative.

use crate::connection::{apply_rule, ConnectionRuleKind};
use crate::error::{GeomError, Result};
use crate::manifold::{self, exp_map, parallel_transport, Point, Tangent};
use crate::path::{DriverJump, DriverPath, RolledPath};

/// Default step of the finite-difference covariant-derivative fallback.
pub const FD_STEP: f64 = 1e-5;

type PointFn<'a, T> = Box<dyn Fn(&Point) -> T + Sync + 'a>;
type CovectorFn<'a> = Box<dyn Fn(usize, &Point) -> Tangent + Sync + 'a>;
type BilinearFn<'a> = Box<dyn Fn(usize, &Point, &Tangent, &Tangent) -> f64 + Sync + 'a>;

/// A smooth scalar field with its ambient gradient; the tangential part of
/// the gradient is the metric dual of `df`.
pub struct ScalarField<'a> {
    eval: PointFn<'a, f64>,
    grad_ambient: PointFn<'a, Vec<f64>>,
}

impl<'a> ScalarField<'a> {
    pub fn new(
        eval: impl Fn(&Point) -> f64 + Sync + 'a,
        grad_ambient: impl Fn(&Point) -> Vec<f64> + Sync + 'a,
    ) -> Self {
        ScalarField {
            eval: Box::new(eval),
            grad_ambient: Box::new(grad_ambient),
        }
    }

    /// The ambient coordinate function `x^k`.
    pub fn coordinate(k: usize, ambient_dim: usize) -> Self {
        ScalarField {
            eval: Box::new(move |p: &Point| p.coords()[k]),
            grad_ambient: Box::new(move |_p: &Point| {
                let mut g = vec![0.0; ambient_dim];
                g[k] = 1.0;
                g
            }),
        }
    }

    pub fn value(&self, x: &Point) -> f64 {
        (self.eval)(x)
    }

    /// Metric dual of `df` at `x`: the ambient gradient projected onto the
    /// tangent space.
    pub fn differential(&self, x: &Point) -> Tangent {
        x.tangent_from_ambient(&(self.grad_ambient)(x))
            .expect("gradient dimension matches ambient dimension")
    }
}

/// A covector process above the path, via metric duality. The evaluator
/// receives the grid index and the evaluation point; left limits are
/// obtained by passing the left-limit point.
pub struct OneFormProcess<'a> {
    eval: CovectorFn<'a>,
    grad: Option<BilinearFn<'a>>,
    fd_step: Option<f64>,
}

impl<'a> OneFormProcess<'a> {
    /// Covector process without derivative data; the finite-difference
    /// fallback is enabled by default.
    pub fn new(eval: impl Fn(usize, &Point) -> Tangent + Sync + 'a) -> Self {
        OneFormProcess {
            eval: Box::new(eval),
            grad: None,
            fd_step: Some(FD_STEP),
        }
    }

    /// Geometric 1-form given by its metric-dual tangent field.
    pub fn from_dual_field(field: impl Fn(&Point) -> Tangent + Sync + 'a) -> Self {
        OneFormProcess::new(move |_i, p| field(p))
    }

    /// The exact differential of a scalar field, `alpha = df`.
    pub fn differential_of(field: &'a ScalarField<'a>) -> Self {
        OneFormProcess::new(move |_i, p| field.differential(p))
    }

    /// Attach the exact covariant derivative `nabla alpha (x)(v, w)`.
    pub fn with_grad(
        mut self,
        grad: impl Fn(usize, &Point, &Tangent, &Tangent) -> f64 + Sync + 'a,
    ) -> Self {
        self.grad = Some(Box::new(grad));
        self
    }

    /// Disable the finite-difference fallback.
    pub fn without_fd_fallback(mut self) -> Self {
        self.fd_step = None;
        self
    }

    pub fn covector_at(&self, i: usize, x: &Point) -> Tangent {
        (self.eval)(i, x)
    }

    /// `nabla alpha (x)(v, w)`: the supplied derivative when present, the
    /// geodesic central-difference fallback otherwise.
    pub fn covariant_derivative(
        &self,
        i: usize,
        x: &Point,
        v: &Tangent,
        w: &Tangent,
    ) -> Result<f64> {
        if let Some(grad) = &self.grad {
            return Ok(grad(i, x, v, w));
        }
        let h = self.fd_step.ok_or_else(|| {
            GeomError::Domain(
                "covariant derivative unavailable: no gradient supplied and the \
                 finite-difference fallback is disabled"
                    .into(),
            )
        })?;
        let speed = v.norm();
        if speed == 0.0 {
            return Ok(0.0);
        }
        let dir = v.scaled(1.0 / speed);
        let plus = (self.eval)(i, &exp_map(&dir.scaled(h)));
        let minus = (self.eval)(i, &exp_map(&dir.scaled(-h)));
        let diff = manifold::scale(&manifold::sub(plus.vec(), minus.vec()), 0.5 / h);
        let derivative = x.tangent_from_ambient(&diff)?;
        Ok(speed * manifold::dot(derivative.vec(), w.vec()))
    }
}

/// A bilinear-form process above the path.
pub struct TwoTensorProcess<'a> {
    eval: BilinearFn<'a>,
}

impl<'a> TwoTensorProcess<'a> {
    pub fn new(eval: impl Fn(usize, &Point, &Tangent, &Tangent) -> f64 + Sync + 'a) -> Self {
        TwoTensorProcess {
            eval: Box::new(eval),
        }
    }

    /// The Riemannian metric as a 2-tensor.
    pub fn metric_tensor() -> Self {
        TwoTensorProcess::new(|_i, _p, v, w| manifold::dot(v.vec(), w.vec()))
    }

    pub fn evaluate(&self, i: usize, x: &Point, v: &Tangent, w: &Tangent) -> f64 {
        (self.eval)(i, x, v, w)
    }
}

fn check_rule(rule: ConnectionRuleKind, path: &RolledPath) -> Result<()> {
    if !rule.supports(path.manifold) {
        return Err(GeomError::RuleManifoldMismatch {
            rule: rule.name(),
            manifold: path.manifold,
        });
    }
    Ok(())
}

/// Shared accumulation loop: `segment(i, start, gamma_i)` yields the
/// continuous contribution of segment `i -> i+1` (left-evaluated, with
/// `gamma_i` the rule increment from the cadlag point at `i` to the left
/// limit at `i+1`); `jump_term(j, left)` is the jump of the integral at
/// index `j`. Returns the cumulative path on the same grid.
fn integrate(
    path: &RolledPath,
    rule: ConnectionRuleKind,
    segment: impl Fn(usize, &Point, &Tangent) -> Result<f64>,
    jump_term: impl Fn(usize, &Point) -> Result<f64>,
) -> Result<DriverPath> {
    check_rule(rule, path)?;
    let n = path.n_points();
    let mut values = vec![0.0; n];
    let mut jumps: Vec<DriverJump> = Vec::with_capacity(path.jumps.len());
    for j in &path.jumps {
        let delta = jump_term(j.index, &path.points[j.index])?;
        jumps.push(DriverJump {
            index: j.index,
            delta: vec![delta],
        });
    }
    let mut start = path.post_point(0);
    for i in 1..n {
        let gamma = apply_rule(rule, &start, &path.points[i])?;
        let contribution = segment(i - 1, &start, &gamma)?;
        let prev_jump = jumps
            .binary_search_by_key(&(i - 1), |j| j.index)
            .ok()
            .map(|pos| jumps[pos].delta[0])
            .unwrap_or(0.0);
        values[i] = values[i - 1] + prev_jump + contribution;
        start = path.post_point(i);
    }
    DriverPath::new(1, path.times.clone(), values, jumps)
}

/// Cumulative Ito integral of `phi` along the path: a one-dimensional
/// cadlag path on the same grid whose jump at `s` is `<phi_{s-}, dX_s>`.
pub fn ito_integral(
    phi: &OneFormProcess,
    path: &RolledPath,
    rule: ConnectionRuleKind,
) -> Result<DriverPath> {
    integrate(
        path,
        rule,
        |i, start, gamma| {
            let cov = phi.covector_at(i, start);
            Ok(manifold::dot(cov.vec(), gamma.vec()))
        },
        |j, left| {
            let jump = path.jump_at(j).unwrap();
            let cov = phi.covector_at(j, left);
            Ok(manifold::dot(cov.vec(), jump.tangent.vec()))
        },
    )
}

/// Quadratic variation of a 2-tensor along the path, decomposed into the
/// continuous part (rule increments over continuous segments only), the
/// jump part (`b(dX, dX)` summed), and their sum.
pub struct QvPaths {
    pub full: DriverPath,
    pub continuous: DriverPath,
    pub jump: DriverPath,
}

pub fn quadratic_variation(
    b: &TwoTensorProcess,
    path: &RolledPath,
    rule: ConnectionRuleKind,
) -> Result<QvPaths> {
    let continuous = integrate(
        path,
        rule,
        |i, start, gamma| Ok(b.evaluate(i, start, gamma, gamma)),
        |_j, _left| Ok(0.0),
    )?;
    let jump = integrate(
        path,
        rule,
        |_i, _s, _g| Ok(0.0),
        |j, left| {
            let jrec = path.jump_at(j).unwrap();
            Ok(b.evaluate(j, left, &jrec.tangent, &jrec.tangent))
        },
    )?;
    let full = crate::path::superpose(&continuous, &jump)?;
    Ok(QvPaths {
        full,
        continuous,
        jump,
    })
}

/// Stratonovich integral: the Ito integral plus half the continuous
/// quadratic variation of `nabla alpha`. Jump contributions coincide with
/// the Ito integral's.
pub fn stratonovich_integral(
    alpha: &OneFormProcess,
    path: &RolledPath,
    rule: ConnectionRuleKind,
) -> Result<DriverPath> {
    integrate(
        path,
        rule,
        |i, start, gamma| {
            let cov = alpha.covector_at(i, start);
            let first = manifold::dot(cov.vec(), gamma.vec());
            let second = alpha.covariant_derivative(i, start, gamma, gamma)?;
            Ok(first + 0.5 * second)
        },
        |j, left| {
            let jump = path.jump_at(j).unwrap();
            let cov = alpha.covector_at(j, left);
            Ok(manifold::dot(cov.vec(), jump.tangent.vec()))
        },
    )
}

/// Midpoint Riemann sums for the Stratonovich integral: the integrand is
/// evaluated at the geodesic midpoint of each continuous segment and
/// paired with the half-transported increment; jumps contribute the usual
/// left pairings. An independent cross-check of the derivative-based
/// definition.
pub fn stratonovich_midpoint_sum(
    alpha: &OneFormProcess,
    path: &RolledPath,
    rule: ConnectionRuleKind,
) -> Result<f64> {
    check_rule(rule, path)?;
    let mut total = 0.0;
    let mut start = path.post_point(0);
    for i in 1..path.n_points() {
        let gamma = apply_rule(rule, &start, &path.points[i])?;
        if gamma.norm() > 0.0 {
            let half = gamma.scaled(0.5);
            let mid = exp_map(&half);
            let carried = parallel_transport(&half, &gamma)?;
            let cov = alpha.covector_at(i - 1, &mid);
            total += manifold::dot(cov.vec(), carried.vec());
        }
        start = path.post_point(i);
    }
    for j in &path.jumps {
        let cov = alpha.covector_at(j.index, &path.points[j.index]);
        total += manifold::dot(cov.vec(), j.tangent.vec());
    }
    Ok(total)
}

// ---------------------------------------------------------------------------
// identity checks
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct RuleIndependencePair {
    pub rule_a: &'static str,
    pub rule_b: &'static str,
    /// Sup gap between the cumulative integrals on the path's own grid.
    pub diff_fine: f64,
    /// Same gap on the half-resolution coarsening of the path.
    pub diff_coarse: f64,
    /// `diff_coarse / diff_fine`; around 2 for first-order-agreeing rules.
    pub ratio: f64,
}

/// Compare Ito integrals under different rules on the same path and on its
/// half-resolution coarsening; rule dependence must shrink with the grid.
pub fn rule_independence_check(
    phi: &OneFormProcess,
    path: &RolledPath,
    rules: &[ConnectionRuleKind],
) -> Result<Vec<RuleIndependencePair>> {
    if rules.len() < 2 {
        return Err(GeomError::Domain("need at least two rules".into()));
    }
    let coarse = path.coarsened(2);
    let mut pairs = Vec::new();
    for (ai, rule_a) in rules.iter().enumerate() {
        for rule_b in &rules[ai + 1..] {
            let fine_a = ito_integral(phi, path, *rule_a)?;
            let fine_b = ito_integral(phi, path, *rule_b)?;
            let coarse_a = ito_integral(phi, &coarse, *rule_a)?;
            let coarse_b = ito_integral(phi, &coarse, *rule_b)?;
            let diff_fine = scalar_sup_gap(&fine_a, &fine_b);
            let diff_coarse = scalar_sup_gap(&coarse_a, &coarse_b);
            pairs.push(RuleIndependencePair {
                rule_a: rule_a.name(),
                rule_b: rule_b.name(),
                diff_fine,
                diff_coarse,
                ratio: diff_coarse / diff_fine.max(f64::MIN_POSITIVE),
            });
        }
    }
    Ok(pairs)
}

fn scalar_sup_gap(a: &DriverPath, b: &DriverPath) -> f64 {
    debug_assert_eq!(a.n_points(), b.n_points());
    (0..a.n_points())
        .map(|i| (a.value(i)[0] - b.value(i)[0]).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone)]
pub struct ProductRuleReport {
    pub lhs_terminal: f64,
    pub rhs_terminal: f64,
    pub diff: f64,
}

/// Product identity: the Stratonovich integral of `f alpha` along the path
/// equals the scalar Stratonovich integral of `f(X_-)` against
/// `Z = int alpha o dX`.
pub fn product_rule_check(
    f: &ScalarField,
    alpha: &OneFormProcess,
    path: &RolledPath,
    rule: ConnectionRuleKind,
) -> Result<ProductRuleReport> {
    // nabla(f alpha)(v, w) = <df, v><alpha, w> + f nabla alpha(v, w)
    let f_alpha = OneFormProcess::new(|i, p| {
        let cov = alpha.covector_at(i, p);
        cov.scaled(f.value(p))
    })
    .with_grad(|i, p, v, w| {
        let df_v = manifold::dot(f.differential(p).vec(), v.vec());
        let alpha_w = manifold::dot(alpha.covector_at(i, p).vec(), w.vec());
        let nabla = alpha
            .covariant_derivative(i, p, v, w)
            .expect("inner covariant derivative");
        df_v * alpha_w + f.value(p) * nabla
    });
    let lhs = stratonovich_integral(&f_alpha, path, rule)?;

    // scalar Stratonovich of Y = f(X_-) against Z: left sums plus half the
    // continuous cross-variation, jumps left-paired
    let z = stratonovich_integral(alpha, path, rule)?;
    let mut rhs = 0.0;
    for i in 1..path.n_points() {
        let start = path.post_point(i - 1);
        let y_start = f.value(&start);
        let dz = z.continuous_increment(i - 1)[0];
        let dy = f.value(&path.points[i]) - y_start;
        rhs += y_start * dz + 0.5 * dy * dz;
    }
    for j in &path.jumps {
        let y_minus = f.value(&path.points[j.index]);
        let dz = z.jump_at(j.index).expect("aligned jump").delta[0];
        rhs += y_minus * dz;
    }

    let lhs_terminal = lhs.terminal_value()[0];
    Ok(ProductRuleReport {
        lhs_terminal,
        rhs_terminal: rhs,
        diff: (lhs_terminal - rhs).abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::Frame;
    use crate::manifold::ManifoldKind;
    use crate::path::{
        gen_brownian, gen_compound_poisson, superpose, uniform_grid, JumpLaw, RngConfig,
    };
    use crate::rolling::{develop, SchemeConfig};

    fn sphere2() -> ManifoldKind {
        ManifoldKind::sphere(2)
    }

    fn north() -> Point {
        Point::new(sphere2(), vec![0.0, 0.0, 1.0]).unwrap()
    }

    fn sphere_path(seed: u64, steps: usize, rate: f64) -> RolledPath {
        let grid = uniform_grid(1.0, steps);
        let mut w = gen_brownian(&grid, 2, RngConfig::new(seed, 0));
        if rate > 0.0 {
            let p = gen_compound_poisson(
                &grid,
                2,
                rate,
                &JumpLaw::UniformBall { radius: 0.9 },
                RngConfig::new(seed, 1),
            );
            w = superpose(&w, &p).unwrap();
        }
        let u0 = Frame::standard_at(&north()).unwrap();
        develop(&w, &north(), &u0, &SchemeConfig::default()).unwrap()
    }

    fn flat_path(seed: u64, steps: usize, rate: f64, dim: usize) -> RolledPath {
        let m = ManifoldKind::flat(dim);
        let grid = uniform_grid(1.0, steps);
        let mut w = gen_brownian(&grid, dim, RngConfig::new(seed, 0));
        if rate > 0.0 {
            let p = gen_compound_poisson(
                &grid,
                dim,
                rate,
                &JumpLaw::UniformBall { radius: 1.0 },
                RngConfig::new(seed, 1),
            );
            w = superpose(&w, &p).unwrap();
        }
        let x0 = Point::new(m, vec![0.0; dim]).unwrap();
        let u0 = Frame::standard_at(&x0).unwrap();
        develop(&w, &x0, &u0, &SchemeConfig::default()).unwrap()
    }

    /// `alpha = dz` on the sphere with its exact covariant derivative,
    /// `Hess z = -z g`.
    fn height_form<'a>(field: &'a ScalarField<'a>) -> OneFormProcess<'a> {
        OneFormProcess::differential_of(field)
            .with_grad(|_i, p, v, w| -p.coords()[2] * manifold::dot(v.vec(), w.vec()))
    }

    #[test]
    fn flat_constant_form_telescopes() {
        let path = flat_path(3, 300, 4.0, 2);
        let phi = OneFormProcess::from_dual_field(|p: &Point| {
            p.tangent_from_ambient(&[1.0, 0.0]).unwrap()
        });
        let j = ito_integral(&phi, &path, ConnectionRuleKind::EuclideanDiff).unwrap();
        let expect = path.terminal_point().coords()[0] - path.points[0].coords()[0];
        assert!((j.terminal_value()[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn flat_left_evaluated_sums_match_direct_oracle() {
        let path = flat_path(5, 400, 3.0, 1);
        let phi = OneFormProcess::new(|_i, p: &Point| {
            let x = p.coords()[0];
            p.tangent_from_ambient(&[x]).unwrap()
        });
        let j = ito_integral(&phi, &path, ConnectionRuleKind::EuclideanDiff).unwrap();
        let mut oracle = 0.0;
        for i in 1..path.n_points() {
            let start = path.post_point(i - 1).coords()[0];
            oracle += start * (path.points[i].coords()[0] - start);
        }
        for jr in &path.jumps {
            oracle += path.points[jr.index].coords()[0] * jr.tangent.vec()[0];
        }
        assert!((j.terminal_value()[0] - oracle).abs() < 1e-12);
    }

    #[test]
    fn ito_jumps_are_left_pairings() {
        let path = sphere_path(7, 200, 5.0);
        let field = ScalarField::coordinate(2, 3);
        let phi = height_form(&field);
        let j = ito_integral(&phi, &path, ConnectionRuleKind::geodesic()).unwrap();
        assert_eq!(j.jumps().len(), path.jumps.len());
        for jr in &path.jumps {
            let cov = phi.covector_at(jr.index, &path.points[jr.index]);
            let expect = manifold::dot(cov.vec(), jr.tangent.vec());
            let got = j.jump_at(jr.index).unwrap().delta[0];
            assert!((got - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn ito_formula_cross_oracle_on_sphere() {
        // int df(X_-) dX = f(X_T) - f(X_0) - (1/2) int Hess f d[X,X]^c
        //                  - sum over jumps of (f(X_s) - f(X_{s-}) - <df, dX_s>)
        let path = sphere_path(11, 1000, 4.0);
        let field = ScalarField::coordinate(2, 3);
        let phi = height_form(&field);
        let rule = ConnectionRuleKind::geodesic();
        let j = ito_integral(&phi, &path, rule).unwrap();

        let hess = TwoTensorProcess::new(|_i, p: &Point, v: &Tangent, w: &Tangent| {
            -p.coords()[2] * manifold::dot(v.vec(), w.vec())
        });
        let qv = quadratic_variation(&hess, &path, rule).unwrap();
        let mut jump_correction = 0.0;
        for jr in &path.jumps {
            let df = field.differential(&path.points[jr.index]);
            jump_correction += field.value(&jr.post) - field.value(&path.points[jr.index])
                - manifold::dot(df.vec(), jr.tangent.vec());
        }
        let rhs = field.value(&path.terminal_point()) - field.value(&path.points[0])
            - 0.5 * qv.continuous.terminal_value()[0]
            - jump_correction;
        let residual = (j.terminal_value()[0] - rhs).abs();
        assert!(residual < 0.02, "Ito formula residual {residual}");
    }

    #[test]
    fn qv_flat_brownian_matches_realized() {
        let grid = uniform_grid(1.0, 500);
        let w = gen_brownian(&grid, 1, RngConfig::new(13, 0));
        let m = ManifoldKind::flat(1);
        let x0 = Point::new(m, vec![0.0]).unwrap();
        let u0 = Frame::standard_at(&x0).unwrap();
        let path = develop(&w, &x0, &u0, &SchemeConfig::default()).unwrap();
        let b = TwoTensorProcess::metric_tensor();
        let qv = quadratic_variation(&b, &path, ConnectionRuleKind::EuclideanDiff).unwrap();
        assert!((qv.full.terminal_value()[0] - w.realized_qv()).abs() < 1e-12);
        // realized QV of Brownian motion over [0,1] concentrates near 1
        assert!((qv.full.terminal_value()[0] - 1.0).abs() < 0.3);
    }

    #[test]
    fn qv_zero_tensor_vanishes() {
        let path = sphere_path(17, 100, 3.0);
        let b = TwoTensorProcess::new(|_, _, _, _| 0.0);
        let qv = quadratic_variation(&b, &path, ConnectionRuleKind::geodesic()).unwrap();
        assert_eq!(qv.full.terminal_value()[0], 0.0);
    }

    #[test]
    fn metric_qv_matches_driver_isometry() {
        let grid = uniform_grid(1.0, 1000);
        let w = superpose(
            &gen_brownian(&grid, 2, RngConfig::new(19, 0)),
            &gen_compound_poisson(
                &grid,
                2,
                2.0,
                &JumpLaw::UniformBall { radius: 1.0 },
                RngConfig::new(19, 1),
            ),
        )
        .unwrap();
        let u0 = Frame::standard_at(&north()).unwrap();
        let path = develop(&w, &north(), &u0, &SchemeConfig::default()).unwrap();
        let b = TwoTensorProcess::metric_tensor();
        let qv = quadratic_variation(&b, &path, ConnectionRuleKind::AmbientProjection).unwrap();
        let realized = w.realized_qv();
        let rel = (qv.full.terminal_value()[0] - realized).abs() / realized;
        assert!(rel < 1e-2, "relative QV gap {rel}");
    }

    #[test]
    fn stratonovich_flat_one_dim_calculus() {
        // alpha = x dx: int X o dX = (X_T^2 - X_0^2)/2
        //   - sum over jumps of ((X_s^2 - X_{s-}^2)/2 - X_{s-} dX_s)
        let path = flat_path(23, 2000, 3.0, 1);
        let alpha = OneFormProcess::new(|_i, p: &Point| {
            let x = p.coords()[0];
            p.tangent_from_ambient(&[x]).unwrap()
        })
        .with_grad(|_i, _p, v: &Tangent, w: &Tangent| v.vec()[0] * w.vec()[0]);
        let j = stratonovich_integral(&alpha, &path, ConnectionRuleKind::EuclideanDiff).unwrap();
        let xt = path.terminal_point().coords()[0];
        let mut rhs = 0.5 * xt * xt;
        for jr in &path.jumps {
            let pre = path.points[jr.index].coords()[0];
            let post = jr.post.coords()[0];
            rhs -= 0.5 * (post * post - pre * pre) - pre * jr.tangent.vec()[0];
        }
        let residual = (j.terminal_value()[0] - rhs).abs();
        assert!(residual < 0.01, "Stratonovich calculus residual {residual}");
    }

    #[test]
    fn stratonovich_chain_rule_on_sphere() {
        // alpha = df: int df o dX = f(X_T) - f(X_0)
        //   - sum over jumps of (f(X_s) - f(X_{s-}) - <df, dX_s>)
        let path = sphere_path(29, 2000, 3.0);
        let field = ScalarField::coordinate(2, 3);
        let alpha = height_form(&field);
        let j = stratonovich_integral(&alpha, &path, ConnectionRuleKind::geodesic()).unwrap();
        let mut rhs = field.value(&path.terminal_point()) - field.value(&path.points[0]);
        for jr in &path.jumps {
            let df = field.differential(&path.points[jr.index]);
            rhs -= field.value(&jr.post) - field.value(&path.points[jr.index])
                - manifold::dot(df.vec(), jr.tangent.vec());
        }
        let residual = (j.terminal_value()[0] - rhs).abs();
        assert!(residual < 0.02, "chain rule residual {residual}");
    }

    #[test]
    fn stratonovich_matches_midpoint_sums() {
        let path = sphere_path(31, 2000, 2.0);
        let field = ScalarField::coordinate(2, 3);
        let alpha = height_form(&field);
        let rule = ConnectionRuleKind::geodesic();
        let strat = stratonovich_integral(&alpha, &path, rule).unwrap();
        let midpoint = stratonovich_midpoint_sum(&alpha, &path, rule).unwrap();
        let gap = (strat.terminal_value()[0] - midpoint).abs();
        assert!(gap < 0.02, "midpoint cross-check gap {gap}");
    }

    #[test]
    fn fd_fallback_approximates_exact_derivative() {
        let path = sphere_path(37, 300, 2.0);
        let field = ScalarField::coordinate(2, 3);
        let exact = height_form(&field);
        let fallback = OneFormProcess::differential_of(&field);
        let rule = ConnectionRuleKind::geodesic();
        let a = stratonovich_integral(&exact, &path, rule).unwrap();
        let b = stratonovich_integral(&fallback, &path, rule).unwrap();
        assert!((a.terminal_value()[0] - b.terminal_value()[0]).abs() < 1e-6);
    }

    #[test]
    fn missing_derivative_without_fallback_errors() {
        let path = sphere_path(41, 50, 0.0);
        let field = ScalarField::coordinate(2, 3);
        let alpha = OneFormProcess::differential_of(&field).without_fd_fallback();
        assert!(matches!(
            stratonovich_integral(&alpha, &path, ConnectionRuleKind::geodesic()),
            Err(GeomError::Domain(_))
        ));
    }

    #[test]
    fn rule_independence_flat_rules_coincide() {
        let path = flat_path(43, 200, 3.0, 2);
        let phi = OneFormProcess::from_dual_field(|p: &Point| {
            p.tangent_from_ambient(&[p.coords()[1], -p.coords()[0]])
                .unwrap()
        });
        let pairs = rule_independence_check(
            &phi,
            &path,
            &[
                ConnectionRuleKind::EuclideanDiff,
                ConnectionRuleKind::geodesic(),
            ],
        )
        .unwrap();
        assert!(pairs[0].diff_fine < 1e-15);
    }

    #[test]
    fn rule_dependence_shrinks_on_sphere() {
        let path = sphere_path(47, 1600, 3.0);
        let field = ScalarField::coordinate(2, 3);
        let phi = height_form(&field);
        let pairs = rule_independence_check(
            &phi,
            &path,
            &[
                ConnectionRuleKind::AmbientProjection,
                ConnectionRuleKind::geodesic(),
            ],
        )
        .unwrap();
        let pair = &pairs[0];
        assert!(
            pair.ratio >= 1.5,
            "rule gap ratio {} (fine {:.3e}, coarse {:.3e})",
            pair.ratio,
            pair.diff_fine,
            pair.diff_coarse
        );
        // jump contributions identical across rules
        let a = ito_integral(&phi, &path, ConnectionRuleKind::AmbientProjection).unwrap();
        let b = ito_integral(&phi, &path, ConnectionRuleKind::geodesic()).unwrap();
        for (ja, jb) in a.jumps().iter().zip(b.jumps()) {
            assert_eq!(ja.index, jb.index);
            assert_eq!(ja.delta, jb.delta);
        }
    }

    #[test]
    fn qv_polarization_is_symmetric() {
        let path = sphere_path(53, 400, 4.0);
        let field_z = ScalarField::coordinate(2, 3);
        let field_x = ScalarField::coordinate(0, 3);
        let rule = ConnectionRuleKind::geodesic();

        let phi_tensor_psi = TwoTensorProcess::new(|_i, p, v, w| {
            manifold::dot(field_z.differential(p).vec(), v.vec())
                * manifold::dot(field_x.differential(p).vec(), w.vec())
        });
        let psi_tensor_phi = TwoTensorProcess::new(|_i, p, v, w| {
            manifold::dot(field_x.differential(p).vec(), v.vec())
                * manifold::dot(field_z.differential(p).vec(), w.vec())
        });
        let a = quadratic_variation(&phi_tensor_psi, &path, rule).unwrap();
        let b = quadratic_variation(&psi_tensor_phi, &path, rule).unwrap();
        let gap = (a.full.terminal_value()[0] - b.full.terminal_value()[0]).abs();
        assert!(gap < 1e-12, "cross-QV asymmetry {gap}");

        // polarization from diagonal squares reproduces the cross-QV
        let q_sum = TwoTensorProcess::new(|_i, p, v, w| {
            let s_v = manifold::dot(field_z.differential(p).vec(), v.vec())
                + manifold::dot(field_x.differential(p).vec(), v.vec());
            let s_w = manifold::dot(field_z.differential(p).vec(), w.vec())
                + manifold::dot(field_x.differential(p).vec(), w.vec());
            s_v * s_w
        });
        let q_phi = TwoTensorProcess::new(|_i, p, v, w| {
            manifold::dot(field_z.differential(p).vec(), v.vec())
                * manifold::dot(field_z.differential(p).vec(), w.vec())
        });
        let q_psi = TwoTensorProcess::new(|_i, p, v, w| {
            manifold::dot(field_x.differential(p).vec(), v.vec())
                * manifold::dot(field_x.differential(p).vec(), w.vec())
        });
        let qs = quadratic_variation(&q_sum, &path, rule).unwrap();
        let qp = quadratic_variation(&q_phi, &path, rule).unwrap();
        let qq = quadratic_variation(&q_psi, &path, rule).unwrap();
        let polarized = 0.5
            * (qs.full.terminal_value()[0]
                - qp.full.terminal_value()[0]
                - qq.full.terminal_value()[0]);
        let gap = (polarized - a.full.terminal_value()[0]).abs();
        assert!(gap < 1e-12, "polarization gap {gap}");
    }

    #[test]
    fn qv_of_integral_path_matches_tensor_square() {
        let path = sphere_path(59, 800, 3.0);
        let field = ScalarField::coordinate(2, 3);
        let phi = height_form(&field);
        let rule = ConnectionRuleKind::geodesic();
        let j = ito_integral(&phi, &path, rule).unwrap();
        let lhs = j.realized_qv();
        let square = TwoTensorProcess::new(|i, p, v, w| {
            let cov = phi.covector_at(i, p);
            manifold::dot(cov.vec(), v.vec()) * manifold::dot(cov.vec(), w.vec())
        });
        let rhs = quadratic_variation(&square, &path, rule)
            .unwrap()
            .full
            .terminal_value()[0];
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn product_rule_examples() {
        let path = sphere_path(61, 1500, 2.0);
        let field = ScalarField::coordinate(2, 3);
        let alpha = height_form(&field);
        let rule = ConnectionRuleKind::geodesic();

        let one = ScalarField::new(|_| 1.0, |_| vec![0.0, 0.0, 0.0]);
        let rep = product_rule_check(&one, &alpha, &path, rule).unwrap();
        let z = stratonovich_integral(&alpha, &path, rule).unwrap();
        assert!((rep.lhs_terminal - z.terminal_value()[0]).abs() < 1e-12);

        let zero = ScalarField::new(|_| 0.0, |_| vec![0.0, 0.0, 0.0]);
        let rep = product_rule_check(&zero, &alpha, &path, rule).unwrap();
        assert_eq!(rep.lhs_terminal, 0.0);
        assert!(rep.diff < 1e-15);

        let rep = product_rule_check(&field, &alpha, &path, rule).unwrap();
        assert!(rep.diff < 0.02, "product rule gap {}", rep.diff);
    }

    #[test]
    fn coordinate_patch_identity() {
        // flat: the chart is the identity, so the manifold integral equals
        // the component-wise scalar integral computed by the same sums
        let path = flat_path(67, 300, 3.0, 2);
        let alpha = OneFormProcess::new(|_i, p: &Point| {
            p.tangent_from_ambient(&[p.coords()[1], 0.0]).unwrap()
        })
        .with_grad(|_i, _p, v: &Tangent, w: &Tangent| v.vec()[1] * w.vec()[0]);
        let lhs = stratonovich_integral(&alpha, &path, ConnectionRuleKind::EuclideanDiff)
            .unwrap()
            .terminal_value()[0];
        let mut rhs = 0.0;
        for i in 1..path.n_points() {
            let start = path.post_point(i - 1);
            let a_start = start.coords()[1];
            let dx1 = path.points[i].coords()[0] - start.coords()[0];
            let da = path.points[i].coords()[1] - start.coords()[1];
            rhs += a_start * dx1 + 0.5 * da * dx1;
        }
        for jr in &path.jumps {
            rhs += path.points[jr.index].coords()[1] * jr.tangent.vec()[0];
        }
        assert!((lhs - rhs).abs() < 1e-12, "flat chart identity gap");

        // sphere: hemisphere chart (x1, x2); the continuous path stays in
        // the chart for this seed and horizon
        let grid = uniform_grid(0.25, 2000);
        let w = gen_brownian(&grid, 2, RngConfig::new(71, 0));
        let u0 = Frame::standard_at(&north()).unwrap();
        let spath = develop(&w, &north(), &u0, &SchemeConfig::default()).unwrap();
        assert!(
            spath.points.iter().all(|p| p.coords()[2] > 0.2),
            "path left the chart; pick another seed"
        );
        let alpha = OneFormProcess::from_dual_field(|p: &Point| {
            // alpha = x^2 dx^1 restricted to the sphere
            p.tangent_from_ambient(&[p.coords()[1], 0.0, 0.0]).unwrap()
        });
        let lhs = stratonovich_integral(&alpha, &spath, ConnectionRuleKind::geodesic())
            .unwrap()
            .terminal_value()[0];
        let mut rhs = 0.0;
        for i in 1..spath.n_points() {
            let start = spath.post_point(i - 1);
            let end = &spath.points[i];
            let a_mid = 0.5 * (start.coords()[1] + end.coords()[1]);
            rhs += a_mid * (end.coords()[0] - start.coords()[0]);
        }
        let gap = (lhs - rhs).abs();
        assert!(gap < 5e-3, "hemisphere chart identity gap {gap}");
    }

    #[test]
    fn integral_paths_live_on_the_grid() {
        let path = sphere_path(73, 100, 4.0);
        let field = ScalarField::coordinate(2, 3);
        let phi = height_form(&field);
        let j = ito_integral(&phi, &path, ConnectionRuleKind::geodesic()).unwrap();
        assert_eq!(j.times(), &path.times[..]);
        assert_eq!(j.value(0), &[0.0]);
    }
}
