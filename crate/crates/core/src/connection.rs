//! Connection rules: maps `(x, y) -> T_xM` that read chords as tangents.
//!
//! A connection rule vanishes on the diagonal, takes values in the tangent
//! space at its first argument and has identity differential there. Three
//! concrete rules are provided:
//!
//! * `EuclideanDiff` - `y - x`, flat space only;
//! * `AmbientProjection` - the tangential component of the ambient chord;
//! * `GeodesicLog` - the initial velocity of the minimal geodesic.
//!
//! The geodesic rule lands exactly back on `y` under the exponential map;
//! the other rules agree with it to first order, which is what makes the
//! Ito sums in [`crate::integrals`] rule-independent in the limit.

use crate::error::{GeomError, Result};
use crate::manifold::{
    self, distance, exp_map, log_map, sinc, CutLocusPolicy, ManifoldKind, Point, Tangent,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConnectionRuleKind {
    /// `y - x`; only valid on flat space.
    EuclideanDiff,
    /// Orthogonal projection of `y - x` onto the tangent space at `x`.
    AmbientProjection,
    /// `log_x(y)`, the minimal-geodesic initial velocity.
    GeodesicLog(CutLocusPolicy),
}

impl ConnectionRuleKind {
    pub fn geodesic() -> Self {
        ConnectionRuleKind::GeodesicLog(CutLocusPolicy::default())
    }

    pub fn name(&self) -> &'static str {
        match self {
            ConnectionRuleKind::EuclideanDiff => "euclidean-diff",
            ConnectionRuleKind::AmbientProjection => "ambient-projection",
            ConnectionRuleKind::GeodesicLog(_) => "geodesic-log",
        }
    }

    /// Whether the rule is defined on the given manifold.
    pub fn supports(&self, m: ManifoldKind) -> bool {
        match self {
            ConnectionRuleKind::EuclideanDiff => !m.is_sphere(),
            _ => true,
        }
    }
}

impl std::fmt::Display for ConnectionRuleKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Evaluate the rule: a tangent at `x` pointing toward `y`.
pub fn apply_rule(rule: ConnectionRuleKind, x: &Point, y: &Point) -> Result<Tangent> {
    if x.manifold() != y.manifold() {
        return Err(GeomError::ManifoldMismatch(x.manifold(), y.manifold()));
    }
    if !rule.supports(x.manifold()) {
        return Err(GeomError::RuleManifoldMismatch {
            rule: rule.name(),
            manifold: x.manifold(),
        });
    }
    match rule {
        ConnectionRuleKind::EuclideanDiff => {
            let chord = manifold::sub(y.coords(), x.coords());
            x.tangent_from_ambient(&chord)
        }
        ConnectionRuleKind::AmbientProjection => {
            let chord = manifold::sub(y.coords(), x.coords());
            // tangent_from_ambient projects onto T_xM
            x.tangent_from_ambient(&chord)
        }
        ConnectionRuleKind::GeodesicLog(policy) => log_map(x, y, policy),
    }
}

/// The scalar `sin(theta) / theta` relating the projection rule's jump
/// vector to the geodesic jump vector on the sphere.
///
/// Errors for `theta >= pi`, where the chord projection no longer
/// determines the geodesic.
pub fn projection_vs_geodesic_angle(delta_w_norm: f64) -> Result<f64> {
    if !(0.0..std::f64::consts::PI).contains(&delta_w_norm) {
        return Err(GeomError::Domain(format!(
            "projection/geodesic factor needs 0 <= theta < pi, got {delta_w_norm}"
        )));
    }
    Ok(sinc(delta_w_norm))
}

/// Finite-difference step for the axiom (iii) check.
pub const AXIOM_FD_STEP: f64 = 1e-6;
/// Tolerance for all three axiom checks.
pub const AXIOM_TOL: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub enum RuleAxiomViolation {
    /// `gamma(x, y)` left the tangent space at `x`.
    NotTangent { sample: usize, residual: f64 },
    /// `gamma(x, x)` did not vanish.
    NonzeroAtDiagonal { sample: usize, magnitude: f64 },
    /// The differential of `gamma(x, .)` at `x` differs from the identity.
    DifferentialNotIdentity { sample: usize, deviation: f64 },
}

#[derive(Debug, Clone, Default)]
pub struct RuleAxiomReport {
    pub violations: Vec<RuleAxiomViolation>,
    pub max_tangency_residual: f64,
    pub max_diagonal_magnitude: f64,
    pub max_differential_deviation: f64,
}

impl RuleAxiomReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Numerically check the three connection-rule axioms on sample pairs:
/// tangency of the value, vanishing on the diagonal, and identity
/// differential at the diagonal by central differences along geodesic
/// probes (step `1e-6`, tolerance `1e-5`).
pub fn check_rule_axioms(
    rule: ConnectionRuleKind,
    samples: &[(Point, Point)],
) -> Result<RuleAxiomReport> {
    let mut report = RuleAxiomReport::default();
    for (idx, (x, y)) in samples.iter().enumerate() {
        let g = apply_rule(rule, x, y)?;

        // (i) tangency
        let residual = match x.manifold() {
            ManifoldKind::Flat { .. } => 0.0,
            ManifoldKind::Sphere { .. } => manifold::dot(g.vec(), x.coords()).abs(),
        };
        report.max_tangency_residual = report.max_tangency_residual.max(residual);
        if residual > AXIOM_TOL {
            report
                .violations
                .push(RuleAxiomViolation::NotTangent { sample: idx, residual });
        }

        // (ii) gamma(x, x) = 0
        let at_diag = apply_rule(rule, x, x)?.norm();
        report.max_diagonal_magnitude = report.max_diagonal_magnitude.max(at_diag);
        if at_diag > AXIOM_TOL {
            report.violations.push(RuleAxiomViolation::NonzeroAtDiagonal {
                sample: idx,
                magnitude: at_diag,
            });
        }

        // (iii) central differences of gamma(x, exp_x(h e_k)) against e_k
        let basis = crate::frame::Frame::standard_at(x)?;
        let mut deviation: f64 = 0.0;
        for k in 0..x.manifold().dim() {
            let e_k = basis.column(k);
            let y_plus = exp_map(&e_k.scaled(AXIOM_FD_STEP));
            let y_minus = exp_map(&e_k.scaled(-AXIOM_FD_STEP));
            let g_plus = apply_rule(rule, x, &y_plus)?;
            let g_minus = apply_rule(rule, x, &y_minus)?;
            let diff = manifold::sub(g_plus.vec(), g_minus.vec());
            let derivative = manifold::scale(&diff, 0.5 / AXIOM_FD_STEP);
            let dev = manifold::sub(&derivative, e_k.vec())
                .iter()
                .map(|t| t.abs())
                .fold(0.0, f64::max);
            deviation = deviation.max(dev);
        }
        report.max_differential_deviation = report.max_differential_deviation.max(deviation);
        if deviation > AXIOM_TOL {
            report
                .violations
                .push(RuleAxiomViolation::DifferentialNotIdentity {
                    sample: idx,
                    deviation,
                });
        }
    }
    Ok(report)
}

/// Sanity bound used by the rule-comparison property tests: any two rules
/// agree to first order, `|g1 - g2| <= C d(x,y)^2`.
pub fn rule_pair_gap(
    rule_a: ConnectionRuleKind,
    rule_b: ConnectionRuleKind,
    x: &Point,
    y: &Point,
) -> Result<(f64, f64)> {
    let a = apply_rule(rule_a, x, y)?;
    let b = apply_rule(rule_b, x, y)?;
    let gap = manifold::norm(&manifold::sub(a.vec(), b.vec()));
    Ok((gap, distance(x, y)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use std::f64::consts::FRAC_PI_2;

    fn sphere2() -> ManifoldKind {
        ManifoldKind::sphere(2)
    }

    fn north() -> Point {
        Point::new(sphere2(), vec![0.0, 0.0, 1.0]).unwrap()
    }

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    fn random_unit(rng: &mut rand_chacha::ChaCha8Rng) -> Vec<f64> {
        loop {
            let v: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let n = crate::manifold::norm(&v);
            if n > 0.5 {
                return crate::manifold::scale(&v, 1.0 / n);
            }
        }
    }

    fn random_sphere_pairs(seed: u64, count: usize, max_dist: f64) -> Vec<(Point, Point)> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let x = Point::new(sphere2(), random_unit(&mut rng)).unwrap();
                let dir: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
                let v = x.tangent_from_ambient(&dir).unwrap();
                let len = rng.random_range(0.0..max_dist);
                let v = v.scaled(len / v.norm().max(1e-12));
                (x.clone(), exp_map(&v))
            })
            .collect()
    }

    #[test]
    fn euclidean_diff_is_chord() {
        let m = ManifoldKind::flat(2);
        let x = Point::new(m, vec![1.0, 0.0]).unwrap();
        let y = Point::new(m, vec![0.0, 1.0]).unwrap();
        let g = apply_rule(ConnectionRuleKind::EuclideanDiff, &x, &y).unwrap();
        assert_eq!(g.vec(), &[-1.0, 1.0]);
    }

    #[test]
    fn euclidean_diff_rejected_on_sphere() {
        let x = north();
        let y = Point::new(sphere2(), vec![1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(
            apply_rule(ConnectionRuleKind::EuclideanDiff, &x, &y),
            Err(GeomError::RuleManifoldMismatch { .. })
        ));
    }

    #[test]
    fn projection_rule_drops_normal_component() {
        let x = north();
        let y = Point::new(sphere2(), vec![1.0, 0.0, 0.0]).unwrap();
        let g = apply_rule(ConnectionRuleKind::AmbientProjection, &x, &y).unwrap();
        assert!(max_abs_diff(g.vec(), &[1.0, 0.0, 0.0]) < 1e-15);
    }

    #[test]
    fn geodesic_rule_equals_log() {
        let x = north();
        let y = Point::new(sphere2(), vec![1.0, 0.0, 0.0]).unwrap();
        let g = apply_rule(ConnectionRuleKind::geodesic(), &x, &y).unwrap();
        assert!(max_abs_diff(g.vec(), &[FRAC_PI_2, 0.0, 0.0]) < 1e-15);
    }

    #[test]
    fn geodesic_rule_minimality() {
        for (x, y) in random_sphere_pairs(7, 64, 3.0) {
            let g = apply_rule(ConnectionRuleKind::geodesic(), &x, &y).unwrap();
            assert!(max_abs_diff(exp_map(&g).coords(), y.coords()) < 1e-9);
            assert!((g.norm() - distance(&x, &y).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn axioms_pass_for_all_rules() {
        let flat_pairs: Vec<(Point, Point)> = {
            let m = ManifoldKind::flat(2);
            vec![
                (
                    Point::new(m, vec![0.0, 0.0]).unwrap(),
                    Point::new(m, vec![0.02, -0.01]).unwrap(),
                ),
                (
                    Point::new(m, vec![1.0, 2.0]).unwrap(),
                    Point::new(m, vec![1.01, 2.03]).unwrap(),
                ),
            ]
        };
        let report = check_rule_axioms(ConnectionRuleKind::EuclideanDiff, &flat_pairs).unwrap();
        assert!(report.is_ok(), "{:?}", report.violations);

        let sphere_pairs = random_sphere_pairs(11, 16, 0.05);
        for rule in [
            ConnectionRuleKind::AmbientProjection,
            ConnectionRuleKind::geodesic(),
        ] {
            let report = check_rule_axioms(rule, &sphere_pairs).unwrap();
            assert!(report.is_ok(), "{rule}: {:?}", report.violations);
        }
    }

    #[test]
    fn angle_factor_values() {
        assert_eq!(projection_vs_geodesic_angle(0.0).unwrap(), 1.0);
        let f = projection_vs_geodesic_angle(FRAC_PI_2).unwrap();
        assert!((f - 2.0 / std::f64::consts::PI).abs() < 1e-15);
        assert!(projection_vs_geodesic_angle(std::f64::consts::PI).is_err());
        assert!(projection_vs_geodesic_angle(-0.1).is_err());
    }

    #[test]
    fn angle_factor_matches_rules_on_path() {
        // eta(x, y) computed by the projection rule equals sinc(theta) times
        // the geodesic jump vector
        for (x, y) in random_sphere_pairs(23, 32, 2.5) {
            let geo = apply_rule(ConnectionRuleKind::geodesic(), &x, &y).unwrap();
            let proj = apply_rule(ConnectionRuleKind::AmbientProjection, &x, &y).unwrap();
            let factor = projection_vs_geodesic_angle(geo.norm()).unwrap();
            let expect = geo.scaled(factor);
            assert!(max_abs_diff(proj.vec(), expect.vec()) < 1e-9);
        }
    }

    #[test]
    fn rules_agree_to_first_order() {
        for (x, y) in random_sphere_pairs(31, 64, 0.1) {
            let (gap, d) = rule_pair_gap(
                ConnectionRuleKind::AmbientProjection,
                ConnectionRuleKind::geodesic(),
                &x,
                &y,
            )
            .unwrap();
            assert!(gap <= 1.0 * d * d + 1e-14, "gap {gap} at distance {d}");
        }
    }
}
