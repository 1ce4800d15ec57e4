//! Driver transforms for manifold martingales and a Monte Carlo tester.
//!
//! On the sphere, reading jumps through the chord-projection rule shrinks
//! a driver jump of length `theta` to `sin(theta)`; the transforms here
//! move between a flat-space local-martingale candidate `Z` and the driver
//! `W` whose development is a sphere martingale with respect to that rule:
//! jumps are rescaled by `arcsin|dZ| / |dZ|` on the way in
//! ([`z_to_driver`]) and recovered through the frame as
//! `U_{s-}^{-1} eta(X_{s-}, X_s)` on the way back ([`driver_to_z`]). Both
//! maps leave continuous parts untouched and degenerate to the identity on
//! flat space.
//!
//! The local-martingale property itself is checked statistically:
//! terminal (and intermediate) sample means of the recovered `Z`
//! components over many independently seeded paths, scored in standard
//! errors. Paths are distributed over a thread pool with one RNG stream
//! per path index and aggregated in index order with pairwise summation,
//! so reports do not depend on the thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::connection::{apply_rule, ConnectionRuleKind};
use crate::error::{GeomError, Result};
use crate::frame::Frame;
use crate::manifold::{self, ManifoldKind, Point};
use crate::path::{
    compensate, gen_brownian_with, gen_compound_poisson_with, superpose, uniform_grid,
    validate_rolled, DriverJump, DriverPath, JumpLaw, RngConfig, RolledPath,
};
use crate::rolling::{develop, SchemeConfig};

/// `(sin(theta) - theta) / theta` with the removable singularity at 0
/// filled by its series.
pub fn sphere_f(theta: f64) -> Result<f64> {
    if theta < 0.0 {
        return Err(GeomError::Domain(format!("sphere_f needs theta >= 0, got {theta}")));
    }
    if theta < 1e-4 {
        let t2 = theta * theta;
        Ok(-t2 / 6.0 + t2 * t2 / 120.0)
    } else {
        Ok((theta.sin() - theta) / theta)
    }
}

/// `(arcsin(theta) - theta) / theta` on `[0, 1]`, series-filled at 0.
pub fn sphere_g(theta: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(GeomError::Domain(format!(
            "sphere_g needs theta in [0, 1], got {theta}"
        )));
    }
    if theta < 1e-4 {
        let t2 = theta * theta;
        Ok(t2 / 6.0 + 3.0 * t2 * t2 / 40.0)
    } else {
        Ok((theta.asin() - theta) / theta)
    }
}

/// Turn a flat local-martingale candidate `Z` into the driver whose
/// development is a sphere martingale: every jump `dZ` becomes
/// `dZ * arcsin|dZ| / |dZ|` (so `|dW| = arcsin|dZ| <= pi/2`); on flat
/// space the map is the identity. Errors listing the offending indices if
/// any `|dZ| > 1`.
pub fn z_to_driver(z: &DriverPath, manifold: ManifoldKind) -> Result<DriverPath> {
    if !manifold.is_sphere() {
        return Ok(z.clone());
    }
    let offending: Vec<usize> = z
        .jumps()
        .iter()
        .filter(|j| manifold::norm(&j.delta) > 1.0)
        .map(|j| j.index)
        .collect();
    if !offending.is_empty() {
        return Err(GeomError::JumpTooLarge { indices: offending });
    }
    let jumps: Vec<DriverJump> = z
        .jumps()
        .iter()
        .map(|j| {
            let theta = manifold::norm(&j.delta);
            let factor = 1.0 + sphere_g(theta).expect("theta <= 1 checked above");
            DriverJump {
                index: j.index,
                delta: manifold::scale(&j.delta, factor),
            }
        })
        .collect();
    // rescaled jumps enter every later left limit; rebuild the values from
    // the continuous increments so the continuous part stays Z's
    let dim = z.dim();
    let n = z.n_points();
    let mut values = vec![0.0; n * dim];
    for i in 1..n {
        let increment = z.continuous_increment(i - 1);
        let prev_jump = jumps
            .binary_search_by_key(&(i - 1), |j| j.index)
            .ok()
            .map(|pos| jumps[pos].delta.clone());
        for k in 0..dim {
            let mut v = values[(i - 1) * dim + k] + increment[k];
            if let Some(jd) = &prev_jump {
                v += jd[k];
            }
            values[i * dim + k] = v;
        }
    }
    DriverPath::new(dim, z.times().to_vec(), values, jumps)
}

/// Recover the flat local-martingale candidate from a development
/// quadruple: continuous parts of `w` unchanged, each jump replaced by
/// `U_{s-}^{-1} eta(X_{s-}, X_s)`. With the chord-projection rule on the
/// sphere this rescales each jump by `sin|dW| / |dW|`.
pub fn driver_to_z(
    w: &DriverPath,
    rolled: &RolledPath,
    rule: ConnectionRuleKind,
) -> Result<DriverPath> {
    let report = validate_rolled(rolled);
    if !report.is_ok() {
        return Err(GeomError::InvalidPath(format!(
            "development quadruple inconsistent: {}",
            report.violations[0]
        )));
    }
    if rolled.frames.is_none() {
        return Err(GeomError::MissingFrames);
    }
    if w.n_points() != rolled.n_points() || w.dim() != rolled.manifold.dim() {
        return Err(GeomError::InvalidPath(
            "driver and rolled path grids do not match".into(),
        ));
    }
    let mut z_jumps: Vec<DriverJump> = Vec::with_capacity(rolled.jumps.len());
    for j in &rolled.jumps {
        if w.jump_at(j.index).is_none() {
            return Err(GeomError::InvalidPath(format!(
                "rolled path jumps at index {} but the driver does not",
                j.index
            )));
        }
        let eta = apply_rule(rule, &rolled.points[j.index], &j.post)?;
        let coords = rolled.frame(j.index)?.coords_of(&eta)?;
        z_jumps.push(DriverJump {
            index: j.index,
            delta: coords,
        });
    }
    // continuous part is w's; rebuild left limits with the new jumps
    let dim = w.dim();
    let n = w.n_points();
    let mut values = vec![0.0; n * dim];
    for i in 1..n {
        let increment = w.continuous_increment(i - 1);
        let prev_jump = z_jumps
            .binary_search_by_key(&(i - 1), |j| j.index)
            .ok()
            .map(|pos| z_jumps[pos].delta.clone());
        for k in 0..dim {
            let mut v = values[(i - 1) * dim + k] + increment[k];
            if let Some(jd) = &prev_jump {
                v += jd[k];
            }
            values[i * dim + k] = v;
        }
    }
    DriverPath::new(dim, w.times().to_vec(), values, z_jumps)
}

/// Development of the transformed driver: the sphere martingale built from
/// a flat local-martingale candidate with jumps bounded by 1.
pub fn construct_sphere_martingale(
    z: &DriverPath,
    x0: &Point,
    u0: &Frame,
    cfg: &SchemeConfig,
) -> Result<RolledPath> {
    let w = z_to_driver(z, x0.manifold())?;
    develop(&w, x0, u0, cfg)
}

// ---------------------------------------------------------------------------
// Monte Carlo martingale testing
// ---------------------------------------------------------------------------

/// Pairwise summation; order-independent accuracy for long accumulations.
fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 16 {
        let mut acc = 0.0;
        for x in xs {
            acc += x;
        }
        acc
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MonteCarloConfig {
    pub n_paths: usize,
    pub seed: u64,
    /// Pass iff every functional's |z| stays at or below this.
    pub z_threshold: f64,
    /// Evaluation times (fractions are resolved by the caller).
    pub checkpoints: Vec<f64>,
}

impl MonteCarloConfig {
    pub fn new(n_paths: usize, seed: u64, horizon: f64) -> Self {
        MonteCarloConfig {
            n_paths,
            seed,
            z_threshold: 4.0,
            checkpoints: [0.2, 0.4, 0.6, 0.8, 1.0]
                .iter()
                .map(|f| f * horizon)
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FunctionalStat {
    pub name: String,
    pub time: f64,
    pub mean: f64,
    pub std_error: f64,
    pub z_score: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MartingaleTestReport {
    pub n_paths: usize,
    pub seed: u64,
    pub z_threshold: f64,
    pub stats: Vec<FunctionalStat>,
    pub passed: bool,
}

impl MartingaleTestReport {
    pub fn max_abs_z(&self) -> f64 {
        self.stats
            .iter()
            .map(|s| s.z_score.abs())
            .fold(0.0, f64::max)
    }

    /// Plain-text table, one functional per line.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<16} {:>8} {:>14} {:>12} {:>8}  {}\n",
            "functional", "time", "mean", "std error", "z", "verdict"
        ));
        for s in &self.stats {
            out.push_str(&format!(
                "{:<16} {:>8.4} {:>14.6e} {:>12.4e} {:>8.2}  {}\n",
                s.name,
                s.time,
                s.mean,
                s.std_error,
                s.z_score,
                if s.pass { "ok" } else { "FAIL" }
            ));
        }
        out.push_str(&format!(
            "paths: {}, seed: {}, threshold: |z| <= {}, overall: {}\n",
            self.n_paths,
            self.seed,
            self.z_threshold,
            if self.passed { "pass" } else { "FAIL" }
        ));
        out
    }
}

/// Run a seeded Monte Carlo martingale test. `sampler(path_index)` returns
/// one value per `(checkpoint, functional)`; per-path randomness must
/// derive from the path index so that scheduling cannot change the result.
pub fn martingale_test<F>(
    cfg: &MonteCarloConfig,
    functional_names: &[String],
    sampler: F,
) -> MartingaleTestReport
where
    F: Fn(u64) -> Vec<Vec<f64>> + Sync,
{
    assert!(cfg.n_paths >= 100, "martingale test needs at least 100 paths");
    let samples: Vec<Vec<Vec<f64>>> = (0..cfg.n_paths as u64)
        .into_par_iter()
        .map(&sampler)
        .collect();

    let n = cfg.n_paths as f64;
    let mut stats = Vec::new();
    for (ci, t) in cfg.checkpoints.iter().enumerate() {
        for (fi, name) in functional_names.iter().enumerate() {
            let xs: Vec<f64> = samples.iter().map(|s| s[ci][fi]).collect();
            let mean = pairwise_sum(&xs) / n;
            let devs: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
            let var = pairwise_sum(&devs) / (n - 1.0);
            let std_error = (var / n).sqrt();
            let z_score = if std_error > 0.0 {
                mean / std_error
            } else if mean == 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
            stats.push(FunctionalStat {
                name: name.clone(),
                time: *t,
                mean,
                std_error,
                z_score,
                pass: z_score.abs() <= cfg.z_threshold,
            });
        }
    }
    let passed = stats.iter().all(|s| s.pass);
    MartingaleTestReport {
        n_paths: cfg.n_paths,
        seed: cfg.seed,
        z_threshold: cfg.z_threshold,
        stats,
        passed,
    }
}

/// Configuration of the sphere-martingale experiment: develop a flat
/// candidate `Z` (Brownian part plus compound Poisson part, optionally
/// compensated), recover `Z` through the frames, and score its components
/// as martingale functionals.
#[derive(Debug, Clone)]
pub struct SphereMartingaleExperiment {
    pub manifold: ManifoldKind,
    pub horizon: f64,
    pub steps: usize,
    pub brownian: bool,
    pub poisson_rate: f64,
    pub jump_law: JumpLaw,
    pub compensate: bool,
    pub rule: ConnectionRuleKind,
    pub scheme: SchemeConfig,
}

impl SphereMartingaleExperiment {
    pub fn standard(dim: usize, horizon: f64, steps: usize, rate: f64, radius: f64) -> Self {
        SphereMartingaleExperiment {
            manifold: ManifoldKind::sphere(dim),
            horizon,
            steps,
            brownian: true,
            poisson_rate: rate,
            jump_law: JumpLaw::FixedNorm { radius },
            compensate: true,
            rule: ConnectionRuleKind::AmbientProjection,
            scheme: SchemeConfig::default(),
        }
    }

    /// North pole of the sphere (or the origin on flat space).
    pub fn start_point(&self) -> Point {
        let ambient = self.manifold.ambient_dim();
        let mut coords = vec![0.0; ambient];
        if self.manifold.is_sphere() {
            coords[ambient - 1] = 1.0;
        }
        Point::new(self.manifold, coords).expect("pole satisfies the constraint")
    }

    /// One simulated candidate `Z` for a given stream.
    pub fn sample_candidate(&self, rng_cfg: RngConfig) -> Result<DriverPath> {
        let dim = self.manifold.dim();
        let grid = uniform_grid(self.horizon, self.steps);
        let mut rng = rng_cfg.rng();
        let mut z = if self.poisson_rate > 0.0 {
            let jumps = gen_compound_poisson_with(
                &grid,
                dim,
                self.poisson_rate,
                &self.jump_law,
                &mut rng,
            );
            let brownian = if self.brownian {
                gen_brownian_with(jumps.times(), dim, &mut rng)
            } else {
                DriverPath::zero(dim, jumps.times().to_vec())
            };
            superpose(&jumps, &brownian)?
        } else if self.brownian {
            gen_brownian_with(&grid, dim, &mut rng)
        } else {
            DriverPath::zero(dim, grid)
        };
        if self.compensate {
            let drift = manifold::scale(&self.jump_law.mean(dim), self.poisson_rate);
            z = compensate(&z, &drift)?;
        }
        Ok(z)
    }

    /// Develop one candidate and recover `Z` through the frames; returns
    /// the recovered driver.
    pub fn recovered_candidate(&self, rng_cfg: RngConfig) -> Result<DriverPath> {
        let z = self.sample_candidate(rng_cfg)?;
        let x0 = self.start_point();
        let u0 = Frame::standard_at(&x0)?;
        let w = z_to_driver(&z, self.manifold)?;
        let rolled = develop(&w, &x0, &u0, &self.scheme)?;
        driver_to_z(&w, &rolled, self.rule)
    }

    /// Full Monte Carlo run: every component of the recovered `Z`,
    /// evaluated at the configured checkpoints.
    pub fn run(&self, mc: &MonteCarloConfig) -> Result<MartingaleTestReport> {
        if self.manifold.is_sphere() && self.jump_law.max_norm() > 1.0 {
            return Err(GeomError::Domain(
                "sphere martingale construction needs jump sizes at most 1".into(),
            ));
        }
        let dim = self.manifold.dim();
        let names: Vec<String> = (0..dim).map(|k| format!("Z[{k}]")).collect();
        let report = martingale_test(mc, &names, |stream| {
            let z = self
                .recovered_candidate(RngConfig::new(mc.seed, stream))
                .expect("experiment parameters validated before the run");
            mc.checkpoints
                .iter()
                .map(|t| z.post_value(z.index_at_or_before(*t)))
                .collect()
        });
        Ok(report)
    }
}
