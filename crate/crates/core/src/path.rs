//! Cadlag path representations and seeded stochastic generators.
//!
//! A [`DriverPath`] is an `R^d` path on a time grid: per-index left-limit
//! values plus explicit jump records `(index, delta)`. Jumps are
//! first-class data, never inferred from increment sizes, and jump times
//! always sit exactly on the grid, so continuous stepping never straddles
//! a jump. A [`RolledPath`] is the manifold-valued analogue: left-limit
//! points, jump records carrying the jump tangent and the post-jump point
//! (the exponential of the tangent), and optionally the frame path above.
//!
//! Generators are pure functions of `(grid, params, RngConfig)`; the same
//! seed and stream reproduce a path bitwise, and per-path streams make
//! parallel Monte Carlo order-independent.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{GeomError, Result};
use crate::frame::{transport_frame, Frame};
use crate::manifold::{self, dot, norm, ManifoldKind, Point, Tangent};

/// Seed plus stream id for a counter-based generator; identical values
/// reproduce a path bitwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngConfig {
    pub seed: u64,
    pub stream: u64,
}

impl RngConfig {
    pub fn new(seed: u64, stream: u64) -> Self {
        RngConfig { seed, stream }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

/// Uniform grid `0, T/n, ..., T`.
pub fn uniform_grid(horizon: f64, steps: usize) -> Vec<f64> {
    assert!(steps >= 1 && horizon > 0.0);
    (0..=steps)
        .map(|i| i as f64 * horizon / steps as f64)
        .collect()
}

/// Jump-size distribution for compound Poisson drivers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "kebab-case")]
pub enum JumpLaw {
    /// Uniform direction, norm fixed to `radius` (symmetric, mean zero).
    FixedNorm { radius: f64 },
    /// Uniform in the centered ball of the given radius (symmetric).
    UniformBall { radius: f64 },
    /// Always the same vector (asymmetric; useful as a drift control).
    Constant { vector: Vec<f64> },
}

impl JumpLaw {
    pub fn sample(&self, dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self {
            JumpLaw::FixedNorm { radius } => manifold::scale(&unit_vector(dim, rng), *radius),
            JumpLaw::UniformBall { radius } => {
                let dir = unit_vector(dim, rng);
                let r = *radius * rng.random_range(0.0_f64..1.0).powf(1.0 / dim as f64);
                manifold::scale(&dir, r)
            }
            JumpLaw::Constant { vector } => vector.clone(),
        }
    }

    /// Expected jump, used to build compensators.
    pub fn mean(&self, dim: usize) -> Vec<f64> {
        match self {
            JumpLaw::FixedNorm { .. } | JumpLaw::UniformBall { .. } => vec![0.0; dim],
            JumpLaw::Constant { vector } => vector.clone(),
        }
    }

    /// Largest possible jump norm.
    pub fn max_norm(&self) -> f64 {
        match self {
            JumpLaw::FixedNorm { radius } | JumpLaw::UniformBall { radius } => *radius,
            JumpLaw::Constant { vector } => norm(vector),
        }
    }
}

fn unit_vector(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm(&v);
        if n > 1e-12 {
            return manifold::scale(&v, 1.0 / n);
        }
    }
}

/// A jump record: at grid index `index` the path moves from `values[index]`
/// to `values[index] + delta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriverJump {
    pub index: usize,
    pub delta: Vec<f64>,
}

/// Cadlag `R^d` path: left-limit values on a grid plus jump records.
#[derive(Debug, Clone, PartialEq)]
pub struct DriverPath {
    dim: usize,
    times: Vec<f64>,
    values: Vec<f64>, // flattened, row i = left limit at times[i]
    jumps: Vec<DriverJump>,
}

impl DriverPath {
    pub fn new(
        dim: usize,
        times: Vec<f64>,
        values: Vec<f64>,
        jumps: Vec<DriverJump>,
    ) -> Result<Self> {
        if dim == 0 || times.is_empty() {
            return Err(GeomError::InvalidPath("empty grid or zero dimension".into()));
        }
        if values.len() != times.len() * dim {
            return Err(GeomError::InvalidPath(format!(
                "value storage has {} entries, expected {}",
                values.len(),
                times.len() * dim
            )));
        }
        if times[0] != 0.0 {
            return Err(GeomError::InvalidPath("grid must start at 0".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(GeomError::InvalidPath("grid not strictly increasing".into()));
        }
        if values[..dim].iter().any(|v| *v != 0.0) {
            return Err(GeomError::InvalidPath("driver must start at 0".into()));
        }
        let mut prev = 0usize;
        for j in &jumps {
            if j.index == 0 || j.index >= times.len() {
                return Err(GeomError::InvalidPath(format!(
                    "jump index {} out of range",
                    j.index
                )));
            }
            if j.index <= prev {
                return Err(GeomError::InvalidPath(
                    "jump indices not strictly increasing".into(),
                ));
            }
            if j.delta.len() != dim {
                return Err(GeomError::DimensionMismatch {
                    expected: dim,
                    got: j.delta.len(),
                });
            }
            prev = j.index;
        }
        Ok(DriverPath {
            dim,
            times,
            values,
            jumps,
        })
    }

    /// The constant-zero path on the given grid.
    pub fn zero(dim: usize, times: Vec<f64>) -> Self {
        let values = vec![0.0; times.len() * dim];
        DriverPath {
            dim,
            times,
            values,
            jumps: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn n_points(&self) -> usize {
        self.times.len()
    }

    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn jumps(&self) -> &[DriverJump] {
        &self.jumps
    }

    /// Left-limit value at grid index `i`.
    pub fn value(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn jump_at(&self, index: usize) -> Option<&DriverJump> {
        self.jumps
            .binary_search_by_key(&index, |j| j.index)
            .ok()
            .map(|pos| &self.jumps[pos])
    }

    /// Cadlag value at grid index `i` (after any jump there).
    pub fn post_value(&self, i: usize) -> Vec<f64> {
        let mut v = self.value(i).to_vec();
        if let Some(j) = self.jump_at(i) {
            manifold::axpy(&mut v, 1.0, &j.delta);
        }
        v
    }

    /// Continuous increment over `(times[i], times[i+1])`.
    pub fn continuous_increment(&self, i: usize) -> Vec<f64> {
        manifold::sub(self.value(i + 1), &self.post_value(i))
    }

    pub fn terminal_value(&self) -> Vec<f64> {
        self.post_value(self.n_points() - 1)
    }

    /// Largest grid index whose time is `<= t`.
    pub fn index_at_or_before(&self, t: f64) -> usize {
        match self.times.partition_point(|s| *s <= t) {
            0 => 0,
            n => n - 1,
        }
    }

    /// Realized quadratic variation: squared continuous increments plus
    /// squared jumps.
    pub fn realized_qv(&self) -> f64 {
        let cont: f64 = (0..self.n_steps())
            .map(|i| {
                let d = self.continuous_increment(i);
                dot(&d, &d)
            })
            .sum();
        let jump: f64 = self.jumps.iter().map(|j| dot(&j.delta, &j.delta)).sum();
        cont + jump
    }

    /// Apply an orthogonal matrix to every value and jump.
    pub fn rotated(&self, a: &crate::frame::OrthogonalMatrix) -> DriverPath {
        let mut values = Vec::with_capacity(self.values.len());
        for i in 0..self.n_points() {
            values.extend(a.apply(self.value(i)));
        }
        let jumps = self
            .jumps
            .iter()
            .map(|j| DriverJump {
                index: j.index,
                delta: a.apply(&j.delta),
            })
            .collect();
        DriverPath {
            dim: self.dim,
            times: self.times.clone(),
            values,
            jumps,
        }
    }

    /// Left-limit value at an arbitrary time, interpolating the continuous
    /// part linearly between grid points.
    fn eval_left(&self, t: f64) -> Vec<f64> {
        if t <= self.times[0] {
            return self.value(0).to_vec();
        }
        let last = self.n_points() - 1;
        if t > self.times[last] {
            return self.terminal_value();
        }
        // first index with times[idx] >= t
        let idx = self.times.partition_point(|s| *s < t);
        if self.times[idx] == t {
            return self.value(idx).to_vec();
        }
        let (lo, hi) = (idx - 1, idx);
        let alpha = (t - self.times[lo]) / (self.times[hi] - self.times[lo]);
        let start = self.post_value(lo);
        let end = self.value(hi);
        start
            .iter()
            .zip(end)
            .map(|(a, b)| a + alpha * (b - a))
            .collect()
    }
}

// ---------------------------------------------------------------------------
// generators and combinators
// ---------------------------------------------------------------------------

/// Brownian driver: independent `N(0, dt I)` increments on the grid, no
/// jumps.
pub fn gen_brownian(times: &[f64], dim: usize, rng_cfg: RngConfig) -> DriverPath {
    let mut rng = rng_cfg.rng();
    gen_brownian_with(times, dim, &mut rng)
}

/// Brownian increments drawn from an already-positioned generator; used
/// when several path parts share one per-path stream.
pub fn gen_brownian_with(times: &[f64], dim: usize, rng: &mut ChaCha8Rng) -> DriverPath {
    let mut values = vec![0.0; times.len() * dim];
    for i in 1..times.len() {
        let sd = (times[i] - times[i - 1]).sqrt();
        for k in 0..dim {
            let z: f64 = rng.sample(StandardNormal);
            values[i * dim + k] = values[(i - 1) * dim + k] + sd * z;
        }
    }
    DriverPath {
        dim,
        times: times.to_vec(),
        values,
        jumps: Vec::new(),
    }
}

/// Compound Poisson driver: `Poisson(rate * T)` jumps at uniform times,
/// inserted into the grid exactly; the continuous part is zero.
pub fn gen_compound_poisson(
    times: &[f64],
    dim: usize,
    rate: f64,
    law: &JumpLaw,
    rng_cfg: RngConfig,
) -> DriverPath {
    let mut rng = rng_cfg.rng();
    gen_compound_poisson_with(times, dim, rate, law, &mut rng)
}

pub fn gen_compound_poisson_with(
    times: &[f64],
    dim: usize,
    rate: f64,
    law: &JumpLaw,
    rng: &mut ChaCha8Rng,
) -> DriverPath {
    assert!(rate >= 0.0);
    let horizon = *times.last().unwrap();
    let count = if rate > 0.0 {
        Poisson::new(rate * horizon)
            .map(|p| p.sample(rng) as usize)
            .unwrap_or(0)
    } else {
        0
    };
    let mut jump_times: Vec<f64> = (0..count)
        .map(|_| {
            // uniform on (0, T]; rejects 0 so no jump lands at index 0
            loop {
                let t = rng.random_range(0.0_f64..1.0) * horizon;
                if t > 0.0 {
                    return t;
                }
            }
        })
        .collect();
    jump_times.sort_by(f64::total_cmp);
    jump_times.dedup();

    let mut grid = times.to_vec();
    for t in &jump_times {
        if let Err(pos) = grid.binary_search_by(|s| s.total_cmp(t)) {
            grid.insert(pos, *t);
        }
    }
    let jumps: Vec<DriverJump> = jump_times
        .iter()
        .map(|t| {
            let index = grid.binary_search_by(|s| s.total_cmp(t)).unwrap();
            DriverJump {
                index,
                delta: law.sample(dim, rng),
            }
        })
        .collect();
    // left limit at t_i accumulates the jumps strictly before t_i
    let mut values = vec![0.0; grid.len() * dim];
    let mut acc = vec![0.0; dim];
    let mut pending = jumps.iter().peekable();
    for i in 0..grid.len() {
        values[i * dim..(i + 1) * dim].copy_from_slice(&acc);
        if let Some(j) = pending.peek() {
            if j.index == i {
                manifold::axpy(&mut acc, 1.0, &j.delta);
                pending.next();
            }
        }
    }
    DriverPath {
        dim,
        times: grid,
        values,
        jumps,
    }
}

/// Sample a deterministic function on a grid (`W(t) = f(t) - f(0)`), no
/// jumps; handy for convergence studies with smooth drivers.
pub fn sample_function(f: impl Fn(f64) -> Vec<f64>, times: &[f64], dim: usize) -> DriverPath {
    let f0 = f(times[0]);
    assert_eq!(f0.len(), dim);
    let mut values = Vec::with_capacity(times.len() * dim);
    for &t in times {
        let ft = f(t);
        values.extend(manifold::sub(&ft, &f0));
    }
    DriverPath {
        dim,
        times: times.to_vec(),
        values,
        jumps: Vec::new(),
    }
}

/// Sum of two drivers on the union grid. Continuous parts interpolate
/// linearly onto new grid points; colliding jumps are summed into one
/// record.
pub fn superpose(a: &DriverPath, b: &DriverPath) -> Result<DriverPath> {
    if a.dim != b.dim {
        return Err(GeomError::DimensionMismatch {
            expected: a.dim,
            got: b.dim,
        });
    }
    let mut grid: Vec<f64> = a.times.clone();
    for t in &b.times {
        if let Err(pos) = grid.binary_search_by(|s| s.total_cmp(t)) {
            grid.insert(pos, *t);
        }
    }
    let dim = a.dim;
    let mut values = Vec::with_capacity(grid.len() * dim);
    for &t in &grid {
        let va = a.eval_left(t);
        let vb = b.eval_left(t);
        values.extend(manifold::add(&va, &vb));
    }
    let mut jumps: Vec<DriverJump> = Vec::new();
    for src in [&a.jumps, &b.jumps] {
        for j in src.iter() {
            let t = if std::ptr::eq(src, &a.jumps) {
                a.times[j.index]
            } else {
                b.times[j.index]
            };
            let index = grid.binary_search_by(|s| s.total_cmp(&t)).unwrap();
            match jumps.binary_search_by_key(&index, |k| k.index) {
                Ok(pos) => {
                    let merged = manifold::add(&jumps[pos].delta, &j.delta);
                    jumps[pos].delta = merged;
                }
                Err(pos) => jumps.insert(
                    pos,
                    DriverJump {
                        index,
                        delta: j.delta.clone(),
                    },
                ),
            }
        }
    }
    Ok(DriverPath {
        dim,
        times: grid,
        values,
        jumps,
    })
}

/// Subtract `drift * t` from the continuous part (e.g. `rate * E[jump]`
/// to compensate a compound Poisson driver).
pub fn compensate(p: &DriverPath, drift: &[f64]) -> Result<DriverPath> {
    if drift.len() != p.dim {
        return Err(GeomError::DimensionMismatch {
            expected: p.dim,
            got: drift.len(),
        });
    }
    let mut out = p.clone();
    for i in 0..out.n_points() {
        let t = out.times[i];
        let row = &mut out.values[i * p.dim..(i + 1) * p.dim];
        for (v, d) in row.iter_mut().zip(drift) {
            *v -= d * t;
        }
    }
    Ok(out)
}

/// Midpoint refinement with Brownian-bridge fill (unit diffusion) for the
/// continuous part. Jump records and all original grid values are
/// preserved exactly.
pub fn refine_bridge(p: &DriverPath, rng: &mut ChaCha8Rng) -> DriverPath {
    refine_with(p, |increment, h, rng| {
        let sd = 0.5 * h.sqrt();
        increment
            .iter()
            .map(|d| 0.5 * d + sd * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }, rng)
}

/// Midpoint refinement with plain linear interpolation (for deterministic
/// or pure-jump paths).
pub fn refine_linear(p: &DriverPath) -> DriverPath {
    let mut dummy = RngConfig::new(0, 0).rng();
    refine_with(p, |increment, _h, _rng| manifold::scale(increment, 0.5), &mut dummy)
}

fn refine_with(
    p: &DriverPath,
    half_increment: impl Fn(&[f64], f64, &mut ChaCha8Rng) -> Vec<f64>,
    rng: &mut ChaCha8Rng,
) -> DriverPath {
    let dim = p.dim;
    let n = p.n_points();
    let mut times = Vec::with_capacity(2 * n - 1);
    let mut values = Vec::with_capacity((2 * n - 1) * dim);
    let mut jumps = Vec::with_capacity(p.jumps.len());
    for i in 0..n - 1 {
        times.push(p.times[i]);
        values.extend_from_slice(p.value(i));
        if let Some(j) = p.jump_at(i) {
            jumps.push(DriverJump {
                index: times.len() - 1,
                delta: j.delta.clone(),
            });
        }
        let h = p.times[i + 1] - p.times[i];
        let increment = p.continuous_increment(i);
        let first_half = half_increment(&increment, h, rng);
        times.push(0.5 * (p.times[i] + p.times[i + 1]));
        values.extend(manifold::add(&p.post_value(i), &first_half));
    }
    times.push(p.times[n - 1]);
    values.extend_from_slice(p.value(n - 1));
    if let Some(j) = p.jump_at(n - 1) {
        jumps.push(DriverJump {
            index: times.len() - 1,
            delta: j.delta.clone(),
        });
    }
    DriverPath {
        dim,
        times,
        values,
        jumps,
    }
}

// ---------------------------------------------------------------------------
// manifold-valued paths
// ---------------------------------------------------------------------------

/// A manifold jump: tangent at the pre-jump point and the post-jump point
/// it reaches under the exponential map.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldJump {
    pub index: usize,
    pub tangent: Tangent,
    pub post: Point,
}

/// Frame jump record: the frame move at a jump, in driver coordinates
/// (the coordinates of the jump tangent in the pre-jump frame).
#[derive(Debug, Clone, PartialEq)]
pub struct FrameJump {
    pub index: usize,
    pub coords: Vec<f64>,
}

/// A manifold-valued sample path with designated jump tangents and an
/// optional frame path. `points[i]` is the left limit at `times[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RolledPath {
    pub manifold: ManifoldKind,
    pub times: Vec<f64>,
    pub points: Vec<Point>,
    pub jumps: Vec<ManifoldJump>,
    pub frames: Option<Vec<Frame>>,
    pub frame_jumps: Option<Vec<FrameJump>>,
}

impl RolledPath {
    pub fn n_points(&self) -> usize {
        self.times.len()
    }

    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn jump_at(&self, index: usize) -> Option<&ManifoldJump> {
        self.jumps
            .binary_search_by_key(&index, |j| j.index)
            .ok()
            .map(|pos| &self.jumps[pos])
    }

    /// Cadlag point at grid index `i`.
    pub fn post_point(&self, i: usize) -> Point {
        match self.jump_at(i) {
            Some(j) => j.post.clone(),
            None => self.points[i].clone(),
        }
    }

    pub fn terminal_point(&self) -> Point {
        self.post_point(self.n_points() - 1)
    }

    /// Left-limit frame at grid index `i`.
    pub fn frame(&self, i: usize) -> Result<&Frame> {
        self.frames
            .as_ref()
            .map(|f| &f[i])
            .ok_or(GeomError::MissingFrames)
    }

    /// Cadlag frame at grid index `i`: the left-limit frame transported
    /// along the jump geodesic when a jump sits there.
    pub fn post_frame(&self, i: usize) -> Result<Frame> {
        let frame = self.frame(i)?;
        match self.jump_at(i) {
            Some(j) => {
                let moved = transport_frame(frame, &j.tangent)?;
                Ok(crate::frame::snap_frame_to(moved, &j.post))
            }
            None => Ok(frame.clone()),
        }
    }

    pub fn has_frames(&self) -> bool {
        self.frames.is_some()
    }

    pub fn without_frames(&self) -> RolledPath {
        RolledPath {
            frames: None,
            frame_jumps: None,
            ..self.clone()
        }
    }

    pub fn index_at_or_before(&self, t: f64) -> usize {
        match self.times.partition_point(|s| *s <= t) {
            0 => 0,
            n => n - 1,
        }
    }

    /// Keep every `factor`-th grid index plus all jump indices and the
    /// endpoints. The result is a coarser but still valid path over the
    /// same trajectory.
    pub fn coarsened(&self, factor: usize) -> RolledPath {
        assert!(factor >= 1);
        let n = self.n_points();
        let mut keep: Vec<usize> = (0..n).step_by(factor).collect();
        for j in &self.jumps {
            if let Err(pos) = keep.binary_search(&j.index) {
                keep.insert(pos, j.index);
            }
        }
        if *keep.last().unwrap() != n - 1 {
            keep.push(n - 1);
        }
        let remap = |old: usize| keep.binary_search(&old).unwrap();
        RolledPath {
            manifold: self.manifold,
            times: keep.iter().map(|&i| self.times[i]).collect(),
            points: keep.iter().map(|&i| self.points[i].clone()).collect(),
            jumps: self
                .jumps
                .iter()
                .map(|j| ManifoldJump {
                    index: remap(j.index),
                    ..j.clone()
                })
                .collect(),
            frames: self
                .frames
                .as_ref()
                .map(|f| keep.iter().map(|&i| f[i].clone()).collect()),
            frame_jumps: self.frame_jumps.as_ref().map(|fj| {
                fj.iter()
                    .map(|j| FrameJump {
                        index: remap(j.index),
                        coords: j.coords.clone(),
                    })
                    .collect()
            }),
        }
    }
}

/// Threshold on the exponential-map residual at jumps.
pub const EQ_V_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum PathViolation {
    /// `exp(jump tangent)` misses the recorded post-jump point.
    JumpEndpoint { index: usize, residual: f64 },
    /// Jump tangent is not tangent at the pre-jump point.
    JumpTangency { index: usize, residual: f64 },
    /// Jump tangent is based away from the stored pre-jump point.
    JumpBase { index: usize, gap: f64 },
    /// A stored point (or jump endpoint) violates the manifold constraint.
    OffManifold { index: usize, residual: f64 },
    /// Frame columns not orthonormal.
    FrameDefect { index: usize, defect: f64 },
    /// Frame based away from the path point.
    FrameBase { index: usize, gap: f64 },
}

impl std::fmt::Display for PathViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PathViolation::JumpEndpoint { index, residual } => {
                write!(f, "jump endpoint residual {residual:.3e} at index {index}")
            }
            PathViolation::JumpTangency { index, residual } => {
                write!(f, "jump tangency residual {residual:.3e} at index {index}")
            }
            PathViolation::JumpBase { index, gap } => {
                write!(f, "jump base offset {gap:.3e} at index {index}")
            }
            PathViolation::OffManifold { index, residual } => {
                write!(f, "constraint residual {residual:.3e} at index {index}")
            }
            PathViolation::FrameDefect { index, defect } => {
                write!(f, "frame orthonormality defect {defect:.3e} at index {index}")
            }
            PathViolation::FrameBase { index, gap } => {
                write!(f, "frame base offset {gap:.3e} at index {index}")
            }
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RolledPathReport {
    pub violations: Vec<PathViolation>,
    pub max_jump_residual: f64,
}

impl RolledPathReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

fn coord_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Check the structural invariants of a rolled path: the exponential-map
/// constraint at every jump, jump tangency and base association, manifold
/// constraints, and (when present) frame orthonormality and base matching.
/// Returns a report listing every violation with its index and magnitude.
pub fn validate_rolled(p: &RolledPath) -> RolledPathReport {
    let mut report = RolledPathReport::default();
    for (i, pt) in p.points.iter().enumerate() {
        let residual = p.manifold.constraint_residual(pt.coords());
        if residual > 10.0 * crate::manifold::CONSTRAINT_TOL {
            report
                .violations
                .push(PathViolation::OffManifold { index: i, residual });
        }
    }
    for j in &p.jumps {
        let gap = coord_gap(j.tangent.base().coords(), p.points[j.index].coords());
        if gap > 1e-9 {
            report
                .violations
                .push(PathViolation::JumpBase { index: j.index, gap });
        }
        if p.manifold.is_sphere() {
            let residual = dot(j.tangent.vec(), j.tangent.base().coords()).abs();
            if residual > 1e-9 * (1.0 + j.tangent.norm()) {
                report.violations.push(PathViolation::JumpTangency {
                    index: j.index,
                    residual,
                });
            }
        }
        let reached = crate::manifold::exp_map(&j.tangent);
        let residual = coord_gap(reached.coords(), j.post.coords());
        report.max_jump_residual = report.max_jump_residual.max(residual);
        if residual > EQ_V_TOL {
            report.violations.push(PathViolation::JumpEndpoint {
                index: j.index,
                residual,
            });
        }
    }
    if let Some(frames) = &p.frames {
        for (i, frame) in frames.iter().enumerate() {
            let defect = frame.orthonormality_defect();
            if defect > crate::frame::ORTHONORMALITY_TOL {
                report
                    .violations
                    .push(PathViolation::FrameDefect { index: i, defect });
            }
            let gap = coord_gap(frame.base().coords(), p.points[i].coords());
            if gap > 1e-9 {
                report
                    .violations
                    .push(PathViolation::FrameBase { index: i, gap });
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::exp_map;

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        coord_gap(a, b)
    }

    #[test]
    fn brownian_single_step_matches_forced_draw() {
        let cfg = RngConfig::new(42, 0);
        let p = gen_brownian(&[0.0, 1.0], 1, cfg);
        let mut rng = cfg.rng();
        let z: f64 = rng.sample(StandardNormal);
        assert_eq!(p.value(1)[0], z);
    }

    #[test]
    fn brownian_is_deterministic_per_stream() {
        let cfg = RngConfig::new(7, 3);
        let grid = uniform_grid(1.0, 16);
        let a = gen_brownian(&grid, 2, cfg);
        let b = gen_brownian(&grid, 2, cfg);
        assert_eq!(a, b);
        let c = gen_brownian(&grid, 2, RngConfig::new(7, 4));
        assert_ne!(a, c);
    }

    #[test]
    fn brownian_terminal_variance_is_consistent() {
        let grid = uniform_grid(1.0, 8);
        let n = 10_000;
        let mut sums = [0.0, 0.0];
        let mut sq = [0.0, 0.0];
        for s in 0..n {
            let p = gen_brownian(&grid, 2, RngConfig::new(1234, s));
            let w = p.terminal_value();
            for k in 0..2 {
                sums[k] += w[k];
                sq[k] += w[k] * w[k];
            }
        }
        for k in 0..2 {
            let mean = sums[k] / n as f64;
            let var = sq[k] / n as f64 - mean * mean;
            assert!((0.94..=1.06).contains(&var), "component {k} variance {var}");
        }
    }

    #[test]
    fn poisson_zero_rate_has_no_jumps() {
        let grid = uniform_grid(1.0, 4);
        let p = gen_compound_poisson(
            &grid,
            2,
            0.0,
            &JumpLaw::FixedNorm { radius: 1.0 },
            RngConfig::new(1, 0),
        );
        assert!(p.jumps().is_empty());
        assert_eq!(p.times(), &grid[..]);
    }

    #[test]
    fn poisson_jump_times_are_grid_points() {
        let grid = uniform_grid(2.0, 10);
        let p = gen_compound_poisson(
            &grid,
            2,
            3.0,
            &JumpLaw::FixedNorm { radius: 0.5 },
            RngConfig::new(99, 1),
        );
        for j in p.jumps() {
            assert!(j.index > 0 && j.index < p.n_points());
            assert!((norm(&j.delta) - 0.5).abs() < 1e-12);
        }
        // original grid times all survive
        for t in &grid {
            assert!(p.times().binary_search_by(|s| s.total_cmp(t)).is_ok());
        }
    }

    #[test]
    fn poisson_count_matches_rate() {
        let grid = uniform_grid(1.0, 4);
        let lambda = 2.0;
        let n = 10_000;
        let mut total = 0usize;
        for s in 0..n {
            let p = gen_compound_poisson(
                &grid,
                1,
                lambda,
                &JumpLaw::FixedNorm { radius: 1.0 },
                RngConfig::new(5, s),
            );
            total += p.jumps().len();
        }
        let mean = total as f64 / n as f64;
        let se = (lambda / n as f64).sqrt();
        assert!(
            (mean - lambda).abs() <= 4.0 * se,
            "mean jump count {mean} vs rate {lambda}"
        );
    }

    #[test]
    fn superpose_with_zero_is_identity() {
        let grid = uniform_grid(1.0, 8);
        let w = gen_brownian(&grid, 2, RngConfig::new(11, 0));
        let z = DriverPath::zero(2, grid.clone());
        let s = superpose(&w, &z).unwrap();
        assert_eq!(s, w);
    }

    #[test]
    fn superpose_commutes() {
        let grid = uniform_grid(1.0, 8);
        let w = gen_brownian(&grid, 2, RngConfig::new(13, 0));
        let p = gen_compound_poisson(
            &grid,
            2,
            4.0,
            &JumpLaw::FixedNorm { radius: 0.3 },
            RngConfig::new(13, 1),
        );
        let ab = superpose(&w, &p).unwrap();
        let ba = superpose(&p, &w).unwrap();
        assert_eq!(ab.times(), ba.times());
        for i in 0..ab.n_points() {
            assert!(max_abs_diff(ab.value(i), ba.value(i)) < 1e-15);
        }
        assert_eq!(ab.jumps(), ba.jumps());
    }

    #[test]
    fn superpose_merges_colliding_jumps() {
        let grid = uniform_grid(1.0, 2);
        let a = DriverPath::new(
            1,
            grid.clone(),
            vec![0.0, 0.0, 0.0],
            vec![DriverJump { index: 1, delta: vec![0.5] }],
        )
        .unwrap();
        let b = DriverPath::new(
            1,
            grid,
            vec![0.0, 0.0, 0.0],
            vec![DriverJump { index: 1, delta: vec![0.25] }],
        )
        .unwrap();
        let s = superpose(&a, &b).unwrap();
        assert_eq!(s.jumps().len(), 1);
        assert_eq!(s.jumps()[0].delta, vec![0.75]);
    }

    #[test]
    fn superposition_qv_decomposes() {
        let grid = uniform_grid(1.0, 64);
        let w = gen_brownian(&grid, 2, RngConfig::new(17, 0));
        let p = gen_compound_poisson(
            &grid,
            2,
            5.0,
            &JumpLaw::UniformBall { radius: 0.8 },
            RngConfig::new(17, 1),
        );
        let s = superpose(&w, &p).unwrap();
        // continuous squared increments + squared jumps, computed directly
        let mut expect = 0.0;
        for i in 0..s.n_steps() {
            let d = s.continuous_increment(i);
            expect += dot(&d, &d);
        }
        for j in s.jumps() {
            expect += dot(&j.delta, &j.delta);
        }
        assert!((s.realized_qv() - expect).abs() < 1e-12);
    }

    #[test]
    fn compensate_examples() {
        let grid = uniform_grid(1.0, 8);
        let w = gen_brownian(&grid, 2, RngConfig::new(19, 0));
        assert_eq!(compensate(&w, &[0.0, 0.0]).unwrap(), w);
        let fwd = compensate(&w, &[0.5, -1.0]).unwrap();
        let back = compensate(&fwd, &[-0.5, 1.0]).unwrap();
        for i in 0..w.n_points() {
            assert!(max_abs_diff(back.value(i), w.value(i)) < 1e-12);
        }
    }

    #[test]
    fn compensated_poisson_is_centered() {
        // constant jumps, compensated: terminal mean within 4 SE of 0
        let grid = uniform_grid(1.0, 4);
        let law = JumpLaw::Constant { vector: vec![0.4] };
        let lambda = 2.0;
        let n = 10_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for s in 0..n {
            let p = gen_compound_poisson(&grid, 1, lambda, &law, RngConfig::new(23, s));
            let z = compensate(&p, &[lambda * 0.4]).unwrap();
            let v = z.terminal_value()[0];
            sum += v;
            sumsq += v * v;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        let se = (var / n as f64).sqrt();
        assert!(mean.abs() <= 4.0 * se, "mean {mean}, se {se}");
    }

    #[test]
    fn refinement_preserves_jumps_and_terminal() {
        let grid = uniform_grid(1.0, 8);
        let w = gen_brownian(&grid, 2, RngConfig::new(29, 0));
        let p = gen_compound_poisson(
            &grid,
            2,
            3.0,
            &JumpLaw::FixedNorm { radius: 0.5 },
            RngConfig::new(29, 1),
        );
        let s = superpose(&w, &p).unwrap();
        let mut rng = RngConfig::new(29, 2).rng();
        let fine = refine_bridge(&s, &mut rng);
        assert_eq!(fine.n_points(), 2 * s.n_points() - 1);
        assert_eq!(fine.jumps().len(), s.jumps().len());
        for (orig, refined) in s.jumps().iter().zip(fine.jumps()) {
            assert_eq!(orig.delta, refined.delta);
            assert_eq!(fine.times()[refined.index], s.times()[orig.index]);
        }
        assert_eq!(fine.terminal_value(), s.terminal_value());
        // original grid values survive exactly at even indices of the refinement
        for i in 0..s.n_points() {
            let fi = fine
                .times()
                .binary_search_by(|t| t.total_cmp(&s.times()[i]))
                .unwrap();
            assert_eq!(fine.value(fi), s.value(i));
        }
    }

    #[test]
    fn validate_flags_corrupted_jump() {
        // hand-built sphere path with one jump; corrupting the jump tangent
        // inside the tangent plane trips exactly the endpoint check
        let m = ManifoldKind::sphere(2);
        let north = Point::new(m, vec![0.0, 0.0, 1.0]).unwrap();
        let tangent = north.tangent_from_ambient(&[0.3, 0.0, 0.0]).unwrap();
        let post = exp_map(&tangent);
        let path = RolledPath {
            manifold: m,
            times: vec![0.0, 0.5, 1.0],
            points: vec![north.clone(), north.clone(), post.clone()],
            jumps: vec![ManifoldJump {
                index: 1,
                tangent: tangent.clone(),
                post: post.clone(),
            }],
            frames: None,
            frame_jumps: None,
        };
        assert!(validate_rolled(&path).is_ok());

        let mut bad = path.clone();
        // rotate the tangent within the tangent plane: tangency stays intact
        bad.jumps[0].tangent = north.tangent_from_ambient(&[0.3, 0.001, 0.0]).unwrap();
        let report = validate_rolled(&bad);
        assert_eq!(report.violations.len(), 1);
        assert!(matches!(
            report.violations[0],
            PathViolation::JumpEndpoint { index: 1, .. }
        ));
    }

    #[test]
    fn flat_path_validates() {
        let m = ManifoldKind::flat(2);
        let a = Point::new(m, vec![0.0, 0.0]).unwrap();
        let b = Point::new(m, vec![1.0, 0.0]).unwrap();
        let path = RolledPath {
            manifold: m,
            times: vec![0.0, 1.0],
            points: vec![a, b],
            jumps: vec![],
            frames: None,
            frame_jumps: None,
        };
        assert!(validate_rolled(&path).is_ok());
    }

    #[test]
    fn driver_constructor_rejects_bad_input() {
        assert!(DriverPath::new(1, vec![0.0, 1.0], vec![0.1, 0.0], vec![]).is_err()); // W0 != 0
        assert!(DriverPath::new(1, vec![0.5, 1.0], vec![0.0, 0.0], vec![]).is_err()); // t0 != 0
        assert!(DriverPath::new(1, vec![0.0, 0.0], vec![0.0, 0.0], vec![]).is_err()); // flat grid
        assert!(DriverPath::new(
            1,
            vec![0.0, 1.0],
            vec![0.0, 0.0],
            vec![DriverJump { index: 0, delta: vec![1.0] }],
        )
        .is_err()); // jump at t0
    }

    #[test]
    fn coarsen_keeps_jumps() {
        let m = ManifoldKind::sphere(2);
        let north = Point::new(m, vec![0.0, 0.0, 1.0]).unwrap();
        let tangent = north.tangent_from_ambient(&[0.2, 0.0, 0.0]).unwrap();
        let post = exp_map(&tangent);
        let points: Vec<Point> = (0..9).map(|_| north.clone()).collect();
        let path = RolledPath {
            manifold: m,
            times: (0..9).map(|i| i as f64).collect(),
            points,
            jumps: vec![ManifoldJump {
                index: 3,
                tangent,
                post,
            }],
            frames: None,
            frame_jumps: None,
        };
        let coarse = path.coarsened(2);
        // indices kept: 0,2,3,4,6,8
        assert_eq!(coarse.times, vec![0.0, 2.0, 3.0, 4.0, 6.0, 8.0]);
        assert_eq!(coarse.jumps[0].index, 2);
    }
}
