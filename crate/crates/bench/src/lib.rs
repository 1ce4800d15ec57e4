//! Shared fixtures for the criterion benches.

use manifold_roller_core::frame::Frame;
use manifold_roller_core::manifold::{ManifoldKind, Point};
use manifold_roller_core::path::{
    gen_brownian, gen_compound_poisson, superpose, uniform_grid, DriverPath, JumpLaw, RngConfig,
};

pub fn north() -> Point {
    Point::new(ManifoldKind::sphere(2), vec![0.0, 0.0, 1.0]).unwrap()
}

pub fn standard_frame() -> Frame {
    Frame::standard_at(&north()).unwrap()
}

/// Mixed Brownian + compound Poisson driver on `[0, 1]`.
pub fn mixed_driver(steps: usize, seed: u64) -> DriverPath {
    let grid = uniform_grid(1.0, steps);
    let w = gen_brownian(&grid, 2, RngConfig::new(seed, 0));
    let p = gen_compound_poisson(
        &grid,
        2,
        4.0,
        &JumpLaw::UniformBall { radius: 0.9 },
        RngConfig::new(seed, 1),
    );
    superpose(&w, &p).unwrap()
}
