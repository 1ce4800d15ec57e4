//! Rolling of cadlag driver paths onto Riemannian manifolds.
//!
//! The crate implements the correspondence between three kinds of sample
//! paths:
//!
//! * an `R^d`-valued cadlag driver `W` starting at 0 (grid values plus
//!   explicit jump records),
//! * a manifold-valued path `X` together with designated jump tangents
//!   `dX_s` in the tangent space at the pre-jump point, with the jump
//!   endpoint reached by the exponential map, and
//! * an orthonormal frame path `U` above `X` moved exclusively by parallel
//!   transport (the horizontal lift).
//!
//! [`rolling::develop`] maps drivers to manifold paths by geodesic stepping
//! through the moving frame, with jumps traversing geodesics exactly;
//! [`rolling::horizontal_lift`] reconstructs the frame path above a given
//! manifold path; [`rolling::antidevelop`] reads the driver back through
//! the frame. On top of those sit jump-aware Ito/Stratonovich integrals,
//! quadratic variation of 2-tensors ([`integrals`]), and a Monte Carlo lab
//! for manifold-valued martingales on the sphere ([`martingale`]).
//!
//! Supported geometries are flat space `R^d` and the unit sphere
//! `S^d` embedded in `R^{d+1}`, both in closed form.

pub mod connection;
pub mod error;
pub mod frame;
pub mod integrals;
pub mod io;
pub mod manifold;
pub mod martingale;
pub mod path;
pub mod rolling;

pub use connection::ConnectionRuleKind;
pub use error::GeomError;
pub use frame::{Frame, OrthogonalMatrix};
pub use manifold::{CutLocusPolicy, ManifoldKind, Point, Tangent};
pub use path::{DriverJump, DriverPath, ManifoldJump, RngConfig, RolledPath};
pub use rolling::{Scheme, SchemeConfig};
