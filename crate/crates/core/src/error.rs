//! Error type shared by the geometry and path modules.

use thiserror::Error;

use crate::manifold::ManifoldKind;

#[derive(Debug, Error)]
pub enum GeomError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("objects live on different manifolds: {0:?} vs {1:?}")]
    ManifoldMismatch(ManifoldKind, ManifoldKind),

    #[error("tangent vectors have different base points")]
    BaseMismatch,

    #[error("point violates the manifold constraint by {residual:.3e}")]
    ConstraintViolated { residual: f64 },

    #[error("tangency violated by {residual:.3e}")]
    TangencyViolated { residual: f64 },

    #[error("ambiguous projection: |raw| = {norm:.3e} is below 0.5")]
    AmbiguousProjection { norm: f64 },

    #[error("frame columns are not orthonormal (defect {defect:.3e})")]
    FrameNotOrthonormal { defect: f64 },

    #[error("matrix is not orthogonal (defect {defect:.3e})")]
    MatrixNotOrthogonal { defect: f64 },

    #[error("connection rule {rule} is not defined on {manifold:?}")]
    RuleManifoldMismatch {
        rule: &'static str,
        manifold: ManifoldKind,
    },

    #[error("argument out of domain: {0}")]
    Domain(String),

    #[error("path has no frame data")]
    MissingFrames,

    #[error("jump sizes exceed 1 at indices {indices:?}")]
    JumpTooLarge { indices: Vec<usize> },

    #[error("invalid path: {0}")]
    InvalidPath(String),
}

pub type Result<T> = std::result::Result<T, GeomError>;
