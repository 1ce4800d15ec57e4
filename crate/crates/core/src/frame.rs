//! Orthonormal frames, the O(d) right action, and frame transport.
//!
//! A frame at `x` is a linear isometry `R^d -> T_xM`, stored as its `d`
//! column vectors in ambient coordinates. Moving a frame along a geodesic
//! by parallel transport of every column realizes the horizontal geodesics
//! of the frame bundle, so horizontality never needs an explicit
//! connection form: every frame path this module produces is horizontal by
//! construction.
//!
//! Floating-point drift is kept down by re-orthonormalizing (modified
//! Gram-Schmidt, including a projection onto the tangent space) after
//! every transport step.

use crate::error::{GeomError, Result};
use crate::manifold::{
    self, axpy, dot, norm, parallel_transport, project_tangent, scale, ManifoldKind, Point,
    Tangent,
};

/// Orthonormality tolerance accepted by the validating constructors.
pub const ORTHONORMALITY_TOL: f64 = 1e-10;

/// An orthonormal frame: `d` tangent columns at a common base point.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    base: Point,
    columns: Vec<Vec<f64>>, // column k = u e_k, ambient coordinates
}

impl Frame {
    /// Validates column count, tangency and orthonormality (within `1e-10`).
    pub fn new(base: Point, columns: Vec<Vec<f64>>) -> Result<Self> {
        let d = base.manifold().dim();
        if columns.len() != d {
            return Err(GeomError::DimensionMismatch {
                expected: d,
                got: columns.len(),
            });
        }
        for col in &columns {
            if col.len() != base.manifold().ambient_dim() {
                return Err(GeomError::DimensionMismatch {
                    expected: base.manifold().ambient_dim(),
                    got: col.len(),
                });
            }
        }
        let frame = Frame { base, columns };
        let defect = frame.orthonormality_defect();
        if defect > ORTHONORMALITY_TOL {
            return Err(GeomError::FrameNotOrthonormal { defect });
        }
        if frame.base.manifold().is_sphere() {
            for col in &frame.columns {
                let t = dot(col, frame.base.coords()).abs();
                if t > ORTHONORMALITY_TOL {
                    return Err(GeomError::TangencyViolated { residual: t });
                }
            }
        }
        Ok(frame)
    }

    #[allow(dead_code)]
    pub(crate) fn new_unchecked(base: Point, columns: Vec<Vec<f64>>) -> Self {
        Frame { base, columns }
    }

    /// The deterministic reference frame at `x`: ambient basis vectors
    /// projected onto the tangent space and orthonormalized, keeping the
    /// first `d` independent ones.
    pub fn standard_at(x: &Point) -> Result<Self> {
        let d = x.manifold().dim();
        let ambient = x.manifold().ambient_dim();
        let mut columns: Vec<Vec<f64>> = Vec::with_capacity(d);
        for k in 0..ambient {
            if columns.len() == d {
                break;
            }
            let mut w = vec![0.0; ambient];
            w[k] = 1.0;
            let mut w = project_tangent(x.manifold(), x.coords(), &w);
            for c in &columns {
                let proj = dot(&w, c);
                axpy(&mut w, -proj, c);
            }
            let n = norm(&w);
            if n > 1e-8 {
                columns.push(scale(&w, 1.0 / n));
            }
        }
        debug_assert_eq!(columns.len(), d);
        Ok(Frame { base: x.clone(), columns })
    }

    pub fn base(&self) -> &Point {
        &self.base
    }

    pub fn manifold(&self) -> ManifoldKind {
        self.base.manifold()
    }

    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    /// Column `k` as a tangent vector.
    pub fn column(&self, k: usize) -> Tangent {
        Tangent::new_unchecked(self.base.clone(), self.columns[k].clone())
    }

    /// Apply the frame to driver coordinates: `w -> sum_k w^k col_k`.
    pub fn apply(&self, w: &[f64]) -> Result<Tangent> {
        if w.len() != self.dim() {
            return Err(GeomError::DimensionMismatch {
                expected: self.dim(),
                got: w.len(),
            });
        }
        let mut out = vec![0.0; self.base.manifold().ambient_dim()];
        for (coeff, col) in w.iter().zip(&self.columns) {
            axpy(&mut out, *coeff, col);
        }
        Ok(Tangent::new_unchecked(self.base.clone(), out))
    }

    /// Invert the frame on a tangent at the same base:
    /// `v -> (<col_1, v>, ..., <col_d, v>)`.
    pub fn coords_of(&self, v: &Tangent) -> Result<Vec<f64>> {
        if v.manifold() != self.manifold() {
            return Err(GeomError::ManifoldMismatch(v.manifold(), self.manifold()));
        }
        let gap: f64 = v
            .base()
            .coords()
            .iter()
            .zip(self.base.coords())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if gap > 1e-9 {
            return Err(GeomError::BaseMismatch);
        }
        Ok(self.columns.iter().map(|c| dot(c, v.vec())).collect())
    }

    /// Right action by an orthogonal matrix: `(ua) e_k = u (a e_k)`.
    pub fn right_action(&self, a: &OrthogonalMatrix) -> Frame {
        let d = self.dim();
        let ambient = self.base.manifold().ambient_dim();
        let mut columns = vec![vec![0.0; ambient]; d];
        for (k, new_col) in columns.iter_mut().enumerate() {
            for j in 0..d {
                axpy(new_col, a.entries[j][k], &self.columns[j]);
            }
        }
        Frame {
            base: self.base.clone(),
            columns,
        }
    }

    /// `max_{i,j} |<col_i, col_j> - delta_ij|`.
    pub fn orthonormality_defect(&self) -> f64 {
        let mut defect: f64 = 0.0;
        for i in 0..self.columns.len() {
            for j in i..self.columns.len() {
                let target = if i == j { 1.0 } else { 0.0 };
                defect = defect.max((dot(&self.columns[i], &self.columns[j]) - target).abs());
            }
        }
        defect
    }

    /// Modified Gram-Schmidt in place, re-projecting onto the tangent
    /// space first.
    pub fn reorthonormalize(&mut self) {
        let kind = self.base.manifold();
        let base = self.base.coords().to_vec();
        for k in 0..self.columns.len() {
            let mut col = project_tangent(kind, &base, &self.columns[k]);
            for j in 0..k {
                let prev = &self.columns[j];
                let proj = dot(&col, prev);
                axpy(&mut col, -proj, prev);
            }
            let n = norm(&col);
            self.columns[k] = scale(&col, 1.0 / n);
        }
    }
}

/// A `d x d` orthogonal matrix (`a^T a = I` within `1e-10`).
#[derive(Debug, Clone, PartialEq)]
pub struct OrthogonalMatrix {
    entries: Vec<Vec<f64>>, // row-major
}

impl OrthogonalMatrix {
    pub fn new(entries: Vec<Vec<f64>>) -> Result<Self> {
        let d = entries.len();
        for row in &entries {
            if row.len() != d {
                return Err(GeomError::DimensionMismatch {
                    expected: d,
                    got: row.len(),
                });
            }
        }
        let m = OrthogonalMatrix { entries };
        let defect = m.orthogonality_defect();
        if defect > ORTHONORMALITY_TOL {
            return Err(GeomError::MatrixNotOrthogonal { defect });
        }
        Ok(m)
    }

    pub fn identity(d: usize) -> Self {
        let mut entries = vec![vec![0.0; d]; d];
        for (i, row) in entries.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        OrthogonalMatrix { entries }
    }

    /// Rotation by `angle` in the `(i, j)` coordinate plane.
    pub fn rotation_in_plane(d: usize, i: usize, j: usize, angle: f64) -> Self {
        let mut m = Self::identity(d);
        let (c, s) = (angle.cos(), angle.sin());
        m.entries[i][i] = c;
        m.entries[j][j] = c;
        m.entries[i][j] = -s;
        m.entries[j][i] = s;
        m
    }

    pub fn dim(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[Vec<f64>] {
        &self.entries
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.entries[i][j]
    }

    pub fn transpose(&self) -> Self {
        let d = self.dim();
        let mut out = vec![vec![0.0; d]; d];
        for (i, row) in self.entries.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                out[j][i] = *v;
            }
        }
        OrthogonalMatrix { entries: out }
    }

    /// For an orthogonal matrix the transpose is the inverse.
    pub fn inverse(&self) -> Self {
        self.transpose()
    }

    pub fn mul(&self, other: &OrthogonalMatrix) -> Self {
        let d = self.dim();
        let mut out = vec![vec![0.0; d]; d];
        for (row_out, row_a) in out.iter_mut().zip(&self.entries) {
            for (j, cell) in row_out.iter_mut().enumerate() {
                *cell = row_a
                    .iter()
                    .zip(&other.entries)
                    .map(|(a, row_b)| a * row_b[j])
                    .sum();
            }
        }
        OrthogonalMatrix { entries: out }
    }

    pub fn apply(&self, w: &[f64]) -> Vec<f64> {
        self.entries
            .iter()
            .map(|row| dot(row, w))
            .collect()
    }

    pub fn orthogonality_defect(&self) -> f64 {
        let d = self.dim();
        let mut defect: f64 = 0.0;
        for i in 0..d {
            for j in 0..d {
                let target = if i == j { 1.0 } else { 0.0 };
                let v: f64 = (0..d).map(|k| self.entries[k][i] * self.entries[k][j]).sum();
                defect = defect.max((v - target).abs());
            }
        }
        defect
    }

    /// Build the change-of-frame matrix `b` with `u b = v` column-wise,
    /// then project onto O(d) by Gram-Schmidt on the columns. Both frames
    /// must share a base point.
    pub fn between_frames(u: &Frame, v: &Frame) -> Result<Self> {
        let d = u.dim();
        if v.dim() != d {
            return Err(GeomError::DimensionMismatch { expected: d, got: v.dim() });
        }
        // raw[j][k] = <u_j, v_k>, so that v_k = sum_j raw[j][k] u_j
        let mut cols: Vec<Vec<f64>> = Vec::with_capacity(d);
        for k in 0..d {
            cols.push(u.coords_of(&v.column(k))?);
        }
        // orthonormalize the columns
        for k in 0..d {
            let mut col = cols[k].clone();
            for prev in &cols[..k] {
                let proj = dot(&col, prev);
                axpy(&mut col, -proj, prev);
            }
            let n = norm(&col);
            cols[k] = scale(&col, 1.0 / n);
        }
        let mut entries = vec![vec![0.0; d]; d];
        for (k, col) in cols.iter().enumerate() {
            for (j, v) in col.iter().enumerate() {
                entries[j][k] = *v;
            }
        }
        Ok(OrthogonalMatrix { entries })
    }
}

/// Parallel-transport every column of `u` along `t -> exp(t v)`; the result
/// is the endpoint frame of the horizontal geodesic through `(u, v)`,
/// re-orthonormalized.
pub fn transport_frame(u: &Frame, v: &Tangent) -> Result<Frame> {
    if v.manifold() != u.manifold() {
        return Err(GeomError::ManifoldMismatch(v.manifold(), u.manifold()));
    }
    let mut target = None;
    let mut columns = Vec::with_capacity(u.dim());
    for k in 0..u.dim() {
        let t = parallel_transport(v, &u.column(k))?;
        if target.is_none() {
            target = Some(t.base().clone());
        }
        columns.push(t.vec().to_vec());
    }
    let base = target.unwrap_or_else(|| u.base().clone());
    let mut out = Frame { base, columns };
    out.reorthonormalize();
    Ok(out)
}

/// Like [`transport_frame`] but reports the orthonormality defect before
/// re-orthonormalization, for drift diagnostics.
pub fn transport_frame_with_defect(u: &Frame, v: &Tangent) -> Result<(Frame, f64)> {
    if v.manifold() != u.manifold() {
        return Err(GeomError::ManifoldMismatch(v.manifold(), u.manifold()));
    }
    let mut target = None;
    let mut columns = Vec::with_capacity(u.dim());
    for k in 0..u.dim() {
        let t = parallel_transport(v, &u.column(k))?;
        if target.is_none() {
            target = Some(t.base().clone());
        }
        columns.push(t.vec().to_vec());
    }
    let base = target.unwrap_or_else(|| u.base().clone());
    let mut out = Frame { base, columns };
    let defect_before = out.orthonormality_defect();
    out.reorthonormalize();
    Ok((out, defect_before))
}

/// Re-bases a transported frame onto an exact target point (the transport
/// landing point and `target` must agree up to rounding); keeps columns,
/// snaps the base, re-projects.
pub(crate) fn snap_frame_to(frame: Frame, target: &Point) -> Frame {
    let mut out = Frame {
        base: target.clone(),
        columns: frame.columns,
    };
    out.reorthonormalize();
    out
}

#[derive(Debug, Clone)]
pub struct EquivarianceReport {
    pub max_column_error: f64,
    pub tolerance: f64,
}

impl EquivarianceReport {
    pub fn is_ok(&self) -> bool {
        self.max_column_error <= self.tolerance
    }
}

/// Verify that transport commutes with the constant right action:
/// `transport(u a, v) = transport(u, v) a` within `1e-10`.
pub fn equivariance_check(u: &Frame, v: &Tangent, a: &OrthogonalMatrix) -> Result<EquivarianceReport> {
    let lhs = transport_frame(&u.right_action(a), v)?;
    let rhs = transport_frame(u, v)?.right_action(a);
    let mut err: f64 = 0.0;
    for k in 0..u.dim() {
        err = err.max(
            manifold::sub(&lhs.columns[k], &rhs.columns[k])
                .iter()
                .map(|t| t.abs())
                .fold(0.0, f64::max),
        );
    }
    Ok(EquivarianceReport {
        max_column_error: err,
        tolerance: 1e-10,
    })
}
