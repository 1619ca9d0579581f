use crate::error::{RegError, Result};

/// Homogeneous 3x3 planar transform; bottom row fixed to (0, 0, 1).
///
/// Coordinates are (x = column, y = row) in pixels. In the backward-mapping
/// convention used throughout, a transform attached to a registration maps
/// fixed-image coordinates into moving-image coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine2D {
    m: [[f64; 3]; 3],
}

impl Affine2D {
    pub fn new(m: [[f64; 3]; 3]) -> Result<Self> {
        if m[2] != [0.0, 0.0, 1.0] {
            return Err(RegError::InvalidParameter(
                "affine bottom row must be (0, 0, 1)".into(),
            ));
        }
        let a = Self { m };
        if a.det2() == 0.0 {
            return Err(RegError::SingularTransform(
                "upper-left 2x2 block is singular".into(),
            ));
        }
        Ok(a)
    }

    pub fn identity() -> Self {
        Self {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self {
            m: [[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]],
        }
    }

    pub fn scaling(s: f64) -> Self {
        Self {
            m: [[s, 0.0, 0.0], [0.0, s, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    /// Rotation by `angle` radians about `center` (counterclockwise in (x right, y down)
    /// pixel coordinates this appears clockwise on screen; the convention only has to
    /// be self-consistent).
    pub fn rotation_about(angle: f64, center: (f64, f64)) -> Self {
        let (s, c) = angle.sin_cos();
        let (cx, cy) = center;
        Self {
            m: [
                [c, -s, cx - c * cx + s * cy],
                [s, c, cy - s * cx - c * cy],
                [0.0, 0.0, 1.0],
            ],
        }
    }

    /// Similarity transform: uniform scale, rotation about the origin, then translation.
    pub fn similarity(scale: f64, angle: f64, tx: f64, ty: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self {
            m: [
                [scale * c, -scale * s, tx],
                [scale * s, scale * c, ty],
                [0.0, 0.0, 1.0],
            ],
        }
    }

    #[inline]
    pub fn matrix(&self) -> &[[f64; 3]; 3] {
        &self.m
    }

    #[inline]
    pub fn det2(&self) -> f64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    #[inline]
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.m[0][0] * x + self.m[0][1] * y + self.m[0][2],
            self.m[1][0] * x + self.m[1][1] * y + self.m[1][2],
        )
    }

    /// Composition: `self.compose(&inner)` maps p through `inner` first, then `self`.
    pub fn compose(&self, inner: &Affine2D) -> Affine2D {
        let a = &self.m;
        let b = &inner.m;
        let mut m = [[0.0; 3]; 3];
        for (i, row) in m.iter_mut().enumerate().take(2) {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
            }
        }
        m[2] = [0.0, 0.0, 1.0];
        Affine2D { m }
    }

    pub fn inverse(&self) -> Result<Affine2D> {
        let det = self.det2();
        if det.abs() < 1e-300 {
            return Err(RegError::SingularTransform(
                "cannot invert affine with zero determinant".into(),
            ));
        }
        let [a, b, tx] = self.m[0];
        let [c, d, ty] = self.m[1];
        let ia = d / det;
        let ib = -b / det;
        let ic = -c / det;
        let id = a / det;
        Ok(Affine2D {
            m: [
                [ia, ib, -(ia * tx + ib * ty)],
                [ic, id, -(ic * tx + id * ty)],
                [0.0, 0.0, 1.0],
            ],
        })
    }

    /// Conjugate this transform by a uniform coordinate scaling: returns the same
    /// geometric mapping expressed in coordinates `scale_ratio` times larger.
    /// Used to carry transforms between working resolutions.
    pub fn rescaled(&self, scale_ratio: f64) -> Affine2D {
        let mut m = self.m;
        m[0][2] *= scale_ratio;
        m[1][2] *= scale_ratio;
        Affine2D { m }
    }

    /// Scale factor of the linear part (square root of |det|).
    pub fn scale_factor(&self) -> f64 {
        self.det2().abs().sqrt()
    }
}
