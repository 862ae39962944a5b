//! Small fixed-size linear algebra, the physical/normalized coordinate frame,
//! and the [`DeformationField`] abstraction shared by networks, analytic
//! phantom maps and synthetic test fields.

use serde::{Deserialize, Serialize};

use crate::autodiff::Real;

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

pub const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

pub fn det3<T: Real>(m: &[[T; 3]; 3]) -> T {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Cofactor matrix, `cof(F) = det(F) F^{-T}`.
pub fn cofactor(m: &Mat3) -> Mat3 {
    [
        [
            m[1][1] * m[2][2] - m[1][2] * m[2][1],
            m[1][2] * m[2][0] - m[1][0] * m[2][2],
            m[1][0] * m[2][1] - m[1][1] * m[2][0],
        ],
        [
            m[0][2] * m[2][1] - m[0][1] * m[2][2],
            m[0][0] * m[2][2] - m[0][2] * m[2][0],
            m[0][1] * m[2][0] - m[0][0] * m[2][1],
        ],
        [
            m[0][1] * m[1][2] - m[0][2] * m[1][1],
            m[0][2] * m[1][0] - m[0][0] * m[1][2],
            m[0][0] * m[1][1] - m[0][1] * m[1][0],
        ],
    ]
}

pub fn matmul(a: &Mat3, b: &Mat3) -> Mat3 {
    std::array::from_fn(|i| std::array::from_fn(|j| (0..3).map(|k| a[i][k] * b[k][j]).sum()))
}

pub fn norm(v: Vec3) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Axis-aligned imaging domain `[0, extent]` in millimeters. The network sees
/// coordinates mapped affinely onto `[-1, 1]^3`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub extent: Vec3,
}

impl Domain {
    pub fn new(extent: Vec3) -> Self {
        Domain { extent }
    }

    /// Per-axis factor from normalized to physical lengths.
    pub fn half_extent(&self) -> Vec3 {
        self.extent.map(|e| 0.5 * e)
    }

    pub fn to_normalized(&self, p: Vec3) -> Vec3 {
        std::array::from_fn(|i| 2.0 * p[i] / self.extent[i] - 1.0)
    }

    pub fn to_physical(&self, x: Vec3) -> Vec3 {
        std::array::from_fn(|i| (x[i] + 1.0) * 0.5 * self.extent[i])
    }

    /// Converts a Jacobian of normalized displacement w.r.t. normalized
    /// coordinates into the physical deformation gradient `I + S du/dx S^-1`.
    pub fn physical_gradient(&self, du_dx: &Mat3) -> Mat3 {
        let s = self.half_extent();
        std::array::from_fn(|i| {
            std::array::from_fn(|j| IDENTITY[i][j] + s[i] * du_dx[i][j] / s[j])
        })
    }
}

/// A spatio-temporal map from reference to template coordinates, both
/// physical.
pub trait DeformationField {
    fn map_points(&self, points: &[Vec3], t: f64) -> Vec<Vec3>;

    /// Deformation gradients `d phi / d X` in physical coordinates.
    fn gradients(&self, points: &[Vec3], t: f64) -> Vec<Mat3>;
}

/// `phi(X) = X + t (A X + c)`; the time factor makes `t = 0` the identity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineField {
    pub linear: Mat3,
    pub offset: Vec3,
}

impl AffineField {
    pub fn identity() -> Self {
        AffineField {
            linear: [[0.0; 3]; 3],
            offset: [0.0; 3],
        }
    }

    pub fn translation(offset: Vec3) -> Self {
        AffineField {
            linear: [[0.0; 3]; 3],
            offset,
        }
    }

    /// Uniform scaling `phi(X) = c X` about the origin at `t = 1`.
    pub fn scaling(c: f64) -> Self {
        let mut linear = [[0.0; 3]; 3];
        for (i, row) in linear.iter_mut().enumerate() {
            row[i] = c - 1.0;
        }
        AffineField {
            linear,
            offset: [0.0; 3],
        }
    }
}

impl DeformationField for AffineField {
    fn map_points(&self, points: &[Vec3], t: f64) -> Vec<Vec3> {
        points
            .iter()
            .map(|p| {
                std::array::from_fn(|i| {
                    let ax: f64 = (0..3).map(|k| self.linear[i][k] * p[k]).sum();
                    p[i] + t * (ax + self.offset[i])
                })
            })
            .collect()
    }

    fn gradients(&self, points: &[Vec3], t: f64) -> Vec<Mat3> {
        let f: Mat3 =
            std::array::from_fn(|i| std::array::from_fn(|j| IDENTITY[i][j] + t * self.linear[i][j]));
        vec![f; points.len()]
    }
}
