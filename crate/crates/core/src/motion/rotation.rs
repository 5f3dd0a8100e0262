//! Continuous 6D rotation representation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major 3×3 matrix, `m[row][col]`.
pub type Mat3 = [[f64; 3]; 3];

/// First two columns of a rotation matrix, column-major:
/// `(r00, r10, r20, r01, r11, r21)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rotation6D(pub [f64; 6]);

impl Rotation6D {
    pub const IDENTITY: Rotation6D = Rotation6D([1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);

    pub fn from_matrix(m: &Mat3) -> Self {
        Rotation6D([m[0][0], m[1][0], m[2][0], m[0][1], m[1][1], m[2][1]])
    }

    /// Gram–Schmidt on the two stored columns; the third is their cross product.
    pub fn to_matrix(&self) -> Result<Mat3> {
        let a = [self.0[0], self.0[1], self.0[2]];
        let b = [self.0[3], self.0[4], self.0[5]];
        let na = norm3(a);
        if !(na > f64::EPSILON) || !na.is_finite() {
            return Err(Error::Singular("first 6D column has zero norm".into()));
        }
        let c0 = scale3(a, 1.0 / na);
        let proj = dot3(c0, b);
        let ortho = [b[0] - proj * c0[0], b[1] - proj * c0[1], b[2] - proj * c0[2]];
        let nb = norm3(ortho);
        // Relative test so that scaled inputs behave the same.
        if !(nb > 1e-12 * norm3(b).max(f64::MIN_POSITIVE)) || nb == 0.0 {
            return Err(Error::Singular("6D columns are parallel".into()));
        }
        let c1 = scale3(ortho, 1.0 / nb);
        let c2 = cross3(c0, c1);
        Ok([
            [c0[0], c1[0], c2[0]],
            [c0[1], c1[1], c2[1]],
            [c0[2], c1[2], c2[2]],
        ])
    }
}

pub fn rot6d_to_matrix(r: &Rotation6D) -> Result<Mat3> {
    r.to_matrix()
}

pub fn matrix_to_rot6d(m: &Mat3) -> Rotation6D {
    Rotation6D::from_matrix(m)
}

/// Rotation by `angle` radians about coordinate axis `axis`.
pub fn axis_rotation(axis: usize, angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    match axis {
        0 => [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]],
        1 => [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]],
        _ => [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]],
    }
}

pub fn mat3_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (r, row) in out.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|k| a[r][k] * b[k][c]).sum();
        }
    }
    out
}

pub fn det3(m: &Mat3) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// `‖RᵀR − I‖∞` (largest absolute entry).
pub fn orthonormality_error(m: &Mat3) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let v: f64 = (0..3).map(|k| m[k][i] * m[k][j]).sum();
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((v - target).abs());
        }
    }
    worst
}

fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm3(a: [f64; 3]) -> f64 {
    dot3(a, a).sqrt()
}

fn scale3(a: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn cross3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}
