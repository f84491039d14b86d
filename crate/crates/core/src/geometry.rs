//! Viewpoint angles, their discretization, and rotation-matrix geometry.
//!
//! Angles are in degrees. A viewpoint maps to the rotation
//! `R = Rz(tilt) · Rx(elevation) · Rz(-azimuth)`; the same definition is
//! used for labels and for the evaluation metric.

use core::f64::consts::PI;
use core::ops::Mul;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("bin {bin} out of range for {n} bins")]
    BinOutOfRange { bin: usize, n: usize },
    #[error("bin count must be positive")]
    ZeroBins,
    #[error("matrix is not a rotation (deviation {0:e})")]
    NotRotation(f64),
}

/// Wraps an angle in degrees into `[0, 360)`.
pub fn wrap_degrees(a: f64) -> f64 {
    let r = libm::fmod(a, 360.0);
    let r = if r < 0.0 { r + 360.0 } else { r };
    // -1e-300 + 360 rounds to 360
    if r >= 360.0 {
        0.0
    } else {
        r
    }
}

/// Width of one bin in degrees.
pub fn bin_width(n: usize) -> f64 {
    360.0 / n as f64
}

/// `floor(angle / (360 / n))` after wrapping into `[0, 360)`.
pub fn angle_to_bin(angle_deg: f64, n: usize) -> usize {
    let b = libm::floor(wrap_degrees(angle_deg) / bin_width(n)) as usize;
    b.min(n - 1)
}

/// Center of bin `b` in degrees.
pub fn bin_center(b: usize, n: usize) -> f64 {
    (b as f64 + 0.5) * bin_width(n)
}

/// Camera viewpoint in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Viewpoint {
    pub azimuth: f64,
    pub elevation: f64,
    pub tilt: f64,
}

impl Viewpoint {
    pub fn new(azimuth: f64, elevation: f64, tilt: f64) -> Self {
        Self {
            azimuth,
            elevation,
            tilt,
        }
    }

    pub fn wrapped(&self) -> Self {
        Self::new(
            wrap_degrees(self.azimuth),
            wrap_degrees(self.elevation),
            wrap_degrees(self.tilt),
        )
    }

    pub fn to_bins(&self, n: usize) -> ViewpointBins {
        ViewpointBins {
            azimuth: angle_to_bin(self.azimuth, n),
            elevation: angle_to_bin(self.elevation, n),
            tilt: angle_to_bin(self.tilt, n),
        }
    }

    pub fn rotation(&self) -> RotationMatrix {
        rotation_from_viewpoint(self)
    }
}

/// Discretized viewpoint: one bin index per angle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ViewpointBins {
    pub azimuth: usize,
    pub elevation: usize,
    pub tilt: usize,
}

impl ViewpointBins {
    pub fn as_array(&self) -> [usize; 3] {
        [self.azimuth, self.elevation, self.tilt]
    }

    pub fn from_array(b: [usize; 3]) -> Self {
        Self {
            azimuth: b[0],
            elevation: b[1],
            tilt: b[2],
        }
    }

    /// Bin-center angles.
    pub fn center(&self, n: usize) -> Viewpoint {
        Viewpoint::new(
            bin_center(self.azimuth, n),
            bin_center(self.elevation, n),
            bin_center(self.tilt, n),
        )
    }

    pub fn in_range(&self, n: usize) -> bool {
        self.as_array().iter().all(|&b| b < n)
    }
}

/// 3x3 rotation matrix, row-major.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationMatrix(pub [[f64; 3]; 3]);

impl RotationMatrix {
    pub const IDENTITY: Self = Self([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    pub fn rx(rad: f64) -> Self {
        let (s, c) = libm::sincos(rad);
        Self([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])
    }

    pub fn ry(rad: f64) -> Self {
        let (s, c) = libm::sincos(rad);
        Self([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    }

    pub fn rz(rad: f64) -> Self {
        let (s, c) = libm::sincos(rad);
        Self([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    }

    pub fn transpose(&self) -> Self {
        let m = &self.0;
        let mut t = [[0.0; 3]; 3];
        for (i, row) in t.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = m[j][i];
            }
        }
        Self(t)
    }

    pub fn trace(&self) -> f64 {
        self.0[0][0] + self.0[1][1] + self.0[2][2]
    }

    pub fn det(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn apply(&self, v: [f64; 3]) -> [f64; 3] {
        let m = &self.0;
        [
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ]
    }

    /// Largest absolute deviation of `RᵀR` from identity and of `det R` from 1.
    pub fn orthonormality_error(&self) -> f64 {
        let p = self.transpose() * *self;
        let mut err = libm::fabs(self.det() - 1.0);
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 1.0 } else { 0.0 };
                err = err.max(libm::fabs(p.0[i][j] - e));
            }
        }
        err
    }
}

impl Mul for RotationMatrix {
    type Output = RotationMatrix;

    fn mul(self, rhs: Self) -> Self {
        let (a, b) = (&self.0, &rhs.0);
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
            }
        }
        RotationMatrix(out)
    }
}

pub fn rotation_from_viewpoint(v: &Viewpoint) -> RotationMatrix {
    let d = PI / 180.0;
    RotationMatrix::rz(v.tilt * d) * RotationMatrix::rx(v.elevation * d) * RotationMatrix::rz(-v.azimuth * d)
}

const ROTATION_TOLERANCE: f64 = 1e-6;

/// Angle of the relative rotation `R1ᵀR2`, in radians within `[0, π]`.
pub fn geodesic_distance(r1: &RotationMatrix, r2: &RotationMatrix) -> Result<f64, GeometryError> {
    for r in [r1, r2] {
        let e = r.orthonormality_error();
        if !(e <= ROTATION_TOLERANCE) {
            return Err(GeometryError::NotRotation(e));
        }
    }
    let c = ((r1.transpose() * *r2).trace() - 1.0) / 2.0;
    Ok(libm::acos(c.clamp(-1.0, 1.0)))
}

/// Geodesic error between two viewpoints, in radians.
pub fn viewpoint_error(a: &Viewpoint, b: &Viewpoint) -> f64 {
    geodesic_distance(&a.rotation(), &b.rotation()).expect("viewpoint rotations are orthonormal")
}

/// Shortest wrap-around distance between two bins, in radians.
pub fn circular_bin_distance(b1: usize, b2: usize, n: usize) -> Result<f64, GeometryError> {
    if n == 0 {
        return Err(GeometryError::ZeroBins);
    }
    for b in [b1, b2] {
        if b >= n {
            return Err(GeometryError::BinOutOfRange { bin: b, n });
        }
    }
    let d = b1.abs_diff(b2);
    Ok(2.0 * PI / n as f64 * d.min(n - d) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_viewpoint_is_identity() {
        assert_eq!(Viewpoint::new(0.0, 0.0, 0.0).rotation(), RotationMatrix::IDENTITY);
    }

    #[test]
    fn half_turn_azimuth_is_pi_away() {
        let r = Viewpoint::new(180.0, 0.0, 0.0).rotation();
        let d = geodesic_distance(&RotationMatrix::IDENTITY, &r).unwrap();
        assert!((d - PI).abs() < 1e-12);
    }

    #[test]
    fn self_distance_is_zero() {
        let r = Viewpoint::new(33.0, 71.0, 350.0).rotation();
        assert_eq!(geodesic_distance(&r, &r).unwrap(), 0.0);
    }

    #[test]
    fn rejects_non_rotation() {
        let mut m = RotationMatrix::IDENTITY;
        m.0[0][0] = 2.0;
        assert!(matches!(
            geodesic_distance(&m, &RotationMatrix::IDENTITY),
            Err(GeometryError::NotRotation(_))
        ));
        m.0[0][0] = -1.0; // reflection: orthogonal but det -1
        assert!(geodesic_distance(&RotationMatrix::IDENTITY, &m).is_err());
    }

    #[test]
    fn circular_distance_examples() {
        assert_eq!(circular_bin_distance(5, 5, 24).unwrap(), 0.0);
        assert!((circular_bin_distance(0, 180, 360).unwrap() - PI).abs() < 1e-15);
        assert!((circular_bin_distance(1, 7, 8).unwrap() - PI / 2.0).abs() < 1e-15);
        assert!(matches!(
            circular_bin_distance(8, 0, 8),
            Err(GeometryError::BinOutOfRange { bin: 8, n: 8 })
        ));
        assert_eq!(circular_bin_distance(0, 0, 0), Err(GeometryError::ZeroBins));
    }

    #[test]
    fn binning_round_trip() {
        for n in [8, 24, 72, 360] {
            for b in 0..n {
                assert_eq!(angle_to_bin(bin_center(b, n), n), b);
            }
        }
        assert_eq!(angle_to_bin(-10.0, 24), 23);
        assert_eq!(angle_to_bin(360.0, 24), 0);
        assert_eq!(angle_to_bin(359.999_999_999, 24), 23);
    }

    #[test]
    fn wrap_handles_negatives() {
        assert_eq!(wrap_degrees(-90.0), 270.0);
        assert_eq!(wrap_degrees(720.0), 0.0);
        assert!(wrap_degrees(-1e-300) < 360.0);
    }
}
