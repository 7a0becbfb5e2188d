//! Six-parameter camera poses: XYZ intrinsic Euler angles plus a translation.

use nalgebra::{Matrix3, Rotation3, Vector3};

/// Rigid transform mapping camera coordinates into a reference frame,
/// `x_ref = R(rotation)·x_cam + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PoseVector {
    /// Euler angles in radians, applied as `Rx·Ry·Rz`.
    pub rotation: [f64; 3],
    pub translation: [f64; 3],
}

/// `Rx(r[0])·Ry(r[1])·Rz(r[2])`.
pub fn euler_to_matrix(r: [f64; 3]) -> Matrix3<f64> {
    let (sa, ca) = r[0].sin_cos();
    let (sb, cb) = r[1].sin_cos();
    let (sc, cc) = r[2].sin_cos();
    let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, ca, -sa, 0.0, sa, ca);
    let ry = Matrix3::new(cb, 0.0, sb, 0.0, 1.0, 0.0, -sb, 0.0, cb);
    let rz = Matrix3::new(cc, -sc, 0.0, sc, cc, 0.0, 0.0, 0.0, 1.0);
    rx * ry * rz
}

/// Inverse of [`euler_to_matrix`] for the branch `|r[1]| ≤ π/2`.
pub fn matrix_to_euler(m: &Matrix3<f64>) -> [f64; 3] {
    let b = m[(0, 2)].clamp(-1.0, 1.0).asin();
    let a = (-m[(1, 2)]).atan2(m[(2, 2)]);
    let c = (-m[(0, 1)]).atan2(m[(0, 0)]);
    [a, b, c]
}

/// Geodesic angle of a rotation matrix, in radians.
pub fn rotation_angle(m: &Matrix3<f64>) -> f64 {
    Rotation3::from_matrix_unchecked(*m).angle()
}

impl PoseVector {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn new(rotation: [f64; 3], translation: [f64; 3]) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    /// Inverse of `as_array`: `[rx, ry, rz, tx, ty, tz]`.
    pub fn from_array(v: [f64; 6]) -> Self {
        Self::new([v[0], v[1], v[2]], [v[3], v[4], v[5]])
    }

    pub fn as_array(&self) -> [f64; 6] {
        let (r, t) = (self.rotation, self.translation);
        [r[0], r[1], r[2], t[0], t[1], t[2]]
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        euler_to_matrix(self.rotation)
    }

    pub fn translation_vector(&self) -> Vector3<f64> {
        Vector3::from(self.translation)
    }

    fn from_parts(r: &Matrix3<f64>, t: &Vector3<f64>) -> Self {
        Self::new(matrix_to_euler(r), [t.x, t.y, t.z])
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.matrix() * p + self.translation_vector()
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &PoseVector) -> PoseVector {
        let r1 = self.matrix();
        let r = r1 * other.matrix();
        let t = r1 * other.translation_vector() + self.translation_vector();
        Self::from_parts(&r, &t)
    }

    pub fn inverse(&self) -> PoseVector {
        let rt = self.matrix().transpose();
        let t = -(rt * self.translation_vector());
        Self::from_parts(&rt, &t)
    }

    /// This pose re-expressed in the camera frame of `reference`.
    pub fn relative_to(&self, reference: &PoseVector) -> PoseVector {
        reference.inverse().compose(self)
    }

    pub fn is_identity(&self) -> bool {
        self.as_array().iter().all(|&v| v == 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn zero_angles_give_identity() {
        assert_eq!(euler_to_matrix([0.0; 3]), Matrix3::identity());
    }

    #[test]
    fn quarter_turn_about_z_maps_x_to_y() {
        let y = euler_to_matrix([0.0, 0.0, FRAC_PI_2]) * Vector3::x();
        assert!((y - Vector3::y()).norm() < 1e-15);
    }

    #[test]
    fn random_rotations_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let r = [
                rng.gen_range(-3.2..3.2),
                rng.gen_range(-3.2..3.2),
                rng.gen_range(-3.2..3.2),
            ];
            let m = euler_to_matrix(r);
            assert!((m * m.transpose() - Matrix3::identity()).abs().max() < 1e-12);
            assert!((m.determinant() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn euler_round_trip_on_principal_branch() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let r = [
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-1.5..1.5),
                rng.gen_range(-3.0..3.0),
            ];
            let back = matrix_to_euler(&euler_to_matrix(r));
            for k in 0..3 {
                assert!((back[k] - r[k]).abs() < 1e-9, "{r:?} vs {back:?}");
            }
        }
    }

    #[test]
    fn relative_pose_of_self_is_identity() {
        let p = PoseVector::new([0.1, -0.2, 0.05], [0.3, 0.0, -1.0]);
        let rel = p.relative_to(&p);
        assert!(rel.as_array().iter().all(|v| v.abs() < 1e-12), "{rel:?}");
    }

    #[test]
    fn compose_with_inverse_round_trips_points() {
        let p = PoseVector::new([0.3, 0.1, -0.4], [1.0, 2.0, 3.0]);
        let x = Vector3::new(0.5, -0.25, 4.0);
        let back = p.inverse().transform_point(&p.transform_point(&x));
        assert!((back - x).norm() < 1e-12);
    }
}
