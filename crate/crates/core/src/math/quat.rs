//! Unit quaternions, Hamilton convention, stored scalar-first `(w, x, y, z)`.

use serde::{Deserialize, Serialize};

use super::tape::Real;
use super::vec::{Mat3, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Default for Quat {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Quat {
    pub const IDENTITY: Quat = Quat {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quat { w, x, y, z }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Quat::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        let n = super::vec::norm(axis);
        let (s, c) = (0.5 * angle).sin_cos();
        Quat::new(c, axis[0] / n * s, axis[1] / n * s, axis[2] / n * s)
    }

    /// Quaternion of an axis-angle vector whose length is the angle.
    pub fn from_rotation_vector(rv: Vec3) -> Self {
        let angle = super::vec::norm(rv);
        if angle < 1e-12 {
            return Quat::new(1.0, 0.5 * rv[0], 0.5 * rv[1], 0.5 * rv[2]).normalized();
        }
        Self::from_axis_angle(rv, angle)
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Self {
        let n = self.norm();
        Quat::new(self.w / n, self.x / n, self.y / n, self.z / n)
    }

    pub fn conjugate(self) -> Self {
        Quat::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn neg(self) -> Self {
        Quat::new(-self.w, -self.x, -self.y, -self.z)
    }

    pub fn dot(self, o: Quat) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    /// Hamilton product `self ⊗ rhs`.
    pub fn mul(self, rhs: Quat) -> Quat {
        Quat::from_array(quat_mul(self.to_array(), rhs.to_array()))
    }

    /// Representative of the same rotation with a nonnegative scalar part.
    pub fn canonical(self) -> Self {
        if self.w < 0.0 {
            self.neg()
        } else {
            self
        }
    }

    /// `self` or `-self`, whichever lies in the hemisphere of `reference`.
    pub fn aligned_to(self, reference: Quat) -> Self {
        if self.dot(reference) < 0.0 {
            self.neg()
        } else {
            self
        }
    }

    pub fn to_mat(self) -> Mat3 {
        quat_to_mat(self.to_array()).map(|r| r.map(f64::value))
    }

    pub fn rotate(self, v: Vec3) -> Vec3 {
        super::vec::mat_vec(&self.to_mat(), v)
    }

    /// Shepperd's method; the result has a nonnegative scalar part.
    pub fn from_mat(m: &Mat3) -> Self {
        let tr = m[0][0] + m[1][1] + m[2][2];
        let q = if tr > 0.0 {
            let s = (tr + 1.0).sqrt() * 2.0;
            Quat::new(
                0.25 * s,
                (m[2][1] - m[1][2]) / s,
                (m[0][2] - m[2][0]) / s,
                (m[1][0] - m[0][1]) / s,
            )
        } else if m[0][0] > m[1][1] && m[0][0] > m[2][2] {
            let s = (1.0 + m[0][0] - m[1][1] - m[2][2]).sqrt() * 2.0;
            Quat::new(
                (m[2][1] - m[1][2]) / s,
                0.25 * s,
                (m[0][1] + m[1][0]) / s,
                (m[0][2] + m[2][0]) / s,
            )
        } else if m[1][1] > m[2][2] {
            let s = (1.0 + m[1][1] - m[0][0] - m[2][2]).sqrt() * 2.0;
            Quat::new(
                (m[0][2] - m[2][0]) / s,
                (m[0][1] + m[1][0]) / s,
                0.25 * s,
                (m[1][2] + m[2][1]) / s,
            )
        } else {
            let s = (1.0 + m[2][2] - m[0][0] - m[1][1]).sqrt() * 2.0;
            Quat::new(
                (m[1][0] - m[0][1]) / s,
                (m[0][2] + m[2][0]) / s,
                (m[1][2] + m[2][1]) / s,
                0.25 * s,
            )
        };
        q.normalized().canonical()
    }

    pub fn is_finite(self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Hamilton product on scalar-first arrays.
#[inline]
pub fn quat_mul<S: Real>(a: [S; 4], b: [S; 4]) -> [S; 4] {
    let [aw, ax, ay, az] = a;
    let [bw, bx, by, bz] = b;
    [
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ]
}

#[inline]
pub fn quat_normalize<S: Real>(q: [S; 4]) -> [S; 4] {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
}

#[inline]
pub fn quat_dot<S: Real>(a: [S; 4], b: [S; 4]) -> S {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3]
}

/// Rotation matrix of `q`, renormalising first. Row-major; the columns are
/// the rotated basis vectors.
pub fn quat_to_mat<S: Real>(q: [S; 4]) -> [[S; 3]; 3] {
    let [w, x, y, z] = quat_normalize(q);
    let two = S::cst(2.0);
    let one = S::one();
    [
        [
            one - two * (y * y + z * z),
            two * (x * y - w * z),
            two * (x * z + w * y),
        ],
        [
            two * (x * y + w * z),
            one - two * (x * x + z * z),
            two * (y * z - w * x),
        ],
        [
            two * (x * z - w * y),
            two * (y * z + w * x),
            one - two * (x * x + y * y),
        ],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::tape::{central_difference, relative_error, GradTape};
    use crate::math::vec::{det, mat_mul, transpose, IDENTITY3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_unit(rng: &mut impl Rng) -> Quat {
        loop {
            let q = Quat::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            if q.norm() > 0.1 {
                return q.normalized();
            }
        }
    }

    fn close(a: Quat, b: Quat, tol: f64) -> bool {
        a.to_array()
            .iter()
            .zip(b.to_array())
            .all(|(x, y)| (x - y).abs() < tol)
    }

    #[test]
    fn identity_is_neutral() {
        let q = Quat::new(0.3, -0.2, 0.9, 0.1).normalized();
        assert!(close(Quat::IDENTITY.mul(q), q, 1e-15));
        assert!(close(q.mul(Quat::IDENTITY), q, 1e-15));
    }

    #[test]
    fn conjugate_is_inverse_for_unit() {
        let q = Quat::new(0.3, -0.2, 0.9, 0.1).normalized();
        assert!(close(q.mul(q.conjugate()), Quat::IDENTITY, 1e-12));
    }

    #[test]
    fn quarter_turns_about_z_compose_to_half_turn() {
        let qz = Quat::from_axis_angle([0.0, 0.0, 1.0], std::f64::consts::FRAC_PI_2);
        let got = qz.mul(qz);
        // oracle: compose the rotation matrices and convert back
        let m = mat_mul(&qz.to_mat(), &qz.to_mat());
        let want = Quat::from_mat(&m);
        assert!(close(got.canonical(), want, 1e-12));
        assert!(close(got.canonical(), Quat::new(0.0, 0.0, 0.0, 1.0), 1e-12));
    }

    #[test]
    fn to_mat_known_cases() {
        let m = Quat::IDENTITY.to_mat();
        assert_eq!(m, IDENTITY3);
        let m = Quat::new(0.0, 1.0, 0.0, 0.0).to_mat();
        let want = [[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((m[i][j] - want[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn to_mat_is_orthonormal_for_random_unit_quats() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let q = random_unit(&mut rng);
            let m = q.to_mat();
            let rtr = mat_mul(&transpose(&m), &m);
            for i in 0..3 {
                for j in 0..3 {
                    assert!((rtr[i][j] - IDENTITY3[i][j]).abs() < 1e-6);
                }
            }
            assert!((det(&m) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn to_mat_renormalizes_slightly_off_unit_input() {
        let q = Quat::new(0.5, 0.5, 0.5, 0.5 + 5e-5);
        assert!((det(&q.to_mat()) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn mat_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let q = random_unit(&mut rng).canonical();
            assert!(close(Quat::from_mat(&q.to_mat()), q, 1e-9));
        }
    }

    #[test]
    fn product_is_associative_and_unit() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let (a, b, c) = (
                random_unit(&mut rng),
                random_unit(&mut rng),
                random_unit(&mut rng),
            );
            assert!(close(a.mul(b).mul(c), a.mul(b.mul(c)), 1e-6));
            assert!((a.mul(b).norm() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn mul_and_to_mat_pass_gradient_contract() {
        let x0 = [0.4, -0.3, 0.8, 0.2, 0.1, 0.7, -0.5, 0.3];
        let weights = [0.3, -1.1, 0.7, 0.2, -0.4, 0.9, 1.3, -0.6, 0.5];
        let f = |p: &[f64]| {
            let q = quat_mul([p[0], p[1], p[2], p[3]], [p[4], p[5], p[6], p[7]]);
            let m = quat_to_mat(q);
            m.iter()
                .flatten()
                .zip(weights)
                .map(|(a, w)| a * w)
                .sum::<f64>()
        };
        let tape = GradTape::new();
        let v: Vec<_> = x0.iter().map(|&x| tape.var(x)).collect();
        let q = quat_mul([v[0], v[1], v[2], v[3]], [v[4], v[5], v[6], v[7]]);
        let m = quat_to_mat(q);
        let seeds: Vec<_> = m.iter().flatten().copied().zip(weights).collect();
        let adj = tape.backward(&seeds);
        for i in 0..8 {
            let num = central_difference(f, &x0, i, 1e-4);
            assert!(relative_error(adj.of(v[i]), num) < 1e-3, "param {i}");
        }
    }
}
