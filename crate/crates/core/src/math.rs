//! Small fixed-size linear algebra, generic over [`Real`].

use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Vec3<S> {
    pub x: S,
    pub y: S,
    pub z: S,
}

impl<S: Real> Vec3<S> {
    #[inline]
    pub fn new(x: S, y: S, z: S) -> Self {
        Self { x, y, z }
    }

    /// Lift plain coordinates into the context of `like`.
    #[inline]
    pub fn lift(like: S, v: [f64; 3]) -> Self {
        Self::new(like.lift(v[0]), like.lift(v[1]), like.lift(v[2]))
    }

    #[inline]
    pub fn dot(self, o: Self) -> S {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    #[inline]
    pub fn cross(self, o: Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    #[inline]
    pub fn norm_sq(self) -> S {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> S {
        self.norm_sq().sqrt()
    }

    #[inline]
    pub fn normalize(self) -> Self {
        self.scale(self.norm().recip())
    }

    #[inline]
    pub fn scale(self, k: S) -> Self {
        Self::new(self.x * k, self.y * k, self.z * k)
    }

    #[inline]
    pub fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }

    #[inline]
    pub fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }

    #[inline]
    pub fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }

    #[inline]
    pub fn to_array(self) -> [S; 3] {
        [self.x, self.y, self.z]
    }

    #[inline]
    pub fn from_array(a: [S; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn values(self) -> [f64; 3] {
        [self.x.value(), self.y.value(), self.z.value()]
    }
}

/// Row-major 3x3 matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat3<S> {
    pub m: [[S; 3]; 3],
}

impl<S: Real> Mat3<S> {
    pub fn from_rows(m: [[S; 3]; 3]) -> Self {
        Self { m }
    }

    pub fn lift(like: S, m: [[f64; 3]; 3]) -> Self {
        Self {
            m: m.map(|row| row.map(|v| like.lift(v))),
        }
    }

    pub fn col(&self, j: usize) -> Vec3<S> {
        Vec3::new(self.m[0][j], self.m[1][j], self.m[2][j])
    }

    pub fn row(&self, i: usize) -> Vec3<S> {
        Vec3::from_array(self.m[i])
    }

    pub fn mul_vec(&self, v: Vec3<S>) -> Vec3<S> {
        Vec3::new(self.row(0).dot(v), self.row(1).dot(v), self.row(2).dot(v))
    }

    /// `selfᵀ v`
    pub fn tr_mul_vec(&self, v: Vec3<S>) -> Vec3<S> {
        Vec3::new(self.col(0).dot(v), self.col(1).dot(v), self.col(2).dot(v))
    }

    pub fn mul(&self, o: &Self) -> Self {
        let mut m = self.m;
        for (i, row) in m.iter_mut().enumerate() {
            for (j, out) in row.iter_mut().enumerate() {
                *out = self.row(i).dot(o.col(j));
            }
        }
        Self { m }
    }

    pub fn transpose(&self) -> Self {
        let mut m = self.m;
        for (i, row) in m.iter_mut().enumerate() {
            for (j, out) in row.iter_mut().enumerate() {
                *out = self.m[j][i];
            }
        }
        Self { m }
    }

    pub fn values(&self) -> [[f64; 3]; 3] {
        self.m.map(|row| row.map(|v| v.value()))
    }
}

/// Rotation matrix of a (not necessarily unit) quaternion `[w, x, y, z]`.
/// The quaternion is normalized first so the result is always orthonormal.
pub fn quat_to_mat<S: Real>(q: [S; 4]) -> Mat3<S> {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])
        .sqrt()
        .recip();
    let (w, x, y, z) = (q[0] * n, q[1] * n, q[2] * n, q[3] * n);
    let one = w.lift(1.0);
    let two = 2.0;
    Mat3::from_rows([
        [
            one - (y * y + z * z) * two,
            (x * y - w * z) * two,
            (x * z + w * y) * two,
        ],
        [
            (x * y + w * z) * two,
            one - (x * x + z * z) * two,
            (y * z - w * x) * two,
        ],
        [
            (x * z - w * y) * two,
            (y * z + w * x) * two,
            one - (x * x + y * y) * two,
        ],
    ])
}

/// Quaternion for a rotation of `angle` radians about the unit `axis`.
pub fn quat_from_axis_angle(axis: [f64; 3], angle: f64) -> [f64; 4] {
    let (s, c) = (libm::sin(angle * 0.5), libm::cos(angle * 0.5));
    [c, axis[0] * s, axis[1] * s, axis[2] * s]
}

pub fn normalize_quat(q: &mut [f64]) {
    let n = libm::sqrt(q.iter().map(|v| v * v).sum::<f64>());
    if n > 0.0 && n.is_finite() {
        q.iter_mut().for_each(|v| *v /= n);
    } else {
        q.copy_from_slice(&[1.0, 0.0, 0.0, 0.0]);
    }
}

pub fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn sub3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn add3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn scale3(a: [f64; 3], k: f64) -> [f64; 3] {
    [a[0] * k, a[1] * k, a[2] * k]
}

pub fn cross3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm3(a: [f64; 3]) -> f64 {
    libm::sqrt(dot3(a, a))
}

pub fn normalize3(a: [f64; 3]) -> [f64; 3] {
    scale3(a, 1.0 / norm3(a))
}

pub fn mat_vec(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [dot3(m[0], v), dot3(m[1], v), dot3(m[2], v)]
}

pub fn mat_tr_vec(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[1][0] * v[1] + m[2][0] * v[2],
        m[0][1] * v[0] + m[1][1] * v[1] + m[2][1] * v[2],
        m[0][2] * v[0] + m[1][2] * v[1] + m[2][2] * v[2],
    ]
}

pub fn mat_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

pub fn transpose(a: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = a[j][i];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quaternion_matrix_is_orthonormal() {
        let m = quat_to_mat([0.3, -0.2, 0.9, 0.1]).values();
        let p = mat_mul(&m, &transpose(&m));
        for (i, row) in p.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((v - e).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn axis_angle_about_z_rotates_x_to_y() {
        let q = quat_from_axis_angle([0.0, 0.0, 1.0], core::f64::consts::FRAC_PI_2);
        let v = mat_vec(&quat_to_mat(q).values(), [1.0, 0.0, 0.0]);
        assert!((v[0]).abs() < 1e-15 && (v[1] - 1.0).abs() < 1e-15);
    }
}
