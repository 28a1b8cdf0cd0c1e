use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::real::{Real, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vec3<S> {
    pub x: S,
    pub y: S,
    pub z: S,
}

impl<S: Scalar> Vec3<S> {
    #[inline]
    pub const fn new(x: S, y: S, z: S) -> Self {
        Self { x, y, z }
    }

    pub fn zero() -> Self {
        Self::new(S::lit(0.0), S::lit(0.0), S::lit(0.0))
    }

    pub fn from_array(a: [S; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn from_slice(a: &[S]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [S; 3] {
        [self.x, self.y, self.z]
    }

    #[inline]
    pub fn dot(self, o: Self) -> S {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    #[inline]
    pub fn norm(self) -> S {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Self {
        self * self.norm().recip()
    }

    pub fn scale(self, s: S) -> Self {
        self * s
    }

    pub fn hadamard(self, o: Self) -> Self {
        Self::new(self.x * o.x, self.y * o.y, self.z * o.z)
    }

    pub fn get(self, i: usize) -> S {
        match i {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }
}

impl<T: Real> Vec3<T> {
    pub fn cast<U: Real>(self) -> Vec3<U> {
        Vec3::new(U::lit(self.x.val()), U::lit(self.y.val()), U::lit(self.z.val()))
    }
}

impl<S: Scalar> Add for Vec3<S> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<S: Scalar> Sub for Vec3<S> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<S: Scalar> Mul<S> for Vec3<S> {
    type Output = Self;
    #[inline]
    fn mul(self, s: S) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }
}

impl<S: Scalar> Neg for Vec3<S> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

/// Row-major 3×3 matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mat3<S> {
    pub m: [[S; 3]; 3],
}

impl<S: Scalar> Mat3<S> {
    pub fn identity() -> Self {
        let o = S::lit(0.0);
        let l = S::lit(1.0);
        Self { m: [[l, o, o], [o, l, o], [o, o, l]] }
    }

    pub fn from_rows(m: [[S; 3]; 3]) -> Self {
        Self { m }
    }

    pub fn from_cols(c0: Vec3<S>, c1: Vec3<S>, c2: Vec3<S>) -> Self {
        Self { m: [[c0.x, c1.x, c2.x], [c0.y, c1.y, c2.y], [c0.z, c1.z, c2.z]] }
    }

    pub fn col(&self, j: usize) -> Vec3<S> {
        Vec3::new(self.m[0][j], self.m[1][j], self.m[2][j])
    }

    pub fn row(&self, i: usize) -> Vec3<S> {
        Vec3::from_array(self.m[i])
    }

    pub fn transpose(&self) -> Self {
        let m = &self.m;
        Self { m: [[m[0][0], m[1][0], m[2][0]], [m[0][1], m[1][1], m[2][1]], [m[0][2], m[1][2], m[2][2]]] }
    }

    #[inline]
    pub fn mul_vec(&self, v: Vec3<S>) -> Vec3<S> {
        Vec3::new(self.row(0).dot(v), self.row(1).dot(v), self.row(2).dot(v))
    }

    pub fn mul_mat(&self, o: &Self) -> Self {
        let mut m = [[S::lit(0.0); 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, e) in row.iter_mut().enumerate() {
                *e = self.m[i][0] * o.m[0][j] + self.m[i][1] * o.m[1][j] + self.m[i][2] * o.m[2][j];
            }
        }
        Self { m }
    }

    pub fn det(&self) -> S {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }
}

impl<T: Real> Mat3<T> {
    pub fn cast<U: Real>(&self) -> Mat3<U> {
        let mut m = [[U::zero(); 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = U::lit(self.m[i][j].val());
            }
        }
        Mat3 { m }
    }

    /// Max deviation of `RᵀR` from identity and of `det R` from one.
    pub fn orthonormality_error(&self) -> f64 {
        let rtr = self.transpose().mul_mat(self);
        let mut err: f64 = (self.det().val() - 1.0).abs();
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { 1.0 } else { 0.0 };
                err = err.max((rtr.m[i][j].val() - target).abs());
            }
        }
        err
    }
}

/// Symmetric 3×3 matrix stored by its upper triangle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sym3<S> {
    pub xx: S,
    pub xy: S,
    pub xz: S,
    pub yy: S,
    pub yz: S,
    pub zz: S,
}

impl<S: Scalar> Sym3<S> {
    pub fn to_mat3(&self) -> Mat3<S> {
        Mat3::from_rows([[self.xx, self.xy, self.xz], [self.xy, self.yy, self.yz], [self.xz, self.yz, self.zz]])
    }

    /// `A · self · Aᵀ`, which is symmetric by construction.
    pub fn congruence(&self, a: &Mat3<S>) -> Sym3<S> {
        let t = a.mul_mat(&self.to_mat3());
        let at = a.transpose();
        let m = t.mul_mat(&at);
        Sym3 { xx: m.m[0][0], xy: m.m[0][1], xz: m.m[0][2], yy: m.m[1][1], yz: m.m[1][2], zz: m.m[2][2] }
    }
}

/// Quaternion `w + xi + yj + zk`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quat<S> {
    pub w: S,
    pub x: S,
    pub y: S,
    pub z: S,
}

impl<S: Scalar> Quat<S> {
    pub const fn new(w: S, x: S, y: S, z: S) -> Self {
        Self { w, x, y, z }
    }

    pub fn identity() -> Self {
        Self::new(S::lit(1.0), S::lit(0.0), S::lit(0.0), S::lit(0.0))
    }

    pub fn from_slice(q: &[S]) -> Self {
        Self::new(q[0], q[1], q[2], q[3])
    }

    pub fn to_array(self) -> [S; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn norm(self) -> S {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn normalized(self) -> Self {
        let inv = self.norm().recip();
        Self::new(self.w * inv, self.x * inv, self.y * inv, self.z * inv)
    }

    pub fn conj(self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    /// Hamilton product `self ⊗ o`.
    pub fn mul(self, o: Self) -> Self {
        Self::new(
            self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        )
    }

    /// Rotation matrix of a unit quaternion.
    pub fn to_mat3(self) -> Mat3<S> {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        let one = S::lit(1.0);
        let two = S::lit(2.0);
        Mat3::from_rows([
            [one - two * (y * y + z * z), two * (x * y - w * z), two * (x * z + w * y)],
            [two * (x * y + w * z), one - two * (x * x + z * z), two * (y * z - w * x)],
            [two * (x * z - w * y), two * (y * z + w * x), one - two * (x * x + y * y)],
        ])
    }

    pub fn rotate(self, v: Vec3<S>) -> Vec3<S> {
        self.to_mat3().mul_vec(v)
    }
}

impl<T: Real> Quat<T> {
    pub fn cast<U: Real>(self) -> Quat<U> {
        Quat::new(U::lit(self.w.val()), U::lit(self.x.val()), U::lit(self.y.val()), U::lit(self.z.val()))
    }
}

impl Quat<f64> {
    pub fn from_axis_angle(axis: Vec3<f64>, angle: f64) -> Self {
        let a = axis.normalized();
        let (s, c) = (0.5 * angle).sin_cos();
        Self::new(c, a.x * s, a.y * s, a.z * s)
    }

    /// Shortest-arc rotation taking unit `from` onto unit `to`.
    pub fn between(from: Vec3<f64>, to: Vec3<f64>) -> Self {
        let d = from.dot(to);
        if d < -1.0 + 1e-12 {
            // Antiparallel: rotate by π about any perpendicular axis.
            let mut axis = Vec3::new(1.0, 0.0, 0.0).cross(from);
            if axis.norm() < 1e-6 {
                axis = Vec3::new(0.0, 1.0, 0.0).cross(from);
            }
            return Self::from_axis_angle(axis, std::f64::consts::PI);
        }
        let c = from.cross(to);
        Quat::new(1.0 + d, c.x, c.y, c.z).normalized()
    }

    /// Spherical linear interpolation along the shorter arc.
    pub fn slerp(self, other: Self, t: f64) -> Self {
        let a = self.normalized();
        let mut b = other.normalized();
        let mut cos = a.w * b.w + a.x * b.x + a.y * b.y + a.z * b.z;
        if cos < 0.0 {
            b = Quat::new(-b.w, -b.x, -b.y, -b.z);
            cos = -cos;
        }
        let (wa, wb) = if cos > 1.0 - 1e-12 {
            (1.0 - t, t)
        } else {
            let theta = cos.acos();
            let s = theta.sin();
            (((1.0 - t) * theta).sin() / s, (t * theta).sin() / s)
        };
        Quat::new(wa * a.w + wb * b.w, wa * a.x + wb * b.x, wa * a.y + wb * b.y, wa * a.z + wb * b.z).normalized()
    }
}

/// Rigid transform `x ↦ R x + t` with the rotation held as a unit quaternion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Quat<f64>,
    pub translation: Vec3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self { rotation: Quat::identity(), translation: Vec3::zero() }
    }

    pub fn apply(&self, p: Vec3<f64>) -> Vec3<f64> {
        self.rotation.rotate(p) + self.translation
    }
}
