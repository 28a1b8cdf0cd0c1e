//! Vector, rotation and camera math plus the per-Gaussian geometric operators.
//!
//! Everything here is a pure function over [`Scalar`], so the pipeline can
//! evaluate it on dual numbers to obtain exact Jacobians.

mod linalg;
pub mod sh;

use serde::{Deserialize, Serialize};

pub use linalg::{Mat3, Pose, Quat, Sym3, Vec3};
pub use sh::{sh_basis, sh_eval, sh_len, MAX_SH_DEGREE};

use crate::error::{Error, Result};
use crate::real::{Real, Scalar};

/// Screen-space low-pass term added to every projected covariance, in px².
pub const LOW_PASS: f64 = 0.3;
/// Splats with camera-frame depth at or below this are culled.
pub const NEAR_PLANE: f64 = 0.01;
/// Splats whose centers lie outside this multiple of the half field of view
/// are culled; near the camera plane their footprints blow up.
pub const FRUSTUM_GUARD: f64 = 1.3;

/// A direction validated to unit length.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnitVec3<T>(Vec3<T>);

impl<T: Real> UnitVec3<T> {
    pub fn new(v: Vec3<T>) -> Result<Self> {
        let n = v.norm().val();
        if (n - 1.0).abs() > T::UNIT_TOL {
            return Err(Error::invalid(format!("expected a unit vector, got norm {n}")));
        }
        Ok(Self(v))
    }

    pub fn normalize(v: Vec3<T>) -> Result<Self> {
        let n = v.norm().val();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::DegenerateGeometry("cannot normalize a zero-length vector".into()));
        }
        Ok(Self(v.normalized()))
    }

    pub fn get(self) -> Vec3<T> {
        self.0
    }
}

/// Mirror `v` about `n`: `2(n·v)n − v`.
#[inline]
pub fn reflect_raw<S: Scalar>(n: Vec3<S>, v: Vec3<S>) -> Vec3<S> {
    n * (S::lit(2.0) * n.dot(v)) - v
}

pub fn reflect<T: Real>(n: UnitVec3<T>, v: UnitVec3<T>) -> UnitVec3<T> {
    UnitVec3(reflect_raw(n.0, v.0))
}

/// `Σ = R diag(exp(log_scale))² Rᵀ`. The quaternion is normalized first, so
/// raw optimizer parameters can be passed directly.
pub fn covariance_from<S: Scalar>(log_scale: Vec3<S>, rotation: Quat<S>) -> Sym3<S> {
    let r = rotation.normalized().to_mat3();
    let s2 = [(S::lit(2.0) * log_scale.x).exp(), (S::lit(2.0) * log_scale.y).exp(), (S::lit(2.0) * log_scale.z).exp()];
    let e = |i: usize, j: usize| r.m[i][0] * r.m[j][0] * s2[0] + r.m[i][1] * r.m[j][1] * s2[1] + r.m[i][2] * r.m[j][2] * s2[2];
    Sym3 { xx: e(0, 0), xy: e(0, 1), xz: e(0, 2), yy: e(1, 1), yz: e(1, 2), zz: e(2, 2) }
}

/// Index of the smallest scale; ties go to the lowest index.
pub fn shortest_axis<S: Scalar>(log_scale: Vec3<S>) -> usize {
    let mut best = 0;
    for i in 1..3 {
        if log_scale.get(i).val() < log_scale.get(best).val() {
            best = i;
        }
    }
    best
}

/// Shortest-axis normal oriented toward the camera. Unchecked variant used by
/// the pipeline; the orientation sign is taken from primal values.
pub fn shortest_axis_normal_raw<S: Scalar>(
    log_scale: Vec3<S>,
    rotation: Quat<S>,
    gaussian_center: Vec3<S>,
    camera_center: Vec3<S>,
) -> Vec3<S> {
    let axis = rotation.normalized().to_mat3().col(shortest_axis(log_scale));
    if axis.dot(camera_center - gaussian_center).val() < 0.0 {
        -axis
    } else {
        axis
    }
}

pub fn shortest_axis_normal<T: Real>(
    log_scale: Vec3<T>,
    rotation: Quat<T>,
    gaussian_center: Vec3<T>,
    camera_center: Vec3<T>,
) -> Result<UnitVec3<T>> {
    if (camera_center - gaussian_center).norm().val() == 0.0 {
        return Err(Error::DegenerateGeometry("camera center coincides with the Gaussian center".into()));
    }
    Ok(UnitVec3(shortest_axis_normal_raw(log_scale, rotation, gaussian_center, camera_center)))
}

/// Pinhole camera. `world_to_camera` maps world points into a frame looking
/// down +z with +x right and +y down; pixel centers sit at half-integers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub rotation: Mat3<f64>,
    pub translation: Vec3<f64>,
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("image size must be non-zero"));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64 && self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(Error::invalid("principal point outside the image"));
        }
        let err = self.rotation.orthonormality_error();
        if err > 1e-9 {
            return Err(Error::invalid(format!("camera rotation is not a proper rotation (error {err:e})")));
        }
        Ok(())
    }

    /// Camera looking from `eye` toward `target`, with `up` roughly up in the image.
    pub fn look_at(
        eye: Vec3<f64>,
        target: Vec3<f64>,
        up: Vec3<f64>,
        width: usize,
        height: usize,
        fx: f64,
        fy: f64,
    ) -> Self {
        let forward = (target - eye).normalized();
        let right = forward.cross(up).normalized();
        let down = forward.cross(right);
        let rotation = Mat3::from_rows([right.to_array(), down.to_array(), forward.to_array()]);
        let translation = -rotation.mul_vec(eye);
        Self {
            fx,
            fy,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
            rotation,
            translation,
        }
    }

    pub fn center(&self) -> Vec3<f64> {
        -self.rotation.transpose().mul_vec(self.translation)
    }

    pub fn to_camera<S: Scalar>(&self, p: Vec3<S>) -> Vec3<S> {
        let r = self.rotation_as::<S>();
        r.mul_vec(p) + Vec3::new(S::lit(self.translation.x), S::lit(self.translation.y), S::lit(self.translation.z))
    }

    pub fn rotation_as<S: Scalar>(&self) -> Mat3<S> {
        let mut m = [[S::lit(0.0); 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, e) in row.iter_mut().enumerate() {
                *e = S::lit(self.rotation.m[i][j]);
            }
        }
        Mat3 { m }
    }

    /// World-space direction of the ray through continuous pixel coordinates.
    pub fn ray_direction(&self, u: f64, v: f64) -> Vec3<f64> {
        let d = Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0);
        self.rotation.transpose().mul_vec(d).normalized()
    }
}

/// A 3D Gaussian projected to the image plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Splat2D<S> {
    pub mean: [S; 2],
    /// Symmetric covariance `(xx, xy, yy)` in px², low-pass term included.
    pub cov: [S; 3],
    /// Camera-frame z.
    pub depth: S,
}

/// First-order (EWA) projection of a 3D Gaussian. Returns `None` when the
/// center is at or behind the near plane.
pub fn project_gaussian<S: Scalar>(center: Vec3<S>, cov: &Sym3<S>, camera: &Camera) -> Option<Splat2D<S>> {
    let pc = camera.to_camera(center);
    if pc.z.val() <= NEAR_PLANE {
        return None;
    }
    let fx = S::lit(camera.fx);
    let fy = S::lit(camera.fy);
    let (zx, zy) = (pc.x.val() / pc.z.val(), pc.y.val() / pc.z.val());
    let lim_x = FRUSTUM_GUARD * camera.cx.max(camera.width as f64 - camera.cx) / camera.fx;
    let lim_y = FRUSTUM_GUARD * camera.cy.max(camera.height as f64 - camera.cy) / camera.fy;
    if zx.abs() > lim_x || zy.abs() > lim_y {
        return None;
    }
    let iz = pc.z.recip();
    let mean = [fx * pc.x * iz + S::lit(camera.cx), fy * pc.y * iz + S::lit(camera.cy)];
    // J W, the 2×3 Jacobian of the projection composed with the view rotation.
    let w = camera.rotation_as::<S>();
    let j0 = Vec3::new(fx * iz, S::lit(0.0), -fx * pc.x * iz * iz);
    let j1 = Vec3::new(S::lit(0.0), fy * iz, -fy * pc.y * iz * iz);
    let wt = w.transpose();
    let t0 = wt.mul_vec(j0);
    let t1 = wt.mul_vec(j1);
    let sigma = cov.to_mat3();
    let s_t0 = sigma.mul_vec(t0);
    let s_t1 = sigma.mul_vec(t1);
    let lp = S::lit(LOW_PASS);
    Some(Splat2D { mean, cov: [t0.dot(s_t0) + lp, t0.dot(s_t1), t1.dot(s_t1) + lp], depth: pc.z })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix3, SymmetricEigen};
    use proptest::prelude::*;

    fn random_quat(a: f64, b: f64, c: f64, d: f64) -> Quat<f64> {
        Quat::new(a, b, c, d).normalized()
    }

    fn eig(s: &Sym3<f64>) -> SymmetricEigen<f64, nalgebra::U3> {
        let m = s.to_mat3().m;
        SymmetricEigen::new(Matrix3::from_fn(|i, j| m[i][j]))
    }

    #[test]
    fn reflect_examples() {
        let u = |x, y, z| UnitVec3::new(Vec3::new(x, y, z)).unwrap();
        assert_eq!(reflect(u(0.0, 0.0, 1.0), u(0.0, 0.0, 1.0)).get(), Vec3::new(0.0, 0.0, 1.0));
        assert_eq!(reflect(u(0.0, 0.0, 1.0), u(1.0, 0.0, 0.0)).get(), Vec3::new(-1.0, 0.0, 0.0));
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let r = reflect(u(0.0, 0.0, 1.0), u(h, 0.0, h)).get();
        assert!((r - Vec3::new(-h, 0.0, h)).norm() < 1e-15);
    }

    #[test]
    fn covariance_identity_rotation() {
        let s = covariance_from(Vec3::new(0.0, 2f64.ln(), 3f64.ln()), Quat::identity());
        let expect = Sym3 { xx: 1.0, xy: 0.0, xz: 0.0, yy: 4.0, yz: 0.0, zz: 9.0 };
        for (a, b) in [(s.xx, expect.xx), (s.yy, expect.yy), (s.zz, expect.zz), (s.xy, 0.0), (s.xz, 0.0), (s.yz, 0.0)] {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn shortest_axis_normal_faces_camera() {
        let ls = Vec3::new(0.0, 0.0, -2.0);
        let n = shortest_axis_normal(ls, Quat::identity(), Vec3::zero(), Vec3::new(0.0, 0.0, 5.0)).unwrap();
        assert_eq!(n.get(), Vec3::new(0.0, 0.0, 1.0));
        let n = shortest_axis_normal(ls, Quat::identity(), Vec3::zero(), Vec3::new(0.0, 0.0, -5.0)).unwrap();
        assert_eq!(n.get(), Vec3::new(0.0, 0.0, -1.0));
        assert!(matches!(
            shortest_axis_normal(ls, Quat::identity(), Vec3::zero(), Vec3::zero()),
            Err(Error::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn shortest_axis_tie_picks_lowest_index() {
        assert_eq!(shortest_axis(Vec3::new(0.5, 0.5, 0.5)), 0);
        assert_eq!(shortest_axis(Vec3::new(1.0, 0.2, 0.2)), 1);
    }

    fn axis_camera(f: f64) -> Camera {
        Camera {
            fx: f,
            fy: f,
            cx: 32.0,
            cy: 32.0,
            width: 64,
            height: 64,
            rotation: Mat3::identity(),
            translation: Vec3::zero(),
        }
    }

    #[test]
    fn on_axis_isotropic_projection() {
        let (f, sigma, d) = (50.0, 0.2, 4.0);
        let cov = covariance_from(Vec3::new(sigma.ln(), sigma.ln(), sigma.ln()), Quat::identity());
        let s = project_gaussian(Vec3::new(0.0, 0.0, d), &cov, &axis_camera(f)).unwrap();
        let expect = f * f * sigma * sigma / (d * d) + LOW_PASS;
        assert!((s.cov[0] - expect).abs() < 1e-12);
        assert!((s.cov[2] - expect).abs() < 1e-12);
        assert!(s.cov[1].abs() < 1e-12);
        assert_eq!(s.mean, [32.0, 32.0]);
        assert_eq!(s.depth, d);
    }

    #[test]
    fn behind_camera_is_culled() {
        let cov = covariance_from(Vec3::zero(), Quat::identity());
        assert!(project_gaussian(Vec3::new(0.0, 0.0, -1.0), &cov, &axis_camera(50.0)).is_none());
        assert!(project_gaussian(Vec3::new(0.0, 0.0, NEAR_PLANE), &cov, &axis_camera(50.0)).is_none());
    }

    #[test]
    fn far_off_axis_is_culled() {
        let cov = covariance_from(Vec3::zero(), Quat::identity());
        let cam = axis_camera(50.0);
        // Half field of view is 32/50 on both axes.
        assert!(project_gaussian(Vec3::new(0.8, 0.0, 1.0), &cov, &cam).is_some());
        assert!(project_gaussian(Vec3::new(0.9, 0.0, 1.0), &cov, &cam).is_none());
        assert!(project_gaussian(Vec3::new(0.0, -0.9, 1.0), &cov, &cam).is_none());
    }

    #[test]
    fn look_at_camera_is_valid_and_centers_target() {
        let cam = Camera::look_at(
            Vec3::new(3.0, -4.0, 2.5),
            Vec3::new(0.5, 0.2, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
            64,
            48,
            60.0,
            60.0,
        );
        cam.validate().unwrap();
        let p = cam.to_camera(Vec3::new(0.5, 0.2, 0.0));
        assert!(p.x.abs() < 1e-12 && p.y.abs() < 1e-12 && p.z > 0.0);
        assert!((cam.center() - Vec3::new(3.0, -4.0, 2.5)).norm() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn reflect_preserves_angle_and_is_involution(
            a in -1.0..1.0f64, b in -1.0..1.0f64, c in 0.1..1.0f64,
            d in -1.0..1.0f64, e in -1.0..1.0f64, f in -1.0..1.0f64,
        ) {
            let n = Vec3::new(a, b, c).normalized();
            let v = Vec3::new(d, e, f + 1.5).normalized();
            let r = reflect_raw(n, v);
            prop_assert!((n.dot(r) - n.dot(v)).abs() < 1e-12);
            prop_assert!((reflect_raw(n, r) - v).norm() < 1e-12);
            prop_assert!((r.norm() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn covariance_eigenvalues_are_squared_scales(
            a in -1.0..1.0f64, b in -1.0..1.0f64, c in -1.0..1.0f64, d in 0.1..1.0f64,
            s0 in -2.0..1.0f64, s1 in -2.0..1.0f64, s2 in -2.0..1.0f64,
        ) {
            let q = random_quat(d, a, b, c);
            let sigma = covariance_from(Vec3::new(s0, s1, s2), q);
            let mut got: Vec<f64> = eig(&sigma).eigenvalues.iter().copied().collect();
            let mut want = vec![(2.0 * s0).exp(), (2.0 * s1).exp(), (2.0 * s2).exp()];
            got.sort_by(f64::total_cmp);
            want.sort_by(f64::total_cmp);
            for (g, w) in got.iter().zip(&want) {
                prop_assert!((g - w).abs() < 1e-9 * w.max(1.0));
            }
        }

        #[test]
        fn shortest_axis_is_min_eigenvector(
            a in -1.0..1.0f64, b in -1.0..1.0f64, c in -1.0..1.0f64, d in 0.1..1.0f64,
            s0 in -2.0..1.0f64, s1 in -2.0..1.0f64, s2 in -2.0..1.0f64,
            cx in -5.0..5.0f64, cy in -5.0..5.0f64,
        ) {
            let mut ls = [s0, s1, s2];
            // Keep the smallest scale well separated so the eigenvector is defined.
            let k = shortest_axis(Vec3::from_array(ls));
            for (i, s) in ls.iter_mut().enumerate() {
                if i != k { *s = s.max(ls_min(&[s0, s1, s2]) + 0.1); }
            }
            let ls = Vec3::from_array(ls);
            let q = random_quat(d, a, b, c);
            let cam = Vec3::new(cx, cy, 3.0);
            let n = shortest_axis_normal(ls, q, Vec3::zero(), cam).unwrap().get();
            let e = eig(&covariance_from(ls, q));
            let imin = e.eigenvalues.imin();
            let v = e.eigenvectors.column(imin);
            let cos = (n.x * v[0] + n.y * v[1] + n.z * v[2]).abs();
            prop_assert!(cos > 1.0 - 1e-9);
            prop_assert!(n.dot(cam) >= 0.0);
        }

        #[test]
        fn projected_covariance_is_spd(
            px in -2.0..2.0f64, py in -2.0..2.0f64, pz in 0.5..10.0f64,
            a in -1.0..1.0f64, b in -1.0..1.0f64, c in -1.0..1.0f64, d in 0.1..1.0f64,
            s0 in -4.0..0.5f64, s1 in -4.0..0.5f64, s2 in -4.0..0.5f64,
        ) {
            let cov = covariance_from(Vec3::new(s0, s1, s2), random_quat(d, a, b, c));
            let Some(s) = project_gaussian(Vec3::new(px, py, pz), &cov, &axis_camera(40.0)) else {
                // Only off-frustum centers are culled.
                prop_assert!(px.abs() / pz > 1.04 || py.abs() / pz > 1.04);
                return Ok(());
            };
            let [xx, xy, yy] = s.cov;
            let det = xx * yy - xy * xy;
            prop_assert!(xx > 0.0 && yy > 0.0 && det > 0.0);
            // Smallest eigenvalue can never drop below the low-pass floor.
            let tr = xx + yy;
            let lmin = 0.5 * (tr - ((xx - yy).powi(2) + 4.0 * xy * xy).sqrt());
            prop_assert!(lmin >= LOW_PASS - 1e-9);
        }
    }

    fn ls_min(v: &[f64]) -> f64 {
        v.iter().copied().fold(f64::INFINITY, f64::min)
    }
}
