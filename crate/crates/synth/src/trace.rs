//! Closest-hit ray casting against the primitive set and analytic shading.

use admgs_core::geom::{Camera, Vec3};

use crate::spec::{Lighting, Primitive, Shape, SurfaceMaterial, SyntheticSceneSpec};

/// Floor on the albedo when folding the specular term into the light factor.
pub const ALBEDO_FLOOR: f64 = 0.05;
/// Offset along the normal before casting shadow rays.
const SHADOW_BIAS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub point: Vec3<f64>,
    /// Outward geometric normal.
    pub normal: Vec3<f64>,
    pub primitive: usize,
}

fn intersect(shape: &Shape, o: Vec3<f64>, d: Vec3<f64>) -> Option<(f64, Vec3<f64>)> {
    const T_MIN: f64 = 1e-9;
    match *shape {
        Shape::Ground { half_extent } => {
            if d.z.abs() < 1e-15 {
                return None;
            }
            let t = -o.z / d.z;
            let p = o + d * t;
            (t > T_MIN && p.x.abs() <= half_extent && p.y.abs() <= half_extent).then(|| (t, Vec3::new(0.0, 0.0, 1.0)))
        }
        Shape::Cuboid { min, max } => {
            // Slab test; the entry face gives the normal.
            let (o_a, d_a) = (o.to_array(), d.to_array());
            let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
            let (mut n0, mut n1) = (0usize, 0usize);
            let (mut s0, mut s1) = (0.0, 0.0);
            for i in 0..3 {
                if d_a[i].abs() < 1e-15 {
                    if o_a[i] < min[i] || o_a[i] > max[i] {
                        return None;
                    }
                    continue;
                }
                let inv = 1.0 / d_a[i];
                let (mut a, mut b) = ((min[i] - o_a[i]) * inv, (max[i] - o_a[i]) * inv);
                let (mut sa, mut sb) = (-1.0, 1.0);
                if a > b {
                    std::mem::swap(&mut a, &mut b);
                    std::mem::swap(&mut sa, &mut sb);
                }
                if a > t0 {
                    t0 = a;
                    n0 = i;
                    s0 = sa;
                }
                if b < t1 {
                    t1 = b;
                    n1 = i;
                    s1 = sb;
                }
            }
            if t0 > t1 {
                return None;
            }
            let axis = |i: usize, s: f64| {
                let mut n = [0.0; 3];
                n[i] = s;
                Vec3::new(n[0], n[1], n[2])
            };
            if t0 > T_MIN {
                Some((t0, axis(n0, s0)))
            } else if t1 > T_MIN {
                Some((t1, axis(n1, s1)))
            } else {
                None
            }
        }
        Shape::Sphere { center, radius } => {
            let c = Vec3::new(center[0], center[1], center[2]);
            let oc = o - c;
            let b = oc.dot(d);
            let cc = oc.dot(oc) - radius * radius;
            let disc = b * b - cc;
            if disc < 0.0 {
                return None;
            }
            let sq = disc.sqrt();
            let t = if -b - sq > T_MIN { -b - sq } else { -b + sq };
            if t <= T_MIN {
                return None;
            }
            Some((t, (o + d * t - c) * (1.0 / radius)))
        }
    }
}

/// Closest hit among the primitives present in `traversal`; `d` must be unit.
pub fn cast(primitives: &[Primitive], traversal: usize, o: Vec3<f64>, d: Vec3<f64>) -> Option<Hit> {
    let mut best: Option<Hit> = None;
    for (k, p) in primitives.iter().enumerate() {
        if !p.is_present(traversal) {
            continue;
        }
        if let Some((t, n)) = intersect(&p.shape, o, d) {
            if best.is_none_or(|b| t < b.t) {
                best = Some(Hit { t, point: o + d * t, normal: n, primitive: k });
            }
        }
    }
    best
}

/// 1 when the sun is visible from `point`, else 0.
pub fn sun_visibility(primitives: &[Primitive], traversal: usize, point: Vec3<f64>, normal: Vec3<f64>, light: &Lighting) -> f64 {
    let o = point + normal * SHADOW_BIAS;
    if cast(primitives, traversal, o, light.sun()).is_some() {
        0.0
    } else {
        1.0
    }
}

/// Color and light factor of a surface point. The specular term is folded
/// into the light factor by dividing by the (floored) albedo, so that
/// `color = albedo ⊙ light` holds exactly.
pub fn analytic_shade(
    normal: Vec3<f64>,
    material: &SurfaceMaterial,
    light: &Lighting,
    view_dir: Vec3<f64>,
    visibility: f64,
) -> ([f64; 3], [f64; 3]) {
    let l = light.sun();
    let ndl = normal.dot(l).max(0.0);
    let h = (l + view_dir).normalized();
    let spec = if material.specular > 0.0 && ndl > 0.0 { normal.dot(h).max(0.0).powf(material.shininess) } else { 0.0 };
    let mut color = [0.0; 3];
    let mut value = [0.0; 3];
    for c in 0..3 {
        let sun = light.sun_intensity[c] * visibility;
        let a = material.albedo[c];
        value[c] = light.ambient[c] + sun * ndl + material.specular * sun * spec / a.max(ALBEDO_FLOOR);
        color[c] = a * value[c];
    }
    (color, value)
}

/// Sky radiance along world direction `d`.
pub fn sky_color(light: &Lighting, d: Vec3<f64>) -> [f64; 3] {
    let t = d.z.clamp(0.0, 1.0).sqrt();
    std::array::from_fn(|c| light.sky_horizon[c] * (1.0 - t) + light.sky_zenith[c] * t)
}

/// Ground-truth layers of one pixel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelSample {
    pub rgb: [f64; 3],
    pub material: [f64; 3],
    pub light: [f64; 3],
    /// Camera-facing unit normal; zero on sky pixels.
    pub normal: [f64; 3],
    /// Camera-frame depth; zero on sky pixels.
    pub depth: f64,
    /// 1 on static surfaces, 0 on sky and transient primitives.
    pub static_mask: f64,
    /// Lit side of a static surface whose sun ray is blocked.
    pub cast_shadow: bool,
    pub hit: Option<Hit>,
}

pub fn trace_pixel(spec: &SyntheticSceneSpec, traversal: usize, camera: &Camera, x: usize, y: usize) -> PixelSample {
    let light = &spec.traversals[traversal];
    let o = camera.center();
    let d = camera.ray_direction(x as f64 + 0.5, y as f64 + 0.5);
    match cast(&spec.primitives, traversal, o, d) {
        None => {
            let sky = sky_color(light, d);
            PixelSample {
                rgb: sky,
                material: [1.0; 3],
                light: sky,
                normal: [0.0; 3],
                depth: 0.0,
                static_mask: 0.0,
                cast_shadow: false,
                hit: None,
            }
        }
        Some(hit) => {
            let prim = &spec.primitives[hit.primitive];
            let view = -d;
            let n = if hit.normal.dot(view) < 0.0 { -hit.normal } else { hit.normal };
            let vis = sun_visibility(&spec.primitives, traversal, hit.point, n, light);
            let (rgb, value) = analytic_shade(n, &prim.material, light, view, vis);
            let depth = camera.to_camera(hit.point).z;
            PixelSample {
                rgb,
                material: prim.material.albedo,
                light: value,
                normal: n.to_array(),
                depth,
                static_mask: if prim.is_transient() { 0.0 } else { 1.0 },
                cast_shadow: !prim.is_transient() && vis == 0.0 && n.dot(light.sun()) > 0.0,
                hit: Some(Hit { normal: n, ..hit }),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::suite;

    fn light(ambient: f64) -> Lighting {
        Lighting {
            sun_direction: [0.0, 0.0, 1.0],
            sun_intensity: [1.0; 3],
            ambient: [ambient; 3],
            sky_horizon: [0.5; 3],
            sky_zenith: [0.5; 3],
        }
    }

    #[test]
    fn back_facing_without_ambient_is_black() {
        let m = SurfaceMaterial::diffuse([0.5; 3]);
        let (c, l) = analytic_shade(Vec3::new(0.0, 0.0, -1.0), &m, &light(0.0), Vec3::new(0.0, 0.0, -1.0), 1.0);
        assert_eq!(c, [0.0; 3]);
        assert_eq!(l, [0.0; 3]);
    }

    #[test]
    fn lit_diffuse_arithmetic() {
        let m = SurfaceMaterial::diffuse([0.5; 3]);
        let (c, l) = analytic_shade(Vec3::new(0.0, 0.0, 1.0), &m, &light(0.2), Vec3::new(0.0, 0.0, 1.0), 1.0);
        for k in 0..3 {
            assert!((l[k] - 1.2).abs() < 1e-15);
            assert!((c[k] - 0.6).abs() < 1e-15);
        }
    }

    #[test]
    fn shadowed_equals_ambient_only() {
        let m = SurfaceMaterial { albedo: [0.3, 0.6, 0.9], specular: 0.5, shininess: 10.0 };
        let n = Vec3::new(0.0, 0.0, 1.0);
        let (c, _) = analytic_shade(n, &m, &light(0.25), n, 0.0);
        for k in 0..3 {
            assert!((c[k] - m.albedo[k] * 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn specular_keeps_factorization() {
        let m = SurfaceMaterial { albedo: [0.02, 0.5, 0.9], specular: 0.4, shininess: 8.0 };
        let n = Vec3::new(0.0, 0.0, 1.0);
        let (c, l) = analytic_shade(n, &m, &light(0.1), n, 1.0);
        for k in 0..3 {
            assert!((c[k] - m.albedo[k] * l[k]).abs() < 1e-15);
        }
        assert!(l[0] > l[1]);
    }

    #[test]
    fn ray_primitive_hits() {
        let ground = Shape::Ground { half_extent: 1.0 };
        let (t, n) = intersect(&ground, Vec3::new(0.2, 0.1, 2.0), Vec3::new(0.0, 0.0, -1.0)).unwrap();
        assert_eq!((t, n), (2.0, Vec3::new(0.0, 0.0, 1.0)));
        assert!(intersect(&ground, Vec3::new(5.0, 0.0, 2.0), Vec3::new(0.0, 0.0, -1.0)).is_none());
        let cube = Shape::Cuboid { min: [-1.0; 3], max: [1.0; 3] };
        let (t, n) = intersect(&cube, Vec3::new(-3.0, 0.5, 0.0), Vec3::new(1.0, 0.0, 0.0)).unwrap();
        assert_eq!((t, n), (2.0, Vec3::new(-1.0, 0.0, 0.0)));
        let sphere = Shape::Sphere { center: [0.0, 0.0, 1.0], radius: 0.5 };
        let (t, n) = intersect(&sphere, Vec3::new(0.0, 0.0, 3.0), Vec3::new(0.0, 0.0, -1.0)).unwrap();
        assert!((t - 1.5).abs() < 1e-12);
        assert_eq!(n, Vec3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn ground_pixel_material_is_albedo() {
        let spec = suite("decomp-3trav").unwrap();
        let cam = spec.camera(0);
        let s = trace_pixel(&spec, 0, &cam, spec.width / 2, spec.height - 1);
        assert_eq!(s.hit.unwrap().primitive, 0);
        assert_eq!(s.material, spec.primitives[0].material.albedo);
        let n = Vec3::new(s.normal[0], s.normal[1], s.normal[2]);
        assert!((n.norm() - 1.0).abs() < 1e-12);
    }
}
