//! Scene descriptions: primitives with constant materials, per-traversal
//! lighting, and a camera orbit shared by every traversal.

use admgs_core::geom::{Camera, Vec3};
use admgs_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceMaterial {
    pub albedo: [f64; 3],
    /// Specular strength; 0 disables the highlight.
    pub specular: f64,
    pub shininess: f64,
}

impl SurfaceMaterial {
    pub fn diffuse(albedo: [f64; 3]) -> Self {
        Self { albedo, specular: 0.0, shininess: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Shape {
    /// Square `[-half_extent, half_extent]²` of the plane z = 0, facing +z.
    Ground { half_extent: f64 },
    /// Axis-aligned box.
    Cuboid { min: [f64; 3], max: [f64; 3] },
    Sphere { center: [f64; 3], radius: f64 },
}

impl Shape {
    /// Whether `p` lies inside the solid, grown by `margin` on every side.
    pub fn contains(&self, p: Vec3<f64>, margin: f64) -> bool {
        match *self {
            Shape::Ground { half_extent } => p.z.abs() <= margin && p.x.abs() <= half_extent + margin && p.y.abs() <= half_extent + margin,
            Shape::Cuboid { min, max } => {
                let a = p.to_array();
                (0..3).all(|i| a[i] >= min[i] - margin && a[i] <= max[i] + margin)
            }
            Shape::Sphere { center, radius } => (p - Vec3::new(center[0], center[1], center[2])).norm() <= radius + margin,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Primitive {
    pub shape: Shape,
    pub material: SurfaceMaterial,
    /// Traversals in which the primitive exists; `None` means all of them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub present_in: Option<Vec<usize>>,
}

impl Primitive {
    pub fn is_present(&self, traversal: usize) -> bool {
        self.present_in.as_ref().is_none_or(|v| v.contains(&traversal))
    }

    pub fn is_transient(&self) -> bool {
        self.present_in.is_some()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lighting {
    /// Unit direction from the scene toward the sun.
    pub sun_direction: [f64; 3],
    pub sun_intensity: [f64; 3],
    pub ambient: [f64; 3],
    /// Sky radiance at the horizon and at the zenith; blended by elevation.
    pub sky_horizon: [f64; 3],
    pub sky_zenith: [f64; 3],
}

impl Lighting {
    pub fn sun(&self) -> Vec3<f64> {
        Vec3::new(self.sun_direction[0], self.sun_direction[1], self.sun_direction[2])
    }
}

/// Cameras evenly spaced on a horizontal circle, all looking at `target`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraOrbit {
    pub count: usize,
    pub radius: f64,
    pub height: f64,
    pub target: [f64; 3],
    /// Angle of the first camera around +z, radians.
    pub start_angle: f64,
    /// Total angle covered by the orbit, radians.
    pub arc: f64,
    pub horizontal_fov_deg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSceneSpec {
    pub name: String,
    pub width: usize,
    pub height: usize,
    pub primitives: Vec<Primitive>,
    pub traversals: Vec<Lighting>,
    pub orbit: CameraOrbit,
    /// Every camera whose index is ≡ `test_every − 1` (mod `test_every`) is
    /// held out in all traversals.
    pub test_every: usize,
    /// Number of initialization points back-projected from the frames.
    pub init_points: usize,
    pub seed: u64,
}

fn angle_deg(a: Vec3<f64>, b: Vec3<f64>) -> f64 {
    a.normalized().dot(b.normalized()).clamp(-1.0, 1.0).acos().to_degrees()
}

impl SyntheticSceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("image size must be non-zero"));
        }
        if self.traversals.is_empty() {
            return Err(Error::invalid("at least one traversal is required"));
        }
        if self.orbit.count == 0 {
            return Err(Error::invalid("the camera orbit needs at least one camera"));
        }
        if self.test_every < 2 || self.test_every > self.orbit.count {
            return Err(Error::invalid("test_every must lie in 2..=camera count so both splits are non-empty"));
        }
        for (t, l) in self.traversals.iter().enumerate() {
            let n = l.sun().norm();
            if (n - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!("traversal {t}: sun direction is not unit length ({n})")));
            }
            if l.sun_intensity.iter().any(|v| !(*v > 0.0)) || l.ambient.iter().any(|v| !(*v >= 0.0)) {
                return Err(Error::invalid(format!("traversal {t}: sun must be positive and ambient non-negative")));
            }
        }
        if self.traversals.len() >= 2 {
            for i in 0..self.traversals.len() {
                for j in i + 1..self.traversals.len() {
                    let a = angle_deg(self.traversals[i].sun(), self.traversals[j].sun());
                    if a < 10.0 {
                        return Err(Error::invalid(format!("sun directions of traversals {i} and {j} differ by only {a:.2}°")));
                    }
                }
            }
        }
        for (k, p) in self.primitives.iter().enumerate() {
            if p.material.albedo.iter().any(|a| !(0.0..=1.0).contains(a)) {
                return Err(Error::invalid(format!("primitive {k}: albedo must lie in [0, 1]")));
            }
            if !(p.material.specular >= 0.0 && p.material.shininess > 0.0) {
                return Err(Error::invalid(format!("primitive {k}: invalid specular parameters")));
            }
            if let Some(v) = &p.present_in {
                if let Some(t) = v.iter().find(|t| **t >= self.traversals.len()) {
                    return Err(Error::invalid(format!("primitive {k} refers to missing traversal {t}")));
                }
            }
            match p.shape {
                Shape::Ground { half_extent } if !(half_extent > 0.0) => {
                    return Err(Error::invalid(format!("primitive {k}: ground extent must be positive")))
                }
                Shape::Cuboid { min, max } if (0..3).any(|i| !(max[i] > min[i])) => {
                    return Err(Error::invalid(format!("primitive {k}: box max must exceed min")))
                }
                Shape::Sphere { radius, .. } if !(radius > 0.0) => {
                    return Err(Error::invalid(format!("primitive {k}: sphere radius must be positive")))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn focal(&self) -> f64 {
        self.width as f64 / 2.0 / (self.orbit.horizontal_fov_deg.to_radians() / 2.0).tan()
    }

    pub fn camera(&self, index: usize) -> Camera {
        let o = &self.orbit;
        let step = if o.count > 1 { o.arc / o.count as f64 } else { 0.0 };
        let a = o.start_angle + step * index as f64;
        let eye = Vec3::new(o.radius * a.cos(), o.radius * a.sin(), o.height);
        let target = Vec3::new(o.target[0], o.target[1], o.target[2]);
        let f = self.focal();
        Camera::look_at(eye, target, Vec3::new(0.0, 0.0, 1.0), self.width, self.height, f, f)
    }

    pub fn is_test_camera(&self, index: usize) -> bool {
        index % self.test_every == self.test_every - 1
    }

    /// Stable identifier of the spec: SHA-256 of its canonical JSON.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_vec(self).expect("spec serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Unit direction from azimuth/elevation in degrees (z up).
pub fn direction_deg(azimuth: f64, elevation: f64) -> [f64; 3] {
    let (a, e) = (azimuth.to_radians(), elevation.to_radians());
    [e.cos() * a.cos(), e.cos() * a.sin(), e.sin()]
}

fn lighting(azimuth: f64, elevation: f64, sun: [f64; 3], ambient: [f64; 3]) -> Lighting {
    Lighting {
        sun_direction: direction_deg(azimuth, elevation),
        sun_intensity: sun,
        ambient,
        sky_horizon: [0.75, 0.8, 0.85],
        sky_zenith: [0.35, 0.5, 0.8],
    }
}

fn orbit(count: usize) -> CameraOrbit {
    CameraOrbit {
        count,
        radius: 3.2,
        height: 2.2,
        target: [0.0, 0.0, 0.3],
        start_angle: 0.0,
        arc: std::f64::consts::TAU,
        horizontal_fov_deg: 60.0,
    }
}

fn ground() -> Primitive {
    Primitive { shape: Shape::Ground { half_extent: 3.0 }, material: SurfaceMaterial::diffuse([0.45, 0.42, 0.38]), present_in: None }
}

fn cuboid(min: [f64; 3], max: [f64; 3], albedo: [f64; 3]) -> Primitive {
    Primitive { shape: Shape::Cuboid { min, max }, material: SurfaceMaterial::diffuse(albedo), present_in: None }
}

pub const SUITE_NAMES: [&str; 4] = ["sanity-1splat", "decomp-3trav", "transient-2trav", "specular-1trav"];

pub fn standard_suites() -> Vec<SyntheticSceneSpec> {
    let sanity = SyntheticSceneSpec {
        name: "sanity-1splat".into(),
        width: 32,
        height: 24,
        primitives: vec![Primitive {
            shape: Shape::Sphere { center: [0.0, 0.0, 0.0], radius: 0.5 },
            material: SurfaceMaterial::diffuse([0.7, 0.35, 0.2]),
            present_in: None,
        }],
        traversals: vec![lighting(30.0, 50.0, [0.6, 0.6, 0.6], [0.3, 0.3, 0.3])],
        // A short arc keeps every view on the lit side of the sphere.
        orbit: CameraOrbit { count: 4, radius: 2.5, height: 0.0, target: [0.0, 0.0, 0.0], arc: 60f64.to_radians(), ..orbit(4) },
        test_every: 4,
        init_points: 500,
        seed: 1,
    };
    let scene = vec![
        ground(),
        cuboid([-0.9, -0.5, 0.0], [-0.2, 0.2, 0.7], [0.7, 0.3, 0.25]),
        cuboid([0.3, 0.2, 0.0], [0.8, 0.7, 0.45], [0.25, 0.45, 0.7]),
        Primitive {
            shape: Shape::Sphere { center: [0.4, -0.6, 0.35], radius: 0.35 },
            material: SurfaceMaterial::diffuse([0.3, 0.65, 0.3]),
            present_in: None,
        },
    ];
    let decomp = SyntheticSceneSpec {
        name: "decomp-3trav".into(),
        width: 64,
        height: 48,
        primitives: scene.clone(),
        traversals: vec![
            lighting(20.0, 55.0, [0.65, 0.62, 0.58], [0.3, 0.3, 0.32]),
            lighting(140.0, 35.0, [0.7, 0.6, 0.45], [0.28, 0.28, 0.33]),
            lighting(260.0, 45.0, [0.6, 0.62, 0.68], [0.32, 0.32, 0.35]),
        ],
        orbit: orbit(16),
        test_every: 4,
        init_points: 3000,
        seed: 7,
    };
    let mut transient_scene = vec![ground(), cuboid([-0.9, -0.5, 0.0], [-0.2, 0.2, 0.7], [0.7, 0.3, 0.25])];
    transient_scene.push(Primitive {
        shape: Shape::Cuboid { min: [0.2, -0.3, 0.0], max: [0.8, 0.3, 0.5] },
        material: SurfaceMaterial::diffuse([0.2, 0.35, 0.75]),
        present_in: Some(vec![0]),
    });
    let transient = SyntheticSceneSpec {
        name: "transient-2trav".into(),
        primitives: transient_scene,
        traversals: vec![
            lighting(20.0, 55.0, [0.65, 0.62, 0.58], [0.3, 0.3, 0.32]),
            lighting(150.0, 40.0, [0.7, 0.6, 0.45], [0.28, 0.28, 0.33]),
        ],
        seed: 11,
        init_points: 2500,
        ..decomp.clone()
    };
    let specular = SyntheticSceneSpec {
        name: "specular-1trav".into(),
        primitives: vec![
            ground(),
            Primitive {
                shape: Shape::Sphere { center: [0.0, 0.0, 0.5], radius: 0.5 },
                material: SurfaceMaterial { albedo: [0.5, 0.45, 0.4], specular: 0.35, shininess: 40.0 },
                present_in: None,
            },
        ],
        traversals: vec![lighting(60.0, 40.0, [0.6, 0.6, 0.6], [0.2, 0.2, 0.2])],
        seed: 13,
        init_points: 2500,
        ..decomp.clone()
    };
    vec![sanity, decomp, transient, specular]
}

pub fn suite(name: &str) -> Option<SyntheticSceneSpec> {
    standard_suites().into_iter().find(|s| s.name == name)
}
