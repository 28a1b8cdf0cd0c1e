//! The full learnable state: scene graph plus neural fields, with a uniform
//! tensor view used by the optimizer, checkpoints and gradient checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{FieldConfig, NeuralFieldSet};
use crate::geom::{Quat, Vec3};
use crate::real::Real;
use crate::scene::{sky_placement, GaussianSet, SceneGraph, StaticNode, TraversalTable};

/// Optimizer parameter groups; each has its own learning rate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Positions,
    Scales,
    Rotations,
    Opacities,
    Features,
    Mlps,
    Embeddings,
    Affine,
    /// Stored but never optimized (sky geometry).
    Frozen,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub fields: FieldConfig,
    pub sky_count: usize,
    /// Sky sphere radius as a multiple of the init point cloud's bounding radius.
    pub sky_radius_factor: f64,
    pub init_opacity: f64,
    /// Standard deviation of the positional jitter applied to init points.
    pub init_jitter: f64,
    /// Isotropic scale used when fewer than two init points exist.
    pub fallback_scale: f64,
    pub feature_std: f64,
    /// Align the initial shortest-axis tie-break axis with the point normals.
    pub orient_from_normals: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            fields: FieldConfig::default(),
            sky_count: 256,
            sky_radius_factor: 8.0,
            init_opacity: 0.3,
            init_jitter: 0.0,
            fallback_scale: 0.5,
            feature_std: 0.5,
            orient_from_normals: true,
        }
    }
}

/// One init point with its surface normal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InitPoint {
    pub position: Vec3<f64>,
    pub normal: Vec3<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub scene: SceneGraph<T>,
    pub fields: NeuralFieldSet<T>,
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Mean distance to the `k` nearest neighbours of every point (brute force).
pub fn mean_knn_distance(points: &[Vec3<f64>], k: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(points.len());
    let mut best = Vec::with_capacity(k + 1);
    for (i, p) in points.iter().enumerate() {
        best.clear();
        for (j, q) in points.iter().enumerate() {
            if i == j {
                continue;
            }
            let d = (*p - *q).norm();
            if best.len() < k {
                best.push(d);
                best.sort_by(f64::total_cmp);
            } else if d < best[k - 1] {
                best[k - 1] = d;
                best.sort_by(f64::total_cmp);
            }
        }
        out.push(if best.is_empty() { f64::NAN } else { best.iter().sum::<f64>() / best.len() as f64 });
    }
    out
}

impl<T: Real> Model<T> {
    /// Static node from an init point cloud, empty object list, sky sphere
    /// around the cloud, identity affines.
    pub fn from_points(points: &[InitPoint], traversals: usize, config: &ModelConfig, seed: u64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("initialization needs at least one point"));
        }
        if traversals == 0 {
            return Err(Error::invalid("at least one traversal is required"));
        }
        if !(config.init_opacity > 0.0 && config.init_opacity < 1.0) {
            return Err(Error::invalid("init_opacity must lie in (0, 1)"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fc = &config.fields;
        let positions: Vec<Vec3<f64>> = points.iter().map(|p| p.position).collect();
        let knn = mean_knn_distance(&positions, 3);
        let jitter = Normal::new(0.0, config.init_jitter.max(0.0)).map_err(|e| Error::invalid(e.to_string()))?;
        let feat = Normal::new(0.0, config.feature_std).map_err(|e| Error::invalid(e.to_string()))?;
        let mut gaussians = GaussianSet::default();
        let mut f_geo = Vec::with_capacity(points.len() * fc.geo_dim);
        let opacity = T::lit(logit(config.init_opacity));
        for (p, d) in points.iter().zip(&knn) {
            let scale = if d.is_finite() && *d > 0.0 { *d } else { config.fallback_scale };
            let pos = p.position + Vec3::new(rng.sample(jitter), rng.sample(jitter), rng.sample(jitter));
            let rot = if config.orient_from_normals && p.normal.norm() > 0.0 {
                Quat::between(Vec3::new(1.0, 0.0, 0.0), p.normal.normalized())
            } else {
                Quat::identity()
            };
            let ls = scale.ln();
            gaussians.push(pos.cast(), Vec3::new(ls, ls, ls).cast(), rot.cast(), opacity);
            f_geo.extend((0..fc.geo_dim).map(|_| T::lit(rng.sample(feat))));
        }
        let center = positions.iter().fold(Vec3::zero(), |a, p| a + *p) * (1.0 / positions.len() as f64);
        let bound = positions.iter().map(|p| p.norm()).fold(center.norm(), f64::max).max(1.0);
        let sky = sky_placement(bound * config.sky_radius_factor, config.sky_count, rng.random());
        let traversals = TraversalTable::new(traversals, fc.emb_dim, &mut rng);
        let fields = NeuralFieldSet::new(fc, &mut rng);
        Ok(Self {
            scene: SceneGraph {
                static_node: StaticNode { gaussians, f_geo, geo_dim: fc.geo_dim },
                sky,
                objects: Vec::new(),
                traversals,
            },
            fields,
        })
    }

    /// Same structure, every tensor zero. Used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.visit_mut(&mut |_, _, t| t.fill(T::zero()));
        z
    }

    /// Visit every tensor in a fixed order.
    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(String, Group, &'a [T])) {
        let s = &self.scene;
        visit_set(&s.static_node.gaussians, "static", true, f);
        f("static.f_geo".into(), Group::Features, &s.static_node.f_geo);
        visit_set(&s.sky.gaussians, "sky", false, f);
        for (k, o) in s.objects.iter().enumerate() {
            visit_set(&o.canonical, &format!("object.{k}"), true, f);
            f(format!("object.{k}.color"), Group::Features, &o.color_logits);
            f(format!("object.{k}.feature"), Group::Features, &o.feature);
        }
        f("traversal.embedding".into(), Group::Embeddings, &s.traversals.embeddings);
        f("traversal.affine_scale".into(), Group::Affine, &s.traversals.affine_scale);
        f("traversal.affine_bias".into(), Group::Affine, &s.traversals.affine_bias);
        self.fields.visit(&mut |name, t| f(format!("field.{name}"), Group::Mlps, t));
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(String, Group, &mut [T])) {
        let s = &mut self.scene;
        visit_set_mut(&mut s.static_node.gaussians, "static", true, f);
        f("static.f_geo".into(), Group::Features, &mut s.static_node.f_geo);
        visit_set_mut(&mut s.sky.gaussians, "sky", false, f);
        for (k, o) in s.objects.iter_mut().enumerate() {
            visit_set_mut(&mut o.canonical, &format!("object.{k}"), true, f);
            f(format!("object.{k}.color"), Group::Features, &mut o.color_logits);
            f(format!("object.{k}.feature"), Group::Features, &mut o.feature);
        }
        f("traversal.embedding".into(), Group::Embeddings, &mut s.traversals.embeddings);
        f("traversal.affine_scale".into(), Group::Affine, &mut s.traversals.affine_scale);
        f("traversal.affine_bias".into(), Group::Affine, &mut s.traversals.affine_bias);
        self.fields.visit_mut(&mut |name, t| f(format!("field.{name}"), Group::Mlps, t));
    }

    /// Names, groups and lengths of all tensors.
    pub fn layout(&self) -> Vec<(String, Group, usize)> {
        let mut out = Vec::new();
        self.visit(&mut |n, g, t| out.push((n, g, t.len())));
        out
    }

    pub fn flatten(&self) -> Vec<Vec<T>> {
        let mut out = Vec::new();
        self.visit(&mut |_, _, t| out.push(t.to_vec()));
        out
    }

    pub fn first_non_finite(&self) -> Option<String> {
        let mut bad = None;
        self.visit(&mut |n, _, t| {
            if bad.is_none() && t.iter().any(|v| !v.is_finite()) {
                bad = Some(n);
            }
        });
        bad
    }

    /// Re-project all learnable quaternions to unit norm.
    pub fn normalize_rotations(&mut self) {
        self.scene.static_node.gaussians.normalize_rotations();
        for o in &mut self.scene.objects {
            o.canonical.normalize_rotations();
        }
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        let layout_src = self.flatten();
        let mut out: Model<U> = Model {
            scene: SceneGraph {
                static_node: StaticNode {
                    gaussians: cast_set(&self.scene.static_node.gaussians),
                    f_geo: cast_vec(&self.scene.static_node.f_geo),
                    geo_dim: self.scene.static_node.geo_dim,
                },
                sky: crate::scene::SkyNode { gaussians: cast_set(&self.scene.sky.gaussians), radius: self.scene.sky.radius },
                objects: self
                    .scene
                    .objects
                    .iter()
                    .map(|o| crate::scene::ObjectNode {
                        canonical: cast_set(&o.canonical),
                        color_logits: cast_vec(&o.color_logits),
                        trajectory: o.trajectory.clone(),
                        feature: cast_vec(&o.feature),
                    })
                    .collect(),
                traversals: TraversalTable {
                    embeddings: cast_vec(&self.scene.traversals.embeddings),
                    affine_scale: cast_vec(&self.scene.traversals.affine_scale),
                    affine_bias: cast_vec(&self.scene.traversals.affine_bias),
                    dim: self.scene.traversals.dim,
                },
            },
            fields: NeuralFieldSet::new(&self.fields.config, &mut ChaCha8Rng::seed_from_u64(0)),
        };
        // The field tensors are freshly initialized above; overwrite every
        // tensor positionally.
        let mut k = 0;
        out.visit_mut(&mut |_, _, t| {
            for (d, s) in t.iter_mut().zip(&layout_src[k]) {
                *d = U::lit(s.val());
            }
            k += 1;
        });
        out
    }
}

fn cast_vec<T: Real, U: Real>(v: &[T]) -> Vec<U> {
    v.iter().map(|x| U::lit(x.val())).collect()
}

fn cast_set<T: Real, U: Real>(g: &GaussianSet<T>) -> GaussianSet<U> {
    GaussianSet {
        positions: cast_vec(&g.positions),
        log_scales: cast_vec(&g.log_scales),
        rotations: cast_vec(&g.rotations),
        opacity_logits: cast_vec(&g.opacity_logits),
    }
}

fn visit_set<'a, T>(g: &'a GaussianSet<T>, prefix: &str, learnable: bool, f: &mut dyn FnMut(String, Group, &'a [T])) {
    let grp = |g: Group| if learnable { g } else { Group::Frozen };
    f(format!("{prefix}.position"), grp(Group::Positions), &g.positions);
    f(format!("{prefix}.log_scale"), grp(Group::Scales), &g.log_scales);
    f(format!("{prefix}.rotation"), grp(Group::Rotations), &g.rotations);
    f(format!("{prefix}.opacity"), grp(Group::Opacities), &g.opacity_logits);
}

fn visit_set_mut<T>(g: &mut GaussianSet<T>, prefix: &str, learnable: bool, f: &mut dyn FnMut(String, Group, &mut [T])) {
    let grp = |g: Group| if learnable { g } else { Group::Frozen };
    f(format!("{prefix}.position"), grp(Group::Positions), &mut g.positions);
    f(format!("{prefix}.log_scale"), grp(Group::Scales), &mut g.log_scales);
    f(format!("{prefix}.rotation"), grp(Group::Rotations), &mut g.rotations);
    f(format!("{prefix}.opacity"), grp(Group::Opacities), &mut g.opacity_logits);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> Vec<InitPoint> {
        (0..n * n)
            .map(|i| InitPoint {
                position: Vec3::new((i % n) as f64 * 0.1, (i / n) as f64 * 0.1, 0.0),
                normal: Vec3::new(0.0, 0.0, 1.0),
            })
            .collect()
    }

    #[test]
    fn init_from_points() {
        let m = Model::<f32>::from_points(&grid(5), 3, &ModelConfig::default(), 1).unwrap();
        let s = &m.scene.static_node;
        assert_eq!(s.len(), 25);
        assert_eq!(s.f_geo.len(), 25 * 16);
        assert_eq!(m.scene.traversals.len(), 3);
        assert_eq!(m.scene.traversals.affine_scale, vec![1.0; 9]);
        assert_eq!(m.scene.traversals.affine_bias, vec![0.0; 9]);
        // Interior grid points: 3 nearest neighbours all at spacing 0.1.
        let ls = s.gaussians.log_scale(12);
        assert!((ls.x - 0.1f32.ln()).abs() < 1e-5 && ls.x == ls.y && ls.y == ls.z);
        // The tie-break axis (x) is rotated onto the point normal.
        let axis = s.gaussians.rotation(0).to_mat3().col(0);
        assert!((axis.z - 1.0).abs() < 1e-6);
        let r = m.scene.sky.radius;
        for i in 0..m.scene.sky.gaussians.len() {
            assert!((m.scene.sky.gaussians.position(i).cast::<f64>().norm() - r).abs() < 1e-3);
        }
    }

    #[test]
    fn single_point_uses_fallback_scale() {
        let cfg = ModelConfig { fallback_scale: 2.0, ..ModelConfig::default() };
        let m = Model::<f64>::from_points(&grid(1), 1, &cfg, 0).unwrap();
        assert!((m.scene.static_node.gaussians.log_scale(0).x - 2f64.ln()).abs() < 1e-12);
        assert!(Model::<f64>::from_points(&[], 1, &cfg, 0).is_err());
    }

    #[test]
    fn visitor_layout_and_cast_round_trip() {
        let m = Model::<f32>::from_points(&grid(3), 2, &ModelConfig::default(), 4).unwrap();
        let layout = m.layout();
        assert_eq!(layout[0].0, "static.position");
        assert!(layout.iter().any(|(n, g, _)| n == "sky.position" && *g == Group::Frozen));
        assert!(layout.iter().any(|(n, g, _)| n == "field.light.3.weight" && *g == Group::Mlps));
        let back: Model<f32> = m.cast::<f64>().cast();
        assert_eq!(back, m);
        let z = m.zeros_like();
        assert!(z.flatten().iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn knn_distance_oracle() {
        let pts = [Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 2.0, 0.0), Vec3::new(0.0, 0.0, 4.0)];
        let d = mean_knn_distance(&pts, 2);
        assert!((d[0] - 1.5).abs() < 1e-12);
        assert!((d[3] - (4.0 + 17f64.sqrt()) / 2.0).abs() < 1e-12);
    }
}
