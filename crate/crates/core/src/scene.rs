//! Multi-traversal scene representation: static, sky and object nodes plus the
//! per-traversal table, and composition into a flat world-space splat list.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::NeuralFieldSet;
use crate::geom::{Pose, Quat, Vec3};
use crate::real::Real;

/// Opacity logit given to every sky splat; sky geometry is not optimized.
pub const SKY_OPACITY_LOGIT: f64 = 4.0;
/// Number of sinusoid frequencies in the deformation time encoding.
pub const TIME_FREQUENCIES: usize = 4;

/// One anisotropic Gaussian, as a standalone value.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPrimitive<T> {
    pub position: Vec3<T>,
    pub log_scale: Vec3<T>,
    pub rotation: Quat<T>,
    pub opacity_logit: T,
    pub f_geo: Vec<T>,
}

/// Struct-of-arrays storage for a node's Gaussians.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GaussianSet<T> {
    /// N×3
    pub positions: Vec<T>,
    /// N×3
    pub log_scales: Vec<T>,
    /// N×4, `(w, x, y, z)`
    pub rotations: Vec<T>,
    /// N
    pub opacity_logits: Vec<T>,
}

impl<T: Real> GaussianSet<T> {
    pub fn len(&self) -> usize {
        self.opacity_logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.opacity_logits.is_empty()
    }

    pub fn push(&mut self, position: Vec3<T>, log_scale: Vec3<T>, rotation: Quat<T>, opacity_logit: T) {
        self.positions.extend_from_slice(&position.to_array());
        self.log_scales.extend_from_slice(&log_scale.to_array());
        self.rotations.extend_from_slice(&rotation.to_array());
        self.opacity_logits.push(opacity_logit);
    }

    pub fn position(&self, i: usize) -> Vec3<T> {
        Vec3::from_slice(&self.positions[3 * i..])
    }

    pub fn log_scale(&self, i: usize) -> Vec3<T> {
        Vec3::from_slice(&self.log_scales[3 * i..])
    }

    pub fn rotation(&self, i: usize) -> Quat<T> {
        Quat::from_slice(&self.rotations[4 * i..])
    }

    /// Re-project every quaternion onto the unit sphere.
    pub fn normalize_rotations(&mut self) {
        for q in self.rotations.chunks_exact_mut(4) {
            let n = Quat::from_slice(q).norm();
            if n.val() > 0.0 {
                for c in q.iter_mut() {
                    *c = *c / n;
                }
            } else {
                q.copy_from_slice(&Quat::<T>::identity().to_array());
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StaticNode<T> {
    pub gaussians: GaussianSet<T>,
    /// N×D_geo learnable geometric features.
    pub f_geo: Vec<T>,
    pub geo_dim: usize,
}

impl<T: Real> StaticNode<T> {
    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn f_geo(&self, i: usize) -> &[T] {
        &self.f_geo[i * self.geo_dim..(i + 1) * self.geo_dim]
    }

    pub fn primitive(&self, i: usize) -> GaussianPrimitive<T> {
        let g = &self.gaussians;
        GaussianPrimitive {
            position: g.position(i),
            log_scale: g.log_scale(i),
            rotation: g.rotation(i),
            opacity_logit: g.opacity_logits[i],
            f_geo: self.f_geo(i).to_vec(),
        }
    }

    pub fn push(&mut self, p: &GaussianPrimitive<T>) -> Result<()> {
        if p.f_geo.len() != self.geo_dim {
            return Err(Error::invalid(format!("f_geo has {} values, expected {}", p.f_geo.len(), self.geo_dim)));
        }
        self.gaussians.push(p.position, p.log_scale, p.rotation, p.opacity_logit);
        self.f_geo.extend_from_slice(&p.f_geo);
        Ok(())
    }
}

/// Far-field sphere of splats whose colors come from the sky field.
#[derive(Clone, Debug, PartialEq)]
pub struct SkyNode<T> {
    pub gaussians: GaussianSet<T>,
    pub radius: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    pub time: f64,
    pub pose: Pose,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectNode<T> {
    /// Gaussians in the object's own frame.
    pub canonical: GaussianSet<T>,
    /// N×3 color logits; objects are not decomposed.
    pub color_logits: Vec<T>,
    pub trajectory: Vec<Keyframe>,
    pub feature: Vec<T>,
}

impl<T: Real> ObjectNode<T> {
    pub fn validate(&self) -> Result<()> {
        if self.trajectory.is_empty() {
            return Err(Error::invalid("object trajectory is empty"));
        }
        if self.trajectory.windows(2).any(|w| w[1].time <= w[0].time) {
            return Err(Error::invalid("object trajectory timestamps must be strictly increasing"));
        }
        if self.color_logits.len() != 3 * self.canonical.len() {
            return Err(Error::invalid("object color count does not match its Gaussians"));
        }
        Ok(())
    }
}

/// Per-traversal embedding and affine color alignment.
#[derive(Clone, Debug, PartialEq)]
pub struct TraversalTable<T> {
    /// M×D_emb
    pub embeddings: Vec<T>,
    /// M×3
    pub affine_scale: Vec<T>,
    /// M×3
    pub affine_bias: Vec<T>,
    pub dim: usize,
}

impl<T: Real> TraversalTable<T> {
    /// Embeddings drawn from N(0, 0.1²); affine starts at identity.
    pub fn new(count: usize, dim: usize, rng: &mut impl Rng) -> Self {
        let normal = rand_distr::Normal::new(0.0, 0.1).expect("valid normal");
        let embeddings = (0..count * dim).map(|_| T::lit(rng.sample(normal))).collect();
        Self {
            embeddings,
            affine_scale: vec![T::one(); 3 * count],
            affine_bias: vec![T::zero(); 3 * count],
            dim,
        }
    }

    pub fn len(&self) -> usize {
        self.affine_scale.len() / 3
    }

    pub fn is_empty(&self) -> bool {
        self.affine_scale.is_empty()
    }

    pub fn check(&self, m: usize) -> Result<()> {
        if m >= self.len() {
            Err(Error::MissingTraversal(m))
        } else {
            Ok(())
        }
    }

    pub fn embedding(&self, m: usize) -> Result<&[T]> {
        self.check(m)?;
        Ok(&self.embeddings[m * self.dim..(m + 1) * self.dim])
    }

    pub fn affine(&self, m: usize) -> Result<([T; 3], [T; 3])> {
        self.check(m)?;
        let s = [self.affine_scale[3 * m], self.affine_scale[3 * m + 1], self.affine_scale[3 * m + 2]];
        let b = [self.affine_bias[3 * m], self.affine_bias[3 * m + 1], self.affine_bias[3 * m + 2]];
        Ok((s, b))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneGraph<T> {
    pub static_node: StaticNode<T>,
    pub sky: SkyNode<T>,
    pub objects: Vec<ObjectNode<T>>,
    pub traversals: TraversalTable<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NodeTag {
    Static,
    Sky,
    Object(usize),
}

/// A Gaussian expressed in world coordinates for one query.
#[derive(Clone, Debug, PartialEq)]
pub struct WorldSplat<T> {
    pub position: Vec3<T>,
    pub log_scale: Vec3<T>,
    pub rotation: Quat<T>,
    pub opacity_logit: T,
    pub node: NodeTag,
    /// Index of the primitive within its node.
    pub source: usize,
}

/// Pose of an object at time `tau`, or `None` if `tau` lies outside the
/// trajectory span (the object is absent).
pub fn object_pose_at(trajectory: &[Keyframe], tau: f64) -> Option<Pose> {
    let first = trajectory.first()?;
    let last = trajectory.last()?;
    if tau < first.time || tau > last.time {
        return None;
    }
    let k = trajectory.partition_point(|k| k.time <= tau);
    // trajectory[k - 1].time <= tau < trajectory[k].time, or tau is the last key.
    let a = &trajectory[k - 1];
    if a.time == tau || k == trajectory.len() {
        return Some(a.pose);
    }
    let b = &trajectory[k];
    let t = (tau - a.time) / (b.time - a.time);
    let pa = a.pose.translation;
    let pb = b.pose.translation;
    Some(Pose {
        rotation: a.pose.rotation.slerp(b.pose.rotation, t),
        translation: pa + (pb - pa) * t,
    })
}

/// Sinusoidal features of trajectory-normalized time.
pub fn time_encoding(trajectory: &[Keyframe], tau: f64) -> [f64; 2 * TIME_FREQUENCIES] {
    let (t0, t1) = match (trajectory.first(), trajectory.last()) {
        (Some(a), Some(b)) => (a.time, b.time),
        _ => (0.0, 0.0),
    };
    let tn = if t1 > t0 { (tau - t0) / (t1 - t0) } else { 0.0 };
    let mut out = [0.0; 2 * TIME_FREQUENCIES];
    for k in 0..TIME_FREQUENCIES {
        let w = std::f64::consts::PI * (1u32 << k) as f64;
        out[2 * k] = (w * tn).sin();
        out[2 * k + 1] = (w * tn).cos();
    }
    out
}

/// Per-primitive offsets in the object's canonical frame.
pub fn apply_deformation<T: Real>(object: &ObjectNode<T>, tau: f64, fields: &NeuralFieldSet<T>) -> Result<Vec<Vec3<T>>> {
    let n = object.canonical.len();
    if fields.config.rigid_objects || n == 0 {
        return Ok(vec![Vec3::zero(); n]);
    }
    let input = fields.deform_input(object, tau)?;
    let (out, _) = fields.deform.forward(input.view())?;
    Ok((0..n).map(|i| Vec3::new(out[[i, 0]], out[[i, 1]], out[[i, 2]])).collect())
}

/// Flatten the scene into world-space splats for traversal `m` at time `tau`.
/// Order is static, then present objects, then sky.
pub fn compose_world<T: Real>(
    scene: &SceneGraph<T>,
    fields: &NeuralFieldSet<T>,
    m: usize,
    tau: f64,
) -> Result<Vec<WorldSplat<T>>> {
    scene.traversals.check(m)?;
    let mut out = Vec::new();
    let push_set = |out: &mut Vec<WorldSplat<T>>, g: &GaussianSet<T>, node: NodeTag| {
        for i in 0..g.len() {
            out.push(WorldSplat {
                position: g.position(i),
                log_scale: g.log_scale(i),
                rotation: g.rotation(i),
                opacity_logit: g.opacity_logits[i],
                node,
                source: i,
            });
        }
    };
    push_set(&mut out, &scene.static_node.gaussians, NodeTag::Static);
    for (k, obj) in scene.objects.iter().enumerate() {
        let Some(pose) = object_pose_at(&obj.trajectory, tau) else { continue };
        let offsets = apply_deformation(obj, tau, fields)?;
        let q = pose.rotation.cast::<T>();
        let t = pose.translation.cast::<T>();
        for (i, off) in offsets.iter().enumerate() {
            let p = obj.canonical.position(i) + *off;
            out.push(WorldSplat {
                position: q.rotate(p) + t,
                log_scale: obj.canonical.log_scale(i),
                rotation: q.mul(obj.canonical.rotation(i)),
                opacity_logit: obj.canonical.opacity_logits[i],
                node: NodeTag::Object(k),
                source: i,
            });
        }
    }
    push_set(&mut out, &scene.sky.gaussians, NodeTag::Sky);
    Ok(out)
}

/// Expected angular spacing of an `count`-point lattice on the unit sphere.
pub fn sky_lattice_spacing(count: usize) -> f64 {
    (4.0 * std::f64::consts::PI / count.max(1) as f64).sqrt()
}

/// Fibonacci-lattice sky sphere. The seed fixes the lattice's azimuthal offset.
pub fn sky_placement<T: Real>(radius: f64, count: usize, seed: u64) -> SkyNode<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset: f64 = rng.random::<f64>() * std::f64::consts::TAU;
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let spacing = radius * sky_lattice_spacing(count);
    let tangential = (1.5 * spacing).ln();
    let radial = (1.5 * spacing / 100.0).ln();
    let mut gaussians = GaussianSet::default();
    for i in 0..count {
        let z = 1.0 - (2.0 * i as f64 + 1.0) / count as f64;
        let r = (1.0 - z * z).max(0.0).sqrt();
        let phi = offset + golden * i as f64;
        let dir = Vec3::new(r * phi.cos(), r * phi.sin(), z);
        let rot = Quat::between(Vec3::new(0.0, 0.0, 1.0), dir);
        gaussians.push(
            (dir * radius).cast(),
            Vec3::new(tangential, tangential, radial).cast(),
            rot.cast(),
            T::lit(SKY_OPACITY_LOGIT),
        );
    }
    SkyNode { gaussians, radius }
}
