//! End-to-end differentiable rendering of a model for one view: composition,
//! per-splat shading, projection and rasterization, and the matching
//! backward pass down to every model tensor.
//!
//! Per-splat geometry (projection, normal, direction encodings) is evaluated
//! on dual numbers over the splat's 10 geometric parameters, so its exact
//! Jacobian comes out of the forward pass and the backward pass is a product
//! with the accumulated adjoints.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::fields::{encode_directions, GradTape, ENC_LEN, ENC_N_LEN, ENC_R_LEN, ENC_V_DEGREE, ENC_V_LEN, LIGHT_FLOOR};
use crate::geom::sh::sh_eval;
use crate::geom::{covariance_from, project_gaussian, reflect_raw, shortest_axis_normal_raw, Camera, Pose, Quat, Splat2D, Vec3};
use crate::model::Model;
use crate::raster::{rasterize_backward, rasterize_forward, RasterCache, RasterSettings, RenderOutput, ShadedSplat, StaticPayload};
use crate::real::{sigmoid, Dual, Real, Scalar};
use crate::scene::{object_pose_at, GaussianSet, SKY_OPACITY_LOGIT};

/// Number of geometric parameters per splat: position, log-scale, quaternion.
const NG: usize = 10;
/// Geometry outputs differentiated per splat: mean, cov, depth, normal, encodings.
const NJ: usize = 2 + 3 + 1 + 3 + ENC_LEN;

type Jacobian<T> = Box<[[T; NG]; NJ]>;

/// What to render: the camera, the traversal whose gate selects geometry,
/// the traversal whose embedding drives light/sky/affine, and the timestamp.
#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub camera: Camera,
    pub m_material: usize,
    pub m_light: usize,
    pub tau: f64,
}

impl View {
    pub fn new(camera: Camera, m: usize, tau: f64) -> Self {
        Self { camera, m_material: m, m_light: m, tau }
    }
}

struct GeomEval<T> {
    splat: Splat2D<T>,
    normal: [T; 3],
    enc: [T; ENC_LEN],
    jac: Jacobian<T>,
}

fn geometry<T: Real>(p: Vec3<T>, ls: Vec3<T>, q: Quat<T>, camera: &Camera, shading: bool) -> Option<GeomEval<T>> {
    type D<T> = Dual<T, NG>;
    let v = |x: T, i: usize| D::<T>::var(x, i);
    let pd = Vec3::new(v(p.x, 0), v(p.y, 1), v(p.z, 2));
    let lsd = Vec3::new(v(ls.x, 3), v(ls.y, 4), v(ls.z, 5));
    let qd = Quat::new(v(q.w, 6), v(q.x, 7), v(q.y, 8), v(q.z, 9));
    let cov = covariance_from(lsd, qd);
    let s = project_gaussian(pd, &cov, camera)?;
    let mut outs = [D::<T>::lit(0.0); NJ];
    outs[0] = s.mean[0];
    outs[1] = s.mean[1];
    outs[2..5].copy_from_slice(&s.cov);
    outs[5] = s.depth;
    if shading {
        let c = camera.center();
        let cam = Vec3::new(D::<T>::lit(c.x), D::<T>::lit(c.y), D::<T>::lit(c.z));
        let to_cam = cam - pd;
        if to_cam.norm().val() == 0.0 {
            return None;
        }
        let n = shortest_axis_normal_raw(lsd, qd, pd, cam);
        let vd = to_cam.normalized();
        let r = reflect_raw(n, vd);
        outs[6] = n.x;
        outs[7] = n.y;
        outs[8] = n.z;
        encode_directions(n, r, vd, &mut outs[9..]);
    }
    let mut jac: Jacobian<T> = Box::new([[T::zero(); NG]; NJ]);
    for (row, o) in jac.iter_mut().zip(&outs) {
        *row = o.d;
    }
    let val = |i: usize| outs[i].v;
    let mut enc = [T::zero(); ENC_LEN];
    for (e, o) in enc.iter_mut().zip(&outs[9..]) {
        *e = o.v;
    }
    Some(GeomEval {
        splat: Splat2D { mean: [val(0), val(1)], cov: [val(2), val(3), val(4)], depth: val(5) },
        normal: [val(6), val(7), val(8)],
        enc,
        jac,
    })
}

fn on_screen<T: Real>(s: &Splat2D<T>, camera: &Camera) -> bool {
    let rx = 3.0 * s.cov[0].val().max(0.0).sqrt();
    let ry = 3.0 * s.cov[2].val().max(0.0).sqrt();
    let (mx, my) = (s.mean[0].val(), s.mean[1].val());
    mx + rx >= 0.0 && mx - rx <= camera.width as f64 && my + ry >= 0.0 && my - ry <= camera.height as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Source {
    Static(usize),
    Object(usize, usize),
    Sky(usize),
}

struct ObjectFrame<T> {
    index: usize,
    pose: Pose,
    deform_tape: Option<GradTape<T>>,
}

/// State recorded by [`render_forward`] and consumed by [`render_backward`].
pub struct RenderCache<T> {
    view: View,
    sources: Vec<Source>,
    splats: Vec<ShadedSplat<T>>,
    jacobians: Vec<Option<Jacobian<T>>>,
    /// Shaded-splat index of every static batch row.
    static_rows: Vec<usize>,
    material: Array2<T>,
    light: Array2<T>,
    gate: Option<Array2<T>>,
    material_tape: Option<GradTape<T>>,
    light_tape: Option<GradTape<T>>,
    gate_tape: Option<GradTape<T>>,
    sky_rows: Vec<usize>,
    sky_tape: Option<GradTape<T>>,
    objects: Vec<ObjectFrame<T>>,
    raster: RasterCache<T>,
}

/// Render one view; returns pre-affine layers and the cache for backward.
pub fn render_forward<T: Real>(model: &Model<T>, view: &View) -> Result<(RenderOutput<T>, RenderCache<T>)> {
    let scene = &model.scene;
    let fields = &model.fields;
    let fc = &fields.config;
    let camera = &view.camera;
    camera.validate()?;
    let e_light = scene.traversals.embedding(view.m_light)?.to_vec();
    let e_gate = scene.traversals.embedding(view.m_material)?.to_vec();

    let mut sources = Vec::new();
    let mut geoms: Vec<(Splat2D<T>, Option<GeomEval<T>>)> = Vec::new();

    // Static node.
    let st = &scene.static_node;
    let mut static_batch = Vec::new();
    for i in 0..st.len() {
        let g = &st.gaussians;
        if let Some(ge) = geometry(g.position(i), g.log_scale(i), g.rotation(i), camera, true) {
            if on_screen(&ge.splat, camera) {
                static_batch.push(sources.len());
                sources.push(Source::Static(i));
                geoms.push((ge.splat, Some(ge)));
            }
        }
    }

    // Objects present at tau.
    let mut objects = Vec::new();
    for (k, obj) in scene.objects.iter().enumerate() {
        let Some(pose) = object_pose_at(&obj.trajectory, view.tau) else { continue };
        let n = obj.canonical.len();
        let (offsets, deform_tape) = if fc.rigid_objects || n == 0 {
            (Array2::zeros((n, 3)), None)
        } else {
            let x = fields.deform_input(obj, view.tau)?;
            let (y, tape) = fields.deform.forward(x.view())?;
            (y, Some(tape))
        };
        let q = pose.rotation.cast::<T>();
        let t = pose.translation.cast::<T>();
        for i in 0..n {
            let off = Vec3::new(offsets[[i, 0]], offsets[[i, 1]], offsets[[i, 2]]);
            let p = q.rotate(obj.canonical.position(i) + off) + t;
            let rot = q.mul(obj.canonical.rotation(i));
            if let Some(ge) = geometry(p, obj.canonical.log_scale(i), rot, camera, false) {
                if on_screen(&ge.splat, camera) {
                    sources.push(Source::Object(k, i));
                    geoms.push((ge.splat, Some(ge)));
                }
            }
        }
        objects.push(ObjectFrame { index: k, pose, deform_tape });
    }

    // Sky: geometry is frozen, evaluate without derivatives.
    let sky = &scene.sky.gaussians;
    let mut sky_rows = Vec::new();
    let mut sky_dirs = Vec::new();
    let center = camera.center().cast::<T>();
    for i in 0..sky.len() {
        let p = sky.position(i);
        let cov = covariance_from(sky.log_scale(i), sky.rotation(i));
        if let Some(s) = project_gaussian(p, &cov, camera) {
            if on_screen(&s, camera) {
                sky_rows.push(sources.len());
                sky_dirs.push((p - center).normalized());
                sources.push(Source::Sky(i));
                geoms.push((s, None));
            }
        }
    }

    // Static shading, batched.
    let nb = static_batch.len();
    let geo_rows = Array2::from_shape_fn((nb, fc.geo_dim), |(r, c)| match sources[static_batch[r]] {
        Source::Static(i) => st.f_geo(i)[c],
        _ => unreachable!(),
    });
    let (material, material_tape) = fields.material.forward(geo_rows.view())?;
    let mut light_in = Array2::zeros((nb, fc.light_input_dim()));
    for (r, &s) in static_batch.iter().enumerate() {
        let ge = geoms[s].1.as_ref().expect("static splats carry geometry");
        let mut row = light_in.row_mut(r);
        let row = row.as_slice_mut().expect("contiguous");
        row[..ENC_LEN].copy_from_slice(&ge.enc);
        fields.mask_light_input(row);
        row[ENC_LEN..ENC_LEN + fc.geo_dim].copy_from_slice(geo_rows.row(r).as_slice().expect("contiguous"));
        row[ENC_LEN + fc.geo_dim..].copy_from_slice(&e_light);
    }
    let (light, light_tape) = fields.light.forward(light_in.view())?;
    let light = light.mapv(|v| v + T::lit(LIGHT_FLOOR));
    let (gate, gate_tape) = if fc.gating {
        let mut gin = Array2::zeros((nb, fc.gate_input_dim()));
        for r in 0..nb {
            let mut row = gin.row_mut(r);
            let row = row.as_slice_mut().expect("contiguous");
            row[..fc.geo_dim].copy_from_slice(geo_rows.row(r).as_slice().expect("contiguous"));
            row[fc.geo_dim..].copy_from_slice(&e_gate);
        }
        let (g, t) = fields.gate.forward(gin.view())?;
        (Some(g), Some(t))
    } else {
        (None, None)
    };

    // Sky shading, batched.
    let mut sky_in = Array2::zeros((sky_rows.len(), fc.sky_input_dim()));
    for (r, d) in sky_dirs.iter().enumerate() {
        let mut row = sky_in.row_mut(r);
        let row = row.as_slice_mut().expect("contiguous");
        sh_eval(*d, ENC_V_DEGREE, &mut row[..ENC_V_LEN]);
        row[ENC_V_LEN..].copy_from_slice(&e_light);
    }
    let (sky_color, sky_tape) = fields.sky.forward(sky_in.view())?;

    let mut static_row_of = vec![usize::MAX; sources.len()];
    for (r, &s) in static_batch.iter().enumerate() {
        static_row_of[s] = r;
    }
    let mut sky_row = 0;
    let mut splats = Vec::with_capacity(sources.len());
    let mut jacobians = Vec::with_capacity(sources.len());
    for (s, (src, (geom, ge))) in sources.iter().zip(geoms).enumerate() {
        let shaded = match *src {
            Source::Static(i) => {
                let r = static_row_of[s];
                let att = gate.as_ref().map_or(T::one(), |g| g[[r, 0]]);
                let m = [material[[r, 0]], material[[r, 1]], material[[r, 2]]];
                let l = [light[[r, 0]], light[[r, 1]], light[[r, 2]]];
                let normal = ge.as_ref().expect("static geometry").normal;
                ShadedSplat {
                    geom,
                    opacity: sigmoid(st.gaussians.opacity_logits[i]) * att,
                    color: [m[0] * l[0], m[1] * l[1], m[2] * l[2]],
                    static_payload: Some(StaticPayload { normal, material: m }),
                }
            }
            Source::Object(k, i) => {
                let o = &scene.objects[k];
                ShadedSplat {
                    geom,
                    opacity: sigmoid(o.canonical.opacity_logits[i]),
                    color: [0, 1, 2].map(|c| sigmoid(o.color_logits[3 * i + c])),
                    static_payload: None,
                }
            }
            Source::Sky(_) => {
                let r = sky_row;
                sky_row += 1;
                ShadedSplat {
                    geom,
                    opacity: sigmoid(T::lit(SKY_OPACITY_LOGIT)),
                    color: [sky_color[[r, 0]], sky_color[[r, 1]], sky_color[[r, 2]]],
                    static_payload: None,
                }
            }
        };
        splats.push(shaded);
        jacobians.push(ge.map(|g| g.jac));
    }

    let settings = RasterSettings::new(camera.width, camera.height);
    let (out, raster) = rasterize_forward(&splats, &settings)?;
    let cache = RenderCache {
        view: view.clone(),
        sources,
        splats,
        jacobians,
        static_rows: static_batch,
        material,
        light,
        gate,
        material_tape: Some(material_tape),
        light_tape: Some(light_tape),
        gate_tape,
        sky_rows,
        sky_tape: Some(sky_tape),
        objects,
        raster,
    };
    Ok((out, cache))
}

fn add3<T: Real>(dst: &mut [T], v: Vec3<T>) {
    dst[0] += v.x;
    dst[1] += v.y;
    dst[2] += v.z;
}

fn geometry_adjoint<T: Real>(jac: &Jacobian<T>, adj: &[T; NJ]) -> [T; NG] {
    let mut out = [T::zero(); NG];
    for (row, a) in jac.iter().zip(adj) {
        if a.val() == 0.0 {
            continue;
        }
        for k in 0..NG {
            out[k] += *a * row[k];
        }
    }
    out
}

fn scatter_geometry<T: Real>(set: &mut GaussianSet<T>, i: usize, d: &[T; NG]) {
    for k in 0..3 {
        set.positions[3 * i + k] += d[k];
        set.log_scales[3 * i + k] += d[3 + k];
    }
    for k in 0..4 {
        set.rotations[4 * i + k] += d[6 + k];
    }
}

/// Accumulate the gradient of `Σ adjoint ⊙ output` into `grads`.
pub fn render_backward<T: Real>(
    model: &Model<T>,
    mut cache: RenderCache<T>,
    adjoint: &RenderOutput<T>,
    grads: &mut Model<T>,
) -> Result<()> {
    let fields = &model.fields;
    let fc = &fields.config;
    let scene = &model.scene;
    let view = &cache.view;
    let sg = rasterize_backward(&cache.splats, &cache.raster, adjoint)?;
    let nb = cache.static_rows.len();

    // Static shading adjoints.
    let mut d_material = Array2::zeros((nb, 3));
    let mut d_light = Array2::zeros((nb, 3));
    let mut d_gate = Array2::zeros((nb, 1));
    for (r, &s) in cache.static_rows.iter().enumerate() {
        let Source::Static(i) = cache.sources[s] else { unreachable!() };
        let g = &sg[s];
        for c in 0..3 {
            d_material[[r, c]] = g.color[c] * cache.light[[r, c]] + g.material[c];
            d_light[[r, c]] = g.color[c] * cache.material[[r, c]];
        }
        let sig = sigmoid(scene.static_node.gaussians.opacity_logits[i]);
        let att = cache.gate.as_ref().map_or(T::one(), |g| g[[r, 0]]);
        grads.scene.static_node.gaussians.opacity_logits[i] += g.opacity * att * sig * (T::one() - sig);
        d_gate[[r, 0]] = g.opacity * sig;
    }
    let take = |t: &mut Option<GradTape<T>>| t.take().ok_or_else(|| Error::ContractViolation("render cache already consumed".into()));
    let d_geo_m = fields.material.backward(&mut take(&mut cache.material_tape)?, d_material.view(), &mut grads.fields.material)?;
    let d_in = fields.light.backward(&mut take(&mut cache.light_tape)?, d_light.view(), &mut grads.fields.light)?;
    let d_geo_g = match cache.gate_tape.as_mut() {
        Some(t) => Some(fields.gate.backward(t, d_gate.view(), &mut grads.fields.gate)?),
        None => None,
    };

    let emb_dim = fc.emb_dim;
    let (ml, mm) = (view.m_light, view.m_material);
    for (r, &s) in cache.static_rows.iter().enumerate() {
        let Source::Static(i) = cache.sources[s] else { unreachable!() };
        let g = &sg[s];
        let row = d_in.row(r);
        let mut adj = [T::zero(); NJ];
        adj[0..2].copy_from_slice(&g.mean);
        adj[2..5].copy_from_slice(&g.cov);
        adj[5] = g.depth;
        adj[6..9].copy_from_slice(&g.normal);
        for k in 0..ENC_LEN {
            let enabled = if k < ENC_N_LEN {
                fc.normal_encoding
            } else if k < ENC_N_LEN + ENC_R_LEN {
                fc.reflection_encoding
            } else {
                true
            };
            if enabled {
                adj[9 + k] = row[k];
            }
        }
        let d = geometry_adjoint(cache.jacobians[s].as_ref().expect("static geometry"), &adj);
        scatter_geometry(&mut grads.scene.static_node.gaussians, i, &d);
        let fg = &mut grads.scene.static_node.f_geo[i * fc.geo_dim..(i + 1) * fc.geo_dim];
        for c in 0..fc.geo_dim {
            fg[c] += d_geo_m[[r, c]] + row[ENC_LEN + c];
            if let Some(dg) = &d_geo_g {
                fg[c] += dg[[r, c]];
            }
        }
        let e = &mut grads.scene.traversals.embeddings;
        for c in 0..emb_dim {
            e[ml * emb_dim + c] += row[ENC_LEN + fc.geo_dim + c];
            if let Some(dg) = &d_geo_g {
                e[mm * emb_dim + c] += dg[[r, fc.geo_dim + c]];
            }
        }
    }

    // Sky colors.
    let mut d_sky = Array2::zeros((cache.sky_rows.len(), 3));
    for (r, &s) in cache.sky_rows.iter().enumerate() {
        for c in 0..3 {
            d_sky[[r, c]] = sg[s].color[c];
        }
    }
    let d_sky_in = fields.sky.backward(&mut take(&mut cache.sky_tape)?, d_sky.view(), &mut grads.fields.sky)?;
    for r in 0..cache.sky_rows.len() {
        for c in 0..emb_dim {
            grads.scene.traversals.embeddings[ml * emb_dim + c] += d_sky_in[[r, ENC_V_LEN + c]];
        }
    }

    // Objects.
    let mut d_offsets: Vec<Option<Array2<T>>> = vec![None; scene.objects.len()];
    let mut poses: Vec<Option<Pose>> = vec![None; scene.objects.len()];
    for f in &cache.objects {
        d_offsets[f.index] = Some(Array2::zeros((scene.objects[f.index].canonical.len(), 3)));
        poses[f.index] = Some(f.pose);
    }
    for (s, src) in cache.sources.iter().enumerate() {
        let Source::Object(k, i) = *src else { continue };
        let obj = &scene.objects[k];
        let g = &sg[s];
        let sig = sigmoid(obj.canonical.opacity_logits[i]);
        let go = &mut grads.scene.objects[k];
        go.canonical.opacity_logits[i] += g.opacity * sig * (T::one() - sig);
        for c in 0..3 {
            let sc = sigmoid(obj.color_logits[3 * i + c]);
            go.color_logits[3 * i + c] += g.color[c] * sc * (T::one() - sc);
        }
        let mut adj = [T::zero(); NJ];
        adj[0..2].copy_from_slice(&g.mean);
        adj[2..5].copy_from_slice(&g.cov);
        adj[5] = g.depth;
        let d = geometry_adjoint(cache.jacobians[s].as_ref().expect("object geometry"), &adj);
        let pose = poses[k].expect("present object");
        let rt = pose.rotation.cast::<T>().to_mat3().transpose();
        let dp = rt.mul_vec(Vec3::new(d[0], d[1], d[2]));
        add3(&mut go.canonical.positions[3 * i..], dp);
        let doff = d_offsets[k].as_mut().expect("present object");
        doff[[i, 0]] += dp.x;
        doff[[i, 1]] += dp.y;
        doff[[i, 2]] += dp.z;
        for c in 0..3 {
            go.canonical.log_scales[3 * i + c] += d[3 + c];
        }
        // q_world = q_pose ⊗ q_canonical is linear in q_canonical.
        let qp = pose.rotation.cast::<T>();
        for j in 0..4 {
            let mut e = [T::zero(); 4];
            e[j] = T::one();
            let col = qp.mul(Quat::from_slice(&e)).to_array();
            go.canonical.rotations[4 * i + j] += (0..4).fold(T::zero(), |acc, r| acc + col[r] * d[6 + r]);
        }
    }
    for f in cache.objects.iter_mut() {
        let Some(tape) = f.deform_tape.as_mut() else { continue };
        let doff = d_offsets[f.index].take().expect("present object");
        let dx = fields.deform.backward(tape, doff.view(), &mut grads.fields.deform)?;
        let go = &mut grads.scene.objects[f.index];
        let time_len = fc.deform_input_dim() - 3 - fc.object_feature_dim;
        for i in 0..dx.nrows() {
            for c in 0..3 {
                go.canonical.positions[3 * i + c] += dx[[i, c]];
            }
            for c in 0..fc.object_feature_dim {
                go.feature[c] += dx[[i, 3 + time_len + c]];
            }
        }
    }
    Ok(())
}

/// Forward render without keeping a cache.
pub fn render<T: Real>(model: &Model<T>, view: &View) -> Result<RenderOutput<T>> {
    Ok(render_forward(model, view)?.0)
}

/// Per-pixel affine color alignment of traversal `m`, clamped to [0, 1].
pub fn apply_traversal_affine<T: Real>(
    rgb: &crate::image::Image<T>,
    m: usize,
    table: &crate::scene::TraversalTable<T>,
) -> Result<crate::image::Image<T>> {
    let (s, b) = table.affine(m)?;
    let mut out = rgb.clone();
    for px in out.data.chunks_exact_mut(3) {
        for c in 0..3 {
            px[c] = (s[c] * px[c] + b[c]).max(T::zero()).min(T::one());
        }
    }
    Ok(out)
}

/// Backward of [`apply_traversal_affine`]: accumulates affine adjoints into
/// `grads` and returns the adjoint of the pre-affine image. Saturated
/// outputs pass no gradient.
pub fn affine_backward<T: Real>(
    rgb: &crate::image::Image<T>,
    m: usize,
    table: &crate::scene::TraversalTable<T>,
    d_out: &crate::image::Image<T>,
    grads: &mut crate::scene::TraversalTable<T>,
) -> Result<crate::image::Image<T>> {
    let (s, b) = table.affine(m)?;
    let mut d_in = crate::image::Image::zeros(rgb.width, rgb.height, 3);
    for ((px, g), di) in rgb.data.chunks_exact(3).zip(d_out.data.chunks_exact(3)).zip(d_in.data.chunks_exact_mut(3)) {
        for c in 0..3 {
            let raw = s[c] * px[c] + b[c];
            if raw < T::zero() || raw > T::one() {
                continue;
            }
            grads.affine_scale[3 * m + c] += g[c] * px[c];
            grads.affine_bias[3 * m + c] += g[c];
            di[c] = g[c] * s[c];
        }
    }
    Ok(d_in)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{InitPoint, ModelConfig};
    use crate::scene::{Keyframe, ObjectNode};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn toy_model(seed: u64) -> Model<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points: Vec<InitPoint> = (0..8)
            .map(|_| InitPoint {
                position: Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-0.3..0.3)),
                normal: Vec3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), 1.0),
            })
            .collect();
        let cfg = ModelConfig { sky_count: 6, sky_radius_factor: 3.0, ..ModelConfig::default() };
        let mut m = Model::<f64>::from_points(&points, 2, &cfg, seed).unwrap();
        m.fields.randomize_output_layers(&mut rng);
        // Distinct scales keep the shortest axis away from ties.
        for v in m.scene.static_node.gaussians.log_scales.iter_mut() {
            *v += rng.random_range(-0.6..0.6);
        }
        m
    }

    fn camera() -> Camera {
        Camera::look_at(Vec3::new(0.3, -0.4, 4.0), Vec3::zero(), Vec3::new(0.0, 1.0, 0.0), 16, 16, 14.0, 14.0)
    }

    #[test]
    fn self_relight_equals_render_and_material_is_light_independent() {
        let m = toy_model(1);
        let a = render(&m, &View::new(camera(), 0, 0.0)).unwrap();
        let b = render(&m, &View { camera: camera(), m_material: 0, m_light: 0, tau: 0.0 }).unwrap();
        assert_eq!(a, b);
        let c = render(&m, &View { camera: camera(), m_material: 0, m_light: 1, tau: 0.0 }).unwrap();
        assert_eq!(a.material, c.material);
        assert_ne!(a.rgb, c.rgb);
        assert!(matches!(render(&m, &View::new(camera(), 2, 0.0)), Err(Error::MissingTraversal(2))));
    }

    #[test]
    fn affine_identity_and_example() {
        let table = crate::scene::TraversalTable::<f64>::new(1, 4, &mut ChaCha8Rng::seed_from_u64(0));
        let img = crate::image::Image::filled(2, 2, &[0.3, 0.6, 0.9]);
        assert_eq!(apply_traversal_affine(&img, 0, &table).unwrap(), img);
        let mut t2 = table.clone();
        t2.affine_scale = vec![2.0; 3];
        t2.affine_bias = vec![0.1; 3];
        let out = apply_traversal_affine(&img, 0, &t2).unwrap();
        assert!((out.pixel(0, 0)[0] - 0.7).abs() < 1e-12);
        assert_eq!(out.pixel(0, 0)[1], 1.0);
        assert!(matches!(apply_traversal_affine(&img, 1, &t2), Err(Error::MissingTraversal(1))));
    }

    #[test]
    fn affine_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut table = crate::scene::TraversalTable::<f64>::new(2, 4, &mut rng);
        table.affine_scale = vec![0.9, 1.1, 0.8, 1.2, 0.7, 1.05];
        table.affine_bias = vec![0.02, -0.03, 0.05, 0.0, 0.01, -0.02];
        let img = crate::image::Image::from_vec(3, 3, 3, (0..27).map(|_| rng.random_range(0.05..0.8)).collect()).unwrap();
        let w: Vec<f64> = (0..27).map(|_| rng.random_range(-1.0..1.0)).collect();
        let d_out = crate::image::Image::from_vec(3, 3, 3, w.clone()).unwrap();
        let mut g = table.clone();
        g.affine_scale.fill(0.0);
        g.affine_bias.fill(0.0);
        affine_backward(&img, 1, &table, &d_out, &mut g).unwrap();
        let f = |t: &crate::scene::TraversalTable<f64>| {
            apply_traversal_affine(&img, 1, t).unwrap().data.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()
        };
        for c in 0..3 {
            let h = 1e-6;
            let mut p = table.clone();
            let mut q = table.clone();
            p.affine_scale[3 + c] += h;
            q.affine_scale[3 + c] -= h;
            let fd = (f(&p) - f(&q)) / (2.0 * h);
            assert!((fd - g.affine_scale[3 + c]).abs() < 1e-8);
            // The scale adjoint equals Σ ḡ · I over the image.
            let direct: f64 = img.data.chunks(3).zip(w.chunks(3)).map(|(p, w)| p[c] * w[c]).sum();
            assert!((direct - g.affine_scale[3 + c]).abs() < 1e-12);
        }
        assert_eq!(g.affine_scale[0], 0.0);
    }

    fn check_gradients(m: &Model<f64>, view: &View, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (out, cache) = render_forward(m, view).unwrap();
        let mut adj = RenderOutput::zeros(out.width(), out.height());
        for l in [&mut adj.rgb, &mut adj.alpha, &mut adj.normal, &mut adj.material, &mut adj.static_mask] {
            l.data.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        }
        let mut grads = m.zeros_like();
        render_backward(m, cache, &adj, &mut grads).unwrap();
        let objective = |m: &Model<f64>| {
            let o = render(m, view).unwrap();
            let pairs = [(&o.rgb, &adj.rgb), (&o.alpha, &adj.alpha), (&o.normal, &adj.normal), (&o.material, &adj.material), (&o.static_mask, &adj.static_mask)];
            pairs.iter().map(|(a, b)| a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum::<f64>()).sum::<f64>()
        };
        let g = grads.flatten();
        let layout = m.layout();
        let mut checked = 0;
        for (t, (name, group, len)) in layout.iter().enumerate() {
            if *group == crate::model::Group::Frozen {
                assert!(g[t].iter().all(|&v| v == 0.0));
                continue;
            }
            let stride = (*len / 6).max(1);
            for idx in (0..*len).step_by(stride) {
                let mut best = f64::INFINITY;
                for h in [1e-5, 1e-6, 1e-7] {
                    let bump = |d: f64| {
                        let mut p = m.clone();
                        let mut k = 0;
                        p.visit_mut(&mut |_, _, s| {
                            if k == t {
                                s[idx] += d;
                            }
                            k += 1;
                        });
                        objective(&p)
                    };
                    let fd = (bump(h) - bump(-h)) / (2.0 * h);
                    let an = g[t][idx];
                    let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-5);
                    best = best.min(rel);
                    if best < 1e-4 {
                        break;
                    }
                }
                assert!(best < 1e-4, "{name}[{idx}]: rel err {best} analytic {}", g[t][idx]);
                checked += 1;
            }
        }
        assert!(checked > 50);
    }

    #[test]
    fn static_and_sky_gradients_match_finite_differences() {
        let m = toy_model(5);
        check_gradients(&m, &View { camera: camera(), m_material: 1, m_light: 0, tau: 0.0 }, 7);
    }

    #[test]
    fn object_gradients_match_finite_differences() {
        let mut m = toy_model(6);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut canonical = GaussianSet::default();
        for _ in 0..3 {
            canonical.push(
                Vec3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)),
                Vec3::new(rng.random_range(-2.0..-1.0), rng.random_range(-2.0..-1.0), rng.random_range(-2.0..-1.0)),
                Quat::new(1.0, rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)),
                rng.random_range(-1.0..1.0),
            );
        }
        let key = |t: f64, a: f64, x: f64| Keyframe {
            time: t,
            pose: Pose { rotation: Quat::from_axis_angle(Vec3::new(0.2, 0.1, 1.0), a), translation: Vec3::new(x, 0.1, 0.5) },
        };
        m.scene.objects.push(ObjectNode {
            canonical,
            color_logits: (0..9).map(|_| rng.random_range(-1.0..1.0)).collect(),
            trajectory: vec![key(0.0, 0.1, -0.2), key(1.0, 0.6, 0.3)],
            feature: (0..8).map(|_| rng.random_range(-0.5..0.5)).collect(),
        });
        check_gradients(&m, &View::new(camera(), 1, 0.4), 9);
    }
}
