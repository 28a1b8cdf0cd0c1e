//! Analytic-versus-finite-difference gradient check of the full training
//! loss on a small random scene, reported per parameter class.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fields::FieldConfig;
use crate::geom::{Camera, Pose, Quat, Vec3};
use crate::image::Image;
use crate::losses::LossWeights;
use crate::model::{Group, InitPoint, Model, ModelConfig};
use crate::render::View;
use crate::scene::{GaussianSet, Keyframe, ObjectNode};
use crate::train::{loss_and_grad, Observation};

pub const TOLERANCE: f64 = 1e-4;
/// Relative errors are measured against at least this gradient magnitude.
pub const ABS_FLOOR: f64 = 1e-5;
/// Central-difference steps tried in order until one agrees.
pub const STEPS: [f64; 3] = [1e-5, 1e-6, 1e-7];
pub const IMAGE_SIZE: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scale {
    /// A spread of entries from every tensor.
    Small,
    /// Every entry of every learnable tensor.
    Full,
}

/// Parameter class of a model tensor, by tensor name.
pub fn class_of(name: &str) -> Option<&'static str> {
    let (head, rest) = name.split_once('.').unwrap_or((name, ""));
    match head {
        "static" => Some(match rest {
            "position" => "position",
            "log_scale" => "scale",
            "rotation" => "rotation",
            "opacity" => "opacity",
            _ => "f_geo",
        }),
        "sky" => None,
        "object" => Some(match rest.split_once('.').map(|(_, t)| t) {
            Some("color") => "object_color",
            Some("feature") => "object_feature",
            _ => "object_geometry",
        }),
        "traversal" => Some(if rest == "embedding" { "embedding" } else { "affine" }),
        "field" => Some(match rest.split('.').next() {
            Some("material") => "material_mlp",
            Some("light") => "light_mlp",
            Some("sky") => "sky_mlp",
            Some("gate") => "gate_mlp",
            _ => "deform_mlp",
        }),
        _ => None,
    }
}

pub const CLASSES: [&str; 15] = [
    "position",
    "scale",
    "rotation",
    "opacity",
    "f_geo",
    "material_mlp",
    "light_mlp",
    "gate_mlp",
    "sky_mlp",
    "deform_mlp",
    "embedding",
    "affine",
    "object_geometry",
    "object_color",
    "object_feature",
];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassReport {
    pub class: String,
    pub checked: usize,
    pub worst_rel_err: f64,
    /// Tensor entry with the worst error, `name[index]`.
    pub worst_at: String,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub seed: u64,
    pub splats: usize,
    pub classes: Vec<ClassReport>,
    pub passed: bool,
}

/// Random scene: 12 static splats, 4 sky splats, one 3-splat moving object,
/// two traversals, every network output layer randomized.
pub fn random_model(seed: u64) -> Model<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<InitPoint> = (0..12)
        .map(|_| InitPoint {
            position: Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-0.3..0.3)),
            normal: Vec3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), 1.0),
        })
        .collect();
    let fields = FieldConfig {
        geo_dim: 6,
        emb_dim: 4,
        object_feature_dim: 4,
        material_hidden: vec![8],
        light_hidden: vec![12, 12],
        sky_hidden: vec![8],
        gate_hidden: vec![8],
        deform_hidden: vec![8],
        ..FieldConfig::default()
    };
    let cfg = ModelConfig { fields, sky_count: 4, sky_radius_factor: 3.0, ..ModelConfig::default() };
    let mut m = Model::<f64>::from_points(&points, 2, &cfg, seed).expect("valid random scene");
    m.fields.randomize_output_layers(&mut rng);
    let g = &mut m.scene.static_node.gaussians;
    // Distinct scales keep the shortest axis and the flatness extremes away from ties.
    for v in g.log_scales.iter_mut() {
        *v += rng.random_range(-0.6..0.6);
    }
    for v in g.opacity_logits.iter_mut() {
        *v = rng.random_range(-1.0..2.0);
    }
    let t = &mut m.scene.traversals;
    for v in t.affine_scale.iter_mut() {
        *v = rng.random_range(0.8..1.1);
    }
    for v in t.affine_bias.iter_mut() {
        *v = rng.random_range(-0.05..0.05);
    }
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
        feature: (0..4).map(|_| rng.random_range(-0.5..0.5)).collect(),
    });
    m
}

fn random_image(rng: &mut ChaCha8Rng, channels: usize, lo: f64, hi: f64) -> Image<f64> {
    let n = IMAGE_SIZE * IMAGE_SIZE * channels;
    Image::from_vec(IMAGE_SIZE, IMAGE_SIZE, channels, (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("sized")
}

/// Two observations, one per traversal, with random supervision layers.
pub fn random_observations(seed: u64) -> Vec<Observation<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
    let camera = Camera::look_at(Vec3::new(0.3, -0.4, 4.0), Vec3::zero(), Vec3::new(0.0, 1.0, 0.0), IMAGE_SIZE, IMAGE_SIZE, 14.0, 14.0);
    (0..2)
        .map(|m| Observation {
            view: View::new(camera.clone(), m, 0.3 + 0.4 * m as f64),
            rgb: random_image(&mut rng, 3, 0.0, 1.0),
            material: random_image(&mut rng, 3, 0.0, 1.0),
            normal: random_image(&mut rng, 3, -1.0, 1.0),
            mask: random_image(&mut rng, 1, 0.0, 1.0).map(|v| if v > 0.3 { 1.0 } else { 0.0 }),
        })
        .collect()
}

/// Loss weights with every term active.
pub fn check_weights() -> LossWeights {
    LossWeights { lambda_ssim: 0.2, lambda_decomp: 0.3, lambda_scale: 0.5, delta: 1.0, normal_loss: true }
}

fn total(model: &Model<f64>, obs: &[Observation<f64>], w: &LossWeights, grads: &mut Model<f64>) -> Result<f64> {
    let mut sum = 0.0;
    for o in obs {
        sum += loss_and_grad(model, o, w, grads)?.0;
    }
    Ok(sum)
}

/// Run the check. `fault` corrupts the analytic gradient of one class, as a
/// negative control.
pub fn run(scale: Scale, seed: u64, fault: Option<&str>) -> Result<GradCheckReport> {
    if let Some(f) = fault {
        if !CLASSES.contains(&f) {
            return Err(Error::invalid(format!("unknown parameter class {f:?}; expected one of {}", CLASSES.join(", "))));
        }
    }
    let model = random_model(seed);
    let obs = random_observations(seed);
    let w = check_weights();
    let mut grads = model.zeros_like();
    total(&model, &obs, &w, &mut grads)?;
    let analytic = grads.flatten();
    let layout = model.layout();

    let loss_at = |t: usize, idx: usize, d: f64| -> Result<f64> {
        let mut p = model.clone();
        let mut k = 0;
        p.visit_mut(&mut |_, _, s| {
            if k == t {
                s[idx] += d;
            }
            k += 1;
        });
        let mut scratch = p.zeros_like();
        total(&p, &obs, &w, &mut scratch)
    };

    let mut per_class: BTreeMap<&str, ClassReport> = BTreeMap::new();
    for (t, (name, group, len)) in layout.iter().enumerate() {
        if *group == Group::Frozen {
            continue;
        }
        let Some(class) = class_of(name) else { continue };
        let indices: Vec<usize> = match scale {
            Scale::Full => (0..*len).collect(),
            Scale::Small => (0..*len).step_by((*len / 6).max(1)).collect(),
        };
        let entry = per_class.entry(class).or_insert_with(|| ClassReport {
            class: class.to_string(),
            checked: 0,
            worst_rel_err: 0.0,
            worst_at: String::new(),
            passed: true,
        });
        for idx in indices {
            let mut an = analytic[t][idx];
            if fault == Some(class) {
                an = an * 1.5 + 1e-3;
            }
            let mut best = f64::INFINITY;
            for h in STEPS {
                let fd = (loss_at(t, idx, h)? - loss_at(t, idx, -h)?) / (2.0 * h);
                let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(ABS_FLOOR);
                best = best.min(rel);
                if best < TOLERANCE {
                    break;
                }
            }
            entry.checked += 1;
            if best > entry.worst_rel_err || entry.worst_at.is_empty() {
                entry.worst_rel_err = best;
                entry.worst_at = format!("{name}[{idx}]");
            }
        }
        entry.passed = entry.worst_rel_err < TOLERANCE;
    }
    let classes: Vec<ClassReport> =
        CLASSES.iter().filter_map(|c| per_class.remove(c)).collect();
    let passed = classes.iter().all(|c| c.passed);
    let splats = model.scene.static_node.len() + model.scene.sky.gaussians.len() + model.scene.objects.iter().map(|o| o.canonical.len()).sum::<usize>();
    Ok(GradCheckReport { seed, splats, classes, passed })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_names() {
        assert_eq!(class_of("static.position"), Some("position"));
        assert_eq!(class_of("static.f_geo"), Some("f_geo"));
        assert_eq!(class_of("sky.position"), None);
        assert_eq!(class_of("object.0.color"), Some("object_color"));
        assert_eq!(class_of("object.0.rotation"), Some("object_geometry"));
        assert_eq!(class_of("traversal.affine_bias"), Some("affine"));
        assert_eq!(class_of("field.light.2.weight"), Some("light_mlp"));
    }

    #[test]
    fn small_check_passes_and_fault_is_caught() {
        let r = run(Scale::Small, 1, None).unwrap();
        assert!(r.splats <= 20);
        assert_eq!(r.classes.len(), CLASSES.len());
        for c in &r.classes {
            assert!(c.passed, "{c:?}");
            assert!(c.checked > 0);
        }
        let bad = run(Scale::Small, 1, Some("light_mlp")).unwrap();
        assert!(!bad.passed);
        let failed: Vec<_> = bad.classes.iter().filter(|c| !c.passed).map(|c| c.class.as_str()).collect();
        assert_eq!(failed, vec!["light_mlp"]);
        assert!(run(Scale::Small, 1, Some("nonsense")).is_err());
    }
}
