//! Rendering ground-truth layers and writing dataset directories.

use std::path::Path;

use admgs_core::dataset::{CameraPose, DatasetManifest, FrameEntry, Intrinsics, Split, TraversalEntry, MANIFEST_FILE, MANIFEST_VERSION};
use admgs_core::geom::Vec3;
use admgs_core::image::Image;
use admgs_core::io::{write_pfm, write_ply, write_png};
use admgs_core::model::InitPoint;
use admgs_core::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::spec::SyntheticSceneSpec;
use crate::trace::trace_pixel;

pub const INIT_POINTS_FILE: &str = "points.ply";
pub const SPEC_FILE: &str = "scene_spec.json";

/// Every ground-truth layer of one (traversal, camera) frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameLayers {
    pub rgb: Image<f64>,
    pub material: Image<f64>,
    pub light: Image<f64>,
    pub normal: Image<f64>,
    pub depth: Image<f64>,
    pub static_mask: Image<f64>,
    /// 1 where a static surface facing the sun is occluded.
    pub cast_shadow: Image<f64>,
    /// Index of the primitive hit by each pixel's ray.
    pub primitive: Vec<Option<usize>>,
}

pub fn render_frame(spec: &SyntheticSceneSpec, traversal: usize, camera: usize) -> FrameLayers {
    let (w, h) = (spec.width, spec.height);
    let cam = spec.camera(camera);
    let mut f = FrameLayers {
        rgb: Image::zeros(w, h, 3),
        material: Image::zeros(w, h, 3),
        light: Image::zeros(w, h, 3),
        normal: Image::zeros(w, h, 3),
        depth: Image::zeros(w, h, 1),
        static_mask: Image::zeros(w, h, 1),
        cast_shadow: Image::zeros(w, h, 1),
        primitive: vec![None; w * h],
    };
    for y in 0..h {
        for x in 0..w {
            let s = trace_pixel(spec, traversal, &cam, x, y);
            f.rgb.pixel_mut(x, y).copy_from_slice(&s.rgb);
            f.material.pixel_mut(x, y).copy_from_slice(&s.material);
            f.light.pixel_mut(x, y).copy_from_slice(&s.light);
            f.normal.pixel_mut(x, y).copy_from_slice(&s.normal);
            f.depth.pixel_mut(x, y)[0] = s.depth;
            f.static_mask.pixel_mut(x, y)[0] = s.static_mask;
            f.cast_shadow.pixel_mut(x, y)[0] = if s.cast_shadow { 1.0 } else { 0.0 };
            f.primitive[y * w + x] = s.hit.map(|h| h.primitive);
        }
    }
    f
}

/// Surface points back-projected from random pixels of random frames, the
/// way a range sensor would sample the scene. Sky pixels are skipped.
pub fn sample_init_points(spec: &SyntheticSceneSpec) -> Vec<InitPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let cams: Vec<_> = (0..spec.orbit.count).map(|c| spec.camera(c)).collect();
    let mut out = Vec::with_capacity(spec.init_points);
    let max_attempts = 100 * spec.init_points.max(1);
    for _ in 0..max_attempts {
        if out.len() == spec.init_points {
            break;
        }
        let t = rng.random_range(0..spec.traversals.len());
        let c = rng.random_range(0..cams.len());
        let x = rng.random_range(0..spec.width);
        let y = rng.random_range(0..spec.height);
        if let Some(hit) = trace_pixel(spec, t, &cams[c], x, y).hit {
            out.push(InitPoint { position: hit.point, normal: hit.normal });
        }
    }
    out
}

fn frame_entry(t: usize, c: usize, spec: &SyntheticSceneSpec) -> FrameEntry {
    let base = format!("t{t}/c{c:03}");
    FrameEntry {
        traversal: t,
        camera: c,
        timestamp: c as f64 / spec.orbit.count as f64,
        split: if spec.is_test_camera(c) { Split::Test } else { Split::Train },
        rgb: format!("{base}_rgb.png"),
        gt_material: format!("{base}_material.pfm"),
        gt_normal: format!("{base}_normal.pfm"),
        gt_depth: format!("{base}_depth.pfm"),
        gt_light: format!("{base}_light.pfm"),
        static_mask: format!("{base}_mask.pfm"),
    }
}

pub fn manifest_for(spec: &SyntheticSceneSpec) -> DatasetManifest {
    let f = spec.focal();
    let probe = spec.camera(0);
    DatasetManifest {
        version: MANIFEST_VERSION,
        name: spec.name.clone(),
        intrinsics: Intrinsics { width: spec.width, height: spec.height, fx: f, fy: f, cx: probe.cx, cy: probe.cy },
        cameras: (0..spec.orbit.count).map(|c| CameraPose::from_camera(c, &spec.camera(c))).collect(),
        traversals: (0..spec.traversals.len())
            .map(|t| TraversalEntry { id: t, frames: (0..spec.orbit.count).map(|c| frame_entry(t, c, spec)).collect() })
            .collect(),
        init_points: INIT_POINTS_FILE.into(),
    }
}

/// Write the full dataset for `spec` below `out`. Output bytes depend only
/// on the spec.
pub fn generate_dataset(spec: &SyntheticSceneSpec, out: &Path) -> Result<DatasetManifest> {
    spec.validate()?;
    let manifest = manifest_for(spec);
    for t in 0..spec.traversals.len() {
        let d = out.join(format!("t{t}"));
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let jobs: Vec<&FrameEntry> = manifest.frames().collect();
    jobs.par_iter().try_for_each(|e| -> Result<()> {
        let f = render_frame(spec, e.traversal, e.camera);
        write_png(&out.join(&e.rgb), &f.rgb)?;
        write_pfm(&out.join(&e.gt_material), &f.material)?;
        write_pfm(&out.join(&e.gt_normal), &f.normal)?;
        write_pfm(&out.join(&e.gt_depth), &f.depth)?;
        write_pfm(&out.join(&e.gt_light), &f.light)?;
        write_pfm(&out.join(&e.static_mask), &f.static_mask)
    })?;
    write_ply(&out.join(INIT_POINTS_FILE), &sample_init_points(spec))?;
    let spec_path = out.join(SPEC_FILE);
    std::fs::write(&spec_path, serde_json::to_vec_pretty(spec)?).map_err(|e| Error::io(&spec_path, e))?;
    let path = out.join(MANIFEST_FILE);
    std::fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Unit-length check used by tests and diagnostics.
pub fn is_unit(n: &[f64]) -> bool {
    (Vec3::new(n[0], n[1], n[2]).norm() - 1.0).abs() < 1e-9
}
