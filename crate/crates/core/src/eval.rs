//! Held-out evaluation, cross-traversal relighting and decomposition export.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::geom::Camera;
use crate::image::Image;
use crate::losses::{psnr, ssim};
use crate::model::Model;
use crate::raster::RenderOutput;
use crate::real::Real;
use crate::render::{apply_traversal_affine, render, View};

/// Material floor used when dividing out the illumination layer.
pub const ILLUMINATION_EPS: f64 = 0.01;
/// Static coverage below which a pixel has no exported material.
pub const COVERAGE_EPS: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewMetrics {
    pub frame: usize,
    pub traversal: usize,
    pub camera: usize,
    /// `+∞` (serialized as null) for a perfect prediction.
    pub psnr_db: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: Split,
    pub views: Vec<ViewMetrics>,
    pub mean_psnr_db: f64,
    pub mean_ssim: f64,
}

impl EvalReport {
    pub fn from_views(split: Split, views: Vec<ViewMetrics>) -> Result<Self> {
        if views.is_empty() {
            return Err(Error::invalid(format!("the {split:?} split is empty")));
        }
        let n = views.len() as f64;
        let mean_psnr_db = views.iter().map(|v| v.psnr_db).sum::<f64>() / n;
        let mean_ssim = views.iter().map(|v| v.ssim).sum::<f64>() / n;
        Ok(Self { split, views, mean_psnr_db, mean_ssim })
    }

    /// Plain-text table, one row per view plus the mean.
    pub fn table(&self) -> String {
        let mut s = format!("{:>6} {:>9} {:>6} {:>9} {:>7}\n", "frame", "traversal", "camera", "psnr_db", "ssim");
        for v in &self.views {
            s.push_str(&format!("{:>6} {:>9} {:>6} {:>9.3} {:>7.4}\n", v.frame, v.traversal, v.camera, v.psnr_db, v.ssim));
        }
        s.push_str(&format!("{:>6} {:>9} {:>6} {:>9.3} {:>7.4}\n", "mean", "", "", self.mean_psnr_db, self.mean_ssim));
        s
    }
}

/// Render `view` and apply the light traversal's affine alignment.
pub fn render_aligned<T: Real>(model: &Model<T>, view: &View) -> Result<(RenderOutput<T>, Image<T>)> {
    let out = render(model, view)?;
    let rgb = apply_traversal_affine(&out.rgb, view.m_light, &model.scene.traversals)?;
    Ok((out, rgb))
}

/// PSNR/SSIM of every frame in `split`, rendered in parallel.
pub fn evaluate<T: Real>(model: &Model<T>, dataset: &Dataset, split: Split) -> Result<EvalReport> {
    let frames = dataset.split(split);
    let views = frames
        .par_iter()
        .map(|&i| {
            let f = &dataset.frames[i];
            let (_, pred) = render_aligned(model, &View::new(f.camera.clone(), f.traversal, f.timestamp))?;
            let pred = pred.cast::<f64>();
            let gt = f.rgb.cast::<f64>();
            Ok(ViewMetrics { frame: i, traversal: f.traversal, camera: f.camera_id, psnr_db: psnr(&pred, &gt)?, ssim: ssim(&pred, &gt)? })
        })
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_views(split, views)
}

/// Static background with the material of `m_material` (through its gate)
/// under the light of `m_light`; sky, objects and affine follow `m_light`.
pub fn relight<T: Real>(model: &Model<T>, camera: &Camera, m_material: usize, m_light: usize, tau: f64) -> Result<Image<T>> {
    model.scene.traversals.check(m_material)?;
    model.scene.traversals.check(m_light)?;
    let view = View { camera: camera.clone(), m_material, m_light, tau };
    Ok(render_aligned(model, &view)?.1)
}

/// Gate value of every static splat under traversal `m`; all ones when
/// gating is disabled.
pub fn static_gates<T: Real>(model: &Model<T>, m: usize) -> Result<Vec<f64>> {
    let st = &model.scene.static_node;
    if !model.fields.config.gating {
        return Ok(vec![1.0; st.len()]);
    }
    let e = model.scene.traversals.embedding(m)?;
    (0..st.len()).map(|i| Ok(model.fields.gate_forward(st.f_geo(i), e)?.val())).collect()
}

/// Composited material divided by static coverage: the mean material of the
/// static surfaces seen through each pixel, independent of how much of the
/// pixel they cover.
pub fn exported_material<T: Real>(out: &RenderOutput<T>) -> Image<T> {
    let mut m = out.material.clone();
    for (px, s) in m.data.chunks_mut(3).zip(&out.static_mask.data) {
        for v in px {
            *v = if s.val() > COVERAGE_EPS { *v / *s } else { T::zero() };
        }
    }
    m
}

/// Exported layers of one view. `rgb` is pre-affine so that
/// `rgb = material ⊙ illumination` wherever the material exceeds the floor;
/// `material` is [`exported_material`].
#[derive(Clone, Debug, PartialEq)]
pub struct Decomposition<T> {
    pub rgb: Image<T>,
    pub aligned_rgb: Image<T>,
    pub material: Image<T>,
    pub illumination: Image<T>,
    pub normal: Image<T>,
    pub depth: Image<T>,
    pub static_mask: Image<T>,
}

pub fn decompose<T: Real>(model: &Model<T>, view: &View) -> Result<Decomposition<T>> {
    let (out, aligned_rgb) = render_aligned(model, view)?;
    let material = exported_material(&out);
    let eps = T::lit(ILLUMINATION_EPS);
    let mut illumination = out.rgb.clone();
    for (l, m) in illumination.data.iter_mut().zip(&material.data) {
        *l = *l / m.max(eps);
    }
    Ok(Decomposition {
        rgb: out.rgb,
        aligned_rgb,
        material,
        illumination,
        normal: out.normal,
        depth: out.depth,
        static_mask: out.static_mask,
    })
}

/// How well exported materials agree across traversals and with ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaterialReport {
    pub views: usize,
    /// Mean absolute difference between material maps rendered at the same
    /// pose under every pair of traversals, over pixels static in all of them.
    pub cross_traversal_mad: f64,
    /// Per-channel Pearson correlation between exported and ground-truth
    /// material over static pixels, pooled across frames.
    pub correlation: [f64; 3],
}

#[derive(Default)]
struct Pearson {
    n: f64,
    sx: f64,
    sy: f64,
    sxx: f64,
    syy: f64,
    sxy: f64,
}

impl Pearson {
    fn add(&mut self, x: f64, y: f64) {
        self.n += 1.0;
        self.sx += x;
        self.sy += y;
        self.sxx += x * x;
        self.syy += y * y;
        self.sxy += x * y;
    }

    fn value(&self) -> f64 {
        let cov = self.sxy - self.sx * self.sy / self.n;
        let vx = self.sxx - self.sx * self.sx / self.n;
        let vy = self.syy - self.sy * self.sy / self.n;
        cov / (vx * vy).sqrt()
    }
}

/// Material agreement over every camera of `split`. Static pixels are those
/// with a ground-truth mask above 0.5.
pub fn material_agreement<T: Real>(model: &Model<T>, dataset: &Dataset, split: Split) -> Result<MaterialReport> {
    let mut cameras: Vec<usize> = dataset.split(split).iter().map(|&i| dataset.frames[i].camera_id).collect();
    cameras.sort_unstable();
    cameras.dedup();
    if cameras.is_empty() {
        return Err(Error::invalid(format!("the {split:?} split is empty")));
    }
    let nt = dataset.traversal_count();
    let per_camera = cameras
        .par_iter()
        .map(|&c| {
            let frames: Vec<_> = (0..nt).filter_map(|t| dataset.find(t, c)).collect();
            let maps = frames
                .iter()
                .map(|f| Ok(exported_material(&render(model, &View::new(f.camera.clone(), f.traversal, f.timestamp))?).cast::<f64>()))
                .collect::<Result<Vec<_>>>()?;
            let (mut diff, mut count) = (0.0, 0usize);
            let mut corr: [Pearson; 3] = Default::default();
            let px = frames.first().map_or(0, |f| f.rgb.pixels());
            for p in 0..px {
                let all_static = frames.iter().all(|f| f.static_mask.data[p] > 0.5);
                for (f, m) in frames.iter().zip(&maps) {
                    if f.static_mask.data[p] > 0.5 {
                        for (k, c) in corr.iter_mut().enumerate() {
                            c.add(m.data[3 * p + k], f.material.data[3 * p + k] as f64);
                        }
                    }
                }
                if !all_static {
                    continue;
                }
                for a in 0..maps.len() {
                    for b in a + 1..maps.len() {
                        for k in 0..3 {
                            diff += (maps[a].data[3 * p + k] - maps[b].data[3 * p + k]).abs();
                            count += 1;
                        }
                    }
                }
            }
            Ok((diff, count, corr))
        })
        .collect::<Result<Vec<_>>>()?;
    let (mut diff, mut count) = (0.0, 0usize);
    let mut corr: [Pearson; 3] = Default::default();
    for (d, n, c) in per_camera {
        diff += d;
        count += n;
        for (acc, part) in corr.iter_mut().zip(c) {
            acc.n += part.n;
            acc.sx += part.sx;
            acc.sy += part.sy;
            acc.sxx += part.sxx;
            acc.syy += part.syy;
            acc.sxy += part.sxy;
        }
    }
    Ok(MaterialReport {
        views: cameras.len(),
        cross_traversal_mad: if count == 0 { 0.0 } else { diff / count as f64 },
        correlation: [corr[0].value(), corr[1].value(), corr[2].value()],
    })
}

/// Map unit normals to `[0, 1]` for previews: `(n + 1) / 2`.
pub fn normal_preview<T: Real>(n: &Image<T>) -> Image<T> {
    let half = T::lit(0.5);
    n.map(|v| (v + T::one()) * half)
}

/// Side-by-side panels of equal size, left to right.
pub fn hstack<T: Real>(panels: &[&Image<T>]) -> Result<Image<T>> {
    let first = panels.first().ok_or_else(|| Error::invalid("no panels to stack"))?;
    for p in panels {
        first.check_same_shape(p, "strip panels")?;
    }
    let (w, h, c) = (first.width, first.height, first.channels);
    let mut out = Image::zeros(w * panels.len(), h, c);
    for (k, p) in panels.iter().enumerate() {
        for y in 0..h {
            for x in 0..w {
                out.pixel_mut(k * w + x, y).copy_from_slice(p.pixel(x, y));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregate_is_the_mean() {
        let views = vec![
            ViewMetrics { frame: 0, traversal: 0, camera: 0, psnr_db: 20.0, ssim: 0.5 },
            ViewMetrics { frame: 1, traversal: 1, camera: 0, psnr_db: 31.0, ssim: 0.9 },
        ];
        let r = EvalReport::from_views(Split::Test, views).unwrap();
        assert_eq!(r.mean_psnr_db, 25.5);
        assert!((r.mean_ssim - 0.7).abs() < 1e-15);
        assert!(r.table().lines().count() == 4);
        assert!(EvalReport::from_views(Split::Test, vec![]).is_err());
    }

    #[test]
    fn strip_layout() {
        let a = Image::<f64>::filled(3, 2, &[0.1, 0.2, 0.3]);
        let b = Image::<f64>::filled(3, 2, &[0.9, 0.8, 0.7]);
        let s = hstack(&[&a, &b, &a, &b]).unwrap();
        assert_eq!((s.width, s.height), (12, 2));
        assert_eq!(s.pixel(4, 1), &[0.9, 0.8, 0.7]);
        assert!(hstack(&[&a, &Image::zeros(2, 2, 3)]).is_err());
    }

    #[test]
    fn pearson_matches_direct_formula() {
        let xs = [0.1, 0.4, 0.35, 0.9, 0.2];
        let ys = [0.3, 0.5, 0.55, 1.2, 0.1];
        let mut p = Pearson::default();
        for (x, y) in xs.iter().zip(&ys) {
            p.add(*x, *y);
        }
        let mx = xs.iter().sum::<f64>() / 5.0;
        let my = ys.iter().sum::<f64>() / 5.0;
        let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
        assert!((p.value() - cov / (vx * vy).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn exported_material_is_coverage_normalized() {
        let mut out = RenderOutput::<f64>::zeros(2, 1);
        out.material.data = vec![0.2, 0.3, 0.4, 0.0, 0.0, 0.0];
        out.static_mask.data = vec![0.5, 0.0];
        assert_eq!(exported_material(&out).data, vec![0.4, 0.6, 0.8, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn normal_preview_encoding() {
        let n = Image::<f64>::from_vec(1, 1, 3, vec![-1.0, 0.0, 1.0]).unwrap();
        assert_eq!(normal_preview(&n).data, vec![0.0, 0.5, 1.0]);
    }
}
