//! Differentiable tile-based alpha compositing of projected splats, plus a
//! brute-force reference renderer used as an oracle.
//!
//! Every splat carries a feature vector `[r, g, b, 1, depth, n, m, s]` that is
//! composited front to back with weights `α_i T_i`; the constant `1` channel
//! yields the alpha layer and the static-only channels `n`, `m`, `s` yield the
//! normal, material and static-coverage layers.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::Splat2D;
use crate::image::Image;
use crate::real::{Dual, Real, Scalar};

pub const TILE: usize = 16;
/// Support radius in standard deviations; also the tile-binning extent.
pub const SUPPORT_SIGMAS: f64 = 3.0;
/// Per-pixel compositing stops once transmittance drops below this.
pub const EARLY_STOP_T: f64 = 1e-4;

pub const NF: usize = 12;
const F_RGB: usize = 0;
const F_ALPHA: usize = 3;
const F_DEPTH: usize = 4;
const F_NORMAL: usize = 5;
const F_MATERIAL: usize = 8;
const F_STATIC: usize = 11;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StaticPayload<T> {
    pub normal: [T; 3],
    pub material: [T; 3],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShadedSplat<T> {
    pub geom: Splat2D<T>,
    /// Effective opacity in [0, 1], gating included.
    pub opacity: T,
    pub color: [T; 3],
    /// Present exactly for static-node splats.
    pub static_payload: Option<StaticPayload<T>>,
}

impl<T: Real> ShadedSplat<T> {
    fn features(&self) -> [T; NF] {
        let mut f = [T::zero(); NF];
        f[F_RGB..F_RGB + 3].copy_from_slice(&self.color);
        f[F_ALPHA] = T::one();
        f[F_DEPTH] = self.geom.depth;
        if let Some(p) = &self.static_payload {
            f[F_NORMAL..F_NORMAL + 3].copy_from_slice(&p.normal);
            f[F_MATERIAL..F_MATERIAL + 3].copy_from_slice(&p.material);
            f[F_STATIC] = T::one();
        }
        f
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput<T> {
    pub rgb: Image<T>,
    pub alpha: Image<T>,
    pub depth: Image<T>,
    pub normal: Image<T>,
    pub material: Image<T>,
    pub static_mask: Image<T>,
}

impl<T: Real> RenderOutput<T> {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            rgb: Image::zeros(width, height, 3),
            alpha: Image::zeros(width, height, 1),
            depth: Image::zeros(width, height, 1),
            normal: Image::zeros(width, height, 3),
            material: Image::zeros(width, height, 3),
            static_mask: Image::zeros(width, height, 1),
        }
    }

    pub fn width(&self) -> usize {
        self.rgb.width
    }

    pub fn height(&self) -> usize {
        self.rgb.height
    }

    fn layers(&self) -> [&Image<T>; 6] {
        [&self.rgb, &self.alpha, &self.depth, &self.normal, &self.material, &self.static_mask]
    }

    /// Largest absolute difference over all layers.
    pub fn max_abs_diff(&self, o: &Self) -> f64 {
        self.layers().iter().zip(o.layers()).map(|(a, b)| a.max_abs_diff(b)).fold(0.0, f64::max)
    }

    fn write_pixel(&mut self, p: usize, c: &[T; NF], transmittance: T, bg: [T; 3]) {
        for k in 0..3 {
            self.rgb.data[3 * p + k] = c[F_RGB + k] + transmittance * bg[k];
            self.normal.data[3 * p + k] = c[F_NORMAL + k];
            self.material.data[3 * p + k] = c[F_MATERIAL + k];
        }
        self.alpha.data[p] = c[F_ALPHA];
        self.depth.data[p] = c[F_DEPTH];
        self.static_mask.data[p] = c[F_STATIC];
    }

    fn read_adjoint(&self, p: usize) -> [T; NF] {
        let mut g = [T::zero(); NF];
        for k in 0..3 {
            g[F_RGB + k] = self.rgb.data[3 * p + k];
            g[F_NORMAL + k] = self.normal.data[3 * p + k];
            g[F_MATERIAL + k] = self.material.data[3 * p + k];
        }
        g[F_ALPHA] = self.alpha.data[p];
        g[F_DEPTH] = self.depth.data[p];
        g[F_STATIC] = self.static_mask.data[p];
        g
    }

    fn check_shape(&self, width: usize, height: usize) -> bool {
        self.layers().iter().zip([3, 1, 1, 3, 3, 1]).all(|(l, c)| l.width == width && l.height == height && l.channels == c)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RasterSettings<T> {
    pub width: usize,
    pub height: usize,
    pub background: [T; 3],
}

impl<T: Real> RasterSettings<T> {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, background: [T::zero(); 3] }
    }

    fn check(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("image has zero area"));
        }
        Ok(())
    }
}

/// Per-splat values shared by forward and backward.
#[derive(Clone, Copy, Debug)]
struct Prepared<T> {
    mean: [T; 2],
    conic: [T; 3],
    bbox: [f64; 4],
    valid: bool,
}

fn prepare<T: Real>(s: &ShadedSplat<T>) -> Prepared<T> {
    let [xx, xy, yy] = s.geom.cov;
    let det = xx * yy - xy * xy;
    let valid = det.val() > 0.0 && xx.val() > 0.0 && s.opacity.val() > 0.0;
    if !valid {
        return Prepared { mean: s.geom.mean, conic: [T::zero(); 3], bbox: [0.0; 4], valid };
    }
    let inv = T::one() / det;
    let rx = SUPPORT_SIGMAS * xx.val().sqrt();
    let ry = SUPPORT_SIGMAS * yy.val().sqrt();
    let (mx, my) = (s.geom.mean[0].val(), s.geom.mean[1].val());
    Prepared {
        mean: s.geom.mean,
        conic: [yy * inv, -xy * inv, xx * inv],
        bbox: [mx - rx, mx + rx, my - ry, my + ry],
        valid,
    }
}

/// Gaussian falloff at pixel center `(px, py)` or `None` outside the support.
#[inline]
fn falloff<T: Real>(p: &Prepared<T>, px: T, py: T) -> Option<(T, T, T)> {
    let dx = px - p.mean[0];
    let dy = py - p.mean[1];
    let [a, b, c] = p.conic;
    let m2 = a * dx * dx + T::lit(2.0) * b * dx * dy + c * dy * dy;
    if m2.val() > SUPPORT_SIGMAS * SUPPORT_SIGMAS {
        return None;
    }
    Some(((T::lit(-0.5) * m2).exp(), dx, dy))
}

/// Depth order with index tie-break.
fn depth_order<T: Real>(splats: &[ShadedSplat<T>], idx: &mut [u32]) {
    idx.sort_by(|&a, &b| {
        let da = splats[a as usize].geom.depth.val();
        let db = splats[b as usize].geom.depth.val();
        da.partial_cmp(&db).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
}

#[derive(Clone, Copy, Debug)]
struct Contribution<T> {
    splat: u32,
    alpha: T,
    /// Transmittance before this splat.
    trans: T,
}

#[derive(Debug)]
struct TileCache<T> {
    x0: usize,
    y0: usize,
    w: usize,
    h: usize,
    /// Start offsets into `contrib`, one per tile pixel plus a sentinel.
    offsets: Vec<u32>,
    contrib: Vec<Contribution<T>>,
    final_t: Vec<T>,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug)]
pub struct RasterCache<T> {
    width: usize,
    height: usize,
    count: usize,
    background: [T; 3],
    prepared: Vec<Prepared<T>>,
    features: Vec<[T; NF]>,
    tiles: Vec<TileCache<T>>,
}

pub fn rasterize_forward<T: Real>(
    splats: &[ShadedSplat<T>],
    settings: &RasterSettings<T>,
) -> Result<(RenderOutput<T>, RasterCache<T>)> {
    settings.check()?;
    let (w, h) = (settings.width, settings.height);
    let prepared: Vec<Prepared<T>> = splats.iter().map(prepare).collect();
    let features: Vec<[T; NF]> = splats.iter().map(ShadedSplat::features).collect();
    let tiles_x = w.div_ceil(TILE);
    let tiles_y = h.div_ceil(TILE);

    // Bin splats into tiles by their support bounding box.
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for (i, p) in prepared.iter().enumerate() {
        if !p.valid {
            continue;
        }
        // Pixel centers sit at x + 0.5.
        let tx0 = ((p.bbox[0] - 0.5).ceil().max(0.0) as usize) / TILE;
        let tx1 = (p.bbox[1] - 0.5).floor().min(w as f64 - 1.0);
        let ty0 = ((p.bbox[2] - 0.5).ceil().max(0.0) as usize) / TILE;
        let ty1 = (p.bbox[3] - 0.5).floor().min(h as f64 - 1.0);
        if tx1 < 0.0 || ty1 < 0.0 {
            continue;
        }
        let (tx1, ty1) = (tx1 as usize / TILE, ty1 as usize / TILE);
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                bins[ty * tiles_x + tx].push(i as u32);
            }
        }
    }

    let tiles: Vec<TileCache<T>> = bins
        .into_par_iter()
        .enumerate()
        .map(|(t, mut list)| {
            depth_order(splats, &mut list);
            let x0 = (t % tiles_x) * TILE;
            let y0 = (t / tiles_x) * TILE;
            let tw = TILE.min(w - x0);
            let th = TILE.min(h - y0);
            let mut offsets = Vec::with_capacity(tw * th + 1);
            let mut contrib = Vec::new();
            let mut final_t = Vec::with_capacity(tw * th);
            for y in y0..y0 + th {
                for x in x0..x0 + tw {
                    offsets.push(contrib.len() as u32);
                    let (px, py) = (T::lit(x as f64 + 0.5), T::lit(y as f64 + 0.5));
                    let mut trans = T::one();
                    for &i in &list {
                        let p = &prepared[i as usize];
                        let Some((g, _, _)) = falloff(p, px, py) else { continue };
                        let alpha = splats[i as usize].opacity * g;
                        contrib.push(Contribution { splat: i, alpha, trans });
                        trans = trans * (T::one() - alpha);
                        if trans.val() < EARLY_STOP_T {
                            break;
                        }
                    }
                    final_t.push(trans);
                }
            }
            offsets.push(contrib.len() as u32);
            TileCache { x0, y0, w: tw, h: th, offsets, contrib, final_t }
        })
        .collect();

    let mut out = RenderOutput::zeros(w, h);
    for tile in &tiles {
        for ly in 0..tile.h {
            for lx in 0..tile.w {
                let lp = ly * tile.w + lx;
                let mut acc = [T::zero(); NF];
                for c in &tile.contrib[tile.offsets[lp] as usize..tile.offsets[lp + 1] as usize] {
                    let f = &features[c.splat as usize];
                    let wgt = c.alpha * c.trans;
                    for k in 0..NF {
                        acc[k] += wgt * f[k];
                    }
                }
                let p = (tile.y0 + ly) * w + tile.x0 + lx;
                out.write_pixel(p, &acc, tile.final_t[lp], settings.background);
            }
        }
    }
    let cache = RasterCache {
        width: w,
        height: h,
        count: splats.len(),
        background: settings.background,
        prepared,
        features,
        tiles,
    };
    Ok((out, cache))
}

/// Brute-force renderer: every pixel visits every splat in global depth
/// order, with no tiling and no early termination.
pub fn reference_render<T: Real>(splats: &[ShadedSplat<T>], settings: &RasterSettings<T>) -> Result<RenderOutput<T>> {
    settings.check()?;
    let (w, h) = (settings.width, settings.height);
    let prepared: Vec<Prepared<T>> = splats.iter().map(prepare).collect();
    let mut order: Vec<u32> = (0..splats.len() as u32).filter(|&i| prepared[i as usize].valid).collect();
    depth_order(splats, &mut order);
    let mut out = RenderOutput::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (T::lit(x as f64 + 0.5), T::lit(y as f64 + 0.5));
            let mut trans = T::one();
            let mut acc = [T::zero(); NF];
            for &i in &order {
                let s = &splats[i as usize];
                let Some((g, _, _)) = falloff(&prepared[i as usize], px, py) else { continue };
                let alpha = s.opacity * g;
                let f = s.features();
                for k in 0..NF {
                    acc[k] += alpha * trans * f[k];
                }
                trans = trans * (T::one() - alpha);
            }
            out.write_pixel(y * w + x, &acc, trans, settings.background);
        }
    }
    Ok(out)
}

/// Adjoints for one shaded splat.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplatGrad<T> {
    pub mean: [T; 2],
    /// Adjoint of `(xx, xy, yy)`, with `xy` the single shared off-diagonal value.
    pub cov: [T; 3],
    pub depth: T,
    pub opacity: T,
    pub color: [T; 3],
    pub normal: [T; 3],
    pub material: [T; 3],
}

impl<T: Real> SplatGrad<T> {
    pub fn zero() -> Self {
        Self {
            mean: [T::zero(); 2],
            cov: [T::zero(); 3],
            depth: T::zero(),
            opacity: T::zero(),
            color: [T::zero(); 3],
            normal: [T::zero(); 3],
            material: [T::zero(); 3],
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct RawGrad<T> {
    mean: [T; 2],
    conic: [T; 3],
    opacity: T,
    feature: [T; NF],
}

impl<T: Real> RawGrad<T> {
    fn zero() -> Self {
        Self { mean: [T::zero(); 2], conic: [T::zero(); 3], opacity: T::zero(), feature: [T::zero(); NF] }
    }

    fn add(&mut self, o: &Self) {
        for k in 0..2 {
            self.mean[k] += o.mean[k];
        }
        for k in 0..3 {
            self.conic[k] += o.conic[k];
        }
        self.opacity += o.opacity;
        for k in 0..NF {
            self.feature[k] += o.feature[k];
        }
    }
}

/// Exact adjoints of all output layers with respect to each splat's inputs.
/// Per-tile partial sums are merged in tile order, so the result does not
/// depend on the thread count.
pub fn rasterize_backward<T: Real>(
    splats: &[ShadedSplat<T>],
    cache: &RasterCache<T>,
    adjoint: &RenderOutput<T>,
) -> Result<Vec<SplatGrad<T>>> {
    if splats.len() != cache.count || !adjoint.check_shape(cache.width, cache.height) {
        return Err(Error::ContractViolation("backward inputs do not match the forward pass".into()));
    }
    let w = cache.width;
    let mut bg = [T::zero(); NF];
    bg[F_RGB..F_RGB + 3].copy_from_slice(&cache.background);

    let partials: Vec<Vec<(u32, RawGrad<T>)>> = cache
        .tiles
        .par_iter()
        .map(|tile| {
            let mut local: Vec<(u32, RawGrad<T>)> = Vec::new();
            let mut slot: std::collections::HashMap<u32, usize> = std::collections::HashMap::new();
            for ly in 0..tile.h {
                for lx in 0..tile.w {
                    let lp = ly * tile.w + lx;
                    let range = tile.offsets[lp] as usize..tile.offsets[lp + 1] as usize;
                    if range.is_empty() {
                        continue;
                    }
                    let p = (tile.y0 + ly) * w + tile.x0 + lx;
                    let g = adjoint.read_adjoint(p);
                    let (px, py) = (T::lit((tile.x0 + lx) as f64 + 0.5), T::lit((tile.y0 + ly) as f64 + 0.5));
                    let dot = |f: &[T; NF]| (0..NF).fold(T::zero(), |s, k| s + g[k] * f[k]);
                    let mut s = dot(&bg);
                    for c in tile.contrib[range].iter().rev() {
                        let i = c.splat as usize;
                        let f = &cache.features[i];
                        let gf = dot(f);
                        let d_alpha = c.trans * (gf - s);
                        s = c.alpha * gf + (T::one() - c.alpha) * s;

                        let prep = &cache.prepared[i];
                        let (gauss, dx, dy) = falloff(prep, px, py).expect("recorded contribution lies in the support");
                        let [a, b, cc] = prep.conic;
                        let d_power = d_alpha * c.alpha;
                        let k = *slot.entry(c.splat).or_insert_with(|| {
                            local.push((c.splat, RawGrad::zero()));
                            local.len() - 1
                        });
                        let r = &mut local[k].1;
                        let wgt = c.alpha * c.trans;
                        for q in 0..NF {
                            r.feature[q] += wgt * g[q];
                        }
                        r.opacity += d_alpha * gauss;
                        r.mean[0] += d_power * (a * dx + b * dy);
                        r.mean[1] += d_power * (b * dx + cc * dy);
                        r.conic[0] += d_power * T::lit(-0.5) * dx * dx;
                        r.conic[1] -= d_power * dx * dy;
                        r.conic[2] += d_power * T::lit(-0.5) * dy * dy;
                    }
                }
            }
            local
        })
        .collect();

    let mut raw = vec![RawGrad::zero(); splats.len()];
    for tile in &partials {
        for (i, r) in tile {
            raw[*i as usize].add(r);
        }
    }

    Ok(splats
        .iter()
        .zip(&raw)
        .map(|(s, r)| {
            let mut out = SplatGrad::zero();
            out.mean = r.mean;
            out.opacity = r.opacity;
            out.color.copy_from_slice(&r.feature[F_RGB..F_RGB + 3]);
            out.depth = r.feature[F_DEPTH];
            if s.static_payload.is_some() {
                out.normal.copy_from_slice(&r.feature[F_NORMAL..F_NORMAL + 3]);
                out.material.copy_from_slice(&r.feature[F_MATERIAL..F_MATERIAL + 3]);
            }
            out.cov = conic_to_cov_adjoint(s.geom.cov, r.conic);
            out
        })
        .collect())
}

/// Chain conic adjoints back to covariance adjoints with forward-mode duals.
fn conic_to_cov_adjoint<T: Real>(cov: [T; 3], d_conic: [T; 3]) -> [T; 3] {
    if d_conic.iter().all(|v| v.val() == 0.0) {
        return [T::zero(); 3];
    }
    let x = Dual::<T, 3>::var(cov[0], 0);
    let y = Dual::<T, 3>::var(cov[1], 1);
    let z = Dual::<T, 3>::var(cov[2], 2);
    let inv = (x * z - y * y).recip();
    let conic = [z * inv, -y * inv, x * inv];
    let mut out = [T::zero(); 3];
    for (c, g) in conic.iter().zip(d_conic) {
        for k in 0..3 {
            out[k] += g * c.d[k];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn splat(mean: [f64; 2], cov: [f64; 3], depth: f64, opacity: f64, color: [f64; 3]) -> ShadedSplat<f64> {
        ShadedSplat { geom: Splat2D { mean, cov, depth }, opacity, color, static_payload: None }
    }

    pub(crate) fn random_splats(rng: &mut impl Rng, n: usize, w: f64, h: f64) -> Vec<ShadedSplat<f64>> {
        (0..n)
            .map(|_| {
                let sx: f64 = rng.random_range(0.7..8.0);
                let sy: f64 = rng.random_range(0.7..8.0);
                let rho: f64 = rng.random_range(-0.8..0.8);
                let payload = rng.random_bool(0.6).then(|| StaticPayload {
                    normal: [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.0..1.0)],
                    material: [rng.random(), rng.random(), rng.random()],
                });
                ShadedSplat {
                    geom: Splat2D {
                        mean: [rng.random_range(-4.0..w + 4.0), rng.random_range(-4.0..h + 4.0)],
                        cov: [sx * sx + 0.3, rho * sx * sy, sy * sy + 0.3],
                        depth: rng.random_range(0.5..10.0),
                    },
                    opacity: rng.random_range(0.05..0.95),
                    color: [rng.random(), rng.random(), rng.random()],
                    static_payload: payload,
                }
            })
            .collect()
    }

    #[test]
    fn single_splat_at_its_mean() {
        let s = [splat([8.5, 8.5], [4.0, 0.0, 4.0], 2.0, 0.7, [0.2, 0.4, 1.0])];
        let (out, _) = rasterize_forward(&s, &RasterSettings::new(16, 16)).unwrap();
        assert!((out.alpha.pixel(8, 8)[0] - 0.7).abs() < 1e-15);
        let rgb = out.rgb.pixel(8, 8);
        assert!((rgb[0] - 0.14).abs() < 1e-15 && (rgb[2] - 0.7).abs() < 1e-15);
        assert!((out.depth.pixel(8, 8)[0] - 1.4).abs() < 1e-15);
        assert_eq!(out.static_mask.pixel(8, 8)[0], 0.0);
    }

    #[test]
    fn two_coincident_splats_follow_the_over_operator() {
        let c1 = [1.0, 0.0, 0.0];
        let c2 = [0.0, 1.0, 0.0];
        let s = [splat([4.5, 4.5], [2.0, 0.0, 2.0], 3.0, 0.5, c2), splat([4.5, 4.5], [2.0, 0.0, 2.0], 1.0, 0.3, c1)];
        let (out, _) = rasterize_forward(&s, &RasterSettings::new(8, 8)).unwrap();
        let rgb = out.rgb.pixel(4, 4);
        assert!((rgb[0] - 0.3).abs() < 1e-15);
        assert!((rgb[1] - 0.5 * 0.7).abs() < 1e-15);
        assert!((out.alpha.pixel(4, 4)[0] - (0.3 + 0.5 * 0.7)).abs() < 1e-15);
    }

    #[test]
    fn empty_scene_and_zero_area() {
        let out = reference_render::<f64>(&[], &RasterSettings::new(5, 4)).unwrap();
        assert!(out.alpha.data.iter().chain(&out.rgb.data).all(|&v| v == 0.0));
        assert!(matches!(rasterize_forward::<f64>(&[], &RasterSettings::new(0, 4)), Err(Error::InvalidArgument(_))));
        assert!(matches!(reference_render::<f64>(&[], &RasterSettings::new(3, 0)), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn zero_opacity_contributes_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = random_splats(&mut rng, 10, 32.0, 32.0);
        let settings = RasterSettings::new(32, 32);
        let (base, _) = rasterize_forward(&s, &settings).unwrap();
        s.push(splat([16.0, 16.0], [30.0, 0.0, 30.0], 0.1, 0.0, [1.0; 3]));
        let (with, _) = rasterize_forward(&s, &settings).unwrap();
        assert_eq!(base, with);
    }

    #[test]
    fn tiled_matches_reference_and_is_order_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let settings = RasterSettings { width: 40, height: 37, background: [0.1, 0.2, 0.3] };
        for _ in 0..10 {
            let mut s = random_splats(&mut rng, 30, 40.0, 37.0);
            let (tiled, _) = rasterize_forward(&s, &settings).unwrap();
            let reference = reference_render(&s, &settings).unwrap();
            assert!(tiled.max_abs_diff(&reference) <= 1e-6);
            s.reverse();
            assert_eq!(rasterize_forward(&s, &settings).unwrap().0, tiled);
            assert_eq!(reference_render(&s, &settings).unwrap(), reference);
        }
    }

    #[test]
    fn layer_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random_splats(&mut rng, 40, 32.0, 32.0);
        let (out, _) = rasterize_forward(&s, &RasterSettings::new(32, 32)).unwrap();
        for p in 0..32 * 32 {
            let a = out.alpha.data[p];
            let sm = out.static_mask.data[p];
            assert!((0.0..=1.0).contains(&a));
            assert!(sm <= a + 1e-15);
            for k in 0..3 {
                let m = out.material.data[3 * p + k];
                assert!(m >= 0.0 && m <= sm + 1e-15);
            }
            if sm == 0.0 {
                assert!(out.normal.data[3 * p..3 * p + 3].iter().all(|&v| v == 0.0));
            }
        }
    }

    fn weighted_sum(out: &RenderOutput<f64>, adj: &RenderOutput<f64>) -> f64 {
        out.layers().iter().zip(adj.layers()).map(|(a, b)| a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum::<f64>()).sum()
    }

    fn random_adjoint(rng: &mut impl Rng, w: usize, h: usize) -> RenderOutput<f64> {
        let mut adj = RenderOutput::zeros(w, h);
        for l in [&mut adj.rgb, &mut adj.alpha, &mut adj.depth, &mut adj.normal, &mut adj.material, &mut adj.static_mask] {
            l.data.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        }
        adj
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (w, h) = (20, 18);
        let settings = RasterSettings { width: w, height: h, background: [0.3, 0.1, 0.6] };
        let s = random_splats(&mut rng, 8, w as f64, h as f64);
        let adj = random_adjoint(&mut rng, w, h);
        let (_, cache) = rasterize_forward(&s, &settings).unwrap();
        let grads = rasterize_backward(&s, &cache, &adj).unwrap();
        let f = |s: &[ShadedSplat<f64>]| weighted_sum(&reference_render(s, &settings).unwrap(), &adj);
        let step = 1e-6;
        let check = |an: f64, perturb: &dyn Fn(&mut ShadedSplat<f64>, f64), i: usize, what: &str| {
            let mut p = s.clone();
            let mut q = s.clone();
            perturb(&mut p[i], step);
            perturb(&mut q[i], -step);
            let fd = (f(&p) - f(&q)) / (2.0 * step);
            let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-6);
            assert!(rel < 1e-4, "splat {i} {what}: analytic {an} vs numeric {fd}");
        };
        for (i, g) in grads.iter().enumerate() {
            check(g.opacity, &|s, e| s.opacity += e, i, "opacity");
            for k in 0..2 {
                check(g.mean[k], &|s, e| s.geom.mean[k] += e, i, "mean");
            }
            for k in 0..3 {
                check(g.cov[k], &|s, e| s.geom.cov[k] += e, i, "cov");
                check(g.color[k], &|s, e| s.color[k] += e, i, "color");
                if s[i].static_payload.is_some() {
                    check(g.normal[k], &|s, e| s.static_payload.as_mut().unwrap().normal[k] += e, i, "normal");
                    check(g.material[k], &|s, e| s.static_payload.as_mut().unwrap().material[k] += e, i, "material");
                }
            }
            check(g.depth, &|s, e| s.geom.depth += e, i, "depth");
        }
    }

    #[test]
    fn color_gradient_at_mean_is_alpha() {
        let s = [splat([4.5, 4.5], [3.0, 0.0, 3.0], 1.0, 0.6, [0.5; 3])];
        let settings = RasterSettings::new(9, 9);
        let (_, cache) = rasterize_forward(&s, &settings).unwrap();
        let mut adj = RenderOutput::zeros(9, 9);
        adj.rgb.pixel_mut(4, 4)[0] = 1.0;
        let g = rasterize_backward(&s, &cache, &adj).unwrap();
        assert_eq!(g[0].color, [0.6, 0.0, 0.0]);
    }

    #[test]
    fn zero_adjoint_gives_zero_gradients_and_mismatch_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = random_splats(&mut rng, 12, 24.0, 24.0);
        let settings = RasterSettings::new(24, 24);
        let (_, cache) = rasterize_forward(&s, &settings).unwrap();
        let g = rasterize_backward(&s, &cache, &RenderOutput::zeros(24, 24)).unwrap();
        assert!(g.iter().all(|g| *g == SplatGrad::zero()));
        let err = rasterize_backward(&s[..5], &cache, &RenderOutput::zeros(24, 24)).unwrap_err();
        assert!(matches!(err, Error::ContractViolation(_)));
        let err = rasterize_backward(&s, &cache, &RenderOutput::zeros(23, 24)).unwrap_err();
        assert!(matches!(err, Error::ContractViolation(_)));
    }
}
