//! Training losses and image quality metrics, each with its gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::real::Real;
use crate::scene::GaussianSet;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_ssim: f64,
    pub lambda_decomp: f64,
    pub lambda_scale: f64,
    /// Flatness threshold on `log(s_max / s_min)`.
    pub delta: f64,
    /// Supervise rendered normals against the ground-truth normal layer.
    pub normal_loss: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_ssim: 0.2, lambda_decomp: 0.05, lambda_scale: 0.01, delta: 1.0, normal_loss: true }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) {
            return Err(Error::invalid("delta must be positive"));
        }
        if [self.lambda_ssim, self.lambda_decomp, self.lambda_scale].iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::invalid("loss weights must be non-negative"));
        }
        if self.lambda_ssim > 1.0 {
            return Err(Error::invalid("lambda_ssim must not exceed 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub photo: f64,
    pub material: f64,
    pub normal: f64,
    pub scale: f64,
}

/// `photo + λ_decomp (material + normal) + λ_scale scale`. A non-finite
/// component is reported by name (iteration left at 0 for the caller to fill).
pub fn total_loss(c: &LossComponents, w: &LossWeights) -> Result<f64> {
    for (name, v) in [("photo", c.photo), ("material", c.material), ("normal", c.normal), ("scale", c.scale)] {
        if !v.is_finite() {
            return Err(Error::TrainingDivergence { iteration: 0, component: format!("{name} loss") });
        }
    }
    Ok(c.photo + w.lambda_decomp * (c.material + c.normal) + w.lambda_scale * c.scale)
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let r = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable valid-mode filtering of an `h×w` plane.
fn filter_valid<T: Real>(x: &[T], w: usize, h: usize, k: &[T; SSIM_WINDOW]) -> Vec<T> {
    let ow = w + 1 - SSIM_WINDOW;
    let oh = h + 1 - SSIM_WINDOW;
    let mut tmp = vec![T::zero(); ow * h];
    for y in 0..h {
        for x0 in 0..ow {
            let mut s = T::zero();
            for (j, kv) in k.iter().enumerate() {
                s += *kv * x[y * w + x0 + j];
            }
            tmp[y * ow + x0] = s;
        }
    }
    let mut out = vec![T::zero(); ow * oh];
    for y0 in 0..oh {
        for x0 in 0..ow {
            let mut s = T::zero();
            for (j, kv) in k.iter().enumerate() {
                s += *kv * tmp[(y0 + j) * ow + x0];
            }
            out[y0 * ow + x0] = s;
        }
    }
    out
}

/// Adjoint of [`filter_valid`]: scatters an `oh×ow` map back to `h×w`.
fn filter_valid_adjoint<T: Real>(g: &[T], w: usize, h: usize, k: &[T; SSIM_WINDOW]) -> Vec<T> {
    let ow = w + 1 - SSIM_WINDOW;
    let oh = h + 1 - SSIM_WINDOW;
    let mut tmp = vec![T::zero(); ow * h];
    for y0 in 0..oh {
        for x0 in 0..ow {
            let v = g[y0 * ow + x0];
            for (j, kv) in k.iter().enumerate() {
                tmp[(y0 + j) * ow + x0] += *kv * v;
            }
        }
    }
    let mut out = vec![T::zero(); w * h];
    for y in 0..h {
        for x0 in 0..ow {
            let v = tmp[y * ow + x0];
            for (j, kv) in k.iter().enumerate() {
                out[y * w + x0 + j] += *kv * v;
            }
        }
    }
    out
}

fn check_ssim_shape<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<()> {
    a.check_same_shape(b, "SSIM inputs")?;
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(Error::invalid(format!("SSIM needs images of at least {SSIM_WINDOW}×{SSIM_WINDOW}")));
    }
    Ok(())
}

/// Mean SSIM and, optionally, its gradient with respect to `a`.
fn ssim_impl<T: Real>(a: &Image<T>, b: &Image<T>, want_grad: bool) -> Result<(f64, Option<Image<T>>)> {
    check_ssim_shape(a, b)?;
    let (w, h, ch) = (a.width, a.height, a.channels);
    let k = gaussian_kernel().map(T::lit);
    let n_out = ((w + 1 - SSIM_WINDOW) * (h + 1 - SSIM_WINDOW) * ch) as f64;
    let (c1, c2) = (T::lit(SSIM_C1), T::lit(SSIM_C2));
    let two = T::lit(2.0);
    let mut total = 0.0;
    let mut grad = want_grad.then(|| Image::zeros(w, h, ch));
    for c in 0..ch {
        let x: Vec<T> = a.data.iter().skip(c).step_by(ch).copied().collect();
        let y: Vec<T> = b.data.iter().skip(c).step_by(ch).copied().collect();
        let xx: Vec<T> = x.iter().map(|v| *v * *v).collect();
        let yy: Vec<T> = y.iter().map(|v| *v * *v).collect();
        let xy: Vec<T> = x.iter().zip(&y).map(|(p, q)| *p * *q).collect();
        let mx = filter_valid(&x, w, h, &k);
        let my = filter_valid(&y, w, h, &k);
        let exx = filter_valid(&xx, w, h, &k);
        let eyy = filter_valid(&yy, w, h, &k);
        let exy = filter_valid(&xy, w, h, &k);
        let m = mx.len();
        let mut g_mu = vec![T::zero(); m];
        let mut g_xx = vec![T::zero(); m];
        let mut g_xy = vec![T::zero(); m];
        for i in 0..m {
            let (ux, uy) = (mx[i], my[i]);
            let a1 = two * ux * uy + c1;
            let a2 = two * (exy[i] - ux * uy) + c2;
            let b1 = ux * ux + uy * uy + c1;
            let b2 = (exx[i] - ux * ux) + (eyy[i] - uy * uy) + c2;
            let s = a1 * a2 / (b1 * b2);
            total += s.val();
            if want_grad {
                let d = b1 * b2;
                g_mu[i] = ((two * uy * a2 - a1 * two * uy) * d - a1 * a2 * (two * ux * b2 - b1 * two * ux)) / (d * d);
                g_xx[i] = -a1 * a2 / (b1 * b2 * b2);
                g_xy[i] = two * a1 / d;
            }
        }
        if let Some(g) = grad.as_mut() {
            let scale = T::lit(1.0 / n_out);
            let s_mu = filter_valid_adjoint(&g_mu, w, h, &k);
            let s_xx = filter_valid_adjoint(&g_xx, w, h, &k);
            let s_xy = filter_valid_adjoint(&g_xy, w, h, &k);
            for p in 0..w * h {
                g.data[p * ch + c] = scale * (s_mu[p] + two * x[p] * s_xx[p] + y[p] * s_xy[p]);
            }
        }
    }
    Ok((total / n_out, grad))
}

/// Mean local SSIM over an 11×11 Gaussian window (σ = 1.5), averaged over channels.
pub fn ssim<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<f64> {
    Ok(ssim_impl(a, b, false)?.0)
}

/// SSIM and its gradient with respect to `a`.
pub fn ssim_with_grad<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<(f64, Image<T>)> {
    let (s, g) = ssim_impl(a, b, true)?;
    Ok((s, g.expect("requested")))
}

fn sign<T: Real>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

pub fn l1_loss<T: Real>(pred: &Image<T>, gt: &Image<T>) -> Result<f64> {
    pred.check_same_shape(gt, "L1 inputs")?;
    Ok(pred.data.iter().zip(&gt.data).map(|(p, g)| (p.val() - g.val()).abs()).sum::<f64>() / pred.data.len() as f64)
}

/// `(1 − λ) mean|pred − gt| + λ (1 − SSIM)`.
pub fn photometric_loss<T: Real>(pred: &Image<T>, gt: &Image<T>, lambda_ssim: f64) -> Result<f64> {
    pred.check_same_shape(gt, "photometric inputs")?;
    let l1 = l1_loss(pred, gt)?;
    if lambda_ssim == 0.0 {
        return Ok(l1);
    }
    Ok((1.0 - lambda_ssim) * l1 + lambda_ssim * (1.0 - ssim(pred, gt)?))
}

/// Photometric loss and its gradient with respect to `pred`.
pub fn photometric_loss_with_grad<T: Real>(pred: &Image<T>, gt: &Image<T>, lambda_ssim: f64) -> Result<(f64, Image<T>)> {
    pred.check_same_shape(gt, "photometric inputs")?;
    let n = pred.data.len() as f64;
    let l1 = l1_loss(pred, gt)?;
    let wl1 = T::lit((1.0 - lambda_ssim) / n);
    let mut grad = pred.clone();
    for (g, (p, t)) in grad.data.iter_mut().zip(pred.data.iter().zip(&gt.data)) {
        *g = wl1 * sign(*p - *t);
    }
    if lambda_ssim == 0.0 {
        return Ok((l1, grad));
    }
    let (s, gs) = ssim_with_grad(pred, gt)?;
    let ws = T::lit(lambda_ssim);
    for (g, d) in grad.data.iter_mut().zip(&gs.data) {
        *g -= ws * *d;
    }
    Ok(((1.0 - lambda_ssim) * l1 + lambda_ssim * (1.0 - s), grad))
}

/// Masked L1 between two maps, normalized by the mask mass; the channel
/// absolute differences are summed per pixel. Returns the loss and its
/// gradient with respect to `pred`. An all-zero mask yields 0.
pub fn masked_l1_with_grad<T: Real>(pred: &Image<T>, target: &Image<T>, mask: &Image<T>) -> Result<(f64, Image<T>)> {
    pred.check_same_shape(target, "masked loss inputs")?;
    if mask.channels != 1 || mask.width != pred.width || mask.height != pred.height {
        return Err(Error::invalid("mask must be a single-channel image of the prediction's size"));
    }
    let ch = pred.channels;
    let mass: f64 = mask.data.iter().map(|m| m.val()).sum();
    let mut grad = Image::zeros(pred.width, pred.height, ch);
    if mass <= 0.0 {
        return Ok((0.0, grad));
    }
    let inv = T::lit(1.0 / mass);
    let mut total = 0.0;
    for (p, &m) in mask.data.iter().enumerate() {
        if m == T::zero() {
            continue;
        }
        for c in 0..ch {
            let d = pred.data[p * ch + c] - target.data[p * ch + c];
            total += (m * d.abs()).val();
            grad.data[p * ch + c] = m * sign(d) * inv;
        }
    }
    Ok((total / mass, grad))
}

pub fn normal_loss<T: Real>(pred: &Image<T>, pseudo: &Image<T>, mask: &Image<T>) -> Result<f64> {
    Ok(masked_l1_with_grad(pred, pseudo, mask)?.0)
}

pub fn material_loss<T: Real>(pred: &Image<T>, pseudo: &Image<T>, mask: &Image<T>) -> Result<f64> {
    Ok(masked_l1_with_grad(pred, pseudo, mask)?.0)
}

/// Indices of the smallest (lowest index on ties) and largest (highest index
/// on ties) log-scale, so that an isotropic splat still receives a gradient.
pub fn extreme_axes<T: Real>(ls: [T; 3]) -> (usize, usize) {
    let mut lo = 0;
    let mut hi = 0;
    for i in 1..3 {
        if ls[i] < ls[lo] {
            lo = i;
        }
        if ls[i] >= ls[hi] {
            hi = i;
        }
    }
    (lo, hi)
}

/// Mean hinge `max(0, δ − (log s_max − log s_min))` over all Gaussians. When
/// `grad` is given, the gradient with respect to the log-scales is added to it.
pub fn scale_flatness_loss<T: Real>(set: &GaussianSet<T>, delta: f64, grad: Option<&mut [T]>) -> f64 {
    let n = set.len();
    if n == 0 {
        return 0.0;
    }
    let inv = T::lit(1.0 / n as f64);
    let mut total = 0.0;
    let mut grad = grad;
    for i in 0..n {
        let ls = [set.log_scales[3 * i], set.log_scales[3 * i + 1], set.log_scales[3 * i + 2]];
        let (lo, hi) = extreme_axes(ls);
        let gap = delta - (ls[hi] - ls[lo]).val();
        if gap > 0.0 {
            total += gap;
            if let Some(g) = grad.as_deref_mut() {
                g[3 * i + hi] -= inv;
                g[3 * i + lo] += inv;
            }
        }
    }
    total / n as f64
}

/// `10 log10(1 / MSE)` for unit dynamic range; `+∞` when the images match.
pub fn psnr<T: Real>(pred: &Image<T>, gt: &Image<T>) -> Result<f64> {
    pred.check_same_shape(gt, "PSNR inputs")?;
    let mse = pred.data.iter().zip(&gt.data).map(|(a, b)| (a.val() - b.val()).powi(2)).sum::<f64>() / pred.data.len() as f64;
    Ok(psnr_from_mse(mse))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

/// PSNR restricted to pixels where `mask > 0.5`.
pub fn masked_psnr<T: Real>(pred: &Image<T>, gt: &Image<T>, mask: &Image<T>) -> Result<f64> {
    pred.check_same_shape(gt, "PSNR inputs")?;
    let ch = pred.channels;
    let mut se = 0.0;
    let mut n = 0usize;
    for (p, m) in mask.data.iter().enumerate() {
        if m.val() > 0.5 {
            for c in 0..ch {
                se += (pred.data[p * ch + c].val() - gt.data[p * ch + c].val()).powi(2);
            }
            n += ch;
        }
    }
    if n == 0 {
        return Err(Error::invalid("mask selects no pixels"));
    }
    Ok(psnr_from_mse(se / n as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{Quat, Vec3};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut impl Rng, w: usize, h: usize, c: usize) -> Image<f64> {
        Image::from_vec(w, h, c, (0..w * h * c).map(|_| rng.random()).collect()).unwrap()
    }

    /// Direct per-window SSIM with an explicitly built 2D kernel.
    pub(crate) fn ssim_oracle(a: &Image<f64>, b: &Image<f64>) -> f64 {
        let r = 5i64;
        let mut k2 = vec![0.0; 121];
        for i in 0..11 {
            for j in 0..11 {
                let (di, dj) = (i as i64 - r, j as i64 - r);
                k2[i * 11 + j] = (-((di * di + dj * dj) as f64) / (2.0 * 1.5 * 1.5)).exp();
            }
        }
        let s: f64 = k2.iter().sum();
        k2.iter_mut().for_each(|v| *v /= s);
        let mut total = 0.0;
        let mut count = 0;
        for c in 0..a.channels {
            for y0 in 0..=a.height - 11 {
                for x0 in 0..=a.width - 11 {
                    let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for i in 0..11 {
                        for j in 0..11 {
                            let w = k2[i * 11 + j];
                            let x = a.pixel(x0 + j, y0 + i)[c];
                            let y = b.pixel(x0 + j, y0 + i)[c];
                            mx += w * x;
                            my += w * y;
                            sxx += w * x * x;
                            syy += w * y * y;
                            sxy += w * x * y;
                        }
                    }
                    let vx = sxx - mx * mx;
                    let vy = syy - my * my;
                    let cxy = sxy - mx * my;
                    let (c1, c2) = (1e-4, 9e-4);
                    total += (2.0 * mx * my + c1) * (2.0 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                    count += 1;
                }
            }
        }
        total / count as f64
    }

    #[test]
    fn ssim_matches_direct_window_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            let a = random_image(&mut rng, 32, 32, 3);
            let b = random_image(&mut rng, 32, 32, 3);
            assert!((ssim(&a, &b).unwrap() - ssim_oracle(&a, &b)).abs() < 1e-6);
            assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn ssim_identity_and_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_image(&mut rng, 16, 12, 3);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        let small = random_image(&mut rng, 10, 12, 3);
        assert!(matches!(ssim(&small, &small), Err(Error::InvalidArgument(_))));
        let b = random_image(&mut rng, 16, 13, 3);
        assert!(matches!(ssim(&a, &b), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn photometric_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_image(&mut rng, 12, 12, 3);
        assert_eq!(photometric_loss(&a, &a, 0.2).unwrap(), 0.0);
        let b = random_image(&mut rng, 12, 12, 3);
        let mae = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.data.len() as f64;
        assert!((photometric_loss(&a, &b, 0.0).unwrap() - mae).abs() < 1e-15);
        // Constant 0.5 vs 0.6: the L1 part is 0.8 · 0.1; SSIM from the closed form
        // (zero variance, so only the luminance term remains).
        let p = Image::filled(12, 12, &[0.5; 3]);
        let g = Image::filled(12, 12, &[0.6; 3]);
        let s = (2.0 * 0.5 * 0.6 + 1e-4) / (0.25 + 0.36 + 1e-4);
        let want = 0.8 * 0.1 + 0.2 * (1.0 - s);
        assert!(((1.0 - 0.2) * l1_loss(&p, &g).unwrap() - 0.08).abs() < 1e-12);
        assert!((photometric_loss(&p, &g, 0.2).unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn photometric_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_image(&mut rng, 13, 12, 3);
        let b = random_image(&mut rng, 13, 12, 3);
        let (_, g) = photometric_loss_with_grad(&a, &b, 0.2).unwrap();
        let h = 1e-6;
        for idx in (0..a.data.len()).step_by(7) {
            let mut p = a.clone();
            let mut q = a.clone();
            p.data[idx] += h;
            q.data[idx] -= h;
            let fd = (photometric_loss(&p, &b, 0.2).unwrap() - photometric_loss(&q, &b, 0.2).unwrap()) / (2.0 * h);
            let rel = (fd - g.data[idx]).abs() / fd.abs().max(g.data[idx].abs()).max(1e-8);
            assert!(rel < 1e-4, "pixel value {idx}: {} vs {fd}", g.data[idx]);
        }
    }

    #[test]
    fn masked_losses() {
        let mut pred = Image::<f64>::zeros(2, 1, 3);
        let mut pseudo = Image::<f64>::zeros(2, 1, 3);
        let mut mask = Image::<f64>::zeros(2, 1, 1);
        pred.pixel_mut(0, 0).copy_from_slice(&[1.0, 0.0, 0.0]);
        pseudo.pixel_mut(0, 0).copy_from_slice(&[0.0, 1.0, 0.0]);
        assert_eq!(normal_loss(&pred, &pseudo, &mask).unwrap(), 0.0);
        mask.data[0] = 1.0;
        assert_eq!(normal_loss(&pred, &pseudo, &mask).unwrap(), 2.0);
        assert_eq!(normal_loss(&pred, &pred, &mask).unwrap(), 0.0);

        let m = Image::filled(4, 4, &[0.3, 0.5, 0.7]);
        let shifted = m.map(|v| v + 0.1);
        let full = Image::filled(4, 4, &[1.0]);
        assert!((material_loss(&shifted, &m, &full).unwrap() - 0.3).abs() < 1e-12);
        // Only masked pixels count: corrupt the unmasked half.
        let mut half = Image::<f64>::zeros(4, 4, 1);
        let mut corrupted = shifted.clone();
        for y in 0..4 {
            for x in 0..4 {
                if x < 2 {
                    half.pixel_mut(x, y)[0] = 1.0;
                } else {
                    corrupted.pixel_mut(x, y).copy_from_slice(&[9.0, 9.0, 9.0]);
                }
            }
        }
        assert!((material_loss(&corrupted, &m, &half).unwrap() - 0.3).abs() < 1e-12);
    }

    fn set_from(scales: &[[f64; 3]]) -> GaussianSet<f64> {
        let mut s = GaussianSet::default();
        for ls in scales {
            s.push(Vec3::zero(), Vec3::from_array(*ls), Quat::identity(), 0.0);
        }
        s
    }

    #[test]
    fn flatness_examples() {
        assert_eq!(scale_flatness_loss(&set_from(&[[0.0; 3]]), 1.0, None), 1.0);
        assert!(scale_flatness_loss(&set_from(&[[1.0, 0.0, 0.0]]), 1.0, None).abs() < 1e-15);
        assert_eq!(scale_flatness_loss(&set_from(&[[0.1f64.ln(), 0.0, 0.0]]), 1.0, None), 0.0);
    }

    #[test]
    fn isotropic_splat_gets_a_gradient() {
        let s = set_from(&[[0.0; 3]]);
        let mut g = vec![0.0; 3];
        scale_flatness_loss(&s, 1.0, Some(&mut g));
        assert_eq!(g, vec![1.0, 0.0, -1.0]);
    }

    #[test]
    fn total_loss_arithmetic_and_divergence() {
        let w = LossWeights::default();
        assert_eq!(total_loss(&LossComponents::default(), &w).unwrap(), 0.0);
        let c = LossComponents { photo: 0.1, material: 0.2, normal: 0.3, scale: 0.4 };
        assert!((total_loss(&c, &w).unwrap() - 0.129).abs() < 1e-15);
        let implicit = LossWeights { lambda_decomp: 0.0, lambda_scale: 0.0, ..w.clone() };
        assert_eq!(total_loss(&c, &implicit).unwrap(), 0.1);
        let bad = LossComponents { normal: f64::NAN, ..c };
        match total_loss(&bad, &w) {
            Err(Error::TrainingDivergence { component, .. }) => assert!(component.contains("normal")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn psnr_examples() {
        let a = Image::filled(4, 4, &[0.5]);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        assert_eq!(psnr_from_mse(0.01), 20.0);
        assert_eq!(psnr_from_mse(1e-3), 30.0);
        let b = a.map(|v| v + 0.1);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn flatness_is_permutation_and_shift_invariant(
            a in -3.0f64..3.0, b in -3.0f64..3.0, c in -3.0f64..3.0, shift in -5.0f64..5.0, delta in 0.1f64..3.0,
        ) {
            let base = scale_flatness_loss(&set_from(&[[a, b, c]]), delta, None);
            prop_assert!(base >= 0.0);
            for p in [[b, c, a], [c, a, b], [b, a, c]] {
                prop_assert!((scale_flatness_loss(&set_from(&[p]), delta, None) - base).abs() < 1e-12);
            }
            let shifted = scale_flatness_loss(&set_from(&[[a + shift, b + shift, c + shift]]), delta, None);
            prop_assert!((shifted - base).abs() < 1e-9);
        }

        #[test]
        fn losses_are_non_negative(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_image(&mut rng, 12, 11, 3);
            let b = random_image(&mut rng, 12, 11, 3);
            let m = random_image(&mut rng, 12, 11, 1);
            prop_assert!(photometric_loss(&a, &b, 0.2).unwrap() >= 0.0);
            prop_assert!(material_loss(&a, &b, &m).unwrap() >= 0.0);
            prop_assert!(ssim(&a, &b).unwrap() <= 1.0);
        }
    }
}
