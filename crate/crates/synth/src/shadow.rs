//! Cast-shadow masks: ground truth from the scene, predicted from an
//! illumination layer, and their overlap.

use admgs_core::image::Image;
use admgs_core::{Error, Result};
use serde::Serialize;

use crate::spec::SyntheticSceneSpec;
use crate::trace::trace_pixel;

/// Pixels whose surface faces the sun less than this are left out: their
/// lit and shadowed values are too close to tell apart.
pub const MIN_SUN_COSINE: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ShadowComparison {
    /// Static, sun-facing pixels where the comparison is made.
    pub domain: usize,
    pub truth: usize,
    pub predicted: usize,
    pub iou: f64,
}

impl ShadowComparison {
    /// Pool several views into one intersection-over-union.
    pub fn pooled(parts: &[(ShadowComparison, usize)]) -> Self {
        let (mut domain, mut truth, mut predicted, mut inter) = (0, 0, 0, 0);
        for (p, i) in parts {
            domain += p.domain;
            truth += p.truth;
            predicted += p.predicted;
            inter += i;
        }
        let union = truth + predicted - inter;
        Self { domain, truth, predicted, iou: if union == 0 { 1.0 } else { inter as f64 / union as f64 } }
    }
}

/// Compare the shadow implied by `illumination` (rendered for `camera` under
/// `traversal`'s light) with the true cast shadow. A pixel counts as
/// predicted shadow when its mean illumination is below the midpoint of the
/// true shadowed (ambient) and lit (ambient + sun·cosθ) values. Returns the
/// comparison and the intersection size.
pub fn compare_shadow(
    spec: &SyntheticSceneSpec,
    traversal: usize,
    camera: usize,
    illumination: &Image<f64>,
) -> Result<(ShadowComparison, usize)> {
    let light = spec.traversals.get(traversal).ok_or_else(|| Error::invalid(format!("no traversal {traversal}")))?;
    if (illumination.width, illumination.height, illumination.channels) != (spec.width, spec.height, 3) {
        return Err(Error::invalid("illumination layer does not match the scene size"));
    }
    let cam = spec.camera(camera);
    let mean = |v: [f64; 3]| (v[0] + v[1] + v[2]) / 3.0;
    let (mut domain, mut truth, mut predicted, mut inter) = (0, 0, 0, 0);
    for y in 0..spec.height {
        for x in 0..spec.width {
            let s = trace_pixel(spec, traversal, &cam, x, y);
            let cos = s.normal[0] * light.sun_direction[0] + s.normal[1] * light.sun_direction[1] + s.normal[2] * light.sun_direction[2];
            if s.static_mask < 0.5 || cos < MIN_SUN_COSINE {
                continue;
            }
            domain += 1;
            let threshold = mean(light.ambient) + 0.5 * cos * mean(light.sun_intensity);
            let p = illumination.pixel(x, y);
            let dark = (p[0] + p[1] + p[2]) / 3.0 < threshold;
            truth += s.cast_shadow as usize;
            predicted += dark as usize;
            inter += (dark && s.cast_shadow) as usize;
        }
    }
    let union = truth + predicted - inter;
    let iou = if union == 0 { 1.0 } else { inter as f64 / union as f64 };
    Ok((ShadowComparison { domain, truth, predicted, iou }, inter))
}
