//! The four nonrigid refinement engines: compositive symmetric Demons
//! (intensity SSD), compositive symmetric MIND Demons, local affine
//! registration with missing-data handling, and thin plate spline
//! interpolation of feature matches.
//!
//! All engines share the backward dense-field representation from `imgcore`,
//! so a field produced by any of them — or rasterized from the initial affine —
//! drops into any other stage without conversion.

mod demons;
mod local_affine;
mod mind;
mod tps;

pub use demons::{demons_register, DemonsParams};
pub use local_affine::{
    default_window_schedule, local_affine_register, LocalAffineParams, LocalAffineResult,
};
pub use mind::{
    mind_demons_register, mind_descriptor, mind_ssd_image, MindDescriptorField, MindParams,
};
pub use tps::{tps_fit, tps_to_field, TpsModel};

use crate::imgcore::{DisplacementField, Image};
use crate::preprocess::{gaussian_smooth, resize_by_scale};

/// Per-pixel displacement cap applied by both Demons variants (pixels per
/// iteration).
pub(crate) const MAX_STEP_PX: f64 = 2.0;

/// Gaussian-smooth both channels of a displacement field.
pub(crate) fn smooth_displacement(field: &DisplacementField, sigma: f64) -> DisplacementField {
    if sigma <= 0.0 {
        return field.clone();
    }
    let w = field.width();
    let h = field.height();
    let u = Image::new(w, h, field.u().to_vec()).expect("field channel is finite");
    let v = Image::new(w, h, field.v().to_vec()).expect("field channel is finite");
    let us = gaussian_smooth(&u, sigma);
    let vs = gaussian_smooth(&v, sigma);
    DisplacementField::new(w, h, us.data().to_vec(), vs.data().to_vec())
        .expect("smoothing preserves finiteness")
}

/// Halving pyramid with anti-alias smoothing; `pyramid[0]` is the input.
/// Levels stop once the smaller side would drop below `min_side`.
pub(crate) fn build_pyramid(img: &Image, levels: usize, min_side: usize) -> Vec<Image> {
    let mut out = vec![img.clone()];
    for _ in 1..levels {
        let last = out.last().unwrap();
        if last.width().min(last.height()) < 2 * min_side {
            break;
        }
        out.push(resize_by_scale(last, 2.0));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pyramid_respects_min_side() {
        let img = Image::zeros(200, 120);
        let pyr = build_pyramid(&img, 5, 32);
        assert_eq!(pyr.len(), 2); // 120 -> 60, then 60 < 2*32 stops
        assert_eq!(pyr[1].width(), 100);
    }

    #[test]
    fn smooth_displacement_keeps_constant_field() {
        let f = DisplacementField::from_fn(32, 32, |_, _| (1.5, -0.5));
        let s = smooth_displacement(&f, 2.0);
        for y in 0..32 {
            for x in 0..32 {
                let (du, dv) = s.get(x, y);
                assert!((du - 1.5).abs() < 1e-9 && (dv + 0.5).abs() < 1e-9);
            }
        }
    }
}
