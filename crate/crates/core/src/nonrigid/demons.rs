//! Compositive symmetric Demons on intensity SSD. Multi-resolution, with the
//! update field smoothed by σ_fluid and the composed total field by
//! σ_diffusion each iteration. Not diffeomorphic by design.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{build_pyramid, smooth_displacement, MAX_STEP_PX};
use crate::error::{RegError, Result};
use crate::imgcore::{compose_fields, warp_image, DisplacementField, Image, Interp};

/// Denominator weight of the squared residual (the classic Demons α).
const ALPHA: f64 = 1.0;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DemonsParams {
    /// Pyramid level count (level 0 is the working resolution).
    pub levels: usize,
    pub iters_per_level: usize,
    /// Smoothing of the per-iteration update field, pixels.
    pub sigma_fluid: f64,
    /// Smoothing of the composed total field, pixels.
    pub sigma_diffusion: f64,
    /// Multiplier on the normalized force.
    pub step_scale: f64,
    /// Stabilizer added to the force denominator (intensity² units).
    pub normalization_floor: f64,
    /// Mean update magnitude (pixels) below which a level stops early;
    /// 0 disables early stopping.
    pub stop_threshold: f64,
}

impl Default for DemonsParams {
    fn default() -> Self {
        Self {
            levels: 4,
            iters_per_level: 50,
            sigma_fluid: 2.0,
            sigma_diffusion: 1.0,
            step_scale: 1.0,
            normalization_floor: 1e-6,
            stop_threshold: 5e-3,
        }
    }
}

impl DemonsParams {
    pub fn validate(&self) -> Result<()> {
        if self.levels < 1 || self.iters_per_level < 1 {
            return Err(RegError::InvalidParameter(
                "demons needs levels >= 1 and iters_per_level >= 1".into(),
            ));
        }
        if self.sigma_fluid < 0.0 || self.sigma_diffusion < 0.0 {
            return Err(RegError::InvalidParameter(
                "demons smoothing sigmas must be nonnegative".into(),
            ));
        }
        if self.step_scale <= 0.0 || self.normalization_floor < 0.0 {
            return Err(RegError::InvalidParameter(
                "demons step_scale must be positive and floor nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Symmetric Demons force: for each pixel,
/// u = −step · 2r·(∇f + ∇m_w) / (‖∇f + ∇m_w‖² + α·r² + floor),
/// with r = m_w − f, capped at 2 px.
fn demons_force(
    fixed: &Image,
    fixed_gx: &Image,
    fixed_gy: &Image,
    warped: &Image,
    p: &DemonsParams,
) -> DisplacementField {
    let w = fixed.width();
    let h = fixed.height();
    let (mgx, mgy) = warped.gradient();
    let mut u = vec![0.0f64; w * h];
    let mut v = vec![0.0f64; w * h];
    u.par_chunks_mut(w)
        .zip(v.par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, (urow, vrow))| {
            for x in 0..w {
                let r = warped.get(x, y) - fixed.get(x, y);
                let jx = fixed_gx.get(x, y) + mgx.get(x, y);
                let jy = fixed_gy.get(x, y) + mgy.get(x, y);
                let denom = jx * jx + jy * jy + ALPHA * r * r + p.normalization_floor;
                let s = -p.step_scale * 2.0 * r / denom;
                let mut ux = s * jx;
                let mut uy = s * jy;
                let mag = (ux * ux + uy * uy).sqrt();
                if mag > MAX_STEP_PX {
                    let k = MAX_STEP_PX / mag;
                    ux *= k;
                    uy *= k;
                }
                urow[x] = ux;
                vrow[x] = uy;
            }
        });
    DisplacementField::new(w, h, u, v).expect("force is finite")
}

/// Multi-resolution compositive symmetric Demons registration.
/// `init` seeds the field (typically rasterized from the initial affine);
/// the returned field lives at the working resolution of the inputs.
pub fn demons_register(
    fixed: &Image,
    moving: &Image,
    init: &DisplacementField,
    p: &DemonsParams,
) -> Result<DisplacementField> {
    p.validate()?;
    if !fixed.same_dims(moving) {
        return Err(RegError::DimensionMismatch(format!(
            "fixed {}x{} vs moving {}x{}",
            fixed.width(),
            fixed.height(),
            moving.width(),
            moving.height()
        )));
    }
    if init.width() != fixed.width() || init.height() != fixed.height() {
        return Err(RegError::DimensionMismatch(format!(
            "init field {}x{} vs image {}x{}",
            init.width(),
            init.height(),
            fixed.width(),
            fixed.height()
        )));
    }

    let fixed_pyr = build_pyramid(fixed, p.levels, 16);
    let moving_pyr = build_pyramid(moving, p.levels, 16);
    let coarsest = fixed_pyr.len() - 1;

    let mut field = init.resample(fixed_pyr[coarsest].width(), fixed_pyr[coarsest].height());
    for level in (0..fixed_pyr.len()).rev() {
        let f = &fixed_pyr[level];
        let m = &moving_pyr[level];
        if field.width() != f.width() || field.height() != f.height() {
            field = field.resample(f.width(), f.height());
        }
        let (fgx, fgy) = f.gradient();
        for _ in 0..p.iters_per_level {
            let warped = warp_image(m, &field, Interp::Bilinear)?;
            let update = demons_force(f, &fgx, &fgy, &warped, p);
            let update = smooth_displacement(&update, p.sigma_fluid);
            field = compose_fields(&field, &update)?;
            field = smooth_displacement(&field, p.sigma_diffusion);
            if p.stop_threshold > 0.0 && update.mean_magnitude() < p.stop_threshold {
                break;
            }
        }
    }
    Ok(field)
}
