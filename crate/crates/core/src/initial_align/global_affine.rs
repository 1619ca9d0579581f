//! Global affine registration by gradient descent on an SSD metric with
//! per-tile linear intensity corrections, used as the second stage of the
//! fallback initial alignment.

use crate::error::{RegError, Result};
use crate::imgcore::{Affine2D, Image};

const TILE: usize = 64;
const DIVERGENCE_PATIENCE: usize = 10;

#[derive(Debug, Clone, Copy)]
pub struct GlobalAffineOutcome {
    pub transform: Affine2D,
    /// Set when the SSD grew for 10 consecutive iterations and the initial
    /// transform was returned instead.
    pub diverged: bool,
}

/// Normalized-coordinate frame used so all six parameters share one scale.
struct Frame {
    cx: f64,
    cy: f64,
    r: f64,
}

impl Frame {
    fn of(img: &Image) -> Self {
        Frame {
            cx: (img.width() as f64 - 1.0) / 2.0,
            cy: (img.height() as f64 - 1.0) / 2.0,
            r: img.width().max(img.height()) as f64 / 2.0,
        }
    }

    /// Pixel-space affine for parameters θ, where the normalized-space map is
    /// p_n -> (I + Θ) p_n + t.
    fn to_pixel(&self, theta: &[f64; 6]) -> Affine2D {
        let m00 = 1.0 + theta[0];
        let m01 = theta[1];
        let m10 = theta[3];
        let m11 = 1.0 + theta[4];
        let tx = theta[2] * self.r + self.cx - (m00 * self.cx + m01 * self.cy);
        let ty = theta[5] * self.r + self.cy - (m10 * self.cx + m11 * self.cy);
        Affine2D::new([[m00, m01, tx], [m10, m11, ty], [0.0, 0.0, 1.0]])
            .unwrap_or_else(|_| Affine2D::identity())
    }

    fn from_pixel(&self, a: &Affine2D) -> [f64; 6] {
        let m = a.matrix();
        let (qx, qy) = a.apply(self.cx, self.cy);
        [
            m[0][0] - 1.0,
            m[0][1],
            (qx - self.cx) / self.r,
            m[1][0],
            m[1][1] - 1.0,
            (qy - self.cy) / self.r,
        ]
    }
}

/// Per-tile least-squares contrast/brightness fit of `warped` against `fixed`.
/// Returns the corrected image.
fn tile_intensity_correct(fixed: &Image, warped: &Image, stride: usize) -> Image {
    let w = fixed.width();
    let h = fixed.height();
    let mut out = warped.clone();
    let mut ty = 0;
    while ty < h {
        let mut tx = 0;
        let y1 = (ty + TILE).min(h);
        while tx < w {
            let x1 = (tx + TILE).min(w);
            let mut n = 0.0;
            let (mut sm, mut sf, mut smm, mut smf) = (0.0, 0.0, 0.0, 0.0);
            let mut y = ty;
            while y < y1 {
                let mut x = tx;
                while x < x1 {
                    let m = warped.get(x, y);
                    let f = fixed.get(x, y);
                    n += 1.0;
                    sm += m;
                    sf += f;
                    smm += m * m;
                    smf += m * f;
                    x += stride;
                }
                y += stride;
            }
            let (c, b) = if n < 4.0 {
                (1.0, 0.0)
            } else {
                let var = smm / n - (sm / n) * (sm / n);
                if var < 1e-10 {
                    // Flat tile: align means only.
                    (1.0, sf / n - sm / n)
                } else {
                    let cov = smf / n - (sm / n) * (sf / n);
                    let c = (cov / var).clamp(-10.0, 10.0);
                    (c, sf / n - c * (sm / n))
                }
            };
            for y in ty..y1 {
                for x in tx..x1 {
                    out.set(x, y, c * warped.get(x, y) + b);
                }
            }
            tx += TILE;
        }
        ty += TILE;
    }
    out
}

fn warp_by_affine(moving: &Image, a: &Affine2D, w: usize, h: usize) -> Image {
    Image::from_fn(w, h, |x, y| {
        let (mx, my) = a.apply(x as f64, y as f64);
        moving.sample_bilinear_zero(mx, my)
    })
}

/// Gradient descent on the 6 affine parameters minimizing the SSD between the
/// tile-wise intensity-corrected warp of `moving` and `fixed`. The transform
/// maps fixed coordinates into moving coordinates (backward convention).
/// Returns the parameters at the best observed SSD; if the SSD grows for 10
/// consecutive iterations the initial transform is returned with `diverged`.
pub fn global_affine_ssd(
    fixed: &Image,
    moving: &Image,
    init: &Affine2D,
    iters: usize,
    step_size: f64,
) -> Result<GlobalAffineOutcome> {
    if !fixed.same_dims(moving) {
        return Err(RegError::DimensionMismatch(format!(
            "fixed {}x{} vs moving {}x{}",
            fixed.width(),
            fixed.height(),
            moving.width(),
            moving.height()
        )));
    }
    let w = fixed.width();
    let h = fixed.height();
    let stride = (w.max(h) / 512).max(1);
    let frame = Frame::of(fixed);
    let (mgx, mgy) = moving.gradient();

    let mut theta = frame.from_pixel(init);
    let mut best_theta = theta;
    let mut best_ssd = f64::INFINITY;
    let mut prev_ssd = f64::INFINITY;
    let mut rising = 0usize;
    let mut step = step_size;

    for _ in 0..iters {
        let a = frame.to_pixel(&theta);
        let warped = warp_by_affine(moving, &a, w, h);
        let corrected = tile_intensity_correct(fixed, &warped, stride);

        // SSD and gradient in one sweep.
        let mut ssd = 0.0;
        let mut grad = [0.0f64; 6];
        let mut count = 0.0;
        let mut y = 0;
        while y < h {
            let mut x = 0;
            while x < w {
                let r = corrected.get(x, y) - fixed.get(x, y);
                ssd += r * r;
                count += 1.0;
                // Contrast of the tile scales the image gradient; treating it
                // as locally constant keeps the gradient cheap and is accurate
                // enough for a descent direction.
                let (mx, my) = a.apply(x as f64, y as f64);
                let gx = mgx.sample_bilinear_zero(mx, my);
                let gy = mgy.sample_bilinear_zero(mx, my);
                let pnx = (x as f64 - frame.cx) / frame.r;
                let pny = (y as f64 - frame.cy) / frame.r;
                let gr = 2.0 * r;
                grad[0] += gr * gx * pnx * frame.r;
                grad[1] += gr * gx * pny * frame.r;
                grad[2] += gr * gx * frame.r;
                grad[3] += gr * gy * pnx * frame.r;
                grad[4] += gr * gy * pny * frame.r;
                grad[5] += gr * gy * frame.r;
                x += stride;
            }
            y += stride;
        }
        ssd /= count;
        for g in &mut grad {
            *g /= count;
        }

        if ssd < best_ssd {
            best_ssd = ssd;
            best_theta = theta;
        }
        if ssd > prev_ssd {
            rising += 1;
            if rising >= DIVERGENCE_PATIENCE {
                return Ok(GlobalAffineOutcome {
                    transform: *init,
                    diverged: true,
                });
            }
            // Overshoot: back up to the best point and try smaller steps.
            theta = best_theta;
            step = (step * 0.5).max(1e-4 * step_size);
        } else {
            rising = 0;
            step = (step * 1.05).min(step_size);
        }
        prev_ssd = ssd;

        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm < 1e-14 {
            break;
        }
        for (t, g) in theta.iter_mut().zip(&grad) {
            *t -= step * g / norm;
        }
    }

    Ok(GlobalAffineOutcome {
        transform: frame.to_pixel(&best_theta),
        diverged: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texture(w: usize, h: usize) -> Image {
        // Mixed low and high spatial frequencies: the per-tile intensity
        // correction cannot mimic a shift of the fine component.
        Image::from_fn(w, h, |x, y| {
            let fx = x as f64;
            let fy = y as f64;
            0.5 + 0.15 * (fx * 0.13).sin() * (fy * 0.17).cos()
                + 0.1 * (fx * 0.031 + fy * 0.045).sin()
                + 0.12 * (fx * 0.61).sin() * (fy * 0.53).cos()
                + 0.08 * (fx * 0.83 + fy * 0.29).sin()
        })
    }

    #[test]
    fn identity_on_identical_images() {
        let img = texture(128, 96);
        let out =
            global_affine_ssd(&img, &img, &Affine2D::identity(), 50, 0.02).unwrap();
        assert!(!out.diverged);
        let m = out.transform.matrix();
        assert!((m[0][0] - 1.0).abs() < 1e-3);
        assert!((m[1][1] - 1.0).abs() < 1e-3);
        assert!(m[0][2].abs() < 0.5);
        assert!(m[1][2].abs() < 0.5);
    }

    #[test]
    fn recovers_pure_shift() {
        let img = texture(128, 128);
        // moving(p) = img(p − 4ex)  =>  the map fixed→moving is p + (4, 0).
        let moving = Image::from_fn(128, 128, |x, y| {
            img.sample_bilinear_zero(x as f64 - 4.0, y as f64)
        });
        let out =
            global_affine_ssd(&img, &moving, &Affine2D::identity(), 300, 0.02).unwrap();
        assert!(!out.diverged);
        let (mx, my) = out.transform.apply(64.0, 64.0);
        assert!(
            (mx - 68.0).abs() < 0.5 && (my - 64.0).abs() < 0.5,
            "center maps to ({mx}, {my})"
        );
    }

    #[test]
    fn intensity_change_is_absorbed() {
        let img = texture(128, 128);
        let moving = Image::from_fn(128, 128, |x, y| {
            0.5 * img.sample_bilinear_zero(x as f64 - 4.0, y as f64) + 0.2
        });
        let out =
            global_affine_ssd(&img, &moving, &Affine2D::identity(), 300, 0.02).unwrap();
        assert!(!out.diverged);
        let (mx, my) = out.transform.apply(64.0, 64.0);
        assert!(
            (mx - 68.0).abs() < 0.5 && (my - 64.0).abs() < 0.5,
            "center maps to ({mx}, {my})"
        );
    }

    #[test]
    fn dimension_mismatch_errors() {
        let a = Image::zeros(64, 64);
        let b = Image::zeros(64, 65);
        assert!(global_affine_ssd(&a, &b, &Affine2D::identity(), 10, 0.01).is_err());
    }
}
