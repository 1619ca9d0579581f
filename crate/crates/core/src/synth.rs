//! Synthetic slide-pair generators used by the test suites and benchmarks.
//!
//! The generated images mimic brightfield histology at a coarse level: bright
//! glass background, one or more tissue regions with a sharp silhouette, and
//! dense stain texture (bumps and nuclei-like dots) inside the tissue. The
//! sharp silhouette keeps Li masks stable under resampling; the interior
//! texture feeds the keypoint detectors. Everything is deterministic in the
//! seed.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::imgcore::{Affine2D, DisplacementField, Image};

/// Glass (background) intensity of generated slides.
pub const GLASS: f64 = 0.93;

struct Ellipse {
    cx: f64,
    cy: f64,
    ax: f64,
    ay: f64,
    cos: f64,
    sin: f64,
}

impl Ellipse {
    /// Normalized elliptical radius: <1 inside, 1 on the boundary.
    fn radius(&self, x: f64, y: f64) -> f64 {
        let dx = x - self.cx;
        let dy = y - self.cy;
        let u = (self.cos * dx + self.sin * dy) / self.ax;
        let v = (-self.sin * dx + self.cos * dy) / self.ay;
        (u * u + v * v).sqrt()
    }
}

/// Synthetic stained-tissue slide: deterministic in `seed`.
pub fn slide(width: usize, height: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9).wrapping_add(0x51de));
    let w = width as f64;
    let h = height as f64;

    let n_tissue = rng.random_range(2..=3);
    let ellipses: Vec<Ellipse> = (0..n_tissue)
        .map(|_| {
            let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
            Ellipse {
                cx: rng.random_range(0.35 * w..0.65 * w),
                cy: rng.random_range(0.35 * h..0.65 * h),
                ax: rng.random_range(0.14 * w..0.26 * w),
                ay: rng.random_range(0.14 * h..0.26 * h),
                cos: angle.cos(),
                sin: angle.sin(),
            }
        })
        .collect();

    // Smooth-but-steep silhouette: the sigmoid argument changes by
    // steep/axis per pixel, so steep ≈ 2.5·axis gives a ~2 px transition.
    let mut support = vec![0.0f64; width * height];
    for y in 0..height {
        for x in 0..width {
            let mut s = 0.0f64;
            for e in &ellipses {
                let r = e.radius(x as f64, y as f64);
                let steep = 4.0 * e.ax.min(e.ay);
                let t = ((1.0 - r) * steep).clamp(-30.0, 30.0);
                s = s.max(1.0 / (1.0 + (-t).exp()));
            }
            support[y * width + x] = s;
        }
    }

    // Additive stain texture, rasterized bump by bump.
    let mut tex = vec![0.0f64; width * height];
    let splat = |cx: f64, cy: f64, r: f64, amp: f64, tex: &mut Vec<f64>| {
        let reach = (3.0 * r).ceil() as isize;
        let x0 = (cx as isize - reach).max(0);
        let x1 = (cx as isize + reach).min(width as isize - 1);
        let y0 = (cy as isize - reach).max(0);
        let y1 = (cy as isize + reach).min(height as isize - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                tex[y as usize * width + x as usize] += amp * (-d2 / (2.0 * r * r)).exp();
            }
        }
    };

    let inside = |support: &[f64], x: f64, y: f64| {
        let xi = (x as usize).min(width - 1);
        let yi = (y as usize).min(height - 1);
        support[yi * width + xi] > 0.5
    };

    // Broad stain-density variation.
    for _ in 0..3 {
        let cx = rng.random_range(0.2 * w..0.8 * w);
        let cy = rng.random_range(0.2 * h..0.8 * h);
        let r = rng.random_range(0.15 * w..0.3 * w);
        let amp = rng.random_range(-0.12..0.12);
        splat(cx, cy, r, amp, &mut tex);
    }
    // Medium texture bumps.
    let n_bumps = (width * height) / 350;
    let mut placed = 0usize;
    let mut attempts = 0usize;
    while placed < n_bumps && attempts < n_bumps * 20 {
        attempts += 1;
        let cx = rng.random_range(0.0..w);
        let cy = rng.random_range(0.0..h);
        if !inside(&support, cx, cy) {
            continue;
        }
        let r = rng.random_range(1.6..5.0);
        let amp = rng.random_range(-0.22..0.22);
        splat(cx, cy, r, amp, &mut tex);
        placed += 1;
    }
    // Small dark nuclei-like dots: strong, compact features.
    let n_dots = (width * height) / 500;
    placed = 0;
    attempts = 0;
    while placed < n_dots && attempts < n_dots * 20 {
        attempts += 1;
        let cx = rng.random_range(0.0..w);
        let cy = rng.random_range(0.0..h);
        if !inside(&support, cx, cy) {
            continue;
        }
        let r = rng.random_range(0.9..2.2);
        let amp = rng.random_range(-0.45..-0.25);
        splat(cx, cy, r, amp, &mut tex);
        placed += 1;
    }

    // Tissue intensities stay well clear of both the glass level and the Li
    // threshold (≈0.78 in original units for this mixture), so masks follow
    // the silhouette without holes and survive resampling.
    let data = (0..width * height)
        .map(|i| {
            let s = support[i];
            let tissue = (0.5 + tex[i]).clamp(0.3, 0.7);
            GLASS * (1.0 - s) + tissue * s
        })
        .collect();
    Image::new(width, height, data).expect("synthetic slide is finite")
}

/// Unstructured texture: random dark blobs scattered over the whole frame on
/// glass. Two different seeds give masks that no similarity transform can
/// overlap well, which is what the fail-detection suites need.
pub fn random_texture(width: usize, height: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x2545_f491).wrapping_add(0x7e47));
    let w = width as f64;
    let h = height as f64;
    let n = (width * height) / 250;
    let blobs: Vec<(f64, f64, f64, f64)> = (0..n)
        .map(|_| {
            (
                rng.random_range(0.0..w),
                rng.random_range(0.0..h),
                rng.random_range(1.5..6.0),
                rng.random_range(0.3..0.8),
            )
        })
        .collect();
    Image::from_fn(width, height, |x, y| {
        let mut v = GLASS;
        for &(cx, cy, r, depth) in &blobs {
            let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
            if d2 < (3.0 * r) * (3.0 * r) {
                v -= depth * (-d2 / (2.0 * r * r)).exp();
            }
        }
        v.clamp(0.0, 1.0)
    })
}

/// Additive Gaussian-ish noise (sum of three uniforms), clamped to [0, 1].
pub fn add_noise(img: &Image, sigma: f64, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1701);
    let k = sigma * 2.0; // three uniforms on [-1,1]: std = 1/√3 each, total ≈ 1
    let data = img
        .data()
        .iter()
        .map(|&v| {
            let n: f64 = (0..3)
                .map(|_| rng.random_range(-1.0f64..1.0))
                .sum::<f64>()
                / 3.0;
            (v + k * n).clamp(0.0, 1.0)
        })
        .collect();
    Image::new(img.width(), img.height(), data).expect("noise keeps values finite")
}

/// Build the source image of a pair whose true source→target map is `a`:
/// source(p) = target(a·p), sampled with border replication so the glass
/// background extends past the frame.
pub fn apply_affine(target: &Image, a: &Affine2D) -> Image {
    Image::from_fn(target.width(), target.height(), |x, y| {
        let (mx, my) = a.apply(x as f64, y as f64);
        target.sample_bilinear_clamped(mx, my)
    })
}

/// Smooth random displacement field with maximum magnitude ≈ `amplitude`
/// pixels, built from a few low-frequency sinusoidal modes.
pub fn smooth_field(width: usize, height: usize, amplitude: f64, seed: u64) -> DisplacementField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xf1e1d);
    let w = width as f64;
    let h = height as f64;
    let n_modes = 3;
    let modes: Vec<(f64, f64, f64, f64, f64, f64)> = (0..n_modes)
        .map(|_| {
            (
                rng.random_range(0.5..1.5) / w * std::f64::consts::TAU,
                rng.random_range(0.5..1.5) / h * std::f64::consts::TAU,
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(-1.0..1.0f64),
                rng.random_range(-1.0..1.0f64),
            )
        })
        .collect();
    let mut field = DisplacementField::from_fn(width, height, |x, y| {
        let fx = x as f64;
        let fy = y as f64;
        let mut du = 0.0;
        let mut dv = 0.0;
        for &(kx, ky, px, py, au, av) in &modes {
            du += au * (kx * fx + px).sin() * (ky * fy + py).cos();
            dv += av * (kx * fx + px).cos() * (ky * fy + py).sin();
        }
        (du, dv)
    });
    let max = field.max_magnitude().max(1e-9);
    let gain = amplitude / max;
    for v in field.u_mut() {
        *v *= gain;
    }
    for v in field.v_mut() {
        *v *= gain;
    }
    field
}

/// Backward-warp with border replication: out(p) = img(p + d(p)), glass
/// extending beyond the frame. The true registration field of the pair
/// (fixed = output, moving = img) is exactly `field`.
pub fn warp_clamped(img: &Image, field: &DisplacementField) -> Image {
    Image::from_fn(img.width(), img.height(), |x, y| {
        let (du, dv) = field.get(x, y);
        img.sample_bilinear_clamped(x as f64 + du, y as f64 + dv)
    })
}

/// Regular landmark grid with a margin, in pixel coordinates.
pub fn grid_landmarks(width: usize, height: usize, margin: usize, step: usize) -> Vec<(f64, f64)> {
    let mut pts = Vec::new();
    let mut y = margin;
    while y + margin < height {
        let mut x = margin;
        while x + margin < width {
            pts.push((x as f64, y as f64));
            x += step;
        }
        y += step;
    }
    pts
}
