//! Segment-test corner detector on a small image pyramid with a steered
//! binary intensity-comparison descriptor; distances are Hamming.

use std::sync::OnceLock;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{is_local_max, Keypoint};
use crate::imgcore::Image;
use crate::preprocess::{gaussian_smooth, resize_by_scale};

const THRESHOLD: f64 = 0.04;
const ARC_LEN: usize = 9;
const PYRAMID_LEVELS: usize = 4;
const PYRAMID_FACTOR: f64 = 1.3;
const DESC_BITS: usize = 256;
const PATCH_HALF: i32 = 13;
const CENTROID_RADIUS: isize = 7;

/// Ring of 16 offsets at radius 3 around the candidate pixel.
const RING: [(isize, isize); 16] = [
    (0, -3),
    (1, -3),
    (2, -2),
    (3, -1),
    (3, 0),
    (3, 1),
    (2, 2),
    (1, 3),
    (0, 3),
    (-1, 3),
    (-2, 2),
    (-3, 1),
    (-3, 0),
    (-3, -1),
    (-2, -2),
    (-1, -3),
];

/// Fixed comparison pattern shared by every detection run. Generated once from
/// a constant seed so descriptors are reproducible across processes.
fn test_pattern() -> &'static [(i32, i32, i32, i32)] {
    static PATTERN: OnceLock<Vec<(i32, i32, i32, i32)>> = OnceLock::new();
    PATTERN.get_or_init(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_b17_u64);
        (0..DESC_BITS)
            .map(|_| {
                (
                    rng.random_range(-PATCH_HALF..=PATCH_HALF),
                    rng.random_range(-PATCH_HALF..=PATCH_HALF),
                    rng.random_range(-PATCH_HALF..=PATCH_HALF),
                    rng.random_range(-PATCH_HALF..=PATCH_HALF),
                )
            })
            .collect()
    })
}

pub fn detect(img: &Image) -> Vec<Keypoint> {
    let mut kps = Vec::new();
    let mut level = img.clone();
    let mut level_scale = 1.0f64;
    for _ in 0..PYRAMID_LEVELS {
        if level.width() < 32 || level.height() < 32 {
            break;
        }
        detect_level(&level, level_scale, &mut kps);
        level_scale *= PYRAMID_FACTOR;
        level = resize_by_scale(img, level_scale);
    }
    kps
}

fn detect_level(img: &Image, level_scale: f64, out: &mut Vec<Keypoint>) {
    let w = img.width();
    let h = img.height();
    let mut score = Image::zeros(w, h);
    for y in 3..h.saturating_sub(3) {
        for x in 3..w.saturating_sub(3) {
            score.set(x, y, corner_score(img, x, y));
        }
    }
    // Descriptor sampling happens on a smoothed copy; comparisons on raw
    // pixels are too noise-sensitive.
    let smoothed = gaussian_smooth(img, 2.0);
    let pattern = test_pattern();

    let margin = (PATCH_HALF + 2) as usize;
    for y in 3..h.saturating_sub(3) {
        for x in 3..w.saturating_sub(3) {
            let s = score.get(x, y);
            if s <= 0.0 || !is_local_max(&score, x, y) {
                continue;
            }
            if x < margin || y < margin || x >= w - margin || y >= h - margin {
                continue;
            }
            let orientation = intensity_centroid_angle(img, x, y);
            let descriptor = describe(&smoothed, x, y, orientation, pattern);
            out.push(Keypoint {
                x: x as f64 * level_scale,
                y: y as f64 * level_scale,
                scale: 3.0 * level_scale,
                orientation,
                descriptor,
                response: s,
            });
        }
    }
}

/// Segment test: at least [`ARC_LEN`] contiguous ring pixels all brighter than
/// c + t or all darker than c − t. The score sums the margins of the pixels
/// that pass, 0 when the test fails.
fn corner_score(img: &Image, x: usize, y: usize) -> f64 {
    let c = img.get(x, y);
    let mut brighter = [false; 16];
    let mut darker = [false; 16];
    let mut margin = [0.0f64; 16];
    for (i, &(dx, dy)) in RING.iter().enumerate() {
        let v = img.get_clamped(x as isize + dx, y as isize + dy);
        let d = v - c;
        brighter[i] = d > THRESHOLD;
        darker[i] = -d > THRESHOLD;
        margin[i] = d.abs() - THRESHOLD;
    }
    let run_ok = |flags: &[bool; 16]| {
        let mut best = 0usize;
        let mut run = 0usize;
        // Double traversal handles wrap-around runs.
        for i in 0..32 {
            if flags[i % 16] {
                run += 1;
                best = best.max(run);
                if best >= 16 {
                    break;
                }
            } else {
                run = 0;
            }
        }
        best >= ARC_LEN
    };
    if run_ok(&brighter) || run_ok(&darker) {
        margin.iter().filter(|&&m| m > 0.0).sum()
    } else {
        0.0
    }
}

/// Orientation from the intensity centroid of the surrounding patch.
fn intensity_centroid_angle(img: &Image, x: usize, y: usize) -> f64 {
    let mut m10 = 0.0;
    let mut m01 = 0.0;
    for dy in -CENTROID_RADIUS..=CENTROID_RADIUS {
        for dx in -CENTROID_RADIUS..=CENTROID_RADIUS {
            if dx * dx + dy * dy > CENTROID_RADIUS * CENTROID_RADIUS {
                continue;
            }
            let v = img.get_clamped(x as isize + dx, y as isize + dy);
            m10 += dx as f64 * v;
            m01 += dy as f64 * v;
        }
    }
    m01.atan2(m10)
}

fn describe(
    smoothed: &Image,
    x: usize,
    y: usize,
    orientation: f64,
    pattern: &[(i32, i32, i32, i32)],
) -> Vec<f32> {
    let (sin_o, cos_o) = orientation.sin_cos();
    let rotate = |px: i32, py: i32| {
        let rx = cos_o * px as f64 - sin_o * py as f64;
        let ry = sin_o * px as f64 + cos_o * py as f64;
        (x as f64 + rx, y as f64 + ry)
    };
    pattern
        .iter()
        .map(|&(ax, ay, bx, by)| {
            let (pax, pay) = rotate(ax, ay);
            let (pbx, pby) = rotate(bx, by);
            let va = smoothed.sample_bilinear_clamped(pax, pay);
            let vb = smoothed.sample_bilinear_clamped(pbx, pby);
            if va < vb {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pattern_is_stable() {
        let a = test_pattern();
        let b = test_pattern();
        assert_eq!(a.len(), DESC_BITS);
        assert_eq!(a, b);
    }

    #[test]
    fn corner_on_small_disc() {
        // Disc radius below the ring radius: the whole ring reads darker.
        let img = Image::from_fn(64, 64, |x, y| {
            let d = ((x as f64 - 32.0).powi(2) + (y as f64 - 32.0).powi(2)).sqrt();
            if d < 2.5 {
                0.95
            } else {
                0.05
            }
        });
        assert!(corner_score(&img, 32, 32) > 0.0);
        assert_eq!(corner_score(&Image::constant(64, 64, 0.5), 32, 32), 0.0);
    }
}
