//! Keypoint detector portfolio: three pluggable detector/descriptor kinds with
//! complementary characteristics, all deterministic. The initial alignment runs
//! every kind and keeps whichever candidate transform scores the best mask
//! overlap, so no single detector has to succeed on every stain combination.

mod fast_binary;
mod hessian;
mod scale_space;

use serde::{Deserialize, Serialize};

use crate::error::{RegError, Result};
use crate::imgcore::Image;

/// Hard cap on keypoints per image, strongest first.
pub const MAX_KEYPOINTS: usize = 5000;

/// Minimum image side accepted by the detectors.
pub const MIN_DETECT_SIDE: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    /// Difference-of-Gaussian scale-space extrema with a gradient-histogram
    /// float descriptor.
    BlobScaleSpace,
    /// Segment-test corners on a small pyramid with an oriented binary
    /// intensity-comparison descriptor (Hamming distance).
    FastBinary,
    /// Determinant-of-Hessian blobs from box filters on an integral image,
    /// with a gradient-sum float descriptor.
    HessianBlob,
}

impl DetectorKind {
    pub const ALL: [DetectorKind; 3] = [
        DetectorKind::BlobScaleSpace,
        DetectorKind::FastBinary,
        DetectorKind::HessianBlob,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            DetectorKind::BlobScaleSpace => "blob_scale_space",
            DetectorKind::FastBinary => "fast_binary",
            DetectorKind::HessianBlob => "hessian_blob",
        }
    }

    /// Whether descriptor distance is Hamming (binary) rather than Euclidean.
    pub fn is_binary(&self) -> bool {
        matches!(self, DetectorKind::FastBinary)
    }
}

/// A detected interest point with its descriptor.
#[derive(Debug, Clone)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    /// Characteristic footprint in pixels at the detection resolution.
    pub scale: f64,
    /// Dominant orientation in radians.
    pub orientation: f64,
    /// Fixed-length descriptor; binary kinds store 0/1 entries.
    pub descriptor: Vec<f32>,
    /// Detector response used for strongest-first capping.
    pub response: f64,
}

/// Descriptor distance for a detector kind: Hamming for binary descriptors,
/// Euclidean for float descriptors.
pub fn descriptor_distance(kind: DetectorKind, a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    if kind.is_binary() {
        a.iter()
            .zip(b)
            .map(|(&x, &y)| (x - y).abs() as f64)
            .sum::<f64>()
    } else {
        a.iter()
            .zip(b)
            .map(|(&x, &y)| {
                let d = (x - y) as f64;
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// Detect keypoints of the given kind, capped at `max_keypoints` strongest
/// (and never more than [`MAX_KEYPOINTS`]). Images must be at least 64x64.
pub fn detect_features(img: &Image, kind: DetectorKind, max_keypoints: usize) -> Result<Vec<Keypoint>> {
    if img.width() < MIN_DETECT_SIDE || img.height() < MIN_DETECT_SIDE {
        return Err(RegError::DegenerateInput(format!(
            "image {}x{} below detector minimum {}x{}",
            img.width(),
            img.height(),
            MIN_DETECT_SIDE,
            MIN_DETECT_SIDE
        )));
    }
    let cap = max_keypoints.min(MAX_KEYPOINTS);
    let mut kps = match kind {
        DetectorKind::BlobScaleSpace => scale_space::detect(img),
        DetectorKind::FastBinary => fast_binary::detect(img),
        DetectorKind::HessianBlob => hessian::detect(img),
    };
    sort_and_cap(&mut kps, cap);
    Ok(kps)
}

/// Strongest-first ordering with a deterministic tie-break on position.
pub(crate) fn sort_and_cap(kps: &mut Vec<Keypoint>, cap: usize) {
    kps.sort_by(|a, b| {
        b.response
            .partial_cmp(&a.response)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.y.partial_cmp(&b.y).unwrap_or(std::cmp::Ordering::Equal))
            .then_with(|| a.x.partial_cmp(&b.x).unwrap_or(std::cmp::Ordering::Equal))
            .then_with(|| {
                a.scale
                    .partial_cmp(&b.scale)
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
    });
    kps.truncate(cap);
}

/// Dominant gradient orientation at (x, y): 36-bin Gaussian-weighted histogram
/// of gradient angles within `radius`, circularly smoothed, peak refined by
/// parabolic interpolation.
pub(crate) fn dominant_orientation(img: &Image, x: f64, y: f64, radius: f64, sigma_w: f64) -> f64 {
    const BINS: usize = 36;
    let mut hist = [0.0f64; BINS];
    let r = radius.ceil() as isize;
    let cx = x.round() as isize;
    let cy = y.round() as isize;
    for dy in -r..=r {
        for dx in -r..=r {
            let d2 = (dx * dx + dy * dy) as f64;
            if d2 > radius * radius {
                continue;
            }
            let px = cx + dx;
            let py = cy + dy;
            let gx = 0.5 * (img.get_clamped(px + 1, py) - img.get_clamped(px - 1, py));
            let gy = 0.5 * (img.get_clamped(px, py + 1) - img.get_clamped(px, py - 1));
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let w = (-d2 / (2.0 * sigma_w * sigma_w)).exp() * mag;
            let angle = gy.atan2(gx);
            let mut bin = (angle + std::f64::consts::PI) / (2.0 * std::f64::consts::PI) * BINS as f64;
            if bin >= BINS as f64 {
                bin -= BINS as f64;
            }
            hist[(bin as usize).min(BINS - 1)] += w;
        }
    }
    // Two passes of circular [1 1 1]/3 smoothing.
    for _ in 0..2 {
        let prev = hist;
        for i in 0..BINS {
            hist[i] = (prev[(i + BINS - 1) % BINS] + prev[i] + prev[(i + 1) % BINS]) / 3.0;
        }
    }
    let mut best = 0usize;
    for i in 1..BINS {
        if hist[i] > hist[best] {
            best = i;
        }
    }
    let l = hist[(best + BINS - 1) % BINS];
    let c = hist[best];
    let rv = hist[(best + 1) % BINS];
    let denom = l - 2.0 * c + rv;
    let offset = if denom.abs() > 1e-12 {
        (0.5 * (l - rv) / denom).clamp(-0.5, 0.5)
    } else {
        0.0
    };
    let bin = best as f64 + offset;
    bin / BINS as f64 * 2.0 * std::f64::consts::PI - std::f64::consts::PI
}

/// True when (x, y) is a strict maximum of `map` within its 3x3 neighborhood.
pub(crate) fn is_local_max(map: &Image, x: usize, y: usize) -> bool {
    let v = map.get(x, y);
    for dy in -1isize..=1 {
        for dx in -1isize..=1 {
            if dx == 0 && dy == 0 {
                continue;
            }
            if map.get_clamped(x as isize + dx, y as isize + dy) >= v {
                return false;
            }
        }
    }
    true
}
