//! Difference-of-Gaussian scale-space blob detector with a 128-dimensional
//! gradient-orientation-histogram descriptor.

use super::{dominant_orientation, Keypoint};
use crate::imgcore::Image;
use crate::preprocess::{gaussian_smooth, resize_by_scale};

const INTERVALS: usize = 3;
const SIGMA0: f64 = 1.6;
const CONTRAST_THRESHOLD: f64 = 0.015;
const EDGE_RATIO: f64 = 10.0;
const DESC_WIDTH: usize = 4;
const DESC_BINS: usize = 8;

pub fn detect(img: &Image) -> Vec<Keypoint> {
    // Assume the input carries σ ≈ 0.5 of sensor blur.
    let base_sigma = (SIGMA0 * SIGMA0 - 0.25f64).sqrt();
    let mut level0 = gaussian_smooth(img, base_sigma);

    let octaves = {
        let min_dim = img.width().min(img.height());
        let mut n = 0usize;
        let mut d = min_dim;
        while d >= 32 {
            n += 1;
            d /= 2;
        }
        n.max(1)
    };

    let mut kps = Vec::new();
    for octave in 0..octaves {
        let octave_scale = (1usize << octave) as f64;
        // Gaussian stack: σ_k = SIGMA0 · 2^(k/INTERVALS), built incrementally.
        let mut gauss = Vec::with_capacity(INTERVALS + 3);
        gauss.push(level0.clone());
        for k in 1..INTERVALS + 3 {
            let s_prev = SIGMA0 * 2f64.powf((k - 1) as f64 / INTERVALS as f64);
            let s_curr = SIGMA0 * 2f64.powf(k as f64 / INTERVALS as f64);
            let s_inc = (s_curr * s_curr - s_prev * s_prev).sqrt();
            gauss.push(gaussian_smooth(&gauss[k - 1], s_inc));
        }
        let dog: Vec<Image> = (0..INTERVALS + 2)
            .map(|k| {
                let a = &gauss[k + 1];
                let b = &gauss[k];
                let data = a
                    .data()
                    .iter()
                    .zip(b.data())
                    .map(|(x, y)| x - y)
                    .collect();
                Image::new(a.width(), a.height(), data).expect("difference is finite")
            })
            .collect();

        let w = dog[0].width();
        let h = dog[0].height();
        for k in 1..=INTERVALS {
            for y in 1..h.saturating_sub(1) {
                for x in 1..w.saturating_sub(1) {
                    let v = dog[k].get(x, y);
                    if v.abs() < 0.8 * CONTRAST_THRESHOLD {
                        continue;
                    }
                    if !is_scale_space_extremum(&dog, k, x, y) {
                        continue;
                    }
                    // Per-axis parabolic refinement of the extremum position.
                    let (dx, vx) = parabola(dog[k].get(x - 1, y), v, dog[k].get(x + 1, y));
                    let (dy, vy) = parabola(dog[k].get(x, y - 1), v, dog[k].get(x, y + 1));
                    let (ds, vs) = parabola(dog[k - 1].get(x, y), v, dog[k + 1].get(x, y));
                    let refined = v + 0.5 * (vx + vy + vs);
                    if refined.abs() < CONTRAST_THRESHOLD {
                        continue;
                    }
                    if is_edge_like(&dog[k], x, y) {
                        continue;
                    }
                    let sigma_local = SIGMA0 * 2f64.powf((k as f64 + ds) / INTERVALS as f64);
                    let fx = x as f64 + dx;
                    let fy = y as f64 + dy;
                    let ori = dominant_orientation(
                        &gauss[k],
                        fx,
                        fy,
                        (4.5 * sigma_local).max(3.0),
                        1.5 * sigma_local,
                    );
                    let descriptor = describe(&gauss[k], fx, fy, sigma_local, ori);
                    kps.push(Keypoint {
                        x: fx * octave_scale,
                        y: fy * octave_scale,
                        scale: sigma_local * octave_scale,
                        orientation: ori,
                        descriptor,
                        response: refined.abs(),
                    });
                }
            }
        }

        if octave + 1 < octaves {
            level0 = resize_by_scale(&gauss[INTERVALS], 2.0);
        }
    }
    kps
}

fn is_scale_space_extremum(dog: &[Image], k: usize, x: usize, y: usize) -> bool {
    let v = dog[k].get(x, y);
    let mut is_max = true;
    let mut is_min = true;
    for layer in &dog[k - 1..=k + 1] {
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                let n = layer.get((x as isize + dx) as usize, (y as isize + dy) as usize);
                if std::ptr::eq(layer, &dog[k]) && dx == 0 && dy == 0 {
                    continue;
                }
                if n >= v {
                    is_max = false;
                }
                if n <= v {
                    is_min = false;
                }
                if !is_max && !is_min {
                    return false;
                }
            }
        }
    }
    is_max || is_min
}

/// Offset and value change of the parabola through (−1, l), (0, c), (1, r).
fn parabola(l: f64, c: f64, r: f64) -> (f64, f64) {
    let denom = l - 2.0 * c + r;
    if denom.abs() < 1e-12 {
        return (0.0, 0.0);
    }
    let offset = (0.5 * (l - r) / denom).clamp(-0.5, 0.5);
    (offset, 0.5 * (l - r) * offset)
}

/// Hessian ratio test rejecting responses concentrated along an edge.
fn is_edge_like(layer: &Image, x: usize, y: usize) -> bool {
    let c = layer.get(x, y);
    let dxx = layer.get(x + 1, y) + layer.get(x - 1, y) - 2.0 * c;
    let dyy = layer.get(x, y + 1) + layer.get(x, y - 1) - 2.0 * c;
    let dxy = 0.25
        * (layer.get(x + 1, y + 1) + layer.get(x - 1, y - 1)
            - layer.get(x + 1, y - 1)
            - layer.get(x - 1, y + 1));
    let trace = dxx + dyy;
    let det = dxx * dyy - dxy * dxy;
    if det <= 0.0 {
        return true;
    }
    trace * trace / det >= (EDGE_RATIO + 1.0) * (EDGE_RATIO + 1.0) / EDGE_RATIO
}

/// 4x4 spatial cells x 8 orientation bins over a rotated Gaussian-weighted
/// window, trilinear binning, normalized with a 0.2 clip-and-renormalize.
fn describe(img: &Image, x: f64, y: f64, sigma: f64, orientation: f64) -> Vec<f32> {
    let d = DESC_WIDTH;
    let nbins = DESC_BINS;
    let hist_width = 3.0 * sigma;
    let radius =
        (hist_width * std::f64::consts::SQRT_2 * (d as f64 + 1.0) * 0.5).round() as isize;
    let (sin_o, cos_o) = orientation.sin_cos();
    let mut hist = vec![0.0f64; d * d * nbins];
    let cx = x.round() as isize;
    let cy = y.round() as isize;

    for dy in -radius..=radius {
        for dx in -radius..=radius {
            let ox = dx as f64 + (cx as f64 - x);
            let oy = dy as f64 + (cy as f64 - y);
            // Offset in the keypoint frame, measured in cell units.
            let rx = (cos_o * ox + sin_o * oy) / hist_width;
            let ry = (-sin_o * ox + cos_o * oy) / hist_width;
            let cbin_x = rx + d as f64 / 2.0 - 0.5;
            let cbin_y = ry + d as f64 / 2.0 - 0.5;
            if cbin_x <= -1.0 || cbin_x >= d as f64 || cbin_y <= -1.0 || cbin_y >= d as f64 {
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
            let mut theta = gy.atan2(gx) - orientation;
            while theta < 0.0 {
                theta += 2.0 * std::f64::consts::PI;
            }
            while theta >= 2.0 * std::f64::consts::PI {
                theta -= 2.0 * std::f64::consts::PI;
            }
            let obin = theta / (2.0 * std::f64::consts::PI) * nbins as f64;
            let weight = (-(rx * rx + ry * ry) / (2.0 * (0.5 * d as f64).powi(2))).exp() * mag;
            trilinear_accumulate(&mut hist, d, nbins, cbin_x, cbin_y, obin, weight);
        }
    }

    normalize_descriptor(&mut hist);
    hist.iter().map(|&v| v as f32).collect()
}

fn trilinear_accumulate(
    hist: &mut [f64],
    d: usize,
    nbins: usize,
    cbin_x: f64,
    cbin_y: f64,
    obin: f64,
    weight: f64,
) {
    let x0 = cbin_x.floor();
    let y0 = cbin_y.floor();
    let o0 = obin.floor();
    let fx = cbin_x - x0;
    let fy = cbin_y - y0;
    let fo = obin - o0;
    for (ix, wx) in [(x0 as isize, 1.0 - fx), (x0 as isize + 1, fx)] {
        if ix < 0 || ix >= d as isize {
            continue;
        }
        for (iy, wy) in [(y0 as isize, 1.0 - fy), (y0 as isize + 1, fy)] {
            if iy < 0 || iy >= d as isize {
                continue;
            }
            for (io, wo) in [(o0 as isize, 1.0 - fo), (o0 as isize + 1, fo)] {
                let io = ((io % nbins as isize) + nbins as isize) as usize % nbins;
                hist[(iy as usize * d + ix as usize) * nbins + io] += weight * wx * wy * wo;
            }
        }
    }
}

fn normalize_descriptor(hist: &mut [f64]) {
    let norm = hist.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 1e-12 {
        for v in hist.iter_mut() {
            *v = (*v / norm).min(0.2);
        }
    }
    let norm = hist.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 1e-12 {
        for v in hist.iter_mut() {
            *v /= norm;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn descriptor_has_fixed_length() {
        let img = Image::from_fn(96, 96, |x, y| {
            let d = ((x as f64 - 48.0).powi(2) + (y as f64 - 48.0).powi(2)).sqrt();
            if d < 6.0 {
                0.9
            } else {
                0.1
            }
        });
        let kps = detect(&img);
        assert!(!kps.is_empty());
        for kp in &kps {
            assert_eq!(kp.descriptor.len(), DESC_WIDTH * DESC_WIDTH * DESC_BINS);
        }
    }
}
