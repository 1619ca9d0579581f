//! Determinant-of-Hessian blob detector using box filters on an integral
//! image, with a 64-dimensional gradient-sum descriptor.

use super::{dominant_orientation, Keypoint};
use crate::imgcore::Image;
use crate::preprocess::gaussian_smooth;

const FILTER_SIZES: [usize; 4] = [9, 15, 21, 27];
const RESPONSE_THRESHOLD: f64 = 1e-4;

struct IntegralImage {
    width: usize,
    height: usize,
    /// (width+1) x (height+1) running sums, row-major.
    sums: Vec<f64>,
}

impl IntegralImage {
    fn build(img: &Image) -> Self {
        let w = img.width();
        let h = img.height();
        let mut sums = vec![0.0; (w + 1) * (h + 1)];
        for y in 0..h {
            let mut row = 0.0;
            for x in 0..w {
                row += img.get(x, y);
                sums[(y + 1) * (w + 1) + (x + 1)] = sums[y * (w + 1) + (x + 1)] + row;
            }
        }
        Self {
            width: w,
            height: h,
            sums,
        }
    }

    /// Sum over the box of `rows` x `cols` pixels whose top-left pixel is
    /// (col0, row0); the box is clipped to the image.
    fn box_sum(&self, row0: isize, col0: isize, rows: usize, cols: usize) -> f64 {
        let r0 = row0.clamp(0, self.height as isize) as usize;
        let c0 = col0.clamp(0, self.width as isize) as usize;
        let r1 = (row0 + rows as isize).clamp(0, self.height as isize) as usize;
        let c1 = (col0 + cols as isize).clamp(0, self.width as isize) as usize;
        if r1 <= r0 || c1 <= c0 {
            return 0.0;
        }
        let w1 = self.width + 1;
        self.sums[r1 * w1 + c1] + self.sums[r0 * w1 + c0]
            - self.sums[r0 * w1 + c1]
            - self.sums[r1 * w1 + c0]
    }
}

/// Determinant-of-Hessian response map for one box-filter size.
fn response_map(integral: &IntegralImage, filter: usize) -> Image {
    let w = integral.width;
    let h = integral.height;
    let lobe = filter / 3;
    let border = filter / 2;
    let inv_area = 1.0 / (filter * filter) as f64;
    let mut map = Image::zeros(w, h);
    if w <= 2 * border || h <= 2 * border {
        return map;
    }
    for y in border..h - border {
        for x in border..w - border {
            let r = y as isize;
            let c = x as isize;
            let dxx = integral.box_sum(r - lobe as isize + 1, c - border as isize, 2 * lobe - 1, filter)
                - 3.0
                    * integral.box_sum(
                        r - lobe as isize + 1,
                        c - (lobe / 2) as isize,
                        2 * lobe - 1,
                        lobe,
                    );
            let dyy = integral.box_sum(r - border as isize, c - lobe as isize + 1, filter, 2 * lobe - 1)
                - 3.0
                    * integral.box_sum(
                        r - (lobe / 2) as isize,
                        c - lobe as isize + 1,
                        lobe,
                        2 * lobe - 1,
                    );
            let dxy = integral.box_sum(r - lobe as isize, c + 1, lobe, lobe)
                + integral.box_sum(r + 1, c - lobe as isize, lobe, lobe)
                - integral.box_sum(r - lobe as isize, c - lobe as isize, lobe, lobe)
                - integral.box_sum(r + 1, c + 1, lobe, lobe);
            let dxx = dxx * inv_area;
            let dyy = dyy * inv_area;
            let dxy = dxy * inv_area;
            map.set(x, y, dxx * dyy - (0.9 * dxy) * (0.9 * dxy));
        }
    }
    map
}

pub fn detect(img: &Image) -> Vec<Keypoint> {
    let integral = IntegralImage::build(img);
    let maps: Vec<Image> = FILTER_SIZES
        .iter()
        .map(|&f| response_map(&integral, f))
        .collect();
    // One smoothed image per size for orientation and descriptor gradients.
    let smoothed: Vec<Image> = FILTER_SIZES
        .iter()
        .map(|&f| gaussian_smooth(img, scale_of(f)))
        .collect();

    let w = img.width();
    let h = img.height();
    let mut kps = Vec::new();
    for s in 1..FILTER_SIZES.len() - 1 {
        let border = FILTER_SIZES[s + 1] / 2 + 1;
        if w <= 2 * border || h <= 2 * border {
            continue;
        }
        for y in border..h - border {
            for x in border..w - border {
                let v = maps[s].get(x, y);
                if v < RESPONSE_THRESHOLD {
                    continue;
                }
                if !is_scale_maximum(&maps, s, x, y) {
                    continue;
                }
                let sigma = scale_of(FILTER_SIZES[s]);
                let fx = x as f64;
                let fy = y as f64;
                let ori =
                    dominant_orientation(&smoothed[s], fx, fy, (4.0 * sigma).max(4.0), 2.0 * sigma);
                let descriptor = describe(&smoothed[s], fx, fy, sigma, ori);
                kps.push(Keypoint {
                    x: fx,
                    y: fy,
                    scale: sigma,
                    orientation: ori,
                    descriptor,
                    response: v,
                });
            }
        }
    }
    kps
}

fn scale_of(filter: usize) -> f64 {
    1.2 * filter as f64 / 9.0
}

fn is_scale_maximum(maps: &[Image], s: usize, x: usize, y: usize) -> bool {
    let v = maps[s].get(x, y);
    for (si, map) in maps.iter().enumerate().take(s + 2).skip(s - 1) {
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                if si == s && dx == 0 && dy == 0 {
                    continue;
                }
                if map.get_clamped(x as isize + dx, y as isize + dy) >= v {
                    return false;
                }
            }
        }
    }
    true
}

/// 4x4 subregions over a rotated 20σ window; each subregion accumulates
/// (Σdx', Σdy', Σ|dx'|, Σ|dy'|) of gradients rotated into the keypoint frame.
fn describe(smoothed: &Image, x: f64, y: f64, sigma: f64, orientation: f64) -> Vec<f32> {
    let (sin_o, cos_o) = orientation.sin_cos();
    let mut desc = vec![0.0f64; 64];
    for j in 0..20 {
        for i in 0..20 {
            // Sample offset in the keypoint frame, in units of σ.
            let u = (i as f64 - 9.5) * sigma;
            let v = (j as f64 - 9.5) * sigma;
            // Rotate into image coordinates.
            let px = x + cos_o * u - sin_o * v;
            let py = y + sin_o * u + cos_o * v;
            let gx = 0.5
                * (smoothed.sample_bilinear_clamped(px + 1.0, py)
                    - smoothed.sample_bilinear_clamped(px - 1.0, py));
            let gy = 0.5
                * (smoothed.sample_bilinear_clamped(px, py + 1.0)
                    - smoothed.sample_bilinear_clamped(px, py - 1.0));
            // Gradient in the keypoint frame.
            let du = cos_o * gx + sin_o * gy;
            let dv = -sin_o * gx + cos_o * gy;
            let weight = (-(u * u + v * v) / (2.0 * (3.3 * sigma).powi(2))).exp();
            let cell = (j / 5) * 4 + i / 5;
            desc[cell * 4] += weight * du;
            desc[cell * 4 + 1] += weight * dv;
            desc[cell * 4 + 2] += weight * du.abs();
            desc[cell * 4 + 3] += weight * dv.abs();
        }
    }
    let norm = desc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 1e-12 {
        for v in &mut desc {
            *v /= norm;
        }
    }
    desc.iter().map(|&v| v as f32).collect()
}
