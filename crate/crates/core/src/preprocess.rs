//! Preprocessing for registration pairs: grayscale conversion, smoothing, the
//! resolution schedule, entropy-ordered histogram matching, zero-padding and
//! intensity inversion, plus the Li thresholding and Dice overlap used for
//! quality gating throughout the pipeline.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{RegError, Result};
use crate::imgcore::{BinaryMask, Image};

const HIST_BINS: usize = 256;

/// How a working resolution constrains an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyMode {
    /// The larger side is limited to `size` pixels.
    MaxSide,
    /// The smaller side is limited to `size` pixels.
    MinSide,
}

/// Working-resolution policy. Images already within the limit are left alone;
/// the pipeline never upsamples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolutionPolicy {
    pub mode: PolicyMode,
    pub size: u32,
}

impl ResolutionPolicy {
    pub fn max_side(size: u32) -> Self {
        Self {
            mode: PolicyMode::MaxSide,
            size,
        }
    }

    pub fn min_side(size: u32) -> Self {
        Self {
            mode: PolicyMode::MinSide,
            size,
        }
    }

    /// Downscale factor (full pixels per working pixel) this policy demands
    /// for a `width` x `height` image; 1.0 when the image is already small enough.
    pub fn scale_for(&self, width: usize, height: usize) -> f64 {
        let constrained = match self.mode {
            PolicyMode::MaxSide => width.max(height),
            PolicyMode::MinSide => width.min(height),
        };
        let s = constrained as f64 / self.size as f64;
        if s > 1.0 {
            s
        } else {
            1.0
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.size == 0 {
            return Err(RegError::InvalidParameter(
                "resolution policy size must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// A source/target pair made comparable: common working scale, optional
/// entropy-ordered histogram matching, zero-padded to equal size, inverted so
/// tissue is bright, with Li foreground masks.
#[derive(Debug, Clone)]
pub struct PreprocessedPair {
    pub source: Image,
    pub target: Image,
    pub source_mask: BinaryMask,
    pub target_mask: BinaryMask,
    /// Full-resolution pixels per working pixel (per axis, shared by both images).
    pub scale_to_full: f64,
    pub histogram_matched: bool,
    pub inverted: bool,
}

/// ITU-R 601 luminance from interleaved RGB floats in [0, 1].
pub fn to_grayscale(width: usize, height: usize, rgb: &[f64]) -> Result<Image> {
    if rgb.len() != width * height * 3 {
        return Err(RegError::DimensionMismatch(format!(
            "rgb length {} != {}x{}x3",
            rgb.len(),
            width,
            height
        )));
    }
    let data = rgb
        .chunks_exact(3)
        .map(|px| 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2])
        .collect();
    Image::new(width, height, data)
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as usize;
    let mut k = Vec::with_capacity(2 * radius + 1);
    for i in -(radius as isize)..=(radius as isize) {
        let x = i as f64;
        k.push((-x * x / (2.0 * sigma * sigma)).exp());
    }
    let total: f64 = k.iter().sum();
    for v in &mut k {
        *v /= total;
    }
    k
}

/// Separable Gaussian convolution, kernel radius ceil(3σ), replicated borders.
/// σ = 0 returns the input unchanged.
pub fn gaussian_smooth(img: &Image, sigma: f64) -> Image {
    if sigma <= 0.0 {
        return img.clone();
    }
    let k = gaussian_kernel(sigma);
    let radius = (k.len() / 2) as isize;
    let w = img.width();
    let h = img.height();

    // Horizontal pass.
    let mut tmp = Image::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                let sx = x as isize + i as isize - radius;
                acc += kv * img.get_clamped(sx, y as isize);
            }
            tmp.set(x, y, acc);
        }
    }
    // Vertical pass.
    let mut out = Image::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                let sy = y as isize + i as isize - radius;
                acc += kv * tmp.get_clamped(x as isize, sy);
            }
            out.set(x, y, acc);
        }
    }
    out
}

/// Downscale by factor `scale` (>1) with anti-alias smoothing (σ = 0.5·scale)
/// followed by bilinear decimation. Coordinates map as x_full = x_work · scale,
/// so landmark scaling is a plain multiplication.
pub fn resize_by_scale(img: &Image, scale: f64) -> Image {
    if scale <= 1.0 {
        return img.clone();
    }
    let new_w = ((img.width() as f64 / scale).round() as usize).max(1);
    let new_h = ((img.height() as f64 / scale).round() as usize).max(1);
    let smoothed = gaussian_smooth(img, 0.5 * scale);
    Image::from_fn(new_w, new_h, |x, y| {
        smoothed.sample_bilinear_clamped(x as f64 * scale, y as f64 * scale)
    })
}

/// Apply a resolution policy: aspect-preserving downsample so the constrained
/// side equals the policy size, never upsampling. Returns the image and the
/// applied scale (full pixels per working pixel).
pub fn resize_to_policy(img: &Image, policy: ResolutionPolicy) -> Result<(Image, f64)> {
    policy.validate()?;
    let s = policy.scale_for(img.width(), img.height());
    if s <= 1.0 {
        return Ok((img.clone(), 1.0));
    }
    Ok((resize_by_scale(img, s), s))
}

fn histogram(img: &Image) -> [u64; HIST_BINS] {
    let mut hist = [0u64; HIST_BINS];
    for &v in img.data() {
        let bin = ((v.clamp(0.0, 1.0) * HIST_BINS as f64) as usize).min(HIST_BINS - 1);
        hist[bin] += 1;
    }
    hist
}

/// Shannon entropy in bits of the 256-bin intensity histogram (0·log0 := 0).
pub fn shannon_entropy(img: &Image) -> f64 {
    let hist = histogram(img);
    let n = img.len() as f64;
    if n == 0.0 {
        return 0.0;
    }
    let mut entropy = 0.0;
    for &count in &hist {
        if count > 0 {
            let p = count as f64 / n;
            entropy -= p * p.log2();
        }
    }
    entropy
}

/// Monotone CDF-to-CDF histogram matching over 256 bins: each subject intensity
/// is mapped to the smallest reference bin whose CDF reaches the subject's.
pub fn match_histogram(subject: &Image, reference: &Image) -> Image {
    let sub_hist = histogram(subject);
    let ref_hist = histogram(reference);
    let n_sub = subject.len() as f64;
    let n_ref = reference.len().max(1) as f64;

    let mut sub_cdf = [0.0f64; HIST_BINS];
    let mut ref_cdf = [0.0f64; HIST_BINS];
    let mut acc = 0u64;
    for (i, &c) in sub_hist.iter().enumerate() {
        acc += c;
        sub_cdf[i] = acc as f64 / n_sub;
    }
    acc = 0;
    for (i, &c) in ref_hist.iter().enumerate() {
        acc += c;
        ref_cdf[i] = acc as f64 / n_ref;
    }

    // Bin-to-bin monotone lookup table.
    let mut lut = [0.0f64; HIST_BINS];
    let mut j = 0usize;
    for i in 0..HIST_BINS {
        while j < HIST_BINS - 1 && ref_cdf[j] < sub_cdf[i] {
            j += 1;
        }
        lut[i] = j as f64 / (HIST_BINS - 1) as f64;
    }

    let data = subject
        .data()
        .iter()
        .map(|&v| {
            let bin = ((v.clamp(0.0, 1.0) * HIST_BINS as f64) as usize).min(HIST_BINS - 1);
            lut[bin]
        })
        .collect();
    Image::new(subject.width(), subject.height(), data).expect("lut output is finite")
}

/// Histogram-match the lower-entropy image to the higher-entropy one; the
/// other image passes through. Ties match `a` to `b`.
pub fn entropy_ordered_match(a: &Image, b: &Image) -> (Image, Image) {
    let ea = shannon_entropy(a);
    let eb = shannon_entropy(b);
    if ea <= eb {
        (match_histogram(a, b), b.clone())
    } else {
        (a.clone(), match_histogram(b, a))
    }
}

/// Zero-pad both images on the right/bottom to their common bounding size.
pub fn pad_to_common(a: &Image, b: &Image) -> (Image, Image) {
    let w = a.width().max(b.width());
    let h = a.height().max(b.height());
    let pad = |img: &Image| {
        if img.width() == w && img.height() == h {
            return img.clone();
        }
        let mut out = Image::zeros(w, h);
        for y in 0..img.height() {
            for x in 0..img.width() {
                out.set(x, y, img.get(x, y));
            }
        }
        out
    };
    (pad(a), pad(b))
}

/// Per-pixel intensity inversion: v -> 1 − v.
pub fn invert_intensity(img: &Image) -> Image {
    let data = img.data().iter().map(|&v| 1.0 - v).collect();
    Image::new(img.width(), img.height(), data).expect("inversion preserves finiteness")
}

/// Li minimum cross-entropy threshold. Iterates
/// t_{k+1} = (m_b − m_f) / (ln m_b − ln m_f), with m_b and m_f the mean
/// intensities below and above t_k, until |t_{k+1} − t_k| < 0.5/255.
/// The mask marks pixels above the threshold (inversion upstream makes tissue
/// bright, so foreground sits above).
pub fn li_threshold(img: &Image) -> Result<(f64, BinaryMask)> {
    let (lo, hi) = img.min_max();
    if hi - lo < f64::EPSILON {
        return Err(RegError::DegenerateInput(
            "Li threshold needs at least two distinct intensities".into(),
        ));
    }
    // Shift intensities positive so the log-mean iteration is well defined.
    let offset = 1.0 / 255.0 - lo;
    let shifted: Vec<f64> = img.data().iter().map(|&v| v + offset).collect();

    let mut t = shifted.iter().sum::<f64>() / shifted.len() as f64;
    let tol = 0.5 / 255.0;
    for _ in 0..256 {
        let mut sum_b = 0.0;
        let mut n_b = 0u64;
        let mut sum_f = 0.0;
        let mut n_f = 0u64;
        for &v in &shifted {
            if v <= t {
                sum_b += v;
                n_b += 1;
            } else {
                sum_f += v;
                n_f += 1;
            }
        }
        if n_b == 0 || n_f == 0 {
            break;
        }
        let m_b = sum_b / n_b as f64;
        let m_f = sum_f / n_f as f64;
        let denom = m_b.ln() - m_f.ln();
        if denom.abs() < 1e-300 {
            break;
        }
        let t_next = (m_b - m_f) / denom;
        let done = (t_next - t).abs() < tol;
        t = t_next;
        if done {
            break;
        }
    }
    let threshold = t - offset;
    let mask = BinaryMask::from_image_threshold(img, threshold);
    Ok((threshold, mask))
}

/// Dice overlap 2|A∩B| / (|A|+|B|); two empty masks count as identical (1).
pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    if !a.same_dims(b) {
        return Err(RegError::DimensionMismatch(format!(
            "mask {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    let mut inter = 0u64;
    let mut total = 0u64;
    for (&ba, &bb) in a.bits().iter().zip(b.bits()) {
        inter += (ba && bb) as u64;
        total += ba as u64 + bb as u64;
    }
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}

/// Full preprocessing of a pair of full-resolution grayscale images at one
/// working resolution: joint downscale (the pair shares one scale so a single
/// coordinate factor carries results back to full resolution), optional
/// entropy-ordered histogram matching, zero-padding to a common grid,
/// intensity inversion, and Li foreground masks.
pub fn preprocess_pair(
    source: &Image,
    target: &Image,
    policy: ResolutionPolicy,
    histogram_match: bool,
) -> Result<PreprocessedPair> {
    policy.validate()?;
    let scale = policy
        .scale_for(source.width(), source.height())
        .max(policy.scale_for(target.width(), target.height()));
    let mut src = resize_by_scale(source, scale);
    let mut tgt = resize_by_scale(target, scale);

    if histogram_match {
        let (a, b) = entropy_ordered_match(&src, &tgt);
        src = a;
        tgt = b;
    }

    let (src, tgt) = pad_to_common(&src, &tgt);
    let src = invert_intensity(&src);
    let tgt = invert_intensity(&tgt);

    let (_, source_mask) = li_threshold(&src)?;
    let (_, target_mask) = li_threshold(&tgt)?;

    Ok(PreprocessedPair {
        source: src,
        target: tgt,
        source_mask,
        target_mask,
        scale_to_full: scale,
        histogram_matched: histogram_match,
        inverted: true,
    })
}

/// Decode an image file into a grayscale raster in [0, 1]. Accepts 8- and
/// 16-bit grayscale or RGB(A) PNG/TIFF/JPEG; 16-bit samples scale by 1/65535.
pub fn read_image(path: &Path) -> Result<Image> {
    let dynimg = image::ImageReader::open(path)
        .map_err(|e| RegError::io(path, e))?
        .decode()
        .map_err(|e| RegError::Image {
            path: path.to_path_buf(),
            source: e,
        })?;
    Ok(dynamic_to_gray(&dynimg))
}

fn dynamic_to_gray(img: &image::DynamicImage) -> Image {
    use image::DynamicImage as D;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        D::ImageLuma8(g) => {
            let data = g.pixels().map(|p| p.0[0] as f64 / 255.0).collect();
            Image::new(w, h, data).expect("decoded raster is finite")
        }
        D::ImageLuma16(g) => {
            let data = g.pixels().map(|p| p.0[0] as f64 / 65535.0).collect();
            Image::new(w, h, data).expect("decoded raster is finite")
        }
        D::ImageRgb16(g) => {
            let rgb: Vec<f64> = g
                .pixels()
                .flat_map(|p| p.0.iter().map(|&c| c as f64 / 65535.0).collect::<Vec<_>>())
                .collect();
            to_grayscale(w, h, &rgb).expect("decoded raster is finite")
        }
        other => {
            let g = other.to_rgb8();
            let rgb: Vec<f64> = g
                .pixels()
                .flat_map(|p| p.0.iter().map(|&c| c as f64 / 255.0).collect::<Vec<_>>())
                .collect();
            to_grayscale(w, h, &rgb).expect("decoded raster is finite")
        }
    }
}

/// Write a grayscale image as 8-bit PNG.
pub fn write_image_png(img: &Image, path: &Path) -> Result<()> {
    let buf: Vec<u8> = img
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let out = image::GrayImage::from_raw(img.width() as u32, img.height() as u32, buf)
        .expect("buffer sized from image dims");
    out.save(path).map_err(|e| RegError::Image {
        path: path.to_path_buf(),
        source: e,
    })
}
