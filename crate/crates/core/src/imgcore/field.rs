use std::io::{Read, Write};
use std::path::Path;

use crate::error::{RegError, Result};

/// Dense 2-channel per-pixel displacement, backward-mapping convention:
/// the output pixel p samples the moving image at p + d(p).
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    width: usize,
    height: usize,
    u: Vec<f64>,
    v: Vec<f64>,
}

const DFL_MAGIC: &[u8; 4] = b"DFL1";

impl DisplacementField {
    pub fn new(width: usize, height: usize, u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if u.len() != width * height || v.len() != width * height {
            return Err(RegError::DimensionMismatch(format!(
                "field channel lengths ({}, {}) != {}x{}",
                u.len(),
                v.len(),
                width,
                height
            )));
        }
        if u.iter().chain(v.iter()).any(|x| !x.is_finite()) {
            return Err(RegError::DegenerateInput(
                "field contains non-finite displacements".into(),
            ));
        }
        Ok(Self {
            width,
            height,
            u,
            v,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            u: vec![0.0; width * height],
            v: vec![0.0; width * height],
        }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> (f64, f64),
    ) -> Self {
        let mut u = Vec::with_capacity(width * height);
        let mut v = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let (du, dv) = f(x, y);
                u.push(du);
                v.push(dv);
            }
        }
        Self {
            width,
            height,
            u,
            v,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> (f64, f64) {
        let i = y * self.width + x;
        (self.u[i], self.v[i])
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, du: f64, dv: f64) {
        let i = y * self.width + x;
        self.u[i] = du;
        self.v[i] = dv;
    }

    #[inline]
    pub fn u(&self) -> &[f64] {
        &self.u
    }

    #[inline]
    pub fn v(&self) -> &[f64] {
        &self.v
    }

    #[inline]
    pub fn u_mut(&mut self) -> &mut [f64] {
        &mut self.u
    }

    #[inline]
    pub fn v_mut(&mut self) -> &mut [f64] {
        &mut self.v
    }

    pub fn same_dims(&self, other: &DisplacementField) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Bilinear sample of the field at fractional coordinates; the field is
    /// border-replicated outside the grid.
    pub fn sample_clamped(&self, x: f64, y: f64) -> (f64, f64) {
        let xc = x.clamp(0.0, (self.width - 1) as f64);
        let yc = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = xc.floor();
        let y0 = yc.floor();
        let fx = xc - x0;
        let fy = yc - y0;
        let x0 = x0 as usize;
        let y0 = y0 as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let idx = |x: usize, y: usize| y * self.width + x;
        let lerp2 = |ch: &[f64]| {
            let v00 = ch[idx(x0, y0)];
            let v10 = ch[idx(x1, y0)];
            let v01 = ch[idx(x0, y1)];
            let v11 = ch[idx(x1, y1)];
            (1.0 - fy) * ((1.0 - fx) * v00 + fx * v10) + fy * ((1.0 - fx) * v01 + fx * v11)
        };
        (lerp2(&self.u), lerp2(&self.v))
    }

    /// Largest displacement magnitude over the grid.
    pub fn max_magnitude(&self) -> f64 {
        self.u
            .iter()
            .zip(&self.v)
            .map(|(&du, &dv)| (du * du + dv * dv).sqrt())
            .fold(0.0, f64::max)
    }

    pub fn mean_magnitude(&self) -> f64 {
        if self.u.is_empty() {
            return 0.0;
        }
        let total: f64 = self
            .u
            .iter()
            .zip(&self.v)
            .map(|(&du, &dv)| (du * du + dv * dv).sqrt())
            .sum();
        total / self.u.len() as f64
    }

    /// Resample the field onto a `new_width` x `new_height` grid covering the same
    /// scene. Coordinates map proportionally and displacement values are rescaled
    /// by the same per-axis factors, so the represented full-resolution warp is
    /// preserved.
    pub fn resample(&self, new_width: usize, new_height: usize) -> DisplacementField {
        if new_width == self.width && new_height == self.height {
            return self.clone();
        }
        let rx = self.width as f64 / new_width as f64;
        let ry = self.height as f64 / new_height as f64;
        DisplacementField::from_fn(new_width, new_height, |x, y| {
            let (du, dv) = self.sample_clamped(x as f64 * rx, y as f64 * ry);
            (du / rx, dv / ry)
        })
    }

    /// Serialize in the DFL1 format: magic "DFL1", little-endian u32 width and
    /// height, then width*height row-major records of (f32 u, f32 v).
    pub fn write_dfl1<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(DFL_MAGIC)?;
        w.write_all(&(self.width as u32).to_le_bytes())?;
        w.write_all(&(self.height as u32).to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.u.len() * 8);
        for i in 0..self.u.len() {
            buf.extend_from_slice(&(self.u[i] as f32).to_le_bytes());
            buf.extend_from_slice(&(self.v[i] as f32).to_le_bytes());
        }
        w.write_all(&buf)
    }

    pub fn read_dfl1<R: Read>(mut r: R, path_hint: &Path) -> Result<DisplacementField> {
        let bad = |reason: &str| RegError::MalformedFile {
            path: path_hint.to_path_buf(),
            reason: reason.to_string(),
        };
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|e| RegError::io(path_hint, e))?;
        if &magic != DFL_MAGIC {
            return Err(bad("bad magic, expected DFL1"));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word)
            .map_err(|e| RegError::io(path_hint, e))?;
        let width = u32::from_le_bytes(word) as usize;
        r.read_exact(&mut word)
            .map_err(|e| RegError::io(path_hint, e))?;
        let height = u32::from_le_bytes(word) as usize;
        let n = width
            .checked_mul(height)
            .ok_or_else(|| bad("width*height overflows"))?;
        let mut payload = vec![0u8; n * 8];
        r.read_exact(&mut payload)
            .map_err(|e| RegError::io(path_hint, e))?;
        let mut u = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        for rec in payload.chunks_exact(8) {
            u.push(f32::from_le_bytes([rec[0], rec[1], rec[2], rec[3]]) as f64);
            v.push(f32::from_le_bytes([rec[4], rec[5], rec[6], rec[7]]) as f64);
        }
        DisplacementField::new(width, height, u, v)
    }

    pub fn save_dfl1(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| RegError::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_dfl1(&mut w).map_err(|e| RegError::io(path, e))
    }

    pub fn load_dfl1(path: &Path) -> Result<DisplacementField> {
        let file = std::fs::File::open(path).map_err(|e| RegError::io(path, e))?;
        Self::read_dfl1(std::io::BufReader::new(file), path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dfl1_round_trip() {
        let f = DisplacementField::from_fn(7, 5, |x, y| (x as f64 * 0.5, -(y as f64)));
        let mut buf = Vec::new();
        f.write_dfl1(&mut buf).unwrap();
        assert_eq!(&buf[0..4], b"DFL1");
        assert_eq!(buf.len(), 4 + 8 + 7 * 5 * 8);
        let g = DisplacementField::read_dfl1(&buf[..], Path::new("mem")).unwrap();
        assert_eq!(g.width(), 7);
        assert_eq!(g.height(), 5);
        for y in 0..5 {
            for x in 0..7 {
                let (du, dv) = g.get(x, y);
                assert!((du - x as f64 * 0.5).abs() < 1e-6);
                assert!((dv + y as f64).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn dfl1_rejects_bad_magic() {
        let buf = b"NOPE\x01\x00\x00\x00\x01\x00\x00\x00\x00\x00\x00\x00\x00\x00\x00\x00";
        assert!(DisplacementField::read_dfl1(&buf[..], Path::new("mem")).is_err());
    }

    #[test]
    fn resample_preserves_constant_translation() {
        // A constant 2-px shift on a 10x10 grid is a 1-px shift on a 5x5 grid.
        let f = DisplacementField::from_fn(10, 10, |_, _| (2.0, 0.0));
        let g = f.resample(5, 5);
        for y in 0..5 {
            for x in 0..5 {
                let (du, dv) = g.get(x, y);
                assert!((du - 1.0).abs() < 1e-12);
                assert!(dv.abs() < 1e-12);
            }
        }
    }
}
