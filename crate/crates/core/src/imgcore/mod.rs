//! Raster, transform, and resampling primitives shared by every registration stage.
//!
//! Conventions, binding for the whole crate:
//! - coordinates are (x = column, y = row), origin at the center of pixel (0, 0);
//! - displacement fields are backward-mapping: output pixel p samples the moving
//!   image at p + d(p);
//! - image samples outside the grid read as 0 (zero-padding), matching the
//!   preprocessing padding convention. Field samples are border-replicated
//!   instead, so composing constant translations stays exact everywhere.

mod affine;
mod field;
mod image;

pub use affine::Affine2D;
pub use field::DisplacementField;
pub use image::{BinaryMask, Image};

use rayon::prelude::*;

use crate::error::{RegError, Result};

/// Interpolation used when resampling an image through a displacement field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interp {
    Nearest,
    Bilinear,
}

/// Warp `img` by `field`: output pixel p takes the moving-image value at p + d(p).
/// Samples that fall outside the grid read as 0.
pub fn warp_image(img: &Image, field: &DisplacementField, interp: Interp) -> Result<Image> {
    if img.width() != field.width() || img.height() != field.height() {
        return Err(RegError::DimensionMismatch(format!(
            "image {}x{} vs field {}x{}",
            img.width(),
            img.height(),
            field.width(),
            field.height()
        )));
    }
    let w = img.width();
    let h = img.height();
    let mut out = Image::zeros(w, h);
    out.data_mut()
        .par_chunks_mut(w)
        .enumerate()
        .for_each(|(y, row)| {
            for (x, slot) in row.iter_mut().enumerate() {
                let (du, dv) = field.get(x, y);
                let sx = x as f64 + du;
                let sy = y as f64 + dv;
                *slot = match interp {
                    Interp::Nearest => img.sample_nearest_zero(sx, sy),
                    Interp::Bilinear => img.sample_bilinear_zero(sx, sy),
                };
            }
        });
    Ok(out)
}

/// Materialize an affine as a dense backward field: d(p) = a·p − p.
pub fn affine_to_field(a: &Affine2D, width: usize, height: usize) -> Result<DisplacementField> {
    if a.det2().abs() < 1e-300 {
        return Err(RegError::SingularTransform(
            "cannot rasterize a singular affine".into(),
        ));
    }
    Ok(DisplacementField::from_fn(width, height, |x, y| {
        let (mx, my) = a.apply(x as f64, y as f64);
        (mx - x as f64, my - y as f64)
    }))
}

/// Compose two backward fields: result(p) = inner(p) + outer(p + inner(p)),
/// sampling `outer` bilinearly (border-replicated). Models applying `inner`
/// as a correction on top of the running warp `outer`.
pub fn compose_fields(
    outer: &DisplacementField,
    inner: &DisplacementField,
) -> Result<DisplacementField> {
    if !outer.same_dims(inner) {
        return Err(RegError::DimensionMismatch(format!(
            "outer {}x{} vs inner {}x{}",
            outer.width(),
            outer.height(),
            inner.width(),
            inner.height()
        )));
    }
    let w = outer.width();
    let h = outer.height();
    let mut out = DisplacementField::zeros(w, h);
    let (u_out, v_out) = {
        let mut u = vec![0.0; w * h];
        let mut v = vec![0.0; w * h];
        u.par_chunks_mut(w)
            .zip(v.par_chunks_mut(w))
            .enumerate()
            .for_each(|(y, (urow, vrow))| {
                for x in 0..w {
                    let (iu, iv) = inner.get(x, y);
                    let (ou, ov) = outer.sample_clamped(x as f64 + iu, y as f64 + iv);
                    urow[x] = iu + ou;
                    vrow[x] = iv + ov;
                }
            });
        (u, v)
    };
    out.u_mut().copy_from_slice(&u_out);
    out.v_mut().copy_from_slice(&v_out);
    Ok(out)
}

/// Map points through an affine.
pub fn transform_points(a: &Affine2D, pts: &[(f64, f64)]) -> Vec<(f64, f64)> {
    pts.iter().map(|&(x, y)| a.apply(x, y)).collect()
}

/// Displace points by a field: p -> p + d(p), with bilinear field sampling.
/// Points must lie within the field bounds.
pub fn warp_points(field: &DisplacementField, pts: &[(f64, f64)]) -> Result<Vec<(f64, f64)>> {
    let w = field.width() as f64;
    let h = field.height() as f64;
    pts.iter()
        .map(|&(x, y)| {
            if x < 0.0 || y < 0.0 || x > w - 1.0 || y > h - 1.0 {
                return Err(RegError::PointOutOfBounds {
                    x,
                    y,
                    width: field.width(),
                    height: field.height(),
                });
            }
            let (du, dv) = field.sample_clamped(x, y);
            Ok((x + du, y + dv))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> Image {
        Image::from_fn(w, h, |x, y| (x + w * y) as f64 / (w * h) as f64)
    }

    #[test]
    fn warp_zero_field_is_identity() {
        let img = ramp(8, 8);
        let zero = DisplacementField::zeros(8, 8);
        let out = warp_image(&img, &zero, Interp::Bilinear).unwrap();
        assert_eq!(out, img);
        let out_n = warp_image(&img, &zero, Interp::Nearest).unwrap();
        assert_eq!(out_n, img);
    }

    #[test]
    fn warp_constant_image_interior_and_outside() {
        let img = Image::constant(10, 10, 0.5);
        let field = DisplacementField::from_fn(10, 10, |_, _| (3.0, 0.0));
        let out = warp_image(&img, &field, Interp::Bilinear).unwrap();
        // Interior pixels still read 0.5; the right three columns fall outside.
        assert_eq!(out.get(2, 5), 0.5);
        assert_eq!(out.get(9, 5), 0.0);
    }

    #[test]
    fn warp_ramp_shift_matches_index_oracle() {
        // Uniform field (u=1, v=0): each pixel takes its right neighbor's value.
        let img = ramp(8, 8);
        let field = DisplacementField::from_fn(8, 8, |_, _| (1.0, 0.0));
        let out = warp_image(&img, &field, Interp::Bilinear).unwrap();
        for y in 0..8 {
            for x in 0..7 {
                assert!(
                    (out.get(x, y) - img.get(x + 1, y)).abs() < 1e-12,
                    "pixel ({x},{y})"
                );
            }
        }
    }

    #[test]
    fn warp_dimension_mismatch_errors() {
        let img = ramp(8, 8);
        let field = DisplacementField::zeros(9, 8);
        assert!(warp_image(&img, &field, Interp::Bilinear).is_err());
    }

    #[test]
    fn affine_to_field_identity_and_translation() {
        let id = affine_to_field(&Affine2D::identity(), 6, 4).unwrap();
        assert_eq!(id.max_magnitude(), 0.0);

        let t = affine_to_field(&Affine2D::translation(3.0, -2.0), 6, 4).unwrap();
        for y in 0..4 {
            for x in 0..6 {
                assert_eq!(t.get(x, y), (3.0, -2.0));
            }
        }
    }

    #[test]
    fn affine_to_field_rotation_matches_per_pixel_oracle() {
        let a = Affine2D::rotation_about(std::f64::consts::FRAC_PI_2, (5.0, 5.0));
        let f = affine_to_field(&a, 11, 11).unwrap();
        for y in 0..11 {
            for x in 0..11 {
                let (mx, my) = a.apply(x as f64, y as f64);
                let (du, dv) = f.get(x, y);
                assert!((du - (mx - x as f64)).abs() < 1e-12);
                assert!((dv - (my - y as f64)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn compose_with_zero_is_neutral() {
        let f = DisplacementField::from_fn(9, 7, |x, y| {
            ((x as f64 * 0.1).sin(), (y as f64 * 0.2).cos() - 1.0)
        });
        let zero = DisplacementField::zeros(9, 7);
        let a = compose_fields(&f, &zero).unwrap();
        let b = compose_fields(&zero, &f).unwrap();
        for y in 0..7 {
            for x in 0..9 {
                let (fu, fv) = f.get(x, y);
                let (au, av) = a.get(x, y);
                let (bu, bv) = b.get(x, y);
                assert!((au - fu).abs() < 1e-12 && (av - fv).abs() < 1e-12);
                assert!((bu - fu).abs() < 1e-12 && (bv - fv).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn compose_constant_translations() {
        let outer = DisplacementField::from_fn(12, 12, |_, _| (1.0, 0.0));
        let inner = DisplacementField::from_fn(12, 12, |_, _| (0.0, 2.0));
        let c = compose_fields(&outer, &inner).unwrap();
        for y in 0..12 {
            for x in 0..12 {
                assert_eq!(c.get(x, y), (1.0, 2.0), "pixel ({x},{y})");
            }
        }
    }

    #[test]
    fn transform_points_cases() {
        let id = Affine2D::identity();
        let pts = vec![(1.5, 2.5), (0.0, 0.0)];
        assert_eq!(transform_points(&id, &pts), pts);

        let t = Affine2D::translation(5.0, 5.0);
        assert_eq!(transform_points(&t, &[(0.0, 0.0)]), vec![(5.0, 5.0)]);

        // Scale 2 + rotation 90° about the origin sends (1, 0) to (0, 2).
        let s = Affine2D::similarity(2.0, std::f64::consts::FRAC_PI_2, 0.0, 0.0);
        let out = transform_points(&s, &[(1.0, 0.0)]);
        assert!((out[0].0 - 0.0).abs() < 1e-12);
        assert!((out[0].1 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn warp_points_cases() {
        let zero = DisplacementField::zeros(20, 20);
        let pts = vec![(3.25, 4.75)];
        assert_eq!(warp_points(&zero, &pts).unwrap(), pts);

        let c = DisplacementField::from_fn(20, 20, |_, _| (2.0, 0.0));
        assert_eq!(
            warp_points(&c, &[(10.0, 10.0)]).unwrap(),
            vec![(12.0, 10.0)]
        );

        // Linear-ramp field sampled at a fractional point matches the bilinear oracle.
        let f = DisplacementField::from_fn(20, 20, |x, y| (x as f64 * 0.1, y as f64 * 0.2));
        let (px, py) = (7.3, 11.6);
        let got = warp_points(&f, &[(px, py)]).unwrap()[0];
        // The field is linear in x and y, so bilinear interpolation is exact.
        assert!((got.0 - (px + px * 0.1)).abs() < 1e-9);
        assert!((got.1 - (py + py * 0.2)).abs() < 1e-9);

        assert!(warp_points(&f, &[(25.0, 3.0)]).is_err());
    }

    #[test]
    fn affine_field_round_trip_at_integer_pixels() {
        let a = Affine2D::similarity(1.3, 0.4, 2.0, -1.0);
        let f = affine_to_field(&a, 16, 16).unwrap();
        for y in 0..16 {
            for x in 0..16 {
                let (tx, ty) = a.apply(x as f64, y as f64);
                let (du, dv) = f.get(x, y);
                assert!((tx - (x as f64 + du)).abs() < 1e-9);
                assert!((ty - (y as f64 + dv)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn bilinear_warp_reproduces_linear_intensity() {
        // A globally linear-intensity image is reproduced exactly by bilinear
        // warping under any in-bounds field.
        let img = Image::from_fn(16, 16, |x, y| 0.01 * x as f64 + 0.02 * y as f64 + 0.1);
        let field = DisplacementField::from_fn(16, 16, |x, y| {
            let fx = x as f64;
            let fy = y as f64;
            // Stay well inside the grid.
            let du = 2.0 * ((fx / 15.0) * (1.0 - fx / 15.0)) * (fy / 15.0);
            let dv = -1.5 * ((fy / 15.0) * (1.0 - fy / 15.0));
            (du, dv)
        });
        let out = warp_image(&img, &field, Interp::Bilinear).unwrap();
        for y in 0..16 {
            for x in 0..16 {
                let (du, dv) = field.get(x, y);
                let expect = 0.01 * (x as f64 + du) + 0.02 * (y as f64 + dv) + 0.1;
                assert!((out.get(x, y) - expect).abs() < 1e-6);
            }
        }
    }
}
