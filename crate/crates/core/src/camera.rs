//! Pinhole intrinsics and masked cylindrical projection.

use std::f64::consts::FRAC_PI_2;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::MaskedImage;

/// Pinhole camera parameters in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let k = Self { fx, fy, cx, cy };
        k.validate()?;
        Ok(k)
    }

    /// Default used when a data set ships no calibration: `fx = fy = 0.8 * width`
    /// (roughly 64 degrees of horizontal field of view), principal point at the
    /// image center.
    pub fn default_for(width: usize, height: usize) -> Self {
        let f = 0.8 * width as f64;
        Self {
            fx: f,
            fy: f,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "focal lengths must be positive and finite, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(Error::InvalidConfig("principal point must be finite".into()));
        }
        Ok(())
    }
}

/// Output geometry of the unrolled cylinder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CylindricalConfig {
    /// Pixels per radian along the cylinder and per unit height.
    pub radius: f64,
    pub out_width: usize,
    pub out_height: usize,
    pub out_cx: f64,
    pub out_cy: f64,
}

impl CylindricalConfig {
    /// Canvas that holds the whole projected `width x height` source with the
    /// cylinder radius set to `fx`.
    pub fn fit(k: &CameraIntrinsics, width: usize, height: usize) -> Self {
        Self::fit_with_radius(k, width, height, k.fx)
    }

    pub fn fit_with_radius(k: &CameraIntrinsics, width: usize, height: usize, radius: f64) -> Self {
        let (w, h) = (width as f64, height as f64);
        let x_left = -k.cx / k.fx;
        let x_right = (w - k.cx) / k.fx;
        let u_min = radius * x_left.atan();
        let u_max = radius * x_right.atan();
        // |v| along a source row peaks at the column closest to the optical axis
        // and bottoms out at the far edges; checking both covers every sign case.
        let x_near = 0.0_f64.clamp(x_left, x_right);
        let (mut v_min, mut v_max) = (f64::INFINITY, f64::NEG_INFINITY);
        for bx in [x_left, x_right, x_near] {
            for by in [-k.cy / k.fy, (h - k.cy) / k.fy] {
                let v = radius * by / (bx * bx + 1.0).sqrt();
                v_min = v_min.min(v);
                v_max = v_max.max(v);
            }
        }
        Self {
            radius,
            out_width: ((u_max - u_min).ceil() as usize).max(1),
            out_height: ((v_max - v_min).ceil() as usize).max(1),
            out_cx: -u_min,
            out_cy: -v_min,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.out_width == 0 || self.out_height == 0 {
            return Err(Error::InvalidConfig(format!(
                "cylindrical canvas must be non-empty, got {}x{}",
                self.out_width, self.out_height
            )));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "cylinder radius must be positive, got {}",
                self.radius
            )));
        }
        if !(self.out_cx.is_finite() && self.out_cy.is_finite()) {
            return Err(Error::InvalidConfig("output center must be finite".into()));
        }
        Ok(())
    }
}

/// Maps a source pixel position onto the unrolled cylinder.
pub fn forward_project(x: f64, y: f64, k: &CameraIntrinsics, c: &CylindricalConfig) -> (f64, f64) {
    // Back-projected ray with Z = 1.
    let bx = (x - k.cx) / k.fx;
    let by = (y - k.cy) / k.fy;
    let longitude = bx.atan();
    let height = by / (bx * bx + 1.0).sqrt();
    (
        c.radius * longitude + c.out_cx,
        c.radius * height + c.out_cy,
    )
}

/// Maps a cylinder position back to the source image. Returns `None` when the
/// ray points at or behind the image plane (`|longitude| >= pi/2`).
pub fn backward_project(
    u: f64,
    v: f64,
    k: &CameraIntrinsics,
    c: &CylindricalConfig,
) -> Option<(f64, f64)> {
    let longitude = (u - c.out_cx) / c.radius;
    let height = (v - c.out_cy) / c.radius;
    if !(longitude.abs() < FRAC_PI_2) {
        return None;
    }
    let (sx, cz) = longitude.sin_cos();
    if cz <= 0.0 {
        return None;
    }
    Some((k.fx * sx / cz + k.cx, k.fy * height / cz + k.cy))
}

/// Resamples `img` onto the cylinder. Output pixels whose source position falls
/// outside the source rectangle get mask 0 and black pixels.
pub fn cylindrical_warp(
    img: &MaskedImage,
    k: &CameraIntrinsics,
    c: &CylindricalConfig,
) -> Result<MaskedImage> {
    k.validate()?;
    c.validate()?;
    let (w, h) = (img.width() as f64, img.height() as f64);
    let ch = img.channels();
    let mut pixels = vec![0.0; c.out_width * c.out_height * ch];
    let mut mask = vec![0.0; c.out_width * c.out_height];
    pixels
        .par_chunks_mut(c.out_width * ch)
        .zip(mask.par_chunks_mut(c.out_width))
        .enumerate()
        .for_each(|(row, (prow, mrow))| {
            let v = row as f64 + 0.5;
            for col in 0..c.out_width {
                let u = col as f64 + 0.5;
                let Some((x, y)) = backward_project(u, v, k, c) else {
                    continue;
                };
                if !(x >= 0.0 && y >= 0.0 && x <= w && y <= h) {
                    continue;
                }
                let s = img.sample(x, y);
                if s.mask <= 0.0 {
                    continue;
                }
                mrow[col] = s.mask.min(1.0);
                prow[col * ch..(col + 1) * ch].copy_from_slice(&s.value[..ch]);
            }
        });
    Ok(MaskedImage::from_parts_unchecked(
        c.out_width,
        c.out_height,
        ch,
        pixels,
        mask,
    ))
}

#[cfg(test)]
mod tests {
    use std::f64::consts::FRAC_PI_4;

    use super::*;

    fn setup() -> (CameraIntrinsics, CylindricalConfig) {
        let k = CameraIntrinsics::new(400.0, 400.0, 256.0, 192.0).unwrap();
        let c = CylindricalConfig::fit(&k, 512, 384);
        (k, c)
    }

    #[test]
    fn optical_axis_maps_to_output_center() {
        let (k, c) = setup();
        let (u, v) = forward_project(k.cx, k.cy, &k, &c);
        assert!((u - c.out_cx).abs() < 1e-12 && (v - c.out_cy).abs() < 1e-12);
        let (x, y) = backward_project(c.out_cx, c.out_cy, &k, &c).unwrap();
        assert!((x - k.cx).abs() < 1e-12 && (y - k.cy).abs() < 1e-12);
    }

    #[test]
    fn one_focal_length_right_is_quarter_pi() {
        let (k, c) = setup();
        let (u, v) = forward_project(k.cx + k.fx, k.cy, &k, &c);
        assert!((u - (c.out_cx + c.radius * FRAC_PI_4)).abs() < 1e-9);
        assert!((v - c.out_cy).abs() < 1e-12);
        let (x, y) = backward_project(c.out_cx + c.radius * FRAC_PI_4, c.out_cy, &k, &c).unwrap();
        assert!((x - (k.cx + k.fx)).abs() < 1e-9);
        assert!((y - k.cy).abs() < 1e-9);
    }

    #[test]
    fn quarter_turn_is_out_of_bounds() {
        let (k, c) = setup();
        assert!(backward_project(c.out_cx + c.radius * FRAC_PI_2, c.out_cy, &k, &c).is_none());
        assert!(backward_project(c.out_cx - c.radius * 2.0, c.out_cy, &k, &c).is_none());
    }

    #[test]
    fn rejects_invalid_config() {
        let (k, mut c) = setup();
        c.out_width = 0;
        let img = MaskedImage::filled(4, 4, 1, 0.5, 1.0);
        assert!(matches!(
            cylindrical_warp(&img, &k, &c),
            Err(Error::InvalidConfig(_))
        ));
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn fitted_canvas_contains_projected_corners() {
        let (k, c) = setup();
        for (x, y) in [(0.0, 0.0), (512.0, 0.0), (0.0, 384.0), (512.0, 384.0), (256.0, 0.0), (256.0, 384.0)] {
            let (u, v) = forward_project(x, y, &k, &c);
            assert!(u >= -1e-9 && u <= c.out_width as f64 + 1e-9, "u={u}");
            assert!(v >= -1e-9 && v <= c.out_height as f64 + 1e-9, "v={v}");
        }
    }

    #[test]
    fn white_image_stays_white_where_valid() {
        let (k, c) = setup();
        let img = MaskedImage::filled(512, 384, 3, 1.0, 1.0);
        let out = cylindrical_warp(&img, &k, &c).unwrap();
        let mut valid = 0;
        for y in 0..out.height() {
            for x in 0..out.width() {
                if out.mask_at(x, y) > 0.0 {
                    valid += 1;
                    assert!(out.pixel(x, y).iter().all(|&p| (p - 1.0).abs() < 1e-12));
                } else {
                    assert!(out.pixel(x, y).iter().all(|&p| p == 0.0));
                }
            }
        }
        assert!(valid > 0);
        // Corners of the unrolled canvas are empty.
        assert_eq!(out.mask_at(0, 0), 0.0);
        assert_eq!(out.mask_at(out.width() - 1, out.height() - 1), 0.0);
    }
}
