//! Floating-point rasters with a per-pixel validity mask.
//!
//! Coordinates are continuous: pixel `(i, j)` covers `[i, i+1) x [j, j+1)` and
//! its center sits at `(i + 0.5, j + 0.5)`. A `W x H` raster therefore spans
//! exactly `[0, W] x [0, H]`, which is also the extent of a uniform control grid.

use std::path::Path;

use image::{DynamicImage, GrayImage, RgbImage};

use crate::error::{Error, Result};

/// Masks at or above this value count as valid coverage.
pub const VALID_THRESHOLD: f64 = 0.5;

/// Mask mass below which a mask-weighted sample is treated as empty.
const MIN_SAMPLE_MASS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct MaskedImage {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<f64>,
    mask: Vec<f64>,
}

/// Result of a mask-weighted bilinear lookup.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sample {
    pub value: [f64; 3],
    pub mask: f64,
}

/// A sample together with its partial derivatives with respect to the lookup
/// position.
#[derive(Debug, Clone, Copy, Default)]
pub struct SampleGrad {
    pub value: [f64; 3],
    pub mask: f64,
    pub dvalue_dx: [f64; 3],
    pub dvalue_dy: [f64; 3],
    pub dmask_dx: f64,
    pub dmask_dy: f64,
}

impl MaskedImage {
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        pixels: Vec<f64>,
        mask: Vec<f64>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidArgument(format!(
                "images have 1 or 3 channels, got {channels}"
            )));
        }
        if pixels.len() != width * height * channels {
            return Err(Error::InvalidArgument(format!(
                "expected {} pixel values, got {}",
                width * height * channels,
                pixels.len()
            )));
        }
        if mask.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "expected {} mask values, got {}",
                width * height,
                mask.len()
            )));
        }
        let in_range = |v: &f64| v.is_finite() && (0.0..=1.0).contains(v);
        if !pixels.iter().all(in_range) || !mask.iter().all(in_range) {
            return Err(Error::InvalidArgument(
                "pixel and mask values must lie in [0, 1]".into(),
            ));
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
            mask,
        })
    }

    /// Image with every pixel set to `value` and every mask entry set to `mask`.
    pub fn filled(width: usize, height: usize, channels: usize, value: f64, mask: f64) -> Self {
        Self::new(
            width,
            height,
            channels,
            vec![value; width * height * channels],
            vec![mask; width * height],
        )
        .expect("filled image parameters are valid")
    }

    /// Builds an image from a per-pixel closure returning `(channel values, mask)`.
    pub fn from_fn<F>(width: usize, height: usize, channels: usize, mut f: F) -> Self
    where
        F: FnMut(usize, usize) -> ([f64; 3], f64),
    {
        assert!(channels == 1 || channels == 3);
        let mut pixels = Vec::with_capacity(width * height * channels);
        let mut mask = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let (v, m) = f(x, y);
                pixels.extend_from_slice(&v[..channels]);
                mask.push(m);
            }
        }
        Self::new(width, height, channels, pixels, mask).expect("closure produced valid values")
    }

    pub(crate) fn from_parts_unchecked(
        width: usize,
        height: usize,
        channels: usize,
        pixels: Vec<f64>,
        mask: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(pixels.len(), width * height * channels);
        debug_assert_eq!(mask.len(), width * height);
        Self {
            width,
            height,
            channels,
            pixels,
            mask,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn mask(&self) -> &[f64] {
        &self.mask
    }

    pub fn same_shape(&self, other: &MaskedImage) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.pixels[i..i + self.channels]
    }

    #[inline]
    pub fn mask_at(&self, x: usize, y: usize) -> f64 {
        self.mask[y * self.width + x]
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.mask_at(x, y) >= VALID_THRESHOLD
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, value: &[f64]) {
        let i = (y * self.width + x) * self.channels;
        self.pixels[i..i + self.channels].copy_from_slice(&value[..self.channels]);
    }

    pub fn set_mask(&mut self, x: usize, y: usize, m: f64) {
        self.mask[y * self.width + x] = m;
    }

    /// Same raster with the mask replaced.
    pub fn with_mask(mut self, mask: Vec<f64>) -> Result<Self> {
        if mask.len() != self.width * self.height {
            return Err(Error::InvalidArgument("mask size mismatch".into()));
        }
        self.mask = mask;
        Ok(self)
    }

    /// Number of pixels whose mask is valid.
    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m >= VALID_THRESHOLD).count()
    }

    /// Single-channel luminance copy (Rec. 601 weights), mask preserved.
    pub fn to_gray(&self) -> MaskedImage {
        if self.channels == 1 {
            return self.clone();
        }
        let pixels = self
            .pixels
            .chunks_exact(3)
            .map(|p| (0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]).clamp(0.0, 1.0))
            .collect();
        Self::from_parts_unchecked(self.width, self.height, 1, pixels, self.mask.clone())
    }

    /// Mask-weighted bilinear lookup at a continuous position.
    ///
    /// Samples outside the raster carry zero mask and therefore zero weight.
    /// The returned mask is the bilinear interpolation of the source mask.
    #[inline]
    pub fn sample(&self, x: f64, y: f64) -> Sample {
        let fx = x - 0.5;
        let fy = y - 0.5;
        if !(fx > -1.0 && fy > -1.0 && fx < self.width as f64 && fy < self.height as f64) {
            return Sample::default();
        }
        let x0 = fx.floor();
        let y0 = fy.floor();
        let ax = fx - x0;
        let ay = fy - y0;
        let (x0, y0) = (x0 as isize, y0 as isize);
        let weights = [
            (1.0 - ax) * (1.0 - ay),
            ax * (1.0 - ay),
            (1.0 - ax) * ay,
            ax * ay,
        ];
        let taps = [(x0, y0), (x0 + 1, y0), (x0, y0 + 1), (x0 + 1, y0 + 1)];
        let mut num = [0.0; 3];
        let mut den = 0.0;
        for (&(tx, ty), &w) in taps.iter().zip(weights.iter()) {
            if let Some((m, p)) = self.tap(tx, ty) {
                let wm = w * m;
                den += wm;
                for c in 0..self.channels {
                    num[c] += wm * p[c];
                }
            }
        }
        let mut out = Sample {
            value: [0.0; 3],
            mask: den,
        };
        if den > MIN_SAMPLE_MASS {
            for c in 0..self.channels {
                out.value[c] = num[c] / den;
            }
        }
        out
    }

    /// Like [`sample`](Self::sample) but also returns derivatives with respect
    /// to the lookup position. Derivatives are one-sided on pixel-center lines.
    #[inline]
    pub fn sample_grad(&self, x: f64, y: f64) -> SampleGrad {
        let fx = x - 0.5;
        let fy = y - 0.5;
        if !(fx > -1.0 && fy > -1.0 && fx < self.width as f64 && fy < self.height as f64) {
            return SampleGrad::default();
        }
        let x0 = fx.floor();
        let y0 = fy.floor();
        let ax = fx - x0;
        let ay = fy - y0;
        let (x0, y0) = (x0 as isize, y0 as isize);
        let weights = [
            (1.0 - ax) * (1.0 - ay),
            ax * (1.0 - ay),
            (1.0 - ax) * ay,
            ax * ay,
        ];
        let dwdx = [-(1.0 - ay), 1.0 - ay, -ay, ay];
        let dwdy = [-(1.0 - ax), -ax, 1.0 - ax, ax];
        let taps = [(x0, y0), (x0 + 1, y0), (x0, y0 + 1), (x0 + 1, y0 + 1)];
        let mut num = [0.0; 3];
        let mut dnum_dx = [0.0; 3];
        let mut dnum_dy = [0.0; 3];
        let mut den = 0.0;
        let mut dden_dx = 0.0;
        let mut dden_dy = 0.0;
        for k in 0..4 {
            let (tx, ty) = taps[k];
            if let Some((m, p)) = self.tap(tx, ty) {
                den += weights[k] * m;
                dden_dx += dwdx[k] * m;
                dden_dy += dwdy[k] * m;
                for c in 0..self.channels {
                    num[c] += weights[k] * m * p[c];
                    dnum_dx[c] += dwdx[k] * m * p[c];
                    dnum_dy[c] += dwdy[k] * m * p[c];
                }
            }
        }
        let mut out = SampleGrad {
            mask: den,
            dmask_dx: dden_dx,
            dmask_dy: dden_dy,
            ..SampleGrad::default()
        };
        if den > MIN_SAMPLE_MASS {
            for c in 0..self.channels {
                let v = num[c] / den;
                out.value[c] = v;
                out.dvalue_dx[c] = (dnum_dx[c] - v * dden_dx) / den;
                out.dvalue_dy[c] = (dnum_dy[c] - v * dden_dy) / den;
            }
        }
        out
    }

    #[inline]
    fn tap(&self, x: isize, y: isize) -> Option<(f64, &[f64])> {
        if x < 0 || y < 0 || x >= self.width as isize || y >= self.height as isize {
            return None;
        }
        let (x, y) = (x as usize, y as usize);
        let m = self.mask_at(x, y);
        if m == 0.0 {
            return None;
        }
        Some((m, self.pixel(x, y)))
    }

    /// Decodes an 8-bit PNG or JPEG into `[0, 1]` floats with an all-ones mask.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let decoded = image::open(path).map_err(|e| Error::Load {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Ok(Self::from_dynamic(&decoded))
    }

    pub fn from_dynamic(img: &DynamicImage) -> Self {
        let (pixels, channels, w, h) = if img.color().has_color() {
            let rgb = img.to_rgb8();
            let (w, h) = rgb.dimensions();
            (rgb.into_raw(), 3, w, h)
        } else {
            let gray = img.to_luma8();
            let (w, h) = gray.dimensions();
            (gray.into_raw(), 1, w, h)
        };
        let (w, h) = (w as usize, h as usize);
        let pixels = pixels.into_iter().map(|v| v as f64 / 255.0).collect();
        Self::from_parts_unchecked(w, h, channels, pixels, vec![1.0; w * h])
    }

    /// Encodes the color channels as 8-bit PNG (or JPEG, by extension).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let raw: Vec<u8> = self.pixels.iter().map(|&v| to_u8(v)).collect();
        let (w, h) = (self.width as u32, self.height as u32);
        let dynamic = if self.channels == 3 {
            DynamicImage::ImageRgb8(RgbImage::from_raw(w, h, raw).expect("buffer size matches"))
        } else {
            DynamicImage::ImageLuma8(GrayImage::from_raw(w, h, raw).expect("buffer size matches"))
        };
        dynamic.save(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Writes the mask as a grayscale 8-bit image.
    pub fn save_mask(&self, path: impl AsRef<Path>) -> Result<()> {
        save_gray(path, self.width, self.height, &self.mask)
    }
}

/// Writes an arbitrary `[0, 1]` field as an 8-bit grayscale image.
pub fn save_gray(path: impl AsRef<Path>, width: usize, height: usize, values: &[f64]) -> Result<()> {
    let path = path.as_ref();
    let raw: Vec<u8> = values.iter().map(|&v| to_u8(v)).collect();
    GrayImage::from_raw(width as u32, height as u32, raw)
        .ok_or_else(|| Error::InvalidArgument("gray buffer size mismatch".into()))?
        .save(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

/// Round-half-up quantization to 8 bits.
#[inline]
pub fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor().min(255.0) as u8
}
