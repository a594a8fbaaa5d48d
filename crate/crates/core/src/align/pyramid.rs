use crate::error::{Error, Result};
use crate::image::MaskedImage;

/// Integer reduction factor `1/scale`; scales must be reciprocals of integers.
pub fn reduction_factor(scale: f64) -> Result<usize> {
    if !(scale > 0.0 && scale <= 1.0) {
        return Err(Error::InvalidArgument(format!("pyramid scale {scale} is outside (0, 1]")));
    }
    let k = (1.0 / scale).round();
    if ((k * scale) - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "pyramid scale {scale} is not the reciprocal of an integer"
        )));
    }
    Ok(k as usize)
}

/// Area-averaged reduction by an integer factor. Each output mask value is the
/// mean of the covered mask values; each output pixel is the mask-weighted mean
/// of the covered pixels. Trailing rows and columns that do not fill a whole
/// block are dropped.
pub fn downsample(img: &MaskedImage, factor: usize) -> Result<MaskedImage> {
    if factor == 0 {
        return Err(Error::InvalidArgument("reduction factor must be positive".into()));
    }
    if factor == 1 {
        return Ok(img.clone());
    }
    let (w, h) = (img.width() / factor, img.height() / factor);
    if w == 0 || h == 0 {
        return Err(Error::InvalidArgument(format!(
            "reducing a {}x{} image by {factor} leaves an empty raster",
            img.width(),
            img.height()
        )));
    }
    let ch = img.channels();
    let area = (factor * factor) as f64;
    let mut pixels = vec![0.0; w * h * ch];
    let mut mask = vec![0.0; w * h];
    for by in 0..h {
        for bx in 0..w {
            let mut msum = 0.0;
            let mut vsum = [0.0; 3];
            for y in by * factor..(by + 1) * factor {
                for x in bx * factor..(bx + 1) * factor {
                    let m = img.mask_at(x, y);
                    msum += m;
                    for (c, v) in img.pixel(x, y).iter().enumerate() {
                        vsum[c] += m * v;
                    }
                }
            }
            let o = by * w + bx;
            mask[o] = msum / area;
            if msum > 0.0 {
                for c in 0..ch {
                    pixels[o * ch + c] = vsum[c] / msum;
                }
            }
        }
    }
    Ok(MaskedImage::from_parts_unchecked(w, h, ch, pixels, mask))
}

/// One reduced copy of `img` per scale.
pub fn build_pyramid(img: &MaskedImage, scales: &[f64]) -> Result<Vec<MaskedImage>> {
    scales
        .iter()
        .map(|&s| downsample(img, reduction_factor(s)?))
        .collect()
}
