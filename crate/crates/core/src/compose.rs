//! Seam masks between adjacent warped images, product-rule composition masks
//! and weighted blending.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{MaskedImage, VALID_THRESHOLD};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeamOrientation {
    /// One seam column per row; `a` is the left image.
    Vertical,
    /// One seam row per column; `a` is the upper image.
    Horizontal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeamConfig {
    /// Width in pixels of the linear transition across the seam.
    pub feather: f64,
    pub orientation: SeamOrientation,
}

impl Default for SeamConfig {
    fn default() -> Self {
        Self {
            feather: 5.0,
            orientation: SeamOrientation::Vertical,
        }
    }
}

impl SeamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.feather >= 0.0 && self.feather.is_finite()) {
            return Err(Error::InvalidConfig("seam feather must be a finite non-negative width".into()));
        }
        Ok(())
    }
}

/// Complementary composition masks of two images on a shared canvas.
#[derive(Debug, Clone, PartialEq)]
pub struct SeamMaskPair {
    pub width: usize,
    pub height: usize,
    pub mask_a: Vec<f64>,
    pub mask_b: Vec<f64>,
    /// Seam position per scan line (row for vertical seams), `None` on lines
    /// without overlap.
    pub seam: Vec<Option<usize>>,
    /// Sum of the per-pixel costs along the seam.
    pub cost: f64,
}

fn validity(img: &MaskedImage) -> Vec<bool> {
    img.mask().iter().map(|&m| m >= VALID_THRESHOLD).collect()
}

/// Minimal-cost seam through a `width x height` cost field restricted to
/// `allowed` pixels, one pixel per row with at most one column of movement
/// between consecutive overlap rows. Where a row has no allowed neighbor of
/// the previous seam pixel, the seam restarts from the cheapest previous
/// state. Returns the column per row and the total cost.
pub fn min_cost_seam(cost: &[f64], allowed: &[bool], width: usize, height: usize) -> (Vec<Option<usize>>, f64) {
    let mut acc = vec![f64::INFINITY; width * height];
    let mut from: Vec<Option<usize>> = vec![None; width * height];
    let mut prev_row: Option<usize> = None;
    for y in 0..height {
        let row = y * width;
        if !(0..width).any(|x| allowed[row + x]) {
            continue;
        }
        let best_prev = prev_row.map(|py| {
            (0..width)
                .filter(|&x| acc[py * width + x].is_finite())
                .fold((f64::INFINITY, 0), |b, x| if acc[py * width + x] < b.0 { (acc[py * width + x], x) } else { b })
        });
        for x in 0..width {
            if !allowed[row + x] {
                continue;
            }
            let c = cost[row + x];
            let Some(py) = prev_row else {
                acc[row + x] = c;
                continue;
            };
            let prow = py * width;
            let adjacent = py + 1 == y;
            let mut best: Option<(f64, usize)> = None;
            if adjacent {
                for px in x.saturating_sub(1)..=(x + 1).min(width - 1) {
                    let v = acc[prow + px];
                    if v.is_finite() && best.map_or(true, |b| v < b.0) {
                        best = Some((v, px));
                    }
                }
            }
            let (v, px) = best.unwrap_or_else(|| best_prev.expect("previous overlap row has a finite state"));
            acc[row + x] = v + c;
            from[row + x] = Some(prow + px);
        }
        prev_row = Some(y);
    }
    let mut seam = vec![None; height];
    let Some(last) = prev_row else {
        return (seam, 0.0);
    };
    let (total, mut x) = (0..width)
        .filter(|&x| acc[last * width + x].is_finite())
        .fold((f64::INFINITY, 0), |b, x| if acc[last * width + x] < b.0 { (acc[last * width + x], x) } else { b });
    let mut idx = Some(last * width + x);
    while let Some(i) = idx {
        x = i % width;
        seam[i / width] = Some(x);
        idx = from[i];
    }
    (seam, total)
}

fn transpose(img: &MaskedImage) -> MaskedImage {
    let ch = img.channels();
    MaskedImage::from_fn(img.height(), img.width(), ch, |x, y| {
        let mut v = [0.0; 3];
        v[..ch].copy_from_slice(img.pixel(y, x));
        (v, img.mask_at(y, x))
    })
}

fn transpose_field(v: &[f64], width: usize, height: usize) -> Vec<f64> {
    // `v` is `width x height`; the result is `height x width`.
    let mut out = vec![0.0; v.len()];
    for y in 0..height {
        for x in 0..width {
            out[x * height + y] = v[y * width + x];
        }
    }
    out
}

/// Seam masks for two images on one canvas. Outside the overlap each mask is
/// its image's validity; inside, `mask_a` falls linearly from 1 to 0 across a
/// `feather`-wide band centered on the seam, and `mask_b = 1 - mask_a`.
pub fn pairwise_seam(a: &MaskedImage, b: &MaskedImage, cfg: &SeamConfig) -> Result<SeamMaskPair> {
    cfg.validate()?;
    if !a.same_shape(b) {
        return Err(Error::InvalidArgument("seam inputs must share a canvas".into()));
    }
    if cfg.orientation == SeamOrientation::Horizontal {
        let v = SeamConfig {
            orientation: SeamOrientation::Vertical,
            ..*cfg
        };
        let t = pairwise_seam(&transpose(a), &transpose(b), &v)?;
        let (w, h) = (a.width(), a.height());
        return Ok(SeamMaskPair {
            width: w,
            height: h,
            mask_a: transpose_field(&t.mask_a, h, w),
            mask_b: transpose_field(&t.mask_b, h, w),
            seam: t.seam,
            cost: t.cost,
        });
    }
    let (w, h, ch) = (a.width(), a.height(), a.channels());
    let (va, vb) = (validity(a), validity(b));
    let overlap: Vec<bool> = va.iter().zip(&vb).map(|(x, y)| *x && *y).collect();
    if !overlap.iter().any(|&o| o) {
        return Err(Error::NoOverlap("seam inputs do not overlap".into()));
    }
    let cost: Vec<f64> = (0..w * h)
        .map(|i| {
            if !overlap[i] {
                return 0.0;
            }
            let (pa, pb) = (&a.pixels()[i * ch..(i + 1) * ch], &b.pixels()[i * ch..(i + 1) * ch]);
            pa.iter().zip(pb).map(|(x, y)| (x - y).abs()).sum()
        })
        .collect();
    let (seam, total) = min_cost_seam(&cost, &overlap, w, h);
    let mut mask_a = vec![0.0; w * h];
    let mut mask_b = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let m = match (va[i], vb[i]) {
                (true, true) => {
                    let s = seam[y].expect("every overlap row carries a seam pixel");
                    let d = x as f64 - s as f64;
                    if cfg.feather > 0.0 {
                        (0.5 - d / cfg.feather).clamp(0.0, 1.0)
                    } else if d < 0.0 {
                        1.0
                    } else if d > 0.0 {
                        0.0
                    } else {
                        0.5
                    }
                }
                (true, false) => {
                    mask_a[i] = 1.0;
                    continue;
                }
                (false, true) => {
                    mask_b[i] = 1.0;
                    continue;
                }
                (false, false) => continue,
            };
            mask_a[i] = m;
            mask_b[i] = 1.0 - m;
        }
    }
    Ok(SeamMaskPair {
        width: w,
        height: h,
        mask_a,
        mask_b,
        seam,
        cost: total,
    })
}

/// Elementwise product of each image's pairwise masks. Edge images carry one
/// mask and interior images two.
pub fn final_masks(pair_masks: &[Vec<Vec<f64>>]) -> Result<Vec<Vec<f64>>> {
    let n = pair_masks.len();
    let mut out = Vec::with_capacity(n);
    for (i, masks) in pair_masks.iter().enumerate() {
        let expected = if n == 1 {
            1
        } else if i == 0 || i + 1 == n {
            1
        } else {
            2
        };
        if masks.len() != expected {
            return Err(Error::InvalidArgument(format!(
                "image {i} has {} pairwise masks, expected {expected}",
                masks.len()
            )));
        }
        let mut m = masks[0].clone();
        for other in &masks[1..] {
            if other.len() != m.len() {
                return Err(Error::InvalidArgument("pairwise masks differ in size".into()));
            }
            for (a, b) in m.iter_mut().zip(other) {
                *a *= b;
            }
        }
        out.push(m);
    }
    Ok(out)
}

/// Rescales final masks to sum to one at every pixel covered by some valid
/// image. Where every mask vanishes at a covered pixel, the valid images share
/// it equally.
pub fn normalize_masks(finals: &mut [Vec<f64>], warped: &[MaskedImage]) {
    let Some(len) = finals.first().map(Vec::len) else {
        return;
    };
    let valid: Vec<Vec<bool>> = warped.iter().map(validity).collect();
    for p in 0..len {
        let covered = valid.iter().filter(|v| v[p]).count();
        if covered == 0 {
            for f in finals.iter_mut() {
                f[p] = 0.0;
            }
            continue;
        }
        let s: f64 = finals.iter().map(|f| f[p]).sum();
        if s > 0.0 {
            for f in finals.iter_mut() {
                f[p] /= s;
            }
        } else {
            for (f, v) in finals.iter_mut().zip(&valid) {
                f[p] = if v[p] { 1.0 / covered as f64 } else { 0.0 };
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Panorama {
    pub image: MaskedImage,
    pub final_masks: Vec<Vec<f64>>,
}

/// Per-pixel weighted average of the warped images; the panorama mask is the
/// union of the images' validity.
pub fn blend(warped: &[MaskedImage], finals: &[Vec<f64>]) -> Result<Panorama> {
    let first = warped
        .first()
        .ok_or_else(|| Error::InvalidArgument("nothing to blend".into()))?;
    if warped.len() != finals.len() {
        return Err(Error::InvalidArgument(format!(
            "{} images but {} composition masks",
            warped.len(),
            finals.len()
        )));
    }
    let (w, h, ch) = (first.width(), first.height(), first.channels());
    if warped.iter().any(|im| !im.same_shape(first)) || finals.iter().any(|f| f.len() != w * h) {
        return Err(Error::InvalidArgument("blend inputs must share one canvas".into()));
    }
    let mut pixels = vec![0.0; w * h * ch];
    let mut mask = vec![0.0; w * h];
    pixels
        .par_chunks_mut(ch)
        .zip(mask.par_iter_mut())
        .enumerate()
        .for_each(|(p, (px, m))| {
            let mut den = 0.0;
            let mut num = [0.0; 3];
            for (im, f) in warped.iter().zip(finals) {
                if im.mask()[p] >= VALID_THRESHOLD {
                    *m = 1.0;
                }
                let wgt = f[p];
                if wgt > 0.0 {
                    den += wgt;
                    for c in 0..ch {
                        num[c] += wgt * im.pixels()[p * ch + c];
                    }
                }
            }
            if den > 0.0 {
                for c in 0..ch {
                    px[c] = num[c] / den;
                }
            }
        });
    Ok(Panorama {
        image: MaskedImage::from_parts_unchecked(w, h, ch, pixels, mask),
        final_masks: finals.to_vec(),
    })
}

/// Seams between every adjacent pair, product-rule final masks, normalization
/// and blending. A failed seam reports the pair's indices.
pub fn compose(warped: &[MaskedImage], cfg: &SeamConfig) -> Result<(Panorama, Vec<SeamMaskPair>)> {
    let n = warped.len();
    if n == 0 {
        return Err(Error::InvalidArgument("nothing to compose".into()));
    }
    if n == 1 {
        let m = warped[0].mask().iter().map(|&v| if v >= VALID_THRESHOLD { 1.0 } else { 0.0 }).collect();
        return Ok((blend(warped, &[m])?, Vec::new()));
    }
    let seams = (0..n - 1)
        .into_par_iter()
        .map(|i| {
            pairwise_seam(&warped[i], &warped[i + 1], cfg).map_err(|e| match e {
                Error::NoOverlap(_) => Error::NoOverlap(format!("({i}, {}): warped images share no pixels", i + 1)),
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut per_image: Vec<Vec<Vec<f64>>> = vec![Vec::new(); n];
    for (i, s) in seams.iter().enumerate() {
        per_image[i].push(s.mask_a.clone());
        per_image[i + 1].push(s.mask_b.clone());
    }
    let mut finals = final_masks(&per_image)?;
    normalize_masks(&mut finals, warped);
    Ok((blend(warped, &finals)?, seams))
}
