//! Coarse translation seeding by exhaustive integer-shift search.

use serde::{Deserialize, Serialize};

use crate::align::pyramid::{downsample, reduction_factor};
use crate::error::{Error, Result};
use crate::image::{MaskedImage, VALID_THRESHOLD};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeedConfig {
    pub enabled: bool,
    /// Resolution of the search, as a fraction of full resolution.
    pub scale: f64,
    /// Smallest admissible overlap, as a fraction of the reduced frame area.
    pub min_overlap: f64,
    /// Shifts whose zero-normalized cross-correlation stays below this are
    /// treated as no overlap.
    pub min_correlation: f64,
}

impl Default for SeedConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            scale: 1.0 / 8.0,
            min_overlap: 0.05,
            min_correlation: 0.7,
        }
    }
}

impl SeedConfig {
    pub fn validate(&self) -> Result<()> {
        reduction_factor(self.scale).map_err(|e| Error::InvalidConfig(format!("seed scale: {e}")))?;
        if !(self.min_overlap > 0.0 && self.min_overlap <= 1.0) {
            return Err(Error::InvalidConfig("seed min_overlap must lie in (0, 1]".into()));
        }
        if !(self.min_correlation.is_finite() && self.min_correlation <= 1.0) {
            return Err(Error::InvalidConfig("seed min_correlation must be at most 1".into()));
        }
        Ok(())
    }
}

/// Best integer shift found by the search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeedShift {
    /// Translation taking target coordinates into reference coordinates, in
    /// full-resolution pixels.
    pub tx: f64,
    pub ty: f64,
    pub correlation: f64,
    pub overlap: usize,
}

/// Searches every integer shift of the reduced target over the reduced
/// reference and returns the one with the highest zero-normalized
/// cross-correlation of gray values over jointly valid pixels.
pub fn seed_translation(reference: &MaskedImage, target: &MaskedImage, cfg: &SeedConfig) -> Result<SeedShift> {
    let k = reduction_factor(cfg.scale)?;
    let r = downsample(&reference.to_gray(), k)?;
    let t = downsample(&target.to_gray(), k)?;
    let (w, h) = (r.width() as i64, r.height() as i64);
    let (tw, th) = (t.width() as i64, t.height() as i64);
    let min_count = ((cfg.min_overlap * (w * h) as f64).ceil() as usize).max(4);
    let rv: Vec<Option<f64>> = (0..r.width() * r.height())
        .map(|i| (r.mask()[i] >= VALID_THRESHOLD).then(|| r.pixels()[i]))
        .collect();
    let tv: Vec<Option<f64>> = (0..t.width() * t.height())
        .map(|i| (t.mask()[i] >= VALID_THRESHOLD).then(|| t.pixels()[i]))
        .collect();

    let mut best: Option<(f64, i64, i64, usize)> = None;
    for dy in -(th - 1)..h {
        for dx in -(tw - 1)..w {
            // Reference pixel p pairs with target pixel p - (dx, dy).
            let (x0, x1) = (dx.max(0), (tw + dx).min(w));
            let (y0, y1) = (dy.max(0), (th + dy).min(h));
            if x1 <= x0 || y1 <= y0 || (((x1 - x0) * (y1 - y0)) as usize) < min_count {
                continue;
            }
            let (mut n, mut sa, mut sb, mut saa, mut sbb, mut sab) = (0usize, 0.0, 0.0, 0.0, 0.0, 0.0);
            for y in y0..y1 {
                let rrow = (y * w) as usize;
                let trow = ((y - dy) * tw) as usize;
                for x in x0..x1 {
                    let (Some(a), Some(b)) = (rv[rrow + x as usize], tv[trow + (x - dx) as usize]) else {
                        continue;
                    };
                    n += 1;
                    sa += a;
                    sb += b;
                    saa += a * a;
                    sbb += b * b;
                    sab += a * b;
                }
            }
            if n < min_count {
                continue;
            }
            let nf = n as f64;
            let va = saa - sa * sa / nf;
            let vb = sbb - sb * sb / nf;
            if va <= 1e-12 * nf || vb <= 1e-12 * nf {
                continue;
            }
            let zncc = (sab - sa * sb / nf) / (va * vb).sqrt();
            if best.map_or(true, |(s, ..)| zncc > s) {
                best = Some((zncc, dx, dy, n));
            }
        }
    }
    match best {
        Some((zncc, dx, dy, n)) if zncc >= cfg.min_correlation => Ok(SeedShift {
            tx: (dx * k as i64) as f64,
            ty: (dy * k as i64) as f64,
            correlation: zncc,
            overlap: n,
        }),
        Some((zncc, ..)) => Err(Error::NoOverlap(format!(
            "no consistent overlap found (best correlation {zncc:.3} below {:.3})",
            cfg.min_correlation
        ))),
        None => Err(Error::NoOverlap("images share no textured overlap".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texture(x: f64, y: f64) -> f64 {
        0.5 + 0.2 * (x * 0.05).sin() * (y * 0.07).cos() + 0.15 * ((x + 2.0 * y) * 0.031).sin() + 0.1 * (x * 0.013 - y * 0.021).cos()
    }

    #[test]
    fn recovers_block_shift() {
        let (w, h) = (256, 192);
        let (sx, sy) = (160.0, -24.0);
        let r = MaskedImage::from_fn(w, h, 1, |x, y| ([texture(x as f64, y as f64), 0.0, 0.0], 1.0));
        let t = MaskedImage::from_fn(w, h, 1, |x, y| ([texture(x as f64 + sx, y as f64 + sy), 0.0, 0.0], 1.0));
        let s = seed_translation(&r, &t, &SeedConfig::default()).unwrap();
        assert_eq!((s.tx, s.ty), (sx, sy));
        assert!(s.correlation > 0.99);
    }

    #[test]
    fn flat_images_have_no_overlap() {
        let r = MaskedImage::filled(64, 64, 1, 0.5, 1.0);
        assert!(matches!(
            seed_translation(&r, &r, &SeedConfig::default()),
            Err(Error::NoOverlap(_))
        ));
    }
}
