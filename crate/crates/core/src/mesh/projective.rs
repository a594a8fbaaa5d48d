//! Dense homography warping by inverse sampling, with gradients with respect
//! to the inverse map's eight free entries.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::MaskedImage;
use crate::mesh::grid::BoundingBox;
use crate::mesh::homography::{frame_corners, point_param_jacobian, Homography};
use crate::mesh::tps::ConvexHull;

pub struct HomographyWarp {
    /// Canvas -> source map.
    inverse: Homography,
    hull: ConvexHull,
    canvas: BoundingBox,
}

impl HomographyWarp {
    /// Warp rendering a `src_width x src_height` source through `forward`
    /// (source -> canvas coordinates).
    pub fn new(forward: &Homography, src_width: f64, src_height: f64, canvas: BoundingBox) -> Result<Self> {
        let inverse = forward
            .inverse()
            .ok_or_else(|| Error::DegenerateWarp("singular homography".into()))?;
        Self::from_inverse(inverse, forward, src_width, src_height, canvas)
    }

    pub(crate) fn from_inverse(
        inverse: Homography,
        forward: &Homography,
        src_width: f64,
        src_height: f64,
        canvas: BoundingBox,
    ) -> Result<Self> {
        if canvas.width() == 0 || canvas.height() == 0 {
            return Err(Error::InvalidArgument("empty warp canvas".into()));
        }
        let corners = frame_corners(src_width, src_height)
            .iter()
            .map(|c| {
                forward
                    .apply(c[0], c[1])
                    .map(|(x, y)| [x, y])
                    .ok_or_else(|| Error::DegenerateWarp("frame corner maps to infinity".into()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            inverse,
            hull: ConvexHull::of(&corners),
            canvas,
        })
    }

    pub fn canvas(&self) -> BoundingBox {
        self.canvas
    }

    fn row_columns(&self, row: usize) -> std::ops::Range<usize> {
        let y = self.canvas.y0 as f64 + row as f64 + 0.5;
        let Some((lo, hi)) = self.hull.row_span(y) else {
            return 0..0;
        };
        let x0 = self.canvas.x0 as f64;
        let first = ((lo - x0 - 0.5).ceil().max(0.0)) as usize;
        let last = ((hi - x0 - 0.5).floor() + 1.0).clamp(0.0, self.canvas.width() as f64) as usize;
        first.min(last)..last
    }

    pub fn warp(&self, img: &MaskedImage) -> MaskedImage {
        let (w, h) = (self.canvas.width(), self.canvas.height());
        let ch = img.channels();
        let mut pixels = vec![0.0; w * h * ch];
        let mut mask = vec![0.0; w * h];
        pixels
            .par_chunks_mut(w * ch)
            .zip(mask.par_chunks_mut(w))
            .enumerate()
            .for_each(|(row, (prow, mrow))| {
                let y = self.canvas.y0 as f64 + row as f64 + 0.5;
                for col in self.row_columns(row) {
                    let x = self.canvas.x0 as f64 + col as f64 + 0.5;
                    let Some((sx, sy)) = self.inverse.apply(x, y) else {
                        continue;
                    };
                    let s = img.sample(sx, sy);
                    if s.mask > 0.0 {
                        mrow[col] = s.mask.min(1.0);
                        prow[col * ch..(col + 1) * ch].copy_from_slice(&s.value[..ch]);
                    }
                }
            });
        MaskedImage::from_parts_unchecked(w, h, ch, pixels, mask)
    }

    /// Gradient with respect to the eight free entries of the inverse map.
    pub fn backward(&self, img: &MaskedImage, d_value: &[f64], d_mask: &[f64]) -> [f64; 8] {
        let (w, h) = (self.canvas.width(), self.canvas.height());
        let ch = img.channels();
        let rows: Vec<[f64; 8]> = (0..h)
            .into_par_iter()
            .map(|row| {
                let mut acc = [0.0; 8];
                let y = self.canvas.y0 as f64 + row as f64 + 0.5;
                for col in self.row_columns(row) {
                    let i = row * w + col;
                    let dv = &d_value[i * ch..(i + 1) * ch];
                    let dm = d_mask[i];
                    if dm == 0.0 && dv.iter().all(|&v| v == 0.0) {
                        continue;
                    }
                    let x = self.canvas.x0 as f64 + col as f64 + 0.5;
                    let Some((s, jac)) = point_param_jacobian(&self.inverse, x, y) else {
                        continue;
                    };
                    let g = img.sample_grad(s[0], s[1]);
                    if g.mask <= 0.0 {
                        continue;
                    }
                    let mut gs = [dm * g.dmask_dx, dm * g.dmask_dy];
                    for c in 0..ch {
                        gs[0] += dv[c] * g.dvalue_dx[c];
                        gs[1] += dv[c] * g.dvalue_dy[c];
                    }
                    for k in 0..8 {
                        acc[k] += gs[0] * jac[0][k] + gs[1] * jac[1][k];
                    }
                }
                acc
            })
            .collect();
        let mut total = [0.0; 8];
        for r in &rows {
            for k in 0..8 {
                total[k] += r[k];
            }
        }
        total
    }
}

/// Renders `img` through `forward` (source -> canvas) onto `canvas`.
pub fn homography_warp(img: &MaskedImage, forward: &Homography, canvas: BoundingBox) -> Result<MaskedImage> {
    Ok(HomographyWarp::new(forward, img.width() as f64, img.height() as f64, canvas)?.warp(img))
}
