//! Propagation of adjacent-pair motions to warps into the central image's
//! frame.
//!
//! Each pair motion maps a target into the frame of its neighbor one step
//! closer to the center. Walking outward, the accumulated homography is the
//! product of the per-step homographies (outermost step applied first) and the
//! accumulated residual is the elementwise sum of the per-step residuals.

use serde::{Deserialize, Serialize};

use crate::align::PairMotion;
use crate::error::{Error, Result};
use crate::mesh::{apply_homography_to_grid, four_pt_to_matrix, warped_bounds, BoundingBox, ControlGrid, Homography};

/// Central image and the two chains walking away from it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainOrder {
    pub center: usize,
    /// `center-1, ..., 0`.
    pub left: Vec<usize>,
    /// `center+1, ..., n-1`.
    pub right: Vec<usize>,
}

impl ChainOrder {
    pub fn len(&self) -> usize {
        1 + self.left.len() + self.right.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `(reference, target)` pairs to align: right chain first, then left,
    /// each walking outward.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.len() - 1);
        for chain in [&self.right, &self.left] {
            let mut prev = self.center;
            for &i in chain.iter() {
                out.push((prev, i));
                prev = i;
            }
        }
        out
    }
}

/// Center `floor((n-1)/2)`, so even counts pick the left of the two middles.
pub fn order_images(n: usize) -> Result<ChainOrder> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("a surround set needs at least 2 images, got {n}")));
    }
    let center = (n - 1) / 2;
    Ok(ChainOrder {
        center,
        left: (0..center).rev().collect(),
        right: (center + 1..n).collect(),
    })
}

/// Accumulated warp of one image into the central frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalWarp {
    pub image_index: usize,
    pub h: Homography,
    pub residual: Vec<[f64; 2]>,
}

impl GlobalWarp {
    pub fn identity(image_index: usize, points: usize) -> Self {
        Self {
            image_index,
            h: Homography::identity(),
            residual: vec![[0.0; 2]; points],
        }
    }

    /// The same warp seen in images reflected about `x = width / 2`.
    pub fn mirrored(&self, width: f64, grid_cols: usize) -> Self {
        let rows = self.residual.len() / grid_cols;
        let mut residual = vec![[0.0; 2]; self.residual.len()];
        for i in 0..rows {
            for j in 0..grid_cols {
                let r = self.residual[i * grid_cols + (grid_cols - 1 - j)];
                residual[i * grid_cols + j] = [-r[0], r[1]];
            }
        }
        Self {
            image_index: self.image_index,
            h: self.h.mirrored(width),
            residual,
        }
    }
}

/// Accumulates one chain of `(homography, residual)` steps, ordered from the
/// center outward. Entry `i` of the result is the warp of the chain's `i`-th
/// image into the central frame.
pub fn accumulate_chain(steps: &[(Homography, Vec<[f64; 2]>)]) -> Result<Vec<(Homography, Vec<[f64; 2]>)>> {
    let mut out: Vec<(Homography, Vec<[f64; 2]>)> = Vec::with_capacity(steps.len());
    for (depth, (h, m)) in steps.iter().enumerate() {
        let acc = match out.last() {
            None => (h.clone(), m.clone()),
            Some((ph, pm)) => {
                if pm.len() != m.len() {
                    return Err(Error::InvalidArgument(format!(
                        "residual sizes differ along the chain ({} vs {})",
                        pm.len(),
                        m.len()
                    )));
                }
                let sum = pm.iter().zip(m).map(|(a, b)| [a[0] + b[0], a[1] + b[1]]).collect();
                (ph.compose(h), sum)
            }
        };
        if acc.0.is_singular() || acc.0.matrix().iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateChain(format!("accumulated homography is singular at step {}", depth + 1)));
        }
        out.push(acc);
    }
    Ok(out)
}

/// Global warps for every image of a set with chain layout `order`.
/// `motions` must contain one motion per non-central image, each referencing
/// its neighbor one step closer to the center.
pub fn propagate_motion(order: &ChainOrder, motions: &[PairMotion]) -> Result<Vec<GlobalWarp>> {
    let points = motions
        .first()
        .map(|m| m.residual.len())
        .ok_or_else(|| Error::InvalidArgument("no pair motions to propagate".into()))?;
    let mut warps: Vec<Option<GlobalWarp>> = vec![None; order.len()];
    warps[order.center] = Some(GlobalWarp::identity(order.center, points));
    for chain in [&order.left, &order.right] {
        let mut prev = order.center;
        let mut steps = Vec::with_capacity(chain.len());
        for &i in chain.iter() {
            let m = motions
                .iter()
                .find(|m| m.tar_index == i)
                .ok_or_else(|| Error::InvalidArgument(format!("no motion for image {i}")))?;
            if m.ref_index != prev {
                return Err(Error::InvalidArgument(format!(
                    "motion of image {i} references {} instead of its inner neighbor {prev}",
                    m.ref_index
                )));
            }
            m.validate()?;
            steps.push((four_pt_to_matrix(&m.h_offsets)?, m.residual.clone()));
            prev = i;
        }
        for (&i, (h, residual)) in chain.iter().zip(accumulate_chain(&steps)?) {
            warps[i] = Some(GlobalWarp {
                image_index: i,
                h,
                residual,
            });
        }
    }
    warps
        .into_iter()
        .enumerate()
        .map(|(i, w)| w.ok_or_else(|| Error::InvalidArgument(format!("image {i} is not on any chain"))))
        .collect()
}

/// Destination grids of every image in a shared panorama frame, plus the
/// panorama canvas. The common translation places the bounding box origin at
/// `(0, 0)`.
pub fn global_warp_grids(warps: &[GlobalWarp], template: &ControlGrid) -> Result<(Vec<ControlGrid>, BoundingBox)> {
    let grids = warps
        .iter()
        .map(|w| apply_homography_to_grid(template, &w.h)?.displaced(&w.residual))
        .collect::<Result<Vec<_>>>()?;
    let b = warped_bounds(&grids)?;
    let (tx, ty) = (-b.x0 as f64, -b.y0 as f64);
    let canvas = BoundingBox {
        x0: 0,
        y0: 0,
        x1: b.x1 - b.x0,
        y1: b.y1 - b.y0,
    };
    Ok((grids.iter().map(|g| g.translated(tx, ty)).collect(), canvas))
}
