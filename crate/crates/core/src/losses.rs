//! Objective terms of the warp stage with analytic gradients.
//!
//! Grid terms take a [`ControlGrid`] and return the value together with the
//! gradient with respect to every control point. The photometric term works on
//! warped rasters and returns the gradient with respect to warped pixel values
//! and warped mask; the warp's `backward` carries it on to control points.
//!
//! Nonsmooth points (`|x|` at 0, ReLU at 0) use subgradient 0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::MaskedImage;
use crate::mesh::ControlGrid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    /// Alignment weight.
    pub alpha: f64,
    /// Distortion weight.
    pub beta: f64,
    /// Rectangular-constraint weight.
    pub gamma: f64,
    /// Shape sub-weight.
    pub gamma1: f64,
    /// Size sub-weight.
    pub gamma2: f64,
    /// Fold sub-weight.
    pub gamma3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.001,
            gamma: 0.001,
            gamma1: 1.0,
            gamma2: 1.0,
            gamma3: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.alpha,
            self.beta,
            self.gamma,
            self.gamma1,
            self.gamma2,
            self.gamma3,
        ];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidConfig(format!(
                "loss weights must be finite and non-negative: {self:?}"
            )));
        }
        Ok(())
    }

    /// Whether the fold penalty is active in the total loss.
    pub fn fold_active(&self) -> bool {
        self.gamma > 0.0 && self.gamma3 > 0.0
    }
}

/// Per-term breakdown of the warp objective.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub alignment: f64,
    pub distortion: f64,
    pub shape: f64,
    pub size: f64,
    pub fold: f64,
    pub total: f64,
}

/// A grid objective value with its gradient per control point.
#[derive(Debug, Clone, PartialEq)]
pub struct GridLoss {
    pub value: f64,
    pub grad: Vec<[f64; 2]>,
}

impl GridLoss {
    fn zero(n: usize) -> Self {
        Self {
            value: 0.0,
            grad: vec![[0.0; 2]; n],
        }
    }

    fn add_scaled(&mut self, other: &GridLoss, w: f64) {
        self.value += w * other.value;
        for (a, b) in self.grad.iter_mut().zip(&other.grad) {
            a[0] += w * b[0];
            a[1] += w * b[1];
        }
    }
}

const ROUNDING_DIFF: f64 = 1e-12;

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Visits every horizontal edge `(from, to)` then every vertical edge, passing
/// the edge vector and whether it is horizontal.
fn for_each_edge(g: &ControlGrid, mut f: impl FnMut(usize, usize, [f64; 2], bool)) {
    let (rows, cols) = (g.rows(), g.cols());
    for i in 0..rows {
        for j in 0..cols - 1 {
            let (a, b) = (g.index(i, j), g.index(i, j + 1));
            let (pa, pb) = (g.points()[a], g.points()[b]);
            f(a, b, [pb[0] - pa[0], pb[1] - pa[1]], true);
        }
    }
    for i in 0..rows - 1 {
        for j in 0..cols {
            let (a, b) = (g.index(i, j), g.index(i + 1, j));
            let (pa, pb) = (g.points()[a], g.points()[b]);
            f(a, b, [pb[0] - pa[0], pb[1] - pa[1]], false);
        }
    }
}

/// Shared skeleton of the three rectangular terms: `term(edge, horizontal)`
/// returns the per-edge value and its derivative with respect to the edge vector.
fn edge_mean_loss(g: &ControlGrid, term: impl Fn([f64; 2], bool) -> (f64, [f64; 2])) -> GridLoss {
    let (u, v) = (g.u() as f64, g.v() as f64);
    let n_hor = (u + 1.0) * v;
    let n_ver = u * (v + 1.0);
    let mut out = GridLoss::zero(g.len());
    for_each_edge(g, |a, b, e, horizontal| {
        let norm = if horizontal { n_hor } else { n_ver };
        let (val, de) = term(e, horizontal);
        out.value += val / norm;
        out.grad[b][0] += de[0] / norm;
        out.grad[b][1] += de[1] / norm;
        out.grad[a][0] -= de[0] / norm;
        out.grad[a][1] -= de[1] / norm;
    });
    out
}

/// Penalizes the off-axis component of every edge: horizontal edges should have
/// no vertical extent and vice versa.
pub fn shape_loss(g: &ControlGrid) -> GridLoss {
    let sy = g.v() as f64 / g.source_height();
    let sx = g.u() as f64 / g.source_width();
    edge_mean_loss(g, |e, horizontal| {
        if horizontal {
            ((e[1] * sy).abs(), [0.0, sign(e[1]) * sy])
        } else {
            ((e[0] * sx).abs(), [sign(e[0]) * sx, 0.0])
        }
    })
}

/// Penalizes deviation of every edge's normalized on-axis length from 1.
pub fn size_loss(g: &ControlGrid) -> GridLoss {
    let sx = g.v() as f64 / g.source_width();
    let sy = g.u() as f64 / g.source_height();
    edge_mean_loss(g, |e, horizontal| {
        let (comp, s, axis) = if horizontal { (e[0], sx, 0) } else { (e[1], sy, 1) };
        let len = (comp * s).abs();
        let outer = sign(len - 1.0);
        let mut de = [0.0; 2];
        de[axis] = outer * sign(comp) * s;
        ((len - 1.0).abs(), de)
    })
}

/// ReLU penalty on edges whose on-axis component points backwards.
pub fn fold_loss(g: &ControlGrid) -> GridLoss {
    edge_mean_loss(g, |e, horizontal| {
        let axis = if horizontal { 0 } else { 1 };
        let x = -e[axis];
        let mut de = [0.0; 2];
        if x > 0.0 {
            de[axis] = -1.0;
            (x, de)
        } else {
            (0.0, de)
        }
    })
}

/// Weighted sum of shape, size and fold terms.
pub fn rectangular_loss(g: &ControlGrid, w: &LossWeights) -> GridLoss {
    let mut out = GridLoss::zero(g.len());
    if w.gamma1 != 0.0 {
        out.add_scaled(&shape_loss(g), w.gamma1);
    }
    if w.gamma2 != 0.0 {
        out.add_scaled(&size_loss(g), w.gamma2);
    }
    if w.gamma3 != 0.0 {
        out.add_scaled(&fold_loss(g), w.gamma3);
    }
    out
}

/// Mean squared difference between consecutive edges along every grid line,
/// zero on any affine image of a uniform grid.
pub fn distortion_loss(g: &ControlGrid) -> GridLoss {
    let (rows, cols) = (g.rows(), g.cols());
    let pairs = rows * cols.saturating_sub(2) + cols * rows.saturating_sub(2);
    let mut out = GridLoss::zero(g.len());
    if pairs == 0 {
        return out;
    }
    let norm = pairs as f64;
    let p = g.points();
    // Second difference p[a] - 2 p[b] + p[c] along a line a-b-c.
    let mut visit = |a: usize, b: usize, c: usize| {
        let d = [
            p[c][0] - 2.0 * p[b][0] + p[a][0],
            p[c][1] - 2.0 * p[b][1] + p[a][1],
        ];
        out.value += (d[0] * d[0] + d[1] * d[1]) / norm;
        for k in 0..2 {
            let gk = 2.0 * d[k] / norm;
            out.grad[a][k] += gk;
            out.grad[b][k] -= 2.0 * gk;
            out.grad[c][k] += gk;
        }
    };
    for i in 0..rows {
        for j in 0..cols.saturating_sub(2) {
            visit(g.index(i, j), g.index(i, j + 1), g.index(i, j + 2));
        }
    }
    for j in 0..cols {
        for i in 0..rows.saturating_sub(2) {
            visit(g.index(i, j), g.index(i + 1, j), g.index(i + 2, j));
        }
    }
    out
}

/// Masked photometric L1 error and its gradients with respect to the warped
/// target's pixel values and mask.
#[derive(Debug, Clone)]
pub struct AlignmentLoss {
    pub value: f64,
    /// Sum of joint mask weights (the soft overlap pixel count).
    pub overlap: f64,
    pub d_value: Vec<f64>,
    pub d_mask: Vec<f64>,
}

/// Mean over the joint-mask overlap of the per-pixel, channel-averaged L1
/// difference. Each pixel is weighted by the product of the two masks, so for
/// binary masks this is the plain mean over overlapping pixels.
pub fn alignment_loss(warped_tar: &MaskedImage, reference: &MaskedImage) -> Result<AlignmentLoss> {
    if !warped_tar.same_shape(reference) {
        return Err(Error::InvalidArgument(format!(
            "alignment inputs differ in shape: {}x{}x{} vs {}x{}x{}",
            warped_tar.width(),
            warped_tar.height(),
            warped_tar.channels(),
            reference.width(),
            reference.height(),
            reference.channels()
        )));
    }
    let ch = warped_tar.channels();
    let n = warped_tar.width() * warped_tar.height();
    let (tm, rm) = (warped_tar.mask(), reference.mask());
    let (tp, rp) = (warped_tar.pixels(), reference.pixels());
    let mut weight_sum = 0.0;
    let mut weighted = 0.0;
    for i in 0..n {
        let w = tm[i] * rm[i];
        if w == 0.0 {
            continue;
        }
        let l1: f64 = (0..ch).map(|c| (tp[i * ch + c] - rp[i * ch + c]).abs()).sum::<f64>() / ch as f64;
        weight_sum += w;
        weighted += w * l1;
    }
    if weight_sum <= 0.0 {
        return Err(Error::NoOverlap("warped target and reference do not overlap".into()));
    }
    let value = weighted / weight_sum;
    let mut d_value = vec![0.0; n * ch];
    let mut d_mask = vec![0.0; n];
    for i in 0..n {
        if rm[i] == 0.0 {
            continue;
        }
        let w = tm[i] * rm[i];
        let mut l1 = 0.0;
        for c in 0..ch {
            let diff = tp[i * ch + c] - rp[i * ch + c];
            l1 += diff.abs();
            // Differences at rounding level count as equal, so identical content
            // exerts no pull.
            let s = if diff.abs() <= ROUNDING_DIFF { 0.0 } else { sign(diff) };
            d_value[i * ch + c] = w * s / (ch as f64 * weight_sum);
        }
        l1 /= ch as f64;
        d_mask[i] = rm[i] * (l1 - value) / weight_sum;
    }
    Ok(AlignmentLoss {
        value,
        overlap: weight_sum,
        d_value,
        d_mask,
    })
}

/// Grid-only part of the objective: `beta * distortion + gamma * rectangular`,
/// with the per-term values recorded in `report`.
pub fn grid_regularizer(g: &ControlGrid, w: &LossWeights, report: &mut LossReport) -> GridLoss {
    let mut out = GridLoss::zero(g.len());
    let dist = distortion_loss(g);
    let shape = shape_loss(g);
    let size = size_loss(g);
    let fold = fold_loss(g);
    report.distortion = dist.value;
    report.shape = shape.value;
    report.size = size.value;
    report.fold = fold.value;
    if w.beta != 0.0 {
        out.add_scaled(&dist, w.beta);
    }
    if w.gamma != 0.0 {
        out.add_scaled(&shape, w.gamma * w.gamma1);
        out.add_scaled(&size, w.gamma * w.gamma2);
        out.add_scaled(&fold, w.gamma * w.gamma3);
    }
    out
}

/// `alpha * alignment + beta * distortion + gamma * rectangular`.
pub fn total_warp_loss(
    warped_tar: &MaskedImage,
    reference: &MaskedImage,
    g: &ControlGrid,
    w: &LossWeights,
) -> Result<LossReport> {
    let align = alignment_loss(warped_tar, reference)?;
    let mut report = LossReport {
        alignment: align.value,
        ..LossReport::default()
    };
    let reg = grid_regularizer(g, w, &mut report);
    report.total = w.alpha * align.value + reg.value;
    Ok(report)
}
