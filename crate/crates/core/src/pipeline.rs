//! End-to-end stitching of a surround set: projection, pairwise alignment,
//! propagation into the central frame, rendering and composition.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::align::{estimate_pair_motion_detailed, AlignConfig, AlignReport, PairMotion};
use crate::camera::{cylindrical_warp, CylindricalConfig};
use crate::compose::{compose, Panorama, SeamConfig, SeamMaskPair};
use crate::dataset::SurroundSet;
use crate::error::{Error, Result};
use crate::eval::{overlap_metrics, OverlapMetrics};
use crate::image::MaskedImage;
use crate::losses::LossReport;
use crate::mesh::{make_uniform_grid, BoundingBox, ControlGrid, Homography, TpsWarp};
use crate::propagate::{global_warp_grids, order_images, propagate_motion, ChainOrder, GlobalWarp};

/// Panorama canvases larger than this multiple of the summed input area are
/// treated as a diverged warp.
const MAX_CANVAS_GROWTH: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StitchConfig {
    pub align: AlignConfig,
    pub seam: SeamConfig,
    /// Project onto a cylinder first (only for sets that allow it).
    pub cylindrical: bool,
    /// Cylinder radius in pixels; defaults to each image's `fx`.
    pub radius: Option<f64>,
}

impl Default for StitchConfig {
    fn default() -> Self {
        Self {
            align: AlignConfig::default(),
            seam: SeamConfig::default(),
            cylindrical: true,
            radius: None,
        }
    }
}

impl StitchConfig {
    pub fn validate(&self) -> Result<()> {
        self.align.validate()?;
        self.seam.validate()?;
        if let Some(r) = self.radius {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::InvalidConfig(format!("cylinder radius must be positive, got {r}")));
            }
        }
        Ok(())
    }
}

/// Pipeline features that can be switched off for ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct Toggles {
    pub cylindrical: bool,
    pub shape: bool,
    pub size: bool,
    pub fold: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Self::ALL
    }
}

impl Toggles {
    pub const ALL: Toggles = Toggles {
        cylindrical: true,
        shape: true,
        size: true,
        fold: true,
    };

    /// The configuration with the disabled features removed.
    pub fn apply(&self, base: &StitchConfig) -> StitchConfig {
        let mut cfg = base.clone();
        cfg.cylindrical &= self.cylindrical;
        let w = &mut cfg.align.weights;
        if !self.shape {
            w.gamma1 = 0.0;
        }
        if !self.size {
            w.gamma2 = 0.0;
        }
        if !self.fold {
            w.gamma3 = 0.0;
        }
        cfg
    }

    /// `+`-joined names of the enabled features, or `none`.
    pub fn label(&self) -> String {
        let names: Vec<&str> = [
            (self.cylindrical, "cyl"),
            (self.shape, "shape"),
            (self.size, "size"),
            (self.fold, "fold"),
        ]
        .iter()
        .filter(|(on, _)| *on)
        .map(|(_, n)| *n)
        .collect();
        if names.is_empty() {
            "none".into()
        } else {
            names.join("+")
        }
    }

    /// The full configuration followed by each single feature switched off.
    pub fn leave_one_out() -> Vec<Toggles> {
        let all = Toggles::ALL;
        vec![
            all,
            Toggles { cylindrical: false, ..all },
            Toggles { shape: false, ..all },
            Toggles { size: false, ..all },
            Toggles { fold: false, ..all },
        ]
    }
}

/// Whether `set` gets cylindrical projection under `cfg`.
pub fn uses_cylinder(set: &SurroundSet, cfg: &StitchConfig) -> bool {
    cfg.cylindrical && set.cylindrical
}

/// The images the aligner works on: cylindrically projected when enabled.
/// All results must share one size.
pub fn project_set(set: &SurroundSet, cfg: &StitchConfig) -> Result<Vec<MaskedImage>> {
    let images = if uses_cylinder(set, cfg) {
        set.images
            .par_iter()
            .zip(set.intrinsics.par_iter())
            .map(|(img, k)| {
                let c = CylindricalConfig::fit_with_radius(k, img.width(), img.height(), cfg.radius.unwrap_or(k.fx));
                cylindrical_warp(img, k, &c)
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        set.images.clone()
    };
    if let Some(first) = images.first() {
        if let Some(i) = images.iter().position(|im| !im.same_shape(first)) {
            return Err(Error::InvalidArgument(format!(
                "image {i} is {}x{}x{} but image 0 is {}x{}x{}; set images need equal sizes and intrinsics",
                images[i].width(),
                images[i].height(),
                images[i].channels(),
                first.width(),
                first.height(),
                first.channels()
            )));
        }
    }
    Ok(images)
}

/// Alignment outcome of one adjacent pair.
#[derive(Debug, Clone)]
pub struct PairRecord {
    pub motion: PairMotion,
    pub report: AlignReport,
}

impl PairRecord {
    pub fn final_loss(&self) -> LossReport {
        self.report.final_loss()
    }
}

/// Images placed on the shared panorama canvas.
#[derive(Debug, Clone)]
pub struct Rendering {
    pub grids: Vec<ControlGrid>,
    pub canvas: BoundingBox,
    pub warped: Vec<MaskedImage>,
}

/// Renders every image through its global warp onto a common canvas.
pub fn render_global(images: &[MaskedImage], warps: &[GlobalWarp], grid_u: usize, grid_v: usize) -> Result<Rendering> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidArgument("no images to render".into()))?;
    if warps.len() != images.len() {
        return Err(Error::InvalidArgument(format!("{} warps for {} images", warps.len(), images.len())));
    }
    let template = make_uniform_grid(grid_u, grid_v, first.width() as f64, first.height() as f64)?;
    let (grids, canvas) = global_warp_grids(warps, &template)?;
    let input_area: usize = images.iter().map(|im| im.width() * im.height()).sum();
    if canvas.width().saturating_mul(canvas.height()) > MAX_CANVAS_GROWTH * input_area {
        return Err(Error::DegenerateWarp(format!(
            "panorama canvas {}x{} is implausibly large",
            canvas.width(),
            canvas.height()
        )));
    }
    let warped = images
        .par_iter()
        .zip(grids.par_iter())
        .map(|(img, g)| Ok(TpsWarp::new(&template, g, canvas)?.warp(img)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Rendering { grids, canvas, warped })
}

#[derive(Debug, Clone)]
pub struct StitchResult {
    /// Aligner inputs (after optional projection).
    pub projected: Vec<MaskedImage>,
    pub cylindrical: bool,
    pub order: ChainOrder,
    /// In `order.pairs()` order.
    pub pairs: Vec<PairRecord>,
    pub global: Vec<GlobalWarp>,
    pub rendering: Rendering,
    pub panorama: Panorama,
    pub seams: Vec<SeamMaskPair>,
    pub metrics: OverlapMetrics,
}

impl StitchResult {
    /// Final regularizer terms averaged over pairs.
    pub fn mean_final_loss(&self) -> LossReport {
        let mut acc = LossReport::default();
        for p in &self.pairs {
            let r = p.final_loss();
            acc.alignment += r.alignment;
            acc.distortion += r.distortion;
            acc.shape += r.shape;
            acc.size += r.size;
            acc.fold += r.fold;
            acc.total += r.total;
        }
        let n = self.pairs.len().max(1) as f64;
        LossReport {
            alignment: acc.alignment / n,
            distortion: acc.distortion / n,
            shape: acc.shape / n,
            size: acc.size / n,
            fold: acc.fold / n,
            total: acc.total / n,
        }
    }
}

/// Aligns every adjacent pair of `images` (center outward) and propagates the
/// motions into the central frame.
pub fn align_set(images: &[MaskedImage], cfg: &AlignConfig) -> Result<(ChainOrder, Vec<PairRecord>, Vec<GlobalWarp>)> {
    let order = order_images(images.len())?;
    let pairs = order
        .pairs()
        .par_iter()
        .map(|&(r, t)| {
            let report = estimate_pair_motion_detailed(&images[r], &images[t], cfg).map_err(|e| Error::Pair {
                ref_index: r,
                tar_index: t,
                source: Box::new(e),
            })?;
            let motion = report.motion.clone().with_indices(r, t);
            Ok(PairRecord { motion, report })
        })
        .collect::<Result<Vec<_>>>()?;
    let motions: Vec<PairMotion> = pairs.iter().map(|p| p.motion.clone()).collect();
    let global = propagate_motion(&order, &motions)?;
    Ok((order, pairs, global))
}

/// Stitches a surround set into one panorama.
pub fn stitch_set(set: &SurroundSet, cfg: &StitchConfig) -> Result<StitchResult> {
    cfg.validate()?;
    let projected = project_set(set, cfg)?;
    let (order, pairs, global) = align_set(&projected, &cfg.align)?;
    let rendering = render_global(&projected, &global, cfg.align.grid_u, cfg.align.grid_v)?;
    let (panorama, seams) = compose(&rendering.warped, &cfg.seam)?;
    let metrics = overlap_metrics(&rendering.warped)?;
    Ok(StitchResult {
        projected,
        cylindrical: uses_cylinder(set, cfg),
        order,
        pairs,
        global,
        rendering,
        panorama,
        seams,
        metrics,
    })
}

/// Overlap metrics of `images` placed by pure homographies into the central
/// frame (e.g. ground truth, or identity for the no-warp baseline).
pub fn evaluate_warps(images: &[MaskedImage], warps: &[Homography], grid_u: usize, grid_v: usize) -> Result<OverlapMetrics> {
    let points = (grid_u + 1) * (grid_v + 1);
    let global: Vec<GlobalWarp> = warps
        .iter()
        .enumerate()
        .map(|(i, h)| GlobalWarp {
            h: h.clone(),
            ..GlobalWarp::identity(i, points)
        })
        .collect();
    overlap_metrics(&render_global(images, &global, grid_u, grid_v)?.warped)
}

/// Variance of the grid's edge lengths, each divided by its undeformed length.
/// Zero for any translated or uniformly scaled grid.
pub fn edge_length_variance(g: &ControlGrid) -> f64 {
    let (sx, sy) = (
        g.source_width() / (g.cols() - 1) as f64,
        g.source_height() / (g.rows() - 1) as f64,
    );
    let mut ratios = Vec::new();
    for i in 0..g.rows() {
        for j in 0..g.cols() {
            let p = g.point(i, j);
            if j + 1 < g.cols() {
                let q = g.point(i, j + 1);
                ratios.push((q[0] - p[0]).hypot(q[1] - p[1]) / sx);
            }
            if i + 1 < g.rows() {
                let q = g.point(i + 1, j);
                ratios.push((q[0] - p[0]).hypot(q[1] - p[1]) / sy);
            }
        }
    }
    let n = ratios.len() as f64;
    let mean = ratios.iter().sum::<f64>() / n;
    ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n
}
