//! Pairwise motion estimation by coarse-to-fine direct photometric
//! optimization of the warp objective.
//!
//! A pair is aligned in two stages. The homography stage optimizes the four
//! corner offsets of the target frame with per-pixel homography sampling. The
//! mesh stage keeps the homography fixed and optimizes a residual displacement
//! of every control point, warping through a thin-plate spline each
//! evaluation. Parameters are always held in full-resolution pixels; each
//! level evaluates the objective on reduced images.

mod descent;
mod pyramid;
mod seed;

use serde::{Deserialize, Serialize};

pub use descent::StepSchedule;
pub use pyramid::{build_pyramid, downsample, reduction_factor};
pub use seed::{seed_translation, SeedConfig, SeedShift};

use descent::{minimize, DescentOptions, Evaluation};

use crate::error::{Error, Result};
use crate::image::MaskedImage;
use crate::losses::{alignment_loss, grid_regularizer, LossReport, LossWeights};
use crate::mesh::homography::{dlt_jacobian, point_param_jacobian};
use crate::mesh::projective::HomographyWarp;
use crate::mesh::{
    apply_homography_to_grid, four_pt_to_matrix, frame_corners, make_uniform_grid, BoundingBox, ControlGrid,
    FourPtOffsets, TpsWarp,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignConfig {
    pub grid_u: usize,
    pub grid_v: usize,
    /// Strictly increasing reduction scales. The homography stage runs on the
    /// first, the mesh stage on every later one.
    pub pyramid_scales: Vec<f64>,
    /// Extra scales, finer than the first pyramid scale, at which the
    /// homography is re-optimized before the mesh stage.
    pub homography_refine_scales: Vec<f64>,
    /// Extra scales, finer than the last pyramid scale, at which the mesh
    /// stage runs again. Include `1.0` for a full-resolution refinement.
    pub mesh_refine_scales: Vec<f64>,
    pub max_iters_homography: usize,
    pub max_iters_mesh: usize,
    pub steps: StepSchedule,
    /// A stage stops after a few consecutive steps whose relative loss
    /// decrease is below this.
    pub tolerance: f64,
    pub weights: LossWeights,
    pub seed: SeedConfig,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            grid_u: 12,
            grid_v: 12,
            pyramid_scales: vec![1.0 / 16.0, 1.0 / 8.0],
            homography_refine_scales: vec![1.0 / 4.0, 1.0],
            mesh_refine_scales: vec![1.0 / 2.0],
            max_iters_homography: 400,
            max_iters_mesh: 100,
            steps: StepSchedule::default(),
            tolerance: 1e-6,
            weights: LossWeights::default(),
            seed: SeedConfig::default(),
        }
    }
}

impl AlignConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_u == 0 || self.grid_v == 0 {
            return Err(Error::InvalidConfig("grid_u and grid_v must be at least 1".into()));
        }
        if self.pyramid_scales.is_empty() {
            return Err(Error::InvalidConfig("pyramid_scales must not be empty".into()));
        }
        for list in [&self.pyramid_scales, &self.homography_refine_scales, &self.mesh_refine_scales] {
            for &s in list.iter() {
                reduction_factor(s).map_err(|e| Error::InvalidConfig(e.to_string()))?;
            }
            if list.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::InvalidConfig(format!("scales {list:?} are not strictly increasing")));
            }
        }
        if self.homography_refine_scales.first().is_some_and(|&s| s <= self.pyramid_scales[0]) {
            return Err(Error::InvalidConfig(
                "homography refinement scales must be finer than the first pyramid scale".into(),
            ));
        }
        if self.mesh_refine_scales.first().is_some_and(|&s| s <= *self.pyramid_scales.last().unwrap()) {
            return Err(Error::InvalidConfig(
                "mesh refinement scales must be finer than the last pyramid scale".into(),
            ));
        }
        if self.max_iters_homography == 0 || self.max_iters_mesh == 0 {
            return Err(Error::InvalidConfig("iteration limits must be at least 1".into()));
        }
        if !(self.tolerance >= 0.0 && self.tolerance.is_finite()) {
            return Err(Error::InvalidConfig("tolerance must be a finite non-negative number".into()));
        }
        self.steps.validate()?;
        self.weights.validate()?;
        if self.seed.enabled {
            self.seed.validate()?;
        }
        Ok(())
    }

    /// Scales of the mesh stage, in order.
    fn mesh_scales(&self) -> Vec<f64> {
        let mut s: Vec<f64> = self.pyramid_scales[1..].to_vec();
        s.extend(&self.mesh_refine_scales);
        s
    }
}

/// Motion of a target image into its reference frame: an initial homography
/// given by corner offsets plus a residual displacement per control point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMotion {
    pub ref_index: usize,
    pub tar_index: usize,
    pub h_offsets: FourPtOffsets,
    pub grid_u: usize,
    pub grid_v: usize,
    /// Row-major `(U+1) x (V+1)` displacements in pixels.
    pub residual: Vec<[f64; 2]>,
}

impl PairMotion {
    pub fn identity(width: f64, height: f64, grid_u: usize, grid_v: usize) -> Self {
        Self {
            ref_index: 0,
            tar_index: 1,
            h_offsets: FourPtOffsets::zero(width, height),
            grid_u,
            grid_v,
            residual: vec![[0.0; 2]; (grid_u + 1) * (grid_v + 1)],
        }
    }

    pub fn with_indices(mut self, ref_index: usize, tar_index: usize) -> Self {
        self.ref_index = ref_index;
        self.tar_index = tar_index;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.residual.len() != (self.grid_u + 1) * (self.grid_v + 1) {
            return Err(Error::InvalidArgument(format!(
                "residual has {} vectors, expected {} for a {}x{} grid",
                self.residual.len(),
                (self.grid_u + 1) * (self.grid_v + 1),
                self.grid_u,
                self.grid_v
            )));
        }
        if !self.h_offsets.is_finite() || self.residual.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("motion contains non-finite values".into()));
        }
        Ok(())
    }

    pub fn source_grid(&self) -> Result<ControlGrid> {
        make_uniform_grid(
            self.grid_u,
            self.grid_v,
            self.h_offsets.source_width,
            self.h_offsets.source_height,
        )
    }

    /// Control grid of the target in the reference frame: `H(uniform) + M`.
    pub fn warped_grid(&self) -> Result<ControlGrid> {
        self.validate()?;
        let h = four_pt_to_matrix(&self.h_offsets)?;
        apply_homography_to_grid(&self.source_grid()?, &h)?.displaced(&self.residual)
    }
}

/// Renders `tar` through `motion` onto `canvas` (reference-frame coordinates).
pub fn warp_pair(tar: &MaskedImage, motion: &PairMotion, canvas: BoundingBox) -> Result<MaskedImage> {
    let dst = motion.warped_grid()?;
    TpsWarp::new(&motion.source_grid()?, &dst, canvas).map(|w| w.warp(tar))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    Homography,
    Mesh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub kind: StageKind,
    pub scale: f64,
    pub iterations: usize,
    pub start: LossReport,
    pub end: LossReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignReport {
    pub motion: PairMotion,
    pub seed: Option<SeedShift>,
    pub stages: Vec<StageReport>,
}

impl AlignReport {
    /// Loss terms at the end of the last stage.
    pub fn final_loss(&self) -> LossReport {
        self.stages.last().map(|s| s.end).unwrap_or_default()
    }
}

pub fn estimate_pair_motion(reference: &MaskedImage, target: &MaskedImage, cfg: &AlignConfig) -> Result<PairMotion> {
    estimate_pair_motion_detailed(reference, target, cfg).map(|r| r.motion)
}

/// Same as [`estimate_pair_motion`], also returning the seed and per-stage
/// loss breakdowns.
pub fn estimate_pair_motion_detailed(
    reference: &MaskedImage,
    target: &MaskedImage,
    cfg: &AlignConfig,
) -> Result<AlignReport> {
    cfg.validate()?;
    if reference.width() != target.width()
        || reference.height() != target.height()
        || reference.channels() != target.channels()
    {
        return Err(Error::InvalidArgument(format!(
            "reference {}x{}x{} and target {}x{}x{} differ in shape",
            reference.width(),
            reference.height(),
            reference.channels(),
            target.width(),
            target.height(),
            target.channels()
        )));
    }
    if reference.valid_count() == 0 || target.valid_count() == 0 {
        return Err(Error::NoOverlap("an input mask is empty".into()));
    }
    let (w, h) = (target.width() as f64, target.height() as f64);
    let uniform = make_uniform_grid(cfg.grid_u, cfg.grid_v, w, h)?;

    let seed = if cfg.seed.enabled {
        Some(seed_translation(reference, target, &cfg.seed)?)
    } else {
        None
    };
    let anchors = overlap_anchors(w, h, seed.as_ref());
    let (tx, ty) = seed.map_or((0.0, 0.0), |s| (s.tx, s.ty));
    let mut params: Vec<f64> = (0..4).flat_map(|_| [tx, ty]).collect();

    let mut stages = Vec::new();
    let mut homography_scales = vec![cfg.pyramid_scales[0]];
    homography_scales.extend(&cfg.homography_refine_scales);
    for &scale in &homography_scales {
        let k = reduction_factor(scale)?;
        let problem = HomographyProblem {
            reference: downsample(reference, k)?,
            target: downsample(target, k)?,
            k: k as f64,
            width: w,
            height: h,
            anchors,
            uniform: &uniform,
            weights: &cfg.weights,
        };
        let opts = DescentOptions {
            max_iters: cfg.max_iters_homography,
            steps: cfg.steps,
            tolerance: cfg.tolerance,
            unit: k as f64,
            forbid_folds: cfg.weights.fold_active(),
        };
        let out = minimize(params, &opts, |p| problem.evaluate(p))?;
        log::debug!(
            "homography stage 1/{k}: {} iterations, loss {:.6} -> {:.6}",
            out.iterations,
            out.start.total,
            out.end.value
        );
        params = out.x;
        stages.push(StageReport {
            kind: StageKind::Homography,
            scale,
            iterations: out.iterations,
            start: out.start,
            end: out.end.report,
        });
    }
    let offsets = anchor_offsets_to_corners(&anchors, &params, w, h)?;

    let base = apply_homography_to_grid(&uniform, &four_pt_to_matrix(&offsets)?)?;
    let mut residual = vec![0.0; 2 * uniform.len()];
    for scale in cfg.mesh_scales() {
        let k = reduction_factor(scale)?;
        let problem = MeshProblem {
            reference: downsample(reference, k)?,
            target: downsample(target, k)?,
            k: k as f64,
            base: &base,
            source_level: uniform.scaled(1.0 / k as f64),
            weights: &cfg.weights,
        };
        let opts = DescentOptions {
            max_iters: cfg.max_iters_mesh,
            steps: cfg.steps,
            tolerance: cfg.tolerance,
            unit: k as f64,
            forbid_folds: cfg.weights.fold_active(),
        };
        let out = minimize(residual, &opts, |p| problem.evaluate(p))?;
        log::debug!(
            "mesh stage 1/{k}: {} iterations, loss {:.6} -> {:.6}",
            out.iterations,
            out.start.total,
            out.end.value
        );
        residual = out.x;
        stages.push(StageReport {
            kind: StageKind::Mesh,
            scale,
            iterations: out.iterations,
            start: out.start,
            end: out.end.report,
        });
    }

    let motion = PairMotion {
        ref_index: 0,
        tar_index: 1,
        h_offsets: offsets,
        grid_u: cfg.grid_u,
        grid_v: cfg.grid_v,
        residual: residual.chunks_exact(2).map(|c| [c[0], c[1]]).collect(),
    };
    motion.validate()?;
    Ok(AlignReport { motion, seed, stages })
}

/// Four target points spanning the expected overlap: the rectangle shared
/// with the reference under the seed translation, or the whole frame without
/// a seed. Displacing these instead of the frame corners keeps the homography
/// parameters tied to what the photometric term can observe.
fn overlap_anchors(w: f64, h: f64, seed: Option<&SeedShift>) -> [[f64; 2]; 4] {
    const MIN_SPAN: f64 = 0.1;
    let Some(s) = seed else {
        return frame_corners(w, h);
    };
    let span = |len: f64, shift: f64| {
        let (mut lo, mut hi) = ((-shift).max(0.0), (len - shift).min(len));
        if hi - lo < MIN_SPAN * len {
            let mid = 0.5 * (lo + hi);
            lo = (mid - 0.5 * MIN_SPAN * len).max(0.0);
            hi = (lo + MIN_SPAN * len).min(len);
        }
        (lo, hi)
    };
    let (x0, x1) = span(w, s.tx);
    let (y0, y1) = span(h, s.ty);
    [[x0, y0], [x1, y0], [x0, y1], [x1, y1]]
}

/// Frame-corner offsets of the homography moving each anchor by its
/// displacement in `params`.
fn anchor_offsets_to_corners(anchors: &[[f64; 2]; 4], params: &[f64], w: f64, h: f64) -> Result<FourPtOffsets> {
    let moved: [[f64; 2]; 4] = std::array::from_fn(|i| [anchors[i][0] + params[2 * i], anchors[i][1] + params[2 * i + 1]]);
    let hm = crate::mesh::dlt_homography(anchors, &moved)?;
    let mut o = FourPtOffsets::zero(w, h);
    for (off, c) in o.offsets.iter_mut().zip(frame_corners(w, h)) {
        let (x, y) = hm
            .apply(c[0], c[1])
            .ok_or_else(|| Error::DegenerateWarp("frame corner maps to infinity".into()))?;
        *off = [x - c[0], y - c[1]];
    }
    Ok(o)
}

/// Objective of the homography stage over the displacements of four anchors.
struct HomographyProblem<'a> {
    reference: MaskedImage,
    target: MaskedImage,
    k: f64,
    width: f64,
    height: f64,
    anchors: [[f64; 2]; 4],
    uniform: &'a ControlGrid,
    weights: &'a LossWeights,
}

impl HomographyProblem<'_> {
    fn evaluate(&self, params: &[f64]) -> Result<Evaluation> {
        let corners = self.anchors;
        let moved: [[f64; 2]; 4] =
            std::array::from_fn(|i| [corners[i][0] + params[2 * i], corners[i][1] + params[2 * i + 1]]);

        // Level-space inverse map: reference canvas -> target.
        let scale = |c: [[f64; 2]; 4]| c.map(|p| [p[0] / self.k, p[1] / self.k]);
        let inv = dlt_jacobian(&scale(moved), &scale(corners))?;
        let forward = inv
            .homography
            .inverse()
            .ok_or_else(|| Error::DegenerateWarp("singular homography".into()))?;
        let canvas = BoundingBox::from_size(self.reference.width(), self.reference.height());
        let warp = HomographyWarp::from_inverse(
            inv.homography.clone(),
            &forward,
            self.width / self.k,
            self.height / self.k,
            canvas,
        )?;
        let warped = warp.warp(&self.target);
        let align = alignment_loss(&warped, &self.reference)?;
        let g_inv = warp.backward(&self.target, &align.d_value, &align.d_mask);

        // Grid terms on the full-resolution warped grid.
        let fwd = dlt_jacobian(&corners, &moved)?;
        let mut report = LossReport {
            alignment: align.value,
            ..LossReport::default()
        };
        let mut g_fwd = [0.0; 8];
        let grid_points = self
            .uniform
            .points()
            .iter()
            .map(|p| {
                point_param_jacobian(&fwd.homography, p[0], p[1])
                    .ok_or_else(|| Error::DegenerateWarp("control point maps to infinity".into()))
            })
            .collect::<Result<Vec<_>>>()?;
        let grid = self.uniform.with_points(grid_points.iter().map(|(q, _)| *q).collect())?;
        let reg = grid_regularizer(&grid, self.weights, &mut report);
        for ((_, jac), g) in grid_points.iter().zip(&reg.grad) {
            for i in 0..8 {
                g_fwd[i] += g[0] * jac[0][i] + g[1] * jac[1][i];
            }
        }

        let alpha = self.weights.alpha;
        let mut grad = vec![0.0; 8];
        for (j, gj) in grad.iter_mut().enumerate() {
            let mut a = 0.0;
            let mut r = 0.0;
            for i in 0..8 {
                a += g_inv[i] * inv.d_src[(i, j)];
                r += g_fwd[i] * fwd.d_dst[(i, j)];
            }
            *gj = alpha * a / self.k + r;
        }
        report.total = alpha * align.value + reg.value;
        Ok(Evaluation {
            value: report.total,
            grad,
            report,
        })
    }
}

/// Objective of the mesh stage over the residual displacements.
struct MeshProblem<'a> {
    reference: MaskedImage,
    target: MaskedImage,
    k: f64,
    base: &'a ControlGrid,
    source_level: ControlGrid,
    weights: &'a LossWeights,
}

impl MeshProblem<'_> {
    fn evaluate(&self, params: &[f64]) -> Result<Evaluation> {
        let residual: Vec<[f64; 2]> = params.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
        let grid = self.base.displaced(&residual)?;
        let canvas = BoundingBox::from_size(self.reference.width(), self.reference.height());
        let warp = TpsWarp::new(&self.source_level, &grid.scaled(1.0 / self.k), canvas)?;
        let warped = warp.warp(&self.target);
        let align = alignment_loss(&warped, &self.reference)?;
        let g_align = warp.backward(&self.target, &align.d_value, &align.d_mask);

        let mut report = LossReport {
            alignment: align.value,
            ..LossReport::default()
        };
        let reg = grid_regularizer(&grid, self.weights, &mut report);
        let alpha = self.weights.alpha;
        let grad = g_align
            .iter()
            .zip(&reg.grad)
            .flat_map(|(a, r)| [alpha * a[0] / self.k + r[0], alpha * a[1] / self.k + r[1]])
            .collect();
        report.total = alpha * align.value + reg.value;
        Ok(Evaluation {
            value: report.total,
            grad,
            report,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn smooth(x: f64, y: f64) -> [f64; 3] {
        [
            0.5 + 0.3 * (x * 0.09).sin() * (y * 0.07).cos(),
            0.5 + 0.2 * ((x + y) * 0.05).cos(),
            0.4 + 0.2 * (x * 0.03 - y * 0.08).sin(),
        ]
    }

    fn pair(shift: f64) -> (MaskedImage, MaskedImage) {
        let r = MaskedImage::from_fn(96, 64, 3, |x, y| (smooth(x as f64 + 0.5, y as f64 + 0.5), 1.0));
        let t = MaskedImage::from_fn(96, 64, 3, |x, y| (smooth(x as f64 + 0.5 + shift, y as f64 + 0.5 - 1.3), 1.0));
        (r, t)
    }

    fn fd_check(f: &dyn Fn(&[f64]) -> Evaluation, x: &[f64]) -> f64 {
        let e = f(x);
        let h = 1e-4;
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..x.len() {
            let mut p = x.to_vec();
            let mut m = x.to_vec();
            p[i] += h;
            m[i] -= h;
            let g = (f(&p).value - f(&m).value) / (2.0 * h);
            num += (g - e.grad[i]).powi(2);
            den += g.powi(2);
        }
        (num / den).sqrt()
    }

    #[test]
    fn homography_stage_gradient_matches_differences() {
        let (r, t) = pair(20.0);
        let uniform = make_uniform_grid(4, 4, 96.0, 64.0).unwrap();
        let weights = LossWeights::default();
        for k in [1.0, 2.0] {
            let p = HomographyProblem {
                reference: downsample(&r, k as usize).unwrap(),
                target: downsample(&t, k as usize).unwrap(),
                k,
                width: 96.0,
                height: 64.0,
                anchors: [[10.0, 5.0], [60.0, 4.0], [12.0, 60.0], [58.0, 62.0]],
                uniform: &uniform,
                weights: &weights,
            };
            let x = [18.3, -0.7, 19.1, -1.9, 18.6, -1.1, 19.4, -0.4];
            let err = fd_check(&|q| p.evaluate(q).unwrap(), &x);
            assert!(err < 1e-3, "k={k}: relative error {err}");
        }
    }

    #[test]
    fn mesh_stage_gradient_matches_differences() {
        let (r, t) = pair(20.0);
        let uniform = make_uniform_grid(3, 3, 96.0, 64.0).unwrap();
        let weights = LossWeights::default();
        let base = uniform.translated(19.0, -1.0);
        let p = MeshProblem {
            reference: downsample(&r, 2).unwrap(),
            target: downsample(&t, 2).unwrap(),
            k: 2.0,
            base: &base,
            source_level: uniform.scaled(0.5),
            weights: &weights,
        };
        let x: Vec<f64> = (0..32).map(|i| 0.3 * ((i * 7 % 11) as f64 / 11.0 - 0.5)).collect();
        let err = fd_check(&|q| p.evaluate(q).unwrap(), &x);
        assert!(err < 1e-3, "relative error {err}");
    }
}

