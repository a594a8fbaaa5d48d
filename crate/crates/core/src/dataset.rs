//! Surround-view set manifests and the synthetic ground-truth generator.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::CameraIntrinsics;
use crate::error::{Error, Result};
use crate::image::MaskedImage;
use crate::mesh::{four_pt_to_matrix, FourPtOffsets, Homography};
use crate::propagate::order_images;

pub const MANIFEST_NAME: &str = "set.json";

/// Contents of a `set.json` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetManifest {
    /// Image file names relative to the manifest, left to right.
    pub images: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intrinsics: Option<Vec<CameraIntrinsics>>,
    /// Per-image 3x3 row-major homographies into the central image's frame.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_warps: Option<Vec<[f64; 9]>>,
    /// Whether the set should be projected onto a cylinder before alignment.
    #[serde(default = "default_true")]
    pub cylindrical: bool,
}

fn default_true() -> bool {
    true
}

impl SetManifest {
    pub fn validate(&self) -> Result<()> {
        let n = self.images.len();
        if n < 2 {
            return Err(Error::InvalidConfig(format!("a set needs at least 2 images, the manifest lists {n}")));
        }
        if let Some(k) = &self.intrinsics {
            if k.len() != n {
                return Err(Error::InvalidConfig(format!("{} intrinsics for {n} images", k.len())));
            }
            for ki in k {
                ki.validate()?;
            }
        }
        if let Some(g) = &self.gt_warps {
            if g.len() != n {
                return Err(Error::InvalidConfig(format!("{} ground-truth warps for {n} images", g.len())));
            }
        }
        Ok(())
    }

    /// Reads a manifest from `path`, which may be the file itself or the
    /// directory holding `set.json`. Returns the manifest and its directory.
    pub fn read(path: impl AsRef<Path>) -> Result<(Self, PathBuf)> {
        let path = path.as_ref();
        let file = if path.is_dir() { path.join(MANIFEST_NAME) } else { path.to_path_buf() };
        let text = fs::read_to_string(&file).map_err(|e| Error::Load {
            path: file.clone(),
            message: e.to_string(),
        })?;
        let manifest: SetManifest = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: file.clone(),
            source,
        })?;
        manifest.validate()?;
        let root = file.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((manifest, root))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Images of one surround rig, ordered left to right.
#[derive(Debug, Clone)]
pub struct SurroundSet {
    pub images: Vec<MaskedImage>,
    pub names: Vec<String>,
    pub center_index: usize,
    pub intrinsics: Vec<CameraIntrinsics>,
    pub cylindrical: bool,
    pub gt_warps: Option<Vec<Homography>>,
}

impl SurroundSet {
    pub fn new(images: Vec<MaskedImage>, intrinsics: Option<Vec<CameraIntrinsics>>, cylindrical: bool) -> Result<Self> {
        let order = order_images(images.len())?;
        let intrinsics = match intrinsics {
            Some(k) if k.len() != images.len() => {
                return Err(Error::InvalidArgument(format!("{} intrinsics for {} images", k.len(), images.len())))
            }
            Some(k) => k,
            None => images
                .iter()
                .map(|im| CameraIntrinsics::default_for(im.width(), im.height()))
                .collect(),
        };
        Ok(Self {
            names: (0..images.len()).map(|i| format!("image_{i}")).collect(),
            images,
            center_index: order.center,
            intrinsics,
            cylindrical,
            gt_warps: None,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Decodes every image of a manifest (in parallel) into a set.
pub fn load_set(manifest: &SetManifest, root: &Path) -> Result<SurroundSet> {
    manifest.validate()?;
    let images = manifest
        .images
        .par_iter()
        .map(|name| {
            let path = root.join(name);
            if !path.is_file() {
                return Err(Error::Load {
                    path,
                    message: "file not found".into(),
                });
            }
            MaskedImage::load(&path)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut set = SurroundSet::new(images, manifest.intrinsics.clone(), manifest.cylindrical)?;
    set.names = manifest.images.clone();
    set.gt_warps = manifest
        .gt_warps
        .as_ref()
        .map(|g| g.iter().map(|m| Homography::from_row_major(*m)).collect());
    Ok(set)
}

/// Reads `set.json` from `path` (file or directory) and loads the set.
pub fn load_set_from(path: impl AsRef<Path>) -> Result<SurroundSet> {
    let (manifest, root) = SetManifest::read(path)?;
    load_set(&manifest, &root)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthProjection {
    /// Views are perturbed crops of a flat panorama.
    Planar,
    /// Views are pinhole renderings of an unrolled cylinder at evenly spaced
    /// yaw angles.
    Cylindrical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    /// Source panorama; a procedural texture is generated when absent.
    pub source: Option<PathBuf>,
    pub n_views: usize,
    /// Shared fraction of view width between neighbors.
    pub overlap_ratio: f64,
    pub width: usize,
    pub height: usize,
    /// Largest per-corner perturbation of each view, in pixels.
    pub perturbation: f64,
    pub seed: u64,
    pub projection: SynthProjection,
    /// Focal length of cylindrical renderings; defaults to `0.8 * width`.
    pub focal: Option<f64>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            source: None,
            n_views: 5,
            overlap_ratio: 0.15,
            width: 512,
            height: 384,
            perturbation: 8.0,
            seed: 0,
            projection: SynthProjection::Planar,
            focal: None,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_views < 2 {
            return Err(Error::InvalidSpec(format!("n_views must be at least 2, got {}", self.n_views)));
        }
        if !(self.overlap_ratio > 0.0 && self.overlap_ratio < 1.0) {
            return Err(Error::InvalidSpec(format!("overlap_ratio must lie in (0, 1), got {}", self.overlap_ratio)));
        }
        if self.width < 16 || self.height < 16 {
            return Err(Error::InvalidSpec(format!("views must be at least 16x16, got {}x{}", self.width, self.height)));
        }
        if !(self.perturbation >= 0.0 && self.perturbation.is_finite()) {
            return Err(Error::InvalidSpec("perturbation must be a finite non-negative number".into()));
        }
        if self.focal.is_some_and(|f| !(f > 0.0 && f.is_finite())) {
            return Err(Error::InvalidSpec("focal must be positive".into()));
        }
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::Load {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let spec: Self = serde_json::from_str(&text).map_err(|e| Error::InvalidSpec(format!("{}: {e}", path.display())))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Horizontal distance between adjacent crops.
    pub fn stride(&self) -> f64 {
        self.width as f64 * (1.0 - self.overlap_ratio)
    }

    fn focal_length(&self) -> f64 {
        self.focal.unwrap_or(0.8 * self.width as f64)
    }
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub set: SurroundSet,
    /// Per-view homography into the central view's frame. Empty when the
    /// views are not related by homographies.
    pub gt_warps: Vec<Homography>,
    /// Panorama region covered by the views.
    pub reference: MaskedImage,
}

/// Multi-octave value noise in three color channels.
pub fn procedural_panorama(width: usize, height: usize, rng: &mut ChaCha8Rng) -> MaskedImage {
    const CELLS: [f64; 5] = [96.0, 48.0, 24.0, 12.0, 6.0];
    const AMPLITUDES: [f64; 5] = [1.0, 0.7, 0.5, 0.35, 0.25];
    let lattices: Vec<(usize, usize, Vec<[f64; 3]>)> = CELLS
        .iter()
        .map(|&cell| {
            let lw = (width as f64 / cell).ceil() as usize + 2;
            let lh = (height as f64 / cell).ceil() as usize + 2;
            let values = (0..lw * lh).map(|_| [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()]).collect();
            (lw, lh, values)
        })
        .collect();
    let norm: f64 = AMPLITUDES.iter().sum();
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    MaskedImage::from_fn(width, height, 3, |x, y| {
        let mut acc = [0.0; 3];
        for ((lw, _, values), (&cell, &amp)) in lattices.iter().zip(CELLS.iter().zip(&AMPLITUDES)) {
            let fx = (x as f64 + 0.5) / cell;
            let fy = (y as f64 + 0.5) / cell;
            let (ix, iy) = (fx.floor() as usize, fy.floor() as usize);
            let (tx, ty) = (smooth(fx - ix as f64), smooth(fy - iy as f64));
            let at = |i: usize, j: usize| values[j * lw + i];
            for c in 0..3 {
                let top = at(ix, iy)[c] * (1.0 - tx) + at(ix + 1, iy)[c] * tx;
                let bottom = at(ix, iy + 1)[c] * (1.0 - tx) + at(ix + 1, iy + 1)[c] * tx;
                acc[c] += amp * (top * (1.0 - ty) + bottom * ty);
            }
        }
        // Stretch the contrast of the averaged octaves around mid-gray.
        (acc.map(|v| (0.5 + 2.2 * (v / norm - 0.5)).clamp(0.0, 1.0)), 1.0)
    })
}

fn render(panorama: &MaskedImage, width: usize, height: usize, map: impl Fn(f64, f64) -> Option<(f64, f64)> + Sync) -> MaskedImage {
    let mut rows: Vec<(Vec<f64>, Vec<f64>)> = (0..height)
        .into_par_iter()
        .map(|y| {
            let mut px = vec![0.0; width * 3];
            let mut m = vec![0.0; width];
            for x in 0..width {
                if let Some((u, v)) = map(x as f64 + 0.5, y as f64 + 0.5) {
                    let s = panorama.sample(u, v);
                    px[x * 3..x * 3 + 3].copy_from_slice(&s.value);
                    m[x] = if s.mask >= 1.0 - 1e-9 { 1.0 } else { 0.0 };
                }
            }
            (px, m)
        })
        .collect();
    let mut pixels = Vec::with_capacity(width * height * 3);
    let mut mask = Vec::with_capacity(width * height);
    for (p, m) in rows.drain(..) {
        pixels.extend(p);
        mask.extend(m);
    }
    MaskedImage::from_parts_unchecked(width, height, 3, pixels, mask)
}

/// Generates a synthetic surround set with known warps.
///
/// Planar mode: view `i` samples the panorama through `G_i = T(x_i, y_0) P_i`,
/// where `x_i = margin + i * stride` and `P_i` is a random four-corner
/// perturbation. The ground truth of view `i` is `G_c^-1 G_i`.
///
/// Cylindrical mode: view `i` is a pinhole rendering of the panorama, read as
/// an unrolled cylinder of radius `focal`, at yaw `i * step`, with the yaw step
/// chosen so neighbors share `overlap_ratio` of their field of view. Without
/// perturbation the cylindrically projected views differ by pure translations,
/// which are reported as ground truth.
pub fn synth_generate(spec: &SynthSpec) -> Result<SynthOutput> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (w, h) = (spec.width as f64, spec.height as f64);
    let n = spec.n_views;
    let center = order_images(n)?.center;
    let margin = spec.perturbation.ceil() + 2.0;

    let (span_w, step) = match spec.projection {
        SynthProjection::Planar => (spec.stride() * (n - 1) as f64 + w, spec.stride()),
        SynthProjection::Cylindrical => {
            let f = spec.focal_length();
            let fov = 2.0 * (w / (2.0 * f)).atan();
            let step = f * fov * (1.0 - spec.overlap_ratio);
            (step * (n - 1) as f64 + f * fov, step)
        }
    };
    let pano_w = (span_w + 2.0 * margin).ceil() as usize;
    let pano_h = (h + 2.0 * margin).ceil() as usize;

    let panorama = match &spec.source {
        Some(path) => {
            let p = MaskedImage::load(path)?;
            if p.width() < pano_w || p.height() < pano_h {
                return Err(Error::InvalidSpec(format!(
                    "source panorama {}x{} is smaller than the required {pano_w}x{pano_h}",
                    p.width(),
                    p.height()
                )));
            }
            if p.channels() == 3 {
                p
            } else {
                MaskedImage::from_fn(p.width(), p.height(), 3, |x, y| {
                    let v = p.pixel(x, y)[0];
                    ([v; 3], 1.0)
                })
            }
        }
        None => procedural_panorama(pano_w, pano_h, &mut rng),
    };

    let perturbations: Vec<Homography> = (0..n)
        .map(|_| {
            let mut o = FourPtOffsets::zero(w, h);
            if spec.perturbation > 0.0 {
                for c in &mut o.offsets {
                    for v in c.iter_mut() {
                        *v = rng.gen_range(-spec.perturbation..=spec.perturbation);
                    }
                }
            }
            four_pt_to_matrix(&o)
        })
        .collect::<Result<_>>()?;

    let (images, gt_warps, intrinsics, cylindrical) = match spec.projection {
        SynthProjection::Planar => {
            let to_pano: Vec<Homography> = (0..n)
                .map(|i| Homography::translation(margin + i as f64 * step, margin).compose(&perturbations[i]))
                .collect();
            let images = to_pano
                .iter()
                .map(|g| render(&panorama, spec.width, spec.height, |x, y| g.apply(x, y)))
                .collect();
            let center_inv = to_pano[center]
                .inverse()
                .ok_or_else(|| Error::InvalidSpec("singular view homography".into()))?;
            let gt = to_pano
                .iter()
                .enumerate()
                .map(|(i, g)| if i == center { Homography::identity() } else { center_inv.compose(g) })
                .collect();
            (images, gt, None, false)
        }
        SynthProjection::Cylindrical => {
            let f = spec.focal_length();
            let k = CameraIntrinsics::new(f, f, w / 2.0, h / 2.0)?;
            let half_fov = (w / (2.0 * f)).atan();
            let images = (0..n)
                .map(|i| {
                    let u0 = margin + f * half_fov + i as f64 * step;
                    let v0 = margin + h / 2.0;
                    let p = &perturbations[i];
                    render(&panorama, spec.width, spec.height, |x, y| {
                        let (x, y) = p.apply(x, y)?;
                        let bx = (x - k.cx) / k.fx;
                        let by = (y - k.cy) / k.fy;
                        Some((u0 + f * bx.atan(), v0 + f * by / (bx * bx + 1.0).sqrt()))
                    })
                })
                .collect();
            let gt = if spec.perturbation == 0.0 {
                (0..n)
                    .map(|i| Homography::translation((i as f64 - center as f64) * step, 0.0))
                    .collect()
            } else {
                Vec::new()
            };
            (images, gt, Some(vec![k; n]), true)
        }
    };

    let x_end = ((margin + span_w).ceil() as usize).min(panorama.width());
    let y_end = ((margin + h).ceil() as usize).min(panorama.height());
    let m0 = margin as usize;
    let reference = MaskedImage::from_fn(x_end - m0, y_end - m0, 3, |x, y| {
        let p = panorama.pixel(x + m0, y + m0);
        ([p[0], p[1], p[2]], 1.0)
    });

    let mut set = SurroundSet::new(images, intrinsics, cylindrical)?;
    set.names = (0..n).map(view_name).collect();
    set.gt_warps = (!gt_warps.is_empty()).then(|| gt_warps.clone());
    Ok(SynthOutput {
        set,
        gt_warps,
        reference,
    })
}

pub fn view_name(i: usize) -> String {
    format!("view_{i}.png")
}

/// Writes views, `set.json` and `reference.png` into `dir`.
pub fn write_synth(out: &SynthOutput, dir: impl AsRef<Path>) -> Result<SetManifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, img) in out.set.names.iter().zip(&out.set.images) {
        img.save(dir.join(name))?;
    }
    out.reference.save(dir.join("reference.png"))?;
    let manifest = SetManifest {
        images: out.set.names.clone(),
        intrinsics: out.set.cylindrical.then(|| out.set.intrinsics.clone()),
        gt_warps: (!out.gt_warps.is_empty()).then(|| out.gt_warps.iter().map(|g| g.to_row_major()).collect()),
        cylindrical: out.set.cylindrical,
    };
    manifest.write(dir.join(MANIFEST_NAME))?;
    Ok(manifest)
}
