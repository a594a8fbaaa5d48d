//! Files written into a run's output directory.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use svstitch::eval::{bucketize, rows_to_csv, MetricRow};
use svstitch::image::save_gray;
use svstitch::losses::LossReport;
use svstitch::pipeline::StitchResult;
use svstitch::Error;

pub const MOTIONS_NAME: &str = "motions.json";
pub const REPORT_NAME: &str = "report.csv";
pub const PANORAMA_NAME: &str = "panorama.png";
pub const SCHEMA_VERSION: u32 = 1;

/// JSON has no infinity; non-finite metrics are stored as strings.
mod metric {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use svstitch::eval::{format_metric, parse_metric};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(&format_metric(*v))
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => parse_metric(&t).ok_or_else(|| serde::de::Error::custom(format!("bad metric {t:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEntry {
    pub ref_index: usize,
    pub tar_index: usize,
    /// Corner displacements, clockwise from top-left.
    pub h_offsets: [[f64; 2]; 4],
    /// Target -> reference homography, row-major.
    pub h: [f64; 9],
    /// Flattened `x0, y0, x1, y1, ...` over row-major control points.
    pub residual: Vec<f64>,
    pub final_loss: LossReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalEntry {
    pub image_index: usize,
    /// Image -> central frame homography, row-major.
    pub h: [f64; 9],
    pub residual: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMetric {
    #[serde(with = "metric")]
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsEntry {
    #[serde(with = "metric")]
    pub psnr: f64,
    pub ssim: f64,
    /// Consecutive-image overlaps, left to right.
    pub overlaps: Vec<PairMetric>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionsFile {
    pub schema_version: u32,
    pub set: String,
    pub n_images: usize,
    /// Size of the images the aligner saw (after projection).
    pub image_width: usize,
    pub image_height: usize,
    pub cylindrical: bool,
    pub toggles: String,
    pub center: usize,
    pub grid_u: usize,
    pub grid_v: usize,
    /// Panorama canvas width and height.
    pub canvas: [usize; 2],
    pub pairs: Vec<PairEntry>,
    pub global: Vec<GlobalEntry>,
    pub metrics: MetricsEntry,
}

fn flatten(residual: &[[f64; 2]]) -> Vec<f64> {
    residual.iter().flat_map(|p| *p).collect()
}

impl MotionsFile {
    pub fn from_result(set: &str, toggles: &str, r: &StitchResult) -> svstitch::Result<Self> {
        let first = &r.projected[0];
        let pairs = r
            .pairs
            .iter()
            .map(|p| {
                let m = &p.motion;
                Ok(PairEntry {
                    ref_index: m.ref_index,
                    tar_index: m.tar_index,
                    h_offsets: m.h_offsets.offsets,
                    h: svstitch::mesh::four_pt_to_matrix(&m.h_offsets)?.to_row_major(),
                    residual: flatten(&m.residual),
                    final_loss: p.final_loss(),
                })
            })
            .collect::<svstitch::Result<Vec<_>>>()?;
        Ok(Self {
            schema_version: SCHEMA_VERSION,
            set: set.to_string(),
            n_images: r.projected.len(),
            image_width: first.width(),
            image_height: first.height(),
            cylindrical: r.cylindrical,
            toggles: toggles.to_string(),
            center: r.order.center,
            grid_u: r.pairs[0].motion.grid_u,
            grid_v: r.pairs[0].motion.grid_v,
            canvas: [r.rendering.canvas.width(), r.rendering.canvas.height()],
            pairs,
            global: r
                .global
                .iter()
                .map(|g| GlobalEntry {
                    image_index: g.image_index,
                    h: g.h.to_row_major(),
                    residual: flatten(&g.residual),
                })
                .collect(),
            metrics: MetricsEntry {
                psnr: r.metrics.psnr,
                ssim: r.metrics.ssim,
                overlaps: r.metrics.pairs.iter().map(|&(psnr, ssim)| PairMetric { psnr, ssim }).collect(),
            },
        })
    }

    pub fn read(path: &Path) -> svstitch::Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Load {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let file: Self = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        if file.schema_version != SCHEMA_VERSION {
            return Err(Error::Load {
                path: path.to_path_buf(),
                message: format!("unsupported schema_version {}", file.schema_version),
            });
        }
        Ok(file)
    }

    pub fn metric_row(&self, set: &str) -> MetricRow {
        MetricRow {
            set: set.to_string(),
            n_images: self.n_images,
            psnr: self.metrics.psnr,
            ssim: self.metrics.ssim,
            bucket: None,
            toggles: self.toggles.clone(),
        }
    }
}

fn write_text(path: &Path, text: &str) -> svstitch::Result<()> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes the panorama, per-image warps and masks, `motions.json` and
/// `report.csv` into `dir`.
pub fn write_stitch(dir: &Path, set: &str, toggles: &str, r: &StitchResult, dump_masks: bool) -> svstitch::Result<MotionsFile> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    r.panorama.image.save(dir.join(PANORAMA_NAME))?;
    let canvas = r.rendering.canvas;
    for (i, w) in r.rendering.warped.iter().enumerate() {
        w.save(dir.join(format!("warped_{i}.png")))?;
        w.save_mask(dir.join(format!("mask_{i}.png")))?;
        if dump_masks {
            save_gray(dir.join(format!("final_mask_{i}.png")), canvas.width(), canvas.height(), &r.panorama.final_masks[i])?;
        }
    }
    if dump_masks {
        for (i, s) in r.seams.iter().enumerate() {
            save_gray(dir.join(format!("seam_{i}_{}_a.png", i + 1)), s.width, s.height, &s.mask_a)?;
            save_gray(dir.join(format!("seam_{i}_{}_b.png", i + 1)), s.width, s.height, &s.mask_b)?;
        }
    }
    let motions = MotionsFile::from_result(set, toggles, r)?;
    let json = serde_json::to_string_pretty(&motions).map_err(|source| Error::Json {
        path: dir.join(MOTIONS_NAME),
        source,
    })?;
    write_text(&dir.join(MOTIONS_NAME), &(json + "\n"))?;
    let rows = bucketize(vec![motions.metric_row(set)]);
    write_text(&dir.join(REPORT_NAME), &rows_to_csv(&rows))?;
    Ok(motions)
}
