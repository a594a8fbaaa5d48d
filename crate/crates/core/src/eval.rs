//! Overlap-region image quality metrics, difficulty buckets, CSV reports and
//! ablation sweeps.

use std::fmt;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::SurroundSet;
use crate::error::{Error, Result};
use crate::image::{MaskedImage, VALID_THRESHOLD};
use crate::pipeline::{edge_length_variance, stitch_set, StitchConfig, StitchResult, Toggles};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn check_pair(a: &MaskedImage, b: &MaskedImage) -> Result<()> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "metric inputs differ in shape: {}x{}x{} vs {}x{}x{}",
            a.width(),
            a.height(),
            a.channels(),
            b.width(),
            b.height(),
            b.channels()
        )))
    }
}

fn joint_valid(a: &MaskedImage, b: &MaskedImage) -> Vec<bool> {
    a.mask()
        .iter()
        .zip(b.mask())
        .map(|(x, y)| *x >= VALID_THRESHOLD && *y >= VALID_THRESHOLD)
        .collect()
}

/// `10 log10(1 / MSE)` over jointly valid pixels and all channels; identical
/// overlaps give `f64::INFINITY`.
pub fn psnr(a: &MaskedImage, b: &MaskedImage) -> Result<f64> {
    check_pair(a, b)?;
    let ch = a.channels();
    let valid = joint_valid(a, b);
    let mut se = 0.0;
    let mut count = 0usize;
    for (i, _) in valid.iter().enumerate().filter(|(_, v)| **v) {
        for c in 0..ch {
            let d = a.pixels()[i * ch + c] - b.pixels()[i * ch + c];
            se += d * d;
        }
        count += ch;
    }
    if count == 0 {
        return Err(Error::NoOverlap("metric inputs share no valid pixels".into()));
    }
    let mse = se / count as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}

/// Normalized 1-D Gaussian taps of the SSIM window.
pub fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut t = [0.0; SSIM_WINDOW];
    for (i, v) in t.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = t.iter().sum();
    t.map(|v| v / s)
}

/// Valid-mode separable filtering: output `(w - 10) x (h - 10)`.
fn filter(field: &[f64], w: usize, h: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(k, t)| t * field[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(k, t)| t * rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

/// Mean local SSIM (11x11 Gaussian window, sigma 1.5, K1 = 0.01, K2 = 0.03,
/// dynamic range 1) over windows whose pixels are all jointly valid,
/// averaged over channels.
pub fn ssim(a: &MaskedImage, b: &MaskedImage) -> Result<f64> {
    check_pair(a, b)?;
    let valid = joint_valid(a, b);
    let (w, h, ch) = (a.width(), a.height(), a.channels());
    // Restrict the work to the bounding box of the joint mask.
    let (mut x0, mut y0, mut x1, mut y1) = (w, h, 0, 0);
    for y in 0..h {
        for x in 0..w {
            if valid[y * w + x] {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x + 1);
                y1 = y1.max(y + 1);
            }
        }
    }
    if x1 < x0 + SSIM_WINDOW || y1 < y0 + SSIM_WINDOW {
        return Err(Error::NoOverlap("no fully valid SSIM window".into()));
    }
    let (bw, bh) = (x1 - x0, y1 - y0);
    let (ow, oh) = (bw + 1 - SSIM_WINDOW, bh + 1 - SSIM_WINDOW);

    // Summed-area table of invalid pixels to find fully valid windows.
    let mut sat = vec![0usize; (bw + 1) * (bh + 1)];
    for y in 0..bh {
        for x in 0..bw {
            let bad = usize::from(!valid[(y + y0) * w + x + x0]);
            sat[(y + 1) * (bw + 1) + x + 1] = bad + sat[y * (bw + 1) + x + 1] + sat[(y + 1) * (bw + 1) + x] - sat[y * (bw + 1) + x];
        }
    }
    let window_ok: Vec<bool> = (0..ow * oh)
        .map(|i| {
            let (x, y) = (i % ow, i / ow);
            let (xe, ye) = (x + SSIM_WINDOW, y + SSIM_WINDOW);
            sat[ye * (bw + 1) + xe] + sat[y * (bw + 1) + x] == sat[y * (bw + 1) + xe] + sat[ye * (bw + 1) + x]
        })
        .collect();
    let windows = window_ok.iter().filter(|&&v| v).count();
    if windows == 0 {
        return Err(Error::NoOverlap("no fully valid SSIM window".into()));
    }

    let taps = gaussian_taps();
    let (c1, c2) = (SSIM_K1 * SSIM_K1, SSIM_K2 * SSIM_K2);
    let mut total = 0.0;
    for c in 0..ch {
        let crop = |img: &MaskedImage| -> Vec<f64> {
            let mut v = Vec::with_capacity(bw * bh);
            for y in y0..y1 {
                for x in x0..x1 {
                    v.push(img.pixels()[(y * w + x) * ch + c]);
                }
            }
            v
        };
        let (pa, pb) = (crop(a), crop(b));
        let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
        let mu_a = filter(&pa, bw, bh, &taps);
        let mu_b = filter(&pb, bw, bh, &taps);
        let e_aa = filter(&prod(&pa, &pa), bw, bh, &taps);
        let e_bb = filter(&prod(&pb, &pb), bw, bh, &taps);
        let e_ab = filter(&prod(&pa, &pb), bw, bh, &taps);
        let mut sum = 0.0;
        for i in (0..ow * oh).filter(|&i| window_ok[i]) {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        total += sum / windows as f64;
    }
    Ok(total / ch as f64)
}

/// Mean PSNR and SSIM over the overlaps of consecutive images on a shared
/// canvas, with the per-pair values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapMetrics {
    pub psnr: f64,
    pub ssim: f64,
    pub pairs: Vec<(f64, f64)>,
}

pub fn overlap_metrics(warped: &[MaskedImage]) -> Result<OverlapMetrics> {
    if warped.len() < 2 {
        return Err(Error::InvalidArgument("overlap metrics need at least two images".into()));
    }
    let pairs = warped
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let tag = |e: Error| match e {
                Error::NoOverlap(_) => Error::NoOverlap(format!("({i}, {}): warped images do not overlap", i + 1)),
                other => other,
            };
            Ok((psnr(&w[0], &w[1]).map_err(tag)?, ssim(&w[0], &w[1]).map_err(tag)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = pairs.len() as f64;
    Ok(OverlapMetrics {
        psnr: pairs.iter().map(|p| p.0).sum::<f64>() / n,
        ssim: pairs.iter().map(|p| p.1).sum::<f64>() / n,
        pairs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Bucket {
    Easy,
    Moderate,
    Hard,
}

impl fmt::Display for Bucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Bucket::Easy => "easy",
            Bucket::Moderate => "moderate",
            Bucket::Hard => "hard",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub set: String,
    pub n_images: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub bucket: Option<Bucket>,
    /// Enabled pipeline features, e.g. `cyl+shape+size+fold`.
    pub toggles: String,
}

/// Number of rows in the easy, moderate and hard buckets for `n` rows.
pub fn bucket_counts(n: usize) -> (usize, usize, usize) {
    if n == 0 {
        return (0, 0, 0);
    }
    let third = (0.3 * n as f64).round() as usize;
    let easy = third.max(1).min(n);
    let hard = third.min(n - easy);
    (easy, n - easy - hard, hard)
}

/// Sorts rows by PSNR, best first (ties keep input order), and labels the
/// top 30% easy, the bottom 30% hard and the rest moderate.
pub fn bucketize(mut rows: Vec<MetricRow>) -> Vec<MetricRow> {
    rows.sort_by(|a, b| b.psnr.total_cmp(&a.psnr));
    let (easy, moderate, _) = bucket_counts(rows.len());
    for (i, r) in rows.iter_mut().enumerate() {
        r.bucket = Some(if i < easy {
            Bucket::Easy
        } else if i < easy + moderate {
            Bucket::Moderate
        } else {
            Bucket::Hard
        });
    }
    rows
}

/// Formats a metric for CSV output; infinite PSNR is written as `inf`.
pub fn format_metric(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.6}")
    }
}

pub fn parse_metric(s: &str) -> Option<f64> {
    match s.trim() {
        "inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        t => t.parse().ok(),
    }
}

pub const REPORT_HEADER: &str = "set,n,psnr,ssim,bucket,toggles";

pub fn rows_to_csv(rows: &[MetricRow]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.set,
            r.n_images,
            format_metric(r.psnr),
            format_metric(r.ssim),
            r.bucket.map(|b| b.to_string()).unwrap_or_default(),
            r.toggles
        ));
    }
    out
}

pub fn write_csv(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// One cell of the ablation table: a toggle combination stitched over
/// `n_images`-wide windows of every set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub toggles: Toggles,
    pub n_images: usize,
    /// Means over the sets that stitched; `None` when all failed.
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    /// Final shape, size and fold losses averaged over pairs and sets.
    pub shape: Option<f64>,
    pub size: Option<f64>,
    pub fold: Option<f64>,
    /// Mean edge-length variance of the two outermost warped grids.
    pub edge_variance: Option<f64>,
    pub stitched: usize,
    pub failures: Vec<String>,
}

pub const ABLATION_HEADER: &str = "toggles,n,psnr,ssim,shape_loss,size_loss,fold_loss,edge_variance,stitched,failed";

pub fn ablation_to_csv(rows: &[AblationRow]) -> String {
    let opt = |v: Option<f64>| v.map(format_metric).unwrap_or_default();
    let mut out = String::from(ABLATION_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.toggles.label(),
            r.n_images,
            opt(r.psnr),
            opt(r.ssim),
            opt(r.shape),
            opt(r.size),
            opt(r.fold),
            opt(r.edge_variance),
            r.stitched,
            r.failures.len()
        ));
    }
    out
}

/// The `n` consecutive images of `set` centered on its middle.
pub fn centered_window(set: &SurroundSet, n: usize) -> Result<SurroundSet> {
    let total = set.images.len();
    if n < 2 || n > total {
        return Err(Error::InvalidArgument(format!("cannot take {n} of {total} images")));
    }
    let start = (total - n) / 2;
    let range = start..start + n;
    let mut sub = SurroundSet::new(
        set.images[range.clone()].to_vec(),
        Some(set.intrinsics[range.clone()].to_vec()),
        set.cylindrical,
    )?;
    sub.names = set.names[range].to_vec();
    Ok(sub)
}

/// Stitches every set under every toggle combination for each window size
/// `2..=N` (`N` = smallest set size). Rows are ordered by toggles, then `n`.
/// Pipeline errors become failed cells.
pub fn run_ablation(sets: &[SurroundSet], toggles: &[Toggles], base: &StitchConfig) -> Result<Vec<AblationRow>> {
    let max_n = sets
        .iter()
        .map(|s| s.images.len())
        .min()
        .ok_or_else(|| Error::InvalidArgument("ablation needs at least one set".into()))?;
    let mut rows = Vec::new();
    for t in toggles {
        let cfg = t.apply(base);
        cfg.validate()?;
        for n in 2..=max_n {
            let outcomes: Vec<Result<StitchResult>> = sets
                .par_iter()
                .map(|set| stitch_set(&centered_window(set, n)?, &cfg))
                .collect();
            let mut acc = [0.0; 6];
            let mut stitched = 0usize;
            let mut failures = Vec::new();
            for (i, o) in outcomes.into_iter().enumerate() {
                match o {
                    Ok(r) => {
                        let l = r.mean_final_loss();
                        let g = &r.rendering.grids;
                        let var = (edge_length_variance(&g[0]) + edge_length_variance(&g[g.len() - 1])) / 2.0;
                        for (a, v) in acc.iter_mut().zip([r.metrics.psnr, r.metrics.ssim, l.shape, l.size, l.fold, var]) {
                            *a += v;
                        }
                        stitched += 1;
                    }
                    Err(e) => failures.push(format!("set {i}: {e}")),
                }
            }
            let mean = |k: usize| (stitched > 0).then(|| acc[k] / stitched as f64);
            rows.push(AblationRow {
                toggles: *t,
                n_images: n,
                psnr: mean(0),
                ssim: mean(1),
                shape: mean(2),
                size: mean(3),
                fold: mean(4),
                edge_variance: mean(5),
                stitched,
                failures,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(psnr: f64) -> MetricRow {
        MetricRow {
            set: format!("s{psnr}"),
            n_images: 2,
            psnr,
            ssim: 0.5,
            bucket: None,
            toggles: String::new(),
        }
    }

    #[test]
    fn psnr_constants() {
        let a = MaskedImage::filled(8, 8, 3, 0.0, 1.0);
        let b = MaskedImage::filled(8, 8, 3, 0.1, 1.0);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let empty = MaskedImage::filled(8, 8, 3, 0.0, 0.0);
        assert!(matches!(psnr(&a, &empty), Err(Error::NoOverlap(_))));
    }

    #[test]
    fn ssim_identity_and_negative() {
        let a = MaskedImage::from_fn(32, 32, 1, |x, y| ([if (x / 3 + y / 3) % 2 == 0 { 0.1 } else { 0.9 }, 0.0, 0.0], 1.0));
        let neg = MaskedImage::from_fn(32, 32, 1, |x, y| ([1.0 - a.pixel(x, y)[0], 0.0, 0.0], 1.0));
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!(ssim(&a, &neg).unwrap() < 0.0);
    }

    #[test]
    fn ssim_needs_a_full_window() {
        let a = MaskedImage::filled(10, 30, 1, 0.5, 1.0);
        assert!(matches!(ssim(&a, &a), Err(Error::NoOverlap(_))));
    }

    #[test]
    fn buckets_follow_thirty_forty_thirty() {
        assert_eq!(bucket_counts(10), (3, 4, 3));
        assert_eq!(bucket_counts(1), (1, 0, 0));
        let rows = bucketize((0..10).map(|i| row(i as f64)).collect());
        assert_eq!(rows[0].psnr, 9.0);
        let count = |b| rows.iter().filter(|r| r.bucket == Some(b)).count();
        assert_eq!((count(Bucket::Easy), count(Bucket::Moderate), count(Bucket::Hard)), (3, 4, 3));
    }

    #[test]
    fn ties_keep_input_order() {
        let mut rows: Vec<MetricRow> = (0..4).map(|_| row(30.0)).collect();
        for (i, r) in rows.iter_mut().enumerate() {
            r.set = format!("r{i}");
        }
        let out = bucketize(rows);
        let names: Vec<&str> = out.iter().map(|r| r.set.as_str()).collect();
        assert_eq!(names, ["r0", "r1", "r2", "r3"]);
        assert_eq!(out[0].bucket, Some(Bucket::Easy));
        assert_eq!(out[3].bucket, Some(Bucket::Hard));
    }

    #[test]
    fn csv_formats_infinity() {
        let text = rows_to_csv(&[row(f64::INFINITY)]);
        assert!(text.lines().nth(1).unwrap().contains(",inf,"));
        assert_eq!(parse_metric("inf"), Some(f64::INFINITY));
    }
}
