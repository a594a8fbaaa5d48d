//! Thin-plate-spline mesh warping with an adjoint pass for control-point
//! gradients.

use nalgebra::{DMatrix, Dyn, LU};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::MaskedImage;
use crate::mesh::grid::{BoundingBox, ControlGrid};

/// Control points closer than this are treated as coincident.
pub const MIN_CONTROL_SEPARATION: f64 = 1e-9;

/// `r^2 log r` written in terms of `s = r^2`.
#[inline]
fn kernel(s: f64) -> f64 {
    if s > 0.0 {
        0.5 * s * s.ln()
    } else {
        0.0
    }
}

/// Exact (unregularized) 2-D thin-plate spline interpolant.
///
/// The system is solved in coordinates normalized by the centers' mean and
/// spread; the interpolant itself does not depend on that choice.
pub struct ThinPlateSpline {
    mean: [f64; 2],
    scale: f64,
    centers: Vec<[f64; 2]>,
    coeffs: Vec<[f64; 2]>,
    affine: [[f64; 2]; 3],
    lu: LU<f64, Dyn, Dyn>,
}

impl ThinPlateSpline {
    /// Fits the spline with `f(centers[k]) = values[k]`.
    pub fn fit(centers: &[[f64; 2]], values: &[[f64; 2]]) -> Result<Self> {
        let n = centers.len();
        if n < 3 || values.len() != n {
            return Err(Error::InvalidArgument(
                "thin-plate spline needs at least 3 matching control pairs".into(),
            ));
        }
        for i in 0..n {
            for j in i + 1..n {
                let dx = centers[i][0] - centers[j][0];
                let dy = centers[i][1] - centers[j][1];
                if dx.hypot(dy) < MIN_CONTROL_SEPARATION {
                    return Err(Error::DegenerateWarp(format!(
                        "control points {i} and {j} coincide"
                    )));
                }
            }
        }
        let mut mean = [0.0; 2];
        for c in centers {
            mean[0] += c[0] / n as f64;
            mean[1] += c[1] / n as f64;
        }
        let spread = centers
            .iter()
            .map(|c| (c[0] - mean[0]).powi(2) + (c[1] - mean[1]).powi(2))
            .sum::<f64>()
            / n as f64;
        let scale = if spread > 0.0 { spread.sqrt() } else { 1.0 };
        let norm: Vec<[f64; 2]> = centers
            .iter()
            .map(|c| [(c[0] - mean[0]) / scale, (c[1] - mean[1]) / scale])
            .collect();

        let m = n + 3;
        let mut l = DMatrix::<f64>::zeros(m, m);
        for i in 0..n {
            for j in 0..i {
                let s = (norm[i][0] - norm[j][0]).powi(2) + (norm[i][1] - norm[j][1]).powi(2);
                let k = kernel(s);
                l[(i, j)] = k;
                l[(j, i)] = k;
            }
            l[(i, n)] = 1.0;
            l[(i, n + 1)] = norm[i][0];
            l[(i, n + 2)] = norm[i][1];
            l[(n, i)] = 1.0;
            l[(n + 1, i)] = norm[i][0];
            l[(n + 2, i)] = norm[i][1];
        }
        let mut rhs = DMatrix::<f64>::zeros(m, 2);
        for (i, v) in values.iter().enumerate() {
            rhs[(i, 0)] = v[0];
            rhs[(i, 1)] = v[1];
        }
        let lu = l.lu();
        let sol = lu
            .solve(&rhs)
            .filter(|s| s.iter().all(|v| v.is_finite()))
            .ok_or_else(|| Error::DegenerateWarp("thin-plate spline system is singular".into()))?;
        let coeffs = (0..n).map(|i| [sol[(i, 0)], sol[(i, 1)]]).collect();
        let affine = std::array::from_fn(|r| [sol[(n + r, 0)], sol[(n + r, 1)]]);
        Ok(Self {
            mean,
            scale,
            centers: norm,
            coeffs,
            affine,
            lu,
        })
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    #[inline]
    fn normalize(&self, x: f64, y: f64) -> (f64, f64) {
        ((x - self.mean[0]) / self.scale, (y - self.mean[1]) / self.scale)
    }

    #[inline]
    pub fn eval(&self, x: f64, y: f64) -> [f64; 2] {
        let (qx, qy) = self.normalize(x, y);
        let a = &self.affine;
        let mut out = [
            a[0][0] + a[1][0] * qx + a[2][0] * qy,
            a[0][1] + a[1][1] * qx + a[2][1] * qy,
        ];
        for (c, w) in self.centers.iter().zip(&self.coeffs) {
            let s = (qx - c[0]).powi(2) + (qy - c[1]).powi(2);
            let k = kernel(s);
            out[0] += w[0] * k;
            out[1] += w[1] * k;
        }
        out
    }

    /// Adds the contribution of `d loss / d f(x, y) = g` to `acc`.
    #[inline]
    fn accumulate(&self, acc: &mut TpsAdjoint, x: f64, y: f64, g: [f64; 2]) {
        let (qx, qy) = self.normalize(x, y);
        acc.affine[0][0] += g[0];
        acc.affine[0][1] += g[1];
        acc.affine[1][0] += g[0] * qx;
        acc.affine[1][1] += g[1] * qx;
        acc.affine[2][0] += g[0] * qy;
        acc.affine[2][1] += g[1] * qy;
        for k in 0..self.centers.len() {
            let c = self.centers[k];
            let (dx, dy) = (c[0] - qx, c[1] - qy);
            let s = dx * dx + dy * dy;
            if s <= 0.0 {
                continue;
            }
            let ln = s.ln();
            let phi = 0.5 * s * ln;
            acc.coeffs[k][0] += g[0] * phi;
            acc.coeffs[k][1] += g[1] * phi;
            let gw = g[0] * self.coeffs[k][0] + g[1] * self.coeffs[k][1];
            let f = gw * (ln + 1.0);
            acc.centers[k][0] += f * dx;
            acc.centers[k][1] += f * dy;
        }
    }

    /// Converts accumulated upstream gradients into gradients with respect to
    /// the (unnormalized) control-point positions.
    fn finish(&self, acc: &TpsAdjoint) -> Vec<[f64; 2]> {
        let n = self.centers.len();
        let m = n + 3;
        let mut ybar = DMatrix::<f64>::zeros(m, 2);
        for k in 0..n {
            ybar[(k, 0)] = acc.coeffs[k][0];
            ybar[(k, 1)] = acc.coeffs[k][1];
        }
        for r in 0..3 {
            ybar[(n + r, 0)] = acc.affine[r][0];
            ybar[(n + r, 1)] = acc.affine[r][1];
        }
        // L is symmetric, so its adjoint solve reuses the same factorization.
        let lambda = self.lu.solve(&ybar).expect("factorization succeeded at fit time");
        let mut sol = DMatrix::<f64>::zeros(m, 2);
        for k in 0..n {
            sol[(k, 0)] = self.coeffs[k][0];
            sol[(k, 1)] = self.coeffs[k][1];
        }
        for r in 0..3 {
            sol[(n + r, 0)] = self.affine[r][0];
            sol[(n + r, 1)] = self.affine[r][1];
        }
        // dL-bar = -lambda * sol^T; only its symmetric part matters.
        let pair = |i: usize, j: usize| -> f64 {
            -(lambda[(i, 0)] * sol[(j, 0)]
                + lambda[(i, 1)] * sol[(j, 1)]
                + lambda[(j, 0)] * sol[(i, 0)]
                + lambda[(j, 1)] * sol[(i, 1)])
        };
        let mut grad = acc.centers.clone();
        for k in 0..n {
            let ck = self.centers[k];
            for j in 0..n {
                if j == k {
                    continue;
                }
                let cj = self.centers[j];
                let (dx, dy) = (ck[0] - cj[0], ck[1] - cj[1]);
                let s = dx * dx + dy * dy;
                if s <= 0.0 {
                    continue;
                }
                let f = pair(k, j) * (s.ln() + 1.0);
                grad[k][0] += f * dx;
                grad[k][1] += f * dy;
            }
            grad[k][0] += pair(k, n + 1);
            grad[k][1] += pair(k, n + 2);
        }
        for g in &mut grad {
            g[0] /= self.scale;
            g[1] /= self.scale;
        }
        grad
    }
}

#[derive(Clone)]
struct TpsAdjoint {
    coeffs: Vec<[f64; 2]>,
    affine: [[f64; 2]; 3],
    centers: Vec<[f64; 2]>,
}

impl TpsAdjoint {
    fn new(n: usize) -> Self {
        Self {
            coeffs: vec![[0.0; 2]; n],
            affine: [[0.0; 2]; 3],
            centers: vec![[0.0; 2]; n],
        }
    }

    fn add(&mut self, other: &TpsAdjoint) {
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            a[0] += b[0];
            a[1] += b[1];
        }
        for (a, b) in self.affine.iter_mut().zip(&other.affine) {
            a[0] += b[0];
            a[1] += b[1];
        }
        for (a, b) in self.centers.iter_mut().zip(&other.centers) {
            a[0] += b[0];
            a[1] += b[1];
        }
    }
}

/// Convex polygon used to clip the warped support.
#[derive(Debug, Clone)]
pub struct ConvexHull {
    vertices: Vec<[f64; 2]>,
}

impl ConvexHull {
    /// Andrew's monotone chain; vertices come out counter-clockwise.
    pub fn of(points: &[[f64; 2]]) -> Self {
        let mut pts: Vec<[f64; 2]> = points.to_vec();
        pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
        pts.dedup();
        if pts.len() < 3 {
            return Self { vertices: pts };
        }
        let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| {
            (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
        };
        let mut lower: Vec<[f64; 2]> = Vec::new();
        for &p in &pts {
            while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
                lower.pop();
            }
            lower.push(p);
        }
        let mut upper: Vec<[f64; 2]> = Vec::new();
        for &p in pts.iter().rev() {
            while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
                upper.pop();
            }
            upper.push(p);
        }
        lower.pop();
        upper.pop();
        lower.extend(upper);
        Self { vertices: lower }
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    /// Horizontal extent `[x_min, x_max]` of the hull on the line at height `y`.
    pub fn row_span(&self, y: f64) -> Option<(f64, f64)> {
        let n = self.vertices.len();
        if n < 3 {
            return None;
        }
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            let (ymin, ymax) = (a[1].min(b[1]), a[1].max(b[1]));
            if y < ymin || y > ymax {
                continue;
            }
            if a[1] == b[1] {
                lo = lo.min(a[0].min(b[0]));
                hi = hi.max(a[0].max(b[0]));
            } else {
                let t = (y - a[1]) / (b[1] - a[1]);
                let x = a[0] + t * (b[0] - a[0]);
                lo = lo.min(x);
                hi = hi.max(x);
            }
        }
        (lo <= hi).then_some((lo, hi))
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.row_span(y).is_some_and(|(lo, hi)| x >= lo && x <= hi)
    }
}

/// Dense inverse map from canvas pixels to source positions for one mesh warp.
pub struct TpsWarp {
    tps: ThinPlateSpline,
    hull: ConvexHull,
    canvas: BoundingBox,
}

impl TpsWarp {
    /// Prepares the warp that moves `src` control points onto `dst`. The spline
    /// is fitted in the inverse direction so every canvas pixel is sampled once.
    pub fn new(src: &ControlGrid, dst: &ControlGrid, canvas: BoundingBox) -> Result<Self> {
        if src.rows() != dst.rows() || src.cols() != dst.cols() {
            return Err(Error::InvalidArgument(format!(
                "source grid {}x{} and destination grid {}x{} differ",
                src.rows(),
                src.cols(),
                dst.rows(),
                dst.cols()
            )));
        }
        if canvas.width() == 0 || canvas.height() == 0 {
            return Err(Error::InvalidArgument("empty warp canvas".into()));
        }
        let tps = ThinPlateSpline::fit(dst.points(), src.points())?;
        Ok(Self {
            tps,
            hull: ConvexHull::of(dst.points()),
            canvas,
        })
    }

    pub fn canvas(&self) -> BoundingBox {
        self.canvas
    }

    pub fn hull(&self) -> &ConvexHull {
        &self.hull
    }

    /// Source position sampled for canvas pixel `(col, row)`, or `None` outside
    /// the warped support.
    #[inline]
    pub fn source_of(&self, col: usize, row: usize) -> Option<[f64; 2]> {
        let x = self.canvas.x0 as f64 + col as f64 + 0.5;
        let y = self.canvas.y0 as f64 + row as f64 + 0.5;
        self.hull.contains(x, y).then(|| self.tps.eval(x, y))
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
                    let s = self.tps.eval(x, y);
                    let smp = img.sample(s[0], s[1]);
                    if smp.mask > 0.0 {
                        mrow[col] = smp.mask.min(1.0);
                        prow[col * ch..(col + 1) * ch].copy_from_slice(&smp.value[..ch]);
                    }
                }
            });
        MaskedImage::from_parts_unchecked(w, h, ch, pixels, mask)
    }

    /// Gradient of a loss with respect to the destination control points,
    /// given the loss gradient with respect to the warped pixels
    /// (`d_value`, row-major with `channels` entries per pixel) and warped mask.
    pub fn backward(&self, img: &MaskedImage, d_value: &[f64], d_mask: &[f64]) -> Vec<[f64; 2]> {
        let (w, h) = (self.canvas.width(), self.canvas.height());
        let ch = img.channels();
        assert_eq!(d_value.len(), w * h * ch);
        assert_eq!(d_mask.len(), w * h);
        let n = self.tps.len();
        let partials: Vec<TpsAdjoint> = (0..h)
            .into_par_iter()
            .map(|row| {
                let mut acc = TpsAdjoint::new(n);
                let y = self.canvas.y0 as f64 + row as f64 + 0.5;
                for col in self.row_columns(row) {
                    let i = row * w + col;
                    let dv = &d_value[i * ch..(i + 1) * ch];
                    let dm = d_mask[i];
                    if dm == 0.0 && dv.iter().all(|&v| v == 0.0) {
                        continue;
                    }
                    let x = self.canvas.x0 as f64 + col as f64 + 0.5;
                    let s = self.tps.eval(x, y);
                    let g = img.sample_grad(s[0], s[1]);
                    if g.mask <= 0.0 {
                        continue;
                    }
                    let mut gs = [dm * g.dmask_dx, dm * g.dmask_dy];
                    for c in 0..ch {
                        gs[0] += dv[c] * g.dvalue_dx[c];
                        gs[1] += dv[c] * g.dvalue_dy[c];
                    }
                    self.tps.accumulate(&mut acc, x, y, gs);
                }
                acc
            })
            .collect();
        let mut total = TpsAdjoint::new(n);
        for p in &partials {
            total.add(p);
        }
        self.tps.finish(&total)
    }
}

/// Warps `img` so that the control points `src` land on `dst`, rendering onto
/// `canvas`. The output mask is zero outside the convex hull of `dst`.
pub fn tps_warp(
    img: &MaskedImage,
    src: &ControlGrid,
    dst: &ControlGrid,
    canvas: BoundingBox,
) -> Result<MaskedImage> {
    Ok(TpsWarp::new(src, dst, canvas)?.warp(img))
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::mesh::grid::make_uniform_grid;

    fn smooth(w: usize, h: usize) -> MaskedImage {
        MaskedImage::from_fn(w, h, 1, |x, y| {
            let (x, y) = (x as f64 + 0.5, y as f64 + 0.5);
            ([0.5 + 0.2 * (x / 9.0).sin() + 0.2 * (y / 7.0).cos(), 0.0, 0.0], 1.0)
        })
    }

    #[test]
    fn spline_interpolates_control_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let centers: Vec<[f64; 2]> = (0..20)
            .map(|_| [rng.gen_range(0.0..100.0), rng.gen_range(0.0..80.0)])
            .collect();
        let values: Vec<[f64; 2]> = (0..20)
            .map(|_| [rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0)])
            .collect();
        let tps = ThinPlateSpline::fit(&centers, &values).unwrap();
        for (c, v) in centers.iter().zip(&values) {
            let f = tps.eval(c[0], c[1]);
            assert!((f[0] - v[0]).abs() < 1e-8 && (f[1] - v[1]).abs() < 1e-8);
        }
    }

    #[test]
    fn spline_reproduces_affine_maps() {
        let g = make_uniform_grid(4, 5, 100.0, 80.0).unwrap();
        let affine = |p: [f64; 2]| [1.1 * p[0] - 0.2 * p[1] + 3.0, 0.1 * p[0] + 0.9 * p[1] - 4.0];
        let values: Vec<[f64; 2]> = g.points().iter().map(|&p| affine(p)).collect();
        let tps = ThinPlateSpline::fit(g.points(), &values).unwrap();
        for &(x, y) in &[(13.0, 17.0), (55.5, 70.25), (99.0, 1.0)] {
            let f = tps.eval(x, y);
            let e = affine([x, y]);
            assert!((f[0] - e[0]).abs() < 1e-8 && (f[1] - e[1]).abs() < 1e-8);
        }
    }

    #[test]
    fn coincident_controls_are_degenerate() {
        let pts = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 0.0]];
        assert!(matches!(
            ThinPlateSpline::fit(&pts, &pts),
            Err(Error::DegenerateWarp(_))
        ));
    }

    #[test]
    fn hull_row_spans() {
        let hull = ConvexHull::of(&[[0.0, 0.0], [10.0, 0.0], [0.0, 10.0], [10.0, 10.0], [5.0, 5.0]]);
        assert_eq!(hull.vertices().len(), 4);
        assert_eq!(hull.row_span(5.0), Some((0.0, 10.0)));
        assert!(hull.row_span(10.5).is_none());
        let tri = ConvexHull::of(&[[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]]);
        let (lo, hi) = tri.row_span(5.0).unwrap();
        assert!((lo - 0.0).abs() < 1e-12 && (hi - 5.0).abs() < 1e-12);
    }

    #[test]
    fn identity_warp_reproduces_image() {
        let img = smooth(40, 30);
        let g = make_uniform_grid(3, 4, 40.0, 30.0).unwrap();
        let out = tps_warp(&img, &g, &g, BoundingBox::from_size(40, 30)).unwrap();
        for y in 0..30 {
            for x in 0..40 {
                assert!((out.pixel(x, y)[0] - img.pixel(x, y)[0]).abs() < 1e-6);
                assert!((out.mask_at(x, y) - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn translation_warp_shifts_content() {
        let img = smooth(60, 40);
        let g = make_uniform_grid(4, 4, 60.0, 40.0).unwrap();
        let (tx, ty) = (5.25, -3.5);
        let dst = g.translated(tx, ty);
        let canvas = BoundingBox { x0: -10, y0: -10, x1: 70, y1: 50 };
        let out = tps_warp(&img, &g, &dst, canvas).unwrap();
        let mut checked = 0;
        for row in 0..out.height() {
            for col in 0..out.width() {
                let x = canvas.x0 as f64 + col as f64 + 0.5;
                let y = canvas.y0 as f64 + row as f64 + 0.5;
                let (sx, sy) = (x - tx, y - ty);
                if sx < 2.0 || sy < 2.0 || sx > 58.0 || sy > 38.0 {
                    continue;
                }
                let direct = img.sample(sx, sy);
                assert!((out.pixel(col, row)[0] - direct.value[0]).abs() < 1e-3);
                checked += 1;
            }
        }
        assert!(checked > 1000);
    }

    #[test]
    fn mask_support_stays_inside_hull() {
        let img = smooth(50, 50);
        let g = make_uniform_grid(3, 3, 50.0, 50.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let dst = g
            .with_points(
                g.points()
                    .iter()
                    .map(|p| [p[0] + rng.gen_range(-4.0..4.0), p[1] + rng.gen_range(-4.0..4.0)])
                    .collect(),
            )
            .unwrap();
        let canvas = BoundingBox { x0: -10, y0: -10, x1: 60, y1: 60 };
        let out = tps_warp(&img, &g, &dst, canvas).unwrap();
        let hull = ConvexHull::of(dst.points());
        for row in 0..out.height() {
            for col in 0..out.width() {
                if out.mask_at(col, row) > 0.0 {
                    let x = canvas.x0 as f64 + col as f64 + 0.5;
                    let y = canvas.y0 as f64 + row as f64 + 0.5;
                    assert!(hull.contains(x, y));
                }
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences_of_linear_functional() {
        // Loss = sum of weighted warped pixel values; smooth in the control points
        // away from hull-boundary events, which the interior weights avoid.
        let img = smooth(48, 36);
        let g = make_uniform_grid(3, 3, 48.0, 36.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let dst = g
            .with_points(
                g.points()
                    .iter()
                    .map(|p| [p[0] + rng.gen_range(-2.0..2.0), p[1] + rng.gen_range(-2.0..2.0)])
                    .collect(),
            )
            .unwrap();
        let canvas = BoundingBox::from_size(48, 36);
        let (w, h) = (canvas.width(), canvas.height());
        let weights: Vec<f64> = (0..w * h)
            .map(|i| {
                let (x, y) = (i % w, i / w);
                if (8..40).contains(&x) && (8..28).contains(&y) {
                    ((x * 7 + y * 13) % 11) as f64 / 11.0
                } else {
                    0.0
                }
            })
            .collect();
        let loss = |d: &ControlGrid| {
            let out = tps_warp(&img, &g, d, canvas).unwrap();
            out.pixels().iter().zip(&weights).map(|(p, w)| p * w).sum::<f64>()
        };
        let warp = TpsWarp::new(&g, &dst, canvas).unwrap();
        let grad = warp.backward(&img, &weights, &vec![0.0; w * h]);
        let eps = 1e-5;
        let mut num = 0.0;
        let mut den = 0.0;
        for k in 0..dst.len() {
            for a in 0..2 {
                let mut p = dst.points().to_vec();
                p[k][a] += eps;
                let lp = loss(&dst.with_points(p.clone()).unwrap());
                p[k][a] -= 2.0 * eps;
                let lm = loss(&dst.with_points(p).unwrap());
                let fd = (lp - lm) / (2.0 * eps);
                num += (fd - grad[k][a]).powi(2);
                den += grad[k][a].powi(2);
            }
        }
        assert!((num / den).sqrt() < 1e-4, "relative error {}", (num / den).sqrt());
    }
}
