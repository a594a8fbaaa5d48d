//! Planar homographies, the 4-pt corner-offset parameterization and the
//! normalized DLT that converts between them.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Determinant magnitude below which a homography is treated as singular.
pub const SINGULAR_DET: f64 = 1e-12;

/// 3x3 projective map, normalized so `m[2][2] = 1` whenever that entry is nonzero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 9]", into = "[f64; 9]")]
pub struct Homography {
    m: Matrix3<f64>,
}

impl From<[f64; 9]> for Homography {
    fn from(v: [f64; 9]) -> Self {
        Homography::from_row_major(v)
    }
}

impl From<Homography> for [f64; 9] {
    fn from(h: Homography) -> Self {
        h.to_row_major()
    }
}

impl Homography {
    pub fn identity() -> Self {
        Self {
            m: Matrix3::identity(),
        }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self::from_row_major([1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0, 1.0])
    }

    pub fn from_matrix(m: Matrix3<f64>) -> Self {
        let mut h = Self { m };
        h.normalize();
        h
    }

    pub fn from_row_major(v: [f64; 9]) -> Self {
        Self::from_matrix(Matrix3::from_row_slice(&v))
    }

    pub(crate) fn params(&self) -> SVector<f64, 8> {
        let m = &self.m;
        SVector::<f64, 8>::from_column_slice(&[
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
        ])
    }

    fn normalize(&mut self) {
        let s = self.m[(2, 2)];
        if s.abs() > f64::EPSILON {
            self.m /= s;
        }
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.m;
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ]
    }

    pub fn determinant(&self) -> f64 {
        self.m.determinant()
    }

    pub fn is_singular(&self) -> bool {
        self.determinant().abs() < SINGULAR_DET
    }

    /// Maps a point with perspective division; `None` on the line at infinity.
    #[inline]
    pub fn apply(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        let m = &self.m;
        let w = m[(2, 0)] * x + m[(2, 1)] * y + m[(2, 2)];
        if w.abs() < 1e-12 || !w.is_finite() {
            return None;
        }
        Some((
            (m[(0, 0)] * x + m[(0, 1)] * y + m[(0, 2)]) / w,
            (m[(1, 0)] * x + m[(1, 1)] * y + m[(1, 2)]) / w,
        ))
    }

    pub fn inverse(&self) -> Option<Homography> {
        if self.is_singular() {
            return None;
        }
        self.m.try_inverse().map(Homography::from_matrix)
    }

    /// Matrix product `self * rhs` (apply `rhs` first).
    pub fn compose(&self, rhs: &Homography) -> Homography {
        Homography::from_matrix(self.m * rhs.m)
    }

    /// Conjugation by a horizontal reflection `x -> width - x`.
    pub fn mirrored(&self, width: f64) -> Homography {
        let r = Matrix3::new(-1.0, 0.0, width, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        Homography::from_matrix(r * self.m * r)
    }
}

/// Displacements of the four frame corners in the order TL, TR, BL, BR.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FourPtOffsets {
    pub offsets: [[f64; 2]; 4],
    pub source_width: f64,
    pub source_height: f64,
}

impl FourPtOffsets {
    pub fn zero(width: f64, height: f64) -> Self {
        Self {
            offsets: [[0.0; 2]; 4],
            source_width: width,
            source_height: height,
        }
    }

    pub fn uniform(width: f64, height: f64, tx: f64, ty: f64) -> Self {
        Self {
            offsets: [[tx, ty]; 4],
            source_width: width,
            source_height: height,
        }
    }

    pub fn corners(&self) -> [[f64; 2]; 4] {
        frame_corners(self.source_width, self.source_height)
    }

    pub fn displaced_corners(&self) -> [[f64; 2]; 4] {
        let c = self.corners();
        std::array::from_fn(|k| [c[k][0] + self.offsets[k][0], c[k][1] + self.offsets[k][1]])
    }

    pub fn to_params(&self) -> [f64; 8] {
        std::array::from_fn(|i| self.offsets[i / 2][i % 2])
    }

    pub fn from_params(params: &[f64], width: f64, height: f64) -> Self {
        Self {
            offsets: std::array::from_fn(|k| [params[2 * k], params[2 * k + 1]]),
            source_width: width,
            source_height: height,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.offsets.iter().flatten().all(|v| v.is_finite())
    }
}

/// Corners of a `width x height` frame in TL, TR, BL, BR order.
pub fn frame_corners(width: f64, height: f64) -> [[f64; 2]; 4] {
    [[0.0, 0.0], [width, 0.0], [0.0, height], [width, height]]
}

/// Homography taking each frame corner to corner + offset.
pub fn four_pt_to_matrix(o: &FourPtOffsets) -> Result<Homography> {
    if !o.is_finite() {
        return Err(Error::SingularConfiguration("non-finite corner offsets".into()));
    }
    dlt_homography(&o.corners(), &o.displaced_corners())
}

/// Hartley normalization: zero mean, RMS distance sqrt(2).
fn normalizing_transform(pts: &[[f64; 2]; 4]) -> Matrix3<f64> {
    let (mut mx, mut my) = (0.0, 0.0);
    for p in pts {
        mx += p[0];
        my += p[1];
    }
    mx /= 4.0;
    my /= 4.0;
    let ms: f64 = pts
        .iter()
        .map(|p| (p[0] - mx).powi(2) + (p[1] - my).powi(2))
        .sum::<f64>()
        / 4.0;
    let s = if ms > 0.0 {
        std::f64::consts::SQRT_2 / ms.sqrt()
    } else {
        1.0
    };
    Matrix3::new(s, 0.0, -s * mx, 0.0, s, -s * my, 0.0, 0.0, 1.0)
}

fn has_collinear_triple(pts: &[[f64; 2]; 4]) -> bool {
    const TRIPLES: [[usize; 3]; 4] = [[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]];
    TRIPLES.iter().any(|t| {
        let (a, b, c) = (pts[t[0]], pts[t[1]], pts[t[2]]);
        let cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
        cross.abs() < 1e-9
    })
}

fn transform_all(t: &Matrix3<f64>, pts: &[[f64; 2]; 4]) -> [[f64; 2]; 4] {
    std::array::from_fn(|k| {
        let v = t * Vector3::new(pts[k][0], pts[k][1], 1.0);
        [v[0] / v[2], v[1] / v[2]]
    })
}

/// Normalized direct linear transform from four correspondences `src[k] -> dst[k]`.
pub fn dlt_homography(src: &[[f64; 2]; 4], dst: &[[f64; 2]; 4]) -> Result<Homography> {
    let ts = normalizing_transform(src);
    let td = normalizing_transform(dst);
    let ns = transform_all(&ts, src);
    let nd = transform_all(&td, dst);
    if has_collinear_triple(&ns) || has_collinear_triple(&nd) {
        return Err(Error::SingularConfiguration(
            "three of the four correspondences are collinear".into(),
        ));
    }
    if src == dst {
        return Ok(Homography::identity());
    }
    // 8x9 system padded to 9x9 so the SVD exposes the full null space.
    let mut a = SMatrix::<f64, 9, 9>::zeros();
    for k in 0..4 {
        let (x, y) = (ns[k][0], ns[k][1]);
        let (u, v) = (nd[k][0], nd[k][1]);
        let r = 2 * k;
        a.set_row(
            r,
            &SMatrix::<f64, 1, 9>::from_row_slice(&[-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u]),
        );
        a.set_row(
            r + 1,
            &SMatrix::<f64, 1, 9>::from_row_slice(&[0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]),
        );
    }
    let svd = a.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::SingularConfiguration("SVD did not converge".into()))?;
    let (imin, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc });
    let h = v_t.row(imin);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let td_inv = td
        .try_inverse()
        .ok_or_else(|| Error::SingularConfiguration("degenerate destination points".into()))?;
    let m = td_inv * hn * ts;
    if m[(2, 2)].abs() < 1e-14 {
        return Err(Error::SingularConfiguration(
            "homography maps the origin to infinity".into(),
        ));
    }
    let out = Homography::from_matrix(m);
    if out.is_singular() {
        return Err(Error::SingularConfiguration("singular homography".into()));
    }
    Ok(out)
}

/// A DLT solution together with the derivatives of its eight free entries
/// with respect to the source and destination correspondences.
///
/// Column `2k` of each Jacobian is the derivative with respect to the x
/// coordinate of correspondence `k`, column `2k+1` the y coordinate.
#[derive(Debug, Clone)]
pub struct DltJacobian {
    pub homography: Homography,
    pub d_src: SMatrix<f64, 8, 8>,
    pub d_dst: SMatrix<f64, 8, 8>,
}

/// Differentiates the four-point homography by implicit differentiation of
/// the `h33 = 1` linear system `A(src, dst) h = b(dst)`.
pub fn dlt_jacobian(src: &[[f64; 2]; 4], dst: &[[f64; 2]; 4]) -> Result<DltJacobian> {
    let homography = dlt_homography(src, dst)?;
    let h = homography.params();
    let mut a = SMatrix::<f64, 8, 8>::zeros();
    for k in 0..4 {
        let (x, y) = (src[k][0], src[k][1]);
        let (u, v) = (dst[k][0], dst[k][1]);
        a.set_row(
            2 * k,
            &SMatrix::<f64, 1, 8>::from_row_slice(&[x, y, 1.0, 0.0, 0.0, 0.0, -x * u, -y * u]),
        );
        a.set_row(
            2 * k + 1,
            &SMatrix::<f64, 1, 8>::from_row_slice(&[0.0, 0.0, 0.0, x, y, 1.0, -x * v, -y * v]),
        );
    }
    let lu = a.lu();
    // dF/dtheta for residual F = A h - b.
    let mut f_src = SMatrix::<f64, 8, 8>::zeros();
    let mut f_dst = SMatrix::<f64, 8, 8>::zeros();
    for k in 0..4 {
        let (x, y) = (src[k][0], src[k][1]);
        let (u, v) = (dst[k][0], dst[k][1]);
        let w = h[6] * x + h[7] * y + 1.0;
        f_src[(2 * k, 2 * k)] = h[0] - u * h[6];
        f_src[(2 * k, 2 * k + 1)] = h[1] - u * h[7];
        f_src[(2 * k + 1, 2 * k)] = h[3] - v * h[6];
        f_src[(2 * k + 1, 2 * k + 1)] = h[4] - v * h[7];
        f_dst[(2 * k, 2 * k)] = -w;
        f_dst[(2 * k + 1, 2 * k + 1)] = -w;
    }
    let d_src = -lu
        .solve(&f_src)
        .ok_or_else(|| Error::SingularConfiguration("singular DLT system".into()))?;
    let d_dst = -lu
        .solve(&f_dst)
        .ok_or_else(|| Error::SingularConfiguration("singular DLT system".into()))?;
    Ok(DltJacobian {
        homography,
        d_src,
        d_dst,
    })
}

/// Derivatives of the mapped point `H(x, y)` with respect to the eight free
/// entries of `H`. Returns the mapped point and the two gradient rows.
#[inline]
pub(crate) fn point_param_jacobian(h: &Homography, x: f64, y: f64) -> Option<([f64; 2], [[f64; 8]; 2])> {
    let m = h.matrix();
    let w = m[(2, 0)] * x + m[(2, 1)] * y + m[(2, 2)];
    if w.abs() < 1e-12 {
        return None;
    }
    let px = (m[(0, 0)] * x + m[(0, 1)] * y + m[(0, 2)]) / w;
    let py = (m[(1, 0)] * x + m[(1, 1)] * y + m[(1, 2)]) / w;
    let iw = 1.0 / w;
    Some((
        [px, py],
        [
            [x * iw, y * iw, iw, 0.0, 0.0, 0.0, -px * x * iw, -px * y * iw],
            [0.0, 0.0, 0.0, x * iw, y * iw, iw, -py * x * iw, -py * y * iw],
        ],
    ))
}
