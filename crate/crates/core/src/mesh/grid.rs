use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::homography::Homography;

/// `(U+1) x (V+1)` control points of a mesh warp, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlGrid {
    rows: usize,
    cols: usize,
    points: Vec<[f64; 2]>,
    source_width: f64,
    source_height: f64,
}

impl ControlGrid {
    pub fn new(
        rows: usize,
        cols: usize,
        points: Vec<[f64; 2]>,
        source_width: f64,
        source_height: f64,
    ) -> Result<Self> {
        if rows < 2 || cols < 2 {
            return Err(Error::InvalidArgument(format!(
                "a control grid needs at least 2x2 points, got {rows}x{cols}"
            )));
        }
        if points.len() != rows * cols {
            return Err(Error::InvalidArgument(format!(
                "expected {} control points, got {}",
                rows * cols,
                points.len()
            )));
        }
        if points.iter().any(|p| !(p[0].is_finite() && p[1].is_finite())) {
            return Err(Error::InvalidArgument("control points must be finite".into()));
        }
        if !(source_width > 0.0 && source_height > 0.0) {
            return Err(Error::InvalidArgument("grid source size must be positive".into()));
        }
        Ok(Self {
            rows,
            cols,
            points,
            source_width,
            source_height,
        })
    }

    /// Number of cell rows `U`.
    pub fn u(&self) -> usize {
        self.rows - 1
    }

    /// Number of cell columns `V`.
    pub fn v(&self) -> usize {
        self.cols - 1
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn source_width(&self) -> f64 {
        self.source_width
    }

    pub fn source_height(&self) -> f64 {
        self.source_height
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn points_mut(&mut self) -> &mut [[f64; 2]] {
        &mut self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.cols + j
    }

    #[inline]
    pub fn point(&self, i: usize, j: usize) -> [f64; 2] {
        self.points[self.index(i, j)]
    }

    pub fn with_points(&self, points: Vec<[f64; 2]>) -> Result<Self> {
        Self::new(
            self.rows,
            self.cols,
            points,
            self.source_width,
            self.source_height,
        )
    }

    pub fn translated(&self, tx: f64, ty: f64) -> Self {
        let mut g = self.clone();
        for p in &mut g.points {
            p[0] += tx;
            p[1] += ty;
        }
        g
    }

    /// Adds per-point displacements.
    pub fn displaced(&self, residual: &[[f64; 2]]) -> Result<Self> {
        if residual.len() != self.points.len() {
            return Err(Error::InvalidArgument(format!(
                "residual has {} vectors for a grid of {} points",
                residual.len(),
                self.points.len()
            )));
        }
        let points = self
            .points
            .iter()
            .zip(residual)
            .map(|(p, r)| [p[0] + r[0], p[1] + r[1]])
            .collect();
        self.with_points(points)
    }

    /// Same grid with every coordinate multiplied by `s` (used to move between
    /// pyramid levels).
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            points: self.points.iter().map(|p| [p[0] * s, p[1] * s]).collect(),
            source_width: self.source_width * s,
            source_height: self.source_height * s,
        }
    }
}

/// Evenly divides a `width x height` frame into `u` rows and `v` columns of cells.
pub fn make_uniform_grid(u: usize, v: usize, width: f64, height: f64) -> Result<ControlGrid> {
    if u == 0 || v == 0 {
        return Err(Error::InvalidArgument(format!(
            "grid needs at least one cell per axis, got U={u} V={v}"
        )));
    }
    let mut points = Vec::with_capacity((u + 1) * (v + 1));
    for i in 0..=u {
        for j in 0..=v {
            points.push([j as f64 * width / v as f64, i as f64 * height / u as f64]);
        }
    }
    ControlGrid::new(u + 1, v + 1, points, width, height)
}

/// Maps every control point through `h` with perspective division.
pub fn apply_homography_to_grid(g: &ControlGrid, h: &Homography) -> Result<ControlGrid> {
    let points = g
        .points()
        .iter()
        .map(|p| {
            h.apply(p[0], p[1]).map(|(x, y)| [x, y]).ok_or_else(|| {
                Error::DegenerateWarp(format!(
                    "control point ({:.3}, {:.3}) maps to the line at infinity",
                    p[0], p[1]
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    g.with_points(points)
}

/// Integer axis-aligned box `[x0, x1] x [y0, y1]` in canvas coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x0: i64,
    pub y0: i64,
    pub x1: i64,
    pub y1: i64,
}

impl BoundingBox {
    pub fn width(&self) -> usize {
        (self.x1 - self.x0).max(0) as usize
    }

    pub fn height(&self) -> usize {
        (self.y1 - self.y0).max(0) as usize
    }

    /// Box covering the raster `[0, w] x [0, h]`.
    pub fn from_size(w: usize, h: usize) -> Self {
        Self {
            x0: 0,
            y0: 0,
            x1: w as i64,
            y1: h as i64,
        }
    }

    pub fn union(&self, other: &BoundingBox) -> BoundingBox {
        BoundingBox {
            x0: self.x0.min(other.x0),
            y0: self.y0.min(other.y0),
            x1: self.x1.max(other.x1),
            y1: self.y1.max(other.y1),
        }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 as f64 && x <= self.x1 as f64 && y >= self.y0 as f64 && y <= self.y1 as f64
    }
}

/// Integer box containing every control point of every grid, padded by 1 px.
pub fn warped_bounds(grids: &[ControlGrid]) -> Result<BoundingBox> {
    let mut it = grids.iter().flat_map(|g| g.points().iter());
    let first = it
        .next()
        .ok_or_else(|| Error::InvalidArgument("warped_bounds needs at least one grid".into()))?;
    let (mut min_x, mut min_y, mut max_x, mut max_y) = (first[0], first[1], first[0], first[1]);
    for p in it {
        min_x = min_x.min(p[0]);
        min_y = min_y.min(p[1]);
        max_x = max_x.max(p[0]);
        max_y = max_y.max(p[1]);
    }
    Ok(BoundingBox {
        x0: min_x.floor() as i64 - 1,
        y0: min_y.floor() as i64 - 1,
        x1: max_x.ceil() as i64 + 1,
        y1: max_y.ceil() as i64 + 1,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn single_cell_grid_has_frame_corners() {
        let g = make_uniform_grid(1, 1, 100.0, 100.0).unwrap();
        assert_eq!(
            g.points(),
            &[[0.0, 0.0], [100.0, 0.0], [0.0, 100.0], [100.0, 100.0]]
        );
    }

    #[test]
    fn two_by_two_grid_center() {
        let g = make_uniform_grid(2, 2, 100.0, 100.0).unwrap();
        assert_eq!(g.point(1, 1), [50.0, 50.0]);
    }

    #[test]
    fn horizontal_edges_are_uniform() {
        let (u, v, w, h) = (5, 7, 640.0, 480.0);
        let g = make_uniform_grid(u, v, w, h).unwrap();
        for i in 0..=u {
            for j in 0..v {
                let a = g.point(i, j);
                let b = g.point(i, j + 1);
                assert!((b[0] - a[0] - w / v as f64).abs() < 1e-12);
                assert_eq!(b[1] - a[1], 0.0);
            }
        }
    }

    #[test]
    fn zero_cells_rejected() {
        assert!(matches!(
            make_uniform_grid(0, 3, 10.0, 10.0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn identity_and_translation_homographies() {
        let g = make_uniform_grid(3, 4, 120.0, 90.0).unwrap();
        assert_eq!(apply_homography_to_grid(&g, &Homography::identity()).unwrap(), g);
        let t = apply_homography_to_grid(&g, &Homography::translation(5.0, -2.0)).unwrap();
        for (a, b) in g.points().iter().zip(t.points()) {
            assert!((b[0] - a[0] - 5.0).abs() < 1e-12 && (b[1] - a[1] + 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn points_at_infinity_are_degenerate() {
        let g = make_uniform_grid(1, 1, 10.0, 10.0).unwrap();
        // w = 1 - x/10 vanishes at x = 10.
        let h = Homography::from_row_major([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, -0.1, 0.0, 1.0]);
        assert!(matches!(
            apply_homography_to_grid(&g, &h),
            Err(Error::DegenerateWarp(_))
        ));
    }

    #[test]
    fn single_grid_bounds_are_padded() {
        let g = make_uniform_grid(4, 4, 64.0, 48.0).unwrap();
        let b = warped_bounds(&[g]).unwrap();
        assert_eq!(
            b,
            BoundingBox {
                x0: -1,
                y0: -1,
                x1: 65,
                y1: 49
            }
        );
    }

    #[test]
    fn disjoint_grids_union() {
        let g = make_uniform_grid(2, 2, 10.0, 10.0).unwrap();
        let b = warped_bounds(&[g.clone(), g.translated(100.0, 50.0)]).unwrap();
        assert_eq!(
            b,
            BoundingBox {
                x0: -1,
                y0: -1,
                x1: 111,
                y1: 61
            }
        );
        assert!(warped_bounds(&[]).is_err());
    }

    proptest! {
        #[test]
        fn bounds_contain_every_point(
            pts in proptest::collection::vec((-500.0f64..500.0, -500.0f64..500.0), 9),
            shift in (-100.0f64..100.0, -100.0f64..100.0),
        ) {
            let points: Vec<[f64; 2]> = pts.iter().map(|&(x, y)| [x, y]).collect();
            let g = ControlGrid::new(3, 3, points, 10.0, 10.0).unwrap();
            let grids = [g.clone(), g.translated(shift.0, shift.1)];
            let b = warped_bounds(&grids).unwrap();
            let mut min = [f64::INFINITY; 2];
            let mut max = [f64::NEG_INFINITY; 2];
            for p in grids.iter().flat_map(|g| g.points()) {
                prop_assert!(b.contains(p[0], p[1]));
                for k in 0..2 {
                    min[k] = min[k].min(p[k]);
                    max[k] = max[k].max(p[k]);
                }
            }
            prop_assert_eq!(b.x0, min[0].floor() as i64 - 1);
            prop_assert_eq!(b.y1, max[1].ceil() as i64 + 1);
        }
    }
}
