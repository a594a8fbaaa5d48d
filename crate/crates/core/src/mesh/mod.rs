//! Control grids, homographies and thin-plate-spline mesh warping.

pub mod grid;
pub mod homography;
pub mod projective;
pub mod tps;

pub use grid::{apply_homography_to_grid, make_uniform_grid, warped_bounds, BoundingBox, ControlGrid};
pub use homography::{dlt_homography, four_pt_to_matrix, frame_corners, FourPtOffsets, Homography};
pub use projective::{homography_warp, HomographyWarp};
pub use tps::{tps_warp, ConvexHull, ThinPlateSpline, TpsWarp};
