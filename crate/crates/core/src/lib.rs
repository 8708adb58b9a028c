//! Carotid vessel-wall pseudo-labels from sparse cross-sectional
//! annotations, and contour-based evaluation of 2D wall segmentations.
//!
//! The pipeline samples cross-sections along a carotid centerline tree,
//! segments each one, lifts the contours to oriented 3D samples, solves a
//! screened Poisson problem for the lumen and outer-wall solids, and
//! voxelizes the result into a 3D label volume.

pub mod centerline;
pub mod cli;
pub mod contours;
pub mod error;
pub mod grid2d;
pub mod io;
pub mod metrics;
pub mod phantom;
pub mod reconstruction;
pub mod segmenter;
pub mod volume;

pub type Vec3 = nalgebra::Vector3<f64>;

pub use centerline::{Branch, CenterlineTree, PlanConfig, PolyLine3};
pub use contours::{Contour2D, ContourSet, OrientedPointCloud};
pub use error::{Error, Result};
pub use segmenter::{LabelMask2D, SegmenterBackend};
pub use volume::{Affine3, CrossSection, PlanePose, Volume3};
