//! Convex polyhedra, planar sections and isotropic uniform random (IUR) planes.

mod polyhedron;
mod sampling;
mod section;

pub use polyhedron::{Polyhedron, ShapeKey};
pub use sampling::{
    hitting_probability, mean_width, sample_hemisphere, sample_iur_plane, IurSampler,
    DEFAULT_MEAN_WIDTH_DIRECTIONS,
};
pub use section::{polygon_area, section_area, section_polygon, Plane};

/// 3-vector used for points and directions.
pub type Vec3 = nalgebra::Vector3<f64>;

/// Geometric tolerance for tangency, planarity and convexity tests, relative
/// to the body's enclosing radius.
pub const TAU_GEOM: f64 = 1e-9;
