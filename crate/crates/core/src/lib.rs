//! Raster-to-vector polygon extraction.
//!
//! The pipeline turns class masks into clean polygons in three steps:
//! boundary tracing ([`contours`]), contour reforming by simplification and
//! regular resampling ([`mcr`]), and per-point offset refinement plus vertex
//! selection ([`tracer`]). [`mcr`] also aligns reformed contours with
//! reference polygons to build per-point training labels, [`metrics`]
//! scores vector maps against references, and [`pyramid`] handles the
//! multi-scale window geometry for very large rasters.

pub mod contours;
pub mod geometry;
pub mod mcr;
pub mod metrics;
pub mod pyramid;
pub mod raster;
pub mod tracer;

pub use contours::{connected_components, extract_contours, Connectivity, Contour, ContourSet};
pub use geometry::{dp_simplify, interior_angles, resample_ring, signed_area, Point2, PolygonWithHoles, Ring};
pub use raster::{rasterize_polygon, MaskRaster};
