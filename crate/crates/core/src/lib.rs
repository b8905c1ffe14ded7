//! Incremental RGB-D mesh mapping.
//!
//! Posed color and depth frames are turned into a compact vertex-colored
//! triangle mesh. Each frame contributes Shi-Tomasi samples that are
//! Delaunay-triangulated in the image, filtered for long and grazing
//! triangles, and lifted to 3D. A sliding window of recent frames is
//! projected into every new frame so that only unexplored or off-surface
//! regions receive new geometry.
//!
//! Around the core sit a synthetic underwater degradation harness, a
//! classical enhancement baseline, trajectory and map evaluation, TUM-style
//! dataset I/O and the `meshmap` command line.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod dataset_io;
pub mod delaunay;
pub mod evaluation;
pub mod features;
pub mod frame;
pub mod geometry;
pub mod map_expansion;
pub mod mesh_builder;
pub mod synthetic;
pub mod underwater;
