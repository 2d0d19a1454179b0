//! Core kernels for turning multi-view tree imagery into simulatable geometry.
//!
//! The crate is organised by pipeline stage:
//!
//! 1. [`camera`] / [`pnp`] – pinhole cameras, rays, epipolar geometry and pose recovery.
//! 2. [`videosync`] – integer frame alignment of two video feeds.
//! 3. [`annotation`] – the branch annotation model, mask rasterization, crop datasets,
//!    saturation clustering and stereo transfer.
//! 4. [`flowfield`] – directional kernel bank, multiscale activations and per-pixel
//!    principal flow directions.
//! 5. [`medialaxis`] – projection/advection tracing of branch centerlines.
//! 6. [`multiview`] – lifting annotations to 3D branches.
//! 7. [`treegeom`] – skeletons, skinning, displacement, texturing, posing and
//!    rigid-body export.
//!
//! Conventions used everywhere:
//!
//! * Cameras map world to camera coordinates, `x_cam = R * x_world + t`.
//! * Pixel `(i, j)` has its center at the continuous coordinate `(i, j)`; `x` grows
//!   to the right and `y` grows downwards.
//! * Annotated and traced thicknesses stored on annotation vertices are radii in pixels.

// `!(x > 0.0)` style checks reject NaN on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod annotation;
pub mod camera;
pub mod flowfield;
pub mod io;
pub mod medialaxis;
pub mod multiview;
pub mod pnp;
pub mod raster;
pub mod spatial;
pub mod synthetic;
pub mod treegeom;
pub mod videosync;

pub use camera::{Camera, CameraError, CameraSet, Extrinsics, Intrinsics, Ray};
pub use raster::Grid;

pub type Vec2 = nalgebra::Vector2<f64>;
pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;
