//! tactforge-core: simulation and calibration toolkit for hemispherical
//! optical tactile sensors.
//!
//! The crate is split along the data flow of a calibration run:
//!
//! 1. [`pattern`] builds the stippled, single-stroke gel texture.
//! 2. [`gelsim`] ray-casts indenters against the gel cap, adds bulging and
//!    owns the 8-bit depth codec.
//! 3. [`optics`] renders the interior fisheye camera image.
//! 4. [`wrench`] labels each contact with a 6-axis wrench.
//! 5. [`dataio`] filters frame streams and writes datasets.
//! 6. [`neural`] is a small autograd engine with the depth/wrench models.
//! 7. [`calib`] trains, pretrains and transfers those models.
//! 8. [`evalreport`] computes error statistics and writes reports.

pub mod calib;
pub mod config;
pub mod dataio;
pub mod error;
pub mod evalreport;
pub mod gelsim;
pub mod image;
pub mod math;
pub mod neural;
pub mod optics;
pub mod pattern;
pub mod wrench;

pub use error::{Error, Result};
pub use gelsim::{DepthCodec, DepthMap, IndenterShape, SensorGeometry};
pub use image::{GrayImage, RgbImage};
pub use math::{Quat, Vec3};
pub use optics::{CameraModel, LightRig, SurfaceMaterial};
pub use pattern::{PatternImage, PointSet, Tour};
pub use wrench::{FoundationParams, Wrench, WrenchRanges};

/// Semantic version of the on-disk formats written by this crate.
pub const FORMAT_VERSION: u32 = 1;
