//! Gel surface model: radial depth fields, indentation by ray casting,
//! volume-conserving bulge and the 8-bit depth codec.

mod bulge;
mod codec;
pub mod mesh;
mod raycast;

pub use bulge::{apply_bulge, bulge_field, BulgeResult};
pub use codec::{DepthCodec, DepthSidecar, EncodedDepth};
pub use raycast::{analytic_sphere_indent, raycast_indent, Indentation, IndenterShape, MeshIndenter, PoseFile};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{exact_sum, Vec3};
use crate::optics::CameraModel;

/// Hemispherical gel seen from its optical center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorGeometry {
    /// Undeformed radial distance in mm.
    pub r_nominal: f64,
    pub d_min: f64,
    pub d_max: f64,
    pub cap_half_angle_deg: f64,
    /// Direction sampling, shared with the interior camera.
    pub grid: CameraModel,
}

impl Default for SensorGeometry {
    fn default() -> Self {
        SensorGeometry {
            r_nominal: 15.5,
            d_min: 12.23,
            d_max: 16.88,
            cap_half_angle_deg: 90.0,
            grid: CameraModel::default(),
        }
    }
}

impl SensorGeometry {
    pub fn with_grid(size: usize) -> Self {
        SensorGeometry {
            grid: CameraModel::square(size),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if !(self.d_min < self.r_nominal && self.r_nominal < self.d_max) {
            return Err(Error::invalid("geometry requires d_min < r_nominal < d_max"));
        }
        if !(self.cap_half_angle_deg > 0.0 && self.cap_half_angle_deg <= self.grid.fov_deg * 0.5) {
            return Err(Error::invalid("cap half angle must lie inside the field of view"));
        }
        Ok(())
    }

    pub fn cap_half_angle(&self) -> f64 {
        self.cap_half_angle_deg.to_radians()
    }

    pub fn on_cap(&self, row: usize, col: usize) -> bool {
        self.grid.pixel_theta(row, col) <= self.cap_half_angle()
    }

    /// Direction, solid angle and cap membership of every grid sample.
    pub fn samples(&self) -> Vec<DirectionSample> {
        let g = &self.grid;
        let cap = self.cap_half_angle();
        let mut out = Vec::with_capacity(g.width * g.height);
        for row in 0..g.height {
            for col in 0..g.width {
                out.push(DirectionSample {
                    dir: g.pixel_direction(row, col),
                    solid_angle: g.pixel_solid_angle(row, col),
                    on_cap: g.pixel_theta(row, col) <= cap,
                });
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DirectionSample {
    pub dir: Vec3,
    pub solid_angle: f64,
    pub on_cap: bool,
}

/// Radial distance (mm) from the optical center along each grid direction.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl DepthMap {
    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        DepthMap {
            width,
            height,
            values: vec![value; width * height],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn max_abs_diff(&self, other: &DepthMap) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Rotate the map by +90 degrees about the optical axis.
    pub fn rotated_90(&self) -> DepthMap {
        assert_eq!(self.width, self.height, "rotation needs a square grid");
        let n = self.width;
        let mut out = DepthMap::filled(n, n, 0.0);
        for row in 0..n {
            for col in 0..n {
                out.values[col * n + (n - 1 - row)] = self.get(row, col);
            }
        }
        out
    }
}

/// Constant map at the nominal radius.
pub fn undeformed(geom: &SensorGeometry) -> DepthMap {
    DepthMap::filled(geom.grid.width, geom.grid.height, geom.r_nominal)
}

/// Enclosed volume `sum r^3 / 3 dOmega` over the cap, in mm^3.
pub fn enclosed_volume(depth: &DepthMap, geom: &SensorGeometry) -> f64 {
    let samples = geom.samples();
    exact_sum(
        samples
            .iter()
            .zip(&depth.values)
            .filter(|(s, _)| s.on_cap)
            .map(|(s, &r)| r * r * r / 3.0 * s.solid_angle),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn undeformed_is_nominal() {
        let g = SensorGeometry::with_grid(16);
        assert!(undeformed(&g).values.iter().all(|&v| v == 15.5));
        let one = SensorGeometry::with_grid(1);
        assert_eq!(undeformed(&one).values, vec![15.5]);
    }

    #[test]
    fn default_geometry_is_valid() {
        let g = SensorGeometry::default();
        g.validate().unwrap();
        assert!((g.d_max - g.d_min - 4.65).abs() < 1e-12);
    }

    #[test]
    fn hemisphere_volume_matches_closed_form() {
        let g = SensorGeometry::with_grid(256);
        let v = enclosed_volume(&undeformed(&g), &g);
        let exact = 2.0 * std::f64::consts::PI * 15.5f64.powi(3) / 3.0;
        assert!((v - exact).abs() / exact < 5e-3, "{v} vs {exact}");
    }

    #[test]
    fn rotation_of_a_map_cycles() {
        let mut m = DepthMap::filled(4, 4, 0.0);
        for (i, v) in m.values.iter_mut().enumerate() {
            *v = i as f64;
        }
        let r4 = m.rotated_90().rotated_90().rotated_90().rotated_90();
        assert_eq!(m, r4);
    }
}
