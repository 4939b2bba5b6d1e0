use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Vec3;

/// Equidistant fisheye camera at the sensor origin looking along +z.
///
/// Pixel radius from the image center is `f * theta` with
/// `f = (min(H, W) / 2) / (fov / 2)`. Image x follows sensor x, image y
/// (row index, downwards) follows sensor y.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub width: usize,
    pub height: usize,
    pub fov_deg: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        CameraModel {
            width: 640,
            height: 640,
            fov_deg: 185.0,
        }
    }
}

impl CameraModel {
    pub fn square(size: usize) -> Self {
        CameraModel {
            width: size,
            height: size,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("camera resolution must be non-zero"));
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 360.0) {
            return Err(Error::invalid("camera fov must be in (0, 360) degrees"));
        }
        Ok(())
    }

    pub fn half_fov(&self) -> f64 {
        (self.fov_deg * 0.5).to_radians()
    }

    /// Focal length in pixels per radian.
    pub fn focal(&self) -> f64 {
        (self.width.min(self.height) as f64 * 0.5) / self.half_fov()
    }

    pub fn center(&self) -> [f64; 2] {
        [self.width as f64 * 0.5, self.height as f64 * 0.5]
    }

    pub fn project(&self, dir: Vec3) -> Result<[f64; 2]> {
        let n = dir.norm();
        if !(n > 0.0) {
            return Err(Error::OutOfRange("zero direction".into()));
        }
        let d = dir / n;
        let rho = d.x.hypot(d.y);
        let theta = rho.atan2(d.z);
        if theta > self.half_fov() * (1.0 + 1e-12) {
            return Err(Error::OutOfRange(format!(
                "direction at {:.3} deg is outside the {} deg field of view",
                theta.to_degrees(),
                self.fov_deg
            )));
        }
        let r = self.focal() * theta;
        let c = self.center();
        if rho == 0.0 {
            return Ok(c);
        }
        Ok([c[0] + r * d.x / rho, c[1] + r * d.y / rho])
    }

    pub fn unproject(&self, px: [f64; 2]) -> Result<Vec3> {
        let c = self.center();
        let r = (px[0] - c[0]).hypot(px[1] - c[1]);
        if r / self.focal() > self.half_fov() * (1.0 + 1e-12) {
            return Err(Error::OutOfRange(format!(
                "pixel ({:.2}, {:.2}) lies outside the image disk",
                px[0], px[1]
            )));
        }
        Ok(self.unproject_unchecked(px))
    }

    /// Inverse projection without the field-of-view check.
    pub fn unproject_unchecked(&self, px: [f64; 2]) -> Vec3 {
        let c = self.center();
        let dx = px[0] - c[0];
        let dy = px[1] - c[1];
        let r = dx.hypot(dy);
        if r == 0.0 {
            return Vec3::Z;
        }
        let theta = r / self.focal();
        let (s, co) = theta.sin_cos();
        Vec3::new(s * dx / r, s * dy / r, co)
    }

    /// View direction through the center of pixel (`row`, `col`).
    pub fn pixel_direction(&self, row: usize, col: usize) -> Vec3 {
        self.unproject_unchecked([col as f64 + 0.5, row as f64 + 0.5])
    }

    /// Polar angle of the ray through the center of pixel (`row`, `col`).
    pub fn pixel_theta(&self, row: usize, col: usize) -> f64 {
        let c = self.center();
        (col as f64 + 0.5 - c[0]).hypot(row as f64 + 0.5 - c[1]) / self.focal()
    }

    /// Solid angle subtended by one pixel: `sin(theta) / (theta f^2)`.
    pub fn pixel_solid_angle(&self, row: usize, col: usize) -> f64 {
        let theta = self.pixel_theta(row, col);
        let f2 = self.focal() * self.focal();
        if theta == 0.0 {
            1.0 / f2
        } else {
            theta.sin() / (theta * f2)
        }
    }
}
