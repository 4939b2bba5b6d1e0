//! Synthetic 6-axis wrench labels from an elastic (Winkler) foundation over
//! the cap, and per-axis normalization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gelsim::{DepthMap, SensorGeometry};
use crate::math::{exact_sum, Vec3};

/// Force in N and torque in N·mm at the optical center, sensor frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Wrench {
    pub force: [f64; 3],
    pub torque: [f64; 3],
}

impl Wrench {
    pub fn to_array(&self) -> [f64; 6] {
        [
            self.force[0],
            self.force[1],
            self.force[2],
            self.torque[0],
            self.torque[1],
            self.torque[2],
        ]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Wrench {
            force: [a[0], a[1], a[2]],
            torque: [a[3], a[4], a[5]],
        }
    }
}

pub const AXIS_NAMES: [&str; 6] = ["fx", "fy", "fz", "tx", "ty", "tz"];
pub const FORCE_UNIT: &str = "N";
pub const TORQUE_UNIT: &str = "N·mm";

/// Stiffness giving Fz = -5 N for a 2 mm central press of a 10 mm diameter
/// sphere on the 64x64 grid.
pub const DEFAULT_STIFFNESS: f64 = 0.106_032;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoundationParams {
    /// Normal stiffness, N/mm^3.
    pub k: f64,
    /// Tangential traction ratio.
    pub mu: f64,
    pub tangential_dir: Option<Vec3>,
}

impl Default for FoundationParams {
    fn default() -> Self {
        FoundationParams {
            k: DEFAULT_STIFFNESS,
            mu: 0.0,
            tangential_dir: None,
        }
    }
}

impl FoundationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.k > 0.0) || !self.k.is_finite() {
            return Err(Error::invalid("foundation stiffness must be positive"));
        }
        if !(0.0..=1.5).contains(&self.mu) {
            return Err(Error::invalid("traction ratio must lie in [0, 1.5]"));
        }
        Ok(())
    }
}

/// Integrate the foundation traction over indented directions.
///
/// Per direction with penetration `delta = r0 - r`, the traction is
/// `-k delta n + mu k delta t` with `n` the outward radial direction and `t`
/// the tangential direction projected onto the tangent plane. Area elements
/// are `r0^2 dOmega`; moment arms are the contact points `r n`.
pub fn compute_wrench(contact: &DepthMap, geom: &SensorGeometry, params: &FoundationParams) -> Result<Wrench> {
    params.validate()?;
    if contact.width != geom.grid.width || contact.height != geom.grid.height {
        return Err(Error::invalid("depth map does not match the sensor grid"));
    }
    let r0 = geom.r_nominal;
    let samples = geom.samples();
    let slide = params.tangential_dir.map(|d| d.normalized());
    // Unit-stiffness integrands, scaled by k after exact summation.
    let mut normal_terms: [Vec<f64>; 6] = Default::default();
    let mut tangent_terms: [Vec<f64>; 6] = Default::default();
    for (s, &r) in samples.iter().zip(&contact.values) {
        if !s.on_cap || r >= r0 {
            continue;
        }
        let delta = r0 - r;
        let da = r0 * r0 * s.solid_angle;
        let n = s.dir;
        let p = n * r;
        let tn = n * (-delta * da);
        let mn = p.cross(tn);
        for (a, v) in [tn.x, tn.y, tn.z, mn.x, mn.y, mn.z].into_iter().enumerate() {
            normal_terms[a].push(v);
        }
        if let Some(sd) = slide {
            let t = (sd - n * sd.dot(n)).normalized();
            let tt = t * (delta * da);
            let mt = p.cross(tt);
            for (a, v) in [tt.x, tt.y, tt.z, mt.x, mt.y, mt.z].into_iter().enumerate() {
                tangent_terms[a].push(v);
            }
        }
    }
    let mut out = [0.0; 6];
    for a in 0..6 {
        let sn = exact_sum(normal_terms[a].iter().copied());
        let st = exact_sum(tangent_terms[a].iter().copied());
        out[a] = params.k * sn + params.mu * params.k * st;
    }
    Ok(Wrench::from_array(out))
}

/// Per-axis `(min, max)` normalization ranges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WrenchRanges {
    pub ranges: [[f64; 2]; 6],
}

impl Default for WrenchRanges {
    /// Fz spans -11..3 N; other axes are placeholders until fitted to data.
    fn default() -> Self {
        WrenchRanges {
            ranges: [
                [-1.0, 1.0],
                [-1.0, 1.0],
                [-11.0, 3.0],
                [-1.0, 1.0],
                [-1.0, 1.0],
                [-1.0, 1.0],
            ],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalized {
    pub values: [f64; 6],
    pub saturated: usize,
}

impl WrenchRanges {
    pub fn validate(&self) -> Result<()> {
        for (a, r) in self.ranges.iter().enumerate() {
            if !(r[0] < r[1]) {
                return Err(Error::invalid(format!("range for {} must have min < max", AXIS_NAMES[a])));
            }
        }
        Ok(())
    }

    /// Fz keeps its fixed range; every other axis is fitted to the observed
    /// extrema with a 5% margin (or +-1e-3 when the axis never moves).
    pub fn fit(samples: &[Wrench]) -> WrenchRanges {
        let mut out = WrenchRanges::default();
        for a in [0usize, 1, 3, 4, 5] {
            let vals = samples.iter().map(|w| w.to_array()[a]);
            let lo = vals.clone().fold(f64::INFINITY, f64::min);
            let hi = vals.fold(f64::NEG_INFINITY, f64::max);
            out.ranges[a] = if !lo.is_finite() || hi - lo < 1e-9 {
                let c = if lo.is_finite() { 0.5 * (lo + hi) } else { 0.0 };
                [c - 1e-3, c + 1e-3]
            } else {
                let m = 0.05 * (hi - lo);
                [lo - m, hi + m]
            };
        }
        out
    }

    pub fn normalize(&self, w: &Wrench) -> Normalized {
        let v = w.to_array();
        let mut values = [0.0; 6];
        let mut saturated = 0;
        for a in 0..6 {
            let [lo, hi] = self.ranges[a];
            let x = (v[a] - lo) / (hi - lo);
            if !(0.0..=1.0).contains(&x) {
                saturated += 1;
            }
            values[a] = x.clamp(0.0, 1.0);
        }
        Normalized { values, saturated }
    }

    pub fn denormalize(&self, v: &[f64; 6]) -> Wrench {
        let mut out = [0.0; 6];
        for a in 0..6 {
            let [lo, hi] = self.ranges[a];
            out[a] = lo + v[a] * (hi - lo);
        }
        Wrench::from_array(out)
    }

    pub fn span(&self, axis: usize) -> f64 {
        self.ranges[axis][1] - self.ranges[axis][0]
    }
}
