use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mesh::{Bvh, TriMesh};
use super::{DepthMap, SensorGeometry};
use crate::error::{Error, Result};
use crate::math::{Pose, Vec3};

/// Mesh indenter with its acceleration structure, in its local frame.
#[derive(Debug, Clone)]
pub struct MeshIndenter {
    pub mesh: TriMesh,
    pub bvh: Bvh,
    pub watertight: bool,
    pub degenerate_triangles: usize,
}

impl MeshIndenter {
    pub fn new(mesh: TriMesh) -> Self {
        let bvh = Bvh::build(&mesh);
        let watertight = mesh.is_watertight();
        let degenerate_triangles = mesh.degenerate_count();
        MeshIndenter {
            mesh,
            bvh,
            watertight,
            degenerate_triangles,
        }
    }
}

#[derive(Debug, Clone)]
pub enum IndenterShape {
    Mesh { indenter: Arc<MeshIndenter>, pose: Pose },
    Sphere { center: Vec3, radius: f64 },
    /// Solid half-space `{x : normal . x >= offset}`.
    Plane { normal: Vec3, offset: f64 },
}

/// JSON pose file: unit quaternion and translation in mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseFile {
    pub quaternion: [f64; 4],
    pub translation_mm: [f64; 3],
}

impl From<PoseFile> for Pose {
    fn from(p: PoseFile) -> Pose {
        let [w, x, y, z] = p.quaternion;
        Pose::new(
            crate::math::Quat { w, x, y, z },
            Vec3::new(p.translation_mm[0], p.translation_mm[1], p.translation_mm[2]),
        )
    }
}

impl From<Pose> for PoseFile {
    fn from(p: Pose) -> PoseFile {
        PoseFile {
            quaternion: [p.rotation.w, p.rotation.x, p.rotation.y, p.rotation.z],
            translation_mm: p.translation.to_array(),
        }
    }
}

impl IndenterShape {
    /// Nearest intersection distance of the ray from the optical center.
    pub fn hit_distance(&self, dir: Vec3) -> Option<f64> {
        match self {
            IndenterShape::Sphere { center, radius } => ray_sphere(dir, *center, *radius),
            IndenterShape::Plane { normal, offset } => {
                let n = normal.normalized();
                let dn = n.dot(dir);
                if dn > 0.0 && *offset > 0.0 {
                    Some(offset / dn)
                } else {
                    None
                }
            }
            IndenterShape::Mesh { indenter, pose } => {
                let o = pose.apply_inverse(Vec3::ZERO);
                let d = pose.rotate_inverse(dir);
                indenter.bvh.nearest_hit(&indenter.mesh, o, d)
            }
        }
    }

    /// Whether the optical center lies inside the solid.
    pub fn contains_origin(&self) -> bool {
        match self {
            IndenterShape::Sphere { center, radius } => center.norm() < *radius,
            IndenterShape::Plane { offset, .. } => *offset <= 0.0,
            IndenterShape::Mesh { indenter, pose } => {
                if !indenter.watertight {
                    return false;
                }
                let o = pose.apply_inverse(Vec3::ZERO);
                // slightly skewed ray avoids grazing shared edges
                let d = Vec3::new(0.123_456_7, 0.234_567_8, 1.0).normalized();
                indenter.bvh.count_hits(&indenter.mesh, o, d) % 2 == 1
            }
        }
    }

    /// The same shape after rotating the scene about the optical axis.
    pub fn rotated_about_z(&self, angle: f64) -> IndenterShape {
        match self {
            IndenterShape::Sphere { center, radius } => IndenterShape::Sphere {
                center: center.rotate_z(angle),
                radius: *radius,
            },
            IndenterShape::Plane { normal, offset } => IndenterShape::Plane {
                normal: normal.rotate_z(angle),
                offset: *offset,
            },
            IndenterShape::Mesh { indenter, pose } => IndenterShape::Mesh {
                indenter: indenter.clone(),
                pose: pose.rotated_about_z(angle),
            },
        }
    }

    /// Translate the shape by `delta` in the sensor frame.
    pub fn translated(&self, delta: Vec3) -> IndenterShape {
        match self {
            IndenterShape::Sphere { center, radius } => IndenterShape::Sphere {
                center: *center + delta,
                radius: *radius,
            },
            IndenterShape::Plane { normal, offset } => {
                let n = normal.normalized();
                IndenterShape::Plane {
                    normal: n,
                    offset: offset + n.dot(delta),
                }
            }
            IndenterShape::Mesh { indenter, pose } => IndenterShape::Mesh {
                indenter: indenter.clone(),
                pose: Pose::new(pose.rotation, pose.translation + delta),
            },
        }
    }
}

fn ray_sphere(dir: Vec3, center: Vec3, radius: f64) -> Option<f64> {
    let b = dir.dot(center);
    let c = center.norm_sq() - radius * radius;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let s = disc.sqrt();
    let t0 = b - s;
    if t0 > 0.0 {
        Some(t0)
    } else if b + s > 0.0 {
        Some(b + s)
    } else {
        None
    }
}

/// Contact depth map from ray casting plus diagnostics.
#[derive(Debug, Clone)]
pub struct Indentation {
    pub depth: DepthMap,
    /// Degenerate mesh faces skipped by the ray tests.
    pub degenerate_triangles: usize,
    /// Directions clamped up to `d_min`.
    pub clamped: usize,
    /// The optical center lies inside the shape.
    pub saturated: bool,
}

/// Radial depth `min(r_nominal, hit)` along every cap direction.
pub fn raycast_indent(geom: &SensorGeometry, shape: &IndenterShape) -> Result<Indentation> {
    geom.validate()?;
    let degenerate_triangles = match shape {
        IndenterShape::Mesh { indenter, .. } => indenter.degenerate_triangles,
        _ => 0,
    };
    if degenerate_triangles > 0 {
        log::warn!("skipping {degenerate_triangles} degenerate indenter triangles");
    }
    let (w, h) = (geom.grid.width, geom.grid.height);
    if shape.contains_origin() {
        let mut depth = DepthMap::filled(w, h, geom.r_nominal);
        let mut clamped = 0;
        for row in 0..h {
            for col in 0..w {
                if geom.on_cap(row, col) {
                    depth.values[row * w + col] = geom.d_min;
                    clamped += 1;
                }
            }
        }
        return Ok(Indentation {
            depth,
            degenerate_triangles,
            clamped,
            saturated: true,
        });
    }
    let cap = geom.cap_half_angle();
    let values: Vec<(f64, bool)> = (0..w * h)
        .into_par_iter()
        .map(|k| {
            let (row, col) = (k / w, k % w);
            if geom.grid.pixel_theta(row, col) > cap {
                return (geom.r_nominal, false);
            }
            let dir = geom.grid.pixel_direction(row, col);
            radial_value(geom, shape.hit_distance(dir))
        })
        .collect();
    let clamped = values.iter().filter(|v| v.1).count();
    Ok(Indentation {
        depth: DepthMap {
            width: w,
            height: h,
            values: values.into_iter().map(|v| v.0).collect(),
        },
        degenerate_triangles,
        clamped,
        saturated: false,
    })
}

fn radial_value(geom: &SensorGeometry, hit: Option<f64>) -> (f64, bool) {
    let r = hit.map_or(geom.r_nominal, |t| t.min(geom.r_nominal));
    if r < geom.d_min {
        (geom.d_min, true)
    } else {
        (r, false)
    }
}

/// Closed-form ray–sphere indentation; the oracle for the mesh path.
pub fn analytic_sphere_indent(geom: &SensorGeometry, center: Vec3, radius: f64) -> Result<DepthMap> {
    geom.validate()?;
    if !(radius >= 0.0) {
        return Err(Error::invalid("sphere radius must be non-negative"));
    }
    if center.norm() <= radius {
        return Err(Error::invalid("invalid pose: sphere contains the optical center"));
    }
    let (w, h) = (geom.grid.width, geom.grid.height);
    let mut depth = DepthMap::filled(w, h, geom.r_nominal);
    for row in 0..h {
        for col in 0..w {
            if !geom.on_cap(row, col) {
                continue;
            }
            let dir = geom.grid.pixel_direction(row, col);
            let hit = if radius > 0.0 { ray_sphere(dir, center, radius) } else { None };
            depth.values[row * w + col] = radial_value(geom, hit).0;
        }
    }
    Ok(depth)
}
