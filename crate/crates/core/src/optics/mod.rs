//! Interior camera rendering: equidistant fisheye, a 9-LED ring with a
//! mirrored wall, and the stroke pattern mapped onto the deformed cap.

mod camera;

pub use camera::CameraModel;

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gelsim::{DepthMap, SensorGeometry};
use crate::image::RgbImage;
use crate::math::Vec3;
use crate::pattern::PatternImage;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Emitter {
    pub position: Vec3,
    pub color: [f64; 3],
    pub intensity: f64,
}

/// Mirror-coated cylindrical wall around the LED ring.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MirrorWall {
    pub radius: f64,
    pub reflectance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LightRig {
    pub emitters: Vec<Emitter>,
    pub mirror: Option<MirrorWall>,
    /// Distance attenuation `1 / (1 + k d^2)`, d in mm.
    pub falloff: f64,
    pub ambient: [f64; 3],
}

/// Parameters of the default ring layout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RingConfig {
    pub radius_mm: f64,
    pub height_mm: f64,
    pub intensity: f64,
    pub phase_deg: f64,
    /// Per-channel LED tint.
    pub tint: [f64; 3],
    pub mirror_radius_mm: f64,
    pub mirror_reflectance: f64,
    pub falloff: f64,
    pub ambient: f64,
}

impl Default for RingConfig {
    fn default() -> Self {
        RingConfig {
            radius_mm: 5.0,
            height_mm: 0.5,
            intensity: 1.0,
            phase_deg: 0.0,
            tint: [1.0, 1.0, 1.0],
            mirror_radius_mm: 7.0,
            mirror_reflectance: 0.6,
            falloff: 0.01,
            ambient: 0.02,
        }
    }
}

impl Default for LightRig {
    fn default() -> Self {
        LightRig::ring(&RingConfig::default())
    }
}

const RGB: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

impl LightRig {
    /// Nine emitters at 40 degree spacing, colors interleaved R, G, B.
    pub fn ring(cfg: &RingConfig) -> LightRig {
        let emitters = (0..9)
            .map(|k| {
                let a = (cfg.phase_deg + 40.0 * k as f64).to_radians();
                let base = RGB[k % 3];
                Emitter {
                    position: Vec3::new(cfg.radius_mm * a.cos(), cfg.radius_mm * a.sin(), cfg.height_mm),
                    color: [base[0] * cfg.tint[0], base[1] * cfg.tint[1], base[2] * cfg.tint[2]],
                    intensity: cfg.intensity,
                }
            })
            .collect();
        LightRig {
            emitters,
            mirror: (cfg.mirror_reflectance > 0.0).then_some(MirrorWall {
                radius: cfg.mirror_radius_mm,
                reflectance: cfg.mirror_reflectance,
            }),
            falloff: cfg.falloff,
            ambient: [cfg.ambient; 3],
        }
    }

    /// Real emitters plus their images across the mirror wall.
    pub fn effective_emitters(&self) -> Vec<Emitter> {
        let mut out = self.emitters.clone();
        if let Some(m) = self.mirror {
            for e in &self.emitters {
                let rho = e.position.x.hypot(e.position.y);
                if rho == 0.0 {
                    continue;
                }
                let s = (2.0 * m.radius - rho) / rho;
                out.push(Emitter {
                    position: Vec3::new(e.position.x * s, e.position.y * s, e.position.z),
                    color: e.color,
                    intensity: e.intensity * m.reflectance,
                });
            }
        }
        out
    }

    pub fn rotated_about_z(&self, angle: f64) -> LightRig {
        let mut r = self.clone();
        for e in r.emitters.iter_mut() {
            e.position = e.position.rotate_z(angle);
        }
        r
    }

    pub fn scaled(&self, factor: f64) -> LightRig {
        let mut r = self.clone();
        for e in r.emitters.iter_mut() {
            e.intensity *= factor;
        }
        r
    }
}

/// Mip pyramid of a pattern, padded to a centered power-of-two square.
#[derive(Debug, Clone, PartialEq)]
pub struct Texture {
    levels: Vec<(usize, Vec<f64>)>,
    px_per_mm: f64,
    /// Texel offset of the pattern origin inside the padded level 0.
    pad: f64,
    domain_mm: f64,
}

impl Texture {
    pub fn from_pattern(p: &PatternImage) -> Result<Texture> {
        let (w, h) = (p.pixels.width, p.pixels.height);
        if w != h || w == 0 {
            return Err(Error::invalid("pattern texture must be a non-empty square"));
        }
        let size = w.next_power_of_two();
        let pad = (size - w) / 2;
        let mut base = vec![1.0; size * size];
        for y in 0..h {
            for x in 0..w {
                base[(y + pad) * size + x + pad] = p.pixels.get(x, y) as f64 / 255.0;
            }
        }
        let mut levels = vec![(size, base)];
        while levels.last().map(|l| l.0).unwrap_or(1) > 1 {
            let (s, prev) = levels.last().unwrap();
            let n = s / 2;
            let mut next = vec![0.0; n * n];
            for y in 0..n {
                for x in 0..n {
                    next[y * n + x] = 0.25
                        * (prev[2 * y * s + 2 * x]
                            + prev[2 * y * s + 2 * x + 1]
                            + prev[(2 * y + 1) * s + 2 * x]
                            + prev[(2 * y + 1) * s + 2 * x + 1]);
                }
            }
            levels.push((n, next));
        }
        Ok(Texture {
            levels,
            px_per_mm: p.px_per_mm,
            pad: pad as f64,
            domain_mm: p.domain_mm(),
        })
    }

    pub fn domain_mm(&self) -> f64 {
        self.domain_mm
    }

    fn bilinear(&self, level: usize, u: f64, v: f64) -> f64 {
        let (n, data) = &self.levels[level];
        let n = *n as i64;
        let x = u - 0.5;
        let y = v - 0.5;
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let at = |xi: i64, yi: i64| -> f64 {
            if xi < 0 || yi < 0 || xi >= n || yi >= n {
                1.0
            } else {
                data[(yi * n + xi) as usize]
            }
        };
        let (x0, y0) = (x0 as i64, y0 as i64);
        (1.0 - fy) * ((1.0 - fx) * at(x0, y0) + fx * at(x0 + 1, y0))
            + fy * ((1.0 - fx) * at(x0, y0 + 1) + fx * at(x0 + 1, y0 + 1))
    }

    /// Paper-white fraction at plane point (mm, pattern-centered), filtered to
    /// a footprint of `footprint` level-0 texels.
    pub fn sample(&self, x_mm: f64, y_mm: f64, footprint: f64) -> f64 {
        let u0 = (x_mm + 0.5 * self.domain_mm) * self.px_per_mm + self.pad;
        let v0 = (y_mm + 0.5 * self.domain_mm) * self.px_per_mm + self.pad;
        let lod = footprint.max(1.0).log2().min((self.levels.len() - 1) as f64);
        let l0 = lod.floor() as usize;
        let l1 = (l0 + 1).min(self.levels.len() - 1);
        let t = lod - l0 as f64;
        let s0 = self.bilinear(l0, u0 / (1 << l0) as f64, v0 / (1 << l0) as f64);
        if t == 0.0 || l0 == l1 {
            return s0;
        }
        let s1 = self.bilinear(l1, u0 / (1 << l1) as f64, v0 / (1 << l1) as f64);
        (1.0 - t) * s0 + t * s1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceMaterial {
    #[serde(skip)]
    pub texture: Option<Arc<Texture>>,
    /// Pattern millimetres per millimetre of arc from the pole; `None` fits
    /// the cap inside the pattern square.
    pub texture_scale: Option<f64>,
    pub base_reflectance: [f64; 3],
    /// Reflectance multiplier under full ink.
    pub ink_reflectance: f64,
    pub specular: f64,
    pub specular_exponent: f64,
}

impl Default for SurfaceMaterial {
    fn default() -> Self {
        SurfaceMaterial {
            texture: None,
            texture_scale: None,
            base_reflectance: [0.9, 0.9, 0.9],
            ink_reflectance: 0.15,
            specular: 0.25,
            specular_exponent: 24.0,
        }
    }
}

impl SurfaceMaterial {
    pub fn with_pattern(pattern: &PatternImage) -> Result<Self> {
        Ok(SurfaceMaterial {
            texture: Some(Arc::new(Texture::from_pattern(pattern)?)),
            ..Default::default()
        })
    }

    fn scale(&self, geom: &SensorGeometry) -> f64 {
        match (self.texture_scale, &self.texture) {
            (Some(s), _) => s,
            (None, Some(t)) => 0.5 * t.domain_mm() / (geom.r_nominal * geom.cap_half_angle()),
            (None, None) => 1.0,
        }
    }

    /// Azimuthal-equidistant albedo for the material point seen along `dir`.
    pub fn albedo(&self, dir: Vec3, geom: &SensorGeometry, footprint_texels: f64) -> [f64; 3] {
        let mix = match &self.texture {
            None => 1.0,
            Some(t) => {
                let rho = dir.x.hypot(dir.y);
                let theta = rho.atan2(dir.z);
                let arc = self.scale(geom) * geom.r_nominal * theta;
                let (cx, cy) = if rho > 0.0 { (dir.x / rho, dir.y / rho) } else { (1.0, 0.0) };
                let white = t.sample(arc * cx, arc * cy, footprint_texels);
                self.ink_reflectance + (1.0 - self.ink_reflectance) * white
            }
        };
        [
            self.base_reflectance[0] * mix,
            self.base_reflectance[1] * mix,
            self.base_reflectance[2] * mix,
        ]
    }
}

/// Linear radiance at a surface point with the given albedo.
///
/// `normal` faces the camera; light from behind the surface contributes
/// nothing, leaving only the ambient floor.
pub fn shade_with_albedo(point: Vec3, normal: Vec3, rig: &LightRig, mat: &SurfaceMaterial, albedo: [f64; 3]) -> [f64; 3] {
    let mut out = [
        albedo[0] * rig.ambient[0],
        albedo[1] * rig.ambient[1],
        albedo[2] * rig.ambient[2],
    ];
    let view = (-point).normalized();
    for e in rig.effective_emitters() {
        let to_light = e.position - point;
        let d2 = to_light.norm_sq();
        let l = to_light.normalized();
        let ndl = normal.dot(l);
        if ndl <= 0.0 {
            continue;
        }
        let atten = e.intensity / (1.0 + rig.falloff * d2);
        let half = (l + view).normalized();
        let spec = mat.specular * normal.dot(half).max(0.0).powf(mat.specular_exponent);
        for c in 0..3 {
            out[c] += e.color[c] * atten * (albedo[c] * ndl + spec);
        }
    }
    out
}

/// Radiance using the material albedo at `point`'s direction, unfiltered.
pub fn shade(point: Vec3, normal: Vec3, rig: &LightRig, mat: &SurfaceMaterial, geom: &SensorGeometry) -> [f64; 3] {
    let albedo = mat.albedo(point.normalized(), geom, 1.0);
    shade_with_albedo(point, normal, rig, mat, albedo)
}

/// Tone mapping: `round(255 * exposure * radiance)` clamped to 8 bits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToneMap {
    pub exposure: f64,
}

impl Default for ToneMap {
    fn default() -> Self {
        ToneMap { exposure: 0.6 }
    }
}

impl ToneMap {
    pub fn apply(&self, radiance: f64) -> u8 {
        (255.0 * self.exposure * radiance).round().clamp(0.0, 255.0) as u8
    }
}

/// Everything except the depth field needed to render a frame.
#[derive(Debug, Clone)]
pub struct RenderSetup {
    pub geometry: SensorGeometry,
    pub camera: CameraModel,
    pub rig: LightRig,
    pub material: SurfaceMaterial,
    pub tone: ToneMap,
}

/// Linear radiance per pixel (pre tone map), black outside the cap.
pub fn render_radiance(depth: &DepthMap, setup: &RenderSetup) -> Result<Vec<[f64; 3]>> {
    let geom = &setup.geometry;
    let cam = &setup.camera;
    if cam.width != geom.grid.width || cam.height != geom.grid.height || cam.fov_deg != geom.grid.fov_deg {
        return Err(Error::invalid("camera must match the depth grid"));
    }
    if depth.width != cam.width || depth.height != cam.height {
        return Err(Error::invalid("depth map does not match the camera"));
    }
    let (w, h) = (cam.width, cam.height);
    let point = |row: i64, col: i64| -> Vec3 {
        let r = row.clamp(0, h as i64 - 1) as usize;
        let c = col.clamp(0, w as i64 - 1) as usize;
        cam.pixel_direction(r, c) * depth.get(r, c)
    };
    let footprint = match &setup.material.texture {
        Some(t) => setup.material.scale(geom) * geom.r_nominal / cam.focal() * t.px_per_mm,
        None => 1.0,
    };
    let pixels = (0..w * h)
        .into_par_iter()
        .map(|k| {
            let (row, col) = (k / w, k % w);
            if !geom.on_cap(row, col) {
                return [0.0; 3];
            }
            let (ri, ci) = (row as i64, col as i64);
            let p = point(ri, ci);
            let tu = point(ri, ci + 1) - point(ri, ci - 1);
            let tv = point(ri + 1, ci) - point(ri - 1, ci);
            let mut n = tu.cross(tv).normalized();
            if n.dot(p) > 0.0 {
                n = -n;
            }
            let albedo = setup.material.albedo(cam.pixel_direction(row, col), geom, footprint);
            shade_with_albedo(p, n, &setup.rig, &setup.material, albedo)
        })
        .collect();
    Ok(pixels)
}

/// 8-bit RGB interior image of the deformed gel.
pub fn render_frame(depth: &DepthMap, setup: &RenderSetup) -> Result<RgbImage> {
    let radiance = render_radiance(depth, setup)?;
    let mut img = RgbImage::new(setup.camera.width, setup.camera.height);
    for (k, px) in radiance.iter().enumerate() {
        for c in 0..3 {
            img.data[3 * k + c] = setup.tone.apply(px[c]);
        }
    }
    Ok(img)
}
