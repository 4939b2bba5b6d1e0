use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::manifest::{FrameRecord, Manifest, ManifestHeader};
use super::FrameFilter;
use crate::error::{Error, Result};
use crate::gelsim::mesh::TriMesh;
use crate::gelsim::{
    apply_bulge, raycast_indent, undeformed, DepthCodec, DepthMap, IndenterShape, MeshIndenter, SensorGeometry,
};
use crate::image::{GrayImage, RgbImage};
use crate::math::{Pose, Quat, Vec3};
use crate::optics::{render_frame, LightRig, RenderSetup, RingConfig, SurfaceMaterial, ToneMap};
use crate::pattern::{self, PatternConfig, PatternImage};
use crate::wrench::{compute_wrench, FoundationParams, Wrench, WrenchRanges};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum IndenterKind {
    Sphere { radius: f64 },
    Ellipsoid { radii: [f64; 3] },
    Cuboid { size: [f64; 3] },
    /// Regular prism, cylinder or (with `top_radius` 0) cone along local z.
    Prism { radius: f64, top_radius: f64, height: f64, sides: usize },
    Stl { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndenterSpec {
    pub id: String,
    pub kind: IndenterKind,
    /// Fixed mounting orientation `[w, x, y, z]`.
    pub orientation: [f64; 4],
}

impl IndenterSpec {
    pub fn orientation(&self) -> Quat {
        let [w, x, y, z] = self.orientation;
        Quat { w, x, y, z }.normalized()
    }

    pub fn mesh(&self) -> Result<Option<TriMesh>> {
        Ok(match &self.kind {
            IndenterKind::Sphere { .. } => None,
            IndenterKind::Ellipsoid { radii } => Some(TriMesh::ellipsoid(Vec3::new(radii[0], radii[1], radii[2]), 3)),
            IndenterKind::Cuboid { size } => Some(TriMesh::cuboid(Vec3::new(size[0], size[1], size[2]))),
            IndenterKind::Prism {
                radius,
                top_radius,
                height,
                sides,
            } => Some(TriMesh::prism(*radius, *top_radius, *height, *sides)),
            IndenterKind::Stl { path } => Some(TriMesh::read_stl(path)?),
        })
    }
}

/// Shapes of the three library rows.
fn row_kinds() -> [IndenterKind; 3] {
    [
        IndenterKind::Ellipsoid { radii: [5.0, 3.5, 2.5] },
        IndenterKind::Cuboid { size: [7.0, 5.0, 3.5] },
        IndenterKind::Prism {
            radius: 3.0,
            top_radius: 3.0,
            height: 7.0,
            sides: 24,
        },
    ]
}

/// 3 x 7 grid: each row one shape, each column a different orientation
/// about a random axis in the xy plane.
pub fn indenter_library(seed: u64) -> Vec<IndenterSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(21);
    for (row, kind) in row_kinds().into_iter().enumerate() {
        for col in 0..7 {
            let q = if col == 0 {
                Quat::IDENTITY
            } else {
                let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
                Quat::from_axis_angle(Vec3::new(a.cos(), a.sin(), 0.0), angle)
            };
            out.push(IndenterSpec {
                id: format!("r{row}c{col}"),
                kind: kind.clone(),
                orientation: [q.w, q.x, q.y, q.z],
            });
        }
    }
    out
}

/// Serializable description of one simulated sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorConfig {
    pub sensor_id: String,
    pub pattern: PatternConfig,
    pub pattern_seed: u64,
    pub geometry: SensorGeometry,
    pub ring: RingConfig,
    pub material: SurfaceMaterial,
    pub tone: ToneMap,
    pub foundation: FoundationParams,
    pub bulge_sigma_deg: f64,
    pub codec: DepthCodec,
}

impl Default for SensorConfig {
    fn default() -> Self {
        SensorConfig {
            sensor_id: "sensor-0".into(),
            pattern: PatternConfig::default(),
            pattern_seed: 0,
            geometry: SensorGeometry::default(),
            ring: RingConfig::default(),
            material: SurfaceMaterial::default(),
            tone: ToneMap::default(),
            foundation: FoundationParams {
                mu: 0.2,
                ..Default::default()
            },
            bulge_sigma_deg: 20.0,
            codec: DepthCodec::default(),
        }
    }
}

impl SensorConfig {
    pub fn with_image_size(mut self, size: usize) -> Self {
        self.geometry.grid = crate::optics::CameraModel {
            width: size,
            height: size,
            ..self.geometry.grid
        };
        self
    }
}

/// A [`SensorConfig`] with its pattern texture materialized.
#[derive(Debug, Clone)]
pub struct SensorRig {
    pub config: SensorConfig,
    pub setup: RenderSetup,
}

impl SensorRig {
    pub fn build(config: &SensorConfig) -> Result<SensorRig> {
        let generated = pattern::generate(&config.pattern, config.pattern_seed)?;
        SensorRig::with_pattern(config, &generated.image)
    }

    pub fn with_pattern(config: &SensorConfig, pattern: &PatternImage) -> Result<SensorRig> {
        config.geometry.validate()?;
        config.foundation.validate()?;
        let base = SurfaceMaterial::with_pattern(pattern)?;
        let material = SurfaceMaterial {
            texture: base.texture,
            ..config.material.clone()
        };
        Ok(SensorRig {
            config: config.clone(),
            setup: RenderSetup {
                geometry: config.geometry,
                camera: config.geometry.grid,
                rig: LightRig::ring(&config.ring),
                material,
                tone: config.tone,
            },
        })
    }

    pub fn geometry(&self) -> &SensorGeometry {
        &self.setup.geometry
    }
}

/// Everything simulated for one contact.
#[derive(Debug, Clone)]
pub struct SimFrame {
    pub image: RgbImage,
    /// Bulged radial depth, the shape ground truth.
    pub depth: DepthMap,
    pub encoded: GrayImage,
    pub wrench: Wrench,
    pub saturated: bool,
    pub clamped: usize,
}

/// Ray cast, wrench (from the pre-bulge contact), bulge, render and encode.
pub fn simulate_frame(rig: &SensorRig, shape: &IndenterShape, shear_dir: Option<Vec3>) -> Result<SimFrame> {
    let geom = rig.geometry();
    let cfg = &rig.config;
    let ind = raycast_indent(geom, shape)?;
    let foundation = FoundationParams {
        tangential_dir: shear_dir.or(cfg.foundation.tangential_dir),
        ..cfg.foundation
    };
    let wrench = compute_wrench(&ind.depth, geom, &foundation)?;
    let bulged = apply_bulge(&ind.depth, geom, cfg.bulge_sigma_deg)?;
    let image = render_frame(&bulged.depth, &rig.setup)?;
    let encoded = cfg.codec.encode(&bulged.depth).image;
    Ok(SimFrame {
        image,
        depth: bulged.depth,
        encoded,
        wrench,
        saturated: ind.saturated,
        clamped: ind.clamped + bulged.clamped_high + bulged.clamped_low,
    })
}

/// The undeflected image of a sensor.
pub fn render_reference(rig: &SensorRig) -> Result<RgbImage> {
    render_frame(&undeformed(rig.geometry()), &rig.setup)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationPlan {
    pub sensor: SensorConfig,
    pub indenters: Vec<IndenterSpec>,
    /// Rotation steps per revolution of each indenter.
    pub steps: usize,
    pub penetration_mm: [f64; 2],
    pub polar_max_deg: f64,
    pub threshold: f64,
    pub with_depth: bool,
    pub with_wrench: bool,
    /// Normalization ranges to declare instead of fitting them to the data.
    pub wrench_ranges: Option<WrenchRanges>,
}

impl Default for SimulationPlan {
    fn default() -> Self {
        SimulationPlan {
            sensor: SensorConfig::default(),
            indenters: indenter_library(0),
            steps: 400,
            penetration_mm: [0.3, 2.5],
            polar_max_deg: 60.0,
            threshold: super::DEFAULT_THRESHOLD,
            with_depth: true,
            with_wrench: true,
            wrench_ranges: None,
        }
    }
}

impl SimulationPlan {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.penetration_mm;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::invalid("penetration range must satisfy 0 < min <= max"));
        }
        if !(0.0..=90.0).contains(&self.polar_max_deg) {
            return Err(Error::invalid("polar range must lie in [0, 90] degrees"));
        }
        if !self.with_depth && !self.with_wrench {
            return Err(Error::invalid("a dataset needs depth or wrench targets"));
        }
        if self.steps == 0 && !self.indenters.is_empty() {
            return Err(Error::invalid("steps must be positive"));
        }
        let mut ids: Vec<&str> = self.indenters.iter().map(|i| i.id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("indenter ids must be unique"));
        }
        Ok(())
    }
}

/// Geometry prepared once per indenter.
struct Prepared {
    mesh: Option<Arc<MeshIndenter>>,
    sphere_radius: f64,
    orientation: Quat,
}

impl Prepared {
    fn new(spec: &IndenterSpec) -> Result<Prepared> {
        let mesh = spec.mesh()?.map(|m| Arc::new(MeshIndenter::new(m)));
        let sphere_radius = match spec.kind {
            IndenterKind::Sphere { radius } => radius,
            _ => 0.0,
        };
        Ok(Prepared {
            mesh,
            sphere_radius,
            orientation: spec.orientation(),
        })
    }

    /// Place the indenter so its extreme point towards the center sits at
    /// `r_nominal - penetration` along `u`.
    fn place(&self, u: Vec3, spin: f64, r: f64) -> (IndenterShape, Pose) {
        let rot = Quat::from_axis_angle(Vec3::Z, spin).mul(self.orientation);
        match &self.mesh {
            None => {
                let center = u * (r + self.sphere_radius);
                (
                    IndenterShape::Sphere {
                        center,
                        radius: self.sphere_radius,
                    },
                    Pose::new(rot, center),
                )
            }
            Some(m) => {
                let h = m
                    .mesh
                    .vertices
                    .iter()
                    .map(|&v| -u.dot(rot.rotate(v)))
                    .fold(f64::NEG_INFINITY, f64::max);
                let pose = Pose::new(rot, u * (r + h));
                (
                    IndenterShape::Mesh {
                        indenter: m.clone(),
                        pose,
                    },
                    pose,
                )
            }
        }
    }
}

/// A single placed contact: the indenter's innermost point sits
/// `penetration` inside the nominal surface along the (polar, azimuth)
/// direction. Returns the shape, its pose and the azimuthal shear direction.
pub fn place_indenter(
    spec: &IndenterSpec,
    geom: &SensorGeometry,
    polar_deg: f64,
    azimuth_deg: f64,
    penetration: f64,
    spin_deg: f64,
) -> Result<(IndenterShape, Pose, Vec3)> {
    if !(polar_deg.is_finite() && azimuth_deg.is_finite() && penetration.is_finite() && spin_deg.is_finite()) {
        return Err(Error::invalid("contact parameters must be finite"));
    }
    let prepared = Prepared::new(spec)?;
    let (t, p) = (polar_deg.to_radians(), azimuth_deg.to_radians());
    let u = Vec3::new(t.sin() * p.cos(), t.sin() * p.sin(), t.cos());
    let (shape, pose) = prepared.place(u, spin_deg.to_radians(), geom.r_nominal - penetration);
    Ok((shape, pose, Vec3::new(-p.sin(), p.cos(), 0.0)))
}

struct Job {
    indenter: usize,
    step: usize,
}

struct Contact {
    shape: IndenterShape,
    pose: Pose,
    penetration: f64,
    shear: Vec3,
}

fn sample_contact(plan: &SimulationPlan, prepared: &Prepared, job: &Job, seed: u64) -> Contact {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((job.indenter as u64) << 32) | job.step as u64);
    let cos_max = plan.polar_max_deg.to_radians().cos();
    let cos_t: f64 = rng.random_range(cos_max..=1.0);
    let theta = cos_t.clamp(-1.0, 1.0).acos();
    let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let [lo, hi] = plan.penetration_mm;
    let penetration = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let u = Vec3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos());
    let spin = std::f64::consts::TAU * job.step as f64 / plan.steps as f64;
    let r = plan.sensor.geometry.r_nominal - penetration;
    let (shape, pose) = prepared.place(u, spin, r);
    Contact {
        shape,
        pose,
        penetration,
        shear: Vec3::new(-phi.sin(), phi.cos(), 0.0),
    }
}

const CHUNK: usize = 32;

/// Render, filter and write a dataset into `out_dir`.
pub fn build_dataset(plan: &SimulationPlan, seed: u64, out_dir: &Path) -> Result<Manifest> {
    plan.validate()?;
    let rig = SensorRig::build(&plan.sensor)?;
    build_dataset_with_rig(plan, &rig, seed, out_dir)
}

/// [`build_dataset`] with an already materialized sensor.
pub fn build_dataset_with_rig(plan: &SimulationPlan, rig: &SensorRig, seed: u64, out_dir: &Path) -> Result<Manifest> {
    plan.validate()?;
    let mut written: Vec<PathBuf> = Vec::new();
    let result = write_dataset(plan, rig, seed, out_dir, &mut written);
    if result.is_err() {
        for p in written.iter().rev() {
            let _ = fs::remove_file(p);
        }
    }
    result
}

fn write_dataset(
    plan: &SimulationPlan,
    rig: &SensorRig,
    seed: u64,
    out_dir: &Path,
    written: &mut Vec<PathBuf>,
) -> Result<Manifest> {
    let geom = rig.geometry();
    for sub in ["frames", "depth"] {
        let d = out_dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let cfg = &plan.sensor;
    let mut header = ManifestHeader::new(
        &cfg.sensor_id,
        seed,
        cfg.codec,
        geom.r_nominal,
        [geom.grid.width, geom.grid.height],
    );
    let reference = render_reference(rig)?;
    let ref_path = out_dir.join("reference.png");
    reference.write_png(&ref_path)?;
    written.push(ref_path);
    header.reference_frame = Some("reference.png".into());

    let prepared = plan.indenters.iter().map(Prepared::new).collect::<Result<Vec<_>>>()?;
    let jobs: Vec<Job> = (0..plan.indenters.len())
        .flat_map(|indenter| (0..plan.steps).map(move |step| Job { indenter, step }))
        .collect();

    let mut manifest = Manifest::new(header, out_dir);
    let mut filter = FrameFilter::<RgbImage>::new(plan.threshold);
    let mut wrenches = Vec::new();
    let mut dropped = 0usize;
    for chunk in jobs.chunks(CHUNK) {
        let frames: Vec<(Contact, SimFrame)> = chunk
            .par_iter()
            .map(|job| {
                let c = sample_contact(plan, &prepared[job.indenter], job, seed);
                let f = simulate_frame(rig, &c.shape, Some(c.shear))?;
                Ok((c, f))
            })
            .collect::<Result<Vec<_>>>()?;
        for (job, (contact, frame)) in chunk.iter().zip(frames) {
            if !filter.offer(&frame.image)? {
                dropped += 1;
                continue;
            }
            let spec = &plan.indenters[job.indenter];
            let id = format!("{}_{:04}", spec.id, job.step);
            let image = format!("frames/{id}.png");
            let p = out_dir.join(&image);
            frame.image.write_png(&p)?;
            written.push(p);
            let depth = if plan.with_depth {
                let rel = format!("depth/{id}.png");
                let p = out_dir.join(&rel);
                frame.encoded.write_png(&p)?;
                written.push(p);
                Some(rel)
            } else {
                None
            };
            if plan.with_wrench {
                wrenches.push(frame.wrench);
            }
            manifest.records.push(FrameRecord {
                id,
                image,
                depth,
                wrench: plan.with_wrench.then(|| frame.wrench.to_array()),
                sensor_id: cfg.sensor_id.clone(),
                indenter_id: spec.id.clone(),
                step: job.step,
                pose: contact.pose.into(),
                seed,
                penetration_mm: contact.penetration,
            });
        }
    }
    if dropped > 0 {
        log::info!("filtered {dropped} near-duplicate frames");
    }
    if plan.with_wrench {
        manifest.header.wrench_ranges = match plan.wrench_ranges {
            Some(r) => {
                r.validate()?;
                r
            }
            None => WrenchRanges::fit(&wrenches),
        };
        let sat = wrenches
            .iter()
            .filter(|w| manifest.header.wrench_ranges.normalize(w).saturated > 0)
            .count();
        if sat > 0 {
            log::warn!("{sat} wrenches fall outside the normalization ranges");
        }
    }
    manifest.header.record_count = manifest.records.len();
    let mpath = out_dir.join("manifest.jsonl");
    manifest.write(&mpath)?;
    written.push(mpath);
    Ok(manifest)
}
