use std::f64::consts::PI;
use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tactforge_core::dataio::{indenter_library, place_indenter};
use tactforge_core::gelsim::mesh::TriMesh;
use tactforge_core::gelsim::{
    analytic_sphere_indent, bulge_field, enclosed_volume, raycast_indent, undeformed, DepthCodec, IndenterShape,
    MeshIndenter,
};
use tactforge_core::math::{Pose, Quat};
use tactforge_core::{SensorGeometry, Vec3};

fn sphere_at(geom: &SensorGeometry, polar: f64, azimuth: f64, radius: f64, penetration: f64) -> IndenterShape {
    let u = Vec3::new(polar.sin() * azimuth.cos(), polar.sin() * azimuth.sin(), polar.cos());
    IndenterShape::Sphere {
        center: u * (geom.r_nominal - penetration + radius),
        radius,
    }
}

fn rotate_shape(shape: &IndenterShape, phi: f64) -> IndenterShape {
    match shape {
        IndenterShape::Sphere { center, radius } => IndenterShape::Sphere {
            center: center.rotate_z(phi),
            radius: *radius,
        },
        IndenterShape::Mesh { indenter, pose } => IndenterShape::Mesh {
            indenter: indenter.clone(),
            pose: pose.rotated_about_z(phi),
        },
        IndenterShape::Plane { normal, offset } => IndenterShape::Plane {
            normal: normal.rotate_z(phi),
            offset: *offset,
        },
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn quantization_error_is_half_a_step(t in 0.0f64..=1.0) {
        let c = DepthCodec::default();
        let d = c.d_min + t * (c.max_depth() - c.d_min);
        let (p, _) = c.encode_value(d);
        prop_assert!((c.decode_value(p) - d).abs() <= c.step / 2.0 + 1e-12);
    }

    #[test]
    fn deeper_press_never_raises_depth(
        polar in 0.0f64..1.0, azimuth in 0.0f64..(2.0 * PI), radius in 2.0f64..8.0,
        p1 in 0.2f64..2.0, extra in 0.01f64..1.0,
    ) {
        let geom = SensorGeometry::with_grid(32);
        let a = raycast_indent(&geom, &sphere_at(&geom, polar, azimuth, radius, p1)).unwrap().depth;
        let b = raycast_indent(&geom, &sphere_at(&geom, polar, azimuth, radius, p1 + extra)).unwrap().depth;
        for (x, y) in a.values.iter().zip(&b.values) {
            prop_assert!(y <= x);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn ray_depths_are_rotation_equivariant(
        phi in 0.0f64..(2.0 * PI), id in 0usize..21, polar in 0.0f64..60.0, azimuth in 0.0f64..360.0,
        pen in 0.3f64..2.5, seed in 0u64..4,
    ) {
        let geom = SensorGeometry::with_grid(32);
        let spec = &indenter_library(seed)[id];
        let (shape, _, _) = place_indenter(spec, &geom, polar, azimuth, pen, 0.0).unwrap();
        let rotated = rotate_shape(&shape, phi);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..200 {
            let t = rng.random_range(0.0..PI / 2.0);
            let a = rng.random_range(0.0..2.0 * PI);
            let d = Vec3::new(t.sin() * a.cos(), t.sin() * a.sin(), t.cos());
            let r0 = shape.hit_distance(d).map_or(geom.r_nominal, |v| v.min(geom.r_nominal));
            let r1 = rotated.hit_distance(d.rotate_z(phi)).map_or(geom.r_nominal, |v| v.min(geom.r_nominal));
            prop_assert!((r0 - r1).abs() <= 1e-3, "{r0} vs {r1}");
        }
    }
}

#[test]
fn quarter_turn_rotates_the_depth_map() {
    let geom = SensorGeometry::with_grid(48);
    for (k, spec) in indenter_library(3).iter().enumerate().step_by(4) {
        let (shape, _, _) = place_indenter(spec, &geom, 35.0, 20.0 + 40.0 * k as f64, 1.5, 0.0).unwrap();
        let base = raycast_indent(&geom, &shape).unwrap().depth;
        let turned = raycast_indent(&geom, &rotate_shape(&shape, PI / 2.0)).unwrap().depth;
        let diff = turned.max_abs_diff(&base.rotated_90());
        assert!(diff <= 1e-3, "{}: {diff}", spec.id);
    }
}

#[test]
fn icosphere_converges_to_the_analytic_sphere() {
    let geom = SensorGeometry::with_grid(64);
    let (radius, pen) = (5.0, 2.0);
    let center = Vec3::new(1.0, -0.5, geom.r_nominal - pen + radius);
    let exact = analytic_sphere_indent(&geom, center, radius).unwrap();
    let mut errs = Vec::new();
    for level in 1..=4 {
        let ind = MeshIndenter::new(TriMesh::icosphere(radius, level));
        let shape = IndenterShape::Mesh {
            indenter: Arc::new(ind),
            pose: Pose::new(Quat::default(), center),
        };
        errs.push(raycast_indent(&geom, &shape).unwrap().depth.max_abs_diff(&exact));
    }
    assert!(errs[3] <= 0.05, "{errs:?}");
    for w in errs.windows(2) {
        assert!(w[1] <= 0.5 * w[0], "error must at least halve per level: {errs:?}");
    }
}

#[test]
fn bulge_conserves_volume_on_random_indentations() {
    let geom = SensorGeometry::with_grid(64);
    let lib = indenter_library(0);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let v0 = enclosed_volume(&undeformed(&geom), &geom);
    let mut checked = 0;
    while checked < 50 {
        let spec = &lib[rng.random_range(0..lib.len())];
        let polar = rng.random_range(0.0..60.0);
        let azimuth = rng.random_range(0.0..360.0);
        let pen = rng.random_range(0.3..2.5);
        let spin = rng.random_range(0.0..360.0);
        let (shape, _, _) = place_indenter(spec, &geom, polar, azimuth, pen, spin).unwrap();
        let contact = raycast_indent(&geom, &shape).unwrap().depth;
        let b = bulge_field(&contact, &geom, 20.0).unwrap();
        if b.displaced_volume == 0.0 {
            continue;
        }
        assert!(!b.conservation_impossible);
        let dv = enclosed_volume(&b.depth, &geom) - v0;
        let rel = dv.abs() / b.displaced_volume;
        assert!(rel <= 0.005, "{} polar {polar:.1}: |dV|/V = {rel}", spec.id);
        checked += 1;
    }
}
