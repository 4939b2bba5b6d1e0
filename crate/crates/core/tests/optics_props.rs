use std::f64::consts::PI;

use proptest::prelude::*;
use tactforge_core::dataio::{SensorConfig, SensorRig};
use tactforge_core::gelsim::{raycast_indent, DepthMap, IndenterShape};
use tactforge_core::optics::{render_frame, render_radiance, CameraModel, LightRig, RenderSetup, SurfaceMaterial};
use tactforge_core::pattern::{generate, PatternConfig, PatternImage};
use tactforge_core::{RgbImage, SensorGeometry, Vec3};

fn rotate_rgb_90(img: &RgbImage) -> RgbImage {
    let n = img.width;
    let mut out = RgbImage::new(n, n);
    for row in 0..n {
        for col in 0..n {
            let (r2, c2) = (col, n - 1 - row);
            for c in 0..3 {
                out.data[3 * (r2 * n + c2) + c] = img.data[3 * (row * n + col) + c];
            }
        }
    }
    out
}

fn mean_abs_diff(a: &RgbImage, b: &RgbImage) -> f64 {
    let s: u64 = a.data.iter().zip(&b.data).map(|(x, y)| (*x as i64 - *y as i64).unsigned_abs()).sum();
    s as f64 / a.data.len() as f64
}

fn pressed(geom: &SensorGeometry) -> DepthMap {
    let shape = IndenterShape::Sphere {
        center: Vec3::new(3.0, 1.5, geom.r_nominal - 1.5 + 5.0),
        radius: 5.0,
    };
    raycast_indent(geom, &shape).unwrap().depth
}

fn small_pattern() -> PatternImage {
    let cfg = PatternConfig {
        n: 2000,
        domain_mm: 25.0,
        iterations: 10,
        ..PatternConfig::default()
    };
    generate(&cfg, 5).unwrap().image
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projection_roundtrip(seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let cam = CameraModel::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let max_t = cam.half_fov();
        for _ in 0..160 {
            let t = rng.random_range(0.0..max_t);
            let a = rng.random_range(-PI..PI);
            let v = Vec3::new(t.sin() * a.cos(), t.sin() * a.sin(), t.cos());
            let back = cam.unproject(cam.project(v).unwrap()).unwrap();
            prop_assert!((back - v).norm() <= 1e-9);
        }
    }

    #[test]
    fn radiance_scales_with_emitter_intensity(factor in 0.1f64..5.0) {
        let geom = SensorGeometry::with_grid(24);
        let mut rig = LightRig::default();
        rig.ambient = [0.0; 3];
        let setup = |rig: LightRig| RenderSetup {
            geometry: geom,
            camera: geom.grid,
            rig,
            material: SurfaceMaterial::default(),
            tone: Default::default(),
        };
        let d = pressed(&geom);
        let a = render_radiance(&d, &setup(rig.clone())).unwrap();
        let b = render_radiance(&d, &setup(rig.scaled(factor))).unwrap();
        for (x, y) in a.iter().zip(&b) {
            for c in 0..3 {
                prop_assert!((y[c] - factor * x[c]).abs() <= 1e-12 * (1.0 + y[c].abs()));
            }
        }
    }
}

#[test]
fn ten_thousand_directions_roundtrip() {
    let cam = CameraModel::default();
    let (n, m) = (100, 100);
    for i in 0..n {
        for j in 0..m {
            let t = cam.half_fov() * (i as f64 + 0.5) / n as f64;
            let a = 2.0 * PI * j as f64 / m as f64;
            let v = Vec3::new(t.sin() * a.cos(), t.sin() * a.sin(), t.cos());
            let back = cam.unproject(cam.project(v).unwrap()).unwrap();
            assert!((back - v).norm() <= 1e-9);
        }
    }
}

#[test]
fn quarter_turn_of_scene_turns_the_image() {
    let geom = SensorGeometry::with_grid(96);
    let pattern = small_pattern();
    let base = RenderSetup {
        geometry: geom,
        camera: geom.grid,
        rig: LightRig::default(),
        material: SurfaceMaterial::with_pattern(&pattern).unwrap(),
        tone: Default::default(),
    };
    let turned = RenderSetup {
        rig: base.rig.rotated_about_z(PI / 2.0),
        material: SurfaceMaterial::with_pattern(&pattern.rotated_90()).unwrap(),
        ..base.clone()
    };
    let d = pressed(&geom);
    let a = render_frame(&d, &base).unwrap();
    let b = render_frame(&d.rotated_90(), &turned).unwrap();
    let diff = mean_abs_diff(&rotate_rgb_90(&a), &b);
    assert!(diff <= 2.0, "mean abs diff {diff}");
}

fn downsample2(img: &RgbImage) -> RgbImage {
    let n = img.width / 2;
    let mut out = RgbImage::new(n, n);
    for r in 0..n {
        for c in 0..n {
            for ch in 0..3 {
                let s: u32 = [(0, 0), (0, 1), (1, 0), (1, 1)]
                    .iter()
                    .map(|(dr, dc)| img.data[3 * ((2 * r + dr) * img.width + 2 * c + dc) + ch] as u32)
                    .sum();
                out.data[3 * (r * n + c) + ch] = ((s + 2) / 4) as u8;
            }
        }
    }
    out
}

#[test]
fn default_pattern_does_not_alias() {
    let pattern = generate(&PatternConfig::default(), 0).unwrap().image;
    let render_at = |size: usize| {
        let cfg = SensorConfig::default().with_image_size(size);
        let rig = SensorRig::with_pattern(&cfg, &pattern).unwrap();
        render_frame(&pressed(rig.geometry()), &rig.setup).unwrap()
    };
    let lo = render_at(640);
    let hi = downsample2(&render_at(1280));
    let diff = mean_abs_diff(&lo, &hi);
    assert!(diff <= 4.0, "mean abs diff {diff}");
}
