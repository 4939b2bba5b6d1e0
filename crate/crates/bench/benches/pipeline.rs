use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use tactforge_core::dataio::{SensorConfig, SensorRig};
use tactforge_core::gelsim::{apply_bulge, raycast_indent, IndenterShape, MeshIndenter};
use tactforge_core::gelsim::mesh::TriMesh;
use tactforge_core::math::{Pose, Quat};
use tactforge_core::neural::{Graph, Mode, Model, ModelSpec, Task, Tensor};
use tactforge_core::optics::render_frame;
use tactforge_core::pattern::{generate, PatternConfig};
use tactforge_core::{SensorGeometry, Vec3};

fn small_pattern() -> PatternConfig {
    PatternConfig {
        n: 1024,
        domain_mm: 10.0,
        iterations: 10,
        ..PatternConfig::default()
    }
}

fn pattern(c: &mut Criterion) {
    let cfg = small_pattern();
    c.bench_function("pattern_1024", |b| b.iter(|| generate(black_box(&cfg), 1).unwrap()));
}

fn raycast(c: &mut Criterion) {
    let geom = SensorGeometry::with_grid(64);
    let sphere = IndenterShape::Sphere {
        center: Vec3::new(1.0, 0.5, 18.5),
        radius: 5.0,
    };
    c.bench_function("raycast_sphere_64", |b| b.iter(|| raycast_indent(&geom, black_box(&sphere)).unwrap()));
    let mesh = MeshIndenter::new(TriMesh::icosphere(5.0, 3));
    let shape = IndenterShape::Mesh {
        indenter: std::sync::Arc::new(mesh),
        pose: Pose::new(Quat::default(), Vec3::new(0.0, 0.0, 18.5)),
    };
    c.bench_function("raycast_icosphere3_64", |b| b.iter(|| raycast_indent(&geom, black_box(&shape)).unwrap()));
    let contact = raycast_indent(&geom, &sphere).unwrap().depth;
    c.bench_function("bulge_64", |b| b.iter(|| apply_bulge(black_box(&contact), &geom, 20.0).unwrap()));
}

fn render(c: &mut Criterion) {
    let mut cfg = SensorConfig::default().with_image_size(64);
    cfg.pattern = small_pattern();
    let rig = SensorRig::build(&cfg).unwrap();
    let sphere = IndenterShape::Sphere {
        center: Vec3::new(0.0, 0.0, 18.5),
        radius: 5.0,
    };
    let depth = raycast_indent(rig.geometry(), &sphere).unwrap().depth;
    c.bench_function("render_64", |b| b.iter(|| render_frame(black_box(&depth), &rig.setup).unwrap()));
}

fn conv_forward(c: &mut Criterion) {
    let model = Model::new(ModelSpec::desk(Task::Depth), 0).unwrap();
    let n: usize = model.input_shape(8).iter().product();
    let x = Tensor::new(model.input_shape(8), (0..n).map(|i| (i % 255) as f64 / 255.0).collect());
    let mut group = c.benchmark_group("desk_depth");
    group.sample_size(10);
    group.bench_function("forward_batch8", |b| b.iter(|| model.predict(black_box(&x)).unwrap()));
    group.bench_function("forward_backward_batch8", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            let xi = g.input(x.clone());
            let f = model.forward(&mut g, xi, Mode::Train).unwrap();
            let l = g.mean(f.output);
            g.backward(l);
            black_box(g.param_grads().len())
        })
    });
    group.finish();
}

criterion_group!(benches, pattern, raycast, render, conv_forward);
criterion_main!(benches);
