use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use mcflab::gaussian::EntropySearch;
use mcflab::mesh::clip::BallQuery;
use mcflab::mesh::shapes::{icosphere, torus};
use mcflab::*;
use nalgebra::Vector3;

fn curvature(c: &mut Criterion) {
    let m = icosphere(2.0, 4);
    c.bench_function("curvature/icosphere4", |b| b.iter(|| compute_curvature(black_box(&m)).unwrap()));
}

fn flow_step(c: &mut Criterion) {
    let m = icosphere(2.0, 4);
    let gravity = ForceSpec::constant(Vector3::new(0.0, 0.0, -0.1));
    c.bench_function("step/icosphere4/zero", |b| b.iter(|| step(black_box(&m), &ForceSpec::Zero, 1e-4).unwrap()));
    c.bench_function("step/icosphere4/gravity", |b| b.iter(|| step(black_box(&m), &gravity, 1e-4).unwrap()));
}

fn gaussian(c: &mut Criterion) {
    let m = icosphere(2.0, 4);
    let t = torus(2.0, 0.5, 48, 24);
    c.bench_function("f_functional/icosphere4/tau1", |b| b.iter(|| f_functional(black_box(&m), &Point::zeros(), 1.0).unwrap()));
    c.bench_function("f_functional/icosphere4/tau1e-3", |b| {
        b.iter(|| f_functional(black_box(&m), &Point::new(0.0, 0.0, 2.0), 1e-3).unwrap())
    });
    c.bench_function("f_functional/torus/tau0.1", |b| b.iter(|| f_functional(black_box(&t), &Point::new(2.5, 0.0, 0.0), 0.1).unwrap()));
    let mut g = c.benchmark_group("entropy");
    g.sample_size(10);
    let small = icosphere(2.0, 3);
    g.bench_function("icosphere3", |b| b.iter(|| entropy(black_box(&small), &EntropySearch::default()).unwrap()));
    g.finish();
}

fn ball_area(c: &mut Criterion) {
    let m = icosphere(2.0, 4);
    c.bench_function("ball_query/build", |b| b.iter(|| BallQuery::new(black_box(&m))));
    let q = BallQuery::new(&m);
    c.bench_function("ball_query/area_r0.5", |b| b.iter(|| q.area(black_box(&Point::new(0.0, 0.0, 2.0)), 0.5)));
}

criterion_group!(benches, curvature, flow_step, gaussian, ball_area);
criterion_main!(benches);
