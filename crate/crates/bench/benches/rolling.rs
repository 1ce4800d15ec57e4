use criterion::{criterion_group, criterion_main, Criterion, Throughput};
use std::hint::black_box;

use manifold_roller_bench::{mixed_driver, north, standard_frame};
use manifold_roller_core::connection::ConnectionRuleKind;
use manifold_roller_core::integrals::{ito_integral, OneFormProcess};
use manifold_roller_core::manifold::Point;
use manifold_roller_core::rolling::{antidevelop, develop, SchemeConfig};

fn bench_develop(c: &mut Criterion) {
    let mut group = c.benchmark_group("develop");
    for steps in [1_000usize, 10_000] {
        let w = mixed_driver(steps, 11);
        let x0 = north();
        let u0 = standard_frame();
        group.throughput(Throughput::Elements(steps as u64));
        group.bench_function(format!("sphere2_{steps}_steps"), |b| {
            b.iter(|| {
                develop(black_box(&w), &x0, &u0, &SchemeConfig::default()).unwrap()
            })
        });
    }
    group.finish();
}

fn bench_antidevelop(c: &mut Criterion) {
    let w = mixed_driver(10_000, 13);
    let rolled = develop(&w, &north(), &standard_frame(), &SchemeConfig::default()).unwrap();
    let mut group = c.benchmark_group("antidevelop");
    group.throughput(Throughput::Elements(10_000));
    group.bench_function("sphere2_10000_steps", |b| {
        b.iter(|| antidevelop(black_box(&rolled), ConnectionRuleKind::geodesic()).unwrap())
    });
    group.finish();
}

fn bench_ito(c: &mut Criterion) {
    let w = mixed_driver(10_000, 17);
    let rolled = develop(&w, &north(), &standard_frame(), &SchemeConfig::default()).unwrap();
    let phi = OneFormProcess::from_dual_field(|p: &Point| {
        p.tangent_from_ambient(&[0.0, 0.0, 1.0]).unwrap()
    });
    let mut group = c.benchmark_group("ito_integral");
    group.throughput(Throughput::Elements(10_000));
    group.bench_function("height_form_10000_steps", |b| {
        b.iter(|| ito_integral(&phi, black_box(&rolled), ConnectionRuleKind::geodesic()).unwrap())
    });
    group.finish();
}

criterion_group!(benches, bench_develop, bench_antidevelop, bench_ito);
criterion_main!(benches);
