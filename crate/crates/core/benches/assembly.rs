use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nsd_core::elements::{build_dof_map, BasisFamily, DofDomain};
use nsd_core::forms::{self, Convection, Field};
use nsd_core::mesh::{build_two_domain_mesh, Geometry};
use nsd_core::par;

fn assembly(c: &mut Criterion) {
    let mesh = build_two_domain_mesh(&Geometry::unit_stack(), 1.0 / 48.0).unwrap();
    let velocity = Arc::new(build_dof_map(&mesh, BasisFamily::Quadratic, 2, DofDomain::Fluid));
    let head = build_dof_map(&mesh, BasisFamily::Linear, 1, DofDomain::Porous);
    let u = Field::new(&velocity, velocity.interpolate_vector(|p| [p[1] * (1.0 - p[1]), p[0].sin()])).unwrap();

    let mut group = c.benchmark_group("assembly");
    group.sample_size(20);
    for (label, sequential) in [("rayon", false), ("sequential", true)] {
        par::set_sequential(sequential);
        group.bench_with_input(BenchmarkId::new("viscous P2", label), &(), |b, _| {
            b.iter(|| black_box(forms::laplace_matrix(&mesh, &velocity, 1e-3)))
        });
        group.bench_with_input(BenchmarkId::new("head stiffness P1", label), &(), |b, _| {
            b.iter(|| black_box(forms::laplace_matrix(&mesh, &head, 1.0)))
        });
        group.bench_with_input(BenchmarkId::new("emac convection", label), &(), |b, _| {
            b.iter(|| black_box(forms::convection_vector(&mesh, &u, Convection::Emac)))
        });
    }
    par::set_sequential(false);
    group.finish();
}

criterion_group!(benches, assembly);
criterion_main!(benches);
