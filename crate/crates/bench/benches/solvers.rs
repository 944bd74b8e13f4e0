use conewave::inverse::{invert_linearized_modes, layer_strip_radial, InversionConfig};
use conewave::{cylinder_trace_mode, forward_linearized, forward_nonlinear, solve_background, SphereTransform};
use conewave_bench::{grid, harmonic_bump, radial_bump};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn background(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve_background");
    for inv_h in [64u32, 128, 256] {
        let h = 1.0 / inv_h as f64;
        let (g, q) = (grid(h), radial_bump(h));
        group.bench_with_input(BenchmarkId::from_parameter(inv_h), &inv_h, |b, _| {
            b.iter(|| solve_background(&q, g).unwrap())
        });
    }
    group.finish();
}

fn sphere(c: &mut Criterion) {
    let mut group = c.benchmark_group("sphere_transform");
    for lmax in [4usize, 8] {
        let t = SphereTransform::for_degree(lmax);
        let coeffs = conewave::HarmonicCoeffs {
            values: (0..t.nmodes()).map(|n| 1.0 / (1.0 + n as f64)).collect(),
        };
        let field = t.synthesize(&coeffs).unwrap();
        group.bench_with_input(BenchmarkId::new("analyze", lmax), &lmax, |b, _| {
            b.iter(|| t.analyze(&field).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("omega", lmax), &lmax, |b, _| {
            b.iter(|| t.omega_coeffs(1, 2, &coeffs).unwrap())
        });
    }
    group.finish();
}

fn forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("forward");
    group.sample_size(10);
    let h = 1.0 / 64.0;
    for lmax in [2usize, 4] {
        let q = harmonic_bump(lmax, h);
        let qb = radial_bump(h);
        group.bench_with_input(BenchmarkId::new("linearized", lmax), &lmax, |b, _| {
            b.iter(|| forward_linearized(&qb, &q, grid(h), 0.5, 1.5).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("nonlinear", lmax), &lmax, |b, _| {
            b.iter(|| forward_nonlinear(&q, grid(h)).unwrap())
        });
    }
    group.finish();
}

fn inversion(c: &mut Criterion) {
    let mut group = c.benchmark_group("inversion");
    let cfg = InversionConfig::default();
    for inv_h in [64u32, 128] {
        let h = 1.0 / inv_h as f64;
        let ub = solve_background(&radial_bump(h), grid(h)).unwrap();
        let tr = cylinder_trace_mode(&ub, 0.5, 1.5).unwrap();
        group.bench_with_input(BenchmarkId::new("layer_strip", inv_h), &inv_h, |b, _| {
            b.iter(|| layer_strip_radial(&tr, &cfg).unwrap())
        });
    }
    let h = 1.0 / 64.0;
    let qb = radial_bump(h);
    let (_, tr) = forward_linearized(&qb, &harmonic_bump(4, h), grid(h), 0.5, 1.5).unwrap();
    group.bench_function("linearized_lmax4", |b| b.iter(|| invert_linearized_modes(&tr, &qb, &cfg).unwrap()));
    group.finish();
}

criterion_group!(benches, background, sphere, forward, inversion);
criterion_main!(benches);
