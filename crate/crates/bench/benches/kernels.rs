use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use msflow_bench::disk;
use msflow_core::mesh::generate_mesh_seeded;
use msflow_core::operators::{assemble_stiffness, gradient_diagnostics};
use msflow_core::{solve_translator, step, FlowConfig, FlowProblem, Forcing, ScalarField, SupportCurve, TranslatorOptions};

const SIZES: [f64; 3] = [0.1, 0.05, 0.025];

fn mesh(c: &mut Criterion) {
    let curve = SupportCurve::ellipse(1.5, 1.0).unwrap();
    let mut g = c.benchmark_group("mesh");
    g.sample_size(20);
    for h in SIZES {
        g.bench_with_input(BenchmarkId::from_parameter(h), &h, |b, &h| {
            b.iter(|| generate_mesh_seeded(&curve, black_box(h), 0).unwrap())
        });
    }
    g.finish();
}

fn stiffness(c: &mut Criterion) {
    let mut g = c.benchmark_group("stiffness");
    for h in SIZES {
        let (_, space, _) = disk(h);
        let u = ScalarField::from_fn(space.mesh(), |x| x[0] * x[0] - 0.5 * x[1]);
        g.bench_with_input(BenchmarkId::from_parameter(h), &h, |b, _| {
            b.iter(|| {
                let d = gradient_diagnostics(&space, &u);
                assemble_stiffness(&space, &d)
            })
        });
    }
    g.finish();
}

fn flow_step(c: &mut Criterion) {
    let mut g = c.benchmark_group("flow_step");
    for h in SIZES {
        let (_, space, alpha) = disk(h);
        let problem = FlowProblem::new(&space, &alpha, &Forcing::Zero);
        let cfg = FlowConfig { dt: 1e-3, ..FlowConfig::default() };
        let u = ScalarField::from_fn(space.mesh(), |x| x[0] * x[0]);
        g.bench_with_input(BenchmarkId::from_parameter(h), &h, |b, _| b.iter(|| step(&problem, &u, &cfg).unwrap()));
    }
    g.finish();
}

fn translator(c: &mut Criterion) {
    let mut g = c.benchmark_group("translator");
    g.sample_size(10);
    for h in SIZES {
        let (_, space, alpha) = disk(h);
        let opts = TranslatorOptions::default();
        g.bench_with_input(BenchmarkId::from_parameter(h), &h, |b, _| {
            b.iter(|| solve_translator(&space, &alpha, &Forcing::Zero, &opts).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, mesh, stiffness, flow_step, translator);
criterion_main!(benches);
