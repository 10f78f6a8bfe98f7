//! Sequential versus rayon execution of the hot paths.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gsreg::experiment::landmark_init;
use gsreg::mesh::{bone_like, icosphere};
use gsreg::metrics::{chamfer_one_sided_with, KdTree};
use gsreg::registration::weighted_cost;
use gsreg::simulate::{make_trial, sample_surface_uniform, ExperimentSpec, RegionMask};
use gsreg::{build_gradient_sdf, robust_register, BuildOptions, Execution, RobustConfig, Vec3};

const MODES: [Execution; 2] = [Execution::Sequential, Execution::Parallel];

fn sdf_build(c: &mut Criterion) {
    let mesh = icosphere(25.0, 3);
    let mut group = c.benchmark_group("sdf_build");
    group.sample_size(10);
    for exec in MODES {
        let opts = BuildOptions {
            execution: exec,
            ..Default::default()
        };
        group.bench_function(BenchmarkId::from_parameter(format!("{exec:?}")), |b| {
            b.iter(|| build_gradient_sdf(black_box(&mesh), &opts).unwrap())
        });
    }
    group.finish();
}

fn registration(c: &mut Criterion) {
    let mesh = bone_like(3);
    let sdf = build_gradient_sdf(&mesh, &BuildOptions::default()).unwrap().0;
    let region = RegionMask::spherical_cap(&mesh, RegionMask::nearest_vertex(&mesh, &Vec3::new(20.0, 10.0, 80.0)), 65.0).unwrap();

    let mut group = c.benchmark_group("robust_register");
    group.sample_size(10);
    for ratio in [0.5, 0.9] {
        let spec = ExperimentSpec {
            noise_sigma: [0.5; 3],
            outlier_ratio: ratio,
            ..Default::default()
        };
        let trial = make_trial(&mesh, &region, &spec).unwrap();
        let x0 = landmark_init(&trial, 3, 0.5, 0).unwrap();
        for exec in MODES {
            let config = RobustConfig {
                execution: exec,
                ..Default::default()
            };
            let id = BenchmarkId::new(format!("{exec:?}"), format!("{} points", trial.combined.len()));
            group.bench_with_input(id, &trial.combined, |b, points| {
                b.iter(|| robust_register(&sdf, black_box(points), &x0, &config).unwrap())
            });
        }

        let weights = vec![1.0; trial.combined.len()];
        for exec in MODES {
            let id = BenchmarkId::new(format!("weighted_cost/{exec:?}"), trial.combined.len());
            group.bench_function(id, |b| b.iter(|| weighted_cost(&sdf, &x0, black_box(&trial.combined), &weights, exec)));
        }
    }
    group.finish();
}

fn chamfer(c: &mut Criterion) {
    let mesh = bone_like(3);
    let whole = RegionMask::whole(&mesh);
    let dense = sample_surface_uniform(&mesh, &whole, 100_000, 1).unwrap();
    let probe = sample_surface_uniform(&mesh, &whole, 5_000, 2).unwrap();
    let tree = KdTree::new(&dense);
    let mut group = c.benchmark_group("chamfer_one_sided");
    for exec in MODES {
        group.bench_function(BenchmarkId::from_parameter(format!("{exec:?}")), |b| {
            b.iter(|| chamfer_one_sided_with(black_box(&probe), &tree, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, sdf_build, registration, chamfer);
criterion_main!(benches);
