use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ctpe::basis::make_fourier;
use ctpe::estimators::{estimate, estimate_killed, EstimateOptions};
use ctpe::exact::{solve_method, ExactOptions, GridSpec};
use ctpe::exec::ExecMode;
use ctpe::harness::{run_sweep, ExperimentSpec};
use ctpe::process::{simulate_killed_batch, simulate_trajectory, InitialLaw, ModelSpec};
use ctpe::scheme::Method;

const MODES: [ExecMode; 2] = [ExecMode::Sequential, ExecMode::Parallel];

fn label(mode: ExecMode) -> &'static str {
    match mode {
        ExecMode::Sequential => "sequential",
        ExecMode::Parallel => "parallel",
    }
}

fn estimators(c: &mut Criterion) {
    let model = "ou-periodic".parse::<ModelSpec>().unwrap().build().unwrap();
    let fm = make_fourier(5);
    let traj = simulate_trajectory(&model, &[0.0], 0.1, 200_000, 1, 1).unwrap();
    let batch = simulate_killed_batch(&model, InitialLaw::Stationary, 0.1, 2_000, 1.0, 8, 2, ExecMode::Sequential)
        .unwrap();
    let scheme = Method::Bellman(2).scheme(1.0, 0.1).unwrap();
    let mut g = c.benchmark_group("estimate");
    for mode in MODES {
        let opts = EstimateOptions { mode, ridge: 0.0 };
        g.bench_with_input(BenchmarkId::new("single", label(mode)), &opts, |b, o| {
            b.iter(|| estimate(black_box(&traj), &fm, &scheme, o).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("killed", label(mode)), &opts, |b, o| {
            b.iter(|| estimate_killed(black_box(&batch), &fm, &scheme, o).unwrap())
        });
    }
    g.finish();
}

fn exact_assembly(c: &mut Criterion) {
    let model = "ou-periodic".parse::<ModelSpec>().unwrap().build().unwrap();
    let fm = make_fourier(5);
    let grid = GridSpec::uniform(-std::f64::consts::PI, std::f64::consts::PI, 800).unwrap();
    let mut g = c.benchmark_group("solve_exact");
    for mode in MODES {
        let opts = ExactOptions { mode, ridge: 0.0 };
        g.bench_with_input(BenchmarkId::new("generator:3", label(mode)), &opts, |b, o| {
            b.iter(|| solve_method(&model, &fm, Method::Generator(3), 0.1, &grid, o).unwrap())
        });
    }
    g.finish();
}

fn simulation(c: &mut Criterion) {
    let model = "ou-periodic".parse::<ModelSpec>().unwrap().build().unwrap();
    let mut g = c.benchmark_group("simulate_killed_batch");
    for mode in MODES {
        g.bench_function(label(mode), |b| {
            b.iter(|| {
                simulate_killed_batch(&model, InitialLaw::Stationary, 0.1, 2_000, 1.0, 8, 3, mode).unwrap()
            })
        });
    }
    g.finish();
}

fn sweep(c: &mut Criterion) {
    let base = ExperimentSpec::from_toml(
        r#"
model = "ou-periodic"
basis = "fourier:3"
methods = ["bellman:1", "bellman:2"]
data = "single"
metric = "mse"
replications = 4
seed = 5
eta = 0.1
mse_samples = 1000
[axis]
kind = "horizon"
values = [1000.0, 2000.0, 4000.0]
"#,
    )
    .unwrap();
    let mut g = c.benchmark_group("run_sweep");
    g.sample_size(10);
    for mode in MODES {
        let spec = ExperimentSpec { mode, ..base.clone() };
        g.bench_function(label(mode), |b| b.iter(|| run_sweep(&spec).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, estimators, exact_assembly, simulation, sweep);
criterion_main!(benches);
