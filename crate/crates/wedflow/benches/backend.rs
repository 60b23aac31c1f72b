//! Compares the data-parallel slice kernel against the sequential fallback
//! on the two workloads that dominate solver time: evaluating weighted
//! residual densities across time slices, and a full assembled solve.

use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use wedflow::parallel::{indexed_map, indexed_map_seq};
use wedflow::potentials::{make_p_power_dissipation, make_power_energy, EnergySplit};
use wedflow::spaces::DiscreteSpace;
use wedflow::wed::{minimize_wed, DofMask, DualTrajectory, SolveConfig, TimeGrid, WedProblem};

fn slice_workload(nodes: usize, slices: usize) -> (Arc<DiscreteSpace>, Vec<Vec<f64>>) {
    let space = Arc::new(DiscreteSpace::uniform_unit(nodes, 2.0, 2.0).unwrap());
    let states = (0..slices)
        .map(|n| {
            (0..nodes)
                .map(|j| ((n * nodes + j) as f64 * 0.37).sin())
                .collect()
        })
        .collect();
    (space, states)
}

fn density_pass(space: &DiscreteSpace, states: &[Vec<f64>], par: bool) -> f64 {
    let f = |n: usize| -> f64 {
        let u = &states[n];
        let mut acc = 0.0;
        for (j, &x) in u.iter().enumerate() {
            acc += space.weight_at(j) * x.abs().powf(2.0) * (1.0 + (n as f64 * 1e-3)).ln_1p();
        }
        acc
    };
    let parts = if par {
        indexed_map(states.len(), f)
    } else {
        indexed_map_seq(states.len(), f)
    };
    parts.iter().sum()
}

fn bench_density(c: &mut Criterion) {
    let mut group = c.benchmark_group("slice_density");
    for &(nodes, slices) in &[(65usize, 400usize), (257, 800)] {
        let (space, states) = slice_workload(nodes, slices);
        group.bench_with_input(
            BenchmarkId::new("parallel", format!("{nodes}x{slices}")),
            &(),
            |b, _| b.iter(|| density_pass(&space, &states, true)),
        );
        group.bench_with_input(
            BenchmarkId::new("sequential", format!("{nodes}x{slices}")),
            &(),
            |b, _| b.iter(|| density_pass(&space, &states, false)),
        );
    }
    group.finish();
}

fn solve_problem(nodes: usize, n_steps: usize) -> WedProblem {
    let space = Arc::new(DiscreteSpace::uniform_unit(nodes, 2.0, 2.0).unwrap());
    WedProblem {
        space: space.clone(),
        grid: TimeGrid::new(1.0, n_steps).unwrap(),
        epsilon: 0.05,
        psi: make_p_power_dissipation(space.clone(), 2.0).unwrap(),
        split: EnergySplit::convex(make_power_energy(space.clone(), 2.0, 1.0).unwrap()),
        forcing: DualTrajectory::zeros(&space, n_steps),
        initial: space.field_from_fn(|_c, x| (std::f64::consts::PI * x).sin()),
        mask: DofMask::all_free(nodes),
    }
}

fn bench_solve(c: &mut Criterion) {
    let mut group = c.benchmark_group("full_solve");
    group.sample_size(10);
    let problem = solve_problem(33, 200);
    group.bench_function("newton_33x200", |b| {
        b.iter(|| minimize_wed(&problem, None, &SolveConfig::default()).unwrap())
    });
    group.finish();
}

criterion_group!(benches, bench_density, bench_solve);
criterion_main!(benches);
