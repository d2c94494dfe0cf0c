use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gsnell::agent::{principal_agent_bruteforce, Cost, PrincipalAgentSpec, StoppingMode, Utility};
use gsnell::drivers::{make_clipped_quadratic, make_entropic};
use gsnell::gexp::g_expectation;
use gsnell::lattice::{AdaptedProcess, Topology, TreeModel};
use gsnell::snell::snell_oracle;
use gsnell::Execution;

const POLICIES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn oracle(c: &mut Criterion) {
    let mut group = c.benchmark_group("snell_oracle_depth5");
    group.sample_size(10);
    for (name, exec) in POLICIES {
        let model = TreeModel::new(1.0, 5, Topology::BinaryPath).unwrap().with_execution(exec);
        let f0 = make_clipped_quadratic(1.0, 1.0).unwrap().with_level(|t| 0.1 + t);
        let b = model.terminal_from_w(|w| w.sin());
        let u = AdaptedProcess::from_fn(&model, |k, i| {
            if k == model.steps() {
                b[i] + 0.1
            } else {
                0.3 + 0.5 * model.brownian(k, i).cos()
            }
        });
        group.bench_function(BenchmarkId::from_parameter(name), |bench| {
            bench.iter(|| snell_oracle(&model, &f0, black_box(&b), &u, 0).unwrap())
        });
    }
    group.finish();
}

fn lattice(c: &mut Criterion) {
    let mut group = c.benchmark_group("recomb_g_expectation_4096");
    group.sample_size(20);
    for (name, exec) in POLICIES {
        let model = TreeModel::new(1.0, 4096, Topology::RecombLattice).unwrap().with_execution(exec);
        let g = make_entropic(0.5).unwrap();
        let b = model.terminal_from_w(f64::tanh);
        group.bench_function(BenchmarkId::from_parameter(name), |bench| {
            bench.iter(|| g_expectation(&model, &g, black_box(&b)).unwrap().root())
        });
    }
    group.finish();
}

fn agent(c: &mut Criterion) {
    let mut group = c.benchmark_group("agent_bruteforce_depth3");
    group.sample_size(10);
    for (name, exec) in POLICIES {
        let model = TreeModel::new(1.0, 3, Topology::BinaryPath).unwrap().with_execution(exec);
        let spec = PrincipalAgentSpec {
            utility: Utility::Exponential { gamma: 1.0 },
            cost: Cost::Quadratic { scale: 1.0 },
            payment: AdaptedProcess::from_fn(&model, |k, i| 0.3 * k as f64 + 0.2 * model.brownian(k, i)),
            volatility: 1.0,
            control_grid: vec![-0.5, 0.0, 0.5, 1.0],
            stopping: StoppingMode::Free,
        };
        group.bench_function(BenchmarkId::from_parameter(name), |bench| {
            bench.iter(|| principal_agent_bruteforce(&model, black_box(&spec)).unwrap().value)
        });
    }
    group.finish();
}

criterion_group!(benches, oracle, lattice, agent);
criterion_main!(benches);
