use std::path::Path;

use auctionsim::equilibrium::coarse_bce_epsilon;
use auctionsim::mechanisms::counterfactual_rewards;
use auctionsim::simulator::run_simulation;
use auctionsim::{sample_env_sequence, Action, EmpiricalProfile, RunOptions, Scenario};
use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

fn load(name: &str) -> Scenario {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name);
    Scenario::from_toml_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn mechanisms(c: &mut Criterion) {
    let s = load("multi_query_hedge.toml");
    let types = vec![0u16; s.num_bidders()];
    let actions: Vec<Action> =
        (0..s.num_bidders()).map(|i| s.action_at((i * 37) % s.num_actions())).collect();
    c.bench_function("counterfactual rewards, multi-query", |b| {
        b.iter(|| counterfactual_rewards(&s, 0, &types, black_box(&actions), s.mechanism(), 0).unwrap())
    });
}

fn simulation(c: &mut Criterion) {
    let mut group = c.benchmark_group("simulation");
    group.sample_size(10);
    for name in ["textbook_hedge_second.toml", "textbook_exp3ix_first.toml", "multi_query_hedge.toml"] {
        let s = load(name).modified(|c| c.horizon = 20_000).unwrap();
        let env = sample_env_sequence(&s);
        group.bench_function(name.trim_end_matches(".toml"), |b| {
            b.iter(|| run_simulation(&s, &env, black_box(1), RunOptions::default()).unwrap())
        });
    }
    group.finish();
}

fn equilibrium(c: &mut Criterion) {
    let s = load("textbook_hedge_first.toml").modified(|c| c.horizon = 20_000).unwrap();
    let env = sample_env_sequence(&s);
    let options = RunOptions { record_trace: true, realized_clicks: false };
    let run = run_simulation(&s, &env, 3, options).unwrap();
    let trace = run.trace.unwrap();
    c.bench_function("coarse BCE epsilon, 2000 periods", |b| {
        b.iter_batched(
            || EmpiricalProfile::from_trace(&trace).unwrap(),
            |p| coarse_bce_epsilon(&p, &s).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, mechanisms, simulation, equilibrium);
criterion_main!(benches);
