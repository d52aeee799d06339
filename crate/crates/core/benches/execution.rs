//! Sequential vs rayon execution of the data-parallel hot paths.

use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dcg_ope::bias_models::PositionBiasModel;
use dcg_ope::domain::{ActionId, Catalog, ContextId, QualityModel};
use dcg_ope::estimators::{evaluate_with, EstimatorConfig};
use dcg_ope::exec::Execution;
use dcg_ope::policies::{CandidateGenerator, RankingPolicy, ScoreTable, TwoStagePolicy};
use dcg_ope::simulator::{monte_carlo_policy_value_with, simulate_dataset_with, Environment, RewardMode};

fn setup() -> (Environment, TwoStagePolicy, PositionBiasModel) {
    let contexts: Vec<ContextId> = (0..20).map(|i| ContextId::new(format!("x{i}"))).collect();
    let actions: Vec<ActionId> = (0..6).map(|i| ActionId::new(format!("a{i}"))).collect();
    let cells = || contexts.iter().enumerate().flat_map(|(i, x)| actions.iter().enumerate().map(move |(j, a)| (i, j, x, a)));
    let quality = QualityModel::from_entries(cells().map(|(i, j, x, a)| (x.clone(), a.clone(), ((i * 7 + j * 3) % 10) as f64 / 10.0))).unwrap();
    let log_scores = Arc::new(ScoreTable::from_entries(cells().map(|(_, j, x, a)| (x.clone(), a.clone(), -(j as f64)))).unwrap());
    let tgt_scores = Arc::new(ScoreTable::from_entries(cells().map(|(i, j, x, a)| (x.clone(), a.clone(), ((i + j) % 6) as f64))).unwrap());
    let env = Environment {
        catalog: Catalog::new(actions.clone()).unwrap(),
        context_probs: vec![1.0 / 20.0; 20],
        contexts: contexts.clone(),
        quality,
        logging_pbm: PositionBiasModel::exponential(0.8, 6),
        logging: TwoStagePolicy::new(CandidateGenerator::FullCatalog, RankingPolicy::deterministic(log_scores)),
        reward_mode: RewardMode::Binary,
    };
    let target = TwoStagePolicy::new(CandidateGenerator::FullCatalog, RankingPolicy::plackett_luce(tgt_scores, 1.0).unwrap());
    (env, target, PositionBiasModel::exponential(0.8, 6))
}

fn bench(c: &mut Criterion) {
    let (env, target, pbm) = setup();
    let n = 50_000;
    let dataset = simulate_dataset_with(Execution::Parallel, &env, n, 0, 1).unwrap();
    let config = EstimatorConfig::unbiased(pbm.clone());
    for exec in [Execution::Sequential, Execution::Parallel] {
        let label = format!("{exec:?}");
        c.bench_with_input(BenchmarkId::new("simulate_dataset", &label), &exec, |b, &exec| {
            b.iter(|| simulate_dataset_with(exec, &env, n, 0, black_box(1)).unwrap())
        });
        c.bench_with_input(BenchmarkId::new("evaluate", &label), &exec, |b, &exec| {
            b.iter(|| evaluate_with(exec, black_box(&dataset), &target, &config, &env.catalog).unwrap())
        });
        c.bench_with_input(BenchmarkId::new("monte_carlo", &label), &exec, |b, &exec| {
            b.iter(|| monte_carlo_policy_value_with(exec, &env, &target, &pbm, n, black_box(2)).unwrap())
        });
    }
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = bench
}
criterion_main!(benches);
