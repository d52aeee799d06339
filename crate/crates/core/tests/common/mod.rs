#![allow(dead_code)]

use std::sync::Arc;

use dcg_ope::bias_models::PositionBiasModel;
use dcg_ope::domain::{ActionId, Catalog, ContextId, QualityModel};
use dcg_ope::policies::{CandidateGenerator, RankingPolicy, ScoreTable, TwoStagePolicy};
use dcg_ope::simulator::{Environment, RewardMode};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn ids(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

pub fn random_scores(rng: &mut impl Rng, contexts: &[ContextId], catalog: &Catalog) -> Arc<ScoreTable> {
    let entries = contexts
        .iter()
        .flat_map(|x| catalog.actions().iter().map(move |a| (x.clone(), a.clone())))
        .map(|(x, a)| (x, a, rng.random_range(-2.0..2.0)))
        .collect::<Vec<_>>();
    Arc::new(ScoreTable::from_entries(entries).unwrap())
}

/// Small random environment with deterministic full-catalog logging and a
/// logging PBM covering the whole catalog.
pub struct Instance {
    pub env: Environment,
    pub target: TwoStagePolicy,
    pub target_pbm: PositionBiasModel,
}

pub fn random_pbm(rng: &mut impl Rng, cutoff: usize) -> PositionBiasModel {
    if rng.random_bool(0.5) {
        PositionBiasModel::logarithmic(cutoff)
    } else {
        PositionBiasModel::exponential(rng.random_range(0.3..0.95), cutoff)
    }
}

pub fn random_instance(seed: u64, max_contexts: usize, max_actions: usize, stochastic_target: bool) -> Instance {
    let mut rng = rng(seed);
    let n_ctx = rng.random_range(1..=max_contexts);
    let n_act = rng.random_range(2..=max_actions);
    let contexts: Vec<ContextId> = ids("x", n_ctx).into_iter().map(ContextId::new).collect();
    let catalog = Catalog::new(ids("a", n_act).into_iter().map(ActionId::new).collect()).unwrap();
    let mut weights: Vec<f64> = (0..n_ctx).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    // Renormalise the last weight so the sum is 1 to machine precision.
    let head: f64 = weights[..n_ctx - 1].iter().sum();
    weights[n_ctx - 1] = 1.0 - head;
    let quality = QualityModel::from_entries(
        contexts
            .iter()
            .flat_map(|x| catalog.actions().iter().map(move |a| (x.clone(), a.clone())))
            .map(|(x, a)| (x, a, rng.random_range(0.0..1.0)))
            .collect::<Vec<_>>(),
    )
    .unwrap();
    let logging = TwoStagePolicy::new(
        CandidateGenerator::FullCatalog,
        RankingPolicy::deterministic(random_scores(&mut rng, &contexts, &catalog)),
    );
    let target_scores = random_scores(&mut rng, &contexts, &catalog);
    let ranker = if stochastic_target {
        RankingPolicy::plackett_luce(target_scores, rng.random_range(0.5..2.0)).unwrap()
    } else {
        RankingPolicy::deterministic(target_scores)
    };
    let logging_pbm = random_pbm(&mut rng, n_act);
    let target_cutoff = rng.random_range(1..=n_act);
    let target_pbm = random_pbm(&mut rng, target_cutoff);
    Instance {
        env: Environment {
            catalog,
            contexts,
            context_probs: weights,
            quality,
            logging_pbm,
            logging,
            reward_mode: RewardMode::Binary,
        },
        target: TwoStagePolicy::new(CandidateGenerator::FullCatalog, ranker),
        target_pbm,
    }
}
