mod common;

use common::random_instance;
use dcg_ope::domain::{LoggedItem, LoggedTrajectory};
use dcg_ope::estimators::{evaluate, trajectory_dcg_stochastic, ClipM, Discount, EstimatorConfig};
use dcg_ope::simulator::{mean_and_std_err, simulate_dataset, true_policy_value, Environment};

/// Exact expectation of the per-trajectory estimate, enumerating every
/// (not viewed | viewed with reward 0 | viewed with reward 1) outcome of each
/// displayed rank under the deterministic logging policy.
fn exact_expectation(env: &Environment, config: &EstimatorConfig, target: &dcg_ope::policies::TwoStagePolicy) -> f64 {
    let mut total = 0.0;
    for (x, px) in env.contexts.iter().zip(&env.context_probs) {
        let candidates = env.logging.generator.fixed_candidates(x, &env.catalog).unwrap();
        let ranking = env.logging.ranker.deterministic_ranking(x, &candidates).unwrap();
        let shown: Vec<_> = ranking.into_iter().take(env.logging_pbm.cutoff()).collect();
        let n = shown.len();
        for code in 0..3usize.pow(n as u32) {
            let mut c = code;
            let mut prob = 1.0;
            let mut items = Vec::new();
            for (i, a) in shown.iter().enumerate() {
                let outcome = c % 3;
                c /= 3;
                let p = env.logging_pbm.view_prob(i + 1).unwrap();
                let q = env.quality.get(x, a).unwrap();
                match outcome {
                    0 => prob *= 1.0 - p,
                    1 => {
                        prob *= p * (1.0 - q);
                        items.push(LoggedItem { action: a.clone(), log_rank: (i + 1) as u32, logging_view_prob: p, reward: 0.0 });
                    }
                    _ => {
                        prob *= p * q;
                        items.push(LoggedItem { action: a.clone(), log_rank: (i + 1) as u32, logging_view_prob: p, reward: 1.0 });
                    }
                }
            }
            if prob == 0.0 {
                continue;
            }
            let traj = LoggedTrajectory { traj_id: "t".into(), day: 0, context: x.clone(), items };
            total += px * prob * trajectory_dcg_stochastic(&traj, target, config, &env.catalog).unwrap();
        }
    }
    total
}

#[test]
fn exact_expectation_matches_true_value_for_deterministic_targets() {
    for seed in 0..10 {
        let inst = random_instance(seed, 3, 4, false);
        let config = EstimatorConfig::unbiased(inst.target_pbm.clone()).with_clip(ClipM::INFINITE);
        let expected = exact_expectation(&inst.env, &config, &inst.target);
        let truth = true_policy_value(&inst.env, &inst.target, &inst.target_pbm).unwrap();
        assert!((expected - truth).abs() < 1e-10, "seed {seed}: {expected} vs {truth}");
    }
}

#[test]
fn exact_expectation_matches_true_value_for_plackett_luce_targets() {
    for seed in 100..110 {
        let inst = random_instance(seed, 3, 4, true);
        let config = EstimatorConfig::unbiased(inst.target_pbm.clone()).with_clip(ClipM::INFINITE);
        let expected = exact_expectation(&inst.env, &config, &inst.target);
        let truth = true_policy_value(&inst.env, &inst.target, &inst.target_pbm).unwrap();
        assert!((expected - truth).abs() < 1e-10, "seed {seed}: {expected} vs {truth}");
    }
}

#[test]
fn clipping_can_only_lower_the_expectation() {
    for seed in 0..10 {
        let inst = random_instance(seed, 3, 4, false);
        let truth = true_policy_value(&inst.env, &inst.target, &inst.target_pbm).unwrap();
        let clipped = EstimatorConfig::unbiased(inst.target_pbm.clone()).with_clip(ClipM::new(1.0).unwrap());
        assert!(exact_expectation(&inst.env, &clipped, &inst.target) <= truth + 1e-12);
    }
}

#[test]
fn simulated_replicates_center_on_true_value() {
    for seed in [3, 7] {
        let inst = random_instance(seed, 3, 4, false);
        let config = EstimatorConfig::unbiased(inst.target_pbm.clone());
        let truth = true_policy_value(&inst.env, &inst.target, &inst.target_pbm).unwrap();
        let means: Vec<f64> = (0..100)
            .map(|r| evaluate(&simulate_dataset(&inst.env, 300, 0, 1000 + r).unwrap(), &inst.target, &config, &inst.env.catalog).unwrap().mean)
            .collect();
        let (mean, se) = mean_and_std_err(&means);
        assert!((mean - truth).abs() <= 3.0 * se, "seed {seed}: {mean} +- {se} vs {truth}");
    }
}

#[test]
fn log_discount_matches_pbm_discount_of_same_shape() {
    let inst = random_instance(5, 2, 4, false);
    let cutoff = inst.env.catalog.len();
    let ds = simulate_dataset(&inst.env, 200, 0, 1).unwrap();
    let a = EstimatorConfig { discount: Discount::Logarithmic { cutoff }, ..EstimatorConfig::unbiased(inst.target_pbm.clone()) };
    let b = EstimatorConfig::unbiased(dcg_ope::bias_models::PositionBiasModel::logarithmic(cutoff));
    let ra = evaluate(&ds, &inst.target, &a, &inst.env.catalog).unwrap();
    let rb = evaluate(&ds, &inst.target, &b, &inst.env.catalog).unwrap();
    assert_eq!(ra.per_trajectory_values, rb.per_trajectory_values);
}
