//! Synthetic environment satisfying the position-based model and the
//! examination hypothesis: a displayed item at rank `r` is viewed with
//! probability `P(V | r)` independently of everything else, and a viewed item
//! yields reward with mean `Q(x, a)`.
//!
//! Besides generating logged datasets this module provides the ground truth
//! the estimators are checked against: exact policy values by enumeration,
//! Monte-Carlo online values, and the brute-force exposure oracle.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::bias_models::PositionBiasModel;
use crate::domain::{ActionId, Catalog, ContextId, LoggedDataset, LoggedItem, LoggedTrajectory, QualityModel};
use crate::error::{Error, Result};
use crate::exec::{derive_seed, stream_rng, Execution};
use crate::policies::{CandidateGenerator, RankingPolicy, TwoStagePolicy};

/// How a viewed item's reward is drawn from its quality `q`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum RewardMode {
    /// `Bernoulli(q)`; requires `q <= 1`.
    #[default]
    Binary,
    /// `q` times mean-one lognormal noise with log-scale `sigma`.
    Lognormal { sigma: f64 },
}

impl RewardMode {
    fn sample<R: Rng + ?Sized>(&self, quality: f64, rng: &mut R) -> f64 {
        match *self {
            Self::Binary => {
                if rng.random::<f64>() < quality {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Lognormal { sigma } => {
                if sigma == 0.0 {
                    return quality;
                }
                let noise = LogNormal::new(-0.5 * sigma * sigma, sigma).expect("sigma validated");
                quality * noise.sample(rng)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Self::Binary => Ok(()),
            Self::Lognormal { sigma } if sigma.is_finite() && sigma >= 0.0 => Ok(()),
            Self::Lognormal { sigma } => Err(Error::Config(format!("lognormal sigma must be >= 0, got {sigma}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Environment {
    pub catalog: Catalog,
    pub contexts: Vec<ContextId>,
    pub context_probs: Vec<f64>,
    pub quality: QualityModel,
    pub logging_pbm: PositionBiasModel,
    pub logging: TwoStagePolicy,
    pub reward_mode: RewardMode,
}

impl Environment {
    pub fn validate(&self) -> Result<()> {
        if self.contexts.is_empty() || self.contexts.len() != self.context_probs.len() {
            return Err(Error::Config("contexts and context_probs must be non-empty and of equal length".into()));
        }
        if self.context_probs.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::Config("context probabilities must be nonnegative".into()));
        }
        let total: f64 = self.context_probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("context probabilities sum to {total}, not 1")));
        }
        self.logging_pbm.ensure_valid()?;
        if !self.logging_pbm.strictly_positive_to_cutoff() {
            return Err(Error::FullSupport(
                "logging position bias model must be strictly positive on every displayed rank".into(),
            ));
        }
        self.logging.generator.validate(&self.catalog)?;
        self.reward_mode.validate()?;
        for x in &self.contexts {
            for a in self.catalog.actions() {
                let q = self.quality.get(x, a)?;
                if self.reward_mode == RewardMode::Binary && q > 1.0 {
                    return Err(Error::Config(format!("binary rewards need quality <= 1; ({x}, {a}) has {q}")));
                }
            }
        }
        Ok(())
    }

    pub fn with_quality(&self, quality: QualityModel) -> Self {
        Self { quality, ..self.clone() }
    }

    fn sample_context<R: Rng + ?Sized>(&self, rng: &mut R) -> &ContextId {
        let u = rng.random::<f64>();
        let mut acc = 0.0;
        for (x, p) in self.contexts.iter().zip(&self.context_probs) {
            acc += p;
            if u < acc {
                return x;
            }
        }
        self.contexts.last().expect("validated non-empty")
    }

    /// One session under `policy`, returning the context and the viewed items.
    fn session<R: Rng + ?Sized>(
        &self,
        policy: &TwoStagePolicy,
        pbm: &PositionBiasModel,
        rng: &mut R,
    ) -> Result<(ContextId, Vec<LoggedItem>)> {
        let context = self.sample_context(rng).clone();
        let ranking = policy.sample_ranking(&context, &self.catalog, rng)?;
        let mut items = Vec::new();
        for (i, action) in ranking.into_iter().enumerate().take(pbm.cutoff()) {
            let rank = i + 1;
            let p = pbm.at(rank);
            if rng.random::<f64>() < p {
                let q = self.quality.get(&context, &action)?;
                let reward = self.reward_mode.sample(q, rng);
                items.push(LoggedItem { action, log_rank: rank as u32, logging_view_prob: p, reward });
            }
        }
        Ok((context, items))
    }
}

pub fn simulate_dataset(env: &Environment, n_trajectories: usize, day: u32, seed: u64) -> Result<LoggedDataset> {
    simulate_dataset_with(Execution::default(), env, n_trajectories, day, seed)
}

/// Logs `n_trajectories` sessions of the logging policy. Only viewed items are
/// recorded, each with the view probability of the rank it was shown at.
/// Trajectory `i` draws from its own stream, so the output does not depend
/// on `exec`.
pub fn simulate_dataset_with(
    exec: Execution,
    env: &Environment,
    n_trajectories: usize,
    day: u32,
    seed: u64,
) -> Result<LoggedDataset> {
    env.validate()?;
    let day_seed = derive_seed(seed, &[day as u64]);
    let trajectories = exec.try_map_indexed(n_trajectories, |i| {
        let mut rng = stream_rng(day_seed, i as u64);
        let (context, items) = env.session(&env.logging, &env.logging_pbm, &mut rng)?;
        Ok::<_, Error>(LoggedTrajectory { traj_id: format!("d{day}-t{i}"), day, context, items })
    })?;
    let mut dataset = LoggedDataset::new(trajectories);
    dataset.metadata.insert("seed".into(), seed.to_string());
    dataset.metadata.insert("day".into(), day.to_string());
    dataset.metadata.insert("logging_pbm".into(), serde_json::to_string(&env.logging_pbm)?);
    Ok(dataset)
}

/// Exact expected per-session reward of `target` when users view ranks
/// according to `target_pbm`: `sum_x P(x) sum_r Q(x, a_r) P(V | r)`,
/// enumerating candidate sets and rankings.
pub fn true_policy_value(env: &Environment, target: &TwoStagePolicy, target_pbm: &PositionBiasModel) -> Result<f64> {
    let mut value = 0.0;
    for (x, px) in env.contexts.iter().zip(&env.context_probs) {
        if *px == 0.0 {
            continue;
        }
        let mut vx = 0.0;
        for (perm, p) in target.full_distribution(x, &env.catalog)? {
            let mut gain = 0.0;
            for (i, a) in perm.iter().enumerate().take(target_pbm.cutoff()) {
                gain += env.quality.get(x, a)? * target_pbm.at(i + 1);
            }
            vx += p * gain;
        }
        value += px * vx;
    }
    Ok(value)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    /// Sample standard deviation over `sqrt(n)`; 0 when `n == 1`.
    pub std_err: f64,
    pub n: usize,
}

pub fn mean_and_std_err(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

pub fn monte_carlo_policy_value(
    env: &Environment,
    target: &TwoStagePolicy,
    target_pbm: &PositionBiasModel,
    n: usize,
    seed: u64,
) -> Result<McEstimate> {
    monte_carlo_policy_value_with(Execution::default(), env, target, target_pbm, n, seed)
}

/// Simulated online A/B arm: mean reward per session under `target`.
pub fn monte_carlo_policy_value_with(
    exec: Execution,
    env: &Environment,
    target: &TwoStagePolicy,
    target_pbm: &PositionBiasModel,
    n: usize,
    seed: u64,
) -> Result<McEstimate> {
    if n == 0 {
        return Err(Error::InvalidArgument("monte carlo needs n >= 1".into()));
    }
    env.validate()?;
    target_pbm.ensure_valid()?;
    let sums = exec.try_map_indexed(n, |i| {
        let mut rng = stream_rng(seed, i as u64);
        let (_, items) = env.session(target, target_pbm, &mut rng)?;
        Ok::<_, Error>(items.iter().map(|it| it.reward).sum::<f64>())
    })?;
    let (mean, std_err) = mean_and_std_err(&sums);
    Ok(McEstimate { mean, std_err, n })
}

/// Expected number of views of every action in `context`, by enumerating
/// candidate sets and rankings. Actions never displayed are absent.
pub fn exposure_map(
    policy: &TwoStagePolicy,
    pbm: &PositionBiasModel,
    context: &ContextId,
    catalog: &Catalog,
) -> Result<BTreeMap<ActionId, f64>> {
    let mut out: BTreeMap<ActionId, f64> = BTreeMap::new();
    for (perm, p) in policy.full_distribution(context, catalog)? {
        for (i, a) in perm.iter().enumerate() {
            *out.entry(a.clone()).or_default() += p * pbm.at(i + 1);
        }
    }
    Ok(out)
}

/// Brute-force exposure of a single action.
pub fn exposure_bruteforce(
    generator: &CandidateGenerator,
    ranker: &RankingPolicy,
    pbm: &PositionBiasModel,
    context: &ContextId,
    catalog: &Catalog,
    action: &ActionId,
) -> Result<f64> {
    let mut total = 0.0;
    for (set, p_set) in generator.candidate_distribution(context, catalog)? {
        if !set.contains(action) {
            continue;
        }
        for (perm, p_perm) in ranker.ranking_distribution(context, &set)? {
            let r = perm.iter().position(|a| a == action).expect("permutation of set") + 1;
            total += p_set * p_perm * pbm.at(r);
        }
    }
    Ok(total)
}

/// Exposure ratio `P(V | R_target(x, a)) / P(V | R_log(x, a))` for two
/// deterministic rankers over a shared candidate set.
pub fn exposure_ratio_simplified(
    logging_ranker: &RankingPolicy,
    target_ranker: &RankingPolicy,
    pbm_log: &PositionBiasModel,
    pbm_target: &PositionBiasModel,
    context: &ContextId,
    candidates: &[ActionId],
    action: &ActionId,
) -> Result<f64> {
    let log_rank = logging_ranker.rank_of(context, candidates, action)?;
    let target_rank = target_ranker.rank_of(context, candidates, action)?;
    let denom = pbm_log.at(log_rank);
    if denom <= 0.0 {
        return Err(Error::FullSupport(format!(
            "action `{action}` has zero logging exposure at rank {log_rank} in context {context}"
        )));
    }
    Ok(pbm_target.at(target_rank) / denom)
}

/// Day-to-day multiplicative quality perturbation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DriftSchedule {
    /// One global factor per day.
    Factors { factors: Vec<f64> },
    /// Per day a global factor `1 + global * U(-1, 1)` times an independent
    /// per-(context, action) factor `1 + per_item * U(-1, 1)`.
    Noise { days: usize, global: f64, per_item: f64 },
}

impl DriftSchedule {
    pub fn days(&self) -> usize {
        match self {
            Self::Factors { factors } => factors.len(),
            Self::Noise { days, .. } => *days,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.days() == 0 {
            return Err(Error::Config("drift schedule needs at least one day".into()));
        }
        match self {
            Self::Factors { factors } => {
                if let Some(f) = factors.iter().find(|f| !(f.is_finite() && **f >= 0.0)) {
                    return Err(Error::Config(format!("drift factor {f} must be finite and >= 0")));
                }
            }
            Self::Noise { global, per_item, .. } => {
                for a in [global, per_item] {
                    if !(*a >= 0.0 && *a < 1.0) {
                        return Err(Error::Config(format!("noise amplitude {a} must lie in [0, 1)")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Quality on `day`, clamped to `[0, 1]` for binary rewards and to
    /// `[0, inf)` otherwise.
    pub fn perturb(&self, quality: &QualityModel, day: usize, seed: u64, mode: RewardMode) -> QualityModel {
        let upper = if mode == RewardMode::Binary { 1.0 } else { f64::INFINITY };
        let clamp = |q: f64| q.clamp(0.0, upper);
        match self {
            Self::Factors { factors } => {
                let f = factors[day];
                quality.map(|_, _, q| clamp(q * f))
            }
            Self::Noise { global, per_item, .. } => {
                let mut rng = stream_rng(derive_seed(seed, &[day as u64, 0xD81F]), 0);
                let g = 1.0 + global * rng.random_range(-1.0..1.0);
                quality.map(|_, _, q| clamp(q * g * (1.0 + per_item * rng.random_range(-1.0..1.0))))
            }
        }
    }
}

/// How the per-day online value of the target policy is measured.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OnlineMode {
    Exact,
    MonteCarlo { n: usize },
}

#[derive(Debug, Clone)]
pub struct DayRecord {
    pub day: u32,
    pub quality: QualityModel,
    pub dataset: LoggedDataset,
    pub online_value: f64,
    pub online_std_err: f64,
}

/// For each day: perturb quality, log a dataset under the logging policy and
/// measure the target policy online.
#[allow(clippy::too_many_arguments)]
pub fn simulate_experiment_series(
    env: &Environment,
    target: &TwoStagePolicy,
    target_pbm: &PositionBiasModel,
    drift: &DriftSchedule,
    trajectories_per_day: usize,
    online: OnlineMode,
    seed: u64,
) -> Result<Vec<DayRecord>> {
    drift.validate()?;
    env.validate()?;
    (0..drift.days())
        .map(|d| {
            let quality = drift.perturb(&env.quality, d, seed, env.reward_mode);
            let day_env = env.with_quality(quality.clone());
            let day = d as u32;
            let dataset = simulate_dataset(&day_env, trajectories_per_day, day, derive_seed(seed, &[d as u64, 1]))?;
            let (online_value, online_std_err) = match online {
                OnlineMode::Exact => (true_policy_value(&day_env, target, target_pbm)?, 0.0),
                OnlineMode::MonteCarlo { n } => {
                    let mc = monte_carlo_policy_value(&day_env, target, target_pbm, n, derive_seed(seed, &[d as u64, 2]))?;
                    (mc.mean, mc.std_err)
                }
            };
            Ok(DayRecord { day, quality, dataset, online_value, online_std_err })
        })
        .collect()
}
