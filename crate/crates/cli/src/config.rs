//! TOML experiment configuration.
//!
//! Relative file paths inside a config (quality and score tables) resolve
//! against the directory containing the config file.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, ensure, Context, Result};
use dcg_ope::bias_models::PositionBiasModel;
use dcg_ope::domain::{ActionId, Catalog, ContextId, QualityModel};
use dcg_ope::estimators::{ClipM, Discount, EstimatorConfig, Labels, Normalization};
use dcg_ope::policies::{CandidateGenerator, RankingPolicy, ScoreTable, TwoStagePolicy};
use dcg_ope::simulator::{DriftSchedule, Environment, OnlineMode, RewardMode};
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default = "default_days")]
    pub days: usize,
    pub trajectories_per_day: usize,
    #[serde(default = "default_replicates")]
    pub n_replicates: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "ClipM::default_grid")]
    pub m_grid: Vec<ClipM>,
    pub environment: EnvironmentSpec,
    pub logging: PolicySpec,
    pub target: PolicySpec,
    #[serde(default)]
    pub drift: Option<DriftSpec>,
    #[serde(default)]
    pub online: OnlineSpec,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<EstimatorSpec>,
    /// Extra quality tables, each defining one reward signal for the
    /// sensitivity experiment. Defaults to the environment's quality.
    #[serde(default)]
    pub reward_signals: Vec<PathBuf>,
}

fn default_days() -> usize {
    1
}

fn default_replicates() -> usize {
    1
}

fn default_alpha() -> f64 {
    0.01
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentSpec {
    /// `context,action,quality` CSV.
    pub quality: PathBuf,
    /// Defaults to every action in the quality table, sorted.
    #[serde(default)]
    pub actions: Option<Vec<String>>,
    /// Defaults to every context in the quality table, sorted.
    #[serde(default)]
    pub contexts: Option<Vec<String>>,
    /// Defaults to uniform.
    #[serde(default)]
    pub context_probs: Option<Vec<f64>>,
    #[serde(default)]
    pub reward_mode: RewardMode,
    pub logging_pbm: PositionBiasModel,
    /// View model users follow under the target policy; defaults to
    /// `logging_pbm`.
    #[serde(default)]
    pub target_pbm: Option<PositionBiasModel>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySpec {
    #[serde(default)]
    pub generator: GeneratorSpec,
    pub ranker: RankerSpec,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorSpec {
    #[default]
    FullCatalog,
    TopK {
        scores: PathBuf,
        k: usize,
    },
    UniformKSubset {
        k: usize,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RankerSpec {
    Deterministic { scores: PathBuf },
    PlackettLuce { scores: PathBuf, temperature: f64 },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriftSpec {
    /// One multiplicative factor per day; length must equal `days`.
    Factors { factors: Vec<f64> },
    /// Random multiplicative noise, see [`DriftSchedule::Noise`].
    Noise { global: f64, per_item: f64 },
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OnlineSpec {
    #[default]
    Exact,
    MonteCarlo {
        n: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiscountKind {
    /// The target view model.
    Pbm,
    /// `1 / log2(rank + 1)`.
    Log,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSpec {
    pub name: String,
    #[serde(default = "default_discount")]
    pub discount: DiscountKind,
    /// Cutoff of the log discount; defaults to the catalog size.
    #[serde(default)]
    pub cutoff: Option<usize>,
    #[serde(default = "default_labels")]
    pub labels: Labels,
    #[serde(default = "default_clip")]
    pub clip_m: ClipM,
    #[serde(default = "default_normalization")]
    pub normalization: Normalization,
}

fn default_discount() -> DiscountKind {
    DiscountKind::Pbm
}

fn default_labels() -> Labels {
    Labels::Debiased
}

fn default_clip() -> ClipM {
    ClipM::INFINITE
}

fn default_normalization() -> Normalization {
    Normalization::None
}

fn default_estimators() -> Vec<EstimatorSpec> {
    [("dcg", Normalization::None), ("ndcg", Normalization::PerTrajectory), ("pndcg", Normalization::Post)]
        .into_iter()
        .map(|(name, normalization)| EstimatorSpec {
            name: name.into(),
            discount: DiscountKind::Pbm,
            cutoff: None,
            labels: Labels::Debiased,
            clip_m: ClipM::INFINITE,
            normalization,
        })
        .collect()
}

/// A validated, fully loaded experiment.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub env: Environment,
    pub target: TwoStagePolicy,
    pub target_pbm: PositionBiasModel,
    pub drift: DriftSchedule,
    pub online: OnlineMode,
    pub estimators: Vec<(String, EstimatorConfig)>,
    /// Quality tables for the sensitivity experiment.
    pub reward_signals: Vec<QualityModel>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(!self.m_grid.is_empty(), "m_grid must not be empty");
        ensure!(self.m_grid.windows(2).all(|w| w[0] < w[1]), "m_grid must be strictly ascending");
        ensure!(self.alpha > 0.0 && self.alpha < 1.0, "alpha must lie in (0, 1), got {}", self.alpha);
        ensure!(self.days >= 1, "days must be >= 1");
        ensure!(self.n_replicates >= 1, "n_replicates must be >= 1");
        ensure!(!self.estimators.is_empty(), "at least one estimator is required");
        let mut names = BTreeSet::new();
        for e in &self.estimators {
            ensure!(!e.name.is_empty() && !e.name.contains(','), "estimator name `{}` must be non-empty and comma-free", e.name);
            ensure!(names.insert(&e.name), "duplicate estimator name `{}`", e.name);
        }
        if let Some(DriftSpec::Factors { factors }) = &self.drift {
            ensure!(factors.len() == self.days, "drift has {} factors but days = {}", factors.len(), self.days);
        }
        if let OnlineSpec::MonteCarlo { n } = self.online {
            ensure!(n >= 1, "online monte carlo needs n >= 1");
        }
        Ok(())
    }
}

/// Reads, validates and loads everything a command needs.
pub fn load(path: &Path) -> Result<Experiment> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let config = ExperimentConfig::from_toml(&text).with_context(|| format!("invalid config {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    build(config, &base).with_context(|| format!("loading experiment from {}", path.display()))
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn read_quality(base: &Path, p: &Path) -> Result<QualityModel> {
    let path = resolve(base, p);
    QualityModel::read_csv(&path).with_context(|| format!("reading quality table {}", path.display()))
}

fn read_scores(base: &Path, p: &Path) -> Result<Arc<ScoreTable>> {
    let path = resolve(base, p);
    Ok(Arc::new(ScoreTable::read_csv(&path).with_context(|| format!("reading score table {}", path.display()))?))
}

fn build_policy(spec: &PolicySpec, base: &Path) -> Result<TwoStagePolicy> {
    let generator = match &spec.generator {
        GeneratorSpec::FullCatalog => CandidateGenerator::FullCatalog,
        GeneratorSpec::TopK { scores, k } => CandidateGenerator::TopKByScore { scores: read_scores(base, scores)?, k: *k },
        GeneratorSpec::UniformKSubset { k } => CandidateGenerator::UniformKSubset { k: *k },
    };
    let ranker = match &spec.ranker {
        RankerSpec::Deterministic { scores } => RankingPolicy::deterministic(read_scores(base, scores)?),
        RankerSpec::PlackettLuce { scores, temperature } => RankingPolicy::plackett_luce(read_scores(base, scores)?, *temperature)?,
    };
    Ok(TwoStagePolicy::new(generator, ranker))
}

pub fn build(config: ExperimentConfig, base: &Path) -> Result<Experiment> {
    let spec = &config.environment;
    let quality = read_quality(base, &spec.quality)?;
    let actions: Vec<String> = match &spec.actions {
        Some(a) => a.clone(),
        None => quality.iter().map(|(_, a, _)| a.as_str().to_owned()).collect::<BTreeSet<_>>().into_iter().collect(),
    };
    let contexts: Vec<ContextId> = match &spec.contexts {
        Some(c) => c.iter().map(ContextId::new).collect(),
        None => quality.iter().map(|(x, _, _)| x.clone()).collect::<BTreeSet<_>>().into_iter().collect(),
    };
    let context_probs = match &spec.context_probs {
        Some(p) => p.clone(),
        None => vec![1.0 / contexts.len() as f64; contexts.len()],
    };
    let catalog = Catalog::new(actions.into_iter().map(ActionId::new).collect())?;
    let env = Environment {
        catalog,
        contexts,
        context_probs,
        quality,
        logging_pbm: spec.logging_pbm.clone(),
        logging: build_policy(&config.logging, base)?,
        reward_mode: spec.reward_mode,
    };
    env.validate()?;
    let target = build_policy(&config.target, base)?;
    target.generator.validate(&env.catalog)?;
    let target_pbm = spec.target_pbm.clone().unwrap_or_else(|| spec.logging_pbm.clone());
    target_pbm.ensure_valid()?;

    let drift = match &config.drift {
        None => DriftSchedule::Factors { factors: vec![1.0; config.days] },
        Some(DriftSpec::Factors { factors }) => DriftSchedule::Factors { factors: factors.clone() },
        Some(DriftSpec::Noise { global, per_item }) => {
            DriftSchedule::Noise { days: config.days, global: *global, per_item: *per_item }
        }
    };
    drift.validate()?;
    let online = match config.online {
        OnlineSpec::Exact => OnlineMode::Exact,
        OnlineSpec::MonteCarlo { n } => OnlineMode::MonteCarlo { n },
    };
    let estimators = config
        .estimators
        .iter()
        .map(|e| {
            let discount = match e.discount {
                DiscountKind::Pbm => Discount::Pbm(target_pbm.clone()),
                DiscountKind::Log => Discount::Logarithmic { cutoff: e.cutoff.unwrap_or(env.catalog.len()) },
            };
            (e.name.clone(), EstimatorConfig { discount, labels: e.labels, clip_m: e.clip_m, normalization: e.normalization })
        })
        .collect();
    let reward_signals = if config.reward_signals.is_empty() {
        vec![env.quality.clone()]
    } else {
        config.reward_signals.iter().map(|p| read_quality(base, p)).collect::<Result<_>>()?
    };
    for (i, q) in reward_signals.iter().enumerate() {
        if let Err(e) = env.with_quality(q.clone()).validate() {
            bail!("reward signal {i}: {e}");
        }
    }
    Ok(Experiment { config, env, target, target_pbm, drift, online, estimators, reward_signals })
}
