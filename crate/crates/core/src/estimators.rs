//! Offline DCG estimators over logged data.
//!
//! Every variant is a sum over logged items of a label times the exposure the
//! target policy would give that item:
//!
//! * **raw labels**: `c_i * D(target rank)`, the classical DCG;
//! * **de-biased labels**: `c_i * min(m, 1 / eps0_i) * D(target rank)`, the
//!   inverse-propensity estimator, unbiased for the target's online reward
//!   when `m = inf` and `D` is the true view model.
//!
//! Values can be left unnormalised (DCG), normalised per trajectory by the
//! trajectory's ideal DCG (nDCG), or normalised once at dataset level (pnDCG).

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::bias_models::PositionBiasModel;
use crate::domain::{ActionId, Catalog, ContextId, LoggedDataset, LoggedTrajectory, QualityModel};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::policies::TwoStagePolicy;
use crate::simulator::exposure_map;

/// Clipping threshold `m >= 1` for inverse propensities; `inf` disables clipping.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct ClipM(f64);

impl ClipM {
    pub const INFINITE: ClipM = ClipM(f64::INFINITY);
    pub const NONE: ClipM = ClipM(1.0);

    pub fn new(m: f64) -> Result<Self> {
        if m.is_nan() || m < 1.0 {
            return Err(Error::InvalidArgument(format!("clipping threshold must be >= 1 or inf, got {m}")));
        }
        Ok(Self(m))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_infinite(self) -> bool {
        self.0.is_infinite()
    }

    /// 1, 2, 4, ..., 512, 2048, 4096, inf.
    pub fn default_grid() -> Vec<ClipM> {
        [1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0, 256.0, 512.0, 2048.0, 4096.0, f64::INFINITY]
            .into_iter()
            .map(ClipM)
            .collect()
    }
}

impl fmt::Display for ClipM {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_infinite() {
            f.write_str("inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl FromStr for ClipM {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("inf") || t.eq_ignore_ascii_case("infinity") {
            return Ok(Self::INFINITE);
        }
        let m: f64 = t.parse().map_err(|_| Error::InvalidArgument(format!("invalid clipping threshold `{s}`")))?;
        Self::new(m)
    }
}

impl Serialize for ClipM {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for ClipM {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(i64),
            Float(f64),
            Str(String),
        }
        let m = match Raw::deserialize(d)? {
            Raw::Int(i) => ClipM::new(i as f64),
            Raw::Float(f) => ClipM::new(f),
            Raw::Str(s) => s.parse(),
        };
        m.map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Discount {
    /// `1 / log2(rank + 1)` up to `cutoff`.
    Logarithmic { cutoff: usize },
    /// A position bias model, typically the (estimated) logging view model.
    Pbm(PositionBiasModel),
}

impl Discount {
    pub fn model(&self) -> PositionBiasModel {
        match self {
            Self::Logarithmic { cutoff } => PositionBiasModel::logarithmic(*cutoff),
            Self::Pbm(m) => m.clone(),
        }
    }

    pub fn short_name(&self) -> &'static str {
        match self {
            Self::Logarithmic { .. } => "log",
            Self::Pbm(_) => "pbm",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Labels {
    Raw,
    Debiased,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// DCG
    None,
    /// nDCG
    PerTrajectory,
    /// pnDCG
    Post,
}

impl Labels {
    fn name(self) -> &'static str {
        match self {
            Labels::Raw => "raw",
            Labels::Debiased => "debiased",
        }
    }
}

impl Normalization {
    fn name(self) -> &'static str {
        match self {
            Normalization::None => "none",
            Normalization::PerTrajectory => "per_trajectory",
            Normalization::Post => "post",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    pub discount: Discount,
    pub labels: Labels,
    pub clip_m: ClipM,
    pub normalization: Normalization,
}

impl EstimatorConfig {
    /// The unbiased estimator: de-biased labels, no clipping, no normalisation.
    pub fn unbiased(pbm: PositionBiasModel) -> Self {
        Self {
            discount: Discount::Pbm(pbm),
            labels: Labels::Debiased,
            clip_m: ClipM::INFINITE,
            normalization: Normalization::None,
        }
    }

    pub fn with_clip(mut self, m: ClipM) -> Self {
        self.clip_m = m;
        self
    }

    pub fn with_normalization(mut self, n: Normalization) -> Self {
        self.normalization = n;
        self
    }

    pub fn with_labels(mut self, labels: Labels) -> Self {
        self.labels = labels;
        self
    }
}

/// Header of [`MetricReport::csv_row`].
pub const REPORT_CSV_HEADER: &str = "variant,discount,labels,clip_m,normalization,mean,std,n,skipped";

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub mean: f64,
    /// Sample standard deviation of the per-trajectory values.
    pub std: f64,
    pub n_trajectories: usize,
    /// Empty for post-normalisation.
    pub per_trajectory_values: Vec<f64>,
    /// Trajectories with zero ideal DCG, dropped from per-trajectory nDCG.
    pub skipped: usize,
}

impl MetricReport {
    pub fn csv_row(&self, variant: &str, config: &EstimatorConfig) -> String {
        format!(
            "{variant},{},{},{},{},{},{},{},{}",
            config.discount.short_name(),
            config.labels.name(),
            config.clip_m,
            config.normalization.name(),
            self.mean,
            self.std,
            self.n_trajectories,
            self.skipped
        )
    }
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// `reward * min(m, 1 / p)`, computed as `min(reward * m, reward / p)` so that
/// `m = 1` returns `reward` and `m = inf` returns `reward / p` bit-exactly.
pub fn debias_label(reward: f64, logging_view_prob: f64, clip_m: ClipM) -> Result<f64> {
    if !(logging_view_prob > 0.0) {
        return Err(Error::FullSupport(format!("logging view probability {logging_view_prob} is not positive")));
    }
    if reward == 0.0 {
        return Ok(0.0);
    }
    let unclipped = reward / logging_view_prob;
    Ok(if clip_m.is_infinite() { unclipped } else { (reward * clip_m.0).min(unclipped) })
}

/// Contribution of a logged item with target exposure `exposure`.
fn item_gain(reward: f64, logging_view_prob: f64, exposure: f64, config: &EstimatorConfig) -> Result<f64> {
    if !(logging_view_prob > 0.0) {
        return Err(Error::FullSupport(format!("logging view probability {logging_view_prob} is not positive")));
    }
    if reward == 0.0 || exposure == 0.0 {
        return Ok(0.0);
    }
    match config.labels {
        Labels::Raw => Ok(reward * exposure),
        Labels::Debiased => {
            // exposure ratio first: equal target and logging exposure gives weight 1 exactly
            let ratio = exposure / logging_view_prob;
            let weight = if config.clip_m.is_infinite() { ratio } else { (config.clip_m.0 * exposure).min(ratio) };
            Ok(reward * weight)
        }
    }
}

/// Target exposure `eps(x, a)` under the configured discount, per context.
/// Deterministic targets take the discount at the action's rank within the
/// full candidate ranking; stochastic ones are enumerated.
#[derive(Debug, Clone, Default)]
pub struct TargetExposure {
    by_context: BTreeMap<ContextId, BTreeMap<ActionId, f64>>,
}

impl TargetExposure {
    pub fn build<'a, I>(target: &TwoStagePolicy, discount: &PositionBiasModel, catalog: &Catalog, contexts: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a ContextId>,
    {
        let mut by_context = BTreeMap::new();
        for x in contexts {
            if by_context.contains_key(x) {
                continue;
            }
            let map = if target.is_deterministic() {
                let candidates = target.generator.fixed_candidates(x, catalog)?;
                let ranking = target.ranker.deterministic_ranking(x, &candidates)?;
                ranking.into_iter().enumerate().map(|(i, a)| (a, discount.at(i + 1))).collect()
            } else {
                exposure_map(target, discount, x, catalog)?
            };
            by_context.insert(x.clone(), map);
        }
        Ok(Self { by_context })
    }

    pub fn for_dataset(
        target: &TwoStagePolicy,
        discount: &PositionBiasModel,
        catalog: &Catalog,
        dataset: &LoggedDataset,
    ) -> Result<Self> {
        Self::build(target, discount, catalog, dataset.trajectories.iter().map(|t| &t.context))
    }

    pub fn get(&self, context: &ContextId, action: &ActionId) -> Option<f64> {
        self.by_context.get(context).map(|m| m.get(action).copied().unwrap_or(0.0))
    }
}

fn dcg_with_exposure(
    traj: &LoggedTrajectory,
    exposure: &TargetExposure,
    config: &EstimatorConfig,
    catalog: &Catalog,
) -> Result<f64> {
    let mut total = 0.0;
    for item in &traj.items {
        if !catalog.contains(&item.action) {
            return Err(Error::Config(format!("logged action `{}` is not in the catalog", item.action)));
        }
        let e = exposure
            .get(&traj.context, &item.action)
            .ok_or_else(|| Error::Config(format!("no target exposure for context {}", traj.context)))?;
        total += item_gain(item.reward, item.logging_view_prob, e, config)?;
    }
    Ok(total)
}

/// DCG of one trajectory under a deterministic target policy.
pub fn trajectory_dcg(
    traj: &LoggedTrajectory,
    target: &TwoStagePolicy,
    config: &EstimatorConfig,
    catalog: &Catalog,
) -> Result<f64> {
    if !target.is_deterministic() {
        return Err(Error::Unsupported(
            "trajectory_dcg needs a deterministic target; use trajectory_dcg_stochastic".into(),
        ));
    }
    let exposure = TargetExposure::build(target, &config.discount.model(), catalog, [&traj.context])?;
    dcg_with_exposure(traj, &exposure, config, catalog)
}

/// DCG of one trajectory using the enumerated target exposure; valid for any
/// target within enumeration bounds.
pub fn trajectory_dcg_stochastic(
    traj: &LoggedTrajectory,
    target: &TwoStagePolicy,
    config: &EstimatorConfig,
    catalog: &Catalog,
) -> Result<f64> {
    let exposure = TargetExposure {
        by_context: BTreeMap::from([(
            traj.context.clone(),
            exposure_map(target, &config.discount.model(), &traj.context, catalog)?,
        )]),
    };
    dcg_with_exposure(traj, &exposure, config, catalog)
}

/// DCG of the trajectory's own labels sorted in descending order.
pub fn trajectory_ideal_dcg(traj: &LoggedTrajectory, config: &EstimatorConfig) -> Result<f64> {
    let mut labels = traj
        .items
        .iter()
        .map(|i| match config.labels {
            Labels::Raw => Ok(i.reward),
            Labels::Debiased => debias_label(i.reward, i.logging_view_prob, config.clip_m),
        })
        .collect::<Result<Vec<f64>>>()?;
    labels.sort_by(|a, b| b.total_cmp(a));
    let discount = config.discount.model();
    Ok(labels.iter().enumerate().map(|(j, l)| l * discount.at(j + 1)).sum())
}

/// Ideal DCG from the true qualities of every catalog action in `context`.
/// Diagnostic only: real logs never reveal these.
pub fn ideal_dcg_oracle(quality: &QualityModel, context: &ContextId, catalog: &Catalog, discount: &Discount) -> Result<f64> {
    let mut q = catalog.actions().iter().map(|a| quality.get(context, a)).collect::<Result<Vec<f64>>>()?;
    q.sort_by(|a, b| b.total_cmp(a));
    let model = discount.model();
    Ok(q.iter().enumerate().map(|(j, v)| v * model.at(j + 1)).sum())
}

pub fn evaluate(
    dataset: &LoggedDataset,
    target: &TwoStagePolicy,
    config: &EstimatorConfig,
    catalog: &Catalog,
) -> Result<MetricReport> {
    evaluate_with(Execution::default(), dataset, target, config, catalog)
}

pub fn evaluate_with(
    exec: Execution,
    dataset: &LoggedDataset,
    target: &TwoStagePolicy,
    config: &EstimatorConfig,
    catalog: &Catalog,
) -> Result<MetricReport> {
    let exposure = TargetExposure::for_dataset(target, &config.discount.model(), catalog, dataset)?;
    evaluate_with_exposure(exec, dataset, &exposure, config, catalog)
}

/// [`evaluate`] with a precomputed target exposure, for sweeping many
/// configurations that share a discount.
pub fn evaluate_with_exposure(
    exec: Execution,
    dataset: &LoggedDataset,
    exposure: &TargetExposure,
    config: &EstimatorConfig,
    catalog: &Catalog,
) -> Result<MetricReport> {
    let need_ideal = config.normalization != Normalization::None;
    let pairs = exec.try_map_indexed(dataset.trajectories.len(), |i| {
        let t = &dataset.trajectories[i];
        let dcg = dcg_with_exposure(t, exposure, config, catalog)?;
        let ideal = if need_ideal { trajectory_ideal_dcg(t, config)? } else { 0.0 };
        Ok::<_, Error>((dcg, ideal))
    })?;
    let n = pairs.len();
    match config.normalization {
        Normalization::None => {
            let values: Vec<f64> = pairs.into_iter().map(|(d, _)| d).collect();
            let (mean, std) = mean_std(&values);
            Ok(MetricReport { mean, std, n_trajectories: n, per_trajectory_values: values, skipped: 0 })
        }
        Normalization::PerTrajectory => {
            let mut values = Vec::with_capacity(n);
            let mut skipped = 0;
            for (d, i) in pairs {
                if i > 0.0 {
                    values.push(d / i);
                } else {
                    skipped += 1;
                }
            }
            if values.is_empty() && n > 0 {
                return Err(Error::Degenerate("every trajectory has zero ideal DCG".into()));
            }
            let (mean, std) = mean_std(&values);
            Ok(MetricReport { mean, std, n_trajectories: n, per_trajectory_values: values, skipped })
        }
        Normalization::Post => {
            let (sum_dcg, sum_ideal) = pairs.iter().fold((0.0, 0.0), |(a, b), (d, i)| (a + d, b + i));
            if !(sum_ideal > 0.0) {
                return Err(Error::Degenerate("total ideal DCG is zero; pnDCG undefined".into()));
            }
            Ok(MetricReport {
                mean: sum_dcg / sum_ideal,
                std: 0.0,
                n_trajectories: n,
                per_trajectory_values: Vec::new(),
                skipped: 0,
            })
        }
    }
}
