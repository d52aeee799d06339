//! Candidate generators and ranking policies.
//!
//! A two-stage policy first draws a candidate set from a generator and then
//! orders it with a ranker. Both stages support sampling as well as exact
//! enumeration of their distributions on small instances.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use serde::Deserialize;

use crate::domain::{ActionId, Catalog, ContextId};
use crate::error::{Error, Result};

/// Largest candidate set whose permutations (or catalog whose k-subsets) are
/// enumerated: 6 items, 720 permutations.
pub const ENUMERATION_BOUND: usize = 6;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreTable {
    scores: BTreeMap<(ContextId, ActionId), f64>,
}

impl ScoreTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries<I>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (ContextId, ActionId, f64)>,
    {
        let mut t = Self::new();
        for (x, a, s) in entries {
            t.insert(x, a, s)?;
        }
        Ok(t)
    }

    pub fn insert(&mut self, context: ContextId, action: ActionId, score: f64) -> Result<()> {
        if !score.is_finite() {
            return Err(Error::InvalidArgument(format!("score for ({context}, {action}) is not finite")));
        }
        self.scores.insert((context, action), score);
        Ok(())
    }

    pub fn get(&self, context: &ContextId, action: &ActionId) -> Result<f64> {
        self.scores
            .get(&(context.clone(), action.clone()))
            .copied()
            .ok_or_else(|| Error::Config(format!("no score entry for ({context}, {action})")))
    }

    /// Reads a `context,action,score` CSV with header.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            context: String,
            action: String,
            score: f64,
        }
        let mut reader = csv::Reader::from_path(path)?;
        let mut t = Self::new();
        for row in reader.deserialize() {
            let row: Row = row?;
            t.insert(row.context.into(), row.action.into(), row.score)?;
        }
        Ok(t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CandidateGenerator {
    FullCatalog,
    TopKByScore { scores: Arc<ScoreTable>, k: usize },
    UniformKSubset { k: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum RankingPolicy {
    /// Score descending, ties broken by action id ascending.
    DeterministicSort { scores: Arc<ScoreTable> },
    /// Sequential sampling proportional to `exp(score / temperature)`.
    PlackettLuce { scores: Arc<ScoreTable>, temperature: f64 },
}

/// A (candidate set, probability) or (ranking, probability) pair.
pub type Weighted = (Vec<ActionId>, f64);

fn check_candidates(candidates: &[ActionId]) -> Result<()> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("candidate set is empty".into()));
    }
    for (i, a) in candidates.iter().enumerate() {
        if candidates[..i].contains(a) {
            return Err(Error::InvalidArgument(format!("duplicate candidate `{a}`")));
        }
    }
    Ok(())
}

/// Indices of `items` sorted by score descending, ties by id ascending.
fn sorted_by_score(scores: &ScoreTable, context: &ContextId, items: &[ActionId]) -> Result<Vec<usize>> {
    let s: Vec<f64> = items.iter().map(|a| scores.get(context, a)).collect::<Result<_>>()?;
    let mut idx: Vec<usize> = (0..items.len()).collect();
    idx.sort_by(|&i, &j| s[j].total_cmp(&s[i]).then_with(|| items[i].cmp(&items[j])));
    Ok(idx)
}

impl RankingPolicy {
    pub fn deterministic(scores: Arc<ScoreTable>) -> Self {
        Self::DeterministicSort { scores }
    }

    pub fn plackett_luce(scores: Arc<ScoreTable>, temperature: f64) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::InvalidArgument(format!("temperature must be > 0, got {temperature}")));
        }
        Ok(Self::PlackettLuce { scores, temperature })
    }

    pub fn is_deterministic(&self) -> bool {
        matches!(self, Self::DeterministicSort { .. })
    }

    fn scores(&self) -> &ScoreTable {
        match self {
            Self::DeterministicSort { scores } | Self::PlackettLuce { scores, .. } => scores,
        }
    }

    /// Draws a ranking (a permutation of `candidates`).
    pub fn rank<R: Rng + ?Sized>(
        &self,
        context: &ContextId,
        candidates: &[ActionId],
        rng: &mut R,
    ) -> Result<Vec<ActionId>> {
        check_candidates(candidates)?;
        match self {
            Self::DeterministicSort { .. } => self.deterministic_ranking(context, candidates),
            Self::PlackettLuce { scores, temperature } => {
                let logits: Vec<f64> = candidates
                    .iter()
                    .map(|a| scores.get(context, a).map(|s| s / temperature))
                    .collect::<Result<_>>()?;
                let mut remaining: Vec<usize> = (0..candidates.len()).collect();
                let mut out = Vec::with_capacity(candidates.len());
                while remaining.len() > 1 {
                    let max = remaining.iter().map(|&i| logits[i]).fold(f64::NEG_INFINITY, f64::max);
                    let weights: Vec<f64> = remaining.iter().map(|&i| (logits[i] - max).exp()).collect();
                    let total: f64 = weights.iter().sum();
                    let mut u = rng.random::<f64>() * total;
                    let mut pick = remaining.len() - 1;
                    for (j, w) in weights.iter().enumerate() {
                        if u < *w {
                            pick = j;
                            break;
                        }
                        u -= w;
                    }
                    out.push(candidates[remaining.remove(pick)].clone());
                }
                out.push(candidates[remaining[0]].clone());
                Ok(out)
            }
        }
    }

    /// The deterministic ranking, when this policy has one.
    pub fn deterministic_ranking(&self, context: &ContextId, candidates: &[ActionId]) -> Result<Vec<ActionId>> {
        match self {
            Self::DeterministicSort { scores } => {
                check_candidates(candidates)?;
                let order = sorted_by_score(scores, context, candidates)?;
                Ok(order.into_iter().map(|i| candidates[i].clone()).collect())
            }
            Self::PlackettLuce { .. } => Err(Error::Unsupported(
                "stochastic ranker has no single ranking; use ranking_distribution".into(),
            )),
        }
    }

    /// 1-based position of `action` in the deterministic ranking.
    pub fn rank_of(&self, context: &ContextId, candidates: &[ActionId], action: &ActionId) -> Result<usize> {
        if !candidates.contains(action) {
            return Err(Error::InvalidArgument(format!("action `{action}` is not a candidate")));
        }
        let ranking = self.deterministic_ranking(context, candidates)?;
        Ok(ranking.iter().position(|a| a == action).expect("ranking is a permutation") + 1)
    }

    pub fn ranking_distribution(&self, context: &ContextId, candidates: &[ActionId]) -> Result<Vec<Weighted>> {
        self.ranking_distribution_with_bound(context, candidates, ENUMERATION_BOUND)
    }

    /// Exact distribution over permutations. Deterministic policies yield a
    /// single permutation regardless of size; stochastic ones are limited to
    /// `bound` candidates.
    pub fn ranking_distribution_with_bound(
        &self,
        context: &ContextId,
        candidates: &[ActionId],
        bound: usize,
    ) -> Result<Vec<Weighted>> {
        check_candidates(candidates)?;
        match self {
            Self::DeterministicSort { .. } => Ok(vec![(self.deterministic_ranking(context, candidates)?, 1.0)]),
            Self::PlackettLuce { temperature, .. } => {
                if candidates.len() > bound {
                    return Err(Error::EnumerationBound { size: candidates.len(), bound });
                }
                let scores = self.scores();
                let logits: Vec<f64> = candidates
                    .iter()
                    .map(|a| scores.get(context, a).map(|s| s / temperature))
                    .collect::<Result<_>>()?;
                let mut out = Vec::new();
                let mut prefix = Vec::with_capacity(candidates.len());
                let remaining: Vec<usize> = (0..candidates.len()).collect();
                enumerate_pl(&logits, remaining, &mut prefix, 1.0, &mut |perm, p| {
                    out.push((perm.iter().map(|&i| candidates[i].clone()).collect(), p));
                });
                Ok(out)
            }
        }
    }
}

fn enumerate_pl(
    logits: &[f64],
    remaining: Vec<usize>,
    prefix: &mut Vec<usize>,
    prob: f64,
    emit: &mut dyn FnMut(&[usize], f64),
) {
    if remaining.is_empty() {
        emit(prefix, prob);
        return;
    }
    let max = remaining.iter().map(|&i| logits[i]).fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = remaining.iter().map(|&i| (logits[i] - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    for (j, &i) in remaining.iter().enumerate() {
        let rest: Vec<usize> = remaining.iter().copied().filter(|&k| k != i).collect();
        prefix.push(i);
        enumerate_pl(logits, rest, prefix, prob * weights[j] / total, emit);
        prefix.pop();
    }
}

fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            go(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, n, k, &mut Vec::with_capacity(k), &mut out);
    out
}

impl CandidateGenerator {
    pub fn is_deterministic(&self) -> bool {
        !matches!(self, Self::UniformKSubset { .. })
    }

    pub fn validate(&self, catalog: &Catalog) -> Result<()> {
        match self {
            Self::FullCatalog => Ok(()),
            Self::TopKByScore { k, .. } | Self::UniformKSubset { k } => {
                if *k == 0 || *k > catalog.len() {
                    Err(Error::Config(format!("candidate size k={k} must lie in 1..={}", catalog.len())))
                } else {
                    Ok(())
                }
            }
        }
    }

    /// The fixed candidate set of a deterministic generator, in catalog order.
    pub fn fixed_candidates(&self, context: &ContextId, catalog: &Catalog) -> Result<Vec<ActionId>> {
        self.validate(catalog)?;
        match self {
            Self::FullCatalog => Ok(catalog.actions().to_vec()),
            Self::TopKByScore { scores, k } => {
                let mut top = sorted_by_score(scores, context, catalog.actions())?;
                top.truncate(*k);
                top.sort_unstable();
                Ok(top.into_iter().map(|i| catalog.actions()[i].clone()).collect())
            }
            Self::UniformKSubset { .. } => {
                Err(Error::Unsupported("uniform_k_subset has no fixed candidate set".into()))
            }
        }
    }

    /// Draws a candidate set, returned in catalog order.
    pub fn sample<R: Rng + ?Sized>(&self, context: &ContextId, catalog: &Catalog, rng: &mut R) -> Result<Vec<ActionId>> {
        match self {
            Self::UniformKSubset { k } => {
                self.validate(catalog)?;
                let mut idx = rand::seq::index::sample(rng, catalog.len(), *k).into_vec();
                idx.sort_unstable();
                Ok(idx.into_iter().map(|i| catalog.actions()[i].clone()).collect())
            }
            _ => self.fixed_candidates(context, catalog),
        }
    }

    pub fn candidate_distribution(&self, context: &ContextId, catalog: &Catalog) -> Result<Vec<Weighted>> {
        self.candidate_distribution_with_bound(context, catalog, ENUMERATION_BOUND)
    }

    pub fn candidate_distribution_with_bound(
        &self,
        context: &ContextId,
        catalog: &Catalog,
        bound: usize,
    ) -> Result<Vec<Weighted>> {
        match self {
            Self::UniformKSubset { k } => {
                self.validate(catalog)?;
                if catalog.len() > bound {
                    return Err(Error::EnumerationBound { size: catalog.len(), bound });
                }
                let p = 1.0 / binomial(catalog.len(), *k) as f64;
                Ok(combinations(catalog.len(), *k)
                    .into_iter()
                    .map(|c| (c.into_iter().map(|i| catalog.actions()[i].clone()).collect(), p))
                    .collect())
            }
            _ => Ok(vec![(self.fixed_candidates(context, catalog)?, 1.0)]),
        }
    }
}

/// Candidate generator plus ranker.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoStagePolicy {
    pub generator: CandidateGenerator,
    pub ranker: RankingPolicy,
}

impl TwoStagePolicy {
    pub fn new(generator: CandidateGenerator, ranker: RankingPolicy) -> Self {
        Self { generator, ranker }
    }

    pub fn is_deterministic(&self) -> bool {
        self.generator.is_deterministic() && self.ranker.is_deterministic()
    }

    pub fn sample_ranking<R: Rng + ?Sized>(
        &self,
        context: &ContextId,
        catalog: &Catalog,
        rng: &mut R,
    ) -> Result<Vec<ActionId>> {
        let candidates = self.generator.sample(context, catalog, rng)?;
        self.ranker.rank(context, &candidates, rng)
    }

    /// Exact distribution over displayed rankings, merging both stages.
    pub fn full_distribution(&self, context: &ContextId, catalog: &Catalog) -> Result<Vec<Weighted>> {
        let mut out = Vec::new();
        for (set, p_set) in self.generator.candidate_distribution(context, catalog)? {
            for (perm, p_perm) in self.ranker.ranking_distribution(context, &set)? {
                out.push((perm, p_set * p_perm));
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::stream_rng;
    use std::collections::HashMap;

    fn ctx() -> ContextId {
        "x".into()
    }

    fn ids(v: &[&str]) -> Vec<ActionId> {
        v.iter().map(|s| ActionId::from(*s)).collect()
    }

    fn scores(v: &[(&str, f64)]) -> Arc<ScoreTable> {
        Arc::new(ScoreTable::from_entries(v.iter().map(|(a, s)| (ctx(), ActionId::from(*a), *s))).unwrap())
    }

    #[test]
    fn deterministic_sort_orders_by_score() {
        let p = RankingPolicy::deterministic(scores(&[("a1", 0.9), ("a2", 0.1)]));
        let mut rng = stream_rng(0, 0);
        assert_eq!(p.rank(&ctx(), &ids(&["a2", "a1"]), &mut rng).unwrap(), ids(&["a1", "a2"]));
    }

    #[test]
    fn ties_break_by_id() {
        let p = RankingPolicy::deterministic(scores(&[("a1", 0.5), ("a2", 0.5)]));
        let mut rng = stream_rng(0, 0);
        assert_eq!(p.rank(&ctx(), &ids(&["a2", "a1"]), &mut rng).unwrap(), ids(&["a1", "a2"]));
    }

    #[test]
    fn missing_score_is_config_error() {
        let p = RankingPolicy::deterministic(scores(&[("a1", 0.5)]));
        let mut rng = stream_rng(0, 0);
        assert!(matches!(p.rank(&ctx(), &ids(&["a1", "zz"]), &mut rng), Err(Error::Config(_))));
    }

    #[test]
    fn rank_of_cases() {
        let p = RankingPolicy::deterministic(scores(&[("a1", 0.9), ("a2", 0.1)]));
        assert_eq!(p.rank_of(&ctx(), &ids(&["a1", "a2"]), &"a2".into()).unwrap(), 2);
        assert!(p.rank_of(&ctx(), &ids(&["a1"]), &"a2".into()).is_err());
        assert_eq!(p.rank_of(&ctx(), &ids(&["a2"]), &"a2".into()).unwrap(), 1);
        let pl = RankingPolicy::plackett_luce(scores(&[("a1", 0.9)]), 1.0).unwrap();
        assert!(matches!(pl.rank_of(&ctx(), &ids(&["a1"]), &"a1".into()), Err(Error::Unsupported(_))));
    }

    #[test]
    fn near_zero_temperature_is_greedy() {
        let p = RankingPolicy::plackett_luce(scores(&[("a1", 1.0), ("a2", 0.0)]), 0.01).unwrap();
        let mut rng = stream_rng(3, 0);
        let hits = (0..10_000)
            .filter(|_| p.rank(&ctx(), &ids(&["a2", "a1"]), &mut rng).unwrap() == ids(&["a1", "a2"]))
            .count();
        // P(a2 first) = 1/(1+e^100), effectively zero
        assert_eq!(hits, 10_000);
    }

    #[test]
    fn deterministic_distribution_is_a_point_mass() {
        let p = RankingPolicy::deterministic(scores(&[("a1", 3.0), ("a2", 2.0), ("a3", 1.0)]));
        let d = p.ranking_distribution(&ctx(), &ids(&["a3", "a1", "a2"])).unwrap();
        assert_eq!(d, vec![(ids(&["a1", "a2", "a3"]), 1.0)]);
    }

    #[test]
    fn uniform_pl_two_items() {
        let p = RankingPolicy::plackett_luce(scores(&[("a1", 0.3), ("a2", 0.3)]), 1.0).unwrap();
        let d = p.ranking_distribution(&ctx(), &ids(&["a1", "a2"])).unwrap();
        assert_eq!(d.len(), 2);
        for (_, prob) in d {
            assert!((prob - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn pl_closed_form_two_thirds() {
        let p = RankingPolicy::plackett_luce(scores(&[("a1", 2f64.ln()), ("a2", 0.0)]), 1.0).unwrap();
        let d: HashMap<_, _> = p.ranking_distribution(&ctx(), &ids(&["a1", "a2"])).unwrap().into_iter().collect();
        // softmax: 2 / (2 + 1)
        assert!((d[&ids(&["a1", "a2"])] - 2.0 / 3.0).abs() < 1e-15);
        assert!((d[&ids(&["a2", "a1"])] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn enumeration_bound() {
        let items: Vec<(String, f64)> = (0..7).map(|i| (format!("a{i}"), i as f64)).collect();
        let table = Arc::new(
            ScoreTable::from_entries(items.iter().map(|(a, s)| (ctx(), ActionId::from(a.as_str()), *s))).unwrap(),
        );
        let p = RankingPolicy::plackett_luce(table, 1.0).unwrap();
        let cands: Vec<ActionId> = items.iter().map(|(a, _)| ActionId::from(a.as_str())).collect();
        assert!(matches!(
            p.ranking_distribution(&ctx(), &cands),
            Err(Error::EnumerationBound { size: 7, bound: 6 })
        ));
        let d = p.ranking_distribution(&ctx(), &cands[..6]).unwrap();
        assert_eq!(d.len(), 720);
        assert!((d.iter().map(|(_, p)| p).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn candidate_distributions() {
        let cat = Catalog::new(ids(&["a1", "a2"])).unwrap();
        assert_eq!(
            CandidateGenerator::FullCatalog.candidate_distribution(&ctx(), &cat).unwrap(),
            vec![(ids(&["a1", "a2"]), 1.0)]
        );
        let d = CandidateGenerator::UniformKSubset { k: 1 }.candidate_distribution(&ctx(), &cat).unwrap();
        assert_eq!(d, vec![(ids(&["a1"]), 0.5), (ids(&["a2"]), 0.5)]);
        let g = CandidateGenerator::TopKByScore { scores: scores(&[("a1", 2.0), ("a2", 1.0)]), k: 1 };
        assert_eq!(g.candidate_distribution(&ctx(), &cat).unwrap(), vec![(ids(&["a1"]), 1.0)]);
    }

    #[test]
    fn uniform_subsets_sum_to_one() {
        let cat = Catalog::new(ids(&["a", "b", "c", "d", "e", "f"])).unwrap();
        for k in 1..=6 {
            let d = CandidateGenerator::UniformKSubset { k }.candidate_distribution(&ctx(), &cat).unwrap();
            assert_eq!(d.len(), binomial(6, k));
            assert!((d.iter().map(|(_, p)| p).sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let big = Catalog::new(ids(&["a", "b", "c", "d", "e", "f", "g"])).unwrap();
        assert!(CandidateGenerator::UniformKSubset { k: 2 }.candidate_distribution(&ctx(), &big).is_err());
        assert!(CandidateGenerator::UniformKSubset { k: 8 }.validate(&big).is_err());
    }

    #[test]
    fn pl_enumeration_matches_sampling_frequencies() {
        let table = scores(&[("a1", 1.0), ("a2", 0.4), ("a3", -0.3)]);
        let p = RankingPolicy::plackett_luce(table, 0.7).unwrap();
        let cands = ids(&["a1", "a2", "a3"]);
        let exact: HashMap<_, _> = p.ranking_distribution(&ctx(), &cands).unwrap().into_iter().collect();
        let n = 100_000usize;
        let mut counts: HashMap<Vec<ActionId>, usize> = HashMap::new();
        let mut rng = stream_rng(11, 0);
        for _ in 0..n {
            *counts.entry(p.rank(&ctx(), &cands, &mut rng).unwrap()).or_default() += 1;
        }
        for (perm, prob) in exact {
            let freq = *counts.get(&perm).unwrap_or(&0) as f64 / n as f64;
            let sigma = (prob * (1.0 - prob) / n as f64).sqrt();
            assert!((freq - prob).abs() <= 3.0 * sigma, "{perm:?}: {freq} vs {prob}");
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(1000))]
            #[test]
            fn rankings_are_permutations(
                raw in proptest::collection::vec(-3.0f64..3.0, 1..9),
                temp in 0.05f64..5.0,
                stochastic in any::<bool>(),
                seed in any::<u64>(),
            ) {
                let names: Vec<String> = (0..raw.len()).map(|i| format!("a{i}")).collect();
                let table = Arc::new(ScoreTable::from_entries(
                    names.iter().zip(&raw).map(|(a, s)| (ctx(), ActionId::from(a.as_str()), *s)),
                ).unwrap());
                let p = if stochastic {
                    RankingPolicy::plackett_luce(table, temp).unwrap()
                } else {
                    RankingPolicy::deterministic(table)
                };
                let cands: Vec<ActionId> = names.iter().map(|a| ActionId::from(a.as_str())).collect();
                let mut rng = stream_rng(seed, 0);
                let mut r = p.rank(&ctx(), &cands, &mut rng).unwrap();
                if !stochastic {
                    for a in &cands {
                        let pos = r.iter().position(|b| b == a).unwrap() + 1;
                        prop_assert_eq!(p.rank_of(&ctx(), &cands, a).unwrap(), pos);
                    }
                }
                r.sort();
                let mut c = cands.clone();
                c.sort();
                prop_assert_eq!(r, c);
            }
        }
    }
}
