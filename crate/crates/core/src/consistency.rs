//! Order consistency between DCG and nDCG.
//!
//! On a single sample, dividing by a positive ideal DCG cannot change the
//! order of competing policies. Averaged over samples with different ideal
//! values it can: [`reproduce_table1`] builds the classic two-context
//! instance, and [`search_counterexample`] finds such instances
//! exhaustively for standard log-discount nDCG. [`disagreement_report`]
//! measures how often the two metrics disagree across many models.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Deserialize;

use crate::bias_models::PositionBiasModel;
use crate::domain::{ActionId, ContextId, QualityModel};
use crate::error::{Error, Result};
use crate::exec::{stream_rng, Execution};
use crate::stats::{kendall_tau, pearson_r, Series};

/// Differences smaller than this are treated as ties.
const TIE_EPS: f64 = 1e-12;

/// Per-policy, per-sample metric values; every policy has the same number
/// of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricTable {
    rows: Vec<(String, Vec<f64>)>,
}

impl MetricTable {
    pub fn new(rows: Vec<(String, Vec<f64>)>) -> Result<Self> {
        if let Some((_, first)) = rows.first() {
            let len = first.len();
            for (id, v) in &rows {
                if v.len() != len {
                    return Err(Error::InvalidArgument(format!("policy {id} has {} samples, expected {len}", v.len())));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::InvalidArgument(format!("policy {id} has non-finite values")));
                }
            }
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[(String, Vec<f64>)] {
        &self.rows
    }

    pub fn n_samples(&self) -> usize {
        self.rows.first().map_or(0, |(_, v)| v.len())
    }

    /// Arithmetic mean per policy, in table order.
    pub fn means(&self) -> Vec<(String, f64)> {
        self.rows
            .iter()
            .map(|(id, v)| {
                let m = if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
                (id.clone(), m)
            })
            .collect()
    }

    pub fn sample(&self, j: usize) -> BTreeMap<String, f64> {
        self.rows.iter().map(|(id, v)| (id.clone(), v[j])).collect()
    }
}

fn cmp_eps(a: f64, b: f64) -> std::cmp::Ordering {
    if (a - b).abs() <= TIE_EPS * a.abs().max(b.abs()).max(1.0) {
        std::cmp::Ordering::Equal
    } else {
        a.total_cmp(&b)
    }
}

/// True when the two value lists induce the same weak order.
fn same_weak_order(a: &[f64], b: &[f64]) -> bool {
    (0..a.len()).all(|i| (i + 1..a.len()).all(|j| cmp_eps(a[i], a[j]) == cmp_eps(b[i], b[j])))
}

/// Descending order of `(id, value)` pairs, ties by id.
fn descending(mut v: Vec<(String, f64)>) -> Vec<(String, f64)> {
    v.sort_by(|(ia, a), (ib, b)| cmp_eps(*b, *a).then_with(|| ia.cmp(ib)));
    v
}

/// Whether ranking policies by DCG and by nDCG on one sample agree (ties
/// must tie in both). Mismatched policy sets are never consistent.
pub fn check_single_sample_consistency(dcg: &BTreeMap<String, f64>, ndcg: &BTreeMap<String, f64>) -> bool {
    if dcg.len() != ndcg.len() || dcg.keys().zip(ndcg.keys()).any(|(a, b)| a != b) {
        return false;
    }
    let a: Vec<f64> = dcg.values().copied().collect();
    let b: Vec<f64> = ndcg.values().copied().collect();
    same_weak_order(&a, &b)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateConsistency {
    pub consistent: bool,
    /// Policies by descending mean DCG.
    pub dcg_order: Vec<(String, f64)>,
    /// Policies by descending mean nDCG.
    pub ndcg_order: Vec<(String, f64)>,
}

/// Compares the orders implied by per-policy means of the two tables.
pub fn check_aggregate_consistency(dcg: &MetricTable, ndcg: &MetricTable) -> Result<AggregateConsistency> {
    let dm = dcg.means();
    let nm = ndcg.means();
    if dm.len() != nm.len() || dm.iter().zip(&nm).any(|((a, _), (b, _))| a != b) {
        return Err(Error::InvalidArgument("DCG and nDCG tables list different policies".into()));
    }
    let a: Vec<f64> = dm.iter().map(|(_, v)| *v).collect();
    let b: Vec<f64> = nm.iter().map(|(_, v)| *v).collect();
    Ok(AggregateConsistency { consistent: same_weak_order(&a, &b), dcg_order: descending(dm), ndcg_order: descending(nm) })
}

/// An instance on which aggregate DCG and nDCG order two policies
/// differently.
#[derive(Debug, Clone, PartialEq)]
pub struct Counterexample {
    pub contexts: Vec<ContextId>,
    pub actions: Vec<ActionId>,
    pub quality: QualityModel,
    /// Policy id and its displayed ranking per context (in `contexts` order).
    pub policies: Vec<(String, Vec<Vec<ActionId>>)>,
    pub discount: PositionBiasModel,
    /// How each sample's nDCG normaliser is built.
    pub normalizer: String,
    pub per_sample_dcg: MetricTable,
    /// Samples with zero ideal DCG are omitted.
    pub per_sample_ndcg: MetricTable,
}

impl Counterexample {
    pub fn aggregate(&self) -> Result<AggregateConsistency> {
        check_aggregate_consistency(&self.per_sample_dcg, &self.per_sample_ndcg)
    }

    pub fn per_sample_consistent(&self) -> bool {
        (0..self.per_sample_ndcg.n_samples())
            .all(|j| check_single_sample_consistency(&self.ndcg_matched_dcg(j), &self.per_sample_ndcg.sample(j)))
    }

    /// DCG values for the `j`-th nDCG sample (skipping zero-ideal samples).
    fn ndcg_matched_dcg(&self, j: usize) -> BTreeMap<String, f64> {
        let kept: Vec<usize> = (0..self.contexts.len()).filter(|&x| self.ideal(x) > 0.0).collect();
        self.per_sample_dcg.sample(kept[j])
    }

    fn ideal(&self, x: usize) -> f64 {
        if self.normalizer == SUM_OF_QUALITIES {
            self.actions.iter().map(|a| self.quality.get(&self.contexts[x], a).unwrap_or(0.0)).sum()
        } else {
            let mut q: Vec<f64> =
                self.actions.iter().map(|a| self.quality.get(&self.contexts[x], a).unwrap_or(0.0)).collect();
            q.sort_by(|a, b| b.total_cmp(a));
            q.iter().enumerate().map(|(j, v)| v * self.discount.at(j + 1)).sum()
        }
    }
}

const SUM_OF_QUALITIES: &str = "sum of qualities";
const SORTED_IDEAL_NORMALIZER: &str = "sorted-ideal DCG";

/// The two-context, two-action, top-1 instance with qualities
/// `(x1: 1.0, 0.0)` and `(x2: 1.0, 2.5)`. Policy `R` always shows `a1`,
/// `R'` always shows `a2`. Each sample's nDCG divides by the sum of that
/// context's qualities, which reproduces the per-sample values 0.29 / 0.71.
pub fn reproduce_table1() -> Counterexample {
    let contexts: Vec<ContextId> = vec!["x1".into(), "x2".into()];
    let actions: Vec<ActionId> = vec!["a1".into(), "a2".into()];
    let rho = [[1.0, 0.0], [1.0, 2.5]];
    let quality = QualityModel::from_entries(
        (0..2).flat_map(|x| (0..2).map(move |a| (x, a))).map(|(x, a)| (contexts[x].clone(), actions[a].clone(), rho[x][a])),
    )
    .expect("valid qualities");
    let shown = [0usize, 1];
    let names = ["R", "R'"];
    let dcg_rows = (0..2).map(|p| (names[p].to_owned(), (0..2).map(|x| rho[x][shown[p]]).collect())).collect();
    let ndcg_rows = (0..2)
        .map(|p| {
            let v = (0..2).map(|x| rho[x][shown[p]] / (rho[x][0] + rho[x][1])).collect();
            (names[p].to_owned(), v)
        })
        .collect();
    Counterexample {
        contexts: contexts.clone(),
        actions: actions.clone(),
        quality,
        policies: (0..2).map(|p| (names[p].to_owned(), vec![vec![actions[shown[p]].clone()]; 2])).collect(),
        discount: PositionBiasModel::table(vec![1.0]),
        normalizer: SUM_OF_QUALITIES.to_owned(),
        per_sample_dcg: MetricTable::new(dcg_rows).expect("aligned"),
        per_sample_ndcg: MetricTable::new(ndcg_rows).expect("aligned"),
    }
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    fn go(cur: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if cur.len() == used.len() {
            out.push(cur.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                cur.push(i);
                go(cur, used, out);
                cur.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    go(&mut Vec::with_capacity(k), &mut vec![false; k], &mut out);
    out
}

/// Exhaustive search over quality tables drawn from `grid` and pairs of
/// deterministic per-context rankings, for standard DCG (log discount with
/// `cutoff`) versus nDCG normalised by the sorted-ideal DCG. Instances are
/// visited by (contexts, actions, table, policy pair) ascending, and the
/// first inversion is returned.
pub fn search_counterexample(
    max_contexts: usize,
    max_actions: usize,
    grid: &[f64],
    cutoff: usize,
) -> Result<Option<Counterexample>> {
    search_counterexample_with(Execution::default(), max_contexts, max_actions, grid, cutoff)
}

pub fn search_counterexample_with(
    exec: Execution,
    max_contexts: usize,
    max_actions: usize,
    grid: &[f64],
    cutoff: usize,
) -> Result<Option<Counterexample>> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("quality grid is empty".into()));
    }
    if grid.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
        return Err(Error::InvalidArgument("quality grid values must be finite and >= 0".into()));
    }
    if max_contexts > 3 || max_actions > 3 {
        return Err(Error::InvalidArgument("search is limited to 3 contexts and 3 actions".into()));
    }
    let discount = PositionBiasModel::logarithmic(cutoff);
    for c in 1..=max_contexts {
        for k in 1..=max_actions {
            let perms = permutations(k);
            let n_tables = grid.len().pow((c * k) as u32);
            let hit = exec.find_map_first(n_tables, |t| search_table(t, c, k, grid, &perms, &discount));
            if let Some((table, p, q)) = hit {
                return Ok(Some(build_counterexample(&table, c, k, &perms, p, q, &discount)));
            }
        }
    }
    Ok(None)
}

/// Decodes table index `t` into `c x k` qualities (last entry varies fastest).
fn decode_table(mut t: usize, c: usize, k: usize, grid: &[f64]) -> Vec<Vec<f64>> {
    let mut flat = vec![0.0; c * k];
    for slot in flat.iter_mut().rev() {
        *slot = grid[t % grid.len()];
        t /= grid.len();
    }
    flat.chunks(k).map(<[f64]>::to_vec).collect()
}

fn dcg_of(q: &[f64], perm: &[usize], discount: &PositionBiasModel) -> f64 {
    perm.iter().enumerate().map(|(r, &a)| q[a] * discount.at(r + 1)).sum()
}

fn ideal_of(q: &[f64], discount: &PositionBiasModel) -> f64 {
    let mut s = q.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    s.iter().enumerate().map(|(r, v)| v * discount.at(r + 1)).sum()
}

type Hit = (Vec<Vec<f64>>, Vec<usize>, Vec<usize>);

fn search_table(t: usize, c: usize, k: usize, grid: &[f64], perms: &[Vec<usize>], discount: &PositionBiasModel) -> Option<Hit> {
    let table = decode_table(t, c, k, grid);
    let dcg: Vec<Vec<f64>> = table.iter().map(|q| perms.iter().map(|p| dcg_of(q, p, discount)).collect()).collect();
    let ideal: Vec<f64> = table.iter().map(|q| ideal_of(q, discount)).collect();
    let kept = ideal.iter().filter(|i| **i > 0.0).count();
    if kept == 0 {
        return None;
    }
    let n_policies = perms.len().pow(c as u32);
    let decode = |mut i: usize| {
        let mut v = vec![0; c];
        for slot in v.iter_mut().rev() {
            *slot = i % perms.len();
            i /= perms.len();
        }
        v
    };
    for pi in 0..n_policies {
        let p = decode(pi);
        for qi in pi + 1..n_policies {
            let q = decode(qi);
            let (mut d, mut n) = (0.0, 0.0);
            for x in 0..c {
                let delta = dcg[x][p[x]] - dcg[x][q[x]];
                d += delta;
                if ideal[x] > 0.0 {
                    n += delta / ideal[x];
                }
            }
            let (d, n) = (d / c as f64, n / kept as f64);
            if d.abs() > 1e-9 && n.abs() > 1e-9 && d.signum() != n.signum() {
                return Some((table, p, q));
            }
        }
    }
    None
}

fn build_counterexample(
    table: &[Vec<f64>],
    c: usize,
    k: usize,
    perms: &[Vec<usize>],
    p: Vec<usize>,
    q: Vec<usize>,
    discount: &PositionBiasModel,
) -> Counterexample {
    let contexts: Vec<ContextId> = (1..=c).map(|i| ContextId::new(format!("x{i}"))).collect();
    let actions: Vec<ActionId> = (1..=k).map(|i| ActionId::new(format!("a{i}"))).collect();
    let quality = QualityModel::from_entries(
        (0..c).flat_map(|x| (0..k).map(move |a| (x, a))).map(|(x, a)| (contexts[x].clone(), actions[a].clone(), table[x][a])),
    )
    .expect("grid validated");
    let ideal: Vec<f64> = table.iter().map(|row| ideal_of(row, discount)).collect();
    let mut policies = Vec::new();
    let mut dcg_rows = Vec::new();
    let mut ndcg_rows = Vec::new();
    for (name, choice) in [("P", &p), ("P'", &q)] {
        let rankings = (0..c).map(|x| perms[choice[x]].iter().map(|&a| actions[a].clone()).collect()).collect();
        let d: Vec<f64> = (0..c).map(|x| dcg_of(&table[x], &perms[choice[x]], discount)).collect();
        let n: Vec<f64> = (0..c).filter(|&x| ideal[x] > 0.0).map(|x| d[x] / ideal[x]).collect();
        policies.push((name.to_owned(), rankings));
        dcg_rows.push((name.to_owned(), d));
        ndcg_rows.push((name.to_owned(), n));
    }
    Counterexample {
        contexts,
        actions,
        quality,
        policies,
        discount: discount.clone(),
        normalizer: SORTED_IDEAL_NORMALIZER.to_owned(),
        per_sample_dcg: MetricTable::new(dcg_rows).expect("aligned"),
        per_sample_ndcg: MetricTable::new(ndcg_rows).expect("aligned"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LemmaCheckReport {
    pub checked: usize,
    pub consistent: usize,
}

/// Random single samples (labels in [0, 5], slates of 2 to 6 items, 2 to 4
/// random rankings, log discount): checks that DCG and nDCG order the
/// rankings identically. Label vectors with zero ideal DCG are redrawn.
pub fn lemma_check(n_samples: usize, seed: u64) -> LemmaCheckReport {
    let consistent = Execution::default()
        .map_indexed(n_samples, |i| {
            let mut rng = stream_rng(seed, i as u64);
            let slate = rng.random_range(2..=6usize);
            let labels: Vec<f64> = loop {
                let integer = rng.random_bool(0.5);
                let l: Vec<f64> = (0..slate)
                    .map(|_| if integer { rng.random_range(0..=5u32) as f64 } else { rng.random_range(0.0..=5.0) })
                    .collect();
                if l.iter().any(|v| *v > 0.0) {
                    break l;
                }
            };
            let discount = PositionBiasModel::logarithmic(slate);
            let ideal = ideal_of(&labels, &discount);
            let n_policies = rng.random_range(2..=4usize);
            let mut dcg = BTreeMap::new();
            let mut ndcg = BTreeMap::new();
            for p in 0..n_policies {
                let mut perm: Vec<usize> = (0..slate).collect();
                perm.shuffle(&mut rng);
                let d = dcg_of(&labels, &perm, &discount);
                dcg.insert(format!("p{p}"), d);
                ndcg.insert(format!("p{p}"), d / ideal);
            }
            check_single_sample_consistency(&dcg, &ndcg)
        })
        .into_iter()
        .filter(|ok| *ok)
        .count();
    LemmaCheckReport { checked: n_samples, consistent }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DisagreementReport {
    pub n_models: usize,
    pub pearson: f64,
    pub kendall: f64,
    /// Share of model pairs (with both differences non-zero) that the two
    /// metrics order oppositely.
    pub inversion_rate: f64,
    pub n_pairs_used: usize,
}

pub const DISAGREEMENT_CSV_HEADER: &str = "n_models,pearson,kendall,inversion_rate,n_pairs_used";

impl DisagreementReport {
    pub fn csv_row(&self) -> String {
        format!("{},{},{},{},{}", self.n_models, self.pearson, self.kendall, self.inversion_rate, self.n_pairs_used)
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ModelMetrics {
    pub model_id: String,
    pub dcg: f64,
    pub ndcg: f64,
}

/// Reads a `model_id,dcg,ndcg` CSV (header required).
pub fn read_model_metrics(path: impl AsRef<Path>) -> Result<Vec<ModelMetrics>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let expected = ["model_id", "dcg", "ndcg"];
    if headers.len() != 3 || headers.iter().zip(expected).any(|(h, e)| h.trim() != e) {
        return Err(Error::Parse { line: 1, message: format!("expected header `model_id,dcg,ndcg`, got `{}`", headers.iter().collect::<Vec<_>>().join(",")) });
    }
    let mut rows = Vec::new();
    for row in reader.deserialize() {
        rows.push(row?);
    }
    Ok(rows)
}

pub fn disagreement_report(rows: &[ModelMetrics]) -> Result<DisagreementReport> {
    if rows.len() < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 models, got {}", rows.len())));
    }
    let dcg = Series::new(rows.iter().map(|r| r.dcg).collect())?;
    let ndcg = Series::new(rows.iter().map(|r| r.ndcg).collect())?;
    let (mut used, mut inverted) = (0usize, 0usize);
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            let dd = rows[i].dcg - rows[j].dcg;
            let dn = rows[i].ndcg - rows[j].ndcg;
            if dd != 0.0 && dn != 0.0 {
                used += 1;
                if dd.signum() != dn.signum() {
                    inverted += 1;
                }
            }
        }
    }
    if used == 0 {
        return Err(Error::Degenerate("every model pair is tied on DCG or nDCG".into()));
    }
    Ok(DisagreementReport {
        n_models: rows.len(),
        pearson: pearson_r(&dcg, &ndcg)?,
        kendall: kendall_tau(&dcg, &ndcg)?,
        inversion_rate: inverted as f64 / used as f64,
        n_pairs_used: used,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(v: &[(&str, f64)]) -> BTreeMap<String, f64> {
        v.iter().map(|(k, x)| ((*k).to_owned(), *x)).collect()
    }

    fn rows(v: &[(&str, f64, f64)]) -> Vec<ModelMetrics> {
        v.iter().map(|(m, d, n)| ModelMetrics { model_id: (*m).into(), dcg: *d, ndcg: *n }).collect()
    }

    #[test]
    fn single_sample_examples() {
        assert!(check_single_sample_consistency(&map(&[("R", 1.0), ("R'", 0.0)]), &map(&[("R", 1.0), ("R'", 0.0)])));
        assert!(check_single_sample_consistency(&map(&[("R", 1.0), ("R'", 2.5)]), &map(&[("R", 0.29), ("R'", 0.71)])));
        assert!(!check_single_sample_consistency(&map(&[("A", 1.0), ("B", 2.0)]), &map(&[("A", 2.0), ("B", 1.0)])));
        assert!(!check_single_sample_consistency(&map(&[("A", 1.0), ("B", 1.0)]), &map(&[("A", 2.0), ("B", 1.0)])));
    }

    #[test]
    fn worked_example_values() {
        let ce = reproduce_table1();
        let agg = ce.aggregate().unwrap();
        assert!(!agg.consistent);
        assert_eq!(agg.dcg_order[0], ("R'".to_owned(), 1.25));
        assert_eq!(agg.dcg_order[1], ("R".to_owned(), 1.0));
        assert_eq!(agg.ndcg_order[0].0, "R");
        assert!((agg.ndcg_order[0].1 - 0.6428571428571428).abs() < 1e-12);
        assert!((agg.ndcg_order[1].1 - 0.35714285714285715).abs() < 1e-12);
        assert!(ce.per_sample_consistent());
        let n = ce.per_sample_ndcg.rows();
        assert_eq!(format!("{:.2}", n[0].1[1]), "0.29");
        assert_eq!(format!("{:.2}", n[1].1[1]), "0.71");
    }

    #[test]
    fn aggregate_trivial_cases() {
        let t = MetricTable::new(vec![("A".into(), vec![1.0]), ("B".into(), vec![2.0])]).unwrap();
        let n = MetricTable::new(vec![("A".into(), vec![0.3]), ("B".into(), vec![0.6])]).unwrap();
        assert!(check_aggregate_consistency(&t, &n).unwrap().consistent);
        assert!(check_aggregate_consistency(&t, &t).unwrap().consistent);
        assert!(MetricTable::new(vec![("A".into(), vec![1.0]), ("B".into(), vec![])]).is_err());
    }

    #[test]
    fn search_trivial_cases() {
        assert!(search_counterexample(3, 3, &[1.0], 3).unwrap().is_none());
        assert!(search_counterexample(1, 3, &[0.0, 1.0], 3).unwrap().is_none());
        assert!(search_counterexample(2, 2, &[], 2).is_err());
    }

    #[test]
    fn search_is_execution_independent() {
        let a = search_counterexample_with(Execution::Sequential, 3, 3, &[0.0, 1.0], 3).unwrap();
        let b = search_counterexample_with(Execution::Parallel, 3, 3, &[0.0, 1.0], 3).unwrap();
        assert_eq!(a, b);
        assert!(a.is_some());
    }

    #[test]
    fn lemma_check_is_clean() {
        let r = lemma_check(500, 1);
        assert_eq!(r.consistent, r.checked);
    }

    #[test]
    fn disagreement_examples() {
        let r = disagreement_report(&rows(&[("m1", 1.0, 1.0), ("m2", 2.0, 2.0)])).unwrap();
        assert_eq!((r.inversion_rate, r.kendall), (0.0, 1.0));
        let r = disagreement_report(&rows(&[("m1", 1.0, 2.0), ("m2", 2.0, 1.0)])).unwrap();
        assert_eq!(r.inversion_rate, 1.0);
        assert!(disagreement_report(&rows(&[("m1", 1.0, 2.0)])).is_err());
    }

    #[test]
    fn disagreement_one_third() {
        // Two adjacent swaps: pairs (m1,m2) and (m3,m4) invert, 2 of 6.
        let r = disagreement_report(&rows(&[("m1", 1.0, 2.0), ("m2", 2.0, 1.0), ("m3", 3.0, 4.0), ("m4", 4.0, 3.0)]))
            .unwrap();
        assert!((r.inversion_rate - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.n_pairs_used, 6);
    }

    #[test]
    fn monotone_transform_never_inverts() {
        let r = disagreement_report(&rows(&[("a", 1.0, 0.1), ("b", 5.0, 0.9), ("c", 2.0, 0.3), ("d", 3.0, 0.31)]))
            .unwrap();
        assert_eq!(r.inversion_rate, 0.0);
    }
}
