//! Contexts, actions, logged trajectories and the JSONL dataset format.
//!
//! A dataset file holds one trajectory per line:
//!
//! ```text
//! {"traj":"t1","day":0,"context":"x1","items":[{"action":"a1","rank":1,"logging_view_prob":1.0,"reward":0.0}]}
//! ```
//!
//! Dataset metadata is not part of the line format; [`write_dataset`] stores
//! it in a `<path>.meta.json` sidecar when non-empty and [`read_dataset`]
//! picks it up if present.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionId(String);

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ContextId(String);

macro_rules! id_impls {
    ($t:ident) => {
        impl $t {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $t {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }

        impl From<String> for $t {
            fn from(s: String) -> Self {
                Self(s)
            }
        }
    };
}

id_impls!(ActionId);
id_impls!(ContextId);

/// The action space: an ordered set of distinct, non-empty ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Catalog {
    actions: Vec<ActionId>,
}

impl Catalog {
    pub fn new(actions: Vec<ActionId>) -> Result<Self> {
        if actions.is_empty() {
            return Err(Error::InvalidArgument("catalog must contain at least one action".into()));
        }
        let mut seen = HashSet::with_capacity(actions.len());
        for a in &actions {
            if a.as_str().is_empty() {
                return Err(Error::InvalidArgument("empty action id in catalog".into()));
            }
            if !seen.insert(a) {
                return Err(Error::InvalidArgument(format!("duplicate action id `{a}` in catalog")));
            }
        }
        Ok(Self { actions })
    }

    pub fn actions(&self) -> &[ActionId] {
        &self.actions
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn contains(&self, action: &ActionId) -> bool {
        self.actions.contains(action)
    }

    pub fn position(&self, action: &ActionId) -> Option<usize> {
        self.actions.iter().position(|a| a == action)
    }
}

/// Expected quality `E[Q | X = x, A = a]` per (context, action).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QualityModel {
    table: BTreeMap<(ContextId, ActionId), f64>,
}

impl QualityModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries<I>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (ContextId, ActionId, f64)>,
    {
        let mut model = Self::new();
        for (x, a, q) in entries {
            model.insert(x, a, q)?;
        }
        Ok(model)
    }

    pub fn insert(&mut self, context: ContextId, action: ActionId, quality: f64) -> Result<()> {
        if !quality.is_finite() || quality < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "quality for ({context}, {action}) must be finite and >= 0, got {quality}"
            )));
        }
        self.table.insert((context, action), quality);
        Ok(())
    }

    pub fn get(&self, context: &ContextId, action: &ActionId) -> Result<f64> {
        self.table
            .get(&(context.clone(), action.clone()))
            .copied()
            .ok_or_else(|| Error::Config(format!("no quality entry for ({context}, {action})")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ContextId, &ActionId, f64)> {
        self.table.iter().map(|((x, a), q)| (x, a, *q))
    }

    pub fn max_value(&self) -> f64 {
        self.table.values().copied().fold(0.0, f64::max)
    }

    /// Applies `f` to every entry.
    pub fn map(&self, mut f: impl FnMut(&ContextId, &ActionId, f64) -> f64) -> Self {
        let table = self
            .table
            .iter()
            .map(|((x, a), q)| ((x.clone(), a.clone()), f(x, a, *q)))
            .collect();
        Self { table }
    }

    /// Reads a `context,action,quality` CSV with header.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            context: String,
            action: String,
            quality: f64,
        }
        let mut reader = csv::Reader::from_path(path)?;
        let mut model = Self::new();
        for row in reader.deserialize() {
            let row: Row = row?;
            model.insert(row.context.into(), row.action.into(), row.quality)?;
        }
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoggedItem {
    pub action: ActionId,
    #[serde(rename = "rank")]
    pub log_rank: u32,
    pub logging_view_prob: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoggedTrajectory {
    #[serde(rename = "traj")]
    pub traj_id: String,
    pub day: u32,
    pub context: ContextId,
    pub items: Vec<LoggedItem>,
}

impl LoggedTrajectory {
    pub fn reward_sum(&self) -> f64 {
        self.items.iter().map(|i| i.reward).sum()
    }

    fn violations(&self, out: &mut Vec<Violation>) {
        let traj = Some(self.traj_id.clone());
        if self.traj_id.is_empty() {
            out.push(Violation { traj: None, rank: None, message: "empty trajectory id".into() });
        }
        if self.context.as_str().is_empty() {
            out.push(Violation { traj: traj.clone(), rank: None, message: "empty context id".into() });
        }
        let mut prev = 0u32;
        for item in &self.items {
            let rank = Some(item.log_rank);
            let mut push = |message: String| {
                out.push(Violation { traj: traj.clone(), rank, message });
            };
            if item.log_rank == 0 {
                push("rank must be >= 1".into());
            } else if item.log_rank <= prev {
                push(format!("ranks not strictly increasing ({} after {})", item.log_rank, prev));
            }
            prev = prev.max(item.log_rank);
            let p = item.logging_view_prob;
            if !(p > 0.0 && p <= 1.0) {
                push(format!("logging_view_prob {p} outside (0, 1]"));
            }
            if !(item.reward.is_finite() && item.reward >= 0.0) {
                push(format!("reward {} is not a finite nonnegative number", item.reward));
            }
            if item.action.as_str().is_empty() {
                push("empty action id".into());
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoggedDataset {
    pub trajectories: Vec<LoggedTrajectory>,
    pub metadata: BTreeMap<String, String>,
}

impl LoggedDataset {
    pub fn new(trajectories: Vec<LoggedTrajectory>) -> Self {
        Self { trajectories, metadata: BTreeMap::new() }
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Mean per-trajectory reward sum; the on-policy value of the logger.
    pub fn mean_reward(&self) -> f64 {
        if self.trajectories.is_empty() {
            return 0.0;
        }
        let total: f64 = self.trajectories.iter().map(LoggedTrajectory::reward_sum).sum();
        total / self.trajectories.len() as f64
    }
}

/// One broken invariant; `traj` and `rank` locate it when applicable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub traj: Option<String>,
    pub rank: Option<u32>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.traj, self.rank) {
            (Some(t), Some(r)) => write!(f, "trajectory {t}, rank {r}: {}", self.message),
            (Some(t), None) => write!(f, "trajectory {t}: {}", self.message),
            _ => f.write_str(&self.message),
        }
    }
}

/// Lists every invariant violation; an empty list means the dataset is valid.
pub fn validate_dataset(dataset: &LoggedDataset, catalog: &Catalog) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut seen = HashSet::with_capacity(dataset.trajectories.len());
    for t in &dataset.trajectories {
        if !seen.insert(t.traj_id.as_str()) {
            out.push(Violation {
                traj: Some(t.traj_id.clone()),
                rank: None,
                message: "duplicate trajectory id".into(),
            });
        }
        t.violations(&mut out);
        for item in &t.items {
            if !item.action.as_str().is_empty() && !catalog.contains(&item.action) {
                out.push(Violation {
                    traj: Some(t.traj_id.clone()),
                    rank: Some(item.log_rank),
                    message: format!("action `{}` not in catalog", item.action),
                });
            }
        }
    }
    out
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Reads a JSONL dataset. Blank lines are ignored; line numbers in errors
/// are 1-based.
pub fn read_dataset(path: impl AsRef<Path>) -> Result<LoggedDataset> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut trajectories = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let traj: LoggedTrajectory = serde_json::from_str(&line)
            .map_err(|e| Error::Parse { line: idx + 1, message: e.to_string() })?;
        let mut violations = Vec::new();
        traj.violations(&mut violations);
        if let Some(v) = violations.into_iter().next() {
            return Err(Error::Invariant { traj: traj.traj_id.clone(), message: v.to_string() });
        }
        if !seen.insert(traj.traj_id.clone()) {
            return Err(Error::Invariant { traj: traj.traj_id, message: "duplicate trajectory id".into() });
        }
        trajectories.push(traj);
    }
    let meta_path = sidecar_path(path);
    let metadata = if meta_path.exists() {
        serde_json::from_reader(BufReader::new(File::open(meta_path)?))?
    } else {
        BTreeMap::new()
    };
    Ok(LoggedDataset { trajectories, metadata })
}

/// Writes `dataset` as JSONL. The file is written to a temporary sibling and
/// renamed into place, so a failed write never leaves a partial file.
pub fn write_dataset(dataset: &LoggedDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    write_atomic(path, |w| {
        for t in &dataset.trajectories {
            serde_json::to_writer(&mut *w, t)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    })?;
    let meta_path = sidecar_path(path);
    if dataset.metadata.is_empty() {
        if meta_path.exists() {
            std::fs::remove_file(meta_path)?;
        }
    } else {
        write_atomic(&meta_path, |w| {
            serde_json::to_writer_pretty(&mut *w, &dataset.metadata)?;
            w.write_all(b"\n")?;
            Ok(())
        })?;
    }
    Ok(())
}

/// Writes through a temp file in the target directory, then renames.
pub fn write_atomic(path: &Path, body: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        body(&mut w)?;
        w.flush()?;
    }
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(action: &str, rank: u32, p: f64, reward: f64) -> LoggedItem {
        LoggedItem { action: action.into(), log_rank: rank, logging_view_prob: p, reward }
    }

    fn traj(id: &str, items: Vec<LoggedItem>) -> LoggedTrajectory {
        LoggedTrajectory { traj_id: id.into(), day: 0, context: "x1".into(), items }
    }

    fn catalog() -> Catalog {
        Catalog::new(vec!["a1".into(), "a2".into(), "a3".into()]).unwrap()
    }

    #[test]
    fn well_formed_dataset_has_no_violations() {
        let ds = LoggedDataset::new(vec![
            traj("t1", vec![item("a1", 1, 1.0, 0.0), item("a2", 2, 0.5, 1.0)]),
            traj("t2", vec![]),
        ]);
        assert!(validate_dataset(&ds, &catalog()).is_empty());
    }

    #[test]
    fn zero_propensity_is_reported_with_location() {
        let ds = LoggedDataset::new(vec![traj("t1", vec![item("a1", 1, 1.0, 0.0), item("a2", 2, 0.0, 1.0)])]);
        let v = validate_dataset(&ds, &catalog());
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].traj.as_deref(), Some("t1"));
        assert_eq!(v[0].rank, Some(2));
    }

    #[test]
    fn duplicate_traj_id_is_reported_once() {
        let ds = LoggedDataset::new(vec![traj("t1", vec![]), traj("t1", vec![])]);
        let v = validate_dataset(&ds, &catalog());
        assert_eq!(v.len(), 1);
        assert!(v[0].message.contains("duplicate"));
    }

    #[test]
    fn unknown_action_and_bad_ranks_are_reported() {
        let ds = LoggedDataset::new(vec![traj("t1", vec![item("zz", 2, 1.0, 0.0), item("a1", 1, 1.0, -1.0)])]);
        let v = validate_dataset(&ds, &catalog());
        let msgs: Vec<_> = v.iter().map(|v| v.message.clone()).collect();
        assert!(msgs.iter().any(|m| m.contains("not in catalog")));
        assert!(msgs.iter().any(|m| m.contains("strictly increasing")));
        assert!(msgs.iter().any(|m| m.contains("reward")));
    }

    #[test]
    fn catalog_rejects_duplicates_and_empty() {
        assert!(Catalog::new(vec![]).is_err());
        assert!(Catalog::new(vec!["a".into(), "a".into()]).is_err());
        assert!(Catalog::new(vec!["".into()]).is_err());
    }

    #[test]
    fn round_trip_preserves_content_and_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.jsonl");
        let mut ds = LoggedDataset::new(vec![
            traj("t3", vec![item("a1", 1, 1.0, 0.0), item("a3", 4, 0.3333333333333333, 2.5)]),
            traj("t1", vec![]),
            traj("t2", vec![item("a2", 2, 0.1, 1e-300)]),
        ]);
        ds.metadata.insert("seed".into(), "7".into());
        write_dataset(&ds, &path).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn exact_line_format() {
        let t = traj("t1", vec![item("a1", 1, 1.0, 0.0)]);
        assert_eq!(
            serde_json::to_string(&t).unwrap(),
            r#"{"traj":"t1","day":0,"context":"x1","items":[{"action":"a1","rank":1,"logging_view_prob":1.0,"reward":0.0}]}"#
        );
    }

    #[test]
    fn missing_rank_is_a_parse_error_on_line_one() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(
            &path,
            r#"{"traj":"t1","day":0,"context":"x1","items":[{"action":"a1","logging_view_prob":1.0,"reward":0.0}]}"#,
        )
        .unwrap();
        match read_dataset(&path) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 1);
                assert!(message.contains("rank"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn unsorted_ranks_are_an_invariant_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(
            &path,
            concat!(
                r#"{"traj":"t9","day":0,"context":"x1","items":[{"action":"a1","rank":2,"logging_view_prob":1.0,"reward":0.0},"#,
                r#"{"action":"a2","rank":1,"logging_view_prob":1.0,"reward":0.0}]}"#
            ),
        )
        .unwrap();
        match read_dataset(&path) {
            Err(Error::Invariant { traj, .. }) => assert_eq!(traj, "t9"),
            other => panic!("expected invariant error, got {other:?}"),
        }
    }
}
