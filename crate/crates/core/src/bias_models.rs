//! Position-based view models `P(V = 1 | R = r)` with a display cutoff.
//!
//! The same curve serves as the DCG discount and as the logging propensity.
//! Ranks past the cutoff are never viewed, which is how DCG@n is expressed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum PositionBiasModel {
    /// `1 / log2(rank + 1)`.
    Logarithmic { cutoff: usize },
    /// `gamma^(rank - 1)`.
    Exponential { gamma: f64, cutoff: usize },
    /// Empirical curve, `values[rank - 1]`.
    Table { values: Vec<f64>, cutoff: usize },
}

impl PositionBiasModel {
    pub fn logarithmic(cutoff: usize) -> Self {
        Self::Logarithmic { cutoff }
    }

    pub fn exponential(gamma: f64, cutoff: usize) -> Self {
        Self::Exponential { gamma, cutoff }
    }

    /// Table model whose cutoff is the table length.
    pub fn table(values: Vec<f64>) -> Self {
        let cutoff = values.len();
        Self::Table { values, cutoff }
    }

    pub fn cutoff(&self) -> usize {
        match self {
            Self::Logarithmic { cutoff } | Self::Exponential { cutoff, .. } | Self::Table { cutoff, .. } => *cutoff,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Self::Logarithmic { .. } => "logarithmic",
            Self::Exponential { .. } => "exponential",
            Self::Table { .. } => "table",
        }
    }

    pub fn view_prob(&self, rank: usize) -> Result<f64> {
        if rank == 0 {
            return Err(Error::InvalidArgument("ranks are 1-based; got 0".into()));
        }
        Ok(self.at(rank))
    }

    /// `view_prob` for a rank already known to be >= 1.
    pub(crate) fn at(&self, rank: usize) -> f64 {
        debug_assert!(rank >= 1);
        if rank > self.cutoff() {
            return 0.0;
        }
        match self {
            Self::Logarithmic { .. } => 1.0 / ((rank + 1) as f64).log2(),
            Self::Exponential { gamma, .. } => gamma.powi(rank as i32 - 1),
            Self::Table { values, .. } => values.get(rank - 1).copied().unwrap_or(0.0),
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.cutoff() == 0 {
            out.push("cutoff must be >= 1".to_owned());
        }
        match self {
            Self::Logarithmic { .. } => {}
            Self::Exponential { gamma, .. } => {
                if !(*gamma > 0.0 && *gamma <= 1.0) {
                    out.push(format!("exponential gamma must lie in (0, 1], got {gamma}"));
                }
            }
            Self::Table { values, cutoff } => {
                if values.len() < *cutoff {
                    out.push(format!("table has {} values but cutoff is {cutoff}", values.len()));
                }
                if let Some(v) = values.iter().find(|v| !(**v >= 0.0 && **v <= 1.0)) {
                    out.push(format!("table value {v} outside [0, 1]"));
                }
            }
        }
        out
    }

    pub fn ensure_valid(&self) -> Result<()> {
        match self.validate().into_iter().next() {
            None => Ok(()),
            Some(msg) => Err(Error::Config(format!("invalid position bias model: {msg}"))),
        }
    }

    /// True when every displayed rank has positive view probability; required
    /// of logging models so that every displayed item has nonzero exposure.
    pub fn strictly_positive_to_cutoff(&self) -> bool {
        (1..=self.cutoff()).all(|r| self.at(r) > 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logarithmic_values() {
        let m = PositionBiasModel::logarithmic(10);
        assert_eq!(m.view_prob(1).unwrap(), 1.0);
        assert_eq!(m.view_prob(3).unwrap(), 0.5);
        assert!((m.view_prob(2).unwrap() - 1.0 / 3f64.log2()).abs() < 1e-15);
    }

    #[test]
    fn exponential_values() {
        let m = PositionBiasModel::exponential(0.8, 10);
        assert_eq!(m.view_prob(1).unwrap(), 1.0);
        assert_eq!(m.view_prob(2).unwrap(), 0.8);
    }

    #[test]
    fn past_cutoff_is_never_viewed() {
        for m in [
            PositionBiasModel::logarithmic(5),
            PositionBiasModel::exponential(0.9, 5),
            PositionBiasModel::Table { values: vec![1.0; 8], cutoff: 5 },
        ] {
            assert_eq!(m.view_prob(6).unwrap(), 0.0);
            assert_eq!(m.view_prob(100).unwrap(), 0.0);
        }
    }

    #[test]
    fn rank_zero_is_an_error() {
        assert!(matches!(PositionBiasModel::logarithmic(3).view_prob(0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn validation() {
        assert!(!PositionBiasModel::exponential(1.2, 3).validate().is_empty());
        assert!(!PositionBiasModel::exponential(0.0, 3).validate().is_empty());
        assert!(PositionBiasModel::table(vec![1.0, 0.5]).validate().is_empty());
        assert!(!PositionBiasModel::Table { values: vec![1.0], cutoff: 2 }.validate().is_empty());
        assert!(!PositionBiasModel::Table { values: vec![1.0, 1.5], cutoff: 2 }.validate().is_empty());
        assert!(!PositionBiasModel::logarithmic(0).validate().is_empty());
    }

    #[test]
    fn table_zero_entries_are_not_full_support() {
        assert!(!PositionBiasModel::table(vec![1.0, 0.0]).strictly_positive_to_cutoff());
        assert!(PositionBiasModel::exponential(0.5, 30).strictly_positive_to_cutoff());
    }

    #[test]
    fn config_syntax() {
        let m: PositionBiasModel = serde_json::from_str(r#"{"kind":"exponential","gamma":0.8,"cutoff":10}"#).unwrap();
        assert_eq!(m, PositionBiasModel::exponential(0.8, 10));
        let m: PositionBiasModel = serde_json::from_str(r#"{"kind":"table","values":[1.0,0.5],"cutoff":2}"#).unwrap();
        assert_eq!(m, PositionBiasModel::table(vec![1.0, 0.5]));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn model() -> impl Strategy<Value = PositionBiasModel> {
            prop_oneof![
                (1usize..50).prop_map(PositionBiasModel::logarithmic),
                (0.01f64..=1.0, 1usize..50).prop_map(|(g, c)| PositionBiasModel::exponential(g, c)),
            ]
        }

        proptest! {
            #[test]
            fn nonincreasing_and_zero_past_cutoff(m in model()) {
                let c = m.cutoff();
                prop_assert_eq!(m.at(1), 1.0);
                for r in 1..c {
                    prop_assert!(m.at(r + 1) <= m.at(r));
                }
                for r in c + 1..c + 10 {
                    prop_assert_eq!(m.at(r), 0.0);
                }
            }
        }
    }
}
