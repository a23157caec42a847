//! Experiment configuration: a strict JSON schema where every key has a
//! default, so `{}` is a complete configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::anchor::{AnchorConfig, AnchorStrategy};
use crate::data::SyntheticSpec;
use crate::error::{Error, Result};
use crate::index::IndexParams;
use crate::model::TrainConfig;
use crate::strategy::StrategyKind;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub index: IndexConfig,
    pub filter: FilterConfig,
    pub strategy: StrategyConfig,
    pub train: TrainConfig,
    #[serde(rename = "loop")]
    pub run: LoopConfig,
    pub seeds: Seeds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub dir: PathBuf,
    /// Generator settings used by `synth`.
    pub synth: SyntheticSpec,
    /// Majority instances in the generated test split.
    pub test_majority: usize,
    /// Restricts the initial minority draws to these ground-truth clusters.
    pub initial_clusters: Option<Vec<u32>>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("data"),
            synth: SyntheticSpec::default(),
            test_majority: 5000,
            initial_clusters: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IndexConfig {
    pub ef_construction: usize,
    pub ef_search: usize,
    pub max_connections: usize,
    pub seed: u64,
    /// Use exhaustive search instead of the graph index.
    pub exact: bool,
}

impl Default for IndexConfig {
    fn default() -> Self {
        let p = IndexParams::default();
        Self {
            ef_construction: p.ef_construction,
            ef_search: p.ef_search,
            max_connections: p.max_connections,
            seed: p.seed,
            exact: false,
        }
    }
}

impl IndexConfig {
    pub fn params(&self) -> IndexParams {
        IndexParams {
            ef_construction: self.ef_construction,
            ef_search: self.ef_search,
            max_connections: self.max_connections,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    Anchoral,
    Seals,
    RandomSubset,
    Noop,
}

impl FilterKind {
    pub fn name(&self) -> &'static str {
        match self {
            FilterKind::Anchoral => "anchoral",
            FilterKind::Seals => "seals",
            FilterKind::RandomSubset => "random_subset",
            FilterKind::Noop => "noop",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_owned()))
            .map_err(|_| Error::Config(format!("unknown filter {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterConfig {
    #[serde(rename = "type")]
    pub kind: FilterKind,
    /// Anchors per class.
    pub a: usize,
    /// Neighbours retrieved per anchor.
    pub neighbours: usize,
    pub max_subpool: usize,
    pub subset_size: usize,
    pub seals_k: usize,
    pub anchor_strategy: AnchorStrategy,
    /// Overrides `anchor_strategy` for the majority class.
    pub majority_anchor_strategy: Option<AnchorStrategy>,
    /// When false, anchors are drawn uniformly from all labelled instances.
    pub anchoring: bool,
    /// Method name used in output paths and reports.
    pub label: Option<String>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            kind: FilterKind::Anchoral,
            a: 10,
            neighbours: 50,
            max_subpool: 1000,
            subset_size: 10_000,
            seals_k: 50,
            anchor_strategy: AnchorStrategy::KMeansPlusPlus,
            majority_anchor_strategy: None,
            anchoring: true,
            label: None,
        }
    }
}

impl FilterConfig {
    pub fn anchor_config(&self) -> AnchorConfig {
        AnchorConfig {
            per_class: self.a,
            minority: self.anchor_strategy,
            majority: self.majority_anchor_strategy.unwrap_or(self.anchor_strategy),
            anchoring: self.anchoring,
        }
    }

    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.kind.name().to_owned())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StrategyConfig {
    #[serde(rename = "type")]
    pub kind: StrategyKind,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            kind: StrategyKind::Entropy,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Timing {
    #[default]
    Wall,
    /// Record zero selection time, making round logs reproducible byte for byte.
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoopConfig {
    pub budget: usize,
    pub rounds: usize,
    pub n_init: usize,
    pub per_minority: usize,
    pub time_limit_s: Option<f64>,
    pub timing: Timing,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            budget: 5000,
            rounds: 200,
            n_init: 100,
            per_minority: 5,
            time_limit_s: None,
            timing: Timing::Wall,
        }
    }
}

impl LoopConfig {
    /// Instances labelled per round.
    pub fn query_size(&self) -> usize {
        if self.rounds == 0 {
            0
        } else {
            self.budget / self.rounds
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seeds {
    pub model_init: u64,
    pub data_order: u64,
    pub initial_set: u64,
    /// Anchors, filters and acquisition strategies.
    pub selection: u64,
}

impl Seeds {
    /// Seeds of sweep member `i`: every stream shifted by `i`.
    pub fn offset(&self, i: u64) -> Self {
        Self {
            model_init: self.model_init.wrapping_add(i),
            data_order: self.data_order.wrapping_add(i),
            initial_set: self.initial_set.wrapping_add(i),
            selection: self.selection.wrapping_add(i),
        }
    }
}

fn at_least_one(key: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(Error::Config(format!("{key}: must be >= 1, got 0")));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let f = &self.filter;
        at_least_one("filter.a", f.a)?;
        at_least_one("filter.neighbours", f.neighbours)?;
        at_least_one("filter.max_subpool", f.max_subpool)?;
        at_least_one("filter.subset_size", f.subset_size)?;
        at_least_one("filter.seals_k", f.seals_k)?;
        at_least_one("loop.rounds", self.run.rounds)?;
        at_least_one("loop.n_init", self.run.n_init)?;
        if self.run.query_size() == 0 {
            return Err(Error::Config(format!(
                "loop.budget: {} over {} rounds leaves no query per round",
                self.run.budget, self.run.rounds
            )));
        }
        if let Some(limit) = self.run.time_limit_s {
            if !(limit > 0.0) {
                return Err(Error::Config(format!("loop.time_limit_s: must be > 0, got {limit}")));
            }
        }
        self.train.validate()?;
        if !self.index.exact {
            self.index.params().validate()?;
        }
        Ok(())
    }

    pub fn method_label(&self) -> String {
        format!("{}-{}", self.filter.label(), self.strategy.kind.name())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }
}

/// Parses and validates a configuration. Schema errors name the offending key.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if path == "." {
            Error::Config(inner.to_string())
        } else {
            Error::Config(format!("{path}: {inner}"))
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_the_default() {
        let cfg = parse_config_str("{}").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.filter.a, 10);
        assert_eq!(cfg.filter.neighbours, 50);
        assert_eq!(cfg.filter.max_subpool, 1000);
        assert_eq!(cfg.filter.subset_size, 10_000);
        assert_eq!(cfg.filter.seals_k, 50);
        assert_eq!(cfg.run.budget, 5000);
        assert_eq!(cfg.run.query_size(), 25);
        assert_eq!(cfg.run.n_init, 100);
        assert_eq!(cfg.run.per_minority, 5);
    }

    #[test]
    fn zero_anchors_is_rejected() {
        let err = parse_config_str(r#"{"filter":{"type":"anchoral","a":0}}"#).unwrap_err();
        assert!(err.to_string().contains("filter.a"), "{err}");
    }

    #[test]
    fn errors_name_the_key() {
        let err = parse_config_str(r#"{"loop":{"budget":"many"}}"#).unwrap_err();
        assert!(err.to_string().contains("loop.budget"), "{err}");
        let err = parse_config_str(r#"{"filter":{"kind":"seals"}}"#).unwrap_err();
        assert!(err.to_string().contains("kind"), "{err}");
        let err = parse_config_str(r#"{"extra":1}"#).unwrap_err();
        assert!(err.to_string().contains("extra"), "{err}");
        let err = parse_config_str(r#"{"strategy":{"type":"margin"}}"#).unwrap_err();
        assert!(err.to_string().contains("strategy.type"), "{err}");
    }

    #[test]
    fn budget_must_cover_a_query() {
        assert!(parse_config_str(r#"{"loop":{"budget":10,"rounds":20}}"#).is_err());
    }

    #[test]
    fn effective_config_round_trips() {
        let text = r#"{
            "dataset": {"dir": "elsewhere", "initial_clusters": [0]},
            "filter": {"type": "seals", "seals_k": 7, "majority_anchor_strategy": "entropy"},
            "strategy": {"type": "badge"},
            "train": {"learning_rate": 0.5},
            "loop": {"budget": 100, "rounds": 4, "timing": "off", "time_limit_s": 3.5},
            "seeds": {"selection": 9}
        }"#;
        let cfg = parse_config_str(text).unwrap();
        assert_eq!(parse_config_str(&cfg.to_json()).unwrap(), cfg);
        assert_eq!(cfg.method_label(), "seals-badge");
    }

    #[test]
    fn sweep_offsets_every_stream() {
        let s = Seeds {
            model_init: 1,
            data_order: 2,
            initial_set: 3,
            selection: 4,
        };
        assert_eq!(
            s.offset(5),
            Seeds {
                model_init: 6,
                data_order: 7,
                initial_set: 8,
                selection: 9
            }
        );
    }

    #[test]
    fn filter_names_parse() {
        for kind in [FilterKind::Anchoral, FilterKind::Seals, FilterKind::RandomSubset, FilterKind::Noop] {
            assert_eq!(FilterKind::parse(kind.name()).unwrap(), kind);
        }
        assert!(FilterKind::parse("everything").is_err());
    }
}
