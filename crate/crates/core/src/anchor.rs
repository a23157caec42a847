//! Per-class anchor selection.
//!
//! Every round a handful of labelled instances per class is chosen as
//! anchors; the pool filter then looks at their neighbourhoods. The default
//! draws anchors with kmeans++ seeding on the raw embeddings (squared
//! Euclidean distance), so they spread out and change from round to round.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::cluster::{kmeanspp, Points};
use crate::data::{ClassLayout, DatasetState, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::model::ProxyClassifier;
use crate::rng;
use crate::strategy::entropy;

/// Tag for the class-agnostic uniform stream, outside the class id range.
const UNIFORM_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnchorStrategy {
    /// kmeans++ seeding over the class's labelled embeddings.
    #[serde(rename = "kmeanspp")]
    KMeansPlusPlus,
    /// The labelled instances of the class with the highest predictive
    /// entropy under the current model, ascending id on ties.
    Entropy,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorConfig {
    /// Anchors per class, `a`.
    pub per_class: usize,
    pub minority: AnchorStrategy,
    pub majority: AnchorStrategy,
    /// When false, anchors are `a × C` labelled instances drawn uniformly
    /// regardless of class (the no-anchoring ablation).
    pub anchoring: bool,
}

impl AnchorConfig {
    pub fn kmeanspp(per_class: usize) -> Self {
        Self {
            per_class,
            minority: AnchorStrategy::KMeansPlusPlus,
            majority: AnchorStrategy::KMeansPlusPlus,
            anchoring: true,
        }
    }

    fn strategy_for(&self, class: u32, layout: ClassLayout) -> AnchorStrategy {
        if class == layout.majority_class {
            self.majority
        } else {
            self.minority
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AnchorSet {
    anchors: BTreeMap<u32, Vec<usize>>,
    per_class: usize,
}

impl AnchorSet {
    pub fn new(anchors: BTreeMap<u32, Vec<usize>>, per_class: usize) -> Self {
        Self { anchors, per_class }
    }

    pub fn per_class(&self) -> usize {
        self.per_class
    }

    pub fn class(&self, class: u32) -> &[usize] {
        self.anchors.get(&class).map_or(&[], Vec::as_slice)
    }

    pub fn by_class(&self) -> &BTreeMap<u32, Vec<usize>> {
        &self.anchors
    }

    /// All anchors, ascending class then selection order.
    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.anchors.values().flatten().copied()
    }

    pub fn len(&self) -> usize {
        self.anchors.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// kmeans++ over the rows `ids` of `emb`; returns `min(a, |ids|)` distinct ids.
pub fn kmeanspp_sample(emb: &EmbeddingMatrix, ids: &[usize], a: usize, rng: &mut impl rand::Rng) -> Vec<usize> {
    if ids.is_empty() {
        return Vec::new();
    }
    let data = ids.iter().flat_map(|&i| emb.row(i).iter().map(|&v| v as f64)).collect();
    let points = Points::new(data, emb.d());
    kmeanspp(&points, a, rng).into_iter().map(|j| ids[j]).collect()
}

fn top_entropy(model: &ProxyClassifier, emb: &EmbeddingMatrix, ids: &[usize], a: usize) -> Result<Vec<usize>> {
    let mut scored = ids
        .iter()
        .map(|&i| Ok((i, entropy(&model.proba(emb.row(i)))?)))
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
    Ok(scored.into_iter().take(a).map(|(i, _)| i).collect())
}

/// Chooses this round's anchors. Each class draws from its own RNG stream
/// derived from `(round_seed, class)`.
pub fn select_anchors(
    state: &DatasetState,
    emb: &EmbeddingMatrix,
    cfg: &AnchorConfig,
    layout: ClassLayout,
    model: Option<&ProxyClassifier>,
    round_seed: u64,
) -> Result<AnchorSet> {
    if cfg.per_class == 0 {
        return Err(Error::Config("anchors per class must be >= 1".into()));
    }
    let mut anchors = BTreeMap::new();

    if !cfg.anchoring {
        let labelled: Vec<usize> = state.labeled_ids().iter().copied().collect();
        let amount = (cfg.per_class * layout.num_classes as usize).min(labelled.len());
        let mut rng = rng::stream(round_seed, &[UNIFORM_STREAM]);
        for j in sample(&mut rng, labelled.len(), amount) {
            let id = labelled[j];
            let class = state.revealed_label(id).expect("labelled");
            anchors.entry(class).or_insert_with(Vec::new).push(id);
        }
        return Ok(AnchorSet::new(anchors, cfg.per_class));
    }

    for class in 0..layout.num_classes {
        let members = state.labeled_of_class(class);
        if members.is_empty() {
            continue;
        }
        let chosen = match cfg.strategy_for(class, layout) {
            AnchorStrategy::KMeansPlusPlus => {
                let mut rng = rng::stream(round_seed, &[u64::from(class)]);
                kmeanspp_sample(emb, &members, cfg.per_class, &mut rng)
            }
            AnchorStrategy::Entropy => {
                let model = model.ok_or_else(|| {
                    Error::Config("entropy anchor selection needs a trained model".into())
                })?;
                top_entropy(model, emb, &members, cfg.per_class)?
            }
        };
        anchors.insert(class, chosen);
    }
    Ok(AnchorSet::new(anchors, cfg.per_class))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LabelStore;

    const BINARY: ClassLayout = ClassLayout {
        num_classes: 2,
        majority_class: 0,
    };

    fn setup(n_major: usize, n_minor: usize) -> (EmbeddingMatrix, DatasetState) {
        let n = n_major + n_minor;
        let rows: Vec<[f32; 2]> = (0..n).map(|i| [i as f32, (i * i % 7) as f32]).collect();
        let labels: Vec<u32> = (0..n).map(|i| u32::from(i >= n_major)).collect();
        let store = LabelStore::with_majority(labels, 2, 0).unwrap();
        let mut state = DatasetState::new(n, 2);
        let ids: Vec<usize> = (0..n).collect();
        state.reveal(&store, &ids).unwrap();
        (EmbeddingMatrix::from_rows(&rows).unwrap(), state)
    }

    #[test]
    fn clamps_to_available_labels() {
        let (emb, state) = setup(20, 3);
        let set = select_anchors(&state, &emb, &AnchorConfig::kmeanspp(10), BINARY, None, 1).unwrap();
        assert_eq!(set.class(1).len(), 3);
        assert_eq!(set.class(0).len(), 10);
        assert_eq!(set.len(), 13);
    }

    #[test]
    fn full_classes_give_a_times_c_anchors() {
        let (emb, state) = setup(30, 12);
        let set = select_anchors(&state, &emb, &AnchorConfig::kmeanspp(10), BINARY, None, 2).unwrap();
        assert_eq!(set.len(), 20);
        for (class, ids) in set.by_class() {
            let mut u = ids.clone();
            u.sort_unstable();
            u.dedup();
            assert_eq!(u.len(), ids.len());
            assert!(ids.iter().all(|&i| state.revealed_label(i) == Some(*class)));
        }
    }

    #[test]
    fn entropy_anchors_need_a_model() {
        let (emb, state) = setup(30, 12);
        let cfg = AnchorConfig {
            majority: AnchorStrategy::Entropy,
            ..AnchorConfig::kmeanspp(5)
        };
        assert!(matches!(select_anchors(&state, &emb, &cfg, BINARY, None, 0), Err(Error::Config(_))));
    }

    #[test]
    fn entropy_anchors_match_a_full_sort() {
        let (emb, state) = setup(40, 12);
        let model = ProxyClassifier::from_parts(2, 2, vec![0.3, -0.2, -0.3, 0.25], vec![0.1, -0.4]).unwrap();
        let cfg = AnchorConfig {
            per_class: 6,
            minority: AnchorStrategy::Entropy,
            majority: AnchorStrategy::Entropy,
            anchoring: true,
        };
        let set = select_anchors(&state, &emb, &cfg, BINARY, Some(&model), 0).unwrap();
        for class in 0..2u32 {
            let mut all: Vec<(usize, f64)> = state
                .labeled_of_class(class)
                .into_iter()
                .map(|i| {
                    let p = model.proba(emb.row(i));
                    (i, -p.iter().map(|q| q * q.ln()).sum::<f64>())
                })
                .collect();
            all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            let expected: Vec<usize> = all.iter().take(6).map(|p| p.0).collect();
            assert_eq!(set.class(class), expected.as_slice());
        }
    }

    #[test]
    fn fresh_anchors_each_round() {
        let (emb, state) = setup(60, 30);
        let cfg = AnchorConfig::kmeanspp(10);
        let differ = (0..100u64)
            .filter(|&t| {
                let a = select_anchors(&state, &emb, &cfg, BINARY, None, rng::derive_seed(5, &[t])).unwrap();
                let b = select_anchors(&state, &emb, &cfg, BINARY, None, rng::derive_seed(5, &[t + 1000])).unwrap();
                a != b
            })
            .count();
        assert!(differ >= 90, "{differ}");
    }

    #[test]
    fn uniform_anchors_ignore_class_balance() {
        let (emb, state) = setup(80, 5);
        let cfg = AnchorConfig {
            anchoring: false,
            ..AnchorConfig::kmeanspp(10)
        };
        let set = select_anchors(&state, &emb, &cfg, BINARY, None, 3).unwrap();
        assert_eq!(set.len(), 20);
        assert!(set.iter().all(|i| state.is_labeled(i)));
        for (class, ids) in set.by_class() {
            assert!(ids.iter().all(|&i| state.revealed_label(i) == Some(*class)));
        }
    }

    #[test]
    fn second_pick_follows_squared_distances() {
        // Line at 0, 1, 3 with the first pick at 0: P(3) = 9 / (1 + 9).
        let emb = EmbeddingMatrix::from_rows(&[[0f32], [1.], [3.]]).unwrap();
        let (mut firsts, mut threes) = (0u32, 0u32);
        for seed in 0..10_000u64 {
            let picks = kmeanspp_sample(&emb, &[0, 1, 2], 2, &mut rng::stream(seed, &[77]));
            if picks[0] == 0 {
                firsts += 1;
                threes += u32::from(picks[1] == 2);
            }
        }
        let p = threes as f64 / firsts as f64;
        let sigma = (0.9 * 0.1 / firsts as f64).sqrt();
        assert!((p - 0.9).abs() <= 3.0 * sigma, "p={p}, n={firsts}");
    }
}
