//! Pool filters: each produces the subpool the acquisition strategy runs on.
//!
//! - [`anchoral_filter`]: neighbours of this round's anchors, scored by mean
//!   similarity and capped.
//! - [`SealsState`]: a persistent candidate set grown with the neighbours of
//!   every newly labelled instance.
//! - [`random_subset_filter`]: a fresh uniform sample of the pool.
//! - [`noop_filter`]: the whole pool.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index::sample;
use rand::Rng;

use crate::anchor::AnchorSet;
use crate::data::DatasetState;
use crate::error::{Error, Result};
use crate::index::NeighborSource;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Subpool {
    pub ids: Vec<usize>,
    /// Mean anchor similarity per id (AnchorAL only), aligned with `ids`.
    pub scores: Option<Vec<f64>>,
    /// Maximum size, for capacity-bounded filters.
    pub capacity: Option<usize>,
}

impl Subpool {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Retrieves `k` unlabelled neighbours per anchor, averages the
/// similarities of ids retrieved more than once, and keeps the
/// `min(|union|, max_subpool)` best ids (ascending id on ties).
///
/// Anchors are visited in [`AnchorSet::iter`] order and each id's
/// similarities are summed in that order before dividing.
pub fn anchoral_filter(
    anchors: &AnchorSet,
    source: &dyn NeighborSource,
    state: &DatasetState,
    k: usize,
    max_subpool: usize,
) -> Result<Subpool> {
    if k == 0 || max_subpool == 0 {
        return Err(Error::Config("neighbours and max_subpool must be >= 1".into()));
    }
    let mut acc: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    if state.pool_len() > 0 {
        for anchor in anchors.iter() {
            for hit in source.neighbors(anchor, k, state)? {
                let e = acc.entry(hit.id).or_insert((0.0, 0));
                e.0 += hit.similarity;
                e.1 += 1;
            }
        }
    }
    let mut scored: Vec<(usize, f64)> = acc.into_iter().map(|(id, (s, c))| (id, s / c as f64)).collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(max_subpool);
    let (ids, scores) = scored.into_iter().unzip();
    Ok(Subpool {
        ids,
        scores: Some(scores),
        capacity: Some(max_subpool),
    })
}

/// SEALS candidate set, kept across rounds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SealsState {
    candidates: BTreeSet<usize>,
    k: usize,
    seeded: bool,
}

impl SealsState {
    pub fn new(k: usize) -> Self {
        Self {
            candidates: BTreeSet::new(),
            k,
            seeded: false,
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn candidates(&self) -> &BTreeSet<usize> {
        &self.candidates
    }

    /// Adds the `k` nearest unlabelled neighbours of each newly labelled id
    /// (of the whole labelled set on the first call), drops ids that are now
    /// labelled, and returns the full candidate set as the subpool.
    pub fn update(&mut self, source: &dyn NeighborSource, state: &DatasetState, newly_labeled: &[usize]) -> Result<Subpool> {
        if self.k == 0 {
            return Err(Error::Config("seals k must be >= 1".into()));
        }
        let seeds: Vec<usize> = if self.seeded {
            newly_labeled.to_vec()
        } else {
            self.seeded = true;
            state.labeled_ids().iter().copied().collect()
        };
        for id in seeds {
            for hit in source.neighbors(id, self.k, state)? {
                self.candidates.insert(hit.id);
            }
        }
        self.candidates.retain(|&id| !state.is_labeled(id));
        Ok(Subpool {
            ids: self.candidates.iter().copied().collect(),
            scores: None,
            capacity: None,
        })
    }
}

/// `min(size, |pool|)` pool ids drawn uniformly without replacement, sorted.
pub fn random_subset_filter(state: &DatasetState, size: usize, rng: &mut impl Rng) -> Subpool {
    let pool: Vec<usize> = state.pool_ids().iter().copied().collect();
    let mut ids: Vec<usize> = sample(rng, pool.len(), size.min(pool.len()))
        .into_iter()
        .map(|j| pool[j])
        .collect();
    ids.sort_unstable();
    Subpool {
        ids,
        scores: None,
        capacity: Some(size),
    }
}

pub fn noop_filter(state: &DatasetState) -> Subpool {
    Subpool {
        ids: state.pool_ids().iter().copied().collect(),
        scores: None,
        capacity: None,
    }
}
