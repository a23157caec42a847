//! Labelled/unlabelled partition and the initial labelled set.

use std::collections::{BTreeSet, HashSet};

use rand::seq::index::sample;

use super::LabelStore;
use crate::error::{Error, Result};
use crate::rng;

/// Membership test used to keep ids out of neighbour queries.
pub trait ExcludeSet {
    fn contains(&self, id: usize) -> bool;
    /// Number of excluded ids.
    fn count(&self) -> usize;
}

impl ExcludeSet for BTreeSet<usize> {
    fn contains(&self, id: usize) -> bool {
        BTreeSet::contains(self, &id)
    }
    fn count(&self) -> usize {
        self.len()
    }
}

impl ExcludeSet for HashSet<usize> {
    fn contains(&self, id: usize) -> bool {
        HashSet::contains(self, &id)
    }
    fn count(&self) -> usize {
        self.len()
    }
}

/// Excludes nothing.
impl ExcludeSet for () {
    fn contains(&self, _: usize) -> bool {
        false
    }
    fn count(&self) -> usize {
        0
    }
}

/// Unlabelled pool `P_t` and labelled set `D_t` over ids `0..n`.
///
/// Only labels revealed by the oracle are stored here, so anything handed a
/// `DatasetState` cannot see the ground truth of pool instances.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetState {
    pool: BTreeSet<usize>,
    labeled: BTreeSet<usize>,
    revealed: Vec<Option<u32>>,
    num_classes: u32,
}

impl DatasetState {
    /// Everything unlabelled.
    pub fn new(n: usize, num_classes: u32) -> Self {
        Self {
            pool: (0..n).collect(),
            labeled: BTreeSet::new(),
            revealed: vec![None; n],
            num_classes,
        }
    }

    pub fn n(&self) -> usize {
        self.revealed.len()
    }

    pub fn num_classes(&self) -> u32 {
        self.num_classes
    }

    pub fn pool_ids(&self) -> &BTreeSet<usize> {
        &self.pool
    }

    pub fn labeled_ids(&self) -> &BTreeSet<usize> {
        &self.labeled
    }

    pub fn pool_len(&self) -> usize {
        self.pool.len()
    }

    pub fn labeled_len(&self) -> usize {
        self.labeled.len()
    }

    #[inline]
    pub fn is_labeled(&self, id: usize) -> bool {
        self.revealed.get(id).is_some_and(Option::is_some)
    }

    pub fn revealed_label(&self, id: usize) -> Option<u32> {
        self.revealed.get(id).copied().flatten()
    }

    /// `(id, label)` for every labelled instance, ascending id.
    pub fn revealed_labels(&self) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.labeled.iter().map(|&i| (i, self.revealed[i].expect("labelled id has a label")))
    }

    /// Labelled ids whose revealed label is `class`, ascending.
    pub fn labeled_of_class(&self, class: u32) -> Vec<usize> {
        self.revealed_labels().filter(|&(_, l)| l == class).map(|(i, _)| i).collect()
    }

    pub fn labeled_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes as usize];
        for (_, l) in self.revealed_labels() {
            counts[l as usize] += 1;
        }
        counts
    }

    /// Moves `ids` from the pool to the labelled set, querying the oracle for
    /// their labels. Either all ids are revealed or none is.
    pub fn reveal(&mut self, labels: &LabelStore, ids: &[usize]) -> Result<()> {
        if labels.len() != self.n() {
            return Err(Error::Contract(format!(
                "label store has {} entries, state has {}",
                labels.len(),
                self.n()
            )));
        }
        let mut seen = HashSet::with_capacity(ids.len());
        for &id in ids {
            if id >= self.n() {
                return Err(Error::Contract(format!("id {id} out of range (n={})", self.n())));
            }
            if self.is_labeled(id) {
                return Err(Error::Contract(format!("id {id} is already labelled")));
            }
            if !seen.insert(id) {
                return Err(Error::Contract(format!("id {id} queried twice")));
            }
        }
        for &id in ids {
            self.pool.remove(&id);
            self.labeled.insert(id);
            self.revealed[id] = Some(labels.label(id));
        }
        Ok(())
    }
}

/// Exclusion view over the labelled set.
impl ExcludeSet for DatasetState {
    fn contains(&self, id: usize) -> bool {
        self.is_labeled(id)
    }
    fn count(&self) -> usize {
        self.labeled.len()
    }
}

/// How to draw the initial labelled set `D_0`.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialSplit {
    pub n_init: usize,
    pub per_minority: usize,
    pub seed: u64,
    /// When set, minority instances are drawn only from these ids. Used to
    /// start from an initial set that covers a subset of the minority
    /// clusters.
    pub minority_candidates: Option<BTreeSet<usize>>,
}

impl InitialSplit {
    pub fn new(n_init: usize, per_minority: usize, seed: u64) -> Self {
        Self {
            n_init,
            per_minority,
            seed,
            minority_candidates: None,
        }
    }
}

/// Labels `per_minority` random instances of each minority class and fills
/// the rest of `n_init` with random majority instances.
pub fn build_initial_split(labels: &LabelStore, split: &InitialSplit) -> Result<DatasetState> {
    let minority_total = split.per_minority * labels.minority_classes().len();
    if minority_total > split.n_init {
        return Err(Error::InfeasibleSpec(format!(
            "{} minority instances exceed n_init={}",
            minority_total, split.n_init
        )));
    }
    let mut chosen = Vec::with_capacity(split.n_init);
    let classes = std::iter::once((labels.majority_class(), split.n_init - minority_total))
        .chain(labels.minority_classes().iter().map(|&c| (c, split.per_minority)));
    for (class, required) in classes {
        let members: Vec<usize> = (0..labels.len())
            .filter(|&i| labels.label(i) == class)
            .filter(|i| {
                class == labels.majority_class()
                    || split.minority_candidates.as_ref().is_none_or(|s| s.contains(i))
            })
            .collect();
        if members.len() < required {
            return Err(Error::InsufficientClass {
                class,
                available: members.len(),
                required,
            });
        }
        let mut rng = rng::stream(split.seed, &[u64::from(class)]);
        let mut picked: Vec<usize> = sample(&mut rng, members.len(), required)
            .into_iter()
            .map(|j| members[j])
            .collect();
        picked.sort_unstable();
        chosen.extend(picked);
    }
    let mut state = DatasetState::new(labels.len(), labels.num_classes());
    state.reveal(labels, &chosen)?;
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(counts: &[usize]) -> LabelStore {
        let labels = counts
            .iter()
            .enumerate()
            .flat_map(|(c, &k)| std::iter::repeat_n(c as u32, k))
            .collect();
        LabelStore::new(labels, counts.len() as u32).unwrap()
    }

    fn assert_partition(s: &DatasetState) {
        assert!(s.pool_ids().is_disjoint(s.labeled_ids()));
        assert_eq!(s.pool_len() + s.labeled_len(), s.n());
        for i in 0..s.n() {
            assert_eq!(s.is_labeled(i), !s.pool_ids().contains(&i));
        }
    }

    #[test]
    fn binary_initial_split() {
        let labels = store(&[990, 10]);
        let s = build_initial_split(&labels, &InitialSplit::new(100, 5, 1)).unwrap();
        assert_eq!(s.labeled_counts(), vec![95, 5]);
        assert_partition(&s);
    }

    #[test]
    fn multiclass_initial_split() {
        let labels = store(&[900, 20, 20, 20]);
        let s = build_initial_split(&labels, &InitialSplit::new(100, 5, 1)).unwrap();
        assert_eq!(s.labeled_counts(), vec![85, 5, 5, 5]);
    }

    #[test]
    fn deficient_class_is_named() {
        let labels = store(&[900, 20, 3]);
        let err = build_initial_split(&labels, &InitialSplit::new(100, 5, 1)).unwrap_err();
        assert!(matches!(err, Error::InsufficientClass { class: 2, available: 3, required: 5 }));
    }

    #[test]
    fn minority_candidates_restrict_the_draw() {
        let labels = store(&[990, 10]);
        let mut split = InitialSplit::new(100, 5, 4);
        split.minority_candidates = Some((990..995).collect());
        let s = build_initial_split(&labels, &split).unwrap();
        assert_eq!(s.labeled_of_class(1), vec![990, 991, 992, 993, 994]);
    }

    #[test]
    fn reveal_semantics() {
        let labels = store(&[8, 2]);
        let mut s = DatasetState::new(10, 2);
        let before = s.clone();
        s.reveal(&labels, &[]).unwrap();
        assert_eq!(s, before);

        s.reveal(&labels, &[7]).unwrap();
        assert!(!s.pool_ids().contains(&7));
        assert!(s.labeled_ids().contains(&7));
        assert_eq!(s.revealed_label(7), Some(0));

        assert!(matches!(s.reveal(&labels, &[7]), Err(Error::Contract(_))));
        assert!(matches!(s.reveal(&labels, &[10]), Err(Error::Contract(_))));
        assert!(matches!(s.reveal(&labels, &[1, 1]), Err(Error::Contract(_))));
        assert!(s.pool_ids().contains(&1));
    }

    #[test]
    fn sequential_reveals_keep_the_partition() {
        use rand::seq::SliceRandom;
        let labels = store(&[9900, 100]);
        let mut s = DatasetState::new(10_000, 2);
        let mut order: Vec<usize> = (0..10_000).collect();
        order.shuffle(&mut rng::stream(5, &[]));
        for round in 0..40 {
            let before = s.labeled_len();
            s.reveal(&labels, &order[round * 25..(round + 1) * 25]).unwrap();
            assert_eq!(s.labeled_len(), before + 25);
            assert_partition(&s);
            for (i, l) in s.revealed_labels() {
                assert_eq!(l, labels.label(i));
            }
        }
        assert_eq!(s.labeled_len(), 1000);
    }
}
