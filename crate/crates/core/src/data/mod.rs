//! Instance representations, labels, and the labelled/unlabelled partition.

mod io;
mod split;
mod synth;

pub use io::{
    load_embeddings, load_labels, read_embeddings, read_labels, write_embeddings,
    write_labels, write_metadata, SyntheticMetadata,
};
pub use split::{build_initial_split, DatasetState, ExcludeSet, InitialSplit};
pub use synth::{generate_synthetic, SyntheticDataset, SyntheticGenerator, SyntheticSpec};

use crate::error::{Error, Result};

/// Dense `n × d` row-major matrix of finite `f32` embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    n: usize,
    d: usize,
    values: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(n: usize, d: usize, values: Vec<f32>) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::Shape(format!("n and d must be >= 1, got n={n}, d={d}")));
        }
        if values.len() != n * d {
            return Err(Error::Shape(format!(
                "expected {} values for {n}x{d}, got {}",
                n * d,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / d,
                col: pos % d,
            });
        }
        Ok(Self { n, d, values })
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let d = rows.first().map_or(0, |r| r.as_ref().len());
        let mut values = Vec::with_capacity(rows.len() * d);
        for (i, r) in rows.iter().enumerate() {
            if r.as_ref().len() != d {
                return Err(Error::Shape(format!(
                    "row {i} has {} columns, expected {d}",
                    r.as_ref().len()
                )));
            }
            values.extend_from_slice(r.as_ref());
        }
        Self::new(rows.len(), d, values)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.values.chunks_exact(self.d)
    }

    /// Copies the given rows into a new matrix, in order.
    pub fn select(&self, ids: &[usize]) -> Result<Self> {
        let mut values = Vec::with_capacity(ids.len() * self.d);
        for &i in ids {
            if i >= self.n {
                return Err(Error::Contract(format!("row {i} out of range (n={})", self.n)));
            }
            values.extend_from_slice(self.row(i));
        }
        Self::new(ids.len(), self.d, values)
    }
}

/// Ground-truth class per instance. Only the oracle and the metric recorder
/// read this; filters, strategies and the model see revealed labels only.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelStore {
    labels: Vec<u32>,
    num_classes: u32,
    majority_class: u32,
    minority_classes: Vec<u32>,
}

impl LabelStore {
    /// Builds a store whose majority class is the most frequent one (lowest id
    /// on ties); every other class is a minority class.
    pub fn new(labels: Vec<u32>, num_classes: u32) -> Result<Self> {
        let mut counts = vec![0usize; num_classes as usize];
        for &l in &labels {
            if l >= num_classes {
                return Err(Error::Labels(format!(
                    "label {l} out of range for {num_classes} classes"
                )));
            }
            counts[l as usize] += 1;
        }
        let majority = counts
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .map_or(0, |(c, _)| c as u32);
        Self::with_majority(labels, num_classes, majority)
    }

    pub fn with_majority(labels: Vec<u32>, num_classes: u32, majority_class: u32) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Labels(format!("need at least 2 classes, got {num_classes}")));
        }
        if majority_class >= num_classes {
            return Err(Error::Labels(format!(
                "majority class {majority_class} out of range"
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Labels(format!(
                "label {l} out of range for {num_classes} classes"
            )));
        }
        let minority_classes = (0..num_classes).filter(|&c| c != majority_class).collect();
        Ok(Self {
            labels,
            num_classes,
            majority_class,
            minority_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    #[inline]
    pub fn label(&self, id: usize) -> u32 {
        self.labels[id]
    }

    pub fn num_classes(&self) -> u32 {
        self.num_classes
    }

    pub fn majority_class(&self) -> u32 {
        self.majority_class
    }

    pub fn minority_classes(&self) -> &[u32] {
        &self.minority_classes
    }

    #[inline]
    pub fn is_minority(&self, class: u32) -> bool {
        class != self.majority_class
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes as usize];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }

    pub fn classes(&self) -> ClassLayout {
        ClassLayout {
            num_classes: self.num_classes,
            majority_class: self.majority_class,
        }
    }
}

/// Public class structure: how many classes exist and which one is the
/// majority. Carries no per-instance information.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassLayout {
    pub num_classes: u32,
    pub majority_class: u32,
}

impl ClassLayout {
    pub fn minority_classes(&self) -> impl Iterator<Item = u32> + '_ {
        (0..self.num_classes).filter(move |&c| c != self.majority_class)
    }
}
