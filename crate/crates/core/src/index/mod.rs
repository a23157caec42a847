//! Cosine-similarity neighbour retrieval.
//!
//! [`VectorIndex`] is an HNSW graph over unit-normalised vectors;
//! [`exact_knn`] and [`ExactSearch`] scan everything and serve as the
//! reference for it.

mod hnsw;

pub use hnsw::{IndexParams, VectorIndex};

use std::cmp::Ordering;

use crate::data::{EmbeddingMatrix, ExcludeSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborHit {
    pub id: usize,
    pub similarity: f64,
}

impl NeighborHit {
    /// Most similar first, then ascending id.
    pub fn rank_cmp(&self, other: &Self) -> Ordering {
        other
            .similarity
            .total_cmp(&self.similarity)
            .then(self.id.cmp(&other.id))
    }
}

/// Anything that can answer "the `k` most similar instances to `query_id`,
/// skipping `exclude`". Implemented by the HNSW index and the exact scan.
pub trait NeighborSource: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn neighbors(&self, query_id: usize, k: usize, exclude: &dyn ExcludeSet) -> Result<Vec<NeighborHit>>;
}

#[inline]
fn dot64(u: &[f32], v: &[f32]) -> f64 {
    u.iter().zip(v).map(|(&a, &b)| a as f64 * b as f64).sum()
}

#[inline]
fn norm64(u: &[f32]) -> f64 {
    dot64(u, u).sqrt()
}

#[inline]
fn cosine_from_parts(dot: f64, norm_u: f64, norm_v: f64) -> f64 {
    (dot / (norm_u * norm_v)).clamp(-1.0, 1.0)
}

pub fn cosine_similarity(u: &[f32], v: &[f32]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Domain(format!(
            "length mismatch: {} vs {}",
            u.len(),
            v.len()
        )));
    }
    let (nu, nv) = (norm64(u), norm64(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::Domain("cosine similarity of a zero-norm vector".into()));
    }
    Ok(cosine_from_parts(dot64(u, v), nu, nv))
}

/// Exact top-`k` by cosine similarity over every row except `query_id` and
/// the excluded ids.
pub fn exact_knn(
    emb: &EmbeddingMatrix,
    query_id: usize,
    k: usize,
    exclude: &dyn ExcludeSet,
) -> Result<Vec<NeighborHit>> {
    ExactSearch::new(emb)?.neighbors(query_id, k, exclude)
}

/// Brute-force [`NeighborSource`] with cached row norms.
#[derive(Debug, Clone)]
pub struct ExactSearch<'a> {
    emb: &'a EmbeddingMatrix,
    norms: Vec<f64>,
}

impl<'a> ExactSearch<'a> {
    pub fn new(emb: &'a EmbeddingMatrix) -> Result<Self> {
        let norms: Vec<f64> = emb.rows().map(norm64).collect();
        if let Some(row) = norms.iter().position(|&n| n == 0.0) {
            return Err(Error::ZeroNorm(row));
        }
        Ok(Self { emb, norms })
    }

    pub fn similarity(&self, a: usize, b: usize) -> f64 {
        cosine_from_parts(dot64(self.emb.row(a), self.emb.row(b)), self.norms[a], self.norms[b])
    }
}

impl NeighborSource for ExactSearch<'_> {
    fn len(&self) -> usize {
        self.emb.n()
    }

    fn neighbors(&self, query_id: usize, k: usize, exclude: &dyn ExcludeSet) -> Result<Vec<NeighborHit>> {
        if query_id >= self.emb.n() {
            return Err(Error::Contract(format!(
                "query id {query_id} out of range (n={})",
                self.emb.n()
            )));
        }
        let hits: Vec<NeighborHit> = (0..self.emb.n())
            .filter(|&i| i != query_id && !exclude.contains(i))
            .map(|i| NeighborHit {
                id: i,
                similarity: self.similarity(query_id, i),
            })
            .collect();
        Ok(top_k(hits, k))
    }
}

/// Keeps the `k` best hits under [`NeighborHit::rank_cmp`], sorted.
pub(crate) fn top_k(mut hits: Vec<NeighborHit>, k: usize) -> Vec<NeighborHit> {
    if k == 0 {
        return Vec::new();
    }
    if hits.len() > k {
        hits.select_nth_unstable_by(k - 1, NeighborHit::rank_cmp);
        hits.truncate(k);
    }
    hits.sort_unstable_by(NeighborHit::rank_cmp);
    hits
}
