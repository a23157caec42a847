//! Hierarchical navigable small world graph over unit vectors.
//!
//! Vectors are normalised once at insertion, so the inner product is the
//! cosine similarity and the graph distance is `1 - <u, v>`. Layer 0 allows
//! `2 * max_connections` links per node, upper layers `max_connections`.
//! Neighbour lists are chosen with the diversity heuristic from the original
//! HNSW construction.
//!
//! The graph has no notion of filtered search. Queries that must skip ids
//! over-fetch and post-filter, doubling the beam up to [`MAX_DOUBLINGS`]
//! times before falling back to a full scan.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{top_k, NeighborHit, NeighborSource};
use crate::data::{EmbeddingMatrix, ExcludeSet};
use crate::error::{Error, Result};
use crate::rng;

const MAGIC: [u8; 4] = *b"AIDX";
const VERSION: u32 = 1;
const MAX_LEVEL: usize = 16;
pub const MAX_DOUBLINGS: u32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IndexParams {
    pub ef_construction: usize,
    pub ef_search: usize,
    pub max_connections: usize,
    pub seed: u64,
}

impl Default for IndexParams {
    fn default() -> Self {
        Self {
            ef_construction: 200,
            ef_search: 200,
            max_connections: 64,
            seed: 0,
        }
    }
}

impl IndexParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_connections < 2 {
            return Err(Error::Config(format!(
                "index.max_connections must be >= 2, got {}",
                self.max_connections
            )));
        }
        if self.ef_construction < self.max_connections {
            return Err(Error::Config(format!(
                "index.ef_construction ({}) must be >= max_connections ({})",
                self.ef_construction, self.max_connections
            )));
        }
        if self.ef_search == 0 {
            return Err(Error::Config("index.ef_search must be >= 1".into()));
        }
        Ok(())
    }

    fn level_capacity(&self, level: usize) -> usize {
        if level == 0 {
            2 * self.max_connections
        } else {
            self.max_connections
        }
    }
}

/// Candidate ordered by `(distance, id)`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Cand {
    dist: f32,
    id: u32,
}

impl Eq for Cand {}

impl Ord for Cand {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist.total_cmp(&other.dist).then(self.id.cmp(&other.id))
    }
}

impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Epoch-stamped visited marks; clearing is O(1).
struct Visited {
    marks: Vec<u32>,
    epoch: u32,
}

impl Visited {
    fn new(n: usize) -> Self {
        Self {
            marks: vec![0; n],
            epoch: 0,
        }
    }

    fn reset(&mut self) {
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.marks.fill(0);
            self.epoch = 1;
        }
    }

    /// Returns true the first time `id` is seen since the last reset.
    #[inline]
    fn insert(&mut self, id: u32) -> bool {
        let slot = &mut self.marks[id as usize];
        if *slot == self.epoch {
            false
        } else {
            *slot = self.epoch;
            true
        }
    }
}

#[inline]
fn dot32(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0f32; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut s: f32 = acc.iter().sum();
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

pub struct VectorIndex {
    params: IndexParams,
    n: usize,
    d: usize,
    vectors: Vec<f32>,
    /// `links[node][level]`, for levels `0..=level(node)`.
    links: Vec<Vec<Vec<u32>>>,
    entry: usize,
    max_level: usize,
}

impl std::fmt::Debug for VectorIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VectorIndex")
            .field("params", &self.params)
            .field("n", &self.n)
            .field("d", &self.d)
            .field("entry", &self.entry)
            .field("max_level", &self.max_level)
            .finish()
    }
}

fn normalised(emb: &EmbeddingMatrix) -> Result<Vec<f32>> {
    let mut out = Vec::with_capacity(emb.values().len());
    for (i, row) in emb.rows().enumerate() {
        let norm = row.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroNorm(i));
        }
        out.extend(row.iter().map(|&x| (x as f64 / norm) as f32));
    }
    Ok(out)
}

impl VectorIndex {
    /// Inserts every row of `emb` in id order. Deterministic for a fixed
    /// `params.seed`.
    pub fn build(emb: &EmbeddingMatrix, params: IndexParams) -> Result<Self> {
        params.validate()?;
        let vectors = normalised(emb)?;
        let mut index = Self {
            params,
            n: emb.n(),
            d: emb.d(),
            vectors,
            links: Vec::with_capacity(emb.n()),
            entry: 0,
            max_level: 0,
        };
        let mut level_rng = rng::stream(params.seed, &[]);
        let ml = 1.0 / (params.max_connections as f64).ln();
        let mut visited = Visited::new(emb.n());
        for id in 0..emb.n() {
            let u: f64 = 1.0 - level_rng.random::<f64>();
            let level = ((-u.ln() * ml).floor() as usize).min(MAX_LEVEL);
            index.insert(id, level, &mut visited);
        }
        Ok(index)
    }

    pub fn params(&self) -> &IndexParams {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn entry_point(&self) -> usize {
        self.entry
    }

    pub fn max_level(&self) -> usize {
        self.max_level
    }

    /// Neighbour list of `id` on `level` (empty above the node's level).
    pub fn neighbours(&self, id: usize, level: usize) -> &[u32] {
        self.links[id].get(level).map_or(&[], Vec::as_slice)
    }

    #[inline]
    fn vector(&self, id: usize) -> &[f32] {
        &self.vectors[id * self.d..(id + 1) * self.d]
    }

    #[inline]
    fn distance(&self, q: &[f32], id: u32) -> f32 {
        1.0 - dot32(q, self.vector(id as usize))
    }

    fn insert(&mut self, id: usize, level: usize, visited: &mut Visited) {
        self.links.push(vec![Vec::new(); level + 1]);
        if id == 0 {
            self.entry = 0;
            self.max_level = level;
            return;
        }
        let q = self.vector(id).to_vec();
        let mut cur = Cand {
            dist: self.distance(&q, self.entry as u32),
            id: self.entry as u32,
        };
        for lc in (level + 1..=self.max_level).rev() {
            cur = self.greedy(&q, cur, lc);
        }
        let mut entry_points = vec![cur];
        for lc in (0..=level.min(self.max_level)).rev() {
            let found = self.search_layer(&q, &entry_points, self.params.ef_construction, lc, visited);
            let selected = self.select_heuristic(&found, self.params.max_connections);
            self.links[id][lc] = selected.iter().map(|c| c.id).collect();
            for c in &selected {
                self.connect(c.id as usize, id as u32, lc);
            }
            entry_points = found;
        }
        if level > self.max_level {
            self.max_level = level;
            self.entry = id;
        }
    }

    /// Adds `new` to `node`'s list on `level`, re-pruning when full.
    fn connect(&mut self, node: usize, new: u32, level: usize) {
        let cap = self.params.level_capacity(level);
        if self.links[node][level].len() < cap {
            self.links[node][level].push(new);
            return;
        }
        let base = self.vector(node).to_vec();
        let mut cands: Vec<Cand> = self.links[node][level]
            .iter()
            .chain(std::iter::once(&new))
            .map(|&nb| Cand {
                dist: self.distance(&base, nb),
                id: nb,
            })
            .collect();
        cands.sort_unstable();
        let kept = self.select_heuristic(&cands, cap);
        self.links[node][level] = kept.iter().map(|c| c.id).collect();
    }

    /// Keeps a candidate only if it is closer to the base than to every
    /// already-kept candidate. `sorted` must be ascending by distance.
    fn select_heuristic(&self, sorted: &[Cand], m: usize) -> Vec<Cand> {
        let mut kept: Vec<Cand> = Vec::with_capacity(m);
        for &c in sorted {
            if kept.len() >= m {
                break;
            }
            let cv = self.vector(c.id as usize);
            let diverse = kept.iter().all(|k| self.distance(cv, k.id) >= c.dist);
            if diverse {
                kept.push(c);
            }
        }
        kept
    }

    fn greedy(&self, q: &[f32], mut cur: Cand, level: usize) -> Cand {
        loop {
            let mut changed = false;
            for &nb in self.neighbours(cur.id as usize, level) {
                let c = Cand {
                    dist: self.distance(q, nb),
                    id: nb,
                };
                if c < cur {
                    cur = c;
                    changed = true;
                }
            }
            if !changed {
                return cur;
            }
        }
    }

    /// Beam search on one layer; returns up to `ef` candidates ascending.
    fn search_layer(&self, q: &[f32], entry: &[Cand], ef: usize, level: usize, visited: &mut Visited) -> Vec<Cand> {
        visited.reset();
        let mut frontier: BinaryHeap<Reverse<Cand>> = BinaryHeap::new();
        let mut best: BinaryHeap<Cand> = BinaryHeap::new();
        for &e in entry {
            if visited.insert(e.id) {
                frontier.push(Reverse(e));
                best.push(e);
            }
        }
        while best.len() > ef {
            best.pop();
        }
        while let Some(Reverse(c)) = frontier.pop() {
            if best.len() >= ef && c > *best.peek().expect("non-empty") {
                break;
            }
            for &nb in self.neighbours(c.id as usize, level) {
                if !visited.insert(nb) {
                    continue;
                }
                let cand = Cand {
                    dist: self.distance(q, nb),
                    id: nb,
                };
                if best.len() < ef || cand < *best.peek().expect("non-empty") {
                    frontier.push(Reverse(cand));
                    best.push(cand);
                    if best.len() > ef {
                        best.pop();
                    }
                }
            }
        }
        best.into_sorted_vec()
    }

    fn beam(&self, q: &[f32], ef: usize, visited: &mut Visited) -> Vec<Cand> {
        let mut cur = Cand {
            dist: self.distance(q, self.entry as u32),
            id: self.entry as u32,
        };
        for lc in (1..=self.max_level).rev() {
            cur = self.greedy(q, cur, lc);
        }
        self.search_layer(q, &[cur], ef, 0, visited)
    }

    fn hit(&self, q: &[f32], id: usize) -> NeighborHit {
        let sim: f64 = q
            .iter()
            .zip(self.vector(id))
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum();
        NeighborHit {
            id,
            similarity: sim.clamp(-1.0, 1.0),
        }
    }

    /// Approximate top-`k` neighbours of an indexed instance, never returning
    /// `query_id` or an excluded id. When fewer than `k` ids are eligible,
    /// all of them are returned.
    pub fn knn(&self, query_id: usize, k: usize, exclude: &dyn ExcludeSet) -> Result<Vec<NeighborHit>> {
        if query_id >= self.n {
            return Err(Error::Contract(format!(
                "query id {query_id} out of range (n={})",
                self.n
            )));
        }
        let q = self.vector(query_id).to_vec();
        let excluded = exclude.count() - usize::from(exclude.contains(query_id));
        let eligible = self.n.saturating_sub(1 + excluded);
        self.filtered_search(&q, k, eligible, |id| id == query_id || exclude.contains(id))
    }

    /// Approximate top-`k` for an arbitrary (not necessarily indexed) vector.
    pub fn knn_vector(&self, query: &[f32], k: usize) -> Result<Vec<NeighborHit>> {
        if query.len() != self.d {
            return Err(Error::Domain(format!(
                "query has {} dimensions, index has {}",
                query.len(),
                self.d
            )));
        }
        let norm = query.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::Domain("zero-norm query".into()));
        }
        let q: Vec<f32> = query.iter().map(|&x| (x as f64 / norm) as f32).collect();
        self.filtered_search(&q, k, self.n, |_| false)
    }

    fn filtered_search(
        &self,
        q: &[f32],
        k: usize,
        eligible: usize,
        skip: impl Fn(usize) -> bool,
    ) -> Result<Vec<NeighborHit>> {
        let target = k.min(eligible);
        if target == 0 {
            return Ok(Vec::new());
        }
        // Assume up to `k` of the closest ids may be filtered out.
        let mut ef = self.params.ef_search.max(k + k.min(self.n - eligible) + 1);
        let mut visited = Visited::new(self.n);
        for _ in 0..=MAX_DOUBLINGS {
            let hits: Vec<NeighborHit> = self
                .beam(q, ef, &mut visited)
                .into_iter()
                .filter(|c| !skip(c.id as usize))
                .map(|c| self.hit(q, c.id as usize))
                .collect();
            if hits.len() >= target {
                return Ok(top_k(hits, target));
            }
            if ef >= self.n {
                break;
            }
            ef = (ef * 2).min(self.n);
        }
        let hits = (0..self.n).filter(|&i| !skip(i)).map(|i| self.hit(q, i)).collect();
        Ok(top_k(hits, target))
    }

    /// Writes params and adjacency lists. Vectors are not stored; loading
    /// needs the same embeddings.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.encode(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    fn encode(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(&MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        for v in [
            self.params.ef_construction as u64,
            self.params.ef_search as u64,
            self.params.max_connections as u64,
            self.params.seed,
            self.n as u64,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&(self.d as u32).to_le_bytes())?;
        w.write_all(&(self.entry as u64).to_le_bytes())?;
        w.write_all(&(self.max_level as u32).to_le_bytes())?;
        for node in &self.links {
            w.write_all(&(node.len() as u32 - 1).to_le_bytes())?;
            for list in node {
                w.write_all(&(list.len() as u32).to_le_bytes())?;
                for &nb in list {
                    w.write_all(&nb.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, emb: &EmbeddingMatrix) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        File::open(path)
            .and_then(|f| BufReader::new(f).read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, emb)
    }

    fn decode(bytes: &[u8], emb: &EmbeddingMatrix) -> Result<Self> {
        let mut r = Cursor { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
        if magic != MAGIC {
            return Err(Error::BadMagic {
                expected: MAGIC,
                found: magic,
            });
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let params = IndexParams {
            ef_construction: r.u64()? as usize,
            ef_search: r.u64()? as usize,
            max_connections: r.u64()? as usize,
            seed: r.u64()?,
        };
        params.validate()?;
        let n = r.u64()? as usize;
        let d = r.u32()? as usize;
        if n != emb.n() || d != emb.d() {
            return Err(Error::Index(format!(
                "index built for {n}x{d}, embeddings are {}x{}",
                emb.n(),
                emb.d()
            )));
        }
        let entry = r.u64()? as usize;
        let max_level = r.u32()? as usize;
        let mut links = Vec::with_capacity(n);
        for _ in 0..n {
            let level = r.u32()? as usize;
            if level > MAX_LEVEL {
                return Err(Error::Index(format!("node level {level} exceeds {MAX_LEVEL}")));
            }
            let mut node = Vec::with_capacity(level + 1);
            for _ in 0..=level {
                let len = r.u32()? as usize;
                let mut list = Vec::with_capacity(len);
                for _ in 0..len {
                    let nb = r.u32()?;
                    if nb as usize >= n {
                        return Err(Error::Index(format!("link to {nb} out of range")));
                    }
                    list.push(nb);
                }
                node.push(list);
            }
            links.push(node);
        }
        if r.pos != bytes.len() {
            return Err(Error::TrailingBytes((bytes.len() - r.pos) as u64));
        }
        if entry >= n || links[entry].len() != max_level + 1 {
            return Err(Error::Index("inconsistent entry point".into()));
        }
        Ok(Self {
            params,
            n,
            d,
            vectors: normalised(emb)?,
            links,
            entry,
            max_level,
        })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self.pos + len;
        if end > self.bytes.len() {
            return Err(Error::Truncated {
                expected: end as u64,
                found: self.bytes.len() as u64,
            });
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

impl NeighborSource for VectorIndex {
    fn len(&self) -> usize {
        self.n
    }

    fn neighbors(&self, query_id: usize, k: usize, exclude: &dyn ExcludeSet) -> Result<Vec<NeighborHit>> {
        self.knn(query_id, k, exclude)
    }
}
