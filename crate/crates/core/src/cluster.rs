//! kmeans++ seeding and Lloyd's iterations over small dense point sets.

use rand::Rng;

/// Row-major `f64` points.
#[derive(Debug, Clone, PartialEq)]
pub struct Points {
    data: Vec<f64>,
    dim: usize,
}

impl Points {
    pub fn new(data: Vec<f64>, dim: usize) -> Self {
        assert!(dim > 0 && data.len() % dim == 0, "ragged point set");
        Self { data, dim }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let dim = rows.first().map_or(1, |r| r.as_ref().len().max(1));
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            data.extend_from_slice(r.as_ref());
        }
        Self::new(data, dim)
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Scales every non-zero row to unit L2 norm.
    pub fn l2_normalised(mut self) -> Self {
        for row in self.data.chunks_exact_mut(self.dim) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|v| *v /= norm);
            }
        }
        self
    }
}

#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// kmeans++ seeding: the first index is uniform, each later one is drawn
/// with probability proportional to its squared distance to the nearest
/// index already chosen. Returns `min(k, n)` distinct indices in draw order.
///
/// If every remaining point coincides with a chosen one the D² weights are
/// all zero; the next index is then drawn uniformly from the unchosen ones.
pub fn kmeanspp(points: &Points, k: usize, rng: &mut impl Rng) -> Vec<usize> {
    let n = points.len();
    let k = k.min(n);
    if k == 0 {
        return Vec::new();
    }
    let mut chosen = Vec::with_capacity(k);
    let mut taken = vec![false; n];
    let first = rng.random_range(0..n);
    chosen.push(first);
    taken[first] = true;
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), points.row(first))).collect();
    d2[first] = 0.0;

    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                acc += w;
                pick = Some(i);
                if acc > target {
                    break;
                }
            }
            pick.expect("positive total has a positive weight")
        } else {
            let free: Vec<usize> = (0..n).filter(|&i| !taken[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        taken[next] = true;
        let centre = points.row(next);
        for (i, w) in d2.iter_mut().enumerate() {
            if taken[i] {
                *w = 0.0;
            } else {
                *w = w.min(sq_dist(points.row(i), centre));
            }
        }
    }
    chosen
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centroids: Points,
    pub assignment: Vec<usize>,
    pub iterations: usize,
}

fn nearest_centroid(p: &[f64], centroids: &Points) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for j in 0..centroids.len() {
        let d = sq_dist(p, centroids.row(j));
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Lloyd's algorithm from kmeans++ seeds. Stops after `max_iter` iterations
/// or once no centroid moves by `tol` or more. An empty cluster is re-seeded
/// at the point farthest from its assigned centroid.
pub fn lloyd(points: &Points, k: usize, max_iter: usize, tol: f64, rng: &mut impl Rng) -> KMeansResult {
    let n = points.len();
    let dim = points.dim();
    let seeds = kmeanspp(points, k, rng);
    let k = seeds.len();
    let mut centroids = Points::new(seeds.iter().flat_map(|&i| points.row(i).to_vec()).collect(), dim);
    let mut assignment = vec![0usize; n];
    let mut iterations = 0;

    for _ in 0..max_iter {
        iterations += 1;
        let mut dist = vec![0.0; n];
        for i in 0..n {
            let (j, d) = nearest_centroid(points.row(i), &centroids);
            assignment[i] = j;
            dist[i] = d;
        }
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let j = assignment[i];
            counts[j] += 1;
            for (s, v) in sums[j * dim..(j + 1) * dim].iter_mut().zip(points.row(i)) {
                *s += v;
            }
        }
        let mut reseeded = vec![false; n];
        for j in 0..k {
            if counts[j] > 0 {
                let c = counts[j] as f64;
                sums[j * dim..(j + 1) * dim].iter_mut().for_each(|s| *s /= c);
            } else {
                let far = (0..n)
                    .filter(|&i| !reseeded[i])
                    .fold(None, |best: Option<usize>, i| match best {
                        Some(b) if dist[b] >= dist[i] => Some(b),
                        _ => Some(i),
                    })
                    .expect("k <= n leaves a point to reseed with");
                reseeded[far] = true;
                sums[j * dim..(j + 1) * dim].copy_from_slice(points.row(far));
            }
        }
        let next = Points::new(sums, dim);
        let shift = (0..k)
            .map(|j| sq_dist(next.row(j), centroids.row(j)).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        if shift < tol {
            break;
        }
    }
    for i in 0..n {
        assignment[i] = nearest_centroid(points.row(i), &centroids).0;
    }
    KMeansResult {
        centroids,
        assignment,
        iterations,
    }
}
