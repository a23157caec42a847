//! Acquisition strategies. Each one sees only the subpool handed to it by
//! the pool filter and returns at most `b` ids from it.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cluster::{kmeanspp, lloyd, sq_dist, Points};
use crate::data::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::model::ProxyClassifier;

pub const KMEANS_MAX_ITER: usize = 100;
pub const KMEANS_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    Entropy,
    /// Lloyd's kmeans on L2-normalised representations, one pick per cluster.
    KMeans,
    Badge,
    Random,
}

impl StrategyKind {
    pub fn name(&self) -> &'static str {
        match self {
            StrategyKind::Entropy => "entropy",
            StrategyKind::KMeans => "kmeans",
            StrategyKind::Badge => "badge",
            StrategyKind::Random => "random",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuerySelection {
    pub ids: Vec<usize>,
    /// Requested batch size `b`.
    pub batch_size: usize,
}

/// Predictive entropy in nats; `0 · ln 0 = 0`.
pub fn entropy(p: &[f64]) -> Result<f64> {
    if p.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::Domain("probabilities must be non-negative".into()));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::Domain(format!("probabilities sum to {total}")));
    }
    Ok(-p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>())
}

/// Top-`b` by entropy, ascending id on ties.
pub fn entropy_select(ids: &[usize], probs: &[Vec<f64>], b: usize) -> Result<QuerySelection> {
    let mut scored = ids
        .iter()
        .zip(probs)
        .map(|(&i, p)| Ok((i, entropy(p)?)))
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
    Ok(QuerySelection {
        ids: scored.into_iter().take(b).map(|(i, _)| i).collect(),
        batch_size: b,
    })
}

/// Clusters the normalised representations into `b` groups and returns, per
/// cluster, the closest not-yet-picked point to its centroid (ascending id
/// on ties).
pub fn kmeans_diversity_select(ids: &[usize], reps: Points, b: usize, rng: &mut impl Rng) -> QuerySelection {
    if b >= ids.len() {
        return QuerySelection {
            ids: ids.to_vec(),
            batch_size: b,
        };
    }
    let points = reps.l2_normalised();
    let km = lloyd(&points, b, KMEANS_MAX_ITER, KMEANS_TOL, rng);
    let mut picked = vec![false; ids.len()];
    let mut out = Vec::with_capacity(b);
    for j in 0..km.centroids.len() {
        let centre = km.centroids.row(j);
        let best = (0..ids.len())
            .filter(|&i| !picked[i])
            .map(|i| (i, sq_dist(points.row(i), centre)))
            .min_by(|x, y| x.1.total_cmp(&y.1).then(ids[x.0].cmp(&ids[y.0])))
            .expect("fewer clusters than points");
        picked[best.0] = true;
        out.push(ids[best.0]);
    }
    QuerySelection {
        ids: out,
        batch_size: b,
    }
}

/// kmeans++ seeding on gradient embeddings; ids in draw order.
pub fn badge_select(ids: &[usize], grads: &Points, b: usize, rng: &mut impl Rng) -> QuerySelection {
    QuerySelection {
        ids: kmeanspp(grads, b, rng).into_iter().map(|j| ids[j]).collect(),
        batch_size: b,
    }
}

pub fn random_select(ids: &[usize], b: usize, rng: &mut impl Rng) -> QuerySelection {
    let amount = b.min(ids.len());
    QuerySelection {
        ids: sample(rng, ids.len(), amount).into_iter().map(|j| ids[j]).collect(),
        batch_size: b,
    }
}

/// Runs `kind` on `subpool` using the model's view of the embeddings.
pub fn select(
    kind: StrategyKind,
    model: &ProxyClassifier,
    emb: &EmbeddingMatrix,
    subpool: &[usize],
    b: usize,
    rng: &mut impl Rng,
) -> Result<QuerySelection> {
    if b == 0 {
        return Err(Error::Config("query size must be >= 1".into()));
    }
    match kind {
        StrategyKind::Entropy => entropy_select(subpool, &model.predict_proba(emb, subpool), b),
        StrategyKind::KMeans => {
            let data = subpool.iter().flat_map(|&i| emb.row(i).iter().map(|&v| v as f64)).collect();
            Ok(kmeans_diversity_select(subpool, Points::new(data, emb.d()), b, rng))
        }
        StrategyKind::Badge => {
            let dim = model.num_classes() * emb.d();
            let data = subpool.iter().flat_map(|&i| model.gradient_embedding(emb.row(i))).collect();
            Ok(badge_select(subpool, &Points::new(data, dim), b, rng))
        }
        StrategyKind::Random => Ok(random_select(subpool, b, rng)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy(&[1.0, 0.0]).unwrap(), 0.0);
        assert!((entropy(&[0.5, 0.5]).unwrap() - 0.693147).abs() < 1e-6);
        assert!((entropy(&[0.25; 4]).unwrap() - 1.386294).abs() < 1e-6);
        assert!(entropy(&[0.5, 0.6]).is_err());
        assert!(entropy(&[1.5, -0.5]).is_err());
    }

    #[test]
    fn uniform_probabilities_tie_break_on_id() {
        let ids = [9, 3, 7, 1, 5];
        let probs = vec![vec![0.5, 0.5]; 5];
        assert_eq!(entropy_select(&ids, &probs, 3).unwrap().ids, vec![1, 3, 5]);
        assert_eq!(entropy_select(&ids, &probs, 5).unwrap().ids.len(), 5);
        assert_eq!(entropy_select(&ids, &probs, 50).unwrap().ids.len(), 5);
    }

    fn random_dists(n: usize, c: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut r = rng::stream(seed, &[]);
        (0..n)
            .map(|_| {
                let raw: Vec<f64> = (0..c).map(|_| r.random::<f64>() + 1e-3).collect();
                let s: f64 = raw.iter().sum();
                raw.into_iter().map(|v| v / s).collect()
            })
            .collect()
    }

    #[test]
    fn entropy_select_matches_full_sort_and_log_base() {
        let probs = random_dists(100, 3, 4);
        let ids: Vec<usize> = (0..100).collect();
        let got = entropy_select(&ids, &probs, 20).unwrap().ids;
        let rank = |base: f64| {
            let mut all: Vec<(usize, f64)> = probs
                .iter()
                .enumerate()
                .map(|(i, p)| (i, -p.iter().map(|q| q * q.log(base)).sum::<f64>()))
                .collect();
            all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            all.into_iter().take(20).map(|p| p.0).collect::<Vec<_>>()
        };
        assert_eq!(got, rank(std::f64::consts::E));
        assert_eq!(got, rank(2.0));
    }

    #[test]
    fn kmeans_picks_one_per_blob() {
        let mut rows = Vec::new();
        let mut blob_of = Vec::new();
        let dirs = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]];
        let mut r = rng::stream(5, &[]);
        for (b, d) in dirs.iter().enumerate() {
            for _ in 0..12 {
                rows.push(d.iter().map(|v| v + r.random_range(-0.05..0.05)).collect::<Vec<f64>>());
                blob_of.push(b);
            }
        }
        let ids: Vec<usize> = (0..rows.len()).collect();
        for seed in 0..10 {
            let sel = kmeans_diversity_select(&ids, Points::from_rows(&rows), 5, &mut rng::stream(seed, &[]));
            let mut blobs: Vec<usize> = sel.ids.iter().map(|&i| blob_of[i]).collect();
            blobs.sort_unstable();
            assert_eq!(blobs, vec![0, 1, 2, 3, 4]);
        }
    }

    #[test]
    fn kmeans_single_cluster_picks_point_nearest_mean_direction() {
        let rows = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0], vec![2.0, 0.1]];
        let sel = kmeans_diversity_select(&[10, 11, 12, 13], Points::from_rows(&rows), 1, &mut rng::stream(0, &[]));
        assert_eq!(sel.ids, vec![12]);
    }

    #[test]
    fn kmeans_on_identical_points_returns_lowest_ids() {
        let rows = vec![vec![0.3, 0.4]; 6];
        let sel = kmeans_diversity_select(&[4, 2, 9, 1, 7, 3], Points::from_rows(&rows), 3, &mut rng::stream(1, &[]));
        assert_eq!(sel.ids, vec![1, 2, 3]);
    }

    #[test]
    fn kmeans_returns_everything_when_b_exceeds_subpool() {
        let rows = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let sel = kmeans_diversity_select(&[5, 6], Points::from_rows(&rows), 4, &mut rng::stream(1, &[]));
        assert_eq!(sel.ids, vec![5, 6]);
    }

    #[test]
    fn badge_never_repeats_a_location_early() {
        // Gradients: id 0 is at the origin (confident), ids 1 and 2 coincide.
        let grads = Points::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0], vec![1.0, 1.0], vec![-2.0, 1.0]]);
        let ids = [0, 1, 2, 3];
        for seed in 0..500 {
            let sel = badge_select(&ids, &grads, 3, &mut rng::stream(seed, &[]));
            let first = sel.ids[0];
            // After the first pick, a zero-distance candidate is never chosen
            // while positive-distance ones remain.
            if first == 1 || first == 2 {
                assert!(!sel.ids[1..2].contains(&(3 - first)));
            }
        }
        let single = badge_select(&ids, &grads, 1, &mut rng::stream(3, &[]));
        assert_eq!(single.ids.len(), 1);
    }

    // Hand-enumerated kmeans++ law on four points on a line: 0, 1, 3, 6.
    #[test]
    fn badge_distribution_matches_enumeration() {
        let xs = [0.0f64, 1.0, 3.0, 6.0];
        let grads = Points::new(xs.to_vec(), 1);
        let ids = [0, 1, 2, 3];
        // P(first=i) = 1/4; P(second=j | first=i) = (x_j - x_i)^2 / sum_k (x_k - x_i)^2.
        let mut expected = [[0.0f64; 4]; 4];
        for i in 0..4 {
            let total: f64 = xs.iter().map(|x| (x - xs[i]).powi(2)).sum();
            for j in 0..4 {
                expected[i][j] = 0.25 * (xs[j] - xs[i]).powi(2) / total;
            }
        }
        let trials = 10_000;
        let mut counts = [[0u32; 4]; 4];
        for seed in 0..trials {
            let sel = badge_select(&ids, &grads, 2, &mut rng::stream(seed, &[12]));
            counts[sel.ids[0]][sel.ids[1]] += 1;
        }
        for i in 0..4 {
            for j in 0..4 {
                let p = expected[i][j];
                let observed = counts[i][j] as f64 / trials as f64;
                let sigma = (p * (1.0 - p) / trials as f64).sqrt();
                assert!((observed - p).abs() <= 3.0 * sigma.max(1e-12), "({i},{j}) {observed} vs {p}");
            }
        }
    }

    #[test]
    fn random_select_is_reproducible_and_uniform() {
        let ids: Vec<usize> = (100..120).collect();
        let a = random_select(&ids, 5, &mut rng::stream(8, &[]));
        let b = random_select(&ids, 5, &mut rng::stream(8, &[]));
        assert_eq!(a, b);
        assert_eq!(random_select(&ids, 50, &mut rng::stream(8, &[])).ids.len(), 20);

        // Chi-square on per-id inclusion counts, 19 dof, 1% critical 36.19.
        let draws = 10_000u64;
        let mut counts = [0f64; 20];
        let mut r = rng::stream(9, &[]);
        for _ in 0..draws {
            for i in random_select(&ids, 5, &mut r).ids {
                counts[i - 100] += 1.0;
            }
        }
        let expected = draws as f64 * 5.0 / 20.0;
        let chi2: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
        assert!(chi2 < 36.19, "chi2 {chi2}");
    }

    proptest! {
        #[test]
        fn selections_are_distinct_subsets_of_the_subpool(
            n in 1usize..40,
            b in 1usize..12,
            seed in 0u64..1000,
        ) {
            let ids: Vec<usize> = (0..n).map(|i| i * 3 + 1).collect();
            let probs = random_dists(n, 3, seed);
            let reps = Points::from_rows(&probs);
            let mut r = rng::stream(seed, &[]);
            let selections = [
                entropy_select(&ids, &probs, b).unwrap(),
                kmeans_diversity_select(&ids, reps.clone(), b, &mut r),
                badge_select(&ids, &reps, b, &mut r),
                random_select(&ids, b, &mut r),
            ];
            for sel in selections {
                prop_assert_eq!(sel.ids.len(), b.min(n));
                let mut u = sel.ids.clone();
                u.sort_unstable();
                u.dedup();
                prop_assert_eq!(u.len(), sel.ids.len());
                prop_assert!(sel.ids.iter().all(|i| ids.contains(i)));
            }
        }

        #[test]
        fn entropy_select_ignores_class_order(seed in 0u64..500) {
            let probs = random_dists(30, 4, seed);
            let permuted: Vec<Vec<f64>> = probs.iter().map(|p| vec![p[2], p[0], p[3], p[1]]).collect();
            let ids: Vec<usize> = (0..30).collect();
            prop_assert_eq!(entropy_select(&ids, &probs, 7).unwrap(), entropy_select(&ids, &permuted, 7).unwrap());
        }

        #[test]
        fn kmeans_ignores_positive_rescaling(seed in 0u64..200) {
            let mut r = rng::stream(seed, &[1]);
            let rows: Vec<Vec<f64>> = (0..25).map(|_| (0..3).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
            let scaled: Vec<Vec<f64>> = rows.iter().enumerate()
                .map(|(i, row)| row.iter().map(|v| v * [2.0, 0.5, 4.0][i % 3]).collect())
                .collect();
            let ids: Vec<usize> = (0..25).collect();
            let a = kmeans_diversity_select(&ids, Points::from_rows(&rows), 4, &mut rng::stream(seed, &[2]));
            let b = kmeans_diversity_select(&ids, Points::from_rows(&scaled), 4, &mut rng::stream(seed, &[2]));
            prop_assert_eq!(a, b);
        }
    }
}
