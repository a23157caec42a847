//! Synthetic imbalanced datasets built from Gaussian blobs.
//!
//! Cluster centres are drawn once per spec; instances are then sampled i.i.d.
//! around their cluster's centre. Minority clusters are numbered
//! `0..n_minority_clusters`, majority clusters follow.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{EmbeddingMatrix, LabelStore};
use crate::error::{Error, Result};
use crate::rng;

const CENTRES: u64 = 0;
const POOL: u64 = 1;
const TEST: u64 = 2;
const MINORITY_SPREAD: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_total: usize,
    pub d: usize,
    pub minority_fraction: f64,
    pub n_minority_clusters: usize,
    pub n_majority_clusters: usize,
    pub cluster_sigma: f64,
    pub cluster_center_scale: f64,
    /// Minority clusters are dealt round-robin over this many minority
    /// classes; the majority is always class 0.
    #[serde(default = "one")]
    pub n_minority_classes: usize,
    /// When set, minority cluster centres are drawn around the centre of the
    /// first majority cluster with this per-dimension standard deviation,
    /// instead of independently. Small values embed the minority inside a
    /// majority region.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub minority_spread: Option<f64>,
    pub seed: u64,
}

fn one() -> usize {
    1
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_total: 100_000,
            d: 32,
            minority_fraction: 0.01,
            n_minority_clusters: 4,
            n_majority_clusters: 20,
            cluster_sigma: 0.2,
            cluster_center_scale: 5.0,
            n_minority_classes: 1,
            minority_spread: None,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn minority_count(&self) -> usize {
        (self.n_total as f64 * self.minority_fraction).round() as usize
    }

    pub fn num_classes(&self) -> u32 {
        self.n_minority_classes as u32 + 1
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InfeasibleSpec(msg));
        if self.n_total == 0 || self.d == 0 {
            return bad("n_total and d must be >= 1".into());
        }
        if !(self.minority_fraction > 0.0 && self.minority_fraction < 1.0) {
            return bad(format!("minority_fraction {} not in (0,1)", self.minority_fraction));
        }
        if self.n_minority_clusters == 0 || self.n_majority_clusters == 0 {
            return bad("cluster counts must be >= 1".into());
        }
        if self.n_minority_classes == 0 || self.n_minority_classes > self.n_minority_clusters {
            return bad(format!(
                "n_minority_classes must be in 1..={}",
                self.n_minority_clusters
            ));
        }
        if !(self.cluster_sigma >= 0.0 && self.cluster_sigma.is_finite())
            || !(self.cluster_center_scale > 0.0 && self.cluster_center_scale.is_finite())
        {
            return bad("cluster_sigma must be >= 0 and cluster_center_scale > 0".into());
        }
        if let Some(s) = self.minority_spread {
            if !(s >= 0.0 && s.is_finite()) {
                return bad(format!("minority_spread {s} must be finite and >= 0"));
            }
        }
        let minority = self.minority_count();
        if minority < self.n_minority_clusters {
            return bad(format!(
                "{} minority instances cannot fill {} minority clusters",
                minority, self.n_minority_clusters
            ));
        }
        if self.n_total - minority < self.n_majority_clusters {
            return bad(format!(
                "{} majority instances cannot fill {} majority clusters",
                self.n_total - minority,
                self.n_majority_clusters
            ));
        }
        Ok(())
    }
}

/// A generated split together with each instance's ground-truth cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub embeddings: EmbeddingMatrix,
    pub labels: LabelStore,
    pub cluster_ids: Vec<u32>,
}

/// Holds the cluster centres of a spec so that pool and test splits share
/// them.
#[derive(Debug, Clone)]
pub struct SyntheticGenerator {
    spec: SyntheticSpec,
    centres: Vec<Vec<f64>>,
}

impl SyntheticGenerator {
    pub fn new(spec: SyntheticSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = rng::stream(spec.seed, &[CENTRES]);
        let normal = Normal::new(0.0, spec.cluster_center_scale).expect("validated scale");
        let n_clusters = spec.n_minority_clusters + spec.n_majority_clusters;
        let mut centres: Vec<Vec<f64>> = (0..n_clusters)
            .map(|_| (0..spec.d).map(|_| normal.sample(&mut rng)).collect())
            .collect();
        if let Some(spread) = spec.minority_spread {
            let offset = Normal::new(0.0, spread).expect("validated spread");
            let shared = centres[spec.n_minority_clusters].clone();
            let mut rng = rng::stream(spec.seed, &[CENTRES, MINORITY_SPREAD]);
            for centre in centres.iter_mut().take(spec.n_minority_clusters) {
                for (c, s) in centre.iter_mut().zip(&shared) {
                    *c = s + offset.sample(&mut rng);
                }
            }
        }
        Ok(Self { spec, centres })
    }

    pub fn spec(&self) -> &SyntheticSpec {
        &self.spec
    }

    pub fn centres(&self) -> &[Vec<f64>] {
        &self.centres
    }

    /// Class of every instance in cluster `cluster`.
    pub fn cluster_class(&self, cluster: u32) -> u32 {
        let c = cluster as usize;
        if c < self.spec.n_minority_clusters {
            1 + (c % self.spec.n_minority_classes) as u32
        } else {
            0
        }
    }

    /// The training pool described by the spec.
    pub fn pool(&self) -> Result<SyntheticDataset> {
        let minority = self.spec.minority_count();
        self.sample(minority, self.spec.n_total - minority, POOL)
    }

    /// A held-out split from the same centres: every minority instance count
    /// of the pool again, and at most `majority_cap` majority instances.
    pub fn test_split(&self, majority_cap: usize) -> Result<SyntheticDataset> {
        let minority = self.spec.minority_count();
        let majority = (self.spec.n_total - minority).min(majority_cap).max(self.spec.n_majority_clusters);
        self.sample(minority, majority, TEST)
    }

    fn sample(&self, minority: usize, majority: usize, split: u64) -> Result<SyntheticDataset> {
        let spec = &self.spec;
        let mut assignment: Vec<u32> = Vec::with_capacity(minority + majority);
        assignment.extend(even_split(minority, spec.n_minority_clusters, 0));
        assignment.extend(even_split(majority, spec.n_majority_clusters, spec.n_minority_clusters));

        let mut rng = rng::stream(spec.seed, &[split]);
        assignment.shuffle(&mut rng);

        let noise = Normal::new(0.0, spec.cluster_sigma).expect("validated sigma");
        let mut values = Vec::with_capacity(assignment.len() * spec.d);
        for &cluster in &assignment {
            let centre = &self.centres[cluster as usize];
            values.extend(centre.iter().map(|&c| (c + noise.sample(&mut rng)) as f32));
        }
        let labels: Vec<u32> = assignment.iter().map(|&c| self.cluster_class(c)).collect();
        Ok(SyntheticDataset {
            embeddings: EmbeddingMatrix::new(assignment.len(), spec.d, values)?,
            labels: LabelStore::with_majority(labels, spec.num_classes(), 0)?,
            cluster_ids: assignment,
        })
    }
}

fn even_split(count: usize, parts: usize, first_id: usize) -> impl Iterator<Item = u32> {
    (0..count).map(move |i| (first_id + i % parts) as u32)
}

/// Generates the training pool for `spec`. Pure function of the spec.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    SyntheticGenerator::new(spec.clone())?.pool()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            n_total: 1000,
            d: 8,
            minority_fraction: 0.01,
            n_minority_clusters: 2,
            n_majority_clusters: 5,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn minority_count_follows_rounding_rule() {
        let ds = generate_synthetic(&small(3)).unwrap();
        let minority: Vec<usize> = (0..1000).filter(|&i| ds.labels.label(i) == 1).collect();
        assert_eq!(minority.len(), 10);
        for cluster in 0..2 {
            assert!(minority.iter().any(|&i| ds.cluster_ids[i] == cluster));
        }
        assert!(minority.iter().all(|&i| ds.cluster_ids[i] < 2));
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(generate_synthetic(&small(9)).unwrap(), generate_synthetic(&small(9)).unwrap());
        assert_ne!(
            generate_synthetic(&small(9)).unwrap().embeddings,
            generate_synthetic(&small(10)).unwrap().embeddings
        );
    }

    #[test]
    fn infeasible_specs_are_rejected() {
        let spec = SyntheticSpec {
            minority_fraction: 0.001,
            n_minority_clusters: 4,
            ..small(0)
        };
        assert!(matches!(generate_synthetic(&spec), Err(Error::InfeasibleSpec(_))));
        let spec = SyntheticSpec {
            minority_fraction: 1.0,
            ..small(0)
        };
        assert!(generate_synthetic(&spec).is_err());
    }

    #[test]
    fn minority_clusters_are_dealt_over_classes() {
        let spec = SyntheticSpec {
            n_minority_clusters: 3,
            n_minority_classes: 3,
            minority_fraction: 0.03,
            ..small(1)
        };
        let ds = generate_synthetic(&spec).unwrap();
        assert_eq!(ds.labels.num_classes(), 4);
        assert_eq!(ds.labels.class_counts(), vec![970, 10, 10, 10]);
    }

    #[test]
    fn test_split_shares_centres_and_caps_majority() {
        let g = SyntheticGenerator::new(small(4)).unwrap();
        let test = g.test_split(100).unwrap();
        assert_eq!(test.labels.class_counts(), vec![100, 10]);
        assert_ne!(test.embeddings, g.pool().unwrap().embeddings);
    }

    #[test]
    fn spread_places_minority_centres_around_the_first_majority_centre() {
        let spec = SyntheticSpec {
            d: 32,
            n_minority_clusters: 4,
            minority_spread: Some(0.5),
            ..small(5)
        };
        let g = SyntheticGenerator::new(spec.clone()).unwrap();
        let host = &g.centres()[4];
        for c in &g.centres()[..4] {
            let dist = c.iter().zip(host).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            // Offset norm ~ 0.5 * sqrt(32) = 2.83; independent centres sit ~40 apart.
            assert!(dist < 6.0, "{dist}");
        }
        let plain = SyntheticGenerator::new(SyntheticSpec { minority_spread: None, ..spec }).unwrap();
        assert_eq!(plain.centres()[4..], g.centres()[4..]);
        assert!(SyntheticGenerator::new(SyntheticSpec { minority_spread: Some(-1.0), ..small(5) }).is_err());
    }

    // Brute-force nearest-centroid classification over the true centres.
    #[test]
    fn clusters_are_separable_by_nearest_centroid() {
        let spec = SyntheticSpec {
            n_total: 100_000,
            d: 32,
            minority_fraction: 0.01,
            n_minority_clusters: 4,
            n_majority_clusters: 20,
            cluster_sigma: 0.2,
            cluster_center_scale: 5.0,
            n_minority_classes: 1,
            minority_spread: None,
            seed: 2024,
        };
        let g = SyntheticGenerator::new(spec).unwrap();
        let ds = g.pool().unwrap();
        let (mut hit, mut total) = (0usize, 0usize);
        for i in 0..ds.embeddings.n() {
            if ds.labels.label(i) != 1 {
                continue;
            }
            total += 1;
            let row = ds.embeddings.row(i);
            let nearest = (0..g.centres().len())
                .min_by(|&a, &b| {
                    let da: f64 = row.iter().zip(&g.centres()[a]).map(|(&x, c)| (x as f64 - c).powi(2)).sum();
                    let db: f64 = row.iter().zip(&g.centres()[b]).map(|(&x, c)| (x as f64 - c).powi(2)).sum();
                    da.total_cmp(&db)
                })
                .unwrap();
            if g.cluster_class(nearest as u32) == 1 {
                hit += 1;
            }
        }
        assert_eq!(total, 1000);
        assert!(hit as f64 / total as f64 >= 0.99, "recall {}", hit as f64 / total as f64);
    }
}
