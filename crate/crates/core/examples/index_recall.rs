//! Recall@k of the HNSW index against an exact scan.
//!
//! cargo run --release --example index_recall -- [n] [ef]

use std::collections::HashSet;
use std::time::Instant;

use anchoral::data::{generate_synthetic, SyntheticSpec};
use anchoral::index::{exact_knn, IndexParams, VectorIndex};
use rand::Rng;

fn main() -> anchoral::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(10_000, |s| s.parse().expect("n"));
    let ef: usize = args.next().map_or(200, |s| s.parse().expect("ef"));

    let emb = generate_synthetic(&SyntheticSpec {
        n_total: n,
        ..Default::default()
    })?
    .embeddings;
    let params = IndexParams {
        ef_search: ef,
        ..Default::default()
    };
    let t = Instant::now();
    let index = VectorIndex::build(&emb, params)?;
    println!("built {n} points in {:.2?} (levels: {})", t.elapsed(), index.max_level() + 1);

    let mut rng = anchoral::rng::stream(1, &[]);
    for k in [1, 10, 50] {
        let mut hits = 0;
        for _ in 0..100 {
            let q = rng.random_range(0..n);
            let truth: HashSet<usize> = exact_knn(&emb, q, k, &())?.iter().map(|h| h.id).collect();
            hits += index.knn(q, k, &())?.iter().filter(|h| truth.contains(&h.id)).count();
        }
        println!("recall@{k}: {:.4}", hits as f64 / (100 * k) as f64);
    }
    Ok(())
}
