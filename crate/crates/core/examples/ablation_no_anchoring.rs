//! Class-balanced kmeans++ anchors versus anchors drawn uniformly from the
//! labelled set, on a pool whose minority hides inside a majority region.

use anchoral::config::{ExperimentConfig, Timing};
use anchoral::data::{SyntheticGenerator, SyntheticSpec};
use anchoral::index::ExactSearch;
use anchoral::runner::{describe, run_experiment, Dataset};

fn main() -> anchoral::Result<()> {
    let spec = SyntheticSpec {
        n_total: 50_000,
        cluster_sigma: 1.5,
        minority_spread: Some(1.0),
        ..Default::default()
    };
    let data = Dataset::synthetic(&SyntheticGenerator::new(spec)?, 3000)?;
    let exact = ExactSearch::new(&data.pool)?;

    for anchoring in [true, false] {
        let mut found = Vec::new();
        for seed in 0..5 {
            let mut cfg = ExperimentConfig::default();
            cfg.filter.anchoring = anchoring;
            cfg.dataset.initial_clusters = Some(vec![0]);
            cfg.run.budget = 500;
            cfg.run.rounds = 20;
            cfg.run.timing = Timing::Off;
            cfg.seeds = cfg.seeds.offset(seed);
            found.push(run_experiment(&cfg, &data, &exact)?.labeled_minority() as f64);
        }
        let s = describe(&found)?;
        println!("anchoring={anchoring:<5} labelled minority median {} (iqr {})  {found:?}", s.median, s.iqr);
    }
    Ok(())
}
