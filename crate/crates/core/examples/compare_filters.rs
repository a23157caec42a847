//! AnchorAL against SEALS, RandomSubset and the full pool, three seeds each.

use anchoral::config::{ExperimentConfig, FilterKind, Timing};
use anchoral::data::{SyntheticGenerator, SyntheticSpec};
use anchoral::index::{IndexParams, VectorIndex};
use anchoral::runner::{build_report, run_experiment, Dataset};

fn main() -> anchoral::Result<()> {
    let spec = SyntheticSpec {
        n_total: 30_000,
        cluster_sigma: 1.5,
        minority_spread: Some(1.0),
        ..Default::default()
    };
    let data = Dataset::synthetic(&SyntheticGenerator::new(spec)?, 3000)?;
    let index = VectorIndex::build(&data.pool, IndexParams::default())?;

    let mut results = Vec::new();
    for kind in [FilterKind::Anchoral, FilterKind::Seals, FilterKind::RandomSubset, FilterKind::Noop] {
        for seed in 0..3 {
            let mut cfg = ExperimentConfig::default();
            cfg.filter.kind = kind;
            cfg.filter.subset_size = 3000;
            cfg.dataset.initial_clusters = Some(vec![0]);
            cfg.run.budget = 400;
            cfg.run.rounds = 16;
            cfg.run.timing = Timing::Off;
            cfg.seeds = cfg.seeds.offset(seed);
            results.push(run_experiment(&cfg, &data, &index)?);
        }
    }
    print!("{}", build_report(&results)?.text);
    Ok(())
}
