//! One AnchorAL run on a small synthetic pool, printing the learning curve.

use anchoral::config::ExperimentConfig;
use anchoral::data::{SyntheticGenerator, SyntheticSpec};
use anchoral::index::{IndexParams, VectorIndex};
use anchoral::runner::{run_experiment, Dataset};

fn main() -> anchoral::Result<()> {
    let spec = SyntheticSpec {
        n_total: 20_000,
        ..Default::default()
    };
    let data = Dataset::synthetic(&SyntheticGenerator::new(spec)?, 2000)?;
    let index = VectorIndex::build(&data.pool, IndexParams::default())?;

    let mut cfg = ExperimentConfig::default();
    cfg.run.budget = 500;
    cfg.run.rounds = 20;

    let result = run_experiment(&cfg, &data, &index)?;
    println!("round  labelled  minority_f1  subpool");
    for r in &result.rounds {
        println!("{:>5}  {:>8}  {:>11.3}  {:>7}", r.round, r.labeled_total, r.minority_f1, r.subpool_size);
    }
    println!("minority AUC {:.2}, stopped: {:?}", result.auc_minority, result.stop);
    Ok(())
}
