//! The four acquisition strategies on one subpool.

use anchoral::data::{build_initial_split, InitialSplit, SyntheticGenerator, SyntheticSpec};
use anchoral::model::{fit, TrainConfig};
use anchoral::strategy::{entropy, select, StrategyKind};

fn main() -> anchoral::Result<()> {
    let spec = SyntheticSpec {
        n_total: 3000,
        minority_fraction: 0.05,
        cluster_sigma: 1.0,
        ..Default::default()
    };
    let ds = SyntheticGenerator::new(spec)?.pool()?;
    let state = build_initial_split(&ds.labels, &InitialSplit::new(100, 10, 0))?;
    let model = fit(&ds.embeddings, &state, ds.labels.classes(), &TrainConfig::default())?;
    let subpool: Vec<usize> = state.pool_ids().iter().copied().take(500).collect();

    let mut rng = anchoral::rng::stream(3, &[]);
    for kind in [StrategyKind::Entropy, StrategyKind::KMeans, StrategyKind::Badge, StrategyKind::Random] {
        let q = select(kind, &model, &ds.embeddings, &subpool, 10, &mut rng)?;
        let mean_h = q
            .ids
            .iter()
            .map(|&i| entropy(&model.proba(ds.embeddings.row(i))))
            .sum::<anchoral::Result<f64>>()?
            / q.ids.len() as f64;
        let minority = q.ids.iter().filter(|&&i| ds.labels.is_minority(ds.labels.label(i))).count();
        println!("{:<8} mean entropy {mean_h:.3}  minority {minority}/10  {:?}", kind.name(), q.ids);
    }
    Ok(())
}
