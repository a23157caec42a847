//! kmeans++ anchors spread over a class; top-entropy anchors do not.

use std::collections::BTreeSet;

use anchoral::anchor::{select_anchors, AnchorConfig, AnchorStrategy};
use anchoral::data::{build_initial_split, InitialSplit, SyntheticGenerator, SyntheticSpec};
use anchoral::model::ProxyClassifier;

fn main() -> anchoral::Result<()> {
    let spec = SyntheticSpec {
        n_total: 5000,
        minority_fraction: 0.1,
        n_minority_clusters: 5,
        ..Default::default()
    };
    let ds = SyntheticGenerator::new(spec)?.pool()?;
    let state = build_initial_split(&ds.labels, &InitialSplit::new(200, 50, 0))?;
    let model = ProxyClassifier::random(2, ds.embeddings.d(), 0);

    for strategy in [AnchorStrategy::KMeansPlusPlus, AnchorStrategy::Entropy] {
        let cfg = AnchorConfig {
            minority: strategy,
            majority: strategy,
            ..AnchorConfig::kmeanspp(5)
        };
        let anchors = select_anchors(&state, &ds.embeddings, &cfg, ds.labels.classes(), Some(&model), 7)?;
        for (class, ids) in anchors.by_class() {
            let clusters: BTreeSet<u32> = ids.iter().map(|&i| ds.cluster_ids[i]).collect();
            println!("{strategy:?} class {class}: anchors {ids:?} from clusters {clusters:?}");
        }
    }

    let uniform = AnchorConfig {
        anchoring: false,
        ..AnchorConfig::kmeanspp(5)
    };
    let anchors = select_anchors(&state, &ds.embeddings, &uniform, ds.labels.classes(), None, 7)?;
    let minority = anchors.iter().filter(|&i| ds.labels.is_minority(ds.labels.label(i))).count();
    println!("uniform: {minority} of {} anchors are minority", anchors.len());
    Ok(())
}
