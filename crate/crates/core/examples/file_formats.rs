//! Writes and re-reads the on-disk dataset, index and config formats.

use anchoral::config::parse_config_str;
use anchoral::data::{load_embeddings, load_labels, write_embeddings, write_labels, SyntheticGenerator, SyntheticSpec};
use anchoral::index::{IndexParams, VectorIndex};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("anchoral-file-formats");
    std::fs::create_dir_all(&dir)?;

    let ds = SyntheticGenerator::new(SyntheticSpec {
        n_total: 2000,
        ..Default::default()
    })?
    .pool()?;
    write_embeddings(dir.join("embeddings.aemb"), &ds.embeddings)?;
    write_labels(dir.join("labels.csv"), &ds.labels)?;
    let emb = load_embeddings(dir.join("embeddings.aemb"))?;
    let labels = load_labels(dir.join("labels.csv"), emb.n())?;
    assert_eq!(emb, ds.embeddings);
    println!("{} x {} embeddings, class counts {:?}", emb.n(), emb.d(), labels.class_counts());

    let index = VectorIndex::build(&emb, IndexParams::default())?;
    index.save(dir.join("index.aidx"))?;
    let reloaded = VectorIndex::load(dir.join("index.aidx"), &emb)?;
    assert_eq!(reloaded.knn(0, 10, &())?, index.knn(0, 10, &())?);
    println!("index reloaded, entry point {}", reloaded.entry_point());

    let cfg = parse_config_str(r#"{"filter": {"type": "seals", "seals_k": 20}, "loop": {"budget": 300, "rounds": 10}}"#)?;
    println!("{}", cfg.to_json());
    match parse_config_str(r#"{"loop": {"budgte": 300}}"#) {
        Err(e) => println!("rejected: {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
