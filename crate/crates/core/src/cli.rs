//! Command-line front end: `synth`, `index`, `run`, `report`.
//!
//! Failures print one tab-separated line to stderr,
//! `error<TAB><kind><TAB><message>`, and exit with status 1.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{parse_config, ExperimentConfig, FilterKind};
use crate::data::{
    load_embeddings, load_labels, write_embeddings, write_labels, write_metadata, SyntheticGenerator, SyntheticMetadata,
};
use crate::error::{Error, Result};
use crate::index::{ExactSearch, NeighborSource, VectorIndex};
use crate::runner::{build_report, run_experiment, Dataset, ExperimentResult};

pub const EMBEDDINGS: &str = "embeddings.aemb";
pub const LABELS: &str = "labels.csv";
pub const TEST_EMBEDDINGS: &str = "test_embeddings.aemb";
pub const TEST_LABELS: &str = "test_labels.csv";
pub const METADATA: &str = "metadata.json";
pub const INDEX: &str = "index.aidx";
pub const INDEX_INFO: &str = "index.json";
pub const RESULT: &str = "result.json";
pub const ROUNDS: &str = "rounds.csv";
pub const EFFECTIVE_CONFIG: &str = "effective-config.json";

#[derive(Debug, Parser)]
#[command(name = "anchoral", version, about = "Anchored pool filtering for active learning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset from `dataset.synth`.
    Synth(SynthArgs),
    /// Build the neighbour index over a dataset.
    Index(IndexArgs),
    /// Run experiments and write per-run logs plus a report.
    Run(RunArgs),
    /// Summarise result files.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory (defaults to `dataset.dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory (defaults to `dataset.dir`).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Dataset directory (defaults to `dataset.dir`).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Number of sweep members; member i adds i to every seed.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub force: bool,
    #[arg(long = "time-limit", value_name = "SECONDS")]
    pub time_limit: Option<f64>,
    /// Build the index when it is missing.
    #[arg(long = "build-index")]
    pub build_index: bool,
    /// Filters to compare; overrides `filter.type`. Repeatable.
    #[arg(long = "filter", value_name = "FILTER")]
    pub filters: Vec<String>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Result files, or directories searched for them.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Directory for report.txt, summary.csv and curves/.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Sidecar written next to an index, tying it to its dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexInfo {
    pub dataset_hash: String,
    pub params: crate::index::IndexParams,
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => parse_config(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text)
}

/// SHA-256 over the pool and test files, in a fixed order.
pub fn dataset_hash(dir: &Path) -> Result<String> {
    let mut hasher = Sha256::new();
    for name in [EMBEDDINGS, LABELS, TEST_EMBEDDINGS, TEST_LABELS] {
        let path = dir.join(name);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        hasher.update(name.as_bytes());
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
    }
    Ok(hex::encode(hasher.finalize()))
}

pub fn save_dataset(dir: &Path, data: &Dataset, meta: Option<&SyntheticMetadata>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_embeddings(dir.join(EMBEDDINGS), &data.pool)?;
    write_labels(dir.join(LABELS), &data.labels)?;
    write_embeddings(dir.join(TEST_EMBEDDINGS), &data.test)?;
    write_labels(dir.join(TEST_LABELS), &data.test_labels)?;
    if let Some(meta) = meta {
        write_metadata(dir.join(METADATA), meta)?;
    }
    Ok(())
}

/// Loads a dataset directory. Ground-truth clusters are read from
/// `metadata.json` when present.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let pool = load_embeddings(dir.join(EMBEDDINGS))?;
    let labels = load_labels(dir.join(LABELS), pool.n())?;
    let test = load_embeddings(dir.join(TEST_EMBEDDINGS))?;
    let test_labels = load_labels(dir.join(TEST_LABELS), test.n())?;
    let meta = dir.join(METADATA);
    let cluster_ids = if meta.exists() {
        Some(SyntheticMetadata::load(meta)?.cluster_ids)
    } else {
        None
    };
    let data = Dataset {
        pool,
        labels,
        test,
        test_labels,
        cluster_ids,
    };
    data.check()?;
    Ok(data)
}

fn refuse_existing(paths: &[PathBuf], force: bool) -> Result<()> {
    if !force {
        if let Some(p) = paths.iter().find(|p| p.exists()) {
            return Err(Error::OutputExists(p.clone()));
        }
    }
    Ok(())
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let cfg = load_config(args.config.as_deref())?;
    let dir = args.out.clone().unwrap_or_else(|| cfg.dataset.dir.clone());
    refuse_existing(&[dir.join(EMBEDDINGS)], args.force)?;
    let generator = SyntheticGenerator::new(cfg.dataset.synth.clone())?;
    let data = Dataset::synthetic(&generator, cfg.dataset.test_majority)?;
    let meta = SyntheticMetadata {
        cluster_ids: data.cluster_ids.clone().unwrap_or_default(),
        spec: cfg.dataset.synth.clone(),
    };
    save_dataset(&dir, &data, Some(&meta))?;
    for stale in [INDEX, INDEX_INFO] {
        let p = dir.join(stale);
        if p.exists() {
            fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
        }
    }
    log::info!(
        "wrote {} pool and {} test instances to {}",
        data.pool.n(),
        data.test.n(),
        dir.display()
    );
    println!("{}", dataset_hash(&dir)?);
    Ok(())
}

fn build_index(dir: &Path, cfg: &ExperimentConfig, pool: &crate::data::EmbeddingMatrix) -> Result<VectorIndex> {
    let hash = dataset_hash(dir)?;
    let params = cfg.index.params();
    let started = std::time::Instant::now();
    let index = VectorIndex::build(pool, params)?;
    log::info!("built index over {} points in {:.1?}", pool.n(), started.elapsed());
    index.save(dir.join(INDEX))?;
    write_json(&dir.join(INDEX_INFO), &IndexInfo { dataset_hash: hash, params })?;
    Ok(index)
}

pub fn cmd_index(args: &IndexArgs) -> Result<()> {
    let cfg = load_config(args.config.as_deref())?;
    let dir = args.data.clone().unwrap_or_else(|| cfg.dataset.dir.clone());
    refuse_existing(&[dir.join(INDEX)], args.force)?;
    let data = load_dataset(&dir)?;
    build_index(&dir, &cfg, &data.pool)?;
    Ok(())
}

fn load_index(dir: &Path, hash: &str, pool: &crate::data::EmbeddingMatrix) -> Result<VectorIndex> {
    let info_path = dir.join(INDEX_INFO);
    let text = fs::read_to_string(&info_path).map_err(|e| Error::io(&info_path, e))?;
    let info: IndexInfo = serde_json::from_str(&text)?;
    if info.dataset_hash != hash {
        return Err(Error::DatasetMismatch(format!(
            "index was built for dataset {} but {} has hash {hash}",
            info.dataset_hash,
            dir.display()
        )));
    }
    VectorIndex::load(dir.join(INDEX), pool)
}

/// Configurations of every sweep member, one per (filter, seed) pair.
pub fn sweep(base: &ExperimentConfig, filters: &[FilterKind], seeds: u64) -> Vec<ExperimentConfig> {
    let kinds = if filters.is_empty() {
        vec![base.filter.kind]
    } else {
        filters.to_vec()
    };
    let mut out = Vec::new();
    for kind in kinds {
        for i in 0..seeds {
            let mut cfg = base.clone();
            if cfg.filter.kind != kind {
                cfg.filter.kind = kind;
                cfg.filter.label = None;
            }
            cfg.seeds = base.seeds.offset(i);
            out.push(cfg);
        }
    }
    out
}

pub fn run_dir(out: &Path, cfg: &ExperimentConfig, member: u64) -> PathBuf {
    out.join(cfg.method_label()).join(format!("seed-{member}"))
}

pub fn cmd_run(args: &RunArgs) -> Result<()> {
    let mut base = load_config(args.config.as_deref())?;
    if let Some(limit) = args.time_limit {
        base.run.time_limit_s = Some(limit);
        base.validate()?;
    }
    if args.seeds == 0 || args.jobs == 0 {
        return Err(Error::Config("--seeds and --jobs must be >= 1".into()));
    }
    let filters = args
        .filters
        .iter()
        .map(|f| FilterKind::parse(f))
        .collect::<Result<Vec<_>>>()?;
    let configs = sweep(&base, &filters, args.seeds);
    let dirs: Vec<PathBuf> = configs
        .iter()
        .enumerate()
        .map(|(i, c)| run_dir(&args.out, c, i as u64 % args.seeds))
        .collect();
    let mut guarded: Vec<PathBuf> = dirs.iter().map(|d| d.join(RESULT)).collect();
    guarded.push(args.out.join("summary.csv"));
    refuse_existing(&guarded, args.force)?;

    let dir = args.data.clone().unwrap_or_else(|| base.dataset.dir.clone());
    let data = load_dataset(&dir)?;
    let hash = dataset_hash(&dir)?;
    let exact;
    let index;
    let needs_index = configs.iter().any(|c| matches!(c.filter.kind, FilterKind::Anchoral | FilterKind::Seals));
    let source: &dyn NeighborSource = if base.index.exact || !needs_index {
        exact = ExactSearch::new(&data.pool)?;
        &exact
    } else if dir.join(INDEX).exists() {
        index = load_index(&dir, &hash, &data.pool)?;
        &index
    } else if args.build_index {
        index = build_index(&dir, &base, &data.pool)?;
        &index
    } else {
        return Err(Error::Index(format!(
            "no index in {} (run `anchoral index` or pass --build-index)",
            dir.display()
        )));
    };

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<ExperimentResult>>>> = Mutex::new((0..configs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..args.jobs.min(configs.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(cfg) = configs.get(i) else { break };
                let outcome = run_experiment(cfg, &data, source).and_then(|mut res| {
                    res.dataset_hash = Some(hash.clone());
                    let d = &dirs[i];
                    write_file(&d.join(ROUNDS), res.rounds_csv()?)?;
                    write_json(&d.join(EFFECTIVE_CONFIG), cfg)?;
                    write_json(&d.join(RESULT), &res)?;
                    log::info!("{}: minority auc {:.3}", d.display(), res.auc_minority);
                    Ok(res)
                });
                results.lock().expect("no panics while holding the lock")[i] = Some(outcome);
            });
        }
    });
    let results = results
        .into_inner()
        .expect("workers joined")
        .into_iter()
        .map(|r| r.expect("every member ran"))
        .collect::<Result<Vec<_>>>()?;
    write_report(&args.out, &results)?;
    Ok(())
}

fn write_report(out: &Path, results: &[ExperimentResult]) -> Result<()> {
    let report = build_report(results)?;
    write_file(&out.join("report.txt"), &report.text)?;
    write_file(&out.join("summary.csv"), &report.summary_csv)?;
    for (method, csv) in &report.curves {
        write_file(&out.join("curves").join(format!("{method}.csv")), csv)?;
    }
    print!("{}", report.text);
    Ok(())
}

/// Every `result.json` under `path`, or `path` itself if it is a file.
pub fn find_results(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut found = Vec::new();
    let entries = fs::read_dir(path).map_err(|e| Error::io(path, e))?;
    let mut entries: Vec<PathBuf> = entries
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(path, err)))
        .collect::<Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            found.extend(find_results(&p)?);
        } else if p.file_name().is_some_and(|n| n == RESULT) {
            found.push(p);
        }
    }
    Ok(found)
}

pub fn load_result(path: &Path) -> Result<ExperimentResult> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn cmd_report(args: &ReportArgs) -> Result<()> {
    let mut results = Vec::new();
    for input in &args.inputs {
        for path in find_results(input)? {
            results.push(load_result(&path)?);
        }
    }
    if results.is_empty() {
        return Err(Error::Config("no result files found".into()));
    }
    match &args.out {
        Some(out) => write_report(out, &results),
        None => {
            print!("{}", build_report(&results)?.text);
            Ok(())
        }
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Index(a) => cmd_index(a),
        Command::Run(a) => cmd_run(a),
        Command::Report(a) => cmd_report(a),
    }
}

/// Formats the single-line error report.
pub fn error_line(e: &Error) -> String {
    let msg = e.to_string().replace(['\n', '\t'], " ");
    format!("error\t{}\t{}", e.kind(), msg)
}

pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ANCHORAL_LOG", "warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            ExitCode::FAILURE
        }
    }
}
