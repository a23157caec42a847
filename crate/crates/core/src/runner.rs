//! The active learning loop, its per-round log, learning-curve AUC, and
//! aggregation of seeded runs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::anchor::select_anchors;
use crate::config::{ExperimentConfig, FilterKind, Timing};
use crate::data::{build_initial_split, ClassLayout, DatasetState, EmbeddingMatrix, InitialSplit, LabelStore, SyntheticGenerator};
use crate::error::{Error, Result};
use crate::filter::{anchoral_filter, noop_filter, random_subset_filter, SealsState, Subpool};
use crate::index::NeighborSource;
use crate::model::{class_f1, fit, macro_f1, ProxyClassifier, TrainConfig};
use crate::rng;
use crate::strategy;

const ANCHOR_STREAM: u64 = 0;
const FILTER_STREAM: u64 = 1;
const STRATEGY_STREAM: u64 = 2;

pub const ROUNDS_HEADER: [&str; 10] = [
    "round",
    "labeled_total",
    "labeled_per_class",
    "minority_f1",
    "majority_f1",
    "selection_time_s",
    "subpool_size",
    "subpool_minority_frac",
    "new_minority",
    "discovered_clusters",
];

/// Pool, held-out test split, and (for synthetic data) ground-truth
/// clusters. Only the runner's recorder reads `labels` directly.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub pool: EmbeddingMatrix,
    pub labels: LabelStore,
    pub test: EmbeddingMatrix,
    pub test_labels: LabelStore,
    pub cluster_ids: Option<Vec<u32>>,
}

impl Dataset {
    pub fn synthetic(generator: &SyntheticGenerator, test_majority: usize) -> Result<Self> {
        let pool = generator.pool()?;
        let test = generator.test_split(test_majority)?;
        Ok(Self {
            pool: pool.embeddings,
            labels: pool.labels,
            test: test.embeddings,
            test_labels: test.labels,
            cluster_ids: Some(pool.cluster_ids),
        })
    }

    pub fn check(&self) -> Result<()> {
        let mismatch = |m: String| Err(Error::DatasetMismatch(m));
        if self.pool.n() != self.labels.len() {
            return mismatch(format!("{} embeddings but {} labels", self.pool.n(), self.labels.len()));
        }
        if self.test.n() != self.test_labels.len() {
            return mismatch(format!("{} test embeddings but {} test labels", self.test.n(), self.test_labels.len()));
        }
        if self.pool.d() != self.test.d() {
            return mismatch(format!("pool has d={} but test has d={}", self.pool.d(), self.test.d()));
        }
        if self.labels.classes() != self.test_labels.classes() {
            return mismatch("pool and test splits disagree on the class layout".into());
        }
        if let Some(c) = &self.cluster_ids {
            if c.len() != self.pool.n() {
                return mismatch(format!("{} cluster ids for {} instances", c.len(), self.pool.n()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// 0 is the model trained on the initial set; selection rounds follow.
    pub round: usize,
    pub labeled_total: usize,
    pub labeled_per_class: Vec<usize>,
    pub class_f1: Vec<f64>,
    pub minority_f1: f64,
    pub majority_f1: f64,
    /// Filter plus strategy, excluding training.
    pub selection_time_s: f64,
    /// The filter's share of `selection_time_s`.
    pub filter_time_s: f64,
    pub subpool_size: usize,
    pub subpool_minority_frac: f64,
    pub new_minority: usize,
    pub new_labels: usize,
    /// Minority clusters with at least one labelled instance so far.
    pub discovered_clusters: Vec<u32>,
    /// Fewer than `b` candidates were available.
    pub short: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Rounds,
    PoolExhausted,
    TimeLimit,
    EmptySubpool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub method: String,
    pub config: ExperimentConfig,
    pub dataset_hash: Option<String>,
    pub majority_class: u32,
    pub rounds: Vec<RoundRecord>,
    pub auc_minority: f64,
    pub auc_majority: f64,
    pub total_selection_time_s: f64,
    pub total_filter_time_s: f64,
    pub completed_budget: usize,
    pub stop: StopReason,
}

impl ExperimentResult {
    pub fn completed_rounds(&self) -> usize {
        self.rounds.len().saturating_sub(1)
    }

    pub fn labeled_minority(&self) -> usize {
        let last = self.rounds.last().expect("round 0 always present");
        minority_count(&last.labeled_per_class, self.majority_class)
    }

    /// Rounds `0..=t` with every derived total recomputed.
    pub fn truncated(&self, t: usize) -> Result<Self> {
        if t > self.completed_rounds() {
            return Err(Error::Domain(format!(
                "cannot truncate {} completed rounds to {t}",
                self.completed_rounds()
            )));
        }
        let rounds = self.rounds[..=t].to_vec();
        Ok(Self {
            auc_minority: curve_auc(&rounds, |r| r.minority_f1)?,
            auc_majority: curve_auc(&rounds, |r| r.majority_f1)?,
            total_selection_time_s: rounds.iter().map(|r| r.selection_time_s).sum(),
            total_filter_time_s: rounds.iter().map(|r| r.filter_time_s).sum(),
            completed_budget: rounds.iter().map(|r| r.new_labels).sum(),
            rounds,
            ..self.clone()
        })
    }

    pub fn rounds_csv(&self) -> Result<Vec<u8>> {
        write_rounds_csv(&self.rounds)
    }
}

/// Trapezoidal area under `ys` over strictly increasing `xs`.
pub fn auc_trapezoid(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Domain(format!(
            "need two or more points of equal length, got {} xs and {} ys",
            xs.len(),
            ys.len()
        )));
    }
    if xs.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Domain("xs must be strictly increasing".into()));
    }
    Ok(xs
        .windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| (x[1] - x[0]) * (y[0] + y[1]) / 2.0)
        .sum())
}

/// AUC over `labeled_total`; a curve with a single point has zero area.
pub fn curve_auc(rounds: &[RoundRecord], metric: impl Fn(&RoundRecord) -> f64) -> Result<f64> {
    if rounds.len() < 2 {
        return Ok(0.0);
    }
    let xs: Vec<f64> = rounds.iter().map(|r| r.labeled_total as f64).collect();
    let ys: Vec<f64> = rounds.iter().map(metric).collect();
    auc_trapezoid(&xs, &ys)
}

fn minority_count(per_class: &[usize], majority: u32) -> usize {
    per_class
        .iter()
        .enumerate()
        .filter(|&(c, _)| c as u32 != majority)
        .map(|(_, n)| n)
        .sum()
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(";")
}

pub fn write_rounds_csv(rounds: &[RoundRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(ROUNDS_HEADER)?;
    for r in rounds {
        w.write_record([
            r.round.to_string(),
            r.labeled_total.to_string(),
            join(&r.labeled_per_class),
            r.minority_f1.to_string(),
            r.majority_f1.to_string(),
            r.selection_time_s.to_string(),
            r.subpool_size.to_string(),
            r.subpool_minority_frac.to_string(),
            r.new_minority.to_string(),
            join(&r.discovered_clusters),
        ])?;
    }
    w.into_inner().map_err(|e| Error::io("rounds.csv", e.into_error()))
}

struct Evaluation {
    class_f1: Vec<f64>,
    minority_f1: f64,
    majority_f1: f64,
}

fn evaluate(model: &ProxyClassifier, data: &Dataset, layout: ClassLayout) -> Result<Evaluation> {
    let ids: Vec<usize> = (0..data.test.n()).collect();
    let predictions = model.predict(&data.test, &ids);
    let truth = data.test_labels.labels();
    let minority: Vec<u32> = layout.minority_classes().collect();
    Ok(Evaluation {
        class_f1: (0..layout.num_classes).map(|c| class_f1(&predictions, truth, c)).collect(),
        minority_f1: macro_f1(&predictions, truth, &minority)?,
        majority_f1: class_f1(&predictions, truth, layout.majority_class),
    })
}

fn train(data: &Dataset, state: &DatasetState, layout: ClassLayout, cfg: &ExperimentConfig, round: usize) -> Result<ProxyClassifier> {
    let train_cfg = TrainConfig {
        init_seed: rng::derive_seed(cfg.seeds.model_init, &[round as u64]),
        shuffle_seed: rng::derive_seed(cfg.seeds.data_order, &[round as u64]),
        ..cfg.train
    };
    fit(&data.pool, state, layout, &train_cfg)
}

enum FilterState {
    Anchoral,
    Seals(SealsState),
    RandomSubset,
    Noop,
}

/// Runs the loop described by `cfg` on `data`, retrieving neighbours from
/// `source` (built over `data.pool`). Deterministic given the seeds, except
/// for selection times when `loop.timing` is `wall`.
pub fn run_experiment(cfg: &ExperimentConfig, data: &Dataset, source: &dyn NeighborSource) -> Result<ExperimentResult> {
    cfg.validate()?;
    data.check()?;
    if source.len() != data.pool.n() {
        return Err(Error::DatasetMismatch(format!(
            "index covers {} instances but the pool has {}",
            source.len(),
            data.pool.n()
        )));
    }
    let started = Instant::now();
    let layout = data.labels.classes();
    let minority_candidates = match (&cfg.dataset.initial_clusters, &data.cluster_ids) {
        (None, _) => None,
        (Some(_), None) => {
            return Err(Error::Config(
                "dataset.initial_clusters needs ground-truth cluster ids".into(),
            ))
        }
        (Some(keep), Some(clusters)) => Some(
            (0..clusters.len())
                .filter(|&i| keep.contains(&clusters[i]))
                .collect::<BTreeSet<usize>>(),
        ),
    };
    let split = InitialSplit {
        n_init: cfg.run.n_init,
        per_minority: cfg.run.per_minority,
        seed: cfg.seeds.initial_set,
        minority_candidates,
    };
    let mut state = build_initial_split(&data.labels, &split)?;
    let b = cfg.run.query_size();
    let wall = cfg.run.timing == Timing::Wall;

    let mut discovered = BTreeSet::new();
    let note_discoveries = |ids: &[usize], discovered: &mut BTreeSet<u32>| {
        if let Some(clusters) = &data.cluster_ids {
            for &i in ids {
                if data.labels.is_minority(data.labels.label(i)) {
                    discovered.insert(clusters[i]);
                }
            }
        }
    };
    let initial: Vec<usize> = state.labeled_ids().iter().copied().collect();
    note_discoveries(&initial, &mut discovered);

    let mut model = train(data, &state, layout, cfg, 0)?;
    let eval = evaluate(&model, data, layout)?;
    let mut rounds = vec![RoundRecord {
        round: 0,
        labeled_total: state.labeled_len(),
        labeled_per_class: state.labeled_counts(),
        class_f1: eval.class_f1,
        minority_f1: eval.minority_f1,
        majority_f1: eval.majority_f1,
        selection_time_s: 0.0,
        filter_time_s: 0.0,
        subpool_size: 0,
        subpool_minority_frac: 0.0,
        new_minority: 0,
        new_labels: 0,
        discovered_clusters: discovered.iter().copied().collect(),
        short: false,
    }];

    let mut filter = match cfg.filter.kind {
        FilterKind::Anchoral => FilterState::Anchoral,
        FilterKind::Seals => FilterState::Seals(SealsState::new(cfg.filter.seals_k)),
        FilterKind::RandomSubset => FilterState::RandomSubset,
        FilterKind::Noop => FilterState::Noop,
    };
    let anchor_cfg = cfg.filter.anchor_config();
    let mut newly: Vec<usize> = Vec::new();
    let mut stop = StopReason::Rounds;

    for t in 1..=cfg.run.rounds {
        if let Some(limit) = cfg.run.time_limit_s {
            if started.elapsed().as_secs_f64() >= limit {
                stop = StopReason::TimeLimit;
                break;
            }
        }
        if state.pool_len() == 0 {
            stop = StopReason::PoolExhausted;
            break;
        }
        let round_seed = rng::derive_seed(cfg.seeds.selection, &[t as u64]);
        let clock = Instant::now();
        let subpool: Subpool = match &mut filter {
            FilterState::Anchoral => {
                let anchors = select_anchors(
                    &state,
                    &data.pool,
                    &anchor_cfg,
                    layout,
                    Some(&model),
                    rng::derive_seed(round_seed, &[ANCHOR_STREAM]),
                )?;
                anchoral_filter(&anchors, source, &state, cfg.filter.neighbours, cfg.filter.max_subpool)?
            }
            FilterState::Seals(seals) => seals.update(source, &state, &newly)?,
            FilterState::RandomSubset => {
                let mut r = rng::stream(round_seed, &[FILTER_STREAM]);
                random_subset_filter(&state, cfg.filter.subset_size, &mut r)
            }
            FilterState::Noop => noop_filter(&state),
        };
        let filter_time = clock.elapsed().as_secs_f64();
        if subpool.is_empty() {
            stop = StopReason::EmptySubpool;
            break;
        }
        let mut r = rng::stream(round_seed, &[STRATEGY_STREAM]);
        let picked = strategy::select(cfg.strategy.kind, &model, &data.pool, &subpool.ids, b, &mut r)?;
        let selection_time = clock.elapsed().as_secs_f64();
        let short = picked.ids.len() < b;
        if short {
            log::warn!("round {t}: only {} of {b} candidates available", picked.ids.len());
        }

        let minority_in_subpool = subpool.ids.iter().filter(|&&i| data.labels.is_minority(data.labels.label(i))).count();
        let new_minority = picked.ids.iter().filter(|&&i| data.labels.is_minority(data.labels.label(i))).count();
        state.reveal(&data.labels, &picked.ids)?;
        note_discoveries(&picked.ids, &mut discovered);

        model = train(data, &state, layout, cfg, t)?;
        let eval = evaluate(&model, data, layout)?;
        log::debug!(
            "round {t}: labelled {}, minority f1 {:.4}, subpool {}",
            state.labeled_len(),
            eval.minority_f1,
            subpool.len()
        );
        rounds.push(RoundRecord {
            round: t,
            labeled_total: state.labeled_len(),
            labeled_per_class: state.labeled_counts(),
            class_f1: eval.class_f1,
            minority_f1: eval.minority_f1,
            majority_f1: eval.majority_f1,
            selection_time_s: if wall { selection_time } else { 0.0 },
            filter_time_s: if wall { filter_time } else { 0.0 },
            subpool_size: subpool.len(),
            subpool_minority_frac: minority_in_subpool as f64 / subpool.len() as f64,
            new_minority,
            new_labels: picked.ids.len(),
            discovered_clusters: discovered.iter().copied().collect(),
            short,
        });
        newly = picked.ids;
    }

    let result = ExperimentResult {
        method: cfg.method_label(),
        config: cfg.clone(),
        dataset_hash: None,
        majority_class: layout.majority_class,
        auc_minority: 0.0,
        auc_majority: 0.0,
        total_selection_time_s: 0.0,
        total_filter_time_s: 0.0,
        completed_budget: 0,
        stop,
        rounds,
    };
    let t = result.completed_rounds();
    result.truncated(t)
}

/// Median and interquartile range with linearly interpolated quantiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
}

/// Quantile of sorted data, interpolating between closest ranks.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn describe(values: &[f64]) -> Result<Stat> {
    if values.is_empty() {
        return Err(Error::Domain("no values to summarise".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let (q1, q3) = (quantile(&v, 0.25), quantile(&v, 0.75));
    Ok(Stat {
        median: quantile(&v, 0.5),
        q1,
        q3,
        iqr: q3 - q1,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub method: String,
    pub runs: usize,
    pub budget: Stat,
    pub auc_majority: Stat,
    pub auc_minority: Stat,
    pub time_s: Stat,
    pub labeled_minority: Stat,
}

pub fn aggregate_runs(results: &[ExperimentResult]) -> Result<Summary> {
    let first = results.first().ok_or_else(|| Error::Domain("no runs to aggregate".into()))?;
    let of = |f: &dyn Fn(&ExperimentResult) -> f64| describe(&results.iter().map(f).collect::<Vec<_>>());
    Ok(Summary {
        method: first.method.clone(),
        runs: results.len(),
        budget: of(&|r| r.completed_budget as f64)?,
        auc_majority: of(&|r| r.auc_majority)?,
        auc_minority: of(&|r| r.auc_minority)?,
        time_s: of(&|r| r.total_selection_time_s)?,
        labeled_minority: of(&|r| r.labeled_minority() as f64)?,
    })
}

/// Truncates every run to the largest round all of them completed.
pub fn budget_matched(results: &[ExperimentResult]) -> Result<(usize, Vec<ExperimentResult>)> {
    let t = results
        .iter()
        .map(ExperimentResult::completed_rounds)
        .min()
        .ok_or_else(|| Error::Domain("no runs to match".into()))?;
    if t == 0 {
        let culprit = results.iter().find(|r| r.completed_rounds() == 0).expect("min is 0");
        return Err(Error::Domain(format!("{} completed no rounds", culprit.method)));
    }
    Ok((t, results.iter().map(|r| r.truncated(t)).collect::<Result<_>>()?))
}

/// Groups runs by method, in name order.
pub fn group_by_method(results: &[ExperimentResult]) -> BTreeMap<String, Vec<ExperimentResult>> {
    let mut groups: BTreeMap<String, Vec<ExperimentResult>> = BTreeMap::new();
    for r in results {
        groups.entry(r.method.clone()).or_default().push(r.clone());
    }
    groups
}

/// Rendered report: a text table, its CSV twin, and per-method curves.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub text: String,
    pub summary_csv: Vec<u8>,
    pub curves: Vec<(String, Vec<u8>)>,
}

const SUMMARY_HEADER: [&str; 14] = [
    "variant",
    "method",
    "runs",
    "rounds",
    "budget_median",
    "budget_iqr",
    "majority_auc_median",
    "majority_auc_iqr",
    "minority_auc_median",
    "minority_auc_iqr",
    "time_s_median",
    "time_s_iqr",
    "labeled_minority_median",
    "labeled_minority_iqr",
];

fn table(out: &mut String, title: &str, rows: &[(Summary, usize)]) {
    let _ = writeln!(out, "{title}");
    let _ = writeln!(
        out,
        "{:<28} {:>4} {:>18} {:>22} {:>22} {:>18} {:>16}",
        "method", "runs", "budget", "majority auc", "minority auc", "time s", "minority labels"
    );
    let pm = |s: &Stat, p: usize| format!("{:.p$} ± {:.p$}", s.median, s.iqr);
    for (s, _) in rows {
        let _ = writeln!(
            out,
            "{:<28} {:>4} {:>18} {:>22} {:>22} {:>18} {:>16}",
            s.method,
            s.runs,
            pm(&s.budget, 0),
            pm(&s.auc_majority, 2),
            pm(&s.auc_minority, 2),
            pm(&s.time_s, 3),
            pm(&s.labeled_minority, 0),
        );
    }
    let _ = writeln!(out);
}

fn summary_row(w: &mut csv::Writer<Vec<u8>>, variant: &str, s: &Summary, rounds: usize) -> Result<()> {
    let f = |v: f64| v.to_string();
    w.write_record([
        variant.to_owned(),
        s.method.clone(),
        s.runs.to_string(),
        rounds.to_string(),
        f(s.budget.median),
        f(s.budget.iqr),
        f(s.auc_majority.median),
        f(s.auc_majority.iqr),
        f(s.auc_minority.median),
        f(s.auc_minority.iqr),
        f(s.time_s.median),
        f(s.time_s.iqr),
        f(s.labeled_minority.median),
        f(s.labeled_minority.iqr),
    ])?;
    Ok(())
}

/// Per-round medians across runs: labelled minority proportion and subpool
/// minority proportion.
fn curve_csv(runs: &[ExperimentResult]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["round", "labeled_total", "labeled_minority_prop", "subpool_minority_frac"])?;
    let longest = runs.iter().map(|r| r.rounds.len()).max().unwrap_or(0);
    for t in 0..longest {
        let at: Vec<(u32, &RoundRecord)> = runs
            .iter()
            .filter_map(|r| r.rounds.get(t).map(|x| (r.majority_class, x)))
            .collect();
        let total = describe(&at.iter().map(|(_, r)| r.labeled_total as f64).collect::<Vec<_>>())?;
        let prop = describe(
            &at.iter()
                .map(|(m, r)| minority_count(&r.labeled_per_class, *m) as f64 / r.labeled_total as f64)
                .collect::<Vec<_>>(),
        )?;
        let sub = describe(&at.iter().map(|(_, r)| r.subpool_minority_frac).collect::<Vec<_>>())?;
        w.write_record([t.to_string(), total.median.to_string(), prop.median.to_string(), sub.median.to_string()])?;
    }
    w.into_inner().map_err(|e| Error::io("curve", e.into_error()))
}

/// Overall and budget-matched summaries of `results`, grouped by method.
/// Refuses runs recorded against different datasets.
pub fn build_report(results: &[ExperimentResult]) -> Result<Report> {
    let hashes: BTreeSet<Option<&str>> = results.iter().map(|r| r.dataset_hash.as_deref()).collect();
    if hashes.len() > 1 {
        return Err(Error::DatasetMismatch(format!(
            "runs were produced from {} different datasets",
            hashes.len()
        )));
    }
    let groups = group_by_method(results);
    if groups.is_empty() {
        return Err(Error::Domain("no runs to report".into()));
    }
    let mut text = String::new();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SUMMARY_HEADER)?;

    let mut overall = Vec::new();
    for runs in groups.values() {
        let rounds = runs.iter().map(ExperimentResult::completed_rounds).min().unwrap_or(0);
        overall.push((aggregate_runs(runs)?, rounds));
    }
    table(&mut text, "Overall", &overall);
    for (s, rounds) in &overall {
        summary_row(&mut w, "overall", s, *rounds)?;
    }

    let (t, matched) = budget_matched(results)?;
    let mut rows = Vec::new();
    for runs in group_by_method(&matched).values() {
        rows.push((aggregate_runs(runs)?, t));
    }
    table(&mut text, &format!("Budget-matched (rounds 0..={t})"), &rows);
    for (s, rounds) in &rows {
        summary_row(&mut w, "budget_matched", s, *rounds)?;
    }

    let summary_csv = w.into_inner().map_err(|e| Error::io("summary.csv", e.into_error()))?;
    let curves = groups
        .iter()
        .map(|(m, runs)| Ok((m.clone(), curve_csv(runs)?)))
        .collect::<Result<_>>()?;
    Ok(Report {
        text,
        summary_csv,
        curves,
    })
}

impl Report {
    pub fn write_text(&self, mut out: impl Write) -> std::io::Result<()> {
        out.write_all(self.text.as_bytes())
    }
}
