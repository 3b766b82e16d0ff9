use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use tabmoe::data::{self, DatasetBundle};
use tabmoe::eval::{self, rank_models, ScoreSummary, Stats, INFERENCE_REPETITIONS};
use tabmoe::model::{count_params, load_checkpoint, save_checkpoint, Family, Model};
use tabmoe::pipeline::{encode_for, eval_rng, train_on};
use tabmoe::preprocess::{EncodedBundle, Preprocessor};
use tabmoe::train::{score_split, StopReason, TrainReport};
use tabmoe::tune::{self, SpacePreset, TrialOutcome, TrialSpec};

use crate::artifacts::{read_json, read_jsonl, write_json, write_jsonl, write_text};
use crate::config::{slug, ModelEntry, RunConfig};
use crate::error::{CliError, CliResult};

const TUNE_HINT: &str = "run `tabmoe tune` first";
const TRAIN_HINT: &str = "run `tabmoe train` first";

/// Best trial of a search, as consumed by later commands.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TunedConfig {
    pub family: Family,
    pub embedding: bool,
    pub trial: usize,
    pub val_score: f64,
    pub spec: TrialSpec,
    pub budget: usize,
    pub search_seed: u64,
    pub space: SpacePreset,
}

/// Training report without its wall time, for deterministic outputs.
#[derive(Clone, Debug, PartialEq, Serialize)]
struct ReportView<'a> {
    seed: u64,
    epochs_run: usize,
    best_epoch: usize,
    best_val_score: f64,
    stop_reason: StopReason,
    #[serde(skip_serializing_if = "Option::is_none")]
    diagnostic: Option<&'a str>,
    train_loss: &'a [f64],
    val_score: &'a [f64],
}

impl<'a> ReportView<'a> {
    fn new(seed: u64, r: &'a TrainReport) -> Self {
        ReportView {
            seed,
            epochs_run: r.epochs_run,
            best_epoch: r.best_epoch,
            best_val_score: r.best_val_score,
            stop_reason: r.stop_reason,
            diagnostic: r.diagnostic.as_deref(),
            train_loss: &r.train_loss,
            val_score: &r.val_score,
        }
    }
}

fn load_bundle(cfg: &RunConfig) -> CliResult<DatasetBundle> {
    data::load(&cfg.dataset).map_err(|e| CliError::Input(format!("dataset {}: {e}", cfg.dataset.display())))
}

fn tune_dir(out: &Path, entry: &ModelEntry) -> PathBuf {
    out.join("tune").join(entry.tune_slug())
}

fn load_tuned(out: &Path, entry: &ModelEntry) -> CliResult<TunedConfig> {
    let path = tune_dir(out, entry).join("best.json");
    read_json(&path, TUNE_HINT).map_err(|e| e.context(format!("tuned config for {}", entry.display_name())))
}

/// Sample counts to score for this family.
fn mc_values(cfg: &RunConfig, family: Family) -> Vec<usize> {
    if family == Family::Ggmoe {
        cfg.mc_values()
    } else {
        vec![1]
    }
}

pub fn tune(cfg: &RunConfig) -> CliResult<()> {
    let bundle = load_bundle(cfg)?;
    let mut done = BTreeSet::new();
    let mut failed = Vec::new();
    for entry in &cfg.models {
        if !done.insert(entry.tune_slug()) {
            continue;
        }
        let space = tune::space(cfg.space, entry.family, entry.embedding);
        let objective = |spec: &TrialSpec, seed: u64| -> tabmoe::Result<TrialOutcome> {
            let data = encode_for(&bundle, &spec.arch)?;
            let train = cfg.train_config(spec.learning_rate, spec.weight_decay, seed);
            let t = train_on(&data, &spec.arch, &train, seed)?;
            Ok(TrialOutcome {
                val_score: t.report.best_val_score,
                n_params: count_params(t.model.config()),
                epochs_run: t.report.epochs_run,
            })
        };
        let name = entry.display_name();
        log::info!("tuning {name}: {} trials", cfg.budget);
        let result = tune::run_search(&space, cfg.budget, cfg.search_seed, cfg.workers, objective)?;
        let dir = tune_dir(&cfg.out, entry);
        write_jsonl(&dir.join("trials.jsonl"), &result.trials)?;
        write_json(&dir.join("space.json"), &space)?;
        write_json(&dir.join("timings.json"), &BTreeMap::from([("trial_wall_ms", &result.wall_ms)]))?;
        match result.best_trial() {
            Some(best) => {
                let tuned = TunedConfig {
                    family: entry.family,
                    embedding: entry.embedding,
                    trial: best.trial,
                    val_score: best.val_score.expect("successful trials carry a score"),
                    spec: best.spec.clone(),
                    budget: cfg.budget,
                    search_seed: cfg.search_seed,
                    space: cfg.space,
                };
                write_json(&dir.join("best.json"), &tuned)?;
                println!("{name}: best trial {} with validation score {:.6}", tuned.trial, tuned.val_score);
            }
            None => failed.push(name),
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Numeric(format!("every trial failed for {}", failed.join(", "))))
    }
}

fn train_dir(out: &Path, id: &str) -> PathBuf {
    out.join("train").join(slug(id))
}

pub fn train(cfg: &RunConfig) -> CliResult<()> {
    let bundle = load_bundle(cfg)?;
    let seed = cfg.seeds.base;
    for (entry, id) in cfg.models.iter().zip(cfg.model_ids()) {
        let tuned = load_tuned(&cfg.out, entry)?;
        let arch = &tuned.spec.arch;
        let data = encode_for(&bundle, arch)?;
        let train = cfg.train_config(tuned.spec.learning_rate, tuned.spec.weight_decay, seed);
        let t = train_on(&data, arch, &train, seed).map_err(|e| CliError::from(e).context(&id))?;
        let dir = train_dir(&cfg.out, &id);
        save_checkpoint(&dir.join("model.ckpt"), t.model.config(), t.model.params(), seed)?;
        t.preprocessor.save(&dir.join("preprocessor.json"))?;
        write_json(&dir.join("report.json"), &ReportView::new(seed, &t.report))?;
        write_json(&dir.join("timings.json"), &BTreeMap::from([("train_ms", t.report.wall_time_ms)]))?;
        println!(
            "{id}: {} epochs, best epoch {}, validation score {:.6}",
            t.report.epochs_run, t.report.best_epoch, t.report.best_val_score
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct Evaluation {
    model: String,
    seed: u64,
    n_params: usize,
    mc_samples: usize,
    val_score: f64,
    test_score: f64,
}

fn load_trained(out: &Path, id: &str) -> CliResult<(Model, Preprocessor, u64)> {
    let dir = train_dir(out, id);
    let ckpt = dir.join("model.ckpt");
    let pre_path = dir.join("preprocessor.json");
    for path in [&ckpt, &pre_path] {
        if !path.is_file() {
            return Err(CliError::Missing(format!("{} not found; {TRAIN_HINT}", path.display())));
        }
    }
    let (header, params) = load_checkpoint(&ckpt)?;
    let preprocessor = Preprocessor::load(&pre_path)?;
    Ok((Model::new(header.config, params)?, preprocessor, header.seed))
}

pub fn evaluate(cfg: &RunConfig) -> CliResult<()> {
    let bundle = load_bundle(cfg)?;
    let mut rows = Vec::new();
    for (entry, id) in cfg.models.iter().zip(cfg.model_ids()) {
        let (model, pre, seed) = load_trained(&cfg.out, &id)?;
        let val = pre.transform(&bundle.val)?;
        let test = pre.transform(&bundle.test)?;
        for mc in mc_values(cfg, entry.family) {
            let rng = eval_rng(seed);
            rows.push(Evaluation {
                model: id.clone(),
                seed,
                n_params: count_params(model.config()),
                mc_samples: mc,
                val_score: score_split(&model, &val, pre.target, mc, &rng)?,
                test_score: score_split(&model, &test, pre.target, mc, &rng)?,
            });
        }
    }
    for r in &rows {
        println!("{} (mc={}): validation {:.6}, test {:.6}", r.model, r.mc_samples, r.val_score, r.test_score);
    }
    write_json(&cfg.out.join("evaluate.json"), &rows)
}

/// Everything one benchmark seed produces.
struct SeedRun {
    report: TrainReport,
    /// Test score per sample count, aligned with the model's `mc_values`.
    scores: Vec<f64>,
    /// One inference pass per sample count, in milliseconds.
    infer_ms: Vec<f64>,
}

fn run_seed(data: &EncodedBundle, tuned: &TunedConfig, cfg: &RunConfig, mcs: &[usize], seed: u64) -> tabmoe::Result<SeedRun> {
    let train = cfg.train_config(tuned.spec.learning_rate, tuned.spec.weight_decay, seed);
    let t = train_on(data, &tuned.spec.arch, &train, seed)?;
    let mut scores = Vec::new();
    let mut infer_ms = Vec::new();
    for &mc in mcs {
        let start = Instant::now();
        let s = t.score(&data.test, mc, &eval_rng(seed))?;
        infer_ms.push(start.elapsed().as_secs_f64() * 1e3);
        if !s.is_finite() {
            return Err(tabmoe::Error::Numeric(format!("test score {s}")));
        }
        scores.push(s);
    }
    Ok(SeedRun { report: t.report, scores, infer_ms })
}

#[derive(Serialize)]
struct ModelTimings {
    train_ms: Stats,
    /// Keyed by sample count.
    inference_ms: BTreeMap<usize, Stats>,
}

pub fn benchmark(cfg: &RunConfig) -> CliResult<()> {
    let bundle = load_bundle(cfg)?;
    let ids = cfg.model_ids();
    // fail fast on missing artifacts before any training
    let tuned: Vec<TunedConfig> = cfg.models.iter().map(|e| load_tuned(&cfg.out, e)).collect::<CliResult<_>>()?;
    let seeds: Vec<u64> = (0..cfg.seeds.count as u64).map(|i| cfg.seeds.base + i).collect();

    let mut summaries = Vec::new();
    let mut mc_compare: BTreeMap<String, Vec<ScoreSummary>> = BTreeMap::new();
    let mut reports: BTreeMap<String, Vec<ReportView>> = BTreeMap::new();
    let mut runs_by_model = Vec::new();
    let mut timings = BTreeMap::new();
    let mut failed = Vec::new();
    for ((entry, id), tuned) in cfg.models.iter().zip(&ids).zip(&tuned) {
        let data = encode_for(&bundle, &tuned.spec.arch)?;
        let mcs = mc_values(cfg, entry.family);
        log::info!("benchmarking {id} over {} seeds", seeds.len());
        let runs = eval::run_parallel(cfg.workers, &seeds, |&s| run_seed(&data, tuned, cfg, &mcs, s))?;
        let ok: Vec<(u64, SeedRun)> = seeds
            .iter()
            .zip(runs)
            .filter_map(|(&s, r)| match r {
                Ok(run) => Some((s, run)),
                Err(e) => {
                    log::warn!("{id}: seed {s} failed: {e}");
                    None
                }
            })
            .collect();
        let failed_seeds: Vec<u64> = seeds.iter().copied().filter(|s| !ok.iter().any(|(o, _)| o == s)).collect();
        if ok.is_empty() {
            failed.push(id.clone());
            continue;
        }
        let ok_seeds: Vec<u64> = ok.iter().map(|(s, _)| *s).collect();
        for (k, &mc) in mcs.iter().enumerate() {
            let scores = ok.iter().map(|(_, r)| r.scores[k]).collect();
            let model_id = if k == 0 { id.clone() } else { format!("{id} (mc={mc})") };
            let mut summary = ScoreSummary::from_scores(model_id, ok_seeds.clone(), scores)?;
            summary.failed_seeds = failed_seeds.clone();
            if k == 0 {
                summaries.push(summary.clone());
            }
            if entry.family == Family::Ggmoe {
                mc_compare.entry(id.clone()).or_default().push(summary);
            }
        }
        let train_ms: Vec<f64> = ok.iter().map(|(_, r)| r.report.wall_time_ms).collect();
        let inference_ms = mcs
            .iter()
            .enumerate()
            .map(|(k, &mc)| (mc, eval::summarize(&ok.iter().map(|(_, r)| r.infer_ms[k]).collect::<Vec<_>>())))
            .collect();
        timings.insert(id.clone(), ModelTimings { train_ms: eval::summarize(&train_ms), inference_ms });
        runs_by_model.push((id.clone(), ok));
    }
    for (id, ok) in &runs_by_model {
        reports.insert(id.clone(), ok.iter().map(|(s, r)| ReportView::new(*s, &r.report)).collect());
    }

    let dir = cfg.out.join("benchmark");
    write_json(&dir.join("run_config.json"), cfg)?;
    write_json(&dir.join("tuned.json"), &ids.iter().cloned().zip(tuned.iter().cloned()).collect::<BTreeMap<_, _>>())?;
    write_json(&dir.join("summaries.json"), &summaries)?;
    write_json(&dir.join("reports.json"), &reports)?;
    if !mc_compare.is_empty() {
        write_json(&dir.join("mc_compare.json"), &mc_compare)?;
    }
    write_json(&dir.join("timings.json"), &timings)?;
    let timing_rows: Vec<(String, Stats)> = timings
        .iter()
        .flat_map(|(id, t)| {
            std::iter::once((format!("{id} train"), t.train_ms.clone())).chain(
                t.inference_ms
                    .iter()
                    .map(move |(mc, s)| (format!("{id} inference (mc={mc})"), s.clone())),
            )
        })
        .collect();
    write_text(&dir.join("timings.txt"), &eval::stats_text_table(&timing_rows, "ms", 3))?;
    if !summaries.is_empty() {
        let table = rank_models(&summaries)?;
        write_rank(&dir, &table)?;
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Numeric(format!("every seed failed for {}", failed.join(", "))))
    }
}

fn write_rank(dir: &Path, table: &eval::RankTable) -> CliResult<()> {
    let text = eval::rank_text_table(table);
    print!("{text}");
    write_json(&dir.join("rank.json"), table)?;
    write_text(&dir.join("rank.txt"), &text)?;
    write_text(&dir.join("rank.csv"), &eval::rank_csv(table))
}

/// Ranks stored summaries; the input defaults to the benchmark output.
pub fn rank(out: &Path, input: Option<&Path>) -> CliResult<()> {
    let default = out.join("benchmark").join("summaries.json");
    let path = input.unwrap_or(&default);
    let summaries: Vec<ScoreSummary> = read_json(path, "run `tabmoe benchmark` first or pass --input")?;
    let mut checked = Vec::with_capacity(summaries.len());
    for s in summaries {
        let mut fresh = ScoreSummary::from_scores(s.model_id.clone(), s.seeds.clone(), s.scores.clone())?;
        if (fresh.mean - s.mean).abs() > 1e-12 || (fresh.std - s.std).abs() > 1e-12 {
            return Err(CliError::Input(format!("summary of {} disagrees with its scores", s.model_id)));
        }
        fresh.failed_seeds = s.failed_seeds;
        checked.push(fresh);
    }
    let table = rank_models(&checked)?;
    write_rank(&out.join("rank"), &table)
}

#[derive(Serialize)]
struct ParamCounts {
    best: usize,
    trials: Stats,
}

/// Parameter counts of the tuned configuration and of every successful trial.
pub fn count_params_cmd(cfg: &RunConfig) -> CliResult<()> {
    let mut counts = BTreeMap::new();
    let mut rows = Vec::new();
    for (entry, id) in cfg.models.iter().zip(cfg.model_ids()) {
        let tuned = load_tuned(&cfg.out, entry)?;
        let trials: Vec<tune::TrialResult> = read_jsonl(&tune_dir(&cfg.out, entry).join("trials.jsonl"), TUNE_HINT)?;
        let n: Vec<f64> = trials.iter().filter_map(|t| t.n_params).map(|n| n as f64).collect();
        let best = trials
            .iter()
            .find(|t| t.trial == tuned.trial)
            .and_then(|t| t.n_params)
            .ok_or_else(|| CliError::Input(format!("trial log of {id} lacks the tuned trial")))?;
        if n.is_empty() {
            return Err(CliError::Input(format!("trial log of {id} has no successful trials")));
        }
        let stats = eval::summarize(&n);
        rows.push((format!("{id} (best {best})"), stats.clone()));
        counts.insert(id, ParamCounts { best, trials: stats });
    }
    let dir = cfg.out.join("params");
    let text = eval::stats_text_table(&rows, "", 1);
    print!("{text}");
    write_json(&dir.join("param_counts.json"), &counts)?;
    write_text(&dir.join("param_counts.txt"), &text)
}

#[derive(Serialize)]
struct TimingReport {
    seed: u64,
    train_ms: f64,
    epochs_run: usize,
    /// Keyed by sample count.
    inference_ms: BTreeMap<usize, Stats>,
}

/// Trains each tuned model once and times repeated inference on the test split.
pub fn time(cfg: &RunConfig) -> CliResult<()> {
    let bundle = load_bundle(cfg)?;
    let seed = cfg.seeds.base;
    let mut report = BTreeMap::new();
    let mut rows = Vec::new();
    for (entry, id) in cfg.models.iter().zip(cfg.model_ids()) {
        let tuned = load_tuned(&cfg.out, entry)?;
        let data = encode_for(&bundle, &tuned.spec.arch)?;
        let train = cfg.train_config(tuned.spec.learning_rate, tuned.spec.weight_decay, seed);
        let t = train_on(&data, &tuned.spec.arch, &train, seed)?;
        let mut inference_ms = BTreeMap::new();
        for mc in mc_values(cfg, entry.family) {
            let (stats, _) = eval::time_run(INFERENCE_REPETITIONS, || t.predict(&data.test, mc, &eval_rng(seed)))?;
            rows.push((format!("{id} (mc={mc})"), stats.clone()));
            inference_ms.insert(mc, stats);
        }
        report.insert(
            id,
            TimingReport {
                seed,
                train_ms: t.report.wall_time_ms,
                epochs_run: t.report.epochs_run,
                inference_ms,
            },
        );
    }
    let dir = cfg.out.join("time");
    let text = eval::stats_text_table(&rows, "ms", 3);
    print!("{text}");
    write_json(&dir.join("timing.json"), &report)?;
    write_text(&dir.join("timing.txt"), &text)
}
