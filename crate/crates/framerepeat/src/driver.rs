//! Pipeline commands: synthesize, scan, train, plan, evaluate.
//!
//! Each command writes its artifacts into a run directory together with
//! `config.toml` (the effective configuration) and `run.json` (command,
//! configuration with provenance, artifact list and summary). Nothing
//! written depends on wall-clock time except `train_log.ndjson`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use framerepeat_core::aoi::{Oracle, RepeatGainRecord};
use framerepeat_core::features::SampleRecord;
use framerepeat_core::planner::{plan, RepetitionPlan};
use framerepeat_core::scorer::{init_params, ScorerConfig, ScorerParams};
use framerepeat_core::synthetic::SyntheticOracle;
use framerepeat_core::trainer::{derive_seed, evaluate_ranking, train, EvalItem, RankingMetrics, StepLog, TrainHooks};
use serde::Serialize;
use serde_json::json;

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::Resolved;
use crate::dataset::{write_synthetic, Dataset};
use crate::error::{Error, Result};
use crate::oracles::{RemoteOracle, ReplayOracle};
use crate::records::{write_atomic, RecordStore};
use crate::scan::{scan_with_store, DiskGains};

pub const RUN_MANIFEST: &str = "run.json";

/// A concrete oracle chosen by `oracle.kind`.
pub enum OracleHandle {
    Synthetic(SyntheticOracle),
    Replay(ReplayOracle),
    Remote(Box<RemoteOracle>),
}

impl OracleHandle {
    pub fn build(cfg: &Resolved, dataset: &Dataset) -> Result<Self> {
        let o = &cfg.config.oracle;
        match o.kind.as_str() {
            "synthetic" => Ok(OracleHandle::Synthetic(dataset.synthetic_oracle()?)),
            "replay" => {
                if o.replay_records.is_empty() {
                    return Err(Error::Usage("replay oracle needs oracle.replay_records".into()));
                }
                let store = RecordStore::existing(&o.replay_records)?;
                Ok(OracleHandle::Replay(ReplayOracle::from_store(&store)?))
            }
            "remote" => Ok(OracleHandle::Remote(Box::new(RemoteOracle::connect(cfg.config.remote_config())?))),
            other => Err(Error::Usage(format!(
                "unknown oracle kind {other:?} (expected synthetic, replay or remote)"
            ))),
        }
    }

    pub fn shared(&self) -> &(dyn Oracle + Sync) {
        match self {
            OracleHandle::Synthetic(o) => o,
            OracleHandle::Replay(o) => o,
            OracleHandle::Remote(o) => o.as_ref(),
        }
    }
}

/// Opens `data.dataset`, restricted to the configured sample range.
pub fn open_dataset(cfg: &Resolved) -> Result<Dataset> {
    let d = &cfg.config.data;
    if d.dataset.is_empty() {
        return Err(Error::Usage("no dataset given (--dataset or data.dataset)".into()));
    }
    Dataset::open(&d.dataset)?.restrict(d.offset, d.limit)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut b = serde_json::to_vec_pretty(value).expect("serializable");
    b.push(b'\n');
    b
}

fn write_run_manifest(out: &Path, command: &str, cfg: &Resolved, artifacts: &[&str], summary: serde_json::Value) -> Result<()> {
    create_dir(out)?;
    write_atomic(&out.join("config.toml"), cfg.config.to_toml().as_bytes())?;
    let manifest = json!({
        "format_version": 1,
        "command": command,
        "config": cfg.config,
        "provenance": cfg.provenance,
        "artifacts": artifacts,
        "summary": summary,
    });
    write_atomic(&out.join(RUN_MANIFEST), &json_bytes(&manifest))
}

fn records_dir(cfg: &Resolved, out: &Path) -> PathBuf {
    let r = &cfg.config.data.records;
    if r.is_empty() { out.join("records") } else { PathBuf::from(r) }
}

fn common_dim(samples: &[SampleRecord], root: &Path) -> Result<usize> {
    let dim = samples
        .first()
        .map(|s| s.dim())
        .ok_or_else(|| Error::format(root, "dataset has no samples"))?;
    if let Some(s) = samples.iter().find(|s| s.dim() != dim) {
        return Err(Error::format(root, format!("{} has width {}, others {dim}", s.sample_id, s.dim())));
    }
    Ok(dim)
}

pub fn run_synth(cfg: &Resolved, out: &Path) -> Result<Dataset> {
    let s = &cfg.config.synth;
    let ds = write_synthetic(out, &s.spec, s.n_samples)?;
    write_run_manifest(out, "synth", cfg, &["index.json", "samples", "truth"], json!({ "samples": ds.len() }))?;
    Ok(ds)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScanSummary {
    pub samples: usize,
    pub incomplete: usize,
    pub logprob_calls: u64,
}

/// Frames to scan for sample `index`: all of them, or a seeded subset.
pub fn scan_frames_for(cfg: &Resolved, sample: &SampleRecord, index: usize) -> Vec<usize> {
    let n = sample.n_frames();
    let s = &cfg.config.scan;
    if s.frames == 0 || s.frames >= n {
        return (0..n).collect();
    }
    framerepeat_core::aoi::sample_non_candidates(n, &[], s.frames, derive_seed(s.seed, index as u64, 4, 0))
}

/// Brings every sample's record up to date, resuming from whatever the
/// record directory already holds.
pub fn run_scan(cfg: &Resolved, dataset: &Dataset, out: &Path) -> Result<ScanSummary> {
    let handle = OracleHandle::build(cfg, dataset)?;
    let store = RecordStore::open(records_dir(cfg, out))?;
    let in_flight = cfg.config.oracle.in_flight.max(1);
    let mut summary = ScanSummary { samples: 0, incomplete: 0, logprob_calls: 0 };
    for (i, id) in dataset.index.samples.iter().enumerate() {
        let sample = dataset.load(id)?;
        let frames = scan_frames_for(cfg, &sample, i);
        let update = scan_with_store(&sample, &frames, handle.shared(), in_flight, &store)?;
        summary.samples += 1;
        summary.logprob_calls += update.calls;
        if !update.record.complete {
            summary.incomplete += 1;
            log::warn!("{id}: {} frames failed", update.record.failed.len());
        }
    }
    write_run_manifest(out, "scan", cfg, &["records"], serde_json::to_value(&summary).expect("summary"))?;
    if summary.incomplete > 0 {
        log::warn!("{} of {} records incomplete; rerun to resume", summary.incomplete, summary.samples);
    }
    Ok(summary)
}

struct FileHooks {
    log: fs::File,
    log_path: PathBuf,
    ckpt_dir: PathBuf,
    scorer: ScorerConfig,
    every: u64,
    steps_per_epoch: u64,
    start: Instant,
    skipped: Vec<String>,
}

impl TrainHooks for FileHooks {
    fn elapsed_secs(&self) -> Option<f64> {
        Some(self.start.elapsed().as_secs_f64())
    }

    fn on_step(&mut self, entry: &StepLog, params: &ScorerParams) -> framerepeat_core::Result<()> {
        let io = |e: std::io::Error| framerepeat_core::Error::Data(format!("{}: {e}", self.log_path.display()));
        let mut line = serde_json::to_vec(entry).expect("log serializes");
        line.push(b'\n');
        self.log.write_all(&line).map_err(io)?;
        let mut names = Vec::new();
        if self.every > 0 && entry.step % self.every == 0 {
            names.push(format!("step-{:06}.ckpt", entry.step));
        }
        if entry.step % self.steps_per_epoch == 0 {
            names.push(format!("epoch-{:03}.ckpt", entry.step / self.steps_per_epoch));
        }
        for name in names {
            save_checkpoint(params, &self.scorer, self.ckpt_dir.join(name))
                .map_err(|e| framerepeat_core::Error::Data(e.to_string()))?;
        }
        Ok(())
    }

    fn on_skip(&mut self, sample_id: &str, error: &framerepeat_core::Error) {
        log::warn!("skipped {sample_id}: {error}");
        self.skipped.push(sample_id.to_string());
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainSummary {
    pub samples: usize,
    pub steps: usize,
    pub skipped: usize,
    pub logprob_calls: u64,
    pub final_loss: Option<f64>,
    pub checkpoint: PathBuf,
}

/// Trains from a fresh initialization and writes `checkpoint.ckpt`,
/// periodic checkpoints and the step log.
pub fn run_train(cfg: &Resolved, dataset: &Dataset, out: &Path) -> Result<TrainSummary> {
    let samples = dataset.load_all()?;
    let dim = common_dim(&samples, dataset.root())?;
    let scorer = cfg.config.scorer_config(dim);
    let tcfg = cfg.config.train_config();
    tcfg.validate()?;
    let params = init_params(&scorer, scorer.seed)?;
    let handle = OracleHandle::build(cfg, dataset)?;
    let store = RecordStore::open(records_dir(cfg, out))?;
    let mut gains = DiskGains::new(store, handle.shared(), cfg.config.oracle.in_flight.max(1));

    let ckpt_dir = out.join("checkpoints");
    create_dir(&ckpt_dir)?;
    let log_path = out.join("train_log.ndjson");
    let log = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut hooks = FileHooks {
        log,
        log_path,
        ckpt_dir,
        scorer: scorer.clone(),
        every: cfg.config.train.checkpoint_every,
        steps_per_epoch: samples.len().div_ceil(tcfg.accumulation) as u64,
        start: Instant::now(),
        skipped: Vec::new(),
    };
    let outcome = train(&samples, &mut gains, params, &scorer, &tcfg, &mut hooks)?;
    let checkpoint = out.join("checkpoint.ckpt");
    save_checkpoint(&outcome.params, &scorer, &checkpoint)?;
    let summary = TrainSummary {
        samples: samples.len(),
        steps: outcome.log.len(),
        skipped: outcome.skipped,
        logprob_calls: outcome.log.last().map_or(0, |l| l.logprob_calls),
        final_loss: outcome.log.iter().rev().find_map(|l| l.loss),
        checkpoint: PathBuf::from("checkpoint.ckpt"),
    };
    write_run_manifest(
        out,
        "train",
        cfg,
        &["checkpoint.ckpt", "checkpoints", "train_log.ndjson"],
        serde_json::to_value(&summary).expect("summary"),
    )?;
    Ok(summary)
}

/// Loads `checkpoint`, or initializes from `[scorer]` when none is given.
pub fn scorer_for(cfg: &Resolved, checkpoint: Option<&Path>, dim: usize) -> Result<(ScorerParams, ScorerConfig)> {
    match checkpoint {
        Some(path) => {
            let (params, config) = load_checkpoint(path)?;
            if config.dim != dim {
                return Err(Error::Usage(format!(
                    "checkpoint width {} does not match dataset width {dim}",
                    config.dim
                )));
            }
            Ok((params, config))
        }
        None => {
            let config = cfg.config.scorer_config(dim);
            Ok((init_params(&config, config.seed)?, config))
        }
    }
}

pub fn run_plan(cfg: &Resolved, dataset: &Dataset, checkpoint: Option<&Path>, out: &Path) -> Result<Vec<RepetitionPlan>> {
    let k = cfg.config.plan.k;
    if k == 0 {
        return Err(Error::Usage("k must be at least 1".into()));
    }
    let samples = dataset.load_all()?;
    let dim = common_dim(&samples, dataset.root())?;
    if let Some(s) = samples.iter().find(|s| s.n_frames() < k) {
        return Err(Error::Usage(format!("k = {k} exceeds the {} frames of {}", s.n_frames(), s.sample_id)));
    }
    let (params, scorer) = scorer_for(cfg, checkpoint, dim)?;
    let plans = samples
        .iter()
        .map(|s| {
            let p = plan(s, &params, &scorer, k)?;
            p.validate()?;
            Ok(p)
        })
        .collect::<Result<Vec<_>>>()?;
    create_dir(out)?;
    write_atomic(&out.join("plans.json"), &json_bytes(&plans))?;
    write_run_manifest(out, "plan", cfg, &["plans.json"], json!({ "plans": plans.len(), "k": k }))?;
    Ok(plans)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    /// `truth` (planted gains) or `records` (full-frame scans).
    pub ground_truth: String,
    #[serde(flatten)]
    pub metrics: RankingMetrics,
    /// Mean true gain of the planned (top-k) frames.
    pub mean_planned_gain: f64,
}

/// Ground-truth gains for every sample: planted ones for synthetic data,
/// otherwise complete full-frame records.
fn ground_truth(cfg: &Resolved, dataset: &Dataset, out: &Path, samples: &[SampleRecord]) -> Result<(String, Vec<(Vec<f64>, Vec<usize>)>)> {
    if let Some(truths) = dataset.load_truths()? {
        return Ok(("truth".into(), truths.into_iter().map(|t| (t.gains, t.key_frames)).collect()));
    }
    let store = RecordStore::existing(records_dir(cfg, out))?;
    let mut rows = Vec::with_capacity(samples.len());
    for s in samples {
        let r: RepeatGainRecord = store
            .get(&s.sample_id)?
            .ok_or_else(|| Error::format(store.path(&s.sample_id), "no record; scan the dataset first"))?;
        let gains: Option<Vec<f64>> = (0..s.n_frames()).map(|f| r.gain_of(f)).collect();
        let gains = gains.ok_or_else(|| Error::format(store.path(&s.sample_id), "record does not cover every frame"))?;
        rows.push((gains, Vec::new()));
    }
    Ok(("records".into(), rows))
}

pub fn run_eval(cfg: &Resolved, dataset: &Dataset, checkpoint: Option<&Path>, out: &Path) -> Result<EvalReport> {
    let k = cfg.config.eval.k;
    if k == 0 {
        return Err(Error::Usage("k must be at least 1".into()));
    }
    let samples = dataset.load_all()?;
    let dim = common_dim(&samples, dataset.root())?;
    let (params, scorer) = scorer_for(cfg, checkpoint, dim)?;
    let (source, truth) = ground_truth(cfg, dataset, out, &samples)?;
    let items: Vec<EvalItem<'_>> = samples
        .iter()
        .zip(&truth)
        .map(|(sample, (gains, keys))| EvalItem { sample, gains, key_frames: keys })
        .collect();
    let metrics = evaluate_ranking(&params, &scorer, &items, k, cfg.config.eval.seed)?;
    let report = EvalReport { ground_truth: source, mean_planned_gain: metrics.top_k_gain, metrics };
    create_dir(out)?;
    write_atomic(&out.join("metrics.json"), &json_bytes(&report))?;
    write_run_manifest(out, "eval", cfg, &["metrics.json"], serde_json::to_value(&report).expect("report"))?;
    Ok(report)
}
