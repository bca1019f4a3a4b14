//! Training loop and ranking evaluation.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::Cell;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aoi::{
    sample_non_candidates, scan_repeat_gains, select_candidates, FrameMultiset, Oracle,
    RepeatGainRecord,
};
use crate::features::SampleRecord;
use crate::losses::{total_loss_node, LossConfig, LossTargets};
use crate::numerics::{adam_step, mean, variance, AdamConfig, AdamState, DenseArray, Tape};
use crate::planner::top_k;
use crate::scorer::{forward, forward_node, ParamNodes, ScorerConfig, ScorerParams};
use crate::{Error, OracleError, Result};

/// How candidate sets evolve across epochs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CandidatePolicy {
    /// Re-select from the current scores every epoch.
    Fresh,
    /// Keep the first epoch's candidate set for each sample.
    Frozen,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    pub accumulation: usize,
    /// Half-width of the candidate set: top-K plus K random frames.
    pub k: usize,
    pub loss: LossConfig,
    pub seed: u64,
    pub candidates: CandidatePolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 1,
            accumulation: 4,
            k: 16,
            loss: LossConfig::default(),
            seed: 0,
            candidates: CandidatePolicy::Fresh,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("learning rate {} must be >= 0", self.lr)));
        }
        if self.accumulation == 0 || self.epochs == 0 || self.k == 0 {
            return Err(Error::Config(
                "accumulation, epochs and k must all be >= 1".into(),
            ));
        }
        self.loss.validate()
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }
}

/// Supplies repeat-gain records for a sample and candidate set.
pub trait GainSource {
    fn record(&mut self, sample: &SampleRecord, candidates: &[usize]) -> Result<RepeatGainRecord>;

    /// Oracle log-probability calls issued so far.
    fn logprob_calls(&self) -> u64;
}

/// Counts calls passing through to an inner oracle.
pub struct CountingOracle<'a> {
    inner: &'a dyn Oracle,
    logprob_calls: Cell<u64>,
}

impl<'a> CountingOracle<'a> {
    pub fn new(inner: &'a dyn Oracle) -> Self {
        CountingOracle {
            inner,
            logprob_calls: Cell::new(0),
        }
    }

    pub fn logprob_calls(&self) -> u64 {
        self.logprob_calls.get()
    }
}

impl Oracle for CountingOracle<'_> {
    fn oracle_id(&self) -> String {
        self.inner.oracle_id()
    }

    fn logprob(&self, s: &str, seq: &FrameMultiset, a: usize) -> core::result::Result<f64, OracleError> {
        self.logprob_calls.set(self.logprob_calls.get() + 1);
        self.inner.logprob(s, seq, a)
    }

    fn sample_answer(&self, s: &str, seq: &FrameMultiset, t: f64, trial: u64) -> core::result::Result<usize, OracleError> {
        self.inner.sample_answer(s, seq, t, trial)
    }
}

/// Scans through an oracle, memoizing records by sample and candidate set.
pub struct OracleGains<'a> {
    oracle: CountingOracle<'a>,
    cache: BTreeMap<(String, Vec<usize>), RepeatGainRecord>,
}

impl<'a> OracleGains<'a> {
    pub fn new(oracle: &'a dyn Oracle) -> Self {
        OracleGains {
            oracle: CountingOracle::new(oracle),
            cache: BTreeMap::new(),
        }
    }

    pub fn records(&self) -> impl Iterator<Item = &RepeatGainRecord> {
        self.cache.values()
    }
}

impl GainSource for OracleGains<'_> {
    fn record(&mut self, sample: &SampleRecord, candidates: &[usize]) -> Result<RepeatGainRecord> {
        let key = (sample.sample_id.clone(), candidates.to_vec());
        if let Some(r) = self.cache.get(&key) {
            return Ok(r.clone());
        }
        let r = scan_repeat_gains(sample, candidates, &self.oracle)?;
        if r.complete {
            self.cache.insert(key, r.clone());
        }
        Ok(r)
    }

    fn logprob_calls(&self) -> u64 {
        self.oracle.logprob_calls()
    }
}

/// One optimizer step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub epoch: usize,
    /// Mean loss over the samples that contributed gradients.
    pub loss: Option<f64>,
    /// Mean over the window of the per-sample standard deviation of scores
    /// across all frames, skipped samples included.
    pub score_std: f64,
    pub samples_used: usize,
    pub samples_skipped: usize,
    /// Cumulative oracle log-probability calls.
    pub logprob_calls: u64,
    pub elapsed_secs: Option<f64>,
}

/// Callbacks from the training loop to its host.
pub trait TrainHooks {
    fn elapsed_secs(&self) -> Option<f64> {
        None
    }

    fn on_step(&mut self, _log: &StepLog, _params: &ScorerParams) -> Result<()> {
        Ok(())
    }

    fn on_skip(&mut self, _sample_id: &str, _error: &Error) {}
}

pub struct NoHooks;

impl TrainHooks for NoHooks {}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ScorerParams,
    pub log: Vec<StepLog>,
    pub skipped: usize,
    pub adam: AdamState,
}

/// Mixes a run seed with per-use coordinates.
pub fn derive_seed(seed: u64, a: u64, b: u64, c: u64) -> u64 {
    let mut x = seed;
    for v in [a, b, c] {
        x ^= v.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(x << 6).wrapping_add(x >> 2);
        x = splitmix(x);
    }
    x
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn population_std(x: &[f64]) -> f64 {
    libm::sqrt(variance(x))
}

struct Window {
    grads: Vec<DenseArray>,
    losses: Vec<f64>,
    score_stds: Vec<f64>,
    skipped: usize,
    seen: usize,
}

impl Window {
    fn new(params: &ScorerParams) -> Self {
        Window {
            grads: params.tensors().iter().map(|t| DenseArray::zeros(t.shape())).collect(),
            losses: Vec::new(),
            score_stds: Vec::new(),
            skipped: 0,
            seen: 0,
        }
    }
}

/// Trains `params` over `dataset` for `config.epochs` epochs.
///
/// Per sample: score all frames, select candidates from the current scores,
/// obtain their repeat gains, and backpropagate the total loss. Gradients
/// are averaged over every `accumulation` samples before an Adam step.
pub fn train(
    dataset: &[SampleRecord],
    gains: &mut dyn GainSource,
    params: ScorerParams,
    scorer: &ScorerConfig,
    config: &TrainConfig,
    hooks: &mut dyn TrainHooks,
) -> Result<TrainOutcome> {
    config.validate()?;
    scorer.validate()?;
    if dataset.is_empty() {
        return Err(Error::Run("training set is empty".into()));
    }
    let mut params = params;
    let mut adam = AdamState::new(&params.tensors());
    let adam_cfg = config.adam();
    let mut log = Vec::new();
    let mut frozen: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    let mut total_skipped = 0;

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(config.seed, epoch as u64, 0, 0)));
        let mut window = Window::new(&params);
        let mut epoch_used = 0;

        for (pos, &idx) in order.iter().enumerate() {
            let sample = &dataset[idx];
            window.seen += 1;
            match sample_step(sample, gains, &params, scorer, config, epoch, idx, &mut frozen) {
                Ok(step) => {
                    window.score_stds.push(step.score_std);
                    match step.result {
                        Ok((loss, grads)) => {
                            for (acc, g) in window.grads.iter_mut().zip(&grads) {
                                for (a, v) in acc.data_mut().iter_mut().zip(g.data()) {
                                    *a += v;
                                }
                            }
                            window.losses.push(loss);
                            epoch_used += 1;
                        }
                        Err(e) => {
                            hooks.on_skip(&sample.sample_id, &e);
                            window.skipped += 1;
                        }
                    }
                }
                Err(e) => return Err(e),
            }
            if window.seen == config.accumulation || pos + 1 == order.len() {
                let finished = core::mem::replace(&mut window, Window::new(&params));
                total_skipped += finished.skipped;
                let step = log.len() as u64 + 1;
                let entry = apply_window(finished, step, &mut params, &mut adam, &adam_cfg, epoch, gains, hooks)?;
                hooks.on_step(&entry, &params)?;
                log.push(entry);
            }
        }
        if epoch_used == 0 {
            return Err(Error::Run(format!(
                "every sample of epoch {epoch} was skipped"
            )));
        }
    }
    Ok(TrainOutcome {
        params,
        log,
        skipped: total_skipped,
        adam,
    })
}

#[allow(clippy::too_many_arguments)]
fn apply_window(
    window: Window,
    step: u64,
    params: &mut ScorerParams,
    adam: &mut AdamState,
    adam_cfg: &AdamConfig,
    epoch: usize,
    gains: &dyn GainSource,
    hooks: &dyn TrainHooks,
) -> Result<StepLog> {
    let used = window.losses.len();
    if used > 0 {
        let scale = 1.0 / used as f64;
        let grads: Vec<DenseArray> = window.grads.iter().map(|g| g.map(|v| v * scale)).collect();
        let mut tensors = params.tensors_mut();
        adam_step(&mut tensors, &grads, adam, adam_cfg)?;
    }
    Ok(StepLog {
        step,
        epoch,
        loss: (used > 0).then(|| mean(&window.losses)),
        score_std: if window.score_stds.is_empty() { 0.0 } else { mean(&window.score_stds) },
        samples_used: used,
        samples_skipped: window.skipped,
        logprob_calls: gains.logprob_calls(),
        elapsed_secs: hooks.elapsed_secs(),
    })
}

struct SampleStep {
    score_std: f64,
    /// Loss and gradients, or the reason the sample was skipped.
    result: core::result::Result<(f64, Vec<DenseArray>), Error>,
}

#[allow(clippy::too_many_arguments)]
fn sample_step(
    sample: &SampleRecord,
    gains: &mut dyn GainSource,
    params: &ScorerParams,
    scorer: &ScorerConfig,
    config: &TrainConfig,
    epoch: usize,
    idx: usize,
    frozen: &mut BTreeMap<String, Vec<usize>>,
) -> Result<SampleStep> {
    let n = sample.n_frames();
    let mut tape = Tape::new();
    let p = ParamNodes::record(&mut tape, params);
    let scores = forward_node(&mut tape, sample, &p, scorer)?;
    let values = tape.value(scores).data().to_vec();
    let score_std = population_std(&values);

    let candidates = match (config.candidates, frozen.get(&sample.sample_id)) {
        (CandidatePolicy::Frozen, Some(c)) => c.clone(),
        _ => {
            let seed = derive_seed(config.seed, epoch as u64, idx as u64, 1);
            let c = select_candidates(&values, config.k.min(n), seed)?;
            if config.candidates == CandidatePolicy::Frozen {
                frozen.insert(sample.sample_id.clone(), c.clone());
            }
            c
        }
    };

    let record = match gains.record(sample, &candidates) {
        Ok(r) => r,
        Err(e) => return Ok(SampleStep { score_std, result: Err(e) }),
    };
    let frames = record.frames();
    if frames.len() < 2 {
        let e = Error::Degenerate(format!(
            "{}: {} usable candidates",
            sample.sample_id,
            frames.len()
        ));
        return Ok(SampleStep { score_std, result: Err(e) });
    }
    let gain_values = record.gains();
    let budget = config.loss.n_extra_negatives.min(n.saturating_sub(candidates.len()));
    let extra = sample_non_candidates(
        n,
        &record.candidates(),
        budget,
        derive_seed(config.seed, epoch as u64, idx as u64, 2),
    );
    let targets = LossTargets {
        candidates: &frames,
        gains: &gain_values,
        extra_negatives: &extra,
    };
    let loss = total_loss_node(&mut tape, scores, &targets, &config.loss)?;
    let value = tape.value(loss).data()[0];
    let grads = tape.backward(loss, p.ids())?;
    if !value.is_finite() || grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::Internal(format!(
            "{}: non-finite loss or gradient",
            sample.sample_id
        )));
    }
    Ok(SampleStep {
        score_std,
        result: Ok((value, grads)),
    })
}

/// Ground truth for one evaluation sample.
#[derive(Clone, Copy, Debug)]
pub struct EvalItem<'a> {
    pub sample: &'a SampleRecord,
    /// True repeat gain of every frame.
    pub gains: &'a [f64],
    pub key_frames: &'a [usize],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingMetrics {
    pub n_samples: usize,
    pub k: usize,
    pub spearman: f64,
    pub recall_at_k: f64,
    /// Mean true gain of the top-k scored frames.
    pub top_k_gain: f64,
    /// Mean true gain of k uniformly drawn frames.
    pub random_k_gain: f64,
    /// Standard error of `random_k_gain` across samples.
    pub random_k_gain_stderr: f64,
    /// Mean true gain of the bottom-k scored frames.
    pub bottom_k_gain: f64,
}

/// Spearman rank correlation with average ranks for ties; zero when either
/// side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "spearman of unequal lengths");
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let (ma, mb) = (mean(&ra), mean(&rb));
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / libm::sqrt(va * vb)
}

fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0;
        for &o in &order[i..=j] {
            ranks[o] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Ranking quality of arbitrary per-frame scores against true gains.
pub fn evaluate_scores(items: &[EvalItem<'_>], scores: &[Vec<f64>], k: usize, seed: u64) -> Result<RankingMetrics> {
    if items.is_empty() || items.len() != scores.len() {
        return Err(Error::Data(format!(
            "{} evaluation items for {} score vectors",
            items.len(),
            scores.len()
        )));
    }
    let mut rho = Vec::new();
    let mut recall = Vec::new();
    let mut top = Vec::new();
    let mut random = Vec::new();
    let mut bottom = Vec::new();
    for (i, (item, s)) in items.iter().zip(scores).enumerate() {
        let n = item.sample.n_frames();
        if item.gains.len() != n || s.len() != n {
            return Err(Error::Data(format!(
                "{}: ground truth covers {} of {n} frames",
                item.sample.sample_id,
                item.gains.len()
            )));
        }
        let gain_of = |sel: &[usize]| mean(&sel.iter().map(|&f| item.gains[f]).collect::<Vec<_>>());
        rho.push(spearman(s, item.gains));
        let sel = top_k(s, k)?;
        if !item.key_frames.is_empty() {
            let hit = item.key_frames.iter().filter(|f| sel.contains(f)).count();
            recall.push(hit as f64 / item.key_frames.len() as f64);
        }
        top.push(gain_of(&sel));
        let negated: Vec<f64> = s.iter().map(|v| -v).collect();
        bottom.push(gain_of(&top_k(&negated, k)?));
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64, 3, 0));
        random.push(gain_of(&index::sample(&mut rng, n, k).into_vec()));
    }
    let m = items.len() as f64;
    Ok(RankingMetrics {
        n_samples: items.len(),
        k,
        spearman: mean(&rho),
        recall_at_k: if recall.is_empty() { 0.0 } else { mean(&recall) },
        top_k_gain: mean(&top),
        random_k_gain: mean(&random),
        random_k_gain_stderr: libm::sqrt(variance(&random) / m),
        bottom_k_gain: mean(&bottom),
    })
}

/// Scores every item with the model and evaluates the ranking.
pub fn evaluate_ranking(
    params: &ScorerParams,
    scorer: &ScorerConfig,
    items: &[EvalItem<'_>],
    k: usize,
    seed: u64,
) -> Result<RankingMetrics> {
    let scores = items
        .iter()
        .map(|it| forward(it.sample, params, scorer))
        .collect::<Result<Vec<_>>>()?;
    evaluate_scores(items, &scores, k, seed)
}

impl core::fmt::Display for RankingMetrics {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(
            f,
            "n={} k={} spearman={:.4} recall@k={:.4} gain top={:.4} random={:.4}±{:.4} bottom={:.4}",
            self.n_samples,
            self.k,
            self.spearman,
            self.recall_at_k,
            self.top_k_gain,
            self.random_k_gain,
            self.random_k_gain_stderr,
            self.bottom_k_gain
        )
    }
}
