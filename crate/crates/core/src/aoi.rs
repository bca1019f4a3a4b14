//! Add-One-In repeat-gain supervision.
//!
//! For each candidate frame, the answering model's log-probability of the
//! correct answer is measured once with the frame duplicated in place and
//! compared against the unmodified frame sequence.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::features::SampleRecord;
use crate::{Error, OracleError, OracleErrorKind, Result};

/// Ordered frame indices presented to the answering model.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FrameMultiset(Vec<usize>);

impl FrameMultiset {
    pub fn new(indices: Vec<usize>, n_frames: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Index("frame sequence is empty".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= n_frames) {
            return Err(Error::Index(format!(
                "frame index {bad} out of range for {n_frames} frames"
            )));
        }
        Ok(FrameMultiset(indices))
    }

    /// `[0, 1, …, N−1]`
    pub fn baseline(n_frames: usize) -> Result<Self> {
        Self::new((0..n_frames).collect(), n_frames)
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// How often each of `n_frames` frames appears.
    pub fn counts(&self, n_frames: usize) -> Vec<usize> {
        let mut counts = alloc::vec![0; n_frames];
        for &i in &self.0 {
            if i < n_frames {
                counts[i] += 1;
            }
        }
        counts
    }

    pub fn is_baseline(&self) -> bool {
        self.0.iter().enumerate().all(|(pos, &i)| pos == i)
    }

    /// The duplicated frame if this is a single in-place repeat of a
    /// baseline sequence.
    pub fn single_repeat(&self) -> Option<usize> {
        let n = self.0.len().checked_sub(1)?;
        let dup = self.0.windows(2).position(|w| w[0] == w[1])?;
        let expected = repeat_multiset(n, dup).ok()?;
        (expected.0 == self.0).then_some(dup)
    }
}

/// Baseline sequence with frame `i` duplicated immediately after itself.
pub fn repeat_multiset(n_frames: usize, i: usize) -> Result<FrameMultiset> {
    if i >= n_frames {
        return Err(Error::Index(format!(
            "repeat index {i} out of range for {n_frames} frames"
        )));
    }
    let mut seq = Vec::with_capacity(n_frames + 1);
    for j in 0..n_frames {
        seq.push(j);
        if j == i {
            seq.push(j);
        }
    }
    FrameMultiset::new(seq, n_frames)
}

/// Stand-in for the frozen answering model.
pub trait Oracle {
    /// Stable identity of the model behind the oracle.
    fn oracle_id(&self) -> String;

    /// `log P(answer | frames in sequence order, question)`; always `<= 0`
    /// and deterministic.
    fn logprob(
        &self,
        sample_id: &str,
        sequence: &FrameMultiset,
        answer_id: usize,
    ) -> core::result::Result<f64, OracleError>;

    /// Decodes one answer at `temperature`. `trial` distinguishes repeated
    /// draws for oracles that derive their randomness locally.
    fn sample_answer(
        &self,
        sample_id: &str,
        sequence: &FrameMultiset,
        temperature: f64,
        trial: u64,
    ) -> core::result::Result<usize, OracleError>;
}

impl<T: Oracle + ?Sized> Oracle for &T {
    fn oracle_id(&self) -> String {
        (**self).oracle_id()
    }

    fn logprob(&self, s: &str, seq: &FrameMultiset, a: usize) -> core::result::Result<f64, OracleError> {
        (**self).logprob(s, seq, a)
    }

    fn sample_answer(
        &self,
        s: &str,
        seq: &FrameMultiset,
        t: f64,
        trial: u64,
    ) -> core::result::Result<usize, OracleError> {
        (**self).sample_answer(s, seq, t, trial)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainEntry {
    pub frame: usize,
    pub logprob: f64,
    pub gain: f64,
}

/// Per-sample repeat-gain supervision.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepeatGainRecord {
    pub sample_id: String,
    pub n_frames: usize,
    pub baseline_logprob: f64,
    /// Successful candidates in ascending frame order.
    pub entries: Vec<GainEntry>,
    /// Candidates whose oracle call failed.
    #[serde(default)]
    pub failed: Vec<usize>,
    pub complete: bool,
    pub oracle_id: String,
}

impl RepeatGainRecord {
    /// Every candidate that was requested, measured or not.
    pub fn candidates(&self) -> Vec<usize> {
        let mut c: Vec<usize> = self.entries.iter().map(|e| e.frame).chain(self.failed.iter().copied()).collect();
        c.sort_unstable();
        c
    }

    pub fn frames(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.frame).collect()
    }

    pub fn gains(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.gain).collect()
    }

    pub fn gain_of(&self, frame: usize) -> Option<f64> {
        self.entries.iter().find(|e| e.frame == frame).map(|e| e.gain)
    }

    /// Checks uniqueness, range and the exact `gain = logprob − baseline` law.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            if e.frame >= self.n_frames || !seen.insert(e.frame) {
                return Err(Error::Data(format!(
                    "{}: candidate {} duplicated or out of range",
                    self.sample_id, e.frame
                )));
            }
            if e.gain != e.logprob - self.baseline_logprob {
                return Err(Error::Data(format!(
                    "{}: gain of frame {} is not logprob - baseline",
                    self.sample_id, e.frame
                )));
            }
        }
        for &f in &self.failed {
            if f >= self.n_frames || !seen.insert(f) {
                return Err(Error::Data(format!(
                    "{}: failed candidate {f} duplicated or out of range",
                    self.sample_id
                )));
            }
        }
        if self.complete != self.failed.is_empty() {
            return Err(Error::Data(format!(
                "{}: completeness flag disagrees with failures",
                self.sample_id
            )));
        }
        Ok(())
    }
}

pub fn baseline_logprob(sample: &SampleRecord, oracle: &dyn Oracle) -> Result<f64> {
    let seq = FrameMultiset::baseline(sample.n_frames())?;
    oracle
        .logprob(&sample.sample_id, &seq, sample.answer_id)
        .map_err(|e| Error::Oracle(with_context(e, &sample.sample_id, "baseline")))
}

fn with_context(e: OracleError, sample_id: &str, what: &str) -> OracleError {
    OracleError::new(e.kind, format!("{sample_id} ({what}): {}", e.message))
}

/// Rejects empty, duplicated or out-of-range candidate lists and returns
/// them sorted.
pub fn check_candidates(candidates: &[usize], n_frames: usize) -> Result<Vec<usize>> {
    if candidates.is_empty() {
        return Err(Error::Index("candidate set is empty".into()));
    }
    let set: BTreeSet<usize> = candidates.iter().copied().collect();
    if set.len() != candidates.len() {
        return Err(Error::Index("candidate set has repeated frames".into()));
    }
    if let Some(&bad) = set.iter().find(|&&i| i >= n_frames) {
        return Err(Error::Index(format!(
            "candidate {bad} out of range for {n_frames} frames"
        )));
    }
    Ok(set.into_iter().collect())
}

/// Assembles a record from per-candidate results, in frame order.
pub fn assemble_record(
    sample: &SampleRecord,
    oracle_id: String,
    baseline: f64,
    results: Vec<(usize, core::result::Result<f64, OracleError>)>,
) -> RepeatGainRecord {
    let mut results = results;
    results.sort_by_key(|(i, _)| *i);
    let mut entries = Vec::new();
    let mut failed = Vec::new();
    for (frame, r) in results {
        match r {
            Ok(logprob) => entries.push(GainEntry {
                frame,
                logprob,
                gain: logprob - baseline,
            }),
            Err(_) => failed.push(frame),
        }
    }
    RepeatGainRecord {
        sample_id: sample.sample_id.clone(),
        n_frames: sample.n_frames(),
        baseline_logprob: baseline,
        complete: failed.is_empty(),
        entries,
        failed,
        oracle_id,
    }
}

/// One baseline call and one call per candidate. A failing baseline is an
/// error; failing candidates are listed in an incomplete record.
pub fn scan_repeat_gains(
    sample: &SampleRecord,
    candidates: &[usize],
    oracle: &dyn Oracle,
) -> Result<RepeatGainRecord> {
    let n = sample.n_frames();
    let candidates = check_candidates(candidates, n)?;
    let baseline = baseline_logprob(sample, oracle)?;
    let mut results = Vec::with_capacity(candidates.len());
    for &i in &candidates {
        let seq = repeat_multiset(n, i)?;
        results.push((i, oracle.logprob(&sample.sample_id, &seq, sample.answer_id)));
    }
    Ok(assemble_record(sample, oracle.oracle_id(), baseline, results))
}

/// Indices sorted by descending score, ties broken by lower index.
pub fn rank_descending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Top-`k` by score plus `k` uniform draws from the remaining frames.
/// The two halves are disjoint, so `|C| = min(2k, N)`. Returned ascending.
pub fn select_candidates(scores: &[f64], k: usize, seed: u64) -> Result<Vec<usize>> {
    let n = scores.len();
    if k == 0 || k > n {
        return Err(Error::Config(format!(
            "candidate half-width {k} must be in 1..={n}"
        )));
    }
    let order = rank_descending(scores);
    let (top, rest) = order.split_at(k);
    let mut rest = rest.to_vec();
    rest.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = k.min(rest.len());
    let mut chosen: Vec<usize> = top.to_vec();
    chosen.extend(index::sample(&mut rng, rest.len(), draw).into_iter().map(|j| rest[j]));
    chosen.sort_unstable();
    Ok(chosen)
}

/// `count` frames drawn uniformly from those outside `exclude`, ascending.
pub fn sample_non_candidates(n_frames: usize, exclude: &[usize], count: usize, seed: u64) -> Vec<usize> {
    let excluded: BTreeSet<usize> = exclude.iter().copied().collect();
    let pool: Vec<usize> = (0..n_frames).filter(|i| !excluded.contains(i)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let take = count.min(pool.len());
    let mut out: Vec<usize> = index::sample(&mut rng, pool.len(), take)
        .into_iter()
        .map(|j| pool[j])
        .collect();
    out.sort_unstable();
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterOutcome {
    /// Indices into the input slice of samples that were kept.
    pub retained: Vec<usize>,
    pub discarded: usize,
    /// Samples skipped because the oracle failed.
    pub failed: usize,
}

/// Keeps samples answered correctly on some but not all `trials` draws.
pub fn filter_dataset(
    samples: &[SampleRecord],
    oracle: &dyn Oracle,
    trials: u32,
    temperature: f64,
) -> Result<FilterOutcome> {
    if trials < 2 {
        return Err(Error::Config(format!("filtering needs >= 2 trials, got {trials}")));
    }
    let mut out = FilterOutcome {
        retained: Vec::new(),
        discarded: 0,
        failed: 0,
    };
    'samples: for (idx, s) in samples.iter().enumerate() {
        let seq = FrameMultiset::baseline(s.n_frames())?;
        let mut correct = 0;
        for t in 0..trials {
            match oracle.sample_answer(&s.sample_id, &seq, temperature, t as u64) {
                Ok(a) if a == s.answer_id => correct += 1,
                Ok(_) => {}
                Err(_) => {
                    out.failed += 1;
                    continue 'samples;
                }
            }
        }
        if correct > 0 && correct < trials {
            out.retained.push(idx);
        } else {
            out.discarded += 1;
        }
    }
    Ok(out)
}

/// Convenience error for oracles that look samples up by id.
pub fn unknown_sample(sample_id: &str) -> OracleError {
    OracleError::new(OracleErrorKind::UnknownSample, format!("unknown sample {sample_id}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::collections::BTreeMap;
    use alloc::vec;
    use core::cell::Cell;

    use crate::features::{FrameFeatureSet, QuestionEncoding};
    use crate::numerics::DenseArray;

    fn sample(id: &str, n: usize) -> SampleRecord {
        let frames = DenseArray::matrix(n, 2, (0..n).flat_map(|i| [1.0, i as f64]).collect()).unwrap();
        let pooled = vec![1.0, 0.0];
        let sims = (0..n)
            .map(|i| crate::features::cosine(frames.row(i), &pooled).unwrap())
            .collect();
        SampleRecord::new(
            id,
            FrameFeatureSet::new(frames, sims).unwrap(),
            QuestionEncoding::new(DenseArray::matrix(1, 2, vec![1.0, 0.0]).unwrap(), pooled).unwrap(),
            1,
            4,
        )
        .unwrap()
    }

    /// Base value plus additive per-frame weights for every extra copy.
    struct Additive {
        base: f64,
        weights: Vec<f64>,
        calls: Cell<usize>,
        fail_on: Option<usize>,
    }

    impl Oracle for Additive {
        fn oracle_id(&self) -> String {
            "additive".into()
        }
        fn logprob(&self, _: &str, seq: &FrameMultiset, _: usize) -> core::result::Result<f64, OracleError> {
            self.calls.set(self.calls.get() + 1);
            if let (Some(f), Some(r)) = (self.fail_on, seq.single_repeat()) {
                if f == r {
                    return Err(OracleError::new(OracleErrorKind::Transport, "boom"));
                }
            }
            let counts = seq.counts(self.weights.len());
            Ok(self.base
                + counts
                    .iter()
                    .zip(&self.weights)
                    .map(|(&c, w)| w * (c as f64 - 1.0))
                    .sum::<f64>())
        }
        fn sample_answer(&self, _: &str, _: &FrameMultiset, _: f64, _: u64) -> core::result::Result<usize, OracleError> {
            Ok(0)
        }
    }

    fn additive(base: f64, weights: Vec<f64>) -> Additive {
        Additive { base, weights, calls: Cell::new(0), fail_on: None }
    }

    #[test]
    fn repeat_multiset_examples() {
        assert_eq!(repeat_multiset(3, 0).unwrap().indices(), &[0, 0, 1, 2]);
        assert_eq!(repeat_multiset(3, 2).unwrap().indices(), &[0, 1, 2, 2]);
        assert!(repeat_multiset(3, 3).is_err());
    }

    #[test]
    fn repeat_multiset_exhaustive() {
        for n in 1..=8 {
            for i in 0..n {
                let m = repeat_multiset(n, i).unwrap();
                let seq = m.indices();
                assert_eq!(seq.len(), n + 1);
                assert!(seq.windows(2).all(|w| w[0] <= w[1]));
                let counts = m.counts(n);
                for (j, &c) in counts.iter().enumerate() {
                    assert_eq!(c, if j == i { 2 } else { 1 });
                }
                assert_eq!(m.single_repeat(), Some(i));
                assert!(!m.is_baseline());
            }
            assert!(FrameMultiset::baseline(n).unwrap().is_baseline());
            assert_eq!(FrameMultiset::baseline(n).unwrap().single_repeat(), None);
        }
    }

    #[test]
    fn baseline_matches_oracle_and_is_repeatable() {
        let s = sample("a", 5);
        let o = additive(-1.25, vec![0.1; 5]);
        assert_eq!(baseline_logprob(&s, &o).unwrap(), -1.25);
        assert_eq!(baseline_logprob(&s, &o).unwrap(), baseline_logprob(&s, &o).unwrap());
        let zero = additive(0.0, vec![0.0; 5]);
        assert_eq!(baseline_logprob(&s, &zero).unwrap(), 0.0);
    }

    #[test]
    fn scan_recovers_additive_weights() {
        let s = sample("a", 6);
        let weights = vec![0.3, -0.2, 0.0, 0.125, -0.05, 0.01];
        let o = additive(-2.0, weights.clone());
        let rec = scan_repeat_gains(&s, &[5, 0, 3, 1], &o).unwrap();
        assert_eq!(o.calls.get(), 5);
        assert_eq!(rec.frames(), vec![0, 1, 3, 5]);
        for e in &rec.entries {
            assert!((e.gain - weights[e.frame]).abs() < 1e-12);
        }
        assert!(rec.complete);
        rec.validate().unwrap();
    }

    #[test]
    fn inert_oracle_gives_zero_gains() {
        let s = sample("a", 4);
        let rec = scan_repeat_gains(&s, &[0, 1, 2, 3], &additive(-1.0, vec![0.0; 4])).unwrap();
        assert!(rec.gains().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn repeated_candidate_rejected() {
        let s = sample("a", 4);
        let r = scan_repeat_gains(&s, &[1, 2, 1], &additive(-1.0, vec![0.0; 4]));
        assert!(matches!(r, Err(Error::Index(_))));
    }

    #[test]
    fn partial_failure_marks_incomplete() {
        let s = sample("a", 4);
        let mut o = additive(-1.0, vec![0.1; 4]);
        o.fail_on = Some(2);
        let rec = scan_repeat_gains(&s, &[0, 2, 3], &o).unwrap();
        assert!(!rec.complete);
        assert_eq!(rec.failed, vec![2]);
        assert_eq!(rec.frames(), vec![0, 3]);
        assert_eq!(rec.candidates(), vec![0, 2, 3]);
        rec.validate().unwrap();
    }

    #[test]
    fn affine_shift_of_oracle_keeps_gains() {
        let s = sample("a", 5);
        let w = vec![0.3, -0.2, 0.1, 0.0, 0.05];
        let a = scan_repeat_gains(&s, &[0, 1, 2, 3, 4], &additive(-1.0, w.clone())).unwrap();
        let b = scan_repeat_gains(&s, &[0, 1, 2, 3, 4], &additive(-2.5, w)).unwrap();
        for (x, y) in a.gains().iter().zip(b.gains()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn candidate_examples() {
        let scores: Vec<f64> = (0..32).map(|i| ((i * 7) % 11) as f64).collect();
        assert_eq!(select_candidates(&scores, 16, 1).unwrap(), (0..32).collect::<Vec<_>>());

        let c = select_candidates(&[3.0, 1.0, 2.0, 0.0], 2, 9).unwrap();
        assert_eq!(c, vec![0, 1, 2, 3]);
        let c = select_candidates(&[3.0, 1.0, 2.0, 0.0, -1.0, -2.0], 2, 9).unwrap();
        assert_eq!(c.len(), 4);
        assert!(c.contains(&0) && c.contains(&2));

        let scores: Vec<f64> = (0..20).map(|i| (i as f64).sin()).collect();
        assert_eq!(
            select_candidates(&scores, 4, 77).unwrap(),
            select_candidates(&scores, 4, 77).unwrap()
        );
        assert!(matches!(select_candidates(&scores, 21, 0), Err(Error::Config(_))));
        assert!(matches!(select_candidates(&scores, 0, 0), Err(Error::Config(_))));
    }

    #[test]
    fn candidate_size_and_top_half() {
        for n in 1..12 {
            for k in 1..=n {
                let scores: Vec<f64> = (0..n).map(|i| ((i * 5 + 3) % 7) as f64).collect();
                let c = select_candidates(&scores, k, (n * 31 + k) as u64).unwrap();
                assert_eq!(c.len(), (2 * k).min(n));
                for t in &rank_descending(&scores)[..k] {
                    assert!(c.contains(t));
                }
            }
        }
    }

    #[test]
    fn ties_rank_lower_index_first() {
        assert_eq!(rank_descending(&[0.5, 0.9, 0.5, 0.9]), vec![1, 3, 0, 2]);
    }

    #[test]
    fn non_candidates_exclude_candidates() {
        let u = sample_non_candidates(10, &[1, 2, 3], 4, 5);
        assert_eq!(u.len(), 4);
        assert!(u.iter().all(|i| ![1, 2, 3].contains(i)));
        assert_eq!(sample_non_candidates(4, &[0, 1, 2, 3], 3, 5), Vec::<usize>::new());
    }

    /// Answers correctly on a fixed subset of trials per sample.
    struct Scripted {
        correct_trials: BTreeMap<String, u64>,
        fail: Option<String>,
    }

    impl Oracle for Scripted {
        fn oracle_id(&self) -> String {
            "scripted".into()
        }
        fn logprob(&self, _: &str, _: &FrameMultiset, _: usize) -> core::result::Result<f64, OracleError> {
            Ok(-1.0)
        }
        fn sample_answer(&self, id: &str, _: &FrameMultiset, _: f64, trial: u64) -> core::result::Result<usize, OracleError> {
            if self.fail.as_deref() == Some(id) {
                return Err(OracleError::new(OracleErrorKind::Timeout, "slow"));
            }
            Ok(if trial < self.correct_trials[id] { 1 } else { 0 })
        }
    }

    #[test]
    fn filter_keeps_mixed_samples_only() {
        let samples = vec![sample("always", 3), sample("two", 3), sample("never", 3), sample("broken", 3)];
        let mut correct = BTreeMap::new();
        correct.insert("always".into(), 5);
        correct.insert("two".into(), 2);
        correct.insert("never".into(), 0);
        correct.insert("broken".into(), 3);
        let o = Scripted { correct_trials: correct, fail: Some("broken".into()) };
        let out = filter_dataset(&samples, &o, 5, 1.0).unwrap();
        assert_eq!(out.retained, vec![1]);
        assert_eq!(out.discarded, 2);
        assert_eq!(out.failed, 1);
    }
}
