//! Concurrent repeat-gain scans with on-disk caching and resumption.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;

use framerepeat_core::aoi::{
    assemble_record, baseline_logprob, check_candidates, repeat_multiset, GainEntry, Oracle, RepeatGainRecord,
};
use framerepeat_core::features::SampleRecord;
use framerepeat_core::trainer::GainSource;
use framerepeat_core::OracleError;

use crate::error::{Error, Result};
use crate::records::RecordStore;

/// Oracle usable from several scan threads.
pub type SharedOracle<'a> = &'a (dyn Oracle + Sync);

/// Repeats each candidate with up to `in_flight` concurrent calls.
/// Results are collected by frame, so completion order never shows.
pub fn scan_frames(
    sample: &SampleRecord,
    frames: &[usize],
    oracle: SharedOracle<'_>,
    in_flight: usize,
) -> Vec<(usize, std::result::Result<f64, OracleError>)> {
    let n = sample.n_frames();
    let next = AtomicUsize::new(0);
    let results = Mutex::new(Vec::with_capacity(frames.len()));
    let workers = in_flight.clamp(1, frames.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&frame) = frames.get(i) else { break };
                let r = repeat_multiset(n, frame)
                    .map_err(|e| OracleError::new(framerepeat_core::OracleErrorKind::InvalidSequence, e.to_string()))
                    .and_then(|seq| oracle.logprob(&sample.sample_id, &seq, sample.answer_id))
                    .map_err(|e| {
                        log::warn!("{} frame {frame}: {e}", sample.sample_id);
                        e
                    });
                results.lock().expect("results lock").push((frame, r));
            });
        }
    });
    let mut r = results.into_inner().expect("results lock");
    r.sort_by_key(|(f, _)| *f);
    r
}

/// Merges newly measured frames into `existing` (which fixes the baseline).
/// `requested` frames that are still unmeasured are listed as failed.
fn merge(
    existing: RepeatGainRecord,
    fresh: Vec<(usize, std::result::Result<f64, OracleError>)>,
) -> RepeatGainRecord {
    let mut entries = existing.entries;
    let mut failed: BTreeSet<usize> = existing.failed.into_iter().collect();
    for (frame, r) in fresh {
        failed.remove(&frame);
        match r {
            Ok(logprob) => entries.push(GainEntry {
                frame,
                logprob,
                gain: logprob - existing.baseline_logprob,
            }),
            Err(_) => {
                failed.insert(frame);
            }
        }
    }
    entries.sort_by_key(|e| e.frame);
    let failed: Vec<usize> = failed.into_iter().collect();
    RepeatGainRecord {
        complete: failed.is_empty(),
        entries,
        failed,
        ..existing
    }
}

/// Outcome of bringing one sample's record up to date.
#[derive(Clone, Debug)]
pub struct ScanUpdate {
    pub record: RepeatGainRecord,
    /// Oracle calls issued, baseline included.
    pub calls: u64,
}

/// Ensures `candidates` are measured for `sample`, reusing whatever a prior
/// (possibly interrupted) run stored. The baseline is measured once per
/// sample and never re-measured.
pub fn scan_with_store(
    sample: &SampleRecord,
    candidates: &[usize],
    oracle: SharedOracle<'_>,
    in_flight: usize,
    store: &RecordStore,
) -> Result<ScanUpdate> {
    let candidates = check_candidates(candidates, sample.n_frames())?;
    let oracle_id = oracle.oracle_id();
    let existing = store.get(&sample.sample_id)?;
    if let Some(r) = &existing {
        if r.oracle_id != oracle_id {
            return Err(Error::format(
                store.path(&sample.sample_id),
                format!("record is from oracle {:?}, not {oracle_id:?}", r.oracle_id),
            ));
        }
        if r.n_frames != sample.n_frames() {
            return Err(Error::format(store.path(&sample.sample_id), "frame count differs from the sample"));
        }
    }
    let (base, mut calls) = match existing {
        Some(r) => (r, 0),
        None => {
            let baseline = baseline_logprob(sample, oracle)?;
            (assemble_record(sample, oracle_id, baseline, Vec::new()), 1)
        }
    };
    let measured: BTreeSet<usize> = base.frames().into_iter().collect();
    let missing: Vec<usize> = candidates.iter().copied().filter(|f| !measured.contains(f)).collect();
    if missing.is_empty() && calls == 0 {
        return Ok(ScanUpdate { record: base, calls });
    }
    calls += missing.len() as u64;
    let fresh = scan_frames(sample, &missing, oracle, in_flight);
    let record = merge(base, fresh);
    store.put(&record)?;
    Ok(ScanUpdate { record, calls })
}

/// The part of `record` covering `candidates`; frames it lacks are failures.
pub fn restrict(record: &RepeatGainRecord, candidates: &[usize]) -> RepeatGainRecord {
    let wanted: BTreeSet<usize> = candidates.iter().copied().collect();
    let entries: Vec<GainEntry> = record.entries.iter().filter(|e| wanted.contains(&e.frame)).cloned().collect();
    let have: BTreeSet<usize> = entries.iter().map(|e| e.frame).collect();
    let failed: Vec<usize> = wanted.difference(&have).copied().collect();
    RepeatGainRecord {
        sample_id: record.sample_id.clone(),
        n_frames: record.n_frames,
        baseline_logprob: record.baseline_logprob,
        complete: failed.is_empty(),
        entries,
        failed,
        oracle_id: record.oracle_id.clone(),
    }
}

/// Training gain source backed by a record store, scanning only frames the
/// store lacks. With a fully populated store no oracle call is made.
pub struct DiskGains<'a> {
    store: RecordStore,
    oracle: SharedOracle<'a>,
    in_flight: usize,
    calls: AtomicU64,
}

impl<'a> DiskGains<'a> {
    pub fn new(store: RecordStore, oracle: SharedOracle<'a>, in_flight: usize) -> Self {
        DiskGains { store, oracle, in_flight, calls: AtomicU64::new(0) }
    }
}

impl GainSource for DiskGains<'_> {
    fn record(&mut self, sample: &SampleRecord, candidates: &[usize]) -> framerepeat_core::Result<RepeatGainRecord> {
        let update = scan_with_store(sample, candidates, self.oracle, self.in_flight, &self.store).map_err(|e| match e {
            Error::Core(c) => c,
            other => framerepeat_core::Error::Data(other.to_string()),
        })?;
        self.calls.fetch_add(update.calls, Ordering::Relaxed);
        let r = restrict(&update.record, candidates);
        if !r.complete {
            log::debug!("{}: {} candidates unmeasured", sample.sample_id, r.failed.len());
        }
        Ok(r)
    }

    fn logprob_calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}
