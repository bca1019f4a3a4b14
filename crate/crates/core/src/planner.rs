//! Inference-time repetition plans.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::aoi::{rank_descending, FrameMultiset};
use crate::features::SampleRecord;
use crate::scorer::{forward, ScorerConfig, ScorerParams};
use crate::{Error, Result};

/// Frames to repeat and the resulting presentation order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepetitionPlan {
    pub sample_id: String,
    pub n_frames: usize,
    pub k: usize,
    /// Ascending.
    pub selected: Vec<usize>,
    /// Length `n_frames + k`.
    pub sequence: Vec<usize>,
}

impl RepetitionPlan {
    /// Checks every structural law of a plan.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Internal(format!("plan {}: {m}", self.sample_id)));
        if self.selected.len() != self.k || self.k == 0 || self.k > self.n_frames {
            return fail("selection size disagrees with k");
        }
        if !self.selected.windows(2).all(|w| w[0] < w[1]) {
            return fail("selection not strictly ascending");
        }
        if self.selected.iter().any(|&i| i >= self.n_frames) {
            return fail("selection out of range");
        }
        if self.sequence.len() != self.n_frames + self.k {
            return fail("sequence length is not N + k");
        }
        let mut pos = 0;
        for frame in 0..self.n_frames {
            let copies = if self.selected.binary_search(&frame).is_ok() { 2 } else { 1 };
            for _ in 0..copies {
                if self.sequence.get(pos) != Some(&frame) {
                    return fail("sequence is not the in-place repetition of the selection");
                }
                pos += 1;
            }
        }
        Ok(())
    }
}

/// Default repeat count for `n_frames` inputs: one frame in sixteen.
pub fn default_k(n_frames: usize) -> usize {
    libm::round(n_frames as f64 / 16.0).max(1.0) as usize
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(Error::Index(format!("k = {k} must be in 1..={n}")));
    }
    Ok(())
}

/// The `k` highest scores (ties → earlier frame), ascending.
pub fn top_k(scores: &[f64], k: usize) -> Result<Vec<usize>> {
    check_k(k, scores.len())?;
    let mut sel = rank_descending(scores);
    sel.truncate(k);
    sel.sort_unstable();
    Ok(sel)
}

/// Walks `0..n` emitting each selected frame twice.
pub fn repeat_in_place(n_frames: usize, selected: &[usize]) -> Vec<usize> {
    let mut seq = Vec::with_capacity(n_frames + selected.len());
    for i in 0..n_frames {
        seq.push(i);
        if selected.binary_search(&i).is_ok() {
            seq.push(i);
        }
    }
    seq
}

pub fn plan_from_scores(sample_id: &str, scores: &[f64], k: usize) -> Result<RepetitionPlan> {
    let selected = top_k(scores, k)?;
    let sequence = repeat_in_place(scores.len(), &selected);
    Ok(RepetitionPlan {
        sample_id: sample_id.into(),
        n_frames: scores.len(),
        k,
        selected,
        sequence,
    })
}

pub fn plan(
    sample: &SampleRecord,
    params: &ScorerParams,
    config: &ScorerConfig,
    k: usize,
) -> Result<RepetitionPlan> {
    check_k(k, sample.n_frames())?;
    let scores = forward(sample, params, config)?;
    plan_from_scores(&sample.sample_id, &scores, k)
}

/// Only the top-`k` frames, ascending, with nothing repeated.
pub fn plan_select_only(
    sample: &SampleRecord,
    params: &ScorerParams,
    config: &ScorerConfig,
    k: usize,
) -> Result<FrameMultiset> {
    check_k(k, sample.n_frames())?;
    let scores = forward(sample, params, config)?;
    FrameMultiset::new(top_k(&scores, k)?, sample.n_frames())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn tie_example() {
        let p = plan_from_scores("s", &[0.1, 0.9, 0.5, 0.9], 2).unwrap();
        assert_eq!(p.selected, vec![1, 3]);
        assert_eq!(p.sequence, vec![0, 1, 1, 2, 3, 3]);
        p.validate().unwrap();
    }

    #[test]
    fn ties_prefer_earlier_frames() {
        let p = plan_from_scores("s", &[0.5, 0.5, 0.5, 0.5], 2).unwrap();
        assert_eq!(p.selected, vec![0, 1]);
    }

    #[test]
    fn k_equal_n_doubles_everything() {
        let p = plan_from_scores("s", &[0.3, 0.1, 0.2], 3).unwrap();
        assert_eq!(p.sequence, vec![0, 0, 1, 1, 2, 2]);
    }

    #[test]
    fn k_out_of_range() {
        assert!(plan_from_scores("s", &[0.3, 0.1], 0).is_err());
        assert!(plan_from_scores("s", &[0.3, 0.1], 3).is_err());
    }

    #[test]
    fn increasing_scores_select_the_tail() {
        let scores: Vec<f64> = (0..6).map(|i| i as f64).collect();
        assert_eq!(top_k(&scores, 2).unwrap(), vec![4, 5]);
    }

    #[test]
    fn default_k_scaling() {
        assert_eq!(default_k(128), 8);
        assert_eq!(default_k(64), 4);
        assert_eq!(default_k(32), 2);
        assert_eq!(default_k(4), 1);
    }

    #[test]
    fn validate_catches_broken_plans() {
        let mut p = plan_from_scores("s", &[0.1, 0.9, 0.5], 1).unwrap();
        p.sequence.swap(0, 1);
        assert!(p.validate().is_err());
    }
}
