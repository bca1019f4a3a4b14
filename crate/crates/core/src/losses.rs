//! Training objective: standardized regression plus margin ranking.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::numerics::{DenseArray, NodeId, Tape};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub reg_weight: f64,
    pub rank_weight: f64,
    /// Ranking margin in raw score units.
    pub margin: f64,
    /// Standardization eps.
    pub eps: f64,
    /// Upper bound on the number of non-candidate negatives per sample.
    pub n_extra_negatives: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            reg_weight: 1.0,
            rank_weight: 0.1,
            margin: 0.2,
            eps: 1e-6,
            n_extra_negatives: 16,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.reg_weight >= 0.0 && self.rank_weight >= 0.0) {
            return Err(Error::Config("loss weights must be >= 0".into()));
        }
        if !(self.margin >= 0.0) {
            return Err(Error::Config("margin must be >= 0".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config("eps must be > 0".into()));
        }
        Ok(())
    }
}

/// `(x − mean) / (std + eps)` with population std, recorded on the tape.
pub fn standardize_node(tape: &mut Tape, x: NodeId, eps: f64) -> Result<NodeId> {
    let n = tape.value(x).len();
    if n < 2 {
        return Err(Error::Degenerate(format!(
            "standardize needs at least 2 values, got {n}"
        )));
    }
    let mu = tape.mean(x);
    let centered = tape.sub_broadcast(x, mu)?;
    let sq = tape.square(centered);
    let var = tape.mean(sq);
    let sd = tape.sqrt(var);
    let denom = tape.add_scalar(sd, eps);
    tape.div_broadcast(centered, denom)
}

/// Mean squared difference between standardized scores and standardized
/// gains over the candidate set.
pub fn regression_loss_node(
    tape: &mut Tape,
    candidate_scores: NodeId,
    gains: &[f64],
    eps: f64,
) -> Result<NodeId> {
    let n = tape.value(candidate_scores).len();
    if n != gains.len() {
        return Err(Error::Dimension(format!(
            "{n} scores for {} gains",
            gains.len()
        )));
    }
    let s = standardize_node(tape, candidate_scores, eps)?;
    let g = tape.leaf(DenseArray::vector(gains.to_vec()));
    let g = standardize_node(tape, g, eps)?;
    let diff = tape.sub(s, g)?;
    let sq = tape.square(diff);
    Ok(tape.mean(sq))
}

/// Hinge ranking loss. `positive` are frames with positive gain, `negative`
/// the union of negative-gain candidates and extra non-candidates. Both are
/// index lists into the flat `scores` node. Empty sides give zero.
pub fn ranking_loss_node(
    tape: &mut Tape,
    scores: NodeId,
    positive: &[usize],
    negative: &[usize],
    margin: f64,
) -> Result<NodeId> {
    if positive.is_empty() || negative.is_empty() {
        // keep the graph connected so callers can always backpropagate
        let z = tape.scale(scores, 0.0);
        return Ok(tape.sum(z));
    }
    let pos = tape.gather(scores, positive)?;
    let neg = tape.gather(scores, negative)?;
    let diff = tape.outer_diff(pos, neg)?;
    let shifted = tape.add_scalar(diff, margin);
    let hinge = tape.relu(shifted);
    // every row has the same length, so the overall mean equals the
    // mean over positives of the per-positive mean
    Ok(tape.mean(hinge))
}

/// Supervision for one sample's loss.
#[derive(Clone, Debug, PartialEq)]
pub struct LossTargets<'a> {
    /// Candidate frame indices, aligned with `gains`.
    pub candidates: &'a [usize],
    pub gains: &'a [f64],
    /// Non-candidate frames used as extra ranking negatives.
    pub extra_negatives: &'a [usize],
}

impl LossTargets<'_> {
    /// Candidates split by the strict sign of their gain; zero-gain frames
    /// join neither side.
    pub fn partition(&self) -> (Vec<usize>, Vec<usize>) {
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for (&i, &g) in self.candidates.iter().zip(self.gains) {
            if g > 0.0 {
                pos.push(i);
            } else if g < 0.0 {
                neg.push(i);
            }
        }
        neg.extend_from_slice(self.extra_negatives);
        (pos, neg)
    }
}

/// `reg_weight · L_reg + rank_weight · L_rank` over the flat score node.
pub fn total_loss_node(
    tape: &mut Tape,
    scores: NodeId,
    targets: &LossTargets<'_>,
    config: &LossConfig,
) -> Result<NodeId> {
    config.validate()?;
    if targets.candidates.len() != targets.gains.len() {
        return Err(Error::Dimension(format!(
            "{} candidates for {} gains",
            targets.candidates.len(),
            targets.gains.len()
        )));
    }
    let cand = tape.gather(scores, targets.candidates)?;
    let reg = regression_loss_node(tape, cand, targets.gains, config.eps)?;
    let (pos, neg) = targets.partition();
    let rank = ranking_loss_node(tape, scores, &pos, &neg, config.margin)?;
    let reg = tape.scale(reg, config.reg_weight);
    let rank = tape.scale(rank, config.rank_weight);
    tape.add(reg, rank)
}

pub fn standardize(x: &[f64], eps: f64) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let id = tape.leaf(DenseArray::vector(x.to_vec()));
    let out = standardize_node(&mut tape, id, eps)?;
    Ok(tape.value(out).data().to_vec())
}

pub fn regression_loss(scores: &[f64], gains: &[f64], eps: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let id = tape.leaf(DenseArray::vector(scores.to_vec()));
    let out = regression_loss_node(&mut tape, id, gains, eps)?;
    Ok(tape.value(out).data()[0])
}

/// Ranking loss over candidate scores and gains plus extra negative scores.
pub fn ranking_loss(scores: &[f64], gains: &[f64], extra_scores: &[f64], margin: f64) -> Result<f64> {
    if scores.len() != gains.len() {
        return Err(Error::Dimension(format!(
            "{} scores for {} gains",
            scores.len(),
            gains.len()
        )));
    }
    let mut all = scores.to_vec();
    all.extend_from_slice(extra_scores);
    let candidates: Vec<usize> = (0..scores.len()).collect();
    let extra: Vec<usize> = (scores.len()..all.len()).collect();
    let targets = LossTargets {
        candidates: &candidates,
        gains,
        extra_negatives: &extra,
    };
    let (pos, neg) = targets.partition();
    let mut tape = Tape::new();
    let id = tape.leaf(DenseArray::vector(all));
    let out = ranking_loss_node(&mut tape, id, &pos, &neg, margin)?;
    Ok(tape.value(out).data()[0])
}

/// Total loss evaluated on plain score values.
pub fn total_loss(scores: &[f64], targets: &LossTargets<'_>, config: &LossConfig) -> Result<f64> {
    let mut tape = Tape::new();
    let id = tape.leaf(DenseArray::vector(scores.to_vec()));
    let out = total_loss_node(&mut tape, id, targets, config)?;
    Ok(tape.value(out).data()[0])
}
