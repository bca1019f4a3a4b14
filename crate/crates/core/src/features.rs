//! Frame and question feature containers.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::numerics::{dot, norm, DenseArray};
use crate::{Error, Result};

/// Tolerance for stored similarities versus recomputed cosines.
pub const SIMILARITY_TOLERANCE: f64 = 1e-5;

/// Per-video frame embeddings (`N × d`) and their cosine similarity to the
/// pooled question embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameFeatureSet {
    frames: DenseArray,
    sims: Vec<f64>,
}

impl FrameFeatureSet {
    pub fn new(frames: DenseArray, sims: Vec<f64>) -> Result<Self> {
        if frames.shape().len() != 2 {
            return Err(Error::Dimension(format!(
                "frames must be N x d, got {:?}",
                frames.shape()
            )));
        }
        let (n, d) = (frames.rows(), frames.cols());
        if n < 1 || d < 2 {
            return Err(Error::Dimension(format!(
                "need at least 1 frame of dim >= 2, got {n} x {d}"
            )));
        }
        if sims.len() != n {
            return Err(Error::Dimension(format!(
                "{} similarities for {n} frames",
                sims.len()
            )));
        }
        if !frames.is_finite() || sims.iter().any(|s| !s.is_finite()) {
            return Err(Error::Data("non-finite frame features".into()));
        }
        if let Some((i, s)) = sims.iter().enumerate().find(|(_, s)| !(-1.0..=1.0).contains(*s)) {
            return Err(Error::Data(format!("similarity {s} of frame {i} outside [-1, 1]")));
        }
        Ok(FrameFeatureSet { frames, sims })
    }

    pub fn n_frames(&self) -> usize {
        self.frames.rows()
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }

    pub fn frames(&self) -> &DenseArray {
        &self.frames
    }

    pub fn sims(&self) -> &[f64] {
        &self.sims
    }
}

/// Question token embeddings (`L × d`) plus the pooled question embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct QuestionEncoding {
    tokens: DenseArray,
    pooled: Vec<f64>,
}

impl QuestionEncoding {
    pub fn new(tokens: DenseArray, pooled: Vec<f64>) -> Result<Self> {
        if tokens.shape().len() != 2 || tokens.rows() < 1 {
            return Err(Error::Dimension(format!(
                "tokens must be L x d with L >= 1, got {:?}",
                tokens.shape()
            )));
        }
        if pooled.len() != tokens.cols() {
            return Err(Error::Dimension(format!(
                "pooled length {} differs from token dim {}",
                pooled.len(),
                tokens.cols()
            )));
        }
        if !tokens.is_finite() || pooled.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite question features".into()));
        }
        if norm(&pooled) == 0.0 {
            return Err(Error::Degenerate("pooled question embedding has zero norm".into()));
        }
        Ok(QuestionEncoding { tokens, pooled })
    }

    pub fn n_tokens(&self) -> usize {
        self.tokens.rows()
    }

    pub fn dim(&self) -> usize {
        self.tokens.cols()
    }

    pub fn tokens(&self) -> &DenseArray {
        &self.tokens
    }

    pub fn pooled(&self) -> &[f64] {
        &self.pooled
    }
}

/// One training or evaluation item.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    pub sample_id: String,
    pub features: FrameFeatureSet,
    pub question: QuestionEncoding,
    pub answer_id: usize,
    pub n_options: usize,
}

impl SampleRecord {
    pub fn new(
        sample_id: impl Into<String>,
        features: FrameFeatureSet,
        question: QuestionEncoding,
        answer_id: usize,
        n_options: usize,
    ) -> Result<Self> {
        let sample_id = sample_id.into();
        if features.dim() != question.dim() {
            return Err(Error::Dimension(format!(
                "{sample_id}: frame dim {} differs from question dim {}",
                features.dim(),
                question.dim()
            )));
        }
        if n_options < 2 || answer_id >= n_options {
            return Err(Error::Data(format!(
                "{sample_id}: answer {answer_id} invalid for {n_options} options"
            )));
        }
        Ok(SampleRecord {
            sample_id,
            features,
            question,
            answer_id,
            n_options,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.features.n_frames()
    }

    pub fn dim(&self) -> usize {
        self.features.dim()
    }

    /// Verifies that every stored similarity matches the cosine between its
    /// frame and the pooled question embedding.
    pub fn check_similarities(&self) -> Result<()> {
        let pooled = self.question.pooled();
        for (i, &stored) in self.features.sims().iter().enumerate() {
            let frame = self.features.frames().row(i);
            let actual = cosine(frame, pooled)?;
            if (actual - stored).abs() > SIMILARITY_TOLERANCE {
                return Err(Error::Data(format!(
                    "{}: stored similarity {stored} of frame {i} differs from cosine {actual}",
                    self.sample_id
                )));
            }
        }
        Ok(())
    }
}

/// Cosine similarity clamped to `[-1, 1]`.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "cosine of vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Degenerate("cosine of a zero-norm vector".into()));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}
