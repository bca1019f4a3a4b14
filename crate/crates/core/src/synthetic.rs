//! Seeded synthetic datasets with planted per-frame repeat gains and a
//! closed-form oracle over them.
//!
//! Each sample draws a unit question embedding `q` and a hidden direction
//! `u = normalize(M q)` for a dataset-wide matrix `M`. Key frames point
//! along `u` (plus noise), distractors are pure noise, and the planted gain
//! of frame `i` is `β ⟨u, v_i⟩ + σ ε_i`. Frame importance is therefore a
//! joint function of the frame and the question.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::aoi::{unknown_sample, FrameMultiset, Oracle};
use crate::features::{cosine, FrameFeatureSet, QuestionEncoding, SampleRecord};
use crate::numerics::{dot, matmul, mean, norm, DenseArray};
use crate::{Error, OracleError, OracleErrorKind, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub n_frames: usize,
    pub dim: usize,
    pub n_tokens: usize,
    pub n_options: usize,
    pub n_key_frames: usize,
    /// Weight of the hidden direction in key-frame embeddings.
    pub key_strength: f64,
    /// β: gain per unit of alignment with the hidden direction.
    pub gain_scale: f64,
    /// σ: standard deviation of the gain noise.
    pub gain_noise: f64,
    /// Per-token perturbation scale around the question embedding.
    pub token_noise: f64,
    /// Copies beyond which extra repeats stop adding gain.
    pub saturation: usize,
    /// Default decoding temperature for answer sampling.
    pub temperature: f64,
    /// α in `M = sqrt(1 - α²) I + α G`, with `G` a random traceless Gaussian matrix.
    #[serde(default = "default_mixing")]
    pub mixing: f64,
}

fn default_mixing() -> f64 {
    SyntheticSpec::default().mixing
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            seed: 0,
            n_frames: 32,
            dim: 32,
            n_tokens: 8,
            n_options: 4,
            n_key_frames: 8,
            key_strength: 1.5,
            gain_scale: 0.3,
            gain_noise: 0.01,
            token_noise: 0.5,
            saturation: 3,
            temperature: 1.0,
            mixing: 1.0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_frames < 1 || self.dim < 2 || self.n_tokens < 1 {
            return bad(format!(
                "need frames >= 1, dim >= 2, tokens >= 1; got {} / {} / {}",
                self.n_frames, self.dim, self.n_tokens
            ));
        }
        if self.n_key_frames < 1 || self.n_key_frames > self.n_frames {
            return bad(format!(
                "key frames {} must be in 1..={}",
                self.n_key_frames, self.n_frames
            ));
        }
        if !(self.gain_scale > 0.0) || !(self.gain_noise >= 0.0) || !(self.key_strength >= 0.0) {
            return bad("gain scale must be > 0, noise and key strength >= 0".into());
        }
        if self.saturation < 2 {
            return bad(format!("saturation cap {} must be >= 2", self.saturation));
        }
        if self.n_options < 2 {
            return bad("need at least 2 answer options".into());
        }
        if !(0.0..=1.0).contains(&self.mixing) {
            return bad(format!("mixing {} must be in [0, 1]", self.mixing));
        }
        if !(self.temperature >= 0.0) || !(self.token_noise >= 0.0) {
            return bad("temperature and token noise must be >= 0".into());
        }
        Ok(())
    }
}

/// Hidden per-sample quantities the oracle is built from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTruth {
    pub sample_id: String,
    pub n_frames: usize,
    pub answer_id: usize,
    pub n_options: usize,
    /// ℓ0: log-probability of the correct answer on the unmodified input.
    pub base_logprob: f64,
    /// Planted gain of repeating each frame once.
    pub gains: Vec<f64>,
    /// Ascending.
    pub key_frames: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSample {
    pub record: SampleRecord,
    pub truth: SyntheticTruth,
}

pub fn sample_id(seed: u64, index: usize) -> String {
    format!("syn{seed}-{index:06}")
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn normalized(v: Vec<f64>) -> Vec<f64> {
    let n = norm(&v);
    v.into_iter().map(|x| x / n).collect()
}

fn to_f32(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| x as f32 as f64).collect()
}

/// Dataset-wide mixing matrix `M`; the random part has entries N(0, 1/d)
/// and zero trace.
fn mixing_matrix(spec: &SyntheticSpec) -> DenseArray {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.dim;
    let a = spec.mixing;
    let diag = libm::sqrt(1.0 - a * a);
    let mut data = gaussian(&mut rng, d * d, a / libm::sqrt(d as f64));
    // zero trace keeps ⟨u, q⟩ centred at 0, so with α = 1 the similarity
    // prior carries no signal in expectation for any seed
    let shift = (0..d).map(|i| data[i * d + i]).sum::<f64>() / d as f64;
    for i in 0..d {
        data[i * d + i] += diag - shift;
    }
    DenseArray::matrix(d, d, data).expect("square")
}

/// Generates `n_samples` samples. All feature values are exactly
/// representable as 32-bit floats so that they survive the on-disk format.
pub fn generate_synthetic_dataset(spec: &SyntheticSpec, n_samples: usize) -> Result<Vec<SyntheticSample>> {
    spec.validate()?;
    let m = mixing_matrix(spec);
    (0..n_samples).map(|i| generate_one(spec, &m, i)).collect()
}

fn generate_one(spec: &SyntheticSpec, m: &DenseArray, index_in_set: usize) -> Result<SyntheticSample> {
    let (n, d) = (spec.n_frames, spec.dim);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index_in_set as u64 + 1);
    let noise_scale = 1.0 / libm::sqrt(d as f64);

    let q = to_f32(&normalized(gaussian(&mut rng, d, 1.0)));
    let u = matmul(&DenseArray::matrix(1, d, q.clone())?, &m.transpose()?)?;
    let u = normalized(u.into_data());

    let mut key_frames = index::sample(&mut rng, n, spec.n_key_frames).into_vec();
    key_frames.sort_unstable();

    let mut frames = Vec::with_capacity(n * d);
    let mut gains = Vec::with_capacity(n);
    for i in 0..n {
        let z = gaussian(&mut rng, d, noise_scale);
        let raw: Vec<f64> = if key_frames.binary_search(&i).is_ok() {
            z.iter().zip(&u).map(|(zv, uv)| spec.key_strength * uv + zv).collect()
        } else {
            z
        };
        let v = to_f32(&normalized(raw));
        let eps: f64 = rng.sample(StandardNormal);
        gains.push(spec.gain_scale * dot(&u, &v) + spec.gain_noise * eps);
        frames.extend(v);
    }
    let frames = DenseArray::matrix(n, d, frames)?;

    let mut tokens = Vec::with_capacity(spec.n_tokens * d);
    for _ in 0..spec.n_tokens {
        let p = gaussian(&mut rng, d, spec.token_noise * noise_scale);
        tokens.extend(to_f32(&q.iter().zip(&p).map(|(a, b)| a + b).collect::<Vec<_>>()));
    }
    let tokens = DenseArray::matrix(spec.n_tokens, d, tokens)?;

    let sims = (0..n)
        .map(|i| cosine(frames.row(i), &q).map(|c| c as f32 as f64))
        .collect::<Result<Vec<_>>>()?;
    let base_logprob = rng.random_range(-3.0..-0.5);
    let answer_id = rng.random_range(0..spec.n_options);

    let id = sample_id(spec.seed, index_in_set);
    let record = SampleRecord::new(
        id.clone(),
        FrameFeatureSet::new(frames, sims)?,
        QuestionEncoding::new(tokens, q)?,
        answer_id,
        spec.n_options,
    )?;
    Ok(SyntheticSample {
        record,
        truth: SyntheticTruth {
            sample_id: id,
            n_frames: n,
            answer_id,
            n_options: spec.n_options,
            base_logprob,
            gains,
            key_frames,
        },
    })
}

/// Mean `|Δ|` over all frames and mean best-minus-worst gain gap per sample.
pub fn gain_statistics(truths: &[SyntheticTruth]) -> (f64, f64) {
    let abs: Vec<f64> = truths.iter().flat_map(|t| t.gains.iter().map(|g| g.abs())).collect();
    let gaps: Vec<f64> = truths
        .iter()
        .map(|t| {
            let hi = t.gains.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = t.gains.iter().copied().fold(f64::INFINITY, f64::min);
            hi - lo
        })
        .collect();
    (mean(&abs), mean(&gaps))
}

/// Closed-form oracle: `ℓ = ℓ0 + Σ_i w_i · min(count_i − 1, c_max − 1)`,
/// clamped to `≤ 0`. Exactly additive in single-frame repeats.
#[derive(Clone, Debug)]
pub struct SyntheticOracle {
    seed: u64,
    saturation: usize,
    temperature: f64,
    truths: BTreeMap<String, SyntheticTruth>,
}

impl SyntheticOracle {
    pub fn new(spec: &SyntheticSpec, truths: impl IntoIterator<Item = SyntheticTruth>) -> Self {
        SyntheticOracle {
            seed: spec.seed,
            saturation: spec.saturation,
            temperature: spec.temperature,
            truths: truths.into_iter().map(|t| (t.sample_id.clone(), t)).collect(),
        }
    }

    pub fn from_samples(spec: &SyntheticSpec, samples: &[SyntheticSample]) -> Self {
        Self::new(spec, samples.iter().map(|s| s.truth.clone()))
    }

    pub fn truth(&self, sample_id: &str) -> Option<&SyntheticTruth> {
        self.truths.get(sample_id)
    }

    pub fn default_temperature(&self) -> f64 {
        self.temperature
    }

    /// Log-probability of the correct answer before the clamp at zero.
    pub fn raw_logprob(&self, sample_id: &str, sequence: &FrameMultiset) -> core::result::Result<f64, OracleError> {
        let t = self.truths.get(sample_id).ok_or_else(|| unknown_sample(sample_id))?;
        if let Some(&bad) = sequence.indices().iter().find(|&&i| i >= t.n_frames) {
            return Err(OracleError::new(
                OracleErrorKind::InvalidSequence,
                format!("{sample_id}: frame {bad} out of range for {} frames", t.n_frames),
            ));
        }
        if sequence.is_empty() {
            return Err(OracleError::new(OracleErrorKind::InvalidSequence, "empty sequence"));
        }
        let cap = self.saturation - 1;
        let boost: f64 = sequence
            .counts(t.n_frames)
            .iter()
            .zip(&t.gains)
            .filter(|(&c, _)| c > 1)
            .map(|(&c, w)| w * (c - 1).min(cap) as f64)
            .sum();
        Ok(t.base_logprob + boost)
    }

    fn correct_logprob(&self, sample_id: &str, sequence: &FrameMultiset) -> core::result::Result<f64, OracleError> {
        Ok(self.raw_logprob(sample_id, sequence)?.min(0.0))
    }
}

impl Oracle for SyntheticOracle {
    fn oracle_id(&self) -> String {
        format!("synthetic-{}", self.seed)
    }

    fn logprob(&self, sample_id: &str, sequence: &FrameMultiset, answer_id: usize) -> core::result::Result<f64, OracleError> {
        let l = self.correct_logprob(sample_id, sequence)?;
        let t = &self.truths[sample_id];
        if answer_id >= t.n_options {
            return Err(OracleError::new(
                OracleErrorKind::InvalidSequence,
                format!("{sample_id}: answer {answer_id} not among {} options", t.n_options),
            ));
        }
        if answer_id == t.answer_id {
            return Ok(l);
        }
        // the remaining mass is shared evenly by the wrong options
        let rest = (-libm::expm1(l)).max(f64::MIN_POSITIVE);
        Ok(libm::log(rest / (t.n_options - 1) as f64))
    }

    /// Samples from the option distribution sharpened by `1 / temperature`;
    /// temperature 0 decodes greedily.
    fn sample_answer(
        &self,
        sample_id: &str,
        sequence: &FrameMultiset,
        temperature: f64,
        trial: u64,
    ) -> core::result::Result<usize, OracleError> {
        let l = self.correct_logprob(sample_id, sequence)?;
        let t = &self.truths[sample_id];
        let others = (t.n_options - 1) as f64;
        let wrong_each = libm::log((-libm::expm1(l)).max(f64::MIN_POSITIVE) / others);
        let p_correct = if temperature == 0.0 {
            if l >= wrong_each { 1.0 } else { 0.0 }
        } else {
            // sigmoid of the tempered log-odds against all wrong options together
            let logit = (l - wrong_each) / temperature - libm::log(others);
            1.0 / (1.0 + libm::exp(-logit))
        };
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ fnv1a(sample_id.as_bytes()));
        rng.set_stream(trial);
        if rng.random::<f64>() < p_correct {
            return Ok(t.answer_id);
        }
        let pick = rng.random_range(0..t.n_options - 1);
        Ok(if pick >= t.answer_id { pick + 1 } else { pick })
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}
